// SPDX-License-Identifier: MIT
//
// Oriented-box geometry in the sensor frame (x forward, y left, z up).
//
// BEV polygons are counter-clockwise; intersection is Sutherland–Hodgman
// clipping followed by the shoelace formula. 3D IoU factors into BEV
// intersection area times vertical extent overlap, which is exact for
// boxes that share the up axis (the only kind this library produces).
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "wxbench/errors.hpp"

namespace wxbench {

template <class T>
struct Vec2 {
  T x{}, y{};
};

using Vec2d = Vec2<double>;

// Oriented 3D box: geometric center, dimensions, yaw about +z.
template <class T>
struct Box3 {
  T x{}, y{}, z{};  // center, meters
  T l{}, w{}, h{};  // length (along heading), width, height, meters
  T yaw{};          // radians in (-pi, pi]

  T volume() const { return l * w * h; }

  friend bool operator==(const Box3&, const Box3&) = default;
};

using Box3D = Box3<double>;

// Intersection area below this is treated as no overlap.
inline constexpr double kAreaEpsilon = 1e-12;

// CCW corners of the box footprint, starting at the front-left corner.
template <class T>
std::array<Vec2<T>, 4> bev_corners(const Box3<T>& b) {
  const T c = std::cos(b.yaw), s = std::sin(b.yaw);
  const T hl = b.l / 2, hw = b.w / 2;
  // Local CCW order: (+l,+w), (-l,+w), (-l,-w), (+l,-w).
  const std::array<Vec2<T>, 4> local{
      Vec2<T>{hl, hw}, Vec2<T>{-hl, hw}, Vec2<T>{-hl, -hw}, Vec2<T>{hl, -hw}};
  std::array<Vec2<T>, 4> out;
  for (std::size_t i = 0; i < 4; ++i) {
    out[i] = Vec2<T>{b.x + c * local[i].x - s * local[i].y,
                     b.y + s * local[i].x + c * local[i].y};
  }
  return out;
}

// Signed shoelace area; positive for CCW rings.
template <class T>
T polygon_area(std::span<const Vec2<T>> poly) {
  const std::size_t n = poly.size();
  if (n < 3) return T(0);
  T twice = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2<T>& a = poly[i];
    const Vec2<T>& b = poly[(i + 1) % n];
    twice += a.x * b.y - a.y * b.x;
  }
  return twice / 2;
}

namespace detail {
template <class T>
T cross(const Vec2<T>& o, const Vec2<T>& a, const Vec2<T>& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}
}  // namespace detail

// Sutherland–Hodgman: clips CCW convex `subject` against CCW convex `clip`.
// Boundary points count as inside, so clipping a polygon against itself
// returns the identical vertex list.
template <class T>
std::vector<Vec2<T>> convex_clip(std::span<const Vec2<T>> subject,
                                 std::span<const Vec2<T>> clip) {
  std::vector<Vec2<T>> out(subject.begin(), subject.end());
  std::vector<Vec2<T>> in;
  for (std::size_t e = 0; e < clip.size() && !out.empty(); ++e) {
    const Vec2<T> a = clip[e];
    const Vec2<T> b = clip[(e + 1) % clip.size()];
    in.swap(out);
    out.clear();
    for (std::size_t i = 0; i < in.size(); ++i) {
      const Vec2<T>& cur = in[i];
      const Vec2<T>& nxt = in[(i + 1) % in.size()];
      const T dc = detail::cross(a, b, cur);
      const T dn = detail::cross(a, b, nxt);
      if (dc >= 0) out.push_back(cur);
      if ((dc >= 0) != (dn >= 0)) {
        const T t = dc / (dc - dn);
        out.push_back(Vec2<T>{cur.x + t * (nxt.x - cur.x),
                              cur.y + t * (nxt.y - cur.y)});
      }
    }
  }
  return out;
}

// Area of the intersection of two convex CCW polygons.
template <class T>
T convex_intersection_area(std::span<const Vec2<T>> p,
                           std::span<const Vec2<T>> q) {
  if (p.size() < 3 || q.size() < 3) {
    throw DegeneratePolygon("convex_intersection_area: polygon with fewer "
                            "than 3 vertices");
  }
  const std::vector<Vec2<T>> inter = convex_clip(p, q);
  if (inter.size() < 3) return T(0);
  const T area = polygon_area(std::span<const Vec2<T>>(inter));
  return area > T(kAreaEpsilon) ? area : T(0);
}

template <class T>
T intersection_area_bev(const Box3<T>& a, const Box3<T>& b) {
  const auto ca = bev_corners(a);
  const auto cb = bev_corners(b);
  return convex_intersection_area(std::span<const Vec2<T>>(ca),
                                  std::span<const Vec2<T>>(cb));
}

// BEV IoU of the two footprints, in [0, 1]. Bitwise-identical boxes
// short-circuit to exactly 1.
template <class T>
T iou_bev(const Box3<T>& a, const Box3<T>& b) {
  if (a == b) return T(1);
  const T inter = intersection_area_bev(a, b);
  if (inter <= T(0)) return T(0);
  const T uni = a.l * a.w + b.l * b.w - inter;
  return std::clamp(inter / uni, T(0), T(1));
}

// 3D IoU: BEV intersection times z-overlap over the volume union.
template <class T>
T iou_3d(const Box3<T>& a, const Box3<T>& b) {
  if (a == b) return T(1);
  const T zlo = std::max(a.z - a.h / 2, b.z - b.h / 2);
  const T zhi = std::min(a.z + a.h / 2, b.z + b.h / 2);
  const T dz = zhi - zlo;
  if (dz <= T(0)) return T(0);
  const T inter = intersection_area_bev(a, b) * dz;
  if (inter <= T(0)) return T(0);
  const T uni = a.volume() + b.volume() - inter;
  return std::clamp(inter / uni, T(0), T(1));
}

// Inclusive point containment in the box footprint.
template <class T>
bool contains_bev(const Box3<T>& b, T px, T py) {
  const T c = std::cos(b.yaw), s = std::sin(b.yaw);
  const T dx = px - b.x, dy = py - b.y;
  const T lx = c * dx + s * dy;   // along heading
  const T ly = -s * dx + c * dy;  // lateral
  return std::abs(lx) <= b.l / 2 && std::abs(ly) <= b.w / 2;
}

// Inclusive point containment in the full box.
template <class T>
bool contains(const Box3<T>& b, T px, T py, T pz) {
  return std::abs(pz - b.z) <= b.h / 2 && contains_bev(b, px, py);
}

}  // namespace wxbench
