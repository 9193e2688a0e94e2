// SPDX-License-Identifier: MIT
//
// Bit-exact readers and writers for KITTI-format data:
//
//  * velodyne scans — headerless little-endian float32 (x, y, z,
//    reflectance) quadruples;
//  * object labels — whitespace-separated text, 15 fields for ground
//    truth, 16 when a confidence score is appended;
//  * calibration — "KEY: v0 v1 ..." lines carrying P2, R0_rect and
//    Tr_velo_to_cam.
//
// The canonical working frame is the LiDAR frame (x forward, y left,
// z up); label_to_box3d/box3d_to_label convert between camera-frame
// labels (bottom-center convention) and LiDAR-frame boxes with geometric
// centers, so downstream geometry never sees the camera frame.
#pragma once

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "wxbench/errors.hpp"
#include "wxbench/geometry.hpp"

namespace wxbench {

enum class Frame { lidar, camera };

struct LidarPoint {
  float x = 0, y = 0, z = 0, reflectance = 0;

  friend bool operator==(const LidarPoint&, const LidarPoint&) = default;

  double range() const {
    return std::sqrt(double(x) * x + double(y) * y + double(z) * z);
  }
};

struct PointCloud {
  std::vector<LidarPoint> points;
  Frame frame = Frame::lidar;

  std::size_t size() const { return points.size(); }

  friend bool operator==(const PointCloud&, const PointCloud&) = default;
};

// Reads preserve raw values; out-of-range reflectance is only counted here.
struct PointCloudReadReport {
  std::size_t n_reflectance_out_of_range = 0;
};

struct ObjectLabel {
  std::string class_name;
  double truncation = 0;  // fraction in [0, 1]
  int occlusion = 0;      // 0..3 (-1 in DontCare rows)
  double alpha = 0;       // observation angle, radians
  double bbox_left = 0, bbox_top = 0, bbox_right = 0, bbox_bottom = 0;
  double height = 0, width = 0, length = 0;  // h, w, l in meters
  double x = 0, y = 0, z = 0;  // camera frame, bottom-center of the box
  double rotation_y = 0;       // yaw about the camera y axis
  std::optional<double> score;

  double bbox_height() const { return bbox_bottom - bbox_top; }
  bool is_dont_care() const { return class_name == "DontCare"; }
};

struct Calibration {
  std::array<double, 12> p2{};              // 3x4 row-major
  std::array<double, 9> r0_rect{};          // 3x3 row-major
  std::array<double, 12> tr_velo_to_cam{};  // 3x4 row-major
};

namespace detail {

inline double parse_double(std::string_view tok, std::size_t line_no) {
  double v = 0;
  const auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || p != tok.data() + tok.size()) {
    throw MalformedLine("line " + std::to_string(line_no) +
                        ": cannot parse number '" + std::string(tok) + "'");
  }
  return v;
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != '\r') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::string format_2dec(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

// Shortest decimal that round-trips; used for detection scores.
inline std::string format_roundtrip(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

// 3x3 inverse; throws when the determinant vanishes.
inline std::array<double, 9> invert3(const std::array<double, 9>& m) {
  const double det = m[0] * (m[4] * m[8] - m[5] * m[7]) -
                     m[1] * (m[3] * m[8] - m[5] * m[6]) +
                     m[2] * (m[3] * m[7] - m[4] * m[6]);
  if (std::abs(det) < 1e-9) {
    throw SingularCalibration("rotation block is not invertible");
  }
  const double d = 1.0 / det;
  return {(m[4] * m[8] - m[5] * m[7]) * d, (m[2] * m[7] - m[1] * m[8]) * d,
          (m[1] * m[5] - m[2] * m[4]) * d, (m[5] * m[6] - m[3] * m[8]) * d,
          (m[0] * m[8] - m[2] * m[6]) * d, (m[2] * m[3] - m[0] * m[5]) * d,
          (m[3] * m[7] - m[4] * m[6]) * d, (m[1] * m[6] - m[0] * m[7]) * d,
          (m[0] * m[4] - m[1] * m[3]) * d};
}

inline std::array<double, 3> mul3(const std::array<double, 9>& m,
                                  const std::array<double, 3>& v) {
  return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
          m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
          m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
}

inline std::array<double, 9> mul3x3(const std::array<double, 9>& a,
                                    const std::array<double, 9>& b) {
  std::array<double, 9> r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) r[3 * i + j] += a[3 * i + k] * b[3 * k + j];
  return r;
}

inline std::array<double, 9> rot_of(const std::array<double, 12>& m34) {
  return {m34[0], m34[1], m34[2], m34[4], m34[5], m34[6], m34[8], m34[9], m34[10]};
}

inline std::array<double, 3> trans_of(const std::array<double, 12>& m34) {
  return {m34[3], m34[7], m34[11]};
}

inline double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * 3.141592653589793);
  if (a <= -3.141592653589793) a += 2.0 * 3.141592653589793;
  return a;
}

}  // namespace detail

// --- point clouds -----------------------------------------------------

inline PointCloud read_point_cloud(const std::filesystem::path& path,
                                   PointCloudReadReport* report = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  if (bytes.size() % 16 != 0) {
    throw TruncatedFile(path.string() + ": length " +
                        std::to_string(bytes.size()) +
                        " is not a multiple of 16");
  }
  PointCloud pc;
  pc.points.resize(bytes.size() / 16);
  for (std::size_t i = 0; i < pc.points.size(); ++i) {
    float f[4];
    for (int c = 0; c < 4; ++c) {
      const auto* b =
          reinterpret_cast<const unsigned char*>(bytes.data() + 16 * i + 4 * c);
      const std::uint32_t u = std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
                              (std::uint32_t(b[2]) << 16) |
                              (std::uint32_t(b[3]) << 24);
      f[c] = std::bit_cast<float>(u);
      if (!std::isfinite(f[c])) {
        throw NonFiniteValue(path.string() + ": non-finite value at point " +
                             std::to_string(i));
      }
    }
    pc.points[i] = LidarPoint{f[0], f[1], f[2], f[3]};
    if (report && (f[3] < 0.0f || f[3] > 1.0f)) {
      ++report->n_reflectance_out_of_range;
    }
  }
  return pc;
}

inline void write_point_cloud(const PointCloud& pc,
                              const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoFailure("cannot open " + path.string() + " for writing");
  std::vector<char> bytes;
  bytes.reserve(pc.points.size() * 16);
  for (const LidarPoint& p : pc.points) {
    const float vals[4] = {p.x, p.y, p.z,
                           std::clamp(p.reflectance, 0.0f, 1.0f)};
    for (float v : vals) {
      const auto u = std::bit_cast<std::uint32_t>(v);
      bytes.push_back(char(u & 0xff));
      bytes.push_back(char((u >> 8) & 0xff));
      bytes.push_back(char((u >> 16) & 0xff));
      bytes.push_back(char((u >> 24) & 0xff));
    }
  }
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw IoFailure("short write to " + path.string());
}

// --- labels ------------------------------------------------------------

inline std::vector<ObjectLabel> parse_labels(std::string_view text) {
  std::vector<ObjectLabel> out;
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const std::string_view line =
        text.substr(pos, nl == std::string_view::npos ? text.size() - pos
                                                      : nl - pos);
    ++line_no;
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    const auto tok = detail::split_ws(line);
    if (tok.empty()) continue;
    if (tok.size() != 15 && tok.size() != 16) {
      throw MalformedLine("line " + std::to_string(line_no) + ": expected 15 "
                          "or 16 fields, got " + std::to_string(tok.size()));
    }
    ObjectLabel l;
    l.class_name = std::string(tok[0]);
    l.truncation = detail::parse_double(tok[1], line_no);
    l.occlusion = int(detail::parse_double(tok[2], line_no));
    l.alpha = detail::parse_double(tok[3], line_no);
    l.bbox_left = detail::parse_double(tok[4], line_no);
    l.bbox_top = detail::parse_double(tok[5], line_no);
    l.bbox_right = detail::parse_double(tok[6], line_no);
    l.bbox_bottom = detail::parse_double(tok[7], line_no);
    l.height = detail::parse_double(tok[8], line_no);
    l.width = detail::parse_double(tok[9], line_no);
    l.length = detail::parse_double(tok[10], line_no);
    l.x = detail::parse_double(tok[11], line_no);
    l.y = detail::parse_double(tok[12], line_no);
    l.z = detail::parse_double(tok[13], line_no);
    l.rotation_y = detail::parse_double(tok[14], line_no);
    if (tok.size() == 16) l.score = detail::parse_double(tok[15], line_no);
    out.push_back(std::move(l));
  }
  return out;
}

inline std::vector<ObjectLabel> read_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_labels(ss.str());
}

inline std::string format_label(const ObjectLabel& l) {
  using detail::format_2dec;
  std::string s = l.class_name;
  s += " " + format_2dec(l.truncation);
  s += " " + std::to_string(l.occlusion);
  for (double v : {l.alpha, l.bbox_left, l.bbox_top, l.bbox_right,
                   l.bbox_bottom, l.height, l.width, l.length, l.x, l.y, l.z,
                   l.rotation_y}) {
    s += " " + format_2dec(v);
  }
  if (l.score) s += " " + detail::format_roundtrip(*l.score);
  return s;
}

inline void write_labels(const std::vector<ObjectLabel>& labels,
                         const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoFailure("cannot open " + path.string() + " for writing");
  for (const ObjectLabel& l : labels) out << format_label(l) << '\n';
  if (!out) throw IoFailure("short write to " + path.string());
}

// --- calibration -------------------------------------------------------

inline Calibration parse_calib(std::string_view text) {
  Calibration c;
  bool have_p2 = false, have_r0 = false, have_tr = false;
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const std::string_view line =
        text.substr(pos, nl == std::string_view::npos ? text.size() - pos
                                                      : nl - pos);
    ++line_no;
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    const std::size_t colon = line.find(':');
    if (colon == std::string_view::npos) continue;
    const std::string_view key = line.substr(0, colon);
    const auto tok = detail::split_ws(line.substr(colon + 1));
    auto fill = [&](auto& dst, std::size_t want) {
      if (tok.size() != want) {
        throw MalformedLine("line " + std::to_string(line_no) + ": key '" +
                            std::string(key) + "' expects " +
                            std::to_string(want) + " values, got " +
                            std::to_string(tok.size()));
      }
      for (std::size_t i = 0; i < want; ++i) {
        dst[i] = detail::parse_double(tok[i], line_no);
      }
    };
    if (key == "P2") {
      fill(c.p2, 12);
      have_p2 = true;
    } else if (key == "R0_rect") {
      fill(c.r0_rect, 9);
      have_r0 = true;
    } else if (key == "Tr_velo_to_cam") {
      fill(c.tr_velo_to_cam, 12);
      have_tr = true;
    }  // other keys are ignored
  }
  if (!have_p2) throw UnknownMatrixKey("required calibration key P2 missing");
  if (!have_r0) {
    throw UnknownMatrixKey("required calibration key R0_rect missing");
  }
  if (!have_tr) {
    throw UnknownMatrixKey("required calibration key Tr_velo_to_cam missing");
  }
  return c;
}

inline Calibration read_calib(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_calib(ss.str());
}

inline void write_calib(const Calibration& c,
                        const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoFailure("cannot open " + path.string() + " for writing");
  auto emit = [&](const char* key, const double* v, std::size_t n) {
    out << key << ':';
    for (std::size_t i = 0; i < n; ++i) {
      out << ' ' << detail::format_roundtrip(v[i]);
    }
    out << '\n';
  };
  emit("P2", c.p2.data(), 12);
  emit("R0_rect", c.r0_rect.data(), 9);
  emit("Tr_velo_to_cam", c.tr_velo_to_cam.data(), 12);
  if (!out) throw IoFailure("short write to " + path.string());
}

// Standard KITTI-style rig: velodyne x forward / y left / z up, camera x
// right / y down / z forward, rectification disabled, cam-2 intrinsics.
inline Calibration canonical_calibration() {
  Calibration c;
  c.p2 = {721.5377, 0, 609.5593, 0,  //
          0, 721.5377, 172.854, 0,   //
          0, 0, 1, 0};
  c.r0_rect = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  c.tr_velo_to_cam = {0, -1, 0, 0,  //
                      0, 0, -1, 0,  //
                      1, 0, 0, 0};
  return c;
}

// --- label <-> box conversion ------------------------------------------

// Camera-frame label (bottom-center) to LiDAR-frame box (geometric center).
inline Box3D label_to_box3d(const ObjectLabel& label, const Calibration& c) {
  const auto r0 = c.r0_rect;
  const auto tr_r = detail::rot_of(c.tr_velo_to_cam);
  const auto tr_t = detail::trans_of(c.tr_velo_to_cam);
  const auto r0_inv = detail::invert3(r0);
  const auto tr_r_inv = detail::invert3(tr_r);

  // Geometric center in rectified camera coords: lift bottom-center by h/2
  // (camera y points down).
  const std::array<double, 3> c_cam{label.x, label.y - label.height / 2,
                                    label.z};
  const auto c_unrect = detail::mul3(r0_inv, c_cam);
  const std::array<double, 3> shifted{c_unrect[0] - tr_t[0],
                                      c_unrect[1] - tr_t[1],
                                      c_unrect[2] - tr_t[2]};
  const auto c_velo = detail::mul3(tr_r_inv, shifted);

  // Heading: the box forward axis is (cos ry, 0, -sin ry) in camera coords.
  const std::array<double, 3> f_cam{std::cos(label.rotation_y), 0.0,
                                    -std::sin(label.rotation_y)};
  const auto f_velo = detail::mul3(tr_r_inv, detail::mul3(r0_inv, f_cam));

  Box3D b;
  b.x = c_velo[0];
  b.y = c_velo[1];
  b.z = c_velo[2];
  b.l = label.length;
  b.w = label.width;
  b.h = label.height;
  b.yaw = detail::wrap_angle(std::atan2(f_velo[1], f_velo[0]));
  return b;
}

// Inverse of label_to_box3d. bbox2d is the projection of the box corners
// through P2, clipped to image_width x image_height; alpha follows the
// KITTI convention alpha = ry - atan2(x, z).
inline ObjectLabel box3d_to_label(const Box3D& b, const Calibration& c,
                                  const std::string& class_name,
                                  std::optional<double> score = std::nullopt,
                                  int image_width = 1242,
                                  int image_height = 375) {
  const auto r0 = c.r0_rect;
  const auto tr_r = detail::rot_of(c.tr_velo_to_cam);
  const auto tr_t = detail::trans_of(c.tr_velo_to_cam);

  auto velo_to_rect = [&](const std::array<double, 3>& v) {
    const auto t = detail::mul3(tr_r, v);
    return detail::mul3(
        r0, {t[0] + tr_t[0], t[1] + tr_t[1], t[2] + tr_t[2]});
  };

  const auto c_cam = velo_to_rect({b.x, b.y, b.z});
  const auto f_velo_cam = detail::mul3(
      detail::mul3x3(r0, tr_r), {std::cos(b.yaw), std::sin(b.yaw), 0.0});
  const double ry =
      detail::wrap_angle(std::atan2(-f_velo_cam[2], f_velo_cam[0]));

  ObjectLabel l;
  l.class_name = class_name;
  l.height = b.h;
  l.width = b.w;
  l.length = b.l;
  l.x = c_cam[0];
  l.y = c_cam[1] + b.h / 2;  // back to bottom-center
  l.z = c_cam[2];
  l.rotation_y = ry;
  l.alpha = detail::wrap_angle(ry - std::atan2(c_cam[0], c_cam[2]));
  l.score = score;

  // Project the 8 corners for the 2D box; skip corners behind the camera.
  double ulo = 1e300, uhi = -1e300, vlo = 1e300, vhi = -1e300;
  const double cy = std::cos(b.yaw), sy = std::sin(b.yaw);
  for (int i = 0; i < 8; ++i) {
    const double sx = (i & 1) ? b.l / 2 : -b.l / 2;
    const double sw = (i & 2) ? b.w / 2 : -b.w / 2;
    const double sz = (i & 4) ? b.h / 2 : -b.h / 2;
    const std::array<double, 3> corner{b.x + cy * sx - sy * sw,
                                       b.y + sy * sx + cy * sw, b.z + sz};
    const auto p = velo_to_rect(corner);
    if (p[2] <= 0.1) continue;
    const double u =
        (c.p2[0] * p[0] + c.p2[1] * p[1] + c.p2[2] * p[2] + c.p2[3]) / p[2];
    const double v =
        (c.p2[4] * p[0] + c.p2[5] * p[1] + c.p2[6] * p[2] + c.p2[7]) / p[2];
    ulo = std::min(ulo, u);
    uhi = std::max(uhi, u);
    vlo = std::min(vlo, v);
    vhi = std::max(vhi, v);
  }
  if (uhi > ulo) {
    l.bbox_left = std::clamp(ulo, 0.0, double(image_width - 1));
    l.bbox_right = std::clamp(uhi, 0.0, double(image_width - 1));
    l.bbox_top = std::clamp(vlo, 0.0, double(image_height - 1));
    l.bbox_bottom = std::clamp(vhi, 0.0, double(image_height - 1));
  }
  return l;
}

}  // namespace wxbench
