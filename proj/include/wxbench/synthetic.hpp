// SPDX-License-Identifier: MIT
//
// Synthetic scenes and a rule-based detector.
//
// A scene is a handful of car-sized boxes on a flat ground plane, each
// carrying a fixed budget of surface points, plus uniform clutter. The
// detector scores candidate boxes by the fraction of that budget still
// inside, which makes corruption -> detection -> AP pipelines runnable
// without a trained network: removing or displacing points lowers scores
// in direct proportion.
//
// The detector reads only the point cloud. Image corruption cannot change
// its output, which is the harness analogue of a single-branch experiment.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "wxbench/errors.hpp"
#include "wxbench/geometry.hpp"
#include "wxbench/image.hpp"
#include "wxbench/kitti_io.hpp"
#include "wxbench/rng.hpp"

namespace wxbench {

inline constexpr int kScenePointsPerBox = 200;
inline constexpr int kSceneClutterPoints = 2000;
inline constexpr double kSceneGroundZ = -1.6;
inline constexpr int kScenePlacementAttempts = 1000;
inline constexpr int kSceneImageWidth = 1242;
inline constexpr int kSceneImageHeight = 375;
inline constexpr double kDetectorScoreFloor = 0.1;

struct SyntheticScene {
  PointCloud cloud;
  std::vector<Box3D> gt_boxes;  // every box is a Car
  Image image;
  std::uint64_t seed = 0;
};

struct DetectionResult {
  Box3D box;
  double score = 0.0;
  int points_inside = 0;
};

namespace detail {

// Uniform point on the box surface, pulled 0.5% toward the center so it
// lies strictly inside.
inline LidarPoint surface_point(const Box3D& b, SplitMix& rng) {
  const double lw = b.l * b.w;
  const double lh = b.l * b.h;
  const double wh = b.w * b.h;
  const double total = 2.0 * (lw + lh + wh);
  const double pick = rng.uniform() * total;
  double sx = rng.uniform(-0.5, 0.5);
  double sy = rng.uniform(-0.5, 0.5);
  double sz = 0.0;
  if (pick < 2.0 * lw) {
    sz = pick < lw ? 0.5 : -0.5;
  } else if (pick < 2.0 * (lw + lh)) {
    sz = sy;
    sy = pick < 2.0 * lw + lh ? 0.5 : -0.5;
  } else {
    sz = sy;
    sy = sx;
    sx = pick < 2.0 * (lw + lh) + wh ? 0.5 : -0.5;
  }
  const double inset = 0.995;
  const double lx = inset * sx * b.l;
  const double ly = inset * sy * b.w;
  const double lz = inset * sz * b.h;
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  LidarPoint p;
  p.x = static_cast<float>(b.x + c * lx - s * ly);
  p.y = static_cast<float>(b.y + s * lx + c * ly);
  p.z = static_cast<float>(b.z + lz);
  p.reflectance = static_cast<float>(rng.uniform(0.3, 0.9));
  return p;
}

inline void paint_rect(Image& img, double left, double top, double right,
                       double bottom, std::uint8_t r, std::uint8_t g,
                       std::uint8_t b) {
  if (right <= left || bottom <= top) return;
  const int x0 = std::clamp(static_cast<int>(std::lround(left)), 0,
                            img.width - 1);
  const int x1 = std::clamp(static_cast<int>(std::lround(right)), 0,
                            img.width - 1);
  const int y0 = std::clamp(static_cast<int>(std::lround(top)), 0,
                            img.height - 1);
  const int y1 = std::clamp(static_cast<int>(std::lround(bottom)), 0,
                            img.height - 1);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      img.at(x, y, 0) = r;
      img.at(x, y, 1) = g;
      img.at(x, y, 2) = b;
    }
}

}  // namespace detail

// Car-sized boxes at ranges U(5, 60) m within the forward +-45 degree
// wedge, rejection-sampled until footprints are disjoint (BEV IoU = 0).
// Each box gets kScenePointsPerBox surface points; clutter fills the rest
// of the wedge near the ground.
inline SyntheticScene generate_scene(int n_objects, std::uint64_t seed) {
  if (n_objects < 0) throw DataError("generate_scene: negative object count");
  SyntheticScene scene;
  scene.seed = seed;
  scene.cloud.frame = Frame::lidar;
  SplitMix rng(mix64(seed, 0x5ce9eull));

  for (int i = 0; i < n_objects; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < kScenePlacementAttempts; ++attempt) {
      Box3D b;
      b.l = rng.uniform(3.6, 4.2);
      b.w = rng.uniform(1.5, 1.7);
      b.h = rng.uniform(1.4, 1.6);
      const double range = rng.uniform(5.0, 60.0);
      const double bearing =
          rng.uniform(-std::numbers::pi / 4, std::numbers::pi / 4);
      b.x = range * std::cos(bearing);
      b.y = range * std::sin(bearing);
      b.z = kSceneGroundZ + b.h / 2;
      b.yaw = rng.uniform(-std::numbers::pi, std::numbers::pi);
      bool overlaps = false;
      for (const Box3D& other : scene.gt_boxes)
        if (iou_bev(b, other) > 0.0) {
          overlaps = true;
          break;
        }
      if (!overlaps) {
        scene.gt_boxes.push_back(b);
        placed = true;
        break;
      }
    }
    if (!placed)
      throw PlacementFailure("generate_scene: no disjoint placement for box " +
                             std::to_string(i) + " after " +
                             std::to_string(kScenePlacementAttempts) +
                             " attempts");
  }

  for (const Box3D& b : scene.gt_boxes)
    for (int k = 0; k < kScenePointsPerBox; ++k)
      scene.cloud.points.push_back(detail::surface_point(b, rng));

  for (int k = 0; k < kSceneClutterPoints; ++k) {
    const double bearing =
        rng.uniform(-std::numbers::pi / 2, std::numbers::pi / 2);
    const double range = rng.uniform(1.0, 80.0);
    LidarPoint p;
    p.x = static_cast<float>(range * std::cos(bearing));
    p.y = static_cast<float>(range * std::sin(bearing));
    p.z = static_cast<float>(kSceneGroundZ + rng.uniform(0.0, 0.5));
    p.reflectance = static_cast<float>(rng.uniform(0.1, 0.9));
    scene.cloud.points.push_back(p);
  }

  // Flat backdrop; boxes painted far-to-near so closer cars overdraw.
  scene.image = Image::filled(kSceneImageWidth, kSceneImageHeight, 180, 180,
                              190);
  std::vector<int> order(scene.gt_boxes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = int(i);
  const auto range2 = [&](int i) {
    const Box3D& b = scene.gt_boxes[i];
    return b.x * b.x + b.y * b.y;
  };
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return range2(a) > range2(b); });
  const Calibration calib = canonical_calibration();
  for (int i : order) {
    const ObjectLabel l =
        box3d_to_label(scene.gt_boxes[i], calib, "Car", std::nullopt,
                       kSceneImageWidth, kSceneImageHeight);
    detail::paint_rect(scene.image, l.bbox_left, l.bbox_top, l.bbox_right,
                       l.bbox_bottom, 60, 60, 70);
  }
  return scene;
}

// One decoy per input box: center jittered by U(-2, 2) m in x and y, yaw
// by U(-30, 30) degrees. Dimensions kept.
inline std::vector<Box3D> decoy_boxes(std::span<const Box3D> boxes,
                                      std::uint64_t seed) {
  SplitMix rng(mix64(seed, 0xdec0ull));
  std::vector<Box3D> out;
  out.reserve(boxes.size());
  for (const Box3D& b : boxes) {
    Box3D d = b;
    d.x += rng.uniform(-2.0, 2.0);
    d.y += rng.uniform(-2.0, 2.0);
    d.yaw = detail::wrap_angle(d.yaw + rng.uniform(-std::numbers::pi / 6,
                                                   std::numbers::pi / 6));
    out.push_back(d);
  }
  return out;
}

// Scores each candidate by the contained fraction of the per-box point
// budget and keeps candidates at or above the score floor.
inline std::vector<DetectionResult> rule_detector(
    const PointCloud& cloud, std::span<const Box3D> candidates) {
  std::vector<DetectionResult> out;
  for (const Box3D& b : candidates) {
    int inside = 0;
    for (const LidarPoint& p : cloud.points)
      inside += contains(b, double(p.x), double(p.y), double(p.z)) ? 1 : 0;
    const double score =
        std::clamp(inside / double(kScenePointsPerBox), 0.0, 1.0);
    if (score >= kDetectorScoreFloor)
      out.push_back(DetectionResult{b, score, inside});
  }
  return out;
}

// Ground-truth boxes as camera-frame labels under the canonical rig.
inline std::vector<ObjectLabel> scene_labels(const SyntheticScene& scene) {
  const Calibration calib = canonical_calibration();
  std::vector<ObjectLabel> out;
  out.reserve(scene.gt_boxes.size());
  for (const Box3D& b : scene.gt_boxes)
    out.push_back(box3d_to_label(b, calib, "Car", std::nullopt,
                                 kSceneImageWidth, kSceneImageHeight));
  return out;
}

inline std::vector<ObjectLabel> detection_labels(
    std::span<const DetectionResult> dets) {
  const Calibration calib = canonical_calibration();
  std::vector<ObjectLabel> out;
  out.reserve(dets.size());
  for (const DetectionResult& d : dets)
    out.push_back(box3d_to_label(d.box, calib, "Car", d.score,
                                 kSceneImageWidth, kSceneImageHeight));
  return out;
}

// Writes the scene as one KITTI-style frame under root:
// velodyne/<stem>.bin, image_2/<stem>.png, label_2/<stem>.txt,
// calib/<stem>.txt.
inline void export_scene(const SyntheticScene& scene,
                         const std::filesystem::path& root,
                         const std::string& stem) {
  namespace fs = std::filesystem;
  for (const char* sub : {"velodyne", "image_2", "label_2", "calib"})
    fs::create_directories(root / sub);
  write_point_cloud(scene.cloud, root / "velodyne" / (stem + ".bin"));
  write_image(root / "image_2" / (stem + ".png"), scene.image);
  write_labels(scene_labels(scene), root / "label_2" / (stem + ".txt"));
  write_calib(canonical_calibration(), root / "calib" / (stem + ".txt"));
}

}  // namespace wxbench
