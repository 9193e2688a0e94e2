// SPDX-License-Identifier: MIT
//
// KITTI-style evaluation: difficulty binning, average precision at 40
// recall thresholds, and the relative corruption error.
//
// Matching protocol. Detections are processed in descending score order
// (ties in input order) and greedily claim the unmatched eligible ground
// truth of maximal IoU when that IoU clears the threshold. A detection
// that misses every eligible ground truth but overlaps a stricter-tier one
// (same class, tier above the evaluated difficulty or ignored) or a
// DontCare region is absorbed: it counts as neither true nor false
// positive. Each detection's outcome depends only on higher-priority
// detections, so cumulative counts after each distinct score equal a full
// re-match of the score-threshold subset; operating points are emitted at
// distinct-score boundaries.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wxbench/errors.hpp"
#include "wxbench/geometry.hpp"
#include "wxbench/kitti_io.hpp"

namespace wxbench {

enum class Difficulty { easy = 0, moderate = 1, hard = 2 };

inline const char* to_string(Difficulty d) {
  switch (d) {
    case Difficulty::easy: return "easy";
    case Difficulty::moderate: return "moderate";
    default: return "hard";
  }
}

// Standard KITTI tiers: minimum 2D box height 40/25/25 px, maximum
// occlusion 0/1/2, maximum truncation 0.15/0.30/0.50. A label clearing no
// tier is ignored. A ground truth participates in the evaluation of
// difficulty D when its tier is at most D.
inline std::optional<Difficulty> assign_difficulty(const ObjectLabel& l) {
  const double h = l.bbox_height();
  if (h >= 40.0 && l.occlusion <= 0 && l.truncation <= 0.15) {
    return Difficulty::easy;
  }
  if (h >= 25.0 && l.occlusion <= 1 && l.truncation <= 0.30) {
    return Difficulty::moderate;
  }
  if (h >= 25.0 && l.occlusion <= 2 && l.truncation <= 0.50) {
    return Difficulty::hard;
  }
  return std::nullopt;
}

enum class IouKind { box3d, bev };

inline const char* to_string(IouKind k) {
  return k == IouKind::box3d ? "3d" : "bev";
}

struct PrPoint {
  double recall = 0;
  double precision = 0;
};

struct ApResult {
  double ap = 0;  // percent
  int n_gt = 0;   // eligible ground truths at this difficulty
  std::array<PrPoint, 41> curve{};  // recall 0/40 .. 40/40
};

// One frame's labels with their LiDAR-frame boxes; gts and gt_boxes are
// index-aligned (DontCare rows carry an unused placeholder box).
struct EvalFrame {
  std::vector<ObjectLabel> gts;
  std::vector<Box3D> gt_boxes;
  std::vector<ObjectLabel> dets;
  std::vector<Box3D> det_boxes;
};

inline EvalFrame make_eval_frame(const std::vector<ObjectLabel>& gts,
                                 const std::vector<ObjectLabel>& dets,
                                 const Calibration& calib) {
  EvalFrame f;
  f.gts = gts;
  f.dets = dets;
  for (const ObjectLabel& l : gts) {
    f.gt_boxes.push_back(l.is_dont_care() ? Box3D{} : label_to_box3d(l, calib));
  }
  for (const ObjectLabel& l : dets) {
    f.det_boxes.push_back(l.is_dont_care() ? Box3D{}
                                           : label_to_box3d(l, calib));
  }
  return f;
}

namespace detail {

// 2D box intersection over detection area, the DontCare absorption
// measure.
inline double intersection_over_det_area(const ObjectLabel& det,
                                         const ObjectLabel& dc) {
  const double iw = std::min(det.bbox_right, dc.bbox_right) -
                    std::max(det.bbox_left, dc.bbox_left);
  const double ih = std::min(det.bbox_bottom, dc.bbox_bottom) -
                    std::max(det.bbox_top, dc.bbox_top);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double det_area = (det.bbox_right - det.bbox_left) *
                          (det.bbox_bottom - det.bbox_top);
  return det_area > 0 ? iw * ih / det_area : 0.0;
}

enum class DetOutcome { tp, fp, absorbed };

// Greedy match-once pass over one frame; returns (score, outcome) per
// class-matched detection.
inline std::vector<std::pair<double, DetOutcome>> match_frame(
    const EvalFrame& f, const std::string& class_name, IouKind kind,
    double iou_threshold, Difficulty difficulty, int* n_eligible) {
  std::vector<std::size_t> eligible, stricter, dont_care;
  for (std::size_t i = 0; i < f.gts.size(); ++i) {
    const ObjectLabel& g = f.gts[i];
    if (g.is_dont_care()) {
      dont_care.push_back(i);
    } else if (g.class_name == class_name) {
      const auto tier = assign_difficulty(g);
      if (tier && int(*tier) <= int(difficulty)) {
        eligible.push_back(i);
      } else {
        stricter.push_back(i);
      }
    }
  }
  *n_eligible += int(eligible.size());

  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < f.dets.size(); ++i) {
    if (f.dets[i].class_name != class_name) continue;
    if (!f.dets[i].score) {
      throw DataError("detection without a score");
    }
    order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return *f.dets[a].score > *f.dets[b].score;
                   });

  auto iou = [&](const Box3D& a, const Box3D& b) {
    return kind == IouKind::box3d ? iou_3d(a, b) : iou_bev(a, b);
  };

  std::vector<bool> taken(f.gts.size(), false);
  std::vector<std::pair<double, DetOutcome>> out;
  for (std::size_t d : order) {
    // Best unmatched eligible ground truth; equal IoU keeps the lowest
    // index.
    double best = -1;
    std::size_t best_g = 0;
    for (std::size_t g : eligible) {
      if (taken[g]) continue;
      const double v = iou(f.det_boxes[d], f.gt_boxes[g]);
      if (v > best) {
        best = v;
        best_g = g;
      }
    }
    if (best >= iou_threshold) {
      taken[best_g] = true;
      out.emplace_back(*f.dets[d].score, DetOutcome::tp);
      continue;
    }
    bool absorbed = false;
    for (std::size_t g : stricter) {
      if (iou(f.det_boxes[d], f.gt_boxes[g]) >= iou_threshold) {
        absorbed = true;
        break;
      }
    }
    if (!absorbed) {
      for (std::size_t g : dont_care) {
        if (intersection_over_det_area(f.dets[d], f.gts[g]) > iou_threshold) {
          absorbed = true;
          break;
        }
      }
    }
    out.emplace_back(*f.dets[d].score,
                     absorbed ? DetOutcome::absorbed : DetOutcome::fp);
  }
  return out;
}

}  // namespace detail

// AP at the 40 recall thresholds {1/40, ..., 40/40}, reported x100, with
// the running-max interpolated precision. curve[0] holds the recall-0
// anchor (overall maximum precision).
inline ApResult evaluate_ap_r40(std::span<const EvalFrame> frames,
                                const std::string& class_name, IouKind kind,
                                double iou_threshold, Difficulty difficulty) {
  int n_gt = 0;
  std::vector<std::pair<double, detail::DetOutcome>> all;
  for (const EvalFrame& f : frames) {
    auto part = detail::match_frame(f, class_name, kind, iou_threshold,
                                    difficulty, &n_gt);
    all.insert(all.end(), part.begin(), part.end());
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });

  // Operating points at distinct-score boundaries.
  std::vector<PrPoint> points;
  int tp = 0, fp = 0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    tp += (all[i].second == detail::DetOutcome::tp);
    fp += (all[i].second == detail::DetOutcome::fp);
    const bool boundary =
        (i + 1 == all.size()) || (all[i + 1].first != all[i].first);
    if (boundary && tp + fp > 0) {
      points.push_back(PrPoint{n_gt > 0 ? double(tp) / n_gt : 0.0,
                               double(tp) / (tp + fp)});
    }
  }

  auto p_interp = [&](double r) {
    double best = 0;
    for (const PrPoint& p : points) {
      if (p.recall >= r) best = std::max(best, p.precision);
    }
    return best;
  };

  ApResult res;
  res.n_gt = n_gt;
  double sum = 0;
  res.curve[0] = PrPoint{0.0, p_interp(0.0)};
  for (int i = 1; i <= 40; ++i) {
    const double r = double(i) / 40.0;
    const double p = p_interp(r);
    res.curve[std::size_t(i)] = PrPoint{r, p};
    sum += p;
  }
  res.ap = 100.0 * (sum / 40.0);
  return res;
}

// Convenience overload for frame-aligned label lists.
inline ApResult evaluate_ap_r40(
    const std::vector<std::vector<ObjectLabel>>& gts,
    const std::vector<std::vector<ObjectLabel>>& dets,
    const Calibration& calib, const std::string& class_name, IouKind kind,
    double iou_threshold, Difficulty difficulty) {
  if (gts.size() != dets.size()) {
    throw MismatchedFrames("ground-truth and detection frame counts differ");
  }
  std::vector<EvalFrame> frames;
  frames.reserve(gts.size());
  for (std::size_t i = 0; i < gts.size(); ++i) {
    frames.push_back(make_eval_frame(gts[i], dets[i], calib));
  }
  return evaluate_ap_r40(frames, class_name, kind, iou_threshold, difficulty);
}

struct RceValue {
  double ap_clean = 0;
  double ap_corrupt = 0;
  double rce = 0;
};

// Relative corruption error (AP - AP_c) / AP.
inline double rce(double ap, double ap_c) {
  if (!(ap > 0)) throw ZeroCleanAp("clean AP must be positive");
  return (ap - ap_c) / ap;
}

inline RceValue make_rce(double ap, double ap_c) {
  return RceValue{ap, ap_c, rce(ap, ap_c)};
}

// Summary over both IoU kinds and all three difficulties.
struct EvalSummary {
  // entries[kind][difficulty]: kind 0 = 3d, 1 = bev.
  std::array<std::array<ApResult, 3>, 2> entries{};
};

}  // namespace wxbench
