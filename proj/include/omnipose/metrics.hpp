#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "omnipose/pose.hpp"

namespace omnipose::metrics {

struct AreaRange {
  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();
  bool contains(double area) const { return area >= lo && area <= hi; }
};

struct OksConfig {
  std::vector<double> k;  // per-keypoint falloff constants
  std::vector<double> thresholds{0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95};
  AreaRange medium{32.0 * 32.0, 96.0 * 96.0};
  AreaRange large{96.0 * 96.0, std::numeric_limits<double>::infinity()};

  void validate() const;
};

// The 17 published COCO person-keypoint sigmas. The OKS falloff constants
// are twice these (the COCO evaluator divides by (2 sigma)^2).
std::vector<double> coco_keypoint_sigmas();
std::vector<double> coco_falloff_constants();

/// sum_i exp(-d_i^2 / (2 s^2 k_i^2)) over labeled ground-truth joints divided
/// by their count, with s^2 = gt.area. Throws when gt has no labeled joint
/// or no positive area.
double oks(const PoseAnnotation& pred, const PoseAnnotation& gt, std::span<const double> k);

struct PckhResult {
  std::vector<std::size_t> correct;  // per joint
  std::vector<std::size_t> labeled;
  std::vector<double> per_joint;     // correct / labeled (0 when nothing labeled)
  double mean = 0.0;                 // total correct / total labeled
};

// preds[i] is evaluated against gts[i]; a missing prediction (nullopt) makes
// every labeled joint of that instance incorrect. Correct iff
// ||pred - gt|| <= alpha * head_size.
PckhResult pckh(const std::vector<std::optional<PoseAnnotation>>& preds,
                const std::vector<PoseAnnotation>& gts, double alpha);

struct GroupRate {
  std::string group;
  std::size_t correct = 0;
  std::size_t labeled = 0;
  double rate = 0.0;
};
// Head, Shoulder, Elbow, Wrist, Hip, Knee, Ankle (by keypoint-name substring),
// followed by "Mean" over every joint.
std::vector<GroupRate> group_by_body_part(const std::vector<std::string>& keypoint_names,
                                          const PckhResult& result);

// Greedy matching of predictions (already sorted by descending score) to ground
// truths for one image: each prediction takes the unmatched non-ignored gt with
// the highest OKS >= threshold (lowest index on ties), falling back to ignored
// gts. Returns the gt index per prediction or -1.
std::vector<int> greedy_match(const std::vector<std::vector<double>>& oks_matrix, double threshold,
                              const std::vector<bool>& gt_ignore);

struct Detection {
  double score = 0.0;
  bool true_positive = false;
};
// Precision with monotone non-increasing interpolation, sampled at the 101
// recall points 0.00, 0.01, ..., 1.00. Detections need not be sorted.
double interpolated_ap(std::vector<Detection> detections, std::size_t num_gt);

struct InstanceMatch {
  std::int64_t image_id = 0;
  std::int64_t pred_id = 0;
  std::int64_t gt_id = -1;  // best-OKS gt in the same image, -1 if none
  double oks = 0.0;
};

struct ApReport {
  // nullopt when no ground truth falls in the evaluated range.
  std::optional<double> ap, ap50, ap75, ap_medium, ap_large, ar;
  std::vector<double> thresholds;
  std::vector<double> ap_per_threshold;
  std::vector<double> ar_per_threshold;
  std::vector<InstanceMatch> matches;
};

struct ThresholdStats {
  std::optional<double> ap;
  std::optional<double> recall;
};
// AP and max recall at one OKS threshold restricted to gts inside `range`.
ThresholdStats evaluate_threshold(const std::vector<PoseAnnotation>& preds,
                                  const std::vector<PoseAnnotation>& gts, const OksConfig& cfg,
                                  double threshold, const AreaRange& range);

ApReport match_and_ap(const std::vector<PoseAnnotation>& preds,
                      const std::vector<PoseAnnotation>& gts, const OksConfig& cfg);

}  // namespace omnipose::metrics
