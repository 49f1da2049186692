#include "omnipose/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "omnipose/error.hpp"

namespace omnipose::metrics {

void OksConfig::validate() const {
  if (k.empty()) throw ConfigError("OKS falloff constants are empty");
  for (double v : k)
    if (!(v > 0.0)) throw ConfigError("OKS falloff constants must be positive");
  if (thresholds.empty()) throw ConfigError("OKS thresholds are empty");
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (!(thresholds[i] > 0.0 && thresholds[i] <= 1.0)) {
      throw ConfigError("OKS thresholds must lie in (0, 1]");
    }
    if (i > 0 && thresholds[i] <= thresholds[i - 1]) {
      throw ConfigError("OKS thresholds must be strictly increasing");
    }
  }
}

std::vector<double> coco_keypoint_sigmas() {
  return {0.026, 0.025, 0.025, 0.035, 0.035, 0.079, 0.079, 0.072, 0.072,
          0.062, 0.062, 0.107, 0.107, 0.087, 0.087, 0.089, 0.089};
}

std::vector<double> coco_falloff_constants() {
  std::vector<double> k = coco_keypoint_sigmas();
  for (double& v : k) v *= 2.0;
  return k;
}

double oks(const PoseAnnotation& pred, const PoseAnnotation& gt, std::span<const double> k) {
  const std::size_t n = gt.keypoints.size();
  if (pred.keypoints.size() != n || k.size() != n) {
    throw ShapeError("OKS needs equal keypoint counts: pred " + std::to_string(pred.keypoints.size()) +
                     ", gt " + std::to_string(n) + ", falloff constants " + std::to_string(k.size()));
  }
  if (!gt.area || !(*gt.area > 0.0)) {
    throw ConfigError("OKS undefined: gt annotation " + std::to_string(gt.id) + " has no positive area");
  }
  const double s2 = *gt.area;
  double sum = 0.0;
  std::size_t labeled = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (gt.keypoints[i].v <= 0) continue;
    const double dx = pred.keypoints[i].x - gt.keypoints[i].x;
    const double dy = pred.keypoints[i].y - gt.keypoints[i].y;
    sum += std::exp(-(dx * dx + dy * dy) / (2.0 * s2 * k[i] * k[i]));
    ++labeled;
  }
  if (labeled == 0) {
    throw ConfigError("OKS undefined: gt annotation " + std::to_string(gt.id) + " has no labeled keypoints");
  }
  return sum / static_cast<double>(labeled);
}

PckhResult pckh(const std::vector<std::optional<PoseAnnotation>>& preds,
                const std::vector<PoseAnnotation>& gts, double alpha) {
  if (preds.size() != gts.size()) throw ShapeError("pckh needs one prediction slot per ground truth");
  if (!(alpha > 0.0)) throw ConfigError("pckh alpha must be positive");
  const std::size_t k = gts.empty() ? 0 : gts.front().keypoints.size();
  PckhResult r{std::vector<std::size_t>(k, 0), std::vector<std::size_t>(k, 0),
               std::vector<double>(k, 0.0), 0.0};
  for (std::size_t i = 0; i < gts.size(); ++i) {
    const PoseAnnotation& gt = gts[i];
    if (gt.keypoints.size() != k) throw ShapeError("ground truths disagree on keypoint count");
    if (!gt.head_size || !(*gt.head_size > 0.0)) {
      throw ConfigError("gt annotation " + std::to_string(gt.id) + " has no head_size");
    }
    if (preds[i] && preds[i]->keypoints.size() != k) {
      throw ShapeError("prediction for gt " + std::to_string(gt.id) + " has the wrong keypoint count");
    }
    const double radius = alpha * *gt.head_size;
    for (std::size_t j = 0; j < k; ++j) {
      if (gt.keypoints[j].v <= 0) continue;
      ++r.labeled[j];
      if (!preds[i]) continue;
      const double d = std::hypot(preds[i]->keypoints[j].x - gt.keypoints[j].x,
                                  preds[i]->keypoints[j].y - gt.keypoints[j].y);
      if (d <= radius) ++r.correct[j];
    }
  }
  std::size_t tc = 0, tl = 0;
  for (std::size_t j = 0; j < k; ++j) {
    r.per_joint[j] = r.labeled[j] ? static_cast<double>(r.correct[j]) / static_cast<double>(r.labeled[j]) : 0.0;
    tc += r.correct[j];
    tl += r.labeled[j];
  }
  r.mean = tl ? static_cast<double>(tc) / static_cast<double>(tl) : 0.0;
  return r;
}

std::vector<GroupRate> group_by_body_part(const std::vector<std::string>& names,
                                          const PckhResult& result) {
  if (names.size() != result.correct.size()) {
    throw ShapeError("keypoint name count does not match the PCKh result");
  }
  struct Group {
    const char* label;
    std::vector<const char*> keys;
  };
  const std::vector<Group> groups{{"Head", {"head", "neck", "nose", "eye", "ear"}},
                                  {"Shoulder", {"shoulder"}}, {"Elbow", {"elbow"}},
                                  {"Wrist", {"wrist"}},       {"Hip", {"hip"}},
                                  {"Knee", {"knee"}},         {"Ankle", {"ankle"}}};
  std::vector<GroupRate> out;
  std::size_t tc = 0, tl = 0;
  for (const Group& g : groups) {
    GroupRate gr{g.label};
    for (std::size_t j = 0; j < names.size(); ++j) {
      std::string lower = names[j];
      std::transform(lower.begin(), lower.end(), lower.begin(),
                     [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      const bool hit = std::any_of(g.keys.begin(), g.keys.end(), [&](const char* key) {
        return lower.find(key) != std::string::npos;
      });
      if (!hit) continue;
      gr.correct += result.correct[j];
      gr.labeled += result.labeled[j];
    }
    gr.rate = gr.labeled ? static_cast<double>(gr.correct) / static_cast<double>(gr.labeled) : 0.0;
    out.push_back(gr);
  }
  for (std::size_t j = 0; j < names.size(); ++j) {
    tc += result.correct[j];
    tl += result.labeled[j];
  }
  out.push_back({"Mean", tc, tl, tl ? static_cast<double>(tc) / static_cast<double>(tl) : 0.0});
  return out;
}

std::vector<int> greedy_match(const std::vector<std::vector<double>>& oks_matrix, double threshold,
                              const std::vector<bool>& gt_ignore) {
  const std::size_t num_gt = gt_ignore.size();
  std::vector<bool> taken(num_gt, false);
  std::vector<int> match(oks_matrix.size(), -1);
  for (std::size_t d = 0; d < oks_matrix.size(); ++d) {
    if (oks_matrix[d].size() != num_gt) throw ShapeError("OKS matrix row has the wrong length");
    for (bool want_ignored : {false, true}) {
      int best = -1;
      double best_oks = threshold;
      for (std::size_t g = 0; g < num_gt; ++g) {
        if (taken[g] || gt_ignore[g] != want_ignored) continue;
        if (oks_matrix[d][g] >= best_oks && (best < 0 || oks_matrix[d][g] > best_oks)) {
          best = static_cast<int>(g);
          best_oks = oks_matrix[d][g];
        }
      }
      if (best >= 0) {
        taken[static_cast<std::size_t>(best)] = true;
        match[d] = best;
        break;
      }
    }
  }
  return match;
}

double interpolated_ap(std::vector<Detection> detections, std::size_t num_gt) {
  if (num_gt == 0) throw ConfigError("AP is undefined without ground truth");
  std::stable_sort(detections.begin(), detections.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  const std::size_t n = detections.size();
  std::vector<double> recall(n), precision(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tp += detections[i].true_positive ? 1 : 0;
    recall[i] = static_cast<double>(tp) / static_cast<double>(num_gt);
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
  }
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double sum = 0.0;
  for (int r = 0; r <= 100; ++r) {
    const double target = static_cast<double>(r) / 100.0;
    const auto it = std::lower_bound(recall.begin(), recall.end(), target);
    if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return sum / 101.0;
}

namespace {

struct ImageGroup {
  std::vector<const PoseAnnotation*> preds;
  std::vector<const PoseAnnotation*> gts;
};

std::map<std::int64_t, ImageGroup> group_by_image(const std::vector<PoseAnnotation>& preds,
                                                  const std::vector<PoseAnnotation>& gts) {
  std::map<std::int64_t, ImageGroup> images;
  for (const PoseAnnotation& g : gts) images[g.image_id].gts.push_back(&g);
  for (const PoseAnnotation& p : preds) images[p.image_id].preds.push_back(&p);
  for (auto& [id, img] : images) {
    std::stable_sort(img.preds.begin(), img.preds.end(), [](const PoseAnnotation* a, const PoseAnnotation* b) {
      return a->score.value_or(0.0) > b->score.value_or(0.0);
    });
  }
  return images;
}

std::vector<std::vector<double>> oks_matrix(const ImageGroup& img, const OksConfig& cfg) {
  std::vector<std::vector<double>> m(img.preds.size(), std::vector<double>(img.gts.size(), 0.0));
  for (std::size_t d = 0; d < img.preds.size(); ++d)
    for (std::size_t g = 0; g < img.gts.size(); ++g)
      if (img.gts[g]->labeled_count() > 0) m[d][g] = oks(*img.preds[d], *img.gts[g], cfg.k);
  return m;
}

}  // namespace

ThresholdStats evaluate_threshold(const std::vector<PoseAnnotation>& preds,
                                  const std::vector<PoseAnnotation>& gts, const OksConfig& cfg,
                                  double threshold, const AreaRange& range) {
  std::vector<Detection> dets;
  std::size_t num_gt = 0, tp = 0;
  for (const auto& [id, img] : group_by_image(preds, gts)) {
    std::vector<bool> ignore(img.gts.size());
    for (std::size_t g = 0; g < img.gts.size(); ++g) {
      const PoseAnnotation& gt = *img.gts[g];
      ignore[g] = gt.labeled_count() == 0 || !gt.area || !range.contains(*gt.area);
      num_gt += ignore[g] ? 0 : 1;
    }
    const std::vector<int> match = greedy_match(oks_matrix(img, cfg), threshold, ignore);
    for (std::size_t d = 0; d < img.preds.size(); ++d) {
      const PoseAnnotation& p = *img.preds[d];
      if (match[d] >= 0) {
        if (ignore[static_cast<std::size_t>(match[d])]) continue;
        dets.push_back({p.score.value_or(0.0), true});
        ++tp;
      } else {
        if (p.area && !range.contains(*p.area)) continue;
        dets.push_back({p.score.value_or(0.0), false});
      }
    }
  }
  if (num_gt == 0) return {};
  return {interpolated_ap(std::move(dets), num_gt),
          static_cast<double>(tp) / static_cast<double>(num_gt)};
}

namespace {

std::optional<double> mean_of(const std::vector<std::optional<double>>& xs) {
  if (xs.empty()) return std::nullopt;
  double sum = 0.0;
  for (const auto& x : xs) {
    if (!x) return std::nullopt;
    sum += *x;
  }
  return sum / static_cast<double>(xs.size());
}

}  // namespace

ApReport match_and_ap(const std::vector<PoseAnnotation>& preds,
                      const std::vector<PoseAnnotation>& gts, const OksConfig& cfg) {
  cfg.validate();
  for (const PoseAnnotation& g : gts) {
    if (g.keypoints.size() != cfg.k.size()) {
      throw ShapeError("gt annotation " + std::to_string(g.id) + " has " +
                       std::to_string(g.keypoints.size()) + " keypoints, OKS config has " +
                       std::to_string(cfg.k.size()));
    }
  }
  ApReport r;
  r.thresholds = cfg.thresholds;
  const AreaRange all{};
  std::vector<std::optional<double>> aps, ars, apm, apl;
  for (double t : cfg.thresholds) {
    const ThresholdStats s = evaluate_threshold(preds, gts, cfg, t, all);
    aps.push_back(s.ap);
    ars.push_back(s.recall);
    r.ap_per_threshold.push_back(s.ap.value_or(0.0));
    r.ar_per_threshold.push_back(s.recall.value_or(0.0));
    apm.push_back(evaluate_threshold(preds, gts, cfg, t, cfg.medium).ap);
    apl.push_back(evaluate_threshold(preds, gts, cfg, t, cfg.large).ap);
  }
  r.ap = mean_of(aps);
  r.ar = mean_of(ars);
  r.ap_medium = mean_of(apm);
  r.ap_large = mean_of(apl);
  r.ap50 = evaluate_threshold(preds, gts, cfg, 0.50, all).ap;
  r.ap75 = evaluate_threshold(preds, gts, cfg, 0.75, all).ap;

  for (const auto& [image_id, img] : group_by_image(preds, gts)) {
    const auto m = oks_matrix(img, cfg);
    for (std::size_t d = 0; d < img.preds.size(); ++d) {
      InstanceMatch im{image_id, img.preds[d]->id, -1, 0.0};
      for (std::size_t g = 0; g < img.gts.size(); ++g) {
        if (img.gts[g]->labeled_count() == 0) continue;
        if (im.gt_id < 0 || m[d][g] > im.oks) {
          im.gt_id = img.gts[g]->id;
          im.oks = m[d][g];
        }
      }
      r.matches.push_back(im);
    }
  }
  return r;
}

}  // namespace omnipose::metrics
