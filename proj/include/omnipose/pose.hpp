#pragma once

#include <cstdint>
#include <optional>
#include <vector>

namespace omnipose {

// v: 0 not labeled, 1 labeled but occluded, 2 labeled and visible.
struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  int v = 0;
};

struct PoseAnnotation {
  std::int64_t id = 0;
  std::int64_t image_id = 0;
  std::vector<Keypoint> keypoints;
  std::optional<double> area;       // s^2 for OKS
  std::optional<double> head_size;  // PCKh normalizer
  std::optional<double> score;      // predictions only

  std::size_t labeled_count() const {
    std::size_t n = 0;
    for (const Keypoint& k : keypoints) n += k.v > 0 ? 1 : 0;
    return n;
  }
};

}  // namespace omnipose
