#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "omnipose/pose.hpp"
#include "omnipose/tensor.hpp"

namespace omnipose::codec {

/// Affine map between heatmap and image pixels:
/// image = heatmap * stride + offset.
struct HeatmapMeta {
  std::size_t stride = 4;
  double offset_x = 0.0;
  double offset_y = 0.0;
  double sigma = 3.0;

  void validate() const;
};

struct HeatmapStack {
  Tensor maps;  // [K, H, W]
  HeatmapMeta meta;
};

struct EncodedTargets {
  Tensor heatmaps;         // [K, H, W]
  std::vector<bool> mask;  // false for unlabeled joints
};

// Unnormalized Gaussians (peak 1 at the exact, unrounded centre) for every
// labeled joint; unlabeled joints get zero planes.
EncodedTargets encode(const PoseAnnotation& ann, const HeatmapMeta& meta, std::size_t height,
                      std::size_t width);

enum class Refinement { none, quarter_offset, taylor };
std::string_view to_string(Refinement r);
Refinement refinement_from_string(std::string_view name);

struct Peak {
  double x = 0.0;  // heatmap pixels
  double y = 0.0;
  double confidence = 0.0;
};

// Row-major first maximum, then the requested sub-pixel refinement.
Peak locate_peak(std::span<const double> plane, std::size_t height, std::size_t width,
                 Refinement refinement);

struct DecodedJoint {
  Keypoint keypoint;  // image pixels; v = 2 when confidence > 0, else 0
  double confidence = 0.0;
};

std::vector<DecodedJoint> decode(const Tensor& heatmaps, const HeatmapMeta& meta,
                                 Refinement refinement);
inline std::vector<DecodedJoint> decode(const HeatmapStack& stack, Refinement refinement) {
  return decode(stack.maps, stack.meta, refinement);
}

}  // namespace omnipose::codec
