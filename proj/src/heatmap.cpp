#include "omnipose/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "omnipose/error.hpp"

namespace omnipose::codec {

void HeatmapMeta::validate() const {
  if (stride == 0) throw ConfigError("heatmap stride must be positive");
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ConfigError("heatmap sigma must be positive");
  if (!std::isfinite(offset_x) || !std::isfinite(offset_y)) {
    throw ConfigError("heatmap offset must be finite");
  }
}

EncodedTargets encode(const PoseAnnotation& ann, const HeatmapMeta& meta, std::size_t height,
                      std::size_t width) {
  meta.validate();
  if (ann.keypoints.empty()) throw ShapeError("annotation has no keypoints");
  const std::size_t k = ann.keypoints.size();
  EncodedTargets out{Tensor({k, height, width}), std::vector<bool>(k, false)};
  const double stride = static_cast<double>(meta.stride);
  const double inv2s2 = 1.0 / (2.0 * meta.sigma * meta.sigma);
  for (std::size_t j = 0; j < k; ++j) {
    const Keypoint& kp = ann.keypoints[j];
    if (kp.v <= 0) continue;
    if (!std::isfinite(kp.x) || !std::isfinite(kp.y)) {
      throw ConfigError("labeled keypoint " + std::to_string(j) + " of annotation " +
                        std::to_string(ann.id) + " has non-finite coordinates");
    }
    out.mask[j] = true;
    const double cx = (kp.x - meta.offset_x) / stride;
    const double cy = (kp.y - meta.offset_y) / stride;
    double* plane = out.heatmaps.data().data() + j * height * width;
    for (std::size_t y = 0; y < height; ++y) {
      const double dy = static_cast<double>(y) - cy;
      for (std::size_t x = 0; x < width; ++x) {
        const double dx = static_cast<double>(x) - cx;
        plane[y * width + x] = std::exp(-(dx * dx + dy * dy) * inv2s2);
      }
    }
  }
  return out;
}

std::string_view to_string(Refinement r) {
  switch (r) {
    case Refinement::none: return "none";
    case Refinement::quarter_offset: return "quarter_offset";
    case Refinement::taylor: return "taylor";
  }
  return "none";
}

Refinement refinement_from_string(std::string_view name) {
  if (name == "none") return Refinement::none;
  if (name == "quarter_offset" || name == "quarter") return Refinement::quarter_offset;
  if (name == "taylor") return Refinement::taylor;
  throw ConfigError("unknown refinement '" + std::string(name) +
                    "' (expected none, quarter_offset or taylor)");
}

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

Peak locate_peak(std::span<const double> plane, std::size_t height, std::size_t width,
                 Refinement refinement) {
  if (plane.empty() || height == 0 || width == 0) throw ShapeError("cannot decode an empty heatmap plane");
  if (plane.size() != height * width) throw ShapeError("heatmap plane size does not match H*W");
  const auto it = std::max_element(plane.begin(), plane.end());  // first occurrence
  const std::size_t idx = static_cast<std::size_t>(it - plane.begin());
  const std::size_t mx = idx % width, my = idx / width;
  Peak p{static_cast<double>(mx), static_cast<double>(my), *it};
  auto at = [&](std::size_t y, std::size_t x) { return plane[y * width + x]; };

  if (refinement == Refinement::quarter_offset) {
    if (mx >= 1 && mx + 1 < width) p.x += 0.25 * sign(at(my, mx + 1) - at(my, mx - 1));
    if (my >= 1 && my + 1 < height) p.y += 0.25 * sign(at(my + 1, mx) - at(my - 1, mx));
  } else if (refinement == Refinement::taylor) {
    if (mx >= 1 && mx + 1 < width && my >= 1 && my + 1 < height) {
      auto l = [&](std::size_t y, std::size_t x) { return std::log(std::max(at(y, x), 0.0) + 1e-12); };
      const double c = l(my, mx);
      const double gx = 0.5 * (l(my, mx + 1) - l(my, mx - 1));
      const double gy = 0.5 * (l(my + 1, mx) - l(my - 1, mx));
      const double hxx = l(my, mx + 1) - 2.0 * c + l(my, mx - 1);
      const double hyy = l(my + 1, mx) - 2.0 * c + l(my - 1, mx);
      const double hxy = 0.25 * (l(my + 1, mx + 1) - l(my + 1, mx - 1) - l(my - 1, mx + 1) +
                                 l(my - 1, mx - 1));
      const double det = hxx * hyy - hxy * hxy;
      if (hxx < 0.0 && det > 0.0) {
        const double ox = -(hyy * gx - hxy * gy) / det;
        const double oy = -(hxx * gy - hxy * gx) / det;
        p.x += std::clamp(ox, -0.5, 0.5);
        p.y += std::clamp(oy, -0.5, 0.5);
      }
    }
  }
  return p;
}

std::vector<DecodedJoint> decode(const Tensor& heatmaps, const HeatmapMeta& meta,
                                 Refinement refinement) {
  meta.validate();
  if (heatmaps.rank() != 3) {
    throw ShapeError("decode expects [K,H,W] heatmaps, got " + shape_to_string(heatmaps.shape()));
  }
  if (!heatmaps.all_finite()) throw ShapeError("decode input contains non-finite values");
  const std::size_t k = heatmaps.dim(0), h = heatmaps.dim(1), w = heatmaps.dim(2);
  std::vector<DecodedJoint> out;
  out.reserve(k);
  const double stride = static_cast<double>(meta.stride);
  for (std::size_t j = 0; j < k; ++j) {
    const Peak p = locate_peak(heatmaps.data().subspan(j * h * w, h * w), h, w, refinement);
    out.push_back({Keypoint{p.x * stride + meta.offset_x, p.y * stride + meta.offset_y,
                            p.confidence > 0.0 ? 2 : 0},
                   p.confidence});
  }
  return out;
}

}  // namespace omnipose::codec
