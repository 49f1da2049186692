#pragma once

#include <cstddef>

#include "omnipose/ops.hpp"
#include "omnipose/tensor.hpp"

namespace omnipose::gdm {

struct GdmConfig {
  std::size_t kernel_size = 7;  // odd
  double sigma = 2.0;
  // Geometry of the learned upsampling (transposed convolution).
  std::size_t upsample_stride = 2;
  std::size_t upsample_kernel = 4;
  std::size_t upsample_padding = 1;

  void validate() const;
};

/// exp(-((u-c)^2 + (v-c)^2) / (2 sigma^2)) with c = (size-1)/2, so the centre
/// element is exactly 1. Returned as a [size, size] tensor.
Tensor gaussian_kernel2d(std::size_t size, double sigma);

// Per-channel Gaussian blur with zero padding (size-1)/2; preserves H and W.
Tensor gaussian_smooth(const Tensor& features, const GdmConfig& cfg);

/// Blurs each channel plane and rescales it so that its minimum maps to 0 and
/// its maximum to the plane maximum of the unblurred input. Planes that are
/// constant (before or after blurring) are passed through unchanged.
Tensor modulate(const Tensor& features, const GdmConfig& cfg);
Tensor modulate_backward(const Tensor& features, const GdmConfig& cfg, const Tensor& upstream);

// Transposed-conv layer (zero weights, bias) for `factor`x upsampling from
// `in_channels` to `out_channels` maps. factor == cfg.upsample_stride uses the
// configured kernel and padding; other powers of two use kernel 2f, padding f/2.
ConvLayer make_upsample_layer(const GdmConfig& cfg, std::size_t in_channels,
                              std::size_t out_channels, std::size_t factor, bool bias = true);

// modulate(transposed_conv2d(features, layer)).
Tensor gdm_upsample(const Tensor& features, const GdmConfig& cfg, const ConvLayer& layer,
                    Hw output_padding = {0, 0});

}  // namespace omnipose::gdm
