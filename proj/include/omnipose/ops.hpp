#pragma once

#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include "omnipose/tensor.hpp"

namespace omnipose {

struct Hw {
  std::size_t h = 1;
  std::size_t w = 1;
  friend bool operator==(const Hw&, const Hw&) = default;
};

enum class ConvMode { standard, depthwise, pointwise, separable };

std::string_view to_string(ConvMode mode);
ConvMode conv_mode_from_string(std::string_view name);

/// A 2-D convolution layer (cross-correlation, zero padding).
///
/// `weights` is laid out [Cout, Cin, kH, kW]. Depthwise layers use
/// [C, 1, kH, kW] and map C channels to C channels. A separable layer is
/// depthwise -> ReLU -> pointwise: `weights`/`bias` hold the depthwise stage
/// and `pointwise_weights`/`pointwise_bias` the 1x1 stage. The depthwise stage
/// carries stride, dilation and padding; the pointwise stage is always stride 1.
struct ConvLayer {
  Tensor weights;
  std::optional<Tensor> bias;
  std::optional<Tensor> pointwise_weights;
  std::optional<Tensor> pointwise_bias;
  Hw stride{1, 1};
  Hw dilation{1, 1};
  Hw padding{0, 0};
  ConvMode mode = ConvMode::standard;

  void validate() const;

  std::size_t in_channels() const;
  std::size_t out_channels() const;
  std::size_t kernel_h() const { return weights.dim(2); }
  std::size_t kernel_w() const { return weights.dim(3); }
  // 1 for dense layers, C for depthwise.
  std::size_t groups() const;

  // Separable layers only.
  ConvLayer depthwise_stage() const;
  ConvLayer pointwise_stage() const;
};

struct ConvOptions {
  Hw stride{1, 1};
  Hw dilation{1, 1};
  Hw padding{0, 0};
  bool bias = true;
};

// Zero-initialized layer of the requested mode. `kernel` is ignored for
// pointwise layers; depthwise layers require in == out.
ConvLayer make_conv(ConvMode mode, std::size_t in_channels, std::size_t out_channels,
                    std::size_t kernel, const ConvOptions& options = {});

// Output extent of a strided/dilated/padded convolution; throws ShapeError
// when the result would be < 1.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                               std::size_t dilation, std::size_t padding, const char* axis);
std::size_t transposed_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                                     std::size_t dilation, std::size_t padding,
                                     std::size_t output_padding, const char* axis);

// ---- forward -------------------------------------------------------------

// Dispatches separable layers to separable_conv2d.
Tensor conv2d(const Tensor& input, const ConvLayer& layer);
Tensor separable_conv2d(const Tensor& input, const ConvLayer& layer);

// Adjoint of conv2d with respect to its input. Input has layer.out_channels()
// channels and the result has layer.in_channels() channels. A bias, when
// present, must have layer.in_channels() entries. Separable layers are
// rejected (they are not linear).
Tensor transposed_conv2d(const Tensor& input, const ConvLayer& layer, Hw output_padding = {0, 0});

Tensor avg_pool_global(const Tensor& input);
Tensor broadcast_hw(const Tensor& input, std::size_t height, std::size_t width);
Tensor relu(const Tensor& input);
Tensor add(const Tensor& a, const Tensor& b);
Tensor concat_channels(const std::vector<Tensor>& inputs);
// y[n,c,:,:] = x[n,c,:,:] * scale[c] + shift[c]
Tensor channel_affine(const Tensor& input, const Tensor& scale, const Tensor& shift);

// ---- backward ------------------------------------------------------------

/// Cotangents of a convolution. Optional members are set exactly when the
/// layer has the matching parameter.
struct ConvGrad {
  Tensor input;
  Tensor weights;
  std::optional<Tensor> bias;
  std::optional<Tensor> pointwise_weights;
  std::optional<Tensor> pointwise_bias;
};

ConvGrad conv2d_backward(const Tensor& input, const ConvLayer& layer, const Tensor& upstream);
ConvGrad transposed_conv2d_backward(const Tensor& input, const ConvLayer& layer, Hw output_padding,
                                    const Tensor& upstream);
Tensor avg_pool_global_backward(const Shape& input_shape, const Tensor& upstream);
Tensor broadcast_hw_backward(const Tensor& upstream);
// Subgradient at zero is 0.
Tensor relu_backward(const Tensor& input, const Tensor& upstream);

struct AddGrad {
  Tensor a;
  Tensor b;
};
AddGrad add_backward(const Tensor& upstream);
std::vector<Tensor> concat_channels_backward(const std::vector<Shape>& input_shapes,
                                             const Tensor& upstream);

struct AffineGrad {
  Tensor input;
  Tensor scale;
  Tensor shift;
};
AffineGrad channel_affine_backward(const Tensor& input, const Tensor& scale,
                                   const Tensor& upstream);

}  // namespace omnipose
