#include "omnipose/ops.hpp"

#include <algorithm>
#include <string>

#include "omnipose/error.hpp"

namespace omnipose {

std::string_view to_string(ConvMode mode) {
  switch (mode) {
    case ConvMode::standard: return "standard";
    case ConvMode::depthwise: return "depthwise";
    case ConvMode::pointwise: return "pointwise";
    case ConvMode::separable: return "separable";
  }
  return "standard";
}

ConvMode conv_mode_from_string(std::string_view name) {
  if (name == "standard") return ConvMode::standard;
  if (name == "depthwise") return ConvMode::depthwise;
  if (name == "pointwise") return ConvMode::pointwise;
  if (name == "separable") return ConvMode::separable;
  throw ConfigError("unknown convolution mode '" + std::string(name) + "'");
}

namespace {

std::string dim_message(const char* what, std::size_t got, std::size_t want) {
  return std::string(what) + " is " + std::to_string(got) + ", expected " + std::to_string(want);
}

void require_vector(const std::optional<Tensor>& t, std::size_t n, const char* what) {
  if (!t) return;
  if (t->rank() != 1 || t->dim(0) != n) {
    throw ShapeError(std::string(what) + " must have shape [" + std::to_string(n) + "], got " +
                     shape_to_string(t->shape()));
  }
}

struct Geometry {
  Hw stride;
  Hw dilation;
  Hw padding;
  std::size_t groups;
};

Geometry geometry_of(const ConvLayer& layer) {
  return {layer.stride, layer.dilation, layer.padding, layer.groups()};
}

// Range [lo, hi) of output positions o with 0 <= o*stride + offset < in.
struct Range {
  std::size_t lo, hi;
};
Range valid_range(std::size_t out, std::size_t in, std::size_t stride, long long offset) {
  const long long s = static_cast<long long>(stride);
  long long lo = 0;
  if (offset < 0) lo = (-offset + s - 1) / s;
  const long long last = static_cast<long long>(in) - 1 - offset;
  long long hi = last < 0 ? 0 : last / s + 1;
  hi = std::min<long long>(hi, static_cast<long long>(out));
  if (hi < lo) hi = lo;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// y = conv(x, w) + b for a grouped convolution. `w` is [Cout, Cin/groups, kH, kW].
Tensor conv_forward_kernel(const Tensor& x, const Tensor& w, const Tensor* bias,
                           const Geometry& g, std::size_t out_h, std::size_t out_w) {
  const auto [n_batch, cin, h, wd] = require_nchw(x, "conv input");
  const std::size_t cout = w.dim(0), cin_pg = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const std::size_t cout_pg = cout / g.groups;
  Tensor y({n_batch, cout, out_h, out_w});
  const double* xd = x.data().data();
  const double* wdata = w.data().data();
  double* yd = y.data().data();
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t co = 0; co < cout; ++co) {
      double* yplane = yd + (n * cout + co) * out_h * out_w;
      if (bias) std::fill(yplane, yplane + out_h * out_w, (*bias)[co]);
      const std::size_t grp = co / cout_pg;
      for (std::size_t cl = 0; cl < cin_pg; ++cl) {
        const std::size_t ci = grp * cin_pg + cl;
        const double* xplane = xd + (n * cin + ci) * h * wd;
        for (std::size_t u = 0; u < kh; ++u) {
          const long long oy_off = static_cast<long long>(u * g.dilation.h) -
                                   static_cast<long long>(g.padding.h);
          const Range ry = valid_range(out_h, h, g.stride.h, oy_off);
          for (std::size_t v = 0; v < kw; ++v) {
            const double wv = wdata[((co * cin_pg + cl) * kh + u) * kw + v];
            const long long ox_off = static_cast<long long>(v * g.dilation.w) -
                                     static_cast<long long>(g.padding.w);
            const Range rx = valid_range(out_w, wd, g.stride.w, ox_off);
            for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
              const std::size_t iy = static_cast<std::size_t>(
                  static_cast<long long>(oy * g.stride.h) + oy_off);
              const double* xrow = xplane + iy * wd;
              double* yrow = yplane + oy * out_w;
              for (std::size_t ox = rx.lo; ox < rx.hi; ++ox) {
                const std::size_t ix = static_cast<std::size_t>(
                    static_cast<long long>(ox * g.stride.w) + ox_off);
                yrow[ox] += wv * xrow[ix];
              }
            }
          }
        }
      }
    }
  }
  return y;
}

// Adjoint of conv_forward_kernel (without bias) with respect to x: scatter-add
// of `gy` through the kernel into an input-shaped buffer.
Tensor conv_scatter_kernel(const Tensor& gy, const Tensor& w, const Geometry& g,
                           std::size_t in_h, std::size_t in_w) {
  const auto [n_batch, cout, out_h, out_w] = require_nchw(gy, "conv cotangent");
  const std::size_t cin_pg = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const std::size_t cin = cin_pg * g.groups;
  const std::size_t cout_pg = cout / g.groups;
  Tensor gx({n_batch, cin, in_h, in_w});
  const double* gyd = gy.data().data();
  const double* wdata = w.data().data();
  double* gxd = gx.data().data();
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t co = 0; co < cout; ++co) {
      const double* gplane = gyd + (n * cout + co) * out_h * out_w;
      const std::size_t grp = co / cout_pg;
      for (std::size_t cl = 0; cl < cin_pg; ++cl) {
        const std::size_t ci = grp * cin_pg + cl;
        double* xplane = gxd + (n * cin + ci) * in_h * in_w;
        for (std::size_t u = 0; u < kh; ++u) {
          const long long oy_off = static_cast<long long>(u * g.dilation.h) -
                                   static_cast<long long>(g.padding.h);
          const Range ry = valid_range(out_h, in_h, g.stride.h, oy_off);
          for (std::size_t v = 0; v < kw; ++v) {
            const double wv = wdata[((co * cin_pg + cl) * kh + u) * kw + v];
            const long long ox_off = static_cast<long long>(v * g.dilation.w) -
                                     static_cast<long long>(g.padding.w);
            const Range rx = valid_range(out_w, in_w, g.stride.w, ox_off);
            for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
              const std::size_t iy = static_cast<std::size_t>(
                  static_cast<long long>(oy * g.stride.h) + oy_off);
              double* xrow = xplane + iy * in_w;
              const double* grow = gplane + oy * out_w;
              for (std::size_t ox = rx.lo; ox < rx.hi; ++ox) {
                const std::size_t ix = static_cast<std::size_t>(
                    static_cast<long long>(ox * g.stride.w) + ox_off);
                xrow[ix] += wv * grow[ox];
              }
            }
          }
        }
      }
    }
  }
  return gx;
}

// d<gy, conv(x, w)>/dw
Tensor conv_weight_grad_kernel(const Tensor& x, const Tensor& gy, const Shape& w_shape,
                               const Geometry& g) {
  const auto [n_batch, cin, h, wd] = require_nchw(x, "conv input");
  const auto [gn, cout, out_h, out_w] = require_nchw(gy, "conv cotangent");
  (void)gn;
  const std::size_t cin_pg = w_shape[1], kh = w_shape[2], kw = w_shape[3];
  const std::size_t cout_pg = cout / g.groups;
  Tensor gw(w_shape);
  const double* xd = x.data().data();
  const double* gyd = gy.data().data();
  double* gwd = gw.data().data();
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t co = 0; co < cout; ++co) {
      const double* gplane = gyd + (n * cout + co) * out_h * out_w;
      const std::size_t grp = co / cout_pg;
      for (std::size_t cl = 0; cl < cin_pg; ++cl) {
        const std::size_t ci = grp * cin_pg + cl;
        const double* xplane = xd + (n * cin + ci) * h * wd;
        for (std::size_t u = 0; u < kh; ++u) {
          const long long oy_off = static_cast<long long>(u * g.dilation.h) -
                                   static_cast<long long>(g.padding.h);
          const Range ry = valid_range(out_h, h, g.stride.h, oy_off);
          for (std::size_t v = 0; v < kw; ++v) {
            const long long ox_off = static_cast<long long>(v * g.dilation.w) -
                                     static_cast<long long>(g.padding.w);
            const Range rx = valid_range(out_w, wd, g.stride.w, ox_off);
            double acc = 0.0;
            for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
              const std::size_t iy = static_cast<std::size_t>(
                  static_cast<long long>(oy * g.stride.h) + oy_off);
              const double* xrow = xplane + iy * wd;
              const double* grow = gplane + oy * out_w;
              for (std::size_t ox = rx.lo; ox < rx.hi; ++ox) {
                const std::size_t ix = static_cast<std::size_t>(
                    static_cast<long long>(ox * g.stride.w) + ox_off);
                acc += xrow[ix] * grow[ox];
              }
            }
            gwd[((co * cin_pg + cl) * kh + u) * kw + v] += acc;
          }
        }
      }
    }
  }
  return gw;
}

Tensor bias_grad(const Tensor& gy) {
  const auto [n_batch, c, h, w] = require_nchw(gy, "conv cotangent");
  Tensor gb({c});
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* plane = gy.data().data() + (n * c + ch) * h * w;
      double acc = 0.0;
      for (std::size_t i = 0; i < h * w; ++i) acc += plane[i];
      gb[ch] += acc;
    }
  }
  return gb;
}

void require_channels(std::size_t got, std::size_t want, const char* what) {
  if (got != want) throw ShapeError(dim_message(what, got, want));
}

}  // namespace

// ---- ConvLayer -------------------------------------------------------------

void ConvLayer::validate() const {
  if (weights.rank() != 4) {
    throw ShapeError("conv weights must be [Cout,Cin,kH,kW], got " +
                     shape_to_string(weights.shape()));
  }
  if (stride.h == 0 || stride.w == 0) throw ConfigError("conv stride must be positive");
  if (dilation.h == 0 || dilation.w == 0) throw ConfigError("conv dilation must be positive");
  switch (mode) {
    case ConvMode::standard:
      break;
    case ConvMode::pointwise:
      if (kernel_h() != 1 || kernel_w() != 1) {
        throw ShapeError("pointwise conv requires a 1x1 kernel, got " +
                         std::to_string(kernel_h()) + "x" + std::to_string(kernel_w()));
      }
      break;
    case ConvMode::depthwise:
    case ConvMode::separable:
      if (weights.dim(1) != 1) {
        throw ShapeError("depthwise weights must be [C,1,kH,kW]; weight dim 1 is " +
                         std::to_string(weights.dim(1)));
      }
      break;
  }
  if (mode == ConvMode::separable) {
    if (!pointwise_weights) throw ShapeError("separable conv is missing its pointwise weights");
    const Tensor& pw = *pointwise_weights;
    if (pw.rank() != 4 || pw.dim(2) != 1 || pw.dim(3) != 1) {
      throw ShapeError("separable pointwise weights must be [Cout,Cin,1,1], got " +
                       shape_to_string(pw.shape()));
    }
    require_channels(pw.dim(1), weights.dim(0), "separable pointwise input channels");
    require_vector(bias, weights.dim(0), "separable depthwise bias");
    require_vector(pointwise_bias, pw.dim(0), "separable pointwise bias");
  } else {
    if (pointwise_weights || pointwise_bias) {
      throw ShapeError("pointwise stage tensors are only valid in separable mode");
    }
    // Bias length depends on direction: Cout for conv2d, Cin for transposed_conv2d.
  }
}

std::size_t ConvLayer::in_channels() const {
  switch (mode) {
    case ConvMode::depthwise:
    case ConvMode::separable:
      return weights.dim(0);
    default:
      return weights.dim(1);
  }
}

std::size_t ConvLayer::out_channels() const {
  if (mode == ConvMode::separable) return pointwise_weights->dim(0);
  return weights.dim(0);
}

std::size_t ConvLayer::groups() const {
  return mode == ConvMode::depthwise || mode == ConvMode::separable ? weights.dim(0) : 1;
}

ConvLayer ConvLayer::depthwise_stage() const {
  if (mode != ConvMode::separable) throw ConfigError("depthwise_stage() requires a separable layer");
  return ConvLayer{weights, bias, std::nullopt, std::nullopt, stride, dilation, padding,
                   ConvMode::depthwise};
}

ConvLayer ConvLayer::pointwise_stage() const {
  if (mode != ConvMode::separable) throw ConfigError("pointwise_stage() requires a separable layer");
  return ConvLayer{*pointwise_weights, pointwise_bias, std::nullopt, std::nullopt, {1, 1},
                   {1, 1}, {0, 0}, ConvMode::pointwise};
}

ConvLayer make_conv(ConvMode mode, std::size_t in_channels, std::size_t out_channels,
                    std::size_t kernel, const ConvOptions& o) {
  if (in_channels == 0 || out_channels == 0 || kernel == 0) {
    throw ConfigError("conv channels and kernel size must be positive");
  }
  auto vec = [&](std::size_t n) {
    return o.bias ? std::optional<Tensor>(Tensor({n})) : std::nullopt;
  };
  switch (mode) {
    case ConvMode::standard:
      return ConvLayer{Tensor({out_channels, in_channels, kernel, kernel}), vec(out_channels),
                       std::nullopt, std::nullopt, o.stride, o.dilation, o.padding, mode};
    case ConvMode::pointwise:
      return ConvLayer{Tensor({out_channels, in_channels, 1, 1}), vec(out_channels),
                       std::nullopt, std::nullopt, o.stride, {1, 1}, o.padding, mode};
    case ConvMode::depthwise:
      if (in_channels != out_channels) {
        throw ConfigError(dim_message("depthwise output channels", out_channels, in_channels));
      }
      return ConvLayer{Tensor({in_channels, 1, kernel, kernel}), vec(in_channels), std::nullopt,
                       std::nullopt, o.stride, o.dilation, o.padding, mode};
    case ConvMode::separable:
      return ConvLayer{Tensor({in_channels, 1, kernel, kernel}), vec(in_channels),
                       Tensor({out_channels, in_channels, 1, 1}), vec(out_channels),
                       o.stride, o.dilation, o.padding, mode};
  }
  throw ConfigError("unknown conv mode");
}

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                               std::size_t dilation, std::size_t padding, const char* axis) {
  const long long span = static_cast<long long>(dilation * (kernel - 1) + 1);
  const long long padded = static_cast<long long>(in + 2 * padding);
  if (padded < span) {
    throw ShapeError(std::string("conv output ") + axis + " would be non-positive: padded input " +
                     std::to_string(padded) + " is smaller than the dilated kernel span " +
                     std::to_string(span));
  }
  return static_cast<std::size_t>((padded - span) / static_cast<long long>(stride) + 1);
}

std::size_t transposed_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                                     std::size_t dilation, std::size_t padding,
                                     std::size_t output_padding, const char* axis) {
  const long long out = static_cast<long long>((in - 1) * stride + dilation * (kernel - 1) +
                                               output_padding + 1) -
                        2 * static_cast<long long>(padding);
  if (out < 1) {
    throw ShapeError(std::string("transposed conv output ") + axis + " would be non-positive (" +
                     std::to_string(out) + ")");
  }
  return static_cast<std::size_t>(out);
}

// ---- forward -----------------------------------------------------------------

Tensor conv2d(const Tensor& input, const ConvLayer& layer) {
  layer.validate();
  if (layer.mode == ConvMode::separable) return separable_conv2d(input, layer);
  const auto d = require_nchw(input, "conv2d input");
  require_channels(d.c, layer.in_channels(), "conv2d input channel count (dim 1)");
  require_vector(layer.bias, layer.out_channels(), "conv bias");
  const std::size_t oh = conv_output_extent(d.h, layer.kernel_h(), layer.stride.h,
                                            layer.dilation.h, layer.padding.h, "height");
  const std::size_t ow = conv_output_extent(d.w, layer.kernel_w(), layer.stride.w,
                                            layer.dilation.w, layer.padding.w, "width");
  return conv_forward_kernel(input, layer.weights, layer.bias ? &*layer.bias : nullptr,
                             geometry_of(layer), oh, ow);
}

Tensor separable_conv2d(const Tensor& input, const ConvLayer& layer) {
  layer.validate();
  if (layer.mode != ConvMode::separable) {
    throw ConfigError("separable_conv2d requires a separable layer, got mode " +
                      std::string(to_string(layer.mode)));
  }
  return conv2d(relu(conv2d(input, layer.depthwise_stage())), layer.pointwise_stage());
}

Tensor transposed_conv2d(const Tensor& input, const ConvLayer& layer, Hw output_padding) {
  layer.validate();
  if (layer.mode == ConvMode::separable) {
    throw ConfigError("transposed_conv2d is undefined for separable layers");
  }
  if (output_padding.h >= layer.stride.h || output_padding.w >= layer.stride.w) {
    throw ShapeError("output_padding (" + std::to_string(output_padding.h) + "," +
                     std::to_string(output_padding.w) + ") must be smaller than stride (" +
                     std::to_string(layer.stride.h) + "," + std::to_string(layer.stride.w) + ")");
  }
  const auto d = require_nchw(input, "transposed_conv2d input");
  require_channels(d.c, layer.out_channels(), "transposed_conv2d input channel count (dim 1)");
  require_vector(layer.bias, layer.in_channels(), "transposed conv bias");
  const std::size_t oh = transposed_output_extent(d.h, layer.kernel_h(), layer.stride.h,
                                                  layer.dilation.h, layer.padding.h,
                                                  output_padding.h, "height");
  const std::size_t ow = transposed_output_extent(d.w, layer.kernel_w(), layer.stride.w,
                                                  layer.dilation.w, layer.padding.w,
                                                  output_padding.w, "width");
  Tensor out = conv_scatter_kernel(input, layer.weights, geometry_of(layer), oh, ow);
  if (layer.bias) {
    const std::size_t c = out.dim(1), plane = oh * ow;
    for (std::size_t n = 0; n < d.n; ++n)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < plane; ++i) out[(n * c + ch) * plane + i] += (*layer.bias)[ch];
  }
  return out;
}

Tensor avg_pool_global(const Tensor& input) {
  const auto d = require_nchw(input, "avg_pool_global input");
  Tensor out({d.n, d.c, 1, 1});
  const std::size_t plane = d.h * d.w;
  for (std::size_t i = 0; i < d.n * d.c; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < plane; ++j) acc += input[i * plane + j];
    out[i] = acc / static_cast<double>(plane);
  }
  return out;
}

Tensor broadcast_hw(const Tensor& input, std::size_t height, std::size_t width) {
  const auto d = require_nchw(input, "broadcast_hw input");
  if (d.h != 1 || d.w != 1) {
    throw ShapeError("broadcast_hw expects 1x1 spatial input, got " + shape_to_string(input.shape()));
  }
  Tensor out({d.n, d.c, height, width});
  const std::size_t plane = height * width;
  for (std::size_t i = 0; i < d.n * d.c; ++i)
    std::fill_n(out.data().begin() + static_cast<std::ptrdiff_t>(i * plane), plane, input[i]);
  return out;
}

Tensor relu(const Tensor& input) {
  Tensor out = input;
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

Tensor concat_channels(const std::vector<Tensor>& inputs) {
  if (inputs.empty()) throw ShapeError("concat_channels needs at least one input");
  const auto first = require_nchw(inputs.front(), "concat input 0");
  std::size_t channels = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto d = require_nchw(inputs[i], "concat input");
    if (d.n != first.n || d.h != first.h || d.w != first.w) {
      throw ShapeError("concat input " + std::to_string(i) + " has shape " +
                       shape_to_string(inputs[i].shape()) + ", incompatible with " +
                       shape_to_string(inputs.front().shape()) + " outside the channel axis");
    }
    channels += d.c;
  }
  Tensor out({first.n, channels, first.h, first.w});
  const std::size_t plane = first.h * first.w;
  auto dst = out.data().begin();
  for (std::size_t n = 0; n < first.n; ++n) {
    for (const Tensor& t : inputs) {
      const std::size_t block = t.dim(1) * plane;
      auto src = t.data().begin() + static_cast<std::ptrdiff_t>(n * block);
      dst = std::copy(src, src + static_cast<std::ptrdiff_t>(block), dst);
    }
  }
  return out;
}

Tensor channel_affine(const Tensor& input, const Tensor& scale, const Tensor& shift) {
  const auto d = require_nchw(input, "channel_affine input");
  require_vector(scale, d.c, "affine scale");
  require_vector(shift, d.c, "affine shift");
  Tensor out = input;
  const std::size_t plane = d.h * d.w;
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t c = 0; c < d.c; ++c)
      for (std::size_t i = 0; i < plane; ++i) {
        double& v = out[(n * d.c + c) * plane + i];
        v = v * scale[c] + shift[c];
      }
  return out;
}

// ---- backward ----------------------------------------------------------------

ConvGrad conv2d_backward(const Tensor& input, const ConvLayer& layer, const Tensor& upstream) {
  layer.validate();
  if (layer.mode == ConvMode::separable) {
    const ConvLayer dw = layer.depthwise_stage();
    const ConvLayer pw = layer.pointwise_stage();
    const Tensor pre = conv2d(input, dw);
    const Tensor act = relu(pre);
    ConvGrad gp = conv2d_backward(act, pw, upstream);
    ConvGrad gd = conv2d_backward(input, dw, relu_backward(pre, gp.input));
    return ConvGrad{std::move(gd.input), std::move(gd.weights), std::move(gd.bias),
                    std::move(gp.weights), std::move(gp.bias)};
  }
  const auto d = require_nchw(input, "conv2d_backward input");
  require_vector(layer.bias, layer.out_channels(), "conv bias");
  require_channels(d.c, layer.in_channels(), "conv2d_backward input channel count (dim 1)");
  const Shape expected{d.n, layer.out_channels(),
                       conv_output_extent(d.h, layer.kernel_h(), layer.stride.h, layer.dilation.h,
                                          layer.padding.h, "height"),
                       conv_output_extent(d.w, layer.kernel_w(), layer.stride.w, layer.dilation.w,
                                          layer.padding.w, "width")};
  if (upstream.shape() != expected) {
    throw ShapeError("conv2d_backward upstream must be " + shape_to_string(expected) + ", got " +
                     shape_to_string(upstream.shape()));
  }
  const Geometry g = geometry_of(layer);
  ConvGrad grad{conv_scatter_kernel(upstream, layer.weights, g, input.dim(2), input.dim(3)),
                conv_weight_grad_kernel(input, upstream, layer.weights.shape(), g), std::nullopt,
                std::nullopt, std::nullopt};
  if (layer.bias) grad.bias = bias_grad(upstream);
  return grad;
}

ConvGrad transposed_conv2d_backward(const Tensor& input, const ConvLayer& layer,
                                    Hw output_padding, const Tensor& upstream) {
  layer.validate();
  const auto d = require_nchw(input, "transposed_conv2d_backward input");
  require_channels(d.c, layer.out_channels(), "transposed_conv2d_backward input channel count");
  require_vector(layer.bias, layer.in_channels(), "transposed conv bias");
  const Shape expected{d.n, layer.in_channels(),
                       transposed_output_extent(d.h, layer.kernel_h(), layer.stride.h,
                                                layer.dilation.h, layer.padding.h,
                                                output_padding.h, "height"),
                       transposed_output_extent(d.w, layer.kernel_w(), layer.stride.w,
                                                layer.dilation.w, layer.padding.w,
                                                output_padding.w, "width")};
  if (upstream.shape() != expected) {
    throw ShapeError("transposed_conv2d_backward upstream must be " + shape_to_string(expected) +
                     ", got " + shape_to_string(upstream.shape()));
  }
  const Geometry g = geometry_of(layer);
  // transposed(y) = A^T y, so d/dy = A g and d/dw follows from <y, conv(g, w)>.
  ConvGrad grad{conv_forward_kernel(upstream, layer.weights, nullptr, g, input.dim(2), input.dim(3)),
                conv_weight_grad_kernel(upstream, input, layer.weights.shape(), g), std::nullopt,
                std::nullopt, std::nullopt};
  if (layer.bias) grad.bias = bias_grad(upstream);
  return grad;
}

Tensor avg_pool_global_backward(const Shape& input_shape, const Tensor& upstream) {
  if (input_shape.size() != 4) throw ShapeError("avg_pool_global_backward expects an NCHW shape");
  const Shape out_shape{input_shape[0], input_shape[1], 1, 1};
  if (upstream.shape() != out_shape) {
    throw ShapeError("avg_pool_global_backward upstream must be " + shape_to_string(out_shape) +
                     ", got " + shape_to_string(upstream.shape()));
  }
  Tensor scaled = upstream;
  const double inv = 1.0 / static_cast<double>(input_shape[2] * input_shape[3]);
  for (double& v : scaled.data()) v *= inv;
  return broadcast_hw(scaled, input_shape[2], input_shape[3]);
}

Tensor broadcast_hw_backward(const Tensor& upstream) {
  const auto d = require_nchw(upstream, "broadcast_hw_backward upstream");
  Tensor out({d.n, d.c, 1, 1});
  const std::size_t plane = d.h * d.w;
  for (std::size_t i = 0; i < d.n * d.c; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < plane; ++j) acc += upstream[i * plane + j];
    out[i] = acc;
  }
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& upstream) {
  require_same_shape(input, upstream, "relu_backward");
  Tensor out = upstream;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!(input[i] > 0.0)) out[i] = 0.0;
  return out;
}

AddGrad add_backward(const Tensor& upstream) { return {upstream, upstream}; }

std::vector<Tensor> concat_channels_backward(const std::vector<Shape>& input_shapes,
                                             const Tensor& upstream) {
  const auto d = require_nchw(upstream, "concat_channels_backward upstream");
  std::size_t channels = 0;
  for (const Shape& s : input_shapes) {
    if (s.size() != 4 || s[0] != d.n || s[2] != d.h || s[3] != d.w) {
      throw ShapeError("concat_channels_backward input shape " + shape_to_string(s) +
                       " incompatible with upstream " + shape_to_string(upstream.shape()));
    }
    channels += s[1];
  }
  require_channels(d.c, channels, "concat_channels_backward upstream channel count");
  std::vector<Tensor> out;
  out.reserve(input_shapes.size());
  for (const Shape& s : input_shapes) out.emplace_back(s);
  const std::size_t plane = d.h * d.w;
  auto src = upstream.data().begin();
  for (std::size_t n = 0; n < d.n; ++n) {
    for (Tensor& t : out) {
      const std::size_t block = t.dim(1) * plane;
      std::copy(src, src + static_cast<std::ptrdiff_t>(block),
                t.data().begin() + static_cast<std::ptrdiff_t>(n * block));
      src += static_cast<std::ptrdiff_t>(block);
    }
  }
  return out;
}

AffineGrad channel_affine_backward(const Tensor& input, const Tensor& scale,
                                   const Tensor& upstream) {
  require_same_shape(input, upstream, "channel_affine_backward");
  const auto d = require_nchw(input, "channel_affine input");
  require_vector(scale, d.c, "affine scale");
  AffineGrad g{upstream, Tensor({d.c}), Tensor({d.c})};
  const std::size_t plane = d.h * d.w;
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t c = 0; c < d.c; ++c)
      for (std::size_t i = 0; i < plane; ++i) {
        const std::size_t k = (n * d.c + c) * plane + i;
        g.input[k] = upstream[k] * scale[c];
        g.scale[c] += upstream[k] * input[k];
        g.shift[c] += upstream[k];
      }
  return g;
}

}  // namespace omnipose
