#include "omnipose/gdm.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "omnipose/error.hpp"

namespace omnipose::gdm {

void GdmConfig::validate() const {
  if (kernel_size == 0 || kernel_size % 2 == 0) {
    throw ConfigError("gdm kernel_size must be odd and positive, got " + std::to_string(kernel_size));
  }
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw ConfigError("gdm sigma must be a positive finite number");
  }
  if (upsample_stride == 0 || upsample_kernel == 0) {
    throw ConfigError("gdm upsample stride and kernel must be positive");
  }
}

Tensor gaussian_kernel2d(std::size_t size, double sigma) {
  if (size == 0 || size % 2 == 0) {
    throw ConfigError("gaussian kernel size must be odd, got " + std::to_string(size));
  }
  if (!(sigma > 0.0)) throw ConfigError("gaussian kernel sigma must be positive");
  Tensor k({size, size});
  const double c = static_cast<double>(size - 1) / 2.0;
  for (std::size_t u = 0; u < size; ++u) {
    for (std::size_t v = 0; v < size; ++v) {
      const double du = static_cast<double>(u) - c, dv = static_cast<double>(v) - c;
      k[u * size + v] = std::exp(-(du * du + dv * dv) / (2.0 * sigma * sigma));
    }
  }
  return k;
}

namespace {

ConvLayer smoothing_layer(std::size_t channels, const GdmConfig& cfg) {
  const std::size_t k = cfg.kernel_size;
  const Tensor kernel = gaussian_kernel2d(k, cfg.sigma);
  ConvLayer layer = make_conv(ConvMode::depthwise, channels, channels, k,
                              {.padding = {(k - 1) / 2, (k - 1) / 2}, .bias = false});
  for (std::size_t c = 0; c < channels; ++c)
    std::copy(kernel.data().begin(), kernel.data().end(),
              layer.weights.data().begin() + static_cast<std::ptrdiff_t>(c * k * k));
  return layer;
}

struct PlaneStats {
  std::size_t argmin, argmax;
  double min, max;
};

PlaneStats stats(const double* p, std::size_t n) {
  PlaneStats s{0, 0, p[0], p[0]};
  for (std::size_t i = 1; i < n; ++i) {
    if (p[i] < s.min) s = {i, s.argmax, p[i], s.max};
    if (p[i] > s.max) s = {s.argmin, i, s.min, p[i]};
  }
  return s;
}

bool degenerate(const PlaneStats& raw, const PlaneStats& blurred) {
  return raw.max == raw.min || blurred.max == blurred.min;
}

}  // namespace

Tensor gaussian_smooth(const Tensor& features, const GdmConfig& cfg) {
  cfg.validate();
  const auto d = require_nchw(features, "gaussian_smooth input");
  return conv2d(features, smoothing_layer(d.c, cfg));
}

Tensor modulate(const Tensor& features, const GdmConfig& cfg) {
  const auto d = require_nchw(features, "modulate input");
  const Tensor blurred = gaussian_smooth(features, cfg);
  Tensor out = blurred;
  const std::size_t plane = d.h * d.w;
  for (std::size_t p = 0; p < d.n * d.c; ++p) {
    const double* raw = features.data().data() + p * plane;
    const double* g = blurred.data().data() + p * plane;
    double* o = out.data().data() + p * plane;
    const PlaneStats rs = stats(raw, plane);
    const PlaneStats gs = stats(g, plane);
    if (degenerate(rs, gs)) {
      std::copy(raw, raw + plane, o);
      continue;
    }
    const double range = gs.max - gs.min;
    for (std::size_t i = 0; i < plane; ++i) o[i] = (g[i] - gs.min) / range * rs.max;
  }
  return out;
}

Tensor modulate_backward(const Tensor& features, const GdmConfig& cfg, const Tensor& upstream) {
  const auto d = require_nchw(features, "modulate_backward input");
  require_same_shape(features, upstream, "modulate_backward upstream");
  const Tensor blurred = gaussian_smooth(features, cfg);
  const std::size_t plane = d.h * d.w;
  Tensor grad_blurred({d.n, d.c, d.h, d.w});
  Tensor grad_raw({d.n, d.c, d.h, d.w});
  for (std::size_t p = 0; p < d.n * d.c; ++p) {
    const double* raw = features.data().data() + p * plane;
    const double* g = blurred.data().data() + p * plane;
    const double* u = upstream.data().data() + p * plane;
    double* gg = grad_blurred.data().data() + p * plane;
    double* gr = grad_raw.data().data() + p * plane;
    const PlaneStats rs = stats(raw, plane);
    const PlaneStats gs = stats(g, plane);
    if (degenerate(rs, gs)) {
      std::copy(u, u + plane, gr);
      continue;
    }
    // out_i = z_i * M with z_i = (g_i - g_min) / (g_max - g_min), M = max(raw)
    const double range = gs.max - gs.min;
    const double scale = rs.max / range;
    double sum_u = 0.0, sum_uz = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      const double z = (g[i] - gs.min) / range;
      sum_u += u[i];
      sum_uz += u[i] * z;
      gg[i] = u[i] * scale;
    }
    gg[gs.argmin] += scale * (sum_uz - sum_u);
    gg[gs.argmax] -= scale * sum_uz;
    gr[rs.argmax] += sum_uz;
  }
  const ConvGrad through_blur = conv2d_backward(features, smoothing_layer(d.c, cfg), grad_blurred);
  return add(grad_raw, through_blur.input);
}

ConvLayer make_upsample_layer(const GdmConfig& cfg, std::size_t in_channels,
                              std::size_t out_channels, std::size_t factor, bool bias) {
  cfg.validate();
  if (factor == 0 || (factor & (factor - 1)) != 0) {
    throw ConfigError("upsample factor must be a power of two, got " + std::to_string(factor));
  }
  std::size_t kernel = 2 * factor, padding = factor / 2;
  if (factor == cfg.upsample_stride) {
    kernel = cfg.upsample_kernel;
    padding = cfg.upsample_padding;
  }
  // Transposed layers store weights as the conv they are the adjoint of:
  // [maps consumed, maps produced, k, k].
  ConvLayer layer = make_conv(ConvMode::standard, out_channels, in_channels, kernel,
                              {.stride = {factor, factor}, .padding = {padding, padding}, .bias = false});
  if (bias) layer.bias = Tensor({out_channels});
  return layer;
}

Tensor gdm_upsample(const Tensor& features, const GdmConfig& cfg, const ConvLayer& layer,
                    Hw output_padding) {
  return modulate(transposed_conv2d(features, layer, output_padding), cfg);
}

}  // namespace omnipose::gdm
