#include "omnipose/cost.hpp"

#include "omnipose/error.hpp"

namespace omnipose::cost {

LayerSpec describe_conv(std::string name, const ConvLayer& layer, Hw in_size, Hw out_size) {
  layer.validate();
  return LayerSpec{std::move(name),     LayerKind::conv,   layer.mode,
                   layer.in_channels(), layer.out_channels(), layer.kernel_h(),
                   layer.kernel_w(),    layer.bias.has_value() || layer.pointwise_bias.has_value(),
                   in_size,             out_size};
}

LayerSpec describe_transposed(std::string name, const ConvLayer& layer, Hw in_size, Hw out_size) {
  layer.validate();
  // Transposed weights are [consumed, produced, k, k].
  return LayerSpec{std::move(name),      LayerKind::transposed_conv, layer.mode,
                   layer.out_channels(), layer.in_channels(),        layer.kernel_h(),
                   layer.kernel_w(),     layer.bias.has_value(),     in_size,
                   out_size};
}

LayerCost layer_cost(const LayerSpec& s) {
  using u64 = std::uint64_t;
  const u64 cin = s.in_channels, cout = s.out_channels;
  const u64 k = static_cast<u64>(s.kernel_h) * s.kernel_w;
  const u64 out_px = static_cast<u64>(s.out_size.h) * s.out_size.w;
  const u64 in_px = static_cast<u64>(s.in_size.h) * s.in_size.w;
  LayerCost c{s.name, 0, 0};
  switch (s.kind) {
    case LayerKind::conv:
      switch (s.mode) {
        case ConvMode::standard:
        case ConvMode::pointwise:
          c.params = cout * cin * k;
          c.flops = 2 * c.params * out_px;
          if (s.bias) {
            c.params += cout;
            c.flops += cout * out_px;
          }
          break;
        case ConvMode::depthwise:
          c.params = cin * k;
          c.flops = 2 * c.params * out_px;
          if (s.bias) {
            c.params += cin;
            c.flops += cin * out_px;
          }
          break;
        case ConvMode::separable:
          c.params = cin * k + cout * cin;
          c.flops = 2 * c.params * out_px;
          if (s.bias) {
            c.params += cin + cout;
            c.flops += (cin + cout) * out_px;
          }
          break;
      }
      break;
    case LayerKind::transposed_conv:
      // Every input element is scattered through the full kernel once.
      if (s.mode == ConvMode::depthwise) {
        c.params = cin * k;
      } else {
        c.params = cin * cout * k;
      }
      c.flops = 2 * c.params * in_px;
      if (s.bias) {
        c.params += cout;
        c.flops += cout * out_px;
      }
      break;
    case LayerKind::norm:
      c.params = 2 * cin;
      c.flops = 2 * cin * out_px;
      break;
    case LayerKind::gaussian_blur:
      c.flops = 2 * cin * k * out_px;
      break;
  }
  return c;
}

CostReport count_cost(std::span<const LayerSpec> layers) {
  CostReport r;
  for (const LayerSpec& s : layers) {
    LayerCost c = layer_cost(s);
    r.params += c.params;
    r.flops += c.flops;
    r.layers.push_back(std::move(c));
  }
  return r;
}

double reduction_percent(std::uint64_t baseline, std::uint64_t reduced) {
  if (baseline == 0) return 0.0;
  return 100.0 * (1.0 - static_cast<double>(reduced) / static_cast<double>(baseline));
}

}  // namespace omnipose::cost
