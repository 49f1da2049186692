#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "omnipose/ops.hpp"

namespace omnipose::cost {

enum class LayerKind { conv, transposed_conv, norm, gaussian_blur };

/// Geometry-only description of one layer, enough to price it.
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::conv;
  ConvMode mode = ConvMode::standard;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  bool bias = false;
  Hw in_size;
  Hw out_size;
};

struct LayerCost {
  std::string name;
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
};

struct CostReport {
  std::uint64_t params = 0;
  std::uint64_t flops = 0;  // 2 x multiply-accumulates + one add per bias element
  std::vector<LayerCost> layers;
};

LayerSpec describe_conv(std::string name, const ConvLayer& layer, Hw in_size, Hw out_size);
LayerSpec describe_transposed(std::string name, const ConvLayer& layer, Hw in_size, Hw out_size);

LayerCost layer_cost(const LayerSpec& spec);
CostReport count_cost(std::span<const LayerSpec> layers);

// 1 - reduced/baseline, as a percentage. 0 when baseline is 0.
double reduction_percent(std::uint64_t baseline, std::uint64_t reduced);

}  // namespace omnipose::cost
