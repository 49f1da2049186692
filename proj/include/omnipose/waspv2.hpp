#pragma once

#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include "omnipose/autodiff.hpp"
#include "omnipose/ops.hpp"

namespace omnipose::wasp {

enum class Fusion { concat, add };
std::string_view to_string(Fusion f);
Fusion fusion_from_string(std::string_view name);

struct WaspConfig {
  std::vector<std::size_t> dilations{1, 6, 12, 18};
  // Width of every waterfall branch. The module input must have this width
  // because the branches and the pooled input are summed elementwise.
  std::size_t branch_channels = 48;
  // Width of the low-level path after its 1x1 conv; 0 disables the path.
  std::size_t llf_channels = 48;
  std::size_t num_joints = 16;
  Fusion fusion = Fusion::concat;
  bool separable = false;
  // Inserts ReLU after the low-level and fusion 1x1 convs.
  bool relu_between_1x1 = false;

  void validate() const;
};

/// Learnable layers of the head, in evaluation order.
struct WaspWeights {
  std::vector<ConvLayer> atrous;        // 3x3, one per dilation, padding = dilation
  ConvLayer post_sum;                   // 1x1 closing the waterfall
  std::optional<ConvLayer> low_level;   // 1x1 on the low-level features
  ConvLayer fusion;                     // 1x1 on the merged features
  ConvLayer head;                       // 1x1 down to num_joints
};

// Zero-initialized weights. `llf_in_channels` is the width of f_LLF.
WaspWeights make_wasp_weights(const WaspConfig& cfg, std::size_t llf_in_channels, bool bias = true);

void validate_weights(const WaspConfig& cfg, const WaspWeights& weights);

// K_1 * (sum_i f_i + broadcast(avg_pool(f_0))), f_i = K_{d_i} * f_{i-1}.
Tensor waterfall(const Tensor& f0, const WaspConfig& cfg, const WaspWeights& weights);
// head(fusion(merge(low_level(f_llf), waterfall(f0)))) -> [N, K, H, W]
Tensor waspv2_forward(const Tensor& f0, const Tensor& f_llf, const WaspConfig& cfg,
                      const WaspWeights& weights);

ad::Var waterfall(ad::Binder& b, ad::Var f0, const WaspConfig& cfg, const WaspWeights& weights);
ad::Var waspv2_forward(ad::Binder& b, ad::Var f0, ad::Var f_llf, const WaspConfig& cfg,
                       const WaspWeights& weights);

// Receptive field (in input pixels) of each cascade branch output:
// r_i = r_{i-1} + 2 d_i with r_0 = 1.
std::vector<std::size_t> branch_receptive_fields(const std::vector<std::size_t>& dilations);

}  // namespace omnipose::wasp
