#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "omnipose/autodiff.hpp"
#include "omnipose/cost.hpp"
#include "omnipose/gdm.hpp"
#include "omnipose/ops.hpp"
#include "omnipose/waspv2.hpp"

namespace omnipose::model {

struct BranchSpec {
  std::size_t channels = 48;
  std::size_t divisor = 4;  // resolution relative to the input image
  friend bool operator==(const BranchSpec&, const BranchSpec&) = default;
};

/// Multi-resolution surrogate backbone. The stem is two stride-2 3x3 convs,
/// so the first branch always runs at 1/4 of the input resolution.
struct BackboneConfig {
  std::size_t in_channels = 3;
  std::size_t stem_channels = 48;
  std::vector<BranchSpec> branches{{48, 4}, {96, 8}};
  std::size_t num_exchange_blocks = 1;
  bool lite = false;  // every 3x3 conv becomes separable
  bool modulate_up_transitions = true;
  gdm::GdmConfig gdm;

  void validate() const;
};

struct ModelConfig {
  BackboneConfig backbone;
  wasp::WaspConfig wasp;
  Hw input_size{64, 64};
  std::size_t heatmap_stride = 4;
  std::uint64_t seed = 0;

  void validate() const;
  Hw heatmap_size() const { return {input_size.h / heatmap_stride, input_size.w / heatmap_stride}; }
};

// Default topology with the given joint count; wasp widths follow the
// first branch and the stem.
ModelConfig default_config(std::size_t num_joints = 16);

struct NormLayer {
  Tensor scale;
  Tensor shift;
};

enum class Init { zeros, uniform };

/// Parameters plus the layer plan used for cost accounting.
struct Model {
  ModelConfig config;
  std::map<std::string, ConvLayer> convs;  // includes transposed layers ("*.up")
  std::map<std::string, NormLayer> norms;
  wasp::WaspWeights wasp;
  std::vector<cost::LayerSpec> plan;
};

// Weights ~ U[-b, b], b = sqrt(1 / (fan_in * kH * kW)), seeded from config.seed;
// biases and norm shifts 0, norm scales 1.
Model make_model(const ModelConfig& config, Init init = Init::uniform);

// Stable, sorted enumeration of every parameter tensor with its file name
// (e.g. "stem.conv1.weight", "wasp.head.bias").
void for_each_parameter(Model& model, const std::function<void(const std::string&, Tensor&)>& fn);
void for_each_parameter(const Model& model,
                        const std::function<void(const std::string&, const Tensor&)>& fn);
std::size_t parameter_count(const Model& model);

struct Features {
  ad::Var high_res;   // f_0
  ad::Var low_level;  // f_LLF
};
Features backbone_forward(ad::Binder& b, ad::Var image, const Model& model);
ad::Var forward(ad::Binder& b, ad::Var image, const Model& model);
// [N, in_channels, H, W] -> [N, K, H / stride, W / stride]
Tensor forward(const Model& model, const Tensor& image);

cost::CostReport count_cost(const Model& model);
cost::CostReport count_cost(const ModelConfig& config, Hw input_size);
// The same topology with lite and separable atrous convs switched on/off.
ModelConfig with_lite(ModelConfig config, bool lite);

// 1e-3, dropped tenfold at epochs 170 and 200.
double lr_schedule(std::size_t epoch);

struct LossResult {
  double loss = 0.0;
  Tensor grad;
};
/// Mean squared error over the planes of unmasked joints. The mask has K
/// entries (shared across the batch) or N*K entries.
LossResult mse_heatmap_loss(const Tensor& pred, const Tensor& target,
                            const std::vector<bool>& joint_mask);

struct LossAndGrad {
  double loss = 0.0;
  std::map<std::string, Tensor> grads;
};
LossAndGrad loss_and_gradients(const Model& model, const Tensor& image, const Tensor& target,
                               const std::vector<bool>& joint_mask);

enum class Optimizer { sgd, adam };

struct TrainingOptions {
  std::size_t steps = 200;
  double learning_rate = 1e-3;
  Optimizer optimizer = Optimizer::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Full-batch training on one (image, target) pair. Returns the loss before
// each step followed by the final loss (steps + 1 entries).
std::vector<double> fit(Model& model, const Tensor& image, const Tensor& target,
                        const std::vector<bool>& joint_mask, const TrainingOptions& options);

}  // namespace omnipose::model
