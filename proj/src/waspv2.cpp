#include "omnipose/waspv2.hpp"

#include <string>

#include "omnipose/error.hpp"

namespace omnipose::wasp {

std::string_view to_string(Fusion f) { return f == Fusion::concat ? "concat" : "add"; }

Fusion fusion_from_string(std::string_view name) {
  if (name == "concat") return Fusion::concat;
  if (name == "add") return Fusion::add;
  throw ConfigError("unknown fusion mode '" + std::string(name) + "' (expected concat or add)");
}

void WaspConfig::validate() const {
  if (dilations.empty()) throw ConfigError("wasp dilations must not be empty");
  for (std::size_t i = 0; i < dilations.size(); ++i) {
    if (dilations[i] == 0) throw ConfigError("wasp dilations must be positive");
    if (i > 0 && dilations[i] <= dilations[i - 1]) {
      throw ConfigError("wasp dilations must be strictly increasing (dilations[" +
                        std::to_string(i) + "] = " + std::to_string(dilations[i]) + ")");
    }
  }
  if (branch_channels == 0) throw ConfigError("wasp branch_channels must be positive");
  if (num_joints == 0) throw ConfigError("wasp num_joints must be positive");
  if (fusion == Fusion::add && llf_channels != 0 && llf_channels != branch_channels) {
    throw ConfigError("wasp fusion=add requires llf_channels (" + std::to_string(llf_channels) +
                      ") to equal branch_channels (" + std::to_string(branch_channels) + ")");
  }
}

WaspWeights make_wasp_weights(const WaspConfig& cfg, std::size_t llf_in_channels, bool bias) {
  cfg.validate();
  const std::size_t bc = cfg.branch_channels;
  const ConvMode atrous_mode = cfg.separable ? ConvMode::separable : ConvMode::standard;
  WaspWeights w{{},
                make_conv(ConvMode::pointwise, bc, bc, 1, {.bias = bias}),
                std::nullopt,
                make_conv(ConvMode::pointwise,
                          cfg.llf_channels > 0 && cfg.fusion == Fusion::concat
                              ? bc + cfg.llf_channels
                              : bc,
                          bc, 1, {.bias = bias}),
                make_conv(ConvMode::pointwise, bc, cfg.num_joints, 1, {.bias = bias})};
  for (std::size_t d : cfg.dilations) {
    w.atrous.push_back(
        make_conv(atrous_mode, bc, bc, 3, {.dilation = {d, d}, .padding = {d, d}, .bias = bias}));
  }
  if (cfg.llf_channels > 0) {
    if (llf_in_channels == 0) throw ConfigError("low-level path enabled but f_LLF width is 0");
    w.low_level = make_conv(ConvMode::pointwise, llf_in_channels, cfg.llf_channels, 1, {.bias = bias});
  }
  return w;
}

void validate_weights(const WaspConfig& cfg, const WaspWeights& w) {
  cfg.validate();
  const std::size_t bc = cfg.branch_channels;
  auto expect = [](bool ok, const std::string& what) {
    if (!ok) throw ShapeError("wasp channel chain mismatch: " + what);
  };
  expect(w.atrous.size() == cfg.dilations.size(),
         "expected " + std::to_string(cfg.dilations.size()) + " atrous layers, got " +
             std::to_string(w.atrous.size()));
  for (std::size_t i = 0; i < w.atrous.size(); ++i) {
    const ConvLayer& l = w.atrous[i];
    l.validate();
    const std::size_t d = cfg.dilations[i];
    const std::string name = "atrous[" + std::to_string(i) + "]";
    expect(l.in_channels() == bc && l.out_channels() == bc, name + " must map " +
                                                                std::to_string(bc) + " -> " +
                                                                std::to_string(bc) + " channels");
    expect(l.kernel_h() == 3 && l.kernel_w() == 3, name + " must be 3x3");
    expect(l.stride == Hw{1, 1}, name + " must have stride 1");
    expect(l.dilation == Hw{d, d} && l.padding == Hw{d, d},
           name + " must use dilation = padding = " + std::to_string(d));
  }
  expect(w.post_sum.in_channels() == bc && w.post_sum.out_channels() == bc,
         "post_sum must map branch_channels -> branch_channels");
  expect(w.low_level.has_value() == (cfg.llf_channels > 0),
         "low_level layer presence must match llf_channels > 0");
  std::size_t merged = bc;
  if (w.low_level) {
    expect(w.low_level->out_channels() == cfg.llf_channels, "low_level must emit llf_channels");
    if (cfg.fusion == Fusion::concat) merged += cfg.llf_channels;
  }
  expect(w.fusion.in_channels() == merged,
         "fusion expects " + std::to_string(merged) + " input channels, has " +
             std::to_string(w.fusion.in_channels()));
  expect(w.head.in_channels() == w.fusion.out_channels(), "head input must match fusion output");
  expect(w.head.out_channels() == cfg.num_joints, "head must emit num_joints channels");
  for (const ConvLayer* l : {&w.post_sum, &w.fusion, &w.head}) {
    l->validate();
    expect(l->kernel_h() == 1 && l->kernel_w() == 1 && l->stride == Hw{1, 1},
           "1x1 layers must be 1x1 with stride 1");
  }
}

ad::Var waterfall(ad::Binder& b, ad::Var f0, const WaspConfig& cfg, const WaspWeights& weights) {
  validate_weights(cfg, weights);
  ad::Tape& t = b.tape();
  const auto d = require_nchw(t.value(f0), "waterfall input");
  if (d.c != cfg.branch_channels) {
    throw ShapeError("waterfall input has " + std::to_string(d.c) +
                     " channels, expected branch_channels = " + std::to_string(cfg.branch_channels));
  }
  ad::Var sum = ad::broadcast_hw(t, ad::avg_pool_global(t, f0), d.h, d.w);
  ad::Var branch = f0;
  for (const ConvLayer& layer : weights.atrous) {
    branch = ad::conv2d(b, branch, layer);
    sum = ad::add(t, sum, branch);
  }
  return ad::conv2d(b, sum, weights.post_sum);
}

ad::Var waspv2_forward(ad::Binder& b, ad::Var f0, ad::Var f_llf, const WaspConfig& cfg,
                       const WaspWeights& weights) {
  ad::Tape& t = b.tape();
  ad::Var water = waterfall(b, f0, cfg, weights);
  ad::Var merged = water;
  if (weights.low_level) {
    const auto a = require_nchw(t.value(f0), "waspv2 f0");
    const auto l = require_nchw(t.value(f_llf), "waspv2 f_llf");
    if (a.n != l.n || a.h != l.h || a.w != l.w) {
      throw ShapeError("waspv2 inputs disagree: f0 is " + shape_to_string(t.value(f0).shape()) +
                       " but f_llf is " + shape_to_string(t.value(f_llf).shape()) +
                       " (batch and spatial size must match)");
    }
    ad::Var low = ad::conv2d(b, f_llf, *weights.low_level);
    if (cfg.relu_between_1x1) low = ad::relu(t, low);
    merged = cfg.fusion == Fusion::concat ? ad::concat_channels(t, {low, water})
                                          : ad::add(t, low, water);
  }
  ad::Var fused = ad::conv2d(b, merged, weights.fusion);
  if (cfg.relu_between_1x1) fused = ad::relu(t, fused);
  return ad::conv2d(b, fused, weights.head);
}

Tensor waterfall(const Tensor& f0, const WaspConfig& cfg, const WaspWeights& weights) {
  ad::Tape tape(false);
  ad::Binder b(tape);
  return tape.value(waterfall(b, tape.constant(f0), cfg, weights));
}

Tensor waspv2_forward(const Tensor& f0, const Tensor& f_llf, const WaspConfig& cfg,
                      const WaspWeights& weights) {
  ad::Tape tape(false);
  ad::Binder b(tape);
  return tape.value(waspv2_forward(b, tape.constant(f0), tape.constant(f_llf), cfg, weights));
}

std::vector<std::size_t> branch_receptive_fields(const std::vector<std::size_t>& dilations) {
  std::vector<std::size_t> rf;
  std::size_t r = 1;
  for (std::size_t d : dilations) {
    r += 2 * d;
    rf.push_back(r);
  }
  return rf;
}

}  // namespace omnipose::wasp
