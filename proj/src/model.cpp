#include "omnipose/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <random>
#include <string>

#include "omnipose/error.hpp"

namespace omnipose::model {

namespace {

bool is_pow2(std::size_t v) { return v != 0 && (v & (v - 1)) == 0; }
std::size_t log2_exact(std::size_t v) { return static_cast<std::size_t>(std::countr_zero(v)); }

std::string s(std::size_t v) { return std::to_string(v); }

// Layer names shared by the builder and the forward pass.
namespace names {
std::string transition(std::size_t branch, std::size_t step) {
  return branch == 0 ? "transition.0" : "transition." + s(branch) + "." + s(step);
}
std::string branch_unit(std::size_t block, std::size_t branch) {
  return "block." + s(block) + ".branch." + s(branch);
}
std::string fuse(std::size_t block, std::size_t from, std::size_t to) {
  return "block." + s(block) + ".fuse." + s(from) + "." + s(to);
}
}  // namespace names

}  // namespace

void BackboneConfig::validate() const {
  if (in_channels == 0 || stem_channels == 0) throw ConfigError("backbone channel widths must be positive");
  if (branches.empty()) throw ConfigError("backbone needs at least one branch");
  if (num_exchange_blocks == 0) throw ConfigError("num_exchange_blocks must be positive");
  for (std::size_t i = 0; i < branches.size(); ++i) {
    const BranchSpec& b = branches[i];
    if (b.channels == 0) throw ConfigError("branches[" + s(i) + "].channels must be positive");
    if (!is_pow2(b.divisor)) throw ConfigError("branches[" + s(i) + "].divisor must be a power of two");
    if (i > 0 && b.divisor <= branches[i - 1].divisor) {
      throw ConfigError("branch divisors must be strictly increasing (branches[" + s(i) + "])");
    }
  }
  if (branches.front().divisor != 4) {
    throw ConfigError("branches[0].divisor must be 4 (the stem downsamples by 4), got " +
                      s(branches.front().divisor));
  }
  gdm.validate();
}

void ModelConfig::validate() const {
  backbone.validate();
  wasp.validate();
  const std::size_t largest = backbone.branches.back().divisor;
  if (input_size.h == 0 || input_size.w == 0 || input_size.h % largest || input_size.w % largest) {
    throw ConfigError("input size " + s(input_size.h) + "x" + s(input_size.w) +
                      " must be divisible by the largest branch divisor " + s(largest));
  }
  if (heatmap_stride != backbone.branches.front().divisor) {
    throw ConfigError("heatmap_stride (" + s(heatmap_stride) +
                      ") must equal the high-resolution branch divisor (" +
                      s(backbone.branches.front().divisor) + ")");
  }
  if (wasp.branch_channels != backbone.branches.front().channels) {
    throw ConfigError("wasp.branch_channels (" + s(wasp.branch_channels) +
                      ") must equal the high-resolution branch width (" +
                      s(backbone.branches.front().channels) + ")");
  }
}

ModelConfig default_config(std::size_t num_joints) {
  ModelConfig cfg;
  cfg.wasp.num_joints = num_joints;
  return cfg;
}

namespace {

class Builder {
 public:
  Builder(const ModelConfig& cfg, Model& m) : cfg_(cfg), m_(m) {}

  ConvMode spatial_mode() const {
    return cfg_.backbone.lite ? ConvMode::separable : ConvMode::standard;
  }

  Hw conv3x3(const std::string& name, std::size_t cin, std::size_t cout, std::size_t stride, Hw in) {
    ConvLayer layer =
        make_conv(spatial_mode(), cin, cout, 3, {.stride = {stride, stride}, .padding = {1, 1}});
    const Hw out{conv_output_extent(in.h, 3, stride, 1, 1, "height"),
                 conv_output_extent(in.w, 3, stride, 1, 1, "width")};
    m_.plan.push_back(cost::describe_conv(name + ".conv", layer, in, out));
    m_.convs.emplace(name + ".conv", std::move(layer));
    norm(name + ".norm", cout, out);
    return out;
  }

  void norm(const std::string& name, std::size_t c, Hw size) {
    m_.norms.emplace(name, NormLayer{Tensor({c}, 1.0), Tensor({c})});
    m_.plan.push_back({name, cost::LayerKind::norm, ConvMode::standard, c, c, 1, 1, false, size, size});
  }

  Hw up(const std::string& name, std::size_t cin, std::size_t cout, std::size_t factor, Hw in) {
    ConvLayer layer = gdm::make_upsample_layer(cfg_.backbone.gdm, cin, cout, factor);
    const Hw out{transposed_output_extent(in.h, layer.kernel_h(), factor, 1, layer.padding.h, 0, "height"),
                 transposed_output_extent(in.w, layer.kernel_w(), factor, 1, layer.padding.w, 0, "width")};
    if (out != Hw{in.h * factor, in.w * factor}) {
      throw ConfigError("gdm upsample geometry does not scale " + name + " by exactly " + s(factor));
    }
    m_.plan.push_back(cost::describe_transposed(name + ".up", layer, in, out));
    m_.convs.emplace(name + ".up", std::move(layer));
    if (cfg_.backbone.modulate_up_transitions) {
      const std::size_t k = cfg_.backbone.gdm.kernel_size;
      m_.plan.push_back({name + ".modulate", cost::LayerKind::gaussian_blur, ConvMode::depthwise,
                         cout, cout, k, k, false, out, out});
    }
    norm(name + ".norm", cout, out);
    return out;
  }

  void build() {
    const BackboneConfig& bb = cfg_.backbone;
    Hw size = cfg_.input_size;
    size = conv3x3("stem.conv1", bb.in_channels, bb.stem_channels, 2, size);
    size = conv3x3("stem.conv2", bb.stem_channels, bb.stem_channels, 2, size);
    const Hw stem_size = size;

    std::vector<Hw> sizes(bb.branches.size());
    sizes[0] = conv3x3(names::transition(0, 0), bb.stem_channels, bb.branches[0].channels, 1, size);
    for (std::size_t j = 1; j < bb.branches.size(); ++j) {
      const std::size_t steps = log2_exact(bb.branches[j].divisor / bb.branches[j - 1].divisor);
      Hw cur = sizes[j - 1];
      for (std::size_t k = 0; k < steps; ++k) {
        const std::size_t cin = bb.branches[j - 1].channels;
        const std::size_t cout = k + 1 == steps ? bb.branches[j].channels : cin;
        cur = conv3x3(names::transition(j, k), cin, cout, 2, cur);
      }
      sizes[j] = cur;
    }

    for (std::size_t blk = 0; blk < bb.num_exchange_blocks; ++blk) {
      for (std::size_t i = 0; i < bb.branches.size(); ++i) {
        const std::size_t c = bb.branches[i].channels;
        conv3x3(names::branch_unit(blk, i), c, c, 1, sizes[i]);
      }
      for (std::size_t i = 0; i < bb.branches.size(); ++i) {
        for (std::size_t j = 0; j < bb.branches.size(); ++j) {
          if (j == i) continue;
          const std::string name = names::fuse(blk, j, i);
          if (j > i) {
            up(name, bb.branches[j].channels, bb.branches[i].channels,
               bb.branches[j].divisor / bb.branches[i].divisor, sizes[j]);
          } else {
            const std::size_t steps = log2_exact(bb.branches[i].divisor / bb.branches[j].divisor);
            Hw cur = sizes[j];
            for (std::size_t k = 0; k < steps; ++k) {
              const std::size_t cin = bb.branches[j].channels;
              const std::size_t cout = k + 1 == steps ? bb.branches[i].channels : cin;
              cur = conv3x3(name + ".down." + s(k), cin, cout, 2, cur);
            }
          }
        }
      }
    }

    const Hw hs = sizes[0];
    if (hs != stem_size) throw ConfigError("high-resolution branch and stem output sizes differ");
    for (std::size_t i = 0; i < m_.wasp.atrous.size(); ++i)
      m_.plan.push_back(cost::describe_conv("wasp.atrous." + s(i), m_.wasp.atrous[i], hs, hs));
    m_.plan.push_back(cost::describe_conv("wasp.post_sum", m_.wasp.post_sum, hs, hs));
    if (m_.wasp.low_level) m_.plan.push_back(cost::describe_conv("wasp.low_level", *m_.wasp.low_level, hs, hs));
    m_.plan.push_back(cost::describe_conv("wasp.fusion", m_.wasp.fusion, hs, hs));
    m_.plan.push_back(cost::describe_conv("wasp.head", m_.wasp.head, hs, hs));
  }

 private:
  const ModelConfig& cfg_;
  Model& m_;
};

template <typename ModelT, typename Fn>
void visit_parameters(ModelT& model, Fn&& fn) {
  using T = std::conditional_t<std::is_const_v<ModelT>, const Tensor, Tensor>;
  std::vector<std::pair<std::string, T*>> all;
  auto conv = [&](const std::string& name, auto& layer) {
    all.emplace_back(name + ".weight", &layer.weights);
    if (layer.bias) all.emplace_back(name + ".bias", &*layer.bias);
    if (layer.pointwise_weights) all.emplace_back(name + ".pw_weight", &*layer.pointwise_weights);
    if (layer.pointwise_bias) all.emplace_back(name + ".pw_bias", &*layer.pointwise_bias);
  };
  for (auto& [name, layer] : model.convs) conv(name, layer);
  for (auto& [name, n] : model.norms) {
    all.emplace_back(name + ".scale", &n.scale);
    all.emplace_back(name + ".shift", &n.shift);
  }
  for (std::size_t i = 0; i < model.wasp.atrous.size(); ++i) conv("wasp.atrous." + s(i), model.wasp.atrous[i]);
  conv("wasp.post_sum", model.wasp.post_sum);
  if (model.wasp.low_level) conv("wasp.low_level", *model.wasp.low_level);
  conv("wasp.fusion", model.wasp.fusion);
  conv("wasp.head", model.wasp.head);
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (auto& [name, t] : all) fn(name, *t);
}

bool ends_with(const std::string& str, std::string_view suffix) {
  return str.size() >= suffix.size() && str.compare(str.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

void for_each_parameter(Model& model, const std::function<void(const std::string&, Tensor&)>& fn) {
  visit_parameters(model, fn);
}

void for_each_parameter(const Model& model,
                        const std::function<void(const std::string&, const Tensor&)>& fn) {
  visit_parameters(model, fn);
}

std::size_t parameter_count(const Model& model) {
  std::size_t n = 0;
  for_each_parameter(model, [&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

Model make_model(const ModelConfig& config, Init init) {
  config.validate();
  Model m{config, {}, {}, wasp::make_wasp_weights(config.wasp, config.backbone.stem_channels), {}};
  Builder(config, m).build();
  std::mt19937_64 rng(config.seed);
  for_each_parameter(m, [&](const std::string& name, Tensor& t) {
    if (ends_with(name, ".scale")) {
      for (double& v : t.data()) v = 1.0;
      return;
    }
    if (init == Init::zeros || !(ends_with(name, ".weight") || ends_with(name, ".pw_weight"))) {
      for (double& v : t.data()) v = 0.0;
      return;
    }
    const double bound = std::sqrt(1.0 / static_cast<double>(t.dim(1) * t.dim(2) * t.dim(3)));
    for (double& v : t.data()) {
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      v = (2.0 * u - 1.0) * bound;
    }
  });
  return m;
}

namespace {

const ConvLayer& conv_at(const Model& m, const std::string& name) {
  auto it = m.convs.find(name);
  if (it == m.convs.end()) throw ConfigError("model has no layer '" + name + "'");
  return it->second;
}

ad::Var conv_norm(ad::Binder& b, ad::Var x, const Model& m, const std::string& name, bool act) {
  x = ad::conv2d(b, x, conv_at(m, name + ".conv"));
  const NormLayer& n = m.norms.at(name + ".norm");
  x = ad::channel_affine(b, x, n.scale, n.shift);
  return act ? ad::relu(b.tape(), x) : x;
}

}  // namespace

Features backbone_forward(ad::Binder& b, ad::Var image, const Model& model) {
  const ModelConfig& cfg = model.config;
  const BackboneConfig& bb = cfg.backbone;
  ad::Tape& t = b.tape();
  const auto d = require_nchw(t.value(image), "image");
  if (d.c != bb.in_channels || d.h != cfg.input_size.h || d.w != cfg.input_size.w) {
    throw ShapeError("input size mismatch: image is " + shape_to_string(t.value(image).shape()) +
                     ", model expects [N," + s(bb.in_channels) + "," + s(cfg.input_size.h) + "," +
                     s(cfg.input_size.w) + "]");
  }
  ad::Var x = conv_norm(b, image, model, "stem.conv1", true);
  x = conv_norm(b, x, model, "stem.conv2", true);
  const ad::Var low_level = x;

  std::vector<ad::Var> xs(bb.branches.size());
  xs[0] = conv_norm(b, x, model, names::transition(0, 0), true);
  for (std::size_t j = 1; j < bb.branches.size(); ++j) {
    const std::size_t steps = log2_exact(bb.branches[j].divisor / bb.branches[j - 1].divisor);
    ad::Var cur = xs[j - 1];
    for (std::size_t k = 0; k < steps; ++k) cur = conv_norm(b, cur, model, names::transition(j, k), true);
    xs[j] = cur;
  }

  for (std::size_t blk = 0; blk < bb.num_exchange_blocks; ++blk) {
    for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = conv_norm(b, xs[i], model, names::branch_unit(blk, i), true);
    std::vector<ad::Var> fused(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
      ad::Var acc = xs[i];
      for (std::size_t j = 0; j < xs.size(); ++j) {
        if (j == i) continue;
        const std::string name = names::fuse(blk, j, i);
        ad::Var y;
        if (j > i) {
          y = ad::transposed_conv2d(b, xs[j], conv_at(model, name + ".up"));
          if (bb.modulate_up_transitions) y = ad::modulate(t, y, bb.gdm);
          const NormLayer& n = model.norms.at(name + ".norm");
          y = ad::channel_affine(b, y, n.scale, n.shift);
        } else {
          const std::size_t steps = log2_exact(bb.branches[i].divisor / bb.branches[j].divisor);
          y = xs[j];
          for (std::size_t k = 0; k < steps; ++k)
            y = conv_norm(b, y, model, name + ".down." + s(k), k + 1 < steps);
        }
        acc = ad::add(t, acc, y);
      }
      fused[i] = ad::relu(t, acc);
    }
    xs = std::move(fused);
  }
  return {xs[0], low_level};
}

ad::Var forward(ad::Binder& b, ad::Var image, const Model& model) {
  const Features f = backbone_forward(b, image, model);
  return wasp::waspv2_forward(b, f.high_res, f.low_level, model.config.wasp, model.wasp);
}

Tensor forward(const Model& model, const Tensor& image) {
  ad::Tape tape(false);
  ad::Binder b(tape);
  return tape.value(forward(b, tape.constant(image), model));
}

cost::CostReport count_cost(const Model& model) { return cost::count_cost(model.plan); }

cost::CostReport count_cost(const ModelConfig& config, Hw input_size) {
  ModelConfig c = config;
  c.input_size = input_size;
  return count_cost(make_model(c, Init::zeros));
}

ModelConfig with_lite(ModelConfig config, bool lite) {
  config.backbone.lite = lite;
  config.wasp.separable = lite;
  return config;
}

double lr_schedule(std::size_t epoch) {
  if (epoch < 170) return 1e-3;
  if (epoch < 200) return 1e-4;
  return 1e-5;
}

LossResult mse_heatmap_loss(const Tensor& pred, const Tensor& target,
                            const std::vector<bool>& joint_mask) {
  require_same_shape(pred, target, "mse_heatmap_loss");
  if (pred.rank() != 3 && pred.rank() != 4) {
    throw ShapeError("heatmaps must be [K,H,W] or [N,K,H,W], got " + shape_to_string(pred.shape()));
  }
  const std::size_t n = pred.rank() == 4 ? pred.dim(0) : 1;
  const std::size_t k = pred.dim(pred.rank() - 3);
  const std::size_t plane = pred.dim(pred.rank() - 2) * pred.dim(pred.rank() - 1);
  if (joint_mask.size() != k && joint_mask.size() != n * k) {
    throw ShapeError("joint mask has " + s(joint_mask.size()) + " entries, expected " + s(k) +
                     " or " + s(n * k));
  }
  auto active = [&](std::size_t p) {
    return joint_mask.size() == k ? joint_mask[p % k] : joint_mask[p];
  };
  std::size_t planes = 0;
  for (std::size_t p = 0; p < n * k; ++p) planes += active(p) ? 1 : 0;
  LossResult r{0.0, Tensor(pred.shape())};
  if (planes == 0) return r;
  const double denom = static_cast<double>(planes * plane);
  for (std::size_t p = 0; p < n * k; ++p) {
    if (!active(p)) continue;
    for (std::size_t i = p * plane; i < (p + 1) * plane; ++i) {
      const double diff = pred[i] - target[i];
      r.loss += diff * diff;
      r.grad[i] = 2.0 * diff / denom;
    }
  }
  r.loss /= denom;
  return r;
}

LossAndGrad loss_and_gradients(const Model& model, const Tensor& image, const Tensor& target,
                               const std::vector<bool>& joint_mask) {
  ad::Tape tape(true);
  ad::Binder b(tape);
  const ad::Var out = forward(b, tape.constant(image), model);
  LossResult l = mse_heatmap_loss(tape.value(out), target, joint_mask);
  tape.backward(out, std::move(l.grad));
  LossAndGrad r{l.loss, {}};
  for_each_parameter(model, [&](const std::string& name, const Tensor& t) {
    const auto v = b.find(t);
    r.grads.emplace(name, v ? tape.grad(*v) : Tensor(t.shape()));
  });
  return r;
}

std::vector<double> fit(Model& model, const Tensor& image, const Tensor& target,
                        const std::vector<bool>& joint_mask, const TrainingOptions& o) {
  std::vector<double> losses;
  std::map<std::string, std::pair<Tensor, Tensor>> moments;
  for (std::size_t step = 0; step < o.steps; ++step) {
    LossAndGrad lg = loss_and_gradients(model, image, target, joint_mask);
    losses.push_back(lg.loss);
    const double t = static_cast<double>(step + 1);
    for_each_parameter(model, [&](const std::string& name, Tensor& p) {
      const Tensor& g = lg.grads.at(name);
      if (o.optimizer == Optimizer::sgd) {
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= o.learning_rate * g[i];
        return;
      }
      auto [it, fresh] = moments.try_emplace(name, Tensor(p.shape()), Tensor(p.shape()));
      auto& [m, v] = it->second;
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g[i];
        v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g[i] * g[i];
        const double mhat = m[i] / (1.0 - std::pow(o.beta1, t));
        const double vhat = v[i] / (1.0 - std::pow(o.beta2, t));
        p[i] -= o.learning_rate * mhat / (std::sqrt(vhat) + o.epsilon);
      }
    });
  }
  ad::Tape tape(false);
  ad::Binder b(tape);
  losses.push_back(mse_heatmap_loss(tape.value(forward(b, tape.constant(image), model)), target,
                                    joint_mask).loss);
  return losses;
}

}  // namespace omnipose::model
