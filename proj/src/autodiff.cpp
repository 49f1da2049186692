#include "omnipose/autodiff.hpp"

#include <stdexcept>

#include "omnipose/error.hpp"

namespace omnipose::ad {

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false, std::nullopt});
  return Var{nodes_.size() - 1};
}

Var Tape::parameter(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, track_, std::nullopt});
  return Var{nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::vector<Var> parents, BackwardFn backward) {
  bool needs = false;
  if (track_)
    for (Var p : parents) needs = needs || nodes_.at(p.id).requires_grad;
  if (!needs) {
    parents.clear();
    backward = nullptr;
  }
  nodes_.push_back(Node{std::move(value), std::move(parents), std::move(backward), needs,
                        std::nullopt});
  return Var{nodes_.size() - 1};
}

void Tape::backward(Var root, std::optional<Tensor> seed) {
  if (backward_done_) throw std::logic_error("Tape::backward called twice");
  backward_done_ = true;
  Node& r = nodes_.at(root.id);
  if (seed) {
    require_same_shape(*seed, r.value, "backward seed");
    r.grad = std::move(*seed);
  } else {
    r.grad = Tensor(r.value.shape(), 1.0);
  }
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.grad || !node.backward) continue;
    std::vector<std::optional<Tensor>> local = node.backward(*this, *node.grad);
    for (std::size_t k = 0; k < node.parents.size(); ++k) {
      if (!local.at(k)) continue;
      Node& parent = nodes_[node.parents[k].id];
      if (!parent.requires_grad) continue;
      require_same_shape(*local[k], parent.value, "cotangent");
      if (parent.grad) {
        *parent.grad = omnipose::add(*parent.grad, *local[k]);
      } else {
        parent.grad = std::move(local[k]);
      }
    }
    // Interior cotangents are no longer needed once propagated.
    if (!node.parents.empty()) node.grad.reset();
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  return n.grad ? *n.grad : Tensor(n.value.shape());
}

Var Binder::operator()(const Tensor& parameter) {
  if (auto it = vars_.find(&parameter); it != vars_.end()) return it->second;
  Var v = tape_.parameter(parameter);
  vars_.emplace(&parameter, v);
  return v;
}

std::optional<Var> Binder::find(const Tensor& parameter) const {
  if (auto it = vars_.find(&parameter); it != vars_.end()) return it->second;
  return std::nullopt;
}

namespace {

// Parent order: x, weights, bias?. Non-separable layers only.
Var linear_conv(Binder& b, Var x, const ConvLayer& layer, bool transposed, Hw output_padding) {
  Tape& t = b.tape();
  std::vector<Var> parents{x, b(layer.weights)};
  if (layer.bias) parents.push_back(b(*layer.bias));
  Tensor out = transposed ? omnipose::transposed_conv2d(t.value(x), layer, output_padding)
                          : omnipose::conv2d(t.value(x), layer);
  auto backward = [parents, l = layer, transposed, output_padding](const Tape& tape,
                                                                   const Tensor& up) {
    const Tensor& input = tape.value(parents[0]);
    ConvGrad g = transposed ? transposed_conv2d_backward(input, l, output_padding, up)
                            : conv2d_backward(input, l, up);
    std::vector<std::optional<Tensor>> out{std::move(g.input), std::move(g.weights)};
    if (parents.size() > 2) out.push_back(std::move(g.bias));
    return out;
  };
  return t.record(std::move(out), parents, backward);
}

}  // namespace

Var conv2d(Binder& b, Var x, const ConvLayer& layer) {
  layer.validate();
  if (layer.mode == ConvMode::separable) {
    const ConvLayer dw = layer.depthwise_stage();
    const ConvLayer pw = layer.pointwise_stage();
    // Stage layers hold copies, so bind the original tensors explicitly.
    Tape& t = b.tape();
    auto bind_stage = [&](const ConvLayer& stage, const Tensor& w, const std::optional<Tensor>& bias,
                          Var in) {
      std::vector<Var> parents{in, b(w)};
      if (bias) parents.push_back(b(*bias));
      Tensor out = omnipose::conv2d(t.value(in), stage);
      auto backward = [parents, stage](const Tape& tape, const Tensor& up) {
        ConvGrad g = conv2d_backward(tape.value(parents[0]), stage, up);
        std::vector<std::optional<Tensor>> r{std::move(g.input), std::move(g.weights)};
        if (parents.size() > 2) r.push_back(std::move(g.bias));
        return r;
      };
      return t.record(std::move(out), parents, backward);
    };
    Var h = bind_stage(dw, layer.weights, layer.bias, x);
    h = relu(t, h);
    return bind_stage(pw, *layer.pointwise_weights, layer.pointwise_bias, h);
  }
  return linear_conv(b, x, layer, false, {0, 0});
}

Var transposed_conv2d(Binder& b, Var x, const ConvLayer& layer, Hw output_padding) {
  return linear_conv(b, x, layer, true, output_padding);
}

Var channel_affine(Binder& b, Var x, const Tensor& scale, const Tensor& shift) {
  Tape& t = b.tape();
  std::vector<Var> parents{x, b(scale), b(shift)};
  Tensor out = omnipose::channel_affine(t.value(x), scale, shift);
  return t.record(std::move(out), parents, [parents](const Tape& tape, const Tensor& up) {
    AffineGrad g = channel_affine_backward(tape.value(parents[0]), tape.value(parents[1]), up);
    return std::vector<std::optional<Tensor>>{std::move(g.input), std::move(g.scale),
                                              std::move(g.shift)};
  });
}

Var relu(Tape& t, Var x) {
  return t.record(omnipose::relu(t.value(x)), {x}, [x](const Tape& tape, const Tensor& up) {
    return std::vector<std::optional<Tensor>>{relu_backward(tape.value(x), up)};
  });
}

Var add(Tape& t, Var a, Var b) {
  return t.record(omnipose::add(t.value(a), t.value(b)), {a, b},
                  [](const Tape&, const Tensor& up) {
                    AddGrad g = add_backward(up);
                    return std::vector<std::optional<Tensor>>{std::move(g.a), std::move(g.b)};
                  });
}

Var concat_channels(Tape& t, const std::vector<Var>& xs) {
  std::vector<Tensor> values;
  std::vector<Shape> shapes;
  for (Var v : xs) {
    values.push_back(t.value(v));
    shapes.push_back(t.value(v).shape());
  }
  return t.record(omnipose::concat_channels(values), xs,
                  [shapes](const Tape&, const Tensor& up) {
                    std::vector<std::optional<Tensor>> r;
                    for (Tensor& g : concat_channels_backward(shapes, up)) r.emplace_back(std::move(g));
                    return r;
                  });
}

Var avg_pool_global(Tape& t, Var x) {
  const Shape shape = t.value(x).shape();
  return t.record(omnipose::avg_pool_global(t.value(x)), {x},
                  [shape](const Tape&, const Tensor& up) {
                    return std::vector<std::optional<Tensor>>{avg_pool_global_backward(shape, up)};
                  });
}

Var broadcast_hw(Tape& t, Var x, std::size_t height, std::size_t width) {
  return t.record(omnipose::broadcast_hw(t.value(x), height, width), {x},
                  [](const Tape&, const Tensor& up) {
                    return std::vector<std::optional<Tensor>>{broadcast_hw_backward(up)};
                  });
}

Var modulate(Tape& t, Var x, const gdm::GdmConfig& cfg) {
  return t.record(gdm::modulate(t.value(x), cfg), {x}, [x, cfg](const Tape& tape, const Tensor& up) {
    return std::vector<std::optional<Tensor>>{gdm::modulate_backward(tape.value(x), cfg, up)};
  });
}

}  // namespace omnipose::ad
