#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <unordered_map>
#include <vector>

#include "omnipose/gdm.hpp"
#include "omnipose/ops.hpp"
#include "omnipose/tensor.hpp"

// Minimal reverse-mode differentiation over the tensor operators. Each
// recorded node stores its forward value; backward() walks the tape in reverse
// and defers every local derivative to the *_backward functions in ops.hpp
// and gdm.hpp.
namespace omnipose::ad {

struct Var {
  std::size_t id = 0;
};

class Tape;

// Returns one cotangent per parent (nullopt when a parent needs none).
using BackwardFn =
    std::function<std::vector<std::optional<Tensor>>(const Tape&, const Tensor& upstream)>;

class Tape {
 public:
  explicit Tape(bool track_gradients = true) : track_(track_gradients) {}

  Var constant(Tensor value);
  Var parameter(Tensor value);
  Var record(Tensor value, std::vector<Var> parents, BackwardFn backward);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  bool tracking() const { return track_; }

  // Seeds `root` with `seed` (ones when omitted) and accumulates gradients
  // into every node reachable from it. May be called once per tape.
  void backward(Var root, std::optional<Tensor> seed = std::nullopt);

  // Zero tensor of the node's shape when the node received no gradient.
  Tensor grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::vector<Var> parents;
    BackwardFn backward;
    bool requires_grad = false;
    std::optional<Tensor> grad;
  };
  bool track_;
  bool backward_done_ = false;
  std::vector<Node> nodes_;
};

/// Maps parameter tensors (by address) to tape leaves so a layer used twice
/// shares one Var and gradients can be looked up from the original tensor.
class Binder {
 public:
  explicit Binder(Tape& tape) : tape_(tape) {}
  Var operator()(const Tensor& parameter);
  std::optional<Var> find(const Tensor& parameter) const;
  Tape& tape() { return tape_; }

 private:
  Tape& tape_;
  std::unordered_map<const Tensor*, Var> vars_;
};

// Operators. `layer` supplies geometry and identifies its tensors via the binder.
Var conv2d(Binder& b, Var x, const ConvLayer& layer);
Var transposed_conv2d(Binder& b, Var x, const ConvLayer& layer, Hw output_padding = {0, 0});
Var channel_affine(Binder& b, Var x, const Tensor& scale, const Tensor& shift);
Var relu(Tape& t, Var x);
Var add(Tape& t, Var a, Var b);
Var concat_channels(Tape& t, const std::vector<Var>& xs);
Var avg_pool_global(Tape& t, Var x);
Var broadcast_hw(Tape& t, Var x, std::size_t height, std::size_t width);
Var modulate(Tape& t, Var x, const gdm::GdmConfig& cfg);

}  // namespace omnipose::ad
