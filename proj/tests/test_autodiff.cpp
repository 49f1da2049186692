#include <stdexcept>

#include "doctest.h"
#include "omnipose/autodiff.hpp"
#include "oracles.hpp"

using namespace omnipose;

TEST_CASE("tape gradients of a composite graph match finite differences") {
  oracle::Rng rng(21);
  ConvLayer a = make_conv(ConvMode::standard, 2, 3, 3, {.padding = {1, 1}});
  a.weights = rng.tensor(a.weights.shape());
  a.bias = rng.tensor({3});
  ConvLayer up = make_conv(ConvMode::standard, 3, 3, 4, {.stride = {2, 2}, .padding = {1, 1}, .bias = false});
  up.weights = rng.tensor(up.weights.shape());
  Tensor scale = rng.tensor({3}), shift = rng.tensor({3});
  Tensor image = rng.tensor({1, 2, 6, 6});
  const Tensor w = rng.tensor({1, 6, 12, 12});

  auto build = [&](ad::Binder& b) {
    ad::Tape& t = b.tape();
    const ad::Var x = b(image);
    const ad::Var h = ad::relu(t, ad::channel_affine(b, ad::conv2d(b, x, a), scale, shift));
    const ad::Var pooled = ad::broadcast_hw(t, ad::avg_pool_global(t, h), 6, 6);
    const ad::Var merged = ad::add(t, h, pooled);
    const ad::Var big = ad::transposed_conv2d(b, merged, up);
    return ad::concat_channels(t, {big, ad::modulate(t, big, gdm::GdmConfig{3, 1.0})});
  };
  auto value = [&] {
    ad::Tape tape(false);
    ad::Binder b(tape);
    return dot(tape.value(build(b)), w);
  };

  ad::Tape tape;
  ad::Binder b(tape);
  tape.backward(build(b), w);
  CHECK(oracle::fd_check(image, value, tape.grad(*b.find(image)), oracle::all_entries(image)) <= 1e-4);
  CHECK(oracle::fd_check(a.weights, value, tape.grad(*b.find(a.weights)), oracle::all_entries(a.weights)) <= 1e-4);
  CHECK(oracle::fd_check(*a.bias, value, tape.grad(*b.find(*a.bias)), oracle::all_entries(*a.bias)) <= 1e-4);
  CHECK(oracle::fd_check(scale, value, tape.grad(*b.find(scale)), oracle::all_entries(scale)) <= 1e-4);
  CHECK(oracle::fd_check(shift, value, tape.grad(*b.find(shift)), oracle::all_entries(shift)) <= 1e-4);
  CHECK(oracle::fd_check(up.weights, value, tape.grad(*b.find(up.weights)), oracle::all_entries(up.weights)) <= 1e-4);
}

TEST_CASE("a parameter used twice accumulates both contributions") {
  oracle::Rng rng(22);
  ConvLayer l = make_conv(ConvMode::pointwise, 2, 2, 1, {.bias = false});
  l.weights = rng.tensor(l.weights.shape());
  const Tensor x = rng.tensor({1, 2, 3, 3});
  ad::Tape tape;
  ad::Binder b(tape);
  const ad::Var y = ad::conv2d(b, ad::conv2d(b, tape.constant(x), l), l);
  CHECK(tape.value(y) == conv2d(conv2d(x, l), l));
  tape.backward(y);
  // d/dW sum(W W x) through both uses.
  Tensor weights = l.weights;
  auto f = [&] {
    ConvLayer m = l;
    m.weights = weights;
    return conv2d(conv2d(x, m), m).sum();
  };
  CHECK(oracle::fd_check(weights, f, tape.grad(*b.find(l.weights)), oracle::all_entries(weights)) <= 1e-6);
}

TEST_CASE("tape bookkeeping") {
  ad::Tape tape;
  const ad::Var c = tape.constant(Tensor({1, 1, 2, 2}, 1.0));
  const ad::Var p = tape.parameter(Tensor({1, 1, 2, 2}, 2.0));
  const ad::Var s = ad::add(tape, c, p);
  CHECK_FALSE(tape.requires_grad(c));
  CHECK(tape.requires_grad(s));
  tape.backward(s);
  CHECK(tape.grad(p).values() == std::vector<double>(4, 1.0));
  CHECK(tape.grad(c).values() == std::vector<double>(4, 0.0));
  CHECK_THROWS_AS(tape.backward(s), std::logic_error);

  ad::Tape frozen(false);
  const ad::Var q = frozen.parameter(Tensor({1, 1, 1, 1}, 3.0));
  CHECK_FALSE(frozen.requires_grad(ad::relu(frozen, q)));
}
