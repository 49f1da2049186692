#include "doctest.h"
#include "omnipose/cost.hpp"
#include "omnipose/model.hpp"

using namespace omnipose;

namespace {

cost::LayerSpec conv_spec(ConvMode mode, std::size_t cin, std::size_t cout, std::size_t k, bool bias, Hw out) {
  return {"layer", cost::LayerKind::conv, mode, cin, cout, k, k, bias, out, out};
}

}  // namespace

TEST_CASE("closed-form layer costs") {
  SUBCASE("standard") {
    const auto c = cost::layer_cost(conv_spec(ConvMode::standard, 4, 8, 3, true, {5, 6}));
    CHECK(c.params == 8 * 4 * 9 + 8);
    CHECK(c.flops == 2ull * 8 * 4 * 9 * 30 + 8 * 30);
  }
  SUBCASE("depthwise") {
    const auto c = cost::layer_cost(conv_spec(ConvMode::depthwise, 4, 4, 3, false, {5, 6}));
    CHECK(c.params == 4 * 9);
    CHECK(c.flops == 2ull * 4 * 9 * 30);
  }
  SUBCASE("separable") {
    const auto c = cost::layer_cost(conv_spec(ConvMode::separable, 4, 8, 3, true, {2, 2}));
    CHECK(c.params == 4 * 9 + 8 * 4 + 4 + 8);
    CHECK(c.flops == 2ull * (4 * 9 + 8 * 4) * 4 + (4 + 8) * 4);
  }
  SUBCASE("transposed uses input pixels for the scatter") {
    const cost::LayerSpec s{"up", cost::LayerKind::transposed_conv, ConvMode::standard, 6, 3, 4, 4, true, {4, 4}, {8, 8}};
    const auto c = cost::layer_cost(s);
    CHECK(c.params == 6 * 3 * 16 + 3);
    CHECK(c.flops == 2ull * 6 * 3 * 16 * 16 + 3 * 64);
  }
  SUBCASE("norm and blur") {
    const cost::LayerSpec n{"n", cost::LayerKind::norm, ConvMode::standard, 5, 5, 1, 1, false, {2, 3}, {2, 3}};
    CHECK(cost::layer_cost(n).params == 10);
    CHECK(cost::layer_cost(n).flops == 60);
    const cost::LayerSpec g{"g", cost::LayerKind::gaussian_blur, ConvMode::depthwise, 5, 5, 7, 7, false, {2, 3}, {2, 3}};
    CHECK(cost::layer_cost(g).params == 0);
    CHECK(cost::layer_cost(g).flops == 2ull * 5 * 49 * 6);
  }
}

TEST_CASE("separable to standard parameter ratio for 48-channel 3x3 convs") {
  const auto std_cost = cost::layer_cost(conv_spec(ConvMode::standard, 48, 48, 3, false, {16, 16}));
  const auto sep_cost = cost::layer_cost(conv_spec(ConvMode::separable, 48, 48, 3, false, {16, 16}));
  const double ratio = static_cast<double>(sep_cost.params) / static_cast<double>(std_cost.params);
  CHECK(ratio == doctest::Approx((9.0 * 48 + 48 * 48) / (9.0 * 48 * 48)).epsilon(1e-15));
  CHECK(ratio == doctest::Approx(0.132).epsilon(0.01));
}

TEST_CASE("separable is cheaper than standard for every width of at least two") {
  for (std::size_t c = 2; c <= 64; c *= 2)
    for (std::size_t k : {3, 5}) {
      const auto a = cost::layer_cost(conv_spec(ConvMode::standard, c, c, k, true, {8, 8}));
      const auto b = cost::layer_cost(conv_spec(ConvMode::separable, c, c, k, true, {8, 8}));
      CHECK(b.params < a.params);
      CHECK(b.flops < a.flops);
    }
}

TEST_CASE("totals sum layers and reduction percentages") {
  const std::vector<cost::LayerSpec> layers{conv_spec(ConvMode::standard, 2, 2, 3, false, {1, 1}),
                                            conv_spec(ConvMode::pointwise, 2, 3, 1, true, {1, 1})};
  const auto r = cost::count_cost(layers);
  CHECK(r.params == 36 + 9);
  CHECK(r.layers.size() == 2);
  CHECK(cost::count_cost(std::vector<cost::LayerSpec>{}).params == 0);
  CHECK(cost::reduction_percent(200, 50) == 75.0);
  CHECK(cost::reduction_percent(0, 0) == 0.0);
}

TEST_CASE("model cost: lite is strictly cheaper and matches the parameter count") {
  model::ModelConfig cfg = model::default_config(16);
  const auto standard = model::count_cost(model::with_lite(cfg, false), cfg.input_size);
  const auto lite = model::count_cost(model::with_lite(cfg, true), cfg.input_size);
  CHECK(lite.params < standard.params);
  CHECK(lite.flops < standard.flops);
  CHECK(standard.params == model::parameter_count(model::make_model(cfg, model::Init::zeros)));
  CHECK(lite.params == model::parameter_count(model::make_model(model::with_lite(cfg, true), model::Init::zeros)));
}
