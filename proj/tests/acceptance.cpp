// Acceptance suite: one PASS/FAIL line per criterion. Exit status is 1 when
// any criterion fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "omnipose/autodiff.hpp"
#include "omnipose/commands.hpp"
#include "omnipose/cost.hpp"
#include "omnipose/gdm.hpp"
#include "omnipose/heatmap.hpp"
#include "omnipose/io.hpp"
#include "omnipose/metrics.hpp"
#include "omnipose/model.hpp"
#include "omnipose/waspv2.hpp"
#include "oracles.hpp"

using namespace omnipose;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

ConvLayer random_layer(oracle::Rng& rng, ConvMode mode, std::size_t in, std::size_t out, std::size_t k,
                       ConvOptions opts = {}) {
  ConvLayer l = make_conv(mode, in, out, k, opts);
  l.weights = rng.tensor(l.weights.shape());
  if (l.bias) l.bias = rng.tensor(l.bias->shape());
  if (l.pointwise_weights) l.pointwise_weights = rng.tensor(l.pointwise_weights->shape());
  if (l.pointwise_bias) l.pointwise_bias = rng.tensor(l.pointwise_bias->shape());
  return l;
}

void randomize(ConvLayer& l, oracle::Rng& rng) {
  l = random_layer(rng, l.mode, l.in_channels(), l.out_channels(), l.kernel_h(),
                   {l.stride, l.dilation, l.padding, l.bias.has_value()});
}

model::ModelConfig toy_config() {
  model::ModelConfig cfg;
  cfg.input_size = {32, 32};
  cfg.wasp.num_joints = 2;
  cfg.wasp.dilations = {1, 2};
  cfg.wasp.branch_channels = 4;
  cfg.wasp.llf_channels = 3;
  cfg.backbone.stem_channels = 4;
  cfg.backbone.branches = {{4, 4}, {6, 8}};
  cfg.seed = 7;
  return cfg;
}

Tensor toy_target(std::vector<bool>& mask) {
  PoseAnnotation a;
  a.keypoints = {{9.5, 14.25, 2}, {22.0, 6.5, 2}};
  const auto t = codec::encode(a, codec::HeatmapMeta{}, 8, 8);
  mask = t.mask;
  return t.heatmaps.reshaped({1, 2, 8, 8});
}

// ---- 1 ----------------------------------------------------------------------

Outcome conv_oracles() {
  oracle::Rng rng(1001);
  std::size_t shapes = 0;
  double worst = 0.0;
  for (std::size_t s : {1, 2})
    for (std::size_t d : {1, 2, 6, 12, 18})
      for (std::size_t p = 0; p <= d; ++p) {
        const std::size_t k = rng.index(2, 3);
        const std::size_t extent = d * (k - 1) + 1;
        const std::size_t h = extent > 2 * p ? extent - 2 * p + rng.index(0, 4) : rng.index(1, 5);
        const std::size_t w = extent > 2 * p ? extent - 2 * p + rng.index(0, 4) : rng.index(1, 5);
        const ConvOptions opts{{s, s}, {d, d}, {p, p}, true};
        const std::size_t cin = rng.index(1, 3), cout = rng.index(1, 3);
        const Tensor x = rng.tensor({1, cin, h, w});

        const ConvLayer dense = random_layer(rng, ConvMode::standard, cin, cout, k, opts);
        worst = std::max(worst, oracle::max_rel_error(conv2d(x, dense), oracle::conv(x, dense)));
        const ConvLayer dw = random_layer(rng, ConvMode::depthwise, cin, cin, k, opts);
        worst = std::max(worst, oracle::max_rel_error(conv2d(x, dw), oracle::conv(x, dw)));
        const ConvLayer sep = random_layer(rng, ConvMode::separable, cin, cout, k, opts);
        worst = std::max(worst, oracle::max_rel_error(separable_conv2d(x, sep), oracle::conv(x, sep)));

        ConvLayer up = random_layer(rng, ConvMode::standard, cin, cout, k, {{s, s}, {d, d}, {p, p}, false});
        up.bias = rng.tensor({cin});
        const Tensor y = rng.tensor({1, cout, rng.index(1, 5), rng.index(1, 5)});
        const Hw op{s > 1 ? rng.index(0, s - 1) : 0, 0};
        if ((y.dim(2) - 1) * s + extent + op.h > 2 * p && (y.dim(3) - 1) * s + extent > 2 * p) {
          worst = std::max(worst, oracle::max_rel_error(transposed_conv2d(y, up, op), oracle::transposed_conv(y, up, op)));
        }
        worst = std::max(worst, oracle::max_rel_error(avg_pool_global(x), oracle::avg_pool(x)));
        ++shapes;
      }
  return {shapes >= 50 && worst <= 1e-9,
          std::to_string(shapes) + " shapes x 5 ops, max rel err " + fmt("%.2e", worst) + " (tol 1e-9)"};
}

// ---- 2 ----------------------------------------------------------------------

Outcome gradients() {
  oracle::Rng rng(2002);
  double worst = 0.0;
  std::size_t checked = 0;
  auto record = [&](double e, std::size_t n) {
    worst = std::max(worst, e);
    checked += n;
  };
  auto fd = [&](Tensor& x, const std::function<double()>& f, const Tensor& g) {
    record(oracle::fd_check(x, f, g, oracle::all_entries(x), 1e-6, 1e-6), x.size());
  };

  for (ConvMode mode : {ConvMode::standard, ConvMode::depthwise, ConvMode::pointwise, ConvMode::separable})
    for (const ConvOptions& opts : {ConvOptions{{1, 1}, {1, 1}, {1, 1}, true}, ConvOptions{{2, 2}, {2, 2}, {2, 2}, true},
                                    ConvOptions{{1, 2}, {6, 1}, {3, 0}, true}}) {
      const std::size_t cin = 2, cout = mode == ConvMode::depthwise ? 2 : 3;
      ConvLayer l = random_layer(rng, mode, cin, cout, 3, opts);
      Tensor x = rng.tensor({1, cin, 9, 8});
      const Tensor w = rng.tensor(conv2d(x, l).shape());
      const ConvGrad g = conv2d_backward(x, l, w);
      auto f = [&] { return dot(conv2d(x, l), w); };
      fd(x, f, g.input);
      fd(l.weights, f, g.weights);
      fd(*l.bias, f, *g.bias);
      if (l.pointwise_weights) {
        fd(*l.pointwise_weights, f, *g.pointwise_weights);
        fd(*l.pointwise_bias, f, *g.pointwise_bias);
      }
    }

  {
    ConvLayer l = random_layer(rng, ConvMode::standard, 2, 3, 4, {{2, 2}, {1, 1}, {1, 1}, false});
    l.bias = rng.tensor({2});
    Tensor x = rng.tensor({1, 3, 3, 4});
    const Hw op{1, 0};
    const Tensor w = rng.tensor(transposed_conv2d(x, l, op).shape());
    const ConvGrad g = transposed_conv2d_backward(x, l, op, w);
    auto f = [&] { return dot(transposed_conv2d(x, l, op), w); };
    fd(x, f, g.input);
    fd(l.weights, f, g.weights);
    fd(*l.bias, f, *g.bias);
  }

  Tensor x = rng.tensor({2, 3, 4, 5});
  for (double& v : x.data())
    if (std::abs(v) < 0.05) v = 0.3;  // away from the relu kink
  {
    const Tensor w = rng.tensor(x.shape());
    fd(x, [&] { return dot(relu(x), w); }, relu_backward(x, w));
    const Tensor wp = rng.tensor({2, 3, 1, 1});
    fd(x, [&] { return dot(avg_pool_global(x), wp); }, avg_pool_global_backward(x.shape(), wp));
    Tensor p = rng.tensor({2, 3, 1, 1});
    fd(p, [&] { return dot(broadcast_hw(p, 4, 5), w); }, broadcast_hw_backward(w));
    Tensor y = rng.tensor(x.shape());
    const AddGrad ag = add_backward(w);
    fd(x, [&] { return dot(add(x, y), w); }, ag.a);
    fd(y, [&] { return dot(add(x, y), w); }, ag.b);
    const Tensor wc = rng.tensor({2, 6, 4, 5});
    const auto parts = concat_channels_backward({x.shape(), y.shape()}, wc);
    fd(x, [&] { return dot(concat_channels({x, y}), wc); }, parts[0]);
    fd(y, [&] { return dot(concat_channels({x, y}), wc); }, parts[1]);
    Tensor scale = rng.tensor({3}), shift = rng.tensor({3});
    const AffineGrad g = channel_affine_backward(x, scale, w);
    auto f = [&] { return dot(channel_affine(x, scale, shift), w); };
    fd(x, f, g.input);
    fd(scale, f, g.scale);
    fd(shift, f, g.shift);
  }

  {
    const gdm::GdmConfig cfg{5, 1.2};
    Tensor m = rng.tensor({2, 2, 6, 5});
    const Tensor w = rng.tensor(m.shape());
    fd(m, [&] { return dot(gdm::modulate(m, cfg), w); }, gdm::modulate_backward(m, cfg, w));
  }

  {
    wasp::WaspConfig cfg;
    cfg.branch_channels = 3;
    cfg.llf_channels = 2;
    cfg.num_joints = 2;
    cfg.dilations = {1, 2};
    cfg.relu_between_1x1 = true;
    wasp::WaspWeights w = wasp::make_wasp_weights(cfg, 2);
    for (ConvLayer* l : {&w.atrous[0], &w.atrous[1], &w.post_sum, &*w.low_level, &w.fusion, &w.head}) randomize(*l, rng);
    Tensor f0 = rng.tensor({1, 3, 5, 5}), llf = rng.tensor({1, 2, 5, 5});
    const Tensor probe = rng.tensor({1, 2, 5, 5});
    auto value = [&] { return dot(wasp::waspv2_forward(f0, llf, cfg, w), probe); };
    ad::Tape tape;
    ad::Binder b(tape);
    const ad::Var x0 = b(f0), x1 = b(llf);
    tape.backward(wasp::waspv2_forward(b, x0, x1, cfg, w), probe);
    fd(f0, value, tape.grad(x0));
    fd(llf, value, tape.grad(x1));
    for (ConvLayer* l : {&w.atrous[0], &w.atrous[1], &w.post_sum, &*w.low_level, &w.fusion, &w.head})
      fd(l->weights, value, tape.grad(*b.find(l->weights)));
  }

  {
    Tensor pred = rng.tensor({1, 2, 3, 3});
    const Tensor target = rng.tensor(pred.shape());
    const std::vector<bool> mask{true, false};
    fd(pred, [&] { return model::mse_heatmap_loss(pred, target, mask).loss; },
       model::mse_heatmap_loss(pred, target, mask).grad);
  }

  // End-to-end toy model, every parameter entry. A 1e-5 step keeps roundoff
  // below the floor for the many near-zero entries.
  model::Model m = model::make_model(toy_config());
  for (auto& [name, n] : m.norms) {
    n.scale = rng.tensor(n.scale.shape(), 0.5, 1.5);
    n.shift = rng.tensor(n.shift.shape(), -0.1, 0.1);
  }
  const Tensor image = rng.tensor({1, 3, 32, 32}, 0.0, 1.0);
  std::vector<bool> mask;
  const Tensor target = toy_target(mask);
  const model::LossAndGrad lg = model::loss_and_gradients(m, image, target, mask);
  auto loss = [&] { return model::mse_heatmap_loss(model::forward(m, image), target, mask).loss; };
  std::size_t model_entries = 0;
  model::for_each_parameter(m, [&](const std::string& name, Tensor& t) {
    record(oracle::fd_check(t, loss, lg.grads.at(name), oracle::all_entries(t), 1e-5, 1e-6), t.size());
    model_entries += t.size();
  });

  return {worst <= 1e-4, std::to_string(checked) + " entries (" + std::to_string(model_entries) +
                             " toy-model parameters), max rel err " + fmt("%.2e", worst) + " (tol 1e-4)"};
}

// ---- 3 ----------------------------------------------------------------------

Outcome wasp_flow() {
  oracle::Rng rng(3003);
  wasp::WaspConfig cfg;
  cfg.branch_channels = 3;
  cfg.llf_channels = 2;
  cfg.num_joints = 2;
  const bool default_dilations = cfg.dilations == std::vector<std::size_t>{1, 6, 12, 18};
  std::size_t sizes = 0, preserved = 0;
  double worst = 0.0;
  for (wasp::Fusion fusion : {wasp::Fusion::concat, wasp::Fusion::add})
    for (bool separable : {false, true}) {
      wasp::WaspConfig c = cfg;
      c.fusion = fusion;
      c.separable = separable;
      if (fusion == wasp::Fusion::add) c.llf_channels = c.branch_channels;
      wasp::WaspWeights w = wasp::make_wasp_weights(c, 4);
      for (ConvLayer& l : w.atrous) randomize(l, rng);
      for (ConvLayer* l : {&w.post_sum, &*w.low_level, &w.fusion, &w.head}) randomize(*l, rng);
      for (std::size_t h : {1, 3, 8, 19, 37})
        for (std::size_t wd : {1, 6, 20}) {
          const Tensor f0 = rng.tensor({1, 3, h, wd}), llf = rng.tensor({1, 4, h, wd});
          const Tensor y = wasp::waspv2_forward(f0, llf, c, w);
          ++sizes;
          preserved += y.shape() == Shape{1, 2, h, wd} ? 1 : 0;
          if (h * wd <= 160) worst = std::max(worst, oracle::max_rel_error(y, oracle::wasp_head(f0, llf, c, w)));
        }
    }
  return {default_dilations && preserved == sizes && worst <= 1e-9,
          "dilations {1,6,12,18}: " + std::to_string(preserved) + "/" + std::to_string(sizes) +
              " sizes preserved, oracle max rel err " + fmt("%.2e", worst) + " (tol 1e-9)"};
}

// ---- 4 ----------------------------------------------------------------------

Outcome gdm_contract() {
  oracle::Rng rng(4004);
  const gdm::GdmConfig cfg;
  double worst_max = 0.0, worst_min = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t h = rng.index(3, 24), w = rng.index(3, 24);
    Tensor x = rng.tensor({1, 1, h, w}, -1.0, 2.0);
    x[rng.index(0, x.size() - 1)] = rng.uniform(0.5, 3.0);
    const Tensor y = gdm::modulate(x, cfg);
    worst_max = std::max(worst_max, std::abs(y.max() - x.max()));
    worst_min = std::max(worst_min, std::abs(y.min()));
  }
  int kept = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t h = rng.index(8, 24), w = rng.index(8, 24);
    Tensor x = rng.tensor({1, 1, h, w}, 0.0, 0.01);
    const std::size_t at = rng.index(0, x.size() - 1);
    x[at] = rng.uniform(0.5, 2.0);
    const Tensor y = gdm::modulate(x, cfg);
    kept += static_cast<std::size_t>(std::max_element(y.data().begin(), y.data().end()) - y.data().begin()) == at;
  }
  return {worst_max <= 1e-12 && worst_min <= 1e-12 && kept == 100,
          "100 planes: |max-max f_D| " + fmt("%.1e", worst_max) + ", |min| " + fmt("%.1e", worst_min) +
              " (tol 1e-12); argmax kept " + std::to_string(kept) + "/100"};
}

// ---- 5 ----------------------------------------------------------------------

Outcome codec_round_trip() {
  oracle::Rng rng(5005);
  const codec::HeatmapMeta meta{4, 0.0, 0.0, 3.0};
  double taylor_sum = 0.0, taylor_max = 0.0, quarter_sum = 0.0;
  const int trials = 1000;
  for (int i = 0; i < trials; ++i) {
    const double cx = rng.uniform(3.0, 28.0), cy = rng.uniform(3.0, 28.0);
    PoseAnnotation a;
    a.keypoints = {{cx * 4, cy * 4, 2}};
    const Tensor h = codec::encode(a, meta, 32, 32).heatmaps;
    auto err = [&](codec::Refinement r) {
      const codec::Peak p = codec::locate_peak(h.data(), 32, 32, r);
      return std::hypot(p.x - cx, p.y - cy);
    };
    const double e = err(codec::Refinement::taylor);
    taylor_sum += e;
    taylor_max = std::max(taylor_max, e);
    quarter_sum += err(codec::Refinement::quarter_offset);
  }
  const double taylor_mean = taylor_sum / trials, quarter_mean = quarter_sum / trials;
  return {taylor_max <= 0.1 && quarter_mean > taylor_mean,
          "sigma 3, 1000 centres: taylor max " + fmt("%.2e", taylor_max) + " px (tol 0.1), mean " +
              fmt("%.2e", taylor_mean) + " < quarter mean " + fmt("%.3f", quarter_mean)};
}

// ---- 6 ----------------------------------------------------------------------

Outcome metric_oracles() {
  PoseAnnotation gt, pred;
  gt.keypoints = {{0, 0, 2}, {5, 5, 2}};
  gt.area = 100.0;
  pred.keypoints = {{1, 0, 2}, {5, 7, 2}};
  const double oks = metrics::oks(pred, gt, std::vector<double>{0.1, 0.2});
  const double oks_err = std::abs(oks - std::exp(-0.5));

  // Every OKS matrix up to 3x3 over a tie-heavy value set, every ignore mask.
  const std::vector<double> levels{0.3, 0.5, 0.7};
  std::size_t sets = 0, agree = 0;
  for (std::size_t np = 0; np <= 3; ++np)
    for (std::size_t ng = 0; ng <= 3; ++ng) {
      std::size_t matrices = 1;
      for (std::size_t i = 0; i < np * ng; ++i) matrices *= levels.size();
      for (std::size_t code = 0; code < matrices; ++code) {
        std::vector<std::vector<double>> m(np, std::vector<double>(ng));
        std::size_t c = code;
        for (auto& row : m)
          for (double& v : row) {
            v = levels[c % levels.size()];
            c /= levels.size();
          }
        for (std::size_t mask = 0; mask < (1u << ng); ++mask) {
          std::vector<bool> ignore(ng);
          for (std::size_t g = 0; g < ng; ++g) ignore[g] = (mask >> g) & 1u;
          for (double t : {0.5, 0.6}) {
            ++sets;
            agree += metrics::greedy_match(m, t, ignore) == oracle::exhaustive_match(m, t, ignore);
          }
        }
      }
    }

  metrics::OksConfig cfg;
  cfg.k = {0.05, 0.1, 0.2};
  std::vector<PoseAnnotation> gts;
  std::vector<std::optional<PoseAnnotation>> same;
  std::vector<PoseAnnotation> preds;
  oracle::Rng rng(6006);
  for (int i = 0; i < 12; ++i) {
    PoseAnnotation g;
    g.id = i;
    g.image_id = i / 3;
    for (int j = 0; j < 3; ++j) g.keypoints.push_back({rng.uniform(0, 200), rng.uniform(0, 200), j == 2 && i % 4 == 0 ? 0 : 2});
    g.area = rng.uniform(40.0 * 40.0, 200.0 * 200.0);
    g.head_size = rng.uniform(5, 30);
    gts.push_back(g);
    same.push_back(g);
    g.score = rng.uniform(0, 1);
    preds.push_back(g);
  }
  const auto ap = metrics::match_and_ap(preds, gts, cfg);
  const auto pck = metrics::pckh(same, gts, 0.5);
  const bool perfect = ap.ap && *ap.ap == 1.0 && ap.ar && *ap.ar == 1.0 && pck.mean == 1.0;

  return {oks_err <= 1e-9 && agree == sets && perfect,
          "OKS fixture err " + fmt("%.1e", oks_err) + " (tol 1e-9); greedy == exhaustive on " + std::to_string(agree) +
              "/" + std::to_string(sets) + " sets; pred=gt AP " + fmt("%.3f", ap.ap.value_or(-1)) + " AR " +
              fmt("%.3f", ap.ar.value_or(-1)) + " PCKh " + fmt("%.1f%%", 100.0 * pck.mean)};
}

// ---- 7 ----------------------------------------------------------------------

Outcome cost_direction() {
  const double expected = (9.0 * 48 + 48.0 * 48) / (9.0 * 48 * 48);
  std::vector<cost::LayerSpec> standard, separable;
  for (std::size_t i = 0; i < 4; ++i) {
    const Hw size{64u >> i, 48u >> i};
    standard.push_back({"c" + std::to_string(i), cost::LayerKind::conv, ConvMode::standard, 48, 48, 3, 3, false, size, size});
    separable.push_back(standard.back());
    separable.back().mode = ConvMode::separable;
  }
  const double ratio = static_cast<double>(cost::count_cost(separable).params) /
                       static_cast<double>(cost::count_cost(standard).params);
  const model::ModelConfig cfg = model::default_config();
  const auto full = model::count_cost(model::with_lite(cfg, false), cfg.input_size);
  const auto lite = model::count_cost(model::with_lite(cfg, true), cfg.input_size);
  const double red = cost::reduction_percent(full.params, lite.params);
  return {std::abs(ratio - expected) <= 1e-12 && lite.params < full.params && lite.flops < full.flops,
          "48-ch 3x3 separable/standard params " + fmt("%.6f", ratio) + " vs " + fmt("%.6f", expected) +
              "; default model lite params -" + fmt("%.1f%%", red)};
}

// ---- 8 ----------------------------------------------------------------------

Outcome training_smoke() {
  const model::ModelConfig cfg = toy_config();
  model::Model m = model::make_model(cfg);
  oracle::Rng rng(8008);
  const Tensor image = rng.tensor({1, 3, 32, 32}, 0.0, 1.0);
  std::vector<bool> mask;
  const Tensor target = toy_target(mask);
  model::TrainingOptions opts;
  opts.steps = 200;
  const auto losses = model::fit(m, image, target, mask, opts);
  const double ratio = losses.front() / losses.back();
  return {ratio >= 100.0, "200 Adam steps (lr 1e-3, seed 7): loss " + fmt("%.3e", losses.front()) + " -> " +
                              fmt("%.3e", losses.back()) + ", " + fmt("%.0fx", ratio) + " (need >= 100x)"};
}

// ---- 9 ----------------------------------------------------------------------

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = io::read_file(e.path());
  return files;
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "omnipose_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root / "images");
  io::write_file(root / "model.json", io::serialize_model_config(toy_config()));
  oracle::Rng rng(9009);
  for (int i = 1; i <= 3; ++i) io::write_tensor(root / "images" / (std::to_string(i) + ".omt"), rng.tensor({3, 32, 32}, 0, 1));

  io::KeypointFile gt;
  gt.categories.push_back({1, "person", {"a", "b"}, std::vector<double>{0.1, 0.1}});
  for (int i = 1; i <= 3; ++i) {
    PoseAnnotation a;
    a.id = i + 1;
    a.image_id = i;
    a.keypoints = {{rng.uniform(4, 28), rng.uniform(4, 28), 2}, {rng.uniform(4, 28), rng.uniform(4, 28), 2}};
    a.area = 600.0;
    a.head_size = 8.0;
    gt.annotations.push_back(a);
    gt.images.push_back({i, 32, 32});
  }
  io::write_keypoint_file(root / "gt.json", gt);

  std::vector<std::map<std::string, std::string>> runs;
  std::vector<std::string> logs;
  for (const char* run : {"run1", "run2"}) {
    std::ostringstream log;
    cli::InferOptions inf;
    inf.run.model_config = root / "model.json";
    inf.run.seed = 11;
    inf.run.output = root / run / "infer";
    inf.input = root / "images";
    cli::cmd_infer(inf, log);

    io::KeypointFile merged = io::read_keypoint_file(root / run / "infer" / "1.keypoints.json", io::FileRole::prediction);
    for (int i = 2; i <= 3; ++i) {
      const auto more = io::read_keypoint_file(root / run / "infer" / (std::to_string(i) + ".keypoints.json"),
                                               io::FileRole::prediction);
      merged.annotations.insert(merged.annotations.end(), more.annotations.begin(), more.annotations.end());
    }
    io::write_keypoint_file(root / run / "pred.json", merged);
    for (cli::Metric metric : {cli::Metric::pckh, cli::Metric::oks_ap}) {
      cli::EvalOptions ev;
      ev.predictions = root / run / "pred.json";
      ev.ground_truth = root / "gt.json";
      ev.metric = metric;
      ev.json_output = root / run / (metric == cli::Metric::pckh ? "pckh.json" : "ap.json");
      cli::cmd_eval(ev, log);
    }
    runs.push_back(snapshot(root / run));
    logs.push_back(log.str());
  }
  std::size_t bytes = 0;
  for (const auto& [name, content] : runs[0]) bytes += content.size();
  const bool same = runs[0] == runs[1] && logs[0] == logs[1];
  fs::remove_all(root);
  return {same && runs[0].size() == 9, std::to_string(runs[0].size()) + " output files (" + std::to_string(bytes) +
                                           " bytes) and console output " + (same ? "identical" : "DIFFER") +
                                           " across two runs"};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    Outcome (*run)();
    double budget_s;
  };
  const Criterion criteria[] = {
      {"convolution oracle equivalence", conv_oracles, 60},
      {"gradient suite", gradients, 300},
      {"WASPv2 shape and flow", wasp_flow, 0},
      {"GDM contract", gdm_contract, 0},
      {"codec round trip", codec_round_trip, 0},
      {"metric oracles", metric_oracles, 0},
      {"cost-model direction", cost_direction, 0},
      {"training smoke", training_smoke, 300},
      {"determinism", determinism, 0},
  };
  int failures = 0, index = 0;
  for (const Criterion& c : criteria) {
    ++index;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.budget_s > 0 && seconds >= c.budget_s) {
      o.pass = false;
      o.detail += "; over the " + fmt("%.0f", c.budget_s) + " s budget";
    }
    failures += o.pass ? 0 : 1;
    std::printf("criterion %d %s: %s - %s [%.2f s]\n", index, o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str(),
                seconds);
    std::fflush(stdout);
  }
  std::printf("acceptance: %d/9 passed\n", 9 - failures);
  return failures == 0 ? 0 : 1;
}
