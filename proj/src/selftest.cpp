#include <cmath>
#include <functional>
#include <random>

#include "omnipose/autodiff.hpp"
#include "omnipose/commands.hpp"
#include "omnipose/cost.hpp"
#include "omnipose/gdm.hpp"
#include "omnipose/metrics.hpp"
#include "omnipose/ops.hpp"
#include "omnipose/waspv2.hpp"

namespace omnipose::cli {

namespace {

class Runner {
 public:
  Runner(std::ostream& out, bool verbose) : out_(out), verbose_(verbose) {}

  void check(const std::string& name, const std::function<bool()>& fn) {
    bool ok = false;
    std::string detail;
    try {
      ok = fn();
    } catch (const std::exception& e) {
      detail = std::string(" (threw: ") + e.what() + ")";
    }
    ++total_;
    failures_ += ok ? 0 : 1;
    if (!ok || verbose_) out_ << (ok ? "ok   " : "FAIL ") << name << detail << "\n";
  }

  int failures() const { return failures_; }
  int total() const { return total_; }

 private:
  std::ostream& out_;
  bool verbose_;
  int failures_ = 0;
  int total_ = 0;
};

Tensor random_tensor(Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = u(rng);
  return t;
}

// Direct transcription of the convolution sum, groups 1 or C.
Tensor naive_conv(const Tensor& x, const ConvLayer& l) {
  const auto [n, c, h, w] = require_nchw(x, "x");
  const std::size_t co = l.weights.dim(0), kh = l.kernel_h(), kw = l.kernel_w();
  const std::size_t ho = conv_output_extent(h, kh, l.stride.h, l.dilation.h, l.padding.h, "h");
  const std::size_t wo = conv_output_extent(w, kw, l.stride.w, l.dilation.w, l.padding.w, "w");
  const bool dw = l.mode == ConvMode::depthwise;
  Tensor y({n, co, ho, wo});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < wo; ++j) {
          double s = l.bias ? (*l.bias)[o] : 0.0;
          for (std::size_t ci = 0; ci < (dw ? 1 : c); ++ci)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                const long yy = static_cast<long>(i * l.stride.h + u * l.dilation.h) - static_cast<long>(l.padding.h);
                const long xx = static_cast<long>(j * l.stride.w + v * l.dilation.w) - static_cast<long>(l.padding.w);
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) continue;
                s += l.weights.at(o, ci, u, v) * x.at(b, dw ? o : ci, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
              }
          y.at(b, o, i, j) = s;
        }
  return y;
}

double max_rel_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(1.0, std::abs(b[i])));
  return worst;
}

// Central-difference check of d(sum(w * f(x)))/dx against `analytic`.
bool fd_matches(Tensor x, const std::function<Tensor(const Tensor&)>& f, const Tensor& weights,
                const Tensor& analytic) {
  const double h = 1e-6;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = dot(f(x), weights);
    x[i] = keep - h;
    const double down = dot(f(x), weights);
    x[i] = keep;
    const double numeric = (up - down) / (2 * h);
    if (std::abs(numeric - analytic[i]) > 1e-4 * std::max(1.0, std::abs(numeric))) return false;
  }
  return true;
}

}  // namespace

int cmd_selftest(std::ostream& out, bool verbose) {
  Runner r(out, verbose);
  std::mt19937_64 rng(2024);

  r.check("conv2d matches the direct sum (stride, dilation, padding grid)", [&] {
    for (std::size_t s : {1, 2})
      for (std::size_t d : {1, 2, 6})
        for (std::size_t p : {std::size_t{0}, d}) {
          ConvLayer l = make_conv(ConvMode::standard, 3, 4, 3, {{s, s}, {d, d}, {p, p}, true});
          l.weights = random_tensor(l.weights.shape(), rng);
          l.bias = random_tensor({4}, rng);
          const Tensor x = random_tensor({1, 3, 16, 15}, rng);
          if (max_rel_diff(conv2d(x, l), naive_conv(x, l)) > 1e-9) return false;
        }
    return true;
  });

  r.check("depthwise conv2d matches the direct sum", [&] {
    ConvLayer l = make_conv(ConvMode::depthwise, 5, 5, 3, {{2, 2}, {2, 2}, {2, 2}, true});
    l.weights = random_tensor(l.weights.shape(), rng);
    l.bias = random_tensor({5}, rng);
    const Tensor x = random_tensor({2, 5, 11, 9}, rng);
    return max_rel_diff(conv2d(x, l), naive_conv(x, l)) <= 1e-9;
  });

  r.check("transposed conv is the adjoint of conv", [&] {
    ConvLayer l = make_conv(ConvMode::standard, 3, 2, 4, {{2, 2}, {1, 1}, {1, 1}, false});
    l.weights = random_tensor(l.weights.shape(), rng);
    const Tensor x = random_tensor({1, 3, 8, 8}, rng);
    const Tensor y = random_tensor(conv2d(x, l).shape(), rng);
    const double lhs = dot(conv2d(x, l), y), rhs = dot(x, transposed_conv2d(y, l));
    return std::abs(lhs - rhs) <= 1e-9 * std::max(1.0, std::abs(lhs));
  });

  r.check("conv2d input and weight gradients match finite differences", [&] {
    ConvLayer l = make_conv(ConvMode::separable, 2, 3, 3, {{1, 1}, {2, 2}, {2, 2}, true});
    l.weights = random_tensor(l.weights.shape(), rng);
    l.pointwise_weights = random_tensor(l.pointwise_weights->shape(), rng);
    const Tensor x = random_tensor({1, 2, 6, 5}, rng);
    const Tensor w = random_tensor(conv2d(x, l).shape(), rng);
    const ConvGrad g = conv2d_backward(x, l, w);
    const bool dx = fd_matches(x, [&](const Tensor& t) { return conv2d(t, l); }, w, g.input);
    const bool dk = fd_matches(l.weights, [&](const Tensor& k) {
      ConvLayer m = l;
      m.weights = k;
      return conv2d(x, m);
    }, w, g.weights);
    return dx && dk;
  });

  r.check("modulate gradient matches finite differences", [&] {
    const gdm::GdmConfig cfg{3, 1.0};
    Tensor x = random_tensor({1, 2, 5, 5}, rng);
    x[7] = 3.0;  // unique plane maximum keeps the map differentiable
    x[40] = 2.5;
    const Tensor w = random_tensor(x.shape(), rng);
    return fd_matches(x, [&](const Tensor& t) { return gdm::modulate(t, cfg); }, w,
                      gdm::modulate_backward(x, cfg, w));
  });

  r.check("modulate keeps the plane maximum and maps the minimum to 0", [&] {
    const gdm::GdmConfig cfg;
    Tensor x = random_tensor({1, 3, 12, 12}, rng);
    for (double& v : x.data()) v = std::abs(v) + 0.1;
    const Tensor y = gdm::modulate(x, cfg);
    for (std::size_t c = 0; c < 3; ++c) {
      double xmax = -INFINITY, ymax = -INFINITY, ymin = INFINITY;
      for (std::size_t i = 0; i < 144; ++i) {
        xmax = std::max(xmax, x[c * 144 + i]);
        ymax = std::max(ymax, y[c * 144 + i]);
        ymin = std::min(ymin, y[c * 144 + i]);
      }
      if (std::abs(ymax - xmax) > 1e-12 || std::abs(ymin) > 1e-12) return false;
    }
    return true;
  });

  r.check("WASPv2 preserves spatial size for dilations 1, 6, 12, 18", [&] {
    wasp::WaspConfig cfg;
    cfg.branch_channels = 4;
    cfg.llf_channels = 3;
    cfg.num_joints = 2;
    const wasp::WaspWeights w = wasp::make_wasp_weights(cfg, 5);
    for (std::size_t s : {5, 16, 23}) {
      const Tensor y = wasp::waspv2_forward(Tensor({1, 4, s, s}), Tensor({1, 5, s, s}), cfg, w);
      if (y.shape() != Shape{1, 2, s, s}) return false;
    }
    return true;
  });

  r.check("f64 tensor files round-trip bit-exactly", [&] {
    const Tensor t = random_tensor({2, 3, 4}, rng);
    return io::decode_tensor(io::encode_tensor(t)) == t;
  });

  r.check("heatmap encode/decode recovers sub-pixel centres", [&] {
    std::uniform_real_distribution<double> u(20.0, 40.0);
    const codec::HeatmapMeta meta;
    for (int trial = 0; trial < 20; ++trial) {
      PoseAnnotation a;
      a.keypoints = {{u(rng), u(rng), 2}};
      const auto t = codec::encode(a, meta, 16, 16);
      const auto j = codec::decode(t.heatmaps, meta, codec::Refinement::taylor);
      if (std::hypot(j[0].keypoint.x - a.keypoints[0].x, j[0].keypoint.y - a.keypoints[0].y) > 0.1 * meta.stride)
        return false;
    }
    return true;
  });

  r.check("OKS hand value exp(-1/2)", [&] {
    PoseAnnotation gt, pred;
    gt.keypoints = {{0, 0, 2}, {0, 0, 2}};
    gt.area = 100.0;
    pred.keypoints = {{1, 0, 2}, {0, 2, 2}};
    const std::vector<double> k{0.1, 0.2};
    return std::abs(metrics::oks(pred, gt, k) - std::exp(-0.5)) <= 1e-9;
  });

  r.check("separable/standard parameter ratio for a 48-channel 3x3 conv", [&] {
    const cost::LayerSpec std_layer{"c", cost::LayerKind::conv, ConvMode::standard, 48, 48, 3, 3, false, {8, 8}, {8, 8}};
    cost::LayerSpec sep = std_layer;
    sep.mode = ConvMode::separable;
    const double ratio = static_cast<double>(cost::layer_cost(sep).params) /
                         static_cast<double>(cost::layer_cost(std_layer).params);
    return std::abs(ratio - (9.0 * 48 + 48.0 * 48) / (9.0 * 48 * 48)) <= 1e-12;
  });

  out << "selftest: " << r.total() - r.failures() << "/" << r.total() << " passed, " << r.failures()
      << " failure(s)\n";
  return r.failures();
}

}  // namespace omnipose::cli
