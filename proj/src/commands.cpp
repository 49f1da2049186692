#include "omnipose/commands.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>

#include "json_util.hpp"
#include "omnipose/cost.hpp"
#include "omnipose/error.hpp"
#include "omnipose/metrics.hpp"
#include "omnipose/model.hpp"

namespace omnipose::cli {

using io::detail::json;

namespace {

void require_exists(const std::optional<fs::path>& p, const char* what) {
  if (p && !fs::exists(*p)) throw IoError(std::string(what) + " '" + p->string() + "' does not exist");
}

// Sorted *.omt files of a directory, or the file itself.
std::vector<fs::path> tensor_inputs(const fs::path& input) {
  if (!fs::exists(input)) throw IoError("input '" + input.string() + "' does not exist");
  if (!fs::is_directory(input)) return {input};
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(input)) {
    if (entry.is_regular_file() && entry.path().extension() == ".omt") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

// Leading integer of a file name ("12.heatmaps.omt" -> 12).
std::optional<std::int64_t> numeric_stem(const fs::path& p) {
  const std::string name = p.filename().string();
  const std::string head = name.substr(0, name.find('.'));
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(head.data(), head.data() + head.size(), v);
  if (ec != std::errc() || ptr != head.data() + head.size() || head.empty()) return std::nullopt;
  return v;
}

std::string plain_stem(const fs::path& p) {
  const std::string name = p.filename().string();
  return name.substr(0, name.find('.'));
}

double mean_confidence(const std::vector<codec::DecodedJoint>& joints) {
  double s = 0.0;
  for (const auto& j : joints) s += j.confidence;
  return joints.empty() ? 0.0 : s / static_cast<double>(joints.size());
}

PoseAnnotation to_prediction(const std::vector<codec::DecodedJoint>& joints, std::int64_t id,
                             std::int64_t image_id) {
  PoseAnnotation a;
  a.id = id;
  a.image_id = image_id;
  for (const auto& j : joints) a.keypoints.push_back(j.keypoint);
  a.score = mean_confidence(joints);
  return a;
}

io::KeypointFile prediction_file(std::size_t k) {
  io::KeypointFile f;
  io::KeypointCategory cat;
  cat.keypoints = io::default_keypoint_names(k);
  f.categories.push_back(std::move(cat));
  return f;
}

// [K,H,W] plane stacks, accepting a leading batch of 1.
Tensor as_plane_stack(const Tensor& t, const std::string& source) {
  if (t.rank() == 3) return t;
  if (t.rank() == 4 && t.dim(0) == 1) return t.reshaped({t.dim(1), t.dim(2), t.dim(3)});
  throw ShapeError(source + ": expected heatmaps [K,H,W] or [1,K,H,W], got " + shape_to_string(t.shape()));
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width, bool right = true) {
  if (s.size() >= width) return s;
  const std::string fill(width - s.size(), ' ');
  return right ? fill + s : s + fill;
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

void emit_json(const json& report, const std::optional<fs::path>& path, bool to_stdout,
               std::ostream& out) {
  const std::string text = report.dump(2) + "\n";
  if (path) io::write_file(*path, text);
  if (to_stdout) out << text;
}

}  // namespace

void RunConfig::validate() const {
  require_exists(model_config, "model config");
  require_exists(weights_dir, "weights directory");
  require_exists(oks_config, "OKS config");
  if (output.empty()) throw ConfigError("an output path is required");
}

// ---- infer -------------------------------------------------------------------

int cmd_infer(const InferOptions& o, std::ostream& out) {
  o.run.validate();
  model::ModelConfig cfg = o.run.model_config ? io::read_model_config(*o.run.model_config)
                                              : model::default_config();
  if (o.run.seed) cfg.seed = *o.run.seed;
  const bool zeros = o.zero_init && !o.run.weights_dir;
  model::Model m = model::make_model(cfg, zeros ? model::Init::zeros : model::Init::uniform);
  if (o.run.weights_dir) io::read_weights(*o.run.weights_dir, m);

  const std::vector<fs::path> inputs = tensor_inputs(o.input);
  fs::create_directories(o.run.output);
  const Hw hm = cfg.heatmap_size();
  const codec::HeatmapMeta meta{cfg.heatmap_stride, 0.0, 0.0, 3.0};

  for (std::size_t idx = 0; idx < inputs.size(); ++idx) {
    const fs::path& path = inputs[idx];
    Tensor image = io::read_tensor(path);
    const bool batched = image.rank() == 4;
    if (image.rank() == 3) image = image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)});
    if (image.rank() != 4 || image.dim(1) != cfg.backbone.in_channels ||
        image.dim(2) != cfg.input_size.h || image.dim(3) != cfg.input_size.w) {
      throw ShapeError(path.string() + ": image shape " + shape_to_string(image.shape()) +
                       " does not match the model input [N," + std::to_string(cfg.backbone.in_channels) +
                       "," + std::to_string(cfg.input_size.h) + "," + std::to_string(cfg.input_size.w) + "]");
    }
    const Tensor heatmaps = model::forward(m, image);
    const std::size_t n = heatmaps.dim(0), k = heatmaps.dim(1);

    io::KeypointFile preds = prediction_file(k);
    const std::int64_t base = numeric_stem(path).value_or(static_cast<std::int64_t>(idx));
    const std::size_t plane = k * hm.h * hm.w;
    for (std::size_t b = 0; b < n; ++b) {
      const std::int64_t image_id = batched ? base * static_cast<std::int64_t>(n) + static_cast<std::int64_t>(b) : base;
      preds.images.push_back({image_id, cfg.input_size.w, cfg.input_size.h});
      const Tensor maps({k, hm.h, hm.w},
                        std::vector<double>(heatmaps.values().begin() + static_cast<std::ptrdiff_t>(b * plane),
                                            heatmaps.values().begin() + static_cast<std::ptrdiff_t>((b + 1) * plane)));
      preds.annotations.push_back(
          to_prediction(codec::decode(maps, meta, o.run.refinement), image_id + 1, image_id));
    }
    const std::string stem = plain_stem(path);
    io::write_tensor(o.run.output / (stem + ".heatmaps.omt"),
                     batched ? heatmaps : heatmaps.reshaped({k, hm.h, hm.w}), o.dtype);
    io::write_keypoint_file(o.run.output / (stem + ".keypoints.json"), preds);
    out << path.filename().string() << " -> " << stem << ".heatmaps.omt, " << stem << ".keypoints.json\n";
  }
  out << "inferred " << inputs.size() << " input(s)\n";
  return 0;
}

// ---- encode / decode ---------------------------------------------------------

int cmd_encode(const CodecOptions& o, std::ostream& out) {
  const io::KeypointFile gt = io::read_keypoint_file(o.input, io::FileRole::ground_truth);
  const codec::HeatmapMeta meta{o.stride, o.offset_x, o.offset_y, o.sigma};
  meta.validate();
  std::map<std::int64_t, io::ImageInfo> images;
  for (const auto& im : gt.images) images[im.id] = im;

  fs::create_directories(o.output);
  for (std::size_t i = 0; i < gt.annotations.size(); ++i) {
    const PoseAnnotation& a = gt.annotations[i];
    std::size_t h = o.height.value_or(0), w = o.width.value_or(0);
    if (!o.height || !o.width) {
      const auto it = images.find(a.image_id);
      if (it == images.end()) {
        throw SchemaError("annotations[" + std::to_string(i) + "].image_id: image " +
                          std::to_string(a.image_id) + " is not listed; pass --height and --width");
      }
      if (!o.height) h = (it->second.height + o.stride - 1) / o.stride;
      if (!o.width) w = (it->second.width + o.stride - 1) / o.stride;
    }
    const codec::EncodedTargets t = codec::encode(a, meta, h, w);
    io::write_tensor(o.output / (std::to_string(a.id) + ".omt"), t.heatmaps, o.dtype);
  }
  out << "encoded " << gt.annotations.size() << " annotation(s)\n";
  return 0;
}

int cmd_decode(const CodecOptions& o, std::ostream& out) {
  const codec::HeatmapMeta meta{o.stride, o.offset_x, o.offset_y, o.sigma};
  meta.validate();
  std::optional<io::KeypointFile> like;
  std::map<std::int64_t, std::int64_t> image_of;
  if (o.like) {
    like = io::read_keypoint_file(*o.like, io::FileRole::ground_truth);
    for (const auto& a : like->annotations) image_of[a.id] = a.image_id;
  }

  const std::vector<fs::path> inputs = tensor_inputs(o.input);
  std::vector<PoseAnnotation> anns;
  std::size_t k = like ? like->num_keypoints() : 0;
  for (std::size_t idx = 0; idx < inputs.size(); ++idx) {
    const Tensor maps = as_plane_stack(io::read_tensor(inputs[idx]), inputs[idx].string());
    if (k == 0) k = maps.dim(0);
    if (maps.dim(0) != k) {
      throw ShapeError(inputs[idx].string() + ": " + std::to_string(maps.dim(0)) + " heatmaps, expected " +
                       std::to_string(k));
    }
    const std::int64_t id = numeric_stem(inputs[idx]).value_or(static_cast<std::int64_t>(idx) + 1);
    const auto it = image_of.find(id);
    anns.push_back(to_prediction(codec::decode(maps, meta, o.refinement), id,
                                 it == image_of.end() ? id : it->second));
  }

  io::KeypointFile preds = prediction_file(std::max<std::size_t>(k, 1));
  if (like) {
    preds.categories = like->categories;
    preds.images = like->images;
  }
  preds.annotations = std::move(anns);
  io::write_keypoint_file(o.output, preds);
  out << "decoded " << preds.annotations.size() << " heatmap stack(s) into " << o.output.string() << "\n";
  return 0;
}

// ---- eval --------------------------------------------------------------------

Metric metric_from_string(std::string_view name) {
  if (name == "pckh") return Metric::pckh;
  if (name == "oks-ap") return Metric::oks_ap;
  throw ConfigError("unknown metric '" + std::string(name) + "' (expected pckh or oks-ap)");
}

namespace {

int eval_pckh(const EvalOptions& o, const io::KeypointFile& pred, const io::KeypointFile& gt,
              std::ostream& out) {
  for (std::size_t i = 0; i < gt.annotations.size(); ++i) {
    if (!gt.annotations[i].head_size) {
      throw SchemaError(o.ground_truth.string() + ": annotations[" + std::to_string(i) +
                        "].head_size: required for pckh (annotation id " +
                        std::to_string(gt.annotations[i].id) + ")");
    }
  }
  // Top-down evaluation: instances are paired by annotation id.
  std::map<std::int64_t, const PoseAnnotation*> by_id;
  for (const auto& p : pred.annotations) by_id.emplace(p.id, &p);
  std::vector<std::optional<PoseAnnotation>> paired;
  for (const auto& g : gt.annotations) {
    const auto it = by_id.find(g.id);
    paired.push_back(it == by_id.end() ? std::nullopt : std::optional<PoseAnnotation>(*it->second));
  }
  const metrics::PckhResult r = metrics::pckh(paired, gt.annotations, o.alpha);
  const std::vector<std::string>& names = gt.categories.front().keypoints;
  const auto groups = metrics::group_by_body_part(names, r);

  json per_joint = json::object();
  for (std::size_t j = 0; j < names.size(); ++j) {
    per_joint[names[j]] = {{"rate", r.per_joint[j]}, {"correct", r.correct[j]}, {"labeled", r.labeled[j]}};
  }
  json grouped = json::object();
  for (const auto& g : groups) grouped[g.group] = g.labeled ? json(g.rate) : json(nullptr);
  const json report{{"metric", "pckh"}, {"alpha", o.alpha},   {"mean", r.mean},
                    {"groups", grouped}, {"per_joint", per_joint},
                    {"instances", gt.annotations.size()}};
  emit_json(report, o.json_output, o.json_to_stdout, out);
  if (!o.json_to_stdout) {
    out << "PCKh@" << o.alpha << " (%)\n";
    for (const auto& g : groups) out << pad(g.group, 9);
    out << "\n";
    for (const auto& g : groups) out << pad(g.labeled ? fixed(100.0 * g.rate, 1) : "-", 9);
    out << "\n";
  }
  return 0;
}

int eval_oks_ap(const EvalOptions& o, const io::KeypointFile& pred, const io::KeypointFile& gt,
                std::ostream& out) {
  metrics::OksConfig cfg;
  if (o.oks_config) {
    cfg = io::parse_oks_config(io::read_file(*o.oks_config));
  } else if (gt.categories.front().k) {
    cfg.k = *gt.categories.front().k;
  } else if (gt.num_keypoints() == 17) {
    cfg.k = metrics::coco_falloff_constants();
  } else {
    throw ConfigError("no OKS falloff constants: pass --oks-config or add categories[0].k_i to the ground truth");
  }
  if (cfg.k.size() != gt.num_keypoints()) {
    throw SchemaError("OKS config has " + std::to_string(cfg.k.size()) + " falloff constants, ground truth has " +
                      std::to_string(gt.num_keypoints()) + " keypoints");
  }
  for (std::size_t i = 0; i < gt.annotations.size(); ++i) {
    const PoseAnnotation& a = gt.annotations[i];
    if (a.labeled_count() > 0 && !a.area) {
      throw SchemaError(o.ground_truth.string() + ": annotations[" + std::to_string(i) +
                        "].area: required for oks-ap (annotation id " + std::to_string(a.id) + ")");
    }
  }
  const metrics::ApReport r = metrics::match_and_ap(pred.annotations, gt.annotations, cfg);

  json matches = json::array();
  for (const auto& m : r.matches) {
    matches.push_back({{"image_id", m.image_id}, {"pred_id", m.pred_id}, {"gt_id", m.gt_id}, {"oks", m.oks}});
  }
  const json report{{"metric", "oks-ap"},
                    {"ap", optional_number(r.ap)},
                    {"ap50", optional_number(r.ap50)},
                    {"ap75", optional_number(r.ap75)},
                    {"ap_m", optional_number(r.ap_medium)},
                    {"ap_l", optional_number(r.ap_large)},
                    {"ar", optional_number(r.ar)},
                    {"thresholds", r.thresholds},
                    {"ap_per_threshold", r.ap_per_threshold},
                    {"ar_per_threshold", r.ar_per_threshold},
                    {"matches", matches}};
  emit_json(report, o.json_output, o.json_to_stdout, out);
  if (!o.json_to_stdout) {
    const std::pair<const char*, std::optional<double>> cols[] = {
        {"AP", r.ap}, {"AP50", r.ap50}, {"AP75", r.ap75}, {"AP_M", r.ap_medium}, {"AP_L", r.ap_large}, {"AR", r.ar}};
    for (const auto& [name, v] : cols) out << pad(name, 8);
    out << "\n";
    for (const auto& [name, v] : cols) out << pad(v ? fixed(100.0 * *v, 1) : "-", 8);
    out << "\n";
  }
  return 0;
}

}  // namespace

int cmd_eval(const EvalOptions& o, std::ostream& out) {
  const io::KeypointFile pred = io::read_keypoint_file(o.predictions, io::FileRole::prediction);
  const io::KeypointFile gt = io::read_keypoint_file(o.ground_truth, io::FileRole::ground_truth);
  if (pred.num_keypoints() != gt.num_keypoints()) {
    throw SchemaError(o.predictions.string() + ": categories[0].keypoints: " +
                      std::to_string(pred.num_keypoints()) + " keypoints, ground truth has " +
                      std::to_string(gt.num_keypoints()));
  }
  return o.metric == Metric::pckh ? eval_pckh(o, pred, gt, out) : eval_oks_ap(o, pred, gt, out);
}

// ---- count -------------------------------------------------------------------

namespace {

// Lite variant of a bare layer list: every spatial dense conv becomes separable.
std::vector<cost::LayerSpec> with_separable(std::vector<cost::LayerSpec> layers, bool lite) {
  for (auto& l : layers) {
    if (l.kind == cost::LayerKind::conv && (l.kernel_h > 1 || l.kernel_w > 1) &&
        (l.mode == ConvMode::standard || l.mode == ConvMode::separable)) {
      l.mode = lite ? ConvMode::separable : ConvMode::standard;
    }
  }
  return layers;
}

void print_cost_table(const cost::CostReport& r, std::ostream& out) {
  std::size_t width = 5;
  for (const auto& l : r.layers) width = std::max(width, l.name.size());
  out << pad("layer", width, false) << pad("params", 14) << pad("flops", 16) << "\n";
  for (const auto& l : r.layers) {
    out << pad(l.name, width, false) << pad(std::to_string(l.params), 14) << pad(std::to_string(l.flops), 16) << "\n";
  }
  out << pad("total", width, false) << pad(std::to_string(r.params), 14) << pad(std::to_string(r.flops), 16) << "\n";
}

json cost_json(const cost::CostReport& r) {
  json layers = json::array();
  for (const auto& l : r.layers) layers.push_back({{"name", l.name}, {"params", l.params}, {"flops", l.flops}});
  return {{"params", r.params}, {"flops", r.flops}, {"layers", layers}};
}

}  // namespace

int cmd_count(const CountOptions& o, std::ostream& out) {
  const std::string text = io::read_file(o.config);
  const json doc = io::detail::parse_json(text, o.config.string());

  cost::CostReport report, standard, lite;
  if (doc.is_object() && (doc.empty() || doc.contains("layers"))) {
    // An empty document is an empty topology.
    const std::vector<cost::LayerSpec> layers = doc.empty() ? std::vector<cost::LayerSpec>{} : io::parse_layer_list(text);
    report = cost::count_cost(layers);
    standard = cost::count_cost(with_separable(layers, false));
    lite = cost::count_cost(with_separable(layers, true));
  } else {
    model::ModelConfig cfg;
    try {
      cfg = io::parse_model_config(text);
    } catch (const SchemaError& e) {
      throw SchemaError(o.config.string() + ": " + e.what());
    }
    if (o.input_size) cfg.input_size = *o.input_size;
    report = model::count_cost(cfg, cfg.input_size);
    standard = model::count_cost(model::with_lite(cfg, false), cfg.input_size);
    lite = model::count_cost(model::with_lite(cfg, true), cfg.input_size);
  }

  const double param_red = cost::reduction_percent(standard.params, lite.params);
  const double flop_red = cost::reduction_percent(standard.flops, lite.flops);
  json j = cost_json(report);
  j["lite_vs_standard"] = {{"standard_params", standard.params}, {"lite_params", lite.params},
                           {"standard_flops", standard.flops},   {"lite_flops", lite.flops},
                           {"param_reduction_percent", param_red}, {"flop_reduction_percent", flop_red}};
  emit_json(j, o.json_output, o.json_to_stdout, out);
  if (!o.json_to_stdout) {
    print_cost_table(report, out);
    out << "lite vs standard: params " << standard.params << " -> " << lite.params << " ("
        << fixed(param_red, 1) << "% reduction), flops " << standard.flops << " -> " << lite.flops << " ("
        << fixed(flop_red, 1) << "% reduction)\n";
  }
  return 0;
}

}  // namespace omnipose::cli
