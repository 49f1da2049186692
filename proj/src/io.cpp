#include "omnipose/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json_util.hpp"
#include "omnipose/error.hpp"

namespace omnipose::io {

namespace detail {

json parse_json(std::string_view text, std::string_view source) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    std::size_t line = 1, col = 1;
    const std::size_t upto = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    for (std::size_t i = 0; i < upto; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw SchemaError(std::string(source) + ":" + std::to_string(line) + ":" + std::to_string(col) +
                      ": invalid JSON (" + e.what() + ")");
  }
}

}  // namespace detail

using detail::json;
using detail::fail;
using detail::child;
using detail::index;

namespace {

constexpr char kMagic[8] = {'O', 'M', 'N', 'I', 'T', 'E', 'N', '\0'};

template <typename T>
void append_le(std::string& out, T value) {
  auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(value);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.append(bytes.data(), bytes.size());
}

template <typename T>
T load_le(const char* p) {
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

[[noreturn]] void tensor_error(std::string_view source, std::size_t offset, const std::string& msg) {
  throw IoError(std::string(source) + ": malformed tensor file at byte " + std::to_string(offset) +
                ": " + msg);
}

}  // namespace

std::string_view to_string(DType d) { return d == DType::f32 ? "f32" : "f64"; }

DType dtype_from_string(std::string_view name) {
  if (name == "f32") return DType::f32;
  if (name == "f64") return DType::f64;
  throw ConfigError("unknown dtype '" + std::string(name) + "' (expected f32 or f64)");
}

std::string encode_tensor(const Tensor& t, DType dtype) {
  const std::string header =
      json{{"dtype", std::string(to_string(dtype))}, {"shape", t.shape()}}.dump();
  std::string out(kMagic, sizeof(kMagic));
  append_le<std::uint32_t>(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  out.reserve(out.size() + t.size() * (dtype == DType::f32 ? 4 : 8));
  for (double v : t.data()) {
    if (dtype == DType::f32) {
      append_le<float>(out, static_cast<float>(v));
    } else {
      append_le<double>(out, v);
    }
  }
  return out;
}

Tensor decode_tensor(std::string_view bytes, std::string_view source) {
  if (bytes.size() < sizeof(kMagic)) tensor_error(source, bytes.size(), "file too short for the magic");
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) tensor_error(source, 0, "bad magic (expected OMNITEN\\0)");
  if (bytes.size() < 12) tensor_error(source, bytes.size(), "file too short for the header length");
  const std::uint32_t header_len = load_le<std::uint32_t>(bytes.data() + 8);
  if (bytes.size() < 12 + static_cast<std::size_t>(header_len)) {
    tensor_error(source, bytes.size(), "header truncated (declared " + std::to_string(header_len) + " bytes)");
  }
  json header;
  try {
    header = json::parse(bytes.substr(12, header_len));
  } catch (const json::parse_error& e) {
    tensor_error(source, 12 + (e.byte ? e.byte - 1 : 0), "header is not valid JSON");
  }
  if (!header.is_object() || !header.contains("dtype") || !header.contains("shape") ||
      !header["dtype"].is_string() || !header["shape"].is_array()) {
    tensor_error(source, 12, "header must be {\"dtype\": ..., \"shape\": [...]}");
  }
  const std::string dt = header["dtype"].get<std::string>();
  if (dt != "f32" && dt != "f64") tensor_error(source, 12, "unsupported dtype '" + dt + "'");
  Shape shape;
  for (const json& d : header["shape"]) {
    if (!d.is_number_unsigned() || d.get<std::uint64_t>() == 0) {
      tensor_error(source, 12, "shape entries must be positive integers");
    }
    shape.push_back(d.get<std::size_t>());
  }
  if (shape.empty()) tensor_error(source, 12, "shape must not be empty");
  const std::size_t elem = dt == "f32" ? 4 : 8;
  const std::size_t count = shape_numel(shape);
  const std::size_t payload_at = 12 + header_len;
  const std::size_t available = bytes.size() - payload_at;
  if (available != count * elem) {
    tensor_error(source, payload_at + std::min(available, count * elem),
                 "payload has " + std::to_string(available) + " bytes, expected " +
                     std::to_string(count * elem) + " for shape " + shape_to_string(shape));
  }
  std::vector<double> data(count);
  const char* p = bytes.data() + payload_at;
  for (std::size_t i = 0; i < count; ++i) {
    data[i] = elem == 4 ? static_cast<double>(load_le<float>(p + i * 4)) : load_le<double>(p + i * 8);
  }
  return Tensor(std::move(shape), std::move(data));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

void write_tensor(const std::filesystem::path& path, const Tensor& t, DType dtype) {
  write_file(path, encode_tensor(t, dtype));
}

Tensor read_tensor(const std::filesystem::path& path) { return decode_tensor(read_file(path), path.string()); }

// ---- keypoint files ----------------------------------------------------------

std::size_t KeypointFile::num_keypoints() const {
  return categories.empty() ? 0 : categories.front().keypoints.size();
}

std::vector<std::string> default_keypoint_names(std::size_t k) {
  if (k == 16) {
    return {"r_ankle", "r_knee",     "r_hip",      "l_hip",      "l_knee",     "l_ankle",
            "pelvis",  "thorax",     "upper_neck", "head_top",   "r_wrist",    "r_elbow",
            "r_shoulder", "l_shoulder", "l_elbow", "l_wrist"};
  }
  if (k == 17) {
    return {"nose",           "left_eye",      "right_eye",      "left_ear",   "right_ear",
            "left_shoulder",  "right_shoulder", "left_elbow",    "right_elbow", "left_wrist",
            "right_wrist",    "left_hip",      "right_hip",      "left_knee",  "right_knee",
            "left_ankle",     "right_ankle"};
  }
  std::vector<std::string> names;
  for (std::size_t i = 0; i < k; ++i) names.push_back("joint_" + std::to_string(i));
  return names;
}

KeypointFile parse_keypoint_file(std::string_view text, FileRole role) {
  const json doc = detail::parse_json(text, "keypoint file");
  detail::reject_unknown(doc, "", {"categories", "images", "annotations", "info", "licenses"});
  KeypointFile f;
  const json& cats = detail::as_array(detail::require(doc, "", "categories"), "categories");
  if (cats.empty()) fail("categories", "at least one category is required");
  for (std::size_t i = 0; i < cats.size(); ++i) {
    const std::string path = index("categories", i);
    const json& c = cats[i];
    detail::reject_unknown(c, path, {"id", "name", "keypoints", "k_i", "skeleton", "supercategory"});
    KeypointCategory cat;
    if (auto* v = detail::optional(c, "id")) cat.id = detail::as_int(*v, child(path, "id"));
    if (auto* v = detail::optional(c, "name")) cat.name = detail::as_string(*v, child(path, "name"));
    const json& kps = detail::as_array(detail::require(c, path, "keypoints"), child(path, "keypoints"));
    if (kps.empty()) fail(child(path, "keypoints"), "must name at least one keypoint");
    for (std::size_t j = 0; j < kps.size(); ++j)
      cat.keypoints.push_back(detail::as_string(kps[j], index(child(path, "keypoints"), j)));
    if (auto* v = detail::optional(c, "k_i")) {
      const std::string kp = child(path, "k_i");
      detail::as_array(*v, kp);
      if (v->size() != cat.keypoints.size()) {
        fail(kp, "expected " + std::to_string(cat.keypoints.size()) + " falloff constants, got " +
                     std::to_string(v->size()));
      }
      std::vector<double> k;
      for (std::size_t j = 0; j < v->size(); ++j) {
        k.push_back(detail::as_number((*v)[j], index(kp, j)));
        if (!(k.back() > 0.0)) fail(index(kp, j), "falloff constants must be positive");
      }
      cat.k = std::move(k);
    }
    if (!f.categories.empty() && cat.keypoints.size() != f.categories.front().keypoints.size()) {
      fail(child(path, "keypoints"), "all categories must have the same keypoint count");
    }
    f.categories.push_back(std::move(cat));
  }
  const std::size_t k = f.num_keypoints();

  if (auto* imgs = detail::optional(doc, "images")) {
    detail::as_array(*imgs, "images");
    for (std::size_t i = 0; i < imgs->size(); ++i) {
      const std::string path = index("images", i);
      const json& im = (*imgs)[i];
      detail::reject_unknown(im, path, {"id", "width", "height", "file_name"});
      f.images.push_back({detail::as_int(detail::require(im, path, "id"), child(path, "id")),
                          detail::as_uint(detail::require(im, path, "width"), child(path, "width")),
                          detail::as_uint(detail::require(im, path, "height"), child(path, "height"))});
    }
  }

  const json& anns = detail::as_array(detail::require(doc, "", "annotations"), "annotations");
  for (std::size_t i = 0; i < anns.size(); ++i) {
    const std::string path = index("annotations", i);
    const json& a = anns[i];
    detail::reject_unknown(a, path, {"id", "image_id", "category_id", "keypoints", "num_keypoints",
                                     "area", "head_size", "score", "bbox", "iscrowd"});
    PoseAnnotation ann;
    ann.id = detail::as_int(detail::require(a, path, "id"), child(path, "id"));
    ann.image_id = detail::as_int(detail::require(a, path, "image_id"), child(path, "image_id"));
    const std::string kp_path = child(path, "keypoints");
    const json& kp = detail::as_array(detail::require(a, path, "keypoints"), kp_path);
    if (kp.size() != 3 * k) {
      fail(kp_path, "expected " + std::to_string(3 * k) + " values (3 per keypoint), got " +
                        std::to_string(kp.size()));
    }
    for (std::size_t j = 0; j < k; ++j) {
      Keypoint p;
      p.x = detail::as_number(kp[3 * j], index(kp_path, 3 * j));
      p.y = detail::as_number(kp[3 * j + 1], index(kp_path, 3 * j + 1));
      const std::int64_t v = detail::as_int(kp[3 * j + 2], index(kp_path, 3 * j + 2));
      if (v < 0 || v > 2) fail(index(kp_path, 3 * j + 2), "visibility must be 0, 1 or 2");
      p.v = static_cast<int>(v);
      if (p.v > 0 && (!std::isfinite(p.x) || !std::isfinite(p.y))) {
        fail(index(kp_path, 3 * j), "labeled keypoint coordinates must be finite");
      }
      ann.keypoints.push_back(p);
    }
    if (auto* v = detail::optional(a, "area")) {
      ann.area = detail::as_number(*v, child(path, "area"));
      if (!(*ann.area > 0.0)) fail(child(path, "area"), "area must be positive");
    }
    if (auto* v = detail::optional(a, "head_size")) {
      ann.head_size = detail::as_number(*v, child(path, "head_size"));
      if (!(*ann.head_size > 0.0)) fail(child(path, "head_size"), "head_size must be positive");
    }
    const json* score = detail::optional(a, "score");
    if (role == FileRole::ground_truth && score) fail(child(path, "score"), "ground truth must not carry a score");
    if (role == FileRole::prediction) {
      if (!score) fail(child(path, "score"), "predictions require a score");
      ann.score = detail::as_number(*score, child(path, "score"));
    }
    f.annotations.push_back(std::move(ann));
  }
  return f;
}

KeypointFile read_keypoint_file(const std::filesystem::path& path, FileRole role) {
  try {
    return parse_keypoint_file(read_file(path), role);
  } catch (const SchemaError& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

std::string serialize_keypoint_file(const KeypointFile& f) {
  json cats = json::array();
  for (const KeypointCategory& c : f.categories) {
    json j{{"id", c.id}, {"name", c.name}, {"keypoints", c.keypoints}};
    if (c.k) j["k_i"] = *c.k;
    cats.push_back(std::move(j));
  }
  json imgs = json::array();
  for (const ImageInfo& im : f.images) imgs.push_back({{"id", im.id}, {"width", im.width}, {"height", im.height}});
  json anns = json::array();
  for (const PoseAnnotation& a : f.annotations) {
    json kp = json::array();
    for (const Keypoint& p : a.keypoints) {
      kp.push_back(p.x);
      kp.push_back(p.y);
      kp.push_back(p.v);
    }
    json j{{"id", a.id}, {"image_id", a.image_id}, {"keypoints", std::move(kp)}};
    if (a.area) j["area"] = *a.area;
    if (a.head_size) j["head_size"] = *a.head_size;
    if (a.score) j["score"] = *a.score;
    anns.push_back(std::move(j));
  }
  return json{{"categories", cats}, {"images", imgs}, {"annotations", anns}}.dump(2) + "\n";
}

void write_keypoint_file(const std::filesystem::path& path, const KeypointFile& file) {
  write_file(path, serialize_keypoint_file(file));
}

// ---- configuration -----------------------------------------------------------

namespace {

Hw parse_hw(const json& v, const std::string& path) {
  detail::as_array(v, path);
  if (v.size() != 2) fail(path, "expected [height, width]");
  return {detail::as_uint(v[0], index(path, 0)), detail::as_uint(v[1], index(path, 1))};
}

gdm::GdmConfig parse_gdm(const json& j, const std::string& path) {
  detail::reject_unknown(j, path, {"kernel_size", "sigma", "upsample_stride", "upsample_kernel", "upsample_padding"});
  gdm::GdmConfig g;
  if (auto* v = detail::optional(j, "kernel_size")) g.kernel_size = detail::as_uint(*v, child(path, "kernel_size"));
  if (auto* v = detail::optional(j, "sigma")) g.sigma = detail::as_number(*v, child(path, "sigma"));
  if (auto* v = detail::optional(j, "upsample_stride")) g.upsample_stride = detail::as_uint(*v, child(path, "upsample_stride"));
  if (auto* v = detail::optional(j, "upsample_kernel")) g.upsample_kernel = detail::as_uint(*v, child(path, "upsample_kernel"));
  if (auto* v = detail::optional(j, "upsample_padding")) g.upsample_padding = detail::as_uint(*v, child(path, "upsample_padding"));
  return g;
}

model::BackboneConfig parse_backbone(const json& j, const std::string& path) {
  detail::reject_unknown(j, path, {"in_channels", "stem_channels", "branches", "num_exchange_blocks",
                                   "lite", "modulate_up_transitions", "gdm"});
  model::BackboneConfig b;
  if (auto* v = detail::optional(j, "in_channels")) b.in_channels = detail::as_uint(*v, child(path, "in_channels"));
  if (auto* v = detail::optional(j, "stem_channels")) b.stem_channels = detail::as_uint(*v, child(path, "stem_channels"));
  if (auto* v = detail::optional(j, "branches")) {
    const std::string bp = child(path, "branches");
    detail::as_array(*v, bp);
    b.branches.clear();
    for (std::size_t i = 0; i < v->size(); ++i) {
      const std::string p = index(bp, i);
      detail::reject_unknown((*v)[i], p, {"channels", "divisor"});
      b.branches.push_back({detail::as_uint(detail::require((*v)[i], p, "channels"), child(p, "channels")),
                            detail::as_uint(detail::require((*v)[i], p, "divisor"), child(p, "divisor"))});
    }
  }
  if (auto* v = detail::optional(j, "num_exchange_blocks")) b.num_exchange_blocks = detail::as_uint(*v, child(path, "num_exchange_blocks"));
  if (auto* v = detail::optional(j, "lite")) b.lite = detail::as_bool(*v, child(path, "lite"));
  if (auto* v = detail::optional(j, "modulate_up_transitions")) b.modulate_up_transitions = detail::as_bool(*v, child(path, "modulate_up_transitions"));
  if (auto* v = detail::optional(j, "gdm")) b.gdm = parse_gdm(*v, child(path, "gdm"));
  return b;
}

wasp::WaspConfig parse_wasp(const json& j, const std::string& path) {
  detail::reject_unknown(j, path, {"dilations", "branch_channels", "llf_channels", "num_joints",
                                   "fusion", "separable", "relu_between_1x1"});
  wasp::WaspConfig w;
  if (auto* v = detail::optional(j, "dilations")) {
    const std::string dp = child(path, "dilations");
    detail::as_array(*v, dp);
    w.dilations.clear();
    for (std::size_t i = 0; i < v->size(); ++i) w.dilations.push_back(detail::as_uint((*v)[i], index(dp, i)));
  }
  if (auto* v = detail::optional(j, "branch_channels")) w.branch_channels = detail::as_uint(*v, child(path, "branch_channels"));
  if (auto* v = detail::optional(j, "llf_channels")) w.llf_channels = detail::as_uint(*v, child(path, "llf_channels"));
  if (auto* v = detail::optional(j, "num_joints")) w.num_joints = detail::as_uint(*v, child(path, "num_joints"));
  if (auto* v = detail::optional(j, "fusion")) {
    const std::string fp = child(path, "fusion");
    try {
      w.fusion = wasp::fusion_from_string(detail::as_string(*v, fp));
    } catch (const ConfigError& e) {
      fail(fp, e.what());
    }
  }
  if (auto* v = detail::optional(j, "separable")) w.separable = detail::as_bool(*v, child(path, "separable"));
  if (auto* v = detail::optional(j, "relu_between_1x1")) w.relu_between_1x1 = detail::as_bool(*v, child(path, "relu_between_1x1"));
  return w;
}

}  // namespace

model::ModelConfig parse_model_config(std::string_view text) {
  const json doc = detail::parse_json(text, "model config");
  detail::reject_unknown(doc, "", {"backbone", "wasp", "input_size", "heatmap_stride", "seed"});
  model::ModelConfig cfg;
  if (auto* v = detail::optional(doc, "backbone")) cfg.backbone = parse_backbone(*v, "backbone");
  if (auto* v = detail::optional(doc, "wasp")) cfg.wasp = parse_wasp(*v, "wasp");
  if (auto* v = detail::optional(doc, "input_size")) cfg.input_size = parse_hw(*v, "input_size");
  if (auto* v = detail::optional(doc, "heatmap_stride")) cfg.heatmap_stride = detail::as_uint(*v, "heatmap_stride");
  if (auto* v = detail::optional(doc, "seed")) cfg.seed = detail::as_uint(*v, "seed");
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw SchemaError(std::string("model config: ") + e.what());
  }
  return cfg;
}

model::ModelConfig read_model_config(const std::filesystem::path& path) {
  try {
    return parse_model_config(read_file(path));
  } catch (const SchemaError& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

std::string serialize_model_config(const model::ModelConfig& c) {
  json branches = json::array();
  for (const auto& b : c.backbone.branches) branches.push_back({{"channels", b.channels}, {"divisor", b.divisor}});
  const auto& g = c.backbone.gdm;
  json doc{
      {"backbone",
       {{"in_channels", c.backbone.in_channels},
        {"stem_channels", c.backbone.stem_channels},
        {"branches", branches},
        {"num_exchange_blocks", c.backbone.num_exchange_blocks},
        {"lite", c.backbone.lite},
        {"modulate_up_transitions", c.backbone.modulate_up_transitions},
        {"gdm",
         {{"kernel_size", g.kernel_size},
          {"sigma", g.sigma},
          {"upsample_stride", g.upsample_stride},
          {"upsample_kernel", g.upsample_kernel},
          {"upsample_padding", g.upsample_padding}}}}},
      {"wasp",
       {{"dilations", c.wasp.dilations},
        {"branch_channels", c.wasp.branch_channels},
        {"llf_channels", c.wasp.llf_channels},
        {"num_joints", c.wasp.num_joints},
        {"fusion", std::string(wasp::to_string(c.wasp.fusion))},
        {"separable", c.wasp.separable},
        {"relu_between_1x1", c.wasp.relu_between_1x1}}},
      {"input_size", {c.input_size.h, c.input_size.w}},
      {"heatmap_stride", c.heatmap_stride},
      {"seed", c.seed}};
  return doc.dump(2) + "\n";
}

std::vector<cost::LayerSpec> parse_layer_list(std::string_view text) {
  const json doc = detail::parse_json(text, "layer list");
  detail::reject_unknown(doc, "", {"layers"});
  const json& layers = detail::as_array(detail::require(doc, "", "layers"), "layers");
  std::vector<cost::LayerSpec> out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string p = index("layers", i);
    const json& l = layers[i];
    detail::reject_unknown(l, p, {"name", "kind", "mode", "in_channels", "out_channels", "kernel",
                                  "bias", "input_size", "output_size"});
    cost::LayerSpec s;
    s.name = detail::optional(l, "name") ? detail::as_string(l["name"], child(p, "name")) : "layer" + std::to_string(i);
    const std::string kind = detail::optional(l, "kind") ? detail::as_string(l["kind"], child(p, "kind")) : "conv";
    if (kind == "conv") s.kind = cost::LayerKind::conv;
    else if (kind == "transposed_conv") s.kind = cost::LayerKind::transposed_conv;
    else if (kind == "norm") s.kind = cost::LayerKind::norm;
    else if (kind == "gaussian_blur") s.kind = cost::LayerKind::gaussian_blur;
    else fail(child(p, "kind"), "unknown layer kind '" + kind + "'");
    if (auto* v = detail::optional(l, "mode")) {
      try {
        s.mode = conv_mode_from_string(detail::as_string(*v, child(p, "mode")));
      } catch (const ConfigError& e) {
        fail(child(p, "mode"), e.what());
      }
    }
    s.in_channels = detail::as_uint(detail::require(l, p, "in_channels"), child(p, "in_channels"));
    s.out_channels = detail::optional(l, "out_channels")
                         ? detail::as_uint(l["out_channels"], child(p, "out_channels"))
                         : s.in_channels;
    if (auto* v = detail::optional(l, "kernel")) s.kernel_h = s.kernel_w = detail::as_uint(*v, child(p, "kernel"));
    if (auto* v = detail::optional(l, "bias")) s.bias = detail::as_bool(*v, child(p, "bias"));
    s.out_size = parse_hw(detail::require(l, p, "output_size"), child(p, "output_size"));
    s.in_size = detail::optional(l, "input_size") ? parse_hw(l["input_size"], child(p, "input_size")) : s.out_size;
    out.push_back(std::move(s));
  }
  return out;
}

metrics::OksConfig parse_oks_config(std::string_view text) {
  const json doc = detail::parse_json(text, "OKS config");
  detail::reject_unknown(doc, "", {"k", "k_i", "thresholds", "medium", "large"});
  metrics::OksConfig cfg;
  const json* k = detail::optional(doc, "k");
  if (!k) k = detail::optional(doc, "k_i");
  if (!k) fail("k", "required field is missing");
  detail::as_array(*k, "k");
  for (std::size_t i = 0; i < k->size(); ++i) cfg.k.push_back(detail::as_number((*k)[i], index("k", i)));
  if (auto* v = detail::optional(doc, "thresholds")) {
    detail::as_array(*v, "thresholds");
    cfg.thresholds.clear();
    for (std::size_t i = 0; i < v->size(); ++i) cfg.thresholds.push_back(detail::as_number((*v)[i], index("thresholds", i)));
  }
  auto range = [&](const char* key, metrics::AreaRange& r) {
    if (auto* v = detail::optional(doc, key)) {
      detail::as_array(*v, key);
      if (v->size() != 2) fail(key, "expected [lo, hi]");
      r.lo = detail::as_number((*v)[0], index(key, 0));
      r.hi = (*v)[1].is_null() ? std::numeric_limits<double>::infinity() : detail::as_number((*v)[1], index(key, 1));
    }
  };
  range("medium", cfg.medium);
  range("large", cfg.large);
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw SchemaError(std::string("OKS config: ") + e.what());
  }
  return cfg;
}

// ---- weights -----------------------------------------------------------------

void write_weights(const std::filesystem::path& dir, const model::Model& model) {
  std::filesystem::create_directories(dir);
  model::for_each_parameter(model, [&](const std::string& name, const Tensor& t) {
    write_tensor(dir / (name + ".omt"), t);
  });
}

void read_weights(const std::filesystem::path& dir, model::Model& model) {
  if (!std::filesystem::is_directory(dir)) throw IoError("weights directory '" + dir.string() + "' does not exist");
  model::for_each_parameter(model, [&](const std::string& name, Tensor& t) {
    const auto path = dir / (name + ".omt");
    if (!std::filesystem::exists(path)) throw IoError("missing weight file '" + path.string() + "'");
    Tensor loaded = read_tensor(path);
    if (loaded.shape() != t.shape()) {
      throw IoError("weight file '" + path.string() + "' has shape " + shape_to_string(loaded.shape()) +
                    ", model expects " + shape_to_string(t.shape()));
    }
    t = std::move(loaded);
  });
}

}  // namespace omnipose::io
