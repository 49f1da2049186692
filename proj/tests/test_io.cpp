#include <cstring>
#include <filesystem>
#include <limits>

#include "doctest.h"
#include "omnipose/error.hpp"
#include "omnipose/io.hpp"
#include "oracles.hpp"

using namespace omnipose;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("omnipose_test_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

const char* kGt = R"({
  "categories": [{"id": 1, "name": "person", "keypoints": ["a", "b"], "k_i": [0.1, 0.2]}],
  "images": [{"id": 3, "width": 64, "height": 48}],
  "annotations": [
    {"id": 1, "image_id": 3, "keypoints": [1.5, 2, 2, 0, 0, 0], "area": 100, "head_size": 8}
  ]
})";

}  // namespace

TEST_CASE("tensor files round-trip") {
  oracle::Rng rng(81);
  Tensor t = rng.tensor({2, 3, 4}, -1e3, 1e3);
  t[0] = std::numeric_limits<double>::denorm_min();
  t[1] = -0.0;
  t[2] = 1.0 / 3.0;
  const Tensor back = io::decode_tensor(io::encode_tensor(t));
  REQUIRE(back.shape() == t.shape());
  CHECK(std::memcmp(back.data().data(), t.data().data(), t.size() * sizeof(double)) == 0);

  const Tensor narrow = io::decode_tensor(io::encode_tensor(t, io::DType::f32));
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(narrow[i] == static_cast<double>(static_cast<float>(t[i])));

  const fs::path dir = scratch_dir("tensor");
  io::write_tensor(dir / "nested" / "t.omt", t);
  CHECK(io::read_tensor(dir / "nested" / "t.omt") == t);
}

TEST_CASE("malformed tensor files name the byte offset") {
  const std::string good = io::encode_tensor(Tensor({2, 2}, 1.0));
  CHECK(error_of([&] { io::decode_tensor("OMNI", "x.omt"); }).find("x.omt: malformed tensor file at byte 4") == 0);
  std::string bad_magic = good;
  bad_magic[3] = 'X';
  CHECK(error_of([&] { io::decode_tensor(bad_magic); }).find("at byte 0") != std::string::npos);
  const std::string truncated = good.substr(0, good.size() - 3);
  const std::size_t payload_at = good.size() - 32;
  CHECK(error_of([&] { io::decode_tensor(truncated); }).find("at byte " + std::to_string(payload_at + 29)) !=
        std::string::npos);
  std::string bad_header = good;
  bad_header.replace(12, 1, "[");
  CHECK(error_of([&] { io::decode_tensor(bad_header); }).find("at byte 20") != std::string::npos);
  CHECK_THROWS_AS(io::decode_tensor(good + "x"), IoError);
  CHECK_THROWS_AS(io::read_tensor("/nonexistent/file.omt"), IoError);
  CHECK_THROWS_AS(io::dtype_from_string("f16"), ConfigError);
}

TEST_CASE("keypoint files parse and round-trip") {
  const io::KeypointFile f = io::parse_keypoint_file(kGt, io::FileRole::ground_truth);
  REQUIRE(f.annotations.size() == 1);
  CHECK(f.num_keypoints() == 2);
  CHECK(*f.categories[0].k == std::vector<double>{0.1, 0.2});
  CHECK(f.images[0].width == 64);
  const PoseAnnotation& a = f.annotations[0];
  CHECK(a.image_id == 3);
  CHECK(a.keypoints[0].x == 1.5);
  CHECK(a.keypoints[1].v == 0);
  CHECK(*a.area == 100.0);
  CHECK(*a.head_size == 8.0);

  const io::KeypointFile again = io::parse_keypoint_file(io::serialize_keypoint_file(f), io::FileRole::ground_truth);
  CHECK(io::serialize_keypoint_file(again) == io::serialize_keypoint_file(f));
}

TEST_CASE("keypoint schema errors name the field") {
  auto err = [](const std::string& text, io::FileRole role = io::FileRole::ground_truth) {
    return error_of([&] { io::parse_keypoint_file(text, role); });
  };
  const std::string cats = R"("categories": [{"keypoints": ["a"]}])";
  CHECK(err("{" + cats + R"(, "annotations": [{"id": 1, "image_id": 1, "keypoints": [1, 2]}]})") ==
        "annotations[0].keypoints: expected 3 values (3 per keypoint), got 2");
  CHECK(err("{" + cats + R"(, "annotations": [{"id": 1, "image_id": 1, "keypoints": [1, 2, 3]}]})") ==
        "annotations[0].keypoints[2]: visibility must be 0, 1 or 2");
  CHECK(err("{" + cats + R"(, "annotations": [{"id": 1, "keypoints": [1, 2, 1]}]})") ==
        "annotations[0].image_id: required field is missing");
  CHECK(err("{" + cats + R"(, "annotations": [{"id": 1, "image_id": 1, "keypoints": [1, 2, 1], "pose": 1}]})")
            .find("annotations[0].pose") == 0);
  CHECK(err("{" + cats + R"(, "annotations": [{"id": 1, "image_id": 1, "keypoints": [1, 2, 1], "score": 0.5}]})") ==
        "annotations[0].score: ground truth must not carry a score");
  CHECK(err("{" + cats + R"(, "annotations": [{"id": 1, "image_id": 1, "keypoints": [1, 2, 1]}]})",
            io::FileRole::prediction) == "annotations[0].score: predictions require a score");
  CHECK(err("{" + cats + R"(, "annotations": [{"id": 1, "image_id": 1, "keypoints": [1, 2, 1], "area": 0}]})") ==
        "annotations[0].area: area must be positive");
  CHECK(err(R"({"annotations": []})") == "categories: required field is missing");
  CHECK(err("{\n  \"categories\": [,]\n}").find("keypoint file:2:") == 0);
  CHECK_THROWS_AS(io::parse_keypoint_file("[]", io::FileRole::ground_truth), SchemaError);

  const fs::path dir = scratch_dir("schema");
  io::write_file(dir / "gt.json", R"({"categories": [{"keypoints": ["a"]}], "annotations": 5})");
  CHECK(error_of([&] { io::read_keypoint_file(dir / "gt.json", io::FileRole::ground_truth); })
            .find((dir / "gt.json").string() + ": annotations") == 0);
}

TEST_CASE("default keypoint names") {
  CHECK(io::default_keypoint_names(16)[9] == "head_top");
  CHECK(io::default_keypoint_names(17)[0] == "nose");
  CHECK(io::default_keypoint_names(2) == std::vector<std::string>{"joint_0", "joint_1"});
}

TEST_CASE("model configs round-trip and reject bad fields") {
  model::ModelConfig cfg = model::default_config(8);
  cfg.seed = 99;
  cfg.wasp.fusion = wasp::Fusion::add;
  cfg.wasp.llf_channels = cfg.wasp.branch_channels;
  cfg.backbone.lite = true;
  const std::string text = io::serialize_model_config(cfg);
  CHECK(io::serialize_model_config(io::parse_model_config(text)) == text);
  CHECK(io::parse_model_config("{}").wasp.dilations == std::vector<std::size_t>{1, 6, 12, 18});
  CHECK(error_of([] { io::parse_model_config(R"({"wasp": {"dilations": [1, "x"]}})"); }).find("wasp.dilations[1]") !=
        std::string::npos);
  CHECK_THROWS_AS(io::parse_model_config(R"({"wasp": {"branch_channels": 47}})"), SchemaError);
  CHECK_THROWS_AS(io::parse_model_config(R"({"backbone": {"depth": 3}})"), SchemaError);
}

TEST_CASE("layer lists") {
  const auto layers = io::parse_layer_list(R"({"layers": [
    {"name": "c", "mode": "separable", "in_channels": 48, "kernel": 3, "output_size": [16, 16]},
    {"kind": "transposed_conv", "in_channels": 8, "out_channels": 4, "kernel": 4, "bias": true,
     "input_size": [4, 4], "output_size": [8, 8]}
  ]})");
  REQUIRE(layers.size() == 2);
  CHECK(layers[0].mode == ConvMode::separable);
  CHECK(layers[0].out_channels == 48);
  CHECK(layers[0].in_size == Hw{16, 16});
  CHECK(layers[1].kind == cost::LayerKind::transposed_conv);
  CHECK(layers[1].name == "layer1");
  CHECK_THROWS_AS(io::parse_layer_list(R"({"layers": [{"kind": "pool", "in_channels": 1, "output_size": [1, 1]}]})"),
                  SchemaError);
}

TEST_CASE("OKS configs") {
  const auto cfg = io::parse_oks_config(R"({"k_i": [0.1, 0.2], "large": [100, null]})");
  CHECK(cfg.k == std::vector<double>{0.1, 0.2});
  CHECK(cfg.thresholds.size() == 10);
  CHECK(std::isinf(cfg.large.hi));
  CHECK(cfg.large.lo == 100.0);
  CHECK_THROWS_AS(io::parse_oks_config(R"({"thresholds": [0.5]})"), SchemaError);
  CHECK_THROWS_AS(io::parse_oks_config(R"({"k": [0.1], "thresholds": [1.5]})"), SchemaError);
}

TEST_CASE("weights round-trip through a directory") {
  model::ModelConfig cfg;
  cfg.input_size = {32, 32};
  cfg.wasp.num_joints = 2;
  cfg.wasp.dilations = {1, 2};
  cfg.wasp.branch_channels = 4;
  cfg.wasp.llf_channels = 3;
  cfg.backbone.stem_channels = 4;
  cfg.backbone.branches = {{4, 4}, {6, 8}};
  const model::Model m = model::make_model(cfg);
  const fs::path dir = scratch_dir("weights");
  io::write_weights(dir, m);
  model::Model loaded = model::make_model(cfg, model::Init::zeros);
  io::read_weights(dir, loaded);
  model::for_each_parameter(loaded, [&](const std::string& name, const Tensor& t) {
    CAPTURE(name);
    CHECK(t == io::read_tensor(dir / (name + ".omt")));
  });
  const Tensor in = Tensor({1, 3, 32, 32}, 0.25);
  CHECK(model::forward(loaded, in) == model::forward(m, in));

  fs::remove(dir / "wasp.head.bias.omt");
  CHECK_THROWS_AS(io::read_weights(dir, loaded), IoError);
  io::write_tensor(dir / "wasp.head.bias.omt", Tensor({3}));
  CHECK(error_of([&] { io::read_weights(dir, loaded); }).find("has shape") != std::string::npos);
}

TEST_CASE("shipped configs parse") {
  const fs::path dir = OMNIPOSE_CONFIG_DIR;
  CHECK(io::read_model_config(dir / "default_model.json").wasp.dilations == std::vector<std::size_t>{1, 6, 12, 18});
  CHECK(io::read_model_config(dir / "lite_model.json").backbone.lite);
  CHECK_NOTHROW(io::read_model_config(dir / "toy_model.json").validate());
  CHECK(io::parse_oks_config(io::read_file(dir / "coco_oks.json")).k == metrics::coco_falloff_constants());
  CHECK(io::parse_layer_list(io::read_file(dir / "wasp_atrous_layers.json")).size() == 4);
}
