#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "omnipose/cost.hpp"
#include "omnipose/metrics.hpp"
#include "omnipose/model.hpp"
#include "omnipose/pose.hpp"
#include "omnipose/tensor.hpp"

namespace omnipose::io {

// ---- tensor files --------------------------------------------------------
//
// Layout: 8-byte magic "OMNITEN\0", u32 little-endian header length, UTF-8
// JSON header {"dtype": "f32"|"f64", "shape": [...]}, then the row-major
// little-endian payload.

enum class DType { f32, f64 };
std::string_view to_string(DType d);
DType dtype_from_string(std::string_view name);

std::string encode_tensor(const Tensor& t, DType dtype = DType::f64);
// `source` names the input in error messages, which also carry the byte offset.
Tensor decode_tensor(std::string_view bytes, std::string_view source = "<memory>");

void write_tensor(const std::filesystem::path& path, const Tensor& t, DType dtype = DType::f64);
Tensor read_tensor(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

// ---- keypoint files (COCO-style) -------------------------------------------

struct KeypointCategory {
  std::int64_t id = 1;
  std::string name = "person";
  std::vector<std::string> keypoints;
  std::optional<std::vector<double>> k;  // OKS falloff constants
};

struct ImageInfo {
  std::int64_t id = 0;
  std::size_t width = 0;
  std::size_t height = 0;
};

struct KeypointFile {
  std::vector<KeypointCategory> categories;
  std::vector<ImageInfo> images;
  std::vector<PoseAnnotation> annotations;

  std::size_t num_keypoints() const;
};

// Ground truth must not carry "score"; predictions must.
enum class FileRole { ground_truth, prediction };

KeypointFile parse_keypoint_file(std::string_view text, FileRole role);
KeypointFile read_keypoint_file(const std::filesystem::path& path, FileRole role);
std::string serialize_keypoint_file(const KeypointFile& file);
void write_keypoint_file(const std::filesystem::path& path, const KeypointFile& file);

// MPII names for 16 joints, COCO names for 17, "joint_<i>" otherwise.
std::vector<std::string> default_keypoint_names(std::size_t k);

// ---- configuration -------------------------------------------------------

model::ModelConfig parse_model_config(std::string_view text);
model::ModelConfig read_model_config(const std::filesystem::path& path);
std::string serialize_model_config(const model::ModelConfig& cfg);

// {"layers": [{"name", "kind", "mode", "in_channels", "out_channels",
//   "kernel", "bias", "input_size": [h, w], "output_size": [h, w]}, ...]}
std::vector<cost::LayerSpec> parse_layer_list(std::string_view text);

// {"k": [...], "thresholds": [...], "medium": [lo, hi], "large": [lo, hi|null]}
metrics::OksConfig parse_oks_config(std::string_view text);

// ---- weights -------------------------------------------------------------

// One "<parameter name>.omt" file per parameter tensor.
void write_weights(const std::filesystem::path& dir, const model::Model& model);
void read_weights(const std::filesystem::path& dir, model::Model& model);

}  // namespace omnipose::io
