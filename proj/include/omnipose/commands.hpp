#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

#include "omnipose/heatmap.hpp"
#include "omnipose/io.hpp"

// The command-line surface as plain functions. Each returns the process exit
// code; structural problems (I/O, schema, configuration) are thrown.
namespace omnipose::cli {

namespace fs = std::filesystem;

/// Paths and knobs shared by the commands. Every path that is set must exist
/// when validate() runs, except outputs.
struct RunConfig {
  std::optional<fs::path> model_config;
  std::optional<fs::path> weights_dir;
  std::optional<fs::path> oks_config;
  std::optional<std::uint64_t> seed;  // overrides the model config's seed
  codec::Refinement refinement = codec::Refinement::taylor;
  fs::path output;

  void validate() const;
};

struct InferOptions {
  RunConfig run;
  fs::path input;      // tensor file or directory of *.omt
  bool zero_init = false;  // ignored when weights_dir is set
  io::DType dtype = io::DType::f64;
};
// Writes <stem>.heatmaps.omt and <stem>.keypoints.json per input into run.output.
int cmd_infer(const InferOptions& options, std::ostream& out);

struct CodecOptions {
  fs::path input;
  fs::path output;
  std::size_t stride = 4;
  double sigma = 3.0;
  double offset_x = 0.0;
  double offset_y = 0.0;
  std::optional<std::size_t> height;  // heatmap size; defaults from the image size
  std::optional<std::size_t> width;
  codec::Refinement refinement = codec::Refinement::taylor;
  std::optional<fs::path> like;  // decode: gt file supplying image ids and names
  io::DType dtype = io::DType::f64;
};
// gt KeypointFile -> <output>/<annotation id>.omt
int cmd_encode(const CodecOptions& options, std::ostream& out);
// heatmap file or directory -> prediction KeypointFile at <output>
int cmd_decode(const CodecOptions& options, std::ostream& out);

enum class Metric { pckh, oks_ap };
Metric metric_from_string(std::string_view name);

struct EvalOptions {
  fs::path predictions;
  fs::path ground_truth;
  Metric metric = Metric::pckh;
  double alpha = 0.5;
  std::optional<fs::path> oks_config;
  std::optional<fs::path> json_output;
  bool json_to_stdout = false;
};
int cmd_eval(const EvalOptions& options, std::ostream& out);

struct CountOptions {
  fs::path config;  // model config or {"layers": [...]}
  std::optional<Hw> input_size;
  std::optional<fs::path> json_output;
  bool json_to_stdout = false;
};
int cmd_count(const CountOptions& options, std::ostream& out);

// Built-in oracle, gradient and round-trip checks. Returns the failure count.
int cmd_selftest(std::ostream& out, bool verbose = false);

}  // namespace omnipose::cli
