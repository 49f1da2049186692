#include <iostream>

#include "CLI11.hpp"
#include "omnipose/commands.hpp"
#include "omnipose/error.hpp"

namespace {

using namespace omnipose;

const std::vector<std::string> kRefinements{"none", "quarter_offset", "taylor"};
const std::vector<std::string> kDTypes{"f32", "f64"};

void add_codec_flags(CLI::App* cmd, cli::CodecOptions& o) {
  cmd->add_option("--stride", o.stride, "Heatmap stride in image pixels")->required()->check(CLI::PositiveNumber);
  cmd->add_option("--sigma", o.sigma, "Gaussian standard deviation in heatmap pixels")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  cmd->add_option("--offset-x", o.offset_x, "Heatmap-to-image x offset")->capture_default_str();
  cmd->add_option("--offset-y", o.offset_y, "Heatmap-to-image y offset")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"OmniPose computational core: inference, heatmap coding, evaluation and cost counting"};
  app.require_subcommand(1);

  cli::InferOptions infer;
  std::optional<std::string> infer_model, infer_weights;
  std::optional<std::uint64_t> infer_seed;
  auto* c_infer = app.add_subcommand("infer", "Run the model on image tensor files");
  c_infer->add_option("input", infer.input, "Image tensor file or directory of .omt files")->required();
  c_infer->add_option("-o,--out", infer.run.output, "Output directory")->required();
  c_infer->add_option("--model", infer_model, "Model config JSON (default topology when omitted)");
  c_infer->add_option("--weights", infer_weights, "Directory of <parameter>.omt weight files");
  c_infer->add_option("--seed", infer_seed, "Initialization seed (overrides the config)");
  c_infer->add_flag("--zero-init", infer.zero_init, "Zero all parameters instead of seeded init");
  std::string infer_refine = "taylor", infer_dtype = "f64";
  c_infer->add_option("--refine", infer_refine, "Sub-pixel refinement")->check(CLI::IsMember(kRefinements))->capture_default_str();
  c_infer->add_option("--dtype", infer_dtype, "Heatmap file precision")->check(CLI::IsMember(kDTypes))->capture_default_str();

  cli::CodecOptions encode;
  std::optional<std::size_t> enc_h, enc_w;
  auto* c_encode = app.add_subcommand("encode", "Render ground-truth keypoints as heatmap tensors");
  c_encode->add_option("input", encode.input, "Ground-truth keypoint JSON")->required()->check(CLI::ExistingFile);
  c_encode->add_option("-o,--out", encode.output, "Output directory")->required();
  add_codec_flags(c_encode, encode);
  c_encode->add_option("--height", enc_h, "Heatmap height (default: image height / stride)");
  c_encode->add_option("--width", enc_w, "Heatmap width (default: image width / stride)");
  std::string encode_dtype = "f64";
  c_encode->add_option("--dtype", encode_dtype, "Tensor precision")->check(CLI::IsMember(kDTypes))->capture_default_str();

  cli::CodecOptions decode;
  std::optional<std::string> dec_like;
  auto* c_decode = app.add_subcommand("decode", "Decode heatmap tensors into a prediction file");
  c_decode->add_option("input", decode.input, "Heatmap tensor file or directory")->required();
  c_decode->add_option("-o,--out", decode.output, "Prediction keypoint JSON")->required();
  add_codec_flags(c_decode, decode);
  std::string decode_refine = "taylor";
  c_decode->add_option("--refine", decode_refine, "Sub-pixel refinement")->check(CLI::IsMember(kRefinements))->capture_default_str();
  c_decode->add_option("--like", dec_like, "Ground-truth file supplying image ids and keypoint names")
      ->check(CLI::ExistingFile);

  cli::EvalOptions eval;
  std::string metric = "pckh";
  std::optional<std::string> eval_oks, eval_json;
  std::string eval_format = "table";
  auto* c_eval = app.add_subcommand("eval", "Score predictions against ground truth");
  c_eval->add_option("predictions", eval.predictions, "Prediction keypoint JSON")->required()->check(CLI::ExistingFile);
  c_eval->add_option("ground_truth", eval.ground_truth, "Ground-truth keypoint JSON")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--metric", metric, "pckh or oks-ap")->check(CLI::IsMember({"pckh", "oks-ap"}))->capture_default_str();
  c_eval->add_option("--alpha", eval.alpha, "PCKh threshold as a fraction of head size (presets 0.5, 0.2)")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  c_eval->add_option("--oks-config", eval_oks, "OKS config JSON")->check(CLI::ExistingFile);
  c_eval->add_option("--json", eval_json, "Also write the report as JSON to this path");
  c_eval->add_option("--format", eval_format, "stdout format")->check(CLI::IsMember({"table", "json"}))->capture_default_str();

  cli::CountOptions count;
  std::vector<std::size_t> count_size;
  std::optional<std::string> count_json;
  std::string count_format = "table";
  auto* c_count = app.add_subcommand("count", "Count parameters and FLOPs");
  c_count->add_option("config", count.config, "Model config or {\"layers\": [...]} JSON")->required()->check(CLI::ExistingFile);
  c_count->add_option("--input-size", count_size, "Input height and width")->expected(2);
  c_count->add_option("--json", count_json, "Also write the report as JSON to this path");
  c_count->add_option("--format", count_format, "stdout format")->check(CLI::IsMember({"table", "json"}))->capture_default_str();

  bool verbose = false;
  auto* c_self = app.add_subcommand("selftest", "Run the built-in oracle, gradient and round-trip checks");
  c_self->add_flag("-v,--verbose", verbose, "List every check");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*c_infer) {
      if (infer_model) infer.run.model_config = *infer_model;
      if (infer_weights) infer.run.weights_dir = *infer_weights;
      infer.run.seed = infer_seed;
      infer.run.refinement = codec::refinement_from_string(infer_refine);
      infer.dtype = io::dtype_from_string(infer_dtype);
      return cli::cmd_infer(infer, std::cout);
    }
    if (*c_encode) {
      encode.height = enc_h;
      encode.width = enc_w;
      encode.dtype = io::dtype_from_string(encode_dtype);
      return cli::cmd_encode(encode, std::cout);
    }
    if (*c_decode) {
      if (dec_like) decode.like = *dec_like;
      decode.refinement = codec::refinement_from_string(decode_refine);
      return cli::cmd_decode(decode, std::cout);
    }
    if (*c_eval) {
      eval.metric = cli::metric_from_string(metric);
      if (eval_oks) eval.oks_config = *eval_oks;
      if (eval_json) eval.json_output = *eval_json;
      eval.json_to_stdout = eval_format == "json";
      return cli::cmd_eval(eval, std::cout);
    }
    if (*c_count) {
      if (!count_size.empty()) count.input_size = Hw{count_size[0], count_size[1]};
      if (count_json) count.json_output = *count_json;
      count.json_to_stdout = count_format == "json";
      return cli::cmd_count(count, std::cout);
    }
    if (*c_self) return cli::cmd_selftest(std::cout, verbose) == 0 ? 0 : 1;
  } catch (const SchemaError& e) {
    std::cerr << "schema error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
