#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "opsdl/distill/pretrain.hpp"
#include "opsdl/distill/trainer.hpp"
#include "opsdl/eval/harness.hpp"
#include "opsdl/nn/model.hpp"
#include "opsdl/taskgen/corpus.hpp"

namespace opsdl::cli {

enum class Mode { pretrain_short, opsdl, long_sft, eval, compare };
std::string to_string(Mode m);
Mode parse_mode(const std::string& s);

struct Paths {
  std::string corpus = "corpus";         // relative to --out unless absolute
  std::string checkpoints = "checkpoints";
  std::string metrics = "metrics";
  std::string init;  // checkpoint `train` starts from; default: pretrain output
};

// One run description. Sub-stream seeds (data, init, pretrain, rollout, eval)
// are all derived from `seed`; seeds written in the sections are ignored.
struct RunConfig {
  std::string run_id = "run";
  Mode mode = Mode::opsdl;
  std::uint64_t seed = 0;
  nn::ModelConfig model;  // vocab_size 0 means "take it from the corpus vocabulary"
  taskgen::CorpusConfig corpus;
  distill::PretrainConfig pretrain;
  distill::DistillConfig distill;
  eval::EvalConfig eval;
  Paths paths;

  // Applies the derived seeds and vocabulary size, then validates.
  void resolve();
};

RunConfig parse_run_config(std::string_view json_text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string run_config_to_json(const RunConfig& c);

std::string model_config_to_json(const nn::ModelConfig& m);

}  // namespace opsdl::cli
