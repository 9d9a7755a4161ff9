#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "opsdl/distill/trainer.hpp"
#include "opsdl/taskgen/corpus.hpp"

namespace opsdl::distill {

// Supervised retrieval training on contexts no longer than corpus.short_len.
// It manufactures the short/long asymmetry OPSDL starts from.
struct PretrainConfig {
  std::size_t steps = 3000;
  std::size_t batch = 16;
  double lr = 3e-3;
  std::size_t warmup = 0;           // linear warmup steps
  std::size_t min_len = 16;         // document length drawn in [min_len, short_len]
  std::size_t queries_per_doc = 1;  // extra questions appended after the first answer
  std::uint64_t seed = 0;
  // Gate checked by the caller: short accuracy >= gate_short_acc and the
  // longest eval length at least gate_min_gap below it.
  double gate_short_acc = 0.90;
  double gate_min_gap = 0.20;

  void validate(const taskgen::CorpusConfig& corpus) const;
};

struct PretrainStats {
  std::size_t step = 0;
  double loss = 0.0;  // mean answer-token NLL
  double grad_norm = 0.0;
  double lr = 0.0;
};

std::string pretrain_csv_header();
std::string pretrain_csv_row(const PretrainStats& s);

// Example `index` of pretraining step `step`: a fresh document of random
// length with (context ++ first query, response, weights) where the response
// carries each answer followed by EOS and further questions at weight 0.
struct PretrainExample {
  TokenSeq context;
  TokenSeq response;
  std::vector<double> weights;
};
PretrainExample pretrain_example(const taskgen::CorpusConfig& corpus,
                                 const taskgen::Vocabulary& vocab, const PretrainConfig& cfg,
                                 std::size_t step, std::size_t index);

struct PretrainResult {
  ModelState state;
  std::vector<PretrainStats> log;
};

PretrainResult pretrain_short(ModelState state, const taskgen::CorpusConfig& corpus,
                              const PretrainConfig& cfg,
                              const std::function<void(const PretrainStats&, const ModelState&)>&
                                  on_step = {});

}  // namespace opsdl::distill
