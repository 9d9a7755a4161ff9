#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "opsdl/nn/model.hpp"
#include "opsdl/taskgen/corpus.hpp"

namespace opsdl::eval {

using nn::ModelState;
using nn::TokenSeq;
using taskgen::CorpusConfig;
using taskgen::Triplet;

struct EvalConfig {
  std::vector<std::size_t> context_lengths = {64, 128, 256, 512};
  std::size_t n_examples_per_length = 100;
  std::size_t max_new = 2;
  std::uint64_t seed = 0;

  // Throws ConfigError; with a model window, also LengthError when a length
  // plus query and answer would not fit.
  void validate() const;
  void validate(const nn::ModelConfig& model, const CorpusConfig& corpus) const;
};

// Corpus seed used for the examples of one length. Disjoint from every
// training seed the caller declares (see check_held_out).
std::uint64_t eval_seed(const EvalConfig& cfg, std::size_t length);

// Throws DataError when an evaluation corpus seed equals a training seed.
void check_held_out(const EvalConfig& cfg, const std::vector<std::uint64_t>& training_seeds);

// The evaluation examples for `length`, in index order.
std::vector<Triplet> eval_examples(const CorpusConfig& corpus, const taskgen::Vocabulary& vocab,
                                   const EvalConfig& cfg, std::size_t length);

// Exact token match: the gold answer followed by EOS.
bool exact_match(const TokenSeq& response, const TokenSeq& gold, nn::TokenId eos);

struct LengthResult {
  std::size_t length = 0;
  std::size_t n_examples = 0;
  std::size_t n_correct = 0;
  double accuracy = 0.0;
  double mean_rkl = 0.0;  // −mean A_t over greedy responses at this length
  std::size_t n_tokens = 0;
};

struct EvalReport {
  std::vector<LengthResult> lengths;
  double mean_rkl = 0.0;  // token-weighted over all lengths
  std::size_t n_examples = 0;
  std::string decode = "greedy";
  std::size_t max_new = 2;
  std::uint64_t seed = 0;
  std::string checkpoint_id;

  std::vector<std::size_t> axis() const;
  double accuracy_at(std::size_t length) const;  // throws ShapeError when absent
};

std::string report_to_json(const EvalReport& r);
EvalReport report_from_json(std::string_view text);

// Stable content hash of the parameters, as 16 hex digits.
std::string checkpoint_fingerprint(const ModelState& state);

// Maps a student prompt (C_L ++ Q) to a response. Defaults to greedy decoding
// with the model; tests substitute synthetic decoders.
using Decoder = std::function<TokenSeq(const Triplet&, const TokenSeq& prompt)>;

EvalReport eval_retrieval(const ModelState& state, const CorpusConfig& corpus,
                          const EvalConfig& cfg, const Decoder& decoder = {});

// Accuracy at corpus.short_len, on the same examples eval_retrieval uses for
// that length.
double eval_short(const ModelState& state, const CorpusConfig& corpus, const EvalConfig& cfg,
                  const Decoder& decoder = {});

struct Preservation {
  double short_acc_before = 0.0;
  double short_acc_after = 0.0;
  double delta = 0.0;  // after − before
};

Preservation preservation_report(const ModelState& before, const ModelState& after,
                                 const CorpusConfig& corpus, const EvalConfig& cfg);
std::string preservation_csv(const Preservation& p);
Preservation preservation_from_csv(std::string_view text);

// Header: length,acc_base,acc_ours,acc_sft,delta_ours,delta_sft
inline constexpr const char* kCompareHeader = "length,acc_base,acc_ours,acc_sft,delta_ours,delta_sft";

struct CompareRow {
  std::size_t length = 0;
  double acc_base = 0.0, acc_ours = 0.0, acc_sft = 0.0;
  double delta_ours = 0.0, delta_sft = 0.0;
};

// Throws ShapeError when the reports do not share a length axis.
std::vector<CompareRow> length_sweep_compare(const EvalReport& base, const EvalReport& ours,
                                             const EvalReport& sft);
std::string compare_csv(const std::vector<CompareRow>& rows);

}  // namespace opsdl::eval
