#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "opsdl/nn/model.hpp"

namespace opsdl::nn {

// A response drawn from the model, with the untempered log-probabilities of
// each drawn token taken from the same forward passes.
struct Rollout {
  std::string triplet_id;
  TokenSeq response;
  std::vector<double> student_logps;
  bool ended_with_eos = false;
  std::uint64_t seed = 0;
};

struct SampleOptions {
  std::size_t max_new = 1;
  double temperature = 1.0;
  bool greedy = false;  // argmax decoding; lowest id wins ties
  std::optional<TokenId> eos;
  std::uint64_t seed = 0;
};

Rollout sample_response(const ModelState& state, std::span<const TokenId> context,
                        const SampleOptions& options);

}  // namespace opsdl::nn
