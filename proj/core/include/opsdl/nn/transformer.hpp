#pragma once

#include <span>
#include <vector>

#include "opsdl/nn/model.hpp"

namespace opsdl::nn {

// Natural-log next-token distribution over the vocabulary.
using LogProbRow = std::vector<double>;

// Row t is log π(· | tokens[0..t]). Rows are bitwise independent of tokens
// after position t.
std::vector<LogProbRow> forward_logprobs(const ModelState& state, std::span<const TokenId> tokens);

// Rows for the requested positions only (ascending, each < tokens.size()).
// Identical bits to the matching rows of forward_logprobs.
std::vector<LogProbRow> forward_logprob_rows(const ModelState& state,
                                             std::span<const TokenId> tokens,
                                             std::span<const std::size_t> rows);

// Teacher-forced per-token log π(response[t] | context, response[0..t)).
std::vector<double> score_response(const ModelState& state, std::span<const TokenId> context,
                                   std::span<const TokenId> response);

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;  // congruent with ModelState::params
};

// loss = −Σ_t weights[t]·log π(response[t] | context, response[0..t)) and its
// exact gradient. Weights are constants.
LossGrad weighted_nll_grad(const ModelState& state, std::span<const TokenId> context,
                           std::span<const TokenId> response, std::span<const double> weights);

// Same objective, but adds scale·∇loss into `grad` and returns scale·loss.
// Lets batch loops accumulate without reallocating.
double accumulate_weighted_nll_grad(const ModelState& state, std::span<const TokenId> context,
                                    std::span<const TokenId> response,
                                    std::span<const double> weights, double scale,
                                    std::span<double> grad);

}  // namespace opsdl::nn
