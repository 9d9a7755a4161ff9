#include "opsdl/nn/sampling.hpp"

#include <cmath>

#include "opsdl/error.hpp"
#include "opsdl/nn/transformer.hpp"
#include "opsdl/rng.hpp"

namespace opsdl::nn {

Rollout sample_response(const ModelState& state, std::span<const TokenId> context,
                        const SampleOptions& options) {
  if (!options.greedy && !(options.temperature > 0.0))
    throw ConfigError("temperature must be > 0");
  if (context.empty()) throw LengthError("context must hold at least one token", 1);
  if (context.size() + options.max_new > state.config.max_seq_len)
    throw LengthError("context plus max_new exceeds the model window", state.config.max_seq_len);

  Rollout out;
  out.seed = options.seed;
  Rng rng(options.seed);
  TokenSeq seq(context.begin(), context.end());
  const std::size_t V = state.config.vocab_size;
  std::vector<double> probs(V);

  for (std::size_t n = 0; n < options.max_new; ++n) {
    const std::size_t last = seq.size() - 1;
    const auto rows = forward_logprob_rows(state, seq, std::span<const std::size_t>(&last, 1));
    const LogProbRow& row = rows.front();

    std::size_t pick = 0;
    if (options.greedy) {
      for (std::size_t i = 1; i < V; ++i)
        if (row[i] > row[pick]) pick = i;
    } else {
      double mx = row[0] / options.temperature;
      for (std::size_t i = 1; i < V; ++i) mx = std::max(mx, row[i] / options.temperature);
      for (std::size_t i = 0; i < V; ++i) probs[i] = std::exp(row[i] / options.temperature - mx);
      pick = rng.categorical(std::span<const double>(probs));
    }
    const auto id = static_cast<TokenId>(pick);
    out.response.push_back(id);
    out.student_logps.push_back(row[pick]);
    seq.push_back(id);
    if (options.eos && id == *options.eos) {
      out.ended_with_eos = true;
      break;
    }
  }
  return out;
}

}  // namespace opsdl::nn
