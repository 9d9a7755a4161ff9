#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "opsdl/nn/model.hpp"
#include "opsdl/taskgen/corpus.hpp"

// Brute-force reference computations. Everything here runs in f64 and uses
// only the public forward/scoring API of nn.
namespace opsdl::oracle {

using nn::ModelState;
using nn::TokenSeq;

inline constexpr std::size_t kEnumerationBudget = 4096;

// Copy of `state` whose compute dtype is f64.
ModelState as_f64(const ModelState& state);

using Objective = std::function<double(const ModelState&)>;

// Central differences (f(θ+h·e_i) − f(θ−h·e_i)) / 2h for every parameter.
// Throws NumericError when the objective is non-finite at a probe point.
std::vector<double> finite_diff_grad(const ModelState& state, const Objective& f, double step);

struct KlGrad {
  double kl = 0.0;
  std::vector<double> grad;
};

// KL(π(·|long_prefix) ‖ π(·|short_prefix)) by summing over the vocabulary,
// the second distribution held constant at the current parameters; the
// gradient is finite differences of that enumeration.
KlGrad exact_pointwise_rkl_grad(const ModelState& state, const TokenSeq& long_prefix,
                                const TokenSeq& short_prefix, double step = 1e-5);

// Two-term KL between explicit distributions; used for hand checks.
double kl_divergence(const std::vector<double>& q, const std::vector<double>& p);

struct McCheck {
  std::vector<double> mc_grad_mean;
  std::vector<double> mc_grad_stderr;
  std::vector<double> exact_grad;
  double max_z = 0.0;
  std::size_t worst_param = 0;
  std::size_t n_samples = 0;
};

// Samples y ~ π(·|C_L,Q,prefix) and averages −A·∇log π(y|C_L,Q,prefix) with
// A = log π(y|C_S,Q,prefix) − log π(y|C_L,Q,prefix), against the enumerated
// gradient. z uses sqrt(stderr² + fd_tol²) so coordinates with zero sampling
// variance are compared at the finite-difference resolution.
McCheck mc_estimator_check(const ModelState& state, const taskgen::Triplet& triplet,
                           const TokenSeq& prefix, std::size_t n_samples, std::uint64_t seed,
                           double fd_tol = 1e-7);

// Sequence-level KL(π(y|C_L,Q) ‖ π_teacher(y|C_S,Q)) over every response the
// sampler can produce: sequences that stop at EOS or at max_new tokens.
// Throws ConfigError when vocab_size^max_new exceeds kEnumerationBudget.
double enumerate_sequence_rkl(const ModelState& state, const taskgen::Triplet& triplet,
                              std::size_t max_new, nn::TokenId eos);
double enumerate_sequence_rkl(const ModelState& student, const ModelState& teacher,
                              const taskgen::Triplet& triplet, std::size_t max_new,
                              nn::TokenId eos);

// Every response enumerate_sequence_rkl visits, in depth-first order.
std::vector<TokenSeq> enumerate_responses(std::size_t vocab_size, std::size_t max_new,
                                          nn::TokenId eos);

// A model and triplet small enough to enumerate every response: vocab 8,
// ids 1..7 in the contexts, EOS = 0, max_new 3.
struct EnumerableSetup {
  ModelState state;
  taskgen::Triplet triplet;
  std::size_t max_new = 3;
  nn::TokenId eos = 0;
};
EnumerableSetup make_enumerable_setup(std::uint64_t seed,
                                      nn::PosEncoding pos = nn::PosEncoding::rotary);

struct GradCheck {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t draws = 0;
  std::size_t n_params = 0;
};

// weighted_nll_grad against central differences on `draws` random
// (state, context, response, weights) draws; relative error uses a 1e-5 floor.
GradCheck grad_check(std::uint64_t seed, std::size_t draws);

struct EstimatorCheck {
  double max_z = 0.0;
  std::size_t states = 0;
  std::size_t n_samples = 0;
};

// mc_estimator_check on `states` random enumerable setups.
EstimatorCheck estimator_check(std::uint64_t seed, std::size_t states, std::size_t n_samples);

}  // namespace opsdl::oracle
