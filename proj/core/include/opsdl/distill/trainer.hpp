#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "opsdl/distill/advantage.hpp"
#include "opsdl/nn/transformer.hpp"

namespace opsdl::distill {

struct DistillConfig {
  std::size_t rollouts_per_triplet = 1;
  std::size_t batch_triplets = 8;
  std::size_t max_new = 2;
  double temperature = 1.0;
  double lr = 1e-3;
  std::optional<double> advantage_clip;
  std::size_t steps = 100;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0: no periodic checkpoints
  // Start the run with zeroed Adam moments instead of those in the checkpoint.
  bool reset_optimizer = true;

  void validate() const;  // throws ConfigError
};

struct StepStats {
  std::size_t step = 0;
  double mean_advantage = 0.0;
  double mean_abs_advantage = 0.0;
  double mean_rkl_estimate = 0.0;  // −mean A_t
  double loss = 0.0;
  double grad_norm = 0.0;
  double fraction_positive_adv = 0.0;
  double fraction_negative_adv = 0.0;
  double fraction_near_zero_adv = 0.0;
  double response_len = 0.0;  // mean over rollouts
  std::size_t n_tokens = 0;
  std::size_t empty_rollouts = 0;  // responses that are a lone EOS
};

std::string stats_csv_header();
std::string stats_csv_row(const StepStats& s);

// −Σ_t A_t·log π_θ(y_t | C_L, Q, y_<t); A_t is a constant, the student
// log-probs inside the loss are recomputed from `state`.
nn::LossGrad pg_loss_and_grad(const ModelState& state, const Triplet& triplet,
                              const Rollout& rollout, const AdvantageVector& adv);

// Seed of rollout r for batch slot b at iteration `iteration`.
std::uint64_t rollout_seed(std::uint64_t root, std::size_t iteration, std::size_t b, std::size_t r);

struct TrainHooks {
  // Test-only: score the teacher with this fixed state instead of the
  // current parameters.
  const ModelState* frozen_teacher = nullptr;
  std::function<void(const StepStats&, const ModelState&)> on_step;
  std::function<void(std::size_t step, const ModelState&)> on_checkpoint;
};

struct StepResult {
  ModelState state;
  StepStats stats;
};

// One OPSDL iteration: rollouts under (C_L, Q) from `state`, teacher and
// student scored with that same `state`, one Adam step on the averaged PG
// gradient. `iteration` selects the rollout random streams.
StepResult train_step(const ModelState& state, const DistillConfig& cfg,
                      std::span<const Triplet> batch, nn::TokenId eos, std::size_t iteration,
                      const TrainHooks& hooks = {});

struct TrainResult {
  ModelState state;
  std::vector<StepStats> log;
};

// cfg.steps iterations over batches drawn from a cfg.seed-derived shuffle.
TrainResult train(ModelState state, const DistillConfig& cfg, std::span<const Triplet> corpus,
                  nn::TokenId eos, const TrainHooks& hooks = {});

// --- Long-SFT baseline -----------------------------------------------------

struct SftExample {
  TokenSeq context;  // C_L ++ Q
  TokenSeq target;   // fixed response, EOS included
};

// Teacher greedy decodes under (C_S, Q), produced once from `state`.
std::vector<SftExample> make_sft_targets(const ModelState& state,
                                         std::span<const Triplet> corpus, nn::TokenId eos,
                                         std::size_t max_new);

// Unit-weight NLL on the targets, averaged over the batch; one Adam step.
StepResult sft_step(const ModelState& state, const DistillConfig& cfg,
                    std::span<const SftExample> batch, std::size_t iteration);

TrainResult train_sft(ModelState state, const DistillConfig& cfg,
                      std::span<const SftExample> examples, const TrainHooks& hooks = {});

}  // namespace opsdl::distill
