#include "opsdl/distill/trainer.hpp"

#include <cmath>
#include <numeric>

#include "opsdl/error.hpp"
#include "opsdl/format.hpp"
#include "opsdl/nn/optimizer.hpp"
#include "opsdl/nn/sampling.hpp"
#include "opsdl/rng.hpp"

namespace opsdl::distill {

void DistillConfig::validate() const {
  if (rollouts_per_triplet == 0) throw ConfigError("rollouts_per_triplet must be >= 1");
  if (batch_triplets == 0) throw ConfigError("batch_triplets must be >= 1");
  if (max_new == 0) throw ConfigError("max_new must be >= 1");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (advantage_clip && !(*advantage_clip > 0.0)) throw ConfigError("advantage_clip must be > 0");
}

std::string stats_csv_header() {
  return "step,mean_advantage,mean_abs_advantage,mean_rkl_estimate,loss,grad_norm,"
         "fraction_positive_adv,fraction_negative_adv,fraction_near_zero_adv,response_len,"
         "n_tokens,empty_rollouts\n";
}

std::string stats_csv_row(const StepStats& s) {
  return std::to_string(s.step) + ',' + format_real(s.mean_advantage) + ',' +
         format_real(s.mean_abs_advantage) + ',' + format_real(s.mean_rkl_estimate) + ',' +
         format_real(s.loss) + ',' + format_real(s.grad_norm) + ',' +
         format_real(s.fraction_positive_adv) + ',' + format_real(s.fraction_negative_adv) + ',' +
         format_real(s.fraction_near_zero_adv) + ',' + format_real(s.response_len) + ',' +
         std::to_string(s.n_tokens) + ',' + std::to_string(s.empty_rollouts) + '\n';
}

nn::LossGrad pg_loss_and_grad(const ModelState& state, const Triplet& triplet,
                              const Rollout& rollout, const AdvantageVector& adv) {
  if (adv.values.size() != rollout.response.size())
    throw ShapeError("advantages do not match the rollout length");
  nn::LossGrad out;
  out.grad.assign(state.params.size(), 0.0);
  if (rollout.response.empty()) return out;
  out.loss = nn::accumulate_weighted_nll_grad(state, student_prompt(triplet), rollout.response,
                                              adv.values, 1.0, out.grad);
  if (!std::isfinite(out.loss)) throw NumericError("non-finite policy-gradient loss");
  return out;
}

std::uint64_t rollout_seed(std::uint64_t root, std::size_t iteration, std::size_t b, std::size_t r) {
  std::uint64_t s = derive_seed(root, "rollout");
  s = derive_seed(s, static_cast<std::uint64_t>(iteration));
  s = derive_seed(s, static_cast<std::uint64_t>(b));
  return derive_seed(s, static_cast<std::uint64_t>(r));
}

namespace {

class StatsAccumulator {
 public:
  void add_advantages(std::span<const double> a) {
    for (double x : a) {
      sum_ += x;
      abs_ += std::abs(x);
      switch (bucket_of(x)) {
        case Bucket::positive: ++pos_; break;
        case Bucket::negative: ++neg_; break;
        case Bucket::near_zero: ++zero_; break;
      }
    }
    tokens_ += a.size();
  }
  void add_rollout(std::size_t len, bool answerless) {
    len_ += len;
    ++rollouts_;
    if (answerless) ++empty_;
  }
  StepStats finish(std::size_t step, double loss, double grad_norm) const {
    StepStats s;
    s.step = step;
    s.loss = loss;
    s.grad_norm = grad_norm;
    s.n_tokens = tokens_;
    s.empty_rollouts = empty_;
    if (rollouts_) s.response_len = static_cast<double>(len_) / static_cast<double>(rollouts_);
    if (tokens_) {
      const double n = static_cast<double>(tokens_);
      s.mean_advantage = sum_ / n;
      s.mean_abs_advantage = abs_ / n;
      s.mean_rkl_estimate = -s.mean_advantage;
      s.fraction_positive_adv = static_cast<double>(pos_) / n;
      s.fraction_negative_adv = static_cast<double>(neg_) / n;
      s.fraction_near_zero_adv = static_cast<double>(zero_) / n;
    } else {
      s.fraction_near_zero_adv = 1.0;
    }
    return s;
  }

 private:
  double sum_ = 0.0, abs_ = 0.0;
  std::size_t pos_ = 0, neg_ = 0, zero_ = 0, tokens_ = 0, len_ = 0, rollouts_ = 0, empty_ = 0;
};

// Draws batches from an epoch-wise shuffle of [0, n).
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::uint64_t seed) : n_(n), rng_(derive_seed(seed, "shuffle")) {}

  std::vector<std::size_t> next(std::size_t size) {
    std::vector<std::size_t> out;
    while (out.size() < size) {
      if (pos_ == order_.size()) reshuffle();
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  void reshuffle() {
    order_.resize(n_);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    rng_.shuffle(order_.begin(), order_.end());
    pos_ = 0;
  }
  std::size_t n_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

template <class Step>
TrainResult run_loop(ModelState state, const DistillConfig& cfg, std::size_t n_items,
                     const TrainHooks& hooks, Step&& step_fn) {
  TrainResult result;
  if (cfg.steps == 0) {
    result.state = std::move(state);
    return result;
  }
  if (n_items == 0) throw DataError("training corpus is empty");
  if (cfg.reset_optimizer) state.reset_optimizer();
  BatchSampler sampler(n_items, cfg.seed);
  for (std::size_t it = 0; it < cfg.steps; ++it) {
    const auto idx = sampler.next(cfg.batch_triplets);
    StepResult r;
    try {
      r = step_fn(state, idx, it);
    } catch (const NumericError& e) {
      throw NumericError("step " + std::to_string(it) + ": " + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError("step " + std::to_string(it) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("step " + std::to_string(it) + ": " + e.what());
    }
    state = std::move(r.state);
    result.log.push_back(r.stats);
    if (hooks.on_step) hooks.on_step(r.stats, state);
    if (hooks.on_checkpoint && cfg.checkpoint_every && (it + 1) % cfg.checkpoint_every == 0)
      hooks.on_checkpoint(it + 1, state);
  }
  result.state = std::move(state);
  return result;
}

}  // namespace

StepResult train_step(const ModelState& state, const DistillConfig& cfg,
                      std::span<const Triplet> batch, nn::TokenId eos, std::size_t iteration,
                      const TrainHooks& hooks) {
  cfg.validate();
  if (batch.empty()) throw DataError("train_step needs a non-empty batch");
  const ModelState& teacher = hooks.frozen_teacher ? *hooks.frozen_teacher : state;

  std::vector<double> grad(state.params.size(), 0.0);
  const double scale =
      1.0 / static_cast<double>(batch.size() * cfg.rollouts_per_triplet);
  double loss = 0.0;
  StatsAccumulator acc;

  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Triplet& t = batch[b];
    const TokenSeq prompt = student_prompt(t);
    for (std::size_t r = 0; r < cfg.rollouts_per_triplet; ++r) {
      nn::SampleOptions opt;
      opt.max_new = cfg.max_new;
      opt.temperature = cfg.temperature;
      opt.eos = eos;
      opt.seed = rollout_seed(cfg.seed, iteration, b, r);
      const Rollout ro = nn::sample_response(state, prompt, opt);
      // A lone EOS is still scored; only a response with no tokens is skipped.
      acc.add_rollout(ro.response.size(), ro.response.size() <= 1 && ro.ended_with_eos);
      if (ro.response.empty()) continue;

      const auto tl = teacher_logprobs(teacher, t, ro.response);
      const auto sl = student_logprobs(state, t, ro.response);
      const auto adv = compute_advantages(tl, sl, cfg.advantage_clip);
      acc.add_advantages(adv.values);
      loss += nn::accumulate_weighted_nll_grad(state, prompt, ro.response, adv.values, scale, grad);
    }
  }
  if (!std::isfinite(loss)) throw NumericError("non-finite policy-gradient loss");

  StepResult out{state, acc.finish(iteration, loss, nn::l2_norm(grad))};
  nn::optimizer_step(out.state, grad, cfg.lr);
  return out;
}

TrainResult train(ModelState state, const DistillConfig& cfg, std::span<const Triplet> corpus,
                  nn::TokenId eos, const TrainHooks& hooks) {
  cfg.validate();
  return run_loop(std::move(state), cfg, corpus.size(), hooks,
                  [&](const ModelState& s, const std::vector<std::size_t>& idx, std::size_t it) {
                    std::vector<Triplet> batch;
                    batch.reserve(idx.size());
                    for (auto i : idx) batch.push_back(corpus[i]);
                    return train_step(s, cfg, batch, eos, it, hooks);
                  });
}

std::vector<SftExample> make_sft_targets(const ModelState& state,
                                         std::span<const Triplet> corpus, nn::TokenId eos,
                                         std::size_t max_new) {
  std::vector<SftExample> out;
  out.reserve(corpus.size());
  for (const auto& t : corpus) {
    nn::SampleOptions opt;
    opt.greedy = true;
    opt.max_new = max_new;
    opt.eos = eos;
    auto ro = nn::sample_response(state, teacher_prompt(t), opt);
    out.push_back({student_prompt(t), std::move(ro.response)});
  }
  return out;
}

StepResult sft_step(const ModelState& state, const DistillConfig& cfg,
                    std::span<const SftExample> batch, std::size_t iteration) {
  cfg.validate();
  if (batch.empty()) throw DataError("sft_step needs a non-empty batch");
  std::vector<double> grad(state.params.size(), 0.0);
  const double scale = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  StatsAccumulator acc;
  for (const auto& ex : batch) {
    if (ex.target.empty()) throw DataError("SFT target must not be empty");
    acc.add_rollout(ex.target.size(), false);
    const std::vector<double> ones(ex.target.size(), 1.0);
    loss += nn::accumulate_weighted_nll_grad(state, ex.context, ex.target, ones, scale, grad);
  }
  if (!std::isfinite(loss)) throw NumericError("non-finite SFT loss");
  StepResult out{state, acc.finish(iteration, loss, nn::l2_norm(grad))};
  nn::optimizer_step(out.state, grad, cfg.lr);
  return out;
}

TrainResult train_sft(ModelState state, const DistillConfig& cfg,
                      std::span<const SftExample> examples, const TrainHooks& hooks) {
  cfg.validate();
  return run_loop(std::move(state), cfg, examples.size(), hooks,
                  [&](const ModelState& s, const std::vector<std::size_t>& idx, std::size_t it) {
                    std::vector<SftExample> batch;
                    batch.reserve(idx.size());
                    for (auto i : idx) batch.push_back(examples[i]);
                    return sft_step(s, cfg, batch, it);
                  });
}

}  // namespace opsdl::distill
