#include "opsdl/oracle/oracle.hpp"

#include <algorithm>
#include <cmath>

#include "opsdl/error.hpp"
#include "opsdl/nn/transformer.hpp"
#include "opsdl/rng.hpp"

namespace opsdl::oracle {

namespace {

TokenSeq concat(const TokenSeq& a, const TokenSeq& b) {
  TokenSeq out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

nn::LogProbRow last_row(const ModelState& s, const TokenSeq& tokens) {
  const std::size_t last = tokens.size() - 1;
  return nn::forward_logprob_rows(s, tokens, std::span<const std::size_t>(&last, 1)).front();
}

void check_budget(std::size_t vocab, std::size_t max_new) {
  double n = 1.0;
  for (std::size_t i = 0; i < max_new; ++i) n *= static_cast<double>(vocab);
  if (max_new == 0 || n > static_cast<double>(kEnumerationBudget))
    throw ConfigError("enumeration of " + std::to_string(vocab) + "^" + std::to_string(max_new) +
                      " responses exceeds the budget of " + std::to_string(kEnumerationBudget));
}

double rkl_tree(const ModelState& student, const ModelState& teacher, const TokenSeq& s_ctx,
                const TokenSeq& t_ctx, TokenSeq& prefix, double log_q_prefix,
                double log_ratio_prefix, std::size_t max_new, nn::TokenId eos) {
  const auto q = last_row(student, concat(s_ctx, prefix));
  const auto p = last_row(teacher, concat(t_ctx, prefix));
  double total = 0.0;
  for (std::size_t v = 0; v < q.size(); ++v) {
    const double lq = log_q_prefix + q[v];
    const double lr = log_ratio_prefix + q[v] - p[v];
    const auto tok = static_cast<nn::TokenId>(v);
    if (tok == eos || prefix.size() + 1 == max_new) {
      total += std::exp(lq) * lr;
    } else {
      prefix.push_back(tok);
      total += rkl_tree(student, teacher, s_ctx, t_ctx, prefix, lq, lr, max_new, eos);
      prefix.pop_back();
    }
  }
  return total;
}

void enumerate_into(std::size_t vocab, std::size_t max_new, nn::TokenId eos, TokenSeq& prefix,
                    std::vector<TokenSeq>& out) {
  for (std::size_t v = 0; v < vocab; ++v) {
    prefix.push_back(static_cast<nn::TokenId>(v));
    if (static_cast<nn::TokenId>(v) == eos || prefix.size() == max_new)
      out.push_back(prefix);
    else
      enumerate_into(vocab, max_new, eos, prefix, out);
    prefix.pop_back();
  }
}

}  // namespace

ModelState as_f64(const ModelState& state) {
  ModelState s = state;
  s.config.dtype = nn::DType::f64;
  return s;
}

std::vector<double> finite_diff_grad(const ModelState& state, const Objective& f, double step) {
  if (!(step > 0.0)) throw ConfigError("finite-difference step must be > 0");
  ModelState probe = state;
  std::vector<double> g(state.params.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double x = probe.params[i];
    probe.params[i] = x + step;
    const double fp = f(probe);
    probe.params[i] = x - step;
    const double fm = f(probe);
    probe.params[i] = x;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("objective is non-finite near parameter " + state.name_of(i));
    g[i] = (fp - fm) / (2.0 * step);
  }
  return g;
}

double kl_divergence(const std::vector<double>& q, const std::vector<double>& p) {
  if (q.size() != p.size()) throw ShapeError("distributions differ in size");
  double kl = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i)
    if (q[i] > 0.0) kl += q[i] * std::log(q[i] / p[i]);
  return kl;
}

KlGrad exact_pointwise_rkl_grad(const ModelState& state, const TokenSeq& long_prefix,
                                const TokenSeq& short_prefix, double step) {
  const ModelState s = as_f64(state);
  const auto p = last_row(s, short_prefix);  // constant
  auto kl_at = [&](const ModelState& m) {
    const auto q = last_row(m, long_prefix);
    double kl = 0.0;
    for (std::size_t v = 0; v < q.size(); ++v) kl += std::exp(q[v]) * (q[v] - p[v]);
    return kl;
  };
  KlGrad out;
  out.kl = kl_at(s);
  out.grad = finite_diff_grad(s, kl_at, step);
  return out;
}

McCheck mc_estimator_check(const ModelState& state, const taskgen::Triplet& triplet,
                           const TokenSeq& prefix, std::size_t n_samples, std::uint64_t seed,
                           double fd_tol) {
  if (n_samples < 2) throw ConfigError("mc_estimator_check needs at least 2 samples");
  const ModelState s = as_f64(state);
  const TokenSeq lp = concat(concat(triplet.long_context, triplet.query), prefix);
  const TokenSeq sp = concat(concat(triplet.short_context, triplet.query), prefix);
  const TokenSeq l_ctx = concat(triplet.long_context, triplet.query);

  const auto q = last_row(s, lp);
  const auto p = last_row(s, sp);
  std::vector<double> probs(q.size());
  for (std::size_t v = 0; v < q.size(); ++v) probs[v] = std::exp(q[v]);

  Rng rng(derive_seed(seed, "mc"));
  std::vector<std::size_t> counts(q.size(), 0);
  for (std::size_t i = 0; i < n_samples; ++i) ++counts[rng.categorical(std::span<const double>(probs))];

  // Per-draw estimator for token y: −A_y·∇log π(y | ...). Cached per y.
  const std::size_t P = s.params.size();
  std::vector<double> sum(P, 0.0), sumsq(P, 0.0);
  for (std::size_t v = 0; v < q.size(); ++v) {
    if (!counts[v]) continue;
    TokenSeq resp = prefix;
    resp.push_back(static_cast<nn::TokenId>(v));
    std::vector<double> w(resp.size(), 0.0);
    w.back() = p[v] - q[v];  // A_y
    const auto g = nn::weighted_nll_grad(s, l_ctx, resp, w).grad;
    const double c = static_cast<double>(counts[v]);
    for (std::size_t i = 0; i < P; ++i) {
      sum[i] += c * g[i];
      sumsq[i] += c * g[i] * g[i];
    }
  }

  McCheck out;
  out.n_samples = n_samples;
  out.exact_grad = exact_pointwise_rkl_grad(s, lp, sp).grad;
  out.mc_grad_mean.resize(P);
  out.mc_grad_stderr.resize(P);
  const double n = static_cast<double>(n_samples);
  for (std::size_t i = 0; i < P; ++i) {
    const double mean = sum[i] / n;
    const double var = std::max(0.0, (sumsq[i] - n * mean * mean) / (n - 1.0));
    const double se = std::sqrt(var / n);
    out.mc_grad_mean[i] = mean;
    out.mc_grad_stderr[i] = se;
    const double z = std::abs(mean - out.exact_grad[i]) / std::sqrt(se * se + fd_tol * fd_tol);
    if (z > out.max_z) {
      out.max_z = z;
      out.worst_param = i;
    }
  }
  return out;
}

double enumerate_sequence_rkl(const ModelState& student, const ModelState& teacher,
                              const taskgen::Triplet& triplet, std::size_t max_new,
                              nn::TokenId eos) {
  if (!(student.config == teacher.config))
    throw ConfigError("student and teacher must share a model config");
  check_budget(student.config.vocab_size, max_new);
  const ModelState s = as_f64(student), t = as_f64(teacher);
  TokenSeq prefix;
  return rkl_tree(s, t, concat(triplet.long_context, triplet.query),
                  concat(triplet.short_context, triplet.query), prefix, 0.0, 0.0, max_new, eos);
}

double enumerate_sequence_rkl(const ModelState& state, const taskgen::Triplet& triplet,
                              std::size_t max_new, nn::TokenId eos) {
  return enumerate_sequence_rkl(state, state, triplet, max_new, eos);
}

std::vector<TokenSeq> enumerate_responses(std::size_t vocab_size, std::size_t max_new,
                                          nn::TokenId eos) {
  check_budget(vocab_size, max_new);
  std::vector<TokenSeq> out;
  TokenSeq prefix;
  enumerate_into(vocab_size, max_new, eos, prefix, out);
  return out;
}

EnumerableSetup make_enumerable_setup(std::uint64_t seed, nn::PosEncoding pos) {
  nn::ModelConfig c;
  c.vocab_size = 8;
  c.n_layers = 2;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ff = 16;
  c.max_seq_len = 32;
  c.pos_encoding = pos;
  c.dtype = nn::DType::f64;
  c.init_std = 0.5;

  EnumerableSetup s;
  s.state = nn::init_model(c, derive_seed(seed, "state"));
  Rng rng(derive_seed(seed, "triplet"));
  auto draw = [&] { return static_cast<nn::TokenId>(1 + rng.below(c.vocab_size - 1)); };
  auto& t = s.triplet;
  t.id = "enum-" + std::to_string(seed);
  const std::size_t long_len = 8 + rng.below(5), short_len = 3 + rng.below(3);
  for (std::size_t i = 0; i < long_len; ++i) t.long_context.push_back(draw());
  const std::size_t start = rng.below(long_len - short_len + 1);
  t.short_span = {start, start + short_len};
  t.short_context.assign(t.long_context.begin() + static_cast<std::ptrdiff_t>(start),
                         t.long_context.begin() + static_cast<std::ptrdiff_t>(start + short_len));
  t.query = {draw(), draw()};
  t.gold_answer = {draw()};
  return s;
}

GradCheck grad_check(std::uint64_t seed, std::size_t draws) {
  GradCheck out;
  out.draws = draws;
  for (std::size_t k = 0; k < draws; ++k) {
    const auto pos = k % 2 ? nn::PosEncoding::learned_absolute : nn::PosEncoding::rotary;
    const auto setup = make_enumerable_setup(derive_seed(seed, k), pos);
    const ModelState& s = setup.state;
    out.n_params = std::max(out.n_params, s.params.size());
    Rng rng(derive_seed(derive_seed(seed, k), "draw"));
    TokenSeq ctx, resp;
    const std::size_t n_ctx = 3 + rng.below(6), n_resp = 1 + rng.below(4);
    for (std::size_t i = 0; i < n_ctx; ++i) ctx.push_back(static_cast<nn::TokenId>(rng.below(8)));
    for (std::size_t i = 0; i < n_resp; ++i) resp.push_back(static_cast<nn::TokenId>(rng.below(8)));
    std::vector<double> w(n_resp);
    for (auto& x : w) x = rng.normal();

    const auto exact = nn::weighted_nll_grad(s, ctx, resp, w).grad;
    const auto fd = finite_diff_grad(
        s, [&](const ModelState& m) { return nn::weighted_nll_grad(m, ctx, resp, w).loss; }, 1e-5);
    for (std::size_t i = 0; i < fd.size(); ++i) {
      const double denom = std::max({std::abs(exact[i]), std::abs(fd[i]), 1e-5});
      const double rel = std::abs(exact[i] - fd[i]) / denom;
      if (rel > out.max_rel_error) {
        out.max_rel_error = rel;
        out.worst_param = s.name_of(i);
      }
    }
  }
  return out;
}

EstimatorCheck estimator_check(std::uint64_t seed, std::size_t states, std::size_t n_samples) {
  EstimatorCheck out;
  out.states = states;
  out.n_samples = n_samples;
  for (std::size_t k = 0; k < states; ++k) {
    const auto setup = make_enumerable_setup(derive_seed(seed, k));
    const auto r = mc_estimator_check(setup.state, setup.triplet, {}, n_samples,
                                      derive_seed(derive_seed(seed, k), "mc"));
    out.max_z = std::max(out.max_z, r.max_z);
  }
  return out;
}

}  // namespace opsdl::oracle
