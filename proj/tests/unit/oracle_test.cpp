#include <cmath>
#include <numeric>

#include "doctest.h"
#include "opsdl/distill/advantage.hpp"
#include "opsdl/error.hpp"
#include "opsdl/nn/transformer.hpp"
#include "opsdl/oracle/oracle.hpp"
#include "test_util.hpp"

using namespace opsdl;
using namespace opsdl::oracle;

namespace {

constexpr nn::TokenId kEos = 0;

nn::ModelConfig tiny_config() {  // 204 parameters
  nn::ModelConfig c;
  c.vocab_size = 4;
  c.n_layers = 1;
  c.d_model = 4;
  c.n_heads = 1;
  c.d_ff = 8;
  c.max_seq_len = 16;
  c.dtype = nn::DType::f64;
  c.init_std = 0.5;
  return c;
}

TokenSeq join(const TokenSeq& a, const TokenSeq& b) {
  TokenSeq out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

}  // namespace

TEST_CASE("finite_diff_grad: quadratic objective") {
  auto s = nn::init_model(tiny_config(), 1);
  const auto g = finite_diff_grad(
      s, [](const nn::ModelState& m) {
        double q = 0.0;
        for (double x : m.params) q += 0.5 * x * x;
        return q;
      },
      1e-4);
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(std::abs(g[i] - s.params[i]) < 1e-8);
}

TEST_CASE("finite_diff_grad: second-order convergence") {
  auto s = nn::init_model(tiny_config(), 2);
  auto f = [](const nn::ModelState& m) {
    double q = 0.0;
    for (double x : m.params) q += std::sin(3.0 * x);
    return q;
  };
  auto err = [&](double h) {
    const auto g = finite_diff_grad(s, f, h);
    double worst = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i)
      worst = std::max(worst, std::abs(g[i] - 3.0 * std::cos(3.0 * s.params[i])));
    return worst;
  };
  const double ratio = err(2e-2) / err(1e-2);
  CHECK(ratio > 3.8);
  CHECK(ratio < 4.2);
}

TEST_CASE("finite_diff_grad: non-finite objective is a numeric error") {
  auto s = nn::init_model(tiny_config(), 1);
  CHECK_THROWS_AS(finite_diff_grad(s, [](const nn::ModelState&) { return NAN; }, 1e-3),
                  NumericError);
}

TEST_CASE("finite differences match weighted_nll_grad on a 204-parameter model") {
  for (auto pos : {nn::PosEncoding::rotary, nn::PosEncoding::learned_absolute}) {
    auto cfg = tiny_config();
    cfg.pos_encoding = pos;
    auto s = nn::init_model(cfg, 3);
    if (pos == nn::PosEncoding::rotary) CHECK(s.params.size() == 204);
    const TokenSeq ctx{1, 2, 3, 1}, resp{2, 0};
    const std::vector<double> w{0.8, -1.3};
    const auto exact = nn::weighted_nll_grad(s, ctx, resp, w).grad;
    const auto fd = finite_diff_grad(
        s, [&](const nn::ModelState& m) { return nn::weighted_nll_grad(m, ctx, resp, w).loss; },
        1e-5);
    CHECK(test::max_relative_error(exact, fd, 1e-5) < 1e-4);
  }
}

TEST_CASE("kl_divergence: two-term hand value") {
  const double expected = 0.9 * std::log(1.8) + 0.1 * std::log(0.2);
  CHECK(kl_divergence({0.9, 0.1}, {0.5, 0.5}) == doctest::Approx(expected).epsilon(1e-15));
  CHECK(kl_divergence({0.9, 0.1}, {0.5, 0.5}) == doctest::Approx(0.3681).epsilon(1e-4));
  CHECK(kl_divergence({0.3, 0.7}, {0.3, 0.7}) == 0.0);
}

TEST_CASE("exact_pointwise_rkl_grad: identical prefixes") {
  const auto s = nn::init_model(test::toy_config(), 4);
  const TokenSeq p{3, 1, 4, 1, 5};
  const auto r = exact_pointwise_rkl_grad(s, p, p);
  CHECK(r.kl == 0.0);
  for (double g : r.grad) CHECK(std::abs(g) < 1e-9);
}

TEST_CASE("exact_pointwise_rkl_grad: nonnegative, matches row enumeration") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto s = nn::init_model(test::toy_config(), seed);
    const auto t = test::toy_triplet(seed + 1000);
    const TokenSeq lp = join(t.long_context, t.query), sp = join(t.short_context, t.query);
    const auto q = nn::forward_logprobs(s, lp).back();
    const auto p = nn::forward_logprobs(s, sp).back();
    std::vector<double> qe(q.size()), pe(p.size());
    for (std::size_t i = 0; i < q.size(); ++i) {
      qe[i] = std::exp(q[i]);
      pe[i] = std::exp(p[i]);
    }
    const double kl = kl_divergence(qe, pe);
    CHECK(kl >= 0.0);
    if (seed < 3) {  // the gradient is the expensive part
      const auto r = exact_pointwise_rkl_grad(s, lp, sp);
      CHECK(r.kl == doctest::Approx(kl).epsilon(1e-12));
    }
  }
}

TEST_CASE("mc_estimator_check: zero when teacher and student agree") {
  auto s = nn::init_model(test::toy_config(), 5);
  s.tensor("lm_head.bias")[3] = 50.0;  // near one-hot student
  auto t = test::toy_triplet(8);
  t.short_context = t.long_context;
  const auto r = mc_estimator_check(s, t, {}, 10000, 1);
  for (double g : r.mc_grad_mean) CHECK(g == 0.0);
  CHECK(r.max_z < 1.0);
}

TEST_CASE("mc_estimator_check: unbiased within 3 sigma at n = 1e5") {
  const auto s = nn::init_model(test::toy_config(), 6);
  const auto t = test::toy_triplet(9);
  const auto r = mc_estimator_check(s, t, TokenSeq{2}, 100000, 2);
  CHECK(r.max_z <= 3.0);
  CHECK(r.max_z > 0.0);
}

TEST_CASE("mc_estimator_check: stderr scales as 1/sqrt(n)") {
  const auto s = nn::init_model(test::toy_config(), 7);
  const auto t = test::toy_triplet(10);
  const auto a = mc_estimator_check(s, t, {}, 10000, 3);
  const auto b = mc_estimator_check(s, t, {}, 1000000, 4);
  // compare on the coordinate with the largest stderr
  std::size_t k = 0;
  for (std::size_t i = 0; i < a.mc_grad_stderr.size(); ++i)
    if (a.mc_grad_stderr[i] > a.mc_grad_stderr[k]) k = i;
  const double ratio = a.mc_grad_stderr[k] / b.mc_grad_stderr[k];
  CHECK(ratio > 9.0);
  CHECK(ratio < 11.0);
}

TEST_CASE("enumerate_sequence_rkl: zero at the fixed point, budget enforced") {
  const auto s = nn::init_model(test::toy_config(), 8);
  auto t = test::toy_triplet(11);
  t.short_context = t.long_context;
  CHECK(enumerate_sequence_rkl(s, t, 3, kEos) == 0.0);
  CHECK_THROWS_AS(enumerate_sequence_rkl(s, t, 5, kEos), ConfigError);
  CHECK_THROWS_AS(enumerate_responses(8, 5, kEos), ConfigError);
}

TEST_CASE("enumerate_responses covers the sampler's support") {
  const auto all = enumerate_responses(3, 3, kEos);
  // [0], [a,0] and [a,b,c] with a,b in {1,2}, c in {0,1,2}: 1 + 2 + 12
  CHECK(all.size() == 15);
  for (const auto& y : all) {
    CHECK(y.size() >= 1);
    CHECK(y.size() <= 3);
    for (std::size_t i = 0; i + 1 < y.size(); ++i) CHECK(y[i] != kEos);
  }
}

TEST_CASE("enumerate_sequence_rkl equals the student-weighted sum of -A over responses") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto s = nn::init_model(test::toy_config(), 20 + seed);
    const auto t = test::toy_triplet(30 + seed);
    const double kl = enumerate_sequence_rkl(s, t, 3, kEos);
    double expect = 0.0, mass = 0.0;
    for (const auto& y : enumerate_responses(8, 3, kEos)) {
      const auto sl = nn::score_response(s, distill::student_prompt(t), y);
      const auto tl = nn::score_response(s, distill::teacher_prompt(t), y);
      const auto a = distill::compute_advantages(tl, sl);
      const double joint = std::exp(std::accumulate(sl.begin(), sl.end(), 0.0));
      mass += joint;
      expect -= joint * std::accumulate(a.values.begin(), a.values.end(), 0.0);
    }
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(kl - expect) < 1e-10);
    CHECK(kl >= 0.0);
  }
}

TEST_CASE("enumerate_sequence_rkl is nonnegative across random states") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = nn::init_model(test::toy_config(), 100 + seed);
    const auto t = test::toy_triplet(200 + seed);
    CHECK(enumerate_sequence_rkl(s, t, 2, kEos) >= 0.0);
  }
}
