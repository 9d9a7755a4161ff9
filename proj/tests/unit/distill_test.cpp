#include <cmath>
#include <numeric>

#include "doctest.h"
#include "opsdl/distill/advantage.hpp"
#include "opsdl/distill/trainer.hpp"
#include "opsdl/error.hpp"
#include "opsdl/nn/sampling.hpp"
#include "opsdl/nn/transformer.hpp"
#include "test_util.hpp"

using namespace opsdl;
using namespace opsdl::distill;
using opsdl::nn::TokenId;

namespace {

constexpr TokenId kEos = 0;

DistillConfig small_distill() {
  DistillConfig c;
  c.batch_triplets = 3;
  c.max_new = 3;
  c.lr = 1e-2;
  c.steps = 5;
  c.seed = 17;
  return c;
}

std::vector<Triplet> toy_batch(std::size_t n, std::uint64_t seed) {
  std::vector<Triplet> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(test::toy_triplet(seed + i));
  return out;
}

Triplet fixed_point(Triplet t) {
  t.short_context = t.long_context;
  t.short_span = {0, t.long_context.size()};
  return t;
}

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace

TEST_CASE("compute_advantages: analytic cases") {
  const std::vector<double> t1{std::log(0.8)}, s1{std::log(0.2)};
  CHECK(compute_advantages(t1, s1).values[0] == doctest::Approx(1.3862943611198906).epsilon(1e-14));

  const std::vector<double> same{-0.3, -1.2, -4.0};
  for (double a : compute_advantages(same, same).values) CHECK(a == 0.0);

  const auto a = compute_advantages(std::vector<double>{-0.1, -2.3}, std::vector<double>{-0.1, -0.5});
  CHECK(a.values[0] == 0.0);
  CHECK(a.values[1] == doctest::Approx(-1.8).epsilon(1e-14));
  CHECK(a.teacher_logps == std::vector<double>{-0.1, -2.3});

  CHECK_THROWS_AS(compute_advantages(std::vector<double>{1.0}, std::vector<double>{}), ShapeError);
  const auto c = compute_advantages(std::vector<double>{-0.1, -9.0}, std::vector<double>{-9.0, -0.1}, 2.0);
  CHECK(c.values == std::vector<double>{2.0, -2.0});
  CHECK_THROWS_AS(compute_advantages(same, same, 0.0), ConfigError);
}

TEST_CASE("advantage increases as the student's probability decreases") {
  const std::vector<double> teacher{std::log(0.5)};
  double prev = -1e300;
  for (double p : {0.9, 0.5, 0.2, 0.05, 1e-4}) {
    const double a = compute_advantages(teacher, std::vector<double>{std::log(p)}).values[0];
    CHECK(a > prev);
    prev = a;
  }
}

TEST_CASE("teacher scoring: identical conditioning, floor, and gather cross-check") {
  auto cfg = test::toy_config();
  cfg.vocab_size = 3;
  auto state = nn::init_model(cfg, 4);
  Triplet t = test::toy_triplet(3, 3, 6, 3, 1);
  const TokenSeq y{2, 1, 0};

  const auto fp = fixed_point(t);
  CHECK(test::bitwise_equal(teacher_logprobs(state, fp, y), student_logprobs(state, fp, y)));

  // gather from full rows of C_S ++ Q ++ y
  TokenSeq seq = teacher_prompt(t);
  const std::size_t ctx = seq.size();
  seq.insert(seq.end(), y.begin(), y.end());
  const auto rows = nn::forward_logprobs(state, seq);
  const auto lp = teacher_logprobs(state, t, y);
  for (std::size_t i = 0; i < y.size(); ++i)
    CHECK(lp[i] == doctest::Approx(rows[ctx - 1 + i][static_cast<std::size_t>(y[i])]).epsilon(1e-12));

  // a huge lm_head bias drives token 2 below 1e-12
  auto peaked = state;
  auto bias = peaked.tensor("lm_head.bias");
  bias[0] = 40.0;
  for (double x : teacher_logprobs(peaked, t, TokenSeq{2})) {
    CHECK(x == kLogProbFloor);
  }
}

TEST_CASE("teacher scoring rejects over-long inputs") {
  auto state = nn::init_model(test::toy_config(), 1);
  auto t = test::toy_triplet(1, 8, 40, 4);
  CHECK_THROWS_AS(student_logprobs(state, t, TokenSeq{1}), LengthError);
}

TEST_CASE("pg_loss_and_grad: zero advantages, sign flip, finite differences") {
  auto cfg = test::toy_config();
  cfg.vocab_size = 4;
  cfg.n_layers = 1;
  const auto state = nn::init_model(cfg, 2);
  const Triplet t = test::toy_triplet(5, 4, 6, 3, 1);
  nn::Rollout ro;
  ro.response = {3};

  AdvantageVector zero;
  zero.values = {0.0};
  const auto z = pg_loss_and_grad(state, t, ro, zero);
  CHECK(z.loss == 0.0);
  for (double g : z.grad) CHECK(g == 0.0);

  AdvantageVector a;
  a.values = {0.7};
  AdvantageVector neg;
  neg.values = {-0.7};
  const auto pos = pg_loss_and_grad(state, t, ro, a);
  const auto flip = pg_loss_and_grad(state, t, ro, neg);
  for (std::size_t i = 0; i < pos.grad.size(); ++i) CHECK(flip.grad[i] == -pos.grad[i]);

  const auto fd = test::central_differences(state, 1e-5, [&](const nn::ModelState& s) {
    return -0.7 * student_logprobs(s, t, ro.response)[0];
  });
  CHECK(test::max_relative_error(pos.grad, fd, 1e-5) < 1e-4);

  AdvantageVector wrong;
  wrong.values = {1.0, 2.0};
  CHECK_THROWS_AS(pg_loss_and_grad(state, t, ro, wrong), ShapeError);
}

TEST_CASE("telescoping: advantages sum to the joint log-ratio") {
  const auto state = nn::init_model(test::toy_config(), 8);
  Rng rng(77);
  for (int i = 0; i < 100; ++i) {
    const auto t = test::toy_triplet(100 + i);
    nn::SampleOptions opt;
    opt.max_new = 4;
    opt.eos = kEos;
    opt.seed = rng.next_u64();
    const auto ro = nn::sample_response(state, student_prompt(t), opt);
    if (ro.response.empty()) continue;
    const auto adv = compute_advantages(teacher_logprobs(state, t, ro.response),
                                        student_logprobs(state, t, ro.response));
    const double joint_teacher = sum(nn::score_response(state, teacher_prompt(t), ro.response));
    const double joint_student = sum(nn::score_response(state, student_prompt(t), ro.response));
    CHECK(std::abs(sum(adv.values) - (joint_teacher - joint_student)) < 1e-10);
  }
}

TEST_CASE("advantage buckets and CSV") {
  CHECK(bucket_of(0.0) == Bucket::near_zero);
  CHECK(bucket_of(0.05) == Bucket::near_zero);
  CHECK(bucket_of(-0.05) == Bucket::near_zero);
  CHECK(bucket_of(2.0) == Bucket::positive);
  CHECK(bucket_of(-0.051) == Bucket::negative);
  CHECK(bucket_name(Bucket::positive) == "positive/under-weighted");
  CHECK(bucket_name(Bucket::negative) == "negative/hallucinated");
  CHECK(bucket_name(Bucket::near_zero) == "near-zero");

  taskgen::Vocabulary::Spec spec;
  spec.n_keys = 2;
  spec.n_values = 2;
  spec.n_filler = 1;
  const taskgen::Vocabulary vocab(spec);
  std::vector<AdvantageRow> rows{{0, 1, -0.5, -0.5, 0.0, Bucket::near_zero},
                                 {1, 0, -3.0, -1.0, 2.0, Bucket::positive}};
  const auto csv = advantage_csv(rows, vocab);
  CHECK(csv.substr(0, csv.find('\n')) ==
        "index,token_id,token,student_logp,teacher_logp,advantage,bucket");
  CHECK(csv.find("1,0,<eos>,-3,-1,2,positive/under-weighted\n") != std::string::npos);
}

TEST_CASE("train_step: fixed point leaves parameters bitwise unchanged") {
  const auto state = nn::init_model(test::toy_config(), 3);
  std::vector<Triplet> batch;
  for (const auto& t : toy_batch(4, 40)) batch.push_back(fixed_point(t));
  auto cfg = small_distill();
  cfg.rollouts_per_triplet = 2;
  auto s = state;
  for (std::size_t it = 0; it < 5; ++it) {
    auto r = train_step(s, cfg, batch, kEos, it);
    CHECK(r.stats.mean_advantage == 0.0);
    CHECK(r.stats.grad_norm == 0.0);
    CHECK(r.stats.loss == 0.0);
    s = std::move(r.state);
  }
  CHECK(test::bitwise_equal(s.params, state.params));
}

TEST_CASE("train_step: determinism and statistics") {
  const auto state = nn::init_model(test::toy_config(), 5);
  const auto batch = toy_batch(3, 60);
  auto cfg = small_distill();
  const auto a = train_step(state, cfg, batch, kEos, 4);
  const auto b = train_step(state, cfg, batch, kEos, 4);
  CHECK(a.state == b.state);
  CHECK_FALSE(test::bitwise_equal(a.state.params, state.params));
  CHECK(a.state.step == state.step + 1);

  // Reproduce the rollouts and advantages through the public API.
  double total = 0.0;
  std::size_t n = 0, pos = 0, neg = 0, zero = 0, len = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    nn::SampleOptions opt;
    opt.max_new = cfg.max_new;
    opt.eos = kEos;
    opt.seed = rollout_seed(cfg.seed, 4, i, 0);
    const auto ro = nn::sample_response(state, student_prompt(batch[i]), opt);
    len += ro.response.size();
    for (const auto& row : advantage_report(state, batch[i], ro)) {
      total += row.advantage;
      ++n;
      pos += row.bucket == Bucket::positive;
      neg += row.bucket == Bucket::negative;
      zero += row.bucket == Bucket::near_zero;
    }
  }
  REQUIRE(n > 0);
  const auto& st = a.stats;
  CHECK(st.n_tokens == n);
  CHECK(st.mean_advantage == doctest::Approx(total / n).epsilon(1e-12));
  CHECK(st.mean_rkl_estimate == -st.mean_advantage);
  CHECK(st.fraction_positive_adv == doctest::Approx(double(pos) / n));
  CHECK(st.fraction_negative_adv == doctest::Approx(double(neg) / n));
  CHECK(st.fraction_near_zero_adv == doctest::Approx(double(zero) / n));
  CHECK(st.fraction_positive_adv + st.fraction_negative_adv + st.fraction_near_zero_adv ==
        doctest::Approx(1.0));
  CHECK(st.response_len == doctest::Approx(double(len) / batch.size()));
}

TEST_CASE("train_step: a lone EOS is counted and still scored") {
  auto state = nn::init_model(test::toy_config(), 5);
  auto bias = state.tensor("lm_head.bias");
  bias[static_cast<std::size_t>(kEos)] = 60.0;  // EOS almost surely first
  const auto batch = toy_batch(2, 80);
  const auto r = train_step(state, small_distill(), batch, kEos, 0);
  CHECK(r.stats.empty_rollouts == 2);
  CHECK(r.stats.n_tokens == 2);
  CHECK(r.stats.response_len == 1.0);
  CHECK(r.stats.mean_abs_advantage < 1e-9);
}

TEST_CASE("train_step validates its inputs") {
  const auto state = nn::init_model(test::toy_config(), 5);
  auto cfg = small_distill();
  CHECK_THROWS_AS(train_step(state, cfg, std::vector<Triplet>{}, kEos, 0), DataError);
  cfg.temperature = 0.0;
  CHECK_THROWS_AS(train_step(state, cfg, toy_batch(1, 1), kEos, 0), ConfigError);
}

TEST_CASE("train: zero steps, log length, reproducibility, step context") {
  const auto state = nn::init_model(test::toy_config(), 6);
  const auto corpus = toy_batch(7, 90);
  auto cfg = small_distill();
  cfg.steps = 0;
  const auto none = train(state, cfg, corpus, kEos);
  CHECK(none.state == state);
  CHECK(none.log.empty());

  cfg.steps = 6;
  cfg.checkpoint_every = 2;
  std::vector<std::size_t> ckpts;
  TrainHooks hooks;
  hooks.on_checkpoint = [&](std::size_t step, const nn::ModelState&) { ckpts.push_back(step); };
  const auto a = train(state, cfg, corpus, kEos, hooks);
  const auto b = train(state, cfg, corpus, kEos);
  CHECK(a.log.size() == 6);
  CHECK(a.state == b.state);
  CHECK(ckpts == std::vector<std::size_t>{2, 4, 6});
  std::string csv_a = stats_csv_header(), csv_b = stats_csv_header();
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(a.log[i].step == i);
    csv_a += stats_csv_row(a.log[i]);
    csv_b += stats_csv_row(b.log[i]);
  }
  CHECK(csv_a == csv_b);

  auto bad = corpus;
  bad[0] = test::toy_triplet(1, 8, 40, 4);
  bad.resize(1);
  try {
    train(state, cfg, bad, kEos);
    FAIL("expected an error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).rfind("step 0: ", 0) == 0);
  }
}

TEST_CASE("sft_step: unit weights give the plain NLL; repeated steps lower it") {
  const auto state = nn::init_model(test::toy_config(), 9);
  const auto t = test::toy_triplet(3);
  const SftExample ex{student_prompt(t), TokenSeq{4, 2, kEos}};
  auto cfg = small_distill();
  cfg.lr = 2e-3;

  const auto r = sft_step(state, cfg, std::span(&ex, 1), 0);
  CHECK(r.stats.loss == doctest::Approx(-sum(nn::score_response(state, ex.context, ex.target)))
                            .epsilon(1e-12));
  CHECK(sft_step(state, cfg, std::span(&ex, 1), 0).state == r.state);

  auto s = state;
  double prev = -sum(nn::score_response(s, ex.context, ex.target));
  const double first = prev;
  int violations = 0;
  for (int i = 0; i < 50; ++i) {
    s = sft_step(s, cfg, std::span(&ex, 1), i).state;
    const double nll = -sum(nn::score_response(s, ex.context, ex.target));
    if (nll > prev) ++violations;
    prev = nll;
  }
  CHECK(violations <= 5);
  CHECK(prev < first);

  const SftExample empty{ex.context, {}};
  CHECK_THROWS_AS(sft_step(state, cfg, std::span(&empty, 1), 0), DataError);
}

TEST_CASE("Long-SFT targets are teacher greedy decodes under the short context") {
  const auto state = nn::init_model(test::toy_config(), 12);
  const auto corpus = toy_batch(4, 200);
  const auto targets = make_sft_targets(state, corpus, kEos, 3);
  REQUIRE(targets.size() == corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    CHECK(targets[i].context == student_prompt(corpus[i]));
    nn::SampleOptions opt;
    opt.greedy = true;
    opt.max_new = 3;
    opt.eos = kEos;
    CHECK(targets[i].target ==
          nn::sample_response(state, teacher_prompt(corpus[i]), opt).response);
  }
  auto cfg = small_distill();
  cfg.steps = 4;
  const auto a = train_sft(state, cfg, targets);
  CHECK(a.log.size() == 4);
  CHECK(train_sft(state, cfg, targets).state == a.state);
}
