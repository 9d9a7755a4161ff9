#include <benchmark/benchmark.h>

#include "opsdl/distill/advantage.hpp"
#include "opsdl/distill/trainer.hpp"
#include "opsdl/nn/sampling.hpp"
#include "opsdl/nn/transformer.hpp"
#include "opsdl/taskgen/corpus.hpp"

using namespace opsdl;

namespace {

struct Fixture {
  taskgen::CorpusConfig corpus;
  taskgen::Vocabulary vocab{corpus.vocab_spec()};
  nn::ModelState state;

  explicit Fixture(std::size_t length, nn::DType dtype = nn::DType::f32) {
    corpus.long_len = length;
    corpus.short_len = std::min<std::size_t>(128, length);
    corpus.n_facts_per_doc = 4;
    corpus.n_keys = 8;
    corpus.n_values = 8;
    corpus.query_templates = {"what is the value of {key}"};
    vocab = taskgen::Vocabulary(corpus.vocab_spec());
    nn::ModelConfig m;
    m.vocab_size = vocab.size();
    m.n_layers = 2;
    m.d_model = 32;
    m.n_heads = 2;
    m.d_ff = 64;
    m.max_seq_len = length + 32;
    m.dtype = dtype;
    state = nn::init_model(m, 1);
  }
  taskgen::Triplet triplet(std::size_t i = 0) const { return taskgen::make_triplet(corpus, vocab, i); }
};

void BM_ScoreResponse(benchmark::State& st) {
  const Fixture f(static_cast<std::size_t>(st.range(0)));
  const auto t = f.triplet();
  const auto prompt = distill::student_prompt(t);
  const nn::TokenSeq resp = {t.gold_answer[0], f.vocab.eos()};
  for (auto _ : st) benchmark::DoNotOptimize(nn::score_response(f.state, prompt, resp));
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(prompt.size() + 2));
}
BENCHMARK(BM_ScoreResponse)->Arg(64)->Arg(128)->Arg(256)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_WeightedNllGrad(benchmark::State& st) {
  const Fixture f(static_cast<std::size_t>(st.range(0)));
  const auto t = f.triplet();
  const auto prompt = distill::student_prompt(t);
  const nn::TokenSeq resp = {t.gold_answer[0], f.vocab.eos()};
  const std::vector<double> w = {1.0, 1.0};
  for (auto _ : st) benchmark::DoNotOptimize(nn::weighted_nll_grad(f.state, prompt, resp, w));
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(prompt.size() + 2));
}
BENCHMARK(BM_WeightedNllGrad)->Arg(64)->Arg(128)->Arg(256)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_WeightedNllGradF64(benchmark::State& st) {
  const Fixture f(256, nn::DType::f64);
  const auto t = f.triplet();
  const auto prompt = distill::student_prompt(t);
  const nn::TokenSeq resp = {t.gold_answer[0], f.vocab.eos()};
  const std::vector<double> w = {1.0, 1.0};
  for (auto _ : st) benchmark::DoNotOptimize(nn::weighted_nll_grad(f.state, prompt, resp, w));
}
BENCHMARK(BM_WeightedNllGradF64)->Unit(benchmark::kMillisecond);

void BM_GreedyDecode(benchmark::State& st) {
  const Fixture f(512);
  const auto prompt = distill::student_prompt(f.triplet());
  nn::SampleOptions opt;
  opt.greedy = true;
  opt.max_new = 2;
  opt.eos = f.vocab.eos();
  for (auto _ : st) benchmark::DoNotOptimize(nn::sample_response(f.state, prompt, opt));
}
BENCHMARK(BM_GreedyDecode)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& st) {
  const Fixture f(512);
  std::vector<taskgen::Triplet> batch;
  for (std::size_t i = 0; i < 8; ++i) batch.push_back(f.triplet(i));
  distill::DistillConfig cfg;
  std::size_t it = 0;
  for (auto _ : st)
    benchmark::DoNotOptimize(distill::train_step(f.state, cfg, batch, f.vocab.eos(), it++));
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
