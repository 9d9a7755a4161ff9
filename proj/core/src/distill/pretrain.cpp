#include "opsdl/distill/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "opsdl/error.hpp"
#include "opsdl/format.hpp"
#include "opsdl/nn/optimizer.hpp"
#include "opsdl/nn/transformer.hpp"
#include "opsdl/rng.hpp"

namespace opsdl::distill {

void PretrainConfig::validate(const taskgen::CorpusConfig& corpus) const {
  if (batch == 0) throw ConfigError("pretrain batch must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("pretrain lr must be > 0");
  if (queries_per_doc == 0) throw ConfigError("queries_per_doc must be >= 1");
  if (min_len < taskgen::kFactLength || min_len > corpus.short_len)
    throw ConfigError("pretrain min_len must lie in [" + std::to_string(taskgen::kFactLength) +
                      ", short_len]");
}

std::string pretrain_csv_header() { return "step,loss,grad_norm,lr\n"; }

std::string pretrain_csv_row(const PretrainStats& s) {
  return std::to_string(s.step) + ',' + format_real(s.loss) + ',' + format_real(s.grad_norm) +
         ',' + format_real(s.lr) + '\n';
}

PretrainExample pretrain_example(const taskgen::CorpusConfig& corpus,
                                 const taskgen::Vocabulary& vocab, const PretrainConfig& cfg,
                                 std::size_t step, std::size_t index) {
  Rng rng(derive_seed(derive_seed(derive_seed(cfg.seed, "pretrain"), step), index));
  const std::size_t len = cfg.min_len + rng.below(corpus.short_len - cfg.min_len + 1);
  const auto doc_cfg = corpus.at_length(len);
  auto doc = taskgen::gen_document(doc_cfg, vocab, rng);

  std::vector<std::size_t> order(doc.facts.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order.begin(), order.end());
  const std::size_t n_q = std::min(cfg.queries_per_doc, order.size());

  PretrainExample ex;
  ex.context = std::move(doc.tokens);
  for (std::size_t k = 0; k < n_q; ++k) {
    auto [query, gold] = taskgen::gen_query(doc.facts[order[k]], corpus.query_templates, vocab, rng);
    if (k == 0) {
      ex.context.insert(ex.context.end(), query.begin(), query.end());
    } else {
      ex.response.insert(ex.response.end(), query.begin(), query.end());
      ex.weights.insert(ex.weights.end(), query.size(), 0.0);
    }
    for (auto g : gold) {
      ex.response.push_back(g);
      ex.weights.push_back(1.0);
    }
    ex.response.push_back(vocab.eos());
    ex.weights.push_back(1.0);
  }
  return ex;
}

PretrainResult pretrain_short(ModelState state, const taskgen::CorpusConfig& corpus,
                              const PretrainConfig& cfg,
                              const std::function<void(const PretrainStats&, const ModelState&)>&
                                  on_step) {
  cfg.validate(corpus);
  const taskgen::Vocabulary vocab(corpus.vocab_spec());
  if (vocab.size() != state.config.vocab_size)
    throw ShapeError("corpus vocabulary has " + std::to_string(vocab.size()) +
                     " tokens, model expects " + std::to_string(state.config.vocab_size));
  state.reset_optimizer();

  PretrainResult result;
  std::vector<double> grad(state.params.size());
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double loss = 0.0, answer_tokens = 0.0;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      const auto ex = pretrain_example(corpus, vocab, cfg, step, b);
      loss += nn::accumulate_weighted_nll_grad(state, ex.context, ex.response, ex.weights,
                                               1.0 / static_cast<double>(cfg.batch), grad);
      answer_tokens += std::accumulate(ex.weights.begin(), ex.weights.end(), 0.0);
    }
    if (!std::isfinite(loss))
      throw NumericError("step " + std::to_string(step) + ": non-finite pretraining loss");
    PretrainStats st;
    st.step = step;
    st.loss = loss * static_cast<double>(cfg.batch) / answer_tokens;
    st.grad_norm = nn::l2_norm(grad);
    st.lr = cfg.warmup ? cfg.lr * std::min(1.0, static_cast<double>(step + 1) /
                                                    static_cast<double>(cfg.warmup))
                       : cfg.lr;
    nn::optimizer_step(state, grad, st.lr);
    result.log.push_back(st);
    if (on_step) on_step(st, state);
  }
  result.state = std::move(state);
  return result;
}

}  // namespace opsdl::distill
