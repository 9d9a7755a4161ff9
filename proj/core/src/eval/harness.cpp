#include "opsdl/eval/harness.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>

#include "json.hpp"
#include "opsdl/distill/advantage.hpp"
#include "opsdl/error.hpp"
#include "opsdl/format.hpp"
#include "opsdl/nn/sampling.hpp"
#include "opsdl/rng.hpp"

namespace opsdl::eval {

using nlohmann::json;

namespace {

std::size_t max_query_len(const CorpusConfig& corpus) {
  std::size_t n = 0;
  for (const auto& t : corpus.query_templates)
    n = std::max(n, taskgen::Vocabulary::split_words(t).size());
  return n;
}

}  // namespace

void EvalConfig::validate() const {
  if (context_lengths.empty()) throw ConfigError("eval context_lengths must not be empty");
  for (std::size_t i = 0; i < context_lengths.size(); ++i) {
    if (context_lengths[i] == 0) throw ConfigError("eval context lengths must be > 0");
    if (i && context_lengths[i] <= context_lengths[i - 1])
      throw ConfigError("eval context_lengths must be strictly ascending");
  }
  if (n_examples_per_length == 0) throw ConfigError("n_examples_per_length must be >= 1");
  if (max_new == 0) throw ConfigError("eval max_new must be >= 1");
}

void EvalConfig::validate(const nn::ModelConfig& model, const CorpusConfig& corpus) const {
  validate();
  const std::size_t headroom = max_query_len(corpus) + max_new;
  for (auto L : context_lengths) {
    if (L + headroom > model.max_seq_len)
      throw LengthError("eval length " + std::to_string(L) + " plus " + std::to_string(headroom) +
                            " query/answer tokens exceeds max_seq_len " +
                            std::to_string(model.max_seq_len),
                        model.max_seq_len);
  }
}

std::uint64_t eval_seed(const EvalConfig& cfg, std::size_t length) {
  return derive_seed(derive_seed(cfg.seed, "eval"), static_cast<std::uint64_t>(length));
}

void check_held_out(const EvalConfig& cfg, const std::vector<std::uint64_t>& training_seeds) {
  for (auto L : cfg.context_lengths) {
    const auto s = eval_seed(cfg, L);
    if (std::find(training_seeds.begin(), training_seeds.end(), s) != training_seeds.end())
      throw DataError("evaluation corpus for length " + std::to_string(L) +
                      " overlaps a training corpus (seed " + std::to_string(s) + ")");
  }
}

std::vector<Triplet> eval_examples(const CorpusConfig& corpus, const taskgen::Vocabulary& vocab,
                                   const EvalConfig& cfg, std::size_t length) {
  CorpusConfig c = corpus.at_length(length);
  c.seed = eval_seed(cfg, length);
  c.n_triplets = cfg.n_examples_per_length;
  std::vector<Triplet> out;
  out.reserve(c.n_triplets);
  for (std::size_t i = 0; i < c.n_triplets; ++i) out.push_back(taskgen::make_triplet(c, vocab, i));
  return out;
}

bool exact_match(const TokenSeq& response, const TokenSeq& gold, nn::TokenId eos) {
  if (response.size() != gold.size() + 1 || response.back() != eos) return false;
  return std::equal(gold.begin(), gold.end(), response.begin());
}

std::vector<std::size_t> EvalReport::axis() const {
  std::vector<std::size_t> a;
  for (const auto& l : lengths) a.push_back(l.length);
  return a;
}

double EvalReport::accuracy_at(std::size_t length) const {
  for (const auto& l : lengths)
    if (l.length == length) return l.accuracy;
  throw ShapeError("report has no length " + std::to_string(length));
}

std::string report_to_json(const EvalReport& r) {
  json j;
  j["decode"] = r.decode;
  j["max_new"] = r.max_new;
  j["seed"] = r.seed;
  j["checkpoint_id"] = r.checkpoint_id;
  j["n_examples"] = r.n_examples;
  j["mean_rkl"] = r.mean_rkl;
  j["lengths"] = json::array();
  for (const auto& l : r.lengths)
    j["lengths"].push_back({{"length", l.length},
                            {"n_examples", l.n_examples},
                            {"n_correct", l.n_correct},
                            {"accuracy", l.accuracy},
                            {"mean_rkl", l.mean_rkl},
                            {"n_tokens", l.n_tokens}});
  return j.dump(2) + "\n";
}

EvalReport report_from_json(std::string_view text) {
  try {
    const json j = json::parse(text);
    EvalReport r;
    r.decode = j.at("decode").get<std::string>();
    r.max_new = j.at("max_new").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.checkpoint_id = j.at("checkpoint_id").get<std::string>();
    r.n_examples = j.at("n_examples").get<std::size_t>();
    r.mean_rkl = j.at("mean_rkl").get<double>();
    for (const auto& l : j.at("lengths")) {
      LengthResult x;
      x.length = l.at("length").get<std::size_t>();
      x.n_examples = l.at("n_examples").get<std::size_t>();
      x.n_correct = l.at("n_correct").get<std::size_t>();
      x.accuracy = l.at("accuracy").get<double>();
      x.mean_rkl = l.at("mean_rkl").get<double>();
      x.n_tokens = l.at("n_tokens").get<std::size_t>();
      if (x.accuracy < 0.0 || x.accuracy > 1.0)
        throw DataError("accuracy outside [0, 1] in eval report");
      r.lengths.push_back(x);
    }
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed eval report: ") + e.what());
  }
}

std::string checkpoint_fingerprint(const ModelState& state) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  auto feed = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001B3ull;
    }
  };
  feed(state.params.data(), state.params.size() * sizeof(double));
  feed(&state.step, sizeof state.step);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

EvalReport eval_retrieval(const ModelState& state, const CorpusConfig& corpus,
                          const EvalConfig& cfg, const Decoder& decoder) {
  cfg.validate(state.config, corpus);
  const taskgen::Vocabulary vocab(corpus.vocab_spec());
  if (vocab.size() != state.config.vocab_size)
    throw ShapeError("corpus vocabulary has " + std::to_string(vocab.size()) +
                     " tokens, model expects " + std::to_string(state.config.vocab_size));

  EvalReport report;
  report.max_new = cfg.max_new;
  report.seed = cfg.seed;
  report.checkpoint_id = checkpoint_fingerprint(state);
  double rkl_sum = 0.0;
  std::size_t rkl_tokens = 0;

  for (auto L : cfg.context_lengths) {
    LengthResult res;
    res.length = L;
    double sum = 0.0;
    for (const auto& t : eval_examples(corpus, vocab, cfg, L)) {
      const TokenSeq prompt = distill::student_prompt(t);
      TokenSeq response;
      if (decoder) {
        response = decoder(t, prompt);
      } else {
        nn::SampleOptions opt;
        opt.greedy = true;
        opt.max_new = cfg.max_new;
        opt.eos = vocab.eos();
        response = nn::sample_response(state, prompt, opt).response;
      }
      ++res.n_examples;
      if (exact_match(response, t.gold_answer, vocab.eos())) ++res.n_correct;
      if (!response.empty()) {
        const auto a =
            distill::compute_advantages(distill::teacher_logprobs(state, t, response),
                                        distill::student_logprobs(state, t, response));
        for (double x : a.values) sum -= x;
        res.n_tokens += a.values.size();
      }
    }
    res.accuracy = static_cast<double>(res.n_correct) / static_cast<double>(res.n_examples);
    res.mean_rkl = res.n_tokens ? sum / static_cast<double>(res.n_tokens) : 0.0;
    rkl_sum += sum;
    rkl_tokens += res.n_tokens;
    report.n_examples += res.n_examples;
    report.lengths.push_back(res);
  }
  report.mean_rkl = rkl_tokens ? rkl_sum / static_cast<double>(rkl_tokens) : 0.0;
  return report;
}

double eval_short(const ModelState& state, const CorpusConfig& corpus, const EvalConfig& cfg,
                  const Decoder& decoder) {
  EvalConfig c = cfg;
  c.context_lengths = {corpus.short_len};
  return eval_retrieval(state, corpus, c, decoder).lengths.front().accuracy;
}

Preservation preservation_report(const ModelState& before, const ModelState& after,
                                 const CorpusConfig& corpus, const EvalConfig& cfg) {
  if (!(before.config == after.config))
    throw ConfigError("preservation_report needs two states with the same model config");
  Preservation p;
  p.short_acc_before = eval_short(before, corpus, cfg);
  p.short_acc_after = eval_short(after, corpus, cfg);
  p.delta = p.short_acc_after - p.short_acc_before;
  return p;
}

std::string preservation_csv(const Preservation& p) {
  return "short_acc_before,short_acc_after,delta\n" + format_real(p.short_acc_before) + ',' +
         format_real(p.short_acc_after) + ',' + format_real(p.delta) + '\n';
}

Preservation preservation_from_csv(std::string_view text) {
  const auto nl = text.find('\n');
  if (nl == std::string_view::npos || text.substr(0, nl) != "short_acc_before,short_acc_after,delta")
    throw DataError("unexpected preservation CSV header");
  const std::string row(text.substr(nl + 1));
  Preservation p;
  if (std::sscanf(row.c_str(), "%lf,%lf,%lf", &p.short_acc_before, &p.short_acc_after,
                  &p.delta) != 3)
    throw DataError("malformed preservation CSV row");
  return p;
}

std::vector<CompareRow> length_sweep_compare(const EvalReport& base, const EvalReport& ours,
                                             const EvalReport& sft) {
  const auto axis = base.axis();
  if (ours.axis() != axis || sft.axis() != axis)
    throw ShapeError("eval reports do not share a length axis");
  std::vector<CompareRow> rows;
  for (std::size_t i = 0; i < axis.size(); ++i) {
    CompareRow r;
    r.length = axis[i];
    r.acc_base = base.lengths[i].accuracy;
    r.acc_ours = ours.lengths[i].accuracy;
    r.acc_sft = sft.lengths[i].accuracy;
    r.delta_ours = r.acc_ours - r.acc_base;
    r.delta_sft = r.acc_sft - r.acc_base;
    rows.push_back(r);
  }
  return rows;
}

std::string compare_csv(const std::vector<CompareRow>& rows) {
  std::string out = std::string(kCompareHeader) + '\n';
  for (const auto& r : rows)
    out += std::to_string(r.length) + ',' + format_real(r.acc_base) + ',' +
           format_real(r.acc_ours) + ',' + format_real(r.acc_sft) + ',' +
           format_real(r.delta_ours) + ',' + format_real(r.delta_sft) + '\n';
  return out;
}

}  // namespace opsdl::eval
