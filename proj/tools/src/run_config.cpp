#include "opsdl/cli/run_config.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "opsdl/error.hpp"
#include "opsdl/rng.hpp"

namespace opsdl::cli {

using nlohmann::json;

std::string to_string(Mode m) {
  switch (m) {
    case Mode::pretrain_short: return "pretrain-short";
    case Mode::opsdl: return "opsdl";
    case Mode::long_sft: return "long-sft";
    case Mode::eval: return "eval";
    case Mode::compare: return "compare";
  }
  return "opsdl";
}

Mode parse_mode(const std::string& s) {
  for (Mode m : {Mode::pretrain_short, Mode::opsdl, Mode::long_sft, Mode::eval, Mode::compare})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown mode '" + s + "'");
}

namespace {

json model_json(const nn::ModelConfig& m) {
  return {{"vocab_size", m.vocab_size},   {"n_layers", m.n_layers},
          {"d_model", m.d_model},         {"n_heads", m.n_heads},
          {"d_ff", m.d_ff},               {"max_seq_len", m.max_seq_len},
          {"pos_encoding", nn::to_string(m.pos_encoding)},
          {"dtype", nn::to_string(m.dtype)},
          {"rope_base", m.rope_base},     {"init_std", m.init_std}};
}

nn::ModelConfig model_from(const json& j) {
  nn::ModelConfig m;
  m.vocab_size = j.value("vocab_size", std::size_t{0});
  m.n_layers = j.value("n_layers", m.n_layers);
  m.d_model = j.value("d_model", m.d_model);
  m.n_heads = j.value("n_heads", m.n_heads);
  m.d_ff = j.value("d_ff", m.d_ff);
  m.max_seq_len = j.value("max_seq_len", m.max_seq_len);
  m.pos_encoding = nn::parse_pos_encoding(j.value("pos_encoding", nn::to_string(m.pos_encoding)));
  m.dtype = nn::parse_dtype(j.value("dtype", nn::to_string(m.dtype)));
  m.rope_base = j.value("rope_base", m.rope_base);
  m.init_std = j.value("init_std", m.init_std);
  return m;
}

json pretrain_json(const distill::PretrainConfig& p) {
  return {{"steps", p.steps},
          {"batch", p.batch},
          {"lr", p.lr},
          {"warmup", p.warmup},
          {"min_len", p.min_len},
          {"queries_per_doc", p.queries_per_doc},
          {"gate_short_acc", p.gate_short_acc},
          {"gate_min_gap", p.gate_min_gap}};
}

distill::PretrainConfig pretrain_from(const json& j) {
  distill::PretrainConfig p;
  p.steps = j.value("steps", p.steps);
  p.batch = j.value("batch", p.batch);
  p.lr = j.value("lr", p.lr);
  p.warmup = j.value("warmup", p.warmup);
  p.min_len = j.value("min_len", p.min_len);
  p.queries_per_doc = j.value("queries_per_doc", p.queries_per_doc);
  p.gate_short_acc = j.value("gate_short_acc", p.gate_short_acc);
  p.gate_min_gap = j.value("gate_min_gap", p.gate_min_gap);
  return p;
}

json distill_json(const distill::DistillConfig& d) {
  json j = {{"rollouts_per_triplet", d.rollouts_per_triplet},
            {"batch_triplets", d.batch_triplets},
            {"max_new", d.max_new},
            {"temperature", d.temperature},
            {"lr", d.lr},
            {"steps", d.steps},
            {"checkpoint_every", d.checkpoint_every},
            {"reset_optimizer", d.reset_optimizer}};
  j["advantage_clip"] = d.advantage_clip ? json(*d.advantage_clip) : json(nullptr);
  return j;
}

distill::DistillConfig distill_from(const json& j) {
  distill::DistillConfig d;
  d.rollouts_per_triplet = j.value("rollouts_per_triplet", d.rollouts_per_triplet);
  d.batch_triplets = j.value("batch_triplets", d.batch_triplets);
  d.max_new = j.value("max_new", d.max_new);
  d.temperature = j.value("temperature", d.temperature);
  d.lr = j.value("lr", d.lr);
  d.steps = j.value("steps", d.steps);
  d.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  d.reset_optimizer = j.value("reset_optimizer", d.reset_optimizer);
  if (j.contains("advantage_clip") && !j.at("advantage_clip").is_null())
    d.advantage_clip = j.at("advantage_clip").get<double>();
  return d;
}

json eval_json(const eval::EvalConfig& e) {
  return {{"context_lengths", e.context_lengths},
          {"n_examples_per_length", e.n_examples_per_length},
          {"max_new", e.max_new}};
}

eval::EvalConfig eval_from(const json& j) {
  eval::EvalConfig e;
  e.context_lengths = j.value("context_lengths", e.context_lengths);
  e.n_examples_per_length = j.value("n_examples_per_length", e.n_examples_per_length);
  e.max_new = j.value("max_new", e.max_new);
  return e;
}

const json& section(const json& j, const char* name) {
  static const json empty = json::object();
  if (!j.contains(name)) return empty;
  if (!j.at(name).is_object()) throw ConfigError(std::string("'") + name + "' must be an object");
  return j.at(name);
}

}  // namespace

void RunConfig::resolve() {
  corpus.seed = derive_seed(seed, "data");
  pretrain.seed = derive_seed(seed, "pretrain");
  distill.seed = derive_seed(seed, "rollout");
  eval.seed = derive_seed(seed, "eval");
  const std::size_t vocab = taskgen::Vocabulary(corpus.vocab_spec()).size();
  if (model.vocab_size == 0) model.vocab_size = vocab;
  if (model.vocab_size != vocab)
    throw ConfigError("model.vocab_size " + std::to_string(model.vocab_size) +
                      " does not match the corpus vocabulary (" + std::to_string(vocab) + ")");
  model.validate();
  const std::size_t query = [&] {
    std::size_t n = 0;
    for (const auto& t : corpus.query_templates)
      n = std::max(n, taskgen::Vocabulary::split_words(t).size());
    return n;
  }();
  const std::size_t headroom = query + std::max(distill.max_new, eval.max_new);
  if (model.max_seq_len < headroom + 1)
    throw ConfigError("model.max_seq_len leaves no room for a context");
  corpus.validate(model.max_seq_len - headroom);
  distill.validate();
  eval.validate(model, corpus);
  if (mode == Mode::pretrain_short || mode == Mode::opsdl || mode == Mode::long_sft)
    pretrain.validate(corpus);
}

RunConfig parse_run_config(std::string_view text) {
  try {
    const json j = json::parse(text);
    if (!j.is_object()) throw ConfigError("run config must be a JSON object");
    RunConfig c;
    c.run_id = j.value("run_id", c.run_id);
    c.mode = parse_mode(j.value("mode", to_string(c.mode)));
    c.seed = j.value("seed", c.seed);
    c.model = model_from(section(j, "model"));
    c.corpus = taskgen::corpus_config_from_json(section(j, "corpus").dump());
    c.pretrain = pretrain_from(section(j, "pretrain"));
    c.distill = distill_from(section(j, "distill"));
    c.eval = eval_from(section(j, "eval"));
    const json& p = section(j, "paths");
    c.paths.corpus = p.value("corpus", c.paths.corpus);
    c.paths.checkpoints = p.value("checkpoints", c.paths.checkpoints);
    c.paths.metrics = p.value("metrics", c.paths.metrics);
    c.paths.init = p.value("init", c.paths.init);
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string model_config_to_json(const nn::ModelConfig& m) { return model_json(m).dump(); }

std::string run_config_to_json(const RunConfig& c) {
  json j;
  j["run_id"] = c.run_id;
  j["mode"] = to_string(c.mode);
  j["seed"] = c.seed;
  j["model"] = model_json(c.model);
  j["corpus"] = json::parse(taskgen::corpus_config_to_json(c.corpus));
  j["pretrain"] = pretrain_json(c.pretrain);
  j["distill"] = distill_json(c.distill);
  j["eval"] = eval_json(c.eval);
  j["paths"] = {{"corpus", c.paths.corpus},
                {"checkpoints", c.paths.checkpoints},
                {"metrics", c.paths.metrics},
                {"init", c.paths.init}};
  return j.dump(2) + "\n";
}

}  // namespace opsdl::cli
