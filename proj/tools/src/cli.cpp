#include "opsdl/cli/cli.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "opsdl/cli/run_config.hpp"
#include "opsdl/distill/advantage.hpp"
#include "opsdl/error.hpp"
#include "opsdl/format.hpp"
#include "opsdl/nn/checkpoint.hpp"
#include "opsdl/oracle/oracle.hpp"
#include "opsdl/rng.hpp"

namespace opsdl::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct GateFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  bool deterministic = false;
};

struct Context {
  RunConfig cfg;
  fs::path out;
  std::ostream& os;

  fs::path under(const std::string& p) const {
    const fs::path path(p);
    return path.is_absolute() ? path : out / path;
  }
  fs::path corpus_dir() const { return under(cfg.paths.corpus); }
  fs::path checkpoint_dir() const { return under(cfg.paths.checkpoints); }
  fs::path metrics_dir() const { return under(cfg.paths.metrics); }
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
  if (!out) throw IoError("write failed for " + p.string());
}

// Loads, overrides the seed, resolves, and echoes the config into --out.
Context open_run(const Common& c, std::ostream& os) {
  if (c.config.empty()) throw ConfigError("--config is required");
  const std::string text = [&] {
    std::ifstream in(c.config, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file " + c.config);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }();
  Context ctx{parse_run_config(text), fs::path(c.out), os};
  if (c.seed) ctx.cfg.seed = *c.seed;
  ctx.cfg.resolve();
  fs::create_directories(ctx.out);
  fs::create_directories(ctx.checkpoint_dir());
  fs::create_directories(ctx.metrics_dir());
  write_file(ctx.out / "config.json", text);
  write_file(ctx.out / "resolved_config.json", run_config_to_json(ctx.cfg));
  return ctx;
}

taskgen::Corpus load_corpus(const Context& ctx) {
  auto corpus = taskgen::read_corpus(ctx.corpus_dir());
  if (corpus.vocab.size() != ctx.cfg.model.vocab_size)
    throw ShapeError("corpus at " + ctx.corpus_dir().string() + " has vocabulary size " +
                     std::to_string(corpus.vocab.size()) + ", config expects " +
                     std::to_string(ctx.cfg.model.vocab_size));
  return corpus;
}

nn::ModelState load_model(const fs::path& p, const RunConfig& cfg) {
  auto state = nn::load_checkpoint(p);
  if (state.config.vocab_size != cfg.model.vocab_size)
    throw ShapeError("checkpoint " + p.string() + " has vocabulary size " +
                     std::to_string(state.config.vocab_size) + ", config expects " +
                     std::to_string(cfg.model.vocab_size));
  return state;
}

int cmd_gen_data(const Context& ctx) {
  eval::check_held_out(ctx.cfg.eval, {ctx.cfg.corpus.seed, ctx.cfg.pretrain.seed});
  const auto corpus = taskgen::build_corpus(ctx.cfg.corpus);
  taskgen::write_corpus(corpus, ctx.corpus_dir());
  ctx.os << "wrote " << corpus.triplets.size() << " triplets to " << ctx.corpus_dir().string()
         << '\n';
  return kExitOk;
}

struct Gate {
  double short_acc = 0.0;
  std::size_t long_length = 0;
  double long_acc = 0.0;
  bool pass = false;
};

// Short accuracy at short_len against the longest evaluated length.
Gate pretrain_gate(const eval::EvalReport& report, const RunConfig& cfg) {
  Gate g;
  g.short_acc = report.accuracy_at(cfg.corpus.short_len);
  g.long_length = report.axis().back();
  g.long_acc = report.accuracy_at(g.long_length);
  g.pass = g.short_acc >= cfg.pretrain.gate_short_acc &&
           g.short_acc - g.long_acc >= cfg.pretrain.gate_min_gap;
  return g;
}

int cmd_pretrain(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  auto state = nn::init_model(cfg.model, cfg.seed);
  const auto csv_path = ctx.metrics_dir() / "pretrain.csv";
  std::string csv = distill::pretrain_csv_header();
  auto result = distill::pretrain_short(
      std::move(state), cfg.corpus, cfg.pretrain,
      [&](const distill::PretrainStats& s, const nn::ModelState&) {
        csv += distill::pretrain_csv_row(s);
      });
  write_file(csv_path, csv);
  nn::save_checkpoint(result.state, ctx.checkpoint_dir() / "pretrain.ckpt");

  auto report = eval::eval_retrieval(result.state, cfg.corpus, cfg.eval);
  write_file(ctx.metrics_dir() / "pretrain_eval.json", eval::report_to_json(report));
  const Gate g = pretrain_gate(report, cfg);
  json gate = {{"short_len", cfg.corpus.short_len},
               {"short_acc", g.short_acc},
               {"long_length", g.long_length},
               {"long_acc", g.long_acc},
               {"gap", g.short_acc - g.long_acc},
               {"gate_short_acc", cfg.pretrain.gate_short_acc},
               {"gate_min_gap", cfg.pretrain.gate_min_gap},
               {"pass", g.pass}};
  write_file(ctx.metrics_dir() / "pretrain_gate.json", gate.dump(2) + "\n");
  ctx.os << gate.dump() << '\n';
  if (!g.pass) {
    throw GateFailure("pretraining did not reach the short/long gate; increase pretrain.steps "
                      "or the model size");
  }
  return kExitOk;
}

int cmd_train(const Context& ctx, const std::string& init_flag) {
  const auto& cfg = ctx.cfg;
  if (cfg.mode != Mode::opsdl && cfg.mode != Mode::long_sft)
    throw ConfigError("train needs mode opsdl or long-sft, got " + to_string(cfg.mode));
  const std::string name = to_string(cfg.mode);
  const fs::path init = !init_flag.empty()        ? fs::path(init_flag)
                        : !cfg.paths.init.empty() ? ctx.under(cfg.paths.init)
                                                  : ctx.checkpoint_dir() / "pretrain.ckpt";
  auto state = load_model(init, cfg);
  const auto corpus = load_corpus(ctx);
  const auto eos = corpus.vocab.eos();

  std::string csv = distill::stats_csv_header();
  distill::TrainHooks hooks;
  hooks.on_step = [&](const distill::StepStats& s, const nn::ModelState&) {
    csv += distill::stats_csv_row(s);
  };
  hooks.on_checkpoint = [&](std::size_t step, const nn::ModelState& s) {
    nn::save_checkpoint(s, ctx.checkpoint_dir() / (name + "_step_" + std::to_string(step) + ".ckpt"));
  };

  distill::TrainResult result;
  if (cfg.mode == Mode::opsdl) {
    result = distill::train(std::move(state), cfg.distill, corpus.triplets, eos, hooks);
  } else {
    const auto targets = distill::make_sft_targets(state, corpus.triplets, eos, cfg.distill.max_new);
    result = distill::train_sft(std::move(state), cfg.distill, targets, hooks);
  }
  write_file(ctx.metrics_dir() / (name + ".csv"), csv);
  nn::save_checkpoint(result.state, ctx.checkpoint_dir() / (name + ".ckpt"));
  ctx.os << name << ": " << result.log.size() << " steps, checkpoint "
         << (ctx.checkpoint_dir() / (name + ".ckpt")).string() << '\n';
  return kExitOk;
}

eval::EvalReport evaluate(const Context& ctx, const fs::path& checkpoint) {
  const auto state = load_model(checkpoint, ctx.cfg);
  return eval::eval_retrieval(state, ctx.cfg.corpus, ctx.cfg.eval);
}

int cmd_eval(const Context& ctx, const std::string& checkpoint, std::string name) {
  if (checkpoint.empty()) throw ConfigError("eval needs --checkpoint");
  if (name.empty()) name = fs::path(checkpoint).stem().string() + "_eval";
  const auto report = evaluate(ctx, checkpoint);
  const std::string text = eval::report_to_json(report);
  write_file(ctx.metrics_dir() / (name + ".json"), text);
  ctx.os << text << '\n';
  return kExitOk;
}

// A report JSON is used as is; anything else is treated as a checkpoint.
eval::EvalReport report_for(const Context& ctx, const std::string& path) {
  if (path.empty()) throw ConfigError("compare needs --base, --ours and --sft");
  if (fs::path(path).extension() == ".json") return eval::report_from_json(read_file(path));
  return evaluate(ctx, path);
}

int cmd_compare(const Context& ctx, const std::string& base_p, const std::string& ours_p,
                const std::string& sft_p) {
  const auto base = report_for(ctx, base_p);
  const auto ours = report_for(ctx, ours_p);
  const auto sft = report_for(ctx, sft_p);
  for (const auto* r : {&ours, &sft})
    if (r->seed != base.seed || r->max_new != base.max_new || r->decode != base.decode)
      throw ConfigError("compare: reports were produced with different eval settings");
  const auto rows = eval::length_sweep_compare(base, ours, sft);
  const std::string csv = eval::compare_csv(rows);

  eval::Preservation p;
  p.short_acc_before = base.accuracy_at(ctx.cfg.corpus.short_len);
  p.short_acc_after = ours.accuracy_at(ctx.cfg.corpus.short_len);
  p.delta = p.short_acc_after - p.short_acc_before;

  write_file(ctx.metrics_dir() / "compare.csv", csv);
  write_file(ctx.metrics_dir() / "preservation.csv", eval::preservation_csv(p));
  write_file(ctx.metrics_dir() / "base_eval.json", eval::report_to_json(base));
  write_file(ctx.metrics_dir() / "ours_eval.json", eval::report_to_json(ours));
  write_file(ctx.metrics_dir() / "sft_eval.json", eval::report_to_json(sft));
  ctx.os << csv;
  return kExitOk;
}

int cmd_advantages(const Context& ctx, const std::string& checkpoint, const std::string& id) {
  if (checkpoint.empty()) throw ConfigError("advantages needs --checkpoint");
  if (id.empty()) throw ConfigError("advantages needs --triplet");
  const auto state = load_model(checkpoint, ctx.cfg);
  const auto corpus = load_corpus(ctx);
  const taskgen::Triplet* t = nullptr;
  for (const auto& x : corpus.triplets)
    if (x.id == id) t = &x;
  if (!t) throw DataError("unknown triplet id '" + id + "'");

  nn::SampleOptions opt;
  opt.max_new = ctx.cfg.distill.max_new;
  opt.temperature = ctx.cfg.distill.temperature;
  opt.eos = corpus.vocab.eos();
  opt.seed = derive_seed(ctx.cfg.distill.seed, id);
  const auto rollout = nn::sample_response(state, distill::student_prompt(*t), opt);
  const std::string csv =
      distill::advantage_csv(distill::advantage_report(state, *t, rollout), corpus.vocab);
  write_file(ctx.metrics_dir() / ("advantages_" + id + ".csv"), csv);
  ctx.os << csv;
  return kExitOk;
}

int cmd_grad_check(std::ostream& os, std::uint64_t seed, std::size_t draws, double tol) {
  const auto r = oracle::grad_check(seed, draws);
  const bool pass = r.max_rel_error < tol;
  os << (pass ? "PASS" : "FAIL") << " grad-check draws=" << r.draws << " params=" << r.n_params
     << " max_rel_error=" << format_real(r.max_rel_error) << " worst=" << r.worst_param
     << " tol=" << format_real(tol) << '\n';
  return pass ? kExitOk : kExitGate;
}

int cmd_estimator_check(std::ostream& os, std::uint64_t seed, std::size_t states,
                        std::size_t samples, double max_z) {
  const auto r = oracle::estimator_check(seed, states, samples);
  const bool pass = r.max_z <= max_z;
  os << (pass ? "PASS" : "FAIL") << " estimator-check states=" << r.states
     << " samples=" << r.n_samples << " max_z=" << format_real(r.max_z)
     << " bound=" << format_real(max_z) << '\n';
  return pass ? kExitOk : kExitGate;
}

void add_common(CLI::App* sub, Common& c, bool need_config) {
  auto* opt = sub->add_option("--config", c.config, "run config JSON");
  if (need_config) opt->required();
  sub->add_option("--seed", c.seed, "root seed; overrides the config");
  sub->add_option("--out", c.out, "output directory")->capture_default_str();
  sub->add_flag("--deterministic", c.deterministic, "sequential accumulation (always on)");
}

std::string error_line(const char* kind, const std::string& message) {
  return json{{"error", kind}, {"message", message}}.dump();
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"On-policy self-distillation for long-context retrieval", "opsdl"};
  app.require_subcommand(1);
  Common common;
  std::string checkpoint, init, name, triplet, base, ours, sft;
  std::size_t draws = 10, states = 5, samples = 100000;
  double tol = 1e-4, max_z = 3.0;

  auto* gen = app.add_subcommand("gen-data", "generate the triplet corpus");
  auto* pre = app.add_subcommand("pretrain", "short-context pretraining with the gate check");
  auto* train = app.add_subcommand("train", "OPSDL or Long-SFT training, per config mode");
  auto* ev = app.add_subcommand("eval", "length-sweep retrieval evaluation of a checkpoint");
  auto* cmp = app.add_subcommand("compare", "base / OPSDL / Long-SFT length-sweep comparison");
  auto* adv = app.add_subcommand("advantages", "per-token advantage table for one rollout");
  auto* gc = app.add_subcommand("grad-check", "analytic gradient against finite differences");
  auto* ec = app.add_subcommand("estimator-check", "Monte-Carlo check of the reverse-KL estimator");
  for (auto* s : {gen, pre, train, ev, cmp, adv}) add_common(s, common, true);
  for (auto* s : {gc, ec}) add_common(s, common, false);

  train->add_option("--init", init, "starting checkpoint");
  ev->add_option("--checkpoint", checkpoint)->required();
  ev->add_option("--name", name, "report file stem");
  cmp->add_option("--base", base, "checkpoint or report JSON")->required();
  cmp->add_option("--ours", ours, "checkpoint or report JSON")->required();
  cmp->add_option("--sft", sft, "checkpoint or report JSON")->required();
  adv->add_option("--checkpoint", checkpoint)->required();
  adv->add_option("--triplet", triplet, "triplet id")->required();
  gc->add_option("--draws", draws)->capture_default_str();
  gc->add_option("--tol", tol)->capture_default_str();
  ec->add_option("--states", states)->capture_default_str();
  ec->add_option("--samples", samples)->capture_default_str();
  ec->add_option("--max-z", max_z)->capture_default_str();

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << error_line("usage", e.what()) << '\n';
    return kExitConfig;
  }

  try {
    if (*gc) return cmd_grad_check(out, common.seed.value_or(0), draws, tol);
    if (*ec) return cmd_estimator_check(out, common.seed.value_or(0), states, samples, max_z);
    const Context ctx = open_run(common, out);
    if (*gen) return cmd_gen_data(ctx);
    if (*pre) return cmd_pretrain(ctx);
    if (*train) return cmd_train(ctx, init);
    if (*ev) return cmd_eval(ctx, checkpoint, name);
    if (*cmp) return cmd_compare(ctx, base, ours, sft);
    if (*adv) return cmd_advantages(ctx, checkpoint, triplet);
  } catch (const Error& e) {
    err << error_line(e.kind(), e.what()) << '\n';
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    err << error_line("io", e.what()) << '\n';
    return kExitData;
  } catch (const GateFailure& e) {
    err << error_line("gate", e.what()) << '\n';
    return kExitGate;
  }
  return kExitConfig;
}

}  // namespace opsdl::cli
