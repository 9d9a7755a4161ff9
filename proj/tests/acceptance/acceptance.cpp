// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset; the exit status is nonzero when any fails.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "opsdl/cli/cli.hpp"
#include "opsdl/cli/run_config.hpp"
#include "opsdl/distill/advantage.hpp"
#include "opsdl/distill/trainer.hpp"
#include "opsdl/eval/harness.hpp"
#include "opsdl/nn/sampling.hpp"
#include "opsdl/nn/transformer.hpp"
#include "opsdl/oracle/oracle.hpp"
#include "opsdl/rng.hpp"

using namespace opsdl;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (code != cli::kExitOk && code != cli::kExitGate)
    std::fprintf(stderr, "opsdl %s -> %d %s", args[0].c_str(), code, err.str().c_str());
  return code;
}

fs::path scratch(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("opsdl_acceptance_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

Verdict gradient_exactness() {
  const auto r = oracle::grad_check(101, 10);
  return {r.max_rel_error < 1e-4, "max_rel_error=" + fmt("%.3g", r.max_rel_error) + " over " +
                                      std::to_string(r.draws) + " draws, " +
                                      std::to_string(r.n_params) + " params (< 1e-4)"};
}

Verdict estimator_unbiasedness() {
  const auto r = oracle::estimator_check(202, 5, 100000);
  return {r.max_z <= 3.0, "max|z|=" + fmt("%.3f", r.max_z) + " over 5 states, n=1e5 (<= 3)"};
}

Verdict telescoping() {
  double worst = 0.0;
  Rng rng(303);
  std::size_t n = 0;
  for (std::size_t i = 0; n < 100; ++i) {
    const auto setup = oracle::make_enumerable_setup(derive_seed(303, i));
    nn::SampleOptions opt;
    opt.max_new = 4;
    opt.eos = setup.eos;
    opt.seed = rng.next_u64();
    const auto ro =
        nn::sample_response(setup.state, distill::student_prompt(setup.triplet), opt);
    if (ro.response.empty()) continue;
    const auto adv = distill::compute_advantages(
        distill::teacher_logprobs(setup.state, setup.triplet, ro.response),
        distill::student_logprobs(setup.state, setup.triplet, ro.response));
    const auto t = nn::score_response(setup.state, distill::teacher_prompt(setup.triplet),
                                      ro.response);
    const auto s = nn::score_response(setup.state, distill::student_prompt(setup.triplet),
                                      ro.response);
    const double joint = std::accumulate(t.begin(), t.end(), 0.0) -
                         std::accumulate(s.begin(), s.end(), 0.0);
    const double sum = std::accumulate(adv.values.begin(), adv.values.end(), 0.0);
    worst = std::max(worst, std::abs(sum - joint));
    ++n;
  }
  return {worst <= 1e-10, "max|sum A_t - joint log-ratio|=" + fmt("%.3g", worst) +
                              " over 100 rollouts (<= 1e-10)"};
}

Verdict fixed_point() {
  taskgen::CorpusConfig c;
  c.n_triplets = 16;
  c.long_len = 32;
  c.short_len = 32;  // the short window is the whole document
  c.n_facts_per_doc = 2;
  c.n_keys = 8;
  c.n_values = 8;
  c.n_filler = 8;
  c.seed = 404;
  c.query_templates = {"what is the value of {key}"};
  const auto corpus = taskgen::build_corpus(c);
  nn::ModelConfig m;
  m.vocab_size = corpus.vocab.size();
  m.n_layers = 1;
  m.d_model = 16;
  m.n_heads = 2;
  m.d_ff = 32;
  m.max_seq_len = 48;
  m.init_std = 0.3;
  const auto init = nn::init_model(m, 404);
  distill::DistillConfig d;
  d.steps = 25;
  d.batch_triplets = 4;
  d.rollouts_per_triplet = 2;
  d.lr = 1e-2;
  d.seed = 404;
  double max_abs = 0.0;
  std::size_t tokens = 0;
  distill::TrainHooks hooks;
  hooks.on_step = [&](const distill::StepStats& s, const nn::ModelState&) {
    max_abs = std::max(max_abs, s.mean_abs_advantage);
    tokens += s.n_tokens;
  };
  const auto r = distill::train(init, d, corpus.triplets, corpus.vocab.eos(), hooks);
  const bool same = r.state.params.size() == init.params.size() &&
                    std::memcmp(r.state.params.data(), init.params.data(),
                                init.params.size() * sizeof(double)) == 0;
  return {max_abs == 0.0 && same && tokens > 0,
          "max mean|A_t|=" + fmt("%.3g", max_abs) + " over " + std::to_string(tokens) +
              " tokens, params bitwise unchanged after 25 steps: " + (same ? "yes" : "no")};
}

Verdict frozen_teacher_convergence() {
  auto student = oracle::make_enumerable_setup(505);
  const auto teacher = oracle::make_enumerable_setup(506).state;
  const auto& t = student.triplet;
  const double before = oracle::enumerate_sequence_rkl(student.state, teacher, t,
                                                       student.max_new, student.eos);
  distill::DistillConfig d;
  d.steps = 500;
  d.batch_triplets = 1;
  d.rollouts_per_triplet = 8;
  d.max_new = student.max_new;
  d.lr = 1e-2;
  d.seed = 505;
  distill::TrainHooks hooks;
  hooks.frozen_teacher = &teacher;
  const std::vector<taskgen::Triplet> corpus{t};
  const auto r = distill::train(student.state, d, corpus, student.eos, hooks);
  const double after =
      oracle::enumerate_sequence_rkl(r.state, teacher, t, student.max_new, student.eos);
  const double drop = 1.0 - after / before;
  return {drop >= 0.90, "sequence RKL " + fmt("%.4f", before) + " -> " + fmt("%.4f", after) +
                            " (decrease " + fmt("%.1f", 100 * drop) + "%, >= 90%)"};
}

// Runs the reference recipe once; criteria 6 and 7 read its outputs.
struct Experiment {
  bool ran = false;
  bool ok = false;
  std::string error;
  nlohmann::json gate;
  std::map<std::size_t, std::array<double, 3>> acc;  // base, ours, sft
  std::size_t short_len = 0, long_len = 0;
};

Experiment& experiment() {
  static Experiment e;
  if (e.ran) return e;
  e.ran = true;
  const std::string cfg = OPSDL_REFERENCE_CONFIG;
  const auto dir = scratch("reference");
  const auto out = dir.string();
  auto j = nlohmann::json::parse(slurp(cfg));
  j["mode"] = "long-sft";
  const auto sft_cfg = (dir / "long_sft.json").string();
  std::ofstream(sft_cfg) << j.dump(2);

  if (cli({"gen-data", "--config", cfg, "--out", out}) != 0) return e.error = "gen-data failed", e;
  const int pre = cli({"pretrain", "--config", cfg, "--out", out});
  e.gate = nlohmann::json::parse(slurp(dir / "metrics" / "pretrain_gate.json"));
  if (pre != 0 && pre != cli::kExitGate) return e.error = "pretrain failed", e;
  if (cli({"train", "--config", cfg, "--out", out}) != 0) return e.error = "opsdl train failed", e;
  if (cli({"train", "--config", sft_cfg, "--out", out}) != 0)
    return e.error = "long-sft train failed", e;
  if (cli({"compare", "--config", cfg, "--out", out, "--base",
           (dir / "metrics" / "pretrain_eval.json").string(), "--ours",
           (dir / "checkpoints" / "opsdl.ckpt").string(), "--sft",
           (dir / "checkpoints" / "long-sft.ckpt").string()}) != 0)
    return e.error = "compare failed", e;

  std::istringstream csv(slurp(dir / "metrics" / "compare.csv"));
  std::string line;
  std::getline(csv, line);
  while (std::getline(csv, line)) {
    std::size_t len;
    double b, o, s;
    if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf", &len, &b, &o, &s) == 4) e.acc[len] = {b, o, s};
  }
  e.short_len = e.gate.at("short_len").get<std::size_t>();
  e.long_len = e.gate.at("long_length").get<std::size_t>();
  e.ok = e.acc.count(e.short_len) && e.acc.count(e.long_len);
  if (!e.ok) e.error = "compare.csv lacks the short or long length";
  return e;
}

Verdict gap_closing() {
  auto& e = experiment();
  if (!e.ok) return {false, e.error};
  const double short_acc = e.gate.at("short_acc").get<double>();
  const auto& L = e.acc.at(e.long_len);
  const double gap = short_acc - L[0];
  const bool a = short_acc >= 0.90 && gap >= 0.20;
  const double rec_ours = gap > 0 ? (L[1] - L[0]) / gap : 0.0;
  const double rec_sft = gap > 0 ? (L[2] - L[0]) / gap : 0.0;
  const bool b = rec_ours >= 0.5;
  const bool c = rec_ours >= rec_sft;
  std::string sweep;
  for (const auto& [len, v] : e.acc)
    sweep += " " + std::to_string(len) + ":" + fmt("%.2f", v[0]) + "/" + fmt("%.2f", v[1]) + "/" +
             fmt("%.2f", v[2]);
  return {a && b && c,
          std::string("(a) short=") + fmt("%.2f", short_acc) + " gap@" +
              std::to_string(e.long_len) + "=" + fmt("%.2f", gap) + (a ? " ok" : " FAIL") +
              "; (b) OPSDL recovery=" + fmt("%.2f", rec_ours) + (b ? " ok" : " FAIL") +
              "; (c) Long-SFT recovery=" + fmt("%.2f", rec_sft) + (c ? " ok" : " FAIL") +
              "; acc base/opsdl/sft" + sweep};
}

Verdict short_preservation() {
  auto& e = experiment();
  if (!e.ok) return {false, e.error};
  const auto& s = e.acc.at(e.short_len);
  const double drop = s[0] - s[1];
  return {drop <= 0.02, "short accuracy " + fmt("%.2f", s[0]) + " -> " + fmt("%.2f", s[1]) +
                            " (drop " + fmt("%.2f", drop) + ", <= 0.02)"};
}

Verdict determinism() {
  // Every subcommand of a scaled-down run, twice, compared byte for byte.
  auto j = nlohmann::json::parse(slurp(OPSDL_REFERENCE_CONFIG));
  j["corpus"]["n_triplets"] = 40;
  j["pretrain"]["steps"] = 20;
  j["distill"]["steps"] = 6;
  j["distill"]["checkpoint_every"] = 3;
  j["eval"]["n_examples_per_length"] = 5;
  std::vector<std::map<std::string, std::string>> runs;
  for (const char* name : {"det_a", "det_b"}) {
    const auto dir = scratch(name);
    const auto out = dir.string();
    const auto cfg = (dir / "run.json").string(), sft = (dir / "sft.json").string();
    std::ofstream(cfg) << j.dump();
    auto js = j;
    js["mode"] = "long-sft";
    std::ofstream(sft) << js.dump();
    const auto ck = (dir / "checkpoints" / "pretrain.ckpt").string();
    cli({"gen-data", "--config", cfg, "--out", out, "--deterministic"});
    cli({"pretrain", "--config", cfg, "--out", out, "--deterministic"});
    cli({"train", "--config", cfg, "--out", out, "--deterministic"});
    cli({"train", "--config", sft, "--out", out, "--deterministic"});
    cli({"eval", "--config", cfg, "--out", out, "--checkpoint", ck, "--deterministic"});
    cli({"compare", "--config", cfg, "--out", out, "--deterministic", "--base", ck, "--ours",
         (dir / "checkpoints" / "opsdl.ckpt").string(), "--sft",
         (dir / "checkpoints" / "long-sft.ckpt").string()});
    const auto corpus = taskgen::read_corpus(dir / "corpus");
    cli({"advantages", "--config", cfg, "--out", out, "--checkpoint", ck, "--triplet",
         corpus.triplets.front().id, "--deterministic"});
    std::map<std::string, std::string> files;
    for (const auto& sub : {"metrics", "corpus", "checkpoints"})
      for (const auto& f : fs::directory_iterator(dir / sub))
        files[std::string(sub) + "/" + f.path().filename().string()] = slurp(f.path());
    runs.push_back(std::move(files));
  }
  std::size_t differing = 0, csvs = 0;
  for (const auto& [name, text] : runs[0]) {
    if (name.size() > 4 && name.substr(name.size() - 4) == ".csv") ++csvs;
    const auto it = runs[1].find(name);
    if (it == runs[1].end() || it->second != text) ++differing;
  }
  const bool same_set = runs[0].size() == runs[1].size();
  return {differing == 0 && same_set && csvs >= 5,
          std::to_string(runs[0].size()) + " output files (" + std::to_string(csvs) +
              " CSVs) across all subcommands, " + std::to_string(differing) + " differ"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria = {
      {"gradient exactness", gradient_exactness},
      {"point-wise reverse-KL estimator unbiasedness", estimator_unbiasedness},
      {"telescoping identity", telescoping},
      {"fixed point", fixed_point},
      {"frozen-teacher convergence", frozen_teacher_convergence},
      {"desk-scale gap closing", gap_closing},
      {"short-context preservation", short_preservation},
      {"determinism", determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] %d %s: %s (%.1fs)\n", v.pass ? "PASS" : "FAIL", id, criteria[i].first,
                v.detail.c_str(), secs);
    std::fflush(stdout);
    if (!v.pass) ++failed;
  }
  return failed ? 1 : 0;
}
