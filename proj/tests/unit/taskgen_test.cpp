#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "opsdl/error.hpp"
#include "opsdl/taskgen/corpus.hpp"
#include "opsdl/taskgen/vocab.hpp"

using namespace opsdl;
using namespace opsdl::taskgen;

namespace {

CorpusConfig small_cfg() {
  CorpusConfig c;
  c.n_triplets = 100;
  c.long_len = 96;
  c.short_len = 32;
  c.n_facts_per_doc = 6;
  c.seed = 11;
  c.query_templates = {"what is the value of {key} ?", "{key} maps to what ?"};
  return c;
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("opsdl_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

// Wilson-Hilferty approximation of the chi-square upper quantile.
double chi2_quantile(double dof, double z) {
  const double a = 2.0 / (9.0 * dof);
  return dof * std::pow(1.0 - a + z * std::sqrt(a), 3.0);
}

}  // namespace

TEST_CASE("vocabulary classes are disjoint and round-trip") {
  Vocabulary v(small_cfg().vocab_spec());
  std::set<TokenId> keys(v.keys().begin(), v.keys().end());
  for (auto x : v.values()) CHECK(keys.count(x) == 0);
  for (auto x : v.fillers()) {
    CHECK(keys.count(x) == 0);
    CHECK(v.kind(x) == Vocabulary::Kind::filler);
  }
  CHECK(v.eos() == 0);
  const auto ids = v.encode("what is the value of K3 ?");
  CHECK(v.decode(ids) == "what is the value of K3 ?");
  CHECK_THROWS_AS(v.id("nonexistent"), DataError);
  const auto copy = Vocabulary::from_table(v.table(), v.kinds());
  CHECK(copy.table() == v.table());
  CHECK(copy.keys() == v.keys());
}

TEST_CASE("gen_document: single fact in a 64-token document") {
  CorpusConfig c;
  c.long_len = 64;
  c.n_facts_per_doc = 1;
  Vocabulary v(c.vocab_spec());
  Rng rng(3);
  const auto doc = gen_document(c, v, rng);
  CHECK(doc.tokens.size() == 64);
  REQUIRE(doc.facts.size() == 1);
  CHECK(doc.facts[0].position < 64);
  CHECK(doc.facts[0].end() <= 64);
  CHECK(doc.tokens[doc.facts[0].position] == doc.facts[0].key);
}

TEST_CASE("gen_document is deterministic and keys are unique") {
  const auto c = small_cfg();
  Vocabulary v(c.vocab_spec());
  Rng a(5), b(5);
  const auto d1 = gen_document(c, v, a);
  const auto d2 = gen_document(c, v, b);
  CHECK(d1.tokens == d2.tokens);
  CHECK(d1.facts == d2.facts);
  std::set<TokenId> keys;
  for (std::size_t i = 0; i < d1.facts.size(); ++i) {
    keys.insert(d1.facts[i].key);
    if (i) CHECK(d1.facts[i].position >= d1.facts[i - 1].end());
  }
  CHECK(keys.size() == d1.facts.size());
}

TEST_CASE("gen_document rejects facts that cannot fit") {
  CorpusConfig c;
  c.long_len = 10;
  c.n_facts_per_doc = 3;
  Vocabulary v(c.vocab_spec());
  Rng rng(1);
  CHECK_THROWS_AS(gen_document(c, v, rng), DataError);
}

TEST_CASE("fact positions are uniform over allowed offsets (chi-square)") {
  CorpusConfig c;
  c.long_len = 64;
  c.n_facts_per_doc = 1;
  Vocabulary v(c.vocab_spec());
  const std::size_t bins = c.long_len - kFactLength + 1;
  const int n = 1000;
  std::vector<int> hist(bins, 0);
  Rng rng(2024);
  for (int i = 0; i < n; ++i) ++hist[gen_document(c, v, rng).facts[0].position];
  const double expected = static_cast<double>(n) / static_cast<double>(bins);
  double chi2 = 0.0;
  for (int h : hist) chi2 += (h - expected) * (h - expected) / expected;
  // p > 0.001 <=> chi2 below the 0.999 quantile (z = 3.0902).
  CHECK(chi2 < chi2_quantile(static_cast<double>(bins - 1), 3.0902));
}

TEST_CASE("extract_short: whole-document window") {
  TokenSeq doc(20, 5);
  std::vector<Fact> facts{{1, 2, 10}};
  Rng rng(1);
  auto [span, slice] = extract_short(doc, facts, 0, 20, rng);
  CHECK(span.start == 0);
  CHECK(span.end == 20);
  CHECK(slice == doc);
}

TEST_CASE("extract_short: containment over 100 draws, all placements reachable") {
  TokenSeq doc(40);
  for (std::size_t i = 0; i < doc.size(); ++i) doc[i] = static_cast<TokenId>(i);
  std::vector<Fact> facts{{1, 2, 0}, {3, 4, 20}};
  Rng rng(9);
  for (int i = 0; i < 100; ++i) {
    auto [span, slice] = extract_short(doc, facts, 0, 8, rng);
    CHECK(span.start == 0);
    CHECK(span.size() == 8);
  }
  std::set<std::size_t> starts;
  for (int i = 0; i < 100; ++i) {
    auto [span, slice] = extract_short(doc, facts, 1, 8, rng);
    CHECK(span.start <= 20);
    CHECK(span.end >= 24);
    CHECK(span.end <= doc.size());
    for (std::size_t k = 0; k < slice.size(); ++k) CHECK(slice[k] == doc[span.start + k]);
    starts.insert(span.start);
  }
  // valid starts for fact [20,24) in an 8-window: 16..20
  CHECK(starts == std::set<std::size_t>{16, 17, 18, 19, 20});
  CHECK_THROWS_AS(extract_short(doc, facts, 0, 41, rng), DataError);
  CHECK_THROWS_AS(extract_short(doc, facts, 0, 3, rng), DataError);
}

TEST_CASE("gen_query: definitional format") {
  Vocabulary::Spec spec;
  spec.n_keys = 8;
  spec.n_values = 100;
  spec.templates = {"What is the value of {key}?"};
  Vocabulary v(spec);
  const Fact f{v.id("K7"), v.id("V93"), 0};
  Rng rng(1);
  auto [q, gold] = gen_query(f, spec.templates, v, rng);
  CHECK(q == v.encode("What is the value of K7 ?"));
  CHECK(v.decode(q) == "What is the value of K7 ?");
  CHECK(gold == TokenSeq{v.id("V93")});
}

TEST_CASE("gen_query: same seed gives the same template") {
  const auto c = small_cfg();
  Vocabulary v(c.vocab_spec());
  const Fact f{v.keys()[0], v.values()[0], 0};
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng a(s), b(s);
    CHECK(gen_query(f, c.query_templates, v, a).first == gen_query(f, c.query_templates, v, b).first);
  }
}

TEST_CASE("corpus triplets satisfy every invariant") {
  const auto corpus = build_corpus(small_cfg());
  REQUIRE(corpus.triplets.size() == 100);
  std::set<std::string> ids;
  for (const auto& t : corpus.triplets) {
    CHECK(validate_triplet(t, corpus.vocab).empty());
    CHECK(t.short_context.size() == 32);
    CHECK(t.long_context.size() == 96);
    for (auto g : t.gold_answer) CHECK(std::find(t.query.begin(), t.query.end(), g) == t.query.end());
    ids.insert(t.id);
  }
  CHECK(ids.size() == corpus.triplets.size());
  CHECK(build_corpus(small_cfg()).triplets == corpus.triplets);
}

TEST_CASE("validate_triplet reports a broken slice") {
  const auto corpus = build_corpus(small_cfg());
  auto t = corpus.triplets[0];
  t.short_context[0] = t.short_context[0] == 0 ? 1 : 0;
  CHECK_FALSE(validate_triplet(t, corpus.vocab).empty());
}

TEST_CASE("corpus persistence round-trips") {
  const auto corpus = build_corpus(small_cfg());
  const auto dir = scratch_dir("corpus_rt");
  write_corpus(corpus, dir);
  const auto back = read_corpus(dir);
  CHECK(back.triplets == corpus.triplets);
  CHECK(back.vocab.table() == corpus.vocab.table());
  CHECK(corpus_config_to_json(back.config) == corpus_config_to_json(corpus.config));
  std::filesystem::remove_all(dir);
}

TEST_CASE("empty corpus writes a valid empty file") {
  auto c = small_cfg();
  c.n_triplets = 0;
  const auto corpus = build_corpus(c);
  CHECK(corpus.triplets.empty());
  const auto dir = scratch_dir("corpus_empty");
  write_corpus(corpus, dir);
  CHECK(std::filesystem::file_size(dir / "corpus.jsonl") == 0);
  CHECK(read_corpus(dir).triplets.empty());
  std::filesystem::remove_all(dir);
}

TEST_CASE("read_corpus surfaces the path on failure") {
  const auto dir = scratch_dir("corpus_missing");
  try {
    read_corpus(dir);
    FAIL("expected an error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("opsdl_test_corpus_missing") != std::string::npos);
  }
}

TEST_CASE("corpus config validation") {
  auto c = small_cfg();
  c.short_len = c.long_len + 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_cfg();
  c.n_facts_per_doc = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_cfg();
  CHECK_THROWS_AS(c.validate(64), ConfigError);
  const auto j = corpus_config_to_json(small_cfg());
  CHECK(corpus_config_to_json(corpus_config_from_json(j)) == j);
  CHECK_THROWS_AS(corpus_config_from_json("{not json"), ConfigError);
}

TEST_CASE("at_length keeps fact density") {
  const auto c = small_cfg();  // 6 facts per 96 tokens
  CHECK(c.at_length(192).n_facts_per_doc == 12);
  CHECK(c.at_length(48).n_facts_per_doc == 3);
  CHECK(c.at_length(16).short_len == 16);
}
