#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "opsdl/rng.hpp"
#include "opsdl/taskgen/vocab.hpp"

namespace opsdl::taskgen {

inline constexpr int kCorpusFormatVersion = 1;
// A fact statement is written as "<key> = <value> ;".
inline constexpr std::size_t kFactLength = 4;

enum class FillerStyle { random_words, repeated_template };
std::string to_string(FillerStyle s);
FillerStyle parse_filler_style(const std::string& s);

struct Fact {
  TokenId key = 0;
  TokenId value = 0;
  std::size_t position = 0;  // offset of the key token

  std::size_t end() const { return position + kFactLength; }
  bool operator==(const Fact&) const = default;
};

struct Span {
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive
  std::size_t size() const { return end - start; }
  bool operator==(const Span&) const = default;
};

struct Triplet {
  std::string id;
  TokenSeq long_context;   // C_L
  Span short_span;
  TokenSeq short_context;  // C_S == long_context[short_span]
  TokenSeq query;          // Q
  TokenSeq gold_answer;
  Fact evidence;

  bool operator==(const Triplet&) const = default;
};

struct CorpusConfig {
  std::size_t n_triplets = 0;
  std::size_t long_len = 512;
  std::size_t short_len = 128;
  std::size_t n_facts_per_doc = 16;  // facts in a document of long_len tokens
  FillerStyle filler_style = FillerStyle::random_words;
  std::uint64_t seed = 0;
  std::vector<std::string> query_templates = {"what is the value of {key} ?"};
  std::size_t n_keys = 32;
  std::size_t n_values = 32;
  std::size_t n_filler = 64;

  // Throws ConfigError. `max_context` is the model window minus query/answer
  // headroom; 0 skips that check.
  void validate(std::size_t max_context = 0) const;

  // Same fact density at a different document length; the short window is
  // capped at the new length.
  CorpusConfig at_length(std::size_t length) const;

  Vocabulary::Spec vocab_spec() const;
};

struct Document {
  TokenSeq tokens;
  std::vector<Fact> facts;  // ascending by position
};

Document gen_document(const CorpusConfig& cfg, const Vocabulary& vocab, Rng& rng);

// A short_len window containing facts[target], start drawn uniformly over all
// valid placements.
std::pair<Span, TokenSeq> extract_short(const TokenSeq& doc, const std::vector<Fact>& facts,
                                        std::size_t target, std::size_t short_len, Rng& rng);

// (query, gold answer) from one of the templates, chosen uniformly.
std::pair<TokenSeq, TokenSeq> gen_query(const Fact& fact,
                                        const std::vector<std::string>& templates,
                                        const Vocabulary& vocab, Rng& rng);

// Triplet `index` of the corpus; depends only on (cfg, index).
Triplet make_triplet(const CorpusConfig& cfg, const Vocabulary& vocab, std::size_t index);

std::string triplet_id(std::uint64_t seed, std::size_t index);

struct Corpus {
  CorpusConfig config;
  Vocabulary vocab;
  std::vector<Triplet> triplets;
};

Corpus build_corpus(const CorpusConfig& cfg);

// Empty result means the triplet satisfies contiguity, answerability and
// no-leakage; otherwise one message per violation.
std::vector<std::string> validate_triplet(const Triplet& t, const Vocabulary& vocab);

// JSON text <-> CorpusConfig; missing keys keep their defaults.
std::string corpus_config_to_json(const CorpusConfig& cfg);
CorpusConfig corpus_config_from_json(std::string_view text);

// <dir>/corpus_header.json and <dir>/corpus.jsonl
void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus read_corpus(const std::filesystem::path& dir);

}  // namespace opsdl::taskgen
