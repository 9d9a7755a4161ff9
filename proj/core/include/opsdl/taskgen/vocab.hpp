#pragma once

#include <string>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "opsdl/nn/model.hpp"

namespace opsdl::taskgen {

using nn::TokenId;
using nn::TokenSeq;

// Word-level vocabulary. Token classes occupy disjoint id ranges so a token's
// role (key, value, filler, template word) is recoverable from its id.
class Vocabulary {
 public:
  enum class Kind { special, key, value, filler, word };

  struct Spec {
    std::size_t n_keys = 32;
    std::size_t n_values = 32;
    std::size_t n_filler = 64;
    std::vector<std::string> templates;  // words of these become `word` tokens
  };

  Vocabulary() = default;
  explicit Vocabulary(const Spec& spec);
  // Rebuild from a stored token table (corpus header).
  static Vocabulary from_table(const std::vector<std::string>& table,
                               const std::vector<Kind>& kinds);

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const;
  Kind kind(TokenId id) const;
  TokenId id(std::string_view token) const;  // throws DataError when unknown
  bool contains(std::string_view token) const;

  TokenId eos() const { return eos_; }
  TokenId assign() const { return assign_; }  // "="
  TokenId end_fact() const { return end_fact_; }  // ";"

  const std::vector<TokenId>& keys() const { return keys_; }
  const std::vector<TokenId>& values() const { return values_; }
  const std::vector<TokenId>& fillers() const { return fillers_; }

  // Whitespace split; punctuation characters become their own tokens.
  TokenSeq encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> ids) const;

  const std::vector<std::string>& table() const { return tokens_; }
  const std::vector<Kind>& kinds() const { return kinds_; }

  static std::string kind_name(Kind k);
  static Kind parse_kind(const std::string& s);
  static std::vector<std::string> split_words(std::string_view text);

 private:
  TokenId add(std::string token, Kind kind);
  void index();

  std::vector<std::string> tokens_;
  std::vector<Kind> kinds_;
  std::unordered_map<std::string, TokenId> lookup_;
  std::vector<TokenId> keys_, values_, fillers_;
  TokenId eos_ = 0, assign_ = 0, end_fact_ = 0;
};

}  // namespace opsdl::taskgen
