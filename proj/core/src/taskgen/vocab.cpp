#include "opsdl/taskgen/vocab.hpp"

#include <algorithm>
#include <array>
#include <cctype>

#include "opsdl/error.hpp"

namespace opsdl::taskgen {
namespace {

constexpr std::string_view kPunct = "?.,;:=!";

// Filler lexicon. Template words are removed from it at build time.
constexpr std::array<std::string_view, 128> kFillerWords = {
    "river",   "stone",   "cloud",   "forest",  "meadow",  "candle",  "harbor",  "lantern",
    "pepper",  "copper",  "marble",  "willow",  "thunder", "velvet",  "canyon",  "glacier",
    "orchard", "prairie", "saddle",  "timber",  "blossom", "cobalt",  "dune",    "ember",
    "fjord",   "garnet",  "hollow",  "ivory",   "jasper",  "kettle",  "lagoon",  "mosaic",
    "nectar",  "oasis",   "pebble",  "quartz",  "ripple",  "summit",  "tundra",  "umber",
    "valley",  "walnut",  "yonder",  "zephyr",  "anchor",  "basket",  "cedar",   "delta",
    "echo",    "falcon",  "gravel",  "heron",   "island",  "jungle",  "kelp",    "lichen",
    "maple",   "nimbus",  "ocean",   "pine",    "quiver",  "reef",    "sparrow", "thistle",
    "upland",  "violet",  "wander",  "yarrow",  "acorn",   "birch",   "coral",   "drift",
    "elm",     "fern",    "grove",   "hazel",   "iris",    "juniper", "knoll",   "lotus",
    "moss",    "north",   "olive",   "plume",   "quill",   "rowan",   "sage",    "tide",
    "under",   "vine",    "wheat",   "yew",     "amber",   "brook",   "crest",   "dawn",
    "eagle",   "flint",   "glade",   "heath",   "inlet",   "jade",    "kestrel", "linen",
    "mist",    "nook",    "opal",    "pond",    "quay",    "rain",    "shore",   "thorn",
    "urchin",  "vale",    "wren",    "yucca",   "alder",   "bluff",   "cove",    "dell",
    "estuary", "frost",   "gorge",   "hill",    "ice",     "jetty",   "kiln",    "loam",
};

}  // namespace

std::vector<std::string> Vocabulary::split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else if (kPunct.find(c) != std::string_view::npos) {
      flush();
      out.emplace_back(1, c);
    } else {
      cur.push_back(c);
    }
  }
  flush();
  return out;
}

Vocabulary::Vocabulary(const Spec& spec) {
  if (spec.n_keys == 0 || spec.n_values == 0)
    throw ConfigError("vocabulary needs at least one key and one value");
  eos_ = add("<eos>", Kind::special);
  assign_ = add("=", Kind::special);
  end_fact_ = add(";", Kind::special);

  for (const auto& tpl : spec.templates) {
    for (const auto& w : split_words(tpl)) {
      if (w == "{key}" || w == "{" || w == "}" || contains(w)) continue;
      add(w, Kind::word);
    }
  }
  for (std::size_t i = 0; i < spec.n_keys; ++i) {
    const std::string k = "K" + std::to_string(i);
    if (contains(k)) throw ConfigError("template word '" + k + "' collides with a key token");
    add(k, Kind::key);
  }
  for (std::size_t i = 0; i < spec.n_values; ++i) {
    const std::string v = "V" + std::to_string(i);
    if (contains(v)) throw ConfigError("template word '" + v + "' collides with a value token");
    add(v, Kind::value);
  }
  std::size_t added = 0;
  for (auto w : kFillerWords) {
    if (added == spec.n_filler) break;
    if (contains(w)) continue;
    add(std::string(w), Kind::filler);
    ++added;
  }
  if (added < spec.n_filler)
    throw ConfigError("at most " + std::to_string(added) + " filler words are available");
}

Vocabulary Vocabulary::from_table(const std::vector<std::string>& table,
                                  const std::vector<Kind>& kinds) {
  if (table.size() != kinds.size()) throw DataError("token table and kind table differ in size");
  Vocabulary v;
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (v.contains(table[i])) throw DataError("duplicate token '" + table[i] + "'");
    v.add(table[i], kinds[i]);
  }
  if (!v.contains("<eos>") || !v.contains("=") || !v.contains(";"))
    throw DataError("token table lacks the special tokens");
  v.eos_ = v.id("<eos>");
  v.assign_ = v.id("=");
  v.end_fact_ = v.id(";");
  return v;
}

TokenId Vocabulary::add(std::string token, Kind kind) {
  const auto id = static_cast<TokenId>(tokens_.size());
  lookup_.emplace(token, id);
  tokens_.push_back(std::move(token));
  kinds_.push_back(kind);
  switch (kind) {
    case Kind::key: keys_.push_back(id); break;
    case Kind::value: values_.push_back(id); break;
    case Kind::filler: fillers_.push_back(id); break;
    default: break;
  }
  return id;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw DataError("token id " + std::to_string(id) + " outside vocabulary");
  return tokens_[static_cast<std::size_t>(id)];
}

Vocabulary::Kind Vocabulary::kind(TokenId id) const {
  token(id);
  return kinds_[static_cast<std::size_t>(id)];
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = lookup_.find(std::string(token));
  if (it == lookup_.end()) throw DataError("unknown token '" + std::string(token) + "'");
  return it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return lookup_.contains(std::string(token));
}

TokenSeq Vocabulary::encode(std::string_view text) const {
  TokenSeq out;
  for (const auto& w : split_words(text)) out.push_back(id(w));
  return out;
}

std::string Vocabulary::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out.push_back(' ');
    out += token(ids[i]);
  }
  return out;
}

std::string Vocabulary::kind_name(Kind k) {
  switch (k) {
    case Kind::special: return "special";
    case Kind::key: return "key";
    case Kind::value: return "value";
    case Kind::filler: return "filler";
    case Kind::word: return "word";
  }
  return "special";
}

Vocabulary::Kind Vocabulary::parse_kind(const std::string& s) {
  if (s == "special") return Kind::special;
  if (s == "key") return Kind::key;
  if (s == "value") return Kind::value;
  if (s == "filler") return Kind::filler;
  if (s == "word") return Kind::word;
  throw DataError("unknown token kind '" + s + "'");
}

}  // namespace opsdl::taskgen
