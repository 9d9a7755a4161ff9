#include "opsdl/taskgen/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "opsdl/error.hpp"

namespace opsdl::taskgen {

using nlohmann::json;

std::string to_string(FillerStyle s) {
  return s == FillerStyle::random_words ? "random-words" : "repeated-template";
}

FillerStyle parse_filler_style(const std::string& s) {
  if (s == "random-words") return FillerStyle::random_words;
  if (s == "repeated-template") return FillerStyle::repeated_template;
  throw ConfigError("unknown filler_style '" + s + "'");
}

void CorpusConfig::validate(std::size_t max_context) const {
  if (short_len == 0) throw ConfigError("short_len must be > 0");
  if (short_len > long_len) throw ConfigError("short_len must not exceed long_len");
  if (short_len < kFactLength) throw ConfigError("short_len is shorter than one fact");
  if (n_facts_per_doc == 0) throw ConfigError("n_facts_per_doc must be >= 1");
  if (n_facts_per_doc * kFactLength > long_len)
    throw ConfigError("n_facts_per_doc facts do not fit in long_len tokens");
  if (n_facts_per_doc > n_keys) throw ConfigError("n_facts_per_doc exceeds the key alphabet");
  if (query_templates.empty()) throw ConfigError("query_templates must not be empty");
  for (const auto& t : query_templates)
    if (t.find("{key}") == std::string::npos)
      throw ConfigError("query template '" + t + "' has no {key} slot");
  if (n_filler == 0) throw ConfigError("n_filler must be > 0");
  if (max_context && long_len > max_context)
    throw ConfigError("long_len " + std::to_string(long_len) + " exceeds the model budget of " +
                      std::to_string(max_context));
}

CorpusConfig CorpusConfig::at_length(std::size_t length) const {
  CorpusConfig c = *this;
  const double scaled = static_cast<double>(n_facts_per_doc) * static_cast<double>(length) /
                        static_cast<double>(long_len);
  c.n_facts_per_doc = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(scaled)));
  c.n_facts_per_doc = std::min(c.n_facts_per_doc, std::max<std::size_t>(1, length / kFactLength));
  c.long_len = length;
  c.short_len = std::min(short_len, length);
  return c;
}

Vocabulary::Spec CorpusConfig::vocab_spec() const {
  return {n_keys, n_values, n_filler, query_templates};
}

Document gen_document(const CorpusConfig& cfg, const Vocabulary& vocab, Rng& rng) {
  const std::size_t n = cfg.n_facts_per_doc;
  if (n == 0 || n * kFactLength > cfg.long_len)
    throw DataError("cannot place " + std::to_string(n) + " facts in " +
                    std::to_string(cfg.long_len) + " tokens without overlap");
  if (n > vocab.keys().size()) throw DataError("more facts than distinct keys");

  Document doc;
  doc.tokens.resize(cfg.long_len);
  const auto& fill = vocab.fillers();
  for (std::size_t i = 0; i < cfg.long_len; ++i) {
    doc.tokens[i] = cfg.filler_style == FillerStyle::random_words
                        ? fill[rng.below(fill.size())]
                        : fill[i % std::min<std::size_t>(fill.size(), 12)];
  }

  // n gaps drawn uniformly from [0, free]; sorted gaps plus the facts already
  // placed give non-overlapping starts.
  const std::size_t free = cfg.long_len - n * kFactLength;
  std::vector<std::size_t> gaps(n);
  for (auto& g : gaps) g = rng.below(free + 1);
  std::sort(gaps.begin(), gaps.end());

  std::vector<TokenId> keys = vocab.keys();
  rng.shuffle(keys.begin(), keys.end());
  const auto& values = vocab.values();
  for (std::size_t i = 0; i < n; ++i) {
    Fact f;
    f.key = keys[i];
    f.value = values[rng.below(values.size())];
    f.position = gaps[i] + i * kFactLength;
    doc.tokens[f.position] = f.key;
    doc.tokens[f.position + 1] = vocab.assign();
    doc.tokens[f.position + 2] = f.value;
    doc.tokens[f.position + 3] = vocab.end_fact();
    doc.facts.push_back(f);
  }
  return doc;
}

std::pair<Span, TokenSeq> extract_short(const TokenSeq& doc, const std::vector<Fact>& facts,
                                        std::size_t target, std::size_t short_len, Rng& rng) {
  if (target >= facts.size()) throw DataError("target fact index out of range");
  const Fact& f = facts[target];
  if (f.end() > doc.size()) throw DataError("target fact lies outside the document");
  if (short_len < kFactLength || short_len > doc.size())
    throw DataError("no valid placement for a window of " + std::to_string(short_len) +
                    " tokens in a document of " + std::to_string(doc.size()));
  const std::size_t lo = f.end() > short_len ? f.end() - short_len : 0;
  const std::size_t hi = std::min(f.position, doc.size() - short_len);
  if (lo > hi) throw DataError("no window placement contains the target fact");
  const std::size_t start = lo + rng.below(hi - lo + 1);
  Span span{start, start + short_len};
  TokenSeq slice(doc.begin() + static_cast<std::ptrdiff_t>(span.start),
                 doc.begin() + static_cast<std::ptrdiff_t>(span.end));
  return {span, std::move(slice)};
}

std::pair<TokenSeq, TokenSeq> gen_query(const Fact& fact,
                                        const std::vector<std::string>& templates,
                                        const Vocabulary& vocab, Rng& rng) {
  if (templates.empty()) throw ConfigError("query_templates must not be empty");
  const std::string& tpl = templates[rng.below(templates.size())];
  std::string text = tpl;
  const std::string& key = vocab.token(fact.key);
  for (auto pos = text.find("{key}"); pos != std::string::npos; pos = text.find("{key}"))
    text.replace(pos, 5, " " + key + " ");
  return {vocab.encode(text), TokenSeq{fact.value}};
}

std::string triplet_id(std::uint64_t seed, std::size_t index) {
  return "c" + std::to_string(seed) + "-" + std::to_string(index);
}

Triplet make_triplet(const CorpusConfig& cfg, const Vocabulary& vocab, std::size_t index) {
  Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(index)));
  Document doc = gen_document(cfg, vocab, rng);
  const std::size_t target = rng.below(doc.facts.size());
  auto [span, slice] = extract_short(doc.tokens, doc.facts, target, cfg.short_len, rng);
  auto [query, gold] = gen_query(doc.facts[target], cfg.query_templates, vocab, rng);

  Triplet t;
  t.id = triplet_id(cfg.seed, index);
  t.long_context = std::move(doc.tokens);
  t.short_span = span;
  t.short_context = std::move(slice);
  t.query = std::move(query);
  t.gold_answer = std::move(gold);
  t.evidence = doc.facts[target];
  return t;
}

Corpus build_corpus(const CorpusConfig& cfg) {
  cfg.validate();
  Corpus c{cfg, Vocabulary(cfg.vocab_spec()), {}};
  c.triplets.reserve(cfg.n_triplets);
  for (std::size_t i = 0; i < cfg.n_triplets; ++i) c.triplets.push_back(make_triplet(cfg, c.vocab, i));
  return c;
}

std::vector<std::string> validate_triplet(const Triplet& t, const Vocabulary& vocab) {
  std::vector<std::string> bad;
  const auto& s = t.short_span;
  if (s.start > s.end || s.end > t.long_context.size()) {
    bad.push_back("short_span outside long_context");
    return bad;
  }
  if (!std::equal(t.short_context.begin(), t.short_context.end(),
                  t.long_context.begin() + static_cast<std::ptrdiff_t>(s.start),
                  t.long_context.begin() + static_cast<std::ptrdiff_t>(s.end)))
    bad.push_back("short_context is not the long_context slice");
  if (t.short_context.size() > t.long_context.size()) bad.push_back("short_context longer than long_context");

  const Fact& f = t.evidence;
  if (f.position < s.start || f.end() > s.end) bad.push_back("evidence fact outside short_span");
  if (f.end() > t.long_context.size() || t.long_context[f.position] != f.key ||
      t.long_context[f.position + 1] != vocab.assign() || t.long_context[f.position + 2] != f.value ||
      t.long_context[f.position + 3] != vocab.end_fact())
    bad.push_back("evidence fact not present at its recorded position");
  if (t.gold_answer != TokenSeq{f.value}) bad.push_back("gold answer differs from the evidence value");
  if (std::find(t.query.begin(), t.query.end(), f.key) == t.query.end())
    bad.push_back("query does not mention the evidence key");
  for (TokenId g : t.gold_answer)
    if (std::find(t.query.begin(), t.query.end(), g) != t.query.end())
      bad.push_back("gold answer token leaks into the query");
  return bad;
}

// ---------------------------------------------------------------------------
// persistence

namespace {

json config_to_json(const CorpusConfig& c) {
  return {{"n_triplets", c.n_triplets},       {"long_len", c.long_len},
          {"short_len", c.short_len},         {"n_facts_per_doc", c.n_facts_per_doc},
          {"filler_style", to_string(c.filler_style)},
          {"seed", c.seed},                   {"query_templates", c.query_templates},
          {"n_keys", c.n_keys},               {"n_values", c.n_values},
          {"n_filler", c.n_filler}};
}

json triplet_to_json(const Triplet& t, const Vocabulary& v) {
  return {{"id", t.id},
          {"long_context", t.long_context},
          {"short_span", {t.short_span.start, t.short_span.end}},
          {"query", t.query},
          {"gold_answer", t.gold_answer},
          {"evidence",
           {{"key", t.evidence.key}, {"value", t.evidence.value}, {"position", t.evidence.position}}},
          {"debug",
           {{"query", v.decode(t.query)},
            {"gold_answer", v.decode(t.gold_answer)},
            {"short_context", v.decode(t.short_context)}}}};
}

Triplet triplet_from_json(const json& j) {
  Triplet t;
  t.id = j.at("id").get<std::string>();
  t.long_context = j.at("long_context").get<TokenSeq>();
  const auto span = j.at("short_span").get<std::vector<std::size_t>>();
  if (span.size() != 2 || span[0] > span[1] || span[1] > t.long_context.size())
    throw DataError("triplet " + t.id + ": malformed short_span");
  t.short_span = {span[0], span[1]};
  t.short_context.assign(t.long_context.begin() + static_cast<std::ptrdiff_t>(span[0]),
                         t.long_context.begin() + static_cast<std::ptrdiff_t>(span[1]));
  t.query = j.at("query").get<TokenSeq>();
  t.gold_answer = j.at("gold_answer").get<TokenSeq>();
  const auto& e = j.at("evidence");
  t.evidence = {e.at("key").get<TokenId>(), e.at("value").get<TokenId>(),
                e.at("position").get<std::size_t>()};
  return t;
}

}  // namespace

namespace {

CorpusConfig config_from_json(const json& j) {
  CorpusConfig c;
  c.n_triplets = j.value("n_triplets", c.n_triplets);
  c.long_len = j.value("long_len", c.long_len);
  c.short_len = j.value("short_len", c.short_len);
  c.n_facts_per_doc = j.value("n_facts_per_doc", c.n_facts_per_doc);
  c.filler_style = parse_filler_style(j.value("filler_style", to_string(c.filler_style)));
  c.seed = j.value("seed", c.seed);
  c.query_templates = j.value("query_templates", c.query_templates);
  c.n_keys = j.value("n_keys", c.n_keys);
  c.n_values = j.value("n_values", c.n_values);
  c.n_filler = j.value("n_filler", c.n_filler);
  return c;
}

}  // namespace

std::string corpus_config_to_json(const CorpusConfig& cfg) { return config_to_json(cfg).dump(); }

CorpusConfig corpus_config_from_json(std::string_view text) {
  try {
    return config_from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("corpus config: ") + e.what());
  }
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());

  json header;
  header["format_version"] = kCorpusFormatVersion;
  header["config"] = config_to_json(corpus.config);
  header["n_triplets"] = corpus.triplets.size();
  std::vector<std::string> kinds;
  for (auto k : corpus.vocab.kinds()) kinds.push_back(Vocabulary::kind_name(k));
  header["tokenizer"] = {{"tokens", corpus.vocab.table()}, {"kinds", kinds}};

  const auto hp = dir / "corpus_header.json";
  std::ofstream h(hp);
  if (!h) throw IoError("cannot open '" + hp.string() + "' for writing");
  h << header.dump(2) << '\n';
  if (!h) throw IoError("failed writing '" + hp.string() + "'");

  const auto cp = dir / "corpus.jsonl";
  std::ofstream out(cp);
  if (!out) throw IoError("cannot open '" + cp.string() + "' for writing");
  for (const auto& t : corpus.triplets) out << triplet_to_json(t, corpus.vocab).dump() << '\n';
  if (!out) throw IoError("failed writing '" + cp.string() + "'");
}

Corpus read_corpus(const std::filesystem::path& dir) {
  const auto hp = dir / "corpus_header.json";
  std::ifstream h(hp);
  if (!h) throw IoError("cannot open corpus header '" + hp.string() + "'");
  Corpus c;
  try {
    const json header = json::parse(h);
    if (header.at("format_version").get<int>() != kCorpusFormatVersion)
      throw DataError(hp.string() + ": unsupported corpus format version");
    c.config = config_from_json(header.at("config"));
    std::vector<Vocabulary::Kind> kinds;
    for (const auto& k : header.at("tokenizer").at("kinds").get<std::vector<std::string>>())
      kinds.push_back(Vocabulary::parse_kind(k));
    c.vocab = Vocabulary::from_table(
        header.at("tokenizer").at("tokens").get<std::vector<std::string>>(), kinds);
  } catch (const json::exception& e) {
    throw DataError(hp.string() + ": " + e.what());
  }

  const auto cp = dir / "corpus.jsonl";
  std::ifstream in(cp);
  if (!in) throw IoError("cannot open corpus '" + cp.string() + "'");
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      c.triplets.push_back(triplet_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw DataError(cp.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return c;
}

}  // namespace opsdl::taskgen
