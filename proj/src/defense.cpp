#include "ragforge/defense.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "ragforge/common.hpp"
#include "ragforge/text.hpp"

namespace ragforge {

SynonymTable SynonymTable::builtin() {
  static const std::pair<const char*, std::vector<std::string>> kTable[] = {
      {"album", {"record", "release"}},       {"battle", {"fight", "clash"}},
      {"built", {"constructed", "erected"}},  {"called", {"named", "known as"}},
      {"capital", {"main city"}},             {"city", {"town"}},
      {"composed", {"wrote", "created"}},     {"directed", {"helmed"}},
      {"discovered", {"found", "uncovered"}}, {"experiment", {"trial", "study"}},
      {"famous", {"well known", "renowned"}}, {"film", {"movie", "picture"}},
      {"first", {"earliest", "initial"}},     {"founded", {"established", "created"}},
      {"great", {"grand", "major"}},          {"invented", {"devised", "created"}},
      {"king", {"monarch", "ruler"}},         {"large", {"big", "huge"}},
      {"located", {"situated", "found"}},     {"mountain", {"peak"}},
      {"movie", {"film"}},                    {"name", {"title"}},
      {"played", {"performed", "portrayed"}}, {"recorded", {"taped", "cut"}},
      {"released", {"issued", "put out"}},    {"river", {"stream", "waterway"}},
      {"ruled", {"governed", "reigned over"}}, {"scored", {"netted"}},
      {"song", {"track", "tune"}},            {"starred", {"appeared", "featured"}},
      {"team", {"side", "squad"}},            {"theory", {"idea", "model"}},
      {"war", {"conflict"}},                  {"who", {"which person"}},
      {"won", {"claimed", "secured"}},        {"wrote", {"authored", "penned"}},
      {"year", {"date"}},
  };
  SynonymTable t;
  for (const auto& [w, s] : kTable) t.add(w, s);
  return t;
}

void SynonymTable::add(std::string word, std::vector<std::string> synonyms) {
  auto lower = [](std::string& x) {
    for (char& c : x) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  };
  lower(word);
  for (auto& w : synonyms) lower(w);
  if (word.empty()) throw DataError("synonym entry with empty word");
  synonyms.erase(std::remove(synonyms.begin(), synonyms.end(), std::string()), synonyms.end());
  if (synonyms.empty()) return;
  auto& slot = entries_[std::move(word)];
  slot.insert(slot.end(), synonyms.begin(), synonyms.end());
}

const std::vector<std::string>* SynonymTable::lookup(std::string_view word) const {
  auto it = entries_.find(word);
  return it == entries_.end() ? nullptr : &it->second;
}

ParaphraseProvider parse_paraphrase_provider(std::string_view name) {
  if (name == "builtin") return ParaphraseProvider::builtin;
  if (name == "external") return ParaphraseProvider::external;
  throw ConfigError("unknown paraphrase provider: " + std::string(name));
}

namespace {

std::vector<std::string> split_ws(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

std::string join(const std::vector<std::string>& words, std::size_t from = 0, std::size_t to = std::string::npos) {
  std::string out;
  to = std::min(to, words.size());
  for (std::size_t i = from; i < to; ++i) {
    if (!out.empty()) out.push_back(' ');
    out += words[i];
  }
  return out;
}

std::string lower(std::string s) {
  for (char& c : s) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return s;
}

// Word with trailing punctuation split off ("wrote?" -> "wrote", "?").
std::pair<std::string, std::string> split_trailing(const std::string& w) {
  std::size_t end = w.size();
  while (end > 0 && std::ispunct(static_cast<unsigned char>(w[end - 1]))) --end;
  return {w.substr(0, end), w.substr(end)};
}

std::vector<std::string> reorder(std::vector<std::string> words) {
  for (std::size_t i = 1; i + 1 < words.size(); ++i) {
    if (lower(words[i]) == "and") {
      std::vector<std::string> out(words.begin() + static_cast<std::ptrdiff_t>(i) + 1, words.end());
      out.push_back("and");
      out.insert(out.end(), words.begin(), words.begin() + static_cast<std::ptrdiff_t>(i));
      return out;
    }
  }
  // Trailing "in X" / "in X Y" phrase moves to the front.
  for (std::size_t i = words.size() >= 3 ? words.size() - 3 : 1; i + 1 < words.size(); ++i) {
    if (i > 0 && lower(words[i]) == "in") {
      std::vector<std::string> out(words.begin() + static_cast<std::ptrdiff_t>(i), words.end());
      out.insert(out.end(), words.begin(), words.begin() + static_cast<std::ptrdiff_t>(i));
      return out;
    }
  }
  return words;
}

}  // namespace

std::vector<std::string> builtin_paraphrases(std::string_view query, const SynonymTable& table, std::size_t n,
                                             Rng& rng) {
  const auto words = split_ws(query);
  std::vector<std::string> out;
  out.reserve(n);
  for (std::size_t v = 0; v < n; ++v) {
    std::vector<std::string> w = words;
    for (auto& word : w) {
      auto [core, tail] = split_trailing(word);
      const auto* syn = table.lookup(lower(core));
      if (!syn) continue;
      if (v == 0) {
        word = syn->front() + tail;
      } else if (uniform01(rng) < 0.5) {
        word = (*syn)[uniform_index(rng, syn->size())] + tail;
      }
    }
    if (v > 0 && uniform01(rng) < 0.5) w = reorder(std::move(w));
    out.push_back(join(w));
  }
  return out;
}

ParaphraseResult paraphrase_query(std::string_view query, const ParaphraseOptions& options, std::uint64_t seed) {
  if (options.n_variants == 0) throw ConfigError("paraphrase needs at least one variant");
  Rng rng(seed);
  ParaphraseResult res;
  if (options.provider == ParaphraseProvider::builtin) {
    static const SynonymTable kBuiltin = SynonymTable::builtin();
    const SynonymTable& table = options.synonyms ? *options.synonyms : kBuiltin;
    res.variants = builtin_paraphrases(query, table, options.n_variants, rng);
  } else {
    if (!options.endpoint) throw ConfigError("external paraphrase provider needs an endpoint");
    std::string prompt(kParaphrasePrompt);
    prompt.replace(prompt.find("[text]"), 6, query);
    try {
      const auto answer = http_generate(*options.endpoint, prompt).answer;
      // A temperature-0 endpoint answers identically, so one call covers every variant.
      res.variants.assign(options.n_variants, answer);
    } catch (const Error&) {
      res.text = std::string(query);
      res.variants.assign(1, res.text);
      res.fell_back = true;
      return res;
    }
  }
  res.chosen = uniform_index(rng, res.variants.size());
  res.text = res.variants[res.chosen];
  return res;
}

std::string normalize_for_dedup(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a') : c);
  }
  return out;
}

std::vector<Document> dedup_exact(std::span<const Document> docs, bool raw) {
  std::unordered_map<std::string, std::size_t> keeper;  // hash -> index of the smallest doc_id
  std::vector<std::string> hashes(docs.size());
  parallel_for(docs.size(), [&](std::size_t i) {
    hashes[i] = sha256_hex(raw ? std::string_view(docs[i].text) : std::string_view(normalize_for_dedup(docs[i].text)));
  });
  for (std::size_t i = 0; i < docs.size(); ++i) {
    auto [it, inserted] = keeper.emplace(hashes[i], i);
    if (!inserted && docs[i].id < docs[it->second].id) it->second = i;
  }
  std::vector<Document> out;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if (keeper.at(hashes[i]) == i) out.push_back(docs[i]);
  }
  return out;
}

double lexical_f1(std::string_view query, std::string_view doc) {
  std::unordered_map<std::string, std::size_t> q_counts;
  std::size_t q_len = 0, d_len = 0, common = 0;
  for (auto& t : split_tokens(query)) {
    if (!is_word_token(t)) continue;
    ++q_counts[t];
    ++q_len;
  }
  for (auto& t : split_tokens(doc)) {
    if (!is_word_token(t)) continue;
    ++d_len;
    auto it = q_counts.find(t);
    if (it != q_counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double precision = static_cast<double>(common) / static_cast<double>(d_len);
  const double recall = static_cast<double>(common) / static_cast<double>(q_len);
  return 2.0 * precision * recall / (precision + recall);
}

RerankScorer parse_rerank_scorer(std::string_view name) {
  if (name == "lexical") return RerankScorer::lexical;
  if (name == "cross") return RerankScorer::cross;
  throw ConfigError("unknown rerank scorer: " + std::string(name));
}

RetrievalResult rerank_filter(std::string_view query, const RetrievalResult& retrieved, std::size_t keep,
                              RerankScorer scorer, const Retriever* cross) {
  if (keep == 0) throw Error("rerank keep must be positive");
  if (scorer == RerankScorer::cross && !cross) throw ConfigError("cross scorer needs a second retriever");
  RetrievalResult out = retrieved;
  if (scorer == RerankScorer::lexical) {
    for (auto& h : out.ranked) h.score = lexical_f1(query, h.text);
  } else {
    const Embedding q = cross->embed_text(query);
    for (auto& h : out.ranked) h.score = similarity(q, cross->embed_text(h.text));
  }
  std::sort(out.ranked.begin(), out.ranked.end(), [](const RetrievalHit& a, const RetrievalHit& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.doc_id < b.doc_id;
  });
  if (out.ranked.size() > keep) out.ranked.resize(keep);
  return out;
}

std::vector<std::string> DefenseConfig::stages() const {
  std::vector<std::string> out;
  if (dtf.enabled) out.emplace_back("dtf");
  if (pd.enabled) out.emplace_back("pd");
  if (rf.enabled) out.emplace_back("rf");
  return out;
}

DefenseConfig DefenseConfig::only(std::string_view stage) const {
  DefenseConfig c = *this;
  c.pd.enabled = stage == "pd";
  c.dtf.enabled = stage == "dtf";
  c.rf.enabled = stage == "rf";
  if (!c.any()) throw ConfigError("unknown defense stage: " + std::string(stage));
  return c;
}

DefensePipeline::DefensePipeline(DefenseConfig config, std::uint64_t seed, std::shared_ptr<const SynonymTable> synonyms,
                                 std::shared_ptr<const Retriever> cross, std::optional<EndpointConfig> endpoint)
    : config_(config), seed_(seed), cross_(std::move(cross)) {
  if (config_.rf.enabled && config_.rf.keep == 0) throw ConfigError("defense.rf.keep must be positive");
  if (config_.rf.enabled && config_.rf.scorer == RerankScorer::cross && !cross_) {
    throw ConfigError("defense.rf.scorer=cross needs a second encoder");
  }
  if (config_.pd.enabled && config_.pd.provider == ParaphraseProvider::external && !endpoint) {
    throw ConfigError("defense.pd.provider=external needs a generator endpoint");
  }
  paraphrase_.provider = config_.pd.provider;
  paraphrase_.n_variants = config_.pd.variants;
  paraphrase_.synonyms = std::move(synonyms);
  paraphrase_.endpoint = std::move(endpoint);
}

KnowledgeBase DefensePipeline::apply_index(const KnowledgeBase& kb) const {
  if (!config_.dtf.enabled) return kb;
  std::unordered_set<std::string> keep;
  for (auto& d : dedup_exact(kb.documents(), config_.dtf.raw)) keep.insert(d.id);
  return kb.filter([&](const Document& d) { return keep.count(d.id) > 0; });
}

ParaphraseResult DefensePipeline::apply_query(std::string_view qid, std::string_view text) const {
  if (!config_.pd.enabled) {
    ParaphraseResult r;
    r.text = std::string(text);
    r.variants = {r.text};
    return r;
  }
  return paraphrase_query(text, paraphrase_, derive_seed(seed_, {stable_hash(qid)}));
}

RetrievalResult DefensePipeline::apply_context(std::string_view query, RetrievalResult retrieved) const {
  if (!config_.rf.enabled) return retrieved;
  return rerank_filter(query, retrieved, config_.rf.keep, config_.rf.scorer, cross_.get());
}

}  // namespace ragforge
