#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ragforge/corpus.hpp"
#include "ragforge/generation.hpp"

namespace ragforge {

/// word -> synonyms (lowercase; a synonym may span several words).
class SynonymTable {
 public:
  /// A small bundled table of common English substitutions.
  static SynonymTable builtin();

  void add(std::string word, std::vector<std::string> synonyms);
  /// nullptr when the word has no entry.
  const std::vector<std::string>* lookup(std::string_view word) const;
  std::size_t size() const { return entries_.size(); }
  const std::map<std::string, std::vector<std::string>, std::less<>>& entries() const { return entries_; }

 private:
  std::map<std::string, std::vector<std::string>, std::less<>> entries_;
};

enum class ParaphraseProvider { builtin, external };
ParaphraseProvider parse_paraphrase_provider(std::string_view name);

inline constexpr std::string_view kParaphrasePrompt =
    "Please paraphrase the following text without changing its original meaning:\n\n[text]\n\n"
    "Return only the paraphrased text.";

struct ParaphraseOptions {
  ParaphraseProvider provider = ParaphraseProvider::builtin;
  std::size_t n_variants = 5;
  std::shared_ptr<const SynonymTable> synonyms;  // builtin table when null
  std::optional<EndpointConfig> endpoint;       // required for the external provider
};

struct ParaphraseResult {
  std::string text;
  std::vector<std::string> variants;
  std::size_t chosen = 0;
  /// External provider failed and the original query was kept.
  bool fell_back = false;
};

/// Variant 0 replaces every word that has synonyms by its first synonym.
/// Later variants substitute each such word with probability 1/2 (random
/// synonym) and swap the clauses around the first " and ", or move a
/// trailing "in ..." phrase to the front, with probability 1/2.
std::vector<std::string> builtin_paraphrases(std::string_view query, const SynonymTable& table, std::size_t n,
                                             Rng& rng);

/// Generates n variants and picks one by a seeded uniform draw.
ParaphraseResult paraphrase_query(std::string_view query, const ParaphraseOptions& options, std::uint64_t seed);

/// Trim, collapse internal whitespace, lowercase.
std::string normalize_for_dedup(std::string_view text);

/// Groups documents by SHA-256 of the normalized text (raw bytes when raw is
/// set) and keeps the smallest doc_id of every group; survivors stay in input order.
std::vector<Document> dedup_exact(std::span<const Document> docs, bool raw = false);

/// Token-level F1 between the word multisets of query and document.
double lexical_f1(std::string_view query, std::string_view doc);

enum class RerankScorer { lexical, cross };
RerankScorer parse_rerank_scorer(std::string_view name);

/// Re-sorts the retrieved documents by the scorer (descending, ties by
/// doc_id) and keeps the first `keep`. The cross scorer needs a retriever,
/// normally an independently seeded encoder.
RetrievalResult rerank_filter(std::string_view query, const RetrievalResult& retrieved, std::size_t keep,
                              RerankScorer scorer, const Retriever* cross = nullptr);

struct DefenseConfig {
  struct Pd {
    bool enabled = false;
    ParaphraseProvider provider = ParaphraseProvider::builtin;
    std::size_t variants = 5;
  } pd;
  struct Dtf {
    bool enabled = false;
    bool raw = false;
  } dtf;
  struct Rf {
    bool enabled = false;
    std::size_t keep = 3;
    RerankScorer scorer = RerankScorer::lexical;
  } rf;

  bool any() const { return pd.enabled || dtf.enabled || rf.enabled; }
  /// Enabled stage names in application order: "dtf", "pd", "rf".
  std::vector<std::string> stages() const;
  /// Copy with only the named stage left enabled.
  DefenseConfig only(std::string_view stage) const;
};

/// DTF at index time, PD at query time, RF after retrieval.
class DefensePipeline {
 public:
  DefensePipeline() = default;
  DefensePipeline(DefenseConfig config, std::uint64_t seed, std::shared_ptr<const SynonymTable> synonyms = nullptr,
                  std::shared_ptr<const Retriever> cross = nullptr, std::optional<EndpointConfig> endpoint = {});

  const DefenseConfig& config() const { return config_; }

  KnowledgeBase apply_index(const KnowledgeBase& kb) const;
  /// The seed is keyed by qid so a query's paraphrase does not depend on evaluation order.
  ParaphraseResult apply_query(std::string_view qid, std::string_view text) const;
  RetrievalResult apply_context(std::string_view query, RetrievalResult retrieved) const;

 private:
  DefenseConfig config_;
  std::uint64_t seed_ = 0;
  ParaphraseOptions paraphrase_;
  std::shared_ptr<const Retriever> cross_;
};

}  // namespace ragforge
