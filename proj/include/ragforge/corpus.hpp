#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ragforge/encoder.hpp"

namespace ragforge {

enum class Provenance { organic, poisoned };

std::string_view to_string(Provenance p);

/// Id namespace reserved for injected documents.
inline constexpr std::string_view kPoisonIdPrefix = "poison-";

struct Document {
  std::string id;
  std::string text;
  Provenance provenance = Provenance::organic;

  bool operator==(const Document&) const = default;
};

struct RetrievalHit {
  std::string doc_id;
  double score = 0.0;
  Provenance provenance = Provenance::organic;
  std::string text;
};

struct RetrievalResult {
  /// Scores non-increasing; equal scores ordered by ascending doc_id.
  std::vector<RetrievalHit> ranked;

  bool contains_poison() const;
  std::size_t size() const { return ranked.size(); }
};

/// Documents plus their embeddings under one encoder. Immutable: inject and
/// filter return new values and never touch existing rows.
class KnowledgeBase {
 public:
  /// Throws on an empty input or duplicate ids (listing the offenders).
  static KnowledgeBase build(const Retriever& retriever, std::vector<Document> docs);

  /// Assembles a knowledge base from precomputed rows (index loading).
  static KnowledgeBase from_parts(std::vector<Document> docs, Matrix embeddings, std::string encoder_fingerprint);

  std::size_t size() const { return docs_.size(); }
  std::size_t dim() const { return embeddings_.cols; }
  const std::vector<Document>& documents() const { return docs_; }
  const Document& document(std::size_t i) const { return docs_[i]; }
  std::span<const double> embedding(std::size_t i) const { return embeddings_.row(i); }
  const Matrix& embeddings() const { return embeddings_; }
  const std::string& encoder_fingerprint() const { return fingerprint_; }
  std::size_t poisoned_count() const;

  /// Appends documents (embedded with the same encoder); id collisions throw.
  KnowledgeBase inject(const Retriever& retriever, std::vector<Document> docs) const;

  /// Keeps rows whose document satisfies keep; rows are copied, not re-embedded.
  KnowledgeBase filter(const std::function<bool(const Document&)>& keep) const;

 private:
  std::vector<Document> docs_;
  Matrix embeddings_;
  std::string fingerprint_;
};

/// Exact top-k by dot product. Throws "index/encoder mismatch" when the
/// retriever is not the one the index was built with, and on k == 0.
RetrievalResult retrieve_top_k(const KnowledgeBase& kb, const Retriever& retriever, std::string_view query,
                               std::size_t k);

/// Same, for an already-embedded query.
RetrievalResult retrieve_top_k(const KnowledgeBase& kb, std::span<const double> query_embedding, std::size_t k);

}  // namespace ragforge
