#include "ragforge/corpus.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <unordered_set>

#include "ragforge/common.hpp"

namespace ragforge {

std::string_view to_string(Provenance p) { return p == Provenance::poisoned ? "poisoned" : "organic"; }

bool RetrievalResult::contains_poison() const {
  return std::any_of(ranked.begin(), ranked.end(),
                     [](const RetrievalHit& h) { return h.provenance == Provenance::poisoned; });
}

namespace {

void check_unique_ids(const std::vector<Document>& docs) {
  std::unordered_set<std::string_view> seen;
  std::set<std::string> dups;
  for (const auto& d : docs) {
    if (d.text.empty()) throw Error("document " + d.id + " has empty text");
    if (!seen.insert(d.id).second) dups.insert(d.id);
  }
  if (!dups.empty()) {
    std::string msg = "duplicate doc_id:";
    for (const auto& id : dups) msg += " " + id;
    throw Error(msg);
  }
}

Matrix embed_all(const Retriever& retriever, const std::vector<Document>& docs) {
  Matrix out(docs.size(), retriever.encoder->dim());
  parallel_for(docs.size(), [&](std::size_t i) {
    const Embedding e = retriever.embed_text(docs[i].text);
    std::copy(e.begin(), e.end(), out.row(i).begin());
  });
  return out;
}

}  // namespace

KnowledgeBase KnowledgeBase::build(const Retriever& retriever, std::vector<Document> docs) {
  if (docs.empty()) throw Error("empty corpus");
  check_unique_ids(docs);
  KnowledgeBase kb;
  kb.embeddings_ = embed_all(retriever, docs);
  kb.docs_ = std::move(docs);
  kb.fingerprint_ = retriever.fingerprint();
  return kb;
}

KnowledgeBase KnowledgeBase::from_parts(std::vector<Document> docs, Matrix embeddings,
                                        std::string encoder_fingerprint) {
  if (embeddings.rows != docs.size()) throw DataError("embedding rows do not match document count");
  check_unique_ids(docs);
  KnowledgeBase kb;
  kb.docs_ = std::move(docs);
  kb.embeddings_ = std::move(embeddings);
  kb.fingerprint_ = std::move(encoder_fingerprint);
  return kb;
}

std::size_t KnowledgeBase::poisoned_count() const {
  return static_cast<std::size_t>(std::count_if(
      docs_.begin(), docs_.end(), [](const Document& d) { return d.provenance == Provenance::poisoned; }));
}

KnowledgeBase KnowledgeBase::inject(const Retriever& retriever, std::vector<Document> docs) const {
  if (retriever.fingerprint() != fingerprint_) throw Error("index/encoder mismatch");
  if (docs.empty()) return *this;
  std::vector<Document> all = docs_;
  all.insert(all.end(), docs.begin(), docs.end());
  check_unique_ids(all);

  const Matrix added = embed_all(retriever, docs);
  KnowledgeBase kb;
  kb.docs_ = std::move(all);
  kb.embeddings_ = Matrix(kb.docs_.size(), dim());
  std::copy(embeddings_.data.begin(), embeddings_.data.end(), kb.embeddings_.data.begin());
  std::copy(added.data.begin(), added.data.end(),
            kb.embeddings_.data.begin() + static_cast<std::ptrdiff_t>(embeddings_.data.size()));
  kb.fingerprint_ = fingerprint_;
  return kb;
}

KnowledgeBase KnowledgeBase::filter(const std::function<bool(const Document&)>& keep) const {
  KnowledgeBase kb;
  kb.fingerprint_ = fingerprint_;
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < docs_.size(); ++i) {
    if (keep(docs_[i])) rows.push_back(i);
  }
  kb.embeddings_ = Matrix(rows.size(), dim());
  kb.docs_.reserve(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    kb.docs_.push_back(docs_[rows[r]]);
    auto src = embeddings_.row(rows[r]);
    std::copy(src.begin(), src.end(), kb.embeddings_.row(r).begin());
  }
  return kb;
}

RetrievalResult retrieve_top_k(const KnowledgeBase& kb, std::span<const double> query_embedding, std::size_t k) {
  if (k == 0) throw Error("k must be positive");
  const std::size_t n = kb.size();
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) scores[i] = similarity(query_embedding, kb.embedding(i));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t take = std::min(k, n);
  auto before = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return kb.document(a).id < kb.document(b).id;
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(), before);

  RetrievalResult result;
  result.ranked.reserve(take);
  for (std::size_t r = 0; r < take; ++r) {
    const Document& d = kb.document(order[r]);
    result.ranked.push_back({d.id, scores[order[r]], d.provenance, d.text});
  }
  return result;
}

RetrievalResult retrieve_top_k(const KnowledgeBase& kb, const Retriever& retriever, std::string_view query,
                               std::size_t k) {
  if (retriever.fingerprint() != kb.encoder_fingerprint()) throw Error("index/encoder mismatch");
  if (k == 0) throw Error("k must be positive");
  return retrieve_top_k(kb, retriever.embed_text(query), k);
}

}  // namespace ragforge
