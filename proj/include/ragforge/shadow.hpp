#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ragforge/encoder.hpp"

namespace ragforge {

struct Query {
  std::string qid;
  std::string text;

  bool operator==(const Query&) const = default;
};

struct QuerySplit {
  std::vector<Query> shadow;
  std::vector<Query> eval;
};

/// Seeded shuffle, then the first floor(fraction * N) queries become the
/// shadow set and the remainder the evaluation set.
QuerySplit split_shadow(std::vector<Query> queries, double fraction, std::uint64_t seed);

/// Disjoint cover of the shadow set by topic. members[j] holds indices into
/// the query list the partition was computed from, in ascending order.
struct TopicPartition {
  std::vector<std::vector<std::size_t>> members;
  std::vector<Embedding> centroids;

  std::size_t topic_count() const { return members.size(); }
  std::size_t covered() const;
  std::vector<std::size_t> sizes() const;
  /// Index of the nearest centroid (squared Euclidean, ties to the lower index).
  std::size_t assign(std::span<const double> point) const;
};

struct KMeansOptions {
  std::size_t max_iters = 100;
  double tolerance = 1e-6;
};

/// Lloyd's algorithm with k-means++ (D^2-weighted) seeding. Clusters left
/// empty are repaired by moving in the point of the largest cluster that is
/// farthest from its centroid.
TopicPartition kmeans(std::span<const Embedding> points, std::size_t clusters, std::uint64_t seed,
                      const KMeansOptions& options = {});

/// Clusters the shadow queries by their embeddings.
TopicPartition partition_topics(const Retriever& retriever, std::span<const Query> shadow, std::size_t topics,
                                std::uint64_t seed);

/// Builds a partition from externally supplied labels (one per query, any
/// integer ids). Topics are numbered by ascending label; centroids are the
/// member means of the query embeddings.
TopicPartition partition_from_labels(const Retriever& retriever, std::span<const Query> shadow,
                                     std::span<const int> labels);

struct BudgetAllocation {
  std::vector<std::size_t> budgets;
  std::size_t total = 0;
  /// Real-valued n * p * |S_j| / |S| before rounding.
  std::vector<double> shares;
};

/// Proportional per-topic budgets rounded by the largest-remainder method so
/// they sum exactly to round(n * p). p is a fraction (0.005 for 0.5%).
BudgetAllocation allocate_budgets(std::size_t n, double p, std::span<const std::size_t> topic_sizes);
BudgetAllocation allocate_budgets(std::size_t n, double p, const TopicPartition& partition);

}  // namespace ragforge
