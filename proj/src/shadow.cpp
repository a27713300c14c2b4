#include "ragforge/shadow.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <unordered_set>

#include "ragforge/common.hpp"

namespace ragforge {

QuerySplit split_shadow(std::vector<Query> queries, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw Error("shadow fraction must be in (0, 1)");
  if (queries.size() < 2) throw Error("need at least 2 queries to split");
  std::unordered_set<std::string> seen;
  for (const auto& q : queries) {
    if (!seen.insert(q.qid).second) throw Error("duplicate qid: " + q.qid);
  }
  Rng rng(seed);
  shuffle(queries, rng);
  const auto n_shadow = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(queries.size())));
  QuerySplit split;
  split.shadow.assign(queries.begin(), queries.begin() + static_cast<std::ptrdiff_t>(n_shadow));
  split.eval.assign(queries.begin() + static_cast<std::ptrdiff_t>(n_shadow), queries.end());
  return split;
}

std::size_t TopicPartition::covered() const {
  std::size_t n = 0;
  for (const auto& m : members) n += m.size();
  return n;
}

std::vector<std::size_t> TopicPartition::sizes() const {
  std::vector<std::size_t> out;
  out.reserve(members.size());
  for (const auto& m : members) out.push_back(m.size());
  return out;
}

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

std::size_t nearest(std::span<const Embedding> centroids, std::span<const double> p) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double d = sq_dist(centroids[c], p);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

std::vector<Embedding> seed_plus_plus(std::span<const Embedding> points, std::size_t k, Rng& rng) {
  std::vector<Embedding> centroids;
  centroids.push_back(points[uniform_index(rng, points.size())]);
  std::vector<double> d2(points.size(), std::numeric_limits<double>::infinity());
  while (centroids.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      d2[i] = std::min(d2[i], sq_dist(points[i], centroids.back()));
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      double target = uniform01(rng) * total;
      pick = points.size() - 1;
      for (std::size_t i = 0; i < points.size(); ++i) {
        target -= d2[i];
        if (target < 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = uniform_index(rng, points.size());
    }
    centroids.push_back(points[pick]);
  }
  return centroids;
}

std::vector<Embedding> recompute_centroids(std::span<const Embedding> points, const std::vector<std::size_t>& label,
                                           const std::vector<Embedding>& previous) {
  const std::size_t k = previous.size();
  const std::size_t dim = points.front().size();
  std::vector<Embedding> sums(k, Embedding(dim, 0.0));
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    ++counts[label[i]];
    for (std::size_t d = 0; d < dim; ++d) sums[label[i]][d] += points[i][d];
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) {
      sums[c] = previous[c];
      continue;
    }
    for (double& x : sums[c]) x /= static_cast<double>(counts[c]);
  }
  return sums;
}

// Moves points into empty clusters; returns true if anything changed.
bool repair_empty(std::span<const Embedding> points, std::vector<std::size_t>& label,
                  std::vector<Embedding>& centroids) {
  bool changed = false;
  const std::size_t k = centroids.size();
  for (;;) {
    std::vector<std::size_t> counts(k, 0);
    for (auto l : label) ++counts[l];
    auto empty = std::find(counts.begin(), counts.end(), std::size_t{0});
    if (empty == counts.end()) return changed;
    const auto largest = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
    std::size_t far = points.size();
    double far_d = -1.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (label[i] != largest) continue;
      const double d = sq_dist(points[i], centroids[largest]);
      if (d > far_d) {
        far_d = d;
        far = i;
      }
    }
    const auto target = static_cast<std::size_t>(empty - counts.begin());
    label[far] = target;
    centroids[target] = points[far];
    centroids = recompute_centroids(points, label, centroids);
    changed = true;
  }
}

}  // namespace

std::size_t TopicPartition::assign(std::span<const double> point) const {
  if (centroids.empty()) throw Error("partition has no centroids");
  return nearest(centroids, point);
}

TopicPartition kmeans(std::span<const Embedding> points, std::size_t clusters, std::uint64_t seed,
                      const KMeansOptions& options) {
  if (clusters == 0) throw Error("number of topics must be positive");
  if (clusters > points.size()) throw Error("more topics than shadow queries");
  Rng rng(seed);
  std::vector<Embedding> centroids = seed_plus_plus(points, clusters, rng);
  std::vector<std::size_t> label(points.size(), 0);

  for (std::size_t iter = 0; iter < options.max_iters; ++iter) {
    for (std::size_t i = 0; i < points.size(); ++i) label[i] = nearest(centroids, points[i]);
    repair_empty(points, label, centroids);
    std::vector<Embedding> next = recompute_centroids(points, label, centroids);
    double movement = 0.0;
    for (std::size_t c = 0; c < clusters; ++c) movement = std::max(movement, std::sqrt(sq_dist(next[c], centroids[c])));
    centroids = std::move(next);
    if (movement < options.tolerance) break;
  }
  // Final assignment against the settled centroids, with repair.
  for (std::size_t i = 0; i < points.size(); ++i) label[i] = nearest(centroids, points[i]);
  if (repair_empty(points, label, centroids)) centroids = recompute_centroids(points, label, centroids);

  TopicPartition out;
  out.members.resize(clusters);
  for (std::size_t i = 0; i < points.size(); ++i) out.members[label[i]].push_back(i);
  out.centroids = std::move(centroids);
  return out;
}

TopicPartition partition_topics(const Retriever& retriever, std::span<const Query> shadow, std::size_t topics,
                                std::uint64_t seed) {
  if (topics > shadow.size()) throw Error("more topics than shadow queries");
  std::vector<Embedding> points(shadow.size());
  parallel_for(shadow.size(), [&](std::size_t i) { points[i] = retriever.embed_text(shadow[i].text); });
  return kmeans(points, topics, seed);
}

TopicPartition partition_from_labels(const Retriever& retriever, std::span<const Query> shadow,
                                     std::span<const int> labels) {
  if (labels.size() != shadow.size()) throw Error("topic label count does not match shadow queries");
  std::map<int, std::size_t> topic_of_label;
  for (int l : labels) topic_of_label.emplace(l, 0);
  std::size_t next = 0;
  for (auto& [l, t] : topic_of_label) t = next++;

  TopicPartition out;
  out.members.resize(topic_of_label.size());
  const std::size_t dim = retriever.encoder->dim();
  out.centroids.assign(topic_of_label.size(), Embedding(dim, 0.0));
  for (std::size_t i = 0; i < shadow.size(); ++i) {
    const std::size_t t = topic_of_label[labels[i]];
    out.members[t].push_back(i);
    const Embedding e = retriever.embed_text(shadow[i].text);
    for (std::size_t d = 0; d < dim; ++d) out.centroids[t][d] += e[d];
  }
  for (std::size_t t = 0; t < out.members.size(); ++t) {
    for (double& x : out.centroids[t]) x /= static_cast<double>(out.members[t].size());
  }
  return out;
}

BudgetAllocation allocate_budgets(std::size_t n, double p, std::span<const std::size_t> topic_sizes) {
  if (!(p > 0.0 && p < 1.0)) throw Error("poisoning rate must be in (0, 1)");
  if (topic_sizes.empty()) throw Error("partition has no topics");
  const double raw_total = static_cast<double>(n) * p;
  if (raw_total < 1.0) throw Error("budget below one document");
  const std::size_t shadow_size = std::accumulate(topic_sizes.begin(), topic_sizes.end(), std::size_t{0});
  if (shadow_size == 0) throw Error("partition covers no queries");

  BudgetAllocation out;
  out.total = static_cast<std::size_t>(std::llround(raw_total));
  out.shares.resize(topic_sizes.size());
  out.budgets.resize(topic_sizes.size());
  std::size_t assigned = 0;
  for (std::size_t j = 0; j < topic_sizes.size(); ++j) {
    out.shares[j] = raw_total * static_cast<double>(topic_sizes[j]) / static_cast<double>(shadow_size);
    out.budgets[j] = static_cast<std::size_t>(std::floor(out.shares[j]));
    assigned += out.budgets[j];
  }
  // Largest remainder first; ties go to the lower topic index.
  std::vector<std::size_t> order(topic_sizes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return out.shares[a] - std::floor(out.shares[a]) > out.shares[b] - std::floor(out.shares[b]);
  });
  for (std::size_t r = 0; assigned < out.total; ++r) {
    ++out.budgets[order[r % order.size()]];
    ++assigned;
  }
  // Floating-point rounding can leave the floors one above round(n*p); take back from the smallest remainders.
  for (std::size_t r = order.size(); assigned > out.total; --r) {
    std::size_t j = order[(r - 1) % order.size()];
    if (out.budgets[j] == 0) continue;
    --out.budgets[j];
    --assigned;
  }
  return out;
}

BudgetAllocation allocate_budgets(std::size_t n, double p, const TopicPartition& partition) {
  const auto sizes = partition.sizes();
  return allocate_budgets(n, p, sizes);
}

}  // namespace ragforge
