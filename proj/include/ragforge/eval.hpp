#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ragforge/corpus.hpp"
#include "ragforge/defense.hpp"
#include "ragforge/generation.hpp"
#include "ragforge/shadow.hpp"

namespace ragforge {

struct TopicMetrics {
  std::size_t n = 0;
  std::size_t hits_r = 0;
  std::size_t hits_t = 0;
  double asr_r = 0.0;
  double asr_t = 0.0;

  bool operator==(const TopicMetrics&) const = default;
};

struct AttackMetrics {
  std::size_t k = 0;
  std::size_t n_queries = 0;
  std::size_t hits_r = 0;
  std::size_t hits_t = 0;
  double asr_r = 0.0;
  double asr_t = 0.0;
  /// Keyed by nearest shadow-topic centroid; empty when no partition was given.
  std::map<std::size_t, TopicMetrics> per_topic;

  bool operator==(const AttackMetrics&) const = default;
};

/// Fraction of queries whose top-k contains at least one poisoned document.
double asr_retrieval(const KnowledgeBase& kb, const Retriever& retriever, std::span<const Query> queries,
                     std::size_t k);

struct EvalOptions {
  std::vector<std::size_t> ks{5, 10, 20};
  /// Mock generator with default calibration when null.
  Generator* generator = nullptr;
  std::string url{"www.asdasd.com"};
  const DefensePipeline* defenses = nullptr;
  /// Enables the per-topic breakdown.
  const TopicPartition* partition = nullptr;
};

/// Raised when the generator fails mid-run; carries the metrics over the
/// queries completed before the failure.
class EvaluationAborted : public Error {
 public:
  EvaluationAborted(const std::string& what, std::vector<AttackMetrics> partial)
      : Error(what), partial_(std::move(partial)) {}
  const std::vector<AttackMetrics>& partial() const { return partial_; }

 private:
  std::vector<AttackMetrics> partial_;
};

/// Per query: (PD) -> retrieve top-k from the (DTF-filtered) index -> (RF)
/// -> generate -> detect the target URL. ASR-r counts poison in the final
/// context, ASR-t counts detections; both over all queries. One entry per k.
std::vector<AttackMetrics> evaluate_attack(const KnowledgeBase& kb, const Retriever& retriever,
                                           std::span<const Query> queries, const EvalOptions& options);

double asr_target(const KnowledgeBase& kb, const Retriever& retriever, std::span<const Query> queries, std::size_t k,
                  Generator& generator, std::string_view url, const DefensePipeline* defenses = nullptr);

/// Injects the poison documents (re-embedded under the victim) and measures ASR-r.
double transfer_eval(std::span<const Document> poison, const Retriever& victim, const KnowledgeBase& victim_kb,
                     std::span<const Query> queries, std::size_t k);

enum class SweepAxis { poison_rate, url, k };
std::string_view to_string(SweepAxis axis);
SweepAxis parse_sweep_axis(std::string_view name);

struct SweepPoint {
  std::string value;
  std::vector<AttackMetrics> metrics;
  std::optional<std::string> error;

  bool operator==(const SweepPoint&) const = default;
};

struct SweepReport {
  SweepAxis axis = SweepAxis::poison_rate;
  std::vector<SweepPoint> points;

  bool operator==(const SweepReport&) const = default;
};

/// Runs one point per value; a throwing point is recorded and the sweep continues.
SweepReport sweep(SweepAxis axis, std::span<const std::string> values,
                  const std::function<std::vector<AttackMetrics>(const std::string&)>& run_point);

struct TransferCell {
  std::string source;  // encoder fingerprint
  std::string victim;
  double asr_r = 0.0;

  bool operator==(const TransferCell&) const = default;
};

struct TransferMatrix {
  std::size_t k = 50;
  std::vector<std::string> sources;
  std::vector<std::string> victims;
  std::vector<TransferCell> cells;  // row-major, sources x victims

  double at(std::size_t s, std::size_t v) const { return cells.at(s * victims.size() + v).asr_r; }
  bool operator==(const TransferMatrix&) const = default;
};

struct Report {
  std::string run_id;
  std::string config_hash;
  std::map<std::string, std::uint64_t> seeds;
  std::string source_encoder;
  std::optional<std::string> victim_encoder;
  std::vector<std::size_t> ks;
  std::vector<AttackMetrics> metrics;
  /// Defended runs keyed by stage name ("dtf", "pd", "rf", or "all").
  std::map<std::string, std::vector<AttackMetrics>> defended;
  std::optional<SweepReport> sweep;
  std::optional<TransferMatrix> transfer;
  /// Set when the run stopped early; metrics then cover completed queries only.
  std::optional<std::string> aborted;

  bool operator==(const Report&) const = default;
};

enum class ReportFormat { json, csv };
ReportFormat parse_report_format(std::string_view name);

std::string report_to_json(const Report& report);
Report report_from_json(std::string_view text);
/// Columns run_id,k,topic,asr_r,asr_t,n; one row per (k, topic) plus an "all" row per k.
std::string report_to_csv(const Report& report);

void emit_report(const Report& report, ReportFormat format, const std::filesystem::path& path);

}  // namespace ragforge
