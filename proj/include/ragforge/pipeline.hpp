#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ragforge/attack.hpp"
#include "ragforge/config.hpp"
#include "ragforge/corpus.hpp"
#include "ragforge/eval.hpp"
#include "ragforge/shadow.hpp"

namespace ragforge {

/// Knobs that vary between crafting runs of one experiment.
struct CraftRequest {
  std::optional<double> poison_rate_percent;  // config value when absent
  std::optional<std::string> url;
  std::optional<CraftOptions> options;  // config include_freq / include_adv when absent
};

/// Lazily computes every stage of a run from one config. With an artifact
/// directory, each stage is loaded from disk when its file exists and
/// written after it is computed otherwise.
class Experiment {
 public:
  explicit Experiment(RunConfig config, std::optional<std::filesystem::path> artifact_dir = {});

  const RunConfig& config() const { return config_; }
  const RunSeeds& seeds() const { return seeds_; }
  const std::optional<std::filesystem::path>& artifact_dir() const { return dir_; }

  /// Progress messages (stderr in the CLI); silent by default.
  void set_logger(std::function<void(std::string_view)> log) { log_ = std::move(log); }

  const std::vector<Document>& corpus();
  const std::vector<Query>& queries();
  std::shared_ptr<const Vocabulary> vocab();

  /// Source retriever (encoder seed from the config, fitted when enabled).
  std::shared_ptr<const Retriever> retriever();
  /// A retriever over the shared vocabulary with the given encoder seed.
  std::shared_ptr<const Retriever> make_retriever(std::uint64_t encoder_seed);
  std::shared_ptr<const Retriever> retriever_from_checkpoint(const std::filesystem::path& path);

  /// Organic knowledge base under the source retriever.
  const KnowledgeBase& index();
  const QuerySplit& split();
  const TopicPartition& partition();
  TopicPartition partition_for(const Retriever& retriever);
  const std::vector<std::string>& anchors();
  BudgetAllocation budgets(std::optional<double> poison_rate_percent = {});

  PoisonSet craft(const CraftRequest& request = {});
  PoisonSet craft_with(const Retriever& retriever, const TopicPartition& partition, const CraftRequest& request);
  /// Loads poison.jsonl from the artifact directory, or crafts (and saves) it.
  PoisonSet poison_set();
  /// Writes poison.jsonl, poison.meta.json and budgets.json (no-op without an artifact directory).
  void save_poison(const PoisonSet& set);

  KnowledgeBase poisoned_index(const PoisonSet& poison);

  std::unique_ptr<Generator> make_generator() const;
  std::shared_ptr<const SynonymTable> synonyms();
  DefensePipeline defense_pipeline(const DefenseConfig& config);

  std::vector<AttackMetrics> measure(const PoisonSet& poison, const std::vector<std::size_t>& ks,
                                     const DefensePipeline* defenses = nullptr,
                                     std::optional<std::string> url = {});

  /// Undefended metrics plus one defended block per enabled stage (and "all"
  /// when more than one stage is enabled).
  Report evaluate(const PoisonSet& poison);

  /// Encoders used for the transfer matrix: explicit seeds from the config or
  /// encoder_count seeds, the first of which is the source encoder seed.
  std::vector<std::uint64_t> transfer_seeds() const;
  TransferMatrix transfer(const std::vector<std::shared_ptr<const Retriever>>& encoders);
  TransferMatrix transfer();

  SweepReport sweep();

  /// Report skeleton carrying run id, config hash, seeds and encoder.
  Report base_report();

 private:
  std::optional<std::filesystem::path> artifact(std::string_view name) const;
  void log(std::string_view msg) const;
  std::vector<std::string> shadow_texts();

  RunConfig config_;
  RunSeeds seeds_;
  std::optional<std::filesystem::path> dir_;
  std::function<void(std::string_view)> log_;

  std::optional<std::vector<Document>> corpus_;
  std::optional<std::vector<Query>> queries_;
  std::shared_ptr<const Vocabulary> vocab_;
  std::shared_ptr<const Retriever> retriever_;
  std::optional<KnowledgeBase> index_;
  std::optional<QuerySplit> split_;
  std::optional<TopicPartition> partition_;
  std::optional<std::vector<std::string>> anchors_;
  std::shared_ptr<const SynonymTable> synonyms_;
  std::shared_ptr<const Retriever> cross_;
};

/// Default run id: "run-" plus the first 12 hex digits of the config hash.
std::string default_run_id(const RunConfig& config);

}  // namespace ragforge
