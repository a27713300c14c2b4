#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ragforge/attack.hpp"
#include "ragforge/defense.hpp"
#include "ragforge/encoder.hpp"
#include "ragforge/fit.hpp"
#include "ragforge/generation.hpp"
#include "ragforge/text.hpp"

namespace ragforge {

/// Everything a run needs. Loaded from one JSON file with nested sections;
/// unknown keys are rejected and omitted keys take the defaults below.
struct RunConfig {
  std::uint64_t seed = 42;

  struct Paths {
    std::filesystem::path corpus;
    std::filesystem::path queries;
    std::filesystem::path topic_labels;  // optional
    std::filesystem::path synonyms;      // optional; builtin table when empty
    std::filesystem::path output_dir{"runs/default"};
  } paths;

  std::size_t vocab_max_size = 50000;

  struct EncoderSection {
    std::size_t embed_dim = 64;
    bool use_projection = true;
    double init_scale = 0.1;
    std::optional<std::uint64_t> seed;  // derived from the run seed when absent
    bool fit = false;
    FitConfig fit_config;
  } encoder;

  struct ShadowSection {
    double fraction = 0.2;
    std::size_t topics = 14;
  } shadow;

  struct AttackSection {
    double poison_rate_percent = 0.5;
    std::size_t freq_tokens = 10;
    StopwordPolicy stopwords = StopwordPolicy::keep;
    std::string url{InjectPrefix::kDefaultUrl};
    PrefixStyle prefix_style = PrefixStyle::poisoncraft;
    std::optional<std::string> prefix_template;  // overrides prefix_style
    bool include_freq = true;
    bool include_adv = true;

    InjectPrefix inject() const;
  } attack;

  GcgConfig gcg;

  std::vector<std::size_t> k{5, 10, 20};

  struct GeneratorSection {
    std::string kind{"mock"};  // mock | http
    AttentionBudgetModel mock;
    EndpointConfig http;
    std::string prompt_template{PromptTemplate::kDefault};
  } generator;

  DefenseConfig defense;

  struct TransferSection {
    std::size_t k = 50;
    std::vector<std::uint64_t> encoder_seeds;  // derived when empty
    std::size_t encoder_count = 5;
  } transfer;

  struct SweepSection {
    std::string axis{"poison_rate"};
    std::vector<std::string> values;
  } sweep;

  std::size_t threads = 0;

  /// Directory relative paths are resolved against (the config file's directory).
  std::filesystem::path base_dir;
  std::filesystem::path resolve(const std::filesystem::path& p) const;

  void validate() const;
};

/// Parses config JSON; base_dir becomes RunConfig::base_dir.
RunConfig parse_config(std::string_view json_text, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);

/// Canonical JSON of the config with defaults filled in (stable key order;
/// paths as written).
std::string config_to_json(const RunConfig& config);
/// SHA-256 of config_to_json, ignoring output_dir and threads.
std::string config_hash(const RunConfig& config);

/// Named seeds for every randomized stage, derived from the run seed.
struct RunSeeds {
  std::uint64_t encoder = 0;
  std::uint64_t fit = 0;
  std::uint64_t split = 0;
  std::uint64_t partition = 0;
  std::uint64_t gcg = 0;
  std::uint64_t paraphrase = 0;
  std::uint64_t reranker = 0;
};
RunSeeds derive_seeds(const RunConfig& config);

}  // namespace ragforge
