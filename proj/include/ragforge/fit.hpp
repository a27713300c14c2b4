#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>

#include "ragforge/encoder.hpp"

namespace ragforge {

/// Contrastive fitting on unlabeled text: two random crops of the same
/// document form a positive pair, crops of the other documents in the batch
/// are negatives. Scores are raw dot products; optimizer is Adam.
struct FitConfig {
  std::size_t steps = 1500;
  std::size_t batch_size = 32;
  std::size_t query_crop_min = 4;
  std::size_t query_crop_max = 10;
  std::size_t doc_crop_min = 12;
  std::size_t doc_crop_max = 40;
  double learning_rate = 0.01;
  double weight_decay = 0.0;
  /// Rows of the embedding table are rescaled to at most this norm after every step (0 disables).
  double max_row_norm = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct FitReport {
  double initial_loss = 0.0;
  double final_loss = 0.0;  // mean over the last 50 steps
};

/// Starts from Encoder::init(init) and fits it to the texts. Deterministic
/// for a fixed config; single-threaded.
Encoder fit_encoder(const Vocabulary& vocab, std::span<const std::string> texts, const EncoderConfig& init,
                    const FitConfig& config, FitReport* report = nullptr);

}  // namespace ragforge
