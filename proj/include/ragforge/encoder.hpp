#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ragforge/text.hpp"

namespace ragforge {

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 64;
  bool use_projection = true;
  std::uint64_t init_seed = 0;
  double init_scale = 0.1;

  bool operator==(const EncoderConfig&) const = default;
};

using Embedding = std::vector<double>;

/// Row-major dense matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }

  bool operator==(const Matrix&) const = default;
};

/// Entry (j, v) is the derivative of the retrieval loss with respect to the
/// one-hot input of token v at suffix position j.
using TokenGradientMatrix = Matrix;

/// Embedding table + mean pooling + linear projection. Weights are immutable
/// once constructed, so one instance may be shared across threads.
class Encoder {
 public:
  /// Weights uniform in [-init_scale, init_scale] from a seeded mt19937_64;
  /// the embedding table is drawn first, then the projection.
  static Encoder init(const EncoderConfig& config);

  /// Takes ownership of explicit weights (checkpoint loading, tests).
  static Encoder from_weights(const EncoderConfig& config, Matrix embedding_table, Matrix projection);

  const EncoderConfig& config() const { return config_; }
  std::size_t dim() const { return config_.embed_dim; }
  std::size_t vocab_size() const { return config_.vocab_size; }
  const Matrix& embedding_table() const { return table_; }
  const Matrix& projection() const { return projection_; }

  /// projection * mean(token rows). Throws on an empty sequence.
  Embedding embed(const TokenSequence& seq) const;

  /// Sum of the embedding rows of seq (before mean and projection).
  void pooled_sum(const TokenSequence& seq, std::span<double> out) const;

  /// projection * v.
  Embedding project(std::span<const double> v) const;
  /// projection^T * v.
  Embedding project_transposed(std::span<const double> v) const;

  /// Canonical binary checkpoint: magic, config, row-major table, row-major projection.
  std::string serialize() const;
  static Encoder deserialize(std::string_view bytes);
  void save(const std::filesystem::path& path) const;
  static Encoder load(const std::filesystem::path& path);

  /// SHA-256 of the serialized checkpoint.
  const std::string& fingerprint() const { return fingerprint_; }

 private:
  Encoder(EncoderConfig config, Matrix table, Matrix projection);

  EncoderConfig config_;
  Matrix table_;
  Matrix projection_;
  std::string fingerprint_;
};

/// Raw dot product. Throws on dimension mismatch.
double similarity(std::span<const double> q, std::span<const double> d);

/// Analytic gradient of L = -(1/|S|) sum_q sim(embed(q), embed(prefix || suffix))
/// with respect to the one-hot input at each suffix position.
TokenGradientMatrix suffix_token_gradients(const Encoder& encoder, const TokenSequence& fixed_prefix,
                                           const TokenSequence& suffix, std::span<const TokenSequence> queries);

/// A tokenizer and an encoder that together map text to embeddings.
struct Retriever {
  std::shared_ptr<const Vocabulary> vocab;
  std::shared_ptr<const Encoder> encoder;

  Retriever(std::shared_ptr<const Vocabulary> v, std::shared_ptr<const Encoder> e);

  Embedding embed_text(std::string_view text) const;
  const std::string& fingerprint() const { return encoder->fingerprint(); }
};

}  // namespace ragforge
