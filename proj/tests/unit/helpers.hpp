#pragma once

#include <memory>
#include <string>
#include <vector>

#include "ragforge/encoder.hpp"
#include "ragforge/text.hpp"

namespace ragforge::testing {

inline std::shared_ptr<const Vocabulary> small_vocab(std::size_t extra = 14) {
  std::vector<std::string> tokens{std::string(Vocabulary::kUnkToken), std::string(Vocabulary::kBangToken)};
  for (std::size_t i = 0; i < extra; ++i) tokens.push_back("w" + std::to_string(i));
  return std::make_shared<const Vocabulary>(Vocabulary::from_tokens(std::move(tokens)));
}

inline Retriever random_retriever(std::shared_ptr<const Vocabulary> vocab, std::uint64_t seed, std::size_t dim = 8,
                                  bool projection = true) {
  EncoderConfig c;
  c.vocab_size = vocab->size();
  c.embed_dim = dim;
  c.use_projection = projection;
  c.init_seed = seed;
  c.init_scale = 0.5;
  return Retriever(std::move(vocab), std::make_shared<const Encoder>(Encoder::init(c)));
}

inline std::string data_path(const std::string& rel) { return std::string(RAGFORGE_SOURCE_DIR) + "/" + rel; }

}  // namespace ragforge::testing
