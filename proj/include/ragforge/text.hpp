#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ragforge {

using TokenId = std::uint32_t;

struct TokenSequence {
  std::vector<TokenId> ids;

  std::size_t length() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
  bool operator==(const TokenSequence&) const = default;
};

/// Lowercases ASCII letters and splits on whitespace; every punctuation byte
/// becomes its own token. Bytes >= 0x80 are treated as word characters so
/// UTF-8 sequences are never split.
std::vector<std::string> split_tokens(std::string_view text);

/// True when the token contains at least one letter or digit.
bool is_word_token(std::string_view token);

/// Immutable token space shared by the retriever and the suffix optimizer.
/// Id 0 is always the unknown token and id 1 is always "!".
class Vocabulary {
 public:
  static constexpr TokenId kUnk = 0;
  static constexpr TokenId kBang = 1;
  static constexpr std::string_view kUnkToken = "[UNK]";
  static constexpr std::string_view kBangToken = "!";

  /// Rebuilds a vocabulary from its token list (as persisted on disk).
  /// The list must start with "[UNK]", "!" and contain no duplicates.
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  std::span<const std::string> tokens() const { return tokens_; }

  /// Throws Error("invalid token id") when id >= size().
  const std::string& token(TokenId id) const;
  std::optional<TokenId> find(std::string_view token) const;
  TokenId id_or_unk(std::string_view token) const;

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  Vocabulary() = default;

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> token_to_id_;
};

/// Keeps the max_size - 2 most frequent normalized tokens (frequency desc,
/// then lexicographic) plus "[UNK]" and "!".
Vocabulary build_vocabulary(std::span<const std::string> texts, std::size_t max_size);

TokenSequence tokenize(const Vocabulary& vocab, std::string_view text);

/// Space-joins token strings. Unknown-token ids are skipped.
std::string detokenize(const Vocabulary& vocab, const TokenSequence& seq);

enum class StopwordPolicy { keep, drop };

bool is_stopword(std::string_view token);

/// Top-F in-vocabulary word tokens by total occurrence count across the
/// queries; ties broken lexicographically. Punctuation is never an anchor.
std::vector<std::string> top_frequent_tokens(const Vocabulary& vocab,
                                             std::span<const std::string> queries, std::size_t count,
                                             StopwordPolicy policy = StopwordPolicy::keep);

}  // namespace ragforge
