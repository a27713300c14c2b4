#include "ragforge/text.hpp"

#include <algorithm>
#include <array>
#include <map>

#include "ragforge/common.hpp"

namespace ragforge {

namespace {

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

bool is_word_byte(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c >= 0x80;
}

char lower(unsigned char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : static_cast<char>(c); }

// Ordered (frequency desc, token asc).
std::vector<std::pair<std::string, std::size_t>> ranked_counts(const std::map<std::string, std::size_t>& counts) {
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  return ranked;
}

constexpr std::array<std::string_view, 64> kStopwords = {
    "a",     "about", "after", "all",   "also",  "an",    "and",  "are",  "as",    "at",    "be",
    "been",  "but",   "by",    "can",   "did",   "do",    "does", "for",  "from",  "had",   "has",
    "have",  "he",    "her",   "his",   "how",   "i",     "in",   "into", "is",    "it",    "its",
    "many",  "much",  "of",    "on",    "or",    "she",   "that", "the",  "their", "there", "they",
    "this",  "to",    "was",   "were",  "what",  "when",  "where", "which", "who",  "whom",  "whose",
    "why",   "will",  "with",  "would", "you",   "your",  "we",   "our",  "than"};

}  // namespace

std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (is_word_byte(c)) {
      cur.push_back(lower(c));
      continue;
    }
    if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
    if (!is_space(c)) out.emplace_back(1, static_cast<char>(c));
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

bool is_word_token(std::string_view token) {
  return std::any_of(token.begin(), token.end(), [](unsigned char c) { return is_word_byte(c); });
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < 2 || tokens[kUnk] != kUnkToken || tokens[kBang] != kBangToken) {
    throw Error("vocabulary must start with [UNK] and !");
  }
  Vocabulary v;
  v.token_to_id_.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!v.token_to_id_.emplace(tokens[i], static_cast<TokenId>(i)).second) {
      throw Error("duplicate vocabulary token: " + tokens[i]);
    }
  }
  v.tokens_ = std::move(tokens);
  return v;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id >= tokens_.size()) throw Error("invalid token id");
  return tokens_[id];
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  if (it == token_to_id_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::id_or_unk(std::string_view token) const { return find(token).value_or(kUnk); }

Vocabulary build_vocabulary(std::span<const std::string> texts, std::size_t max_size) {
  if (texts.empty()) throw Error("empty corpus");
  if (max_size < 2) throw Error("vocabulary max_size must be at least 2");
  std::map<std::string, std::size_t> counts;
  for (const auto& t : texts) {
    for (auto& tok : split_tokens(t)) ++counts[std::move(tok)];
  }
  counts.erase(std::string(Vocabulary::kUnkToken));
  counts.erase(std::string(Vocabulary::kBangToken));

  std::vector<std::string> tokens{std::string(Vocabulary::kUnkToken), std::string(Vocabulary::kBangToken)};
  for (auto& [tok, n] : ranked_counts(counts)) {
    if (tokens.size() >= max_size) break;
    tokens.push_back(tok);
  }
  return Vocabulary::from_tokens(std::move(tokens));
}

TokenSequence tokenize(const Vocabulary& vocab, std::string_view text) {
  TokenSequence seq;
  for (const auto& tok : split_tokens(text)) seq.ids.push_back(vocab.id_or_unk(tok));
  return seq;
}

std::string detokenize(const Vocabulary& vocab, const TokenSequence& seq) {
  std::string out;
  for (TokenId id : seq.ids) {
    const std::string& tok = vocab.token(id);
    if (id == Vocabulary::kUnk) continue;
    if (!out.empty()) out.push_back(' ');
    out += tok;
  }
  return out;
}

bool is_stopword(std::string_view token) {
  return std::find(kStopwords.begin(), kStopwords.end(), token) != kStopwords.end();
}

std::vector<std::string> top_frequent_tokens(const Vocabulary& vocab, std::span<const std::string> queries,
                                             std::size_t count, StopwordPolicy policy) {
  if (queries.empty()) throw Error("empty query collection");
  std::map<std::string, std::size_t> counts;
  for (const auto& q : queries) {
    for (auto& tok : split_tokens(q)) {
      if (!is_word_token(tok) || !vocab.find(tok)) continue;
      if (policy == StopwordPolicy::drop && is_stopword(tok)) continue;
      ++counts[std::move(tok)];
    }
  }
  if (counts.size() < count) throw Error("insufficient distinct tokens");
  std::vector<std::string> out;
  out.reserve(count);
  for (auto& [tok, n] : ranked_counts(counts)) {
    if (out.size() == count) break;
    out.push_back(tok);
  }
  return out;
}

}  // namespace ragforge
