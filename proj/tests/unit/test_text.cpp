#include <gtest/gtest.h>

#include <algorithm>
#include <map>

#include "ragforge/common.hpp"
#include "ragforge/text.hpp"

using namespace ragforge;

TEST(SplitTokens, LowercasesAndSeparatesPunctuation) {
  EXPECT_EQ(split_tokens("Who WON the Cup?"), (std::vector<std::string>{"who", "won", "the", "cup", "?"}));
  EXPECT_EQ(split_tokens("www.asdasd.com!!"),
            (std::vector<std::string>{"www", ".", "asdasd", ".", "com", "!", "!"}));
  EXPECT_TRUE(split_tokens("   \t\n").empty());
}

TEST(SplitTokens, KeepsUtf8Together) {
  EXPECT_EQ(split_tokens("caf\xc3\xa9 ok"), (std::vector<std::string>{"caf\xc3\xa9", "ok"}));
}

TEST(Vocabulary, ReservedIdsAndFrequencyOrder) {
  const std::vector<std::string> texts{"b a a", "c b a", "d"};
  auto v = build_vocabulary(texts, 50);
  ASSERT_EQ(v.size(), 6u);
  EXPECT_EQ(v.token(Vocabulary::kUnk), "[UNK]");
  EXPECT_EQ(v.token(Vocabulary::kBang), "!");
  // a:3, b:2, then c and d tie at 1 and sort lexicographically
  EXPECT_EQ(v.token(2), "a");
  EXPECT_EQ(v.token(3), "b");
  EXPECT_EQ(v.token(4), "c");
  EXPECT_EQ(v.token(5), "d");
}

TEST(Vocabulary, MaxSizeTruncates) {
  const std::vector<std::string> texts{"b a a", "c b a", "d"};
  auto v = build_vocabulary(texts, 4);
  EXPECT_EQ(v.size(), 4u);
  EXPECT_EQ(v.id_or_unk("c"), Vocabulary::kUnk);
}

TEST(Vocabulary, BangInCorpusIsNotDuplicated) {
  const std::vector<std::string> texts{"hi ! !", "hi"};
  auto v = build_vocabulary(texts, 10);
  EXPECT_EQ(v.size(), 3u);
  EXPECT_EQ(v.find("!"), std::optional<TokenId>(Vocabulary::kBang));
}

TEST(Vocabulary, FromTokensValidates) {
  EXPECT_THROW(Vocabulary::from_tokens({"x", "!"}), Error);
  EXPECT_THROW(Vocabulary::from_tokens({"[UNK]", "!", "a", "a"}), Error);
  auto v = Vocabulary::from_tokens({"[UNK]", "!", "a"});
  EXPECT_THROW((void)v.token(3), Error);
}

TEST(Tokenize, RoundTripsThroughDetokenize) {
  const std::vector<std::string> texts{"the quick brown fox"};
  auto v = build_vocabulary(texts, 50);
  auto seq = tokenize(v, "The quick zebra fox");
  ASSERT_EQ(seq.length(), 4u);
  EXPECT_EQ(seq.ids[2], Vocabulary::kUnk);
  EXPECT_EQ(detokenize(v, seq), "the quick fox");
}

TEST(FrequentTokens, MatchesBruteForceCount) {
  Rng rng(5);
  const std::vector<std::string> words{"alpha", "beta", "gamma", "delta", "the", "of", "eps", "zeta"};
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::string> queries;
    for (int q = 0; q < 12; ++q) {
      std::string s;
      const auto len = 1 + uniform_index(rng, 7);
      for (std::size_t i = 0; i < len; ++i) s += words[uniform_index(rng, words.size())] + (i % 3 == 0 ? "? " : " ");
      queries.push_back(s);
    }
    auto vocab = build_vocabulary(queries, 100);
    std::map<std::string, std::size_t> counts;
    for (const auto& q : queries) {
      for (const auto& t : split_tokens(q)) {
        if (is_word_token(t)) ++counts[t];
      }
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](auto& a, auto& b) { return a.second > b.second; });
    const std::size_t F = 1 + uniform_index(rng, std::min<std::size_t>(6, ranked.size()));
    std::vector<std::string> expected;
    for (std::size_t i = 0; i < F; ++i) expected.push_back(ranked[i].first);
    EXPECT_EQ(top_frequent_tokens(vocab, queries, F), expected);
  }
}

TEST(FrequentTokens, StopwordsCanBeDropped) {
  const std::vector<std::string> queries{"the cat of the hat", "the cat"};
  auto vocab = build_vocabulary(queries, 100);
  EXPECT_EQ(top_frequent_tokens(vocab, queries, 2), (std::vector<std::string>{"the", "cat"}));
  EXPECT_EQ(top_frequent_tokens(vocab, queries, 2, StopwordPolicy::drop), (std::vector<std::string>{"cat", "hat"}));
}

TEST(FrequentTokens, OutOfVocabularyTokensAreSkipped) {
  const std::vector<std::string> queries{"zz zz zz yy"};
  auto vocab = build_vocabulary(std::vector<std::string>{"yy"}, 100);
  EXPECT_EQ(top_frequent_tokens(vocab, queries, 1), (std::vector<std::string>{"yy"}));
  EXPECT_THROW(top_frequent_tokens(vocab, queries, 2), Error);
}

TEST(Common, DeriveSeedSeparatesStreams) {
  EXPECT_NE(derive_seed(1, {2}), derive_seed(1, {3}));
  EXPECT_EQ(derive_seed(9, {4, 5}), derive_seed(9, {4, 5}));
  EXPECT_EQ(stable_hash(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Common, ParallelForCoversEveryIndexOnce) {
  for (std::size_t threads : {1u, 2u, 7u}) {
    set_max_threads(threads);
    std::vector<int> hits(1001, 0);
    parallel_for(hits.size(), [&](std::size_t i) { ++hits[i]; });
    EXPECT_TRUE(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
  }
  set_max_threads(0);
  EXPECT_THROW(parallel_for(10, [](std::size_t i) {
                 if (i == 3) throw Error("boom");
               }),
               Error);
}
