#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "helpers.hpp"
#include "ragforge/common.hpp"
#include "ragforge/defense.hpp"

using namespace ragforge;
using ragforge::testing::random_retriever;
using ragforge::testing::small_vocab;

TEST(Synonyms, BuiltinTableHasEntries) {
  auto t = SynonymTable::builtin();
  EXPECT_GT(t.size(), 10u);
  EXPECT_EQ(t.lookup("zzzz"), nullptr);
  t.add("Car", {"Auto"});
  ASSERT_NE(t.lookup("car"), nullptr);
  EXPECT_EQ(t.lookup("car")->front(), "auto");
}

TEST(Paraphrase, FirstVariantUsesFirstSynonyms) {
  SynonymTable t;
  t.add("big", {"large", "huge"});
  t.add("city", {"town"});
  Rng rng(1);
  auto v = builtin_paraphrases("which big city", t, 3, rng);
  ASSERT_EQ(v.size(), 3u);
  EXPECT_EQ(v[0], "which large town");
}

TEST(Paraphrase, DeterministicPerSeedAndVariesAcrossSeeds) {
  ParaphraseOptions o;
  const std::string q = "who won the big game in the city and who lost";
  auto a = paraphrase_query(q, o, 7);
  auto b = paraphrase_query(q, o, 7);
  EXPECT_EQ(a.text, b.text);
  EXPECT_EQ(a.chosen, b.chosen);
  EXPECT_EQ(a.variants.size(), 5u);
  std::set<std::string> seen;
  for (std::uint64_t s = 0; s < 40; ++s) seen.insert(paraphrase_query(q, o, s).text);
  EXPECT_GT(seen.size(), 1u);
}

TEST(Paraphrase, ExternalProviderFallsBackToOriginal) {
  ParaphraseOptions o;
  o.provider = ParaphraseProvider::external;
  EndpointConfig e;
  e.base_url = "http://127.0.0.1:1";
  e.max_retries = 0;
  e.timeout = std::chrono::seconds(1);
  o.endpoint = e;
  auto r = paraphrase_query("keep me", o, 1);
  EXPECT_TRUE(r.fell_back);
  EXPECT_EQ(r.text, "keep me");
}

TEST(Dedup, NormalizationRules) {
  EXPECT_EQ(normalize_for_dedup("  Hello   World\t"), "hello world");
}

TEST(Dedup, MatchesQuadraticOracle) {
  Rng rng(3);
  const std::vector<std::string> pool{"a b", "A  b", "c", "d e f", " c ", "g"};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Document> docs;
    const auto n = 1 + uniform_index(rng, 12);
    for (std::size_t i = 0; i < n; ++i) {
      docs.push_back({"id" + std::to_string(uniform_index(rng, 1000)) + "-" + std::to_string(i),
                      pool[uniform_index(rng, pool.size())]});
    }
    for (bool raw : {false, true}) {
      auto key = [&](const Document& d) { return raw ? d.text : normalize_for_dedup(d.text); };
      std::vector<Document> expected;
      for (std::size_t i = 0; i < docs.size(); ++i) {
        bool keep = true;
        for (std::size_t j = 0; j < docs.size(); ++j) {
          if (i != j && key(docs[i]) == key(docs[j]) && docs[j].id < docs[i].id) keep = false;
        }
        if (keep) expected.push_back(docs[i]);
      }
      EXPECT_EQ(dedup_exact(docs, raw), expected);
    }
  }
}

TEST(LexicalF1, HandValues) {
  EXPECT_DOUBLE_EQ(lexical_f1("a b c", "a b c"), 1.0);
  EXPECT_DOUBLE_EQ(lexical_f1("a b", "c d"), 0.0);
  // overlap 1, precision 1/4, recall 1/2 -> 2*(1/8)/(3/4) = 1/3
  EXPECT_NEAR(lexical_f1("a b", "a x y z"), 1.0 / 3.0, 1e-12);
  // multiset: query "a a", doc "a" -> overlap 1, p = 1, r = 1/2
  EXPECT_NEAR(lexical_f1("a a", "a"), 2.0 / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(lexical_f1("", "a"), 0.0);
}

TEST(Rerank, KeepsTopByLexicalScore) {
  RetrievalResult r;
  r.ranked = {{"d1", 9.0, Provenance::organic, "zzz"},
              {"d2", 8.0, Provenance::poisoned, "who won the cup"},
              {"d3", 7.0, Provenance::organic, "the cup"},
              {"d0", 6.0, Provenance::organic, "the cup"}};
  auto out = rerank_filter("who won the cup", r, 3, RerankScorer::lexical);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out.ranked[0].doc_id, "d2");
  EXPECT_EQ(out.ranked[1].doc_id, "d0");  // tie with d3 broken by id
  EXPECT_EQ(out.ranked[2].doc_id, "d3");
  EXPECT_THROW(rerank_filter("q", r, 0, RerankScorer::lexical), Error);
  EXPECT_THROW(rerank_filter("q", r, 2, RerankScorer::cross), Error);
}

TEST(Rerank, CrossScorerUsesItsOwnEncoder) {
  auto vocab = small_vocab();
  auto cross = random_retriever(vocab, 99, 6);
  RetrievalResult r;
  r.ranked = {{"a", 1.0, Provenance::organic, "w1"}, {"b", 0.5, Provenance::organic, "w2 w3"}};
  auto out = rerank_filter("w4", r, 2, RerankScorer::cross, &cross);
  const auto q = cross.embed_text("w4");
  for (const auto& h : out.ranked) EXPECT_DOUBLE_EQ(h.score, similarity(q, cross.embed_text(h.text)));
  EXPECT_GE(out.ranked[0].score, out.ranked[1].score);
}

TEST(DefenseConfig, StagesAndOnly) {
  DefenseConfig c;
  EXPECT_FALSE(c.any());
  c.pd.enabled = c.rf.enabled = c.dtf.enabled = true;
  EXPECT_EQ(c.stages(), (std::vector<std::string>{"dtf", "pd", "rf"}));
  auto only = c.only("pd");
  EXPECT_TRUE(only.pd.enabled);
  EXPECT_FALSE(only.dtf.enabled);
  EXPECT_FALSE(only.rf.enabled);
  EXPECT_THROW(c.only("xyz"), Error);
}

TEST(DefensePipeline, QuerySeedIsKeyedByQid) {
  DefenseConfig c;
  c.pd.enabled = true;
  DefensePipeline p(c, 5);
  const std::string q = "who won the big game in the city";
  EXPECT_EQ(p.apply_query("q1", q).text, p.apply_query("q1", q).text);
  DefenseConfig off;
  DefensePipeline none(off, 5);
  EXPECT_EQ(none.apply_query("q1", q).text, q);
}

TEST(DefensePipeline, IndexStageRemovesDuplicates) {
  auto r = random_retriever(small_vocab(), 1);
  std::vector<Document> docs{{"d0", "w1 w2"}, {"poison-1", "w3 w4", Provenance::poisoned},
                             {"poison-2", "W3  w4", Provenance::poisoned}};
  auto kb = KnowledgeBase::build(r, docs);
  DefenseConfig c;
  c.dtf.enabled = true;
  auto filtered = DefensePipeline(c, 0).apply_index(kb);
  EXPECT_EQ(filtered.size(), 2u);
  c.dtf.raw = true;
  EXPECT_EQ(DefensePipeline(c, 0).apply_index(kb).size(), 3u);
}
