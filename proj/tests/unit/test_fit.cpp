#include <gtest/gtest.h>

#include <cmath>

#include "ragforge/common.hpp"
#include "ragforge/fit.hpp"
#include "ragforge/text.hpp"

using namespace ragforge;

namespace {

std::vector<std::string> tiny_corpus() {
  std::vector<std::string> out;
  const std::vector<std::string> topics{"river bank water fish boat", "guitar drum song band stage",
                                        "goal match team ball coach"};
  for (int i = 0; i < 60; ++i) {
    const auto& t = topics[i % 3];
    out.push_back(t + " " + t + " " + t);
  }
  return out;
}

}  // namespace

TEST(Fit, LossDecreasesAndRunIsDeterministic) {
  const auto texts = tiny_corpus();
  auto vocab = build_vocabulary(texts, 100);
  EncoderConfig ec{.vocab_size = vocab.size(), .embed_dim = 8, .use_projection = true, .init_seed = 1, .init_scale = 0.1};
  FitConfig fc;
  fc.steps = 150;
  fc.batch_size = 12;
  fc.query_crop_min = 2;
  fc.query_crop_max = 4;
  fc.doc_crop_min = 4;
  fc.doc_crop_max = 8;
  fc.seed = 3;
  FitReport rep;
  auto a = fit_encoder(vocab, texts, ec, fc, &rep);
  EXPECT_LT(rep.final_loss, rep.initial_loss);
  auto b = fit_encoder(vocab, texts, ec, fc);
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
  EXPECT_EQ(a.config(), ec);

  // Same-topic texts end up closer than cross-topic texts.
  const auto e0 = a.embed(tokenize(vocab, "river fish"));
  const auto e1 = a.embed(tokenize(vocab, "water boat bank"));
  const auto e2 = a.embed(tokenize(vocab, "guitar song"));
  EXPECT_GT(similarity(e0, e1), similarity(e0, e2));
}

TEST(Fit, MaxRowNormIsEnforced) {
  const auto texts = tiny_corpus();
  auto vocab = build_vocabulary(texts, 100);
  EncoderConfig ec{.vocab_size = vocab.size(), .embed_dim = 4, .use_projection = false, .init_seed = 2, .init_scale = 0.1};
  FitConfig fc;
  fc.steps = 50;
  fc.batch_size = 8;
  fc.max_row_norm = 0.2;
  fc.doc_crop_min = 4;
  fc.doc_crop_max = 8;
  auto e = fit_encoder(vocab, texts, ec, fc);
  for (std::size_t r = 0; r < e.embedding_table().rows; ++r) {
    double n2 = 0;
    for (double x : e.embedding_table().row(r)) n2 += x * x;
    EXPECT_LE(std::sqrt(n2), 0.2 + 1e-12);
  }
}

TEST(Fit, ConfigValidation) {
  FitConfig fc;
  fc.batch_size = 1;
  EXPECT_THROW(fc.validate(), Error);
  fc = {};
  fc.query_crop_min = 5;
  fc.query_crop_max = 4;
  EXPECT_THROW(fc.validate(), Error);
  fc = {};
  fc.learning_rate = 0;
  EXPECT_THROW(fc.validate(), Error);
}
