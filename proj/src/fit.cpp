#include "ragforge/fit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ragforge/common.hpp"

namespace ragforge {

void FitConfig::validate() const {
  if (steps == 0 || batch_size < 2) throw ConfigError("fit needs steps > 0 and batch_size >= 2");
  if (query_crop_min == 0 || query_crop_min > query_crop_max) throw ConfigError("invalid query crop range");
  if (doc_crop_min == 0 || doc_crop_min > doc_crop_max) throw ConfigError("invalid doc crop range");
  if (!(learning_rate > 0.0) || weight_decay < 0.0 || max_row_norm < 0.0) throw ConfigError("invalid fit learning rate or weight decay");
}

namespace {

struct Adam {
  std::vector<double> m, v;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::size_t t = 0;

  explicit Adam(std::size_t n) : m(n, 0.0), v(n, 0.0) {}

  void step(std::vector<double>& w, const std::vector<double>& g, double lr, double decay) {
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      w[i] -= lr * ((m[i] / c1) / (std::sqrt(v[i] / c2) + eps) + decay * w[i]);
    }
  }
};

std::span<const TokenId> crop(const std::vector<TokenId>& ids, std::size_t lo, std::size_t hi, Rng& rng) {
  const std::size_t want = lo + uniform_index(rng, hi - lo + 1);
  const std::size_t len = std::min(want, ids.size());
  const std::size_t start = uniform_index(rng, ids.size() - len + 1);
  return std::span<const TokenId>(ids).subspan(start, len);
}

}  // namespace

Encoder fit_encoder(const Vocabulary& vocab, std::span<const std::string> texts, const EncoderConfig& init,
                    const FitConfig& config, FitReport* report) {
  config.validate();
  if (init.vocab_size != vocab.size()) throw ConfigError("encoder vocab_size does not match vocabulary");
  std::vector<std::vector<TokenId>> docs;
  for (const auto& t : texts) {
    auto seq = tokenize(vocab, t);
    if (!seq.empty()) docs.push_back(std::move(seq.ids));
  }
  if (docs.size() < config.batch_size) throw DataError("fewer documents than the fit batch size");

  const Encoder start = Encoder::init(init);
  const std::size_t dim = init.embed_dim;
  const std::size_t batch = config.batch_size;
  std::vector<double> table = start.embedding_table().data;
  std::vector<double> proj = start.projection().data;
  Adam table_opt(table.size()), proj_opt(proj.size());
  std::vector<double> g_table(table.size()), g_proj(proj.size());

  Rng rng(config.seed);
  std::vector<std::size_t> order(docs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::vector<std::span<const TokenId>> crops(2 * batch);
  std::vector<double> pooled(2 * batch * dim), emb(2 * batch * dim), d_emb(2 * batch * dim), d_pooled(dim);
  std::vector<double> scores(batch * batch);
  double first_loss = 0.0, tail_loss = 0.0;
  std::size_t tail_n = 0;

  for (std::size_t step = 0; step < config.steps; ++step) {
    // Partial Fisher-Yates: the first `batch` entries are a uniform sample without replacement.
    for (std::size_t i = 0; i < batch; ++i) std::swap(order[i], order[i + uniform_index(rng, order.size() - i)]);
    for (std::size_t i = 0; i < batch; ++i) {
      const auto& ids = docs[order[i]];
      crops[i] = crop(ids, config.query_crop_min, config.query_crop_max, rng);
      crops[batch + i] = crop(ids, config.doc_crop_min, config.doc_crop_max, rng);
    }
    for (std::size_t c = 0; c < 2 * batch; ++c) {
      double* m = &pooled[c * dim];
      std::fill(m, m + dim, 0.0);
      for (TokenId id : crops[c]) {
        const double* row = &table[static_cast<std::size_t>(id) * dim];
        for (std::size_t d = 0; d < dim; ++d) m[d] += row[d];
      }
      const double inv = 1.0 / static_cast<double>(crops[c].size());
      for (std::size_t d = 0; d < dim; ++d) m[d] *= inv;
      double* e = &emb[c * dim];
      for (std::size_t r = 0; r < dim; ++r) {
        double acc = 0.0;
        for (std::size_t d = 0; d < dim; ++d) acc += proj[r * dim + d] * m[d];
        e[r] = acc;
      }
    }

    double loss = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
      double mx = -INFINITY;
      for (std::size_t j = 0; j < batch; ++j) {
        double s = 0.0;
        for (std::size_t d = 0; d < dim; ++d) s += emb[i * dim + d] * emb[(batch + j) * dim + d];
        scores[i * batch + j] = s;
        mx = std::max(mx, s);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < batch; ++j) z += std::exp(scores[i * batch + j] - mx);
      loss += -(scores[i * batch + i] - mx - std::log(z));
      for (std::size_t j = 0; j < batch; ++j) {
        const double p = std::exp(scores[i * batch + j] - mx) / z;
        scores[i * batch + j] = (p - (i == j ? 1.0 : 0.0)) / static_cast<double>(batch);
      }
    }
    loss /= static_cast<double>(batch);
    if (step == 0) first_loss = loss;
    if (step + 50 >= config.steps) {
      tail_loss += loss;
      ++tail_n;
    }

    std::fill(d_emb.begin(), d_emb.end(), 0.0);
    for (std::size_t i = 0; i < batch; ++i) {
      for (std::size_t j = 0; j < batch; ++j) {
        const double g = scores[i * batch + j];
        for (std::size_t d = 0; d < dim; ++d) {
          d_emb[i * dim + d] += g * emb[(batch + j) * dim + d];
          d_emb[(batch + j) * dim + d] += g * emb[i * dim + d];
        }
      }
    }
    std::fill(g_table.begin(), g_table.end(), 0.0);
    std::fill(g_proj.begin(), g_proj.end(), 0.0);
    for (std::size_t c = 0; c < 2 * batch; ++c) {
      const double* de = &d_emb[c * dim];
      const double* m = &pooled[c * dim];
      for (std::size_t r = 0; r < dim; ++r) {
        for (std::size_t d = 0; d < dim; ++d) g_proj[r * dim + d] += de[r] * m[d];
      }
      if (!init.use_projection) {
        std::copy(de, de + dim, d_pooled.begin());
      } else {
        for (std::size_t d = 0; d < dim; ++d) {
          double acc = 0.0;
          for (std::size_t r = 0; r < dim; ++r) acc += proj[r * dim + d] * de[r];
          d_pooled[d] = acc;
        }
      }
      const double inv = 1.0 / static_cast<double>(crops[c].size());
      for (TokenId id : crops[c]) {
        double* g = &g_table[static_cast<std::size_t>(id) * dim];
        for (std::size_t d = 0; d < dim; ++d) g[d] += d_pooled[d] * inv;
      }
    }
    table_opt.step(table, g_table, config.learning_rate, config.weight_decay);
    if (init.use_projection) proj_opt.step(proj, g_proj, config.learning_rate, config.weight_decay);
    if (config.max_row_norm > 0.0) {
      for (std::size_t v = 0; v < init.vocab_size; ++v) {
        double* row = &table[v * dim];
        double n2 = 0.0;
        for (std::size_t d = 0; d < dim; ++d) n2 += row[d] * row[d];
        const double n = std::sqrt(n2);
        if (n > config.max_row_norm) {
          for (std::size_t d = 0; d < dim; ++d) row[d] *= config.max_row_norm / n;
        }
      }
    }
  }

  if (report) {
    report->initial_loss = first_loss;
    report->final_loss = tail_loss / static_cast<double>(std::max<std::size_t>(tail_n, 1));
  }
  Matrix t(init.vocab_size, dim), p(dim, dim);
  t.data = std::move(table);
  p.data = std::move(proj);
  return Encoder::from_weights(init, std::move(t), std::move(p));
}

}  // namespace ragforge
