#include "ragforge/encoder.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ragforge/common.hpp"

namespace ragforge {

namespace {

constexpr char kMagic[8] = {'R', 'F', 'E', 'N', 'C', '0', '0', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes little-endian hosts");

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(std::string_view& in) {
  if (in.size() < sizeof(T)) throw DataError("truncated encoder checkpoint");
  T value;
  std::memcpy(&value, in.data(), sizeof(T));
  in.remove_prefix(sizeof(T));
  return value;
}

void validate(const EncoderConfig& c) {
  if (c.vocab_size < 2) throw Error("encoder vocab_size must be at least 2");
  if (c.embed_dim < 2) throw Error("encoder embed_dim must be at least 2");
  if (!(c.init_scale > 0.0) || !std::isfinite(c.init_scale)) throw Error("encoder init_scale must be positive");
}

Matrix identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
  return m;
}

}  // namespace

Encoder::Encoder(EncoderConfig config, Matrix table, Matrix projection)
    : config_(config), table_(std::move(table)), projection_(std::move(projection)) {
  fingerprint_ = sha256_hex(serialize());
}

Encoder Encoder::init(const EncoderConfig& config) {
  validate(config);
  Rng rng(config.init_seed);
  const double s = config.init_scale;
  Matrix table(config.vocab_size, config.embed_dim);
  for (double& w : table.data) w = s * (2.0 * uniform01(rng) - 1.0);
  Matrix projection;
  if (config.use_projection) {
    projection = Matrix(config.embed_dim, config.embed_dim);
    for (double& w : projection.data) w = s * (2.0 * uniform01(rng) - 1.0);
  } else {
    projection = identity(config.embed_dim);
  }
  return Encoder(config, std::move(table), std::move(projection));
}

Encoder Encoder::from_weights(const EncoderConfig& config, Matrix embedding_table, Matrix projection) {
  validate(config);
  if (embedding_table.rows != config.vocab_size || embedding_table.cols != config.embed_dim) {
    throw Error("embedding table shape does not match encoder config");
  }
  if (projection.rows != config.embed_dim || projection.cols != config.embed_dim) {
    throw Error("projection shape does not match encoder config");
  }
  if (!config.use_projection && projection != identity(config.embed_dim)) {
    throw Error("projection must be the identity when use_projection is false");
  }
  for (double w : embedding_table.data) {
    if (!std::isfinite(w)) throw Error("non-finite encoder weight");
  }
  for (double w : projection.data) {
    if (!std::isfinite(w)) throw Error("non-finite encoder weight");
  }
  return Encoder(config, std::move(embedding_table), std::move(projection));
}

void Encoder::pooled_sum(const TokenSequence& seq, std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
  for (TokenId id : seq.ids) {
    if (id >= config_.vocab_size) throw Error("invalid token id");
    auto r = table_.row(id);
    for (std::size_t k = 0; k < r.size(); ++k) out[k] += r[k];
  }
}

Embedding Encoder::project(std::span<const double> v) const {
  if (!config_.use_projection) return Embedding(v.begin(), v.end());
  const std::size_t d = dim();
  Embedding out(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    auto r = projection_.row(i);
    double acc = 0.0;
    for (std::size_t k = 0; k < d; ++k) acc += r[k] * v[k];
    out[i] = acc;
  }
  return out;
}

Embedding Encoder::project_transposed(std::span<const double> v) const {
  if (!config_.use_projection) return Embedding(v.begin(), v.end());
  const std::size_t d = dim();
  Embedding out(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    auto r = projection_.row(i);
    for (std::size_t k = 0; k < d; ++k) out[k] += r[k] * v[i];
  }
  return out;
}

Embedding Encoder::embed(const TokenSequence& seq) const {
  if (seq.empty()) throw Error("cannot embed empty text");
  Embedding mean(dim());
  pooled_sum(seq, mean);
  const double n = static_cast<double>(seq.length());
  for (double& x : mean) x /= n;
  return project(mean);
}

std::string Encoder::serialize() const {
  std::string out;
  out.reserve(64 + 8 * (table_.data.size() + projection_.data.size()));
  out.append(kMagic, sizeof(kMagic));
  put<std::uint64_t>(out, config_.vocab_size);
  put<std::uint64_t>(out, config_.embed_dim);
  put<std::uint8_t>(out, config_.use_projection ? 1 : 0);
  put<std::uint64_t>(out, config_.init_seed);
  put<double>(out, config_.init_scale);
  for (double w : table_.data) put<double>(out, w);
  for (double w : projection_.data) put<double>(out, w);
  return out;
}

Encoder Encoder::deserialize(std::string_view in) {
  if (in.size() < sizeof(kMagic) || std::memcmp(in.data(), kMagic, sizeof(kMagic)) != 0) {
    throw DataError("not an encoder checkpoint");
  }
  in.remove_prefix(sizeof(kMagic));
  EncoderConfig c;
  c.vocab_size = take<std::uint64_t>(in);
  c.embed_dim = take<std::uint64_t>(in);
  c.use_projection = take<std::uint8_t>(in) != 0;
  c.init_seed = take<std::uint64_t>(in);
  c.init_scale = take<double>(in);
  if (c.vocab_size > (std::size_t{1} << 28) || c.embed_dim > (std::size_t{1} << 16)) {
    throw DataError("implausible encoder checkpoint dimensions");
  }
  Matrix table(c.vocab_size, c.embed_dim);
  for (double& w : table.data) w = take<double>(in);
  Matrix projection(c.embed_dim, c.embed_dim);
  for (double& w : projection.data) w = take<double>(in);
  if (!in.empty()) throw DataError("trailing bytes in encoder checkpoint");
  return from_weights(c, std::move(table), std::move(projection));
}

void Encoder::save(const std::filesystem::path& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  const std::string bytes = serialize();
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("failed writing " + path.string());
}

Encoder Encoder::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize(ss.str());
}

double similarity(std::span<const double> q, std::span<const double> d) {
  if (q.size() != d.size()) throw Error("embedding dimension mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) acc += q[i] * d[i];
  return acc;
}

TokenGradientMatrix suffix_token_gradients(const Encoder& encoder, const TokenSequence& fixed_prefix,
                                           const TokenSequence& suffix, std::span<const TokenSequence> queries) {
  if (suffix.empty()) throw Error("empty suffix");
  if (queries.empty()) throw Error("empty query batch");
  for (TokenId id : suffix.ids) {
    if (id >= encoder.vocab_size()) throw Error("invalid token id");
  }
  const std::size_t d = encoder.dim();

  // dL/d(onehot_j[v]) = -(1/(|S| n)) * E_v . (P^T sum_q e_q), the same for every position j.
  Embedding query_sum(d, 0.0);
  for (const auto& q : queries) {
    const Embedding e = encoder.embed(q);
    for (std::size_t k = 0; k < d; ++k) query_sum[k] += e[k];
  }
  const Embedding upstream = encoder.project_transposed(query_sum);
  const double n_total = static_cast<double>(fixed_prefix.length() + suffix.length());
  const double scale = -1.0 / (static_cast<double>(queries.size()) * n_total);

  const std::size_t v_size = encoder.vocab_size();
  TokenGradientMatrix grad(suffix.length(), v_size);
  auto first = grad.row(0);
  const Matrix& table = encoder.embedding_table();
  for (std::size_t v = 0; v < v_size; ++v) first[v] = scale * similarity(table.row(v), upstream);
  for (std::size_t j = 1; j < suffix.length(); ++j) {
    auto r = grad.row(j);
    std::copy(first.begin(), first.end(), r.begin());
  }
  return grad;
}

Retriever::Retriever(std::shared_ptr<const Vocabulary> v, std::shared_ptr<const Encoder> e)
    : vocab(std::move(v)), encoder(std::move(e)) {
  if (!vocab || !encoder) throw Error("retriever requires a vocabulary and an encoder");
  if (vocab->size() != encoder->vocab_size()) throw Error("vocabulary size does not match encoder");
}

Embedding Retriever::embed_text(std::string_view text) const { return encoder->embed(tokenize(*vocab, text)); }

}  // namespace ragforge
