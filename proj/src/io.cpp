#include "ragforge/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "ragforge/common.hpp"

namespace ragforge {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write " + path.string());
    f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!f.flush()) throw DataError("failed writing " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

namespace {

template <typename Fn>
void for_each_jsonl(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      fn(json::parse(line));
    } catch (const json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

std::string string_field(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key) || !j.at(key).is_string()) {
    throw DataError(std::string("missing string field \"") + key + "\"");
  }
  return j.at(key).get<std::string>();
}

std::string jsonl(const std::vector<ojson>& rows) {
  std::string out;
  for (const auto& r : rows) out += r.dump() + "\n";
  return out;
}

}  // namespace

std::vector<Document> read_corpus(const std::filesystem::path& path) {
  std::vector<Document> docs;
  for_each_jsonl(path, [&](const json& j) {
    Document d;
    d.id = string_field(j, "id");
    d.text = string_field(j, "text");
    if (d.id.starts_with(kPoisonIdPrefix)) d.provenance = Provenance::poisoned;
    docs.push_back(std::move(d));
  });
  if (docs.empty()) throw DataError("empty corpus: " + path.string());
  return docs;
}

void write_corpus(const std::filesystem::path& path, std::span<const Document> docs) {
  std::vector<ojson> rows;
  for (const auto& d : docs) rows.push_back({{"id", d.id}, {"text", d.text}});
  write_file(path, jsonl(rows));
}

std::vector<Query> read_queries(const std::filesystem::path& path) {
  std::vector<Query> out;
  for_each_jsonl(path, [&](const json& j) { out.push_back({string_field(j, "qid"), string_field(j, "text")}); });
  if (out.empty()) throw DataError("empty query file: " + path.string());
  return out;
}

void write_queries(const std::filesystem::path& path, std::span<const Query> queries) {
  std::vector<ojson> rows;
  for (const auto& q : queries) rows.push_back({{"qid", q.qid}, {"text", q.text}});
  write_file(path, jsonl(rows));
}

std::vector<std::pair<std::string, int>> read_topic_labels(const std::filesystem::path& path) {
  std::vector<std::pair<std::string, int>> out;
  for_each_jsonl(path, [&](const json& j) {
    if (!j.contains("topic") || !j.at("topic").is_number_integer()) throw DataError("missing integer field \"topic\"");
    out.emplace_back(string_field(j, "qid"), j.at("topic").get<int>());
  });
  return out;
}

SynonymTable read_synonyms(const std::filesystem::path& path) {
  SynonymTable t;
  for_each_jsonl(path, [&](const json& j) {
    if (!j.contains("synonyms") || !j.at("synonyms").is_array()) throw DataError("missing array field \"synonyms\"");
    t.add(string_field(j, "word"), j.at("synonyms").get<std::vector<std::string>>());
  });
  return t;
}

void write_poison_set(const std::filesystem::path& path, const PoisonSet& set, const Vocabulary& vocab) {
  std::vector<ojson> rows;
  for (const auto& p : set.flatten()) {
    ojson recipe = ojson::object();
    recipe["prefix"] = p.recipe.inject.render();
    recipe["freq"] = p.recipe.freq_tokens;
    recipe["suffix"] = detokenize(vocab, p.recipe.suffix);
    ojson row = ojson::object();
    row["id"] = p.doc.id;
    row["text"] = p.doc.text;
    row["topic"] = p.topic;
    row["loss"] = p.loss;
    row["recipe"] = std::move(recipe);
    rows.push_back(std::move(row));
  }
  write_file(path, jsonl(rows));
}

PoisonSet read_poison_set(const std::filesystem::path& path, const Vocabulary& vocab, std::string_view url) {
  PoisonSet set;
  for_each_jsonl(path, [&](const json& j) {
    PoisonDocument p;
    p.doc.id = string_field(j, "id");
    p.doc.text = string_field(j, "text");
    p.doc.provenance = Provenance::poisoned;
    if (!j.contains("topic") || !j.at("topic").is_number_unsigned()) throw DataError("missing field \"topic\"");
    if (!j.contains("loss") || !j.at("loss").is_number()) throw DataError("missing field \"loss\"");
    p.topic = j.at("topic").get<std::size_t>();
    p.loss = j.at("loss").get<double>();
    if (!j.contains("recipe") || !j.at("recipe").is_object()) throw DataError("missing object field \"recipe\"");
    const auto& r = j.at("recipe");
    std::string prefix = string_field(r, "prefix");
    const auto pos = prefix.find(url);
    if (url.empty() || pos == std::string::npos) throw DataError("prefix does not contain the target URL");
    prefix.replace(pos, url.size(), "{URL}");
    p.recipe.inject.template_text = std::move(prefix);
    p.recipe.inject.url = std::string(url);
    p.recipe.freq_tokens = r.at("freq").get<std::vector<std::string>>();
    p.recipe.suffix = tokenize(vocab, string_field(r, "suffix"));
    if (set.per_topic.size() <= p.topic) set.per_topic.resize(p.topic + 1);
    set.per_topic[p.topic].push_back(std::move(p));
  });
  return set;
}

void write_vocabulary(const std::filesystem::path& path, const Vocabulary& vocab) {
  ojson j = ojson::array();
  for (const auto& t : vocab.tokens()) j.push_back(t);
  write_file(path, j.dump() + "\n");
}

Vocabulary read_vocabulary(const std::filesystem::path& path) {
  try {
    return Vocabulary::from_tokens(json::parse(read_file(path)).get<std::vector<std::string>>());
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

namespace {

constexpr char kIndexMagic[8] = {'R', 'F', 'I', 'D', 'X', '0', '0', '1'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_str(std::string& out, std::string_view s) {
  put_u64(out, s.size());
  out.append(s);
}

struct Reader {
  std::string_view data;
  std::size_t pos = 0;

  void need(std::size_t n) {
    if (data.size() - pos < n) throw DataError("truncated index file");
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  std::string str() {
    const auto n = u64();
    need(n);
    std::string s(data.substr(pos, n));
    pos += n;
    return s;
  }
  double f64() { return std::bit_cast<double>(u64()); }
};

}  // namespace

void write_index(const std::filesystem::path& path, const KnowledgeBase& kb) {
  std::string out(kIndexMagic, sizeof kIndexMagic);
  put_str(out, kb.encoder_fingerprint());
  put_u64(out, kb.size());
  for (const auto& d : kb.documents()) {
    out.push_back(d.provenance == Provenance::poisoned ? 1 : 0);
    put_str(out, d.id);
    put_str(out, d.text);
  }
  const Matrix& m = kb.embeddings();
  put_u64(out, m.rows);
  put_u64(out, m.cols);
  for (double x : m.data) put_u64(out, std::bit_cast<std::uint64_t>(x));
  write_file(path, out);
}

KnowledgeBase read_index(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < sizeof kIndexMagic || std::memcmp(bytes.data(), kIndexMagic, sizeof kIndexMagic) != 0) {
    throw DataError(path.string() + ": not an index file");
  }
  Reader r{bytes, sizeof kIndexMagic};
  std::string fingerprint = r.str();
  const auto n = r.u64();
  std::vector<Document> docs;
  docs.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    r.need(1);
    const bool poisoned = bytes[r.pos++] != 0;
    Document d;
    d.id = r.str();
    d.text = r.str();
    d.provenance = poisoned ? Provenance::poisoned : Provenance::organic;
    docs.push_back(std::move(d));
  }
  const auto rows = r.u64();
  const auto cols = r.u64();
  if (rows != n) throw DataError(path.string() + ": row count does not match documents");
  Matrix m(rows, cols);
  r.need(rows * cols * 8);
  for (auto& x : m.data) x = r.f64();
  if (r.pos != bytes.size()) throw DataError(path.string() + ": trailing bytes");
  return KnowledgeBase::from_parts(std::move(docs), std::move(m), std::move(fingerprint));
}

std::string partition_to_json(const TopicPartition& partition, std::span<const Query> shadow) {
  ojson j = ojson::object();
  for (std::size_t t = 0; t < partition.members.size(); ++t) {
    ojson ids = ojson::array();
    for (auto i : partition.members[t]) ids.push_back(shadow[i].qid);
    j[std::to_string(t)] = std::move(ids);
  }
  return j.dump(2) + "\n";
}

}  // namespace ragforge
