#include "ragforge/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <mutex>

#include "json.hpp"
#include "ragforge/common.hpp"

namespace ragforge {

using ojson = nlohmann::ordered_json;

double asr_retrieval(const KnowledgeBase& kb, const Retriever& retriever, std::span<const Query> queries,
                     std::size_t k) {
  if (queries.empty()) throw Error("empty query set");
  if (kb.encoder_fingerprint() != retriever.fingerprint()) throw DataError("index/encoder mismatch");
  std::vector<char> hit(queries.size(), 0);
  parallel_for(queries.size(), [&](std::size_t i) {
    hit[i] = retrieve_top_k(kb, retriever.embed_text(queries[i].text), k).contains_poison() ? 1 : 0;
  });
  const auto hits = static_cast<std::size_t>(std::count(hit.begin(), hit.end(), 1));
  return static_cast<double>(hits) / static_cast<double>(queries.size());
}

namespace {

struct QueryOutcome {
  bool done = false;
  std::size_t topic = 0;
  std::vector<char> hit_r, hit_t;  // per k
};

std::vector<AttackMetrics> aggregate(const std::vector<QueryOutcome>& outcomes, std::span<const std::size_t> ks,
                                     bool per_topic) {
  std::vector<AttackMetrics> out(ks.size());
  for (std::size_t ki = 0; ki < ks.size(); ++ki) {
    auto& m = out[ki];
    m.k = ks[ki];
    for (const auto& o : outcomes) {
      if (!o.done) continue;
      ++m.n_queries;
      m.hits_r += o.hit_r[ki];
      m.hits_t += o.hit_t[ki];
      if (per_topic) {
        auto& t = m.per_topic[o.topic];
        ++t.n;
        t.hits_r += o.hit_r[ki];
        t.hits_t += o.hit_t[ki];
      }
    }
    if (m.n_queries > 0) {
      m.asr_r = static_cast<double>(m.hits_r) / static_cast<double>(m.n_queries);
      m.asr_t = static_cast<double>(m.hits_t) / static_cast<double>(m.n_queries);
    }
    for (auto& [id, t] : m.per_topic) {
      t.asr_r = static_cast<double>(t.hits_r) / static_cast<double>(t.n);
      t.asr_t = static_cast<double>(t.hits_t) / static_cast<double>(t.n);
    }
  }
  return out;
}

}  // namespace

std::vector<AttackMetrics> evaluate_attack(const KnowledgeBase& kb, const Retriever& retriever,
                                           std::span<const Query> queries, const EvalOptions& options) {
  if (queries.empty()) throw Error("empty query set");
  if (options.ks.empty()) throw ConfigError("retrieval depth list is empty");
  if (std::find(options.ks.begin(), options.ks.end(), std::size_t{0}) != options.ks.end()) {
    throw ConfigError("retrieval depth must be positive");
  }
  if (kb.encoder_fingerprint() != retriever.fingerprint()) throw DataError("index/encoder mismatch");

  MockGenerator fallback;
  Generator& generator = options.generator ? *options.generator : fallback;
  const KnowledgeBase index = options.defenses ? options.defenses->apply_index(kb) : kb;
  const std::size_t max_k = *std::max_element(options.ks.begin(), options.ks.end());

  std::vector<QueryOutcome> outcomes(queries.size());
  std::mutex failure_mu;
  std::optional<std::string> failure;
  std::atomic<bool> stop{false};

  parallel_for(queries.size(), [&](std::size_t i) {
    if (stop.load()) return;
    const Query& q = queries[i];
    QueryOutcome o;
    o.hit_r.assign(options.ks.size(), 0);
    o.hit_t.assign(options.ks.size(), 0);
    if (options.partition) o.topic = options.partition->assign(retriever.embed_text(q.text));
    const std::string text = options.defenses ? options.defenses->apply_query(q.qid, q.text).text : q.text;
    const RetrievalResult full = retrieve_top_k(index, retriever.embed_text(text), max_k);
    try {
      for (std::size_t ki = 0; ki < options.ks.size(); ++ki) {
        RetrievalResult r;
        r.ranked.assign(full.ranked.begin(),
                        full.ranked.begin() + static_cast<std::ptrdiff_t>(std::min(options.ks[ki], full.size())));
        if (options.defenses) r = options.defenses->apply_context(text, std::move(r));
        o.hit_r[ki] = r.contains_poison() ? 1 : 0;
        o.hit_t[ki] = detect_target(generator.generate(text, r.ranked), options.url) ? 1 : 0;
      }
    } catch (const Error& e) {
      std::lock_guard lock(failure_mu);
      if (!failure) failure = "generation failed for query " + q.qid + ": " + e.what();
      stop = true;
      return;
    }
    o.done = true;
    outcomes[i] = std::move(o);
  });

  auto metrics = aggregate(outcomes, options.ks, options.partition != nullptr);
  if (failure) throw EvaluationAborted(*failure, std::move(metrics));
  return metrics;
}

double asr_target(const KnowledgeBase& kb, const Retriever& retriever, std::span<const Query> queries, std::size_t k,
                  Generator& generator, std::string_view url, const DefensePipeline* defenses) {
  EvalOptions o;
  o.ks = {k};
  o.generator = &generator;
  o.url = std::string(url);
  o.defenses = defenses;
  return evaluate_attack(kb, retriever, queries, o).front().asr_t;
}

double transfer_eval(std::span<const Document> poison, const Retriever& victim, const KnowledgeBase& victim_kb,
                     std::span<const Query> queries, std::size_t k) {
  const KnowledgeBase injected = victim_kb.inject(victim, std::vector<Document>(poison.begin(), poison.end()));
  return asr_retrieval(injected, victim, queries, k);
}

std::string_view to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::poison_rate:
      return "poison_rate";
    case SweepAxis::url:
      return "url";
    case SweepAxis::k:
      return "k";
  }
  return "";
}

SweepAxis parse_sweep_axis(std::string_view name) {
  if (name == "poison_rate") return SweepAxis::poison_rate;
  if (name == "url") return SweepAxis::url;
  if (name == "k") return SweepAxis::k;
  throw ConfigError("unknown sweep axis: " + std::string(name));
}

SweepReport sweep(SweepAxis axis, std::span<const std::string> values,
                  const std::function<std::vector<AttackMetrics>(const std::string&)>& run_point) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  SweepReport report;
  report.axis = axis;
  for (const auto& v : values) {
    SweepPoint p;
    p.value = v;
    try {
      p.metrics = run_point(v);
    } catch (const Error& e) {
      p.error = e.what();
    }
    report.points.push_back(std::move(p));
  }
  return report;
}

ReportFormat parse_report_format(std::string_view name) {
  if (name == "json") return ReportFormat::json;
  if (name == "csv") return ReportFormat::csv;
  throw ConfigError("unknown report format: " + std::string(name));
}

namespace {

ojson counts_json(std::size_t n, std::size_t hits_r, std::size_t hits_t, double asr_r, double asr_t) {
  ojson j = ojson::object();
  j["asr_r"] = asr_r;
  j["asr_t"] = asr_t;
  j["n"] = n;
  j["hits_r"] = hits_r;
  j["hits_t"] = hits_t;
  return j;
}

ojson metrics_json(const std::vector<AttackMetrics>& metrics) {
  ojson j = ojson::object();
  for (const auto& m : metrics) {
    ojson e = counts_json(m.n_queries, m.hits_r, m.hits_t, m.asr_r, m.asr_t);
    ojson topics = ojson::object();
    for (const auto& [id, t] : m.per_topic) topics[std::to_string(id)] = counts_json(t.n, t.hits_r, t.hits_t, t.asr_r, t.asr_t);
    e["per_topic"] = std::move(topics);
    j[std::to_string(m.k)] = std::move(e);
  }
  return j;
}

std::vector<AttackMetrics> metrics_from_json(const ojson& j) {
  std::vector<AttackMetrics> out;
  for (auto it = j.begin(); it != j.end(); ++it) {
    AttackMetrics m;
    m.k = std::stoul(it.key());
    const auto& e = it.value();
    m.asr_r = e.at("asr_r").get<double>();
    m.asr_t = e.at("asr_t").get<double>();
    m.n_queries = e.at("n").get<std::size_t>();
    m.hits_r = e.at("hits_r").get<std::size_t>();
    m.hits_t = e.at("hits_t").get<std::size_t>();
    for (auto t = e.at("per_topic").begin(); t != e.at("per_topic").end(); ++t) {
      TopicMetrics tm;
      tm.asr_r = t.value().at("asr_r").get<double>();
      tm.asr_t = t.value().at("asr_t").get<double>();
      tm.n = t.value().at("n").get<std::size_t>();
      tm.hits_r = t.value().at("hits_r").get<std::size_t>();
      tm.hits_t = t.value().at("hits_t").get<std::size_t>();
      m.per_topic[std::stoul(t.key())] = tm;
    }
    out.push_back(std::move(m));
  }
  return out;
}

std::string fmt_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

void csv_rows(std::string& out, const std::string& run_id, const std::vector<AttackMetrics>& metrics) {
  for (const auto& m : metrics) {
    out += run_id + "," + std::to_string(m.k) + ",all," + fmt_double(m.asr_r) + "," + fmt_double(m.asr_t) + "," +
           std::to_string(m.n_queries) + "\n";
    for (const auto& [id, t] : m.per_topic) {
      out += run_id + "," + std::to_string(m.k) + "," + std::to_string(id) + "," + fmt_double(t.asr_r) + "," +
             fmt_double(t.asr_t) + "," + std::to_string(t.n) + "\n";
    }
  }
}

}  // namespace

std::string report_to_json(const Report& r) {
  ojson j = ojson::object();
  j["run_id"] = r.run_id;
  j["config_hash"] = r.config_hash;
  ojson seeds = ojson::object();
  for (const auto& [name, s] : r.seeds) seeds[name] = s;
  j["seeds"] = std::move(seeds);
  ojson enc = ojson::object();
  enc["source"] = r.source_encoder;
  if (r.victim_encoder) enc["victim"] = *r.victim_encoder;
  j["encoder"] = std::move(enc);
  j["k"] = r.ks;
  j["metrics"] = metrics_json(r.metrics);
  if (!r.defended.empty()) {
    ojson d = ojson::object();
    for (const auto& [stage, m] : r.defended) d[stage] = metrics_json(m);
    j["defenses"] = std::move(d);
  }
  if (r.sweep) {
    j["sweep_axis"] = std::string(to_string(r.sweep->axis));
    ojson points = ojson::array();
    for (const auto& p : r.sweep->points) {
      ojson e = ojson::object();
      e["value"] = p.value;
      e["metrics"] = metrics_json(p.metrics);
      if (p.error) e["error"] = *p.error;
      points.push_back(std::move(e));
    }
    j["sweep"] = std::move(points);
  }
  if (r.transfer) {
    ojson t = ojson::object();
    t["k"] = r.transfer->k;
    t["sources"] = r.transfer->sources;
    t["victims"] = r.transfer->victims;
    ojson cells = ojson::array();
    for (const auto& c : r.transfer->cells) {
      ojson e = ojson::object();
      e["source"] = c.source;
      e["victim"] = c.victim;
      e["asr_r"] = c.asr_r;
      cells.push_back(std::move(e));
    }
    t["cells"] = std::move(cells);
    j["transfer"] = std::move(t);
  }
  if (r.aborted) j["aborted"] = *r.aborted;
  return j.dump(2) + "\n";
}

Report report_from_json(std::string_view text) {
  try {
    const ojson j = ojson::parse(text);
    Report r;
    r.run_id = j.at("run_id").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    for (auto it = j.at("seeds").begin(); it != j.at("seeds").end(); ++it) r.seeds[it.key()] = it.value().get<std::uint64_t>();
    r.source_encoder = j.at("encoder").at("source").get<std::string>();
    if (j.at("encoder").contains("victim")) r.victim_encoder = j.at("encoder").at("victim").get<std::string>();
    r.ks = j.at("k").get<std::vector<std::size_t>>();
    r.metrics = metrics_from_json(j.at("metrics"));
    if (j.contains("defenses")) {
      for (auto it = j.at("defenses").begin(); it != j.at("defenses").end(); ++it) {
        r.defended[it.key()] = metrics_from_json(it.value());
      }
    }
    if (j.contains("sweep")) {
      SweepReport s;
      s.axis = parse_sweep_axis(j.at("sweep_axis").get<std::string>());
      for (const auto& e : j.at("sweep")) {
        SweepPoint p;
        p.value = e.at("value").get<std::string>();
        p.metrics = metrics_from_json(e.at("metrics"));
        if (e.contains("error")) p.error = e.at("error").get<std::string>();
        s.points.push_back(std::move(p));
      }
      r.sweep = std::move(s);
    }
    if (j.contains("transfer")) {
      TransferMatrix t;
      const auto& tj = j.at("transfer");
      t.k = tj.at("k").get<std::size_t>();
      t.sources = tj.at("sources").get<std::vector<std::string>>();
      t.victims = tj.at("victims").get<std::vector<std::string>>();
      for (const auto& c : tj.at("cells")) {
        t.cells.push_back({c.at("source").get<std::string>(), c.at("victim").get<std::string>(), c.at("asr_r").get<double>()});
      }
      r.transfer = std::move(t);
    }
    if (j.contains("aborted")) r.aborted = j.at("aborted").get<std::string>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed report: ") + e.what());
  }
}

std::string report_to_csv(const Report& r) {
  std::string out = "run_id,k,topic,asr_r,asr_t,n\n";
  csv_rows(out, r.run_id, r.metrics);
  for (const auto& [stage, m] : r.defended) csv_rows(out, r.run_id + "+" + stage, m);
  if (r.sweep) {
    for (const auto& p : r.sweep->points) {
      csv_rows(out, r.run_id + "@" + std::string(to_string(r.sweep->axis)) + "=" + p.value, p.metrics);
    }
  }
  return out;
}

void emit_report(const Report& report, ReportFormat format, const std::filesystem::path& path) {
  const std::string body = format == ReportFormat::json ? report_to_json(report) : report_to_csv(report);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write report " + path.string());
  f << body;
  if (!f.flush()) throw DataError("failed writing report " + path.string());
}

}  // namespace ragforge
