#include "ragforge/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <map>
#include <unordered_map>

#include "json.hpp"
#include "ragforge/common.hpp"
#include "ragforge/fit.hpp"
#include "ragforge/io.hpp"

namespace ragforge {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

json parse_json_file(const std::filesystem::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

double parse_double(const std::string& s, const char* what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(std::string("bad ") + what + " value: " + s);
  }
}

std::size_t parse_size(const std::string& s, const char* what) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError(std::string("bad ") + what + " value: " + s);
  return v;
}

}  // namespace

std::string default_run_id(const RunConfig& config) { return "run-" + config_hash(config).substr(0, 12); }

Experiment::Experiment(RunConfig config, std::optional<std::filesystem::path> artifact_dir)
    : config_(std::move(config)), seeds_(derive_seeds(config_)), dir_(std::move(artifact_dir)) {
  config_.validate();
  if (config_.threads != 0) set_max_threads(config_.threads);
}

std::optional<std::filesystem::path> Experiment::artifact(std::string_view name) const {
  if (!dir_) return std::nullopt;
  return *dir_ / name;
}

void Experiment::log(std::string_view msg) const {
  if (log_) log_(msg);
}

const std::vector<Document>& Experiment::corpus() {
  if (!corpus_) corpus_ = read_corpus(config_.resolve(config_.paths.corpus));
  return *corpus_;
}

const std::vector<Query>& Experiment::queries() {
  if (!queries_) queries_ = read_queries(config_.resolve(config_.paths.queries));
  return *queries_;
}

std::shared_ptr<const Vocabulary> Experiment::vocab() {
  if (vocab_) return vocab_;
  const auto path = artifact("vocab.json");
  if (path && std::filesystem::exists(*path)) {
    vocab_ = std::make_shared<const Vocabulary>(read_vocabulary(*path));
    return vocab_;
  }
  std::vector<std::string> texts;
  for (const auto& d : corpus()) texts.push_back(d.text);
  for (const auto& q : queries()) texts.push_back(q.text);
  vocab_ = std::make_shared<const Vocabulary>(build_vocabulary(texts, config_.vocab_max_size));
  if (path) write_vocabulary(*path, *vocab_);
  return vocab_;
}

std::shared_ptr<const Retriever> Experiment::make_retriever(std::uint64_t encoder_seed) {
  EncoderConfig ec;
  ec.vocab_size = vocab()->size();
  ec.embed_dim = config_.encoder.embed_dim;
  ec.use_projection = config_.encoder.use_projection;
  ec.init_scale = config_.encoder.init_scale;
  ec.init_seed = encoder_seed;
  if (!config_.encoder.fit) {
    return std::make_shared<const Retriever>(vocab(), std::make_shared<const Encoder>(Encoder::init(ec)));
  }
  FitConfig fc = config_.encoder.fit_config;
  fc.seed = derive_seed(encoder_seed, {2});
  std::vector<std::string> texts;
  for (const auto& d : corpus()) texts.push_back(d.text);
  FitReport report;
  log("fitting encoder (seed " + std::to_string(encoder_seed) + ")");
  auto enc = fit_encoder(*vocab(), texts, ec, fc, &report);
  log("  contrastive loss " + std::to_string(report.initial_loss) + " -> " + std::to_string(report.final_loss));
  return std::make_shared<const Retriever>(vocab(), std::make_shared<const Encoder>(std::move(enc)));
}

std::shared_ptr<const Retriever> Experiment::retriever_from_checkpoint(const std::filesystem::path& path) {
  auto enc = std::make_shared<const Encoder>(Encoder::load(path));
  if (enc->vocab_size() != vocab()->size()) {
    throw DataError(path.string() + ": encoder vocabulary size " + std::to_string(enc->vocab_size()) +
                    " does not match vocabulary size " + std::to_string(vocab()->size()));
  }
  return std::make_shared<const Retriever>(vocab(), std::move(enc));
}

std::shared_ptr<const Retriever> Experiment::retriever() {
  if (retriever_) return retriever_;
  const auto path = artifact("encoder.bin");
  if (path && std::filesystem::exists(*path)) {
    retriever_ = retriever_from_checkpoint(*path);
    return retriever_;
  }
  retriever_ = make_retriever(seeds_.encoder);
  if (path) retriever_->encoder->save(*path);
  return retriever_;
}

const KnowledgeBase& Experiment::index() {
  if (index_) return *index_;
  const auto path = artifact("index.bin");
  if (path && std::filesystem::exists(*path)) {
    auto kb = read_index(*path);
    if (kb.encoder_fingerprint() != retriever()->fingerprint()) {
      throw DataError(path->string() + ": index/encoder mismatch (index was built with another encoder)");
    }
    index_ = std::move(kb);
    return *index_;
  }
  index_ = KnowledgeBase::build(*retriever(), corpus());
  if (path) write_index(*path, *index_);
  return *index_;
}

const QuerySplit& Experiment::split() {
  if (split_) return *split_;
  const auto shadow_path = artifact("shadow.jsonl");
  const auto eval_path = artifact("eval.jsonl");
  if (shadow_path && std::filesystem::exists(*shadow_path) && std::filesystem::exists(*eval_path)) {
    split_ = QuerySplit{read_queries(*shadow_path), read_queries(*eval_path)};
    return *split_;
  }
  auto s = split_shadow(queries(), config_.shadow.fraction, seeds_.split);
  if (s.shadow.empty() || s.eval.empty()) throw DataError("shadow split left an empty side; adjust shadow.fraction");
  if (shadow_path) {
    write_queries(*shadow_path, s.shadow);
    write_queries(*eval_path, s.eval);
  }
  split_ = std::move(s);
  return *split_;
}

std::vector<std::string> Experiment::shadow_texts() {
  std::vector<std::string> out;
  for (const auto& q : split().shadow) out.push_back(q.text);
  return out;
}

TopicPartition Experiment::partition_for(const Retriever& retriever) {
  const auto& shadow = split().shadow;
  if (config_.paths.topic_labels.empty()) {
    return partition_topics(retriever, shadow, config_.shadow.topics, seeds_.partition);
  }
  std::unordered_map<std::string, int> by_qid;
  for (auto& [qid, topic] : read_topic_labels(config_.resolve(config_.paths.topic_labels))) by_qid[qid] = topic;
  std::vector<int> labels;
  for (const auto& q : shadow) {
    auto it = by_qid.find(q.qid);
    if (it == by_qid.end()) throw DataError("no topic label for shadow query " + q.qid);
    labels.push_back(it->second);
  }
  return partition_from_labels(retriever, shadow, labels);
}

const TopicPartition& Experiment::partition() {
  if (partition_) return *partition_;
  const auto path = artifact("partition.json");
  const auto centroid_path = artifact("partition.centroids.json");
  if (path && std::filesystem::exists(*path) && std::filesystem::exists(*centroid_path)) {
    const auto& shadow = split().shadow;
    std::unordered_map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < shadow.size(); ++i) pos[shadow[i].qid] = i;
    const json j = parse_json_file(*path);
    const json c = parse_json_file(*centroid_path);
    TopicPartition p;
    try {
      p.centroids = c.get<std::vector<Embedding>>();
      p.members.resize(p.centroids.size());
      for (auto it = j.begin(); it != j.end(); ++it) {
        const auto t = parse_size(it.key(), "topic id");
        if (t >= p.members.size()) throw DataError("topic " + it.key() + " has no centroid");
        for (const auto& qid : it.value().get<std::vector<std::string>>()) {
          auto f = pos.find(qid);
          if (f == pos.end()) throw DataError("partition lists unknown shadow query " + qid);
          p.members[t].push_back(f->second);
        }
        std::sort(p.members[t].begin(), p.members[t].end());
      }
    } catch (const json::exception& e) {
      throw DataError(path->string() + ": " + e.what());
    } catch (const ConfigError& e) {
      throw DataError(path->string() + ": " + e.what());
    }
    partition_ = std::move(p);
    return *partition_;
  }
  partition_ = partition_for(*retriever());
  if (path) {
    write_file(*path, partition_to_json(*partition_, split().shadow));
    write_file(*centroid_path, ojson(partition_->centroids).dump() + "\n");
  }
  return *partition_;
}

const std::vector<std::string>& Experiment::anchors() {
  if (anchors_) return *anchors_;
  const auto path = artifact("anchors.json");
  if (path && std::filesystem::exists(*path)) {
    try {
      anchors_ = parse_json_file(*path).get<std::vector<std::string>>();
    } catch (const json::exception& e) {
      throw DataError(path->string() + ": " + e.what());
    }
    return *anchors_;
  }
  const auto texts = shadow_texts();
  anchors_ = top_frequent_tokens(*vocab(), texts, config_.attack.freq_tokens, config_.attack.stopwords);
  if (path) write_file(*path, ojson(*anchors_).dump() + "\n");
  return *anchors_;
}

namespace {

// n * p below one document means nothing to craft rather than an error.
BudgetAllocation budgets_or_zero(std::size_t n, double p, const TopicPartition& partition) {
  if (static_cast<double>(n) * p >= 1.0) return allocate_budgets(n, p, partition);
  BudgetAllocation b;
  const auto sizes = partition.sizes();
  std::size_t total = 0;
  for (auto s : sizes) total += s;
  for (auto s : sizes) {
    b.budgets.push_back(0);
    b.shares.push_back(total ? static_cast<double>(n) * p * static_cast<double>(s) / static_cast<double>(total) : 0.0);
  }
  return b;
}

}  // namespace

BudgetAllocation Experiment::budgets(std::optional<double> poison_rate_percent) {
  const double p = poison_rate_percent.value_or(config_.attack.poison_rate_percent) / 100.0;
  return budgets_or_zero(corpus().size(), p, partition());
}

PoisonSet Experiment::craft_with(const Retriever& retriever, const TopicPartition& partition,
                                 const CraftRequest& request) {
  const double p = request.poison_rate_percent.value_or(config_.attack.poison_rate_percent) / 100.0;
  const auto budget = budgets_or_zero(corpus().size(), p, partition);
  InjectPrefix inject = config_.attack.inject();
  if (request.url) inject.url = *request.url;
  const CraftOptions options =
      request.options.value_or(CraftOptions{config_.attack.include_freq, config_.attack.include_adv});
  GcgConfig gcg = config_.gcg;
  gcg.rng_seed = seeds_.gcg;
  if (budget.total == 0) log("warning: poison budget is 0; nothing to craft");
  return craft_poison_set(retriever, split().shadow, partition, budget, inject, anchors(), gcg, options);
}

PoisonSet Experiment::craft(const CraftRequest& request) { return craft_with(*retriever(), partition(), request); }

PoisonSet Experiment::poison_set() {
  const auto path = artifact("poison.jsonl");
  const auto meta_path = artifact("poison.meta.json");
  if (path && std::filesystem::exists(*path)) {
    if (std::filesystem::exists(*meta_path)) {
      const json meta = parse_json_file(*meta_path);
      const auto fp = meta.value("encoder", std::string());
      if (fp != retriever()->fingerprint()) {
        throw DataError(path->string() + ": encoder fingerprint mismatch (crafted against " + fp.substr(0, 12) +
                        ", index uses " + retriever()->fingerprint().substr(0, 12) + ")");
      }
    }
    return read_poison_set(*path, *vocab(), config_.attack.url);
  }
  auto set = craft();
  save_poison(set);
  return set;
}

void Experiment::save_poison(const PoisonSet& set) {
  const auto path = artifact("poison.jsonl");
  if (!path) return;
  const auto b = budgets();
  ojson bj = {{"total", b.total}, {"budgets", b.budgets}, {"shares", b.shares}};
  write_file(*artifact("budgets.json"), bj.dump(2) + "\n");
  write_poison_set(*path, set, *vocab());
  ojson meta = {{"encoder", retriever()->fingerprint()},
                {"url", config_.attack.url},
                {"poison_rate_percent", config_.attack.poison_rate_percent},
                {"include_freq", config_.attack.include_freq},
                {"include_adv", config_.attack.include_adv},
                {"size", set.size()}};
  write_file(*artifact("poison.meta.json"), meta.dump(2) + "\n");
}

KnowledgeBase Experiment::poisoned_index(const PoisonSet& poison) {
  return index().inject(*retriever(), poison.documents());
}

std::unique_ptr<Generator> Experiment::make_generator() const {
  if (config_.generator.kind == "http") {
    return std::make_unique<HttpGenerator>(config_.generator.http, PromptTemplate{config_.generator.prompt_template});
  }
  return std::make_unique<MockGenerator>(config_.generator.mock);
}

std::shared_ptr<const SynonymTable> Experiment::synonyms() {
  if (synonyms_) return synonyms_;
  if (config_.paths.synonyms.empty()) {
    synonyms_ = std::make_shared<const SynonymTable>(SynonymTable::builtin());
  } else {
    synonyms_ = std::make_shared<const SynonymTable>(read_synonyms(config_.resolve(config_.paths.synonyms)));
  }
  return synonyms_;
}

DefensePipeline Experiment::defense_pipeline(const DefenseConfig& config) {
  std::shared_ptr<const Retriever> cross;
  if (config.rf.enabled && config.rf.scorer == RerankScorer::cross) {
    if (!cross_) cross_ = make_retriever(seeds_.reranker);
    cross = cross_;
  }
  std::optional<EndpointConfig> endpoint;
  if (config.pd.enabled && config.pd.provider == ParaphraseProvider::external) endpoint = config_.generator.http;
  return DefensePipeline(config, seeds_.paraphrase, synonyms(), cross, endpoint);
}

std::vector<AttackMetrics> Experiment::measure(const PoisonSet& poison, const std::vector<std::size_t>& ks,
                                               const DefensePipeline* defenses, std::optional<std::string> url) {
  const auto kb = poisoned_index(poison);
  auto generator = make_generator();
  EvalOptions opt;
  opt.ks = ks;
  opt.generator = generator.get();
  opt.url = url.value_or(config_.attack.url);
  opt.defenses = defenses;
  opt.partition = &partition();
  return evaluate_attack(kb, *retriever(), split().eval, opt);
}

Report Experiment::base_report() {
  Report r;
  r.run_id = default_run_id(config_);
  r.config_hash = config_hash(config_);
  r.seeds = {{"run", config_.seed},           {"encoder", seeds_.encoder}, {"fit", seeds_.fit},
             {"split", seeds_.split},         {"partition", seeds_.partition}, {"gcg", seeds_.gcg},
             {"paraphrase", seeds_.paraphrase}, {"reranker", seeds_.reranker}};
  r.source_encoder = retriever()->fingerprint();
  r.ks = config_.k;
  return r;
}

Report Experiment::evaluate(const PoisonSet& poison) {
  Report r = base_report();
  try {
    r.metrics = measure(poison, config_.k);
  } catch (const EvaluationAborted& e) {
    r.metrics = e.partial();
    r.aborted = e.what();
    return r;
  }
  const auto stages = config_.defense.stages();
  std::vector<std::pair<std::string, DefenseConfig>> runs;
  for (const auto& s : stages) runs.emplace_back(s, config_.defense.only(s));
  if (stages.size() > 1) runs.emplace_back("all", config_.defense);
  for (const auto& [name, dc] : runs) {
    log("evaluating with defense " + name);
    const auto pipeline = defense_pipeline(dc);
    try {
      r.defended[name] = measure(poison, config_.k, &pipeline);
    } catch (const EvaluationAborted& e) {
      r.defended[name] = e.partial();
      r.aborted = e.what();
      return r;
    }
  }
  return r;
}

std::vector<std::uint64_t> Experiment::transfer_seeds() const {
  if (!config_.transfer.encoder_seeds.empty()) return config_.transfer.encoder_seeds;
  std::vector<std::uint64_t> out{seeds_.encoder};
  for (std::size_t i = 1; i < config_.transfer.encoder_count; ++i) out.push_back(derive_seed(config_.seed, {100, i}));
  return out;
}

TransferMatrix Experiment::transfer(const std::vector<std::shared_ptr<const Retriever>>& encoders) {
  if (encoders.empty()) throw ConfigError("transfer needs at least one encoder");
  TransferMatrix m;
  m.k = config_.transfer.k;
  std::vector<KnowledgeBase> kbs;
  for (const auto& e : encoders) {
    m.sources.push_back(e->fingerprint());
    m.victims.push_back(e->fingerprint());
    kbs.push_back(KnowledgeBase::build(*e, corpus()));
  }
  for (std::size_t s = 0; s < encoders.size(); ++s) {
    log("crafting against encoder " + std::to_string(s));
    const auto part = partition_for(*encoders[s]);
    const auto poison = craft_with(*encoders[s], part, {});
    const auto docs = poison.documents();
    for (std::size_t v = 0; v < encoders.size(); ++v) {
      const double a = transfer_eval(docs, *encoders[v], kbs[v], split().eval, m.k);
      m.cells.push_back({m.sources[s], m.victims[v], a});
    }
  }
  return m;
}

TransferMatrix Experiment::transfer() {
  std::vector<std::shared_ptr<const Retriever>> encoders;
  const auto seeds = transfer_seeds();
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    encoders.push_back(i == 0 && seeds[i] == seeds_.encoder ? retriever() : make_retriever(seeds[i]));
  }
  return transfer(encoders);
}

SweepReport Experiment::sweep() {
  const SweepAxis axis = parse_sweep_axis(config_.sweep.axis);
  if (config_.sweep.values.empty()) throw ConfigError("sweep.values is empty");
  std::optional<PoisonSet> base;
  return ragforge::sweep(axis, config_.sweep.values, [&](const std::string& value) {
    log("sweep " + std::string(to_string(axis)) + "=" + value);
    switch (axis) {
      case SweepAxis::poison_rate: {
        const double p = parse_double(value, "poison_rate");
        CraftRequest req;
        req.poison_rate_percent = p;
        return measure(craft(req), config_.k);
      }
      case SweepAxis::url:
        {
        CraftRequest req;
        req.url = value;
        return measure(craft(req), config_.k, nullptr, value);
      }
      case SweepAxis::k: {
        const auto k = parse_size(value, "k");
        if (!base) base = craft();
        return measure(*base, {k});
      }
    }
    throw ConfigError("unsupported sweep axis");
  });
}

}  // namespace ragforge
