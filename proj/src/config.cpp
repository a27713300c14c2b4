#include "ragforge/config.hpp"

#include <set>

#include "json.hpp"
#include "ragforge/common.hpp"
#include "ragforge/eval.hpp"
#include "ragforge/io.hpp"

namespace ragforge {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

std::string_view style_name(PrefixStyle s) {
  switch (s) {
    case PrefixStyle::poisoncraft:
      return "poisoncraft";
    case PrefixStyle::corpus_poisoning:
      return "corpus-poisoning";
    case PrefixStyle::poisonedrag:
      return "poisonedrag";
  }
  return "poisoncraft";
}

std::string_view scorer_name(RerankScorer s) { return s == RerankScorer::lexical ? "lexical" : "cross"; }
std::string_view provider_name(ParaphraseProvider p) { return p == ParaphraseProvider::builtin ? "builtin" : "external"; }

StopwordPolicy parse_stopwords(std::string_view s) {
  if (s == "keep") return StopwordPolicy::keep;
  if (s == "drop") return StopwordPolicy::drop;
  throw ConfigError("attack.stopwords must be keep or drop");
}

// A JSON object whose keys must all be consumed.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError((path_.empty() ? "config" : path_) + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("bad value for " + name(key));
    }
  }

  template <typename T>
  void get(const char* key, std::optional<T>& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    if (j_.at(key).is_null()) {
      out.reset();
      return;
    }
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("bad value for " + name(key));
    }
  }

  void get_path(const char* key, std::filesystem::path& out) {
    std::string s = out.string();
    get(key, s);
    out = s;
  }

  template <typename Fn>
  void section(const char* key, Fn&& fn) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    Section sub(j_.at(key), name(key));
    fn(sub);
    sub.finish();
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown config key: " + name(it.key().c_str()));
    }
  }

  std::string name(const char* key) const { return path_.empty() ? std::string(key) : path_ + "." + key; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

InjectPrefix RunConfig::AttackSection::inject() const {
  InjectPrefix p;
  p.template_text = prefix_template ? *prefix_template : std::string(ragforge::prefix_template(prefix_style));
  p.url = url;
  return p;
}

std::filesystem::path RunConfig::resolve(const std::filesystem::path& p) const {
  if (p.empty() || p.is_absolute() || base_dir.empty()) return p;
  return (base_dir / p).lexically_normal();
}

void RunConfig::validate() const {
  if (paths.corpus.empty()) throw ConfigError("paths.corpus is required");
  if (paths.queries.empty()) throw ConfigError("paths.queries is required");
  if (vocab_max_size < 2) throw ConfigError("vocab.max_size must be at least 2");
  if (encoder.embed_dim < 2) throw ConfigError("encoder.embed_dim must be at least 2");
  if (!(encoder.init_scale > 0.0)) throw ConfigError("encoder.init_scale must be positive");
  if (encoder.fit) encoder.fit_config.validate();
  if (!(shadow.fraction > 0.0 && shadow.fraction < 1.0)) throw ConfigError("shadow.fraction must be in (0, 1)");
  if (shadow.topics == 0) throw ConfigError("shadow.topics must be positive");
  if (!(attack.poison_rate_percent > 0.0 && attack.poison_rate_percent < 100.0)) {
    throw ConfigError("attack.poison_rate_percent must be in (0, 100)");
  }
  if (attack.freq_tokens == 0) throw ConfigError("attack.freq_tokens must be positive");
  try {
    (void)attack.inject().render();
  } catch (const Error& e) {
    throw ConfigError(std::string("attack prefix: ") + e.what());
  }
  gcg.validate();
  if (k.empty()) throw ConfigError("retrieval.k must be nonempty");
  for (auto x : k) {
    if (x == 0) throw ConfigError("retrieval.k values must be positive");
  }
  if (generator.kind != "mock" && generator.kind != "http") throw ConfigError("generator.kind must be mock or http");
  generator.mock.validate();
  if (generator.kind == "http" && generator.http.base_url.empty() && generator.http.fixture_path.empty()) {
    throw ConfigError("generator.http needs base_url or fixture_path");
  }
  PromptTemplate{generator.prompt_template}.validate();
  if (defense.pd.enabled && defense.pd.variants == 0) throw ConfigError("defense.pd.variants must be positive");
  if (defense.rf.enabled && defense.rf.keep == 0) throw ConfigError("defense.rf.keep must be positive");
  if (transfer.k == 0) throw ConfigError("transfer.k must be positive");
  if (transfer.encoder_seeds.empty() && transfer.encoder_count < 2) {
    throw ConfigError("transfer needs at least two encoders");
  }
  try {
    (void)parse_sweep_axis(sweep.axis);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

RunConfig parse_config(std::string_view json_text, const std::filesystem::path& base_dir) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  c.base_dir = base_dir;
  Section top(root, "");
  top.get("seed", c.seed);
  top.get("threads", c.threads);
  top.section("paths", [&](Section& s) {
    s.get_path("corpus", c.paths.corpus);
    s.get_path("queries", c.paths.queries);
    s.get_path("topic_labels", c.paths.topic_labels);
    s.get_path("synonyms", c.paths.synonyms);
    s.get_path("output_dir", c.paths.output_dir);
  });
  top.section("vocab", [&](Section& s) { s.get("max_size", c.vocab_max_size); });
  top.section("encoder", [&](Section& s) {
    s.get("embed_dim", c.encoder.embed_dim);
    s.get("use_projection", c.encoder.use_projection);
    s.get("init_scale", c.encoder.init_scale);
    s.get("seed", c.encoder.seed);
    s.section("fit", [&](Section& f) {
      auto& fc = c.encoder.fit_config;
      f.get("enabled", c.encoder.fit);
      f.get("steps", fc.steps);
      f.get("batch_size", fc.batch_size);
      f.get("query_crop_min", fc.query_crop_min);
      f.get("query_crop_max", fc.query_crop_max);
      f.get("doc_crop_min", fc.doc_crop_min);
      f.get("doc_crop_max", fc.doc_crop_max);
      f.get("learning_rate", fc.learning_rate);
      f.get("weight_decay", fc.weight_decay);
      f.get("max_row_norm", fc.max_row_norm);
    });
  });
  top.section("shadow", [&](Section& s) {
    s.get("fraction", c.shadow.fraction);
    s.get("topics", c.shadow.topics);
  });
  top.section("attack", [&](Section& s) {
    s.get("poison_rate_percent", c.attack.poison_rate_percent);
    s.get("freq_tokens", c.attack.freq_tokens);
    std::string stop = c.attack.stopwords == StopwordPolicy::keep ? "keep" : "drop";
    s.get("stopwords", stop);
    c.attack.stopwords = parse_stopwords(stop);
    s.get("url", c.attack.url);
    std::string style(style_name(c.attack.prefix_style));
    s.get("prefix_style", style);
    try {
      c.attack.prefix_style = parse_prefix_style(style);
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
    s.get("prefix_template", c.attack.prefix_template);
    s.get("include_freq", c.attack.include_freq);
    s.get("include_adv", c.attack.include_adv);
  });
  top.section("gcg", [&](Section& s) {
    s.get("max_iters", c.gcg.max_iters);
    s.get("batch_size", c.gcg.batch_size);
    s.get("top_positions", c.gcg.top_positions);
    s.get("candidates_per_position", c.gcg.candidates_per_position);
    s.get("keep_variants", c.gcg.keep_variants);
    s.get("init_lengths", c.gcg.init_lengths);
    s.get("init_token", c.gcg.init_token);
    s.get("max_stalls", c.gcg.max_stalls);
  });
  top.section("retrieval", [&](Section& s) { s.get("k", c.k); });
  top.section("generator", [&](Section& s) {
    s.get("kind", c.generator.kind);
    s.get("prompt_template", c.generator.prompt_template);
    s.section("mock", [&](Section& m) {
      m.get("token_budget", c.generator.mock.token_budget);
      m.get("rank_decay", c.generator.mock.rank_decay);
      m.get("threshold", c.generator.mock.threshold);
      m.get("directive_keywords", c.generator.mock.directive_keywords);
    });
    s.section("http", [&](Section& h) {
      auto& e = c.generator.http;
      h.get("base_url", e.base_url);
      h.get("path", e.path);
      h.get("model", e.model);
      h.get("api_key_env", e.api_key_env);
      h.get("system_message", e.system_message);
      h.get("max_retries", e.max_retries);
      std::int64_t backoff = e.backoff.count(), timeout = e.timeout.count();
      h.get("backoff_ms", backoff);
      h.get("timeout_s", timeout);
      e.backoff = std::chrono::milliseconds(backoff);
      e.timeout = std::chrono::seconds(timeout);
      h.get("max_in_flight", e.max_in_flight);
      h.get_path("fixture_path", e.fixture_path);
      h.get("replay_only", e.replay_only);
      h.get("record", e.record);
    });
  });
  top.section("defense", [&](Section& s) {
    s.section("pd", [&](Section& d) {
      d.get("enabled", c.defense.pd.enabled);
      std::string provider(provider_name(c.defense.pd.provider));
      d.get("provider", provider);
      try {
        c.defense.pd.provider = parse_paraphrase_provider(provider);
      } catch (const Error& e) {
        throw ConfigError(e.what());
      }
      d.get("variants", c.defense.pd.variants);
    });
    s.section("dtf", [&](Section& d) {
      d.get("enabled", c.defense.dtf.enabled);
      d.get("raw", c.defense.dtf.raw);
    });
    s.section("rf", [&](Section& d) {
      d.get("enabled", c.defense.rf.enabled);
      d.get("keep", c.defense.rf.keep);
      std::string scorer(scorer_name(c.defense.rf.scorer));
      d.get("scorer", scorer);
      try {
        c.defense.rf.scorer = parse_rerank_scorer(scorer);
      } catch (const Error& e) {
        throw ConfigError(e.what());
      }
    });
  });
  top.section("transfer", [&](Section& s) {
    s.get("k", c.transfer.k);
    s.get("encoder_seeds", c.transfer.encoder_seeds);
    s.get("encoder_count", c.transfer.encoder_count);
  });
  top.section("sweep", [&](Section& s) {
    s.get("axis", c.sweep.axis);
    s.get("values", c.sweep.values);
  });
  top.finish();
  if (!c.generator.http.fixture_path.empty()) c.generator.http.fixture_path = c.resolve(c.generator.http.fixture_path);
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return parse_config(text, path.parent_path());
}

std::string config_to_json(const RunConfig& c) {
  ojson j = ojson::object();
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["paths"] = {{"corpus", c.paths.corpus.string()},
                {"queries", c.paths.queries.string()},
                {"topic_labels", c.paths.topic_labels.string()},
                {"synonyms", c.paths.synonyms.string()},
                {"output_dir", c.paths.output_dir.string()}};
  j["vocab"] = {{"max_size", c.vocab_max_size}};
  const auto& fc = c.encoder.fit_config;
  ojson fit = {{"enabled", c.encoder.fit},
               {"steps", fc.steps},
               {"batch_size", fc.batch_size},
               {"query_crop_min", fc.query_crop_min},
               {"query_crop_max", fc.query_crop_max},
               {"doc_crop_min", fc.doc_crop_min},
               {"doc_crop_max", fc.doc_crop_max},
               {"learning_rate", fc.learning_rate},
               {"weight_decay", fc.weight_decay},
               {"max_row_norm", fc.max_row_norm}};
  j["encoder"] = {{"embed_dim", c.encoder.embed_dim},
                  {"use_projection", c.encoder.use_projection},
                  {"init_scale", c.encoder.init_scale},
                  {"seed", c.encoder.seed ? ojson(*c.encoder.seed) : ojson(nullptr)},
                  {"fit", std::move(fit)}};
  j["shadow"] = {{"fraction", c.shadow.fraction}, {"topics", c.shadow.topics}};
  j["attack"] = {{"poison_rate_percent", c.attack.poison_rate_percent},
                 {"freq_tokens", c.attack.freq_tokens},
                 {"stopwords", c.attack.stopwords == StopwordPolicy::keep ? "keep" : "drop"},
                 {"url", c.attack.url},
                 {"prefix_style", std::string(style_name(c.attack.prefix_style))},
                 {"prefix_template", c.attack.prefix_template ? ojson(*c.attack.prefix_template) : ojson(nullptr)},
                 {"include_freq", c.attack.include_freq},
                 {"include_adv", c.attack.include_adv}};
  j["gcg"] = {{"max_iters", c.gcg.max_iters},
              {"batch_size", c.gcg.batch_size},
              {"top_positions", c.gcg.top_positions},
              {"candidates_per_position", c.gcg.candidates_per_position},
              {"keep_variants", c.gcg.keep_variants},
              {"init_lengths", c.gcg.init_lengths},
              {"init_token", c.gcg.init_token},
              {"max_stalls", c.gcg.max_stalls}};
  j["retrieval"] = {{"k", c.k}};
  const auto& h = c.generator.http;
  j["generator"] = {{"kind", c.generator.kind},
                    {"prompt_template", c.generator.prompt_template},
                    {"mock",
                     {{"token_budget", c.generator.mock.token_budget},
                      {"rank_decay", c.generator.mock.rank_decay},
                      {"threshold", c.generator.mock.threshold},
                      {"directive_keywords", c.generator.mock.directive_keywords}}},
                    {"http",
                     {{"base_url", h.base_url},
                      {"path", h.path},
                      {"model", h.model},
                      {"api_key_env", h.api_key_env},
                      {"system_message", h.system_message},
                      {"max_retries", h.max_retries},
                      {"backoff_ms", h.backoff.count()},
                      {"timeout_s", h.timeout.count()},
                      {"max_in_flight", h.max_in_flight},
                      {"fixture_path", h.fixture_path.string()},
                      {"replay_only", h.replay_only},
                      {"record", h.record}}}};
  j["defense"] = {{"pd",
                   {{"enabled", c.defense.pd.enabled},
                    {"provider", std::string(provider_name(c.defense.pd.provider))},
                    {"variants", c.defense.pd.variants}}},
                  {"dtf", {{"enabled", c.defense.dtf.enabled}, {"raw", c.defense.dtf.raw}}},
                  {"rf",
                   {{"enabled", c.defense.rf.enabled},
                    {"keep", c.defense.rf.keep},
                    {"scorer", std::string(scorer_name(c.defense.rf.scorer))}}}};
  j["transfer"] = {{"k", c.transfer.k},
                   {"encoder_seeds", c.transfer.encoder_seeds},
                   {"encoder_count", c.transfer.encoder_count}};
  j["sweep"] = {{"axis", c.sweep.axis}, {"values", c.sweep.values}};
  return j.dump(2) + "\n";
}

std::string config_hash(const RunConfig& config) {
  // Where artifacts land and how many workers run do not change results.
  RunConfig c = config;
  c.paths.output_dir.clear();
  c.threads = 0;
  return sha256_hex(config_to_json(c));
}

RunSeeds derive_seeds(const RunConfig& c) {
  RunSeeds s;
  s.encoder = c.encoder.seed ? *c.encoder.seed : derive_seed(c.seed, {1});
  s.fit = derive_seed(s.encoder, {2});
  s.split = derive_seed(c.seed, {3});
  s.partition = derive_seed(c.seed, {4});
  s.gcg = derive_seed(c.seed, {5});
  s.paraphrase = derive_seed(c.seed, {6});
  s.reranker = derive_seed(c.seed, {7});
  return s;
}

}  // namespace ragforge
