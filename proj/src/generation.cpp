#include "ragforge/generation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <regex>
#include <thread>
#include <unordered_map>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"
#include "json.hpp"
#include "ragforge/common.hpp"
#include "ragforge/text.hpp"

namespace ragforge {

using json = nlohmann::json;

namespace {

constexpr std::string_view kContextSlot = "[context]";
constexpr std::string_view kQuestionSlot = "[question]";

std::size_t count_of(std::string_view s, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = s.find(needle); pos != std::string_view::npos; pos = s.find(needle, pos + needle.size())) ++n;
  return n;
}

std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

// First sentence of a passage (through the first . ! or ? followed by whitespace or the end).
std::string first_sentence(std::string_view text) {
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if ((c == '.' || c == '!' || c == '?') && (i + 1 == text.size() || std::isspace(static_cast<unsigned char>(text[i + 1])))) {
      return std::string(text.substr(0, i + 1));
    }
  }
  return std::string(text);
}

}  // namespace

void PromptTemplate::validate() const {
  if (count_of(text, kContextSlot) != 1 || count_of(text, kQuestionSlot) != 1) {
    throw Error("prompt template must contain [context] and [question] exactly once");
  }
}

std::string render_prompt(const PromptTemplate& tmpl, std::string_view query, std::span<const std::string> contexts) {
  tmpl.validate();
  std::string context;
  for (const auto& c : contexts) {
    if (!context.empty()) context.push_back('\n');
    context += c;
  }
  // Replace the slot that occurs later first so earlier positions stay valid.
  std::string out = tmpl.text;
  const auto cpos = out.find(kContextSlot);
  const auto qpos = out.find(kQuestionSlot);
  if (cpos > qpos) {
    out.replace(cpos, kContextSlot.size(), context);
    out.replace(qpos, kQuestionSlot.size(), query);
  } else {
    out.replace(qpos, kQuestionSlot.size(), query);
    out.replace(cpos, kContextSlot.size(), context);
  }
  return out;
}

std::string render_prompt(const PromptTemplate& tmpl, std::string_view query, const RetrievalResult& retrieved) {
  std::vector<std::string> contexts;
  contexts.reserve(retrieved.ranked.size());
  for (const auto& h : retrieved.ranked) contexts.push_back(h.text);
  return render_prompt(tmpl, query, contexts);
}

void AttentionBudgetModel::validate() const {
  if (!(token_budget > 0.0)) throw ConfigError("token_budget must be positive");
  if (!(rank_decay > 0.0 && rank_decay <= 1.0)) throw ConfigError("rank_decay must be in (0, 1]");
  if (!(threshold > 0.0 && threshold <= 1.0)) throw ConfigError("threshold must be in (0, 1]");
  if (directive_keywords.empty()) throw ConfigError("directive_keywords must be nonempty");
}

AttentionBudgetModel AttentionBudgetModel::always_fire() {
  AttentionBudgetModel m;
  m.token_budget = std::numeric_limits<double>::infinity();
  m.rank_decay = 1.0;
  return m;
}

std::string normalize_url(std::string_view url) {
  std::string s = to_lower(url);
  for (std::string_view scheme : {"https://", "http://"}) {
    if (s.starts_with(scheme)) {
      s.erase(0, scheme.size());
      break;
    }
  }
  if (s.starts_with("www.")) s.erase(0, 4);
  while (!s.empty() && std::string_view(".,;:!?)]}\"'/").find(s.back()) != std::string_view::npos) s.pop_back();
  return s;
}

std::vector<std::string> extract_urls(std::string_view text) {
  static const std::regex kUrl(R"((?:https?://)?(?:[A-Za-z0-9-]+\.)+[A-Za-z]{2,}(?:/[^\s]*)?)",
                               std::regex::ECMAScript | std::regex::optimize);
  std::vector<std::string> out;
  const std::string s(text);
  for (auto it = std::sregex_iterator(s.begin(), s.end(), kUrl); it != std::sregex_iterator(); ++it) {
    out.push_back(it->str());
  }
  return out;
}

std::vector<Directive> find_directives(std::span<const RetrievalHit> docs, const AttentionBudgetModel& model) {
  std::vector<std::string> keywords;
  for (const auto& k : model.directive_keywords) keywords.push_back(to_lower(k));
  const double window = model.token_budget * static_cast<double>(docs.size());

  std::vector<Directive> out;
  std::size_t offset_base = 0;
  for (std::size_t r = 0; r < docs.size(); ++r) {
    const auto tokens = split_tokens(docs[r].text);
    const auto urls = extract_urls(docs[r].text);
    if (!urls.empty()) {
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (std::find(keywords.begin(), keywords.end(), tokens[i]) == keywords.end()) continue;
        Directive d;
        d.rank = r + 1;
        d.offset = offset_base + i;
        d.url = urls.front();
        const double dilution = std::isinf(window) ? 1.0 : std::max(0.0, 1.0 - static_cast<double>(d.offset) / window);
        d.influence = std::pow(model.rank_decay, static_cast<double>(r)) * dilution;
        out.push_back(std::move(d));
        break;
      }
    }
    offset_base += tokens.size();
  }
  return out;
}

GenerationOutput mock_generate(std::span<const RetrievalHit> docs, std::string_view /*query*/,
                               const AttentionBudgetModel& model) {
  const auto directives = find_directives(docs, model);
  GenerationOutput out;

  const RetrievalHit* source = nullptr;
  for (std::size_t r = 0; r < docs.size() && !source; ++r) {
    const bool has_directive = std::any_of(directives.begin(), directives.end(),
                                           [&](const Directive& d) { return d.rank == r + 1; });
    if (!has_directive) source = &docs[r];
  }
  if (source) {
    out.answer = first_sentence(source->text);
    out.used_doc_ids.push_back(source->doc_id);
  } else {
    out.answer = "I could not find the answer in the provided contexts.";
  }

  const Directive* strongest = nullptr;
  for (const auto& d : directives) {
    if (!strongest || d.influence > strongest->influence) strongest = &d;
  }
  if (strongest && strongest->influence >= model.threshold) {
    out.answer += " For more information, you can visit " + strongest->url + ".";
    out.used_doc_ids.push_back(docs[strongest->rank - 1].doc_id);
  }
  for (const auto& u : extract_urls(out.answer)) out.cited_urls.push_back(normalize_url(u));
  return out;
}

bool detect_target(const GenerationOutput& output, std::string_view url) {
  const std::string target = normalize_url(url);
  if (target.empty()) return false;
  for (const auto& u : extract_urls(output.answer)) {
    if (normalize_url(u) == target) return true;
  }
  return false;
}

std::string chat_request_body(const EndpointConfig& config, std::string_view prompt) {
  json messages = json::array();
  if (!config.system_message.empty()) messages.push_back({{"role", "system"}, {"content", config.system_message}});
  messages.push_back({{"role", "user"}, {"content", std::string(prompt)}});
  json body = json::object();
  body["model"] = config.model;
  body["messages"] = std::move(messages);
  body["temperature"] = 0;
  return body.dump();
}

std::string prompt_hash(std::string_view prompt) { return sha256_hex(prompt); }

namespace {

std::mutex g_fixture_mu;

std::optional<std::string> lookup_fixture(const std::filesystem::path& path, const std::string& hash) {
  if (path.empty()) return std::nullopt;
  std::lock_guard lock(g_fixture_mu);
  std::ifstream f(path);
  if (!f) return std::nullopt;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (rec.value("prompt_hash", "") == hash) return rec.at("answer").get<std::string>();
  }
  return std::nullopt;
}

void record_fixture(const std::filesystem::path& path, const std::string& hash, const std::string& answer) {
  std::lock_guard lock(g_fixture_mu);
  std::ofstream f(path, std::ios::app);
  if (!f) throw DataError("cannot append fixture " + path.string());
  json rec = json::object();
  rec["prompt_hash"] = hash;
  rec["answer"] = answer;
  f << rec.dump() << '\n';
}

std::string parse_chat_response(const std::string& body) {
  try {
    const json j = json::parse(body);
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed chat response: ") + e.what());
  }
}

GenerationOutput output_from_answer(std::string answer) {
  GenerationOutput out;
  out.answer = std::move(answer);
  for (const auto& u : extract_urls(out.answer)) out.cited_urls.push_back(normalize_url(u));
  return out;
}

}  // namespace

GenerationOutput http_generate(const EndpointConfig& config, std::string_view prompt) {
  const std::string hash = prompt_hash(prompt);
  if (auto cached = lookup_fixture(config.fixture_path, hash)) return output_from_answer(*cached);
  if (config.replay_only) throw HttpError("no recorded fixture for prompt " + hash, 0);
  if (config.base_url.empty()) throw ConfigError("generator base_url is empty");

  httplib::Client client(config.base_url);
  client.set_connection_timeout(config.timeout);
  client.set_read_timeout(config.timeout);
  httplib::Headers headers;
  if (const char* key = std::getenv(config.api_key_env.c_str()); key && *key) {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  const std::string body = chat_request_body(config, prompt);

  int last_status = 0;
  std::string last_error;
  const int attempts = 1 + std::max(0, config.max_retries);
  for (int attempt = 0; attempt < attempts; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(config.backoff * (1LL << (attempt - 1)));
    auto res = client.Post(config.path, headers, body, "application/json");
    if (!res) {
      last_status = 0;
      last_error = httplib::to_string(res.error());
      continue;
    }
    last_status = res->status;
    if (res->status == 200) {
      std::string answer = parse_chat_response(res->body);
      if (config.record && !config.fixture_path.empty()) record_fixture(config.fixture_path, hash, answer);
      return output_from_answer(std::move(answer));
    }
    last_error = "HTTP " + std::to_string(res->status);
    if (res->status != 429 && res->status < 500) break;
  }
  throw HttpError("chat completion failed: " + last_error, last_status);
}

std::vector<GenerationOutput> http_generate_batch(const EndpointConfig& config, std::span<const std::string> prompts) {
  std::vector<GenerationOutput> out(prompts.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  const std::size_t workers = std::max<std::size_t>(1, std::min(config.max_in_flight, prompts.size()));
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      for (std::size_t i = next++; i < prompts.size(); i = next++) {
        try {
          out[i] = http_generate(config, prompts[i]);
        } catch (...) {
          std::lock_guard lock(failure_mu);
          if (!failure) failure = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

GenerationOutput MockGenerator::generate(std::string_view query, std::span<const RetrievalHit> context) {
  return mock_generate(context, query, model_);
}

HttpGenerator::HttpGenerator(EndpointConfig config, PromptTemplate tmpl)
    : config_(std::move(config)), template_(std::move(tmpl)) {
  template_.validate();
}

GenerationOutput HttpGenerator::generate(std::string_view query, std::span<const RetrievalHit> context) {
  std::vector<std::string> texts;
  for (const auto& h : context) texts.push_back(h.text);
  GenerationOutput out = http_generate(config_, render_prompt(template_, query, texts));
  for (const auto& h : context) out.used_doc_ids.push_back(h.doc_id);
  return out;
}

}  // namespace ragforge
