// ragforge command-line driver.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ragforge/config.hpp"
#include "ragforge/eval.hpp"
#include "ragforge/io.hpp"
#include "ragforge/pipeline.hpp"

namespace fs = std::filesystem;
using namespace ragforge;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir;
  std::optional<double> poison_rate;
  std::vector<std::size_t> k;
  std::optional<std::size_t> topics;
  std::optional<std::string> url;
  std::optional<std::size_t> threads;
  std::optional<std::string> generator;
  std::vector<std::string> defense;
  bool dtf_raw = false;
  bool no_freq = false;
  bool no_adv = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "Run config (JSON)")->required();
  cmd->add_option("--seed", o.seed, "Global seed");
  cmd->add_option("--output-dir", o.output_dir, "Artifact directory");
  cmd->add_option("--poison-rate", o.poison_rate, "Poisoning rate in percent");
  cmd->add_option("--k", o.k, "Retrieval depths")->delimiter(',');
  cmd->add_option("--topics", o.topics, "Number of shadow topics");
  cmd->add_option("--url", o.url, "Target URL");
  cmd->add_option("--threads", o.threads, "Worker cap (0 = hardware)");
  cmd->add_option("--generator", o.generator, "mock or http");
  cmd->add_option("--defense", o.defense, "Enable defenses: dtf, pd, rf, none")->delimiter(',');
  cmd->add_flag("--dtf-raw", o.dtf_raw, "Hash raw text in DTF instead of normalized text");
  cmd->add_flag("--no-freq", o.no_freq, "Craft without the frequency run");
  cmd->add_flag("--no-adv", o.no_adv, "Craft without the optimized suffix");
}

RunConfig load(const Overrides& o, fs::path& out_dir) {
  RunConfig c = load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.poison_rate) c.attack.poison_rate_percent = *o.poison_rate;
  if (!o.k.empty()) c.k = o.k;
  if (o.topics) c.shadow.topics = *o.topics;
  if (o.url) c.attack.url = *o.url;
  if (o.threads) c.threads = *o.threads;
  if (o.generator) c.generator.kind = *o.generator;
  if (!o.defense.empty()) {
    c.defense.pd.enabled = c.defense.dtf.enabled = c.defense.rf.enabled = false;
    for (const auto& d : o.defense) {
      if (d == "pd") {
        c.defense.pd.enabled = true;
      } else if (d == "dtf") {
        c.defense.dtf.enabled = true;
      } else if (d == "rf") {
        c.defense.rf.enabled = true;
      } else if (d != "none") {
        throw ConfigError("unknown defense: " + d);
      }
    }
  }
  if (o.dtf_raw) c.defense.dtf.raw = true;
  if (o.no_freq) c.attack.include_freq = false;
  if (o.no_adv) c.attack.include_adv = false;
  if (o.output_dir) {
    c.paths.output_dir = *o.output_dir;
    out_dir = fs::absolute(*o.output_dir);
  } else {
    out_dir = c.resolve(c.paths.output_dir);
  }
  c.validate();
  return c;
}

void log_line(std::string_view msg) { std::cerr << msg << "\n"; }

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", x);
  return buf;
}

void print_metrics(const std::string& label, const std::vector<AttackMetrics>& metrics) {
  for (const auto& m : metrics) {
    std::cout << label << " k=" << m.k << " asr_r=" << fmt(m.asr_r) << " asr_t=" << fmt(m.asr_t) << " n=" << m.n_queries
              << "\n";
  }
}

int run(const std::string& which, const Overrides& o, const std::string& axis,
        const std::vector<std::string>& values, const std::vector<std::string>& encoders,
        const std::string& report_in, const std::string& report_format, const std::string& report_out) {
  if (which == "report") {
    const Report r = report_from_json(read_file(report_in));
    const auto format = parse_report_format(report_format);
    if (report_out.empty()) {
      std::cout << (format == ReportFormat::json ? report_to_json(r) : report_to_csv(r));
    } else {
      emit_report(r, format, report_out);
    }
    return 0;
  }

  fs::path out_dir;
  RunConfig config = load(o, out_dir);
  if (which == "sweep") {
    if (!axis.empty()) config.sweep.axis = axis;
    if (!values.empty()) config.sweep.values = values;
    config.validate();
  }
  fs::create_directories(out_dir);
  Experiment ex(config, out_dir);
  ex.set_logger(log_line);

  if (which == "build-index") {
    const auto& kb = ex.index();
    std::cout << "indexed " << kb.size() << " documents, vocabulary " << ex.vocab()->size() << ", encoder "
              << kb.encoder_fingerprint().substr(0, 12) << "\n";
  } else if (which == "split") {
    const auto& s = ex.split();
    std::cout << "shadow " << s.shadow.size() << ", eval " << s.eval.size() << "\n";
  } else if (which == "partition") {
    const auto& p = ex.partition();
    std::cout << p.topic_count() << " topics, sizes";
    for (auto n : p.sizes()) std::cout << " " << n;
    std::cout << "\n";
  } else if (which == "anchors") {
    for (const auto& a : ex.anchors()) std::cout << a << "\n";
  } else if (which == "craft") {
    const auto b = ex.budgets();
    if (b.total == 0) log_line("warning: budget round(n*p) is 0; writing an empty poison set");
    const auto set = ex.craft();
    ex.save_poison(set);
    std::cout << "crafted " << set.size() << " poisoned documents -> " << (out_dir / "poison.jsonl").string() << "\n";
  } else if (which == "inject") {
    const auto kb = ex.poisoned_index(ex.poison_set());
    write_index(out_dir / "index.poisoned.bin", kb);
    std::cout << "index now holds " << kb.size() << " documents (" << kb.poisoned_count() << " poisoned)\n";
  } else if (which == "evaluate") {
    const Report r = ex.evaluate(ex.poison_set());
    emit_report(r, ReportFormat::json, out_dir / "report.json");
    emit_report(r, ReportFormat::csv, out_dir / "report.csv");
    print_metrics("undefended", r.metrics);
    for (const auto& [stage, m] : r.defended) print_metrics(stage, m);
    if (r.aborted) {
      log_line("evaluation aborted: " + *r.aborted);
      return 1;
    }
  } else if (which == "transfer") {
    Report r = ex.base_report();
    if (encoders.empty()) {
      r.transfer = ex.transfer();
    } else {
      std::vector<std::shared_ptr<const Retriever>> rs;
      for (const auto& e : encoders) rs.push_back(ex.retriever_from_checkpoint(e));
      r.transfer = ex.transfer(rs);
    }
    r.ks = {r.transfer->k};
    emit_report(r, ReportFormat::json, out_dir / "transfer.json");
    const auto& m = *r.transfer;
    for (std::size_t s = 0; s < m.sources.size(); ++s) {
      std::cout << m.sources[s].substr(0, 12);
      for (std::size_t v = 0; v < m.victims.size(); ++v) std::cout << " " << fmt(m.at(s, v));
      std::cout << "\n";
    }
  } else if (which == "sweep") {
    Report r = ex.base_report();
    r.sweep = ex.sweep();
    emit_report(r, ReportFormat::json, out_dir / "sweep.json");
    emit_report(r, ReportFormat::csv, out_dir / "sweep.csv");
    for (const auto& p : r.sweep->points) {
      if (p.error) {
        std::cout << to_string(r.sweep->axis) << "=" << p.value << " error: " << *p.error << "\n";
      } else {
        print_metrics(std::string(to_string(r.sweep->axis)) + "=" + p.value, p.metrics);
      }
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ragforge: poisoning attacks and defenses for dense-retrieval RAG pipelines"};
  app.require_subcommand(1);
  Overrides o;
  std::string axis, report_in, report_format = "csv", report_out;
  std::vector<std::string> values, encoders;

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"build-index", "Build the vocabulary, encoder checkpoint and document index"},
      {"split", "Split queries into shadow and evaluation sets"},
      {"partition", "Cluster shadow queries into topics"},
      {"anchors", "Extract the frequency anchor tokens"},
      {"craft", "Craft the poisoned documents"},
      {"inject", "Write an index with the poisoned documents added"},
      {"evaluate", "Measure ASR-r and ASR-t with and without defenses"},
      {"transfer", "Source x victim ASR-r matrix over several encoders"},
      {"sweep", "Repeat the attack over one varying parameter"},
  };
  for (const auto& [name, help] : commands) {
    auto* cmd = app.add_subcommand(name, help);
    add_common(cmd, o);
    if (name == "sweep") {
      cmd->add_option("--axis", axis, "poison_rate, url or k");
      cmd->add_option("--values", values, "Comma-separated axis values")->delimiter(',');
    }
    if (name == "transfer") {
      cmd->add_option("--encoder", encoders, "Encoder checkpoint (repeatable); derived from seeds when absent");
    }
  }
  auto* rep = app.add_subcommand("report", "Convert a report between JSON and CSV");
  rep->add_option("--input", report_in, "Report JSON")->required();
  rep->add_option("--format", report_format, "json or csv");
  rep->add_option("--out", report_out, "Output path (stdout when absent)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  const std::string which = app.get_subcommands().front()->get_name();
  try {
    return run(which, o, axis, values, encoders, report_in, report_format, report_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
