#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include "helpers.hpp"
#include "ragforge/common.hpp"
#include "ragforge/io.hpp"
#include "ragforge/pipeline.hpp"

using namespace ragforge;
namespace fs = std::filesystem;

namespace {

// A small slice of the toy dataset so each test runs in well under a second.
class PipelineTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("ragforge_pipeline_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    auto docs = read_corpus(ragforge::testing::data_path("data/toy/corpus.jsonl"));
    docs.resize(300);
    write_corpus(dir_ / "corpus.jsonl", docs);
    auto qs = read_queries(ragforge::testing::data_path("data/toy/queries.jsonl"));
    qs.resize(60);
    write_queries(dir_ / "queries.jsonl", qs);
    write_file(dir_ / "run.json", R"({
      "paths": {"corpus": "corpus.jsonl", "queries": "queries.jsonl", "output_dir": "out"},
      "encoder": {"embed_dim": 16, "fit": {"enabled": true, "steps": 80}},
      "shadow": {"topics": 3},
      "attack": {"poison_rate_percent": 1.0},
      "gcg": {"max_iters": 15, "init_lengths": [10, 12], "candidates_per_position": 16},
      "defense": {"dtf": {"enabled": true}, "rf": {"enabled": true}},
      "transfer": {"k": 10, "encoder_count": 2},
      "sweep": {"axis": "k", "values": ["1", "5"]}
    })");
  }
  void TearDown() override { fs::remove_all(dir_); }

  RunConfig config() const { return load_config(dir_ / "run.json"); }
  fs::path dir_;
};

int run_cli(const std::string& args) {
  const std::string cmd = std::string(RAGFORGE_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_F(PipelineTest, InMemoryAndCachedRunsAgree) {
  Experiment mem(config());
  const auto report_mem = report_to_json(mem.evaluate(mem.craft()));

  Experiment disk(config(), dir_ / "out");
  const auto report_disk = report_to_json(disk.evaluate(disk.poison_set()));
  EXPECT_EQ(report_mem, report_disk);
  for (const char* f : {"vocab.json", "encoder.bin", "index.bin", "shadow.jsonl", "eval.jsonl", "partition.json",
                        "partition.centroids.json", "anchors.json", "poison.jsonl", "poison.meta.json", "budgets.json"}) {
    EXPECT_TRUE(fs::exists(dir_ / "out" / f)) << f;
  }

  // A fresh experiment reading every artifact back reproduces the report.
  Experiment reload(config(), dir_ / "out");
  EXPECT_EQ(report_to_json(reload.evaluate(reload.poison_set())), report_mem);
}

TEST_F(PipelineTest, PoisonSetFileRoundTrips) {
  Experiment ex(config(), dir_ / "out");
  const auto set = ex.poison_set();
  EXPECT_EQ(set.size(), 3u);
  const auto back = read_poison_set(dir_ / "out" / "poison.jsonl", *ex.vocab(), ex.config().attack.url);
  EXPECT_EQ(back.documents(), set.documents());
  for (const auto& p : back.flatten()) EXPECT_EQ(compose(*ex.vocab(), p.recipe), p.doc.text);
}

TEST_F(PipelineTest, FingerprintMismatchIsDataError) {
  {
    Experiment ex(config(), dir_ / "out");
    ex.save_poison(ex.craft());
  }
  auto c = config();
  c.encoder.seed = 999;
  fs::remove(dir_ / "out" / "encoder.bin");
  fs::remove(dir_ / "out" / "index.bin");
  Experiment other(c, dir_ / "out");
  EXPECT_THROW(other.poison_set(), DataError);
}

TEST_F(PipelineTest, EvaluateReportsEveryEnabledDefense) {
  Experiment ex(config());
  const auto r = ex.evaluate(ex.craft());
  ASSERT_EQ(r.metrics.size(), 3u);
  EXPECT_EQ(r.defended.size(), 3u);
  EXPECT_TRUE(r.defended.count("dtf"));
  EXPECT_TRUE(r.defended.count("rf"));
  EXPECT_TRUE(r.defended.count("all"));
  // Poisons are distinct, so DTF removes nothing.
  EXPECT_EQ(r.defended.at("dtf"), r.metrics);
}

TEST_F(PipelineTest, ZeroBudgetGivesEmptySet) {
  auto c = config();
  c.attack.poison_rate_percent = 0.1;  // round(300 * 0.001) = 0
  Experiment ex(c);
  EXPECT_EQ(ex.craft().size(), 0u);
}

TEST_F(PipelineTest, TransferDiagonalEqualsDirectEvaluation) {
  Experiment ex(config());
  const auto m = ex.transfer();
  ASSERT_EQ(m.sources.size(), 2u);
  EXPECT_EQ(m.sources[0], ex.retriever()->fingerprint());
  EXPECT_EQ(m.cells.size(), 4u);
  const auto kb = ex.poisoned_index(ex.craft());
  EXPECT_DOUBLE_EQ(m.at(0, 0), asr_retrieval(kb, *ex.retriever(), ex.split().eval, 10));
}

TEST_F(PipelineTest, SweepOverK) {
  Experiment ex(config());
  const auto s = ex.sweep();
  ASSERT_EQ(s.points.size(), 2u);
  EXPECT_EQ(s.points[0].metrics.front().k, 1u);
  EXPECT_LE(s.points[0].metrics.front().asr_r, s.points[1].metrics.front().asr_r);
}

TEST_F(PipelineTest, CliMatchesLibraryAndReturnsExitCodes) {
  const std::string cfg = "--config " + (dir_ / "run.json").string();
  ASSERT_EQ(run_cli("build-index " + cfg), 0);
  ASSERT_EQ(run_cli("craft " + cfg), 0);
  ASSERT_EQ(run_cli("evaluate " + cfg), 0);
  Experiment ex(config());
  EXPECT_EQ(read_file(dir_ / "out" / "report.json"), report_to_json(ex.evaluate(ex.craft())));
  ASSERT_EQ(run_cli("report --input " + (dir_ / "out" / "report.json").string() + " --format csv --out " +
                    (dir_ / "r.csv").string()),
            0);
  EXPECT_EQ(read_file(dir_ / "r.csv"), read_file(dir_ / "out" / "report.csv"));

  write_file(dir_ / "bad.json", R"({"paths": {"corpus": "corpus.jsonl", "queries": "queries.jsonl"}, "nope": 1})");
  EXPECT_EQ(run_cli("split --config " + (dir_ / "bad.json").string()), 2);
  EXPECT_EQ(run_cli("split"), 2);
  write_file(dir_ / "missing.json", R"({"paths": {"corpus": "absent.jsonl", "queries": "queries.jsonl"}})");
  EXPECT_EQ(run_cli("build-index --config " + (dir_ / "missing.json").string() + " --output-dir " +
                    (dir_ / "o2").string()),
            3);
}
