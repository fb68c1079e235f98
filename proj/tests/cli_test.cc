// Drives the built colproj binary end to end.

#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("colproj_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir_);
    std::ofstream(dir_ / "small.cfg") << "data.d = 12\ndata.vocab_size = 96\ndata.query_tokens = 3\n"
                                         "data.doc_tokens = 6\ndata.n_way = 4\ndata.tuple_count = 24\n"
                                         "data.planted_rank = 2\ndata.eval_queries = 5\n"
                                         "head.output_dim = 4\nhead.depth = 2\nhead.residual = true\n"
                                         "train.batch_size = 4\ntrain.total_steps = 8\n";
    ASSERT_EQ(run("gen-data --config small.cfg --out tuples.jsonl --queries-out q.jsonl "
                  "--corpus-out c.jsonl --qrels-out heldout.qrels"),
              0);
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }

  // Runs the CLI inside the scratch directory; stderr goes to err.txt.
  static int run(const std::string& args) {
    const std::string cmd =
        "cd '" + dir_.string() + "' && '" + COLPROJ_CLI + "' " + args + " > out.txt 2> err.txt";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }
  static std::string err() { return slurp(dir_ / "err.txt"); }

  static fs::path dir_;
};

fs::path CliTest::dir_;

TEST_F(CliTest, GeneratedFilesCarryMetadata) {
  std::ifstream in(dir_ / "tuples.jsonl");
  std::string first;
  std::getline(in, first);
  const auto meta = nlohmann::json::parse(first)["_meta"];
  EXPECT_EQ(meta["synthetic"], true);
  EXPECT_EQ(meta["tool"], "colproj");
  EXPECT_EQ(meta["config"]["data.d"]["source"], "file");
  EXPECT_EQ(meta["config"]["data.d"]["value"], "12");
}

TEST_F(CliTest, GenerationIsByteIdentical) {
  ASSERT_EQ(run("gen-data --config small.cfg --out again.jsonl"), 0);
  EXPECT_EQ(slurp(dir_ / "tuples.jsonl"), slurp(dir_ / "again.jsonl"));
  ASSERT_EQ(run("gen-data --config small.cfg --seed 9 --out other.jsonl"), 0);
  EXPECT_NE(slurp(dir_ / "tuples.jsonl"), slurp(dir_ / "other.jsonl"));
}

TEST_F(CliTest, TrainTwiceIsByteIdenticalAndInputsUntouched) {
  const std::string before = slurp(dir_ / "tuples.jsonl");
  ASSERT_EQ(run("train --config small.cfg --data tuples.jsonl --out a.head --seed 5"), 0) << err();
  ASSERT_EQ(run("train --config small.cfg --data tuples.jsonl --out b.head --seed 5"), 0) << err();
  EXPECT_EQ(slurp(dir_ / "a.head"), slurp(dir_ / "b.head"));
  EXPECT_EQ(slurp(dir_ / "a.head.trace.tsv"), slurp(dir_ / "b.head.trace.tsv"));
  EXPECT_EQ(before, slurp(dir_ / "tuples.jsonl"));
  ASSERT_EQ(run("train --config small.cfg --data tuples.jsonl --out c.head --train.seed=6"), 0);
  EXPECT_NE(slurp(dir_ / "a.head"), slurp(dir_ / "c.head"));
}

TEST_F(CliTest, SearchEvaluateDiagnose) {
  ASSERT_EQ(run("train --config small.cfg --data tuples.jsonl --out s.head"), 0) << err();
  ASSERT_EQ(run("search --head s.head --queries q.jsonl --corpus c.jsonl --out s.run --tag s"), 0)
      << err();
  ASSERT_EQ(run("search --head s.head --queries q.jsonl --corpus c.jsonl --out s2.run"), 0);
  EXPECT_EQ(slurp(dir_ / "s.run").substr(0, 4), "q000");
  ASSERT_EQ(run("evaluate --run s.run --qrels heldout.qrels --compare s2.run --out eval.json"), 0)
      << err();
  const auto report = nlohmann::json::parse(slurp(dir_ / "eval.json"));
  EXPECT_EQ(report["run"]["metric"], "ndcg@10");
  EXPECT_EQ(report["paired_t_test"]["p"], 1.0);
  ASSERT_EQ(run("diagnose --head s.head --data tuples.jsonl --out diag.json"), 0) << err();
  const auto diag = nlohmann::json::parse(slurp(dir_ / "diag.json"));
  EXPECT_EQ(diag["report"]["checks"].size(), 8u);
  EXPECT_EQ(diag["report"]["all_pass"], true);
}

TEST_F(CliTest, ErrorsAndExitCodes) {
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("train --config small.cfg --data tuples.jsonl --out x.head --head.depht 2"), 2);
  EXPECT_NE(err().find("error: kind=config"), std::string::npos) << err();
  EXPECT_EQ(run("train --data tuples.jsonl --out x.head"), 2);  // data.d defaults to 32
  EXPECT_NE(err().find("kind=config"), std::string::npos) << err();
  EXPECT_EQ(run("train --config small.cfg --data missing.jsonl --out x.head"), 1);
  EXPECT_NE(err().find("kind=io"), std::string::npos) << err();
  std::ofstream(dir_ / "broken.jsonl") << "{\"query\": [[1]]}\n";
  EXPECT_EQ(run("train --config small.cfg --data broken.jsonl --out x.head"), 1);
  EXPECT_NE(err().find("kind=parse"), std::string::npos) << err();
  EXPECT_NE(err().find("line 1"), std::string::npos) << err();
  EXPECT_FALSE(fs::exists(dir_ / "x.head"));
}

}  // namespace
