#include "colproj/evaluation.hpp"

#include <gtest/gtest.h>

#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/beta.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "colproj/errors.hpp"
#include "colproj/retrieval.hpp"
#include "colproj/maxsim.hpp"
#include "test_support.hpp"

namespace colproj {
namespace {

RunEntry ranked(const std::string& qid, std::vector<std::string> docs) {
  RunEntry e{qid, {}};
  double s = static_cast<double>(docs.size());
  for (auto& d : docs) e.ranking.push_back({std::move(d), s--});
  return e;
}

double boost_two_sided(double t, double dof) {
  boost::math::students_t dist(dof);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

TEST(NdcgTest, ReferenceValues) {
  const Qrels qrels{{"q", {{"a", 1}}}};
  EXPECT_EQ(ndcg_at_k({ranked("q", {"a", "b"})}, qrels).mean, 1.0);
  EXPECT_NEAR(ndcg_at_k({ranked("q", {"b", "a"})}, qrels).mean, 1.0 / std::log2(3.0), 1e-9);
  EXPECT_EQ(ndcg_at_k({ranked("q", {"b", "c"})}, qrels).mean, 0.0);
}

TEST(NdcgTest, GradedGainAndCutoff) {
  const Qrels qrels{{"q", {{"a", 2}, {"b", 1}, {"c", 0}}}};
  // DCG = 1/log2(2) + 3/log2(3); IDCG = 3 + 1/log2(3).
  const double expected = (1.0 + 3.0 / std::log2(3.0)) / (3.0 + 1.0 / std::log2(3.0));
  EXPECT_NEAR(ndcg_at_k({ranked("q", {"b", "a", "c"})}, qrels).mean, expected, 1e-12);
  // Relevant document beyond the cutoff earns nothing.
  EXPECT_EQ(ndcg_at_k({ranked("q", {"c", "x", "a"})}, qrels, 2).mean, 0.0);
  EXPECT_THROW(ndcg_at_k({}, qrels, 0), ContractError);
}

TEST(NdcgTest, SkipsUnjudgedQueries) {
  const Qrels qrels{{"q1", {{"a", 1}}}, {"q2", {{"a", 0}}}};
  const NdcgResult r =
      ndcg_at_k({ranked("q1", {"a"}), ranked("q2", {"a"}), ranked("q3", {"a"})}, qrels);
  EXPECT_EQ(r.per_query.size(), 1u);
  EXPECT_EQ(r.skipped_missing_qrels, 1u);
  EXPECT_EQ(r.skipped_no_relevant, 1u);
  EXPECT_EQ(r.mean, 1.0);
  const auto j = ndcg_to_json(r, 10);
  EXPECT_EQ(j["metric"], "ndcg@10");
  EXPECT_EQ(j["evaluated"], 1);
}

TEST(NdcgTest, BoundedAndIdealIsOne) {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    Qrels qrels;
    std::vector<std::string> docs;
    std::vector<std::pair<int, std::string>> by_rel;
    for (int i = 0; i < 12; ++i) {
      const std::string id = "d" + std::to_string(i);
      const int rel = static_cast<int>(rng.below(4));
      qrels["q"][id] = rel;
      docs.push_back(id);
      by_rel.push_back({rel, id});
    }
    qrels["q"]["d0"] = 3;
    by_rel[0].first = 3;
    rng.shuffle(docs);
    const double v = ndcg_at_k({ranked("q", docs)}, qrels).mean;
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0 + 1e-15);
    std::stable_sort(by_rel.begin(), by_rel.end(), [](auto& a, auto& b) { return a.first > b.first; });
    std::vector<std::string> ideal;
    for (auto& p : by_rel) ideal.push_back(p.second);
    EXPECT_NEAR(ndcg_at_k({ranked("q", ideal)}, qrels).mean, 1.0, 1e-15);
  }
}

TEST(TTestTest, MatchesReferenceDistribution) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = testing::random_between(rng, 2, 30);
    std::vector<double> a(n), b(n);
    const double shift = rng.uniform(-0.5, 0.5);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = rng.uniform(0, 1);
      b[i] = a[i] + shift + rng.uniform(-0.3, 0.3);
    }
    const TTestResult r = paired_t_test(a, b);
    // Independent recomputation of t.
    double mean = 0, ss = 0;
    for (std::size_t i = 0; i < n; ++i) mean += (a[i] - b[i]) / n;
    for (std::size_t i = 0; i < n; ++i) ss += (a[i] - b[i] - mean) * (a[i] - b[i] - mean);
    const double t = mean / std::sqrt(ss / (n - 1) / n);
    EXPECT_NEAR(r.t, t, 1e-9 * std::max(1.0, std::abs(t)));
    EXPECT_EQ(r.dof, n - 1);
    EXPECT_NEAR(r.p, boost_two_sided(t, n - 1.0), 1e-6);
  }
}

TEST(TTestTest, IncompleteBetaAgainstReference) {
  Rng rng(10);
  for (int trial = 0; trial < 500; ++trial) {
    const double a = rng.uniform(0.05, 40), b = rng.uniform(0.05, 40), x = rng.uniform(0, 1);
    EXPECT_NEAR(regularized_incomplete_beta(x, a, b), boost::math::ibeta(a, b, x), 1e-12)
        << a << " " << b << " " << x;
  }
  for (double t : {0.0, 0.5, 2.0, 10.0, 100.0}) {
    for (double dof : {1.0, 2.0, 4.0, 30.0}) {
      EXPECT_NEAR(student_t_two_sided_p(t, dof), boost_two_sided(t, dof), 1e-12);
    }
  }
  EXPECT_THROW(regularized_incomplete_beta(0.5, 0.0, 1.0), ContractError);
}

TEST(TTestTest, DegenerateCases) {
  const TTestResult same = paired_t_test({0.1, 0.2, 0.3}, {0.1, 0.2, 0.3});
  EXPECT_EQ(same.t, 0.0);
  EXPECT_EQ(same.p, 1.0);
  const TTestResult constant = paired_t_test({1.5, 2.5}, {1.0, 2.0});
  EXPECT_TRUE(constant.p_below_floor);
  EXPECT_EQ(constant.p_string(), "< 1e-12");
  EXPECT_EQ(t_test_to_json(constant)["p"], "< 1e-12");
  EXPECT_EQ(t_test_to_json(constant)["t"], "inf");
  EXPECT_THROW(paired_t_test({1.0}, {2.0}), ContractError);
  EXPECT_THROW(paired_t_test({1.0, 2.0}, {2.0}), ContractError);
}

TEST(AggregateTest, MeanAndSampleSd) {
  const SeedAggregate a = aggregate_seeds({0.4, 0.6});
  EXPECT_DOUBLE_EQ(a.mean, 0.5);
  ASSERT_TRUE(a.sd.has_value());
  EXPECT_NEAR(*a.sd, std::sqrt(0.02), 1e-15);
  const SeedAggregate one = aggregate_seeds({0.7});
  EXPECT_FALSE(one.sd.has_value());
  EXPECT_TRUE(aggregate_to_json(one)["sd"].is_null());
  EXPECT_THROW(aggregate_seeds({}), ContractError);
}

class TrecIoTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() / ("colproj_trec_" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }
  void write(const std::string& name, const std::string& text) {
    std::ofstream(dir_ / name) << text;
  }
  std::filesystem::path dir_;
};

TEST_F(TrecIoTest, RoundTrip) {
  const Qrels qrels{{"q1", {{"a", 1}, {"b", 0}}}, {"q2", {{"c", 3}}}};
  write_qrels(dir_ / "x.qrels", qrels);
  EXPECT_EQ(load_qrels(dir_ / "x.qrels"), qrels);

  std::vector<RunEntry> run{{"q2", {{"c", 0.5}, {"a", -0.25}}}, {"q1", {{"b", 1.0}}}};
  write_run(dir_ / "x.run", run, "tag");
  std::ifstream in(dir_ / "x.run");
  std::string first;
  std::getline(in, first);
  EXPECT_EQ(first, "q2 Q0 c 1 0.500000 tag");
  const auto back = load_run(dir_ / "x.run");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].query_id, "q2");
  EXPECT_EQ(back[0].ranking[1].doc_id, "a");
  EXPECT_EQ(back[0].ranking[1].score, -0.25);
}

TEST_F(TrecIoTest, Errors) {
  write("bad.qrels", "q1 0 a 1\nq1 0 b\n");
  try {
    load_qrels(dir_ / "bad.qrels");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  write("neg.qrels", "q1 0 a -1\n");
  EXPECT_THROW(load_qrels(dir_ / "neg.qrels"), FormatError);
  write("dup.qrels", "q1 0 a 1\nq1 0 a 2\n");
  EXPECT_THROW(load_qrels(dir_ / "dup.qrels"), FormatError);
  write("bad.run", "q1 Q0 a one 1.0 t\n");
  EXPECT_THROW(load_run(dir_ / "bad.run"), ParseError);
  try {
    load_qrels(dir_ / "missing.qrels");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), "io");
  }
}

HeadConfig small_head(std::size_t d, std::size_t k, bool glu) {
  HeadConfig c;
  c.input_dim = d;
  c.output_dim = k;
  if (glu) {
    c.family = HeadFamily::glu;
    c.depth = 2;
    c.residual = true;
    c.rho = 2.0;
    c.activation = Activation::gelu;
    c.gate = Activation::silu;
  }
  return c;
}

TEST(ExactSearchTest, MatchesNaiveLoop) {
  Rng rng(11);
  for (bool glu : {false, true}) {
    const HeadParams head = testing::jittered_head(small_head(6, 4, glu), 3);
    QuerySet queries;
    Corpus corpus;
    for (int q = 0; q < 3; ++q) queries["q" + std::to_string(q)] = testing::random_matrix(rng, 3, 6);
    for (int d = 0; d < 40; ++d) {
      corpus["d" + std::to_string(d)] =
          testing::random_matrix(rng, testing::random_between(rng, 1, 7), 6);
    }
    const auto run = exact_search(queries, corpus, head, 15);
    ASSERT_EQ(run.size(), 3u);
    for (const RunEntry& e : run) {
      const Matrix qp = head_forward(head, queries.at(e.query_id));
      std::vector<ScoredDoc> all;
      for (const auto& [id, tokens] : corpus) {
        const Matrix dp = head_forward(head, tokens);
        double s = 0;
        for (std::size_t i = 0; i < qp.rows(); ++i) {
          double best = -1e300;
          for (std::size_t j = 0; j < dp.rows(); ++j) {
            double dot = 0;
            for (std::size_t c = 0; c < qp.cols(); ++c) dot += qp(i, c) * dp(j, c);
            best = std::max(best, dot);
          }
          s += best;
        }
        all.push_back({id, s});
      }
      std::sort(all.begin(), all.end(), [](const ScoredDoc& a, const ScoredDoc& b) {
        return a.score != b.score ? a.score > b.score : a.doc_id < b.doc_id;
      });
      ASSERT_EQ(e.ranking.size(), 15u);
      for (std::size_t r = 0; r < 15; ++r) {
        EXPECT_EQ(e.ranking[r].doc_id, all[r].doc_id);
        EXPECT_NEAR(e.ranking[r].score, all[r].score, 1e-12);
      }
    }
  }
}

TEST(ExactSearchTest, TiesBreakByDocIdAndInsertionOrderIsIrrelevant) {
  const HeadParams head = build_head(small_head(3, 3, false), 1);
  const Matrix tok = Matrix::row_vector(std::vector<double>{1.0, 0.0, 0.0});
  Corpus corpus{{"b", tok}, {"a", tok}, {"c", scale(tok, -1.0)}};
  const auto run = exact_search({{"q", tok}}, corpus, head, 10);
  ASSERT_EQ(run[0].ranking.size(), 3u);
  EXPECT_EQ(run[0].ranking[0].doc_id, "a");
  EXPECT_EQ(run[0].ranking[1].doc_id, "b");
  EXPECT_EQ(run[0].ranking[2].doc_id, "c");
}

TEST(ExactSearchTest, NdcgInvariantUnderMonotoneScoreMaps) {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    RunEntry e{"q", {}};
    Qrels qrels;
    for (int i = 0; i < 15; ++i) {
      const std::string id = "d" + std::to_string(i);
      e.ranking.push_back({id, rng.uniform(-1, 1)});
      qrels["q"][id] = static_cast<int>(rng.below(3));
    }
    qrels["q"]["d0"] = 2;
    std::sort(e.ranking.begin(), e.ranking.end(), ranks_before);
    RunEntry mapped = e;
    for (auto& s : mapped.ranking) s.score = std::exp(3.0 * s.score) + 7.0;
    std::sort(mapped.ranking.begin(), mapped.ranking.end(), ranks_before);
    EXPECT_EQ(ndcg_at_k({e}, qrels).mean, ndcg_at_k({mapped}, qrels).mean);
  }
}

}  // namespace
}  // namespace colproj
