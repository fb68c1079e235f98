#pragma once

// NDCG@k over TREC-style qrels and runs, seed aggregation, and paired
// t-tests.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "colproj/retrieval.hpp"
#include "json.hpp"

namespace colproj {

/// Query id → (document id → graded relevance ≥ 0).
using Qrels = std::map<std::string, std::map<std::string, int>>;

struct NdcgResult {
  std::map<std::string, double> per_query;
  double mean = 0.0;
  std::size_t skipped_missing_qrels = 0;  // run query absent from qrels
  std::size_t skipped_no_relevant = 0;    // qrels query without any rel > 0
};

/// DCG with gain 2^rel − 1 and log₂(rank + 1) discount over the first k
/// results, divided by the ideal DCG. Queries with no relevant judgments
/// are left out of the mean.
NdcgResult ndcg_at_k(const std::vector<RunEntry>& run, const Qrels& qrels, std::size_t k = 10);

struct SeedAggregate {
  double mean = 0.0;
  std::optional<double> sd;  // sample sd (n − 1); absent for n = 1
  std::size_t n = 0;
};

SeedAggregate aggregate_seeds(const std::vector<double>& per_seed);

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  /// Zero-variance, non-zero differences: p is below any representable
  /// floor and is reported as "< 1e-12".
  bool p_below_floor = false;
  std::size_t dof = 0;
  double mean_difference = 0.0;

  std::string p_string() const;
};

/// Paired two-sided t-test on a − b with n − 1 degrees of freedom.
TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

/// Regularized incomplete beta I_x(a, b).
double regularized_incomplete_beta(double x, double a, double b);
/// P(|T| ≥ |t|) for Student's t with `dof` degrees of freedom.
double student_t_two_sided_p(double t, double dof);

Qrels load_qrels(const std::filesystem::path& path);
void write_qrels(const std::filesystem::path& path, const Qrels& qrels);
/// "qid Q0 docid rank score tag", scores with 6 decimals.
void write_run(const std::filesystem::path& path, const std::vector<RunEntry>& run,
               const std::string& tag);
std::vector<RunEntry> load_run(const std::filesystem::path& path);

nlohmann::json ndcg_to_json(const NdcgResult& r, std::size_t k);
nlohmann::json aggregate_to_json(const SeedAggregate& a);
nlohmann::json t_test_to_json(const TTestResult& t);

}  // namespace colproj
