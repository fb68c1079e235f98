#include "colproj/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "colproj/errors.hpp"

namespace colproj {

namespace {

double gain(int rel) { return std::exp2(static_cast<double>(rel)) - 1.0; }

double discount(std::size_t rank) { return 1.0 / std::log2(static_cast<double>(rank) + 1.0); }

// Continued fraction for I_x(a, b), modified Lentz.
double beta_continued_fraction(double x, double a, double b) {
  constexpr int kMaxIterations = 10000;
  constexpr double kTiny = 1e-300;
  constexpr double kEps = 1e-16;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIterations; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  throw NumericError("incomplete beta continued fraction did not converge");
}

}  // namespace

NdcgResult ndcg_at_k(const std::vector<RunEntry>& run, const Qrels& qrels, std::size_t k) {
  if (k == 0) {
    throw ContractError("ndcg_at_k: k must be at least 1");
  }
  NdcgResult result;
  double total = 0.0;
  for (const RunEntry& entry : run) {
    const auto judged = qrels.find(entry.query_id);
    if (judged == qrels.end()) {
      ++result.skipped_missing_qrels;
      continue;
    }
    std::vector<int> rels;
    for (const auto& [doc, rel] : judged->second) {
      if (rel > 0) rels.push_back(rel);
    }
    if (rels.empty()) {
      ++result.skipped_no_relevant;
      continue;
    }
    std::sort(rels.begin(), rels.end(), std::greater<>());
    double ideal = 0.0;
    for (std::size_t i = 0; i < std::min(k, rels.size()); ++i) ideal += gain(rels[i]) * discount(i + 1);

    double dcg = 0.0;
    for (std::size_t i = 0; i < std::min(k, entry.ranking.size()); ++i) {
      const auto it = judged->second.find(entry.ranking[i].doc_id);
      if (it != judged->second.end() && it->second > 0) dcg += gain(it->second) * discount(i + 1);
    }
    const double value = dcg / ideal;
    result.per_query[entry.query_id] = value;
    total += value;
  }
  if (!result.per_query.empty()) {
    result.mean = total / static_cast<double>(result.per_query.size());
  }
  return result;
}

SeedAggregate aggregate_seeds(const std::vector<double>& per_seed) {
  if (per_seed.empty()) {
    throw ContractError("aggregate_seeds: empty list");
  }
  SeedAggregate a;
  a.n = per_seed.size();
  a.mean = std::accumulate(per_seed.begin(), per_seed.end(), 0.0) / static_cast<double>(a.n);
  if (a.n > 1) {
    double ss = 0.0;
    for (double v : per_seed) ss += (v - a.mean) * (v - a.mean);
    a.sd = std::sqrt(ss / static_cast<double>(a.n - 1));
  }
  return a;
}

std::string TTestResult::p_string() const {
  if (p_below_floor) return "< 1e-12";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", p);
  return buf;
}

double regularized_incomplete_beta(double x, double a, double b) {
  if (!(a > 0.0) || !(b > 0.0)) {
    throw ContractError("regularized_incomplete_beta: a and b must be positive");
  }
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * beta_continued_fraction(x, a, b) / a;
  }
  return 1.0 - front * beta_continued_fraction(1.0 - x, b, a) / b;
}

double student_t_two_sided_p(double t, double dof) {
  if (!(dof > 0.0)) {
    throw ContractError("student_t_two_sided_p: dof must be positive");
  }
  if (std::isinf(t)) return 0.0;
  return regularized_incomplete_beta(dof / (dof + t * t), dof / 2.0, 0.5);
}

TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw ContractError("paired_t_test: " + std::to_string(a.size()) + " vs " +
                        std::to_string(b.size()) + " samples");
  }
  if (a.size() < 2) {
    throw ContractError("paired_t_test: need at least 2 pairs");
  }
  const std::size_t n = a.size();
  std::vector<double> diff(n);
  for (std::size_t i = 0; i < n; ++i) diff[i] = a[i] - b[i];
  const double mean = std::accumulate(diff.begin(), diff.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double d : diff) ss += (d - mean) * (d - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));

  TTestResult r;
  r.dof = n - 1;
  r.mean_difference = mean;
  const bool all_zero = std::all_of(diff.begin(), diff.end(), [](double d) { return d == 0.0; });
  if (all_zero) {
    r.t = 0.0;
    r.p = 1.0;
    return r;
  }
  if (sd == 0.0) {
    r.t = mean > 0.0 ? std::numeric_limits<double>::infinity()
                     : -std::numeric_limits<double>::infinity();
    r.p = 0.0;
    r.p_below_floor = true;
    return r;
  }
  r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  r.p = student_t_two_sided_p(r.t, static_cast<double>(r.dof));
  r.p_below_floor = r.p < 1e-12;
  return r;
}

Qrels load_qrels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error("io", "cannot open qrels '" + path.string() + "'");
  }
  Qrels qrels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string qid, iter, docid;
    long long rel = 0;
    if (!(ss >> qid)) continue;  // blank line
    if (!(ss >> iter >> docid >> rel)) {
      throw ParseError("qrels line " + std::to_string(line_no) + ": expected 'qid 0 docid rel'");
    }
    if (rel < 0) {
      throw FormatError("qrels line " + std::to_string(line_no) + ": negative relevance");
    }
    auto [it, inserted] = qrels[qid].emplace(docid, static_cast<int>(rel));
    if (!inserted) {
      throw FormatError("qrels line " + std::to_string(line_no) + ": duplicate pair (" + qid +
                        ", " + docid + ")");
    }
  }
  return qrels;
}

void write_qrels(const std::filesystem::path& path, const Qrels& qrels) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw Error("io", "cannot open '" + path.string() + "' for writing");
  }
  for (const auto& [qid, docs] : qrels) {
    for (const auto& [docid, rel] : docs) {
      out << qid << " 0 " << docid << ' ' << rel << '\n';
    }
  }
}

void write_run(const std::filesystem::path& path, const std::vector<RunEntry>& run,
               const std::string& tag) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw Error("io", "cannot open '" + path.string() + "' for writing");
  }
  char score[64];
  for (const RunEntry& entry : run) {
    for (std::size_t i = 0; i < entry.ranking.size(); ++i) {
      std::snprintf(score, sizeof score, "%.6f", entry.ranking[i].score);
      out << entry.query_id << " Q0 " << entry.ranking[i].doc_id << ' ' << (i + 1) << ' '
          << score << ' ' << tag << '\n';
    }
  }
}

std::vector<RunEntry> load_run(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error("io", "cannot open run '" + path.string() + "'");
  }
  std::map<std::string, std::vector<std::pair<long long, ScoredDoc>>> by_query;
  std::vector<std::string> order;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string qid, q0, docid, tag;
    long long rank = 0;
    double score = 0.0;
    if (!(ss >> qid)) continue;
    if (!(ss >> q0 >> docid >> rank >> score >> tag)) {
      throw ParseError("run line " + std::to_string(line_no) +
                       ": expected 'qid Q0 docid rank score tag'");
    }
    auto [it, inserted] = by_query.try_emplace(qid);
    if (inserted) order.push_back(qid);
    it->second.push_back({rank, ScoredDoc{docid, score}});
  }
  std::vector<RunEntry> run;
  for (const auto& qid : order) {
    auto& rows = by_query[qid];
    std::stable_sort(rows.begin(), rows.end(),
                     [](const auto& x, const auto& y) { return x.first < y.first; });
    RunEntry entry{qid, {}};
    for (auto& r : rows) entry.ranking.push_back(std::move(r.second));
    run.push_back(std::move(entry));
  }
  return run;
}

nlohmann::json ndcg_to_json(const NdcgResult& r, std::size_t k) {
  nlohmann::json j;
  j["metric"] = "ndcg@" + std::to_string(k);
  j["gain"] = "2^rel-1";
  j["per_query"] = r.per_query;
  j["mean"] = r.mean;
  j["evaluated"] = r.per_query.size();
  j["skipped_missing_qrels"] = r.skipped_missing_qrels;
  j["skipped_no_relevant"] = r.skipped_no_relevant;
  return j;
}

nlohmann::json aggregate_to_json(const SeedAggregate& a) {
  nlohmann::json j;
  j["n"] = a.n;
  j["mean"] = a.mean;
  j["sd"] = a.sd ? nlohmann::json(*a.sd) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json t_test_to_json(const TTestResult& t) {
  nlohmann::json j;
  j["t"] = std::isfinite(t.t) ? nlohmann::json(t.t) : nlohmann::json(t.t > 0 ? "inf" : "-inf");
  j["p"] = t.p_below_floor ? nlohmann::json(t.p_string()) : nlohmann::json(t.p);
  j["dof"] = t.dof;
  j["mean_difference"] = t.mean_difference;
  return j;
}

}  // namespace colproj
