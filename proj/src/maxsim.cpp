#include "colproj/maxsim.hpp"

#include <cmath>

#include "colproj/errors.hpp"

namespace colproj {

namespace {

void check_pair(const TokenMatrix& q, const TokenMatrix& d) {
  if (q.dim() != d.dim()) {
    throw ContractError("maxsim: query dim " + std::to_string(q.dim()) + " vs document dim " +
                        std::to_string(d.dim()));
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

// Best document token for query token i and its similarity.
std::pair<std::size_t, double> best_match(const TokenMatrix& q, const TokenMatrix& d,
                                          std::size_t i) {
  const auto qi = q.token(i);
  std::size_t best = 0;
  double best_sim = dot(qi, d.token(0));
  for (std::size_t j = 1; j < d.token_count(); ++j) {
    const double s = dot(qi, d.token(j));
    if (s > best_sim) {
      best = j;
      best_sim = s;
    }
  }
  return {best, best_sim};
}

}  // namespace

TokenMatrix::TokenMatrix(Matrix rows) : m_(std::move(rows)) {
  if (m_.rows() == 0 || m_.cols() == 0) {
    throw ContractError("token matrix must be non-empty, got " + m_.shape_string());
  }
  for (std::size_t i = 0; i < m_.rows(); ++i) {
    double sq = 0.0;
    for (double v : m_.row(i)) sq += v * v;
    if (std::abs(std::sqrt(sq) - 1.0) > kUnitTolerance) {
      throw ContractError("token row " + std::to_string(i) + " has norm " +
                          std::to_string(std::sqrt(sq)) + ", expected unit norm");
    }
  }
}

TokenMatrix TokenMatrix::normalized(const Matrix& raw) { return TokenMatrix(row_l2_normalize(raw)); }

double maxsim_score(const TokenMatrix& q, const TokenMatrix& d) {
  check_pair(q, d);
  double total = 0.0;
  for (std::size_t i = 0; i < q.token_count(); ++i) {
    total += best_match(q, d, i).second;
  }
  return total;
}

WinnerAssignment winners(const TokenMatrix& q, const TokenMatrix& d) {
  check_pair(q, d);
  WinnerAssignment w(q.token_count());
  for (std::size_t i = 0; i < q.token_count(); ++i) {
    w[i] = best_match(q, d, i).first;
  }
  return w;
}

MaxSimGrad maxsim_grad(const TokenMatrix& q, const TokenMatrix& d) {
  const WinnerAssignment w = winners(q, d);
  MaxSimGrad g{Matrix(q.token_count(), q.dim()), Matrix(d.token_count(), d.dim())};
  for (std::size_t i = 0; i < w.size(); ++i) {
    const auto win = d.token(w[i]);
    std::copy(win.begin(), win.end(), g.dq.row(i).begin());
    auto dd = g.dd.row(w[i]);
    const auto qi = q.token(i);
    for (std::size_t k = 0; k < qi.size(); ++k) dd[k] += qi[k];
  }
  return g;
}

std::vector<double> score_batch(const TokenMatrix& q, std::span<const TokenMatrix> docs) {
  std::vector<double> out;
  out.reserve(docs.size());
  for (std::size_t c = 0; c < docs.size(); ++c) {
    if (docs[c].dim() != q.dim()) {
      throw ContractError("score_batch: candidate " + std::to_string(c) + " has dim " +
                          std::to_string(docs[c].dim()) + ", query dim " +
                          std::to_string(q.dim()));
    }
    out.push_back(maxsim_score(q, docs[c]));
  }
  return out;
}

ad::Var maxsim(ad::Var q, ad::Var d) {
  if (q.value().cols() != d.value().cols()) {
    throw ContractError("maxsim: query " + q.value().shape_string() + " vs document " +
                        d.value().shape_string());
  }
  return ad::sum(ad::row_max(ad::matmul_nt(q, d)));
}

}  // namespace colproj
