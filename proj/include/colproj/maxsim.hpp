#pragma once

#include <span>
#include <vector>

#include "colproj/autodiff.hpp"
#include "colproj/matrix.hpp"

namespace colproj {

/// Token vectors of one query or document; every row has unit L2 norm
/// (within 1e-9), checked at construction.
class TokenMatrix {
 public:
  static constexpr double kUnitTolerance = 1e-9;

  /// Throws ContractError if any row is not unit-norm or the matrix is empty.
  explicit TokenMatrix(Matrix rows);
  /// Row-normalizes `raw` first.
  static TokenMatrix normalized(const Matrix& raw);

  std::size_t token_count() const { return m_.rows(); }
  std::size_t dim() const { return m_.cols(); }
  const Matrix& matrix() const { return m_; }
  std::span<const double> token(std::size_t i) const { return m_.row(i); }

 private:
  Matrix m_;
};

/// j*(i) for every query token i.
using WinnerAssignment = std::vector<std::size_t>;

/// Σᵢ maxⱼ q̂ᵢᵀd̂ⱼ
double maxsim_score(const TokenMatrix& q, const TokenMatrix& d);
/// Argmax per query token; ties go to the lowest document index.
WinnerAssignment winners(const TokenMatrix& q, const TokenMatrix& d);

struct MaxSimGrad {
  Matrix dq;  // row i = d̂_{j*(i)}
  Matrix dd;  // row j = Σ_{i : j*(i) = j} q̂ᵢ, exactly zero for non-winners
};

/// Closed-form gradient of maxsim_score w.r.t. the normalized tokens.
MaxSimGrad maxsim_grad(const TokenMatrix& q, const TokenMatrix& d);

/// maxsim_score against each candidate, in input order.
std::vector<double> score_batch(const TokenMatrix& q, std::span<const TokenMatrix> docs);

/// MaxSim on a tape, composed from matmul_nt, row_max and sum.
ad::Var maxsim(ad::Var q, ad::Var d);

}  // namespace colproj
