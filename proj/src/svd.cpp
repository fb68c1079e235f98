#include "colproj/svd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "colproj/errors.hpp"

namespace colproj {

std::vector<double> singular_values(const Matrix& w) {
  if (w.empty()) {
    throw ContractError("singular_values: empty matrix");
  }
  // Work on the tall orientation; columns of `a` are orthogonalized in place.
  Matrix a = w.rows() >= w.cols() ? w : transpose(w);
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();

  constexpr int kMaxSweeps = 100;
  constexpr double kTol = 1e-15;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          const double ap = a(i, p), aq = a(i, q);
          alpha += ap * ap;
          beta += aq * aq;
          gamma += ap * aq;
        }
        if (gamma == 0.0 || std::abs(gamma) <= kTol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double ap = a(i, p), aq = a(i, q);
          a(i, p) = c * ap - s * aq;
          a(i, q) = s * ap + c * aq;
        }
      }
    }
    if (!rotated) break;
  }

  std::vector<double> sigma(n);
  for (std::size_t j = 0; j < n; ++j) {
    double ss = 0.0;
    for (std::size_t i = 0; i < m; ++i) ss += a(i, j) * a(i, j);
    sigma[j] = std::sqrt(ss);
  }
  std::sort(sigma.begin(), sigma.end(), std::greater<>());
  return sigma;
}

double nuclear_norm(const Matrix& w) {
  const auto s = singular_values(w);
  return std::accumulate(s.begin(), s.end(), 0.0);
}

}  // namespace colproj
