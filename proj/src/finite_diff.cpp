#include "colproj/finite_diff.hpp"

#include <algorithm>
#include <cmath>

#include "colproj/errors.hpp"

namespace colproj {

Matrix finite_difference_grad(const std::function<double(const Matrix&)>& f, const Matrix& x,
                              double h) {
  if (!(h > 0.0)) {
    throw ContractError("finite difference step must be positive");
  }
  Matrix grad(x.rows(), x.cols());
  Matrix probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe.values()[i];
    probe.values()[i] = orig + h;
    const double up = f(probe);
    probe.values()[i] = orig - h;
    const double down = f(probe);
    probe.values()[i] = orig;
    grad.values()[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

double relative_error(double a, double b, double floor) {
  const double denom = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / denom;
}

double max_relative_error(const Matrix& a, const Matrix& b, double floor) {
  if (!a.same_shape(b)) {
    throw ShapeError("max_relative_error: " + a.shape_string() + " vs " + b.shape_string());
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, relative_error(a.values()[i], b.values()[i], floor));
  }
  return worst;
}

}  // namespace colproj
