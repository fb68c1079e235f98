#pragma once

#include <functional>

#include "colproj/matrix.hpp"

namespace colproj {

/// Central differences (f(X + hEᵢⱼ) − f(X − hEᵢⱼ)) / 2h for every entry of X.
Matrix finite_difference_grad(const std::function<double(const Matrix&)>& f, const Matrix& x,
                              double h = 1e-5);

/// |a − b| / max(|a|, |b|, floor). The floor keeps near-zero gradients from
/// turning round-off into large relative errors.
double relative_error(double a, double b, double floor = 1e-6);

/// Largest entrywise relative_error between two same-shape matrices.
double max_relative_error(const Matrix& a, const Matrix& b, double floor = 1e-6);

}  // namespace colproj
