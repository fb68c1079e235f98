#pragma once

#include <vector>

#include "colproj/matrix.hpp"

namespace colproj {

/// Singular values of `w` in descending order, by one-sided Jacobi
/// rotations. Throws ContractError on an empty matrix.
std::vector<double> singular_values(const Matrix& w);

/// Σ σᵢ.
double nuclear_norm(const Matrix& w);

}  // namespace colproj
