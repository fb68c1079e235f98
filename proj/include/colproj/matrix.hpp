#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace colproj {

/// Dense row-major matrix of doubles. Rows of a token matrix are tokens.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  static Matrix zeros(std::size_t rows, std::size_t cols) { return Matrix(rows, cols); }
  static Matrix identity(std::size_t n) { return identity(n, n); }
  /// Rectangular identity: ones on the leading diagonal, zeros elsewhere.
  static Matrix identity(std::size_t rows, std::size_t cols);
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix from_rows(const std::vector<std::vector<double>>& rows);
  static Matrix row_vector(std::span<const double> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }
  bool same_shape(const Matrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }

  /// Copy of rows [begin, end).
  Matrix slice_rows(std::size_t begin, std::size_t end) const;

  std::string shape_string() const;

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.values_ == b.values_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

enum class Activation { identity, relu, gelu, silu, sigmoid };

Activation parse_activation(const std::string& name);
std::string to_string(Activation a);
double activate(Activation a, double x);
double activate_derivative(Activation a, double x);

// Plain value-level kernels. The taped versions in autodiff.hpp call these.
Matrix matmul(const Matrix& a, const Matrix& b);
/// a · bᵀ
Matrix matmul_nt(const Matrix& a, const Matrix& b);
/// aᵀ · b
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Matrix add(const Matrix& a, const Matrix& b);
Matrix subtract(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);
Matrix elementwise_mul(const Matrix& a, const Matrix& b);
Matrix apply_activation(const Matrix& x, Activation kind);
/// Adds the 1×cols row `bias` to every row of `x`.
Matrix add_row_bias(const Matrix& x, const Matrix& bias);
/// Divides each row by max(‖row‖₂, eps).
Matrix row_l2_normalize(const Matrix& x, double eps = 1e-12);
/// Stacks the rows of every block, in order.
Matrix vstack(std::span<const Matrix> blocks);

double frobenius_norm(const Matrix& a);
double sum(const Matrix& a);
double trace(const Matrix& a);
double max_abs(const Matrix& a);
double max_abs_diff(const Matrix& a, const Matrix& b);
bool all_finite(const Matrix& a);

}  // namespace colproj
