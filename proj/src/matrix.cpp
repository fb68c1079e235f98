#include "colproj/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "colproj/errors.hpp"

namespace colproj {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                     b.shape_string());
  }
}

double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != rows * cols) {
    throw ShapeError("matrix of shape " + shape_string() + " given " +
                     std::to_string(values_.size()) + " values");
  }
}

Matrix Matrix::identity(std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < std::min(rows, cols); ++i) {
    m(i, i) = 1.0;
  }
  return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  std::vector<std::vector<double>> v;
  for (const auto& r : rows) {
    v.emplace_back(r);
  }
  return from_rows(v);
}

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) {
    return {};
  }
  const std::size_t cols = rows.front().size();
  std::vector<double> values;
  values.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    if (r.size() != cols) {
      throw ShapeError("ragged rows: expected " + std::to_string(cols) + " columns, got " +
                       std::to_string(r.size()));
    }
    values.insert(values.end(), r.begin(), r.end());
  }
  return Matrix(rows.size(), cols, std::move(values));
}

Matrix Matrix::row_vector(std::span<const double> values) {
  return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

Matrix Matrix::slice_rows(std::size_t begin, std::size_t end) const {
  if (begin > end || end > rows_) {
    throw ShapeError("row slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of range for " + shape_string());
  }
  return Matrix(end - begin, cols_,
                std::vector<double>(values_.begin() + static_cast<std::ptrdiff_t>(begin * cols_),
                                    values_.begin() + static_cast<std::ptrdiff_t>(end * cols_)));
}

std::string Matrix::shape_string() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

Activation parse_activation(const std::string& name) {
  if (name == "identity") return Activation::identity;
  if (name == "relu") return Activation::relu;
  if (name == "gelu") return Activation::gelu;
  if (name == "silu") return Activation::silu;
  if (name == "sigmoid") return Activation::sigmoid;
  throw ConfigError("unknown activation '" + name + "'");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::gelu: return "gelu";
    case Activation::silu: return "silu";
    case Activation::sigmoid: return "sigmoid";
  }
  throw ConfigError("unknown activation value");
}

double activate(Activation a, double x) {
  switch (a) {
    case Activation::identity: return x;
    case Activation::relu: return x > 0.0 ? x : 0.0;
    // Exact Gaussian-CDF form, not the tanh approximation.
    case Activation::gelu: return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
    case Activation::silu: return x * sigmoid(x);
    case Activation::sigmoid: return sigmoid(x);
  }
  throw ConfigError("unknown activation value");
}

double activate_derivative(Activation a, double x) {
  switch (a) {
    case Activation::identity: return 1.0;
    case Activation::relu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::gelu: {
      const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
      const double pdf = std::exp(-0.5 * x * x) * std::numbers::inv_sqrtpi / std::numbers::sqrt2;
      return cdf + x * pdf;
    }
    case Activation::silu: {
      const double s = sigmoid(x);
      return s * (1.0 + x * (1.0 - s));
    }
    case Activation::sigmoid: {
      const double s = sigmoid(x);
      return s * (1.0 - s);
    }
  }
  throw ConfigError("unknown activation value");
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + a.shape_string() + " · " + b.shape_string());
  }
  Matrix out(a.rows(), b.cols());
  const std::size_t inner = a.cols();
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* o = out.row(i).data();
    const double* ar = a.row(i).data();
    for (std::size_t k = 0; k < inner; ++k) {
      const double s = ar[k];
      const double* br = b.row(k).data();
      for (std::size_t j = 0; j < n; ++j) {
        o[j] += s * br[j];
      }
    }
  }
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: " + a.shape_string() + " · (" + b.shape_string() + ")ᵀ");
  }
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto ar = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const auto br = b.row(j);
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) {
        acc += ar[k] * br[k];
      }
      out(i, j) = acc;
    }
  }
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: (" + a.shape_string() + ")ᵀ · " + b.shape_string());
  }
  Matrix out(a.cols(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const double* ar = a.row(r).data();
    const double* br = b.row(r).data();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double s = ar[i];
      if (s == 0.0) {
        continue;
      }
      double* o = out.row(i).data();
      for (std::size_t j = 0; j < n; ++j) {
        o[j] += s * br[j];
      }
    }
  }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) {
      out(j, i) = a(i, j);
    }
  }
  return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "add");
  Matrix out = a;
  auto o = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) {
    o[i] += bv[i];
  }
  return out;
}

Matrix subtract(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "subtract");
  Matrix out = a;
  auto o = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) {
    o[i] -= bv[i];
  }
  return out;
}

Matrix scale(const Matrix& a, double s) {
  Matrix out = a;
  for (double& v : out.values()) {
    v *= s;
  }
  return out;
}

Matrix elementwise_mul(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "elementwise_mul");
  Matrix out = a;
  auto o = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) {
    o[i] *= bv[i];
  }
  return out;
}

Matrix apply_activation(const Matrix& x, Activation kind) {
  if (kind == Activation::identity) {
    return x;
  }
  Matrix out = x;
  for (double& v : out.values()) {
    v = activate(kind, v);
  }
  return out;
}

Matrix add_row_bias(const Matrix& x, const Matrix& bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols()) {
    throw ShapeError("add_row_bias: bias " + bias.shape_string() + " for input " +
                     x.shape_string());
  }
  Matrix out = x;
  const auto b = bias.row(0);
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) {
      r[j] += b[j];
    }
  }
  return out;
}

Matrix row_l2_normalize(const Matrix& x, double eps) {
  if (x.cols() == 0) {
    throw ShapeError("row_l2_normalize: matrix has no columns");
  }
  Matrix out = x;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    double sq = 0.0;
    for (double v : r) {
      sq += v * v;
    }
    const double denom = std::max(std::sqrt(sq), eps);
    for (double& v : r) {
      v /= denom;
    }
  }
  return out;
}

Matrix vstack(std::span<const Matrix> blocks) {
  if (blocks.empty()) {
    return {};
  }
  const std::size_t cols = blocks.front().cols();
  std::size_t rows = 0;
  for (const auto& b : blocks) {
    if (b.cols() != cols) {
      throw ShapeError("vstack: column mismatch " + blocks.front().shape_string() + " vs " +
                       b.shape_string());
    }
    rows += b.rows();
  }
  std::vector<double> values;
  values.reserve(rows * cols);
  for (const auto& b : blocks) {
    values.insert(values.end(), b.values().begin(), b.values().end());
  }
  return Matrix(rows, cols, std::move(values));
}

double frobenius_norm(const Matrix& a) {
  double sq = 0.0;
  for (double v : a.values()) {
    sq += v * v;
  }
  return std::sqrt(sq);
}

double sum(const Matrix& a) {
  double s = 0.0;
  for (double v : a.values()) {
    s += v;
  }
  return s;
}

double trace(const Matrix& a) {
  double t = 0.0;
  for (std::size_t i = 0; i < std::min(a.rows(), a.cols()); ++i) {
    t += a(i, i);
  }
  return t;
}

double max_abs(const Matrix& a) {
  double m = 0.0;
  for (double v : a.values()) {
    m = std::max(m, std::abs(v));
  }
  return m;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  }
  return m;
}

bool all_finite(const Matrix& a) {
  return std::all_of(a.values().begin(), a.values().end(),
                     [](double v) { return std::isfinite(v); });
}

}  // namespace colproj
