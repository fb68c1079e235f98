#pragma once

// Numerical checks of the algebra behind projection heads and MaxSim
// gradient flow. Every check is read-only over its inputs.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "colproj/head.hpp"
#include "colproj/maxsim.hpp"
#include "colproj/training.hpp"
#include "json.hpp"

namespace colproj {

struct CheckResult {
  std::string name;
  std::string paper_ref;  // the claim being tested, in words
  nlohmann::json inputs;
  nlohmann::json measured;
  double tolerance = 0.0;
  bool pass = false;
};

struct DiagnosticsReport {
  std::vector<CheckResult> checks;

  bool all_pass() const;
  nlohmann::json to_json() const;
};

struct NuclearNormCheck {
  double nuclear = 0.0;       // ‖W₁W₂‖_*
  double frob_product = 0.0;  // ‖W₁‖_F ‖W₂‖_F
  double am_gm = 0.0;         // ½(‖W₁‖_F² + ‖W₂‖_F²)
  double slack_first = 0.0;   // frob_product − nuclear
  double slack_second = 0.0;  // am_gm − frob_product
};

/// Throws ShapeError if W₁.cols != W₂.rows.
NuclearNormCheck nuclear_norm_bound_check(const Matrix& w1, const Matrix& w2);

/// σ₁ / Σσᵢ; 0 for the zero matrix.
double spectral_concentration(const Matrix& w);

struct MetricMatrix {
  Matrix m;
  double trace = 0.0;
  std::vector<double> allocation;   // eᵢᵀMeᵢ
  std::vector<double> eigenvalues;  // descending
  double symmetry_residual = 0.0;
};

/// M = WWᵀ for the effective map of a globally linear head.
MetricMatrix metric_matrix(const HeadParams& head);
MetricMatrix metric_matrix(const Matrix& w);

/// max |(I+αW)(I+αW)ᵀ − (I + α(W+Wᵀ) + α²WWᵀ)|.
double residual_metric_decomposition_check(const Matrix& w, double alpha);

/// 1 − (document tokens with a nonzero MaxSim gradient row) / n.
double winner_sparsity(const TokenMatrix& q, const TokenMatrix& d);

struct JacobianCheck {
  Matrix analytic;  // d×k, J(a, c) = ∂y_c / ∂x_a
  Matrix numeric;
  double max_rel_error = 0.0;
  /// Only for identity activation: analytic J at x equals J at a second
  /// point bit for bit.
  std::optional<bool> input_independent;
};

/// Depth-2 FFN heads only (with or without residual and bias). `x` is 1×d.
JacobianCheck jacobian_check(const HeadParams& head, const Matrix& x, double h = 1e-5);

/// Depth-1 GLU with identity gate and no bias. Max residual between the
/// pre-normalization output and the explicit quadratic forms.
double glu_bilinear_check(const HeadParams& head, const Matrix& x);

struct GradientAudit {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  std::size_t parameters_checked = 0;
  /// Document tokens (over all candidates) expected to carry zero gradient.
  std::size_t nonwinner_rows = 0;
  /// Of those, rows whose embedding gradient was not exactly zero.
  std::size_t nonwinner_rows_nonzero = 0;
  std::size_t winner_rows = 0;
  std::optional<std::string> nan_location;
  bool pass = false;
};

/// Full-pipeline check of the KL loss on one tuple: autodiff vs central
/// differences on every head parameter, and exact zero gradient on the raw
/// embeddings of non-winning document tokens.
GradientAudit head_gradient_audit(const HeadParams& head, const TrainingTuple& tuple,
                                  double h = 1e-5, double tolerance = 1e-4);

/// Smallest distance from a point where the loss is not differentiable:
/// ReLU pre-activations at 0 and MaxSim winner ties. Finite differences are
/// unreliable when this is below the step size.
double nondifferentiability_margin(const HeadParams& head, const TrainingTuple& tuple);

/// Parameters whose ±h probe moves some ReLU pre-activation across 0 or
/// changes some MaxSim winner. Central differences are only meaningful on
/// the parameters where this does not happen.
std::size_t fd_kink_crossings(const HeadParams& head, const TrainingTuple& tuple, double h);

/// Standard report for a head, using `tuple` for the gradient checks and a
/// seeded generator for the random-instance identities.
DiagnosticsReport run_diagnostics(const HeadParams& head, const TrainingTuple& tuple,
                                  std::uint64_t seed);

}  // namespace colproj
