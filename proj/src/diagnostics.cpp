#include "colproj/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "colproj/errors.hpp"
#include "colproj/finite_diff.hpp"
#include "colproj/rng.hpp"
#include "colproj/svd.hpp"

namespace colproj {

namespace {

Matrix row_sims(const Matrix& q_hat, const Matrix& d_hat) { return matmul_nt(q_hat, d_hat); }

// Plain forward pass mirroring head_project that hands every pre-activation
// fed to a ReLU to `track`. Exact zeros behind an off ReLU gate are skipped:
// the output there is locally constant, not at a kink.
template <typename Track>
Matrix project_tracking_relu(const HeadParams& head, const Matrix& x, Track&& track) {
  const HeadConfig& c = head.config();
  const HeadLayout& layout = head.layout();
  const bool gated_relu = c.family == HeadFamily::glu && c.gate == Activation::relu;
  Matrix h = x;
  for (std::size_t i = 0; i < c.depth; ++i) {
    const auto& slots = layout.layers[i];
    Matrix z = matmul(h, head.tensor(slots.weight));
    if (slots.bias) z = add_row_bias(z, head.tensor(*slots.bias));
    Matrix g;
    if (c.family == HeadFamily::glu) {
      g = matmul(h, head.tensor(*slots.gate_weight));
      if (slots.gate_bias) g = add_row_bias(g, head.tensor(*slots.gate_bias));
      if (c.gate == Activation::relu) {
        for (double v : g.values()) track(v);
      }
      z = elementwise_mul(z, apply_activation(g, c.gate));
    }
    if (i + 1 < c.depth && c.activation != Activation::identity) {
      if (c.activation == Activation::relu) {
        for (std::size_t e = 0; e < z.size(); ++e) {
          if (gated_relu && g.values()[e] <= 0.0) continue;
          track(z.values()[e]);
        }
      }
      z = apply_activation(z, c.activation);
    }
    if (slots.alpha) {
      const Matrix shortcut = i == 0 ? matmul(h, head.tensor(*layout.upcast)) : h;
      z = add(shortcut, scale(z, head.tensor(*slots.alpha)(0, 0)));
    }
    h = std::move(z);
  }
  return h;
}

// Which side of every kink the tuple sits on: ReLU signs, then the MaxSim
// winner of each query row against each candidate.
std::vector<int> kink_signature(const HeadParams& head, const TrainingTuple& tuple) {
  std::vector<int> sig;
  auto track = [&sig](double v) { sig.push_back(v > 0.0 ? 1 : (v < 0.0 ? -1 : 0)); };
  const Matrix q_hat = row_l2_normalize(project_tracking_relu(head, tuple.query, track));
  for (const Matrix& cand : tuple.candidates) {
    const Matrix sims = row_sims(q_hat, row_l2_normalize(project_tracking_relu(head, cand, track)));
    for (std::size_t i = 0; i < sims.rows(); ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < sims.cols(); ++j) {
        if (sims(i, j) > sims(i, best)) best = j;
      }
      sig.push_back(static_cast<int>(best));
    }
  }
  return sig;
}

std::vector<double> matrix_values(const Matrix& m) { return {m.values().begin(), m.values().end()}; }

}  // namespace

bool DiagnosticsReport::all_pass() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.pass; });
}

nlohmann::json DiagnosticsReport::to_json() const {
  nlohmann::json j;
  j["checks"] = nlohmann::json::array();
  for (const auto& c : checks) {
    j["checks"].push_back({{"name", c.name},
                           {"paper_ref", c.paper_ref},
                           {"inputs", c.inputs},
                           {"measured", c.measured},
                           {"tolerance", c.tolerance},
                           {"pass", c.pass}});
  }
  j["all_pass"] = all_pass();
  return j;
}

NuclearNormCheck nuclear_norm_bound_check(const Matrix& w1, const Matrix& w2) {
  if (w1.cols() != w2.rows()) {
    throw ShapeError("nuclear_norm_bound_check: " + w1.shape_string() + " · " +
                     w2.shape_string());
  }
  NuclearNormCheck r;
  r.nuclear = nuclear_norm(matmul(w1, w2));
  const double f1 = frobenius_norm(w1);
  const double f2 = frobenius_norm(w2);
  r.frob_product = f1 * f2;
  r.am_gm = 0.5 * (f1 * f1 + f2 * f2);
  r.slack_first = r.frob_product - r.nuclear;
  r.slack_second = r.am_gm - r.frob_product;
  return r;
}

double spectral_concentration(const Matrix& w) {
  const auto s = singular_values(w);
  const double total = std::accumulate(s.begin(), s.end(), 0.0);
  return total > 0.0 ? s.front() / total : 0.0;
}

MetricMatrix metric_matrix(const Matrix& w) {
  MetricMatrix r;
  r.m = matmul_nt(w, w);
  r.trace = trace(r.m);
  for (std::size_t i = 0; i < r.m.rows(); ++i) r.allocation.push_back(r.m(i, i));
  r.symmetry_residual = max_abs_diff(r.m, transpose(r.m));
  // Eigenvalues of WWᵀ are the squared singular values of W, padded with
  // zeros up to d.
  for (double s : singular_values(w)) r.eigenvalues.push_back(s * s);
  r.eigenvalues.resize(r.m.rows(), 0.0);
  return r;
}

MetricMatrix metric_matrix(const HeadParams& head) { return metric_matrix(effective_linear_map(head)); }

double residual_metric_decomposition_check(const Matrix& w, double alpha) {
  if (w.rows() != w.cols()) {
    throw ContractError("residual_metric_decomposition_check: W must be square, got " +
                        w.shape_string());
  }
  const Matrix eye = Matrix::identity(w.rows());
  const Matrix a = add(eye, scale(w, alpha));
  const Matrix lhs = matmul_nt(a, a);
  const Matrix rhs = add(add(eye, scale(add(w, transpose(w)), alpha)),
                         scale(matmul_nt(w, w), alpha * alpha));
  return max_abs_diff(lhs, rhs);
}

double winner_sparsity(const TokenMatrix& q, const TokenMatrix& d) {
  const MaxSimGrad g = maxsim_grad(q, d);
  std::size_t nonzero = 0;
  for (std::size_t j = 0; j < g.dd.rows(); ++j) {
    const auto row = g.dd.row(j);
    if (std::any_of(row.begin(), row.end(), [](double v) { return v != 0.0; })) ++nonzero;
  }
  return 1.0 - static_cast<double>(nonzero) / static_cast<double>(d.token_count());
}

JacobianCheck jacobian_check(const HeadParams& head, const Matrix& x, double h) {
  const HeadConfig& c = head.config();
  if (c.family != HeadFamily::ffn || c.depth != 2) {
    throw ContractError("jacobian_check: needs a depth-2 FFN head, got family=" +
                        to_string(c.family) + " depth=" + std::to_string(c.depth));
  }
  if (x.rows() != 1 || x.cols() != c.input_dim) {
    throw ShapeError("jacobian_check: x must be 1x" + std::to_string(c.input_dim) + ", got " +
                     x.shape_string());
  }
  const HeadLayout& layout = head.layout();
  const Matrix& w1 = head.tensor(layout.layers[0].weight);
  const Matrix& w2 = head.tensor(layout.layers[1].weight);

  auto analytic_at = [&](const Matrix& point) {
    Matrix z = matmul(point, w1);
    if (layout.layers[0].bias) z = add_row_bias(z, head.tensor(*layout.layers[0].bias));
    Matrix scaled = w1;  // W₁·Diag(φ′(z))
    const double alpha = layout.layers[0].alpha ? head.tensor(*layout.layers[0].alpha)(0, 0) : 1.0;
    for (std::size_t a = 0; a < scaled.rows(); ++a) {
      for (std::size_t j = 0; j < scaled.cols(); ++j) {
        scaled(a, j) *= alpha * activate_derivative(c.activation, z(0, j));
      }
    }
    if (layout.upcast) scaled = add(head.tensor(*layout.upcast), scaled);
    return matmul(scaled, w2);
  };

  JacobianCheck r;
  r.analytic = analytic_at(x);
  r.numeric = Matrix(c.input_dim, c.output_dim);
  for (std::size_t a = 0; a < c.input_dim; ++a) {
    Matrix plus = x, minus = x;
    plus(0, a) += h;
    minus(0, a) -= h;
    const Matrix yp = head_project(head, plus);
    const Matrix ym = head_project(head, minus);
    for (std::size_t k = 0; k < c.output_dim; ++k) {
      r.numeric(a, k) = (yp(0, k) - ym(0, k)) / (2.0 * h);
    }
  }
  r.max_rel_error = max_relative_error(r.analytic, r.numeric);
  if (c.activation == Activation::identity) {
    Matrix other = x;
    for (double& v : other.values()) v = 0.5 - v;
    r.input_independent = analytic_at(other) == r.analytic;
  }
  return r;
}

double glu_bilinear_check(const HeadParams& head, const Matrix& x) {
  const HeadConfig& c = head.config();
  if (c.family != HeadFamily::glu || c.depth != 1 || c.gate != Activation::identity ||
      c.has_bias() || c.residual) {
    throw ContractError(
        "glu_bilinear_check: needs a depth-1 GLU head with identity gate, no bias, no residual");
  }
  if (x.rows() != 1 || x.cols() != c.input_dim) {
    throw ShapeError("glu_bilinear_check: x must be 1x" + std::to_string(c.input_dim) +
                     ", got " + x.shape_string());
  }
  const HeadLayout& layout = head.layout();
  const Matrix& wv = head.tensor(layout.layers[0].weight);
  const Matrix& wg = head.tensor(*layout.layers[0].gate_weight);
  const Matrix y = head_project(head, x);
  const std::size_t d = c.input_dim;
  double worst = 0.0;
  for (std::size_t col = 0; col < c.output_dim; ++col) {
    // xᵀ (W_v[:,c] W_g[:,c]ᵀ) x
    double q = 0.0;
    for (std::size_t s = 0; s < d; ++s) {
      for (std::size_t t = 0; t < d; ++t) q += x(0, s) * wv(s, col) * wg(t, col) * x(0, t);
    }
    worst = std::max(worst, std::abs(y(0, col) - q));
  }
  return worst;
}

double nondifferentiability_margin(const HeadParams& head, const TrainingTuple& tuple) {
  double margin = std::numeric_limits<double>::infinity();
  auto track = [&margin](double v) { margin = std::min(margin, std::abs(v)); };
  const Matrix q_hat = row_l2_normalize(project_tracking_relu(head, tuple.query, track));
  for (const Matrix& cand : tuple.candidates) {
    const Matrix d_hat = row_l2_normalize(project_tracking_relu(head, cand, track));
    if (d_hat.rows() < 2) continue;
    const Matrix sims = row_sims(q_hat, d_hat);
    for (std::size_t i = 0; i < sims.rows(); ++i) {
      std::vector<double> row = matrix_values(sims.slice_rows(i, i + 1));
      std::partial_sort(row.begin(), row.begin() + 2, row.end(), std::greater<>());
      margin = std::min(margin, row[0] - row[1]);
    }
  }
  return margin;
}

std::size_t fd_kink_crossings(const HeadParams& head, const TrainingTuple& tuple, double h) {
  const std::vector<int> base = kink_signature(head, tuple);
  HeadParams probe = head;
  std::size_t crossings = 0;
  for (std::size_t t = 0; t < probe.tensors().size(); ++t) {
    Matrix& value = probe.tensor(t);
    for (std::size_t e = 0; e < value.size(); ++e) {
      const double original = value.values()[e];
      value.values()[e] = original + h;
      bool crossed = kink_signature(probe, tuple) != base;
      value.values()[e] = original - h;
      crossed = crossed || kink_signature(probe, tuple) != base;
      value.values()[e] = original;
      if (crossed) ++crossings;
    }
  }
  return crossings;
}

GradientAudit head_gradient_audit(const HeadParams& head, const TrainingTuple& tuple, double h,
                                  double tolerance) {
  tuple.validate();
  GradientAudit audit;

  // (a) parameters: autodiff vs central differences.
  ad::Tape tape;
  const BoundHead bound = bind_head(tape, head, true);
  const TrainingTuple* batch[] = {&tuple};
  const ad::Var loss = batch_loss(bound, batch);
  if (!std::isfinite(loss.value()(0, 0))) {
    audit.nan_location = "loss";
    return audit;
  }
  const ad::Gradients grads = tape.backward(loss);

  HeadParams probe = head;
  for (std::size_t t = 0; t < head.tensors().size(); ++t) {
    const Matrix& analytic = grads[bound.tensors[t]];
    Matrix& value = probe.tensor(t);
    for (std::size_t e = 0; e < value.size(); ++e) {
      const double original = value.values()[e];
      value.values()[e] = original + h;
      const double up = tuple_loss(probe, tuple);
      value.values()[e] = original - h;
      const double down = tuple_loss(probe, tuple);
      value.values()[e] = original;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic.values()[e];
      if (!std::isfinite(a) || !std::isfinite(numeric)) {
        audit.nan_location = head.tensors()[t].name + "[" + std::to_string(e) + "]";
        return audit;
      }
      const double err = relative_error(a, numeric);
      if (err > audit.max_rel_error || audit.parameters_checked == 0) {
        audit.max_rel_error = err;
        audit.worst_tensor = head.tensors()[t].name;
        audit.worst_index = e;
      }
      ++audit.parameters_checked;
    }
  }

  // (b) raw document-token embeddings: non-winners get exactly zero.
  ad::Tape emb_tape;
  const BoundHead frozen = bind_head(emb_tape, head, false);
  const ad::Var q_hat = head_forward(frozen, emb_tape.constant(tuple.query));
  std::vector<ad::Var> leaves;
  std::vector<ad::Var> scores;
  for (const Matrix& cand : tuple.candidates) {
    leaves.push_back(emb_tape.leaf(cand));
    scores.push_back(maxsim(q_hat, head_forward(frozen, leaves.back())));
  }
  const ad::Var emb_loss = kl_div_loss(ad::concat_scalars(scores), tuple.teacher_scores);
  const ad::Gradients emb_grads = emb_tape.backward(emb_loss);

  constexpr double kTieBand = 1e-9;
  for (std::size_t ci = 0; ci < tuple.candidates.size(); ++ci) {
    const Matrix d_hat = head_forward(head, tuple.candidates[ci]);
    const Matrix sims = row_sims(q_hat.value(), d_hat);
    std::set<std::size_t> winners_or_tied;
    std::set<std::size_t> winner_set;
    for (std::size_t i = 0; i < sims.rows(); ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < sims.cols(); ++j) {
        if (sims(i, j) > sims(i, best)) best = j;
      }
      winner_set.insert(best);
      for (std::size_t j = 0; j < sims.cols(); ++j) {
        if (sims(i, best) - sims(i, j) <= kTieBand) winners_or_tied.insert(j);
      }
    }
    audit.winner_rows += winner_set.size();
    const Matrix& g = emb_grads[leaves[ci]];
    for (std::size_t j = 0; j < g.rows(); ++j) {
      const auto row = g.row(j);
      if (std::any_of(row.begin(), row.end(), [](double v) { return !std::isfinite(v); })) {
        audit.nan_location = "candidate " + std::to_string(ci) + " token " + std::to_string(j);
        return audit;
      }
      if (winners_or_tied.count(j)) continue;
      ++audit.nonwinner_rows;
      if (std::any_of(row.begin(), row.end(), [](double v) { return v != 0.0; })) {
        ++audit.nonwinner_rows_nonzero;
      }
    }
  }

  audit.pass = audit.max_rel_error <= tolerance && audit.nonwinner_rows_nonzero == 0;
  return audit;
}

DiagnosticsReport run_diagnostics(const HeadParams& head, const TrainingTuple& tuple,
                                  std::uint64_t seed) {
  const HeadConfig& c = head.config();
  const std::size_t d = c.input_dim;
  const std::size_t k = c.output_dim;
  Rng rng(derive_seed(seed, 0xd1a6));
  DiagnosticsReport report;

  // Singular spectra of every weight matrix: Parseval and concentration.
  {
    CheckResult r{"singular_spectrum_parseval", "sum of squared singular values equals the squared Frobenius norm", {}, {}, 1e-8, true};
    nlohmann::json per = nlohmann::json::array();
    for (const auto& t : head.tensors()) {
      if (!is_weight_matrix(t.role)) continue;
      const auto s = singular_values(t.value);
      double ss = 0.0;
      for (double v : s) ss += v * v;
      const double f2 = frobenius_norm(t.value) * frobenius_norm(t.value);
      const double resid = std::abs(ss - f2) / std::max(1.0, f2);
      per.push_back({{"tensor", t.name}, {"singular_values", s}, {"relative_residual", resid},
                     {"concentration", spectral_concentration(t.value)}});
      r.pass = r.pass && resid <= r.tolerance;
    }
    r.inputs = {{"source", "head weight matrices"}};
    r.measured = per;
    report.checks.push_back(std::move(r));
  }

  // Nuclear-norm chain on consecutive layer pairs (depth 1: W and I_k).
  {
    CheckResult r{"nuclear_norm_chain", "factorized heads bound the nuclear norm of the product by Frobenius norms and their AM-GM mean", {}, {}, 1e-8, true};
    std::vector<std::pair<std::string, std::pair<Matrix, Matrix>>> pairs;
    const auto& layers = head.layout().layers;
    if (c.depth == 1) {
      pairs.push_back({"layers.0.weight*I", {head.tensor(layers[0].weight), Matrix::identity(k)}});
    }
    for (std::size_t i = 0; i + 1 < c.depth; ++i) {
      pairs.push_back({"layers." + std::to_string(i) + ".weight*layers." + std::to_string(i + 1) + ".weight",
                       {head.tensor(layers[i].weight), head.tensor(layers[i + 1].weight)}});
    }
    nlohmann::json per = nlohmann::json::array();
    for (const auto& [name, p] : pairs) {
      const NuclearNormCheck n = nuclear_norm_bound_check(p.first, p.second);
      per.push_back({{"pair", name}, {"nuclear", n.nuclear}, {"frob_product", n.frob_product},
                     {"am_gm", n.am_gm}, {"slack_first", n.slack_first},
                     {"slack_second", n.slack_second},
                     {"product_concentration", spectral_concentration(matmul(p.first, p.second))}});
      r.pass = r.pass && n.slack_first >= -r.tolerance && n.slack_second >= -r.tolerance;
    }
    r.inputs = {{"source", "consecutive head layer weights"}};
    r.measured = per;
    report.checks.push_back(std::move(r));
  }

  // Fixed metric and trace allocation.
  {
    CheckResult r{"metric_trace_identity", "a linear head measures cosine similarity under the fixed metric M = WW^T whose diagonal allocation sums to its trace", {}, {}, 1e-10, false};
    Matrix w;
    try {
      w = effective_linear_map(head);
      r.inputs = {{"source", "effective linear map of the head"}};
    } catch (const ContractError& e) {
      w = rng.normal_matrix(d, k);
      r.inputs = {{"source", "random d x k matrix"}, {"reason", e.what()}};
    }
    const MetricMatrix mm = metric_matrix(w);
    const double alloc = std::accumulate(mm.allocation.begin(), mm.allocation.end(), 0.0);
    const double resid = std::abs(alloc - mm.trace);
    const double min_eig = *std::min_element(mm.eigenvalues.begin(), mm.eigenvalues.end());
    r.measured = {{"trace", mm.trace}, {"allocation", mm.allocation},
                  {"allocation_sum_residual", resid}, {"symmetry_residual", mm.symmetry_residual},
                  {"min_eigenvalue", min_eig}, {"max_eigenvalue", mm.eigenvalues.front()}};
    r.pass = resid <= r.tolerance * std::max(1.0, mm.trace) &&
             mm.symmetry_residual <= r.tolerance && min_eig >= -r.tolerance;
    report.checks.push_back(std::move(r));
  }

  // Residual metric expansion.
  {
    CheckResult r{"residual_metric_decomposition", "the metric of a residual map I + aW expands to I + a(W + W^T) + a^2 WW^T", {}, {}, 1e-10, false};
    double alpha = 0.7;
    if (c.residual) alpha = head.tensor(*head.layout().layers[0].alpha)(0, 0);
    const Matrix w = rng.normal_matrix(d, d);
    const double resid = residual_metric_decomposition_check(w, alpha);
    r.inputs = {{"source", "random d x d matrix"}, {"alpha", alpha}};
    r.measured = {{"max_abs_residual", resid}};
    r.pass = resid <= r.tolerance;
    report.checks.push_back(std::move(r));
  }

  // Identity-gated GLU is a bilinear form.
  {
    CheckResult r{"glu_bilinear_form", "a GLU with identity gate reduces to a bilinear layer", {}, {}, 1e-10, false};
    HeadConfig gc = HeadConfig::linear(d, k);
    gc.family = HeadFamily::glu;
    gc.gate = Activation::identity;
    const HeadParams glu = build_head(gc, rng.next_u64());
    const Matrix x = rng.normal_matrix(1, d);
    const double resid = glu_bilinear_check(glu, x);
    r.inputs = {{"source", "random depth-1 identity-gated GLU head"}};
    r.measured = {{"max_abs_residual", resid}};
    r.pass = resid <= r.tolerance;
    report.checks.push_back(std::move(r));
  }

  // Input-dependent Jacobian of a depth-2 FFN.
  {
    CheckResult r{"jacobian", "a depth-2 FFN head has Jacobian W1 Diag(phi'(x W1)) W2, constant when phi is the identity", {}, {}, 1e-5, false};
    const bool own = c.family == HeadFamily::ffn && c.depth == 2;
    HeadParams probe = head;
    if (!own) {
      HeadConfig jc = HeadConfig::linear(d, k);
      jc.depth = 2;
      jc.rho = 2.0;
      jc.activation = Activation::gelu;
      probe = build_head(jc, rng.next_u64());
    }
    const Matrix x = tuple.query.slice_rows(0, 1);
    const JacobianCheck j = jacobian_check(probe, x);
    r.inputs = {{"source", own ? "this head" : "random depth-2 GELU FFN head"},
                {"x", "first query token of the audit tuple"}};
    r.measured = {{"max_rel_error", j.max_rel_error}};
    r.pass = j.max_rel_error <= r.tolerance;
    if (j.input_independent) {
      r.measured["input_independent"] = *j.input_independent;
      r.pass = r.pass && *j.input_independent;
    }
    report.checks.push_back(std::move(r));
  }

  // Winner sparsity per candidate.
  {
    CheckResult r{"winner_sparsity", "MaxSim passes gradient only to the winning document token of each query token", {}, {}, 0.0, true};
    const TokenMatrix q(head_forward(head, tuple.query));
    nlohmann::json per = nlohmann::json::array();
    for (const Matrix& cand : tuple.candidates) {
      const TokenMatrix dt(head_forward(head, cand));
      const auto w = winners(q, dt);
      const std::set<std::size_t> distinct(w.begin(), w.end());
      const double expected =
          1.0 - static_cast<double>(distinct.size()) / static_cast<double>(dt.token_count());
      const double measured = winner_sparsity(q, dt);
      per.push_back({{"sparsity", measured}, {"distinct_winners", distinct.size()},
                     {"doc_tokens", dt.token_count()}});
      r.pass = r.pass && measured == expected;
    }
    r.inputs = {{"source", "audit tuple projected through the head"}};
    r.measured = per;
    report.checks.push_back(std::move(r));
  }

  // Full-pipeline gradient audit.
  {
    CheckResult r{"head_gradient_audit", "winner-takes-all gradients restrict the parameter update path; autodiff matches finite differences", {}, {}, 1e-4, false};
    const GradientAudit a = head_gradient_audit(head, tuple);
    r.inputs = {{"source", "audit tuple"}, {"fd_step", 1e-5},
                {"nondifferentiability_margin", nondifferentiability_margin(head, tuple)},
                {"fd_kink_crossings", fd_kink_crossings(head, tuple, 1e-5)}};
    r.measured = {{"max_rel_error", a.max_rel_error}, {"worst_tensor", a.worst_tensor},
                  {"worst_index", a.worst_index}, {"parameters_checked", a.parameters_checked},
                  {"winner_rows", a.winner_rows}, {"nonwinner_rows", a.nonwinner_rows},
                  {"nonwinner_rows_nonzero", a.nonwinner_rows_nonzero}};
    if (a.nan_location) r.measured["nan_location"] = *a.nan_location;
    r.pass = a.pass;
    report.checks.push_back(std::move(r));
  }
  return report;
}

}  // namespace colproj
