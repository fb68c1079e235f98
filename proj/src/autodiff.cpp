#include "colproj/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "colproj/errors.hpp"

namespace colproj::ad {

namespace {

Tape& tape_of(Var a) {
  if (a.tape == nullptr) {
    throw ContractError("operation on a Var without a tape");
  }
  return *a.tape;
}

Tape& common_tape(Var a, Var b) {
  if (a.tape != b.tape) {
    throw ContractError("operands recorded on different tapes");
  }
  return tape_of(a);
}

}  // namespace

const Matrix& Var::value() const { return tape_of(*this).value(*this); }

bool Tape::Accumulator::wants(std::size_t id) const { return tape_.nodes_[id].requires_grad; }

void Tape::Accumulator::add(std::size_t id, const Matrix& contribution) {
  if (!wants(id)) {
    return;
  }
  Matrix& g = grads_[id];
  if (g.empty() && !contribution.empty()) {
    g = contribution;
    return;
  }
  if (!g.same_shape(contribution)) {
    throw ShapeError("gradient contribution " + contribution.shape_string() + " for value " +
                     g.shape_string());
  }
  auto gv = g.values();
  auto cv = contribution.values();
  for (std::size_t i = 0; i < gv.size(); ++i) {
    gv[i] += cv[i];
  }
}

Var Tape::leaf(Matrix value) {
  nodes_.push_back(Node{std::move(value), true, {}});
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), false, {}});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Matrix value, std::span<const Var> parents, BackwardFn backward) {
  bool needs = false;
  for (const Var& p : parents) {
    if (p.tape != this) {
      throw ContractError("operand recorded on a different tape");
    }
    needs = needs || nodes_.at(p.id).requires_grad;
  }
  nodes_.push_back(Node{std::move(value), needs, needs ? std::move(backward) : BackwardFn{}});
  return Var{this, nodes_.size() - 1};
}

Gradients Tape::backward(Var loss) const {
  if (loss.tape != this) {
    throw ContractError("loss recorded on a different tape");
  }
  const Matrix& lv = value(loss);
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ContractError("backward requires a scalar loss, got " + lv.shape_string());
  }
  std::vector<Matrix> grads(nodes_.size());
  Accumulator acc(grads, *this);
  if (nodes_[loss.id].requires_grad) {
    grads[loss.id] = Matrix(1, 1, 1.0);
  }
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (n.backward && !grads[i].empty()) {
      n.backward(grads[i], acc);
    }
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (grads[i].empty()) {
      grads[i] = Matrix::zeros(nodes_[i].value.rows(), nodes_[i].value.cols());
    }
  }
  return Gradients(std::move(grads));
}

Var matmul(Var a, Var b) {
  Tape& t = common_tape(a, b);
  Matrix out = colproj::matmul(t.value(a), t.value(b));
  const Var parents[] = {a, b};
  return t.record(std::move(out), parents, [&t, a, b](const Matrix& g, Tape::Accumulator& acc) {
    if (acc.wants(a.id)) acc.add(a.id, colproj::matmul_nt(g, t.value(b)));
    if (acc.wants(b.id)) acc.add(b.id, colproj::matmul_tn(t.value(a), g));
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = common_tape(a, b);
  Matrix out = colproj::matmul_nt(t.value(a), t.value(b));
  const Var parents[] = {a, b};
  return t.record(std::move(out), parents, [&t, a, b](const Matrix& g, Tape::Accumulator& acc) {
    if (acc.wants(a.id)) acc.add(a.id, colproj::matmul(g, t.value(b)));
    if (acc.wants(b.id)) acc.add(b.id, colproj::matmul_tn(g, t.value(a)));
  });
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  const Var parents[] = {a};
  return t.record(colproj::transpose(t.value(a)), parents,
                  [a](const Matrix& g, Tape::Accumulator& acc) {
                    acc.add(a.id, colproj::transpose(g));
                  });
}

Var add(Var a, Var b) {
  Tape& t = common_tape(a, b);
  const Var parents[] = {a, b};
  return t.record(colproj::add(t.value(a), t.value(b)), parents,
                  [a, b](const Matrix& g, Tape::Accumulator& acc) {
                    acc.add(a.id, g);
                    acc.add(b.id, g);
                  });
}

Var subtract(Var a, Var b) {
  Tape& t = common_tape(a, b);
  const Var parents[] = {a, b};
  return t.record(colproj::subtract(t.value(a), t.value(b)), parents,
                  [a, b](const Matrix& g, Tape::Accumulator& acc) {
                    acc.add(a.id, g);
                    if (acc.wants(b.id)) acc.add(b.id, colproj::scale(g, -1.0));
                  });
}

Var scale(Var a, double s) {
  Tape& t = tape_of(a);
  const Var parents[] = {a};
  return t.record(colproj::scale(t.value(a), s), parents,
                  [a, s](const Matrix& g, Tape::Accumulator& acc) {
                    acc.add(a.id, colproj::scale(g, s));
                  });
}

Var scale_by(Var a, Var s) {
  Tape& t = common_tape(a, s);
  const Matrix& sv = t.value(s);
  if (sv.rows() != 1 || sv.cols() != 1) {
    throw ShapeError("scale_by: scalar operand has shape " + sv.shape_string());
  }
  const Var parents[] = {a, s};
  return t.record(colproj::scale(t.value(a), sv(0, 0)), parents,
                  [&t, a, s](const Matrix& g, Tape::Accumulator& acc) {
                    if (acc.wants(a.id)) acc.add(a.id, colproj::scale(g, t.value(s)(0, 0)));
                    if (acc.wants(s.id)) {
                      const auto av = t.value(a).values();
                      const auto gv = g.values();
                      double d = 0.0;
                      for (std::size_t i = 0; i < av.size(); ++i) d += av[i] * gv[i];
                      acc.add(s.id, Matrix(1, 1, d));
                    }
                  });
}

Var elementwise_mul(Var a, Var b) {
  Tape& t = common_tape(a, b);
  const Var parents[] = {a, b};
  return t.record(colproj::elementwise_mul(t.value(a), t.value(b)), parents,
                  [&t, a, b](const Matrix& g, Tape::Accumulator& acc) {
                    if (acc.wants(a.id)) acc.add(a.id, colproj::elementwise_mul(g, t.value(b)));
                    if (acc.wants(b.id)) acc.add(b.id, colproj::elementwise_mul(g, t.value(a)));
                  });
}

Var apply_activation(Var x, Activation kind) {
  Tape& t = tape_of(x);
  const Var parents[] = {x};
  return t.record(colproj::apply_activation(t.value(x), kind), parents,
                  [&t, x, kind](const Matrix& g, Tape::Accumulator& acc) {
                    if (kind == Activation::identity) {
                      acc.add(x.id, g);
                      return;
                    }
                    Matrix d = t.value(x);
                    auto dv = d.values();
                    const auto gv = g.values();
                    for (std::size_t i = 0; i < dv.size(); ++i) {
                      dv[i] = gv[i] * activate_derivative(kind, dv[i]);
                    }
                    acc.add(x.id, d);
                  });
}

Var add_row_bias(Var x, Var bias) {
  Tape& t = common_tape(x, bias);
  const Var parents[] = {x, bias};
  return t.record(colproj::add_row_bias(t.value(x), t.value(bias)), parents,
                  [x, bias](const Matrix& g, Tape::Accumulator& acc) {
                    acc.add(x.id, g);
                    if (acc.wants(bias.id)) {
                      Matrix db(1, g.cols());
                      for (std::size_t i = 0; i < g.rows(); ++i) {
                        const auto r = g.row(i);
                        for (std::size_t j = 0; j < r.size(); ++j) db(0, j) += r[j];
                      }
                      acc.add(bias.id, db);
                    }
                  });
}

Var row_l2_normalize(Var x, double eps) {
  Tape& t = tape_of(x);
  const Var parents[] = {x};
  return t.record(
      colproj::row_l2_normalize(t.value(x), eps), parents,
      [&t, x, eps](const Matrix& g, Tape::Accumulator& acc) {
        if (!acc.wants(x.id)) return;
        const Matrix& xv = t.value(x);
        Matrix dx(xv.rows(), xv.cols());
        for (std::size_t i = 0; i < xv.rows(); ++i) {
          const auto xr = xv.row(i);
          const auto gr = g.row(i);
          double sq = 0.0;
          for (double v : xr) sq += v * v;
          const double norm = std::sqrt(sq);
          auto dr = dx.row(i);
          if (norm <= eps) {
            for (std::size_t j = 0; j < xr.size(); ++j) dr[j] = gr[j] / eps;
            continue;
          }
          double yg = 0.0;
          for (std::size_t j = 0; j < xr.size(); ++j) yg += xr[j] / norm * gr[j];
          for (std::size_t j = 0; j < xr.size(); ++j) dr[j] = (gr[j] - xr[j] / norm * yg) / norm;
        }
        acc.add(x.id, dx);
      });
}

Var slice_rows(Var x, std::size_t begin, std::size_t end) {
  Tape& t = tape_of(x);
  const Var parents[] = {x};
  return t.record(t.value(x).slice_rows(begin, end), parents,
                  [&t, x, begin](const Matrix& g, Tape::Accumulator& acc) {
                    if (!acc.wants(x.id)) return;
                    const Matrix& xv = t.value(x);
                    Matrix dx(xv.rows(), xv.cols());
                    for (std::size_t i = 0; i < g.rows(); ++i) {
                      std::copy(g.row(i).begin(), g.row(i).end(), dx.row(begin + i).begin());
                    }
                    acc.add(x.id, dx);
                  });
}

Var row_max(Var x) {
  Tape& t = tape_of(x);
  const Matrix& xv = t.value(x);
  if (xv.cols() == 0) {
    throw ShapeError("row_max: matrix has no columns");
  }
  Matrix out(xv.rows(), 1);
  std::vector<std::size_t> argmax(xv.rows());
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    const auto r = xv.row(i);
    std::size_t best = 0;
    for (std::size_t j = 1; j < r.size(); ++j) {
      if (r[j] > r[best]) best = j;
    }
    argmax[i] = best;
    out(i, 0) = r[best];
  }
  const Var parents[] = {x};
  return t.record(std::move(out), parents,
                  [&t, x, argmax = std::move(argmax)](const Matrix& g, Tape::Accumulator& acc) {
                    const Matrix& xv = t.value(x);
                    Matrix dx(xv.rows(), xv.cols());
                    for (std::size_t i = 0; i < argmax.size(); ++i) dx(i, argmax[i]) = g(i, 0);
                    acc.add(x.id, dx);
                  });
}

Var sum(Var x) {
  Tape& t = tape_of(x);
  const Var parents[] = {x};
  return t.record(Matrix(1, 1, colproj::sum(t.value(x))), parents,
                  [&t, x](const Matrix& g, Tape::Accumulator& acc) {
                    const Matrix& xv = t.value(x);
                    acc.add(x.id, Matrix(xv.rows(), xv.cols(), g(0, 0)));
                  });
}

Var concat_scalars(std::span<const Var> scalars) {
  if (scalars.empty()) {
    throw ShapeError("concat_scalars: no operands");
  }
  Tape& t = tape_of(scalars.front());
  Matrix out(1, scalars.size());
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    const Matrix& v = common_tape(scalars.front(), scalars[i]).value(scalars[i]);
    if (v.rows() != 1 || v.cols() != 1) {
      throw ShapeError("concat_scalars: operand " + std::to_string(i) + " has shape " +
                       v.shape_string());
    }
    out(0, i) = v(0, 0);
  }
  std::vector<Var> ids(scalars.begin(), scalars.end());
  return t.record(std::move(out), scalars,
                  [ids = std::move(ids)](const Matrix& g, Tape::Accumulator& acc) {
                    for (std::size_t i = 0; i < ids.size(); ++i) {
                      acc.add(ids[i].id, Matrix(1, 1, g(0, i)));
                    }
                  });
}

Var log_softmax(Var x) {
  Tape& t = tape_of(x);
  const Matrix& xv = t.value(x);
  if (xv.rows() != 1 || xv.cols() == 0) {
    throw ShapeError("log_softmax: expected a non-empty row, got " + xv.shape_string());
  }
  const auto r = xv.row(0);
  const double mx = *std::max_element(r.begin(), r.end());
  double z = 0.0;
  for (double v : r) z += std::exp(v - mx);
  const double log_z = std::log(z);
  Matrix out(1, r.size());
  for (std::size_t j = 0; j < r.size(); ++j) out(0, j) = (r[j] - mx) - log_z;
  const Var parents[] = {x};
  const Var self{&t, t.size()};
  return t.record(std::move(out), parents,
                  [&t, x, self](const Matrix& g, Tape::Accumulator& acc) {
                    const Matrix& lp = t.value(self);
                    double gs = 0.0;
                    for (double v : g.values()) gs += v;
                    Matrix dx(1, lp.cols());
                    for (std::size_t j = 0; j < lp.cols(); ++j) {
                      dx(0, j) = g(0, j) - std::exp(lp(0, j)) * gs;
                    }
                    acc.add(x.id, dx);
                  });
}

Var exp(Var x) {
  Tape& t = tape_of(x);
  Matrix out = t.value(x);
  for (double& v : out.values()) v = std::exp(v);
  const Var parents[] = {x};
  const Var self{&t, t.size()};
  return t.record(std::move(out), parents,
                  [&t, x, self](const Matrix& g, Tape::Accumulator& acc) {
                    acc.add(x.id, colproj::elementwise_mul(g, t.value(self)));
                  });
}

}  // namespace colproj::ad
