#include "colproj/head.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "colproj/errors.hpp"
#include "colproj/head_io.hpp"
#include "test_support.hpp"

namespace colproj {
namespace {

HeadConfig make(std::size_t d, std::size_t k, std::size_t depth, HeadFamily family = HeadFamily::ffn,
                double rho = 1.0, bool residual = false, std::optional<bool> bias = std::nullopt) {
  HeadConfig c;
  c.input_dim = d;
  c.output_dim = k;
  c.depth = depth;
  c.family = family;
  c.rho = rho;
  c.residual = residual;
  c.bias = bias;
  return c;
}

// Counted from the shape chain, independently of HeadLayout.
std::size_t expected_count(const HeadConfig& c) {
  std::vector<std::size_t> dims{c.input_dim};
  const auto m = static_cast<std::size_t>(std::llround(c.rho * c.input_dim));
  for (std::size_t i = 1; i < c.depth; ++i) dims.push_back(m);
  dims.push_back(c.output_dim);
  const std::size_t streams = c.family == HeadFamily::glu ? 2 : 1;
  std::size_t n = 0;
  for (std::size_t i = 0; i < c.depth; ++i) {
    n += streams * dims[i] * dims[i + 1];
    if (c.has_bias()) n += streams * dims[i + 1];
  }
  if (c.residual) n += dims[0] * dims[1] + (c.depth == 1 ? 1 : c.depth - 1);
  return n;
}

// Direct evaluation of the head, without the tape.
Matrix reference_project(const HeadParams& p, const Matrix& x) {
  const HeadConfig& c = p.config();
  const auto& L = p.layout();
  Matrix h = x;
  for (std::size_t i = 0; i < c.depth; ++i) {
    Matrix z(h.rows(), p.tensor(L.layers[i].weight).cols());
    for (std::size_t r = 0; r < h.rows(); ++r) {
      for (std::size_t o = 0; o < z.cols(); ++o) {
        double v = 0, g = 0;
        for (std::size_t a = 0; a < h.cols(); ++a) {
          v += h(r, a) * p.tensor(L.layers[i].weight)(a, o);
          if (L.layers[i].gate_weight) g += h(r, a) * p.tensor(*L.layers[i].gate_weight)(a, o);
        }
        if (L.layers[i].bias) v += p.tensor(*L.layers[i].bias)(0, o);
        if (L.layers[i].gate_bias) g += p.tensor(*L.layers[i].gate_bias)(0, o);
        if (c.family == HeadFamily::glu) v *= activate(c.gate, g);
        if (i + 1 < c.depth) v = activate(c.activation, v);
        z(r, o) = v;
      }
    }
    if (L.layers[i].alpha) {
      const double alpha = p.tensor(*L.layers[i].alpha)(0, 0);
      const Matrix shortcut = i == 0 ? matmul(h, p.tensor(*L.upcast)) : h;
      for (std::size_t e = 0; e < z.size(); ++e) {
        z.values()[e] = shortcut.values()[e] + alpha * z.values()[e];
      }
    }
    h = z;
  }
  return h;
}

TEST(HeadTest, BuildExamples) {
  const HeadParams linear = build_head(make(8, 4, 1), 1);
  ASSERT_EQ(linear.tensors().size(), 1u);
  EXPECT_EQ(linear.tensor(0).rows(), 8u);
  EXPECT_EQ(linear.tensor(0).cols(), 4u);
  EXPECT_EQ(linear.parameter_count(), 32u);

  const HeadParams two = build_head(make(8, 4, 2, HeadFamily::ffn, 2.0, false, false), 1);
  ASSERT_EQ(two.tensors().size(), 2u);
  EXPECT_EQ(two.tensor(0).shape_string(), "8x16");
  EXPECT_EQ(two.tensor(1).shape_string(), "16x4");

  const HeadParams res = build_head(make(8, 4, 2, HeadFamily::ffn, 2.0, true, false), 1);
  const Matrix& up = res.tensor(*res.layout().upcast);
  EXPECT_EQ(up.shape_string(), "8x16");
  for (std::size_t i = 0; i < 8; ++i) {
    for (std::size_t j = 0; j < 16; ++j) EXPECT_EQ(up(i, j), i == j ? 1.0 : 0.0);
  }
}

TEST(HeadTest, ParameterCountExamples) {
  EXPECT_EQ(parameter_count(make(8, 4, 1)), 32u);
  EXPECT_EQ(parameter_count(make(8, 4, 2, HeadFamily::ffn, 2.0, false, false)), 192u);
  EXPECT_EQ(parameter_count(make(8, 4, 1, HeadFamily::glu)), 64u);
}

TEST(HeadTest, ParameterCountMatchesShapeChainOnGrid) {
  for (auto family : {HeadFamily::ffn, HeadFamily::glu}) {
    for (std::size_t depth = 1; depth <= 4; ++depth) {
      for (double rho : {1.0, 1.5, 2.0}) {
        for (bool residual : {false, true}) {
          for (std::optional<bool> bias : {std::optional<bool>{}, std::optional<bool>{true},
                                           std::optional<bool>{false}}) {
            const HeadConfig c = make(6, 4, depth, family, rho, residual, bias);
            EXPECT_EQ(parameter_count(c), expected_count(c)) << c.canonical();
            EXPECT_EQ(build_head(c, 3).parameter_count(), expected_count(c));
          }
        }
      }
    }
  }
}

TEST(HeadTest, BiasDefaultsFollowDepth) {
  EXPECT_FALSE(make(8, 4, 1).has_bias());
  EXPECT_TRUE(make(8, 4, 2).has_bias());
  EXPECT_FALSE(make(8, 4, 2, HeadFamily::ffn, 1.0, false, false).has_bias());
}

TEST(HeadTest, InvalidConfigs) {
  EXPECT_THROW(build_head(make(8, 4, 0), 1), ConfigError);
  EXPECT_THROW(build_head(make(0, 4, 1), 1), ConfigError);
  EXPECT_THROW(build_head(make(8, 4, 2, HeadFamily::ffn, 0.0), 1), ConfigError);
  EXPECT_THROW(build_head(make(8, 4, 2, HeadFamily::ffn, 0.01), 1), ConfigError);  // m = 0
  EXPECT_THROW(build_head(make(8, 20, 2, HeadFamily::ffn, 2.0), 1), ConfigError);  // k > m
  EXPECT_NO_THROW(build_head(make(8, 20, 1), 1));
}

TEST(HeadTest, InitIsSeededAndFanBalanced) {
  const HeadConfig c = make(16, 8, 3, HeadFamily::glu, 2.0, true);
  EXPECT_TRUE(build_head(c, 5) == build_head(c, 5));
  EXPECT_FALSE(build_head(c, 5) == build_head(c, 6));
  const HeadParams p = build_head(c, 5);
  for (const auto& t : p.tensors()) {
    if (t.role == ParamRole::weight || t.role == ParamRole::gate_weight) {
      const double limit = std::sqrt(6.0 / static_cast<double>(t.value.rows() + t.value.cols()));
      EXPECT_LE(max_abs(t.value), limit);
    } else if (t.role == ParamRole::bias || t.role == ParamRole::gate_bias) {
      EXPECT_EQ(max_abs(t.value), 0.0);
    } else if (t.role == ParamRole::alpha) {
      EXPECT_EQ(t.value(0, 0), 1.0);
    }
  }
}

TEST(HeadTest, ForwardExamples) {
  HeadParams id = build_head(make(2, 2, 1), 1);
  id.tensor(0) = Matrix::identity(2);
  const Matrix y = head_forward(id, Matrix::from_rows({{3, 4}}));
  EXPECT_DOUBLE_EQ(y(0, 0), 0.6);
  EXPECT_DOUBLE_EQ(y(0, 1), 0.8);

  HeadConfig gc = make(2, 2, 1, HeadFamily::glu);
  gc.gate = Activation::identity;
  HeadParams glu = build_head(gc, 1);
  glu.tensor(glu.layout().layers[0].weight) = Matrix::identity(2);
  glu.tensor(*glu.layout().layers[0].gate_weight) = Matrix::identity(2);
  EXPECT_EQ(head_project(glu, Matrix::from_rows({{2, 0}})), Matrix::from_rows({{4, 0}}));
  EXPECT_EQ(head_forward(glu, Matrix::from_rows({{2, 0}})), Matrix::from_rows({{1, 0}}));
}

TEST(HeadTest, ResidualWithZeroAlphaPassesUpcastThroughFinalLayer) {
  HeadConfig c = make(4, 3, 2, HeadFamily::ffn, 2.0, true);
  c.alpha_init = 0.0;
  HeadParams p = build_head(c, 9);
  // Final layer: top-k rows of the identity.
  p.tensor(p.layout().layers[1].weight) = Matrix::identity(8, 3);
  Rng rng(1);
  const Matrix x = testing::random_matrix(rng, 5, 4);
  const Matrix y = head_forward(p, x);
  const Matrix expected = row_l2_normalize(matmul(x, Matrix::identity(4, 3)));
  EXPECT_LE(max_abs_diff(y, expected), 1e-15);
  // Intermediate weights do not matter when α = 0.
  p.tensor(p.layout().layers[0].weight) = Matrix::zeros(4, 8);
  EXPECT_EQ(head_forward(p, x), y);
}

TEST(HeadTest, BaselineEquivalenceAndScaleInvariance) {
  Rng rng(4);
  const HeadParams p = build_head(make(6, 3, 1), 2);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix x = testing::random_matrix(rng, 4, 6);
    const Matrix y = head_forward(p, x);
    EXPECT_EQ(y, row_l2_normalize(matmul(x, p.tensor(0))));
    const double c = rng.uniform(0.1, 10.0);
    EXPECT_LE(max_abs_diff(head_forward(p, scale(x, c)), y), 1e-12);
  }
}

TEST(HeadTest, ForwardMatchesReferenceOnGrid) {
  Rng rng(12);
  for (auto family : {HeadFamily::ffn, HeadFamily::glu}) {
    for (std::size_t depth = 1; depth <= 4; ++depth) {
      for (bool residual : {false, true}) {
        for (Activation a : {Activation::identity, Activation::relu, Activation::gelu,
                             Activation::silu, Activation::sigmoid}) {
          HeadConfig c = make(5, 3, depth, family, 2.0, residual);
          c.activation = a;
          c.gate = a;
          const HeadParams p = testing::jittered_head(c, 17);
          const Matrix x = testing::random_matrix(rng, 4, 5);
          const Matrix y = head_project(p, x);
          EXPECT_LE(max_abs_diff(y, reference_project(p, x)), 1e-12) << c.canonical();
          const Matrix n = head_forward(p, x);
          for (std::size_t r = 0; r < n.rows(); ++r) {
            double ss = 0, raw = 0;
            for (double v : n.row(r)) ss += v * v;
            for (double v : y.row(r)) raw += v * v;
            // ReLU-gated rows can vanish entirely; those stay zero.
            EXPECT_NEAR(std::sqrt(ss), raw > 1e-24 ? 1.0 : 0.0, 1e-12);
          }
        }
      }
    }
  }
}

TEST(HeadTest, ForwardShapeError) {
  const HeadParams p = build_head(make(6, 3, 1), 2);
  EXPECT_THROW(head_forward(p, Matrix(2, 5)), ShapeError);
}

TEST(HeadTest, EffectiveLinearMapExamples) {
  HeadParams one = build_head(make(4, 3, 1), 1);
  EXPECT_EQ(effective_linear_map(one), one.tensor(0));

  HeadParams two = build_head(make(3, 3, 2, HeadFamily::ffn, 1.0, false, false), 1);
  two.tensor(0) = scale(Matrix::identity(3), 2.0);
  two.tensor(1) = scale(Matrix::identity(3), 3.0);
  EXPECT_EQ(effective_linear_map(two), scale(Matrix::identity(3), 6.0));

  Rng rng(8);
  const HeadParams three = build_head(make(6, 3, 3, HeadFamily::ffn, 1.5, false, false), 4);
  const Matrix x = testing::random_matrix(rng, 7, 6);
  EXPECT_LE(max_abs_diff(matmul(x, effective_linear_map(three)), head_project(three, x)), 1e-10);
}

TEST(HeadTest, EffectiveLinearMapNamesViolatingFeature) {
  auto message = [](const HeadConfig& c) {
    try {
      effective_linear_map(build_head(c, 1));
    } catch (const ContractError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message(make(4, 3, 1, HeadFamily::glu)).find("glu"), std::string::npos);
  EXPECT_NE(message(make(4, 3, 2, HeadFamily::ffn, 1.0, true, false)).find("residual"), std::string::npos);
  EXPECT_NE(message(make(4, 3, 2)).find("bias"), std::string::npos);
  HeadConfig act = make(4, 3, 2, HeadFamily::ffn, 1.0, false, false);
  act.activation = Activation::relu;
  EXPECT_NE(message(act).find("activation"), std::string::npos);
}

TEST(HeadIoTest, RoundTripIsBitExact) {
  for (auto family : {HeadFamily::ffn, HeadFamily::glu}) {
    for (std::size_t depth = 1; depth <= 3; ++depth) {
      HeadConfig c = make(6, 4, depth, family, 2.0, depth > 1);
      const HeadParams p = testing::jittered_head(c, 31);
      const std::string bytes = serialize_head(p, {{"note", "x"}});
      const HeadFile back = deserialize_head(bytes);
      EXPECT_TRUE(back.params == p);
      EXPECT_EQ(back.metadata["note"], "x");
      EXPECT_EQ(serialize_head(back.params, back.metadata), bytes);
    }
  }
}

TEST(HeadIoTest, CorruptPayloads) {
  const HeadParams p = build_head(make(6, 4, 2), 3);
  const std::string bytes = serialize_head(p);
  EXPECT_THROW(deserialize_head(bytes.substr(0, bytes.size() - 3)), FormatError);
  EXPECT_THROW(deserialize_head(bytes + "x"), FormatError);
  EXPECT_THROW(deserialize_head(bytes.substr(0, 10)), FormatError);
  std::string bumped = bytes;
  bumped.replace(bumped.find("\"version\":1"), 11, "\"version\":9");
  EXPECT_THROW(deserialize_head(bumped), FormatError);
  try {
    deserialize_head(bytes.substr(0, bytes.size() - 3));
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("byte"), std::string::npos);
  }
}

TEST(HeadIoTest, ConfigHashMismatch) {
  const HeadParams p = build_head(make(6, 4, 2), 3);
  const std::string bytes = serialize_head(p);
  EXPECT_NO_THROW(deserialize_head(bytes, p.config()));
  EXPECT_THROW(deserialize_head(bytes, make(6, 4, 3)), ConfigMismatchError);
}

}  // namespace
}  // namespace colproj
