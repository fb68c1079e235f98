#include "colproj/training.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "colproj/errors.hpp"
#include "colproj/finite_diff.hpp"
#include "colproj/maxsim.hpp"
#include "test_support.hpp"

namespace colproj {
namespace {

TEST(KlLossTest, Examples) {
  const std::vector<double> t{1.0, 0.0};
  EXPECT_EQ(kl_div_loss(t, t), 0.0);
  // p = softmax(1, 0); KL = p1·(log p1 − log q1) + p2·(log p2 − log q2) with q = reversed p.
  const double p1 = 1.0 / (1.0 + std::exp(-1.0));
  const double expected = p1 * 1.0 + (1 - p1) * -1.0;
  EXPECT_NEAR(kl_div_loss(std::vector<double>{0.0, 1.0}, t), expected, 1e-15);
  EXPECT_NEAR(kl_div_loss(std::vector<double>{0.0, 1.0}, t), 0.4621, 1e-3);
  EXPECT_THROW(kl_div_loss(std::vector<double>{1.0}, std::vector<double>{1.0}), ContractError);
  EXPECT_THROW(kl_div_loss(std::vector<double>{1.0, 2.0}, std::vector<double>{1.0, 2.0, 3.0}),
               ContractError);
}

TEST(KlLossTest, ShiftInvarianceAndNonNegativity) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = testing::random_between(rng, 2, 16);
    std::vector<double> s(n), t(n), shifted(n);
    const double c = rng.uniform(-5, 5);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = rng.uniform(-3, 3);
      t[i] = rng.uniform(-3, 3);
      shifted[i] = t[i] + c;
    }
    EXPECT_GE(kl_div_loss(s, t), 0.0);
    std::vector<double> s_shift(n);
    for (std::size_t i = 0; i < n; ++i) s_shift[i] = t[i] + 0.5;
    EXPECT_LE(kl_div_loss(s_shift, t), 1e-15);
    EXPECT_NEAR(kl_div_loss(s, shifted), kl_div_loss(s, t), 1e-12);
  }
}

TEST(KlLossTest, TapedFormMatchesValueForm) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::vector<double> s{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    const std::vector<double> t{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    ad::Tape tape;
    const ad::Var sv = tape.leaf(Matrix::row_vector(s));
    const ad::Var loss = kl_div_loss(sv, t);
    EXPECT_NEAR(loss.value()(0, 0), kl_div_loss(s, t), 1e-14);
    // ∂KL/∂s = softmax(s) − softmax(t).
    const Matrix g = tape.backward(loss)[sv];
    double zs = 0, zt = 0;
    for (int i = 0; i < 3; ++i) {
      zs += std::exp(s[i]);
      zt += std::exp(t[i]);
    }
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(g(0, i), std::exp(s[i]) / zs - std::exp(t[i]) / zt, 1e-14);
  }
}

TEST(KlLossTest, TemperatureAndDirection) {
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = testing::random_between(rng, 2, 10);
    std::vector<double> s(n), t(n), s_t(n), t_t(n);
    const double temp = rng.uniform(0.2, 5.0);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = rng.uniform(-3, 3);
      t[i] = rng.uniform(-3, 3);
      s_t[i] = s[i] / temp;
      t_t[i] = t[i] / temp;
    }
    LossConfig loss;
    loss.temperature = temp;
    EXPECT_NEAR(kl_div_loss(s, t, loss), kl_div_loss(s_t, t_t), 1e-14);
    loss.direction = KlDirection::student_teacher;
    EXPECT_NEAR(kl_div_loss(s, t, loss), kl_div_loss(t_t, s_t), 1e-14);

    // Taped reverse-direction loss agrees in value and gradient.
    ad::Tape tape;
    const ad::Var sv = tape.leaf(Matrix::row_vector(s));
    const ad::Var l = kl_div_loss(sv, t, loss);
    EXPECT_NEAR(l.value()(0, 0), kl_div_loss(s, t, loss), 1e-13);
    const Matrix g = tape.backward(l)[sv];
    // Closed form: ∂/∂sᵢ KL(q‖p) = qᵢ (log qᵢ − log pᵢ − KL) / T with
    // q = softmax(s/T), p = softmax(t/T).
    double zq = 0.0, zp = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      zq += std::exp(s_t[i]);
      zp += std::exp(t_t[i]);
    }
    const double kl = kl_div_loss(s, t, loss);
    for (std::size_t i = 0; i < n; ++i) {
      const double log_q = s_t[i] - std::log(zq);
      const double log_p = t_t[i] - std::log(zp);
      const double expected = std::exp(log_q) * (log_q - log_p - kl) / temp;
      EXPECT_NEAR(g(0, i), expected, 1e-12);
    }
  }
  LossConfig bad;
  bad.temperature = 0.0;
  EXPECT_THROW(kl_div_loss(std::vector<double>{1, 2}, std::vector<double>{1, 2}, bad), ConfigError);
  EXPECT_EQ(parse_kl_direction("student_teacher"), KlDirection::student_teacher);
  EXPECT_THROW(parse_kl_direction("forward"), ConfigError);
}

TEST(ScheduleTest, AnchorPoints) {
  TrainConfig c;
  c.total_steps = 1000;
  c.peak_lr = 1e-4;
  c.warmup_fraction = 0.10;
  EXPECT_EQ(c.warmup_steps(), 100u);
  EXPECT_DOUBLE_EQ(lr_at_step(50, c), 0.5e-4);
  EXPECT_DOUBLE_EQ(lr_at_step(100, c), 1e-4);
  EXPECT_EQ(lr_at_step(1000, c), 0.0);
  EXPECT_EQ(lr_at_step(0, c), 0.0);
  EXPECT_DOUBLE_EQ(lr_at_step(550, c), 0.5e-4);
  EXPECT_THROW(lr_at_step(1001, c), ContractError);
}

TEST(ScheduleTest, ProfileIsPiecewiseLinear) {
  TrainConfig c;
  c.total_steps = 200;
  const std::size_t w = c.warmup_steps();
  for (std::size_t s = 1; s + 1 < w; ++s) {
    EXPECT_NEAR(lr_at_step(s + 1, c) - lr_at_step(s, c), c.peak_lr / w, 1e-18);
  }
  for (std::size_t s = w; s < c.total_steps; ++s) {
    EXPECT_NEAR(lr_at_step(s, c) - lr_at_step(s + 1, c), c.peak_lr / (c.total_steps - w), 1e-18);
  }
}

TEST(TrainConfigTest, Validation) {
  TrainConfig c;
  c.warmup_fraction = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.total_steps = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.peak_lr = -1;
  EXPECT_THROW(c.validate(), ConfigError);
}

HeadConfig residual_head() {
  HeadConfig c;
  c.input_dim = 4;
  c.output_dim = 3;
  c.depth = 2;
  c.rho = 2.0;
  c.residual = true;
  return c;
}

std::vector<Matrix> zero_grads(const HeadParams& p) {
  std::vector<Matrix> g;
  for (const auto& t : p.tensors()) g.push_back(Matrix::zeros(t.value.rows(), t.value.cols()));
  return g;
}

TEST(OptimizerTest, ZeroGradientFixedPointAndDecay) {
  const HeadParams start = testing::jittered_head(residual_head(), 4);
  TrainConfig c;
  c.weight_decay = 0.0;
  HeadParams p = start;
  AdamState state;
  optimizer_step(p, zero_grads(p), state, 1e-3, c);
  EXPECT_TRUE(p == start);

  c.weight_decay = 0.5;
  p = start;
  state = AdamState{};
  optimizer_step(p, zero_grads(p), state, 1e-2, c);
  for (std::size_t i = 0; i < p.tensors().size(); ++i) {
    const auto& t = p.tensors()[i];
    for (std::size_t e = 0; e < t.value.size(); ++e) {
      const double before = start.tensors()[i].value.values()[e];
      const double expected = is_weight_matrix(t.role) ? before * (1 - 1e-2 * 0.5) : before;
      EXPECT_DOUBLE_EQ(t.value.values()[e], expected) << t.name;
    }
  }
}

TEST(OptimizerTest, FirstStepIsSignLikeUpdate) {
  HeadParams p = testing::jittered_head(residual_head(), 5);
  const HeadParams start = p;
  TrainConfig c;
  c.weight_decay = 0.0;
  Rng rng(6);
  std::vector<Matrix> g;
  for (const auto& t : p.tensors()) g.push_back(testing::random_matrix(rng, t.value.rows(), t.value.cols()));
  AdamState state;
  const double lr = 1e-3;
  optimizer_step(p, g, state, lr, c);
  for (std::size_t i = 0; i < g.size(); ++i) {
    for (std::size_t e = 0; e < g[i].size(); ++e) {
      const double gi = g[i].values()[e];
      const double delta = p.tensors()[i].value.values()[e] - start.tensors()[i].value.values()[e];
      EXPECT_NEAR(delta, -lr * gi / (std::abs(gi) + c.eps), 1e-15);
    }
  }
  std::vector<Matrix> bad = g;
  bad.pop_back();
  EXPECT_THROW(optimizer_step(p, bad, state, lr, c), ContractError);
}

TEST(OptimizerTest, AdamRecurrenceOverSeveralSteps) {
  // Scalar recurrence evaluated by hand for one weight entry.
  HeadConfig hc;
  hc.input_dim = 1;
  hc.output_dim = 1;
  HeadParams p = build_head(hc, 1);
  p.tensor(0)(0, 0) = 0.5;
  TrainConfig c;
  c.weight_decay = 0.1;
  AdamState state;
  double w = 0.5, m = 0, v = 0;
  const double grads[] = {0.3, -0.1, 0.7, 0.2};
  const double lrs[] = {1e-2, 2e-2, 1.5e-2, 5e-3};
  for (int s = 0; s < 4; ++s) {
    std::vector<Matrix> g{Matrix(1, 1, grads[s])};
    optimizer_step(p, g, state, lrs[s], c);
    w -= lrs[s] * 0.1 * w;
    m = 0.9 * m + 0.1 * grads[s];
    v = 0.999 * v + 0.001 * grads[s] * grads[s];
    const double mh = m / (1 - std::pow(0.9, s + 1));
    const double vh = v / (1 - std::pow(0.999, s + 1));
    w -= lrs[s] * mh / (std::sqrt(vh) + 1e-8);
    EXPECT_NEAR(p.tensor(0)(0, 0), w, 1e-15);
  }
}

std::vector<TrainingTuple> tiny_dataset(std::uint64_t seed, std::size_t count) {
  Rng rng(seed);
  std::vector<TrainingTuple> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(testing::random_tuple(rng, 4, 3, 2, 3));
  return out;
}

TEST(TrainTest, DeterministicPerSeed) {
  const auto data = tiny_dataset(1, 12);
  TrainConfig c;
  c.batch_size = 4;
  c.total_steps = 10;
  c.peak_lr = 1e-2;
  c.seed = 42;
  const TrainResult a = train_head(residual_head(), c, data);
  const TrainResult b = train_head(residual_head(), c, data);
  EXPECT_TRUE(a.params == b.params);
  EXPECT_EQ(a.trace.losses, b.trace.losses);
  EXPECT_EQ(a.trace.final_checksum, b.trace.final_checksum);
  EXPECT_EQ(a.trace.steps(), 10u);
  c.seed = 43;
  EXPECT_NE(train_head(residual_head(), c, data).trace.losses, a.trace.losses);
}

TEST(TrainTest, ZeroLearningRateLeavesHeadUnchanged) {
  const auto data = tiny_dataset(2, 8);
  TrainConfig c;
  c.batch_size = 4;
  c.total_steps = 5;
  c.peak_lr = 0.0;
  c.seed = 3;
  const TrainResult r = train_head(residual_head(), c, data);
  EXPECT_TRUE(r.params == build_head(residual_head(), 3));
  for (double l : r.trace.losses) EXPECT_GE(l, 0.0);
}

TEST(TrainTest, SelfDistillationIsFixedPoint) {
  auto data = tiny_dataset(3, 4);
  const HeadParams head = build_head(residual_head(), 9);
  for (auto& t : data) {
    ad::Tape tape;
    const BoundHead b = bind_head(tape, head, false);
    const Matrix s = student_scores(b, t).value();
    t.teacher_scores.assign(s.values().begin(), s.values().end());
  }
  for (const auto& t : data) EXPECT_LE(tuple_loss(head, t), 1e-15);
}

TEST(TrainTest, NonWinnerEmbeddingHasZeroGradient) {
  Rng rng(4);
  const HeadParams head = testing::jittered_head(residual_head(), 2);
  const TrainingTuple t = testing::random_tuple(rng, 4, 2, 1, 4);
  ad::Tape tape;
  const BoundHead b = bind_head(tape, head, false);
  const ad::Var q = head_forward(b, tape.constant(t.query));
  std::vector<ad::Var> leaves, scores;
  for (const auto& c : t.candidates) {
    leaves.push_back(tape.leaf(c));
    scores.push_back(maxsim(q, head_forward(b, leaves.back())));
  }
  const ad::Gradients g = tape.backward(kl_div_loss(ad::concat_scalars(scores), t.teacher_scores));
  for (std::size_t c = 0; c < t.candidates.size(); ++c) {
    const auto w = winners(TokenMatrix(q.value()), TokenMatrix(head_forward(head, t.candidates[c])));
    for (std::size_t j = 0; j < 4; ++j) {
      if (j == w[0]) continue;
      for (double v : g[leaves[c]].row(j)) EXPECT_EQ(v, 0.0);
    }
  }
}

TEST(TrainTest, ErrorPaths) {
  TrainConfig c;
  c.batch_size = 2;
  c.total_steps = 4;
  EXPECT_THROW(train_head(residual_head(), c, {}), ContractError);
  auto data = tiny_dataset(5, 1);
  EXPECT_THROW(train_head(residual_head(), c, data), ContractError);
  HeadConfig wrong = residual_head();
  wrong.input_dim = 5;
  data = tiny_dataset(5, 4);
  EXPECT_THROW(train_head(wrong, c, data), ShapeError);
  data[0].teacher_scores[0] = std::nan("");
  EXPECT_THROW(train_head(residual_head(), c, data), NumericError);
}

TEST(TrainTest, LossDecreasesOnLearnableTargets) {
  // Teacher = a fixed random head; the student starts elsewhere.
  auto data = tiny_dataset(6, 32);
  const HeadParams teacher = testing::jittered_head(residual_head(), 77, 1.0);
  for (auto& t : data) {
    ad::Tape tape;
    const BoundHead b = bind_head(tape, teacher, false);
    const Matrix s = student_scores(b, t).value();
    for (std::size_t i = 0; i < s.cols(); ++i) t.teacher_scores[i] = 4.0 * s(0, i);
  }
  TrainConfig c;
  c.batch_size = 8;
  c.total_steps = 200;
  c.peak_lr = 1e-2;
  c.seed = 1;
  const double before = dataset_loss(build_head(residual_head(), 1), data);
  const TrainResult r = train_head(residual_head(), c, data);
  EXPECT_LT(dataset_loss(r.params, data), before);
}

TEST(TrainTest, MetricTraceRecordedForLinearHeads) {
  const auto data = tiny_dataset(7, 8);
  TrainConfig c;
  c.batch_size = 4;
  c.total_steps = 6;
  c.peak_lr = 1e-2;
  const TrainResult linear = train_head(HeadConfig::linear(4, 3), c, data);
  ASSERT_EQ(linear.trace.metric_traces.size(), 6u);
  const double f = frobenius_norm(linear.params.tensor(0));
  EXPECT_NEAR(linear.trace.metric_traces.back(), f * f, 1e-12);
  EXPECT_TRUE(train_head(residual_head(), c, data).trace.metric_traces.empty());
}

TEST(TraceTest, FileLayout) {
  LossTrace t;
  t.losses = {0.5, 0.25};
  t.learning_rates = {0.0, 1e-4};
  t.final_checksum = 0xabc;
  const auto path = std::filesystem::temp_directory_path() / "colproj_trace_test.tsv";
  write_trace(path, t, {{"k", 1}});
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  EXPECT_NE(text.find("# colproj-trace v1\n"), std::string::npos);
  EXPECT_NE(text.find("# step\tlr\tloss\n"), std::string::npos);
  EXPECT_NE(text.find("0\t0\t0.5\n"), std::string::npos);
  EXPECT_NE(text.find("1\t0.0001\t0.25\n"), std::string::npos);
  t.metric_traces = {2.0, 1.5};
  write_trace(path, t, {});
  std::ifstream again(path);
  std::stringstream ss2;
  ss2 << again.rdbuf();
  EXPECT_NE(ss2.str().find("1\t0.0001\t0.25\t1.5\n"), std::string::npos);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace colproj
