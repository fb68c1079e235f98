#include "colproj/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "colproj/errors.hpp"
#include "colproj/head_io.hpp"
#include "colproj/maxsim.hpp"
#include "colproj/rng.hpp"

namespace colproj {

namespace {

std::vector<double> log_softmax_values(std::span<const double> x) {
  const double mx = *std::max_element(x.begin(), x.end());
  double z = 0.0;
  for (double v : x) z += std::exp(v - mx);
  // Only differences from the max enter, so exact shifts give identical output.
  const double log_z = std::log(z);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mx) - log_z;
  return out;
}

std::vector<double> scaled(std::span<const double> x, double temperature) {
  std::vector<double> out(x.begin(), x.end());
  if (temperature != 1.0) {
    for (double& v : out) v /= temperature;
  }
  return out;
}

void check_scores(std::span<const double> student, std::span<const double> teacher) {
  if (student.size() != teacher.size()) {
    throw ContractError("kl_div_loss: " + std::to_string(student.size()) + " student scores vs " +
                        std::to_string(teacher.size()) + " teacher scores");
  }
  if (student.size() < 2) {
    throw ContractError("kl_div_loss: need at least 2 candidates");
  }
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void TrainingTuple::validate() const {
  if (candidates.size() < 2) {
    throw FormatError("tuple needs at least 2 candidates, got " +
                      std::to_string(candidates.size()));
  }
  if (candidates.size() != teacher_scores.size()) {
    throw FormatError("tuple has " + std::to_string(candidates.size()) + " candidates but " +
                      std::to_string(teacher_scores.size()) + " teacher scores");
  }
  if (query.rows() == 0 || query.cols() == 0) {
    throw FormatError("tuple query is empty");
  }
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    if (candidates[c].rows() == 0 || candidates[c].cols() != query.cols()) {
      throw FormatError("candidate " + std::to_string(c) + " has shape " +
                        candidates[c].shape_string() + ", query dim " +
                        std::to_string(query.cols()));
    }
  }
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (!(peak_lr >= 0.0)) throw ConfigError("peak_lr must be non-negative");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) {
    throw ConfigError("warmup_fraction must be in [0, 1)");
  }
  if (total_steps == 0) throw ConfigError("total_steps must be at least 1");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("beta1 and beta2 must be in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
  loss.validate();
}

std::size_t TrainConfig::warmup_steps() const {
  return static_cast<std::size_t>(
      std::llround(warmup_fraction * static_cast<double>(total_steps)));
}

KlDirection parse_kl_direction(const std::string& name) {
  if (name == "teacher_student") return KlDirection::teacher_student;
  if (name == "student_teacher") return KlDirection::student_teacher;
  throw ConfigError("unknown KL direction '" + name + "' (teacher_student|student_teacher)");
}

std::string to_string(KlDirection d) {
  return d == KlDirection::teacher_student ? "teacher_student" : "student_teacher";
}

void LossConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ConfigError("temperature must be a positive number");
  }
}

double kl_div_loss(std::span<const double> student, std::span<const double> teacher,
                   const LossConfig& loss) {
  check_scores(student, teacher);
  loss.validate();
  auto log_p = log_softmax_values(scaled(teacher, loss.temperature));
  auto log_q = log_softmax_values(scaled(student, loss.temperature));
  if (loss.direction == KlDirection::student_teacher) std::swap(log_p, log_q);
  double kl = 0.0;
  for (std::size_t i = 0; i < log_p.size(); ++i) {
    kl += std::exp(log_p[i]) * (log_p[i] - log_q[i]);
  }
  return std::max(kl, 0.0);
}

ad::Var kl_div_loss(ad::Var student, std::span<const double> teacher, const LossConfig& loss) {
  const Matrix& s = student.value();
  if (s.rows() != 1) {
    throw ContractError("kl_div_loss: student scores must be a row, got " + s.shape_string());
  }
  check_scores(s.row(0), teacher);
  loss.validate();
  const auto log_p = log_softmax_values(scaled(teacher, loss.temperature));
  ad::Tape& tape = *student.tape;
  const ad::Var log_q = ad::log_softmax(
      loss.temperature == 1.0 ? student : ad::scale(student, 1.0 / loss.temperature));
  const ad::Var log_target = tape.constant(Matrix::row_vector(log_p));
  if (loss.direction == KlDirection::student_teacher) {
    return ad::sum(ad::elementwise_mul(ad::exp(log_q), ad::subtract(log_q, log_target)));
  }
  Matrix p(1, log_p.size());
  for (std::size_t i = 0; i < log_p.size(); ++i) p(0, i) = std::exp(log_p[i]);
  const ad::Var target = tape.constant(std::move(p));
  return ad::sum(ad::elementwise_mul(target, ad::subtract(log_target, log_q)));
}

double lr_at_step(std::size_t step, const TrainConfig& config) {
  if (step > config.total_steps) {
    throw ContractError("lr_at_step: step " + std::to_string(step) + " outside [0, " +
                        std::to_string(config.total_steps) + "]");
  }
  const double peak = config.peak_lr;
  const std::size_t warmup = config.warmup_steps();
  const auto s = static_cast<double>(step);
  if (step < warmup) {
    return peak * s / static_cast<double>(warmup);
  }
  if (config.total_steps == warmup) {
    return peak;
  }
  return peak * static_cast<double>(config.total_steps - step) /
         static_cast<double>(config.total_steps - warmup);
}

void optimizer_step(HeadParams& params, std::span<const Matrix> grads, AdamState& state,
                    double lr, const TrainConfig& config) {
  auto tensors = params.tensors();
  if (grads.size() != tensors.size()) {
    throw ContractError("optimizer_step: " + std::to_string(grads.size()) + " gradients for " +
                        std::to_string(tensors.size()) + " tensors");
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (!grads[i].same_shape(tensors[i].value)) {
      throw ContractError("optimizer_step: gradient " + grads[i].shape_string() + " for '" +
                          tensors[i].name + "' " + tensors[i].value.shape_string());
    }
  }
  if (state.first_moment.empty()) {
    for (const auto& t : tensors) {
      state.first_moment.push_back(Matrix::zeros(t.value.rows(), t.value.cols()));
      state.second_moment.push_back(Matrix::zeros(t.value.rows(), t.value.cols()));
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto w = tensors[i].value.values();
    auto m = state.first_moment[i].values();
    auto v = state.second_moment[i].values();
    const auto g = grads[i].values();
    const double decay = is_weight_matrix(tensors[i].role) ? lr * config.weight_decay : 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
      if (decay != 0.0) w[k] -= decay * w[k];
      m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g[k];
      v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g[k] * g[k];
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      w[k] -= lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
  }
}

ad::Var student_scores(const BoundHead& head, const TrainingTuple& tuple) {
  ad::Tape& tape = *head.tensors.front().tape;
  std::vector<Matrix> blocks{tuple.query};
  blocks.insert(blocks.end(), tuple.candidates.begin(), tuple.candidates.end());
  const ad::Var projected = head_forward(head, tape.constant(vstack(blocks)));
  const ad::Var q = ad::slice_rows(projected, 0, tuple.query.rows());
  std::vector<ad::Var> scores;
  std::size_t offset = tuple.query.rows();
  for (const auto& c : tuple.candidates) {
    scores.push_back(maxsim(q, ad::slice_rows(projected, offset, offset + c.rows())));
    offset += c.rows();
  }
  return ad::concat_scalars(scores);
}

ad::Var batch_loss(const BoundHead& head, std::span<const TrainingTuple* const> batch,
                   const LossConfig& loss) {
  if (batch.empty()) {
    throw ContractError("batch_loss: empty batch");
  }
  ad::Tape& tape = *head.tensors.front().tape;
  std::vector<Matrix> blocks;
  for (const TrainingTuple* t : batch) {
    blocks.push_back(t->query);
    blocks.insert(blocks.end(), t->candidates.begin(), t->candidates.end());
  }
  const ad::Var projected = head_forward(head, tape.constant(vstack(blocks)));
  std::vector<ad::Var> losses;
  std::size_t offset = 0;
  for (const TrainingTuple* t : batch) {
    const ad::Var q = ad::slice_rows(projected, offset, offset + t->query.rows());
    offset += t->query.rows();
    std::vector<ad::Var> scores;
    for (const auto& c : t->candidates) {
      scores.push_back(maxsim(q, ad::slice_rows(projected, offset, offset + c.rows())));
      offset += c.rows();
    }
    losses.push_back(kl_div_loss(ad::concat_scalars(scores), t->teacher_scores, loss));
  }
  return ad::scale(ad::sum(ad::concat_scalars(losses)), 1.0 / static_cast<double>(batch.size()));
}

double tuple_loss(const HeadParams& params, const TrainingTuple& tuple, const LossConfig& loss) {
  ad::Tape tape;
  const BoundHead head = bind_head(tape, params, false);
  const TrainingTuple* batch[] = {&tuple};
  return batch_loss(head, batch, loss).value()(0, 0);
}

double dataset_loss(const HeadParams& params, std::span<const TrainingTuple> tuples,
                    const LossConfig& loss) {
  if (tuples.empty()) {
    throw ContractError("dataset_loss: no tuples");
  }
  double total = 0.0;
  for (const auto& t : tuples) total += tuple_loss(params, t, loss);
  return total / static_cast<double>(tuples.size());
}

TrainResult train_head(const HeadConfig& config, const TrainConfig& train_config,
                       std::span<const TrainingTuple> dataset) {
  train_config.validate();
  if (dataset.empty()) {
    throw ContractError("train_head: empty dataset");
  }
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    dataset[i].validate();
    if (dataset[i].dim() != config.input_dim) {
      throw ShapeError("tuple " + std::to_string(i) + " has token dim " +
                       std::to_string(dataset[i].dim()) + ", head input_dim " +
                       std::to_string(config.input_dim));
    }
  }
  const std::size_t batches_per_epoch = dataset.size() / train_config.batch_size;
  if (batches_per_epoch == 0) {
    throw ContractError("train_head: dataset of " + std::to_string(dataset.size()) +
                        " tuples is smaller than batch_size " +
                        std::to_string(train_config.batch_size));
  }

  HeadParams params = build_head(config, train_config.seed);
  Rng shuffler(derive_seed(train_config.seed, 0x5eed));
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  AdamState state;
  LossTrace trace;
  const bool linear = is_globally_linear(config);
  std::size_t cursor = 0;
  std::vector<const TrainingTuple*> batch(train_config.batch_size);
  for (std::size_t step = 0; step < train_config.total_steps; ++step) {
    if (cursor == 0) shuffler.shuffle(order);
    for (std::size_t b = 0; b < train_config.batch_size; ++b) {
      batch[b] = &dataset[order[cursor * train_config.batch_size + b]];
    }
    cursor = (cursor + 1) % batches_per_epoch;

    ad::Tape tape;
    const BoundHead head = bind_head(tape, params, true);
    const ad::Var loss = batch_loss(head, batch, train_config.loss);
    const double loss_value = loss.value()(0, 0);
    if (!std::isfinite(loss_value)) {
      throw NumericError("non-finite loss at step " + std::to_string(step));
    }
    const ad::Gradients grads = tape.backward(loss);
    std::vector<Matrix> param_grads;
    param_grads.reserve(head.tensors.size());
    for (const ad::Var& v : head.tensors) param_grads.push_back(grads[v]);

    const double lr = lr_at_step(step, train_config);
    optimizer_step(params, param_grads, state, lr, train_config);
    trace.losses.push_back(loss_value);
    trace.learning_rates.push_back(lr);
    if (linear) {
      const double f = frobenius_norm(effective_linear_map(params));
      trace.metric_traces.push_back(f * f);
    }
  }
  trace.final_checksum = params.checksum();
  return TrainResult{std::move(params), std::move(trace)};
}

void write_trace(const std::filesystem::path& path, const LossTrace& trace,
                 const nlohmann::json& metadata) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw Error("io", "cannot open '" + path.string() + "' for writing");
  }
  out << "# colproj-trace v1\n";
  out << "# meta " << metadata.dump() << "\n";
  out << "# final_checksum " << hex64(trace.final_checksum) << "\n";
  const bool with_metric = trace.metric_traces.size() == trace.steps() && trace.steps() > 0;
  out << "# step\tlr\tloss" << (with_metric ? "\ttrace_M" : "") << "\n";
  for (std::size_t i = 0; i < trace.steps(); ++i) {
    out << i << '\t' << format_double(trace.learning_rates[i]) << '\t'
        << format_double(trace.losses[i]);
    if (with_metric) out << '\t' << format_double(trace.metric_traces[i]);
    out << '\n';
  }
  if (!out) {
    throw Error("io", "failed writing '" + path.string() + "'");
  }
}

}  // namespace colproj
