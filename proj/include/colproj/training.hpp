#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "colproj/autodiff.hpp"
#include "colproj/head.hpp"
#include "json.hpp"

namespace colproj {

/// One query with n-way candidates and a teacher score per candidate.
/// Token matrices hold raw (un-projected) backbone-space embeddings.
struct TrainingTuple {
  Matrix query;
  std::vector<Matrix> candidates;
  std::vector<double> teacher_scores;

  /// Throws FormatError on inconsistent dims or counts.
  void validate() const;
  std::size_t dim() const { return query.cols(); }
};

enum class KlDirection {
  teacher_student,  // KL(p_teacher ‖ p_student), teacher as target
  student_teacher,  // KL(p_student ‖ p_teacher)
};

KlDirection parse_kl_direction(const std::string& name);
std::string to_string(KlDirection d);

/// Both score lists are divided by `temperature` before the softmax.
struct LossConfig {
  double temperature = 1.0;
  KlDirection direction = KlDirection::teacher_student;

  void validate() const;
};

struct TrainConfig {
  std::size_t batch_size = 64;
  double peak_lr = 1e-4;
  double warmup_fraction = 0.10;
  std::size_t total_steps = 1;
  double weight_decay = 0.01;
  std::uint64_t seed = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  LossConfig loss;

  void validate() const;
  std::size_t warmup_steps() const;
};

struct LossTrace {
  std::vector<double> losses;
  std::vector<double> learning_rates;
  /// tr(WWᵀ) of the effective map after each step; globally linear heads only.
  std::vector<double> metric_traces;
  std::uint64_t final_checksum = 0;

  std::size_t steps() const { return losses.size(); }
};

/// KL between softmax(teacher / T) and softmax(student / T); by default
/// KL(teacher ‖ student) at T = 1.
double kl_div_loss(std::span<const double> student, std::span<const double> teacher,
                   const LossConfig& loss = {});
/// Taped variant; `student` is a 1×n row.
ad::Var kl_div_loss(ad::Var student, std::span<const double> teacher, const LossConfig& loss = {});

/// Linear 0→peak over the warmup steps, then linear peak→0. Step s is the
/// rate used for the s-th (0-based) update.
double lr_at_step(std::size_t step, const TrainConfig& config);

struct AdamState {
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  std::uint64_t step = 0;
};

/// Adaptive-moment update with bias correction and decoupled weight decay
/// (w ← w − lr·λ·w) on weight matrices only. State is zero-initialized on
/// first use.
void optimizer_step(HeadParams& params, std::span<const Matrix> grads, AdamState& state,
                    double lr, const TrainConfig& config);

/// Student scores of every candidate (head projection + MaxSim), on a tape.
ad::Var student_scores(const BoundHead& head, const TrainingTuple& tuple);
/// Mean KL over `batch`, on a tape. Tokens of the whole batch are projected
/// in one pass.
ad::Var batch_loss(const BoundHead& head, std::span<const TrainingTuple* const> batch,
                   const LossConfig& loss = {});

double tuple_loss(const HeadParams& params, const TrainingTuple& tuple,
                  const LossConfig& loss = {});
/// Mean KL of `params` over every tuple.
double dataset_loss(const HeadParams& params, std::span<const TrainingTuple> tuples,
                    const LossConfig& loss = {});

struct TrainResult {
  HeadParams params;
  LossTrace trace;
};

/// Deterministic in (config, train_config, dataset): the seed drives both
/// initialization and per-epoch shuffling. Incomplete trailing batches are
/// dropped. Throws NumericError naming the step if the loss is not finite.
TrainResult train_head(const HeadConfig& config, const TrainConfig& train_config,
                       std::span<const TrainingTuple> dataset);

/// Trace file: '#'-prefixed metadata lines, then "step\tlr\tloss" per step.
void write_trace(const std::filesystem::path& path, const LossTrace& trace,
                 const nlohmann::json& metadata = nlohmann::json::object());

}  // namespace colproj
