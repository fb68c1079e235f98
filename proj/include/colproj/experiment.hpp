#pragma once

// Experiment configuration and multi-seed sweeps.
//
// Configuration is a flat key=value file ('#' starts a comment). Keys:
//   head.{family,depth,rho,residual,activation,gate,bias,alpha_init,output_dim}
//   train.{batch_size,peak_lr,warmup_fraction,total_steps,weight_decay,seed,beta1,beta2,eps,
//          temperature,kl_direction}
//   data.{d,vocab_size,query_tokens,doc_tokens,n_way,tuple_count,planted_rank,
//         sharpness,noise_sigma,seed,eval_queries,nuisance_weight,token_jitter}
//   eval.{top_k,k}
// Command-line overrides beat the file, which beats the defaults; the
// source of every resolved value is kept for output metadata.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "colproj/evaluation.hpp"
#include "colproj/head.hpp"
#include "colproj/synth.hpp"
#include "colproj/training.hpp"
#include "json.hpp"

namespace colproj {

struct ExperimentConfig {
  HeadConfig head;  // input_dim follows data.d
  TrainConfig train;
  SynthConfig data;
  std::size_t top_k = 100;
  std::size_t eval_k = 10;
  /// key → "default" | "file" | "cli"
  std::map<std::string, std::string> sources;

  ExperimentConfig();

  /// Sets one key from its textual value. ConfigError on unknown keys or
  /// unparsable values.
  void set(const std::string& key, const std::string& value, const std::string& source);
  std::string get(const std::string& key) const;
  /// Head config with input_dim = data.d.
  HeadConfig head_config() const;
  void validate() const;
  /// Every key with its value and source.
  nlohmann::json to_json() const;

  static const std::vector<std::string>& keys();
};

/// Parses key=value lines. ParseError names the offending line.
std::vector<std::pair<std::string, std::string>> read_config_file(
    const std::filesystem::path& path);

ExperimentConfig resolve_config(const std::optional<std::filesystem::path>& file,
                                const std::vector<std::pair<std::string, std::string>>& overrides);

struct SeedOutcome {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;  // "kind: message" when !ok
  double variant_ndcg = 0.0;
  double baseline_ndcg = 0.0;
  double variant_final_kl = 0.0;
  double baseline_final_kl = 0.0;
};

struct SweepReport {
  std::vector<SeedOutcome> seeds;  // ordered by seed value
  std::optional<SeedAggregate> variant_ndcg;
  std::optional<SeedAggregate> baseline_ndcg;
  std::optional<SeedAggregate> variant_kl;
  std::optional<SeedAggregate> baseline_kl;
  /// Absent with fewer than two successful seeds.
  std::optional<TTestResult> ndcg_t_test;
  std::optional<TTestResult> kl_t_test;

  nlohmann::json to_json() const;
};

struct SweepOptions {
  std::vector<std::uint64_t> seeds;
  HeadConfig baseline;  // usually HeadConfig::linear(d, k)
  /// When set, per-seed heads, traces and runs are written under it.
  std::optional<std::filesystem::path> out_dir;
  nlohmann::json metadata = nlohmann::json::object();
};

/// Trains variant and baseline for every seed on `dataset.tuples`, then
/// evaluates NDCG@eval_k on the held-out queries. A failing seed is
/// recorded and the others still run.
SweepReport run_sweep(const ExperimentConfig& config, const SynthDataset& dataset,
                      const SweepOptions& options);

/// "1,42,1337" → {1, 42, 1337}; sorted and deduplicated.
std::vector<std::uint64_t> parse_seed_list(const std::string& text);

}  // namespace colproj
