#pragma once

// Synthetic distillation data with a planted cluster-specific metric.
//
// A random orthonormal basis of R^d is split into r disjoint s-dimensional
// cluster subspaces (s = max(1, d / 2r)) and a nuisance subspace holding
// the remaining directions. Vocabulary token t belongs to cluster t mod r
// and is normalize(B_c z + w·N u) with z, u standard normal. The teacher
// compares a query token with a document token by the cosine of their
// projections onto the query token's cluster subspace, so the nuisance
// directions are pure noise and each cluster has its own metric.
//
// Each token occurrence handed to the student is normalize(v + j·g) with g
// standard normal, so the student never sees a query token verbatim in a
// document. The teacher scores token identities.

#include <cstdint>
#include <vector>

#include "colproj/evaluation.hpp"
#include "colproj/retrieval.hpp"
#include "colproj/training.hpp"
#include "json.hpp"

namespace colproj {

struct SynthConfig {
  std::size_t d = 32;
  std::size_t vocab_size = 512;
  std::size_t query_tokens = 8;  // m, at most 32
  std::size_t doc_tokens = 24;   // n, at most 300
  std::size_t n_way = 16;
  std::size_t tuple_count = 2000;
  std::size_t planted_rank = 4;  // r, number of clusters
  double sharpness = 1.0;
  double noise_sigma = 0.0;
  std::uint64_t seed = 1;
  /// Held-out retrieval queries; each contributes n_way documents to the
  /// evaluation corpus.
  std::size_t eval_queries = 50;
  /// Scale of the nuisance component in every vocabulary token.
  double nuisance_weight = 0.8;
  /// Scale of the per-occurrence perturbation of student embeddings.
  double token_jitter = 0.1;

  /// Throws ConfigError on an infeasible configuration.
  void validate() const;
  std::size_t cluster_dim() const;
  nlohmann::json to_json() const;
};

struct SynthDataset {
  SynthConfig config;
  std::vector<TrainingTuple> tuples;
  QuerySet queries;  // held-out
  Corpus corpus;
  Qrels qrels;
};

/// Deterministic in `config` (including its seed). Candidate 0 of every
/// tuple is the planted positive.
SynthDataset generate_synthetic(const SynthConfig& config);

}  // namespace colproj
