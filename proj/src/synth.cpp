#include "colproj/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "colproj/errors.hpp"
#include "colproj/rng.hpp"

namespace colproj {

namespace {

constexpr std::size_t kMaxQueryTokens = 32;
constexpr std::size_t kMaxDocTokens = 300;
// A filler whose teacher similarity with a query token reaches this value
// would stand in for that token and is never placed in a negative.
constexpr double kDuplicateSim = 1.0 - 1e-9;

// Columns of a random orthogonal matrix, by modified Gram-Schmidt.
Matrix random_orthonormal(std::size_t d, Rng& rng) {
  Matrix q = rng.normal_matrix(d, d);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t p = 0; p < j; ++p) {
      double dot = 0.0;
      for (std::size_t i = 0; i < d; ++i) dot += q(i, p) * q(i, j);
      for (std::size_t i = 0; i < d; ++i) q(i, j) -= dot * q(i, p);
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < d; ++i) norm += q(i, j) * q(i, j);
    norm = std::sqrt(norm);
    if (norm < 1e-10) throw NumericError("degenerate basis draw");
    for (std::size_t i = 0; i < d; ++i) q(i, j) /= norm;
  }
  return q;
}

class Planted {
 public:
  Planted(const SynthConfig& c, std::uint64_t seed) : c_(c), s_(c.cluster_dim()) {
    Rng rng(derive_seed(seed, 1));
    const Matrix basis = random_orthonormal(c.d, rng);
    const std::size_t nuisance_dims = c.d - c.planted_rank * s_;
    Rng vocab_rng(derive_seed(seed, 2));
    vocab_ = Matrix(c.vocab_size, c.d);
    for (std::size_t t = 0; t < c.vocab_size; ++t) {
      const std::size_t cluster = t % c.planted_rank;
      auto row = vocab_.row(t);
      for (std::size_t a = 0; a < s_; ++a) {
        const double z = vocab_rng.normal();
        const std::size_t col = cluster * s_ + a;
        for (std::size_t i = 0; i < c.d; ++i) row[i] += z * basis(i, col);
      }
      for (std::size_t a = 0; a < nuisance_dims; ++a) {
        const double u = c.nuisance_weight * vocab_rng.normal();
        const std::size_t col = c.planted_rank * s_ + a;
        for (std::size_t i = 0; i < c.d; ++i) row[i] += u * basis(i, col);
      }
    }
    vocab_ = row_l2_normalize(vocab_);

    // Coordinates of every token in every cluster subspace.
    coords_.assign(c.planted_rank, Matrix(c.vocab_size, s_));
    for (std::size_t cl = 0; cl < c.planted_rank; ++cl) {
      for (std::size_t t = 0; t < c.vocab_size; ++t) {
        for (std::size_t a = 0; a < s_; ++a) {
          double dot = 0.0;
          for (std::size_t i = 0; i < c.d; ++i) dot += vocab_(t, i) * basis(i, cl * s_ + a);
          coords_[cl](t, a) = dot;
        }
      }
    }
  }

  const Matrix& vocab() const { return vocab_; }

  double sim(std::size_t query_token, std::size_t doc_token) const {
    const Matrix& x = coords_[query_token % c_.planted_rank];
    double dot = 0.0, nq = 0.0, nd = 0.0;
    for (std::size_t a = 0; a < s_; ++a) {
      dot += x(query_token, a) * x(doc_token, a);
      nq += x(query_token, a) * x(query_token, a);
      nd += x(doc_token, a) * x(doc_token, a);
    }
    if (nq < 1e-24 || nd < 1e-24) return 0.0;
    return dot / std::sqrt(nq * nd);
  }

  double teacher_maxsim(const std::vector<std::size_t>& q, const std::vector<std::size_t>& doc) const {
    double total = 0.0;
    for (std::size_t qt : q) {
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t dt : doc) best = std::max(best, sim(qt, dt));
      total += best;
    }
    return total;
  }

  Matrix embed(const std::vector<std::size_t>& ids, Rng& rng) const {
    Matrix m(ids.size(), c_.d);
    for (std::size_t r = 0; r < ids.size(); ++r) {
      for (std::size_t i = 0; i < c_.d; ++i) {
        m(r, i) = vocab_(ids[r], i) + c_.token_jitter * rng.normal();
      }
    }
    return row_l2_normalize(m);
  }

 private:
  const SynthConfig& c_;
  std::size_t s_;
  Matrix vocab_;
  std::vector<Matrix> coords_;
};

// Draws `count` distinct ids from `pool` without replacement.
std::vector<std::size_t> draw(std::vector<std::size_t> pool, std::size_t count, Rng& rng) {
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(count);
  return pool;
}

struct Group {
  std::vector<std::size_t> query;
  std::vector<std::vector<std::size_t>> docs;  // docs[0] is the positive
};

Group draw_group(const SynthConfig& c, const Planted& planted, Rng& rng) {
  std::vector<std::size_t> all(c.vocab_size);
  std::iota(all.begin(), all.end(), std::size_t{0});
  Group g;
  g.query = draw(all, c.query_tokens, rng);

  std::vector<bool> in_query(c.vocab_size, false);
  for (std::size_t t : g.query) in_query[t] = true;
  std::vector<std::size_t> non_query, safe;
  for (std::size_t t = 0; t < c.vocab_size; ++t) {
    if (in_query[t]) continue;
    non_query.push_back(t);
    bool duplicate = false;
    for (std::size_t qt : g.query) duplicate = duplicate || planted.sim(qt, t) >= kDuplicateSim;
    if (!duplicate) safe.push_back(t);
  }
  const std::size_t fillers = c.doc_tokens - c.query_tokens;
  if (safe.size() < c.doc_tokens) {
    throw ConfigError("vocabulary too small: " + std::to_string(safe.size()) +
                      " usable filler tokens, need " + std::to_string(c.doc_tokens));
  }

  std::vector<std::size_t> positive = g.query;
  for (std::size_t t : draw(non_query, fillers, rng)) positive.push_back(t);
  rng.shuffle(positive);
  g.docs.push_back(std::move(positive));

  for (std::size_t neg = 1; neg < c.n_way; ++neg) {
    // Keep a strict subset of the query tokens so at least one is missing.
    const std::size_t kept = static_cast<std::size_t>(rng.below(c.query_tokens));
    std::vector<std::size_t> doc = draw(g.query, kept, rng);
    for (std::size_t t : draw(safe, c.doc_tokens - kept, rng)) doc.push_back(t);
    rng.shuffle(doc);
    g.docs.push_back(std::move(doc));
  }
  return g;
}

std::string id_string(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%05zu", prefix, i);
  return buf;
}

}  // namespace

std::size_t SynthConfig::cluster_dim() const {
  return std::max<std::size_t>(1, d / (2 * std::max<std::size_t>(1, planted_rank)));
}

void SynthConfig::validate() const {
  if (d == 0) throw ConfigError("d must be at least 1");
  if (planted_rank == 0) throw ConfigError("planted_rank must be at least 1");
  if (planted_rank >= d) {
    throw ConfigError("planted_rank " + std::to_string(planted_rank) + " must be < d " +
                      std::to_string(d));
  }
  if (query_tokens == 0 || query_tokens > kMaxQueryTokens) {
    throw ConfigError("query_tokens must be in [1, 32], got " + std::to_string(query_tokens));
  }
  if (doc_tokens == 0 || doc_tokens > kMaxDocTokens) {
    throw ConfigError("doc_tokens must be in [1, 300], got " + std::to_string(doc_tokens));
  }
  if (doc_tokens < query_tokens) {
    throw ConfigError("doc_tokens " + std::to_string(doc_tokens) +
                      " cannot hold the positive's " + std::to_string(query_tokens) +
                      " query tokens");
  }
  if (n_way < 2) throw ConfigError("n_way must be at least 2");
  if (vocab_size < query_tokens + doc_tokens) {
    throw ConfigError("vocab_size " + std::to_string(vocab_size) + " is smaller than the " +
                      std::to_string(query_tokens + doc_tokens) +
                      " distinct tokens a query and a negative need");
  }
  if (!(sharpness > 0.0) || !std::isfinite(sharpness)) throw ConfigError("sharpness must be > 0");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw ConfigError("noise_sigma must be >= 0");
  }
  if (!(nuisance_weight >= 0.0) || !std::isfinite(nuisance_weight)) {
    throw ConfigError("nuisance_weight must be >= 0");
  }
  if (!(token_jitter >= 0.0) || !std::isfinite(token_jitter)) {
    throw ConfigError("token_jitter must be >= 0");
  }
}

nlohmann::json SynthConfig::to_json() const {
  return {{"synthetic", true},
          {"d", d},
          {"vocab_size", vocab_size},
          {"query_tokens", query_tokens},
          {"doc_tokens", doc_tokens},
          {"n_way", n_way},
          {"tuple_count", tuple_count},
          {"planted_rank", planted_rank},
          {"sharpness", sharpness},
          {"noise_sigma", noise_sigma},
          {"seed", seed},
          {"eval_queries", eval_queries},
          {"nuisance_weight", nuisance_weight},
          {"token_jitter", token_jitter}};
}

SynthDataset generate_synthetic(const SynthConfig& config) {
  config.validate();
  SynthDataset ds;
  ds.config = config;
  const Planted planted(ds.config, config.seed);

  Rng tuple_rng(derive_seed(config.seed, 3));
  ds.tuples.reserve(config.tuple_count);
  for (std::size_t i = 0; i < config.tuple_count; ++i) {
    const Group g = draw_group(config, planted, tuple_rng);
    TrainingTuple t;
    t.query = planted.embed(g.query, tuple_rng);
    for (const auto& doc : g.docs) {
      t.candidates.push_back(planted.embed(doc, tuple_rng));
      t.teacher_scores.push_back(config.sharpness * planted.teacher_maxsim(g.query, doc) +
                                 config.noise_sigma * tuple_rng.normal());
    }
    ds.tuples.push_back(std::move(t));
  }

  Rng eval_rng(derive_seed(config.seed, 4));
  for (std::size_t i = 0; i < config.eval_queries; ++i) {
    const Group g = draw_group(config, planted, eval_rng);
    const std::string qid = id_string("q", i);
    ds.queries.emplace(qid, planted.embed(g.query, eval_rng));
    for (std::size_t j = 0; j < g.docs.size(); ++j) {
      const std::string did = qid + "_" + id_string("d", j);
      ds.corpus.emplace(did, planted.embed(g.docs[j], eval_rng));
      if (j == 0) ds.qrels[qid][did] = 1;
    }
  }
  return ds;
}

}  // namespace colproj
