#include "colproj/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>

#include "colproj/errors.hpp"
#include "colproj/head_io.hpp"
#include "colproj/retrieval.hpp"

namespace colproj {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  return static_cast<std::size_t>(parse_u64(key, v));
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt(std::uint64_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

struct Key {
  std::string name;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define SIZE_KEY(NAME, FIELD)                                                              \
  Key {                                                                                    \
    NAME, [](ExperimentConfig& c, const std::string& v) { c.FIELD = parse_size(NAME, v); }, \
        [](const ExperimentConfig& c) { return fmt(static_cast<std::uint64_t>(c.FIELD)); }  \
  }
#define DOUBLE_KEY(NAME, FIELD)                                                              \
  Key {                                                                                      \
    NAME, [](ExperimentConfig& c, const std::string& v) { c.FIELD = parse_double(NAME, v); }, \
        [](const ExperimentConfig& c) { return fmt(c.FIELD); }                               \
  }
#define U64_KEY(NAME, FIELD)                                                               \
  Key {                                                                                    \
    NAME, [](ExperimentConfig& c, const std::string& v) { c.FIELD = parse_u64(NAME, v); }, \
        [](const ExperimentConfig& c) { return fmt(static_cast<std::uint64_t>(c.FIELD)); }  \
  }

const std::vector<Key>& key_table() {
  static const std::vector<Key> table = {
      Key{"head.family",
          [](ExperimentConfig& c, const std::string& v) { c.head.family = parse_head_family(v); },
          [](const ExperimentConfig& c) { return to_string(c.head.family); }},
      SIZE_KEY("head.depth", head.depth),
      DOUBLE_KEY("head.rho", head.rho),
      Key{"head.residual",
          [](ExperimentConfig& c, const std::string& v) {
            c.head.residual = parse_bool("head.residual", v);
          },
          [](const ExperimentConfig& c) { return fmt(c.head.residual); }},
      Key{"head.activation",
          [](ExperimentConfig& c, const std::string& v) { c.head.activation = parse_activation(v); },
          [](const ExperimentConfig& c) { return to_string(c.head.activation); }},
      Key{"head.gate",
          [](ExperimentConfig& c, const std::string& v) { c.head.gate = parse_activation(v); },
          [](const ExperimentConfig& c) { return to_string(c.head.gate); }},
      Key{"head.bias",
          [](ExperimentConfig& c, const std::string& v) {
            if (v == "auto") {
              c.head.bias.reset();
            } else {
              c.head.bias = parse_bool("head.bias", v);
            }
          },
          [](const ExperimentConfig& c) {
            return c.head.bias ? fmt(*c.head.bias) : std::string("auto");
          }},
      DOUBLE_KEY("head.alpha_init", head.alpha_init),
      SIZE_KEY("head.output_dim", head.output_dim),
      SIZE_KEY("train.batch_size", train.batch_size),
      DOUBLE_KEY("train.peak_lr", train.peak_lr),
      DOUBLE_KEY("train.warmup_fraction", train.warmup_fraction),
      SIZE_KEY("train.total_steps", train.total_steps),
      DOUBLE_KEY("train.weight_decay", train.weight_decay),
      U64_KEY("train.seed", train.seed),
      DOUBLE_KEY("train.beta1", train.beta1),
      DOUBLE_KEY("train.beta2", train.beta2),
      DOUBLE_KEY("train.eps", train.eps),
      DOUBLE_KEY("train.temperature", train.loss.temperature),
      Key{"train.kl_direction",
          [](ExperimentConfig& c, const std::string& v) {
            c.train.loss.direction = parse_kl_direction(v);
          },
          [](const ExperimentConfig& c) { return to_string(c.train.loss.direction); }},
      SIZE_KEY("data.d", data.d),
      SIZE_KEY("data.vocab_size", data.vocab_size),
      SIZE_KEY("data.query_tokens", data.query_tokens),
      SIZE_KEY("data.doc_tokens", data.doc_tokens),
      SIZE_KEY("data.n_way", data.n_way),
      SIZE_KEY("data.tuple_count", data.tuple_count),
      SIZE_KEY("data.planted_rank", data.planted_rank),
      DOUBLE_KEY("data.sharpness", data.sharpness),
      DOUBLE_KEY("data.noise_sigma", data.noise_sigma),
      U64_KEY("data.seed", data.seed),
      SIZE_KEY("data.eval_queries", data.eval_queries),
      DOUBLE_KEY("data.nuisance_weight", data.nuisance_weight),
      DOUBLE_KEY("data.token_jitter", data.token_jitter),
      SIZE_KEY("eval.top_k", top_k),
      SIZE_KEY("eval.k", eval_k),
  };
  return table;
}

#undef SIZE_KEY
#undef DOUBLE_KEY
#undef U64_KEY

const Key& find_key(const std::string& name) {
  for (const Key& k : key_table()) {
    if (k.name == name) return k;
  }
  throw ConfigError("unknown config key '" + name + "'");
}

nlohmann::json aggregate_or_null(const std::optional<SeedAggregate>& a) {
  return a ? aggregate_to_json(*a) : nlohmann::json(nullptr);
}

nlohmann::json t_test_or_note(const std::optional<TTestResult>& t) {
  return t ? t_test_to_json(*t) : nlohmann::json("insufficient seeds");
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  head.output_dim = 8;
  train.total_steps = 500;
  for (const Key& k : key_table()) sources[k.name] = "default";
}

const std::vector<std::string>& ExperimentConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const Key& k : key_table()) out.push_back(k.name);
    return out;
  }();
  return names;
}

void ExperimentConfig::set(const std::string& key, const std::string& value,
                           const std::string& source) {
  find_key(key).set(*this, value);
  sources[key] = source;
}

std::string ExperimentConfig::get(const std::string& key) const { return find_key(key).get(*this); }

HeadConfig ExperimentConfig::head_config() const {
  HeadConfig c = head;
  c.input_dim = data.d;
  return c;
}

void ExperimentConfig::validate() const {
  head_config().validate();
  train.validate();
  data.validate();
  if (top_k == 0) throw ConfigError("eval.top_k must be at least 1");
  if (eval_k == 0) throw ConfigError("eval.k must be at least 1");
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const Key& k : key_table()) {
    j[k.name] = {{"value", k.get(*this)}, {"source", sources.at(k.name)}};
  }
  return j;
}

std::vector<std::pair<std::string, std::string>> read_config_file(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error("io", "cannot open config '" + path.string() + "'");
  }
  std::vector<std::pair<std::string, std::string>> out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    const auto hash = text.find('#');
    if (hash != std::string::npos) text.resize(hash);
    if (trim(text).empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) {
      throw ParseError(path.string() + " line " + std::to_string(line) + ": expected key=value");
    }
    std::string key = trim(text.substr(0, eq));
    std::string value = trim(text.substr(eq + 1));
    if (key.empty()) {
      throw ParseError(path.string() + " line " + std::to_string(line) + ": empty key");
    }
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

ExperimentConfig resolve_config(const std::optional<std::filesystem::path>& file,
                                const std::vector<std::pair<std::string, std::string>>& overrides) {
  ExperimentConfig c;
  if (file) {
    for (const auto& [k, v] : read_config_file(*file)) c.set(k, v, "file");
  }
  for (const auto& [k, v] : overrides) c.set(k, v, "cli");
  c.validate();
  return c;
}

nlohmann::json SweepReport::to_json() const {
  nlohmann::json j;
  j["per_seed"] = nlohmann::json::array();
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& s : seeds) {
    if (s.ok) {
      j["per_seed"].push_back({{"seed", s.seed},
                               {"variant_ndcg", s.variant_ndcg},
                               {"baseline_ndcg", s.baseline_ndcg},
                               {"ndcg_delta", s.variant_ndcg - s.baseline_ndcg},
                               {"variant_final_kl", s.variant_final_kl},
                               {"baseline_final_kl", s.baseline_final_kl}});
    } else {
      failures.push_back({{"seed", s.seed}, {"error", s.error}});
    }
  }
  j["failures"] = failures;
  j["variant_ndcg"] = aggregate_or_null(variant_ndcg);
  j["baseline_ndcg"] = aggregate_or_null(baseline_ndcg);
  j["variant_final_kl"] = aggregate_or_null(variant_kl);
  j["baseline_final_kl"] = aggregate_or_null(baseline_kl);
  if (variant_ndcg && baseline_ndcg) {
    j["mean_ndcg_delta"] = variant_ndcg->mean - baseline_ndcg->mean;
  }
  j["ndcg_paired_t_test"] = t_test_or_note(ndcg_t_test);
  j["kl_paired_t_test"] = t_test_or_note(kl_t_test);
  return j;
}

SweepReport run_sweep(const ExperimentConfig& config, const SynthDataset& dataset,
                      const SweepOptions& options) {
  if (options.seeds.empty()) {
    throw ContractError("run_sweep: no seeds");
  }
  const HeadConfig variant = config.head_config();
  std::vector<std::uint64_t> seeds = options.seeds;
  std::sort(seeds.begin(), seeds.end());
  if (options.out_dir) std::filesystem::create_directories(*options.out_dir);

  SweepReport report;
  for (std::uint64_t seed : seeds) {
    SeedOutcome outcome;
    outcome.seed = seed;
    try {
      TrainConfig tc = config.train;
      tc.seed = seed;
      const auto run_one = [&](const HeadConfig& hc, const std::string& label, double& ndcg,
                               double& kl) {
        const TrainResult trained = train_head(hc, tc, dataset.tuples);
        kl = dataset_loss(trained.params, dataset.tuples, config.train.loss);
        const auto run = exact_search(dataset.queries, dataset.corpus, trained.params, config.top_k);
        ndcg = ndcg_at_k(run, dataset.qrels, config.eval_k).mean;
        if (options.out_dir) {
          nlohmann::json meta = options.metadata;
          meta["seed"] = seed;
          meta["role"] = label;
          const std::string stem = label + "_seed" + std::to_string(seed);
          save_head(*options.out_dir / (stem + ".head"), trained.params, meta);
          write_trace(*options.out_dir / (stem + ".trace.tsv"), trained.trace, meta);
          write_run(*options.out_dir / (stem + ".run"), run, stem);
        }
      };
      run_one(variant, "variant", outcome.variant_ndcg, outcome.variant_final_kl);
      run_one(options.baseline, "baseline", outcome.baseline_ndcg, outcome.baseline_final_kl);
      outcome.ok = true;
    } catch (const Error& e) {
      outcome.error = e.kind() + ": " + e.what();
    }
    report.seeds.push_back(std::move(outcome));
  }

  std::vector<double> vn, bn, vk, bk;
  for (const auto& s : report.seeds) {
    if (!s.ok) continue;
    vn.push_back(s.variant_ndcg);
    bn.push_back(s.baseline_ndcg);
    vk.push_back(s.variant_final_kl);
    bk.push_back(s.baseline_final_kl);
  }
  if (!vn.empty()) {
    report.variant_ndcg = aggregate_seeds(vn);
    report.baseline_ndcg = aggregate_seeds(bn);
    report.variant_kl = aggregate_seeds(vk);
    report.baseline_kl = aggregate_seeds(bk);
  }
  if (vn.size() >= 2) {
    report.ndcg_t_test = paired_t_test(vn, bn);
    report.kl_t_test = paired_t_test(vk, bk);
  }
  return report;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::set<std::uint64_t> seeds;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const std::string item =
        trim(text.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    seeds.insert(parse_u64("seeds", item));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return {seeds.begin(), seeds.end()};
}

}  // namespace colproj
