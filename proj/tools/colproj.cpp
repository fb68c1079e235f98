// colproj: data generation, training, search, evaluation, diagnostics and
// multi-seed sweeps for late-interaction projection heads.
//
// Exit status: 0 on success, 2 on usage errors, 1 on runtime errors. Errors
// are reported on stderr as a single line:
//   error: kind=<kind> message=<text>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "colproj/data_io.hpp"
#include "colproj/diagnostics.hpp"
#include "colproj/errors.hpp"
#include "colproj/evaluation.hpp"
#include "colproj/experiment.hpp"
#include "colproj/head_io.hpp"
#include "colproj/retrieval.hpp"
#include "colproj/synth.hpp"
#include "colproj/training.hpp"
#include "colproj/version.hpp"

namespace fs = std::filesystem;
using namespace colproj;

namespace {

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error("usage", what) {}
};

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

int report_error(const std::string& kind, const std::string& message) {
  std::cerr << "error: kind=" << kind << " message=" << one_line(message) << '\n';
  return 0;
}

// Turns leftover "--key value" / "--key=value" arguments into overrides.
std::vector<std::pair<std::string, std::string>> parse_overrides(
    const std::vector<std::string>& extras) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& arg = extras[i];
    if (arg.rfind("--", 0) != 0) {
      throw UsageError("unexpected argument '" + arg + "'");
    }
    std::string key = arg.substr(2);
    std::string value;
    if (const auto eq = key.find('='); eq != std::string::npos) {
      value = key.substr(eq + 1);
      key.resize(eq);
    } else {
      if (i + 1 >= extras.size()) throw UsageError("missing value for '" + arg + "'");
      value = extras[++i];
    }
    if (key.find('.') == std::string::npos) {
      throw UsageError("unknown flag '--" + key + "'");
    }
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

nlohmann::json provenance(const ExperimentConfig& config) {
  return {{"tool", kToolName}, {"version", kToolVersion}, {"config", config.to_json()}};
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("io", "cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << '\n';
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;

  ExperimentConfig resolve(CLI::App* sub, const char* seed_key) const {
    auto overrides = parse_overrides(sub->remaining());
    if (seed) overrides.emplace_back(seed_key, std::to_string(*seed));
    std::optional<fs::path> file;
    if (!config_path.empty()) file = config_path;
    return resolve_config(file, overrides);
  }
};

int cmd_gen_data(CLI::App* sub, const Common& common, const std::string& out,
                 const std::string& queries_out, const std::string& corpus_out,
                 const std::string& qrels_out) {
  const ExperimentConfig config = common.resolve(sub, "data.seed");
  const SynthDataset ds = generate_synthetic(config.data);
  nlohmann::json meta = provenance(config);
  meta["synthetic"] = true;
  meta["data"] = config.data.to_json();
  ensure_parent(out);
  write_tuples(out, ds.tuples, meta);
  if (!queries_out.empty()) {
    ensure_parent(queries_out);
    write_token_sets(queries_out, ds.queries, meta);
  }
  if (!corpus_out.empty()) {
    ensure_parent(corpus_out);
    write_token_sets(corpus_out, ds.corpus, meta);
  }
  if (!qrels_out.empty()) {
    ensure_parent(qrels_out);
    write_qrels(qrels_out, ds.qrels);
  }
  std::printf("gen-data: tuples=%zu d=%zu n_way=%zu held_out_queries=%zu corpus_docs=%zu out=%s\n",
              ds.tuples.size(), config.data.d, config.data.n_way, ds.queries.size(),
              ds.corpus.size(), out.c_str());
  return 0;
}

int cmd_train(CLI::App* sub, const Common& common, const std::string& data,
              const std::string& out, std::string trace) {
  ExperimentConfig config = common.resolve(sub, "train.seed");
  nlohmann::json data_meta;
  const std::vector<TrainingTuple> tuples = load_tuples(data, &data_meta);
  if (tuples.empty()) throw FormatError("'" + data + "' contains no tuples");
  if (tuples.front().dim() != config.data.d) {
    throw ConfigError("data.d is " + std::to_string(config.data.d) + " but '" + data +
                      "' has token dim " + std::to_string(tuples.front().dim()));
  }
  const TrainResult result = train_head(config.head_config(), config.train, tuples);
  nlohmann::json meta = provenance(config);
  meta["data_meta"] = data_meta;
  meta["final_loss"] = result.trace.losses.back();
  ensure_parent(out);
  save_head(out, result.params, meta);
  if (trace.empty()) trace = out + ".trace.tsv";
  ensure_parent(trace);
  write_trace(trace, result.trace, meta);
  std::printf("train: steps=%zu final_batch_loss=%.6f params=%zu checksum=%s out=%s trace=%s\n",
              result.trace.steps(), result.trace.losses.back(), result.params.parameter_count(),
              hex64(result.params.checksum()).c_str(), out.c_str(), trace.c_str());
  return 0;
}

int cmd_search(CLI::App* sub, const Common& common, const std::string& head_path,
               const std::string& queries_path, const std::string& corpus_path,
               const std::string& out, const std::string& tag) {
  const ExperimentConfig config = common.resolve(sub, "train.seed");
  const HeadFile head = load_head(head_path);
  const TokenSetFile queries = load_queries(queries_path);
  const TokenSetFile corpus = load_corpus(corpus_path);
  for (const auto* f : {&queries, &corpus}) {
    for (const auto& w : f->warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  }
  const auto run = exact_search(queries.items, corpus.items, head.params, config.top_k);
  ensure_parent(out);
  write_run(out, run, tag);
  std::printf("search: queries=%zu docs=%zu top_k=%zu truncated_queries=%zu truncated_docs=%zu out=%s\n",
              queries.items.size(), corpus.items.size(), config.top_k, queries.truncated,
              corpus.truncated, out.c_str());
  return 0;
}

int cmd_evaluate(CLI::App* sub, const Common& common, const std::string& run_path,
                 const std::string& qrels_path, const std::string& compare,
                 const std::string& out) {
  const ExperimentConfig config = common.resolve(sub, "train.seed");
  const Qrels qrels = load_qrels(qrels_path);
  const NdcgResult r = ndcg_at_k(load_run(run_path), qrels, config.eval_k);
  nlohmann::json report = provenance(config);
  report["run"] = ndcg_to_json(r, config.eval_k);
  std::printf("evaluate: ndcg@%zu=%.6f queries=%zu skipped_missing_qrels=%zu skipped_no_relevant=%zu\n",
              config.eval_k, r.mean, r.per_query.size(), r.skipped_missing_qrels,
              r.skipped_no_relevant);
  if (!compare.empty()) {
    const NdcgResult other = ndcg_at_k(load_run(compare), qrels, config.eval_k);
    std::vector<double> a, b;
    for (const auto& [qid, v] : r.per_query) {
      const auto it = other.per_query.find(qid);
      if (it == other.per_query.end()) continue;
      a.push_back(v);
      b.push_back(it->second);
    }
    report["compare"] = ndcg_to_json(other, config.eval_k);
    if (a.size() >= 2) {
      const TTestResult t = paired_t_test(a, b);
      report["paired_t_test"] = t_test_to_json(t);
      std::printf("evaluate: compare ndcg@%zu=%.6f paired_queries=%zu t=%.6g p=%s\n",
                  config.eval_k, other.mean, a.size(), t.t, t.p_string().c_str());
    } else {
      report["paired_t_test"] = "insufficient queries";
      std::printf("evaluate: compare ndcg@%zu=%.6f paired t-test: insufficient queries\n",
                  config.eval_k, other.mean);
    }
  }
  if (!out.empty()) {
    ensure_parent(out);
    write_json(out, report);
  }
  return 0;
}

int cmd_diagnose(CLI::App* sub, const Common& common, const std::string& head_path,
                 const std::string& data, std::size_t tuple_index, const std::string& out) {
  const ExperimentConfig config = common.resolve(sub, "train.seed");
  const HeadFile head = load_head(head_path);
  const std::vector<TrainingTuple> tuples = load_tuples(data);
  if (tuple_index >= tuples.size()) {
    throw ConfigError("tuple index " + std::to_string(tuple_index) + " out of range (" +
                      std::to_string(tuples.size()) + " tuples)");
  }
  const DiagnosticsReport report = run_diagnostics(head.params, tuples[tuple_index], config.train.seed);
  nlohmann::json j = provenance(config);
  j["head"] = head_config_to_json(head.params.config());
  j["report"] = report.to_json();
  if (!out.empty()) {
    ensure_parent(out);
    write_json(out, j);
  }
  std::size_t failed = 0;
  for (const auto& c : report.checks) {
    std::printf("diagnose: %-30s %s (tolerance %.0e)\n", c.name.c_str(), c.pass ? "pass" : "FAIL",
                c.tolerance);
    if (!c.pass) ++failed;
  }
  if (failed > 0) {
    report_error("check", std::to_string(failed) + " diagnostic check(s) failed");
    return 1;
  }
  return 0;
}

int cmd_sweep(CLI::App* sub, const Common& common, const std::string& seeds_text,
              const std::string& out) {
  const ExperimentConfig config = common.resolve(sub, "train.seed");
  const SynthDataset ds = generate_synthetic(config.data);
  const fs::path dir(out);
  fs::create_directories(dir);
  write_qrels(dir / "heldout.qrels", ds.qrels);

  SweepOptions options;
  options.seeds = parse_seed_list(seeds_text);
  options.baseline = HeadConfig::linear(config.data.d, config.head.output_dim);
  options.out_dir = dir;
  options.metadata = provenance(config);
  const SweepReport report = run_sweep(config, ds, options);

  nlohmann::json j = provenance(config);
  j["variant"] = head_config_to_json(config.head_config());
  j["baseline"] = head_config_to_json(options.baseline);
  j["metric"] = "ndcg@" + std::to_string(config.eval_k);
  j["results"] = report.to_json();
  write_json(dir / "report.json", j);
  write_json(dir / "failures.json", j["results"]["failures"]);

  std::printf("sweep: %-8s %-12s %-12s %-12s\n", "seed", "variant", "baseline", "delta");
  std::size_t failed = 0;
  for (const auto& s : report.seeds) {
    if (s.ok) {
      std::printf("sweep: %-8llu %-12.6f %-12.6f %+.6f\n", static_cast<unsigned long long>(s.seed),
                  s.variant_ndcg, s.baseline_ndcg, s.variant_ndcg - s.baseline_ndcg);
    } else {
      std::printf("sweep: %-8llu failed: %s\n", static_cast<unsigned long long>(s.seed),
                  one_line(s.error).c_str());
      ++failed;
    }
  }
  if (report.variant_ndcg) {
    std::printf("sweep: mean variant=%.6f baseline=%.6f p=%s\n", report.variant_ndcg->mean,
                report.baseline_ndcg->mean,
                report.ndcg_t_test ? report.ndcg_t_test->p_string().c_str() : "insufficient seeds");
  }
  if (failed > 0) {
    report_error("sweep", std::to_string(failed) + " seed(s) failed; see failures.json");
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Projection-head experiments for late-interaction retrieval", kToolName};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  Common common;
  auto add_common = [&common](CLI::App* sub) {
    sub->allow_extras();
    sub->add_option("--config", common.config_path, "key=value config file");
  };

  std::string out, queries_out, corpus_out, qrels_out, data, trace, head, queries, corpus, tag = "colproj";
  std::string run, qrels, compare, seeds = "1,42,1337,1789,1861";
  std::size_t tuple_index = 0;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic distillation dataset");
  add_common(gen);
  gen->add_option("--out", out, "tuples file")->required();
  gen->add_option("--queries-out", queries_out, "held-out queries file");
  gen->add_option("--corpus-out", corpus_out, "held-out corpus file");
  gen->add_option("--qrels-out", qrels_out, "held-out qrels file");
  gen->add_option("--seed", common.seed, "alias for data.seed");

  auto* train = app.add_subcommand("train", "distill a projection head");
  add_common(train);
  train->add_option("--data", data, "tuples file")->required();
  train->add_option("--out", out, "head file")->required();
  train->add_option("--trace", trace, "loss trace (default <out>.trace.tsv)");
  train->add_option("--seed", common.seed, "alias for train.seed");

  auto* search = app.add_subcommand("search", "exact MaxSim search");
  add_common(search);
  search->add_option("--head", head, "head file")->required();
  search->add_option("--queries", queries, "queries file")->required();
  search->add_option("--corpus", corpus, "corpus file")->required();
  search->add_option("--out", out, "TREC run file")->required();
  search->add_option("--tag", tag, "run tag");

  auto* evaluate = app.add_subcommand("evaluate", "NDCG of a run, optionally paired against another");
  add_common(evaluate);
  evaluate->add_option("--run", run, "TREC run file")->required();
  evaluate->add_option("--qrels", qrels, "TREC qrels file")->required();
  evaluate->add_option("--compare", compare, "second run for a paired t-test");
  evaluate->add_option("--out", out, "JSON report");

  auto* diagnose = app.add_subcommand("diagnose", "algebraic and gradient-flow checks on a head");
  add_common(diagnose);
  diagnose->add_option("--head", head, "head file")->required();
  diagnose->add_option("--data", data, "tuples file")->required();
  diagnose->add_option("--tuple", tuple_index, "tuple used for gradient checks");
  diagnose->add_option("--out", out, "JSON report");
  diagnose->add_option("--seed", common.seed, "seed for random instances");

  auto* sweep = app.add_subcommand("sweep", "multi-seed variant vs linear baseline");
  add_common(sweep);
  sweep->add_option("--seeds", seeds, "comma-separated seeds");
  sweep->add_option("--out", out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("usage", e.what());
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen, common, out, queries_out, corpus_out, qrels_out);
    if (train->parsed()) return cmd_train(train, common, data, out, trace);
    if (search->parsed()) return cmd_search(search, common, head, queries, corpus, out, tag);
    if (evaluate->parsed()) return cmd_evaluate(evaluate, common, run, qrels, compare, out);
    if (diagnose->parsed()) return cmd_diagnose(diagnose, common, head, data, tuple_index, out);
    if (sweep->parsed()) return cmd_sweep(sweep, common, seeds, out);
  } catch (const UsageError& e) {
    report_error(e.kind(), e.what());
    return 2;
  } catch (const ConfigError& e) {
    report_error(e.kind(), e.what());
    return 2;
  } catch (const Error& e) {
    report_error(e.kind(), e.what());
    return 1;
  } catch (const std::exception& e) {
    report_error("internal", e.what());
    return 1;
  }
  return 2;
}
