#pragma once

// Command-line front end. Subcommands:
//
//   gen-bench     generate a synthetic routing dataset from a spec file
//   train         run a training strategy over a dataset, emit reports
//   eval          score a saved router snapshot against a dataset
//   route         rank models for a single query string
//   replay-build  build a replay buffer and write its audit log
//   families      print the model-family assignment for a dataset's registry
//
// Every failure surfaces as a one-line "error: ..." diagnostic on stderr and
// a nonzero exit code.

#include "carve/bench.hpp"
#include "carve/cli_version.hpp"
#include "carve/common.hpp"
#include "carve/config.hpp"
#include "carve/experiment.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace carve {

namespace cli_detail {

inline std::string format_score(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", value);
  return buf;
}

// Registry rebuilt from a dataset's per-experience new-model files, in
// stream order, so model indices match a router trained on that dataset.
inline Registry dataset_registry(const std::vector<Experience>& experiences) {
  Registry reg;
  for (const auto& exp : experiences) reg.register_models(exp.new_models);
  return reg;
}

inline void check_snapshot_matches(const RouterState& state, const Registry& reg) {
  check(state.num_models() == reg.size(), "snapshot has ", state.num_models(),
        " model rows but the registry has ", reg.size());
  if (state.registry_version != 0 && reg.version() != 0) {
    check(state.registry_version == reg.version(),
          "snapshot was saved at registry version ", state.registry_version,
          " but the registry is at version ", reg.version());
  }
}

struct EvalOptions {
  std::string snapshot;
  std::string dataset;
  std::string registry_path;  // optional; defaults to the dataset's models
  std::string metric;         // optional filter
  std::string out;            // optional; stdout when empty
  int featurize_dim = 256;
  std::uint64_t featurize_seed = 0;
};

inline nlohmann::json evaluate_snapshot(const EvalOptions& opt) {
  const RouterState state = load_router(opt.snapshot);
  const auto experiences =
      load_dataset(opt.dataset, opt.featurize_dim, opt.featurize_seed);
  const Registry reg = opt.registry_path.empty()
                           ? dataset_registry(experiences)
                           : load_registry(opt.registry_path);
  check_snapshot_matches(state, reg);
  if (!opt.metric.empty()) {
    const auto& names = metric_names();
    check(std::find(names.begin(), names.end(), opt.metric) != names.end(),
          "unknown metric '", opt.metric, "'");
  }

  const auto fam = detail::registry_family_map(reg, 0, FamilyOptions{});
  const int T = static_cast<int>(experiences.size());
  std::map<std::string, AccuracyMatrix> matrices;
  for (const auto& name : metric_names()) matrices.emplace(name, AccuracyMatrix(T));
  evaluate_row(state, reg, experiences, T - 1, fam, matrices);

  nlohmann::json out;
  for (const auto& name : metric_names()) {
    if (!opt.metric.empty() && name != opt.metric) continue;
    nlohmann::json per = nlohmann::json::array();
    double sum = 0.0;
    int counted = 0;
    for (int k = 0; k < T; ++k) {
      if (!matrices.at(name).is_defined(T - 1, k)) {
        per.push_back(nullptr);
        continue;
      }
      const double v = matrices.at(name).get(T - 1, k);
      per.push_back(v);
      sum += v;
      counted += 1;
    }
    check(counted > 0, "dataset has no evaluation examples");
    out[name]["per_experience"] = std::move(per);
    out[name]["mean"] = sum / counted;
  }
  return out;
}

}  // namespace cli_detail

inline int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Continual model-routing engine"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kCliVersion));

  // gen-bench -------------------------------------------------------------
  auto* gen = app.add_subcommand("gen-bench", "Generate a synthetic dataset");
  std::string gen_spec, gen_out;
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--spec", gen_spec, "Benchmark spec file (key = value)")
      ->required();
  gen->add_option("--out", gen_out, "Output dataset directory")->required();
  gen->add_option("--seed", gen_seed, "Override the spec's seed");
  gen->callback([&] {
    BenchSpec spec = parse_bench_spec(Config::parse_file(gen_spec));
    if (gen_seed) spec.seed = *gen_seed;
    const auto experiences = generate_benchmark(spec);
    save_dataset(experiences, gen_out);
    std::size_t models = 0, examples = 0;
    for (const auto& exp : experiences) {
      models += exp.new_models.size();
      examples += exp.train.size() + exp.eval.size();
    }
    std::cout << "wrote " << experiences.size() << " experiences (" << models
              << " models, " << examples << " examples) to " << gen_out << "\n";
  });

  // train -------------------------------------------------------------------
  auto* train = app.add_subcommand("train", "Train a routing strategy");
  std::string train_config, train_out, train_strategy, train_dataset;
  std::optional<std::uint64_t> train_seed;
  train->add_option("--config", train_config, "Experiment config file")->required();
  train->add_option("--out", train_out, "Output directory (overrides config)");
  train->add_option("--strategy", train_strategy, "Strategy name (overrides config)");
  train->add_option("--dataset", train_dataset, "Dataset directory (overrides config)");
  train->add_option("--seed", train_seed, "Run a single seed (overrides config)");
  train->callback([&] {
    ExperimentConfig cfg = parse_experiment_config(Config::parse_file(train_config));
    if (!train_out.empty()) cfg.out_dir = train_out;
    if (!train_strategy.empty()) cfg.strategy = parse_strategy(train_strategy);
    if (!train_dataset.empty()) {
      cfg.dataset_path = train_dataset;
      cfg.bench.reset();
    }
    if (train_seed) cfg.seeds = {*train_seed};
    const ExperimentResult result = run_experiment(cfg);
    for (const auto& [metric, rep] : result.combined.mean) {
      std::cout << metric << ": overall_mean=" << cli_detail::format_score(rep.overall_mean)
                << " mean_forgetting=" << cli_detail::format_score(rep.mean_forgetting)
                << "\n";
    }
    std::cout << "reports written to " << cfg.out_dir << "\n";
  });

  // eval ----------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "Evaluate a router snapshot");
  cli_detail::EvalOptions eval_opt;
  eval->add_option("--snapshot", eval_opt.snapshot, "Router snapshot file")->required();
  eval->add_option("--dataset", eval_opt.dataset, "Dataset directory")->required();
  eval->add_option("--registry", eval_opt.registry_path,
                   "Registry JSON (defaults to the dataset's model files)");
  eval->add_option("--metric", eval_opt.metric, "Report a single metric");
  eval->add_option("--out", eval_opt.out, "Write JSON here instead of stdout");
  eval->callback([&] {
    const nlohmann::json report = cli_detail::evaluate_snapshot(eval_opt);
    if (eval_opt.out.empty()) {
      std::cout << report.dump(2) << "\n";
    } else {
      io::write_json(eval_opt.out, report);
      std::cout << "wrote " << eval_opt.out << "\n";
    }
  });

  // route ---------------------------------------------------------------
  auto* route = app.add_subcommand("route", "Rank models for one query");
  std::string route_snapshot, route_registry, route_query;
  int route_k = 3;
  std::uint64_t route_seed = 0;
  route->add_option("--snapshot", route_snapshot, "Router snapshot file")->required();
  route->add_option("--registry", route_registry, "Registry JSON file")->required();
  route->add_option("--query", route_query, "Query text")->required();
  route->add_option("--k", route_k, "How many models to print")
      ->check(CLI::PositiveNumber);
  route->add_option("--seed", route_seed, "Featurizer seed");
  route->callback([&] {
    const RouterState state = load_router(route_snapshot);
    const Registry reg = load_registry(route_registry);
    cli_detail::check_snapshot_matches(state, reg);
    const Vector features = featurize(route_query, state.feature_dim(), route_seed);
    const Vector z = embed_query(state, features);
    std::vector<int> candidates(static_cast<std::size_t>(reg.size()));
    std::iota(candidates.begin(), candidates.end(), 0);
    const auto ranked =
        top_k(state, z, candidates, std::min<int>(route_k, reg.size()));
    for (const auto& [index, score] : ranked) {
      std::cout << reg.record(index).id << "\t" << cli_detail::format_score(score)
                << "\n";
    }
  });

  // replay-build ----------------------------------------------------------
  auto* rb = app.add_subcommand("replay-build", "Build a replay buffer audit");
  std::string rb_dataset, rb_out;
  ReplayConfig rb_cfg;
  std::optional<int> rb_budget;
  std::optional<int> rb_max_domain;
  rb->add_option("--dataset", rb_dataset, "Dataset directory")->required();
  rb->add_option("--out", rb_out, "Audit JSONL output path")->required();
  rb->add_option("--replay-ratio", rb_cfg.ratio, "Budget as a share of the pool");
  rb->add_option("--budget", rb_budget, "Fixed example budget (overrides ratio)");
  rb->add_option("--min-per-domain", rb_cfg.min_per_domain, "Per-domain floor");
  rb->add_option("--max-per-domain", rb_max_domain, "Per-domain cap");
  rb->add_option("--max-per-model", rb_cfg.max_per_model, "Per-model cap");
  rb->add_option("--seed", rb_cfg.seed, "Selection seed");
  rb->callback([&] {
    if (rb_budget) rb_cfg.budget = *rb_budget;
    if (rb_max_domain) rb_cfg.max_per_domain = *rb_max_domain;
    const auto experiences = load_dataset(rb_dataset);
    const ReplayBuffer buffer = build_replay(experiences, rb_cfg);
    write_replay_audit(buffer, rb_out);
    std::size_t pool = 0;
    for (const auto& exp : experiences) pool += exp.train.size();
    std::cout << "selected " << buffer.entries.size() << " of " << pool
              << " training examples"
              << (buffer.floors_trimmed ? " (floors trimmed to fit budget)" : "")
              << (buffer.cap_overflow ? " (per-model cap overflowed)" : "") << "\n";
  });

  // families --------------------------------------------------------------
  auto* fam = app.add_subcommand("families", "Print model family assignments");
  std::string fam_dataset, fam_out;
  double fam_threshold = FamilyOptions{}.merge_threshold;
  fam->add_option("--dataset", fam_dataset, "Dataset directory")->required();
  fam->add_option("--out", fam_out, "Write TSV here instead of stdout");
  fam->add_option("--threshold", fam_threshold, "Cluster merge threshold");
  fam->callback([&] {
    const auto experiences = load_dataset(fam_dataset);
    const Registry reg = cli_detail::dataset_registry(experiences);
    FamilyOptions opts;
    opts.merge_threshold = fam_threshold;
    const auto family_map = detail::registry_family_map(reg, 0, opts);
    std::vector<std::string> lines;
    for (const auto& [id, family] : family_map) {
      lines.push_back(id + "\t" + family);
    }
    if (fam_out.empty()) {
      for (const auto& line : lines) std::cout << line << "\n";
    } else {
      io::write_lines(fam_out, lines);
      std::cout << "wrote " << lines.size() << " assignments to " << fam_out << "\n";
    }
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

inline int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("carve");
  for (const auto& arg : args) argv.push_back(arg.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace carve
