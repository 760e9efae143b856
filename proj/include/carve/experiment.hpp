#pragma once

// Experiment driver: named training strategies over an experience stream,
// multi-seed runs, and report emission.
//
// Strategies cover the continual router plus its ablations and reference
// points. "carve" is the full method (coreset replay + both anchors);
// sequential / random_replay / coreset_replay drop pieces of it;
// carve_no_emb_anchor and carve_no_proj_anchor zero one anchor weight each;
// cumulative and from_scratch retrain on the union of experiences seen so
// far (keeping or discarding parameters respectively); joint trains once on
// everything and reports one row for all stages; retrieval_only routes by
// nearest model card and never trains.

#include "carve/bench.hpp"
#include "carve/common.hpp"
#include "carve/config.hpp"
#include "carve/metrics.hpp"
#include "carve/replay.hpp"
#include "carve/training.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace carve {

enum class Strategy {
  kCarve,
  kSequential,
  kRandomReplay,
  kCoresetReplay,
  kCarveNoEmbAnchor,
  kCarveNoProjAnchor,
  kCumulative,
  kFromScratch,
  kJoint,
  kRetrievalOnly,
};

inline const std::vector<std::pair<std::string, Strategy>>& strategy_table() {
  static const std::vector<std::pair<std::string, Strategy>> kTable = {
      {"carve", Strategy::kCarve},
      {"sequential", Strategy::kSequential},
      {"random_replay", Strategy::kRandomReplay},
      {"coreset_replay", Strategy::kCoresetReplay},
      {"carve_no_emb_anchor", Strategy::kCarveNoEmbAnchor},
      {"carve_no_proj_anchor", Strategy::kCarveNoProjAnchor},
      {"cumulative", Strategy::kCumulative},
      {"from_scratch", Strategy::kFromScratch},
      {"joint", Strategy::kJoint},
      {"retrieval_only", Strategy::kRetrievalOnly},
  };
  return kTable;
}

inline Strategy parse_strategy(const std::string& name) {
  for (const auto& [key, value] : strategy_table()) {
    if (key == name) return value;
  }
  std::string known;
  for (const auto& [key, value] : strategy_table()) {
    if (!known.empty()) known += ", ";
    known += key;
  }
  fail("unknown strategy '", name, "' (known: ", known, ")");
}

inline std::string strategy_name(Strategy s) {
  for (const auto& [key, value] : strategy_table()) {
    if (value == s) return key;
  }
  fail("unnamed strategy value");
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct ExperimentConfig {
  Strategy strategy = Strategy::kCarve;
  std::vector<std::uint64_t> seeds = {0};
  std::optional<std::string> dataset_path;  // load an existing dataset
  std::optional<BenchSpec> bench;           // or generate one
  std::string out_dir = "out";
  TrainConfig train;
  SamplingConfig sampling;
  ReplayConfig replay;
  FamilyOptions family;
  int featurize_dim = 256;        // for datasets without feature sidecars
  std::uint64_t featurize_seed = 0;
};

// Accepts both "bench.x" (inside a full experiment config) and bare "x"
// (dedicated generator spec files) key spellings.
inline BenchSpec parse_bench_spec(const Config& cfg) {
  auto geti = [&](const std::string& key, int dflt) {
    return static_cast<int>(
        cfg.get_int("bench." + key, cfg.get_int(key, dflt)));
  };
  auto getd = [&](const std::string& key, double dflt) {
    return cfg.get_double("bench." + key, cfg.get_double(key, dflt));
  };
  BenchSpec spec;
  spec.num_experiences = geti("num_experiences", spec.num_experiences);
  spec.domains_per_experience =
      geti("domains_per_experience", spec.domains_per_experience);
  spec.models_per_domain = geti("models_per_domain", spec.models_per_domain);
  spec.queries_per_model = geti("queries_per_model", spec.queries_per_model);
  spec.legacy_fraction = getd("legacy_fraction", spec.legacy_fraction);
  spec.feature_dim = geti("feature_dim", spec.feature_dim);
  spec.domain_separation = getd("domain_separation", spec.domain_separation);
  spec.model_spread = getd("model_spread", spec.model_spread);
  spec.query_noise = getd("query_noise", spec.query_noise);
  spec.seed = static_cast<std::uint64_t>(
      cfg.get_int("bench.seed", cfg.get_int("seed", 0)));
  spec.validate();
  return spec;
}

inline ExperimentConfig parse_experiment_config(const Config& cfg) {
  ExperimentConfig ec;
  ec.strategy = parse_strategy(cfg.get_string("strategy", "carve"));
  if (cfg.has("seeds")) {
    ec.seeds.clear();
    for (std::int64_t s : cfg.get_int_list("seeds")) {
      check(s >= 0, "config: seeds must be >= 0");
      ec.seeds.push_back(static_cast<std::uint64_t>(s));
    }
    check(!ec.seeds.empty(), "config: 'seeds' must name at least one seed");
  }
  ec.dataset_path = cfg.find("dataset");
  bool has_bench = false;
  for (const auto& [key, value] : cfg.values()) {
    if (key.rfind("bench.", 0) == 0) has_bench = true;
  }
  if (has_bench) ec.bench = parse_bench_spec(cfg);
  ec.out_dir = cfg.get_string("out", ec.out_dir);

  TrainConfig& t = ec.train;
  t.tau = cfg.get_double("train.tau", t.tau);
  t.embed_dim = static_cast<int>(cfg.get_int("train.embed_dim", t.embed_dim));
  t.lr_proj = cfg.get_double("train.lr_proj", t.lr_proj);
  t.lr_emb = cfg.get_double("train.lr_emb", t.lr_emb);
  t.lambda_emb = cfg.get_double("train.lambda_emb", t.lambda_emb);
  t.lambda_proj = cfg.get_double("train.lambda_proj", t.lambda_proj);
  t.anchor_variant =
      parse_anchor_variant(cfg.get_string("train.anchor_variant", "cosine"));
  t.epochs = static_cast<int>(cfg.get_int("train.epochs", t.epochs));
  t.batch_size = static_cast<int>(cfg.get_int("train.batch_size", t.batch_size));
  t.replay_loss_multiplier =
      cfg.get_double("train.replay_loss_multiplier", t.replay_loss_multiplier);
  t.soft_targets.enabled =
      cfg.get_bool("train.soft_targets", t.soft_targets.enabled);
  t.soft_targets.epsilon =
      cfg.get_double("train.soft_targets_epsilon", t.soft_targets.epsilon);
  t.soft_targets.k =
      static_cast<int>(cfg.get_int("train.soft_targets_k", t.soft_targets.k));
  if (cfg.get_bool("train.two_phase", false)) {
    TwoPhaseConfig tp;
    tp.phase1_fraction =
        cfg.get_double("train.phase1_fraction", tp.phase1_fraction);
    tp.phase1_lr_proj = cfg.get_double("train.phase1_lr_proj", tp.phase1_lr_proj);
    tp.anchors_phase1_only =
        cfg.get_bool("train.anchors_phase1_only", tp.anchors_phase1_only);
    t.two_phase = tp;
  }
  t.adam.beta1 = cfg.get_double("train.adam_beta1", t.adam.beta1);
  t.adam.beta2 = cfg.get_double("train.adam_beta2", t.adam.beta2);
  t.adam.eps = cfg.get_double("train.adam_eps", t.adam.eps);
  t.adam.weight_decay =
      cfg.get_double("train.weight_decay", t.adam.weight_decay);

  SamplingConfig& s = ec.sampling;
  s.k_total = static_cast<int>(cfg.get_int("sampling.k_total", s.k_total));
  s.k_hard = static_cast<int>(cfg.get_int("sampling.k_hard", s.k_hard));
  s.k_semantic = static_cast<int>(cfg.get_int("sampling.k_semantic", s.k_semantic));
  s.k_far = static_cast<int>(cfg.get_int("sampling.k_far", s.k_far));
  s.mining_every = static_cast<int>(cfg.get_int("sampling.mining_every", s.mining_every));
  s.hard_pool_size =
      static_cast<int>(cfg.get_int("sampling.hard_pool_size", s.hard_pool_size));
  s.semantic_pool_size = static_cast<int>(
      cfg.get_int("sampling.semantic_pool_size", s.semantic_pool_size));
  s.max_pool_size =
      static_cast<int>(cfg.get_int("sampling.max_pool_size", s.max_pool_size));
  s.domains_per_batch = static_cast<int>(
      cfg.get_int("sampling.domains_per_batch", s.domains_per_batch));

  ReplayConfig& r = ec.replay;
  if (cfg.has("replay.budget")) {
    r.budget = static_cast<int>(cfg.get_int("replay.budget", 0));
  }
  r.ratio = cfg.get_double("replay.ratio", r.ratio);
  r.min_per_domain =
      static_cast<int>(cfg.get_int("replay.min_per_domain", r.min_per_domain));
  if (cfg.has("replay.max_per_domain")) {
    r.max_per_domain = static_cast<int>(cfg.get_int("replay.max_per_domain", 0));
  }
  r.max_per_model =
      static_cast<int>(cfg.get_int("replay.max_per_model", r.max_per_model));

  ec.family.merge_threshold =
      cfg.get_double("family.merge_threshold", ec.family.merge_threshold);
  ec.featurize_dim =
      static_cast<int>(cfg.get_int("featurize.dim", ec.featurize_dim));
  ec.featurize_seed =
      static_cast<std::uint64_t>(cfg.get_int("featurize.seed", 0));
  return ec;
}

// ---------------------------------------------------------------------------
// Strategy execution
// ---------------------------------------------------------------------------

namespace detail {

inline StreamConfig stream_config_for(const ExperimentConfig& cfg, Strategy s,
                                      std::uint64_t seed) {
  StreamConfig sc;
  sc.train = cfg.train;
  sc.train.seed = seed;
  sc.sampling = cfg.sampling;
  sc.replay = cfg.replay;
  sc.replay.seed = seed;
  sc.family = cfg.family;
  switch (s) {
    case Strategy::kCarve:
      sc.replay_mode = ReplayMode::kCoreset;
      break;
    case Strategy::kSequential:
      sc.replay_mode = ReplayMode::kNone;
      sc.train.lambda_emb = 0.0;
      sc.train.lambda_proj = 0.0;
      break;
    case Strategy::kRandomReplay:
      sc.replay_mode = ReplayMode::kRandom;
      sc.train.lambda_emb = 0.0;
      sc.train.lambda_proj = 0.0;
      break;
    case Strategy::kCoresetReplay:
      sc.replay_mode = ReplayMode::kCoreset;
      sc.train.lambda_emb = 0.0;
      sc.train.lambda_proj = 0.0;
      break;
    case Strategy::kCarveNoEmbAnchor:
      sc.replay_mode = ReplayMode::kCoreset;
      sc.train.lambda_emb = 0.0;
      break;
    case Strategy::kCarveNoProjAnchor:
      sc.replay_mode = ReplayMode::kCoreset;
      sc.train.lambda_proj = 0.0;
      break;
    case Strategy::kCumulative:
    case Strategy::kFromScratch:
    case Strategy::kJoint:
      sc.replay_mode = ReplayMode::kNone;
      sc.train.lambda_emb = 0.0;
      sc.train.lambda_proj = 0.0;
      break;
    case Strategy::kRetrievalOnly:
      sc.replay_mode = ReplayMode::kNone;
      break;
  }
  return sc;
}

// Union of the first `upto` experiences: new models in first-appearance
// order, training examples in stream order.
inline Experience merge_prefix(const std::vector<Experience>& experiences,
                               std::size_t upto, const std::string& label,
                               bool include_models) {
  Experience merged;
  merged.label = label;
  for (std::size_t k = 0; k < upto; ++k) {
    if (include_models) {
      merged.new_models.insert(merged.new_models.end(),
                               experiences[k].new_models.begin(),
                               experiences[k].new_models.end());
    }
    merged.train.insert(merged.train.end(), experiences[k].train.begin(),
                        experiences[k].train.end());
  }
  return merged;
}

inline std::map<std::string, std::string> registry_family_map(
    const Registry& reg, std::uint64_t seed, const FamilyOptions& opts) {
  std::vector<std::string> ids;
  ids.reserve(static_cast<std::size_t>(reg.size()));
  for (const auto& rec : reg.records()) ids.push_back(rec.id);
  return build_family_map(ids, seed, opts);
}

inline StreamResult run_cumulative(const std::vector<Experience>& experiences,
                                   const StreamConfig& cfg) {
  check(!experiences.empty(), "experiment: stream has no experiences");
  const int T = static_cast<int>(experiences.size());
  const int feature_dim =
      static_cast<int>(experiences.front().train.front().features.size());
  StreamResult res;
  res.state = init_router(feature_dim, cfg.train.embed_dim, cfg.train.tau,
                          derive_seed(cfg.train.seed, tag64("init")));
  for (const auto& name : metric_names()) {
    res.matrices.emplace(name, AccuracyMatrix(T));
  }
  for (int t = 1; t <= T; ++t) {
    Experience merged = merge_prefix(experiences, static_cast<std::size_t>(t),
                                     experiences[static_cast<std::size_t>(t - 1)].label,
                                     false);
    merged.new_models = experiences[static_cast<std::size_t>(t - 1)].new_models;
    TrainResult tr = train_experience(std::move(res.state), res.registry, merged,
                                      nullptr, t, cfg.train, cfg.sampling);
    res.state = std::move(tr.state);
    res.logs.push_back(std::move(tr.log));
    const auto fam = registry_family_map(res.registry, cfg.train.seed, cfg.family);
    evaluate_row(res.state, res.registry, experiences, t - 1, fam, res.matrices);
  }
  return res;
}

inline StreamResult run_from_scratch(const std::vector<Experience>& experiences,
                                     const StreamConfig& cfg) {
  check(!experiences.empty(), "experiment: stream has no experiences");
  const int T = static_cast<int>(experiences.size());
  const int feature_dim =
      static_cast<int>(experiences.front().train.front().features.size());
  StreamResult res;
  for (const auto& name : metric_names()) {
    res.matrices.emplace(name, AccuracyMatrix(T));
  }
  for (int t = 1; t <= T; ++t) {
    Registry reg;
    RouterState st =
        init_router(feature_dim, cfg.train.embed_dim, cfg.train.tau,
                    derive_seed(cfg.train.seed, tag64("init"),
                                static_cast<std::uint64_t>(t)));
    Experience merged = merge_prefix(experiences, static_cast<std::size_t>(t),
                                     experiences[static_cast<std::size_t>(t - 1)].label,
                                     true);
    TrainResult tr = train_experience(std::move(st), reg, merged, nullptr, 1,
                                      cfg.train, cfg.sampling);
    res.logs.push_back(std::move(tr.log));
    const auto fam = registry_family_map(reg, cfg.train.seed, cfg.family);
    evaluate_row(tr.state, reg, experiences, t - 1, fam, res.matrices);
    if (t == T) {
      res.state = std::move(tr.state);
      res.registry = std::move(reg);
    }
  }
  return res;
}

inline StreamResult run_joint(const std::vector<Experience>& experiences,
                              const StreamConfig& cfg) {
  check(!experiences.empty(), "experiment: stream has no experiences");
  const int T = static_cast<int>(experiences.size());
  const int feature_dim =
      static_cast<int>(experiences.front().train.front().features.size());
  StreamResult res;
  for (const auto& name : metric_names()) {
    res.matrices.emplace(name, AccuracyMatrix(T));
  }
  res.state = init_router(feature_dim, cfg.train.embed_dim, cfg.train.tau,
                          derive_seed(cfg.train.seed, tag64("init")));
  Experience merged =
      merge_prefix(experiences, experiences.size(), "joint", true);
  TrainResult tr = train_experience(std::move(res.state), res.registry, merged,
                                    nullptr, 1, cfg.train, cfg.sampling);
  res.state = std::move(tr.state);
  res.logs.push_back(std::move(tr.log));
  const auto fam = registry_family_map(res.registry, cfg.train.seed, cfg.family);
  evaluate_row(res.state, res.registry, experiences, T - 1, fam, res.matrices);
  // One model serves every stage, so each row repeats the final evaluation.
  for (auto& [name, matrix] : res.matrices) {
    for (int t = 0; t < T - 1; ++t) {
      for (int k = 0; k < T; ++k) {
        matrix.set(t, k, matrix.get(T - 1, k));
      }
    }
  }
  return res;
}

inline StreamResult run_retrieval_only(const std::vector<Experience>& experiences,
                                       const StreamConfig& cfg) {
  check(!experiences.empty(), "experiment: stream has no experiences");
  const int T = static_cast<int>(experiences.size());
  StreamResult res;
  for (const auto& name : metric_names()) {
    res.matrices.emplace(name, AccuracyMatrix(T));
  }
  for (int t = 1; t <= T; ++t) {
    res.registry.register_models(
        experiences[static_cast<std::size_t>(t - 1)].new_models);
    const auto fam = registry_family_map(res.registry, cfg.train.seed, cfg.family);
    for (int k = 0; k < t; ++k) {
      const auto& eval = experiences[static_cast<std::size_t>(k)].eval;
      if (eval.empty()) continue;
      std::map<std::string, int> correct;
      for (const auto& ex : eval) {
        const int gold = res.registry.require_index(ex.model_name);
        std::vector<std::pair<int, double>> sims;
        sims.reserve(static_cast<std::size_t>(res.registry.size()));
        const double qn = ex.features.norm();
        check(qn > kTinyNorm, "experiment: zero-norm query features");
        for (int m = 0; m < res.registry.size(); ++m) {
          const auto& card = res.registry.record(m).card_features;
          check(card.has_value(), "experiment: model '", res.registry.record(m).id,
                "' has no card features; retrieval needs every card");
          sims.emplace_back(m, ex.features.dot(*card) / (qn * card->norm()));
        }
        std::sort(sims.begin(), sims.end(), [](const auto& a, const auto& b) {
          if (a.second != b.second) return a.second > b.second;
          return a.first < b.first;
        });
        const int pred = sims.front().first;
        const auto& pred_rec = res.registry.record(pred);
        if (pred == gold) correct["model_accuracy"] += 1;
        if (fam.at(pred_rec.id) == fam.at(res.registry.record(gold).id)) {
          correct["family_accuracy"] += 1;
        }
        if (pred_rec.domain == ex.domain) correct["domain_accuracy"] += 1;
        bool m3 = false, d3 = false;
        const std::size_t top = std::min<std::size_t>(3, sims.size());
        for (std::size_t i = 0; i < top; ++i) {
          m3 = m3 || sims[i].first == gold;
          d3 = d3 || res.registry.record(sims[i].first).domain == ex.domain;
        }
        if (m3) correct["model_top3_accuracy"] += 1;
        if (d3) correct["domain_top3_accuracy"] += 1;
      }
      for (const auto& name : metric_names()) {
        res.matrices.at(name).set(
            t - 1, k, 100.0 * correct[name] / static_cast<double>(eval.size()));
      }
    }
  }
  return res;
}

}  // namespace detail

// Runs one strategy at one seed over a fixed experience stream.
inline StreamResult run_strategy(const std::vector<Experience>& experiences,
                                 const ExperimentConfig& cfg, Strategy strategy,
                                 std::uint64_t seed) {
  const StreamConfig sc = detail::stream_config_for(cfg, strategy, seed);
  switch (strategy) {
    case Strategy::kCumulative:
      return detail::run_cumulative(experiences, sc);
    case Strategy::kFromScratch:
      return detail::run_from_scratch(experiences, sc);
    case Strategy::kJoint:
      return detail::run_joint(experiences, sc);
    case Strategy::kRetrievalOnly:
      return detail::run_retrieval_only(experiences, sc);
    default:
      return run_stream(experiences, sc);
  }
}

// ---------------------------------------------------------------------------
// Multi-seed aggregation
// ---------------------------------------------------------------------------

struct CombinedReports {
  std::map<std::string, MetricReport> mean;
  std::map<std::string, MetricReport> stddev;  // sample std; zeros for one seed
};

inline CombinedReports combine_reports(
    const std::vector<std::map<std::string, MetricReport>>& per_seed) {
  check(!per_seed.empty(), "experiment: no runs to combine");
  const std::size_t n = per_seed.size();
  CombinedReports out;
  for (const auto& [metric, first] : per_seed.front()) {
    const int T = first.matrix.experiences();
    AccuracyMatrix mean_m(T), std_m(T);
    MetricReport mean_r, std_r;
    mean_r.per_t_forgetting.assign(first.per_t_forgetting.size(), 0.0);
    std_r.per_t_forgetting.assign(first.per_t_forgetting.size(), 0.0);
    mean_r.column_means.assign(first.column_means.size(), 0.0);
    std_r.column_means.assign(first.column_means.size(), 0.0);

    auto fold = [&](auto&& get, double& mean_out, double& std_out) {
      double sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) sum += get(per_seed[i].at(metric));
      const double mu = sum / static_cast<double>(n);
      double sq = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = get(per_seed[i].at(metric)) - mu;
        sq += d * d;
      }
      mean_out = mu;
      std_out = n > 1 ? std::sqrt(sq / static_cast<double>(n - 1)) : 0.0;
    };

    for (int t = 0; t < T; ++t) {
      for (int k = 0; k < T; ++k) {
        const bool defined = first.matrix.is_defined(t, k);
        for (std::size_t i = 1; i < n; ++i) {
          check(per_seed[i].at(metric).matrix.is_defined(t, k) == defined,
                "experiment: runs disagree on which matrix cells are defined");
        }
        if (!defined) continue;
        double mu = 0.0, sd = 0.0;
        fold([&](const MetricReport& r) { return r.matrix.get(t, k); }, mu, sd);
        mean_m.set(t, k, mu);
        std_m.set(t, k, sd);
      }
    }
    mean_r.matrix = mean_m;
    std_r.matrix = std_m;
    for (std::size_t j = 0; j < first.per_t_forgetting.size(); ++j) {
      fold([&](const MetricReport& r) { return r.per_t_forgetting[j]; },
           mean_r.per_t_forgetting[j], std_r.per_t_forgetting[j]);
    }
    fold([](const MetricReport& r) { return r.mean_forgetting; },
         mean_r.mean_forgetting, std_r.mean_forgetting);
    for (std::size_t j = 0; j < first.column_means.size(); ++j) {
      fold([&](const MetricReport& r) { return r.column_means[j]; },
           mean_r.column_means[j], std_r.column_means[j]);
    }
    fold([](const MetricReport& r) { return r.overall_mean; },
         mean_r.overall_mean, std_r.overall_mean);
    out.mean.emplace(metric, std::move(mean_r));
    out.stddev.emplace(metric, std::move(std_r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Full experiment
// ---------------------------------------------------------------------------

struct SeedRun {
  std::uint64_t seed = 0;
  std::map<std::string, MetricReport> reports;
};

struct ExperimentResult {
  std::vector<Experience> experiences;
  std::vector<SeedRun> runs;
  CombinedReports combined;
};

inline std::map<std::string, MetricReport> reports_from_matrices(
    const std::map<std::string, AccuracyMatrix>& matrices) {
  std::map<std::string, MetricReport> reports;
  for (const auto& [name, m] : matrices) reports.emplace(name, make_metric_report(m));
  return reports;
}

// Resolves the dataset (loading, or generating + saving + reloading so both
// paths share the float32 feature representation), runs every seed, writes
// per-seed artifacts and the combined report under cfg.out_dir.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  check(cfg.dataset_path.has_value() || cfg.bench.has_value(),
        "experiment: configure either 'dataset' or 'bench.*' keys");
  check(!cfg.seeds.empty(), "experiment: need at least one seed");
  fs::create_directories(cfg.out_dir);

  ExperimentResult result;
  if (cfg.dataset_path) {
    result.experiences =
        load_dataset(*cfg.dataset_path, cfg.featurize_dim, cfg.featurize_seed);
  } else {
    const auto generated = generate_benchmark(*cfg.bench);
    const std::string dataset_dir = (fs::path(cfg.out_dir) / "dataset").string();
    save_dataset(generated, dataset_dir);
    result.experiences =
        load_dataset(dataset_dir, cfg.featurize_dim, cfg.featurize_seed);
  }

  std::vector<std::map<std::string, MetricReport>> per_seed;
  for (const std::uint64_t seed : cfg.seeds) {
    StreamResult run =
        run_strategy(result.experiences, cfg, cfg.strategy, seed);
    auto reports = reports_from_matrices(run.matrices);

    const fs::path seed_dir = fs::path(cfg.out_dir) / ("seed_" + std::to_string(seed));
    fs::create_directories(seed_dir);
    write_report_json((seed_dir / "report.json").string(), reports);
    for (std::size_t t = 0; t < run.logs.size(); ++t) {
      if (run.logs[t].empty()) continue;
      write_train_log(run.logs[t],
                      (seed_dir / ("train_log_" + std::to_string(t + 1) + ".jsonl"))
                          .string());
    }
    for (std::size_t t = 0; t < run.replays.size(); ++t) {
      if (run.replays[t].entries.empty()) continue;
      write_replay_audit(run.replays[t],
                         (seed_dir / ("replay_audit_" + std::to_string(t + 1) +
                                      ".jsonl"))
                             .string());
    }
    if (run.state.num_models() > 0) {
      run.state.registry_version = run.registry.version();
      save_router(run.state, (seed_dir / "router.bin").string());
    }
    if (run.registry.size() > 0) {
      save_registry(run.registry, (seed_dir / "registry.json").string());
    }
    result.runs.push_back(SeedRun{seed, reports});
    per_seed.push_back(std::move(reports));
  }

  result.combined = combine_reports(per_seed);
  const bool multi = cfg.seeds.size() > 1;

  nlohmann::json combined_json = report_to_json(result.combined.mean);
  if (multi) {
    const nlohmann::json std_json = report_to_json(result.combined.stddev);
    for (auto& [metric, body] : combined_json.items()) {
      const auto& s = std_json.at(metric);
      body["matrix_std"] = s.at("matrix");
      body["per_t_forgetting_std"] = s.at("per_t_forgetting");
      body["mean_forgetting_std"] = s.at("mean_forgetting");
      body["column_means_std"] = s.at("column_means");
      body["overall_mean_std"] = s.at("overall_mean");
    }
  }
  io::write_json((fs::path(cfg.out_dir) / "report.json").string(), combined_json);

  nlohmann::json summary;
  summary["strategy"] = strategy_name(cfg.strategy);
  summary["seeds"] = cfg.seeds;
  summary["experiences"] = result.experiences.size();
  io::write_json((fs::path(cfg.out_dir) / "summary.json").string(), summary);

  for (const auto& [metric, rep] : result.combined.mean) {
    write_report_csv(
        (fs::path(cfg.out_dir) / ("report_" + metric + ".csv")).string(), rep,
        multi ? &result.combined.stddev.at(metric) : nullptr);
  }
  return result;
}

}  // namespace carve
