#pragma once

// Contrastive training of the router with checkpoint anchoring.
//
// Per batch the loss is
//   total = route + lambda_emb * emb_anchor + lambda_proj * proj_anchor
// where route is the mean weighted cross-entropy of each example's scores
// over its candidate set (replay examples weighted by the replay
// multiplier), emb_anchor pulls previously registered embedding rows back
// toward the snapshot taken at the start of the experience, and proj_anchor
// does the same for the projection under a 1/(D*d) normalized squared
// Frobenius norm. Gradients are analytic, including the paths through the
// query and embedding normalizations; only embedding rows that appear as
// candidates or anchors receive gradient.

#include "carve/common.hpp"
#include "carve/example.hpp"
#include "carve/metrics.hpp"
#include "carve/registry.hpp"
#include "carve/replay.hpp"
#include "carve/rng.hpp"
#include "carve/router.hpp"
#include "carve/sampling.hpp"

#include <json.hpp>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace carve {

enum class AnchorVariant { kCosine, kL2 };

inline AnchorVariant parse_anchor_variant(const std::string& s) {
  if (s == "cosine") return AnchorVariant::kCosine;
  if (s == "l2") return AnchorVariant::kL2;
  fail("training: unknown anchor variant '", s, "' (expected cosine or l2)");
}

struct SoftTargetConfig {
  bool enabled = false;
  double epsilon = 0.02;
  int k = 10;
};

struct TwoPhaseConfig {
  double phase1_fraction = 0.4;
  double phase1_lr_proj = 1e-4;
  bool anchors_phase1_only = false;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct TrainConfig {
  double tau = 0.08;
  int embed_dim = 64;
  double lr_proj = 3e-4;
  double lr_emb = 5e-5;
  double lambda_emb = 1e4;
  double lambda_proj = 5e4;
  AnchorVariant anchor_variant = AnchorVariant::kCosine;
  int epochs = 3;
  int batch_size = 32;
  double replay_loss_multiplier = 5.0;
  SoftTargetConfig soft_targets;
  std::optional<TwoPhaseConfig> two_phase;
  AdamConfig adam;
  std::uint64_t seed = 0;

  void validate() const {
    check(tau > 0.0, "training: tau must be positive");
    check(embed_dim >= 1, "training: embed_dim must be >= 1");
    check(lr_proj > 0.0 && lr_emb > 0.0, "training: learning rates must be positive");
    check(lambda_emb >= 0.0 && lambda_proj >= 0.0,
          "training: anchor weights must be >= 0");
    check(epochs >= 1, "training: epochs must be >= 1");
    check(batch_size >= 1, "training: batch_size must be >= 1");
    check(replay_loss_multiplier >= 0.0,
          "training: replay_loss_multiplier must be >= 0");
    if (soft_targets.enabled) {
      check(soft_targets.epsilon >= 0.0 && soft_targets.epsilon < 1.0,
            "training: soft target epsilon must lie in [0, 1)");
      check(soft_targets.k >= 1, "training: soft target k must be >= 1");
    }
    if (two_phase) {
      check(two_phase->phase1_fraction >= 0.0 && two_phase->phase1_fraction <= 1.0,
            "training: phase1_fraction must lie in [0, 1]");
      check(two_phase->phase1_lr_proj > 0.0,
            "training: phase1_lr_proj must be positive");
    }
  }
};

struct LossBreakdown {
  double route = 0.0;
  double emb_anchor = 0.0;   // raw mean anchor term, before lambda_emb
  double proj_anchor = 0.0;  // raw normalized Frobenius term, before lambda_proj
  double total = 0.0;
};

struct BatchItem {
  const Vector* features = nullptr;
  CandidateSet cand;
  double weight = 1.0;

  int gold() const { return cand.indices[static_cast<std::size_t>(cand.positive_pos)]; }
};

struct LossGrads {
  LossBreakdown loss;
  Matrix dW;
  std::map<int, Vector> dE;  // embedding rows touched this batch
};

// Target distribution over candidate positions. Soft targets put 1-epsilon
// on the positive and spread epsilon over the k candidates whose embeddings
// are closest (by cosine) to the positive's; with fewer than k negatives the
// mass spreads over all of them so the targets still sum to one.
inline Vector candidate_targets(const RouterState& s, const CandidateSet& cand,
                                const SoftTargetConfig& soft) {
  const int K = static_cast<int>(cand.indices.size());
  Vector t = Vector::Zero(K);
  if (!soft.enabled || soft.epsilon == 0.0 || K < 2) {
    t[cand.positive_pos] = 1.0;
    return t;
  }
  const Vector e_pos = model_embedding(s, cand.indices[static_cast<std::size_t>(cand.positive_pos)]);
  std::vector<std::pair<double, int>> sims;  // (cosine, position)
  sims.reserve(static_cast<std::size_t>(K) - 1);
  for (int j = 0; j < K; ++j) {
    if (j == cand.positive_pos) continue;
    const Vector e_j = model_embedding(s, cand.indices[static_cast<std::size_t>(j)]);
    sims.emplace_back(e_pos.dot(e_j), j);
  }
  std::sort(sims.begin(), sims.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return cand.indices[static_cast<std::size_t>(a.second)] <
           cand.indices[static_cast<std::size_t>(b.second)];
  });
  const int k_eff = std::min<int>(soft.k, static_cast<int>(sims.size()));
  t[cand.positive_pos] = 1.0 - soft.epsilon;
  for (int i = 0; i < k_eff; ++i) {
    t[sims[static_cast<std::size_t>(i)].second] = soft.epsilon / k_eff;
  }
  return t;
}

// Cross entropy of softmax(scores) against the targets, with the softmax
// gradient. Stabilized by the max shift; exact for hard targets.
inline double routing_loss(const Vector& sc, const Vector& targets, Vector* dscores) {
  const double smax = sc.maxCoeff();
  const Vector shifted = (sc.array() - smax).exp();
  const double Z = shifted.sum();
  const double lse = std::log(Z) + smax;
  const double loss = lse - sc.dot(targets);
  if (dscores) *dscores = shifted / Z - targets;
  return loss;
}

inline LossGrads loss_and_grads(const RouterState& s, const RouterSnapshot* snap,
                                const std::vector<BatchItem>& batch,
                                const TrainConfig& cfg) {
  check(!batch.empty(), "training: empty batch");
  LossGrads out;
  out.dW = Matrix::Zero(s.feature_dim(), s.embed_dim());
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  for (const auto& item : batch) {
    const Vector& h = *item.features;
    check(h.size() == s.feature_dim(), "training: example feature size ",
          h.size(), " does not match feature_dim ", s.feature_dim());
    const int K = static_cast<int>(item.cand.indices.size());
    check(K >= 1 && item.cand.positive_pos >= 0 && item.cand.positive_pos < K,
          "training: malformed candidate set");

    Vector u = s.W.transpose() * h;
    const double nu = u.norm();
    check(nu > kTinyNorm,
          "training: degenerate query (projected features have zero norm)");
    const Vector z = u / nu;

    std::vector<Vector> e(static_cast<std::size_t>(K));
    std::vector<double> nv(static_cast<std::size_t>(K));
    Vector sc(K);
    for (int j = 0; j < K; ++j) {
      const int m = item.cand.indices[static_cast<std::size_t>(j)];
      Vector v = s.E.row(m).transpose();
      nv[static_cast<std::size_t>(j)] = v.norm();
      check(nv[static_cast<std::size_t>(j)] > kTinyNorm,
            "training: embedding row ", m, " has zero norm");
      e[static_cast<std::size_t>(j)] = v / nv[static_cast<std::size_t>(j)];
      sc[j] = z.dot(e[static_cast<std::size_t>(j)]) / s.tau;
    }

    const Vector targets = candidate_targets(s, item.cand, cfg.soft_targets);
    Vector dsc;
    const double ce = routing_loss(sc, targets, &dsc);
    const double w = item.weight * inv_b;
    out.loss.route += w * ce;

    // d route / d z, then through z = u / |u| onto W.
    Vector g_z = Vector::Zero(s.embed_dim());
    for (int j = 0; j < K; ++j) {
      g_z += (dsc[j] / s.tau) * e[static_cast<std::size_t>(j)];
    }
    const Vector g_u = (g_z - g_z.dot(z) * z) / nu;
    out.dW.noalias() += w * (h * g_u.transpose());

    // d route / d v_j through e_j = v_j / |v_j|.
    for (int j = 0; j < K; ++j) {
      const int m = item.cand.indices[static_cast<std::size_t>(j)];
      const double coeff = dsc[j] / s.tau;
      const Vector g_e = coeff * z;
      const Vector g_v =
          (g_e - g_e.dot(e[static_cast<std::size_t>(j)]) * e[static_cast<std::size_t>(j)]) /
          nv[static_cast<std::size_t>(j)];
      auto [it, fresh] = out.dE.try_emplace(m, Vector::Zero(s.embed_dim()));
      it->second += w * g_v;
    }
  }

  if (snap && snap->anchored_count > 0) {
    const int A = snap->anchored_count;
    check(A <= s.num_models(), "training: snapshot anchors ", A,
          " rows but the table only has ", s.num_models());
    const double inv_a = 1.0 / static_cast<double>(A);
    for (int m = 0; m < A; ++m) {
      const Vector v = s.E.row(m).transpose();
      const Vector v_prev = snap->E.row(m).transpose();
      if (cfg.anchor_variant == AnchorVariant::kCosine) {
        const double nv_cur = v.norm();
        const double nv_prev = v_prev.norm();
        check(nv_cur > kTinyNorm && nv_prev > kTinyNorm,
              "training: anchored embedding row ", m,
              " has zero norm under the cosine anchor");
        const Vector e_cur = v / nv_cur;
        const Vector e_prev = v_prev / nv_prev;
        const double cos = e_cur.dot(e_prev);
        out.loss.emb_anchor += inv_a * (1.0 - cos);
        if (cfg.lambda_emb > 0.0) {
          const Vector g_v = -inv_a * (e_prev - cos * e_cur) / nv_cur;
          auto [it, fresh] = out.dE.try_emplace(m, Vector::Zero(s.embed_dim()));
          it->second += cfg.lambda_emb * g_v;
        }
      } else {
        const Vector diff = v - v_prev;
        out.loss.emb_anchor += inv_a * diff.squaredNorm();
        if (cfg.lambda_emb > 0.0) {
          auto [it, fresh] = out.dE.try_emplace(m, Vector::Zero(s.embed_dim()));
          it->second += cfg.lambda_emb * (2.0 * inv_a) * diff;
        }
      }
    }

    const double inv_dd = 1.0 / (static_cast<double>(s.feature_dim()) * s.embed_dim());
    const Matrix w_diff = s.W - snap->W;
    out.loss.proj_anchor = inv_dd * w_diff.squaredNorm();
    if (cfg.lambda_proj > 0.0) {
      out.dW.noalias() += cfg.lambda_proj * (2.0 * inv_dd) * w_diff;
    }
  }

  out.loss.total = out.loss.route + cfg.lambda_emb * out.loss.emb_anchor +
                   cfg.lambda_proj * out.loss.proj_anchor;

  check(all_finite(out.dW), "training: non-finite gradient in the projection");
  for (const auto& [m, g] : out.dE) {
    check(all_finite(g), "training: non-finite gradient in embedding row ", m);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer: Adam with decoupled weight decay, bias correction, and sparse
// per-row moments for the embedding table. Rows created by expansion start
// with zero moments and their own step counts.
// ---------------------------------------------------------------------------

struct OptimizerState {
  Matrix mW, vW;
  std::int64_t step_w = 0;
  std::map<int, Vector> mE, vE;
  std::map<int, std::int64_t> step_e;
};

inline void optimizer_step(RouterState& s, OptimizerState& opt, const Matrix& dW,
                           const std::map<int, Vector>& dE, double lr_proj,
                           double lr_emb, const AdamConfig& cfg) {
  check(all_finite(dW), "optimizer: non-finite gradient in the projection");
  if (opt.mW.size() == 0) {
    opt.mW = Matrix::Zero(s.W.rows(), s.W.cols());
    opt.vW = Matrix::Zero(s.W.rows(), s.W.cols());
  }
  opt.step_w += 1;
  opt.mW = cfg.beta1 * opt.mW + (1.0 - cfg.beta1) * dW;
  opt.vW = cfg.beta2 * opt.vW + (1.0 - cfg.beta2) * dW.cwiseProduct(dW);
  {
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(opt.step_w));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(opt.step_w));
    const Matrix m_hat = opt.mW / bc1;
    const Matrix v_hat = opt.vW / bc2;
    s.W -= lr_proj * (m_hat.array() / (v_hat.array().sqrt() + cfg.eps)).matrix();
    if (cfg.weight_decay > 0.0) s.W -= lr_proj * cfg.weight_decay * s.W;
  }

  for (const auto& [row, g] : dE) {
    check(row >= 0 && row < s.num_models(), "optimizer: gradient for row ", row,
          " outside the embedding table");
    check(all_finite(g), "optimizer: non-finite gradient in embedding row ", row);
    auto [mit, fresh_m] = opt.mE.try_emplace(row, Vector::Zero(s.embed_dim()));
    auto [vit, fresh_v] = opt.vE.try_emplace(row, Vector::Zero(s.embed_dim()));
    std::int64_t& step = opt.step_e[row];
    step += 1;
    mit->second = cfg.beta1 * mit->second + (1.0 - cfg.beta1) * g;
    vit->second = cfg.beta2 * vit->second + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    const Vector m_hat = mit->second / bc1;
    const Vector v_hat = vit->second / bc2;
    Vector update = lr_emb * (m_hat.array() / (v_hat.array().sqrt() + cfg.eps)).matrix();
    if (cfg.weight_decay > 0.0) {
      update += lr_emb * cfg.weight_decay * Vector(s.E.row(row).transpose());
    }
    s.E.row(row) -= update.transpose();
  }
}

// ---------------------------------------------------------------------------
// Experience training loop
// ---------------------------------------------------------------------------

struct TrainLogLine {
  std::int64_t step = 0;
  double route = 0.0;
  double emb_anchor = 0.0;
  double proj_anchor = 0.0;
  double total = 0.0;
  double lr_proj = 0.0;
  double lr_emb = 0.0;
  int phase = 1;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["step"] = step;
    j["route"] = route;
    j["emb_anchor"] = emb_anchor;
    j["proj_anchor"] = proj_anchor;
    j["total"] = total;
    j["lr_proj"] = lr_proj;
    j["lr_emb"] = lr_emb;
    j["phase"] = phase;
    return j;
  }
};

inline void write_train_log(const std::vector<TrainLogLine>& log,
                            const std::string& path) {
  std::vector<std::string> lines;
  lines.reserve(log.size());
  for (const auto& line : log) lines.push_back(line.to_json().dump());
  io::write_lines(path, lines);
}

struct TrainResult {
  RouterState state;
  std::vector<TrainLogLine> log;
};

// Trains one experience, 1-based index t in the stream. Registers the
// experience's new models, expands the embedding table, snapshots the
// pre-experience parameters for anchoring when t > 1, folds in the replay
// buffer, and runs the epoch/batch loop with hard-negative mining refreshed
// at the start and every mining_every optimizer steps.
inline TrainResult train_experience(RouterState state, Registry& registry,
                                    const Experience& exp,
                                    const ReplayBuffer* replay, int t,
                                    const TrainConfig& cfg,
                                    const SamplingConfig& scfg) {
  cfg.validate();
  scfg.validate();
  check(t >= 1, "training: experience index must be >= 1");
  check(state.num_models() == registry.size(),
        "training: embedding table has ", state.num_models(),
        " rows but the registry has ", registry.size());

  std::optional<RouterSnapshot> snap;
  if (t > 1) snap = snapshot(state);

  registry.register_models(exp.new_models);
  const int new_count = registry.size() - state.num_models();
  state = expand_embeddings(std::move(state), new_count,
                            derive_seed(cfg.seed, tag64("expand"), static_cast<std::uint64_t>(t)));
  state.registry_version = registry.version();

  struct Item {
    const Example* ex = nullptr;
    int gold = -1;
    double weight = 1.0;
  };
  std::vector<Item> pool;
  auto add_example = [&](const Example& ex) {
    Item item;
    item.ex = &ex;
    item.gold = registry.require_index(ex.model_name);
    check(registry.record(item.gold).domain == ex.domain,
          "training: example for '", ex.model_name, "' carries domain '",
          ex.domain, "' but the registry says '",
          registry.record(item.gold).domain, "'");
    item.weight = ex.from_replay ? cfg.replay_loss_multiplier : 1.0;
    pool.push_back(item);
  };
  for (const auto& ex : exp.train) add_example(ex);
  if (replay) {
    for (const auto& entry : replay->entries) add_example(entry.example);
  }
  check(!pool.empty(), "training: experience '", exp.label,
        "' has no training examples");

  std::vector<std::string> domains;
  domains.reserve(pool.size());
  for (const auto& item : pool) domains.push_back(item.ex->domain);

  std::vector<std::vector<std::vector<int>>> epochs;
  std::int64_t total_steps = 0;
  for (int e = 0; e < cfg.epochs; ++e) {
    epochs.push_back(make_batches(domains, cfg.batch_size, scfg,
                                  derive_seed(cfg.seed, tag64("batch"),
                                              static_cast<std::uint64_t>(t),
                                              static_cast<std::uint64_t>(e))));
    total_steps += static_cast<std::int64_t>(epochs.back().size());
  }
  const std::int64_t phase1_steps =
      cfg.two_phase ? static_cast<std::int64_t>(
                          std::ceil(cfg.two_phase->phase1_fraction *
                                    static_cast<double>(total_steps)))
                    : 0;

  std::vector<MiningExample> mining;
  mining.reserve(pool.size());
  for (const auto& item : pool) {
    mining.push_back(MiningExample{&item.ex->features, item.gold});
  }
  HardNegativeCache cache = mine_hard_negatives(state, registry, mining, scfg, 0);

  OptimizerState opt;
  TrainResult result;
  std::int64_t step = 0;
  for (const auto& batches : epochs) {
    for (const auto& batch : batches) {
      ++step;
      const int phase = cfg.two_phase && step <= phase1_steps ? 1
                        : cfg.two_phase                       ? 2
                                                              : 1;
      const double lr_p = cfg.two_phase && phase == 1 ? cfg.two_phase->phase1_lr_proj
                                                      : cfg.lr_proj;
      const bool anchors_on =
          snap.has_value() &&
          (!cfg.two_phase || !cfg.two_phase->anchors_phase1_only || phase == 1);

      std::vector<BatchItem> items;
      items.reserve(batch.size());
      for (int pi : batch) {
        const Item& src = pool[static_cast<std::size_t>(pi)];
        BatchItem bi;
        bi.features = &src.ex->features;
        bi.weight = src.weight;
        bi.cand = build_candidate_set(
            src.gold, src.ex->domain, registry, cache, scfg,
            derive_seed(cfg.seed, tag64("cand"), static_cast<std::uint64_t>(t),
                        static_cast<std::uint64_t>(step),
                        static_cast<std::uint64_t>(pi)));
        items.push_back(std::move(bi));
      }

      const LossGrads lg =
          loss_and_grads(state, anchors_on ? &*snap : nullptr, items, cfg);
      optimizer_step(state, opt, lg.dW, lg.dE, lr_p, cfg.lr_emb, cfg.adam);

      TrainLogLine line;
      line.step = step;
      line.route = lg.loss.route;
      line.emb_anchor = lg.loss.emb_anchor;
      line.proj_anchor = lg.loss.proj_anchor;
      line.total = lg.loss.total;
      line.lr_proj = lr_p;
      line.lr_emb = cfg.lr_emb;
      line.phase = phase;
      result.log.push_back(line);

      if (step - cache.last_refresh_step >= scfg.mining_every) {
        cache = mine_hard_negatives(state, registry, mining, scfg, step);
      }
    }
  }
  result.state = std::move(state);
  return result;
}

// ---------------------------------------------------------------------------
// Stream driver
// ---------------------------------------------------------------------------

enum class ReplayMode { kNone, kRandom, kCoreset };

struct StreamConfig {
  TrainConfig train;
  SamplingConfig sampling;
  ReplayConfig replay;
  ReplayMode replay_mode = ReplayMode::kNone;
  FamilyOptions family;
};

struct StreamResult {
  RouterState state;
  Registry registry;
  std::map<std::string, AccuracyMatrix> matrices;
  std::vector<std::vector<TrainLogLine>> logs;  // per experience
  std::vector<ReplayBuffer> replays;            // per experience; empty for t=1
};

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> kNames = {
      "model_accuracy", "family_accuracy", "domain_accuracy",
      "model_top3_accuracy", "domain_top3_accuracy"};
  return kNames;
}

// Fills row `t` (0-based) of every metric matrix: accuracy of the current
// router on the eval split of each experience k <= t, with the full registry
// as the candidate set.
inline void evaluate_row(const RouterState& state, const Registry& registry,
                         const std::vector<Experience>& experiences, int t,
                         const std::map<std::string, std::string>& family_map,
                         std::map<std::string, AccuracyMatrix>& matrices) {
  std::vector<int> candidates(static_cast<std::size_t>(registry.size()));
  std::iota(candidates.begin(), candidates.end(), 0);
  for (int k = 0; k <= t; ++k) {
    const auto& eval = experiences[static_cast<std::size_t>(k)].eval;
    if (eval.empty()) continue;
    std::map<std::string, int> correct;
    for (const auto& ex : eval) {
      const int gold = registry.require_index(ex.model_name);
      const Vector z = embed_query(state, ex.features);
      const auto top3 = top_k(state, z, candidates, 3);
      const int pred = top3.front().first;
      const auto& pred_rec = registry.record(pred);
      if (pred == gold) correct["model_accuracy"] += 1;
      if (family_map.at(pred_rec.id) == family_map.at(registry.record(gold).id)) {
        correct["family_accuracy"] += 1;
      }
      if (pred_rec.domain == ex.domain) correct["domain_accuracy"] += 1;
      bool m3 = false, d3 = false;
      for (const auto& [m, score] : top3) {
        m3 = m3 || m == gold;
        d3 = d3 || registry.record(m).domain == ex.domain;
      }
      if (m3) correct["model_top3_accuracy"] += 1;
      if (d3) correct["domain_top3_accuracy"] += 1;
    }
    for (const auto& name : metric_names()) {
      matrices.at(name).set(t, k,
                            100.0 * correct[name] / static_cast<double>(eval.size()));
    }
  }
}

inline StreamResult run_stream(const std::vector<Experience>& experiences,
                               const StreamConfig& cfg) {
  check(!experiences.empty(), "training: stream has no experiences");
  const int T = static_cast<int>(experiences.size());
  check(!experiences.front().train.empty(),
        "training: first experience has no training examples");
  const int feature_dim = static_cast<int>(experiences.front().train.front().features.size());

  StreamResult res;
  res.state = init_router(feature_dim, cfg.train.embed_dim, cfg.train.tau,
                          derive_seed(cfg.train.seed, tag64("init")));
  for (const auto& name : metric_names()) {
    res.matrices.emplace(name, AccuracyMatrix(T));
  }

  for (int t = 1; t <= T; ++t) {
    ReplayBuffer buffer;
    const ReplayBuffer* buffer_ptr = nullptr;
    if (t > 1 && cfg.replay_mode != ReplayMode::kNone) {
      std::vector<Experience> past(experiences.begin(),
                                   experiences.begin() + (t - 1));
      ReplayConfig rcfg = cfg.replay;
      rcfg.seed = derive_seed(cfg.replay.seed, tag64("replay"),
                              static_cast<std::uint64_t>(t));
      buffer = cfg.replay_mode == ReplayMode::kCoreset
                   ? build_replay(past, rcfg)
                   : build_random_replay(past, rcfg);
      buffer_ptr = &buffer;
    }
    TrainResult tr =
        train_experience(std::move(res.state), res.registry,
                         experiences[static_cast<std::size_t>(t - 1)], buffer_ptr,
                         t, cfg.train, cfg.sampling);
    res.state = std::move(tr.state);
    res.logs.push_back(std::move(tr.log));
    res.replays.push_back(std::move(buffer));

    std::vector<std::string> ids;
    ids.reserve(static_cast<std::size_t>(res.registry.size()));
    for (const auto& rec : res.registry.records()) ids.push_back(rec.id);
    const auto family_map = build_family_map(ids, cfg.train.seed, cfg.family);
    evaluate_row(res.state, res.registry, experiences, t - 1, family_map,
                 res.matrices);
  }
  return res;
}

}  // namespace carve
