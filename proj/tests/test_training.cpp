#include "carve/training.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

namespace carve {
namespace {

TEST(Adam, FirstStepMovesByTheLearningRate) {
  // Scalar parameter at 0, gradient 1, lr 0.1: bias-corrected Adam's first
  // step is -lr * g / (|g| + eps), i.e. -0.1 up to eps.
  RouterState s;
  s.W = Matrix::Zero(1, 1);
  s.E = Matrix::Zero(0, 1);
  OptimizerState opt;
  Matrix dW = Matrix::Constant(1, 1, 1.0);
  optimizer_step(s, opt, dW, {}, 0.1, 0.1, AdamConfig{});
  EXPECT_NEAR(s.W(0, 0), -0.1, 1e-7);
  // A constant gradient keeps the step size constant under bias correction.
  optimizer_step(s, opt, dW, {}, 0.1, 0.1, AdamConfig{});
  EXPECT_NEAR(s.W(0, 0), -0.2, 1e-7);
}

TEST(Adam, EmbeddingRowsKeepTheirOwnClocks) {
  RouterState s;
  s.W = Matrix::Zero(1, 1);
  s.E = Matrix::Zero(2, 3);
  OptimizerState opt;
  const Matrix dW = Matrix::Zero(1, 1);
  std::map<int, Vector> d0{{0, Vector::Constant(3, 1.0)}};
  for (int i = 0; i < 10; ++i) optimizer_step(s, opt, dW, d0, 0.1, 0.01, AdamConfig{});
  // Row 1 first touched at global step 11 still takes a full first step.
  std::map<int, Vector> d1{{1, Vector::Constant(3, 1.0)}};
  optimizer_step(s, opt, dW, d1, 0.1, 0.01, AdamConfig{});
  EXPECT_NEAR(s.E(1, 0), -0.01, 1e-8);
  EXPECT_NEAR(s.E(0, 0), -0.1, 1e-7);  // ten constant-gradient steps of 0.01
}

TEST(Adam, DecoupledWeightDecayShrinksParameters) {
  RouterState s;
  s.W = Matrix::Constant(1, 1, 2.0);
  s.E = Matrix::Zero(0, 1);
  OptimizerState opt;
  AdamConfig cfg;
  cfg.weight_decay = 0.5;
  optimizer_step(s, opt, Matrix::Zero(1, 1), {}, 0.1, 0.1, cfg);
  // Zero gradient: only the decay term -lr * wd * W applies.
  EXPECT_NEAR(s.W(0, 0), 2.0 - 0.1 * 0.5 * 2.0, 1e-12);
}

TEST(RoutingLoss, MatchesManualLogSumExp) {
  Vector sc(3);
  sc << 1.0, 2.0, 0.5;
  Vector t = Vector::Zero(3);
  t[1] = 1.0;
  Vector dsc;
  const double loss = routing_loss(sc, t, &dsc);
  const double Z = std::exp(1.0) + std::exp(2.0) + std::exp(0.5);
  EXPECT_NEAR(loss, std::log(Z) - 2.0, 1e-12);
  EXPECT_NEAR(dsc[0], std::exp(1.0) / Z, 1e-12);
  EXPECT_NEAR(dsc[1], std::exp(2.0) / Z - 1.0, 1e-12);
  EXPECT_NEAR(dsc.sum(), 0.0, 1e-12);
}

RouterState random_state(Rng& rng, int D, int d, int M) {
  RouterState s;
  s.tau = 0.08;
  s.W = Matrix::Zero(D, d);
  for (int i = 0; i < D; ++i) {
    for (int j = 0; j < d; ++j) s.W(i, j) = 0.3 * rng.normal();
  }
  s.E = Matrix::Zero(M, d);
  for (int m = 0; m < M; ++m) {
    s.E.row(m) = ((0.5 + rng.uniform()) * rng.unit_vector(d)).transpose();
  }
  return s;
}

TEST(SoftTargets, SpreadEpsilonOverNearestNeighbors) {
  Rng rng(3);
  RouterState s = random_state(rng, 4, 4, 8);
  CandidateSet cand;
  cand.indices = {2, 0, 5, 7, 3};
  cand.positive_pos = 0;
  SoftTargetConfig soft;
  soft.enabled = true;
  soft.epsilon = 0.1;
  soft.k = 2;
  const Vector t = candidate_targets(s, cand, soft);
  EXPECT_NEAR(t.sum(), 1.0, 1e-12);
  EXPECT_NEAR(t[0], 0.9, 1e-12);
  int carriers = 0;
  for (int j = 1; j < 5; ++j) {
    if (t[j] > 0.0) {
      EXPECT_NEAR(t[j], 0.05, 1e-12);
      ++carriers;
    }
  }
  EXPECT_EQ(carriers, 2);
  // The carriers must be the two highest-cosine negatives.
  const Vector e_pos = model_embedding(s, 2);
  std::vector<std::pair<double, int>> sims;
  for (int j = 1; j < 5; ++j) {
    sims.emplace_back(
        e_pos.dot(model_embedding(s, cand.indices[static_cast<std::size_t>(j)])), j);
  }
  std::sort(sims.begin(), sims.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });
  EXPECT_GT(t[sims[0].second], 0.0);
  EXPECT_GT(t[sims[1].second], 0.0);
  EXPECT_EQ(t[sims[3].second], 0.0);
}

TEST(SoftTargets, DisabledGivesOneHot) {
  Rng rng(4);
  RouterState s = random_state(rng, 4, 4, 6);
  CandidateSet cand;
  cand.indices = {1, 2, 3};
  cand.positive_pos = 1;
  const Vector t = candidate_targets(s, cand, SoftTargetConfig{});
  EXPECT_DOUBLE_EQ(t[1], 1.0);
  EXPECT_DOUBLE_EQ(t.sum(), 1.0);
}

struct FdInstance {
  RouterState state;
  RouterSnapshot snap;
  std::vector<Vector> features;
  std::vector<BatchItem> batch;
};

FdInstance make_instance(Rng& rng, bool with_weight) {
  FdInstance inst;
  const int D = 8, d = 4, M = 6;
  inst.state = random_state(rng, D, d, M);
  inst.snap.W = inst.state.W;
  inst.snap.E = inst.state.E;
  // Perturb the snapshot so anchor terms and gradients are nonzero.
  for (int i = 0; i < D; ++i) {
    for (int j = 0; j < d; ++j) inst.snap.W(i, j) += 0.05 * rng.normal();
  }
  for (int m = 0; m < M; ++m) {
    for (int j = 0; j < d; ++j) inst.snap.E(m, j) += 0.05 * rng.normal();
  }
  inst.snap.anchored_count = 3;

  inst.features.reserve(2);
  for (int b = 0; b < 2; ++b) inst.features.push_back(rng.unit_vector(D));
  for (int b = 0; b < 2; ++b) {
    BatchItem item;
    item.features = &inst.features[static_cast<std::size_t>(b)];
    std::vector<int> all{0, 1, 2, 3, 4, 5};
    item.cand.indices = rng.sample(all, 5);
    item.cand.positive_pos = static_cast<int>(rng.below(5));
    item.weight = with_weight && b == 0 ? 5.0 : 1.0;
    inst.batch.push_back(item);
  }
  return inst;
}

double fd_total(const FdInstance& inst, const TrainConfig& cfg) {
  return loss_and_grads(inst.state, &inst.snap, inst.batch, cfg).loss.total;
}

TEST(Gradients, MatchCentralFiniteDifferencesSpotCheck) {
  Rng rng(77);
  for (int trial = 0; trial < 6; ++trial) {
    FdInstance inst = make_instance(rng, trial % 2 == 0);
    TrainConfig cfg;
    cfg.lambda_emb = 1.3;
    cfg.lambda_proj = 2.7;
    cfg.anchor_variant = trial % 2 == 0 ? AnchorVariant::kCosine : AnchorVariant::kL2;
    cfg.soft_targets.enabled = trial % 3 == 0;
    cfg.soft_targets.epsilon = 0.06;
    cfg.soft_targets.k = 2;

    const auto grads = loss_and_grads(inst.state, &inst.snap, inst.batch, cfg);
    const double h = 1e-5;
    for (int i = 0; i < inst.state.feature_dim(); ++i) {
      for (int j = 0; j < inst.state.embed_dim(); ++j) {
        FdInstance plus = inst, minus = inst;
        plus.state.W(i, j) += h;
        minus.state.W(i, j) -= h;
        const double fd = (fd_total(plus, cfg) - fd_total(minus, cfg)) / (2 * h);
        const double a = grads.dW(i, j);
        EXPECT_LE(std::abs(a - fd), 1e-5 * std::max({1.0, std::abs(a), std::abs(fd)}))
            << "dW(" << i << "," << j << ") trial " << trial;
      }
    }
    for (const auto& [m, g] : grads.dE) {
      for (int j = 0; j < inst.state.embed_dim(); ++j) {
        FdInstance plus = inst, minus = inst;
        plus.state.E(m, j) += h;
        minus.state.E(m, j) -= h;
        const double fd = (fd_total(plus, cfg) - fd_total(minus, cfg)) / (2 * h);
        const double a = g[j];
        EXPECT_LE(std::abs(a - fd), 1e-5 * std::max({1.0, std::abs(a), std::abs(fd)}))
            << "dE[" << m << "][" << j << "] trial " << trial;
      }
    }
  }
}

TEST(Gradients, ReplayWeightScalesTheRouteTerm) {
  Rng rng(21);
  FdInstance inst = make_instance(rng, false);
  inst.batch.resize(1);
  TrainConfig cfg;
  cfg.lambda_emb = 0.0;
  cfg.lambda_proj = 0.0;
  const auto base = loss_and_grads(inst.state, nullptr, inst.batch, cfg);
  inst.batch[0].weight = 5.0;
  const auto weighted = loss_and_grads(inst.state, nullptr, inst.batch, cfg);
  EXPECT_NEAR(weighted.loss.route, 5.0 * base.loss.route, 1e-12);
  EXPECT_NEAR((weighted.dW - 5.0 * base.dW).norm(), 0.0, 1e-12);
}

TEST(Gradients, ZeroLambdaStillReportsRawAnchorTerms) {
  Rng rng(23);
  FdInstance inst = make_instance(rng, false);
  TrainConfig cfg;
  cfg.lambda_emb = 0.0;
  cfg.lambda_proj = 0.0;
  const auto grads = loss_and_grads(inst.state, &inst.snap, inst.batch, cfg);
  EXPECT_GT(grads.loss.emb_anchor, 0.0);
  EXPECT_GT(grads.loss.proj_anchor, 0.0);
  EXPECT_NEAR(grads.loss.total, grads.loss.route, 1e-12);
  // No anchor gradient may leak into anchored rows beyond the route term.
  TrainConfig with;
  with.lambda_emb = 1e6;
  with.lambda_proj = 1e6;
  const auto anchored = loss_and_grads(inst.state, &inst.snap, inst.batch, with);
  EXPECT_GT(anchored.dW.norm(), grads.dW.norm());
}

Experience tiny_experience(int models, int per_model, int dim, Rng& rng) {
  Experience exp;
  for (int m = 0; m < models; ++m) {
    ModelRecord rec;
    rec.id = "qa/model-" + std::to_string(m);
    rec.domain = "qa";
    exp.new_models.push_back(rec);
    for (int q = 0; q < per_model; ++q) {
      Example ex;
      ex.model_name = rec.id;
      ex.domain = "qa";
      ex.instruction = rec.id + " " + std::to_string(q);
      ex.features = rng.unit_vector(dim);
      exp.train.push_back(std::move(ex));
    }
  }
  return exp;
}

TEST(TrainExperience, FirstExperienceHasNoAnchorTerms) {
  Rng rng(9);
  Experience exp = tiny_experience(3, 8, 6, rng);
  TrainConfig cfg;
  cfg.embed_dim = 6;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  SamplingConfig scfg;
  scfg.k_total = 3;
  scfg.k_hard = 1;
  scfg.k_semantic = 1;
  scfg.k_far = 0;
  Registry reg;
  RouterState st = init_router(6, 6, cfg.tau, 1);
  const auto res = train_experience(std::move(st), reg, exp, nullptr, 1, cfg, scfg);
  EXPECT_EQ(reg.size(), 3);
  EXPECT_EQ(res.state.num_models(), 3);
  ASSERT_EQ(res.log.size(), 12u);  // 24 examples / 4 per batch * 2 epochs
  for (const auto& line : res.log) {
    EXPECT_DOUBLE_EQ(line.emb_anchor, 0.0);
    EXPECT_DOUBLE_EQ(line.proj_anchor, 0.0);
    EXPECT_EQ(line.phase, 1);
    EXPECT_TRUE(std::isfinite(line.total));
  }
}

TEST(TrainExperience, TwoPhaseSwitchesLrAtTheCeilBoundary) {
  Rng rng(10);
  Experience exp = tiny_experience(2, 8, 6, rng);  // 16 examples
  TrainConfig cfg;
  cfg.embed_dim = 6;
  cfg.epochs = 1;
  cfg.batch_size = 4;  // 4 steps total; phase 1 = ceil(1.6) = 2 steps
  TwoPhaseConfig tp;
  tp.phase1_fraction = 0.4;
  tp.phase1_lr_proj = 1e-4;
  cfg.two_phase = tp;
  SamplingConfig scfg;
  scfg.k_total = 2;
  scfg.k_hard = 1;
  scfg.k_semantic = 0;
  scfg.k_far = 0;
  Registry reg;
  RouterState st = init_router(6, 6, cfg.tau, 2);
  const auto res = train_experience(std::move(st), reg, exp, nullptr, 1, cfg, scfg);
  ASSERT_EQ(res.log.size(), 4u);
  EXPECT_EQ(res.log[0].phase, 1);
  EXPECT_EQ(res.log[1].phase, 1);
  EXPECT_EQ(res.log[2].phase, 2);
  EXPECT_EQ(res.log[3].phase, 2);
  EXPECT_DOUBLE_EQ(res.log[0].lr_proj, 1e-4);
  EXPECT_DOUBLE_EQ(res.log[2].lr_proj, cfg.lr_proj);
}

TEST(TrainExperience, SecondExperienceAnchorsPreviousRows) {
  Rng rng(11);
  Experience exp1 = tiny_experience(3, 6, 6, rng);
  Experience exp2;
  {
    ModelRecord rec;
    rec.id = "code/model-x";
    rec.domain = "code";
    exp2.new_models.push_back(rec);
    for (int q = 0; q < 12; ++q) {
      Example ex;
      ex.model_name = rec.id;
      ex.domain = "code";
      ex.instruction = "x " + std::to_string(q);
      ex.features = rng.unit_vector(6);
      exp2.train.push_back(std::move(ex));
    }
  }
  TrainConfig cfg;
  cfg.embed_dim = 6;
  cfg.epochs = 1;
  cfg.batch_size = 6;
  cfg.lambda_emb = 1e6;
  cfg.lambda_proj = 1e6;
  SamplingConfig scfg;
  scfg.k_total = 3;
  scfg.k_hard = 1;
  scfg.k_semantic = 1;
  scfg.k_far = 0;
  Registry reg;
  RouterState st = init_router(6, 6, cfg.tau, 3);
  auto r1 = train_experience(std::move(st), reg, exp1, nullptr, 1, cfg, scfg);
  const Matrix e_before = r1.state.E;
  auto r2 = train_experience(std::move(r1.state), reg, exp2, nullptr, 2, cfg, scfg);
  EXPECT_EQ(reg.size(), 4);
  EXPECT_EQ(r2.state.num_models(), 4);
  // Heavy anchoring keeps the first three rows near their snapshot.
  for (int m = 0; m < 3; ++m) {
    const Vector a = r2.state.E.row(m), b = e_before.row(m);
    EXPECT_GT(a.dot(b) / (a.norm() * b.norm()), 1.0 - 1e-4) << "row " << m;
  }
}

TEST(TrainExperience, RegistryTableMismatchIsAnError) {
  Rng rng(13);
  Experience exp = tiny_experience(2, 4, 6, rng);
  Registry reg;
  ModelRecord stray;
  stray.id = "other/model";
  stray.domain = "other";
  reg.register_models({stray});
  RouterState st = init_router(6, 6, 0.08, 4);  // zero rows, registry has one
  TrainConfig cfg;
  cfg.embed_dim = 6;
  SamplingConfig scfg;
  EXPECT_THROW(
      train_experience(std::move(st), reg, exp, nullptr, 1, cfg, scfg), Error);
}

}  // namespace
}  // namespace carve
