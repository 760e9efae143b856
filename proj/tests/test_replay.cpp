#include "carve/replay.hpp"

#include <gtest/gtest.h>
#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

namespace carve {
namespace {

TEST(Quotas, ProportionalSplitWithFloorsWorkedExample) {
  // 122 examples over three domains, budget 30, floor 5: the tiny domain C
  // holds its 2 available examples, B sits on the floor, A absorbs the rest.
  const std::map<std::string, int> counts{{"A", 100}, {"B", 20}, {"C", 2}};
  const auto res = compute_domain_quotas(counts, 30, 5, std::nullopt);
  EXPECT_FALSE(res.floors_trimmed);
  EXPECT_EQ(res.quotas.at("A"), 23);
  EXPECT_EQ(res.quotas.at("B"), 5);
  EXPECT_EQ(res.quotas.at("C"), 2);
}

TEST(Quotas, ExactProportionsNeedNoRemainderSeats) {
  const std::map<std::string, int> counts{{"A", 20}, {"B", 10}, {"C", 10}};
  const auto res = compute_domain_quotas(counts, 4, 0, std::nullopt);
  EXPECT_EQ(res.quotas.at("A"), 2);
  EXPECT_EQ(res.quotas.at("B"), 1);
  EXPECT_EQ(res.quotas.at("C"), 1);
}

TEST(Quotas, RemainderTieBreaksByCountThenName) {
  // Equal counts, one leftover seat: remainders tie, counts tie, name wins.
  const auto res =
      compute_domain_quotas({{"x", 10}, {"y", 10}}, 1, 0, std::nullopt);
  EXPECT_EQ(res.quotas.at("x"), 1);
  EXPECT_EQ(res.quotas.at("y"), 0);
}

TEST(Quotas, FloorsTrimWhenBudgetTooSmall) {
  const std::map<std::string, int> counts{{"A", 10}, {"B", 10}, {"C", 10}};
  const auto res = compute_domain_quotas(counts, 4, 5, std::nullopt);
  EXPECT_TRUE(res.floors_trimmed);
  int total = 0;
  for (const auto& [name, q] : res.quotas) total += q;
  EXPECT_EQ(total, 4);
}

TEST(Quotas, ZeroBudgetGivesZeroQuotasFlagged) {
  const auto res = compute_domain_quotas({{"A", 9}}, 0, 5, std::nullopt);
  int total = 0;
  for (const auto& [name, q] : res.quotas) total += q;
  EXPECT_EQ(total, 0);
  EXPECT_TRUE(res.floors_trimmed);
}

TEST(Quotas, DomainCapLimitsEvenWhenBudgetRemains) {
  const std::map<std::string, int> counts{{"A", 100}, {"B", 100}, {"C", 4}};
  const auto res = compute_domain_quotas(counts, 30, 5, 10);
  EXPECT_EQ(res.quotas.at("A"), 10);
  EXPECT_EQ(res.quotas.at("B"), 10);
  EXPECT_EQ(res.quotas.at("C"), 4);  // capped by availability
}

TEST(Quotas, QuotasNeverExceedAvailability) {
  const auto res = compute_domain_quotas({{"A", 3}, {"B", 50}}, 40, 5, std::nullopt);
  EXPECT_LE(res.quotas.at("A"), 3);
  int total = 0;
  for (const auto& [name, q] : res.quotas) total += q;
  EXPECT_LE(total, 40);
}

std::vector<Vector> circle_points(const std::vector<double>& degrees) {
  std::vector<Vector> pts;
  for (double deg : degrees) {
    const double rad = deg * M_PI / 180.0;
    Vector v(2);
    v << std::cos(rad), std::sin(rad);
    pts.push_back(v);
  }
  return pts;
}

TEST(Fps, HandTraceOnTheUnitCircle) {
  // From 0 degrees the farthest point is 180, then 90 beats 45 on min-dist.
  const auto pts = circle_points({0.0, 180.0, 90.0, 45.0});
  const auto picked = fps(pts, 3, 0, {0});
  EXPECT_EQ(picked, (std::vector<int>{1, 2, 3}));
}

TEST(Fps, TieBreaksTowardSmallerIndex) {
  // Exact coordinates so both candidates sit at exactly distance 1 from
  // point 0; trig-built points would differ in the last ulp.
  std::vector<Vector> pts(3, Vector(2));
  pts[0] << 1.0, 0.0;
  pts[1] << 0.0, 1.0;
  pts[2] << 0.0, -1.0;
  const auto picked = fps(pts, 2, 0, {0});
  EXPECT_EQ(picked, (std::vector<int>{1, 2}));
}

TEST(Fps, EmptyExistingStartsAtSeededPoint) {
  const auto pts = circle_points({0.0, 10.0, 20.0, 180.0});
  const auto a = fps(pts, 4, 7);
  const auto b = fps(pts, 4, 7);
  EXPECT_EQ(a, b);
  std::set<int> uniq(a.begin(), a.end());
  EXPECT_EQ(uniq.size(), 4u);
}

TEST(Fps, RejectsOverdraw) {
  const auto pts = circle_points({0.0, 90.0});
  EXPECT_THROW(fps(pts, 3, 0), Error);
  EXPECT_THROW(fps(pts, 2, 0, {0}), Error);
  EXPECT_THROW(fps(pts, 1, 0, {0, 0}), Error);
}

// Brute-force oracle with the same start and tie rules.
std::vector<int> fps_oracle(const std::vector<Vector>& pts, int k,
                            std::uint64_t seed, std::vector<int> existing) {
  std::set<int> taken(existing.begin(), existing.end());
  std::vector<int> out;
  if (taken.empty() && k > 0) {
    Rng rng(seed);
    const int first = static_cast<int>(rng.below(pts.size()));
    taken.insert(first);
    out.push_back(first);
  }
  while (static_cast<int>(out.size()) < k) {
    int best = -1;
    double best_d = -1.0;
    for (int i = 0; i < static_cast<int>(pts.size()); ++i) {
      if (taken.count(i)) continue;
      double d = std::numeric_limits<double>::infinity();
      for (int j : taken) {
        d = std::min(d, 1.0 - pts[static_cast<std::size_t>(i)].dot(
                              pts[static_cast<std::size_t>(j)]));
      }
      if (d > best_d) {
        best_d = d;
        best = i;
      }
    }
    taken.insert(best);
    out.push_back(best);
  }
  return out;
}

TEST(Fps, MatchesBruteForceOracle) {
  Rng rng(1234);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 3 + static_cast<int>(rng.below(30));
    const int dim = 2 + static_cast<int>(rng.below(6));
    std::vector<Vector> pts;
    for (int i = 0; i < n; ++i) pts.push_back(rng.unit_vector(dim));
    std::vector<int> existing;
    if (trial % 2 == 0 && n > 2) existing = {0, n / 2};
    const int avail = n - static_cast<int>(existing.size());
    const int k = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(avail)));
    const std::uint64_t seed = rng.next_u64();
    EXPECT_EQ(fps(pts, k, seed, existing), fps_oracle(pts, k, seed, existing))
        << "trial " << trial;
  }
}

Experience toy_experience(const std::string& domain_prefix, int models,
                          int per_model, Rng& rng, int dim = 8) {
  Experience exp;
  for (int m = 0; m < models; ++m) {
    for (int q = 0; q < per_model; ++q) {
      Example ex;
      ex.domain = domain_prefix;
      ex.model_name = domain_prefix + "/m" + std::to_string(m);
      ex.instruction = ex.model_name + " q" + std::to_string(q);
      ex.features = rng.unit_vector(dim);
      exp.train.push_back(std::move(ex));
    }
  }
  return exp;
}

TEST(ReplayBuffer, HonorsQuotasAndPerModelCaps) {
  Rng rng(5);
  std::vector<Experience> past;
  past.push_back(toy_experience("qa", 4, 10, rng));    // 40 examples
  past.push_back(toy_experience("code", 2, 10, rng));  // 20 examples
  ReplayConfig cfg;
  cfg.budget = 12;
  cfg.min_per_domain = 2;
  cfg.max_per_model = 3;
  cfg.seed = 9;
  const ReplayBuffer buf = build_replay(past, cfg);
  ASSERT_EQ(buf.entries.size(), 12u);
  std::map<std::string, int> by_domain;
  std::map<std::string, int> by_model;
  for (const auto& e : buf.entries) {
    EXPECT_TRUE(e.example.from_replay);
    by_domain[e.example.domain] += 1;
    by_model[e.example.model_name] += 1;
  }
  EXPECT_EQ(by_domain.at("qa"), buf.quotas.at("qa"));
  EXPECT_EQ(by_domain.at("code"), buf.quotas.at("code"));
  EXPECT_FALSE(buf.cap_overflow);
  for (const auto& [model, n] : by_model) EXPECT_LE(n, 3);
}

TEST(ReplayBuffer, OverflowsPerModelCapOnlyWhenForced) {
  Rng rng(6);
  std::vector<Experience> past;
  past.push_back(toy_experience("qa", 1, 10, rng));  // one model, ten examples
  ReplayConfig cfg;
  cfg.budget = 5;
  cfg.min_per_domain = 5;
  cfg.max_per_model = 3;
  const ReplayBuffer buf = build_replay(past, cfg);
  EXPECT_EQ(buf.entries.size(), 5u);
  EXPECT_TRUE(buf.cap_overflow);
}

TEST(ReplayBuffer, RatioBudgetFloorsTheProduct) {
  ReplayConfig cfg;
  cfg.ratio = 0.1;
  EXPECT_EQ(replay_budget(cfg, 25), 2);
  EXPECT_EQ(replay_budget(cfg, 9), 0);
  cfg.budget = 7;
  EXPECT_EQ(replay_budget(cfg, 25), 7);
}

TEST(ReplayBuffer, RandomBaselineSamplesExactlyTheBudget) {
  Rng rng(7);
  std::vector<Experience> past;
  past.push_back(toy_experience("qa", 3, 10, rng));
  ReplayConfig cfg;
  cfg.budget = 8;
  cfg.seed = 3;
  const ReplayBuffer a = build_random_replay(past, cfg);
  const ReplayBuffer b = build_random_replay(past, cfg);
  ASSERT_EQ(a.entries.size(), 8u);
  std::set<std::pair<int, int>> uniq;
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    EXPECT_EQ(a.entries[i].example_index, b.entries[i].example_index);
    EXPECT_TRUE(a.entries[i].example.from_replay);
    uniq.insert({a.entries[i].experience_index, a.entries[i].example_index});
  }
  EXPECT_EQ(uniq.size(), 8u);
}

TEST(ReplayBuffer, AuditFileCarriesProvenance) {
  Rng rng(8);
  std::vector<Experience> past;
  past.push_back(toy_experience("qa", 2, 6, rng));
  ReplayConfig cfg;
  cfg.budget = 4;
  cfg.min_per_domain = 1;
  const ReplayBuffer buf = build_replay(past, cfg);
  const auto dir = std::filesystem::temp_directory_path() /
                   ("carve_replay_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "audit.jsonl").string();
  write_replay_audit(buf, path);
  const auto rows = io::read_jsonl(path);
  ASSERT_EQ(rows.size(), buf.entries.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i]["experience_index"], buf.entries[i].experience_index);
    EXPECT_EQ(rows[i]["example_index"], buf.entries[i].example_index);
    EXPECT_EQ(rows[i]["model_name"], buf.entries[i].example.model_name);
    EXPECT_EQ(rows[i]["domain"], buf.entries[i].example.domain);
  }
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace carve
