#pragma once

// Candidate-set construction and batching for contrastive routing.
//
// Each training example scores against a fixed-size candidate set: the gold
// model, mined hard negatives (confusable same-domain models), a uniform
// same-domain slice, and a uniform cross-domain slice. Shortfalls cascade
// hard -> semantic -> far and are then topped up uniformly from whatever is
// left, so the set size is exactly k_total whenever the registry is big
// enough and simply the whole registry otherwise.

#include "carve/common.hpp"
#include "carve/registry.hpp"
#include "carve/rng.hpp"
#include "carve/router.hpp"

#include <map>
#include <unordered_map>
#include <vector>

namespace carve {

struct SamplingConfig {
  int k_total = 64;
  int k_hard = 15;
  int k_semantic = 38;
  int k_far = 10;
  int mining_every = 100;       // optimizer steps between cache refreshes
  int hard_pool_size = 50;      // confusers kept per gold model
  int semantic_pool_size = 1024;  // mining sample cap per domain
  int max_pool_size = 2048;       // mining sample cap overall
  int domains_per_batch = 2;

  void validate() const {
    check(k_total >= 1 && k_hard >= 0 && k_semantic >= 0 && k_far >= 0,
          "sampling: negative candidate quota");
    check(1 + k_hard + k_semantic + k_far == k_total,
          "sampling: 1 + k_hard + k_semantic + k_far must equal k_total (",
          1 + k_hard + k_semantic + k_far, " != ", k_total, ")");
    check(mining_every >= 1, "sampling: mining_every must be >= 1");
    check(hard_pool_size >= 0 && semantic_pool_size >= 1 && max_pool_size >= 1,
          "sampling: invalid pool sizes");
    check(domains_per_batch >= 1, "sampling: domains_per_batch must be >= 1");
  }
};

struct CandidateSet {
  std::vector<int> indices;  // distinct model indices
  int positive_pos = 0;      // indices[positive_pos] is the gold model
};

struct HardNegativeCache {
  // gold model index -> confusers, strongest first. Models absent from the
  // mining sample have no entry and contribute no hard negatives.
  std::unordered_map<int, std::vector<int>> confusers;
  std::int64_t last_refresh_step = -1;
};

inline CandidateSet build_candidate_set(int gold, const std::string& gold_domain,
                                        const Registry& registry,
                                        const HardNegativeCache& cache,
                                        const SamplingConfig& cfg,
                                        std::uint64_t seed) {
  cfg.validate();
  const int n = registry.size();
  check(gold >= 0 && gold < n, "sampling: gold index ", gold,
        " out of range [0, ", n, ")");
  check(registry.record(gold).domain == gold_domain,
        "sampling: gold model '", registry.record(gold).id,
        "' is registered in domain '", registry.record(gold).domain,
        "', not '", gold_domain, "'");

  CandidateSet out;
  if (n <= cfg.k_total) {
    out.indices.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out.indices[static_cast<std::size_t>(i)] = i;
    out.positive_pos = gold;
    return out;
  }

  std::vector<char> used(static_cast<std::size_t>(n), 0);
  auto take = [&](int idx) {
    out.indices.push_back(idx);
    used[static_cast<std::size_t>(idx)] = 1;
  };
  take(gold);
  out.positive_pos = 0;

  auto it = cache.confusers.find(gold);
  if (it != cache.confusers.end()) {
    int taken = 0;
    for (int idx : it->second) {
      if (taken >= cfg.k_hard) break;
      if (idx == gold || used[static_cast<std::size_t>(idx)]) continue;
      check(idx >= 0 && idx < n, "sampling: stale confuser index ", idx);
      take(idx);
      ++taken;
    }
  }

  Rng rng(seed);
  auto sample_from = [&](const std::vector<int>& pool, int want) {
    std::vector<int> open;
    open.reserve(pool.size());
    for (int idx : pool) {
      if (!used[static_cast<std::size_t>(idx)]) open.push_back(idx);
    }
    const std::size_t k = std::min<std::size_t>(open.size(),
                                                static_cast<std::size_t>(want));
    for (int idx : rng.sample(std::move(open), k)) take(idx);
  };

  sample_from(registry.domain_indices(gold_domain), cfg.k_semantic);

  std::vector<int> far;
  far.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    if (registry.record(i).domain != gold_domain) far.push_back(i);
  }
  sample_from(far, cfg.k_far);

  if (static_cast<int>(out.indices.size()) < cfg.k_total) {
    std::vector<int> rest;
    for (int i = 0; i < n; ++i) {
      if (!used[static_cast<std::size_t>(i)]) rest.push_back(i);
    }
    sample_from(rest, cfg.k_total - static_cast<int>(out.indices.size()));
  }
  check(static_cast<int>(out.indices.size()) == cfg.k_total,
        "sampling: candidate set underfilled (", out.indices.size(), " of ",
        cfg.k_total, ")");
  return out;
}

struct MiningExample {
  const Vector* features = nullptr;
  int gold = -1;
};

// Rescores a capped sample of the given examples against their own domain's
// models and records, for every gold model seen, the incorrect same-domain
// models with the highest mean score. Domains with a single model produce no
// confusers. Caps: at most semantic_pool_size examples per domain and
// max_pool_size overall, taken round-robin over domains in name order.
inline HardNegativeCache mine_hard_negatives(const RouterState& state,
                                             const Registry& registry,
                                             const std::vector<MiningExample>& examples,
                                             const SamplingConfig& cfg,
                                             std::int64_t step) {
  cfg.validate();
  std::map<std::string, std::vector<int>> by_domain;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const int gold = examples[i].gold;
    check(gold >= 0 && gold < registry.size(),
          "sampling: mining example ", i, " has invalid gold index ", gold);
    auto& bucket = by_domain[registry.record(gold).domain];
    if (static_cast<int>(bucket.size()) < cfg.semantic_pool_size) {
      bucket.push_back(static_cast<int>(i));
    }
  }

  // Round-robin over domains so the global cap trims every domain evenly.
  std::map<std::string, std::vector<int>> kept;
  int total = 0;
  for (std::size_t round = 0; total < cfg.max_pool_size; ++round) {
    bool any = false;
    for (const auto& [domain, bucket] : by_domain) {
      if (round >= bucket.size()) continue;
      any = true;
      kept[domain].push_back(bucket[round]);
      if (++total >= cfg.max_pool_size) break;
    }
    if (!any) break;
  }

  HardNegativeCache cache;
  cache.last_refresh_step = step;
  for (const auto& [domain, bucket] : kept) {
    const std::vector<int>& models = registry.domain_indices(domain);
    if (models.size() < 2) continue;
    std::unordered_map<int, Vector> sums;
    std::unordered_map<int, int> counts;
    for (int ei : bucket) {
      const MiningExample& ex = examples[static_cast<std::size_t>(ei)];
      const Vector z = embed_query(state, *ex.features);
      const Vector s = scores(state, z, models);
      auto [it, fresh] = sums.try_emplace(ex.gold, Vector::Zero(s.size()));
      it->second += s;
      counts[ex.gold] += 1;
    }
    for (const auto& [gold, sum] : sums) {
      const Vector mean = sum / counts[gold];
      std::vector<std::pair<double, int>> ranked;
      for (std::size_t j = 0; j < models.size(); ++j) {
        if (models[j] == gold) continue;
        ranked.emplace_back(mean[static_cast<Eigen::Index>(j)], models[j]);
      }
      std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
      });
      if (static_cast<int>(ranked.size()) > cfg.hard_pool_size) {
        ranked.resize(static_cast<std::size_t>(cfg.hard_pool_size));
      }
      std::vector<int>& out = cache.confusers[gold];
      out.reserve(ranked.size());
      for (const auto& [score, model] : ranked) out.push_back(model);
    }
  }
  return cache;
}

// Splits example indices into batches that each touch at most
// domains_per_batch distinct domains; every example lands in exactly one
// batch. Domains are shuffled, grouped, pooled and chopped, so batches mix
// domains within a group but never across groups.
inline std::vector<std::vector<int>> make_batches(const std::vector<std::string>& example_domains,
                                                  int batch_size,
                                                  const SamplingConfig& cfg,
                                                  std::uint64_t seed) {
  cfg.validate();
  check(batch_size >= 1, "sampling: batch_size must be >= 1");
  std::map<std::string, std::vector<int>> groups;
  for (std::size_t i = 0; i < example_domains.size(); ++i) {
    groups[example_domains[i]].push_back(static_cast<int>(i));
  }
  Rng rng(seed);
  std::vector<std::string> order;
  order.reserve(groups.size());
  for (auto& [domain, members] : groups) {
    rng.shuffle(members);
    order.push_back(domain);
  }
  rng.shuffle(order);

  std::vector<std::vector<int>> batches;
  for (std::size_t g = 0; g < order.size(); g += static_cast<std::size_t>(cfg.domains_per_batch)) {
    std::vector<int> pooled;
    const std::size_t end =
        std::min(order.size(), g + static_cast<std::size_t>(cfg.domains_per_batch));
    for (std::size_t j = g; j < end; ++j) {
      const auto& members = groups[order[j]];
      pooled.insert(pooled.end(), members.begin(), members.end());
    }
    rng.shuffle(pooled);
    for (std::size_t at = 0; at < pooled.size(); at += static_cast<std::size_t>(batch_size)) {
      const std::size_t stop = std::min(pooled.size(), at + static_cast<std::size_t>(batch_size));
      batches.emplace_back(pooled.begin() + static_cast<std::ptrdiff_t>(at),
                           pooled.begin() + static_cast<std::ptrdiff_t>(stop));
    }
  }
  return batches;
}

}  // namespace carve
