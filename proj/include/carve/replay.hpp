#pragma once

// Domain-model coreset replay.
//
// A replay buffer over past experiences is filled in three stages:
//   1. the budget is split into per-domain quotas (proportional to domain
//      size via largest-remainder rounding, floored at min_per_domain and
//      capped at availability / max_per_domain),
//   2. inside each domain, up to max_per_model examples per model are picked
//      by farthest-point sampling (FPS) in feature space,
//   3. leftover quota is filled by FPS over the whole domain pool, seeded
//      with what is already selected.
// Every stage is deterministic given the config seed.

#include "carve/common.hpp"
#include "carve/example.hpp"
#include "carve/rng.hpp"

#include <json.hpp>

#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace carve {

struct ReplayConfig {
  std::optional<int> budget;     // absolute size; wins over ratio
  double ratio = 0.10;           // fraction of the cumulative past pool
  int min_per_domain = 5;        // floor, clamped to availability
  std::optional<int> max_per_domain;
  int max_per_model = 3;
  std::uint64_t seed = 0;

  void validate() const {
    check(ratio >= 0.0, "replay: ratio must be >= 0");
    check(!budget || *budget >= 0, "replay: budget must be >= 0");
    check(min_per_domain >= 0, "replay: min_per_domain must be >= 0");
    check(!max_per_domain || *max_per_domain >= 0,
          "replay: max_per_domain must be >= 0");
    check(max_per_model >= 1, "replay: max_per_model must be >= 1");
  }
};

struct QuotaResult {
  std::map<std::string, int> quotas;
  bool floors_trimmed = false;  // budget could not cover the domain floors
};

namespace detail {

// Hamilton / largest-remainder apportionment of `units` proportional to
// `weights`. Ties go to the heavier weight, then to the smaller name.
inline std::map<std::string, int> largest_remainder(
    const std::map<std::string, int>& weights, int units) {
  std::map<std::string, int> out;
  long long total = 0;
  for (const auto& [name, w] : weights) total += w;
  if (total <= 0 || units <= 0) {
    for (const auto& [name, w] : weights) out[name] = 0;
    return out;
  }
  struct Slot {
    std::string name;
    double remainder;
    int weight;
  };
  std::vector<Slot> slots;
  int assigned = 0;
  for (const auto& [name, w] : weights) {
    const double share =
        static_cast<double>(units) * static_cast<double>(w) / static_cast<double>(total);
    const int base = static_cast<int>(std::floor(share));
    out[name] = base;
    assigned += base;
    slots.push_back(Slot{name, share - base, w});
  }
  std::sort(slots.begin(), slots.end(), [](const Slot& a, const Slot& b) {
    if (a.remainder != b.remainder) return a.remainder > b.remainder;
    if (a.weight != b.weight) return a.weight > b.weight;
    return a.name < b.name;
  });
  for (int i = 0; assigned < units && i < static_cast<int>(slots.size()); ++i) {
    out[slots[static_cast<std::size_t>(i)].name] += 1;
    ++assigned;
  }
  return out;
}

}  // namespace detail

// Splits `budget` over domains proportionally to their example counts.
// Every quota ends up in [floor_d, cap_d] with floor_d = min(min_per_domain,
// count, cap) and cap_d = min(count, max_per_domain); the sum never exceeds
// the budget. When the budget cannot cover the floors they are trimmed,
// largest domain first, and the result is flagged.
inline QuotaResult compute_domain_quotas(const std::map<std::string, int>& counts,
                                         int budget, int min_per_domain,
                                         std::optional<int> max_per_domain) {
  check(budget >= 0, "replay: negative budget");
  check(min_per_domain >= 0, "replay: negative min_per_domain");
  QuotaResult res;
  if (counts.empty()) return res;

  std::map<std::string, int> floors, caps;
  long long floor_sum = 0;
  long long cap_sum = 0;
  for (const auto& [name, n] : counts) {
    check(n >= 0, "replay: negative count for domain '", name, "'");
    int cap = n;
    if (max_per_domain) cap = std::min(cap, *max_per_domain);
    const int floor = std::min(min_per_domain, cap);
    floors[name] = floor;
    caps[name] = cap;
    floor_sum += floor;
    cap_sum += cap;
  }

  if (floor_sum > budget) {
    // Floors alone overshoot: hand out what we can, trimming domains in
    // descending-count order one unit at a time until the budget fits.
    res.quotas = floors;
    res.floors_trimmed = true;
    std::vector<std::pair<std::string, int>> order(counts.begin(), counts.end());
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    long long sum = floor_sum;
    while (sum > budget) {
      bool moved = false;
      for (const auto& [name, n] : order) {
        if (sum <= budget) break;
        int& q = res.quotas[name];
        if (q > 0) {
          --q;
          --sum;
          moved = true;
        }
      }
      check(moved, "replay: quota trimming failed to converge");
    }
    return res;
  }

  const int target = static_cast<int>(std::min<long long>(budget, cap_sum));
  res.quotas = detail::largest_remainder(counts, target);
  long long sum = 0;
  for (auto& [name, q] : res.quotas) {
    q = std::min(caps[name], std::max(floors[name], q));
    sum += q;
  }

  // Floors may have pushed the sum over the target; take the excess back
  // from the largest quotas that still sit above their floor.
  while (sum > target) {
    std::string best;
    int best_q = -1;
    for (const auto& [name, q] : res.quotas) {
      if (q > floors[name] && q > best_q) {
        best = name;
        best_q = q;
      }
    }
    check(best_q >= 0, "replay: quota reduction failed to converge");
    res.quotas[best] -= 1;
    --sum;
  }

  // Caps may have freed budget; hand it back proportionally among domains
  // that still have headroom.
  while (sum < target) {
    std::map<std::string, int> open;
    for (const auto& [name, q] : res.quotas) {
      if (q < caps[name]) open[name] = counts.at(name);
    }
    if (open.empty()) break;
    auto extra = detail::largest_remainder(open, static_cast<int>(target - sum));
    bool moved = false;
    for (const auto& [name, add] : extra) {
      int& q = res.quotas[name];
      const int granted = std::min(add, caps[name] - q);
      q += granted;
      sum += granted;
      moved = moved || granted > 0;
    }
    if (!moved) {
      // All remainders rounded to zero; nudge the largest open domain.
      auto it = std::max_element(open.begin(), open.end(),
                                 [](const auto& a, const auto& b) {
                                   if (a.second != b.second) return a.second < b.second;
                                   return a.first > b.first;
                                 });
      res.quotas[it->first] += 1;
      ++sum;
    }
  }
  return res;
}

// Greedy farthest-point sampling under cosine distance 1 - <a, b> on unit
// vectors. Returns k indices into `points`, never re-selecting `existing`.
// With no existing points the walk starts at a seeded uniform index;
// otherwise the first pick is already the farthest point from `existing`.
// Ties break toward the smaller index.
inline std::vector<int> fps(const std::vector<Vector>& points, int k,
                            std::uint64_t seed,
                            const std::vector<int>& existing = {}) {
  const int n = static_cast<int>(points.size());
  check(k >= 0, "replay: fps k must be >= 0");
  std::vector<char> taken(static_cast<std::size_t>(n), 0);
  for (int idx : existing) {
    check(idx >= 0 && idx < n, "replay: fps existing index ", idx,
          " out of range [0, ", n, ")");
    check(!taken[static_cast<std::size_t>(idx)],
          "replay: fps existing index ", idx, " repeated");
    taken[static_cast<std::size_t>(idx)] = 1;
  }
  const int available = n - static_cast<int>(existing.size());
  check(k <= available, "replay: fps k = ", k, " exceeds the ", available,
        " available points");

  std::vector<double> min_dist(static_cast<std::size_t>(n),
                               std::numeric_limits<double>::infinity());
  auto absorb = [&](int sel) {
    for (int i = 0; i < n; ++i) {
      if (taken[static_cast<std::size_t>(i)]) continue;
      const double d =
          1.0 - points[static_cast<std::size_t>(i)].dot(points[static_cast<std::size_t>(sel)]);
      auto& slot = min_dist[static_cast<std::size_t>(i)];
      if (d < slot) slot = d;
    }
  };
  for (int idx : existing) absorb(idx);

  std::vector<int> selected;
  selected.reserve(static_cast<std::size_t>(k));
  auto select = [&](int idx) {
    taken[static_cast<std::size_t>(idx)] = 1;
    selected.push_back(idx);
    absorb(idx);
  };

  if (k == 0) return selected;
  if (existing.empty()) {
    Rng rng(seed);
    select(static_cast<int>(rng.below(static_cast<std::uint64_t>(n))));
  }
  while (static_cast<int>(selected.size()) < k) {
    int best = -1;
    double best_d = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      if (taken[static_cast<std::size_t>(i)]) continue;
      if (min_dist[static_cast<std::size_t>(i)] > best_d) {
        best_d = min_dist[static_cast<std::size_t>(i)];
        best = i;
      }
    }
    check(best >= 0, "replay: fps ran out of points");
    select(best);
  }
  return selected;
}

struct ReplayEntry {
  Example example;  // stored with from_replay = true
  int experience_index = 0;
  int example_index = 0;
};

struct ReplayBuffer {
  std::vector<ReplayEntry> entries;
  std::map<std::string, int> quotas;
  bool floors_trimmed = false;
  bool cap_overflow = false;  // a model exceeded max_per_model during fill
};

using Featurizer = std::function<Vector(const Example&)>;

// Uses the example's own stored feature vector as the FPS embedding.
inline Featurizer identity_featurizer() {
  return [](const Example& ex) {
    const double norm = ex.features.norm();
    check(norm > kTinyNorm, "replay: example for '", ex.model_name,
          "' has zero-norm features");
    return Vector(ex.features / norm);
  };
}

struct PoolEntry {
  const Example* example = nullptr;
  int experience_index = 0;
  int example_index = 0;
  Vector feat;  // unit featurization for FPS
};

// Fills per-domain quotas from the pool: FPS inside each model (capped at
// max_per_model, consumed round-robin over the domain's models), then FPS
// over the whole domain with existing = already selected. Exceeding the
// per-model cap is only possible during the fill stage, once every
// under-cap example is exhausted, and sets cap_overflow.
inline ReplayBuffer select_coreset(const std::vector<PoolEntry>& pool,
                                   const QuotaResult& quota_result,
                                   const ReplayConfig& cfg) {
  cfg.validate();
  ReplayBuffer buffer;
  buffer.quotas = quota_result.quotas;
  buffer.floors_trimmed = quota_result.floors_trimmed;

  std::map<std::string, std::vector<int>> by_domain;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    by_domain[pool[i].example->domain].push_back(static_cast<int>(i));
  }

  for (const auto& [domain, members] : by_domain) {
    auto qit = quota_result.quotas.find(domain);
    const int quota = qit == quota_result.quotas.end() ? 0 : qit->second;
    if (quota <= 0) continue;
    check(quota <= static_cast<int>(members.size()), "replay: quota ", quota,
          " for domain '", domain, "' exceeds its ", members.size(),
          " pooled examples");

    // Local geometry of this domain's pool slice.
    std::vector<Vector> points;
    points.reserve(members.size());
    for (int m : members) points.push_back(pool[static_cast<std::size_t>(m)].feat);

    std::map<std::string, std::vector<int>> by_model;  // local indices
    for (std::size_t li = 0; li < members.size(); ++li) {
      by_model[pool[static_cast<std::size_t>(members[li])].example->model_name]
          .push_back(static_cast<int>(li));
    }

    // Stage 1: per-model FPS sequences, consumed round-robin.
    std::map<std::string, std::vector<int>> sequences;
    for (const auto& [model, local] : by_model) {
      std::vector<Vector> model_points;
      model_points.reserve(local.size());
      for (int li : local) model_points.push_back(points[static_cast<std::size_t>(li)]);
      const int want = std::min<int>(cfg.max_per_model,
                                     static_cast<int>(local.size()));
      const std::uint64_t seed =
          derive_seed(cfg.seed, tag64("fps-model"), tag64(domain.c_str()),
                      tag64(model.c_str()));
      std::vector<int> seq;
      for (int pick : fps(model_points, want, seed)) {
        seq.push_back(local[static_cast<std::size_t>(pick)]);
      }
      sequences[model] = std::move(seq);
    }

    std::vector<int> selected;  // local indices, selection order
    std::vector<char> is_selected(members.size(), 0);
    std::map<std::string, int> model_counts;
    for (std::size_t round = 0; static_cast<int>(selected.size()) < quota; ++round) {
      bool any = false;
      for (const auto& [model, seq] : sequences) {
        if (static_cast<int>(selected.size()) >= quota) break;
        if (round >= seq.size()) continue;
        any = true;
        const int li = seq[round];
        selected.push_back(li);
        is_selected[static_cast<std::size_t>(li)] = 1;
        model_counts[model] += 1;
      }
      if (!any) break;
    }

    // Stage 2: FPS fill over the whole domain pool.
    if (static_cast<int>(selected.size()) < quota) {
      std::vector<double> min_dist(members.size(),
                                   std::numeric_limits<double>::infinity());
      auto absorb = [&](int sel) {
        for (std::size_t i = 0; i < members.size(); ++i) {
          if (is_selected[i]) continue;
          const double d = 1.0 - points[i].dot(points[static_cast<std::size_t>(sel)]);
          if (d < min_dist[i]) min_dist[i] = d;
        }
      };
      for (int li : selected) absorb(li);
      while (static_cast<int>(selected.size()) < quota) {
        int best = -1;
        double best_d = -std::numeric_limits<double>::infinity();
        bool best_under_cap = false;
        for (std::size_t i = 0; i < members.size(); ++i) {
          if (is_selected[i]) continue;
          const auto& model =
              pool[static_cast<std::size_t>(members[i])].example->model_name;
          const bool under_cap = model_counts[model] < cfg.max_per_model;
          // Prefer under-cap candidates outright; compare distance within tier.
          if (under_cap != best_under_cap) {
            if (!under_cap) continue;
            best = static_cast<int>(i);
            best_d = min_dist[i];
            best_under_cap = true;
            continue;
          }
          if (min_dist[i] > best_d) {
            best = static_cast<int>(i);
            best_d = min_dist[i];
          }
        }
        check(best >= 0, "replay: domain '", domain, "' ran out of examples");
        const auto& model =
            pool[static_cast<std::size_t>(members[static_cast<std::size_t>(best)])]
                .example->model_name;
        if (model_counts[model] >= cfg.max_per_model) buffer.cap_overflow = true;
        model_counts[model] += 1;
        selected.push_back(best);
        is_selected[static_cast<std::size_t>(best)] = 1;
        absorb(best);
      }
    }

    for (int li : selected) {
      const PoolEntry& src = pool[static_cast<std::size_t>(members[static_cast<std::size_t>(li)])];
      ReplayEntry entry;
      entry.example = *src.example;
      entry.example.from_replay = true;
      entry.experience_index = src.experience_index;
      entry.example_index = src.example_index;
      buffer.entries.push_back(std::move(entry));
    }
  }
  return buffer;
}

inline std::vector<PoolEntry> build_pool(const std::vector<Experience>& past,
                                         const Featurizer& featurizer) {
  std::vector<PoolEntry> pool;
  for (std::size_t t = 0; t < past.size(); ++t) {
    const auto& train = past[t].train;
    for (std::size_t i = 0; i < train.size(); ++i) {
      PoolEntry p;
      p.example = &train[i];
      p.experience_index = static_cast<int>(t);
      p.example_index = static_cast<int>(i);
      p.feat = featurizer(train[i]);
      pool.push_back(std::move(p));
    }
  }
  return pool;
}

inline int replay_budget(const ReplayConfig& cfg, std::size_t pool_size) {
  if (cfg.budget) return *cfg.budget;
  return static_cast<int>(std::floor(cfg.ratio * static_cast<double>(pool_size)));
}

// Coreset buffer over the train splits of all past experiences.
inline ReplayBuffer build_replay(const std::vector<Experience>& past,
                                 const ReplayConfig& cfg,
                                 const Featurizer& featurizer = identity_featurizer()) {
  cfg.validate();
  const auto pool = build_pool(past, featurizer);
  const int budget = replay_budget(cfg, pool.size());
  std::map<std::string, int> counts;
  for (const auto& p : pool) counts[p.example->domain] += 1;
  const QuotaResult quotas =
      compute_domain_quotas(counts, budget, cfg.min_per_domain, cfg.max_per_domain);
  return select_coreset(pool, quotas, cfg);
}

// Baseline buffer: a uniform sample of the past pool, no quotas, no FPS.
inline ReplayBuffer build_random_replay(const std::vector<Experience>& past,
                                        const ReplayConfig& cfg) {
  cfg.validate();
  std::vector<std::pair<int, int>> refs;  // (experience, example)
  for (std::size_t t = 0; t < past.size(); ++t) {
    for (std::size_t i = 0; i < past[t].train.size(); ++i) {
      refs.emplace_back(static_cast<int>(t), static_cast<int>(i));
    }
  }
  const int budget = std::min<int>(replay_budget(cfg, refs.size()),
                                   static_cast<int>(refs.size()));
  Rng rng(derive_seed(cfg.seed, tag64("random-replay")));
  ReplayBuffer buffer;
  for (auto [t, i] : rng.sample(std::move(refs), static_cast<std::size_t>(budget))) {
    ReplayEntry entry;
    entry.example = past[static_cast<std::size_t>(t)].train[static_cast<std::size_t>(i)];
    entry.example.from_replay = true;
    entry.experience_index = t;
    entry.example_index = i;
    buffer.entries.push_back(std::move(entry));
  }
  return buffer;
}

inline void write_replay_audit(const ReplayBuffer& buffer, const std::string& path) {
  std::vector<std::string> lines;
  lines.reserve(buffer.entries.size());
  for (const auto& e : buffer.entries) {
    nlohmann::json j;
    j["experience_index"] = e.experience_index;
    j["example_index"] = e.example_index;
    j["model_name"] = e.example.model_name;
    j["domain"] = e.example.domain;
    lines.push_back(j.dump());
  }
  io::write_lines(path, lines);
}

}  // namespace carve
