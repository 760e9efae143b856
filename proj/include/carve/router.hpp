#pragma once

// Routing core: a linear projection W (feature_dim x embed_dim) maps query
// features onto the unit sphere, where every registered model owns one row
// of the embedding table E (num_models x embed_dim). A query scores against
// a model as the cosine of the two normalized vectors divided by the
// temperature tau.
//
// Expansion appends freshly initialized rows to E and never touches existing
// rows or W, so predictions over previously registered models are preserved
// bit for bit.

#include "carve/common.hpp"
#include "carve/io.hpp"
#include "carve/rng.hpp"

#include <algorithm>
#include <string>
#include <utility>
#include <vector>

namespace carve {

struct RouterState {
  Matrix W;  // feature_dim x embed_dim
  Matrix E;  // num_models x embed_dim
  double tau = 0.08;
  std::int64_t registry_version = 0;

  int feature_dim() const { return static_cast<int>(W.rows()); }
  int embed_dim() const { return static_cast<int>(W.cols()); }
  int num_models() const { return static_cast<int>(E.rows()); }
};

// Frozen copy of the parameters at an experience boundary. Anchor losses
// pull the first `anchored_count` embedding rows and the whole projection
// back toward this copy.
struct RouterSnapshot {
  Matrix W;
  Matrix E;
  int anchored_count = 0;
};

inline double xavier_bound(int fan_in, int fan_out) {
  return std::sqrt(6.0 / (static_cast<double>(fan_in) + fan_out));
}

inline RouterState init_router(int feature_dim, int embed_dim, double tau,
                               std::uint64_t seed) {
  check(feature_dim > 0 && embed_dim > 0,
        "router: dimensions must be positive (got ", feature_dim, " x ",
        embed_dim, ")");
  check(tau > 0.0, "router: tau must be positive (got ", tau, ")");
  RouterState s;
  s.tau = tau;
  s.W.resize(feature_dim, embed_dim);
  Rng rng(seed);
  const double b = xavier_bound(feature_dim, embed_dim);
  for (int r = 0; r < feature_dim; ++r) {
    for (int c = 0; c < embed_dim; ++c) s.W(r, c) = rng.uniform(-b, b);
  }
  s.E.resize(0, embed_dim);
  return s;
}

// z(q) = W^T h / |W^T h|.
inline Vector embed_query(const RouterState& s, const Vector& h) {
  check(h.size() == s.feature_dim(), "router: query feature size ", h.size(),
        " does not match feature_dim ", s.feature_dim());
  Vector u = s.W.transpose() * h;
  const double norm = u.norm();
  check(norm > kTinyNorm,
        "router: degenerate query (projected features have zero norm)");
  return u / norm;
}

inline Vector model_embedding(const RouterState& s, int index) {
  check(index >= 0 && index < s.num_models(), "router: model index ", index,
        " out of range [0, ", s.num_models(), ")");
  Vector v = s.E.row(index).transpose();
  const double norm = v.norm();
  check(norm > kTinyNorm, "router: embedding row ", index, " has zero norm");
  return v / norm;
}

// Scores of `z` against each candidate, in candidate order.
inline Vector scores(const RouterState& s, const Vector& z,
                     const std::vector<int>& candidates) {
  check(!candidates.empty(), "router: empty candidate list");
  Vector out(static_cast<Eigen::Index>(candidates.size()));
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    out[static_cast<Eigen::Index>(j)] =
        z.dot(model_embedding(s, candidates[j])) / s.tau;
  }
  return out;
}

// Candidates ordered by descending score, ties by ascending model index.
inline std::vector<std::pair<int, double>> top_k(const RouterState& s,
                                                 const Vector& z,
                                                 const std::vector<int>& candidates,
                                                 int k) {
  check(k >= 1, "router: top_k needs k >= 1");
  const Vector sc = scores(s, z, candidates);
  std::vector<std::pair<int, double>> order;
  order.reserve(candidates.size());
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    order.emplace_back(candidates[j], sc[static_cast<Eigen::Index>(j)]);
  }
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  order.resize(std::min<std::size_t>(order.size(), static_cast<std::size_t>(k)));
  return order;
}

inline int predict(const RouterState& s, const Vector& z,
                   const std::vector<int>& candidates) {
  return top_k(s, z, candidates, 1).front().first;
}

inline RouterSnapshot snapshot(const RouterState& s) {
  return RouterSnapshot{s.W, s.E, s.num_models()};
}

// Appends `new_count` Xavier-initialized rows to E. The bound uses
// fan_in = total rows after expansion and fan_out = embed_dim.
inline RouterState expand_embeddings(RouterState s, int new_count,
                                     std::uint64_t seed) {
  check(new_count >= 0, "router: cannot expand by ", new_count, " rows");
  if (new_count == 0) return s;
  const int old_rows = s.num_models();
  const int rows = old_rows + new_count;
  const int cols = s.embed_dim();
  s.E.conservativeResize(rows, Eigen::NoChange);
  Rng rng(seed);
  const double b = xavier_bound(rows, cols);
  for (int r = old_rows; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) s.E(r, c) = rng.uniform(-b, b);
  }
  return s;
}

inline constexpr char kRouterMagic[] = "CMRROUT1";

inline void save_router(const RouterState& s, const std::string& path) {
  auto os = io::open_out(path);
  io::write_magic(os, kRouterMagic);
  io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.feature_dim()));
  io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.embed_dim()));
  io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.num_models()));
  io::write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(s.registry_version));
  io::write_pod<double>(os, s.tau);
  for (int r = 0; r < s.feature_dim(); ++r) {
    for (int c = 0; c < s.embed_dim(); ++c) io::write_pod<double>(os, s.W(r, c));
  }
  for (int r = 0; r < s.num_models(); ++r) {
    for (int c = 0; c < s.embed_dim(); ++c) io::write_pod<double>(os, s.E(r, c));
  }
  check(static_cast<bool>(os), "write failed: ", path);
}

inline RouterState load_router(const std::string& path) {
  auto is = io::open_in(path);
  io::expect_magic(is, kRouterMagic, path);
  const auto D = io::read_pod<std::uint32_t>(is, "feature_dim");
  const auto d = io::read_pod<std::uint32_t>(is, "embed_dim");
  const auto M = io::read_pod<std::uint32_t>(is, "num_models");
  const auto version = io::read_pod<std::uint64_t>(is, "registry_version");
  const double tau = io::read_pod<double>(is, "tau");
  check(D > 0 && d > 0, path, ": invalid dimensions");
  check(tau > 0.0, path, ": invalid tau");
  RouterState s;
  s.tau = tau;
  s.registry_version = static_cast<std::int64_t>(version);
  s.W.resize(D, d);
  for (std::uint32_t r = 0; r < D; ++r) {
    for (std::uint32_t c = 0; c < d; ++c) {
      s.W(r, c) = io::read_pod<double>(is, "W value");
    }
  }
  s.E.resize(M, d);
  for (std::uint32_t r = 0; r < M; ++r) {
    for (std::uint32_t c = 0; c < d; ++c) {
      s.E(r, c) = io::read_pod<double>(is, "E value");
    }
  }
  return s;
}

}  // namespace carve
