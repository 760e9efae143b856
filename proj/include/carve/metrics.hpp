#pragma once

// Evaluation machinery: label snapping, model-family clustering, accuracy
// matrices with forgetting / aggregation arithmetic, and report writers.
//
// Family clustering normalizes repo names (lowercase, split on -_./ , drop
// size and quantization tokens, strip a trailing size letter glued to a
// digit as in "yolov8m"), embeds them as character-3-gram TF-IDF vectors and
// merges by average-linkage agglomerative clustering under a cosine-distance
// threshold. The family id is the lexicographically smallest normalized name
// in the cluster.

#include "carve/common.hpp"
#include "carve/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace carve {

// ---------------------------------------------------------------------------
// Label snapping
// ---------------------------------------------------------------------------

inline int levenshtein(const std::string& a, const std::string& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<int> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= m; ++j) {
      const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

// 1 - editdist / max(len); both empty counts as identical.
inline double label_similarity(const std::string& a, const std::string& b) {
  const std::size_t longest = std::max(a.size(), b.size());
  if (longest == 0) return 1.0;
  return 1.0 - static_cast<double>(levenshtein(a, b)) / static_cast<double>(longest);
}

// Snaps a raw predicted label onto the closest valid label when the edit
// similarity reaches the threshold; otherwise returns the raw label. Ties
// resolve to the lexicographically smallest valid label.
inline std::string snap_label(const std::string& raw,
                              const std::vector<std::string>& valid,
                              double threshold = 0.8) {
  std::optional<std::string> best;
  double best_sim = -1.0;
  for (const auto& label : valid) {
    const double sim = label_similarity(raw, label);
    if (sim < threshold) continue;
    if (!best || sim > best_sim || (sim == best_sim && label < *best)) {
      best = label;
      best_sim = sim;
    }
  }
  return best ? *best : raw;
}

// ---------------------------------------------------------------------------
// Family clustering
// ---------------------------------------------------------------------------

struct FamilyOptions {
  double merge_threshold = 0.4;  // cosine distance below which clusters merge
  std::vector<std::string> drop_tokens = {
      "small", "medium", "large", "xl",   "xxl", "base", "mini", "tiny",
      "nano",  "4bit",   "8bit",  "int4", "int8", "gguf", "awq",  "mlx"};
};

inline std::string normalize_repo_name(const std::string& model_id,
                                       const FamilyOptions& opts = {}) {
  const auto slash = model_id.find('/');
  std::string repo = slash == std::string::npos ? model_id : model_id.substr(slash + 1);
  for (char& ch : repo) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));

  std::vector<std::string> tokens;
  std::string token;
  auto flush = [&]() {
    if (!token.empty()) tokens.push_back(token);
    token.clear();
  };
  for (char ch : repo) {
    if (ch == '-' || ch == '_' || ch == '.' || ch == '/') {
      flush();
    } else {
      token.push_back(ch);
    }
  }
  flush();

  std::vector<std::string> kept;
  for (std::string tok : tokens) {
    // "yolov8m" carries its size suffix glued to the version digit.
    if (tok.size() >= 2) {
      const char last = tok.back();
      const char before = tok[tok.size() - 2];
      if ((last == 'n' || last == 's' || last == 'm' || last == 'l' || last == 'x') &&
          before >= '0' && before <= '9') {
        tok.pop_back();
      }
    }
    if (std::find(opts.drop_tokens.begin(), opts.drop_tokens.end(), tok) !=
        opts.drop_tokens.end()) {
      continue;
    }
    if (!tok.empty()) kept.push_back(tok);
  }
  if (kept.empty()) kept = tokens;  // all tokens were size markers
  std::string out;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (i) out.push_back('-');
    out += kept[i];
  }
  return out.empty() ? repo : out;
}

namespace detail {

inline std::uint64_t gram_id(const std::string& s, std::size_t at, std::size_t len) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::size_t i = 0; i < len; ++i) {
    h = (h ^ static_cast<unsigned char>(s[at + i])) * 0x100000001b3ull;
  }
  return h;
}

// Character-3-gram TF-IDF vectors (smooth idf, L2-normalized) for each name.
inline std::vector<std::unordered_map<std::uint64_t, double>> tfidf_vectors(
    const std::vector<std::string>& names) {
  const std::size_t n = names.size();
  std::vector<std::unordered_map<std::uint64_t, double>> tf(n);
  std::unordered_map<std::uint64_t, int> df;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string& name = names[i];
    if (name.size() < 3) {
      tf[i][gram_id(name, 0, name.size())] += 1.0;
    } else {
      for (std::size_t at = 0; at + 3 <= name.size(); ++at) {
        tf[i][gram_id(name, at, 3)] += 1.0;
      }
    }
    for (const auto& [g, count] : tf[i]) df[g] += 1;
  }
  for (std::size_t i = 0; i < n; ++i) {
    double norm_sq = 0.0;
    for (auto& [g, w] : tf[i]) {
      w *= 1.0 + std::log((1.0 + static_cast<double>(n)) /
                          (1.0 + static_cast<double>(df[g])));
      norm_sq += w * w;
    }
    const double norm = std::sqrt(norm_sq);
    if (norm > kTinyNorm) {
      for (auto& [g, w] : tf[i]) w /= norm;
    }
  }
  return tf;
}

inline double sparse_cosine(const std::unordered_map<std::uint64_t, double>& a,
                            const std::unordered_map<std::uint64_t, double>& b) {
  const auto& small = a.size() <= b.size() ? a : b;
  const auto& big = a.size() <= b.size() ? b : a;
  double dot = 0.0;
  for (const auto& [g, w] : small) {
    auto it = big.find(g);
    if (it != big.end()) dot += w * it->second;
  }
  return dot;
}

// Average-linkage agglomerative clustering via the nearest-neighbor chain,
// cut at the merge threshold. Returns a cluster id per input position.
inline std::vector<int> average_linkage_clusters(const std::vector<std::string>& names,
                                                 double threshold) {
  const int n = static_cast<int>(names.size());
  std::vector<int> cluster(static_cast<std::size_t>(n));
  std::iota(cluster.begin(), cluster.end(), 0);
  if (n <= 1) return cluster;

  const auto vecs = tfidf_vectors(names);
  std::vector<double> dist(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double d = 1.0 - sparse_cosine(vecs[static_cast<std::size_t>(i)],
                                           vecs[static_cast<std::size_t>(j)]);
      dist[static_cast<std::size_t>(i) * n + j] = d;
      dist[static_cast<std::size_t>(j) * n + i] = d;
    }
  }

  std::vector<char> active(static_cast<std::size_t>(n), 1);
  std::vector<int> size(static_cast<std::size_t>(n), 1);
  struct Merge { int a, b; double height; };
  std::vector<Merge> merges;
  std::vector<int> chain;
  auto d_at = [&](int i, int j) -> double& {
    return dist[static_cast<std::size_t>(i) * n + j];
  };

  while (static_cast<int>(merges.size()) < n - 1) {
    if (chain.empty()) {
      for (int i = 0; i < n; ++i) {
        if (active[static_cast<std::size_t>(i)]) {
          chain.push_back(i);
          break;
        }
      }
    }
    const int top = chain.back();
    int nn = -1;
    double nn_d = std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j) {
      if (j == top || !active[static_cast<std::size_t>(j)]) continue;
      if (d_at(top, j) < nn_d) {
        nn_d = d_at(top, j);
        nn = j;
      }
    }
    if (chain.size() >= 2 && nn == chain[chain.size() - 2]) {
      chain.pop_back();
      chain.pop_back();
      const int a = std::min(top, nn), b = std::max(top, nn);
      merges.push_back(Merge{a, b, nn_d});
      // Lance-Williams average-linkage update, folded into index a.
      for (int k = 0; k < n; ++k) {
        if (k == a || k == b || !active[static_cast<std::size_t>(k)]) continue;
        const double mixed =
            (size[static_cast<std::size_t>(a)] * d_at(a, k) +
             size[static_cast<std::size_t>(b)] * d_at(b, k)) /
            static_cast<double>(size[static_cast<std::size_t>(a)] +
                                size[static_cast<std::size_t>(b)]);
        d_at(a, k) = mixed;
        d_at(k, a) = mixed;
      }
      size[static_cast<std::size_t>(a)] += size[static_cast<std::size_t>(b)];
      active[static_cast<std::size_t>(b)] = 0;
    } else {
      chain.push_back(nn);
    }
  }

  // Union-find over merges below the threshold (average linkage is monotone,
  // so this is the standard dendrogram cut).
  std::vector<int> parent(static_cast<std::size_t>(n));
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> find = [&](int x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] =
          parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  };
  for (const auto& m : merges) {
    if (m.height < threshold) {
      parent[static_cast<std::size_t>(find(m.b))] = find(m.a);
    }
  }
  for (int i = 0; i < n; ++i) cluster[static_cast<std::size_t>(i)] = find(i);
  return cluster;
}

}  // namespace detail

// Clusters model ids into families. Exact duplicates of a normalized name
// always land in one family; the seed is accepted for interface stability
// but the clustering itself is deterministic.
inline std::map<std::string, std::string> build_family_map(
    const std::vector<std::string>& model_ids, std::uint64_t /*seed*/ = 0,
    const FamilyOptions& opts = {}) {
  std::vector<std::string> normalized;
  normalized.reserve(model_ids.size());
  std::vector<std::string> unique_names;
  std::map<std::string, int> name_pos;
  for (const auto& id : model_ids) {
    std::string name = normalize_repo_name(id, opts);
    if (name_pos.emplace(name, static_cast<int>(unique_names.size())).second) {
      unique_names.push_back(name);
    }
    normalized.push_back(std::move(name));
  }

  const std::vector<int> clusters =
      detail::average_linkage_clusters(unique_names, opts.merge_threshold);
  std::unordered_map<int, std::string> family_of_cluster;
  for (std::size_t i = 0; i < unique_names.size(); ++i) {
    const int c = clusters[i];
    auto it = family_of_cluster.find(c);
    if (it == family_of_cluster.end()) {
      family_of_cluster.emplace(c, unique_names[i]);
    } else if (unique_names[i] < it->second) {
      it->second = unique_names[i];
    }
  }

  std::map<std::string, std::string> out;
  for (std::size_t i = 0; i < model_ids.size(); ++i) {
    const int pos = name_pos.at(normalized[i]);
    out[model_ids[i]] = family_of_cluster.at(clusters[static_cast<std::size_t>(pos)]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Accuracy matrices, forgetting, aggregation
// ---------------------------------------------------------------------------

// A[t][k] = accuracy on experience k after training through experience t
// (0-based). Streams fill the lower triangle; entries above the diagonal
// stay undefined unless a strategy evaluates them (e.g. joint training).
class AccuracyMatrix {
 public:
  AccuracyMatrix() = default;
  explicit AccuracyMatrix(int T)
      : T_(T),
        values_(static_cast<std::size_t>(T) * T, 0.0),
        defined_(static_cast<std::size_t>(T) * T, 0) {
    check(T >= 1, "metrics: matrix needs at least one experience");
  }

  int experiences() const { return T_; }

  void set(int t, int k, double value) {
    values_[at(t, k)] = value;
    defined_[at(t, k)] = 1;
  }

  bool is_defined(int t, int k) const { return defined_[at(t, k)] != 0; }

  double get(int t, int k) const {
    check(is_defined(t, k), "metrics: A[", t, "][", k, "] is undefined");
    return values_[at(t, k)];
  }

 private:
  std::size_t at(int t, int k) const {
    check(t >= 0 && t < T_ && k >= 0 && k < T_, "metrics: index (", t, ", ", k,
          ") out of range for T = ", T_);
    return static_cast<std::size_t>(t) * T_ + k;
  }

  int T_ = 0;
  std::vector<double> values_;
  std::vector<char> defined_;
};

struct ForgettingResult {
  std::vector<double> per_t;  // FGT_t for t = 2..T, in order
  double mean = 0.0;
};

// FGT_t = mean over k < t of (A[k][k] - A[t][k]); mean over t = 2..T.
inline ForgettingResult forgetting(const AccuracyMatrix& m) {
  ForgettingResult res;
  const int T = m.experiences();
  for (int t = 1; t < T; ++t) {
    double sum = 0.0;
    for (int k = 0; k < t; ++k) {
      sum += m.get(k, k) - m.get(t, k);
    }
    res.per_t.push_back(sum / t);
  }
  if (!res.per_t.empty()) {
    res.mean = std::accumulate(res.per_t.begin(), res.per_t.end(), 0.0) /
               static_cast<double>(res.per_t.size());
  }
  return res;
}

struct AggregateResult {
  std::vector<double> column_means;  // per evaluated experience
  double overall = 0.0;
};

// Column means over defined entries; overall = mean of the column means.
inline AggregateResult aggregate(const AccuracyMatrix& m) {
  AggregateResult res;
  const int T = m.experiences();
  for (int k = 0; k < T; ++k) {
    double sum = 0.0;
    int count = 0;
    for (int t = 0; t < T; ++t) {
      if (m.is_defined(t, k)) {
        sum += m.get(t, k);
        ++count;
      }
    }
    check(count > 0, "metrics: column ", k, " has no defined entries");
    res.column_means.push_back(sum / count);
  }
  res.overall = std::accumulate(res.column_means.begin(), res.column_means.end(), 0.0) /
                static_cast<double>(res.column_means.size());
  return res;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct MetricReport {
  AccuracyMatrix matrix;
  std::vector<double> per_t_forgetting;
  double mean_forgetting = 0.0;
  std::vector<double> column_means;
  double overall_mean = 0.0;
};

inline MetricReport make_metric_report(const AccuracyMatrix& m) {
  MetricReport rep;
  rep.matrix = m;
  const auto fgt = forgetting(m);
  rep.per_t_forgetting = fgt.per_t;
  rep.mean_forgetting = fgt.mean;
  const auto agg = aggregate(m);
  rep.column_means = agg.column_means;
  rep.overall_mean = agg.overall;
  return rep;
}

inline nlohmann::json matrix_to_json(const AccuracyMatrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (int t = 0; t < m.experiences(); ++t) {
    nlohmann::json row = nlohmann::json::array();
    for (int k = 0; k < m.experiences(); ++k) {
      if (m.is_defined(t, k)) {
        row.push_back(m.get(t, k));
      } else {
        row.push_back(nullptr);
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline nlohmann::json report_to_json(const std::map<std::string, MetricReport>& reports) {
  nlohmann::json j;
  for (const auto& [metric, rep] : reports) {
    nlohmann::json r;
    r["matrix"] = matrix_to_json(rep.matrix);
    r["per_t_forgetting"] = rep.per_t_forgetting;
    r["mean_forgetting"] = rep.mean_forgetting;
    r["column_means"] = rep.column_means;
    r["overall_mean"] = rep.overall_mean;
    j[metric] = std::move(r);
  }
  return j;
}

inline void write_report_json(const std::string& path,
                              const std::map<std::string, MetricReport>& reports) {
  io::write_json(path, report_to_json(reports));
}

inline std::string format_cell(double mean, const double* stddev) {
  char buf[64];
  if (stddev) {
    std::snprintf(buf, sizeof buf, "%.1f±%.1f", mean, *stddev);
  } else {
    std::snprintf(buf, sizeof buf, "%.1f", mean);
  }
  return buf;
}

// Table layout: one row per training point ("Trained (Exp 1-t)"), one column
// per evaluated experience plus a trailing forgetting column, a final Mean
// row with the column means and the mean forgetting.
inline void write_report_csv(const std::string& path, const MetricReport& mean,
                             const MetricReport* stddev = nullptr) {
  const int T = mean.matrix.experiences();
  std::vector<std::string> lines;
  std::string header = "Trained on";
  for (int k = 0; k < T; ++k) header += ",Exp " + std::to_string(k + 1);
  header += ",FGT";
  lines.push_back(header);

  for (int t = 0; t < T; ++t) {
    std::string row = t == 0 ? "Trained (Exp 1)"
                             : "Trained (Exp 1-" + std::to_string(t + 1) + ")";
    for (int k = 0; k < T; ++k) {
      row += ",";
      if (mean.matrix.is_defined(t, k)) {
        const double sd = stddev && stddev->matrix.is_defined(t, k)
                              ? stddev->matrix.get(t, k)
                              : 0.0;
        row += format_cell(mean.matrix.get(t, k), stddev ? &sd : nullptr);
      }
    }
    row += ",";
    if (t >= 1 && static_cast<std::size_t>(t - 1) < mean.per_t_forgetting.size()) {
      const double sd = stddev && static_cast<std::size_t>(t - 1) < stddev->per_t_forgetting.size()
                            ? stddev->per_t_forgetting[static_cast<std::size_t>(t - 1)]
                            : 0.0;
      row += format_cell(mean.per_t_forgetting[static_cast<std::size_t>(t - 1)],
                         stddev ? &sd : nullptr);
    }
    lines.push_back(row);
  }

  std::string mean_row = "Mean";
  for (int k = 0; k < T; ++k) {
    mean_row += ",";
    const double sd = stddev && static_cast<std::size_t>(k) < stddev->column_means.size()
                          ? stddev->column_means[static_cast<std::size_t>(k)]
                          : 0.0;
    mean_row += format_cell(mean.column_means[static_cast<std::size_t>(k)],
                            stddev ? &sd : nullptr);
  }
  {
    const double sd = stddev ? stddev->mean_forgetting : 0.0;
    mean_row += "," + format_cell(mean.mean_forgetting, stddev ? &sd : nullptr);
  }
  lines.push_back(mean_row);
  io::write_lines(path, lines);
}

}  // namespace carve
