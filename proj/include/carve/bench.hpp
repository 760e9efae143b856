#pragma once

// Synthetic routing benchmarks and dataset persistence.
//
// Geometry: every domain gets a unit centroid placed around a shared base
// direction at an angular scale set by domain_separation; each model is a
// renormalized offset from its domain centroid (model_spread); each query is
// a renormalized offset from its model prototype (query_noise). Later
// experiences re-import a fraction of earlier models ("legacy" models) with
// fresh queries drawn from their original prototypes, so streams mix new and
// previously seen models the way live registries do.
//
// On disk a dataset is a manifest plus one JSON-Lines file per experience,
// with feature vectors in a float32 sidecar ("<file>.features.bin") and the
// experience's new models in a registry-style JSON file with its own card
// sidecar. Records without a feature sidecar are featurized from the
// instruction text on load.

#include "carve/common.hpp"
#include "carve/example.hpp"
#include "carve/io.hpp"
#include "carve/registry.hpp"
#include "carve/rng.hpp"

#include <json.hpp>

#include <cctype>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace carve {

struct BenchSpec {
  int num_experiences = 4;
  int domains_per_experience = 12;
  int models_per_domain = 20;
  int queries_per_model = 30;
  double legacy_fraction = 0.15;  // share of each experience's models reused
  int feature_dim = 64;
  double domain_separation = 1.0;
  double model_spread = 0.5;
  double query_noise = 0.35;
  std::uint64_t seed = 0;

  void validate() const {
    check(num_experiences >= 1, "bench: num_experiences must be >= 1");
    check(domains_per_experience >= 1, "bench: domains_per_experience must be >= 1");
    check(models_per_domain >= 1, "bench: models_per_domain must be >= 1");
    check(queries_per_model >= 1, "bench: queries_per_model must be >= 1");
    check(legacy_fraction >= 0.0 && legacy_fraction < 1.0,
          "bench: legacy_fraction must lie in [0, 1)");
    check(feature_dim >= 2, "bench: feature_dim must be >= 2");
    check(domain_separation >= 0.0 && model_spread >= 0.0 && query_noise >= 0.0,
          "bench: geometry scales must be >= 0");
  }
};

// Hashed bag-of-tokens features: lowercase alphanumeric tokens, each hashed
// onto a signed coordinate, accumulated and l2-normalized.
inline Vector featurize(const std::string& instruction, int dim, std::uint64_t seed) {
  check(dim >= 8, "bench: featurize needs dim >= 8 (got ", dim, ")");
  Vector v = Vector::Zero(dim);
  std::string token;
  bool any = false;
  auto flush = [&]() {
    if (token.empty()) return;
    any = true;
    std::uint64_t h = 0xcbf29ce484222325ull ^ splitmix64(seed);
    for (char ch : token) h = (h ^ static_cast<unsigned char>(ch)) * 0x100000001b3ull;
    const auto bucket = static_cast<Eigen::Index>(h % static_cast<std::uint64_t>(dim));
    v[bucket] += ((h >> 32) & 1) ? 1.0 : -1.0;
    token.clear();
  };
  for (char ch : instruction) {
    const auto uch = static_cast<unsigned char>(ch);
    if (std::isalnum(uch)) {
      token.push_back(static_cast<char>(std::tolower(uch)));
    } else {
      flush();
    }
  }
  flush();
  check(any, "bench: instruction produced no tokens: '", instruction, "'");
  const double norm = v.norm();
  check(norm > kTinyNorm, "bench: token hashes cancelled to a zero vector");
  return v / norm;
}

namespace detail {

inline std::string gen_stem(Rng& rng) {
  static const char* kConsonants = "bcdfgklmnprstvz";
  static const char* kVowels = "aeiou";
  const std::size_t len = 6 + rng.below(3) * 2;  // 6, 8 or 10 characters
  std::string out;
  for (std::size_t i = 0; i < len; ++i) {
    if (i % 2 == 0) {
      out.push_back(kConsonants[rng.below(15)]);
    } else {
      out.push_back(kVowels[rng.below(5)]);
    }
  }
  return out;
}

struct GenModel {
  std::string id;
  std::string domain;
  Vector prototype;
  Vector card;
};

}  // namespace detail

inline std::vector<Experience> generate_benchmark(const BenchSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, tag64("bench")));
  const Vector base = rng.unit_vector(spec.feature_dim);
  static const std::vector<std::string> kVariants = {"small", "base", "large",
                                                     "xl", "mini", "v2"};

  auto offset_point = [&](const Vector& center, double scale) {
    if (scale == 0.0) return center;
    Vector p = center + scale * rng.unit_vector(spec.feature_dim);
    const double norm = p.norm();
    check(norm > kTinyNorm, "bench: degenerate point (scales cancelled)");
    return Vector(p / norm);
  };

  std::vector<detail::GenModel> all_models;
  std::set<std::string> used_ids;
  std::vector<Experience> experiences;

  for (int e = 1; e <= spec.num_experiences; ++e) {
    Experience exp;
    exp.label = "experience-" + std::to_string(e);

    std::vector<std::string> domains;
    std::vector<Vector> centroids;
    for (int i = 0; i < spec.domains_per_experience; ++i) {
      std::string name = "dom-e" + std::to_string(e) + "-" +
                         (i < 10 ? "0" : "") + std::to_string(i);
      domains.push_back(std::move(name));
      centroids.push_back(offset_point(base, spec.domain_separation));
    }

    const int total = spec.domains_per_experience * spec.models_per_domain;
    const int legacy_count =
        e == 1 ? 0
               : std::min<int>(static_cast<int>(std::floor(
                                   spec.legacy_fraction * total)),
                               static_cast<int>(all_models.size()));
    const int fresh_count = total - legacy_count;

    std::vector<int> legacy;
    if (legacy_count > 0) {
      std::vector<int> prior(all_models.size());
      std::iota(prior.begin(), prior.end(), 0);
      legacy = rng.sample(std::move(prior), static_cast<std::size_t>(legacy_count));
    }

    // Fresh models, spread round-robin over this experience's domains and
    // emitted in small family groups sharing a stem.
    std::vector<int> slots(static_cast<std::size_t>(spec.domains_per_experience));
    for (int i = 0; i < fresh_count; ++i) {
      slots[static_cast<std::size_t>(i % spec.domains_per_experience)] += 1;
    }
    std::vector<int> experience_models;  // indices into all_models
    for (int di = 0; di < spec.domains_per_experience; ++di) {
      int remaining = slots[static_cast<std::size_t>(di)];
      while (remaining > 0) {
        const int group = std::min<int>(remaining, 1 + static_cast<int>(rng.below(4)));
        std::string stem = detail::gen_stem(rng);
        std::vector<std::string> repos;
        if (group == 1) {
          repos.push_back(stem);
        } else {
          auto suffixes = rng.sample(kVariants, static_cast<std::size_t>(group));
          for (const auto& sfx : suffixes) repos.push_back(stem + "-" + sfx);
        }
        for (const auto& repo : repos) {
          std::string id = domains[static_cast<std::size_t>(di)] + "/" + repo;
          if (!used_ids.insert(id).second) continue;  // stem collision, skip
          detail::GenModel m;
          m.id = id;
          m.domain = domains[static_cast<std::size_t>(di)];
          m.prototype = offset_point(centroids[static_cast<std::size_t>(di)],
                                     spec.model_spread);
          m.card = offset_point(m.prototype, spec.query_noise);
          all_models.push_back(std::move(m));
          experience_models.push_back(static_cast<int>(all_models.size()) - 1);
          ModelRecord rec;
          rec.id = all_models.back().id;
          rec.domain = all_models.back().domain;
          rec.card_features = all_models.back().card;
          exp.new_models.push_back(std::move(rec));
          remaining -= 1;
        }
      }
    }
    experience_models.insert(experience_models.end(), legacy.begin(), legacy.end());

    const int n_eval = static_cast<int>(std::lround(0.15 * spec.queries_per_model));
    for (int mi : experience_models) {
      const auto& model = all_models[static_cast<std::size_t>(mi)];
      const std::string repo = model.id.substr(model.id.find('/') + 1);
      for (int q = 0; q < spec.queries_per_model; ++q) {
        Example ex;
        ex.instruction = "route " + model.domain + " " + repo + " q" + std::to_string(q);
        ex.model_name = model.id;
        ex.domain = model.domain;
        ex.features = offset_point(model.prototype, spec.query_noise);
        if (q < spec.queries_per_model - n_eval) {
          exp.train.push_back(std::move(ex));
        } else {
          exp.eval.push_back(std::move(ex));
        }
      }
    }
    experiences.push_back(std::move(exp));
  }
  return experiences;
}

// ---------------------------------------------------------------------------
// Dataset persistence
// ---------------------------------------------------------------------------

inline std::string features_sidecar_path(const std::string& records_path) {
  return records_path + ".features.bin";
}

inline void save_dataset(const std::vector<Experience>& experiences,
                         const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["experiences"] = nlohmann::json::array();

  for (std::size_t t = 0; t < experiences.size(); ++t) {
    const Experience& exp = experiences[t];
    const std::string records_name = "experience_" + std::to_string(t + 1) + ".jsonl";
    const std::string models_name = "new_models_" + std::to_string(t + 1) + ".json";

    // Records grouped per model, train before eval, so the loader's
    // last-15%-per-model rule reproduces the split exactly.
    std::vector<const Example*> ordered;
    {
      std::map<std::string, std::vector<const Example*>> train_by_model, eval_by_model;
      std::vector<std::string> model_order;
      auto note_model = [&](const std::string& name) {
        if (!train_by_model.count(name) && !eval_by_model.count(name)) {
          model_order.push_back(name);
        }
      };
      for (const auto& ex : exp.train) {
        note_model(ex.model_name);
        train_by_model[ex.model_name].push_back(&ex);
      }
      for (const auto& ex : exp.eval) {
        note_model(ex.model_name);
        eval_by_model[ex.model_name].push_back(&ex);
      }
      for (const auto& name : model_order) {
        for (const auto* ex : train_by_model[name]) ordered.push_back(ex);
        for (const auto* ex : eval_by_model[name]) ordered.push_back(ex);
      }
    }

    std::vector<std::string> lines;
    lines.reserve(ordered.size());
    int dim = 0;
    for (const auto* ex : ordered) {
      nlohmann::json j;
      j["instruction"] = ex->instruction;
      j["model_name"] = ex->model_name;
      j["domain"] = ex->domain;
      if (ex->family) j["model_family"] = *ex->family;
      if (ex->created_at) j["created_at"] = *ex->created_at;
      lines.push_back(j.dump());
      dim = static_cast<int>(ex->features.size());
    }
    const std::string records_path = (fs::path(dir) / records_name).string();
    io::write_lines(records_path, lines);

    Matrix feats(static_cast<Eigen::Index>(ordered.size()), dim);
    for (std::size_t i = 0; i < ordered.size(); ++i) {
      feats.row(static_cast<Eigen::Index>(i)) = ordered[i]->features.transpose();
    }
    io::write_matrix_f32(features_sidecar_path(records_path), feats);

    Registry models;
    models.register_models(exp.new_models);
    save_registry(models, (fs::path(dir) / models_name).string());

    nlohmann::json entry;
    entry["label"] = exp.label;
    entry["file"] = records_name;
    entry["new_models_file"] = models_name;
    manifest["experiences"].push_back(std::move(entry));
  }
  io::write_json((fs::path(dir) / "manifest.json").string(), manifest);
}

// Loads a dataset directory (or an explicit manifest path). Feature sidecars
// win over re-featurization; the train/eval split takes the last
// round(0.15 * n) records of every model as its eval slice, matching the
// generator's per-model ordering.
inline std::vector<Experience> load_dataset(const std::string& path,
                                            int featurize_dim = 256,
                                            std::uint64_t featurize_seed = 0) {
  namespace fs = std::filesystem;
  fs::path manifest_path(path);
  if (fs::is_directory(manifest_path)) manifest_path /= "manifest.json";
  const nlohmann::json manifest = io::read_json(manifest_path.string());
  check(manifest.contains("experiences") && manifest["experiences"].is_array(),
        manifest_path.string(), ": missing 'experiences' array");
  const fs::path dir = manifest_path.parent_path();

  std::vector<Experience> experiences;
  for (const auto& entry : manifest["experiences"]) {
    Experience exp;
    exp.label = entry.value("label", "experience-" +
                                         std::to_string(experiences.size() + 1));
    const std::string records_path =
        (dir / entry.at("file").get<std::string>()).string();
    const auto records = io::read_jsonl(records_path);

    std::optional<Matrix> feats;
    const std::string sidecar = features_sidecar_path(records_path);
    if (fs::exists(sidecar)) {
      feats = io::read_matrix_f32(sidecar);
      check(feats->rows() == static_cast<Eigen::Index>(records.size()), sidecar,
            ": row count ", feats->rows(), " does not match the ",
            records.size(), " records in ", records_path);
    }

    std::vector<Example> examples;
    examples.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& r = records[i];
      check(r.contains("instruction") && r.contains("model_name") && r.contains("domain"),
            records_path, ": record ", i + 1,
            " must carry instruction, model_name and domain");
      Example ex;
      ex.instruction = r["instruction"].get<std::string>();
      ex.model_name = r["model_name"].get<std::string>();
      ex.domain = r["domain"].get<std::string>();
      if (r.contains("model_family")) ex.family = r["model_family"].get<std::string>();
      if (r.contains("created_at")) ex.created_at = r["created_at"].get<std::int64_t>();
      if (feats) {
        Vector row = feats->row(static_cast<Eigen::Index>(i)).transpose();
        const double norm = row.norm();
        check(norm > kTinyNorm, sidecar, ": zero feature row ", i + 1);
        ex.features = row / norm;  // f32 storage perturbs the unit norm
      } else {
        ex.features = featurize(ex.instruction, featurize_dim, featurize_seed);
      }
      examples.push_back(std::move(ex));
    }

    std::map<std::string, std::vector<int>> by_model;
    std::vector<char> is_eval(examples.size(), 0);
    for (std::size_t i = 0; i < examples.size(); ++i) {
      by_model[examples[i].model_name].push_back(static_cast<int>(i));
    }
    for (const auto& [model, idxs] : by_model) {
      const int n_eval =
          static_cast<int>(std::lround(0.15 * static_cast<double>(idxs.size())));
      for (std::size_t j = idxs.size() - static_cast<std::size_t>(n_eval);
           j < idxs.size(); ++j) {
        is_eval[static_cast<std::size_t>(idxs[j])] = 1;
      }
    }
    for (std::size_t i = 0; i < examples.size(); ++i) {
      if (is_eval[i]) {
        exp.eval.push_back(std::move(examples[i]));
      } else {
        exp.train.push_back(std::move(examples[i]));
      }
    }

    const Registry models = load_registry(
        (dir / entry.at("new_models_file").get<std::string>()).string());
    exp.new_models = models.records();
    experiences.push_back(std::move(exp));
  }
  return experiences;
}

// ---------------------------------------------------------------------------
// Retrieval baseline
// ---------------------------------------------------------------------------

// Nearest model card by cosine similarity over the whole registry; ties
// break toward the smaller index. Errors if any model lacks card features.
inline std::vector<int> retrieval_baseline(const Registry& registry,
                                           const std::vector<Example>& queries) {
  check(registry.size() > 0, "bench: retrieval over an empty registry");
  for (int m = 0; m < registry.size(); ++m) {
    check(registry.record(m).card_features.has_value(),
          "bench: model '", registry.record(m).id,
          "' has no card features; retrieval needs every card");
  }
  std::vector<int> preds;
  preds.reserve(queries.size());
  for (const auto& q : queries) {
    const double qn = q.features.norm();
    check(qn > kTinyNorm, "bench: zero-norm query features");
    int best = 0;
    double best_sim = -std::numeric_limits<double>::infinity();
    for (int m = 0; m < registry.size(); ++m) {
      const Vector& card = *registry.record(m).card_features;
      const double sim = q.features.dot(card) / (qn * card.norm());
      if (sim > best_sim) {
        best_sim = sim;
        best = m;
      }
    }
    preds.push_back(best);
  }
  return preds;
}

}  // namespace carve
