#pragma once

// Append-only model registry.
//
// Every model gets a stable 0-based index on first registration and keeps
// it forever; the embedding table and all candidate machinery key off these
// indices. Registration never reorders or removes records, and re-registering
// an id with conflicting metadata is an error rather than an update.

#include "carve/common.hpp"
#include "carve/io.hpp"

#include <json.hpp>

#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace carve {

struct ModelRecord {
  std::string id;      // "owner/repo_id"
  std::string domain;  // non-empty routing domain
  std::optional<std::string> family;
  std::optional<Vector> card_features;  // unit-norm descriptor, if known
  std::optional<std::int64_t> created_at;  // epoch millis
};

inline bool valid_model_id(const std::string& id) {
  const auto slash = id.find('/');
  if (slash == std::string::npos || slash == 0 || slash + 1 == id.size()) {
    return false;
  }
  if (id.find('/', slash + 1) != std::string::npos) return false;
  for (char ch : id) {
    const bool ok = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') ||
                    (ch >= '0' && ch <= '9') || ch == '.' || ch == '_' ||
                    ch == '-' || ch == '/';
    if (!ok) return false;
  }
  return true;
}

inline void validate_record(const ModelRecord& rec) {
  check(valid_model_id(rec.id), "registry: malformed model id '", rec.id,
        "' (expected owner/repo_id with charset [A-Za-z0-9._-])");
  check(!rec.domain.empty(), "registry: record '", rec.id,
        "' has an empty domain");
  if (rec.card_features) {
    const double norm = rec.card_features->norm();
    check(std::abs(norm - 1.0) <= 1e-6, "registry: record '", rec.id,
          "' card features are not unit norm (|v| = ", norm, ")");
  }
}

class Registry {
 public:
  int size() const { return static_cast<int>(records_.size()); }
  std::int64_t version() const { return version_; }

  const ModelRecord& record(int index) const {
    check(index >= 0 && index < size(), "registry: index ", index,
          " out of range [0, ", size(), ")");
    return records_[static_cast<std::size_t>(index)];
  }

  const std::vector<ModelRecord>& records() const { return records_; }

  std::optional<int> index_of(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  int require_index(const std::string& id) const {
    auto idx = index_of(id);
    check(idx.has_value(), "registry: unknown model id '", id, "'");
    return *idx;
  }

  // Indices of models in `domain`, ascending.
  const std::vector<int>& domain_indices(const std::string& domain) const {
    static const std::vector<int> kEmpty;
    auto it = by_domain_.find(domain);
    return it == by_domain_.end() ? kEmpty : it->second;
  }

  std::vector<std::string> domains() const {
    std::vector<std::string> out;
    out.reserve(by_domain_.size());
    for (const auto& [name, _] : by_domain_) out.push_back(name);
    return out;  // std::map keeps them sorted
  }

  // Adds records that are not yet present, in input order, and returns the
  // index of every input record (existing ones keep their index). The
  // version increments once per call that appends at least one record.
  std::vector<int> register_models(const std::vector<ModelRecord>& recs) {
    std::vector<int> indices;
    indices.reserve(recs.size());
    bool appended = false;
    for (const auto& rec : recs) {
      validate_record(rec);
      auto it = index_.find(rec.id);
      if (it != index_.end()) {
        ModelRecord& existing = records_[static_cast<std::size_t>(it->second)];
        check(existing.domain == rec.domain, "registry: id '", rec.id,
              "' re-registered with domain '", rec.domain,
              "' but is already registered with domain '", existing.domain,
              "'");
        if (rec.family) {
          check(!existing.family || *existing.family == *rec.family,
                "registry: id '", rec.id, "' re-registered with family '",
                *rec.family, "' but is already registered with family '",
                *existing.family, "'");
          existing.family = rec.family;  // fill when previously absent
        }
        indices.push_back(it->second);
        continue;
      }
      const int idx = size();
      records_.push_back(rec);
      index_.emplace(rec.id, idx);
      by_domain_[rec.domain].push_back(idx);
      indices.push_back(idx);
      appended = true;
    }
    if (appended) ++version_;
    return indices;
  }

  // Restores the persisted version counter after a load; the counter must
  // stay monotone, so a load may only move it forward.
  void restore_version(std::int64_t v) {
    check(v >= version_, "registry: persisted version ", v,
          " is behind the in-memory version ", version_);
    version_ = v;
  }

  // Attaches family labels produced by clustering; unknown ids are ignored.
  void assign_families(const std::map<std::string, std::string>& families) {
    for (auto& rec : records_) {
      auto it = families.find(rec.id);
      if (it != families.end()) rec.family = it->second;
    }
  }

 private:
  std::vector<ModelRecord> records_;
  std::unordered_map<std::string, int> index_;
  std::map<std::string, std::vector<int>> by_domain_;
  std::int64_t version_ = 0;
};

inline std::string registry_sidecar_path(const std::string& json_path) {
  return json_path + ".cards.bin";
}

inline void save_registry(const Registry& reg, const std::string& json_path) {
  nlohmann::json j;
  j["version"] = reg.version();
  j["records"] = nlohmann::json::array();
  bool any_card = false;
  int card_dim = 0;
  for (const auto& rec : reg.records()) {
    nlohmann::json r;
    r["id"] = rec.id;
    r["domain"] = rec.domain;
    if (rec.family) r["family"] = *rec.family;
    if (rec.created_at) r["created_at"] = *rec.created_at;
    j["records"].push_back(std::move(r));
    if (rec.card_features) {
      any_card = true;
      card_dim = static_cast<int>(rec.card_features->size());
    }
  }
  io::write_json(json_path, j);
  if (any_card) {
    // One row per record; an all-zero row marks a record without card
    // features (valid cards are unit norm, so zero is unambiguous).
    Matrix cards = Matrix::Zero(reg.size(), card_dim);
    for (int i = 0; i < reg.size(); ++i) {
      const auto& card = reg.record(i).card_features;
      if (card) {
        check(card->size() == card_dim, "registry: card dimension mismatch at '",
              reg.record(i).id, "'");
        cards.row(i) = card->transpose();
      }
    }
    io::write_matrix_f32(registry_sidecar_path(json_path), cards);
  }
}

inline Registry load_registry(const std::string& json_path) {
  const nlohmann::json j = io::read_json(json_path);
  check(j.contains("records") && j["records"].is_array(),
        json_path, ": missing 'records' array");
  std::vector<ModelRecord> recs;
  for (const auto& r : j["records"]) {
    ModelRecord rec;
    rec.id = r.at("id").get<std::string>();
    rec.domain = r.at("domain").get<std::string>();
    if (r.contains("family")) rec.family = r["family"].get<std::string>();
    if (r.contains("created_at")) rec.created_at = r["created_at"].get<std::int64_t>();
    recs.push_back(std::move(rec));
  }
  const std::string sidecar = registry_sidecar_path(json_path);
  if (std::filesystem::exists(sidecar)) {
    const Matrix cards = io::read_matrix_f32(sidecar);
    check(cards.rows() == static_cast<Eigen::Index>(recs.size()), sidecar,
          ": row count ", cards.rows(), " does not match record count ",
          recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i) {
      Vector row = cards.row(static_cast<Eigen::Index>(i)).transpose();
      if (row.norm() > kTinyNorm) {
        // f32 storage perturbs the norm slightly; restore the invariant.
        recs[i].card_features = row / row.norm();
      }
    }
  }
  Registry reg;
  reg.register_models(recs);
  // Replaying the records in one batch yields version 1; trust the file.
  reg.restore_version(j.value("version", reg.version()));
  return reg;
}

}  // namespace carve
