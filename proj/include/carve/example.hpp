#pragma once

// Routed example and experience containers shared by the replay, training
// and bench layers.

#include "carve/common.hpp"
#include "carve/registry.hpp"

#include <optional>
#include <string>
#include <vector>

namespace carve {

struct Example {
  std::string instruction;  // raw query text
  std::string model_name;   // gold model id ("owner/repo_id")
  std::string domain;
  std::optional<std::string> family;
  Vector features;          // unit-norm query features
  std::optional<std::int64_t> created_at;
  bool from_replay = false;
};

// One step of a continual stream: models that first appear here plus the
// train/eval splits of its queries.
struct Experience {
  std::string label;
  std::vector<ModelRecord> new_models;
  std::vector<Example> train;
  std::vector<Example> eval;
};

}  // namespace carve
