#pragma once

// Flat key/value config files: one "key = value" pair per line, '#' starts
// a comment, blank lines ignored. Values are strings; typed accessors parse
// on demand and report the offending key on failure.

#include "carve/common.hpp"
#include "carve/io.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace carve {

inline std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

class Config {
 public:
  Config() = default;

  static Config parse(const std::string& text, const std::string& origin = "<string>") {
    Config cfg;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      check(eq != std::string::npos, origin, ":", lineno,
            ": expected 'key = value', got '", line, "'");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      check(!key.empty(), origin, ":", lineno, ": empty key");
      cfg.values_[key] = value;
    }
    return cfg;
  }

  static Config parse_file(const std::string& path) {
    return parse(io::read_file(path), path);
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::optional<std::string> find(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
  }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto v = find(key);
    return v ? *v : fallback;
  }

  std::string require_string(const std::string& key) const {
    auto v = find(key);
    check(v.has_value(), "config: missing required key '", key, "'");
    return *v;
  }

  double get_double(const std::string& key, double fallback) const {
    auto v = find(key);
    if (!v) return fallback;
    try {
      std::size_t pos = 0;
      const double out = std::stod(*v, &pos);
      check(pos == v->size(), "trailing characters");
      return out;
    } catch (const std::exception&) {
      fail("config: key '", key, "' is not a number: '", *v, "'");
    }
  }

  std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
    auto v = find(key);
    if (!v) return fallback;
    try {
      std::size_t pos = 0;
      const std::int64_t out = std::stoll(*v, &pos);
      check(pos == v->size(), "trailing characters");
      return out;
    } catch (const std::exception&) {
      fail("config: key '", key, "' is not an integer: '", *v, "'");
    }
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto v = find(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "on" || *v == "yes") return true;
    if (*v == "false" || *v == "0" || *v == "off" || *v == "no") return false;
    fail("config: key '", key, "' is not a boolean: '", *v, "'");
  }

  std::vector<std::string> get_list(const std::string& key) const {
    auto v = find(key);
    std::vector<std::string> out;
    if (!v) return out;
    std::istringstream is(*v);
    std::string item;
    while (std::getline(is, item, ',')) {
      item = trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  std::vector<std::int64_t> get_int_list(const std::string& key) const {
    std::vector<std::int64_t> out;
    for (const auto& item : get_list(key)) {
      try {
        out.push_back(std::stoll(item));
      } catch (const std::exception&) {
        fail("config: key '", key, "' has non-integer element '", item, "'");
      }
    }
    return out;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace carve
