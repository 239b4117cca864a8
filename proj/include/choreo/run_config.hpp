// Copyright (C) 2026 the choreo authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "choreo/error.hpp"

namespace choreo {

// Layered run configuration: built-in preset defaults, an optional overlay
// document, then --set key=value overrides, resolved left to right. Keys are
// dot paths into nested JSON objects ("codec.latent_dim").

const nlohmann::json* config_find(const nlohmann::json& root, const std::string& key);
void config_set(nlohmann::json& root, const std::string& key, nlohmann::json value);
// Leaf dot-path -> value view of a config document.
std::map<std::string, nlohmann::json> flatten_config(const nlohmann::json& root);

// Splits "key=value"; the value is JSON-parsed, falling back to a string.
std::pair<std::string, nlohmann::json> parse_set_override(const std::string& arg);

// All schema problems of one validation pass, reported together.
class ConfigViolations : public Error {
 public:
  explicit ConfigViolations(std::vector<std::string> items);
  const std::vector<std::string>& items() const { return items_; }

 private:
  std::vector<std::string> items_;
};

struct ConfigField {
  enum class Type { boolean, integer, number, string, int_array };
  Type type = Type::string;
  double min = -1e300;
  double max = 1e300;
};

// Explicit whole-document schema: every leaf key must be known, of the right
// type, and in range. Unknown keys are violations too.
class ConfigSchema {
 public:
  ConfigSchema& boolean(const std::string& key);
  ConfigSchema& integer(const std::string& key, double min, double max);
  ConfigSchema& number(const std::string& key, double min, double max);
  ConfigSchema& text(const std::string& key);
  ConfigSchema& int_array(const std::string& key, double min, double max);

  void check(const nlohmann::json& cfg, std::vector<std::string>& violations) const;
  void validate(const nlohmann::json& cfg) const;  // throws ConfigViolations

 private:
  std::map<std::string, ConfigField> fields_;
};

nlohmann::json resolve_config(const nlohmann::json& defaults, const nlohmann::json* overlay,
                              const std::vector<std::string>& set_args);

// Exclusive ownership of a training output directory: creates dir/.lock,
// failing if it already exists; removes it on destruction.
class DirLock {
 public:
  explicit DirLock(const std::string& dir);
  ~DirLock();
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  std::string path_;
};

// SHA-256 of a file, or of a directory tree (sorted relative paths with
// per-file content hashes).
std::string content_hash_of_path(const std::string& path);

// $CHOREO_CACHE, or empty when unset.
std::string cache_root();

// Machine-readable record for CLI failures.
nlohmann::json error_record(const Error& e);

}  // namespace choreo
