// Copyright (C) 2026 the choreo authors
// SPDX-License-Identifier: Apache-2.0
#include "choreo/run_config.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>

#include "choreo/hashing.hpp"

namespace choreo {

using nlohmann::json;

namespace {

std::vector<std::string> split_path(const std::string& key) {
  std::vector<std::string> parts;
  size_t start = 0;
  while (true) {
    size_t dot = key.find('.', start);
    if (dot == std::string::npos) {
      parts.push_back(key.substr(start));
      break;
    }
    parts.push_back(key.substr(start, dot - start));
    start = dot + 1;
  }
  return parts;
}

void flatten_into(const json& node, const std::string& prefix,
                  std::map<std::string, json>& out) {
  if (node.is_object()) {
    for (const auto& [k, v] : node.items())
      flatten_into(v, prefix.empty() ? k : prefix + "." + k, out);
  } else {
    out[prefix] = node;
  }
}

void merge_into(json& base, const json& overlay) {
  if (!base.is_object() || !overlay.is_object()) {
    base = overlay;
    return;
  }
  for (const auto& [k, v] : overlay.items()) {
    if (base.contains(k) && base[k].is_object() && v.is_object())
      merge_into(base[k], v);
    else
      base[k] = v;
  }
}

}  // namespace

const json* config_find(const json& root, const std::string& key) {
  const json* node = &root;
  for (const std::string& part : split_path(key)) {
    if (!node->is_object() || !node->contains(part)) return nullptr;
    node = &(*node)[part];
  }
  return node;
}

void config_set(json& root, const std::string& key, json value) {
  ensure(!key.empty(), ErrorKind::config, "empty config key");
  json* node = &root;
  std::vector<std::string> parts = split_path(key);
  for (size_t i = 0; i + 1 < parts.size(); ++i) {
    ensure(!parts[i].empty(), ErrorKind::config, "empty segment in config key: " + key);
    if (!node->contains(parts[i]) || !(*node)[parts[i]].is_object())
      (*node)[parts[i]] = json::object();
    node = &(*node)[parts[i]];
  }
  ensure(!parts.back().empty(), ErrorKind::config, "empty segment in config key: " + key);
  (*node)[parts.back()] = std::move(value);
}

std::map<std::string, json> flatten_config(const json& root) {
  std::map<std::string, json> out;
  flatten_into(root, "", out);
  return out;
}

std::pair<std::string, json> parse_set_override(const std::string& arg) {
  size_t eq = arg.find('=');
  ensure(eq != std::string::npos && eq > 0, ErrorKind::config,
         "override must look like key=value: " + arg);
  std::string key = arg.substr(0, eq);
  std::string raw = arg.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;  // bare strings need no quotes
  return {key, value};
}

namespace {
std::string join_violations(const std::vector<std::string>& items) {
  std::string msg = "config validation failed:";
  for (const std::string& it : items) msg += "\n  - " + it;
  return msg;
}
}  // namespace

ConfigViolations::ConfigViolations(std::vector<std::string> items)
    : Error(ErrorKind::config, join_violations(items)), items_(std::move(items)) {}

ConfigSchema& ConfigSchema::boolean(const std::string& key) {
  fields_[key] = {ConfigField::Type::boolean, 0, 0};
  return *this;
}

ConfigSchema& ConfigSchema::integer(const std::string& key, double min, double max) {
  fields_[key] = {ConfigField::Type::integer, min, max};
  return *this;
}

ConfigSchema& ConfigSchema::number(const std::string& key, double min, double max) {
  fields_[key] = {ConfigField::Type::number, min, max};
  return *this;
}

ConfigSchema& ConfigSchema::text(const std::string& key) {
  fields_[key] = {ConfigField::Type::string, 0, 0};
  return *this;
}

ConfigSchema& ConfigSchema::int_array(const std::string& key, double min, double max) {
  fields_[key] = {ConfigField::Type::int_array, min, max};
  return *this;
}

void ConfigSchema::check(const json& cfg, std::vector<std::string>& violations) const {
  std::map<std::string, json> leaves = flatten_config(cfg);
  for (const auto& [key, value] : leaves) {
    auto it = fields_.find(key);
    if (it == fields_.end()) {
      violations.push_back(key + ": unknown key");
      continue;
    }
    const ConfigField& f = it->second;
    switch (f.type) {
      case ConfigField::Type::boolean:
        if (!value.is_boolean()) violations.push_back(key + ": expected a boolean");
        break;
      case ConfigField::Type::integer:
        if (!value.is_number_integer() && !value.is_number_unsigned()) {
          violations.push_back(key + ": expected an integer");
        } else {
          double v = value.get<double>();
          if (v < f.min || v > f.max)
            violations.push_back(key + ": " + value.dump() + " outside [" +
                                 json(f.min).dump() + ", " + json(f.max).dump() + "]");
        }
        break;
      case ConfigField::Type::number:
        if (!value.is_number()) {
          violations.push_back(key + ": expected a number");
        } else {
          double v = value.get<double>();
          if (v < f.min || v > f.max)
            violations.push_back(key + ": " + value.dump() + " outside [" +
                                 json(f.min).dump() + ", " + json(f.max).dump() + "]");
        }
        break;
      case ConfigField::Type::string:
        if (!value.is_string()) violations.push_back(key + ": expected a string");
        break;
      case ConfigField::Type::int_array: {
        bool ok = value.is_array();
        if (ok)
          for (const json& e : value)
            if (!e.is_number_integer() || e.get<double>() < f.min || e.get<double>() > f.max)
              ok = false;
        if (!ok) violations.push_back(key + ": expected an array of integers in range");
        break;
      }
    }
  }
  for (const auto& [key, field] : fields_) {
    (void)field;
    if (leaves.find(key) == leaves.end()) violations.push_back(key + ": missing");
  }
}

void ConfigSchema::validate(const json& cfg) const {
  std::vector<std::string> violations;
  check(cfg, violations);
  if (!violations.empty()) throw ConfigViolations(std::move(violations));
}

json resolve_config(const json& defaults, const json* overlay,
                    const std::vector<std::string>& set_args) {
  json out = defaults;
  if (overlay) {
    ensure(overlay->is_object(), ErrorKind::config, "config overlay must be a JSON object");
    merge_into(out, *overlay);
  }
  for (const std::string& arg : set_args) {
    auto [key, value] = parse_set_override(arg);
    config_set(out, key, std::move(value));
  }
  return out;
}

DirLock::DirLock(const std::string& dir) {
  std::filesystem::create_directories(dir);
  path_ = (std::filesystem::path(dir) / ".lock").string();
  int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  ensure(fd >= 0, ErrorKind::io,
         "output directory is locked by another run (remove " + path_ + " if stale)");
  std::string pid = std::to_string(::getpid()) + "\n";
  ssize_t n = ::write(fd, pid.data(), pid.size());
  (void)n;
  ::close(fd);
}

DirLock::~DirLock() {
  std::error_code ec;
  std::filesystem::remove(path_, ec);
}

std::string content_hash_of_path(const std::string& path) {
  namespace fs = std::filesystem;
  ensure(fs::exists(path), ErrorKind::io, "no such path: " + path);
  if (fs::is_regular_file(path)) return sha256_file_hex(path);
  ensure(fs::is_directory(path), ErrorKind::io, "not a file or directory: " + path);
  std::vector<std::string> rels;
  for (const auto& entry : fs::recursive_directory_iterator(path))
    if (entry.is_regular_file())
      rels.push_back(fs::relative(entry.path(), path).generic_string());
  std::sort(rels.begin(), rels.end());
  Sha256 h;
  for (const std::string& rel : rels) {
    std::string line = rel + ":" + sha256_file_hex((fs::path(path) / rel).string()) + "\n";
    h.update(line.data(), line.size());
  }
  return h.hex_digest();
}

std::string cache_root() {
  const char* env = std::getenv("CHOREO_CACHE");
  return env ? std::string(env) : std::string();
}

json error_record(const Error& e) {
  json rec;
  rec["error"]["kind"] = error_kind_name(e.kind());
  rec["error"]["message"] = e.what();
  if (const auto* cv = dynamic_cast<const ConfigViolations*>(&e))
    rec["error"]["violations"] = cv->items();
  return rec;
}

}  // namespace choreo
