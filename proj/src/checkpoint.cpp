// Copyright (C) 2026 the choreo authors
// SPDX-License-Identifier: Apache-2.0
#include "choreo/checkpoint.hpp"

#include <map>

#include "choreo/binio.hpp"
#include "choreo/error.hpp"

namespace choreo {

void save_checkpoint(const std::string& path, const nlohmann::json& meta,
                     const std::vector<NamedBlob>& blobs) {
  nlohmann::json manifest;
  manifest["schema_version"] = 1;
  manifest["meta"] = meta;
  auto dir = nlohmann::json::array();
  for (const auto& b : blobs) {
    dir.push_back({{"name", b.name},
                   {"rows", static_cast<int>(b.value.rows())},
                   {"cols", static_cast<int>(b.value.cols())}});
  }
  manifest["blobs"] = dir;

  const std::string text = manifest.dump();
  std::vector<uint8_t> out;
  append_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& b : blobs) append_f32(out, b.value);
  write_file(path, out);
}

nlohmann::json load_checkpoint(const std::string& path, std::vector<NamedBlob>& blobs) {
  const std::vector<uint8_t> buf = read_file(path);
  size_t offset = 0;
  const uint64_t text_len = parse_u64(buf, offset);
  ensure(offset + text_len <= buf.size(), ErrorKind::format,
         "checkpoint: manifest length exceeds file size");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(buf.begin() + offset, buf.begin() + offset + text_len);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::format, std::string("checkpoint: bad manifest JSON: ") + e.what());
  }
  offset += text_len;
  ensure(manifest.value("schema_version", 0) == 1, ErrorKind::format,
         "checkpoint: unsupported schema_version");
  ensure(manifest.contains("blobs") && manifest["blobs"].is_array(), ErrorKind::format,
         "checkpoint: missing blob directory");

  blobs.clear();
  for (const auto& entry : manifest["blobs"]) {
    NamedBlob b;
    b.name = entry.at("name").get<std::string>();
    const int rows = entry.at("rows").get<int>();
    const int cols = entry.at("cols").get<int>();
    ensure(rows >= 0 && cols >= 0, ErrorKind::format, "checkpoint: negative blob shape");
    b.value = parse_f32(buf, offset, rows, cols);
    blobs.push_back(std::move(b));
  }
  ensure(offset == buf.size(), ErrorKind::format, "checkpoint: trailing bytes after blobs");
  return manifest["meta"];
}

void save_model(const std::string& path, const nlohmann::json& meta, const nn::ParamStore& ps,
                const nn::AdamW* opt, const std::vector<NamedBlob>& extra) {
  std::vector<NamedBlob> blobs;
  for (const auto& p : ps.items()) blobs.push_back(NamedBlob{p->name, p->value});
  nlohmann::json full = meta;
  if (opt != nullptr) {
    for (const auto& p : ps.items()) {
      blobs.push_back(NamedBlob{"opt.m." + p->name, p->m});
      blobs.push_back(NamedBlob{"opt.v." + p->name, p->v});
    }
    full["opt_steps"] = opt->steps_done();
  }
  for (const auto& b : extra) blobs.push_back(b);
  save_checkpoint(path, full, blobs);
}

nlohmann::json load_model(const std::string& path, nn::ParamStore& ps, nn::AdamW* opt,
                          std::vector<NamedBlob>* extra) {
  std::vector<NamedBlob> blobs;
  nlohmann::json meta = load_checkpoint(path, blobs);
  std::map<std::string, const NamedBlob*> by_name;
  for (const auto& b : blobs) {
    ensure(by_name.emplace(b.name, &b).second, ErrorKind::format,
           "checkpoint: duplicate blob " + b.name);
  }

  auto take = [&](const std::string& name, Eigen::MatrixXd& dst) {
    auto it = by_name.find(name);
    ensure(it != by_name.end(), ErrorKind::structural, "checkpoint: missing blob " + name);
    const Eigen::MatrixXd& v = it->second->value;
    ensure(v.rows() == dst.rows() && v.cols() == dst.cols(), ErrorKind::structural,
           "checkpoint: shape mismatch for " + name);
    dst = v;
    by_name.erase(it);
  };

  for (auto& p : ps.items()) take(p->name, p->value);
  if (opt != nullptr) {
    for (auto& p : ps.items()) {
      take("opt.m." + p->name, p->m);
      take("opt.v." + p->name, p->v);
    }
    ensure(meta.contains("opt_steps"), ErrorKind::structural, "checkpoint: missing opt_steps");
    opt->set_steps_done(meta["opt_steps"].get<int64_t>());
  }
  if (extra != nullptr) {
    extra->clear();
    for (const auto& b : blobs) {
      if (by_name.count(b.name)) extra->push_back(b);
    }
  } else {
    ensure(by_name.empty(), ErrorKind::structural, "checkpoint: unexpected extra blobs");
  }
  return meta;
}

}  // namespace choreo
