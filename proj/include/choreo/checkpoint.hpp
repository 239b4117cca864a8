// Copyright (C) 2026 the choreo authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include <json.hpp>

#include "choreo/nn.hpp"

namespace choreo {

struct NamedBlob {
  std::string name;
  Eigen::MatrixXd value;
};

// Single-file container: u64 manifest length, manifest JSON (metadata plus
// blob directory), then row-major f32 little-endian blob data back to back.
void save_checkpoint(const std::string& path, const nlohmann::json& meta,
                     const std::vector<NamedBlob>& blobs);
nlohmann::json load_checkpoint(const std::string& path, std::vector<NamedBlob>& blobs);

// ParamStore adapters. Loading requires every parameter to be present with
// matching shape; surplus blobs are returned through `extra` when given and
// rejected otherwise. Passing an optimizer adds Adam moment blobs so training
// can resume.
void save_model(const std::string& path, const nlohmann::json& meta, const nn::ParamStore& ps,
                const nn::AdamW* opt = nullptr, const std::vector<NamedBlob>& extra = {});
nlohmann::json load_model(const std::string& path, nn::ParamStore& ps, nn::AdamW* opt = nullptr,
                          std::vector<NamedBlob>* extra = nullptr);

}  // namespace choreo
