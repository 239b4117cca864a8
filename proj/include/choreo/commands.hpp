// Copyright (C) 2026 the choreo authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>
#include <string>

#include "choreo/run_config.hpp"

namespace choreo {

// Built-in preset documents: "desk" (minutes-scale runs on one core) and
// "paper-scale" (the published hyperparameters). Every command resolves its
// configuration as preset defaults <- overlay file <- --set overrides.
nlohmann::json preset_defaults(const std::string& preset);

// Whole-document schema shared by every command.
const ConfigSchema& run_config_schema();

// One function per CLI command. Each validates the resolved document (schema
// plus referenced-path existence, reporting every violation at once), runs,
// and writes its artifacts plus a frozen config.json and provenance.json
// under out.dir. Training commands hold an exclusive .lock on out.dir.
void cmd_synth_data(const nlohmann::json& cfg);
void cmd_train_vqvae(const nlohmann::json& cfg);
void cmd_train_gpt(const nlohmann::json& cfg);
void cmd_train_video(const nlohmann::json& cfg);
void cmd_generate(const nlohmann::json& cfg);
void cmd_evaluate(const nlohmann::json& cfg);
void cmd_render(const nlohmann::json& cfg);

}  // namespace choreo
