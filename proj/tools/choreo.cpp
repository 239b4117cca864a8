// Copyright (C) 2026 the choreo authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: one pipeline stage per invocation, configured by a
// preset, an optional JSON overlay file, and repeatable --set overrides.
#include <CLI11.hpp>
#include <array>
#include <filesystem>
#include <iostream>
#include <json.hpp>
#include <string>
#include <vector>

#include "choreo/binio.hpp"
#include "choreo/commands.hpp"
#include "choreo/error.hpp"
#include "choreo/run_config.hpp"

namespace {

using nlohmann::json;

struct CommonArgs {
  std::string preset = "desk";
  std::string config_file;
  std::vector<std::string> sets;
  std::string out;
};

void add_common(CLI::App* sub, CommonArgs& a) {
  sub->add_option("--preset", a.preset, "configuration preset: desk or paper-scale")
      ->capture_default_str();
  sub->add_option("--config", a.config_file, "JSON overlay file merged over the preset");
  sub->add_option("--set", a.sets, "dotted-path override, e.g. --set gpt.layers=4")
      ->type_size(1)
      ->allow_extra_args(false);
  sub->add_option("--out", a.out, "output directory (shorthand for --set out.dir=...)");
}

json resolve(const CommonArgs& a) {
  json defaults = choreo::preset_defaults(a.preset);
  json overlay;
  const json* overlay_ptr = nullptr;
  if (!a.config_file.empty()) {
    overlay = json::parse(choreo::read_text_file(a.config_file));
    choreo::ensure(overlay.is_object(), choreo::ErrorKind::config,
                   "config overlay must be a JSON object: " + a.config_file);
    overlay_ptr = &overlay;
  }
  std::vector<std::string> sets = a.sets;
  if (!a.out.empty()) sets.push_back("out.dir=" + a.out);
  return choreo::resolve_config(defaults, overlay_ptr, sets);
}

// The record lands on stderr as the final line and, when the output directory
// already exists, in <out>/error.json as well.
int report_failure(const choreo::Error& e, const json& cfg, const std::string& out_arg) {
  json record = choreo::error_record(e);
  std::string out = out_arg;
  if (cfg.is_object()) {
    const json* d = choreo::config_find(cfg, "out.dir");
    if (d && d->is_string() && !d->get<std::string>().empty()) out = d->get<std::string>();
  }
  if (!out.empty() && std::filesystem::is_directory(out)) {
    try {
      choreo::write_text_file(out + "/error.json", record.dump(2) + "\n");
    } catch (const std::exception&) {
      // the stderr record still stands
    }
  }
  std::cerr << record.dump() << "\n";
  return e.kind() == choreo::ErrorKind::config ? 2 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"compositional dance motion toolkit"};
  app.require_subcommand(1);

  struct Entry {
    const char* name;
    const char* desc;
    void (*fn)(const json&);
  };
  const std::array<Entry, 7> entries = {{
      {"synth-data", "generate the synthetic beat-locked dance corpus", choreo::cmd_synth_data},
      {"train-vqvae", "train the compositional pose tokenizer", choreo::cmd_train_vqvae},
      {"train-gpt", "train the music-conditioned motion transformer", choreo::cmd_train_gpt},
      {"train-video", "co-train the video denoiser and guidance decoder", choreo::cmd_train_video},
      {"generate", "sample dance motion (and optionally video) from music", choreo::cmd_generate},
      {"evaluate", "score generated clips against a reference set", choreo::cmd_evaluate},
      {"render", "rasterize a clip or token stream to PNG frames", choreo::cmd_render},
  }};

  std::array<CommonArgs, 7> args;
  std::array<CLI::App*, 7> subs{};
  bool dump_pyramids = false;
  for (size_t i = 0; i < entries.size(); ++i) {
    subs[i] = app.add_subcommand(entries[i].name, entries[i].desc);
    add_common(subs[i], args[i]);
    if (std::string(entries[i].name) == "render")
      subs[i]->add_flag("--dump-pyramids", dump_pyramids,
                        "also write the guidance maps as PNG grids");
  }

  CLI11_PARSE(app, argc, argv);

  size_t chosen = entries.size();
  for (size_t i = 0; i < entries.size(); ++i)
    if (subs[i]->parsed()) chosen = i;
  if (chosen == entries.size()) {
    std::cerr << app.help() << "\n";
    return 2;
  }
  if (dump_pyramids) args[chosen].sets.push_back("render.dump_pyramids=true");

  json cfg;
  try {
    cfg = resolve(args[chosen]);
    entries[chosen].fn(cfg);
  } catch (const choreo::Error& e) {
    return report_failure(e, cfg, args[chosen].out);
  } catch (const std::exception& e) {
    json record = {{"error", {{"kind", "internal"}, {"message", e.what()}}}};
    std::cerr << record.dump() << "\n";
    return 1;
  }
  return 0;
}
