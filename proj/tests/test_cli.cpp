// Copyright (C) 2026 the choreo authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

#include "choreo/binio.hpp"
#include "choreo/commands.hpp"
#include "choreo/corpus.hpp"
#include "choreo/error.hpp"
#include "choreo/hashing.hpp"
#include "choreo/motion_gpt.hpp"
#include "choreo/pose_codec.hpp"
#include "choreo/run_config.hpp"

namespace {

using nlohmann::json;
using namespace choreo;

std::string fresh_dir(const std::string& tag) {
  auto p = std::filesystem::temp_directory_path() / ("choreo_cli_" + tag);
  std::filesystem::remove_all(p);
  return p.string();
}

// Desk defaults shrunk until every stage runs in milliseconds.
json tiny_cfg() {
  json cfg = preset_defaults("desk");
  config_set(cfg, "corpus.train", 3);
  config_set(cfg, "corpus.val", 2);
  config_set(cfg, "corpus.test", 1);
  config_set(cfg, "codec.hidden", 16);
  config_set(cfg, "codec.codebook_size", 32);
  config_set(cfg, "codec.latent_dim", 4);
  config_set(cfg, "codec.tokens_per_part", 2);
  config_set(cfg, "vqvae_train.steps", 6);
  config_set(cfg, "vqvae_train.batch", 16);
  config_set(cfg, "vqvae_train.pool_clips", 2);
  config_set(cfg, "vqvae_train.log_every", 3);
  config_set(cfg, "vqvae_train.reseed_every", 4);
  config_set(cfg, "vqvae_train.val_clips", 1);
  config_set(cfg, "gpt.frames", 16);
  config_set(cfg, "gpt.context_frames", 2);
  config_set(cfg, "gpt.overlap", 4);
  config_set(cfg, "gpt.d_model", 32);
  config_set(cfg, "gpt.layers", 1);
  config_set(cfg, "gpt.heads", 2);
  config_set(cfg, "gpt.mlp_mult", 2);
  config_set(cfg, "gpt_train.steps", 4);
  config_set(cfg, "gpt_train.batch", 1);
  config_set(cfg, "gpt_train.clips", 2);
  config_set(cfg, "gpt_train.val_clips", 1);
  config_set(cfg, "gpt_train.log_every", 2);
  config_set(cfg, "video.h", 16);
  config_set(cfg, "video.w", 8);
  config_set(cfg, "video.channels", json::array({6, 8}));
  config_set(cfg, "video.frames", 4);
  config_set(cfg, "video.diff_steps", 6);
  config_set(cfg, "video_train.steps", 3);
  config_set(cfg, "video_train.window_stride", 40);
  config_set(cfg, "video_train.log_every", 2);
  config_set(cfg, "generate.length", 20);
  config_set(cfg, "generate.clips", 1);
  config_set(cfg, "render.h", 40);
  config_set(cfg, "render.w", 24);
  return cfg;
}

// One tiny corpus -> codec -> transformer pipeline shared by the command
// cases; built on first use.
struct Artifacts {
  std::string root, corpus, codec, gpt;
};

const Artifacts& artifacts() {
  static Artifacts a = [] {
    Artifacts r;
    r.root = fresh_dir("artifacts");
    r.corpus = r.root + "/corpus";
    json cfg = tiny_cfg();
    config_set(cfg, "out.dir", r.corpus);
    cmd_synth_data(cfg);
    json vq = tiny_cfg();
    config_set(vq, "out.dir", r.root + "/vq");
    config_set(vq, "data.corpus", r.corpus);
    cmd_train_vqvae(vq);
    r.codec = r.root + "/vq/codec.ckpt";
    json gp = tiny_cfg();
    config_set(gp, "out.dir", r.root + "/gpt");
    config_set(gp, "data.corpus", r.corpus);
    config_set(gp, "data.codec", r.codec);
    cmd_train_gpt(gp);
    r.gpt = r.root + "/gpt/gpt.ckpt";
    return r;
  }();
  return a;
}

bool any_contains(const std::vector<std::string>& items, const std::string& frag) {
  return std::any_of(items.begin(), items.end(), [&](const std::string& s) {
    return s.find(frag) != std::string::npos;
  });
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("dotted paths look up, create, and flatten") {
    json cfg = {{"a", {{"b", 1}}}};
    REQUIRE(config_find(cfg, "a.b") != nullptr);
    CHECK(config_find(cfg, "a.b")->get<int>() == 1);
    CHECK(config_find(cfg, "a.c") == nullptr);
    CHECK(config_find(cfg, "a.b.c") == nullptr);  // scalar has no children
    CHECK(config_find(cfg, "z") == nullptr);

    config_set(cfg, "a.c.d", json(5));
    CHECK(cfg["a"]["c"]["d"] == 5);
    config_set(cfg, "a.b", json("x"));
    CHECK(cfg["a"]["b"] == "x");
    CHECK_THROWS_AS(config_set(cfg, "", json(1)), Error);
    CHECK_THROWS_AS(config_set(cfg, "a..b", json(1)), Error);

    json doc = {{"a", {{"b", 1}, {"c", {{"d", true}}}}}, {"e", "x"}};
    auto leaves = flatten_config(doc);
    CHECK(leaves.size() == 3);
    CHECK(leaves.at("a.b") == 1);
    CHECK(leaves.at("a.c.d") == true);
    CHECK(leaves.at("e") == "x");
  }

  TEST_CASE("set overrides parse as JSON with string fallback") {
    auto [k1, v1] = parse_set_override("gpt.layers=3");
    CHECK(k1 == "gpt.layers");
    CHECK(v1 == json(3));
    CHECK(parse_set_override("x=3.5e-2").second == json(0.035));
    CHECK(parse_set_override("x=true").second == json(true));
    CHECK(parse_set_override("x=[1,2]").second == json::array({1, 2}));
    CHECK(parse_set_override("x=hello").second == json("hello"));
    CHECK(parse_set_override("x=/a/b.ckpt").second == json("/a/b.ckpt"));
    CHECK(parse_set_override("x=").second == json(""));
    CHECK_THROWS_AS(parse_set_override("no_equals"), Error);
    CHECK_THROWS_AS(parse_set_override("=v"), Error);
  }

  TEST_CASE("layered resolution merges objects and applies overrides last") {
    json defaults = {{"a", {{"x", 1}, {"y", 2}}}, {"b", 7}};
    json overlay = {{"a", {{"y", 5}}}};
    json out = resolve_config(defaults, &overlay, {"a.x=9", "c.z=hi"});
    CHECK(out["a"]["x"] == 9);
    CHECK(out["a"]["y"] == 5);
    CHECK(out["b"] == 7);
    CHECK(out["c"]["z"] == "hi");
    CHECK(resolve_config(defaults, nullptr, {}) == defaults);
    json bad = json::array({1});
    CHECK_THROWS_AS(resolve_config(defaults, &bad, {}), Error);
  }

  TEST_CASE("schema collects every violation in one pass") {
    json cfg = preset_defaults("desk");
    config_set(cfg, "gpt.layers", json(0));
    config_set(cfg, "gpt.dropout", json(7.5));
    config_set(cfg, "gpt.use_music_style", json(3));
    config_set(cfg, "extra.key", json(1));
    cfg["gpt"].erase("heads");
    std::vector<std::string> v;
    run_config_schema().check(cfg, v);
    CHECK(v.size() == 5);
    CHECK(any_contains(v, "gpt.layers"));
    CHECK(any_contains(v, "gpt.dropout"));
    CHECK(any_contains(v, "gpt.use_music_style: expected a boolean"));
    CHECK(any_contains(v, "extra.key: unknown key"));
    CHECK(any_contains(v, "gpt.heads: missing"));

    try {
      run_config_schema().validate(cfg);
      CHECK(false);
    } catch (const ConfigViolations& e) {
      CHECK(e.kind() == ErrorKind::config);
      CHECK(e.items().size() == 5);
      CHECK(std::string(e.what()).find("gpt.layers") != std::string::npos);
    }
  }

  TEST_CASE("presets pass their own schema") {
    std::vector<std::string> v;
    run_config_schema().check(preset_defaults("desk"), v);
    run_config_schema().check(preset_defaults("paper-scale"), v);
    CHECK(v.empty());
    CHECK(preset_defaults("desk")["gpt_train"]["batch"] == 2);
    CHECK(preset_defaults("paper-scale")["gpt_train"]["batch"] == 24);
    CHECK_THROWS_AS(preset_defaults("garage"), Error);
  }

  TEST_CASE("integer array fields are validated elementwise") {
    json cfg = preset_defaults("desk");
    std::vector<std::string> v;
    config_set(cfg, "video.channels", json(3));
    run_config_schema().check(cfg, v);
    CHECK(any_contains(v, "video.channels"));
    v.clear();
    config_set(cfg, "video.channels", json::array({4, 100000}));
    run_config_schema().check(cfg, v);
    CHECK(any_contains(v, "video.channels"));
    v.clear();
    config_set(cfg, "video.channels", json::array({4, 8}));
    run_config_schema().check(cfg, v);
    CHECK(v.empty());
  }

  TEST_CASE("directory lock is exclusive and released on scope exit") {
    std::string dir = fresh_dir("lock");
    {
      DirLock held(dir);
      CHECK(file_exists(dir + "/.lock"));
      try {
        DirLock second(dir);
        CHECK(false);
      } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::io);
      }
    }
    CHECK(!file_exists(dir + "/.lock"));
    DirLock again(dir);  // reacquire after release
  }

  TEST_CASE("content hashes cover files and directory trees") {
    std::string dir = fresh_dir("hash");
    make_dirs(dir + "/sub");
    write_text_file(dir + "/a.txt", "abc");
    CHECK(content_hash_of_path(dir + "/a.txt") == sha256_hex("abc"));
    std::string h1 = content_hash_of_path(dir);
    CHECK(content_hash_of_path(dir) == h1);
    write_text_file(dir + "/sub/b.txt", "def");
    std::string h2 = content_hash_of_path(dir);
    CHECK(h1 != h2);

    // same tree elsewhere hashes the same; names matter, locations do not
    std::string dir2 = fresh_dir("hash2");
    make_dirs(dir2 + "/sub");
    write_text_file(dir2 + "/a.txt", "abc");
    write_text_file(dir2 + "/sub/b.txt", "def");
    CHECK(content_hash_of_path(dir2) == h2);

    CHECK_THROWS_AS(content_hash_of_path(dir + "/nope"), Error);
  }

  TEST_CASE("error records carry kind, message, and violations") {
    json r = error_record(Error(ErrorKind::validation, "boom"));
    CHECK(r["error"]["kind"] == "validation");
    CHECK(r["error"]["message"] == "boom");
    CHECK(!r["error"].contains("violations"));

    ConfigViolations cv({"a: bad", "b: worse"});
    json r2 = error_record(cv);
    CHECK(r2["error"]["kind"] == "config");
    REQUIRE(r2["error"].contains("violations"));
    CHECK(r2["error"]["violations"].size() == 2);
    CHECK(std::string(r2["error"]["message"]).find("a: bad") != std::string::npos);
  }

  TEST_CASE("corpus synthesis writes splits, frozen config, and provenance") {
    const Artifacts& a = artifacts();
    CHECK(list_clips(a.corpus + "/train").size() == 3);
    CHECK(list_clips(a.corpus + "/val").size() == 2);
    CHECK(list_clips(a.corpus + "/test").size() == 1);
    json summary = json::parse(read_text_file(a.corpus + "/summary.json"));
    CHECK(summary["train"] == 3);
    json frozen = json::parse(read_text_file(a.corpus + "/config.json"));
    CHECK(frozen["corpus"]["train"] == 3);
    json prov = json::parse(read_text_file(a.corpus + "/provenance.json"));
    CHECK(prov["command"] == "synth-data");
    CHECK(prov.contains("timestamp"));
  }

  TEST_CASE("tokenizer training leaves a loadable checkpoint and logs") {
    const Artifacts& a = artifacts();
    PoseCodec codec = PoseCodec::load(a.codec, SkeletonTopology::standard60());
    CHECK(codec.config().codebook_size == 32);
    CHECK(!file_exists(a.root + "/vq/.lock"));  // released after training
    json metrics = json::parse(read_text_file(a.root + "/vq/metrics.json"));
    CHECK(metrics["final"]["pose_l1"]["full_body"].get<double>() > 0.0);
    std::string log = read_text_file(a.root + "/vq/metrics.jsonl");
    json first = json::parse(log.substr(0, log.find('\n')));
    CHECK(first["step"] == 3);
    CHECK(first.contains("total"));
    json prov = json::parse(read_text_file(a.root + "/vq/provenance.json"));
    CHECK(prov["inputs"]["corpus_train"]["sha256"] ==
          content_hash_of_path(a.corpus + "/train"));
  }

  TEST_CASE("transformer training reports held-out CE near its starting point") {
    const Artifacts& a = artifacts();
    MotionGpt gpt = MotionGpt::load(a.gpt);
    CHECK(gpt.config().vocab_per_part == 32);
    json metrics = json::parse(read_text_file(a.root + "/gpt/metrics.json"));
    double ce = metrics["final"]["val_ce"].get<double>();
    CHECK(ce > 0.0);
    CHECK(ce < std::log(32.0) + 0.5);  // 4 steps cannot move far from ln E
    CHECK(metrics["final"]["val_targets"].get<int>() > 0);
    json prov = json::parse(read_text_file(a.root + "/gpt/provenance.json"));
    CHECK(prov["inputs"]["codec"]["sha256"] == sha256_file_hex(a.codec));
  }

  TEST_CASE("generation is byte-deterministic and clips load back") {
    const Artifacts& a = artifacts();
    auto run = [&](const std::string& out) {
      json cfg = tiny_cfg();
      config_set(cfg, "out.dir", out);
      config_set(cfg, "data.codec", a.codec);
      config_set(cfg, "data.gpt", a.gpt);
      cmd_generate(cfg);
    };
    std::string d1 = fresh_dir("gen1"), d2 = fresh_dir("gen2");
    run(d1);
    run(d2);
    CHECK(read_file(d1 + "/clip_000/tokens.bin") == read_file(d2 + "/clip_000/tokens.bin"));
    CorpusClip clip = load_clip(d1 + "/clip_000");
    CHECK(clip.seq.length() == 20);
    CHECK(clip.music.length() == 20);
    CHECK(!clip.beats.beat_times.empty());
    PartTokenGrid grid = load_token_grid(d1 + "/clip_000/tokens.bin");
    CHECK(grid.t == 20);
    CHECK(grid.b == 5);
  }

  TEST_CASE("evaluation of a set against itself is reproducible with near-zero distance") {
    const Artifacts& a = artifacts();
    json cfg = tiny_cfg();
    std::string out = fresh_dir("eval");
    config_set(cfg, "out.dir", out);
    config_set(cfg, "data.generated", a.corpus + "/val");
    config_set(cfg, "data.reference", a.corpus + "/val");
    cmd_evaluate(cfg);
    std::string text = read_text_file(out + "/metrics.json");
    CHECK(text.find("timestamp") == std::string::npos);
    json m = json::parse(text);
    CHECK(m["generated_clips"] == 2);
    CHECK(m["frechet_pose_distance"].get<double>() < 1e-6);
    CHECK(m["per_clip"].size() == 2);
    CHECK(file_exists(out + "/plots/beat_raster.png"));
    CHECK(file_exists(out + "/plots/feature_scatter.png"));

    std::filesystem::remove_all(out);
    cmd_evaluate(cfg);
    CHECK(read_text_file(out + "/metrics.json") == text);
  }

  TEST_CASE("rendering a clip writes frames and a manifest") {
    const Artifacts& a = artifacts();
    std::string clip_dir = list_clips(a.corpus + "/val")[0];
    json cfg = tiny_cfg();
    std::string out = fresh_dir("render");
    config_set(cfg, "out.dir", out);
    config_set(cfg, "data.clip", clip_dir);
    cmd_render(cfg);
    CHECK(file_exists(out + "/frame_0000.png"));
    json manifest = json::parse(read_text_file(out + "/manifest.json"));
    CHECK(manifest["frames"] == 120);
    CHECK(manifest["fps"] == 30.0);
    CHECK(manifest["source"] == "clip");
  }

  TEST_CASE("missing inputs are reported together, not one at a time") {
    json cfg = tiny_cfg();
    config_set(cfg, "out.dir", fresh_dir("missing"));
    try {
      cmd_generate(cfg);
      CHECK(false);
    } catch (const ConfigViolations& e) {
      CHECK(any_contains(e.items(), "data.gpt"));
      CHECK(any_contains(e.items(), "data.codec"));
    }
  }

  TEST_CASE("render requires exactly one pose source") {
    const Artifacts& a = artifacts();
    json cfg = tiny_cfg();
    config_set(cfg, "out.dir", fresh_dir("render_bad"));
    try {
      cmd_render(cfg);
      CHECK(false);
    } catch (const ConfigViolations& e) {
      CHECK(any_contains(e.items(), "exactly one source"));
    }
    config_set(cfg, "data.clip", list_clips(a.corpus + "/val")[0]);
    config_set(cfg, "data.tokens", a.codec);  // both set is as wrong as none
    CHECK_THROWS_AS(cmd_render(cfg), ConfigViolations);
  }

  TEST_CASE("a held lock blocks training in the same directory") {
    const Artifacts& a = artifacts();
    std::string out = fresh_dir("locked_out");
    DirLock held(out);
    json cfg = tiny_cfg();
    config_set(cfg, "out.dir", out);
    config_set(cfg, "data.corpus", a.corpus);
    try {
      cmd_train_vqvae(cfg);
      CHECK(false);
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::io);
    }
  }
}
