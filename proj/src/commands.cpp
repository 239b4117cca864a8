// Copyright (C) 2026 the choreo authors
// SPDX-License-Identifier: Apache-2.0
#include "choreo/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <memory>
#include <utility>

#include "choreo/binio.hpp"
#include "choreo/checkpoint.hpp"
#include "choreo/corpus.hpp"
#include "choreo/guidance.hpp"
#include "choreo/hashing.hpp"
#include "choreo/image.hpp"
#include "choreo/metrics.hpp"
#include "choreo/motion_gpt.hpp"
#include "choreo/music.hpp"
#include "choreo/pose_codec.hpp"
#include "choreo/video.hpp"

namespace choreo {

using nlohmann::json;

namespace {

// ---- config plumbing ----

const json& at_key(const json& cfg, const std::string& key) {
  const json* v = config_find(cfg, key);
  ensure(v != nullptr, ErrorKind::config, "missing config key: " + key);
  return *v;
}

std::string str_at(const json& cfg, const std::string& key) {
  return at_key(cfg, key).get<std::string>();
}
int64_t int_at(const json& cfg, const std::string& key) {
  return at_key(cfg, key).get<int64_t>();
}
uint64_t seed_at(const json& cfg, const std::string& key) {
  return at_key(cfg, key).get<uint64_t>();
}
double num_at(const json& cfg, const std::string& key) {
  return at_key(cfg, key).get<double>();
}
bool bool_at(const json& cfg, const std::string& key) {
  return at_key(cfg, key).get<bool>();
}

void require_input(const json& cfg, const std::string& key, std::vector<std::string>& v) {
  const json* val = config_find(cfg, key);
  if (!val || !val->is_string() || val->get<std::string>().empty()) {
    v.push_back(key + ": required by this command");
    return;
  }
  if (!std::filesystem::exists(val->get<std::string>()))
    v.push_back(key + ": no such path: " + val->get<std::string>());
}

std::string checked_out_dir(const json& cfg, std::vector<std::string>& v) {
  const json* val = config_find(cfg, "out.dir");
  if (!val || !val->is_string() || val->get<std::string>().empty()) {
    v.push_back("out.dir: required by this command");
    return {};
  }
  return val->get<std::string>();
}

void base_validate(const json& cfg, std::vector<std::string>& v) {
  run_config_schema().check(cfg, v);
}

void finish_validate(std::vector<std::string>& v) {
  if (!v.empty()) throw ConfigViolations(std::move(v));
}

// ---- artifact records ----

std::string now_utc() {
  std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

json input_entry(const std::string& path) {
  return json{{"path", path}, {"sha256", content_hash_of_path(path)}};
}

void write_frozen_config(const std::string& dir, const json& cfg) {
  make_dirs(dir);
  write_text_file(dir + "/config.json", cfg.dump(2) + "\n");
}

// Everything except "timestamp" is reproducible for identical config + seed.
void write_provenance(const std::string& dir, const std::string& command, const json& inputs,
                      const json& extra = json::object()) {
  json p = extra;
  p["command"] = command;
  p["inputs"] = inputs;
  p["timestamp"] = now_utc();
  write_text_file(dir + "/provenance.json", p.dump(2) + "\n");
}

class JsonlWriter {
 public:
  explicit JsonlWriter(const std::string& path) : out_(path) {
    ensure(out_.good(), ErrorKind::io, "cannot open log file: " + path);
  }
  void append(const json& j) {
    out_ << j.dump() << "\n";
    out_.flush();
  }

 private:
  std::ofstream out_;
};

// ---- stage config builders ----

CodecConfig codec_config_from(const json& cfg) {
  CodecConfig c;
  c.tokens_per_part = static_cast<int>(int_at(cfg, "codec.tokens_per_part"));
  c.latent_dim = static_cast<int>(int_at(cfg, "codec.latent_dim"));
  c.codebook_size = static_cast<int>(int_at(cfg, "codec.codebook_size"));
  c.hidden = static_cast<int>(int_at(cfg, "codec.hidden"));
  c.codebooks_per_part = static_cast<int>(int_at(cfg, "codec.codebooks_per_part"));
  c.beta = num_at(cfg, "codec.beta");
  c.gamma = num_at(cfg, "codec.gamma");
  c.single_part = bool_at(cfg, "codec.single_part");
  c.seed = seed_at(cfg, "codec.seed");
  return c;
}

VideoConfig video_config_from(const json& cfg) {
  VideoConfig c;
  c.h = static_cast<int>(int_at(cfg, "video.h"));
  c.w = static_cast<int>(int_at(cfg, "video.w"));
  c.frames = static_cast<int>(int_at(cfg, "video.frames"));
  c.channels = at_key(cfg, "video.channels").get<std::vector<int>>();
  c.diff_steps = static_cast<int>(int_at(cfg, "video.diff_steps"));
  c.beta_min = num_at(cfg, "video.beta_min");
  c.beta_max = num_at(cfg, "video.beta_max");
  c.seed = seed_at(cfg, "video.seed");
  return c;
}

GuidanceConfig guidance_config_from(const json& cfg, const VideoConfig& vc) {
  GuidanceConfig g;
  g.base_h = vc.h >> (vc.levels() - 1);
  g.base_w = vc.w >> (vc.levels() - 1);
  g.channels = vc.channels;
  g.window = vc.frames;
  g.style_hidden = static_cast<int>(int_at(cfg, "guidance.style_hidden"));
  g.seed = seed_at(cfg, "guidance.seed");
  return g;
}

// ---- data helpers ----

MusicTrackFeatures slice_music(const MusicTrackFeatures& m, int start, int frames) {
  ensure(start >= 0 && start + frames <= m.length(), ErrorKind::validation,
         "music window out of range");
  MusicTrackFeatures out;
  out.fps = m.fps;
  out.source = m.source;
  out.embed = m.embed.middleRows(start, frames);
  out.beat_onehot.assign(m.beat_onehot.begin() + start, m.beat_onehot.begin() + start + frames);
  return out;
}

PartTokenGrid grid_window(const PartTokenGrid& g, int start, int frames) {
  ensure(start >= 0 && start + frames <= g.t, ErrorKind::validation,
         "token window out of range");
  PartTokenGrid out;
  out.t = frames;
  out.b = g.b;
  out.k = g.k;
  out.fps = g.fps;
  out.idx.assign(g.idx.begin() + static_cast<size_t>(start) * g.b * g.k,
                 g.idx.begin() + static_cast<size_t>(start + frames) * g.b * g.k);
  return out;
}

std::vector<int> shared_context_rows(const PartTokenGrid& grid, const std::vector<int>& picks,
                                     int vocab) {
  std::vector<int> rows;
  rows.reserve(picks.size() * grid.b * grid.k);
  for (int f : picks)
    for (int j = 0; j < grid.b; ++j)
      for (int k = 0; k < grid.k; ++k) rows.push_back(j * vocab + grid.at(f, j, k));
  return rows;
}

std::string clip_poses_hash(const std::string& clip_dir) {
  try {
    return json::parse(read_text_file(clip_dir + "/meta.json"))
        .at("hashes")
        .at("poses.f32")
        .get<std::string>();
  } catch (const std::exception&) {
    return {};
  }
}

// Token grids are deterministic in (codec, poses); cache them under
// $CHOREO_CACHE so repeated training runs skip re-encoding the corpus.
PartTokenGrid tokenize_cached(const PoseCodec& codec, const std::string& codec_hash,
                              const std::string& clip_dir, const PoseSequence& seq) {
  std::string root = cache_root();
  std::string poses_hash = clip_poses_hash(clip_dir);
  if (root.empty() || codec_hash.empty() || poses_hash.empty()) return codec.tokenize(seq);
  std::string key = sha256_hex(codec_hash + "|tokens|" + poses_hash);
  std::string path = root + "/tokens/" + key + ".bin";
  if (file_exists(path)) {
    try {
      PartTokenGrid g = load_token_grid(path);
      if (g.t == seq.length() && g.b == codec.parts() &&
          g.k == codec.config().tokens_per_part)
        return g;
    } catch (const Error&) {
      // fall through to recompute
    }
  }
  PartTokenGrid g = codec.tokenize(seq);
  make_dirs(root + "/tokens");
  save_token_grid(path, g);
  return g;
}

Eigen::VectorXd cached_pose_feature(const std::string& clip_dir, const PoseSequence& seq) {
  PoseFeatureConfig pf;
  std::string root = cache_root();
  std::string poses_hash = clip_poses_hash(clip_dir);
  if (root.empty() || poses_hash.empty()) return pose_feature(seq, pf);
  std::string key = sha256_hex(poses_hash + "|feat|" + std::to_string(pf.window) + "|" +
                               std::to_string(pf.out_dim) + "|" +
                               std::to_string(pf.projection_seed));
  std::string path = root + "/pose_features/" + key + ".f32";
  if (file_exists(path)) {
    std::vector<uint8_t> buf = read_file(path);
    if (buf.size() == static_cast<size_t>(pf.out_dim) * 4) {
      size_t off = 0;
      return parse_f32(buf, off, pf.out_dim, 1).col(0);
    }
  }
  Eigen::VectorXd f = pose_feature(seq, pf);
  make_dirs(root + "/pose_features");
  std::vector<uint8_t> buf;
  append_f32(buf, f);
  write_file(path, buf);
  return f;
}

// T x parts mean joint confidence, the per-part signal the guidance style
// pathway consumes.
Eigen::MatrixXd part_confidences(const PoseSequence& seq, const PoseCodec& codec) {
  Eigen::MatrixXd out(seq.length(), codec.parts());
  for (int t = 0; t < seq.length(); ++t)
    for (int j = 0; j < codec.parts(); ++j) {
      const std::vector<int>& joints = codec.joints_of_part(j);
      double s = 0.0;
      for (int idx : joints) s += seq.frames[t].conf(idx);
      out(t, j) = s / static_cast<double>(joints.size());
    }
  return out;
}

double mean_frame_conf(const PoseFrame& f) { return f.conf.mean(); }

// Pearson correlation between per-frame mean confidence and joint speed,
// skipping frame 0 whose speed is 0 by convention.
double conf_speed_correlation(const PoseSequence& seq) {
  std::vector<double> speed = mean_joint_speed(seq);
  std::vector<double> conf, sp;
  for (int t = 1; t < seq.length(); ++t) {
    conf.push_back(mean_frame_conf(seq.frames[t]));
    sp.push_back(speed[t]);
  }
  return pearson(conf, sp);
}

// Per-sequence CE and accuracy from the incremental-path logits; cheap enough
// to run over whole validation sets.
void ce_from_logits(MotionGpt& gpt, const TrainingSequence& seq, double& ce_sum, int64_t& n,
                    int64_t& correct) {
  Eigen::MatrixXd logits = gpt.eval_logits(seq);
  for (int i = 0; i < seq.length(); ++i) {
    if (seq.targets[i] < 0) continue;
    Eigen::RowVectorXd row = logits.row(i);
    double m = row.maxCoeff();
    double lse = m + std::log((row.array() - m).exp().sum());
    ce_sum += lse - row(seq.targets[i]);
    Eigen::Index arg = 0;
    row.maxCoeff(&arg);
    if (static_cast<int>(arg) == seq.targets[i]) ++correct;
    ++n;
  }
}

// ---- gpt training material ----

struct GptClipData {
  PartTokenGrid grid;
  Eigen::MatrixXd embed;
  std::vector<uint8_t> beat;
  Eigen::VectorXd style;
  double fps = 30.0;
  std::vector<int> starts;      // fitting segment offsets
  std::vector<int> prev_start;  // previous segment offset, -1 for the first
};

GptClipData gpt_clip_data(const PoseCodec& codec, const std::string& codec_hash,
                          const std::string& dir, const CorpusClip& clip,
                          const SequenceLayout& lay) {
  GptClipData d;
  d.grid = tokenize_cached(codec, codec_hash, dir, clip.seq);
  d.embed = clip.music.embed;
  d.beat = clip.music.beat_onehot;
  d.style = summarize_music(clip.music);
  d.fps = clip.music.fps;
  std::vector<int> plan = plan_segments(clip.seq.length(), lay);
  for (size_t i = 0; i < plan.size(); ++i) {
    if (plan[i] + lay.frames > clip.seq.length()) continue;
    d.starts.push_back(plan[i]);
    d.prev_start.push_back(i == 0 ? -1 : plan[i - 1]);
  }
  return d;
}

TrainingSequence make_gpt_sequence(const SequenceLayout& lay, const GptClipData& c, int seg,
                                   int vocab) {
  const int s = c.starts[seg];
  PartTokenGrid window = grid_window(c.grid, s, lay.frames);
  MusicTrackFeatures music;
  music.fps = c.fps;
  music.embed = c.embed.middleRows(s, lay.frames);
  music.beat_onehot.assign(c.beat.begin() + s, c.beat.begin() + s + lay.frames);
  GlobalContext ctx;
  ctx.style_vector = c.style;
  if (c.prev_start[seg] < 0) {
    // mirrors generation: the reference-pose token row repeated
    ctx.context_tokens =
        shared_context_rows(c.grid, std::vector<int>(lay.context_frames, s), vocab);
  } else {
    std::vector<int> picks = evenly_spaced_frames(lay.frames, lay.context_frames);
    for (int& p : picks) p += c.prev_start[seg];
    ctx.context_tokens = shared_context_rows(c.grid, picks, vocab);
  }
  return build_training_sequence(lay, window, music, ctx, vocab);
}

// ---- plots ----

void put_dot(Image& im, int y, int x, std::array<uint8_t, 3> c) {
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) {
      int yy = y + dy, xx = x + dx;
      if (yy < 0 || yy >= im.h || xx < 0 || xx >= im.w) continue;
      uint8_t* p = im.px(yy, xx);
      p[0] = c[0];
      p[1] = c[1];
      p[2] = c[2];
    }
}

void write_beat_raster(const std::string& path, const std::vector<CorpusClip>& clips,
                       const std::vector<std::vector<int>>& dance_beats) {
  int max_t = 1;
  for (const CorpusClip& c : clips) max_t = std::max(max_t, c.seq.length());
  max_t = std::min(max_t, 2048);
  const int rowh = 7;
  Image im = Image::filled(static_cast<int>(clips.size()) * rowh, max_t, {0, 0, 0});
  for (size_t i = 0; i < clips.size(); ++i) {
    for (int f : clips[i].music.beat_frames()) {
      if (f >= max_t) continue;
      for (int y = 0; y < 3; ++y) {
        uint8_t* p = im.px(static_cast<int>(i) * rowh + y, f);
        p[0] = 235;
        p[1] = 80;
        p[2] = 80;
      }
    }
    for (int f : dance_beats[i]) {
      if (f >= max_t) continue;
      for (int y = 3; y < 6; ++y) {
        uint8_t* p = im.px(static_cast<int>(i) * rowh + y, f);
        p[0] = 90;
        p[1] = 220;
        p[2] = 120;
      }
    }
  }
  write_png(path, im);
}

void write_feature_scatter(const std::string& path,
                           const std::vector<Eigen::VectorXd>& reference,
                           const std::vector<Eigen::VectorXd>& generated) {
  const int size = 240;
  Image im = Image::filled(size, size, {15, 15, 15});
  double lo0 = 1e300, hi0 = -1e300, lo1 = 1e300, hi1 = -1e300;
  auto widen = [&](const std::vector<Eigen::VectorXd>& fs) {
    for (const Eigen::VectorXd& f : fs) {
      lo0 = std::min(lo0, f(0));
      hi0 = std::max(hi0, f(0));
      lo1 = std::min(lo1, f(1));
      hi1 = std::max(hi1, f(1));
    }
  };
  widen(reference);
  widen(generated);
  double s0 = std::max(hi0 - lo0, 1e-12), s1 = std::max(hi1 - lo1, 1e-12);
  auto draw = [&](const std::vector<Eigen::VectorXd>& fs, std::array<uint8_t, 3> c) {
    for (const Eigen::VectorXd& f : fs) {
      int x = 8 + static_cast<int>((f(0) - lo0) / s0 * (size - 17));
      int y = 8 + static_cast<int>((f(1) - lo1) / s1 * (size - 17));
      put_dot(im, y, x, c);
    }
  };
  draw(reference, {150, 150, 150});
  draw(generated, {90, 220, 120});
  write_png(path, im);
}

void dump_pyramid_images(const std::string& dir, const GuidancePyramid& pyr,
                         const GuidanceConfig& gc) {
  make_dirs(dir);
  for (int l = 0; l < gc.levels(); ++l) {
    const Eigen::MatrixXd& lvl = pyr.levels[l];
    const int h = gc.level_h(l), w = gc.level_w(l), ch = gc.channels[l], fr = pyr.frames;
    double lo = lvl.minCoeff();
    double span = std::max(lvl.maxCoeff() - lo, 1e-12);
    Image im = Image::filled(ch * (h + 1) + 1, fr * (w + 1) + 1, {40, 40, 40});
    for (int c = 0; c < ch; ++c)
      for (int f = 0; f < fr; ++f)
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            double v = (lvl(c, static_cast<Eigen::Index>(f) * h * w + y * w + x) - lo) / span;
            auto g8 = static_cast<uint8_t>(std::lround(v * 255.0));
            uint8_t* p = im.px(1 + c * (h + 1) + y, 1 + f * (w + 1) + x);
            p[0] = g8;
            p[1] = g8;
            p[2] = g8;
          }
    write_png(dir + "/level_" + std::to_string(l) + ".png", im);
  }
}

}  // namespace

// ---- presets and schema ----

json preset_defaults(const std::string& preset) {
  json desk = {
      {"preset", "desk"},
      {"out", {{"dir", ""}}},
      {"data",
       {{"corpus", ""},
        {"codec", ""},
        {"gpt", ""},
        {"video", ""},
        {"guidance", ""},
        {"music", ""},
        {"ref_clip", ""},
        {"tokens", ""},
        {"clip", ""},
        {"generated", ""},
        {"reference", ""}}},
      {"corpus",
       {{"train", 2000}, {"val", 200}, {"test", 200}, {"seed", 7}, {"embed_dim", 32}}},
      {"codec",
       {{"tokens_per_part", 6},
        {"latent_dim", 6},
        {"codebook_size", 512},
        {"hidden", 128},
        {"codebooks_per_part", 1},
        {"beta", 0.25},
        {"gamma", 0.99},
        {"single_part", false},
        {"seed", 1}}},
      {"vqvae_train",
       {{"steps", 2500},
        {"batch", 192},
        {"lr", 1e-3},
        {"pool_clips", 200},
        {"log_every", 50},
        {"reseed_every", 250},
        {"val_clips", 20},
        {"seed", 2}}},
      {"gpt",
       {{"context_frames", 8},
        {"frames", 64},
        {"overlap", 12},
        {"d_model", 128},
        {"layers", 3},
        {"heads", 4},
        {"mlp_mult", 4},
        {"beat_embed_dim", 8},
        {"music_dim", 32},
        {"dropout", 0.05},
        {"use_music_style", true},
        {"use_motion_context", true},
        {"seed", 3}}},
      {"gpt_train",
       {{"steps", 900},
        {"batch", 2},
        {"lr", 3e-4},
        {"clips", 2000},
        {"log_every", 20},
        {"val_clips", 20},
        {"seed", 4}}},
      {"video",
       {{"h", 56},
        {"w", 32},
        {"frames", 16},
        {"channels", {16, 32, 48, 64}},
        {"diff_steps", 50},
        {"beta_min", 1e-4},
        {"beta_max", 0.02},
        {"seed", 5}}},
      {"guidance", {{"style_hidden", 64}, {"seed", 6}}},
      {"video_train",
       {{"steps", 350},
        {"batch", 1},
        {"lr", 2e-3},
        {"window_stride", 8},
        {"log_every", 20},
        {"clip_index", 0},
        {"seed", 8}}},
      {"generate",
       {{"length", 64},
        {"clips", 1},
        {"temperature", 0.9},
        {"top_k", 50},
        {"seed", 11},
        {"music_bpm", 120.0},
        {"music_duration_s", 4.0},
        {"render_video", false}}},
      {"evaluate",
       {{"sigma", 0.1}, {"max_clips", 50}, {"plots", true}, {"shuffle_seed", 123}}},
      {"render", {{"h", 112}, {"w", 64}, {"dump_pyramids", false}}},
  };
  if (preset == "desk") return desk;
  if (preset == "paper-scale" || preset == "paper") {
    json p = desk;
    p["preset"] = "paper-scale";
    p["vqvae_train"]["steps"] = 40000;
    p["vqvae_train"]["batch"] = 2048;
    p["vqvae_train"]["lr"] = 2e-4;
    p["vqvae_train"]["pool_clips"] = 2000;
    p["gpt"]["d_model"] = 256;
    p["gpt"]["layers"] = 6;
    p["gpt"]["heads"] = 8;
    p["gpt"]["dropout"] = 0.1;
    p["gpt_train"]["steps"] = 300000;
    p["gpt_train"]["batch"] = 24;
    p["gpt_train"]["lr"] = 1e-4;
    p["video_train"]["steps"] = 90000;
    p["video_train"]["batch"] = 16;
    p["video_train"]["lr"] = 1e-5;
    return p;
  }
  throw Error(ErrorKind::config, "unknown preset: " + preset + " (choose desk or paper-scale)");
}

const ConfigSchema& run_config_schema() {
  static const ConfigSchema schema = [] {
    ConfigSchema s;
    s.text("preset").text("out.dir");
    for (const char* k :
         {"data.corpus", "data.codec", "data.gpt", "data.video", "data.guidance", "data.music",
          "data.ref_clip", "data.tokens", "data.clip", "data.generated", "data.reference"})
      s.text(k);
    const double big = 9.3e18;
    s.integer("corpus.train", 0, 1e6)
        .integer("corpus.val", 0, 1e6)
        .integer("corpus.test", 0, 1e6)
        .integer("corpus.seed", 0, big)
        .integer("corpus.embed_dim", 1, 1024);
    s.integer("codec.tokens_per_part", 1, 64)
        .integer("codec.latent_dim", 1, 512)
        .integer("codec.codebook_size", 2, 65536)
        .integer("codec.hidden", 1, 8192)
        .integer("codec.codebooks_per_part", 1, 64)
        .number("codec.beta", 0.0, 10.0)
        .number("codec.gamma", 1e-6, 0.9999999)
        .boolean("codec.single_part")
        .integer("codec.seed", 0, big);
    s.integer("vqvae_train.steps", 1, 1e7)
        .integer("vqvae_train.batch", 1, 65536)
        .number("vqvae_train.lr", 1e-12, 1.0)
        .integer("vqvae_train.pool_clips", 1, 1e6)
        .integer("vqvae_train.log_every", 1, 1e6)
        .integer("vqvae_train.reseed_every", 1, 1e7)
        .integer("vqvae_train.val_clips", 1, 1e5)
        .integer("vqvae_train.seed", 0, big);
    s.integer("gpt.context_frames", 1, 256)
        .integer("gpt.frames", 1, 4096)
        .integer("gpt.overlap", 0, 4095)
        .integer("gpt.d_model", 1, 8192)
        .integer("gpt.layers", 1, 64)
        .integer("gpt.heads", 1, 64)
        .integer("gpt.mlp_mult", 1, 64)
        .integer("gpt.beat_embed_dim", 1, 512)
        .integer("gpt.music_dim", 1, 1024)
        .number("gpt.dropout", 0.0, 0.999)
        .boolean("gpt.use_music_style")
        .boolean("gpt.use_motion_context")
        .integer("gpt.seed", 0, big);
    s.integer("gpt_train.steps", 1, 1e7)
        .integer("gpt_train.batch", 1, 4096)
        .number("gpt_train.lr", 1e-12, 1.0)
        .integer("gpt_train.clips", 1, 1e6)
        .integer("gpt_train.log_every", 1, 1e6)
        .integer("gpt_train.val_clips", 1, 1e5)
        .integer("gpt_train.seed", 0, big);
    s.integer("video.h", 2, 4096)
        .integer("video.w", 2, 4096)
        .integer("video.frames", 1, 512)
        .int_array("video.channels", 1, 4096)
        .integer("video.diff_steps", 1, 10000)
        .number("video.beta_min", 1e-12, 0.999)
        .number("video.beta_max", 1e-12, 0.999)
        .integer("video.seed", 0, big);
    s.integer("guidance.style_hidden", 1, 4096).integer("guidance.seed", 0, big);
    s.integer("video_train.steps", 1, 1e7)
        .integer("video_train.batch", 1, 4096)
        .number("video_train.lr", 1e-12, 1.0)
        .integer("video_train.window_stride", 1, 512)
        .integer("video_train.log_every", 1, 1e6)
        .integer("video_train.clip_index", 0, 1e6)
        .integer("video_train.seed", 0, big);
    s.integer("generate.length", 1, 1e6)
        .integer("generate.clips", 1, 10000)
        .number("generate.temperature", 0.0, 100.0)
        .integer("generate.top_k", 1, 65536)
        .integer("generate.seed", 0, big)
        .number("generate.music_bpm", 40.0, 220.0)
        .number("generate.music_duration_s", 0.1, 3600.0)
        .boolean("generate.render_video");
    s.number("evaluate.sigma", 1e-6, 10.0)
        .integer("evaluate.max_clips", 1, 1e6)
        .boolean("evaluate.plots")
        .integer("evaluate.shuffle_seed", 0, big);
    s.integer("render.h", 8, 4096).integer("render.w", 8, 4096).boolean("render.dump_pyramids");
    return s;
  }();
  return schema;
}

// ---- commands ----

void cmd_synth_data(const json& cfg) {
  std::vector<std::string> v;
  base_validate(cfg, v);
  std::string out = checked_out_dir(cfg, v);
  finish_validate(v);

  CorpusSizes sizes;
  sizes.train = static_cast<int>(int_at(cfg, "corpus.train"));
  sizes.val = static_cast<int>(int_at(cfg, "corpus.val"));
  sizes.test = static_cast<int>(int_at(cfg, "corpus.test"));
  int embed_dim = static_cast<int>(int_at(cfg, "corpus.embed_dim"));
  uint64_t seed = seed_at(cfg, "corpus.seed");

  make_dirs(out);
  generate_corpus(out, sizes, seed, embed_dim);
  json summary = {{"train", sizes.train}, {"val", sizes.val}, {"test", sizes.test},
                  {"embed_dim", embed_dim}, {"seed", seed}};
  write_text_file(out + "/summary.json", summary.dump(2) + "\n");
  write_frozen_config(out, cfg);
  write_provenance(out, "synth-data", json::object(), {{"seeds", {seed}}});
}

void cmd_train_vqvae(const json& cfg) {
  std::vector<std::string> v;
  base_validate(cfg, v);
  std::string out = checked_out_dir(cfg, v);
  require_input(cfg, "data.corpus", v);
  finish_validate(v);

  const std::string corpus = str_at(cfg, "data.corpus");
  make_dirs(out);
  DirLock lock(out);
  write_frozen_config(out, cfg);

  SkeletonTopology topo = SkeletonTopology::standard60();
  CodecConfig cc = codec_config_from(cfg);
  PoseCodec codec = PoseCodec::create(cc, topo);

  std::vector<std::string> train_dirs = list_clips(corpus + "/train");
  ensure(!train_dirs.empty(), ErrorKind::io, "no training clips under " + corpus + "/train");
  int pool_clips = std::min<int>(static_cast<int>(int_at(cfg, "vqvae_train.pool_clips")),
                                 static_cast<int>(train_dirs.size()));
  std::vector<PoseFrame> pool;
  for (int i = 0; i < pool_clips; ++i) {
    CorpusClip clip = load_clip(train_dirs[i]);
    for (PoseFrame& f : clip.seq.frames) pool.push_back(std::move(f));
  }

  nn::AdamConfig ac;
  ac.lr = num_at(cfg, "vqvae_train.lr");
  nn::AdamW opt(ac);
  RngStream rng(seed_at(cfg, "vqvae_train.seed"));
  const int steps = static_cast<int>(int_at(cfg, "vqvae_train.steps"));
  const int batch_size = static_cast<int>(int_at(cfg, "vqvae_train.batch"));
  const int log_every = static_cast<int>(int_at(cfg, "vqvae_train.log_every"));
  const int reseed_every = static_cast<int>(int_at(cfg, "vqvae_train.reseed_every"));

  JsonlWriter log(out + "/metrics.jsonl");
  for (int step = 1; step <= steps; ++step) {
    std::vector<PoseFrame> batch;
    batch.reserve(batch_size);
    for (int i = 0; i < batch_size; ++i)
      batch.push_back(pool[static_cast<size_t>(
          rng.uniform_int(0, static_cast<int64_t>(pool.size()) - 1))]);
    PoseCodec::LossReport rep = codec.train_step(batch, opt);
    if (step % reseed_every == 0) {
      std::vector<PoseFrame> sample;
      for (int i = 0; i < 256; ++i)
        sample.push_back(pool[static_cast<size_t>(
            rng.uniform_int(0, static_cast<int64_t>(pool.size()) - 1))]);
      codec.reseed_dead_entries(sample, rng);
    }
    if (step % log_every == 0 || step == steps)
      log.append({{"step", step},
                  {"total", rep.total},
                  {"recon", rep.recon},
                  {"commit", rep.commit}});
  }
  codec.save(out + "/codec.ckpt");

  // held-out reconstruction quality
  std::vector<std::string> val_dirs = list_clips(corpus + "/val");
  int val_clips = std::min<int>(static_cast<int>(int_at(cfg, "vqvae_train.val_clips")),
                                static_cast<int>(val_dirs.size()));
  PoseL1Report l1{};
  std::vector<PoseFrame> val_frames;
  for (int i = 0; i < val_clips; ++i) {
    CorpusClip clip = load_clip(val_dirs[i]);
    PoseSequence rec = codec.detokenize(codec.tokenize(clip.seq));
    PoseL1Report r = pose_l1_report(rec, clip.seq, topo);
    l1.full_body += r.full_body;
    l1.head += r.head;
    l1.hands += r.hands;
    for (size_t f = 0; f < clip.seq.frames.size(); f += 7)
      val_frames.push_back(clip.seq.frames[f]);
  }
  if (val_clips > 0) {
    l1.full_body /= val_clips;
    l1.head /= val_clips;
    l1.hands /= val_clips;
  }
  PoseCodec::LossReport val_rep{};
  if (!val_frames.empty()) val_rep = codec.loss_only(val_frames);
  json metrics = {{"steps", steps},
                  {"final",
                   {{"val_total", val_rep.total},
                    {"val_recon", val_rep.recon},
                    {"val_commit", val_rep.commit},
                    {"pose_l1",
                     {{"full_body", l1.full_body}, {"head", l1.head}, {"hands", l1.hands}}},
                    {"val_clips", val_clips}}}};
  write_text_file(out + "/metrics.json", metrics.dump(2) + "\n");
  write_provenance(out, "train-vqvae",
                   {{"corpus_train", input_entry(corpus + "/train")},
                    {"corpus_val", input_entry(corpus + "/val")}},
                   {{"seeds", {cc.seed, seed_at(cfg, "vqvae_train.seed")}}});
}

void cmd_train_gpt(const json& cfg) {
  std::vector<std::string> v;
  base_validate(cfg, v);
  std::string out = checked_out_dir(cfg, v);
  require_input(cfg, "data.corpus", v);
  require_input(cfg, "data.codec", v);
  finish_validate(v);

  const std::string corpus = str_at(cfg, "data.corpus");
  const std::string codec_path = str_at(cfg, "data.codec");
  make_dirs(out);
  DirLock lock(out);
  write_frozen_config(out, cfg);

  SkeletonTopology topo = SkeletonTopology::standard60();
  PoseCodec codec = PoseCodec::load(codec_path, topo);
  std::string codec_hash = sha256_file_hex(codec_path);

  MotionGptConfig mc;
  mc.layout.context_frames = static_cast<int>(int_at(cfg, "gpt.context_frames"));
  mc.layout.frames = static_cast<int>(int_at(cfg, "gpt.frames"));
  mc.layout.overlap = static_cast<int>(int_at(cfg, "gpt.overlap"));
  mc.layout.parts = codec.parts();
  mc.layout.tokens_per_part = codec.config().tokens_per_part;
  mc.vocab_per_part = codec.config().codebook_size;
  mc.d_model = static_cast<int>(int_at(cfg, "gpt.d_model"));
  mc.layers = static_cast<int>(int_at(cfg, "gpt.layers"));
  mc.heads = static_cast<int>(int_at(cfg, "gpt.heads"));
  mc.mlp_mult = static_cast<int>(int_at(cfg, "gpt.mlp_mult"));
  mc.beat_embed_dim = static_cast<int>(int_at(cfg, "gpt.beat_embed_dim"));
  mc.music_dim = static_cast<int>(int_at(cfg, "gpt.music_dim"));
  mc.dropout = num_at(cfg, "gpt.dropout");
  mc.use_music_style = bool_at(cfg, "gpt.use_music_style");
  mc.use_motion_context = bool_at(cfg, "gpt.use_motion_context");
  mc.seed = seed_at(cfg, "gpt.seed");
  MotionGpt gpt = MotionGpt::create(mc);

  std::vector<std::string> train_dirs = list_clips(corpus + "/train");
  ensure(!train_dirs.empty(), ErrorKind::io, "no training clips under " + corpus + "/train");
  int n_clips = std::min<int>(static_cast<int>(int_at(cfg, "gpt_train.clips")),
                              static_cast<int>(train_dirs.size()));
  std::vector<GptClipData> data;
  std::vector<std::pair<int, int>> segs;  // (clip, segment)
  for (int i = 0; i < n_clips; ++i) {
    CorpusClip clip = load_clip(train_dirs[i]);
    ensure(clip.music.dim() == mc.music_dim, ErrorKind::validation,
           "gpt.music_dim does not match the corpus embedding width");
    GptClipData d = gpt_clip_data(codec, codec_hash, train_dirs[i], clip, mc.layout);
    for (size_t s = 0; s < d.starts.size(); ++s)
      segs.emplace_back(i, static_cast<int>(s));
    data.push_back(std::move(d));
  }
  ensure(!segs.empty(), ErrorKind::validation,
         "no clip is long enough for the configured window");

  nn::AdamConfig ac;
  ac.lr = num_at(cfg, "gpt_train.lr");
  ac.grad_clip = 1.0;
  nn::AdamW opt(ac);
  RngStream rng(seed_at(cfg, "gpt_train.seed"));
  RngStream drop_rng = rng.fork(1);
  const int steps = static_cast<int>(int_at(cfg, "gpt_train.steps"));
  const int batch_size = static_cast<int>(int_at(cfg, "gpt_train.batch"));
  const int log_every = static_cast<int>(int_at(cfg, "gpt_train.log_every"));

  JsonlWriter log(out + "/ce_curve.jsonl");
  for (int step = 1; step <= steps; ++step) {
    std::vector<TrainingSequence> batch;
    for (int b = 0; b < batch_size; ++b) {
      auto [ci, si] = segs[static_cast<size_t>(
          rng.uniform_int(0, static_cast<int64_t>(segs.size()) - 1))];
      batch.push_back(make_gpt_sequence(mc.layout, data[ci], si, mc.vocab_per_part));
    }
    double ce = gpt.train_step(batch, opt, drop_rng);
    if (step % log_every == 0 || step == steps) log.append({{"step", step}, {"ce", ce}});
  }
  gpt.save(out + "/gpt.ckpt");

  // held-out CE and accuracy through the incremental path
  std::vector<std::string> val_dirs = list_clips(corpus + "/val");
  int val_clips = std::min<int>(static_cast<int>(int_at(cfg, "gpt_train.val_clips")),
                                static_cast<int>(val_dirs.size()));
  double ce_sum = 0.0;
  int64_t n = 0, correct = 0;
  for (int i = 0; i < val_clips; ++i) {
    CorpusClip clip = load_clip(val_dirs[i]);
    GptClipData d = gpt_clip_data(codec, codec_hash, val_dirs[i], clip, mc.layout);
    for (size_t s = 0; s < d.starts.size(); ++s)
      ce_from_logits(gpt, make_gpt_sequence(mc.layout, d, static_cast<int>(s), mc.vocab_per_part),
                     ce_sum, n, correct);
  }
  json metrics = {{"steps", steps},
                  {"final",
                   {{"val_ce", n > 0 ? ce_sum / static_cast<double>(n) : 0.0},
                    {"val_accuracy", n > 0 ? static_cast<double>(correct) / n : 0.0},
                    {"val_targets", n}}}};
  write_text_file(out + "/metrics.json", metrics.dump(2) + "\n");
  write_provenance(out, "train-gpt",
                   {{"corpus_train", input_entry(corpus + "/train")},
                    {"corpus_val", input_entry(corpus + "/val")},
                    {"codec", input_entry(codec_path)}},
                   {{"seeds", {mc.seed, seed_at(cfg, "gpt_train.seed")}}});
}

void cmd_train_video(const json& cfg) {
  std::vector<std::string> v;
  base_validate(cfg, v);
  std::string out = checked_out_dir(cfg, v);
  require_input(cfg, "data.corpus", v);
  require_input(cfg, "data.codec", v);
  finish_validate(v);

  const std::string corpus = str_at(cfg, "data.corpus");
  const std::string codec_path = str_at(cfg, "data.codec");
  make_dirs(out);
  DirLock lock(out);
  write_frozen_config(out, cfg);

  SkeletonTopology topo = SkeletonTopology::standard60();
  PoseCodec codec = PoseCodec::load(codec_path, topo);
  std::string codec_hash = sha256_file_hex(codec_path);

  VideoConfig vc = video_config_from(cfg);
  GuidanceConfig gc = guidance_config_from(cfg, vc);
  ensure_guidance_match(vc, gc);
  VideoDenoiser model = VideoDenoiser::create(vc);
  GuidanceDecoder gdec = GuidanceDecoder::create(gc, codec.config(), codec.parts());

  std::vector<std::string> train_dirs = list_clips(corpus + "/train");
  int clip_index = static_cast<int>(int_at(cfg, "video_train.clip_index"));
  ensure(clip_index < static_cast<int>(train_dirs.size()), ErrorKind::config,
         "video_train.clip_index past the corpus");
  CorpusClip clip = load_clip(train_dirs[clip_index]);
  PartTokenGrid grid = tokenize_cached(codec, codec_hash, train_dirs[clip_index], clip.seq);
  Eigen::MatrixXd conf = part_confidences(clip.seq, codec);

  const int stride = static_cast<int>(int_at(cfg, "video_train.window_stride"));
  std::vector<TokenWindow> wins;
  std::vector<VideoClip> targets;
  for (int start = 0; start < clip.seq.length(); start += stride) {
    wins.push_back(slice_token_window(grid, conf, start, vc.frames));
    targets.push_back(render_pose_window(clip.seq, topo, start, vc.frames, vc.h, vc.w));
  }
  Eigen::MatrixXd ref_image =
      render_pose_window(clip.seq, topo, 0, 1, vc.h, vc.w).frame(0);

  nn::AdamConfig ac;
  ac.lr = num_at(cfg, "video_train.lr");
  ac.grad_clip = 1.0;
  nn::AdamW opt_model(ac), opt_gdec(ac);
  RngStream rng(seed_at(cfg, "video_train.seed"));
  const int steps = static_cast<int>(int_at(cfg, "video_train.steps"));
  const int batch_size = static_cast<int>(int_at(cfg, "video_train.batch"));
  const int log_every = static_cast<int>(int_at(cfg, "video_train.log_every"));

  JsonlWriter log(out + "/loss_curve.jsonl");
  double last_avg = 0.0;
  double acc = 0.0;
  int acc_n = 0;
  for (int step = 1; step <= steps; ++step) {
    double loss;
    if (batch_size == 1) {
      int w = static_cast<int>(rng.uniform_int(0, static_cast<int64_t>(wins.size()) - 1));
      loss = video_train_step(model, gdec, codec, targets[w], wins[w], ref_image, opt_model,
                              opt_gdec, rng);
    } else {
      // gradient accumulation over a batch of windows, one optimizer step
      double sum = 0.0;
      for (int b = 0; b < batch_size; ++b) {
        int w = static_cast<int>(rng.uniform_int(0, static_cast<int64_t>(wins.size()) - 1));
        int t = static_cast<int>(rng.uniform_int(1, model.schedule().steps()));
        Eigen::MatrixXd eps(3, targets[w].pixels.cols());
        for (Eigen::Index cix = 0; cix < eps.cols(); ++cix)
          for (int r = 0; r < 3; ++r) eps(r, cix) = rng.normal();
        Eigen::MatrixXd x_t = ddpm_noise(model.schedule(), targets[w].pixels, t, eps);
        ad::Graph g;
        std::vector<ad::Var> pyr = gdec.pyramid_graph(g, gdec.style_features(g, codec, wins[w]));
        ad::Var ref = model.reference_tokens(g, ref_image);
        ad::Var eh = model.predict_noise(g, g.input(x_t), t, pyr, ref);
        ad::Var mse = ad::mse(eh, g.input(eps));
        ad::Var scaled = ad::scale_by(
            mse, g.input(Eigen::MatrixXd::Constant(1, 1, 1.0 / batch_size)));
        g.backward(scaled);
        sum += mse.val()(0, 0);
      }
      opt_model.step(model.params());
      opt_gdec.step(gdec.params());
      loss = sum / batch_size;
    }
    acc += loss;
    ++acc_n;
    if (step % log_every == 0 || step == steps) {
      last_avg = acc / acc_n;
      log.append({{"step", step}, {"loss", last_avg}});
      acc = 0.0;
      acc_n = 0;
    }
  }
  model.save(out + "/video.ckpt");
  gdec.save(out + "/guidance.ckpt");
  json metrics = {{"steps", steps}, {"final", {{"avg_loss", last_avg}}}};
  write_text_file(out + "/metrics.json", metrics.dump(2) + "\n");
  write_provenance(out, "train-video",
                   {{"clip", input_entry(train_dirs[clip_index])},
                    {"codec", input_entry(codec_path)}},
                   {{"seeds", {vc.seed, gc.seed, seed_at(cfg, "video_train.seed")}}});
}

void cmd_generate(const json& cfg) {
  std::vector<std::string> v;
  base_validate(cfg, v);
  std::string out = checked_out_dir(cfg, v);
  require_input(cfg, "data.gpt", v);
  require_input(cfg, "data.codec", v);
  const bool render_video = config_find(cfg, "generate.render_video") &&
                            config_find(cfg, "generate.render_video")->is_boolean() &&
                            bool_at(cfg, "generate.render_video");
  if (render_video) {
    require_input(cfg, "data.video", v);
    require_input(cfg, "data.guidance", v);
  }
  const json* music_path = config_find(cfg, "data.music");
  bool have_music_file = music_path && music_path->is_string() &&
                         !music_path->get<std::string>().empty();
  if (have_music_file) require_input(cfg, "data.music", v);
  const json* ref_path = config_find(cfg, "data.ref_clip");
  bool have_ref = ref_path && ref_path->is_string() && !ref_path->get<std::string>().empty();
  if (have_ref) require_input(cfg, "data.ref_clip", v);
  finish_validate(v);

  SkeletonTopology topo = SkeletonTopology::standard60();
  PoseCodec codec = PoseCodec::load(str_at(cfg, "data.codec"), topo);
  MotionGpt gpt = MotionGpt::load(str_at(cfg, "data.gpt"));
  const MotionGptConfig& mc = gpt.config();
  ensure(mc.layout.parts == codec.parts() &&
             mc.layout.tokens_per_part == codec.config().tokens_per_part &&
             mc.vocab_per_part == codec.config().codebook_size,
         ErrorKind::structural, "transformer and codec checkpoints do not match");

  const int length = static_cast<int>(int_at(cfg, "generate.length"));
  const int n_clips = static_cast<int>(int_at(cfg, "generate.clips"));
  const uint64_t base_seed = seed_at(cfg, "generate.seed");

  MusicTrackFeatures music;
  BeatGrid beat_grid;
  bool have_grid = false;
  if (have_music_file) {
    music = load_music_features(music_path->get<std::string>());
  } else {
    double fps = 30.0;
    double duration =
        std::max(num_at(cfg, "generate.music_duration_s"), (length + 0.5) / fps);
    auto [m, g] =
        synth_music_features(num_at(cfg, "generate.music_bpm"), duration, fps, mc.music_dim,
                             base_seed ^ 0x9e3779b97f4a7c15ull);
    music = std::move(m);
    beat_grid = std::move(g);
    have_grid = true;
  }
  ensure(music.dim() == mc.music_dim, ErrorKind::validation,
         "music embedding width does not match the transformer");
  ensure(music.length() >= length, ErrorKind::validation,
         "music track is shorter than the requested length");

  PoseFrame ref_frame = standard_rest_pose();
  if (have_ref) ref_frame = load_clip(ref_path->get<std::string>()).seq.frames[0];
  PoseSequence ref_seq;
  ref_seq.fps = music.fps;
  ref_seq.frames.push_back(ref_frame);
  PartTokenGrid ref_grid = codec.tokenize(ref_seq);
  std::vector<int> seed_tokens;
  for (int j = 0; j < ref_grid.b; ++j)
    for (int k = 0; k < ref_grid.k; ++k)
      seed_tokens.push_back(j * mc.vocab_per_part + ref_grid.at(0, j, k));

  std::unique_ptr<VideoDenoiser> vd;
  std::unique_ptr<GuidanceDecoder> gd;
  if (render_video) {
    vd = std::make_unique<VideoDenoiser>(VideoDenoiser::load(str_at(cfg, "data.video")));
    gd = std::make_unique<GuidanceDecoder>(
        GuidanceDecoder::load(str_at(cfg, "data.guidance"), codec.config(), codec.parts()));
  }

  json seeds = json::array();
  make_dirs(out);
  for (int i = 0; i < n_clips; ++i) {
    GenerationParams gp;
    gp.temperature = num_at(cfg, "generate.temperature");
    gp.top_k = static_cast<int>(int_at(cfg, "generate.top_k"));
    gp.seed = base_seed + static_cast<uint64_t>(i);
    seeds.push_back(gp.seed);

    PartTokenGrid grid = gpt.sliding_window_generate(music, length, seed_tokens, gp);
    PoseSequence seq = codec.detokenize(grid);

    MusicTrackFeatures music_used = slice_music(music, 0, length);
    BeatGrid bg;
    if (have_grid) {
      bg.bpm = beat_grid.bpm;
      for (double t : beat_grid.beat_times)
        if (t < length / music.fps) bg.beat_times.push_back(t);
    } else {
      for (int f : music_used.beat_frames()) bg.beat_times.push_back(f / music.fps);
      double gap = 0.5;
      if (bg.beat_times.size() >= 2) {
        std::vector<double> gaps;
        for (size_t b = 1; b < bg.beat_times.size(); ++b)
          gaps.push_back(bg.beat_times[b] - bg.beat_times[b - 1]);
        std::nth_element(gaps.begin(), gaps.begin() + gaps.size() / 2, gaps.end());
        gap = gaps[gaps.size() / 2];
      }
      bg.bpm = std::clamp(60.0 / std::max(gap, 1e-6), 40.0, 220.0);
    }

    CorpusClip out_clip;
    out_clip.seq = seq;
    out_clip.music = music_used;
    out_clip.beats = bg;
    out_clip.spec.bpm = std::clamp(bg.bpm, 40.0, 220.0);
    out_clip.spec.duration_s = length / music.fps;
    out_clip.spec.fps = music.fps;
    out_clip.spec.embed_dim = music.dim();
    out_clip.spec.seed = gp.seed;

    char name[32];
    std::snprintf(name, sizeof(name), "clip_%03d", i);
    std::string dir = out + "/" + name;
    save_clip(dir, out_clip);
    save_token_grid(dir + "/tokens.bin", grid);

    if (render_video) {
      const VideoConfig& vcfg = vd->config();
      Eigen::MatrixXd conf = part_confidences(seq, codec);
      TokenWindow win = slice_token_window(grid, conf, 0, vcfg.frames);
      Eigen::MatrixXd ref_image =
          render_pose_window(seq, topo, 0, 1, vcfg.h, vcfg.w).frame(0);
      VideoClip vclip = sample_video(*vd, *gd, codec, win, ref_image, gp.seed, true);
      write_video_dir(dir + "/video", vclip, {{"source", "sampled"}});
    }
  }

  json inputs = {{"gpt", input_entry(str_at(cfg, "data.gpt"))},
                 {"codec", input_entry(str_at(cfg, "data.codec"))}};
  if (have_music_file) inputs["music"] = input_entry(music_path->get<std::string>());
  if (have_ref) inputs["ref_clip"] = input_entry(ref_path->get<std::string>());
  if (render_video) {
    inputs["video"] = input_entry(str_at(cfg, "data.video"));
    inputs["guidance"] = input_entry(str_at(cfg, "data.guidance"));
  }
  write_frozen_config(out, cfg);
  write_provenance(out, "generate", inputs, {{"seeds", seeds}});
}

void cmd_evaluate(const json& cfg) {
  std::vector<std::string> v;
  base_validate(cfg, v);
  std::string out = checked_out_dir(cfg, v);
  require_input(cfg, "data.generated", v);
  require_input(cfg, "data.reference", v);
  finish_validate(v);

  const std::string gen_dir = str_at(cfg, "data.generated");
  const std::string ref_dir = str_at(cfg, "data.reference");
  const int max_clips = static_cast<int>(int_at(cfg, "evaluate.max_clips"));
  const double sigma = num_at(cfg, "evaluate.sigma");
  const uint64_t shuffle_seed = seed_at(cfg, "evaluate.shuffle_seed");

  std::vector<std::string> gen_paths = list_clips(gen_dir);
  std::vector<std::string> ref_paths = list_clips(ref_dir);
  ensure(!gen_paths.empty(), ErrorKind::io, "no clips under " + gen_dir);
  ensure(!ref_paths.empty(), ErrorKind::io, "no clips under " + ref_dir);
  if (static_cast<int>(gen_paths.size()) > max_clips) gen_paths.resize(max_clips);
  if (static_cast<int>(ref_paths.size()) > max_clips) ref_paths.resize(max_clips);

  std::vector<CorpusClip> gens;
  std::vector<std::vector<int>> dance_beats;
  std::vector<Eigen::VectorXd> gen_feats, ref_feats;
  json per_clip = json::array();
  double bas_sum = 0.0, bas_shuf_sum = 0.0, r_sum = 0.0;
  int neg_r = 0;
  for (size_t i = 0; i < gen_paths.size(); ++i) {
    CorpusClip clip = load_clip(gen_paths[i]);
    BeatSet beats;
    beats.dance_beat_frames = extract_dance_beats(clip.seq);
    beats.music_beat_frames = clip.music.beat_frames();
    double bas = beat_align_score(beats, clip.seq.fps, sigma);
    RngStream srng(shuffle_seed + i);
    PoseSequence shuffled = shuffle_frames(clip.seq, srng);
    BeatSet sbeats;
    sbeats.dance_beat_frames = extract_dance_beats(shuffled);
    sbeats.music_beat_frames = beats.music_beat_frames;
    double bas_shuf = beat_align_score(sbeats, clip.seq.fps, sigma);
    double r = conf_speed_correlation(clip.seq);
    bas_sum += bas;
    bas_shuf_sum += bas_shuf;
    r_sum += r;
    if (r < 0.0) ++neg_r;
    gen_feats.push_back(cached_pose_feature(gen_paths[i], clip.seq));
    per_clip.push_back({{"dir", std::filesystem::path(gen_paths[i]).filename().string()},
                        {"bas", bas},
                        {"bas_shuffled", bas_shuf},
                        {"conf_speed_r", r}});
    dance_beats.push_back(beats.dance_beat_frames);
    gens.push_back(std::move(clip));
  }
  for (const std::string& p : ref_paths) {
    CorpusClip clip = load_clip(p);
    ref_feats.push_back(cached_pose_feature(p, clip.seq));
  }

  const double n = static_cast<double>(gens.size());
  json metrics = {
      {"generated_clips", gens.size()},
      {"reference_clips", ref_paths.size()},
      {"beat_alignment",
       {{"mean", bas_sum / n},
        {"shuffled_mean", bas_shuf_sum / n},
        {"margin", (bas_sum - bas_shuf_sum) / n},
        {"sigma", sigma}}},
      {"diversity", {{"generated", diversity(gen_feats)}, {"reference", diversity(ref_feats)}}},
      {"frechet_pose_distance", frechet_pose_distance(gen_feats, ref_feats)},
      {"confidence_speed",
       {{"mean_r", r_sum / n}, {"negative_fraction", neg_r / n}}},
      {"per_clip", per_clip},
      {"config_echo", cfg}};
  make_dirs(out);
  write_text_file(out + "/metrics.json", metrics.dump(2) + "\n");

  if (bool_at(cfg, "evaluate.plots")) {
    make_dirs(out + "/plots");
    write_beat_raster(out + "/plots/beat_raster.png", gens, dance_beats);
    write_feature_scatter(out + "/plots/feature_scatter.png", ref_feats, gen_feats);
  }
  write_frozen_config(out, cfg);
  write_provenance(out, "evaluate",
                   {{"generated", input_entry(gen_dir)}, {"reference", input_entry(ref_dir)}});
}

void cmd_render(const json& cfg) {
  std::vector<std::string> v;
  base_validate(cfg, v);
  std::string out = checked_out_dir(cfg, v);
  const json* clip_path = config_find(cfg, "data.clip");
  const json* tokens_path = config_find(cfg, "data.tokens");
  bool have_clip =
      clip_path && clip_path->is_string() && !clip_path->get<std::string>().empty();
  bool have_tokens =
      tokens_path && tokens_path->is_string() && !tokens_path->get<std::string>().empty();
  if (have_clip == have_tokens)
    v.push_back("data.clip / data.tokens: exactly one source must be given");
  if (have_clip) require_input(cfg, "data.clip", v);
  if (have_tokens) {
    require_input(cfg, "data.tokens", v);
    require_input(cfg, "data.codec", v);
  }
  const bool dump = config_find(cfg, "render.dump_pyramids") &&
                    config_find(cfg, "render.dump_pyramids")->is_boolean() &&
                    bool_at(cfg, "render.dump_pyramids");
  if (dump) {
    require_input(cfg, "data.codec", v);
    require_input(cfg, "data.guidance", v);
  }
  finish_validate(v);

  SkeletonTopology topo = SkeletonTopology::standard60();
  PoseSequence seq;
  PartTokenGrid grid;
  bool have_grid = false;
  json inputs = json::object();
  std::unique_ptr<PoseCodec> codec;
  if (have_tokens || dump) {
    codec = std::make_unique<PoseCodec>(PoseCodec::load(str_at(cfg, "data.codec"), topo));
    inputs["codec"] = input_entry(str_at(cfg, "data.codec"));
  }
  if (have_clip) {
    seq = load_clip(clip_path->get<std::string>()).seq;
    inputs["clip"] = input_entry(clip_path->get<std::string>());
  } else {
    grid = load_token_grid(tokens_path->get<std::string>());
    have_grid = true;
    seq = codec->detokenize(grid);
    inputs["tokens"] = input_entry(tokens_path->get<std::string>());
  }

  const int h = static_cast<int>(int_at(cfg, "render.h"));
  const int w = static_cast<int>(int_at(cfg, "render.w"));
  VideoClip clip = render_pose_window(seq, topo, 0, seq.length(), h, w);
  clip.fps = seq.fps;
  write_video_dir(out, clip, {{"source", have_clip ? "clip" : "tokens"}});

  if (dump) {
    if (!have_grid) grid = codec->tokenize(seq);
    GuidanceDecoder gdec =
        GuidanceDecoder::load(str_at(cfg, "data.guidance"), codec->config(), codec->parts());
    Eigen::MatrixXd conf = part_confidences(seq, *codec);
    TokenWindow win = slice_token_window(grid, conf, 0, gdec.config().window);
    GuidancePyramid pyr = gdec.decode(*codec, win);
    dump_pyramid_images(out + "/pyramids", pyr, gdec.config());
    inputs["guidance"] = input_entry(str_at(cfg, "data.guidance"));
  }
  write_frozen_config(out, cfg);
  write_provenance(out, "render", inputs);
}

}  // namespace choreo
