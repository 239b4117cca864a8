// Copyright (C) 2026 the choreo authors
// SPDX-License-Identifier: Apache-2.0
#include "choreo/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <json.hpp>

#include "choreo/binio.hpp"
#include "choreo/error.hpp"
#include "choreo/hashing.hpp"
#include "choreo/rng.hpp"

namespace choreo {

using nlohmann::json;

namespace {

constexpr double kPi = 3.14159265358979323846;

double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

// Per-joint motion weight: distal joints swing more than proximal ones.
double joint_weight(int joint) {
  if (joint == 0) return 0.2;                    // neck
  if (joint == 1 || joint == 2) return 0.35;     // shoulders
  if (joint == 3 || joint == 4) return 0.7;      // elbows
  if (joint == 5 || joint == 6) return 1.0;      // wrists
  if (joint == 7 || joint == 8) return 0.3;      // hips
  if (joint == 9 || joint == 10) return 0.6;     // knees
  if (joint == 11 || joint == 12) return 1.0;    // ankles
  return 1.0;                                    // head and hands
}

struct GenreProfile {
  std::array<double, kNumParts> part_amp;  // base amplitude per part
  double curl_amp;
  std::array<double, 8> music_bias;  // added to the first embedding channels
};

const GenreProfile& genre_profile(int genre) {
  static const std::array<GenreProfile, kNumGenres> profiles = {{
      // arm-led
      {{0.060, 0.025, 0.020, 0.030, 0.030}, 0.006, {1.2, -0.8, 0.5, 0.0, -1.0, 0.6, 0.0, 0.3}},
      // bounce
      {{0.030, 0.060, 0.015, 0.020, 0.020}, 0.006, {-1.0, 1.1, -0.6, 0.8, 0.4, -0.9, 0.5, -0.4}},
      // groove
      {{0.040, 0.035, 0.035, 0.045, 0.045}, 0.011, {0.2, 0.3, 1.3, -1.1, 0.7, 0.4, -1.2, 0.9}},
  }};
  ensure(genre >= 0 && genre < kNumGenres, ErrorKind::validation, "genre out of range");
  return profiles[genre];
}

}  // namespace

void ClipSpec::check_valid() const {
  ensure(bpm >= 40.0 && bpm <= 220.0, ErrorKind::validation, "bpm outside [40, 220]");
  ensure(fps > 0.0, ErrorKind::validation, "fps must be positive");
  ensure(duration_s * bpm / 60.0 >= 2.0, ErrorKind::validation, "clip must span at least 2 beats");
  ensure(embed_dim > 0, ErrorKind::validation, "embed_dim must be positive");
  ensure(kappa >= 0.0, ErrorKind::validation, "kappa must be non-negative");
}

PoseFrame standard_rest_pose() {
  PoseFrame f = PoseFrame::zeros(60);
  auto set = [&](int j, double x, double y) {
    f.kp(j, 0) = x;
    f.kp(j, 1) = y;
  };
  set(0, 0.50, 0.30);
  set(1, 0.42, 0.32);
  set(2, 0.58, 0.32);
  set(3, 0.37, 0.44);
  set(4, 0.63, 0.44);
  set(5, 0.35, 0.55);
  set(6, 0.65, 0.55);
  set(7, 0.45, 0.55);
  set(8, 0.55, 0.55);
  set(9, 0.44, 0.72);
  set(10, 0.56, 0.72);
  set(11, 0.44, 0.90);
  set(12, 0.56, 0.90);
  set(13, 0.50, 0.22);
  set(14, 0.47, 0.20);
  set(15, 0.53, 0.20);
  set(16, 0.44, 0.22);
  set(17, 0.56, 0.22);
  for (int side = 0; side < 2; ++side) {
    int root = side == 0 ? 18 : 39;
    double rx = side == 0 ? 0.345 : 0.655;
    double ry = 0.575;
    set(root, rx, ry);
    for (int fg = 0; fg < 5; ++fg) {
      // fingers fan from straight down toward the body side
      double theta = side == 0 ? (100.0 + fg * 20.0) : (80.0 - fg * 20.0);
      double rad = theta * kPi / 180.0;
      for (int k = 1; k <= 4; ++k)
        set(root + 1 + 4 * fg + (k - 1), rx + std::cos(rad) * 0.012 * k,
            ry + std::sin(rad) * 0.012 * k);
    }
  }
  f.conf.setOnes();
  return f;
}

ClipSpec random_clip_spec(uint64_t seed, int embed_dim) {
  static const double kBpmChoices[] = {80, 90, 100, 110, 120, 132, 144, 160};
  RngStream r(seed);
  ClipSpec spec;
  spec.seed = seed;
  spec.embed_dim = embed_dim;
  spec.bpm = kBpmChoices[r.uniform_int(0, 7)];
  spec.genre = r.uniform_int(0, kNumGenres - 1);
  const GenreProfile& gp = genre_profile(spec.genre);
  for (int part = 0; part < kNumParts; ++part) {
    PartMove& m = spec.moves[part];
    m.amp1 = gp.part_amp[part] * r.uniform(0.7, 1.3);
    m.amp2 = 0.5 * m.amp1 * r.uniform(0.5, 1.0);
    double a1 = r.uniform(0.0, 2.0 * kPi), a2 = r.uniform(0.0, 2.0 * kPi);
    m.dir1_x = std::cos(a1);
    m.dir1_y = std::sin(a1);
    m.dir2_x = std::cos(a2);
    m.dir2_y = std::sin(a2);
    m.flip1 = r.uniform_int(0, 1);
    m.flip2 = r.uniform_int(0, 1);
  }
  for (int fg = 0; fg < 5; ++fg) {
    spec.finger_curl[fg] = gp.curl_amp * r.uniform(0.6, 1.4);
    spec.finger_flip[fg] = r.uniform_int(0, 1);
  }
  return spec;
}

PoseSequence simulate_confidence(const PoseSequence& seq, double kappa) {
  ensure(kappa >= 0.0, ErrorKind::validation, "kappa must be non-negative");
  PoseSequence out = seq;
  for (int t = 0; t < out.length(); ++t) {
    for (int j = 0; j < out.frames[t].joints(); ++j) {
      double speed =
          t == 0 ? 0.0 : (out.frames[t].kp.row(j) - out.frames[t - 1].kp.row(j)).norm();
      out.frames[t].conf(j) = std::clamp(1.0 - kappa * speed, 0.05, 1.0);
    }
  }
  return out;
}

CorpusClip generate_clip(const ClipSpec& spec) {
  spec.check_valid();
  CorpusClip clip;
  clip.spec = spec;
  auto [music, grid] =
      synth_music_features(spec.bpm, spec.duration_s, spec.fps, spec.embed_dim, spec.seed);
  const GenreProfile& gp = genre_profile(spec.genre);
  for (int d = 0; d < std::min(8, spec.embed_dim); ++d)
    music.embed.col(d).array() += gp.music_bias[d];
  clip.beats = grid;

  PoseFrame rest = standard_rest_pose();
  SkeletonTopology topo = SkeletonTopology::standard60();
  int frames = music.length();
  double beat_period = 60.0 / spec.bpm;

  // finger chain directions from the rest geometry
  std::array<Eigen::Vector2d, 60> finger_dir;
  for (auto& v : finger_dir) v.setZero();
  for (int side = 0; side < 2; ++side) {
    int root = side == 0 ? 18 : 39;
    for (int fg = 0; fg < 5; ++fg) {
      int tip = root + 1 + 4 * fg + 3;
      Eigen::Vector2d dir = (rest.kp.row(tip) - rest.kp.row(root)).transpose().normalized();
      for (int k = 0; k < 4; ++k) finger_dir[root + 1 + 4 * fg + k] = dir;
    }
  }

  clip.seq.fps = spec.fps;
  clip.seq.frames.reserve(frames);
  for (int t = 0; t < frames; ++t) {
    double tau = (t / spec.fps) / beat_period;  // beat phase; integer on beats
    PoseFrame f = rest;
    for (int j = 0; j < 60; ++j) {
      const PartMove& m = spec.moves[topo.part_of[j]];
      double w = joint_weight(j);
      double c1 = std::cos(kPi * tau + m.flip1 * kPi);
      double c2 = std::cos(2.0 * kPi * tau + m.flip2 * kPi);
      f.kp(j, 0) += w * (m.amp1 * m.dir1_x * c1 + m.amp2 * m.dir2_x * c2);
      f.kp(j, 1) += w * (m.amp1 * m.dir1_y * c1 + m.amp2 * m.dir2_y * c2);
      if (j > 18 && j != 39) {
        // finger segments curl along the finger direction, scaled by depth
        int root = j < 39 ? 18 : 39;
        int fg = (j - root - 1) / 4;
        int depth = (j - root - 1) % 4 + 1;
        double curl = spec.finger_curl[fg] * depth / 4.0 *
                      std::cos(2.0 * kPi * tau + spec.finger_flip[fg] * kPi);
        f.kp(j, 0) += curl * finger_dir[j].x();
        f.kp(j, 1) += curl * finger_dir[j].y();
      }
    }
    clip.seq.frames.push_back(std::move(f));
  }
  clip.seq = simulate_confidence(clip.seq, spec.kappa);

  // round everything to f32 so disk round trips are lossless
  for (auto& f : clip.seq.frames) {
    f.kp = f.kp.unaryExpr([](double v) { return to_f32(v); });
    f.conf = f.conf.unaryExpr([](double v) { return to_f32(v); });
  }
  music.embed = music.embed.unaryExpr([](double v) { return to_f32(v); });
  clip.music = std::move(music);

  for (const auto& f : clip.seq.frames)
    ensure((f.kp.array() >= -0.2).all() && (f.kp.array() <= 1.2).all(), ErrorKind::validation,
           "clip motion leaves the allowed frame margin");
  return clip;
}

namespace {

json spec_to_json(const ClipSpec& s) {
  json j;
  j["bpm"] = s.bpm;
  j["duration_s"] = s.duration_s;
  j["fps"] = s.fps;
  j["genre"] = s.genre;
  j["kappa"] = s.kappa;
  j["embed_dim"] = s.embed_dim;
  j["seed"] = s.seed;
  json moves = json::array();
  for (const auto& m : s.moves)
    moves.push_back({{"amp1", m.amp1},
                     {"amp2", m.amp2},
                     {"dir1", {m.dir1_x, m.dir1_y}},
                     {"dir2", {m.dir2_x, m.dir2_y}},
                     {"flip1", m.flip1},
                     {"flip2", m.flip2}});
  j["moves"] = moves;
  j["finger_curl"] = s.finger_curl;
  j["finger_flip"] = s.finger_flip;
  return j;
}

ClipSpec spec_from_json(const json& j) {
  ClipSpec s;
  s.bpm = j.at("bpm").get<double>();
  s.duration_s = j.at("duration_s").get<double>();
  s.fps = j.at("fps").get<double>();
  s.genre = j.at("genre").get<int>();
  s.kappa = j.at("kappa").get<double>();
  s.embed_dim = j.at("embed_dim").get<int>();
  s.seed = j.at("seed").get<uint64_t>();
  const auto& moves = j.at("moves");
  ensure(moves.size() == kNumParts, ErrorKind::format, "clip spec: wrong move count");
  for (int p = 0; p < kNumParts; ++p) {
    const auto& m = moves[p];
    s.moves[p].amp1 = m.at("amp1").get<double>();
    s.moves[p].amp2 = m.at("amp2").get<double>();
    s.moves[p].dir1_x = m.at("dir1")[0].get<double>();
    s.moves[p].dir1_y = m.at("dir1")[1].get<double>();
    s.moves[p].dir2_x = m.at("dir2")[0].get<double>();
    s.moves[p].dir2_y = m.at("dir2")[1].get<double>();
    s.moves[p].flip1 = m.at("flip1").get<int>();
    s.moves[p].flip2 = m.at("flip2").get<int>();
  }
  for (int f = 0; f < 5; ++f) {
    s.finger_curl[f] = j.at("finger_curl")[f].get<double>();
    s.finger_flip[f] = j.at("finger_flip")[f].get<int>();
  }
  return s;
}

}  // namespace

void save_clip(const std::string& dir, const CorpusClip& clip) {
  clip.seq.check_valid();
  clip.music.check_valid();
  ensure(clip.seq.length() == clip.music.length(), ErrorKind::structural,
         "pose/music length mismatch");
  make_dirs(dir);
  int t = clip.seq.length();
  int p = clip.seq.frames[0].joints();

  std::vector<uint8_t> poses;
  for (const auto& f : clip.seq.frames) append_f32(poses, f.flat());
  std::vector<uint8_t> music;
  append_f32(music, clip.music.embed);
  std::vector<uint8_t> beats(clip.music.beat_onehot.begin(), clip.music.beat_onehot.end());

  json meta;
  meta["schema_version"] = 1;
  meta["fps"] = clip.seq.fps;
  meta["T"] = t;
  meta["P"] = p;
  meta["D_J"] = clip.music.dim();
  meta["music_source"] = clip.music.source;
  meta["beat_times"] = clip.beats.beat_times;
  meta["bpm"] = clip.beats.bpm;
  meta["spec"] = spec_to_json(clip.spec);
  meta["hashes"] = {{"poses.f32", sha256_hex(poses.data(), poses.size())},
                    {"music.f32", sha256_hex(music.data(), music.size())},
                    {"beats.u8", sha256_hex(beats.data(), beats.size())}};
  write_text_file(dir + "/meta.json", meta.dump(2) + "\n");
  write_file(dir + "/poses.f32", poses);
  write_file(dir + "/music.f32", music);
  write_file(dir + "/beats.u8", beats);
}

CorpusClip load_clip(const std::string& dir) {
  json meta;
  try {
    meta = json::parse(read_text_file(dir + "/meta.json"));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, std::string("clip meta parse: ") + e.what());
  }
  CorpusClip clip;
  int t, p, dj;
  try {
    ensure(meta.at("schema_version").get<int>() == 1, ErrorKind::format,
           "unsupported clip schema_version");
    t = meta.at("T").get<int>();
    p = meta.at("P").get<int>();
    dj = meta.at("D_J").get<int>();
    clip.seq.fps = meta.at("fps").get<double>();
    clip.beats.bpm = meta.at("bpm").get<double>();
    clip.beats.beat_times = meta.at("beat_times").get<std::vector<double>>();
    clip.spec = spec_from_json(meta.at("spec"));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, std::string("clip meta fields: ") + e.what());
  }
  ensure(t > 0 && p > 0 && dj > 0, ErrorKind::format, "clip meta has non-positive shape");

  auto check_blob = [&](const std::string& name, const std::vector<uint8_t>& data) {
    std::string want = meta.at("hashes").at(name).get<std::string>();
    ensure(sha256_hex(data.data(), data.size()) == want, ErrorKind::format,
           "clip blob hash mismatch: " + name);
  };
  std::vector<uint8_t> poses = read_file(dir + "/poses.f32");
  ensure(poses.size() == static_cast<size_t>(t) * p * 3 * 4, ErrorKind::format,
         "poses.f32 has wrong length");
  check_blob("poses.f32", poses);
  size_t off = 0;
  clip.seq.frames.reserve(t);
  for (int i = 0; i < t; ++i)
    clip.seq.frames.push_back(PoseFrame::from_flat(parse_f32(poses, off, p, 3)));

  std::vector<uint8_t> music = read_file(dir + "/music.f32");
  ensure(music.size() == static_cast<size_t>(t) * dj * 4, ErrorKind::format,
         "music.f32 has wrong length");
  check_blob("music.f32", music);
  off = 0;
  clip.music.embed = parse_f32(music, off, t, dj);
  clip.music.fps = clip.seq.fps;
  clip.music.source = meta.at("music_source").get<std::string>();

  std::vector<uint8_t> beats = read_file(dir + "/beats.u8");
  ensure(beats.size() == static_cast<size_t>(t), ErrorKind::format, "beats.u8 has wrong length");
  check_blob("beats.u8", beats);
  clip.music.beat_onehot = beats;

  clip.seq.check_valid();
  clip.music.check_valid();
  return clip;
}

void generate_corpus(const std::string& root, const CorpusSizes& sizes, uint64_t base_seed,
                     int embed_dim) {
  struct Split {
    const char* name;
    int count;
    uint64_t offset;
  };
  const Split splits[] = {{"train", sizes.train, 0},
                          {"val", sizes.val, 1u << 20},
                          {"test", sizes.test, 2u << 20}};
  for (const auto& s : splits) {
    std::string dir = root + "/" + s.name;
    make_dirs(dir);
    for (int i = 0; i < s.count; ++i) {
      ClipSpec spec = random_clip_spec(base_seed + s.offset + static_cast<uint64_t>(i), embed_dim);
      CorpusClip clip = generate_clip(spec);
      char name[32];
      std::snprintf(name, sizeof(name), "clip_%05d", i);
      save_clip(dir + "/" + name, clip);
    }
  }
}

std::vector<std::string> list_clips(const std::string& split_dir) {
  namespace fs = std::filesystem;
  ensure(fs::is_directory(split_dir), ErrorKind::io, "not a directory: " + split_dir);
  std::vector<std::string> out;
  for (const auto& entry : fs::directory_iterator(split_dir))
    if (entry.is_directory() && fs::exists(entry.path() / "meta.json"))
      out.push_back(entry.path().string());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace choreo
