// Copyright (C) 2026 the choreo authors
// SPDX-License-Identifier: Apache-2.0
#include "choreo/music.hpp"

#include <cmath>
#include <json.hpp>

#include "choreo/binio.hpp"
#include "choreo/error.hpp"
#include "choreo/rng.hpp"

namespace choreo {

using nlohmann::json;

namespace {
constexpr double kTau = 6.28318530717958647692;
}

std::vector<int> MusicTrackFeatures::beat_frames() const {
  std::vector<int> out;
  for (size_t i = 0; i < beat_onehot.size(); ++i)
    if (beat_onehot[i]) out.push_back(static_cast<int>(i));
  return out;
}

void MusicTrackFeatures::check_valid() const {
  ensure(fps > 0.0, ErrorKind::validation, "music fps must be positive");
  ensure(embed.rows() > 0 && embed.cols() > 0, ErrorKind::validation, "empty music embedding");
  ensure(embed.allFinite(), ErrorKind::validation, "non-finite music embedding");
  ensure(beat_onehot.size() == static_cast<size_t>(embed.rows()), ErrorKind::structural,
         "beat flag count must match embedding rows");
  for (uint8_t b : beat_onehot)
    ensure(b == 0 || b == 1, ErrorKind::validation, "beat flags must be 0 or 1");
  ensure(source == "precomputed" || source == "synthetic", ErrorKind::validation,
         "unknown music source tag: " + source);
}

std::vector<int> beat_frames_from_times(const std::vector<double>& times, double fps, int frames) {
  std::vector<int> out;
  for (double t : times) {
    int f = static_cast<int>(std::lround(t * fps));
    f = std::min(std::max(f, 0), frames - 1);
    if (out.empty() || out.back() != f) out.push_back(f);
  }
  return out;
}

MusicTrackFeatures resample_to_fps(const MusicTrackFeatures& in, double target_fps) {
  in.check_valid();
  ensure(target_fps > 0.0, ErrorKind::validation, "target fps must be positive");
  if (target_fps == in.fps) return in;
  int src_t = in.length();
  int dst_t = std::max(1, static_cast<int>(std::lround(src_t * target_fps / in.fps)));
  MusicTrackFeatures out;
  out.fps = target_fps;
  out.source = in.source;
  out.embed.resize(dst_t, in.dim());
  for (int t = 0; t < dst_t; ++t) {
    double pos = std::min(static_cast<double>(src_t - 1), t * in.fps / target_fps);
    int i0 = static_cast<int>(pos);
    int i1 = std::min(i0 + 1, src_t - 1);
    double frac = pos - i0;
    out.embed.row(t) = (1.0 - frac) * in.embed.row(i0) + frac * in.embed.row(i1);
  }
  out.beat_onehot.assign(dst_t, 0);
  for (int f : in.beat_frames()) {
    int tf = static_cast<int>(std::lround(f / in.fps * target_fps));
    tf = std::min(std::max(tf, 0), dst_t - 1);
    out.beat_onehot[tf] = 1;
  }
  return out;
}

void save_music_features(const std::string& path, const MusicTrackFeatures& f) {
  f.check_valid();
  json manifest;
  manifest["fps"] = f.fps;
  manifest["T"] = f.length();
  manifest["D_J"] = f.dim();
  manifest["source"] = f.source;
  std::string mtext = manifest.dump();
  std::vector<uint8_t> buf;
  append_u64(buf, mtext.size());
  buf.insert(buf.end(), mtext.begin(), mtext.end());
  append_f32(buf, f.embed);
  buf.insert(buf.end(), f.beat_onehot.begin(), f.beat_onehot.end());
  write_file(path, buf);
}

MusicTrackFeatures load_music_features(const std::string& path) {
  std::vector<uint8_t> buf = read_file(path);
  size_t off = 0;
  uint64_t mlen = parse_u64(buf, off);
  ensure(off + mlen <= buf.size(), ErrorKind::format, "music file: manifest overruns file");
  std::string mtext(buf.begin() + static_cast<long>(off), buf.begin() + static_cast<long>(off + mlen));
  off += mlen;
  json manifest;
  try {
    manifest = json::parse(mtext);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, std::string("music manifest parse: ") + e.what());
  }
  MusicTrackFeatures f;
  int t, dj;
  try {
    f.fps = manifest.at("fps").get<double>();
    t = manifest.at("T").get<int>();
    dj = manifest.at("D_J").get<int>();
    f.source = manifest.at("source").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, std::string("music manifest fields: ") + e.what());
  }
  ensure(t > 0 && dj > 0, ErrorKind::format, "music manifest has non-positive shape");
  f.embed = parse_f32(buf, off, t, dj);
  ensure(off + static_cast<size_t>(t) <= buf.size(), ErrorKind::format,
         "music file: beat flags truncated");
  f.beat_onehot.assign(buf.begin() + static_cast<long>(off),
                       buf.begin() + static_cast<long>(off + t));
  off += static_cast<size_t>(t);
  ensure(off == buf.size(), ErrorKind::format, "music file: trailing bytes");
  f.check_valid();
  return f;
}

std::pair<MusicTrackFeatures, BeatGrid> synth_music_features(double bpm, double duration_s,
                                                             double fps, int embed_dim,
                                                             uint64_t seed) {
  ensure(bpm >= 40.0 && bpm <= 220.0, ErrorKind::validation, "bpm outside [40, 220]");
  ensure(duration_s > 0.0 && fps > 0.0 && embed_dim > 0, ErrorKind::validation,
         "invalid synthesis arguments");
  int frames = static_cast<int>(std::lround(duration_s * fps));
  BeatGrid grid;
  grid.bpm = bpm;
  double period = 60.0 / bpm;
  for (double t = 0.0; t < duration_s - 1e-9; t += period) grid.beat_times.push_back(t);

  MusicTrackFeatures f;
  f.fps = fps;
  f.source = "synthetic";
  f.embed.resize(frames, embed_dim);
  RngStream rng(seed);
  struct Channel {
    double beat_amp, beat_phase;
    int harmonic;
    double noise_freq[3], noise_phase[3];
  };
  std::vector<Channel> chans(embed_dim);
  for (auto& c : chans) {
    c.beat_amp = 0.6 + 0.4 * rng.uniform();
    c.beat_phase = rng.uniform(0.0, kTau);
    c.harmonic = 1 + rng.uniform_int(0, 1);
    for (int i = 0; i < 3; ++i) {
      c.noise_freq[i] = rng.uniform(0.5, 6.0);
      c.noise_phase[i] = rng.uniform(0.0, kTau);
    }
  }
  for (int t = 0; t < frames; ++t) {
    double secs = t / fps;
    double beat_angle = kTau * secs / period;
    for (int d = 0; d < embed_dim; ++d) {
      const Channel& c = chans[d];
      double v = c.beat_amp * std::cos(c.harmonic * beat_angle + c.beat_phase);
      for (int i = 0; i < 3; ++i) v += 0.25 * std::cos(kTau * c.noise_freq[i] * secs + c.noise_phase[i]);
      f.embed(t, d) = v;
    }
  }
  f.beat_onehot.assign(frames, 0);
  for (int bf : beat_frames_from_times(grid.beat_times, fps, frames)) f.beat_onehot[bf] = 1;
  return {std::move(f), std::move(grid)};
}

}  // namespace choreo
