// Copyright (C) 2026 the choreo authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace choreo {

// Per-frame music conditioning: an embedding stream plus one-hot beat flags,
// aligned so row t and flag t describe the same instant t/fps.
struct MusicTrackFeatures {
  double fps = 30.0;
  Eigen::MatrixXd embed;             // T x D_J
  std::vector<uint8_t> beat_onehot;  // T entries in {0,1}
  std::string source = "synthetic";  // "precomputed" or "synthetic"

  int length() const { return static_cast<int>(embed.rows()); }
  int dim() const { return static_cast<int>(embed.cols()); }
  std::vector<int> beat_frames() const;
  void check_valid() const;
};

// Ground-truth metronome grid used by the synthetic corpus.
struct BeatGrid {
  std::vector<double> beat_times;  // seconds, strictly ascending
  double bpm = 0.0;
};

// Maps beat times (seconds) to nearest frame indices, clamped to [0, frames).
std::vector<int> beat_frames_from_times(const std::vector<double>& times, double fps, int frames);

// Linear interpolation of the embedding stream; beat flags move to the
// nearest target frame.
MusicTrackFeatures resample_to_fps(const MusicTrackFeatures& in, double target_fps);

// Single-file format: u64 LE manifest length, manifest JSON (fps, T, D_J,
// source), row-major f32 LE embed block, T beat-flag bytes.
MusicTrackFeatures load_music_features(const std::string& path);
void save_music_features(const std::string& path, const MusicTrackFeatures& f);

// Deterministic stand-in for real audio features: each channel mixes a
// beat-phase-locked sinusoid with band-limited pseudo-random texture, so beat
// structure is recoverable from the embedding stream alone.
std::pair<MusicTrackFeatures, BeatGrid> synth_music_features(double bpm, double duration_s,
                                                             double fps, int embed_dim,
                                                             uint64_t seed);

}  // namespace choreo
