// Copyright (C) 2026 the choreo authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "choreo/music.hpp"
#include "choreo/pose.hpp"

namespace choreo {

// One body part's periodic motion: two cosine harmonics of the beat phase
// with per-harmonic direction and a phase flip of 0 or pi. Restricting
// phases to multiples of pi puts every joint's speed zero exactly on beats.
struct PartMove {
  double amp1 = 0.0, amp2 = 0.0;
  double dir1_x = 1.0, dir1_y = 0.0;
  double dir2_x = 0.0, dir2_y = 1.0;
  int flip1 = 0, flip2 = 0;
};

struct ClipSpec {
  double bpm = 120.0;
  double duration_s = 4.0;
  double fps = 30.0;
  int genre = 0;  // weights the move amplitudes and biases the music embedding
  std::array<PartMove, kNumParts> moves;
  std::array<double, 5> finger_curl = {};  // per-finger curl amplitude, both hands
  std::array<int, 5> finger_flip = {};
  double kappa = 0.5;  // confidence sensitivity to joint speed
  int embed_dim = 32;
  uint64_t seed = 0;

  void check_valid() const;
};

struct CorpusClip {
  PoseSequence seq;
  MusicTrackFeatures music;
  BeatGrid beats;
  ClipSpec spec;
};

inline constexpr int kNumGenres = 3;

// Canonical standing pose for the standard 60-joint layout.
PoseFrame standard_rest_pose();

// Deterministic draw of bpm, genre, and per-part move parameters.
ClipSpec random_clip_spec(uint64_t seed, int embed_dim = 32);

// Beat-locked periodic motion around the rest pose; all values rounded to
// f32 so the on-disk format round-trips losslessly. Requires the standard
// 60-joint layout.
CorpusClip generate_clip(const ClipSpec& spec);

// confidence = clamp(1 - kappa * per-frame joint speed, 0.05, 1); coordinates
// untouched. Frame 0 has speed 0 by convention.
PoseSequence simulate_confidence(const PoseSequence& seq, double kappa);

// Clip directory layout: meta.json + poses.f32 (T x P x 3 row-major f32 LE)
// + music.f32 (T x D_J) + beats.u8 (T bytes). Blob hashes live in meta.json
// and are verified on load.
void save_clip(const std::string& dir, const CorpusClip& clip);
CorpusClip load_clip(const std::string& dir);

// Writes train/ val/ test/ splits of clip_00000... directories.
struct CorpusSizes {
  int train = 2000;
  int val = 200;
  int test = 200;
};
void generate_corpus(const std::string& root, const CorpusSizes& sizes, uint64_t base_seed,
                     int embed_dim = 32);

// Lists clip directories of one split in index order.
std::vector<std::string> list_clips(const std::string& split_dir);

}  // namespace choreo
