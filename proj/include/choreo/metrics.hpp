// Copyright (C) 2026 the choreo authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <vector>

#include "choreo/pose.hpp"
#include "choreo/rng.hpp"

namespace choreo {

struct BeatSet {
  std::vector<int> dance_beat_frames;
  std::vector<int> music_beat_frames;
};

// Mean-over-joints L2 displacement per frame; index t holds the speed of the
// step into frame t, with speed[0] = 0.
std::vector<double> mean_joint_speed(const PoseSequence& seq);

// Local minima of the smoothed speed series. A minimum must be strictly below
// its predecessor and no greater than its successor, so constant stretches
// yield nothing and symmetric plateau pairs resolve to their first frame.
std::vector<int> extract_dance_beats(const PoseSequence& seq, int smooth_width = 3);

// (1/|Bm|) * sum over music beats of exp(-d^2 / (2 sigma^2)) where d is the
// distance in seconds to the nearest dance beat. 0 when no dance beats exist.
double beat_align_score(const BeatSet& beats, double fps, double sigma = 0.1);

struct PoseFeatureConfig {
  int window = 16;
  int out_dim = 256;
  uint64_t projection_seed = 9001;  // fixes the random projection
};

// Per 16-frame window, concatenated positions and within-window velocities,
// passed through a fixed seeded Gaussian projection; windows mean-pooled.
Eigen::VectorXd pose_feature(const PoseSequence& seq, const PoseFeatureConfig& cfg = {});

// Mean pairwise Euclidean distance.
double diversity(const std::vector<Eigen::VectorXd>& features);

// ||mu_A - mu_B||^2 + Tr(S_A + S_B - 2 (S_A S_B)^(1/2)) with covariances
// regularized by lambda * I.
double frechet_pose_distance(const std::vector<Eigen::VectorXd>& a,
                             const std::vector<Eigen::VectorXd>& b, double lambda = 1e-6);

struct PoseL1Report {
  double full_body = 0.0;
  double head = 0.0;
  double hands = 0.0;
};

// Mean absolute coordinate error in normalized units, per joint group.
PoseL1Report pose_l1_report(const PoseSequence& pred, const PoseSequence& gt,
                            const SkeletonTopology& topo);

double pearson(const std::vector<double>& x, const std::vector<double>& y);

// Random permutation of the frame order; used by the beat-responsiveness
// baseline (alignment should not survive shuffling).
PoseSequence shuffle_frames(const PoseSequence& seq, RngStream& rng);

}  // namespace choreo
