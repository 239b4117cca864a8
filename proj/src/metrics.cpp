// Copyright (C) 2026 the choreo authors
// SPDX-License-Identifier: Apache-2.0
#include "choreo/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "choreo/error.hpp"

namespace choreo {

std::vector<double> mean_joint_speed(const PoseSequence& seq) {
  const int t_len = seq.length();
  ensure(t_len >= 1, ErrorKind::validation, "mean_joint_speed: empty sequence");
  std::vector<double> speed(static_cast<size_t>(t_len), 0.0);
  for (int t = 1; t < t_len; ++t) {
    const Eigen::MatrixXd diff = seq.frames[t].kp - seq.frames[t - 1].kp;
    speed[t] = diff.rowwise().norm().mean();
  }
  return speed;
}

namespace {

// Reflect j into [0, n); boundaries behave as if the series were mirrored.
int reflect_index(int j, int n) {
  if (j < 0) j = -j;
  if (j >= n) j = 2 * (n - 1) - j;
  return std::clamp(j, 0, n - 1);
}

std::vector<double> smooth_reflect(const std::vector<double>& x, int width) {
  const int n = static_cast<int>(x.size());
  const int half = width / 2;
  std::vector<double> out(x.size(), 0.0);
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int j = i - half; j <= i + half; ++j) acc += x[reflect_index(j, n)];
    out[i] = acc / width;
  }
  return out;
}

}  // namespace

std::vector<int> extract_dance_beats(const PoseSequence& seq, int smooth_width) {
  ensure(smooth_width >= 1 && smooth_width % 2 == 1, ErrorKind::validation,
         "extract_dance_beats: smooth_width must be odd and positive");
  const int t_len = seq.length();
  std::vector<int> beats;
  if (t_len < 3) return beats;

  // d[i] is the mean joint speed arriving at frame i + 1.
  const std::vector<double> speed = mean_joint_speed(seq);
  std::vector<double> d(speed.begin() + 1, speed.end());
  const std::vector<double> s = smooth_reflect(d, smooth_width);
  const int n = static_cast<int>(s.size());
  for (int i = 0; i < n; ++i) {
    const double prev = s[reflect_index(i - 1, n)];
    const double next = s[reflect_index(i + 1, n)];
    if (s[i] < prev && s[i] <= next) beats.push_back(i + 1);
  }
  return beats;
}

double beat_align_score(const BeatSet& beats, double fps, double sigma) {
  ensure(fps > 0.0 && sigma > 0.0, ErrorKind::validation, "beat_align_score: bad fps or sigma");
  ensure(!beats.music_beat_frames.empty(), ErrorKind::validation,
         "beat_align_score: no music beats");
  if (beats.dance_beat_frames.empty()) return 0.0;
  double acc = 0.0;
  for (int m : beats.music_beat_frames) {
    const double tm = m / fps;
    double best = std::numeric_limits<double>::infinity();
    for (int dframe : beats.dance_beat_frames) {
      const double diff = dframe / fps - tm;
      best = std::min(best, diff * diff);
    }
    acc += std::exp(-best / (2.0 * sigma * sigma));
  }
  return acc / static_cast<double>(beats.music_beat_frames.size());
}

Eigen::VectorXd pose_feature(const PoseSequence& seq, const PoseFeatureConfig& cfg) {
  ensure(cfg.window >= 2 && cfg.out_dim >= 1, ErrorKind::validation,
         "pose_feature: bad window or out_dim");
  const int t_len = seq.length();
  ensure(t_len >= cfg.window, ErrorKind::validation, "pose_feature: sequence shorter than window");
  const int joints = static_cast<int>(seq.frames[0].kp.rows());
  const int per_frame = 4 * joints;  // 2 position + 2 velocity coordinates
  const int dim_in = cfg.window * per_frame;

  RngStream rng(cfg.projection_seed);
  Eigen::MatrixXd proj(cfg.out_dim, dim_in);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim_in));
  for (int r = 0; r < cfg.out_dim; ++r)
    for (int c = 0; c < dim_in; ++c) proj(r, c) = rng.normal() * scale;

  const int n_windows = t_len / cfg.window;
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(cfg.out_dim);
  Eigen::VectorXd raw(dim_in);
  for (int w = 0; w < n_windows; ++w) {
    const int base = w * cfg.window;
    int at = 0;
    for (int f = 0; f < cfg.window; ++f) {
      const Eigen::MatrixXd& kp = seq.frames[base + f].kp;
      Eigen::MatrixXd vel = Eigen::MatrixXd::Zero(joints, 2);
      if (f > 0) vel = kp - seq.frames[base + f - 1].kp;
      for (int j = 0; j < joints; ++j) {
        raw[at++] = kp(j, 0);
        raw[at++] = kp(j, 1);
      }
      for (int j = 0; j < joints; ++j) {
        raw[at++] = vel(j, 0);
        raw[at++] = vel(j, 1);
      }
    }
    mean += proj * raw;
  }
  return mean / static_cast<double>(n_windows);
}

double diversity(const std::vector<Eigen::VectorXd>& features) {
  const int n = static_cast<int>(features.size());
  ensure(n >= 2, ErrorKind::validation, "diversity: need at least two feature vectors");
  double acc = 0.0;
  int pairs = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      acc += (features[i] - features[j]).norm();
      ++pairs;
    }
  }
  return acc / pairs;
}

namespace {

void mean_and_cov(const std::vector<Eigen::VectorXd>& feats, double lambda, Eigen::VectorXd& mu,
                  Eigen::MatrixXd& cov) {
  const int n = static_cast<int>(feats.size());
  const int d = static_cast<int>(feats[0].size());
  mu = Eigen::VectorXd::Zero(d);
  for (const auto& f : feats) mu += f;
  mu /= n;
  cov = Eigen::MatrixXd::Zero(d, d);
  for (const auto& f : feats) {
    const Eigen::VectorXd c = f - mu;
    cov += c * c.transpose();
  }
  if (n > 1) cov /= (n - 1);
  cov += lambda * Eigen::MatrixXd::Identity(d, d);
}

Eigen::MatrixXd sym_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_pose_distance(const std::vector<Eigen::VectorXd>& a,
                             const std::vector<Eigen::VectorXd>& b, double lambda) {
  ensure(!a.empty() && !b.empty(), ErrorKind::validation, "frechet_pose_distance: empty set");
  ensure(a[0].size() == b[0].size(), ErrorKind::validation,
         "frechet_pose_distance: dimension mismatch");
  Eigen::VectorXd mu_a, mu_b;
  Eigen::MatrixXd cov_a, cov_b;
  mean_and_cov(a, lambda, mu_a, cov_a);
  mean_and_cov(b, lambda, mu_b, cov_b);

  const Eigen::MatrixXd root_b = sym_sqrt(cov_b);
  Eigen::MatrixXd inner = root_b * cov_a * root_b;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(inner);
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

  return (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
}

namespace {

double group_l1(const PoseSequence& pred, const PoseSequence& gt, const std::vector<int>& joints) {
  double acc = 0.0;
  long count = 0;
  for (int t = 0; t < pred.length(); ++t) {
    for (int j : joints) {
      acc += std::abs(pred.frames[t].kp(j, 0) - gt.frames[t].kp(j, 0));
      acc += std::abs(pred.frames[t].kp(j, 1) - gt.frames[t].kp(j, 1));
      count += 2;
    }
  }
  return count > 0 ? acc / count : 0.0;
}

}  // namespace

PoseL1Report pose_l1_report(const PoseSequence& pred, const PoseSequence& gt,
                            const SkeletonTopology& topo) {
  ensure(pred.length() == gt.length() && pred.length() > 0, ErrorKind::validation,
         "pose_l1_report: length mismatch");
  ensure(pred.frames[0].kp.rows() == topo.joints() && gt.frames[0].kp.rows() == topo.joints(),
         ErrorKind::validation, "pose_l1_report: joint count mismatch");
  std::vector<int> all(topo.joints());
  for (int j = 0; j < topo.joints(); ++j) all[j] = j;
  std::vector<int> hands = topo.part_joints[static_cast<int>(BodyPart::left_hand)];
  const auto& rh = topo.part_joints[static_cast<int>(BodyPart::right_hand)];
  hands.insert(hands.end(), rh.begin(), rh.end());

  PoseL1Report rep;
  rep.full_body = group_l1(pred, gt, all);
  rep.head = group_l1(pred, gt, topo.part_joints[static_cast<int>(BodyPart::head)]);
  rep.hands = group_l1(pred, gt, hands);
  return rep;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  ensure(x.size() == y.size() && x.size() >= 2, ErrorKind::validation,
         "pearson: need two same-length series");
  const int n = static_cast<int>(x.size());
  double mx = 0.0, my = 0.0;
  for (int i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (int i = 0; i < n; ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  ensure(sxx > 0.0 && syy > 0.0, ErrorKind::validation, "pearson: constant series");
  return sxy / std::sqrt(sxx * syy);
}

PoseSequence shuffle_frames(const PoseSequence& seq, RngStream& rng) {
  PoseSequence out = seq;
  for (int i = seq.length() - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.uniform_int(0, i));
    std::swap(out.frames[i], out.frames[j]);
  }
  return out;
}

}  // namespace choreo
