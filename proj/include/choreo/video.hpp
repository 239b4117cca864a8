// Copyright (C) 2026 the choreo authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <json.hpp>
#include <string>
#include <vector>

#include "choreo/guidance.hpp"
#include "choreo/nn.hpp"
#include "choreo/pose.hpp"
#include "choreo/rng.hpp"

namespace choreo {

// Fixed DDPM noise schedule: beta ascending in (0,1), alpha_bar the running
// product of (1 - beta), strictly descending in (0,1].
struct DiffusionSchedule {
  Eigen::VectorXd beta;
  Eigen::VectorXd alpha_bar;

  int steps() const { return static_cast<int>(beta.size()); }
  static DiffusionSchedule linear(int steps, double beta_min, double beta_max);
  void check_valid() const;
};

// Forward corruption x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, t in [1, steps].
Eigen::MatrixXd ddpm_noise(const DiffusionSchedule& s, const Eigen::MatrixXd& x0, int t,
                           const Eigen::MatrixXd& eps);

// A fixed-length window of frames, channel-major: 3 x (frames*h*w) with the
// column layout f*h*w + y*w + x, values in [0,1].
struct VideoClip {
  Eigen::MatrixXd pixels;
  int frames = 0, h = 0, w = 0;
  double fps = 30.0;

  Eigen::MatrixXd frame(int f) const { return pixels.middleCols(f * h * w, h * w); }
  void check_valid() const;
};

// Renders `frames` poses starting at `start` (clamped to the tail, repeating
// the last frame) onto an h x w canvas.
VideoClip render_pose_window(const PoseSequence& seq, const SkeletonTopology& topo, int start,
                             int frames, int h, int w);

// PNG frame folder (frame_0000.png ...) plus manifest.json carrying fps and
// any caller-provided fields.
void write_video_dir(const std::string& dir, const VideoClip& clip,
                     const nlohmann::json& manifest_extra);

struct VideoConfig {
  int h = 56, w = 32;
  int frames = 16;
  std::vector<int> channels = {16, 32, 48, 64};  // finest encoder level first
  int diff_steps = 50;
  double beta_min = 1e-4, beta_max = 0.02;
  uint64_t seed = 1;

  int levels() const { return static_cast<int>(channels.size()); }
  void check_valid() const;
};

// The guidance pyramid must line up with the denoiser's encoder features
// shape for shape and channel for channel.
void ensure_guidance_match(const VideoConfig& v, const GuidanceConfig& g);

// Small video denoiser: per-frame convolutional encoder/decoder UNet with
// additive multi-scale guidance injection (residual scales zero-initialized),
// spatial attention at the coarsest level with reference-image tokens joining
// the keys/values, and bidirectional temporal attention across the window.
class VideoDenoiser {
 public:
  static VideoDenoiser create(const VideoConfig& cfg);

  VideoDenoiser(VideoDenoiser&&) = default;
  VideoDenoiser& operator=(VideoDenoiser&&) = default;

  const VideoConfig& config() const { return cfg_; }
  const DiffusionSchedule& schedule() const { return sched_; }
  nn::ParamStore& params() { return params_; }

  // Coarsest-level tokens of the reference image through the trainable
  // reference encoder copy. ref_image: 3 x (h*w).
  ad::Var reference_tokens(ad::Graph& g, const Eigen::MatrixXd& ref_image) const;
  Eigen::MatrixXd reference_tokens_eval(const Eigen::MatrixXd& ref_image) const;

  // Noise prediction for one window. guidance is one Var per level (finest
  // first) or empty for the unconditional path; ref must come from
  // reference_tokens on the same graph.
  ad::Var predict_noise(ad::Graph& g, ad::Var x_t, int t, const std::vector<ad::Var>& guidance,
                        ad::Var ref) const;
  Eigen::MatrixXd predict_noise_eval(const Eigen::MatrixXd& x_t, int t,
                                     const GuidancePyramid* guidance,
                                     const Eigen::MatrixXd& ref_tokens) const;

  // The temporal-attention block alone, with an explicit frame -> position
  // row mapping; exposed so permutation equivariance can be probed directly.
  ad::Var temporal_stage(ad::Graph& g, ad::Var x, int hw,
                         const std::vector<int>& pos_of_frame) const;

  void save(const std::string& path, const nn::AdamW* opt = nullptr) const;
  static VideoDenoiser load(const std::string& path, nn::AdamW* opt = nullptr);

 private:
  VideoDenoiser() = default;

  ad::Var encoder_stack(ad::Graph& g, ad::Var x, int t, int frames,
                        const std::vector<ad::Var>& guidance, const std::vector<nn::Conv2d>& enc,
                        bool with_time, std::vector<ad::Var>* skips) const;

  VideoConfig cfg_;
  DiffusionSchedule sched_;
  nn::ParamStore params_;
  std::vector<nn::Conv2d> enc_, ref_enc_, dec_;
  nn::Conv2d out_conv_;
  std::vector<ad::Param*> temb_;  // per level, diff_steps x C_l
  ad::Param* gscale_ = nullptr;   // levels x 1 residual scales, zero-init
  nn::LayerNorm sattn_ln_, tattn_ln_;
  nn::Linear sattn_q_, sattn_k_, sattn_v_, sattn_o_;
  nn::Linear tattn_q_, tattn_k_, tattn_v_, tattn_o_;
  ad::Param* tpos_ = nullptr;  // frames x C_last
};

// One co-training step: sample (t, eps), corrupt the clip, predict, step both
// models on the epsilon-MSE. Returns the loss.
double video_train_step(VideoDenoiser& model, GuidanceDecoder& gdec, const PoseCodec& codec,
                        const VideoClip& clip, const TokenWindow& win,
                        const Eigen::MatrixXd& ref_image, nn::AdamW& opt_model,
                        nn::AdamW& opt_gdec, RngStream& rng);

// Same loss at a fixed (t, eps) with no gradients or updates.
double video_loss(const VideoDenoiser& model, const GuidanceDecoder& gdec, const PoseCodec& codec,
                  const VideoClip& clip, const TokenWindow& win, const Eigen::MatrixXd& ref_image,
                  int t, const Eigen::MatrixXd& eps);

// DDPM ancestral sampling, deterministic given seed. use_guidance=false
// zeroes the conditioning pathway (the detached-guidance ablation).
VideoClip sample_video(const VideoDenoiser& model, const GuidanceDecoder& gdec,
                       const PoseCodec& codec, const TokenWindow& win,
                       const Eigen::MatrixXd& ref_image, uint64_t seed, bool use_guidance = true);

}  // namespace choreo
