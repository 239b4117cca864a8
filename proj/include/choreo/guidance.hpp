// Copyright (C) 2026 the choreo authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "choreo/nn.hpp"
#include "choreo/pose_codec.hpp"

namespace choreo {

// Shapes of the multi-scale guidance maps. Level 0 is the finest; each
// coarser level halves both spatial dimensions, and the base map lives at the
// coarsest level. Channel counts are listed finest first and must match the
// denoiser's encoder features level for level.
struct GuidanceConfig {
  int base_h = 7;
  int base_w = 4;
  std::vector<int> channels = {16, 32, 48, 64};  // finest level first
  int window = 16;      // frames decoded together
  int style_hidden = 64;
  uint64_t seed = 1;

  int levels() const { return static_cast<int>(channels.size()); }
  int level_h(int l) const { return base_h << (levels() - 1 - l); }
  int level_w(int l) const { return base_w << (levels() - 1 - l); }
  void check_valid() const;
};

// Per-window guidance maps: levels[l] is C_l x (frames * H_l * W_l) with the
// column layout frame-major used by the 2-D graph ops.
struct GuidancePyramid {
  std::vector<Eigen::MatrixXd> levels;
  int frames = 0;
};

// A fixed-length token window plus per-part mean confidences. Windows sliced
// past the end of a clip repeat the last real frame; valid_frames records how
// many frames are genuine.
struct TokenWindow {
  PartTokenGrid grid;         // exactly `window` frames
  Eigen::MatrixXd part_conf;  // window x parts
  int valid_frames = 0;
};

TokenWindow slice_token_window(const PartTokenGrid& grid, const Eigen::MatrixXd& part_conf,
                               int start, int window);

// Trainable decoder from pose tokens to spatial guidance maps: per-frame
// styles come from the tokens' codebook embeddings plus confidences through a
// small MLP and a kernel-3 temporal convolution; a learned base map is then
// progressively upsampled with per-level convolutions and AdaIN modulation.
// The whole path is differentiable back to the codebook embedding table.
class GuidanceDecoder {
 public:
  static GuidanceDecoder create(const GuidanceConfig& cfg, const CodecConfig& codec_cfg,
                                int parts);

  GuidanceDecoder(GuidanceDecoder&&) = default;
  GuidanceDecoder& operator=(GuidanceDecoder&&) = default;

  const GuidanceConfig& config() const { return cfg_; }
  int style_input_width() const { return style_in_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  // window x style_hidden per-frame style features (graph path).
  ad::Var style_features(ad::Graph& g, const PoseCodec& codec, const TokenWindow& win) const;
  // Per-level guidance maps from the style features, finest level first.
  std::vector<ad::Var> pyramid_graph(ad::Graph& g, ad::Var style) const;
  // Forward-only convenience wrapper.
  GuidancePyramid decode(const PoseCodec& codec, const TokenWindow& win) const;

  void save(const std::string& path, const nn::AdamW* opt = nullptr) const;
  static GuidanceDecoder load(const std::string& path, const CodecConfig& codec_cfg, int parts,
                              nn::AdamW* opt = nullptr);

 private:
  GuidanceDecoder() = default;

  GuidanceConfig cfg_;
  int parts_ = 0;
  int style_in_ = 0;
  nn::ParamStore params_;
  ad::Param* base_ = nullptr;  // C_last x (base_h*base_w)
  nn::Linear style_l1_, style_l2_;
  nn::Conv1d style_tconv_;
  std::vector<nn::Linear> level_proj_;  // hidden -> 2*C_l, finest first
  std::vector<nn::Conv2d> level_conv_;  // finest first
};

}  // namespace choreo
