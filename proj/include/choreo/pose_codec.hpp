// Copyright (C) 2026 the choreo authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "choreo/nn.hpp"
#include "choreo/pose.hpp"

namespace choreo {

struct CodecConfig {
  int tokens_per_part = 6;     // K
  int latent_dim = 6;          // D
  int codebook_size = 512;     // E
  int hidden = 128;            // encoder / decoder width
  int codebooks_per_part = 1;  // 1 (shared per part) or K (one per slot)
  double beta = 0.25;          // commitment weight
  double gamma = 0.99;         // EMA decay
  double eps_laplace = 1e-5;
  double reseed_threshold = 1e-3;
  bool single_part = false;  // whole body as one part, same total token budget
  uint64_t seed = 1;

  void check_valid() const;
};

// T x B x K grid of codebook indices.
struct PartTokenGrid {
  int t = 0, b = 0, k = 0;
  double fps = 30.0;
  std::vector<int> idx;  // frame-major, then part, then slot

  int& at(int t_, int b_, int k_) { return idx[(static_cast<size_t>(t_) * b + b_) * k + k_]; }
  int at(int t_, int b_, int k_) const { return idx[(static_cast<size_t>(t_) * b + b_) * k + k_]; }
  void check_valid(int codebook_size) const;
};

void save_token_grid(const std::string& path, const PartTokenGrid& grid);
PartTokenGrid load_token_grid(const std::string& path);

// One codebook: entries plus EMA statistics, all owned by the codec's
// parameter store as non-trainable blobs so checkpoints carry them.
struct Codebook {
  ad::Param* entries = nullptr;  // E x D
  ad::Param* ema_size = nullptr; // E x 1
  ad::Param* ema_sum = nullptr;  // E x D
};

// One EMA step for a single codebook given this batch's latents and their
// entry assignments. Entries whose updated cluster size is zero stay put.
void ema_codebook_update(Eigen::MatrixXd& entries, Eigen::MatrixXd& ema_size,
                         Eigen::MatrixXd& ema_sum, const Eigen::MatrixXd& latents,
                         const std::vector<int>& assign, double gamma, double eps_laplace);

// Nearest-entry lookup with ties broken toward the lowest index.
std::vector<int> nearest_entries(const Eigen::MatrixXd& entries, const Eigen::MatrixXd& latents);

// Multi-part pose VQ-VAE: per-part convolutional encoders over the joint
// axis, vector quantization against per-part codebooks, and a shared decoder
// with per-part heads that reconstructs coordinates and confidence.
class PoseCodec {
 public:
  static PoseCodec create(const CodecConfig& cfg, const SkeletonTopology& topo);

  PoseCodec(PoseCodec&&) = default;
  PoseCodec& operator=(PoseCodec&&) = default;

  int parts() const { return static_cast<int>(part_joints_.size()); }
  const std::vector<int>& joints_of_part(int part) const { return part_joints_[part]; }
  const CodecConfig& config() const { return cfg_; }
  const SkeletonTopology& topology() const { return topo_; }
  nn::ParamStore& params() { return params_; }
  const Codebook& codebook(int part, int slot) const;

  // K x D encoder output for one part of one frame.
  Eigen::MatrixXd encode_part(int part, const PartPose& pose) const;
  // Quantizes K x D latents; returns entry rows and writes slot indices.
  Eigen::MatrixXd quantize(int part, const Eigen::MatrixXd& latents,
                           std::vector<int>* indices = nullptr) const;
  // Decodes one frame from per-part quantized latents (confidence clamped).
  PoseFrame decode_frame(const std::vector<Eigen::MatrixXd>& quantized) const;
  // Raw per-part head outputs (n_j x 3 each) with no confidence clamping;
  // these are exactly the values the training loss sees.
  std::vector<Eigen::MatrixXd> decode_frame_raw(
      const std::vector<Eigen::MatrixXd>& quantized) const;

  PartTokenGrid tokenize(const PoseSequence& seq) const;
  PoseSequence detokenize(const PartTokenGrid& grid) const;
  // Entry rows for one frame's tokens of one part (K x D).
  Eigen::MatrixXd embed_tokens(int part, const int* slots) const;

  struct LossReport {
    double total = 0.0;
    double recon = 0.0;
    double commit = 0.0;
  };
  // Builds the training graph for a batch of frames, runs backward, applies
  // the optimizer to encoder/decoder parameters and the EMA update to the
  // codebooks.
  LossReport train_step(const std::vector<PoseFrame>& batch, nn::AdamW& opt);
  // Loss and gradients only; exposed for the gradient contract tests.
  LossReport loss_only(const std::vector<PoseFrame>& batch);

  // Re-initializes entries whose EMA cluster size fell below the threshold to
  // random encoder latents drawn from the given frames. Returns the count.
  int reseed_dead_entries(const std::vector<PoseFrame>& pool, RngStream& rng);

  void save(const std::string& path) const;
  static PoseCodec load(const std::string& path, const SkeletonTopology& topo);

 private:
  PoseCodec() = default;

  struct PartEncoder {
    nn::Conv1d c1, c2, c3;
    nn::Linear to_latent;
  };

  // Per-codebook latents and assignments collected while building the loss
  // graph, consumed by the EMA update after the optimizer step.
  struct EmaBatch {
    std::vector<std::vector<std::vector<Eigen::RowVectorXd>>> latents;  // [part][group]
    std::vector<std::vector<std::vector<int>>> assign;
  };

  ad::Var encode_graph(ad::Graph& g, int part, const Eigen::MatrixXd& flat) const;
  ad::Var decode_graph(ad::Graph& g, ad::Var latent_rows,
                       std::vector<ad::Var>* head_out) const;
  Eigen::MatrixXd part_flat(const PoseFrame& frame, int part) const;
  LossReport loss_graph(ad::Graph& g, const std::vector<PoseFrame>& batch, ad::Var* loss_out,
                        EmaBatch* ema) const;

  CodecConfig cfg_;
  SkeletonTopology topo_;
  std::vector<std::vector<int>> part_joints_;
  nn::ParamStore params_;
  std::vector<PartEncoder> encoders_;
  nn::Linear dec1_, dec2_;
  std::vector<nn::Linear> heads_;
  std::vector<std::vector<Codebook>> books_;  // [part][slot group]
};

}  // namespace choreo
