// Copyright (C) 2026 the choreo authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "choreo/music.hpp"
#include "choreo/nn.hpp"
#include "choreo/pose_codec.hpp"
#include "choreo/rng.hpp"

namespace choreo {

// Flattened position layout of one training/generation window: the motion
// context block first, then per frame one injected music slot followed by the
// frame's motion tokens in (part, slot) order. Causal attention over this
// ordering realizes the cross-conditional factorization: a token sees all
// parts of earlier frames, earlier parts of its own frame, earlier slots of
// its own part, music up to and including its frame, and the global context.
struct SequenceLayout {
  int context_frames = 8;
  int frames = 64;        // frames generated per segment
  int parts = 5;          // B
  int tokens_per_part = 6;  // K
  int music_slots = 1;    // per frame, injected, never predicted
  int overlap = 12;       // sliding-window overlap in frames

  int tokens_per_frame() const { return parts * tokens_per_part; }
  int context_positions() const { return context_frames * tokens_per_frame(); }
  int frame_positions() const { return music_slots + tokens_per_frame(); }
  int total_positions() const { return context_positions() + frames * frame_positions(); }

  // -1 for music slots and context region queries where not applicable
  bool in_context(int pos) const { return pos < context_positions(); }
  bool is_music_slot(int pos) const;
  int frame_of(int pos) const;  // main-region frame index, -1 in context
  int part_of(int pos) const;   // part of the token held at pos, -1 for music
  int slot_of(int pos) const;
  int position_of(int frame, int part, int slot) const;  // main region
  int music_position_of(int frame) const;

  void check_valid() const;
};

// Evenly spaced frame picks used for the motion context (count frames out of
// total, endpoints included).
std::vector<int> evenly_spaced_frames(int total, int count);

// Segment start offsets for long-form generation: stride frames-overlap,
// stopping once a segment reaches the requested length.
std::vector<int> plan_segments(int n_frames, const SequenceLayout& layout);

// Global conditioning for one window: a raw music summary (mean embedding
// plus beat density, projected inside the model) and the context token rows.
// Context tokens use the shared-vocabulary row index part*E + entry, or -1
// for the learned start sentinel.
struct GlobalContext {
  Eigen::VectorXd style_vector;    // music_dim + 1 raw summary
  std::vector<int> context_tokens; // context_frames*B*K entries, -1 = sentinel

  static GlobalContext all_sentinel(const SequenceLayout& layout, const Eigen::VectorXd& style);
};

// Mean embedding concatenated with the beat-frame fraction.
Eigen::VectorXd summarize_music(const MusicTrackFeatures& music);

struct MotionGptConfig {
  SequenceLayout layout;
  int vocab_per_part = 512;  // E
  int d_model = 256;
  int layers = 6;
  int heads = 8;
  int mlp_mult = 4;
  int music_dim = 32;      // embedding channels per music frame
  int beat_embed_dim = 8;  // learned beat-flag embedding width
  double dropout = 0.1;
  bool use_music_style = true;    // add the style projection to context positions
  bool use_motion_context = true; // false forces the start sentinel everywhere
  uint64_t seed = 1;

  void check_valid() const;
};

struct GenerationParams {
  double temperature = 0.9;
  int top_k = 50;
  uint64_t seed = 0;

  void check_valid() const;
};

// One fully assembled training window: embeddings resolve per position, and
// target[i] names the motion token at position i+1 (entry index within its
// part's vocabulary) or -1 where the next position is not a predicted token.
struct TrainingSequence {
  std::vector<int> tokens;          // shared-vocab row, -1 at music slots
  Eigen::MatrixXd music_embed;      // frames x music_dim
  std::vector<uint8_t> music_beat;  // frames
  Eigen::VectorXd style;            // music_dim + 1
  std::vector<int> targets;         // per position, entry in [0,E) or -1
  std::vector<int> target_part;     // per position, part of the target or -1

  int length() const { return static_cast<int>(tokens.size()); }
  int masked_in() const;
};

TrainingSequence build_training_sequence(const SequenceLayout& layout, const PartTokenGrid& grid,
                                         const MusicTrackFeatures& music,
                                         const GlobalContext& ctx, int vocab_per_part);

// Causal transformer over the flattened layout with per-part output heads.
class MotionGpt {
 public:
  static MotionGpt create(const MotionGptConfig& cfg);

  MotionGpt(MotionGpt&&) = default;
  MotionGpt& operator=(MotionGpt&&) = default;

  const MotionGptConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }

  // Masked mean cross-entropy over the batch; backward + optimizer step.
  double train_step(const std::vector<TrainingSequence>& batch, nn::AdamW& opt,
                    RngStream& dropout_rng);
  // Same loss without dropout, gradients, or updates.
  double eval_loss(const std::vector<TrainingSequence>& batch);
  // Per-position logits over the predicted part's vocabulary (rows without a
  // target are zero). Eval mode, deterministic.
  Eigen::MatrixXd eval_logits(const TrainingSequence& seq);
  // Fraction of masked-in targets whose argmax logit is the target.
  double teacher_forced_accuracy(const TrainingSequence& seq);

  // Samples one segment of up to layout.frames frames (fewer when the music
  // window is shorter). Deterministic given params.seed.
  PartTokenGrid generate_segment(const Eigen::MatrixXd& music_embed,
                                 const std::vector<uint8_t>& music_beat,
                                 const GlobalContext& ctx, const GenerationParams& params) const;
  // Long-form generation: overlapped segments, previous-segment tokens kept
  // on overlapped frames, context carried between segments. seed_tokens is
  // one frame of shared-vocab rows (B*K entries) from the reference pose.
  PartTokenGrid sliding_window_generate(const MusicTrackFeatures& music, int n_frames,
                                        const std::vector<int>& seed_tokens,
                                        const GenerationParams& params) const;

  void save(const std::string& path, const nn::AdamW* opt = nullptr) const;
  static MotionGpt load(const std::string& path, nn::AdamW* opt = nullptr);

 private:
  MotionGpt() = default;

  struct Block {
    nn::LayerNorm ln1, ln2;
    nn::Linear q, k, v, o;
    nn::Linear fc1, fc2;
  };
  // Per-layer growing key/value rows for incremental decoding.
  struct LayerCache {
    Eigen::MatrixXd k, v;
    int used = 0;
  };

  int sentinel_row() const { return cfg_.layout.parts * cfg_.vocab_per_part; }
  int token_row_of(int part, int entry) const { return part * cfg_.vocab_per_part + entry; }

  // training-graph path
  ad::Var embed_sequence(ad::Graph& g, const TrainingSequence& seq, bool train,
                         RngStream* rng) const;
  ad::Var trunk(ad::Graph& g, ad::Var x, bool train, RngStream* rng) const;
  ad::Var sequence_loss(ad::Graph& g, const TrainingSequence& seq, bool train, RngStream* rng,
                        int* n_targets) const;

  // tape-free eval path (must match the graph path bit-for-bit up to fp
  // associativity; covered by an equivalence test)
  Eigen::MatrixXd assemble_embeddings(const TrainingSequence& seq) const;
  Eigen::RowVectorXd music_slot_embedding(const Eigen::RowVectorXd& embed, bool beat) const;
  Eigen::RowVectorXd style_row(const Eigen::VectorXd& style) const;
  Eigen::MatrixXd eval_forward(const Eigen::MatrixXd& rows, std::vector<LayerCache>& cache) const;

  int sample_from_logits(const Eigen::RowVectorXd& logits, const GenerationParams& params,
                         RngStream& rng) const;

  MotionGptConfig cfg_;
  nn::ParamStore params_;
  ad::Param* tok_embed_ = nullptr;   // (B*E + 1) x D
  ad::Param* pos_embed_ = nullptr;   // total_positions x D
  ad::Param* beat_embed_ = nullptr;  // 2 x beat_embed_dim
  nn::Linear music_proj_, style_proj_;
  std::vector<Block> blocks_;
  nn::LayerNorm final_norm_;
  std::vector<nn::Linear> heads_;
};

}  // namespace choreo
