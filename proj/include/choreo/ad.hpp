// Copyright (C) 2026 the choreo authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "choreo/rng.hpp"

namespace choreo::ad {

using Mat = Eigen::MatrixXd;

// Learnable tensor plus its optimizer state. Values are double precision so
// analytic gradients can be validated against central finite differences.
struct Param {
  std::string name;
  Mat value;
  Mat grad;  // accumulated across backward passes until the optimizer consumes it
  Mat m, v;  // AdamW moments
  bool trainable = true;

  void setup(int rows, int cols) {
    value = Mat::Zero(rows, cols);
    grad = Mat::Zero(rows, cols);
    m = Mat::Zero(rows, cols);
    v = Mat::Zero(rows, cols);
  }
};

class Graph;

// Handle to a node owned by a Graph. Cheap to copy; invalid when default-made.
class Var {
 public:
  Var() = default;
  const Mat& val() const;
  const Mat& grad() const;
  Eigen::Index rows() const { return val().rows(); }
  Eigen::Index cols() const { return val().cols(); }
  bool valid() const { return g_ != nullptr; }
  Graph* graph() const { return g_; }
  int id() const { return id_; }

 private:
  friend class Graph;
  Var(Graph* g, int id) : g_(g), id_(id) {}
  Graph* g_ = nullptr;
  int id_ = -1;
};

// Dynamic reverse-mode tape. One Graph per training step; nodes are created
// in topological order by construction, so backward is a reverse sweep.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Constant leaf (no gradient).
  Var input(Mat v);
  Var scalar(double v);
  // Parameter leaf; on backward() the node gradient is added to p.grad.
  Var param(Param& p);

  // Runs the reverse sweep from a 1x1 loss node and flushes parameter grads.
  void backward(Var loss);

  size_t size() const { return nodes_.size(); }

  // --- internals used by the op implementations ---
  using BackFn = std::function<void(Graph&, int)>;
  Var make(Mat val, const std::vector<Var>& parents, BackFn back);
  const Mat& value_of(int id) const { return nodes_[id]->val; }
  bool needs(int id) const { return nodes_[id]->needs_grad; }
  // Lazily allocates a zero gradient buffer of the node's shape.
  Mat& grad_of(int id);
  bool grad_ready(int id) const { return nodes_[id]->grad_alloc; }

 private:
  struct Node {
    Mat val;
    Mat grad;
    bool needs_grad = false;
    bool grad_alloc = false;
    BackFn back;
    Param* flush_to = nullptr;
  };
  std::vector<std::unique_ptr<Node>> nodes_;
  std::vector<int> param_nodes_;
};

// ---- elementwise / linear algebra ----
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var matmul(Var a, Var b);
Var matmul_nt(Var a, Var b);  // a * b^T
Var matmul_tn(Var a, Var b);  // a^T * b
Var transpose(Var a);
Var add_rowvec(Var x, Var b);        // b is 1xC, added to every row
Var add_colvec(Var x, Var b);        // b is Rx1, added to every column
Var scale_by(Var x, Var s);          // s is a 1x1 variable
Var broadcast_row(Var row, int n);   // 1xC -> nxC
Var tile_cols(Var x, int reps);      // RxC -> Rx(C*reps)

// ---- activations ----
Var relu(Var x);
Var gelu(Var x);
Var tanh_act(Var x);
Var sigmoid(Var x);

// ---- reductions / scalar results ----
Var sum(Var x);
Var mean(Var x);
Var square(Var x);
Var mse(Var a, Var b);      // mean of squared difference
Var rms_norm(Var x);        // sqrt(mean(x^2)), 1x1

// ---- structure ----
Var stop_grad(Var x);
Var gather_rows(Var x, std::vector<int> idx);
Var rows(Var x, int r0, int n);
Var cols(Var x, int c0, int n);
Var concat_rows(const std::vector<Var>& xs);
Var concat_cols(const std::vector<Var>& xs);
Var reshape_row(Var x);  // RxC -> 1x(R*C) row-major
// Assembles a (total_rows x cols) matrix from row blocks placed at explicit
// row indices; unset rows are zero. Each piece is (idx.size() x cols).
Var scatter_rows(Graph& g, int total_rows, int n_cols,
                 const std::vector<std::pair<Var, std::vector<int>>>& pieces);
Var dropout(Var x, double p, RngStream& rng, bool train);

// ---- normalization ----
Var layer_norm(Var x, Var gain, Var bias);  // rowwise, eps 1e-5
// Per-frame, per-channel instance normalization with predicted scale/shift.
// content: C x (frames*HW); style: frames x 2C rows [gamma | delta].
// Channels with spatial std below 1e-5 use the floor value.
Var adain(Var content, Var style, int frames);

// ---- attention ----
// Block-diagonal scaled dot-product attention. q: N x d with N = nb*q_block;
// k,v: M x d / M x e with M = nb*kv_block; block i of q attends only to
// block i of k/v. With causal=true (requires q_block == kv_block), row r of a
// block sees columns <= r.
Var block_attention(Var q, Var k, Var v, int q_block, int kv_block, bool causal);

// ---- losses ----
// Sum over rows of (logsumexp(row) - row[target]). 1x1 output.
Var cross_entropy_sum(Var logits, std::vector<int> targets);
// Splits each row into consecutive groups of `group` columns and emits the
// L2 norm of every group: N x (group*m) -> N x m. Subgradient 0 at a zero
// group, so a perfect match contributes exactly zero.
Var group_l2_rows(Var x, int group);

// ---- convolution / resampling ----
// 1-D convolution over rows. x: L x Cin; w: (k*Cin) x Cout with patch layout
// tap*Cin + channel; stride 1, zero 'same' padding (k odd).
Var conv1d(Var x, Var w, Var b, int ksize);
// Linear resampling of the row axis to out_rows (endpoints preserved).
Var resample_rows_linear(Var x, int out_rows);

struct ConvDims {
  int frames = 1;
  int h = 0;
  int w = 0;
  int pixels() const { return h * w; }
  int cols() const { return frames * h * w; }
};
// 2-D convolution applied independently per frame. x: Cin x (F*H*W) with
// column index f*H*W + y*W + x; w: Cout x (Cin*k*k) with patch layout
// c*k*k + dy*k + dx; stride 1, zero 'same' padding (k odd).
Var conv2d(Var x, Var w, Var b, ConvDims d, int ksize);
Var avg_pool2(Var x, ConvDims d);  // H, W must be even
Var upsample2(Var x, ConvDims d);  // nearest-neighbor x2
// Layout permutations for video tensors (C x F*HW).
Var to_time_major(Var x, int frames, int hw);    // -> (HW*F) x C
Var from_time_major(Var x, int frames, int hw);  // inverse
// Per-frame column concatenation: a is C x F*n, b is C x F*m -> C x F*(n+m).
Var interleave_cols(Var a, Var b, int frames);

}  // namespace choreo::ad
