// Copyright (C) 2026 the choreo authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <vector>

#include "choreo/ad.hpp"
#include "choreo/rng.hpp"

namespace choreo::nn {

using ad::Mat;
using ad::Param;
using ad::Var;

// Owns parameters with stable addresses; iteration order is creation order,
// which fixes the checkpoint blob order.
class ParamStore {
 public:
  Param& create(const std::string& name, int rows, int cols);
  Param* find(const std::string& name);
  Param& at(const std::string& name);
  const std::vector<std::unique_ptr<Param>>& items() const { return items_; }
  void zero_grads();
  size_t scalar_count() const;

 private:
  std::vector<std::unique_ptr<Param>> items_;
};

void init_normal(Param& p, RngStream& rng, double stddev);
void init_uniform(Param& p, RngStream& rng, double lo, double hi);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double grad_clip = 0.0;  // global 2-norm clip; 0 disables
};

// AdamW with decoupled weight decay. step() consumes and clears gradients of
// trainable parameters.
class AdamW {
 public:
  explicit AdamW(AdamConfig cfg) : cfg_(cfg) {}
  void step(ParamStore& params, double lr_override = -1.0);
  int64_t steps_done() const { return t_; }
  void set_steps_done(int64_t t) { t_ = t; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  int64_t t_ = 0;
};

struct Linear {
  Param* w = nullptr;  // in x out
  Param* b = nullptr;  // 1 x out, absent when bias=false
  static Linear create(ParamStore& ps, const std::string& name, int in, int out, RngStream& rng,
                       double stddev = 0.02, bool bias = true);
  Var operator()(ad::Graph& g, Var x) const;
};

struct LayerNorm {
  Param* gain = nullptr;
  Param* bias = nullptr;
  static LayerNorm create(ParamStore& ps, const std::string& name, int dim);
  Var operator()(ad::Graph& g, Var x) const;
};

struct Conv1d {
  Param* w = nullptr;  // (k*cin) x cout
  Param* b = nullptr;  // 1 x cout
  int ksize = 3;
  static Conv1d create(ParamStore& ps, const std::string& name, int cin, int cout, int ksize,
                       RngStream& rng);
  Var operator()(ad::Graph& g, Var x) const;
};

struct Conv2d {
  Param* w = nullptr;  // cout x (cin*k*k)
  Param* b = nullptr;  // cout x 1
  int ksize = 3;
  static Conv2d create(ParamStore& ps, const std::string& name, int cin, int cout, int ksize,
                       RngStream& rng);
  Var operator()(ad::Graph& g, Var x, ad::ConvDims d) const;
};

}  // namespace choreo::nn
