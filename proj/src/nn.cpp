// Copyright (C) 2026 the choreo authors
// SPDX-License-Identifier: Apache-2.0
#include "choreo/nn.hpp"

#include <cmath>

#include "choreo/error.hpp"

namespace choreo::nn {

Param& ParamStore::create(const std::string& name, int rows, int cols) {
  ensure(find(name) == nullptr, ErrorKind::structural, "duplicate parameter name: " + name);
  auto p = std::make_unique<Param>();
  p->name = name;
  p->setup(rows, cols);
  items_.push_back(std::move(p));
  return *items_.back();
}

Param* ParamStore::find(const std::string& name) {
  for (auto& p : items_)
    if (p->name == name) return p.get();
  return nullptr;
}

Param& ParamStore::at(const std::string& name) {
  Param* p = find(name);
  ensure(p != nullptr, ErrorKind::structural, "unknown parameter name: " + name);
  return *p;
}

void ParamStore::zero_grads() {
  for (auto& p : items_) p->grad.setZero();
}

size_t ParamStore::scalar_count() const {
  size_t n = 0;
  for (const auto& p : items_) n += static_cast<size_t>(p->value.size());
  return n;
}

void init_normal(Param& p, RngStream& rng, double stddev) {
  for (Eigen::Index i = 0; i < p.value.rows(); ++i)
    for (Eigen::Index j = 0; j < p.value.cols(); ++j) p.value(i, j) = rng.normal(0.0, stddev);
}

void init_uniform(Param& p, RngStream& rng, double lo, double hi) {
  for (Eigen::Index i = 0; i < p.value.rows(); ++i)
    for (Eigen::Index j = 0; j < p.value.cols(); ++j) p.value(i, j) = rng.uniform(lo, hi);
}

void AdamW::step(ParamStore& params, double lr_override) {
  double lr = lr_override > 0.0 ? lr_override : cfg_.lr;
  if (cfg_.grad_clip > 0.0) {
    double sq = 0.0;
    for (auto& p : params.items())
      if (p->trainable) sq += p->grad.squaredNorm();
    double norm = std::sqrt(sq);
    if (norm > cfg_.grad_clip) {
      double s = cfg_.grad_clip / norm;
      for (auto& p : params.items())
        if (p->trainable) p->grad *= s;
    }
  }
  ++t_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& p : params.items()) {
    if (!p->trainable) continue;
    p->m = cfg_.beta1 * p->m + (1.0 - cfg_.beta1) * p->grad;
    p->v = cfg_.beta2 * p->v + (1.0 - cfg_.beta2) * p->grad.cwiseProduct(p->grad);
    Mat mhat = p->m / bc1;
    Mat vhat = p->v / bc2;
    p->value -= lr * (mhat.array() / (vhat.array().sqrt() + cfg_.eps)).matrix();
    if (cfg_.weight_decay > 0.0) p->value -= lr * cfg_.weight_decay * p->value;
    p->grad.setZero();
  }
}

Linear Linear::create(ParamStore& ps, const std::string& name, int in, int out, RngStream& rng,
                      double stddev, bool bias) {
  Linear l;
  l.w = &ps.create(name + ".w", in, out);
  init_normal(*l.w, rng, stddev);
  if (bias) l.b = &ps.create(name + ".b", 1, out);
  return l;
}

Var Linear::operator()(ad::Graph& g, Var x) const {
  Var y = ad::matmul(x, g.param(*w));
  if (b) y = ad::add_rowvec(y, g.param(*b));
  return y;
}

LayerNorm LayerNorm::create(ParamStore& ps, const std::string& name, int dim) {
  LayerNorm n;
  n.gain = &ps.create(name + ".g", 1, dim);
  n.gain->value.setOnes();
  n.bias = &ps.create(name + ".b", 1, dim);
  return n;
}

Var LayerNorm::operator()(ad::Graph& g, Var x) const {
  return ad::layer_norm(x, g.param(*gain), g.param(*bias));
}

Conv1d Conv1d::create(ParamStore& ps, const std::string& name, int cin, int cout, int ksize,
                      RngStream& rng) {
  Conv1d c;
  c.ksize = ksize;
  c.w = &ps.create(name + ".w", ksize * cin, cout);
  init_normal(*c.w, rng, std::sqrt(2.0 / (ksize * cin)));
  c.b = &ps.create(name + ".b", 1, cout);
  return c;
}

Var Conv1d::operator()(ad::Graph& g, Var x) const {
  return ad::conv1d(x, g.param(*w), g.param(*b), ksize);
}

Conv2d Conv2d::create(ParamStore& ps, const std::string& name, int cin, int cout, int ksize,
                      RngStream& rng) {
  Conv2d c;
  c.ksize = ksize;
  c.w = &ps.create(name + ".w", cout, cin * ksize * ksize);
  init_normal(*c.w, rng, std::sqrt(2.0 / (cin * ksize * ksize)));
  c.b = &ps.create(name + ".b", cout, 1);
  return c;
}

Var Conv2d::operator()(ad::Graph& g, Var x, ad::ConvDims d) const {
  return ad::conv2d(x, g.param(*w), g.param(*b), d, ksize);
}

}  // namespace choreo::nn
