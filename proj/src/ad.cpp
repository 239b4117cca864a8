// Copyright (C) 2026 the choreo authors
// SPDX-License-Identifier: Apache-2.0
#include "choreo/ad.hpp"

#include <cmath>

#include "choreo/error.hpp"

namespace choreo::ad {

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
}  // namespace

const Mat& Var::val() const {
  ensure(g_ != nullptr, ErrorKind::structural, "use of empty Var");
  return g_->value_of(id_);
}

const Mat& Var::grad() const {
  ensure(g_ != nullptr, ErrorKind::structural, "use of empty Var");
  return g_->grad_of(id_);
}

Var Graph::input(Mat v) { return make(std::move(v), {}, nullptr); }

Var Graph::scalar(double v) {
  Mat m(1, 1);
  m(0, 0) = v;
  return input(std::move(m));
}

Var Graph::param(Param& p) {
  auto node = std::make_unique<Node>();
  node->val = p.value;
  node->needs_grad = true;
  node->flush_to = &p;
  nodes_.push_back(std::move(node));
  int id = static_cast<int>(nodes_.size()) - 1;
  param_nodes_.push_back(id);
  return Var(this, id);
}

Var Graph::make(Mat val, const std::vector<Var>& parents, BackFn back) {
  auto node = std::make_unique<Node>();
  node->val = std::move(val);
  for (const Var& p : parents) {
    ensure(p.graph() == this, ErrorKind::structural, "Var from another graph");
    if (nodes_[p.id()]->needs_grad) node->needs_grad = true;
  }
  if (node->needs_grad) node->back = std::move(back);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Mat& Graph::grad_of(int id) {
  Node& n = *nodes_[id];
  if (!n.grad_alloc) {
    n.grad = Mat::Zero(n.val.rows(), n.val.cols());
    n.grad_alloc = true;
  }
  return n.grad;
}

void Graph::backward(Var loss) {
  ensure(loss.graph() == this, ErrorKind::structural, "loss from another graph");
  ensure(loss.val().size() == 1, ErrorKind::structural, "backward needs a 1x1 loss");
  grad_of(loss.id())(0, 0) = 1.0;
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = *nodes_[id];
    if (!n.grad_alloc || !n.back) continue;
    n.back(*this, id);
  }
  for (int id : param_nodes_) {
    Node& n = *nodes_[id];
    if (n.grad_alloc && n.flush_to->trainable) n.flush_to->grad += n.grad;
  }
}

// ---- elementwise / linear algebra ----

Var add(Var a, Var b) {
  Graph& g = *a.graph();
  ensure(a.rows() == b.rows() && a.cols() == b.cols(), ErrorKind::structural, "add: shape mismatch");
  int ia = a.id(), ib = b.id();
  return g.make(a.val() + b.val(), {a, b}, [ia, ib](Graph& g, int self) {
    const Mat& go = g.grad_of(self);
    if (g.needs(ia)) g.grad_of(ia) += go;
    if (g.needs(ib)) g.grad_of(ib) += go;
  });
}

Var sub(Var a, Var b) {
  Graph& g = *a.graph();
  ensure(a.rows() == b.rows() && a.cols() == b.cols(), ErrorKind::structural, "sub: shape mismatch");
  int ia = a.id(), ib = b.id();
  return g.make(a.val() - b.val(), {a, b}, [ia, ib](Graph& g, int self) {
    const Mat& go = g.grad_of(self);
    if (g.needs(ia)) g.grad_of(ia) += go;
    if (g.needs(ib)) g.grad_of(ib) -= go;
  });
}

Var mul(Var a, Var b) {
  Graph& g = *a.graph();
  ensure(a.rows() == b.rows() && a.cols() == b.cols(), ErrorKind::structural, "mul: shape mismatch");
  int ia = a.id(), ib = b.id();
  return g.make(a.val().cwiseProduct(b.val()), {a, b}, [ia, ib](Graph& g, int self) {
    const Mat& go = g.grad_of(self);
    if (g.needs(ia)) g.grad_of(ia) += go.cwiseProduct(g.value_of(ib));
    if (g.needs(ib)) g.grad_of(ib) += go.cwiseProduct(g.value_of(ia));
  });
}

Var scale(Var a, double s) {
  Graph& g = *a.graph();
  int ia = a.id();
  return g.make(a.val() * s, {a}, [ia, s](Graph& g, int self) {
    if (g.needs(ia)) g.grad_of(ia) += s * g.grad_of(self);
  });
}

Var add_scalar(Var a, double s) {
  Graph& g = *a.graph();
  int ia = a.id();
  return g.make((a.val().array() + s).matrix(), {a}, [ia](Graph& g, int self) {
    if (g.needs(ia)) g.grad_of(ia) += g.grad_of(self);
  });
}

Var matmul(Var a, Var b) {
  Graph& g = *a.graph();
  ensure(a.cols() == b.rows(), ErrorKind::structural, "matmul: inner dim mismatch");
  int ia = a.id(), ib = b.id();
  return g.make(a.val() * b.val(), {a, b}, [ia, ib](Graph& g, int self) {
    const Mat& go = g.grad_of(self);
    if (g.needs(ia)) g.grad_of(ia).noalias() += go * g.value_of(ib).transpose();
    if (g.needs(ib)) g.grad_of(ib).noalias() += g.value_of(ia).transpose() * go;
  });
}

Var matmul_nt(Var a, Var b) {
  Graph& g = *a.graph();
  ensure(a.cols() == b.cols(), ErrorKind::structural, "matmul_nt: inner dim mismatch");
  int ia = a.id(), ib = b.id();
  return g.make(a.val() * b.val().transpose(), {a, b}, [ia, ib](Graph& g, int self) {
    const Mat& go = g.grad_of(self);
    if (g.needs(ia)) g.grad_of(ia).noalias() += go * g.value_of(ib);
    if (g.needs(ib)) g.grad_of(ib).noalias() += go.transpose() * g.value_of(ia);
  });
}

Var matmul_tn(Var a, Var b) {
  Graph& g = *a.graph();
  ensure(a.rows() == b.rows(), ErrorKind::structural, "matmul_tn: inner dim mismatch");
  int ia = a.id(), ib = b.id();
  return g.make(a.val().transpose() * b.val(), {a, b}, [ia, ib](Graph& g, int self) {
    const Mat& go = g.grad_of(self);
    if (g.needs(ia)) g.grad_of(ia).noalias() += g.value_of(ib) * go.transpose();
    if (g.needs(ib)) g.grad_of(ib).noalias() += g.value_of(ia) * go;
  });
}

Var transpose(Var a) {
  Graph& g = *a.graph();
  int ia = a.id();
  return g.make(a.val().transpose(), {a}, [ia](Graph& g, int self) {
    if (g.needs(ia)) g.grad_of(ia) += g.grad_of(self).transpose();
  });
}

Var add_rowvec(Var x, Var b) {
  Graph& g = *x.graph();
  ensure(b.rows() == 1 && b.cols() == x.cols(), ErrorKind::structural, "add_rowvec: bad bias shape");
  int ix = x.id(), ib = b.id();
  Mat v = x.val();
  v.rowwise() += b.val().row(0);
  return g.make(std::move(v), {x, b}, [ix, ib](Graph& g, int self) {
    const Mat& go = g.grad_of(self);
    if (g.needs(ix)) g.grad_of(ix) += go;
    if (g.needs(ib)) g.grad_of(ib) += go.colwise().sum();
  });
}

Var add_colvec(Var x, Var b) {
  Graph& g = *x.graph();
  ensure(b.cols() == 1 && b.rows() == x.rows(), ErrorKind::structural, "add_colvec: bad bias shape");
  int ix = x.id(), ib = b.id();
  Mat v = x.val();
  v.colwise() += b.val().col(0);
  return g.make(std::move(v), {x, b}, [ix, ib](Graph& g, int self) {
    const Mat& go = g.grad_of(self);
    if (g.needs(ix)) g.grad_of(ix) += go;
    if (g.needs(ib)) g.grad_of(ib) += go.rowwise().sum();
  });
}

Var scale_by(Var x, Var s) {
  Graph& g = *x.graph();
  ensure(s.val().size() == 1, ErrorKind::structural, "scale_by: s must be 1x1");
  int ix = x.id(), is = s.id();
  return g.make(x.val() * s.val()(0, 0), {x, s}, [ix, is](Graph& g, int self) {
    const Mat& go = g.grad_of(self);
    if (g.needs(ix)) g.grad_of(ix) += go * g.value_of(is)(0, 0);
    if (g.needs(is)) g.grad_of(is)(0, 0) += go.cwiseProduct(g.value_of(ix)).sum();
  });
}

Var broadcast_row(Var row, int n) {
  Graph& g = *row.graph();
  ensure(row.rows() == 1, ErrorKind::structural, "broadcast_row: input must be 1xC");
  int ir = row.id();
  return g.make(row.val().replicate(n, 1), {row}, [ir](Graph& g, int self) {
    if (g.needs(ir)) g.grad_of(ir) += g.grad_of(self).colwise().sum();
  });
}

Var tile_cols(Var x, int reps) {
  Graph& g = *x.graph();
  int ix = x.id();
  int c = static_cast<int>(x.cols());
  return g.make(x.val().replicate(1, reps), {x}, [ix, reps, c](Graph& g, int self) {
    if (!g.needs(ix)) return;
    const Mat& go = g.grad_of(self);
    Mat& gx = g.grad_of(ix);
    for (int r = 0; r < reps; ++r) gx += go.middleCols(r * c, c);
  });
}

// ---- activations ----

Var relu(Var x) {
  Graph& g = *x.graph();
  int ix = x.id();
  return g.make(x.val().cwiseMax(0.0), {x}, [ix](Graph& g, int self) {
    if (!g.needs(ix)) return;
    const Mat& xv = g.value_of(ix);
    g.grad_of(ix) += g.grad_of(self).cwiseProduct((xv.array() > 0.0).cast<double>().matrix());
  });
}

Var gelu(Var x) {
  Graph& g = *x.graph();
  int ix = x.id();
  Mat v = x.val().unaryExpr([](double t) { return 0.5 * t * (1.0 + std::erf(t * kInvSqrt2)); });
  return g.make(std::move(v), {x}, [ix](Graph& g, int self) {
    if (!g.needs(ix)) return;
    const Mat& xv = g.value_of(ix);
    Mat d = xv.unaryExpr([](double t) {
      return 0.5 * (1.0 + std::erf(t * kInvSqrt2)) + t * kInvSqrt2Pi * std::exp(-0.5 * t * t);
    });
    g.grad_of(ix) += g.grad_of(self).cwiseProduct(d);
  });
}

Var tanh_act(Var x) {
  Graph& g = *x.graph();
  int ix = x.id();
  return g.make(x.val().array().tanh().matrix(), {x}, [ix](Graph& g, int self) {
    if (!g.needs(ix)) return;
    const Mat& y = g.value_of(self);
    g.grad_of(ix) += g.grad_of(self).cwiseProduct((1.0 - y.array().square()).matrix());
  });
}

Var sigmoid(Var x) {
  Graph& g = *x.graph();
  int ix = x.id();
  Mat v = x.val().unaryExpr([](double t) { return 1.0 / (1.0 + std::exp(-t)); });
  return g.make(std::move(v), {x}, [ix](Graph& g, int self) {
    if (!g.needs(ix)) return;
    const Mat& y = g.value_of(self);
    g.grad_of(ix) += g.grad_of(self).cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix()));
  });
}

// ---- reductions ----

Var sum(Var x) {
  Graph& g = *x.graph();
  int ix = x.id();
  Mat v(1, 1);
  v(0, 0) = x.val().sum();
  return g.make(std::move(v), {x}, [ix](Graph& g, int self) {
    if (!g.needs(ix)) return;
    g.grad_of(ix).array() += g.grad_of(self)(0, 0);
  });
}

Var mean(Var x) {
  Graph& g = *x.graph();
  int ix = x.id();
  double n = static_cast<double>(x.val().size());
  Mat v(1, 1);
  v(0, 0) = x.val().sum() / n;
  return g.make(std::move(v), {x}, [ix, n](Graph& g, int self) {
    if (!g.needs(ix)) return;
    g.grad_of(ix).array() += g.grad_of(self)(0, 0) / n;
  });
}

Var square(Var x) {
  Graph& g = *x.graph();
  int ix = x.id();
  return g.make(x.val().array().square().matrix(), {x}, [ix](Graph& g, int self) {
    if (!g.needs(ix)) return;
    g.grad_of(ix) += 2.0 * g.grad_of(self).cwiseProduct(g.value_of(ix));
  });
}

Var mse(Var a, Var b) {
  Graph& g = *a.graph();
  ensure(a.rows() == b.rows() && a.cols() == b.cols(), ErrorKind::structural, "mse: shape mismatch");
  int ia = a.id(), ib = b.id();
  double n = static_cast<double>(a.val().size());
  Mat v(1, 1);
  v(0, 0) = (a.val() - b.val()).squaredNorm() / n;
  return g.make(std::move(v), {a, b}, [ia, ib, n](Graph& g, int self) {
    double go = g.grad_of(self)(0, 0);
    Mat d = (2.0 * go / n) * (g.value_of(ia) - g.value_of(ib));
    if (g.needs(ia)) g.grad_of(ia) += d;
    if (g.needs(ib)) g.grad_of(ib) -= d;
  });
}

Var rms_norm(Var x) {
  Graph& g = *x.graph();
  int ix = x.id();
  double n = static_cast<double>(x.val().size());
  double r = std::sqrt(x.val().squaredNorm() / n);
  Mat v(1, 1);
  v(0, 0) = r;
  return g.make(std::move(v), {x}, [ix, n, r](Graph& g, int self) {
    if (!g.needs(ix)) return;
    double denom = n * std::max(r, 1e-12);
    g.grad_of(ix) += (g.grad_of(self)(0, 0) / denom) * g.value_of(ix);
  });
}

// ---- structure ----

Var stop_grad(Var x) {
  Graph& g = *x.graph();
  return g.make(x.val(), {}, nullptr);
}

Var gather_rows(Var x, std::vector<int> idx) {
  Graph& g = *x.graph();
  int ix = x.id();
  Mat v(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (size_t i = 0; i < idx.size(); ++i) {
    ensure(idx[i] >= 0 && idx[i] < x.rows(), ErrorKind::structural, "gather_rows: index out of range");
    v.row(static_cast<Eigen::Index>(i)) = x.val().row(idx[i]);
  }
  return g.make(std::move(v), {x}, [ix, idx = std::move(idx)](Graph& g, int self) {
    if (!g.needs(ix)) return;
    const Mat& go = g.grad_of(self);
    Mat& gx = g.grad_of(ix);
    for (size_t i = 0; i < idx.size(); ++i) gx.row(idx[i]) += go.row(static_cast<Eigen::Index>(i));
  });
}

Var rows(Var x, int r0, int n) {
  Graph& g = *x.graph();
  ensure(r0 >= 0 && r0 + n <= x.rows(), ErrorKind::structural, "rows: range out of bounds");
  int ix = x.id();
  return g.make(x.val().middleRows(r0, n), {x}, [ix, r0, n](Graph& g, int self) {
    if (g.needs(ix)) g.grad_of(ix).middleRows(r0, n) += g.grad_of(self);
  });
}

Var cols(Var x, int c0, int n) {
  Graph& g = *x.graph();
  ensure(c0 >= 0 && c0 + n <= x.cols(), ErrorKind::structural, "cols: range out of bounds");
  int ix = x.id();
  return g.make(x.val().middleCols(c0, n), {x}, [ix, c0, n](Graph& g, int self) {
    if (g.needs(ix)) g.grad_of(ix).middleCols(c0, n) += g.grad_of(self);
  });
}

Var concat_rows(const std::vector<Var>& xs) {
  ensure(!xs.empty(), ErrorKind::structural, "concat_rows: empty input");
  Graph& g = *xs[0].graph();
  Eigen::Index total = 0;
  for (const Var& x : xs) {
    ensure(x.cols() == xs[0].cols(), ErrorKind::structural, "concat_rows: column mismatch");
    total += x.rows();
  }
  Mat v(total, xs[0].cols());
  std::vector<int> ids, offs;
  Eigen::Index at = 0;
  for (const Var& x : xs) {
    v.middleRows(at, x.rows()) = x.val();
    ids.push_back(x.id());
    offs.push_back(static_cast<int>(at));
    at += x.rows();
  }
  return g.make(std::move(v), xs, [ids, offs](Graph& g, int self) {
    const Mat& go = g.grad_of(self);
    for (size_t i = 0; i < ids.size(); ++i) {
      if (!g.needs(ids[i])) continue;
      Mat& gx = g.grad_of(ids[i]);
      gx += go.middleRows(offs[i], gx.rows());
    }
  });
}

Var concat_cols(const std::vector<Var>& xs) {
  ensure(!xs.empty(), ErrorKind::structural, "concat_cols: empty input");
  Graph& g = *xs[0].graph();
  Eigen::Index total = 0;
  for (const Var& x : xs) {
    ensure(x.rows() == xs[0].rows(), ErrorKind::structural, "concat_cols: row mismatch");
    total += x.cols();
  }
  Mat v(xs[0].rows(), total);
  std::vector<int> ids, offs;
  Eigen::Index at = 0;
  for (const Var& x : xs) {
    v.middleCols(at, x.cols()) = x.val();
    ids.push_back(x.id());
    offs.push_back(static_cast<int>(at));
    at += x.cols();
  }
  return g.make(std::move(v), xs, [ids, offs](Graph& g, int self) {
    const Mat& go = g.grad_of(self);
    for (size_t i = 0; i < ids.size(); ++i) {
      if (!g.needs(ids[i])) continue;
      Mat& gx = g.grad_of(ids[i]);
      gx += go.middleCols(offs[i], gx.cols());
    }
  });
}

Var reshape_row(Var x) {
  Graph& g = *x.graph();
  int ix = x.id();
  int r = static_cast<int>(x.rows()), c = static_cast<int>(x.cols());
  Mat v(1, r * c);
  for (int i = 0; i < r; ++i) v.middleCols(i * c, c) = x.val().row(i);
  return g.make(std::move(v), {x}, [ix, r, c](Graph& g, int self) {
    if (!g.needs(ix)) return;
    const Mat& go = g.grad_of(self);
    Mat& gx = g.grad_of(ix);
    for (int i = 0; i < r; ++i) gx.row(i) += go.middleCols(i * c, c);
  });
}

Var scatter_rows(Graph& g, int total_rows, int n_cols,
                 const std::vector<std::pair<Var, std::vector<int>>>& pieces) {
  Mat v = Mat::Zero(total_rows, n_cols);
  std::vector<Var> parents;
  std::vector<int> ids;
  std::vector<std::vector<int>> idxs;
  for (const auto& [piece, idx] : pieces) {
    ensure(piece.cols() == n_cols, ErrorKind::structural, "scatter_rows: column mismatch");
    ensure(piece.rows() == static_cast<Eigen::Index>(idx.size()), ErrorKind::structural,
           "scatter_rows: index count mismatch");
    for (size_t i = 0; i < idx.size(); ++i) {
      ensure(idx[i] >= 0 && idx[i] < total_rows, ErrorKind::structural, "scatter_rows: index out of range");
      v.row(idx[i]) = piece.val().row(static_cast<Eigen::Index>(i));
    }
    parents.push_back(piece);
    ids.push_back(piece.id());
    idxs.push_back(idx);
  }
  return g.make(std::move(v), parents, [ids, idxs](Graph& g, int self) {
    const Mat& go = g.grad_of(self);
    for (size_t p = 0; p < ids.size(); ++p) {
      if (!g.needs(ids[p])) continue;
      Mat& gx = g.grad_of(ids[p]);
      for (size_t i = 0; i < idxs[p].size(); ++i)
        gx.row(static_cast<Eigen::Index>(i)) += go.row(idxs[p][i]);
    }
  });
}

Var dropout(Var x, double p, RngStream& rng, bool train) {
  if (!train || p <= 0.0) return x;
  Graph& g = *x.graph();
  int ix = x.id();
  double keep = 1.0 - p;
  Mat mask(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < mask.rows(); ++i)
    for (Eigen::Index j = 0; j < mask.cols(); ++j)
      mask(i, j) = rng.uniform() < keep ? 1.0 / keep : 0.0;
  return g.make(x.val().cwiseProduct(mask), {x}, [ix, mask](Graph& g, int self) {
    if (g.needs(ix)) g.grad_of(ix) += g.grad_of(self).cwiseProduct(mask);
  });
}

// ---- normalization ----

Var layer_norm(Var x, Var gain, Var bias) {
  Graph& g = *x.graph();
  int d = static_cast<int>(x.cols());
  ensure(gain.rows() == 1 && gain.cols() == d, ErrorKind::structural, "layer_norm: bad gain shape");
  ensure(bias.rows() == 1 && bias.cols() == d, ErrorKind::structural, "layer_norm: bad bias shape");
  int ix = x.id(), ig = gain.id(), ib = bias.id();
  const Mat& xv = x.val();
  Eigen::VectorXd mu = xv.rowwise().mean();
  Mat centered = xv.colwise() - mu;
  Eigen::VectorXd inv_sigma =
      (centered.rowwise().squaredNorm() / d).unaryExpr([](double t) { return 1.0 / std::sqrt(t + 1e-5); });
  Mat xh = (centered.array().colwise() * inv_sigma.array()).matrix();
  Mat v = ((xh.array().rowwise() * gain.val().row(0).array()).rowwise() + bias.val().row(0).array())
              .matrix();
  return g.make(std::move(v), {x, gain, bias},
                [ix, ig, ib, xh = std::move(xh), inv_sigma = std::move(inv_sigma), d](Graph& g, int self) {
                  const Mat& go = g.grad_of(self);
                  if (g.needs(ib)) g.grad_of(ib) += go.colwise().sum();
                  if (g.needs(ig)) g.grad_of(ig) += go.cwiseProduct(xh).colwise().sum();
                  if (!g.needs(ix)) return;
                  Mat h = (go.array().rowwise() * g.value_of(ig).row(0).array()).matrix();
                  Eigen::VectorXd h_mean = h.rowwise().mean();
                  Eigen::VectorXd hx_mean = h.cwiseProduct(xh).rowwise().mean();
                  Mat dx = h;
                  dx.colwise() -= h_mean;
                  dx -= (xh.array().colwise() * hx_mean.array()).matrix();
                  g.grad_of(ix) += (dx.array().colwise() * inv_sigma.array()).matrix();
                });
}

Var adain(Var content, Var style, int frames) {
  Graph& g = *content.graph();
  int c = static_cast<int>(content.rows());
  int total = static_cast<int>(content.cols());
  ensure(frames > 0 && total % frames == 0, ErrorKind::structural, "adain: bad frame count");
  int hw = total / frames;
  ensure(style.rows() == frames && style.cols() == 2 * c, ErrorKind::structural, "adain: bad style shape");
  int ix = content.id(), is = style.id();
  const Mat& xv = content.val();
  const Mat& sv = style.val();
  Mat xh(c, total);
  Mat sd(c, frames);
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> floored(c, frames);
  Mat v(c, total);
  for (int f = 0; f < frames; ++f) {
    for (int ch = 0; ch < c; ++ch) {
      auto seg = xv.row(ch).segment(f * hw, hw);
      double mu = seg.mean();
      double var = std::max(0.0, seg.squaredNorm() / hw - mu * mu);
      double raw = std::sqrt(var);
      double s = std::max(raw, 1e-5);
      sd(ch, f) = s;
      floored(ch, f) = raw < 1e-5;
      auto norm = ((seg.array() - mu) / s).matrix();
      xh.row(ch).segment(f * hw, hw) = norm;
      v.row(ch).segment(f * hw, hw) = (sv(f, ch) * norm.array() + sv(f, c + ch)).matrix();
    }
  }
  return g.make(std::move(v), {content, style},
                [ix, is, frames, hw, c, xh = std::move(xh), sd = std::move(sd),
                 floored = std::move(floored)](Graph& g, int self) {
                  const Mat& go = g.grad_of(self);
                  const Mat& sv = g.value_of(is);
                  bool nx = g.needs(ix), ns = g.needs(is);
                  for (int f = 0; f < frames; ++f) {
                    for (int ch = 0; ch < c; ++ch) {
                      auto gseg = go.row(ch).segment(f * hw, hw);
                      auto nseg = xh.row(ch).segment(f * hw, hw);
                      if (ns) {
                        Mat& gs = g.grad_of(is);
                        gs(f, ch) += gseg.cwiseProduct(nseg).sum();
                        gs(f, c + ch) += gseg.sum();
                      }
                      if (nx) {
                        double gm = gseg.mean();
                        double k = sv(f, ch) / sd(ch, f);
                        auto dst = g.grad_of(ix).row(ch).segment(f * hw, hw);
                        if (floored(ch, f)) {
                          dst += k * (gseg.array() - gm).matrix();
                        } else {
                          double gn = gseg.cwiseProduct(nseg).mean();
                          dst += k * (gseg.array() - gm - nseg.array() * gn).matrix();
                        }
                      }
                    }
                  }
                });
}

// ---- attention ----

Var block_attention(Var q, Var k, Var v, int q_block, int kv_block, bool causal) {
  Graph& g = *q.graph();
  ensure(q.cols() == k.cols(), ErrorKind::structural, "block_attention: q/k dim mismatch");
  ensure(k.rows() == v.rows(), ErrorKind::structural, "block_attention: k/v row mismatch");
  ensure(q_block > 0 && q.rows() % q_block == 0, ErrorKind::structural, "block_attention: bad q_block");
  int nb = static_cast<int>(q.rows()) / q_block;
  ensure(k.rows() == static_cast<Eigen::Index>(nb) * kv_block, ErrorKind::structural,
         "block_attention: kv rows inconsistent with block count");
  if (causal)
    ensure(q_block == kv_block, ErrorKind::structural, "block_attention: causal needs square blocks");
  int iq = q.id(), ik = k.id(), iv = v.id();
  double sc = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Mat out(q.rows(), v.cols());
  std::vector<Mat> probs(nb);
  for (int b = 0; b < nb; ++b) {
    Mat s = sc * q.val().middleRows(b * q_block, q_block) *
            k.val().middleRows(b * kv_block, kv_block).transpose();
    if (causal) {
      for (int r = 0; r < q_block; ++r)
        for (int j = r + 1; j < kv_block; ++j) s(r, j) = -std::numeric_limits<double>::infinity();
    }
    for (int r = 0; r < q_block; ++r) {
      double mx = s.row(r).maxCoeff();
      Eigen::ArrayXd e = (s.row(r).transpose().array() - mx).exp();
      s.row(r) = (e / e.sum()).matrix().transpose();
    }
    probs[b] = std::move(s);
    out.middleRows(b * q_block, q_block) = probs[b] * v.val().middleRows(b * kv_block, kv_block);
  }
  return g.make(std::move(out), {q, k, v},
                [iq, ik, iv, q_block, kv_block, nb, sc, probs = std::move(probs)](Graph& g, int self) {
                  const Mat& go = g.grad_of(self);
                  bool nq = g.needs(iq), nk = g.needs(ik), nv = g.needs(iv);
                  for (int b = 0; b < nb; ++b) {
                    const Mat& p = probs[b];
                    auto gb = go.middleRows(b * q_block, q_block);
                    if (nv)
                      g.grad_of(iv).middleRows(b * kv_block, kv_block).noalias() += p.transpose() * gb;
                    if (!nq && !nk) continue;
                    Mat dp = gb * g.value_of(iv).middleRows(b * kv_block, kv_block).transpose();
                    Eigen::VectorXd row_dot = dp.cwiseProduct(p).rowwise().sum();
                    Mat ds = p.cwiseProduct(dp.colwise() - row_dot);
                    if (nq)
                      g.grad_of(iq).middleRows(b * q_block, q_block).noalias() +=
                          sc * ds * g.value_of(ik).middleRows(b * kv_block, kv_block);
                    if (nk)
                      g.grad_of(ik).middleRows(b * kv_block, kv_block).noalias() +=
                          sc * ds.transpose() * g.value_of(iq).middleRows(b * q_block, q_block);
                  }
                });
}

// ---- losses ----

Var cross_entropy_sum(Var logits, std::vector<int> targets) {
  Graph& g = *logits.graph();
  ensure(static_cast<Eigen::Index>(targets.size()) == logits.rows(), ErrorKind::structural,
         "cross_entropy_sum: target count mismatch");
  int il = logits.id();
  const Mat& z = logits.val();
  Mat p(z.rows(), z.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    ensure(targets[i] >= 0 && targets[i] < z.cols(), ErrorKind::structural,
           "cross_entropy_sum: target out of range");
    double mx = z.row(i).maxCoeff();
    Eigen::ArrayXd e = (z.row(i).transpose().array() - mx).exp();
    double s = e.sum();
    p.row(i) = (e / s).matrix().transpose();
    total += mx + std::log(s) - z(i, targets[i]);
  }
  Mat v(1, 1);
  v(0, 0) = total;
  return g.make(std::move(v), {logits},
                [il, p = std::move(p), targets = std::move(targets)](Graph& g, int self) {
                  if (!g.needs(il)) return;
                  double go = g.grad_of(self)(0, 0);
                  Mat& gl = g.grad_of(il);
                  gl += go * p;
                  for (Eigen::Index i = 0; i < gl.rows(); ++i) gl(i, targets[i]) -= go;
                });
}

Var group_l2_rows(Var x, int group) {
  Graph& g = *x.graph();
  ensure(group >= 1 && x.cols() % group == 0, ErrorKind::structural,
         "group_l2_rows: columns must divide into groups");
  int ix = x.id();
  const Mat& xv = x.val();
  const Eigen::Index m = xv.cols() / group;
  Mat v(xv.rows(), m);
  for (Eigen::Index i = 0; i < xv.rows(); ++i)
    for (Eigen::Index j = 0; j < m; ++j) v(i, j) = xv.row(i).segment(j * group, group).norm();
  return g.make(v, {x}, [ix, group, m, v](Graph& g, int self) {
    if (!g.needs(ix)) return;
    const Mat& go = g.grad_of(self);
    const Mat& xv = g.value_of(ix);
    Mat& gx = g.grad_of(ix);
    for (Eigen::Index i = 0; i < xv.rows(); ++i)
      for (Eigen::Index j = 0; j < m; ++j) {
        if (v(i, j) <= 0.0) continue;
        gx.row(i).segment(j * group, group) +=
            (go(i, j) / v(i, j)) * xv.row(i).segment(j * group, group);
      }
  });
}

// ---- convolution / resampling ----

Var conv1d(Var x, Var w, Var b, int ksize) {
  Graph& g = *x.graph();
  ensure(ksize % 2 == 1, ErrorKind::structural, "conv1d: kernel size must be odd");
  int len = static_cast<int>(x.rows());
  int cin = static_cast<int>(x.cols());
  ensure(w.rows() == static_cast<Eigen::Index>(ksize) * cin, ErrorKind::structural,
         "conv1d: weight rows must be ksize*cin");
  int cout = static_cast<int>(w.cols());
  ensure(b.rows() == 1 && b.cols() == cout, ErrorKind::structural, "conv1d: bad bias shape");
  int pad = ksize / 2;
  Mat im(len, ksize * cin);
  im.setZero();
  const Mat& xv = x.val();
  for (int i = 0; i < len; ++i)
    for (int t = 0; t < ksize; ++t) {
      int src = i + t - pad;
      if (src < 0 || src >= len) continue;
      im.block(i, t * cin, 1, cin) = xv.row(src);
    }
  Mat v = im * w.val();
  v.rowwise() += b.val().row(0);
  int ix = x.id(), iw = w.id(), ib = b.id();
  return g.make(std::move(v), {x, w, b},
                [ix, iw, ib, ksize, pad, len, cin, im = std::move(im)](Graph& g, int self) {
                  const Mat& go = g.grad_of(self);
                  if (g.needs(ib)) g.grad_of(ib) += go.colwise().sum();
                  if (g.needs(iw)) g.grad_of(iw).noalias() += im.transpose() * go;
                  if (!g.needs(ix)) return;
                  Mat dim = go * g.value_of(iw).transpose();
                  Mat& gx = g.grad_of(ix);
                  for (int i = 0; i < len; ++i)
                    for (int t = 0; t < ksize; ++t) {
                      int src = i + t - pad;
                      if (src < 0 || src >= len) continue;
                      gx.row(src) += dim.block(i, t * cin, 1, cin);
                    }
                });
}

Var resample_rows_linear(Var x, int out_rows) {
  Graph& g = *x.graph();
  ensure(out_rows > 0, ErrorKind::structural, "resample_rows_linear: out_rows must be positive");
  int in_rows = static_cast<int>(x.rows());
  int ix = x.id();
  std::vector<int> i0(out_rows), i1(out_rows);
  std::vector<double> frac(out_rows);
  for (int i = 0; i < out_rows; ++i) {
    double pos = out_rows == 1 ? 0.0
                               : static_cast<double>(i) * (in_rows - 1) / (out_rows - 1);
    i0[i] = std::min(static_cast<int>(pos), in_rows - 1);
    i1[i] = std::min(i0[i] + 1, in_rows - 1);
    frac[i] = pos - i0[i];
  }
  Mat v(out_rows, x.cols());
  for (int i = 0; i < out_rows; ++i)
    v.row(i) = (1.0 - frac[i]) * x.val().row(i0[i]) + frac[i] * x.val().row(i1[i]);
  return g.make(std::move(v), {x},
                [ix, i0 = std::move(i0), i1 = std::move(i1), frac = std::move(frac)](Graph& g, int self) {
                  if (!g.needs(ix)) return;
                  const Mat& go = g.grad_of(self);
                  Mat& gx = g.grad_of(ix);
                  for (size_t i = 0; i < i0.size(); ++i) {
                    auto r = static_cast<Eigen::Index>(i);
                    gx.row(i0[i]) += (1.0 - frac[i]) * go.row(r);
                    gx.row(i1[i]) += frac[i] * go.row(r);
                  }
                });
}

namespace {

// im2col for per-frame 2-D convolution; patch row layout c*k*k + dy*k + dx.
Mat im2col2d(const Mat& x, const ConvDims& d, int cin, int ksize) {
  int pad = ksize / 2;
  Mat im = Mat::Zero(static_cast<Eigen::Index>(cin) * ksize * ksize, d.cols());
  for (int f = 0; f < d.frames; ++f)
    for (int y = 0; y < d.h; ++y)
      for (int xx = 0; xx < d.w; ++xx) {
        int col = f * d.pixels() + y * d.w + xx;
        for (int dy = 0; dy < ksize; ++dy) {
          int sy = y + dy - pad;
          if (sy < 0 || sy >= d.h) continue;
          for (int dx = 0; dx < ksize; ++dx) {
            int sx = xx + dx - pad;
            if (sx < 0 || sx >= d.w) continue;
            int src = f * d.pixels() + sy * d.w + sx;
            for (int c = 0; c < cin; ++c) im(c * ksize * ksize + dy * ksize + dx, col) = x(c, src);
          }
        }
      }
  return im;
}

void col2im2d(const Mat& dim, const ConvDims& d, int cin, int ksize, Mat& gx) {
  int pad = ksize / 2;
  for (int f = 0; f < d.frames; ++f)
    for (int y = 0; y < d.h; ++y)
      for (int xx = 0; xx < d.w; ++xx) {
        int col = f * d.pixels() + y * d.w + xx;
        for (int dy = 0; dy < ksize; ++dy) {
          int sy = y + dy - pad;
          if (sy < 0 || sy >= d.h) continue;
          for (int dx = 0; dx < ksize; ++dx) {
            int sx = xx + dx - pad;
            if (sx < 0 || sx >= d.w) continue;
            int src = f * d.pixels() + sy * d.w + sx;
            for (int c = 0; c < cin; ++c) gx(c, src) += dim(c * ksize * ksize + dy * ksize + dx, col);
          }
        }
      }
}

}  // namespace

Var conv2d(Var x, Var w, Var b, ConvDims d, int ksize) {
  Graph& g = *x.graph();
  ensure(ksize % 2 == 1, ErrorKind::structural, "conv2d: kernel size must be odd");
  ensure(x.cols() == d.cols(), ErrorKind::structural, "conv2d: input cols mismatch dims");
  int cin = static_cast<int>(x.rows());
  ensure(w.cols() == static_cast<Eigen::Index>(cin) * ksize * ksize, ErrorKind::structural,
         "conv2d: weight cols must be cin*k*k");
  int cout = static_cast<int>(w.rows());
  ensure(b.rows() == cout && b.cols() == 1, ErrorKind::structural, "conv2d: bad bias shape");
  Mat im = im2col2d(x.val(), d, cin, ksize);
  Mat v = w.val() * im;
  v.colwise() += b.val().col(0);
  int ix = x.id(), iw = w.id(), ib = b.id();
  return g.make(std::move(v), {x, w, b},
                [ix, iw, ib, d, cin, ksize, im = std::move(im)](Graph& g, int self) {
                  const Mat& go = g.grad_of(self);
                  if (g.needs(ib)) g.grad_of(ib) += go.rowwise().sum();
                  if (g.needs(iw)) g.grad_of(iw).noalias() += go * im.transpose();
                  if (!g.needs(ix)) return;
                  Mat dim = g.value_of(iw).transpose() * go;
                  col2im2d(dim, d, cin, ksize, g.grad_of(ix));
                });
}

Var avg_pool2(Var x, ConvDims d) {
  Graph& g = *x.graph();
  ensure(d.h % 2 == 0 && d.w % 2 == 0, ErrorKind::structural, "avg_pool2: H and W must be even");
  ensure(x.cols() == d.cols(), ErrorKind::structural, "avg_pool2: input cols mismatch dims");
  int c = static_cast<int>(x.rows());
  int oh = d.h / 2, ow = d.w / 2;
  Mat v(c, static_cast<Eigen::Index>(d.frames) * oh * ow);
  const Mat& xv = x.val();
  for (int f = 0; f < d.frames; ++f)
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx) {
        int a = f * d.pixels() + 2 * y * d.w + 2 * xx;
        v.col(f * oh * ow + y * ow + xx) =
            0.25 * (xv.col(a) + xv.col(a + 1) + xv.col(a + d.w) + xv.col(a + d.w + 1));
      }
  int ix = x.id();
  return g.make(std::move(v), {x}, [ix, d, oh, ow](Graph& g, int self) {
    if (!g.needs(ix)) return;
    const Mat& go = g.grad_of(self);
    Mat& gx = g.grad_of(ix);
    for (int f = 0; f < d.frames; ++f)
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx) {
          int a = f * d.pixels() + 2 * y * d.w + 2 * xx;
          auto gcol = 0.25 * go.col(f * oh * ow + y * ow + xx);
          gx.col(a) += gcol;
          gx.col(a + 1) += gcol;
          gx.col(a + d.w) += gcol;
          gx.col(a + d.w + 1) += gcol;
        }
  });
}

Var upsample2(Var x, ConvDims d) {
  Graph& g = *x.graph();
  ensure(x.cols() == d.cols(), ErrorKind::structural, "upsample2: input cols mismatch dims");
  int c = static_cast<int>(x.rows());
  int oh = d.h * 2, ow = d.w * 2;
  Mat v(c, static_cast<Eigen::Index>(d.frames) * oh * ow);
  const Mat& xv = x.val();
  for (int f = 0; f < d.frames; ++f)
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx)
        v.col(f * oh * ow + y * ow + xx) = xv.col(f * d.pixels() + (y / 2) * d.w + xx / 2);
  int ix = x.id();
  return g.make(std::move(v), {x}, [ix, d, oh, ow](Graph& g, int self) {
    if (!g.needs(ix)) return;
    const Mat& go = g.grad_of(self);
    Mat& gx = g.grad_of(ix);
    for (int f = 0; f < d.frames; ++f)
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx)
          gx.col(f * d.pixels() + (y / 2) * d.w + xx / 2) += go.col(f * oh * ow + y * ow + xx);
  });
}

Var to_time_major(Var x, int frames, int hw) {
  Graph& g = *x.graph();
  ensure(x.cols() == static_cast<Eigen::Index>(frames) * hw, ErrorKind::structural,
         "to_time_major: cols mismatch");
  int c = static_cast<int>(x.rows());
  Mat v(static_cast<Eigen::Index>(hw) * frames, c);
  const Mat& xv = x.val();
  for (int f = 0; f < frames; ++f)
    for (int p = 0; p < hw; ++p) v.row(static_cast<Eigen::Index>(p) * frames + f) = xv.col(f * hw + p);
  int ix = x.id();
  return g.make(std::move(v), {x}, [ix, frames, hw](Graph& g, int self) {
    if (!g.needs(ix)) return;
    const Mat& go = g.grad_of(self);
    Mat& gx = g.grad_of(ix);
    for (int f = 0; f < frames; ++f)
      for (int p = 0; p < hw; ++p)
        gx.col(f * hw + p) += go.row(static_cast<Eigen::Index>(p) * frames + f).transpose();
  });
}

Var from_time_major(Var x, int frames, int hw) {
  Graph& g = *x.graph();
  ensure(x.rows() == static_cast<Eigen::Index>(hw) * frames, ErrorKind::structural,
         "from_time_major: rows mismatch");
  int c = static_cast<int>(x.cols());
  Mat v(c, static_cast<Eigen::Index>(frames) * hw);
  const Mat& xv = x.val();
  for (int f = 0; f < frames; ++f)
    for (int p = 0; p < hw; ++p) v.col(f * hw + p) = xv.row(static_cast<Eigen::Index>(p) * frames + f);
  int ix = x.id();
  return g.make(std::move(v), {x}, [ix, frames, hw](Graph& g, int self) {
    if (!g.needs(ix)) return;
    const Mat& go = g.grad_of(self);
    Mat& gx = g.grad_of(ix);
    for (int f = 0; f < frames; ++f)
      for (int p = 0; p < hw; ++p)
        gx.row(static_cast<Eigen::Index>(p) * frames + f) += go.col(f * hw + p).transpose();
  });
}

Var interleave_cols(Var a, Var b, int frames) {
  Graph& g = *a.graph();
  ensure(a.rows() == b.rows(), ErrorKind::structural, "interleave_cols: row mismatch");
  ensure(a.cols() % frames == 0 && b.cols() % frames == 0, ErrorKind::structural,
         "interleave_cols: cols not divisible by frames");
  int na = static_cast<int>(a.cols()) / frames;
  int nb = static_cast<int>(b.cols()) / frames;
  Mat v(a.rows(), a.cols() + b.cols());
  for (int f = 0; f < frames; ++f) {
    v.middleCols(static_cast<Eigen::Index>(f) * (na + nb), na) = a.val().middleCols(f * na, na);
    v.middleCols(static_cast<Eigen::Index>(f) * (na + nb) + na, nb) = b.val().middleCols(f * nb, nb);
  }
  int ia = a.id(), ib = b.id();
  return g.make(std::move(v), {a, b}, [ia, ib, frames, na, nb](Graph& g, int self) {
    const Mat& go = g.grad_of(self);
    for (int f = 0; f < frames; ++f) {
      if (g.needs(ia))
        g.grad_of(ia).middleCols(f * na, na) += go.middleCols(static_cast<Eigen::Index>(f) * (na + nb), na);
      if (g.needs(ib))
        g.grad_of(ib).middleCols(f * nb, nb) +=
            go.middleCols(static_cast<Eigen::Index>(f) * (na + nb) + na, nb);
    }
  });
}

}  // namespace choreo::ad
