// Copyright (C) 2026 the choreo authors
// SPDX-License-Identifier: Apache-2.0
#include "choreo/motion_gpt.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <limits>

#include "choreo/checkpoint.hpp"
#include "choreo/error.hpp"

namespace choreo {

using ad::Graph;
using ad::Mat;
using ad::Var;
using nlohmann::json;

// ---- layout ----

bool SequenceLayout::is_music_slot(int pos) const {
  if (pos < context_positions()) return false;
  return (pos - context_positions()) % frame_positions() < music_slots;
}

int SequenceLayout::frame_of(int pos) const {
  if (pos < context_positions()) return -1;
  return (pos - context_positions()) / frame_positions();
}

int SequenceLayout::part_of(int pos) const {
  if (pos < context_positions()) return (pos % tokens_per_frame()) / tokens_per_part;
  int off = (pos - context_positions()) % frame_positions();
  if (off < music_slots) return -1;
  return (off - music_slots) / tokens_per_part;
}

int SequenceLayout::slot_of(int pos) const {
  if (pos < context_positions()) return pos % tokens_per_part;
  int off = (pos - context_positions()) % frame_positions();
  if (off < music_slots) return -1;
  return (off - music_slots) % tokens_per_part;
}

int SequenceLayout::position_of(int frame, int part, int slot) const {
  return context_positions() + frame * frame_positions() + music_slots +
         part * tokens_per_part + slot;
}

int SequenceLayout::music_position_of(int frame) const {
  return context_positions() + frame * frame_positions();
}

void SequenceLayout::check_valid() const {
  ensure(context_frames >= 1 && frames >= 1 && parts >= 1 && tokens_per_part >= 1,
         ErrorKind::config, "layout: sizes must be positive");
  ensure(music_slots == 1, ErrorKind::config, "layout: exactly one music slot per frame");
  ensure(overlap >= 0 && overlap < frames, ErrorKind::config,
         "layout: overlap must be in [0, frames)");
}

std::vector<int> evenly_spaced_frames(int total, int count) {
  ensure(total >= 1 && count >= 1, ErrorKind::validation, "evenly_spaced_frames: empty range");
  std::vector<int> out(count);
  if (count == 1) return out;
  for (int i = 0; i < count; ++i)
    out[i] = static_cast<int>(
        std::llround(static_cast<double>(i) * (total - 1) / static_cast<double>(count - 1)));
  return out;
}

std::vector<int> plan_segments(int n_frames, const SequenceLayout& layout) {
  ensure(n_frames >= 1, ErrorKind::validation, "plan_segments: need at least one frame");
  std::vector<int> out{0};
  while (out.back() + layout.frames < n_frames)
    out.push_back(out.back() + layout.frames - layout.overlap);
  return out;
}

Eigen::VectorXd summarize_music(const MusicTrackFeatures& music) {
  ensure(music.length() >= 1, ErrorKind::validation, "summarize_music: empty track");
  Eigen::VectorXd s(music.dim() + 1);
  s.head(music.dim()) = music.embed.colwise().mean().transpose();
  double beats = 0.0;
  for (uint8_t b : music.beat_onehot) beats += b ? 1.0 : 0.0;
  s(music.dim()) = beats / static_cast<double>(music.length());
  return s;
}

GlobalContext GlobalContext::all_sentinel(const SequenceLayout& layout,
                                          const Eigen::VectorXd& style) {
  GlobalContext ctx;
  ctx.style_vector = style;
  ctx.context_tokens.assign(layout.context_positions(), -1);
  return ctx;
}

// ---- configs ----

void MotionGptConfig::check_valid() const {
  layout.check_valid();
  ensure(vocab_per_part >= 2, ErrorKind::config, "gpt: vocabulary too small");
  ensure(d_model >= 1 && layers >= 1 && heads >= 1 && mlp_mult >= 1, ErrorKind::config,
         "gpt: sizes must be positive");
  ensure(d_model % heads == 0, ErrorKind::config, "gpt: d_model must divide into heads");
  ensure(music_dim >= 1 && beat_embed_dim >= 1, ErrorKind::config, "gpt: music dims");
  ensure(dropout >= 0.0 && dropout < 1.0, ErrorKind::config, "gpt: dropout in [0,1)");
}

void GenerationParams::check_valid() const {
  ensure(temperature > 0.0, ErrorKind::config, "generation: temperature must be positive");
  ensure(top_k >= 1, ErrorKind::config, "generation: top_k must be at least 1");
}

int TrainingSequence::masked_in() const {
  int n = 0;
  for (int t : targets) n += t >= 0 ? 1 : 0;
  return n;
}

TrainingSequence build_training_sequence(const SequenceLayout& layout, const PartTokenGrid& grid,
                                         const MusicTrackFeatures& music,
                                         const GlobalContext& ctx, int vocab_per_part) {
  layout.check_valid();
  grid.check_valid(vocab_per_part);
  ensure(grid.t == layout.frames && grid.b == layout.parts && grid.k == layout.tokens_per_part,
         ErrorKind::validation, "training sequence: grid does not match layout");
  ensure(music.length() == layout.frames, ErrorKind::validation,
         "training sequence: music rows misaligned with the grid");
  ensure(static_cast<int>(ctx.context_tokens.size()) == layout.context_positions(),
         ErrorKind::validation, "training sequence: context token count mismatch");
  const int shared_vocab = layout.parts * vocab_per_part;
  for (int t : ctx.context_tokens)
    ensure(t >= -1 && t < shared_vocab, ErrorKind::validation,
           "training sequence: context token out of range");

  const int n = layout.total_positions();
  TrainingSequence seq;
  seq.tokens.assign(n, -1);
  seq.targets.assign(n, -1);
  seq.target_part.assign(n, -1);
  for (int i = 0; i < layout.context_positions(); ++i) seq.tokens[i] = ctx.context_tokens[i];
  for (int t = 0; t < layout.frames; ++t)
    for (int j = 0; j < layout.parts; ++j)
      for (int k = 0; k < layout.tokens_per_part; ++k)
        seq.tokens[layout.position_of(t, j, k)] = j * vocab_per_part + grid.at(t, j, k);
  for (int i = 0; i + 1 < n; ++i) {
    int next = i + 1;
    if (layout.in_context(next) || layout.is_music_slot(next)) continue;
    seq.targets[i] = grid.at(layout.frame_of(next), layout.part_of(next), layout.slot_of(next));
    seq.target_part[i] = layout.part_of(next);
  }
  seq.music_embed = music.embed;
  seq.music_beat = music.beat_onehot;
  seq.style = ctx.style_vector;
  return seq;
}

// ---- model ----

namespace {

json layout_to_json(const SequenceLayout& l) {
  return json{{"context_frames", l.context_frames},
              {"frames", l.frames},
              {"parts", l.parts},
              {"tokens_per_part", l.tokens_per_part},
              {"music_slots", l.music_slots},
              {"overlap", l.overlap}};
}

SequenceLayout layout_from_json(const json& j) {
  SequenceLayout l;
  l.context_frames = j.at("context_frames").get<int>();
  l.frames = j.at("frames").get<int>();
  l.parts = j.at("parts").get<int>();
  l.tokens_per_part = j.at("tokens_per_part").get<int>();
  l.music_slots = j.at("music_slots").get<int>();
  l.overlap = j.at("overlap").get<int>();
  return l;
}

json gpt_config_to_json(const MotionGptConfig& c) {
  return json{{"layout", layout_to_json(c.layout)},
              {"vocab_per_part", c.vocab_per_part},
              {"d_model", c.d_model},
              {"layers", c.layers},
              {"heads", c.heads},
              {"mlp_mult", c.mlp_mult},
              {"music_dim", c.music_dim},
              {"beat_embed_dim", c.beat_embed_dim},
              {"dropout", c.dropout},
              {"use_music_style", c.use_music_style},
              {"use_motion_context", c.use_motion_context},
              {"seed", c.seed}};
}

MotionGptConfig gpt_config_from_json(const json& j) {
  MotionGptConfig c;
  try {
    c.layout = layout_from_json(j.at("layout"));
    c.vocab_per_part = j.at("vocab_per_part").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.layers = j.at("layers").get<int>();
    c.heads = j.at("heads").get<int>();
    c.mlp_mult = j.at("mlp_mult").get<int>();
    c.music_dim = j.at("music_dim").get<int>();
    c.beat_embed_dim = j.at("beat_embed_dim").get<int>();
    c.dropout = j.at("dropout").get<double>();
    c.use_music_style = j.at("use_music_style").get<bool>();
    c.use_motion_context = j.at("use_motion_context").get<bool>();
    c.seed = j.at("seed").get<uint64_t>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, std::string("gpt config fields: ") + e.what());
  }
  return c;
}

// rowwise layer norm matching the graph op (biased variance, eps 1e-5)
Mat ln_rows(const Mat& x, const Mat& gain, const Mat& bias) {
  Eigen::VectorXd mu = x.rowwise().mean();
  Mat centered = x.colwise() - mu;
  Eigen::VectorXd inv_sigma =
      (centered.rowwise().squaredNorm() / static_cast<double>(x.cols()))
          .unaryExpr([](double t) { return 1.0 / std::sqrt(t + 1e-5); });
  Mat xh = (centered.array().colwise() * inv_sigma.array()).matrix();
  return ((xh.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array()).matrix();
}

double gelu_scalar(double t) { return 0.5 * t * (1.0 + std::erf(t * 0.7071067811865476)); }

}  // namespace

MotionGpt MotionGpt::create(const MotionGptConfig& cfg) {
  cfg.check_valid();
  MotionGpt m;
  m.cfg_ = cfg;
  RngStream rng(cfg.seed);
  const int d = cfg.d_model;
  const int shared_vocab = cfg.layout.parts * cfg.vocab_per_part;

  m.tok_embed_ = &m.params_.create("tok.embed", shared_vocab + 1, d);
  nn::init_normal(*m.tok_embed_, rng, 0.02);
  m.pos_embed_ = &m.params_.create("pos.embed", cfg.layout.total_positions(), d);
  nn::init_normal(*m.pos_embed_, rng, 0.02);
  m.beat_embed_ = &m.params_.create("music.beat_embed", 2, cfg.beat_embed_dim);
  nn::init_normal(*m.beat_embed_, rng, 0.02);
  m.music_proj_ = nn::Linear::create(m.params_, "music.proj", cfg.music_dim + cfg.beat_embed_dim,
                                     d, rng, 0.02);
  m.style_proj_ = nn::Linear::create(m.params_, "style.proj", cfg.music_dim + 1, d, rng, 0.02);

  // residual branches shrink with depth as in standard GPT initializations
  const double resid_std = 0.02 / std::sqrt(2.0 * cfg.layers);
  for (int l = 0; l < cfg.layers; ++l) {
    std::string base = "blk" + std::to_string(l) + ".";
    Block b;
    b.ln1 = nn::LayerNorm::create(m.params_, base + "ln1", d);
    b.q = nn::Linear::create(m.params_, base + "q", d, d, rng, 0.02);
    b.k = nn::Linear::create(m.params_, base + "k", d, d, rng, 0.02);
    b.v = nn::Linear::create(m.params_, base + "v", d, d, rng, 0.02);
    b.o = nn::Linear::create(m.params_, base + "o", d, d, rng, resid_std);
    b.ln2 = nn::LayerNorm::create(m.params_, base + "ln2", d);
    b.fc1 = nn::Linear::create(m.params_, base + "fc1", d, cfg.mlp_mult * d, rng, 0.02);
    b.fc2 = nn::Linear::create(m.params_, base + "fc2", cfg.mlp_mult * d, d, rng, resid_std);
    m.blocks_.push_back(b);
  }
  m.final_norm_ = nn::LayerNorm::create(m.params_, "final", d);
  // zero-initialized heads: untrained logits are exactly uniform
  for (int p = 0; p < cfg.layout.parts; ++p)
    m.heads_.push_back(nn::Linear::create(m.params_, "head.p" + std::to_string(p), d,
                                          cfg.vocab_per_part, rng, 0.0));
  return m;
}

Var MotionGpt::embed_sequence(Graph& g, const TrainingSequence& seq, bool train,
                              RngStream* rng) const {
  (void)train;
  (void)rng;
  const SequenceLayout& lay = cfg_.layout;
  const int n = lay.total_positions();
  ensure(seq.length() == n, ErrorKind::validation, "sequence length does not match the layout");
  ensure(seq.music_embed.rows() == lay.frames && seq.music_embed.cols() == cfg_.music_dim,
         ErrorKind::validation, "music embedding shape does not match the model");
  ensure(static_cast<int>(seq.music_beat.size()) == lay.frames, ErrorKind::validation,
         "beat flag count does not match the layout");
  if (cfg_.use_music_style)
    ensure(seq.style.size() == cfg_.music_dim + 1, ErrorKind::validation,
           "style summary width does not match the model");

  std::vector<int> tok_rows, tok_pos, music_pos, beat_rows, ctx_pos;
  for (int i = 0; i < n; ++i) {
    if (lay.is_music_slot(i)) {
      music_pos.push_back(i);
      continue;
    }
    int row = seq.tokens[i];
    if (lay.in_context(i)) {
      ctx_pos.push_back(i);
      if (!cfg_.use_motion_context || row < 0) row = sentinel_row();
    } else {
      ensure(row >= 0 && row < sentinel_row(), ErrorKind::validation,
             "motion token out of vocabulary");
    }
    tok_rows.push_back(row);
    tok_pos.push_back(i);
  }
  for (uint8_t b : seq.music_beat) beat_rows.push_back(b ? 1 : 0);

  Var tok = ad::gather_rows(g.param(*tok_embed_), tok_rows);
  Var music_in =
      ad::concat_cols({g.input(seq.music_embed), ad::gather_rows(g.param(*beat_embed_), beat_rows)});
  Var music = music_proj_(g, music_in);
  Var x = ad::scatter_rows(g, n, cfg_.d_model, {{tok, tok_pos}, {music, music_pos}});
  x = ad::add(x, g.param(*pos_embed_));
  if (cfg_.use_music_style) {
    Var style_in = g.input(seq.style.transpose());
    Var srow = style_proj_(g, style_in);
    Var ctx_block = ad::broadcast_row(srow, static_cast<int>(ctx_pos.size()));
    x = ad::add(x, ad::scatter_rows(g, n, cfg_.d_model, {{ctx_block, ctx_pos}}));
  }
  return x;
}

Var MotionGpt::trunk(Graph& g, Var x, bool train, RngStream* rng) const {
  const int n = static_cast<int>(x.rows());
  const int hd = cfg_.d_model / cfg_.heads;
  for (const Block& b : blocks_) {
    Var h = b.ln1(g, x);
    Var q = b.q(g, h), k = b.k(g, h), v = b.v(g, h);
    std::vector<Var> heads_out;
    for (int hh = 0; hh < cfg_.heads; ++hh)
      heads_out.push_back(ad::block_attention(ad::cols(q, hh * hd, hd), ad::cols(k, hh * hd, hd),
                                              ad::cols(v, hh * hd, hd), n, n, true));
    Var att = b.o(g, ad::concat_cols(heads_out));
    if (train && cfg_.dropout > 0.0) att = ad::dropout(att, cfg_.dropout, *rng, true);
    x = ad::add(x, att);
    Var m = b.fc2(g, ad::gelu(b.fc1(g, b.ln2(g, x))));
    if (train && cfg_.dropout > 0.0) m = ad::dropout(m, cfg_.dropout, *rng, true);
    x = ad::add(x, m);
  }
  return final_norm_(g, x);
}

Var MotionGpt::sequence_loss(Graph& g, const TrainingSequence& seq, bool train, RngStream* rng,
                             int* n_targets) const {
  Var t = trunk(g, embed_sequence(g, seq, train, rng), train, rng);
  Var loss;
  int count = 0;
  for (int p = 0; p < cfg_.layout.parts; ++p) {
    std::vector<int> rows_p, targets_p;
    for (int i = 0; i < seq.length(); ++i)
      if (seq.target_part[i] == p) {
        rows_p.push_back(i);
        targets_p.push_back(seq.targets[i]);
      }
    if (rows_p.empty()) continue;
    count += static_cast<int>(rows_p.size());
    Var logits = heads_[p](g, ad::gather_rows(t, rows_p));
    Var piece = ad::cross_entropy_sum(logits, targets_p);
    loss = loss.valid() ? ad::add(loss, piece) : piece;
  }
  ensure(loss.valid(), ErrorKind::validation, "sequence has no masked-in targets");
  *n_targets = count;
  return loss;
}

double MotionGpt::train_step(const std::vector<TrainingSequence>& batch, nn::AdamW& opt,
                             RngStream& dropout_rng) {
  ensure(!batch.empty(), ErrorKind::validation, "train_step: empty batch");
  Graph g;
  Var total;
  int n_targets = 0;
  for (const TrainingSequence& seq : batch) {
    int n = 0;
    Var piece = sequence_loss(g, seq, true, &dropout_rng, &n);
    n_targets += n;
    total = total.valid() ? ad::add(total, piece) : piece;
  }
  Var loss = ad::scale(total, 1.0 / n_targets);
  g.backward(loss);
  opt.step(params_);
  return loss.val()(0, 0);
}

double MotionGpt::eval_loss(const std::vector<TrainingSequence>& batch) {
  ensure(!batch.empty(), ErrorKind::validation, "eval_loss: empty batch");
  Graph g;
  double total = 0.0;
  int n_targets = 0;
  for (const TrainingSequence& seq : batch) {
    int n = 0;
    total += sequence_loss(g, seq, false, nullptr, &n).val()(0, 0);
    n_targets += n;
  }
  return total / n_targets;
}

// ---- tape-free eval path ----

Eigen::RowVectorXd MotionGpt::music_slot_embedding(const Eigen::RowVectorXd& embed,
                                                   bool beat) const {
  Eigen::RowVectorXd in(cfg_.music_dim + cfg_.beat_embed_dim);
  in.head(cfg_.music_dim) = embed;
  in.tail(cfg_.beat_embed_dim) = beat_embed_->value.row(beat ? 1 : 0);
  Eigen::RowVectorXd out = in * music_proj_.w->value;
  if (music_proj_.b) out += music_proj_.b->value.row(0);
  return out;
}

Eigen::RowVectorXd MotionGpt::style_row(const Eigen::VectorXd& style) const {
  Eigen::RowVectorXd out = style.transpose() * style_proj_.w->value;
  if (style_proj_.b) out += style_proj_.b->value.row(0);
  return out;
}

Eigen::MatrixXd MotionGpt::assemble_embeddings(const TrainingSequence& seq) const {
  const SequenceLayout& lay = cfg_.layout;
  const int n = lay.total_positions();
  ensure(seq.length() == n, ErrorKind::validation, "sequence length does not match the layout");
  Mat x(n, cfg_.d_model);
  Eigen::RowVectorXd srow;
  if (cfg_.use_music_style) srow = style_row(seq.style);
  for (int i = 0; i < n; ++i) {
    if (lay.is_music_slot(i)) {
      int t = lay.frame_of(i);
      x.row(i) = music_slot_embedding(seq.music_embed.row(t), seq.music_beat[t] != 0);
    } else {
      int row = seq.tokens[i];
      if (lay.in_context(i) && (!cfg_.use_motion_context || row < 0)) row = sentinel_row();
      x.row(i) = tok_embed_->value.row(row);
    }
    x.row(i) += pos_embed_->value.row(i);
    if (cfg_.use_music_style && lay.in_context(i)) x.row(i) += srow;
  }
  return x;
}

Eigen::MatrixXd MotionGpt::eval_forward(const Eigen::MatrixXd& rows,
                                        std::vector<LayerCache>& cache) const {
  const int m = static_cast<int>(rows.rows());
  const int d = cfg_.d_model;
  const int hd = d / cfg_.heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(hd));
  Mat x = rows;
  for (size_t l = 0; l < blocks_.size(); ++l) {
    const Block& b = blocks_[l];
    LayerCache& lc = cache[l];
    const int off = lc.used;
    ensure(off + m <= lc.k.rows(), ErrorKind::structural, "decode cache overflow");
    Mat h = ln_rows(x, b.ln1.gain->value, b.ln1.bias->value);
    Mat q = h * b.q.w->value;
    q.rowwise() += b.q.b->value.row(0);
    lc.k.middleRows(off, m) = h * b.k.w->value;
    lc.k.middleRows(off, m).rowwise() += b.k.b->value.row(0);
    lc.v.middleRows(off, m) = h * b.v.w->value;
    lc.v.middleRows(off, m).rowwise() += b.v.b->value.row(0);
    const int total = off + m;
    Mat att(m, d);
    for (int hh = 0; hh < cfg_.heads; ++hh) {
      Mat s = sc * q.middleCols(hh * hd, hd) *
              lc.k.topRows(total).middleCols(hh * hd, hd).transpose();
      for (int r = 0; r < m; ++r)
        for (int c = off + r + 1; c < total; ++c) s(r, c) = -std::numeric_limits<double>::infinity();
      for (int r = 0; r < m; ++r) {
        double mx = s.row(r).maxCoeff();
        Eigen::ArrayXd e = (s.row(r).transpose().array() - mx).exp();
        s.row(r) = (e / e.sum()).matrix().transpose();
      }
      att.middleCols(hh * hd, hd) = s * lc.v.topRows(total).middleCols(hh * hd, hd);
    }
    Mat proj = att * b.o.w->value;
    proj.rowwise() += b.o.b->value.row(0);
    x += proj;
    Mat h2 = ln_rows(x, b.ln2.gain->value, b.ln2.bias->value);
    Mat mid = h2 * b.fc1.w->value;
    mid.rowwise() += b.fc1.b->value.row(0);
    mid = mid.unaryExpr(&gelu_scalar);
    Mat out = mid * b.fc2.w->value;
    out.rowwise() += b.fc2.b->value.row(0);
    x += out;
    lc.used = total;
  }
  return ln_rows(x, final_norm_.gain->value, final_norm_.bias->value);
}

Eigen::MatrixXd MotionGpt::eval_logits(const TrainingSequence& seq) {
  std::vector<LayerCache> cache(cfg_.layers);
  for (LayerCache& lc : cache) {
    lc.k = Mat::Zero(cfg_.layout.total_positions(), cfg_.d_model);
    lc.v = Mat::Zero(cfg_.layout.total_positions(), cfg_.d_model);
  }
  Mat t = eval_forward(assemble_embeddings(seq), cache);
  Mat out = Mat::Zero(seq.length(), cfg_.vocab_per_part);
  for (int i = 0; i < seq.length(); ++i) {
    int p = seq.target_part[i];
    if (p < 0) continue;
    Eigen::RowVectorXd logits = t.row(i) * heads_[p].w->value;
    if (heads_[p].b) logits += heads_[p].b->value.row(0);
    out.row(i) = logits;
  }
  return out;
}

double MotionGpt::teacher_forced_accuracy(const TrainingSequence& seq) {
  Mat logits = eval_logits(seq);
  int hit = 0, total = 0;
  for (int i = 0; i < seq.length(); ++i) {
    if (seq.targets[i] < 0) continue;
    Eigen::Index arg = 0;
    logits.row(i).maxCoeff(&arg);
    hit += static_cast<int>(arg) == seq.targets[i] ? 1 : 0;
    ++total;
  }
  ensure(total > 0, ErrorKind::validation, "sequence has no masked-in targets");
  return static_cast<double>(hit) / total;
}

int MotionGpt::sample_from_logits(const Eigen::RowVectorXd& logits, const GenerationParams& params,
                                  RngStream& rng) const {
  const int e = static_cast<int>(logits.size());
  if (params.temperature < 1e-6) {
    Eigen::Index arg = 0;
    logits.maxCoeff(&arg);
    return static_cast<int>(arg);
  }
  const int k = std::min(params.top_k, e);
  std::vector<int> order(e);
  for (int i = 0; i < e; ++i) order[i] = i;
  std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
    return logits(a) > logits(b) || (logits(a) == logits(b) && a < b);
  });
  const double mx = logits(order[0]);
  std::vector<double> p(k);
  double z = 0.0;
  for (int i = 0; i < k; ++i) {
    p[i] = std::exp((logits(order[i]) - mx) / params.temperature);
    z += p[i];
  }
  double u = rng.uniform() * z;
  double acc = 0.0;
  for (int i = 0; i < k; ++i) {
    acc += p[i];
    if (u < acc) return order[i];
  }
  return order[k - 1];
}

PartTokenGrid MotionGpt::generate_segment(const Eigen::MatrixXd& music_embed,
                                          const std::vector<uint8_t>& music_beat,
                                          const GlobalContext& ctx,
                                          const GenerationParams& params) const {
  params.check_valid();
  const SequenceLayout& lay = cfg_.layout;
  ensure(music_embed.rows() >= 1, ErrorKind::validation, "generate: empty music window");
  ensure(music_embed.cols() == cfg_.music_dim, ErrorKind::validation,
         "generate: music width does not match the model");
  ensure(music_embed.rows() == static_cast<Eigen::Index>(music_beat.size()),
         ErrorKind::validation, "generate: beat flag count mismatch");
  ensure(static_cast<int>(ctx.context_tokens.size()) == lay.context_positions(),
         ErrorKind::validation, "generate: context token count mismatch");
  if (cfg_.use_music_style)
    ensure(ctx.style_vector.size() == cfg_.music_dim + 1, ErrorKind::validation,
           "generate: style summary width mismatch");
  const int frames = std::min<int>(lay.frames, static_cast<int>(music_embed.rows()));

  std::vector<LayerCache> cache(cfg_.layers);
  for (LayerCache& lc : cache) {
    lc.k = Mat::Zero(lay.total_positions(), cfg_.d_model);
    lc.v = Mat::Zero(lay.total_positions(), cfg_.d_model);
  }

  // context prefill
  Mat ctx_rows(lay.context_positions(), cfg_.d_model);
  Eigen::RowVectorXd srow;
  if (cfg_.use_music_style) srow = style_row(ctx.style_vector);
  for (int i = 0; i < lay.context_positions(); ++i) {
    int row = ctx.context_tokens[i];
    if (!cfg_.use_motion_context || row < 0) row = sentinel_row();
    ensure(row >= 0 && row <= sentinel_row(), ErrorKind::validation,
           "generate: context token out of range");
    ctx_rows.row(i) = tok_embed_->value.row(row) + pos_embed_->value.row(i);
    if (cfg_.use_music_style) ctx_rows.row(i) += srow;
  }
  eval_forward(ctx_rows, cache);

  PartTokenGrid grid;
  grid.t = frames;
  grid.b = lay.parts;
  grid.k = lay.tokens_per_part;
  grid.idx.assign(static_cast<size_t>(frames) * lay.parts * lay.tokens_per_part, 0);
  RngStream rng(params.seed);
  Eigen::RowVectorXd last;
  for (int t = 0; t < frames; ++t) {
    Mat slot = music_slot_embedding(music_embed.row(t), music_beat[t] != 0);
    slot.row(0) += pos_embed_->value.row(lay.music_position_of(t));
    last = eval_forward(slot, cache).row(0);
    for (int j = 0; j < lay.parts; ++j) {
      for (int k = 0; k < lay.tokens_per_part; ++k) {
        Eigen::RowVectorXd logits = last * heads_[j].w->value;
        if (heads_[j].b) logits += heads_[j].b->value.row(0);
        int entry = sample_from_logits(logits, params, rng);
        grid.at(t, j, k) = entry;
        Mat emb = tok_embed_->value.row(token_row_of(j, entry)) +
                  pos_embed_->value.row(lay.position_of(t, j, k));
        last = eval_forward(emb, cache).row(0);
      }
    }
  }
  return grid;
}

PartTokenGrid MotionGpt::sliding_window_generate(const MusicTrackFeatures& music, int n_frames,
                                                 const std::vector<int>& seed_tokens,
                                                 const GenerationParams& params) const {
  params.check_valid();
  const SequenceLayout& lay = cfg_.layout;
  ensure(n_frames >= 1, ErrorKind::validation, "generate: need at least one frame");
  ensure(music.length() >= n_frames, ErrorKind::validation,
         "generate: music shorter than the requested motion");
  ensure(static_cast<int>(seed_tokens.size()) == lay.tokens_per_frame(), ErrorKind::validation,
         "generate: seed token row has the wrong width");
  for (int j = 0; j < lay.parts; ++j)
    for (int k = 0; k < lay.tokens_per_part; ++k) {
      int tok = seed_tokens[j * lay.tokens_per_part + k];
      ensure(tok >= j * cfg_.vocab_per_part && tok < (j + 1) * cfg_.vocab_per_part,
             ErrorKind::validation, "generate: seed token outside its part vocabulary");
    }

  Eigen::VectorXd style = summarize_music(music);
  std::vector<int> offsets = plan_segments(n_frames, lay);
  PartTokenGrid out;
  out.t = n_frames;
  out.b = lay.parts;
  out.k = lay.tokens_per_part;
  out.fps = music.fps;
  out.idx.assign(static_cast<size_t>(n_frames) * lay.parts * lay.tokens_per_part, 0);

  RngStream seed_stream(params.seed);
  PartTokenGrid prev;
  int filled = 0;
  for (size_t si = 0; si < offsets.size(); ++si) {
    const int s = offsets[si];
    GlobalContext ctx;
    ctx.style_vector = style;
    if (si == 0) {
      for (int c = 0; c < lay.context_frames; ++c)
        for (int i = 0; i < lay.tokens_per_frame(); ++i)
          ctx.context_tokens.push_back(seed_tokens[i]);
    } else {
      std::vector<int> picks = evenly_spaced_frames(prev.t, lay.context_frames);
      for (int f : picks)
        for (int j = 0; j < lay.parts; ++j)
          for (int k = 0; k < lay.tokens_per_part; ++k)
            ctx.context_tokens.push_back(token_row_of(j, prev.at(f, j, k)));
    }
    const int want = std::min(lay.frames, n_frames - s);
    GenerationParams seg_params = params;
    seg_params.seed = seed_stream.next_u64();
    PartTokenGrid seg = generate_segment(music.embed.middleRows(s, want),
                                         {music.beat_onehot.begin() + s,
                                          music.beat_onehot.begin() + s + want},
                                         ctx, seg_params);
    for (int t = 0; t < seg.t; ++t) {
      int global = s + t;
      if (global < filled) continue;  // overlapped frames keep the previous segment
      for (int j = 0; j < lay.parts; ++j)
        for (int k = 0; k < lay.tokens_per_part; ++k) out.at(global, j, k) = seg.at(t, j, k);
    }
    filled = std::max(filled, s + seg.t);
    prev = std::move(seg);
  }
  return out;
}

void MotionGpt::save(const std::string& path, const nn::AdamW* opt) const {
  json meta;
  meta["kind"] = "motion_gpt";
  meta["config"] = gpt_config_to_json(cfg_);
  save_model(path, meta, params_, opt);
}

MotionGpt MotionGpt::load(const std::string& path, nn::AdamW* opt) {
  std::vector<NamedBlob> peek;
  json meta = load_checkpoint(path, peek);
  ensure(meta.value("kind", "") == "motion_gpt", ErrorKind::format,
         "checkpoint is not a motion transformer");
  MotionGpt m = create(gpt_config_from_json(meta.at("config")));
  load_model(path, m.params_, opt);
  return m;
}

}  // namespace choreo
