// Copyright (C) 2026 the choreo authors
// SPDX-License-Identifier: Apache-2.0
#include "choreo/pose_codec.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "choreo/binio.hpp"
#include "choreo/checkpoint.hpp"
#include "choreo/error.hpp"

namespace choreo {

using ad::Graph;
using ad::Var;
using nlohmann::json;

void CodecConfig::check_valid() const {
  ensure(tokens_per_part >= 1 && latent_dim >= 1 && codebook_size >= 1 && hidden >= 1,
         ErrorKind::config, "codec: sizes must be positive");
  ensure(codebooks_per_part == 1 || codebooks_per_part == tokens_per_part, ErrorKind::config,
         "codec: codebooks_per_part must be 1 or tokens_per_part");
  ensure(beta > 0.0, ErrorKind::config, "codec: beta must be positive");
  ensure(gamma > 0.0 && gamma < 1.0, ErrorKind::config, "codec: gamma must be in (0,1)");
  ensure(eps_laplace > 0.0, ErrorKind::config, "codec: eps_laplace must be positive");
}

void PartTokenGrid::check_valid(int codebook_size) const {
  ensure(t >= 1 && b >= 1 && k >= 1, ErrorKind::structural, "token grid: empty dimensions");
  ensure(idx.size() == static_cast<size_t>(t) * b * k, ErrorKind::structural,
         "token grid: index count mismatch");
  for (int v : idx)
    ensure(v >= 0 && v < codebook_size, ErrorKind::validation, "token grid: index out of range");
}

void save_token_grid(const std::string& path, const PartTokenGrid& grid) {
  json manifest;
  manifest["T"] = grid.t;
  manifest["B"] = grid.b;
  manifest["K"] = grid.k;
  manifest["fps"] = grid.fps;
  std::string text = manifest.dump();
  std::vector<uint8_t> buf;
  append_u64(buf, text.size());
  buf.insert(buf.end(), text.begin(), text.end());
  append_u16(buf, grid.idx);
  write_file(path, buf);
}

PartTokenGrid load_token_grid(const std::string& path) {
  std::vector<uint8_t> buf = read_file(path);
  size_t off = 0;
  uint64_t mlen = parse_u64(buf, off);
  ensure(off + mlen <= buf.size(), ErrorKind::format, "token grid: manifest overruns file");
  json manifest;
  try {
    manifest = json::parse(buf.begin() + static_cast<long>(off),
                           buf.begin() + static_cast<long>(off + mlen));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, std::string("token grid manifest: ") + e.what());
  }
  off += mlen;
  PartTokenGrid grid;
  try {
    grid.t = manifest.at("T").get<int>();
    grid.b = manifest.at("B").get<int>();
    grid.k = manifest.at("K").get<int>();
    grid.fps = manifest.at("fps").get<double>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, std::string("token grid fields: ") + e.what());
  }
  ensure(grid.t >= 1 && grid.b >= 1 && grid.k >= 1, ErrorKind::format,
         "token grid: non-positive shape");
  grid.idx = parse_u16(buf, off, static_cast<size_t>(grid.t) * grid.b * grid.k);
  ensure(off == buf.size(), ErrorKind::format, "token grid: trailing bytes");
  return grid;
}

std::vector<int> nearest_entries(const Eigen::MatrixXd& entries, const Eigen::MatrixXd& latents) {
  ensure(entries.cols() == latents.cols(), ErrorKind::structural,
         "nearest_entries: dimension mismatch");
  std::vector<int> out(latents.rows());
  for (Eigen::Index i = 0; i < latents.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (Eigen::Index e = 0; e < entries.rows(); ++e) {
      double d = (latents.row(i) - entries.row(e)).squaredNorm();
      if (d < best) {
        best = d;
        arg = static_cast<int>(e);
      }
    }
    out[i] = arg;
  }
  return out;
}

void ema_codebook_update(Eigen::MatrixXd& entries, Eigen::MatrixXd& ema_size,
                         Eigen::MatrixXd& ema_sum, const Eigen::MatrixXd& latents,
                         const std::vector<int>& assign, double gamma, double eps_laplace) {
  ensure(static_cast<Eigen::Index>(assign.size()) == latents.rows(), ErrorKind::structural,
         "ema update: assignment count mismatch");
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(entries.rows());
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(entries.rows(), entries.cols());
  for (size_t i = 0; i < assign.size(); ++i) {
    ensure(assign[i] >= 0 && assign[i] < entries.rows(), ErrorKind::structural,
           "ema update: assignment out of range");
    counts(assign[i]) += 1.0;
    sums.row(assign[i]) += latents.row(static_cast<Eigen::Index>(i));
  }
  ema_size.col(0) = gamma * ema_size.col(0) + (1.0 - gamma) * counts;
  ema_sum = gamma * ema_sum + (1.0 - gamma) * sums;
  for (Eigen::Index e = 0; e < entries.rows(); ++e)
    if (ema_size(e, 0) > 0.0) entries.row(e) = ema_sum.row(e) / (ema_size(e, 0) + eps_laplace);
}

namespace {

json codec_config_to_json(const CodecConfig& c) {
  return json{{"tokens_per_part", c.tokens_per_part},
              {"latent_dim", c.latent_dim},
              {"codebook_size", c.codebook_size},
              {"hidden", c.hidden},
              {"codebooks_per_part", c.codebooks_per_part},
              {"beta", c.beta},
              {"gamma", c.gamma},
              {"eps_laplace", c.eps_laplace},
              {"reseed_threshold", c.reseed_threshold},
              {"single_part", c.single_part},
              {"seed", c.seed}};
}

CodecConfig codec_config_from_json(const json& j) {
  CodecConfig c;
  try {
    c.tokens_per_part = j.at("tokens_per_part").get<int>();
    c.latent_dim = j.at("latent_dim").get<int>();
    c.codebook_size = j.at("codebook_size").get<int>();
    c.hidden = j.at("hidden").get<int>();
    c.codebooks_per_part = j.at("codebooks_per_part").get<int>();
    c.beta = j.at("beta").get<double>();
    c.gamma = j.at("gamma").get<double>();
    c.eps_laplace = j.at("eps_laplace").get<double>();
    c.reseed_threshold = j.at("reseed_threshold").get<double>();
    c.single_part = j.at("single_part").get<bool>();
    c.seed = j.at("seed").get<uint64_t>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, std::string("codec config fields: ") + e.what());
  }
  return c;
}

}  // namespace

PoseCodec PoseCodec::create(const CodecConfig& cfg, const SkeletonTopology& topo) {
  cfg.check_valid();
  PoseCodec c;
  c.cfg_ = cfg;
  c.topo_ = topo;
  ensure(topo.joints() >= 1, ErrorKind::structural, "codec: empty topology");
  if (cfg.single_part) {
    std::vector<int> all(topo.joints());
    for (int j = 0; j < topo.joints(); ++j) all[j] = j;
    c.part_joints_.push_back(std::move(all));
  } else {
    for (int p = 0; p < kNumParts; ++p) {
      ensure(!topo.part_joints[p].empty(), ErrorKind::structural,
             "codec: topology has an empty part (not validated?)");
      c.part_joints_.push_back(topo.part_joints[p]);
    }
  }
  const int n_parts = c.parts();
  const int groups = cfg.codebooks_per_part;
  RngStream rng(cfg.seed);

  for (int p = 0; p < n_parts; ++p) {
    std::string base = "enc.p" + std::to_string(p) + ".";
    PartEncoder e;
    e.c1 = nn::Conv1d::create(c.params_, base + "c1", 3, cfg.hidden, 3, rng);
    e.c2 = nn::Conv1d::create(c.params_, base + "c2", cfg.hidden, cfg.hidden, 3, rng);
    e.c3 = nn::Conv1d::create(c.params_, base + "c3", cfg.hidden, cfg.hidden, 3, rng);
    e.to_latent = nn::Linear::create(c.params_, base + "lat", cfg.hidden, cfg.latent_dim, rng);
    c.encoders_.push_back(e);
  }
  const int latent_rows_dim = n_parts * cfg.tokens_per_part * cfg.latent_dim;
  c.dec1_ = nn::Linear::create(c.params_, "dec.l1", latent_rows_dim, cfg.hidden, rng);
  c.dec2_ = nn::Linear::create(c.params_, "dec.l2", cfg.hidden, cfg.hidden, rng);
  for (int p = 0; p < n_parts; ++p) {
    int n_j = static_cast<int>(c.part_joints_[p].size());
    c.heads_.push_back(
        nn::Linear::create(c.params_, "head.p" + std::to_string(p), cfg.hidden, 3 * n_j, rng));
  }
  for (int p = 0; p < n_parts; ++p) {
    std::vector<Codebook> part_books;
    for (int gidx = 0; gidx < groups; ++gidx) {
      std::string base = "book.p" + std::to_string(p) + ".g" + std::to_string(gidx) + ".";
      Codebook b;
      b.entries = &c.params_.create(base + "entries", cfg.codebook_size, cfg.latent_dim);
      nn::init_normal(*b.entries, rng, 0.1);
      b.entries->trainable = false;
      b.ema_size = &c.params_.create(base + "ema_size", cfg.codebook_size, 1);
      b.ema_size->trainable = false;
      b.ema_sum = &c.params_.create(base + "ema_sum", cfg.codebook_size, cfg.latent_dim);
      b.ema_sum->trainable = false;
      part_books.push_back(b);
    }
    c.books_.push_back(std::move(part_books));
  }
  return c;
}

const Codebook& PoseCodec::codebook(int part, int slot) const {
  const auto& part_books = books_.at(part);
  return part_books[cfg_.codebooks_per_part == 1 ? 0 : slot];
}

Eigen::MatrixXd PoseCodec::part_flat(const PoseFrame& frame, int part) const {
  const auto& members = part_joints_[part];
  Eigen::MatrixXd flat(members.size(), 3);
  for (size_t i = 0; i < members.size(); ++i) {
    flat(static_cast<Eigen::Index>(i), 0) = frame.kp(members[i], 0);
    flat(static_cast<Eigen::Index>(i), 1) = frame.kp(members[i], 1);
    flat(static_cast<Eigen::Index>(i), 2) = frame.conf(members[i]);
  }
  return flat;
}

Var PoseCodec::encode_graph(Graph& g, int part, const Eigen::MatrixXd& flat) const {
  const PartEncoder& e = encoders_[part];
  Var h = ad::relu(e.c1(g, g.input(flat)));
  h = ad::relu(e.c2(g, h));
  h = e.c3(g, h);
  h = ad::resample_rows_linear(h, cfg_.tokens_per_part);
  return e.to_latent(g, h);
}

Var PoseCodec::decode_graph(Graph& g, Var latent_rows, std::vector<Var>* head_out) const {
  Var h = ad::relu(dec1_(g, latent_rows));
  h = ad::relu(dec2_(g, h));
  head_out->clear();
  for (const auto& head : heads_) head_out->push_back(head(g, h));
  return h;
}

Eigen::MatrixXd PoseCodec::encode_part(int part, const PartPose& pose) const {
  ensure(part >= 0 && part < parts(), ErrorKind::structural, "encode_part: bad part id");
  ensure(pose.kp.rows() == static_cast<Eigen::Index>(part_joints_[part].size()),
         ErrorKind::structural, "encode_part: joint count mismatch");
  ensure(pose.kp.allFinite() && pose.conf.allFinite(), ErrorKind::validation,
         "encode_part: non-finite input");
  Eigen::MatrixXd flat(pose.kp.rows(), 3);
  flat.leftCols(2) = pose.kp;
  flat.col(2) = pose.conf;
  Graph g;
  return encode_graph(g, part, flat).val();
}

Eigen::MatrixXd PoseCodec::quantize(int part, const Eigen::MatrixXd& latents,
                                    std::vector<int>* indices) const {
  ensure(latents.rows() == cfg_.tokens_per_part && latents.cols() == cfg_.latent_dim,
         ErrorKind::structural, "quantize: latent shape mismatch");
  Eigen::MatrixXd q(latents.rows(), latents.cols());
  if (indices != nullptr) indices->resize(cfg_.tokens_per_part);
  for (int k = 0; k < cfg_.tokens_per_part; ++k) {
    const Eigen::MatrixXd& entries = codebook(part, k).entries->value;
    std::vector<int> one = nearest_entries(entries, latents.row(k));
    q.row(k) = entries.row(one[0]);
    if (indices != nullptr) (*indices)[k] = one[0];
  }
  return q;
}

std::vector<Eigen::MatrixXd> PoseCodec::decode_frame_raw(
    const std::vector<Eigen::MatrixXd>& quantized) const {
  ensure(static_cast<int>(quantized.size()) == parts(), ErrorKind::structural,
         "decode: need latents for every part");
  Eigen::MatrixXd row(1, parts() * cfg_.tokens_per_part * cfg_.latent_dim);
  int at = 0;
  for (int p = 0; p < parts(); ++p) {
    ensure(quantized[p].rows() == cfg_.tokens_per_part && quantized[p].cols() == cfg_.latent_dim,
           ErrorKind::structural, "decode: latent shape mismatch");
    for (int k = 0; k < cfg_.tokens_per_part; ++k)
      for (int d = 0; d < cfg_.latent_dim; ++d) row(0, at++) = quantized[p](k, d);
  }
  Graph g;
  std::vector<Var> heads;
  decode_graph(g, g.input(row), &heads);
  std::vector<Eigen::MatrixXd> out;
  for (int p = 0; p < parts(); ++p) {
    int n_j = static_cast<int>(part_joints_[p].size());
    Eigen::MatrixXd rows(n_j, 3);
    for (int j = 0; j < n_j; ++j)
      for (int ch = 0; ch < 3; ++ch) rows(j, ch) = heads[p].val()(0, 3 * j + ch);
    out.push_back(std::move(rows));
  }
  return out;
}

PoseFrame PoseCodec::decode_frame(const std::vector<Eigen::MatrixXd>& quantized) const {
  std::vector<Eigen::MatrixXd> raw = decode_frame_raw(quantized);
  PoseFrame f = PoseFrame::zeros(topo_.joints());
  for (int p = 0; p < parts(); ++p) {
    const auto& members = part_joints_[p];
    for (size_t i = 0; i < members.size(); ++i) {
      f.kp(members[i], 0) = raw[p](static_cast<Eigen::Index>(i), 0);
      f.kp(members[i], 1) = raw[p](static_cast<Eigen::Index>(i), 1);
      f.conf(members[i]) = std::clamp(raw[p](static_cast<Eigen::Index>(i), 2), 0.0, 1.0);
    }
  }
  return f;
}

PartTokenGrid PoseCodec::tokenize(const PoseSequence& seq) const {
  seq.check_valid();
  ensure(seq.frames[0].joints() == topo_.joints(), ErrorKind::structural,
         "tokenize: joint count mismatch");
  PartTokenGrid grid;
  grid.t = seq.length();
  grid.b = parts();
  grid.k = cfg_.tokens_per_part;
  grid.fps = seq.fps;
  grid.idx.assign(static_cast<size_t>(grid.t) * grid.b * grid.k, 0);
  for (int t = 0; t < grid.t; ++t) {
    for (int p = 0; p < grid.b; ++p) {
      PartPose pp;
      pp.part_id = p;
      Eigen::MatrixXd flat = part_flat(seq.frames[t], p);
      pp.kp = flat.leftCols(2);
      pp.conf = flat.col(2);
      std::vector<int> slots;
      quantize(p, encode_part(p, pp), &slots);
      for (int k = 0; k < grid.k; ++k) grid.at(t, p, k) = slots[k];
    }
  }
  return grid;
}

Eigen::MatrixXd PoseCodec::embed_tokens(int part, const int* slots) const {
  Eigen::MatrixXd q(cfg_.tokens_per_part, cfg_.latent_dim);
  for (int k = 0; k < cfg_.tokens_per_part; ++k) {
    const Eigen::MatrixXd& entries = codebook(part, k).entries->value;
    ensure(slots[k] >= 0 && slots[k] < entries.rows(), ErrorKind::validation,
           "embed_tokens: index out of range");
    q.row(k) = entries.row(slots[k]);
  }
  return q;
}

PoseSequence PoseCodec::detokenize(const PartTokenGrid& grid) const {
  grid.check_valid(cfg_.codebook_size);
  ensure(grid.b == parts() && grid.k == cfg_.tokens_per_part, ErrorKind::structural,
         "detokenize: grid shape does not match codec");
  PoseSequence seq;
  seq.fps = grid.fps;
  for (int t = 0; t < grid.t; ++t) {
    std::vector<Eigen::MatrixXd> quantized;
    for (int p = 0; p < grid.b; ++p)
      quantized.push_back(embed_tokens(p, &grid.idx[(static_cast<size_t>(t) * grid.b + p) * grid.k]));
    seq.frames.push_back(decode_frame(quantized));
  }
  return seq;
}

PoseCodec::LossReport PoseCodec::loss_graph(Graph& g, const std::vector<PoseFrame>& batch,
                                            Var* loss_out, EmaBatch* ema) const {
  ensure(!batch.empty(), ErrorKind::validation, "codec loss: empty batch");
  const int n = static_cast<int>(batch.size());
  const int n_parts = parts();
  const int groups = cfg_.codebooks_per_part;

  // codebook entries participate in the graph only behind stop_grad
  std::vector<std::vector<Var>> entry_vars(n_parts);
  for (int p = 0; p < n_parts; ++p)
    for (int gi = 0; gi < groups; ++gi) entry_vars[p].push_back(g.param(*books_[p][gi].entries));

  if (ema != nullptr) {
    ema->latents.assign(n_parts, {});
    ema->assign.assign(n_parts, {});
    for (int p = 0; p < n_parts; ++p) {
      ema->latents[p].assign(groups, {});
      ema->assign[p].assign(groups, {});
    }
  }

  std::vector<Var> frame_rows;
  std::vector<std::vector<Var>> commit_rows(n_parts);
  for (int f = 0; f < n; ++f) {
    ensure(batch[f].joints() == topo_.joints(), ErrorKind::structural,
           "codec loss: joint count mismatch");
    std::vector<Var> part_rows;
    for (int p = 0; p < n_parts; ++p) {
      Var z_e = encode_graph(g, p, part_flat(batch[f], p));
      const Eigen::MatrixXd z_val = z_e.val();

      std::vector<int> slots(cfg_.tokens_per_part);
      for (int k = 0; k < cfg_.tokens_per_part; ++k) {
        int gi = groups == 1 ? 0 : k;
        slots[k] = nearest_entries(books_[p][gi].entries->value, z_val.row(k))[0];
        if (ema != nullptr) {
          ema->latents[p][gi].push_back(z_val.row(k));
          ema->assign[p][gi].push_back(slots[k]);
        }
      }
      Var z_q;
      if (groups == 1) {
        z_q = ad::gather_rows(entry_vars[p][0], slots);
      } else {
        std::vector<Var> picked;
        for (int k = 0; k < cfg_.tokens_per_part; ++k)
          picked.push_back(ad::gather_rows(entry_vars[p][k], {slots[k]}));
        z_q = ad::concat_rows(picked);
      }
      Var z_st = ad::add(z_e, ad::stop_grad(ad::sub(z_q, z_e)));
      commit_rows[p].push_back(ad::reshape_row(ad::sub(z_e, ad::stop_grad(z_q))));
      part_rows.push_back(ad::reshape_row(z_st));
    }
    frame_rows.push_back(ad::concat_cols(part_rows));
  }

  Var latents = ad::concat_rows(frame_rows);
  std::vector<Var> heads;
  decode_graph(g, latents, &heads);

  Var loss;
  double recon_total = 0.0, commit_total = 0.0;
  for (int p = 0; p < n_parts; ++p) {
    int n_j = static_cast<int>(part_joints_[p].size());
    Eigen::MatrixXd target(n, 3 * n_j);
    for (int f = 0; f < n; ++f) {
      Eigen::MatrixXd flat = part_flat(batch[f], p);
      for (int j = 0; j < n_j; ++j)
        for (int ch = 0; ch < 3; ++ch) target(f, 3 * j + ch) = flat(j, ch);
    }
    Var recon = ad::mean(ad::group_l2_rows(ad::sub(heads[p], g.input(target)), 3));
    Var commit = ad::mean(ad::group_l2_rows(ad::concat_rows(commit_rows[p]), cfg_.latent_dim));
    recon_total += recon.val()(0, 0);
    commit_total += commit.val()(0, 0);
    Var term = ad::add(recon, ad::scale(commit, cfg_.beta));
    loss = loss.valid() ? ad::add(loss, term) : term;
  }

  *loss_out = loss;
  LossReport rep;
  rep.recon = recon_total;
  rep.commit = commit_total;
  rep.total = loss.val()(0, 0);
  return rep;
}

PoseCodec::LossReport PoseCodec::loss_only(const std::vector<PoseFrame>& batch) {
  Graph g;
  Var loss;
  LossReport rep = loss_graph(g, batch, &loss, nullptr);
  g.backward(loss);
  return rep;
}

PoseCodec::LossReport PoseCodec::train_step(const std::vector<PoseFrame>& batch, nn::AdamW& opt) {
  Graph g;
  Var loss;
  EmaBatch ema;
  LossReport rep = loss_graph(g, batch, &loss, &ema);
  g.backward(loss);
  opt.step(params_);
  for (int p = 0; p < parts(); ++p) {
    for (int gi = 0; gi < cfg_.codebooks_per_part; ++gi) {
      const auto& rows = ema.latents[p][gi];
      if (rows.empty()) continue;
      Eigen::MatrixXd lat(rows.size(), cfg_.latent_dim);
      for (size_t i = 0; i < rows.size(); ++i) lat.row(static_cast<Eigen::Index>(i)) = rows[i];
      Codebook& b = books_[p][gi];
      ema_codebook_update(b.entries->value, b.ema_size->value, b.ema_sum->value, lat,
                          ema.assign[p][gi], cfg_.gamma, cfg_.eps_laplace);
    }
  }
  return rep;
}

int PoseCodec::reseed_dead_entries(const std::vector<PoseFrame>& pool, RngStream& rng) {
  ensure(!pool.empty(), ErrorKind::validation, "reseed: empty pool");
  int reseeded = 0;
  for (int p = 0; p < parts(); ++p) {
    // fresh latents from random pool frames for this part
    std::vector<Eigen::MatrixXd> samples;
    for (int i = 0; i < 16; ++i) {
      const PoseFrame& f = pool[rng.uniform_int(0, static_cast<int>(pool.size()) - 1)];
      PartPose pp;
      Eigen::MatrixXd flat = part_flat(f, p);
      pp.part_id = p;
      pp.kp = flat.leftCols(2);
      pp.conf = flat.col(2);
      samples.push_back(encode_part(p, pp));
    }
    for (int gi = 0; gi < cfg_.codebooks_per_part; ++gi) {
      Codebook& b = books_[p][gi];
      for (int e = 0; e < cfg_.codebook_size; ++e) {
        if (b.ema_size->value(e, 0) >= cfg_.reseed_threshold) continue;
        const Eigen::MatrixXd& s = samples[rng.uniform_int(0, 15)];
        int row = static_cast<int>(rng.uniform_int(0, cfg_.tokens_per_part - 1));
        b.entries->value.row(e) = s.row(row);
        b.ema_size->value(e, 0) = 1.0;
        b.ema_sum->value.row(e) = s.row(row);
        ++reseeded;
      }
    }
  }
  return reseeded;
}

void PoseCodec::save(const std::string& path) const {
  json meta;
  meta["kind"] = "pose_codec";
  meta["config"] = codec_config_to_json(cfg_);
  meta["topology_hash"] = topo_.content_hash();
  save_model(path, meta, params_);
}

PoseCodec PoseCodec::load(const std::string& path, const SkeletonTopology& topo) {
  std::vector<NamedBlob> peek;
  json meta = load_checkpoint(path, peek);
  ensure(meta.value("kind", "") == "pose_codec", ErrorKind::format,
         "checkpoint is not a pose codec");
  ensure(meta.at("topology_hash").get<std::string>() == topo.content_hash(), ErrorKind::structural,
         "codec checkpoint was built for a different topology");
  PoseCodec c = create(codec_config_from_json(meta.at("config")), topo);
  load_model(path, c.params_);
  return c;
}

}  // namespace choreo
