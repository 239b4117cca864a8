// Copyright (C) 2026 the choreo authors
// SPDX-License-Identifier: Apache-2.0
#include "choreo/guidance.hpp"

#include <algorithm>
#include <json.hpp>

#include "choreo/checkpoint.hpp"
#include "choreo/error.hpp"

namespace choreo {

using ad::Graph;
using ad::Mat;
using ad::Var;
using nlohmann::json;

void GuidanceConfig::check_valid() const {
  ensure(base_h >= 1 && base_w >= 1, ErrorKind::config, "guidance: base map must be non-empty");
  ensure(!channels.empty(), ErrorKind::config, "guidance: need at least one pyramid level");
  for (int c : channels)
    ensure(c >= 1, ErrorKind::config, "guidance: channel counts must be positive");
  ensure(window >= 1, ErrorKind::config, "guidance: window must be positive");
  ensure(style_hidden >= 1, ErrorKind::config, "guidance: style width must be positive");
}

TokenWindow slice_token_window(const PartTokenGrid& grid, const Eigen::MatrixXd& part_conf,
                               int start, int window) {
  ensure(grid.t >= 1, ErrorKind::validation, "token window: empty grid");
  ensure(start >= 0 && start < grid.t, ErrorKind::validation, "token window: start out of range");
  ensure(window >= 1, ErrorKind::validation, "token window: empty window");
  ensure(part_conf.rows() == grid.t && part_conf.cols() == grid.b, ErrorKind::validation,
         "token window: confidence shape does not match the grid");
  TokenWindow w;
  w.grid.t = window;
  w.grid.b = grid.b;
  w.grid.k = grid.k;
  w.grid.fps = grid.fps;
  w.grid.idx.resize(static_cast<size_t>(window) * grid.b * grid.k);
  w.part_conf.resize(window, grid.b);
  w.valid_frames = std::min(window, grid.t - start);
  for (int f = 0; f < window; ++f) {
    int src = start + std::min(f, w.valid_frames - 1);
    for (int j = 0; j < grid.b; ++j)
      for (int k = 0; k < grid.k; ++k) w.grid.at(f, j, k) = grid.at(src, j, k);
    w.part_conf.row(f) = part_conf.row(src);
  }
  return w;
}

GuidanceDecoder GuidanceDecoder::create(const GuidanceConfig& cfg, const CodecConfig& codec_cfg,
                                        int parts) {
  cfg.check_valid();
  codec_cfg.check_valid();
  ensure(parts >= 1, ErrorKind::config, "guidance: need at least one body part");
  GuidanceDecoder d;
  d.cfg_ = cfg;
  d.parts_ = parts;
  d.style_in_ = parts * codec_cfg.tokens_per_part * codec_cfg.latent_dim + parts;
  RngStream rng(cfg.seed);

  const int cb = cfg.channels.back();
  d.base_ = &d.params_.create("base.map", cb, cfg.base_h * cfg.base_w);
  nn::init_normal(*d.base_, rng, 1.0);
  d.style_l1_ = nn::Linear::create(d.params_, "style.l1", d.style_in_, cfg.style_hidden, rng);
  d.style_l2_ = nn::Linear::create(d.params_, "style.l2", cfg.style_hidden, cfg.style_hidden, rng);
  d.style_tconv_ =
      nn::Conv1d::create(d.params_, "style.tconv", cfg.style_hidden, cfg.style_hidden, 3, rng);

  d.level_proj_.resize(cfg.levels());
  d.level_conv_.resize(cfg.levels());
  for (int l = cfg.levels() - 1; l >= 0; --l) {
    std::string base = "lvl" + std::to_string(l) + ".";
    int cin = l == cfg.levels() - 1 ? cb : cfg.channels[l + 1];
    d.level_conv_[l] = nn::Conv2d::create(d.params_, base + "conv", cin, cfg.channels[l], 3, rng);
    d.level_proj_[l] =
        nn::Linear::create(d.params_, base + "proj", cfg.style_hidden, 2 * cfg.channels[l], rng);
    // start as identity modulation: gamma 1, delta 0
    d.level_proj_[l].b->value.leftCols(cfg.channels[l]).setOnes();
  }
  return d;
}

Var GuidanceDecoder::style_features(Graph& g, const PoseCodec& codec,
                                    const TokenWindow& win) const {
  const CodecConfig& cc = codec.config();
  ensure(codec.parts() == parts_, ErrorKind::structural,
         "guidance: codec part count does not match the decoder");
  ensure(parts_ * cc.tokens_per_part * cc.latent_dim + parts_ == style_in_, ErrorKind::structural,
         "guidance: codec embedding widths do not match the decoder");
  ensure(win.grid.t == cfg_.window, ErrorKind::validation,
         "guidance: window length does not match the configuration");
  ensure(win.grid.b == parts_ && win.grid.k == cc.tokens_per_part, ErrorKind::validation,
         "guidance: token grid does not match the codec");
  win.grid.check_valid(cc.codebook_size);
  ensure(win.part_conf.rows() == cfg_.window && win.part_conf.cols() == parts_,
         ErrorKind::validation, "guidance: confidence shape does not match the window");
  ensure(win.part_conf.allFinite(), ErrorKind::validation,
         "guidance: confidences must be finite");
  ensure(win.valid_frames >= 1 && win.valid_frames <= cfg_.window, ErrorKind::validation,
         "guidance: invalid padded-frame count");

  std::vector<Var> pieces;
  for (int j = 0; j < parts_; ++j)
    for (int k = 0; k < cc.tokens_per_part; ++k) {
      std::vector<int> idx(cfg_.window);
      for (int f = 0; f < cfg_.window; ++f) idx[f] = win.grid.at(f, j, k);
      pieces.push_back(ad::gather_rows(g.param(*codec.codebook(j, k).entries), std::move(idx)));
    }
  pieces.push_back(g.input(win.part_conf));
  Var h = ad::relu(style_l1_(g, ad::concat_cols(pieces)));
  h = ad::relu(style_l2_(g, h));
  // edge frames replicate their neighbors so a temporally constant window
  // yields temporally constant styles
  std::vector<int> ext(cfg_.window + 2);
  ext[0] = 0;
  for (int f = 0; f < cfg_.window; ++f) ext[f + 1] = f;
  ext[cfg_.window + 1] = cfg_.window - 1;
  Var y = style_tconv_(g, ad::gather_rows(h, std::move(ext)));
  return ad::rows(y, 1, cfg_.window);
}

std::vector<Var> GuidanceDecoder::pyramid_graph(Graph& g, Var style) const {
  ensure(style.rows() == cfg_.window && style.cols() == cfg_.style_hidden, ErrorKind::validation,
         "guidance: style feature shape mismatch");
  const int f = cfg_.window;
  Var x = ad::tile_cols(g.param(*base_), f);
  std::vector<Var> out(cfg_.levels());
  for (int l = cfg_.levels() - 1; l >= 0; --l) {
    if (l < cfg_.levels() - 1) {
      ad::ConvDims prev{f, cfg_.level_h(l + 1), cfg_.level_w(l + 1)};
      x = ad::upsample2(x, prev);
    }
    ad::ConvDims d{f, cfg_.level_h(l), cfg_.level_w(l)};
    x = level_conv_[l](g, x, d);
    x = ad::adain(x, level_proj_[l](g, style), f);
    x = ad::relu(x);
    out[l] = x;
  }
  return out;
}

GuidancePyramid GuidanceDecoder::decode(const PoseCodec& codec, const TokenWindow& win) const {
  Graph g;
  std::vector<Var> levels = pyramid_graph(g, style_features(g, codec, win));
  GuidancePyramid out;
  out.frames = cfg_.window;
  for (Var& v : levels) out.levels.push_back(v.val());
  return out;
}

namespace {

json guidance_config_to_json(const GuidanceConfig& c) {
  return json{{"base_h", c.base_h},     {"base_w", c.base_w},
              {"channels", c.channels}, {"window", c.window},
              {"style_hidden", c.style_hidden}, {"seed", c.seed}};
}

GuidanceConfig guidance_config_from_json(const json& j) {
  GuidanceConfig c;
  try {
    c.base_h = j.at("base_h").get<int>();
    c.base_w = j.at("base_w").get<int>();
    c.channels = j.at("channels").get<std::vector<int>>();
    c.window = j.at("window").get<int>();
    c.style_hidden = j.at("style_hidden").get<int>();
    c.seed = j.at("seed").get<uint64_t>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, std::string("guidance config fields: ") + e.what());
  }
  return c;
}

}  // namespace

void GuidanceDecoder::save(const std::string& path, const nn::AdamW* opt) const {
  json meta;
  meta["kind"] = "guidance_decoder";
  meta["config"] = guidance_config_to_json(cfg_);
  meta["parts"] = parts_;
  meta["style_in"] = style_in_;
  save_model(path, meta, params_, opt);
}

GuidanceDecoder GuidanceDecoder::load(const std::string& path, const CodecConfig& codec_cfg,
                                      int parts, nn::AdamW* opt) {
  std::vector<NamedBlob> peek;
  json meta = load_checkpoint(path, peek);
  ensure(meta.value("kind", "") == "guidance_decoder", ErrorKind::format,
         "checkpoint is not a guidance decoder");
  GuidanceDecoder d = create(guidance_config_from_json(meta.at("config")), codec_cfg, parts);
  ensure(meta.value("parts", -1) == parts && meta.value("style_in", -1) == d.style_in_,
         ErrorKind::structural, "checkpoint was trained against a different codec shape");
  load_model(path, d.params_, opt);
  return d;
}

}  // namespace choreo
