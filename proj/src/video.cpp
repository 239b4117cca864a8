// Copyright (C) 2026 the choreo authors
// SPDX-License-Identifier: Apache-2.0
#include "choreo/video.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <numeric>

#include "choreo/checkpoint.hpp"
#include "choreo/error.hpp"
#include "choreo/image.hpp"

namespace choreo {

using ad::Graph;
using ad::Mat;
using ad::Var;
using nlohmann::json;

DiffusionSchedule DiffusionSchedule::linear(int steps, double beta_min, double beta_max) {
  ensure(steps >= 1, ErrorKind::config, "schedule: need at least one step");
  ensure(beta_min > 0.0 && beta_max < 1.0 && beta_min <= beta_max, ErrorKind::config,
         "schedule: betas must satisfy 0 < min <= max < 1");
  DiffusionSchedule s;
  s.beta.resize(steps);
  s.alpha_bar.resize(steps);
  double prod = 1.0;
  for (int i = 0; i < steps; ++i) {
    s.beta(i) = steps == 1 ? beta_min
                           : beta_min + (beta_max - beta_min) * i / static_cast<double>(steps - 1);
    prod *= 1.0 - s.beta(i);
    s.alpha_bar(i) = prod;
  }
  s.check_valid();
  return s;
}

void DiffusionSchedule::check_valid() const {
  ensure(beta.size() >= 1 && alpha_bar.size() == beta.size(), ErrorKind::config,
         "schedule: empty or mismatched");
  for (int i = 0; i < steps(); ++i) {
    ensure(beta(i) > 0.0 && beta(i) < 1.0, ErrorKind::config, "schedule: beta out of (0,1)");
    ensure(alpha_bar(i) > 0.0 && alpha_bar(i) <= 1.0, ErrorKind::config,
           "schedule: alpha_bar out of (0,1]");
    if (i > 0) {
      ensure(beta(i) >= beta(i - 1), ErrorKind::config, "schedule: beta must ascend");
      ensure(alpha_bar(i) < alpha_bar(i - 1), ErrorKind::config,
             "schedule: alpha_bar must descend");
    }
  }
}

Eigen::MatrixXd ddpm_noise(const DiffusionSchedule& s, const Eigen::MatrixXd& x0, int t,
                           const Eigen::MatrixXd& eps) {
  ensure(t >= 1 && t <= s.steps(), ErrorKind::validation, "ddpm_noise: t out of range");
  ensure(x0.rows() == eps.rows() && x0.cols() == eps.cols(), ErrorKind::validation,
         "ddpm_noise: shape mismatch");
  double ab = s.alpha_bar(t - 1);
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

void VideoClip::check_valid() const {
  ensure(frames >= 1 && h >= 1 && w >= 1, ErrorKind::validation, "clip: empty");
  ensure(pixels.rows() == 3 && pixels.cols() == static_cast<Eigen::Index>(frames) * h * w,
         ErrorKind::validation, "clip: pixel shape mismatch");
  ensure(pixels.allFinite(), ErrorKind::validation, "clip: non-finite pixels");
  ensure(pixels.minCoeff() >= 0.0 && pixels.maxCoeff() <= 1.0, ErrorKind::validation,
         "clip: pixels out of [0,1]");
}

VideoClip render_pose_window(const PoseSequence& seq, const SkeletonTopology& topo, int start,
                             int frames, int h, int w) {
  ensure(seq.length() >= 1, ErrorKind::validation, "render window: empty sequence");
  ensure(start >= 0 && start < seq.length(), ErrorKind::validation,
         "render window: start out of range");
  ensure(frames >= 1 && h >= 1 && w >= 1, ErrorKind::validation, "render window: empty output");
  VideoClip clip;
  clip.frames = frames;
  clip.h = h;
  clip.w = w;
  clip.fps = seq.fps;
  clip.pixels.resize(3, static_cast<Eigen::Index>(frames) * h * w);
  for (int f = 0; f < frames; ++f) {
    int src = std::min(start + f, seq.length() - 1);
    Image im = render_skeleton(seq.frames[src], topo, h, w);
    clip.pixels.middleCols(static_cast<Eigen::Index>(f) * h * w, h * w) = image_to_matrix(im);
  }
  return clip;
}

void write_video_dir(const std::string& dir, const VideoClip& clip,
                     const nlohmann::json& manifest_extra) {
  clip.check_valid();
  std::filesystem::create_directories(dir);
  for (int f = 0; f < clip.frames; ++f) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%04d.png", f);
    write_png((std::filesystem::path(dir) / name).string(),
              matrix_to_image(clip.frame(f), clip.h, clip.w));
  }
  json manifest = manifest_extra;
  manifest["fps"] = clip.fps;
  manifest["frames"] = clip.frames;
  manifest["h"] = clip.h;
  manifest["w"] = clip.w;
  std::ofstream out(std::filesystem::path(dir) / "manifest.json");
  ensure(out.good(), ErrorKind::io, "cannot write video manifest");
  out << manifest.dump(2) << "\n";
}

void VideoConfig::check_valid() const {
  ensure(h >= 1 && w >= 1 && frames >= 1, ErrorKind::config, "video: empty shape");
  ensure(levels() >= 2, ErrorKind::config, "video: need at least two levels");
  for (int c : channels) ensure(c >= 1, ErrorKind::config, "video: channels must be positive");
  int div = 1 << (levels() - 1);
  ensure(h % div == 0 && w % div == 0, ErrorKind::config,
         "video: image must divide evenly across the pyramid");
  ensure(diff_steps >= 1, ErrorKind::config, "video: need at least one diffusion step");
  ensure(beta_min > 0.0 && beta_max < 1.0 && beta_min <= beta_max, ErrorKind::config,
         "video: bad beta range");
}

void ensure_guidance_match(const VideoConfig& v, const GuidanceConfig& g) {
  ensure(g.levels() == v.levels(), ErrorKind::structural,
         "guidance and denoiser level counts differ");
  ensure(g.channels == v.channels, ErrorKind::structural,
         "guidance and denoiser channel counts differ");
  ensure(g.window == v.frames, ErrorKind::structural,
         "guidance window and denoiser frame count differ");
  for (int l = 0; l < v.levels(); ++l)
    ensure(g.level_h(l) == v.h >> l && g.level_w(l) == v.w >> l, ErrorKind::structural,
           "guidance level shapes do not match the denoiser features");
}

VideoDenoiser VideoDenoiser::create(const VideoConfig& cfg) {
  cfg.check_valid();
  VideoDenoiser m;
  m.cfg_ = cfg;
  m.sched_ = DiffusionSchedule::linear(cfg.diff_steps, cfg.beta_min, cfg.beta_max);
  RngStream rng(cfg.seed);
  const int levels = cfg.levels();
  const int cl = cfg.channels.back();

  for (int l = 0; l < levels; ++l) {
    int cin = l == 0 ? 3 : cfg.channels[l - 1];
    m.enc_.push_back(nn::Conv2d::create(m.params_, "enc" + std::to_string(l) + ".conv", cin,
                                        cfg.channels[l], 3, rng));
  }
  for (int l = 0; l < levels; ++l) {
    m.temb_.push_back(
        &m.params_.create("temb" + std::to_string(l), cfg.diff_steps, cfg.channels[l]));
    nn::init_normal(*m.temb_.back(), rng, 0.02);
  }
  m.gscale_ = &m.params_.create("gscale", levels, 1);  // stays zero at init
  m.sattn_ln_ = nn::LayerNorm::create(m.params_, "sattn.ln", cl);
  m.sattn_q_ = nn::Linear::create(m.params_, "sattn.q", cl, cl, rng);
  m.sattn_k_ = nn::Linear::create(m.params_, "sattn.k", cl, cl, rng);
  m.sattn_v_ = nn::Linear::create(m.params_, "sattn.v", cl, cl, rng);
  m.sattn_o_ = nn::Linear::create(m.params_, "sattn.o", cl, cl, rng);
  m.tattn_ln_ = nn::LayerNorm::create(m.params_, "tattn.ln", cl);
  m.tattn_q_ = nn::Linear::create(m.params_, "tattn.q", cl, cl, rng);
  m.tattn_k_ = nn::Linear::create(m.params_, "tattn.k", cl, cl, rng);
  m.tattn_v_ = nn::Linear::create(m.params_, "tattn.v", cl, cl, rng);
  m.tattn_o_ = nn::Linear::create(m.params_, "tattn.o", cl, cl, rng);
  m.tpos_ = &m.params_.create("tattn.pos", cfg.frames, cl);
  nn::init_normal(*m.tpos_, rng, 0.02);
  m.dec_.resize(levels - 1);
  for (int l = levels - 2; l >= 0; --l)
    m.dec_[l] = nn::Conv2d::create(m.params_, "dec" + std::to_string(l) + ".conv",
                                   cfg.channels[l + 1] + cfg.channels[l], cfg.channels[l], 3, rng);
  m.out_conv_ = nn::Conv2d::create(m.params_, "out.conv", cfg.channels[0], 3, 3, rng);
  m.out_conv_.w->value.setZero();  // epsilon-prediction starts at exactly zero
  for (int l = 0; l < levels; ++l) {
    int cin = l == 0 ? 3 : cfg.channels[l - 1];
    m.ref_enc_.push_back(nn::Conv2d::create(m.params_, "ref" + std::to_string(l) + ".conv", cin,
                                            cfg.channels[l], 3, rng));
  }
  return m;
}

Var VideoDenoiser::encoder_stack(Graph& g, Var x, int t, int frames,
                                 const std::vector<Var>& guidance,
                                 const std::vector<nn::Conv2d>& enc, bool with_time,
                                 std::vector<Var>* skips) const {
  Var h = x;
  for (int l = 0; l < cfg_.levels(); ++l) {
    ad::ConvDims d{frames, cfg_.h >> l, cfg_.w >> l};
    h = enc[l](g, h, d);
    if (with_time)
      h = ad::add_colvec(h, ad::transpose(ad::gather_rows(g.param(*temb_[l]), {t - 1})));
    h = ad::relu(h);
    if (!guidance.empty())
      h = ad::add(h, ad::scale_by(guidance[l], ad::rows(g.param(*gscale_), l, 1)));
    if (skips) skips->push_back(h);
    if (l + 1 < cfg_.levels()) h = ad::avg_pool2(h, d);
  }
  return h;
}

Var VideoDenoiser::reference_tokens(Graph& g, const Eigen::MatrixXd& ref_image) const {
  ensure(ref_image.rows() == 3 && ref_image.cols() == static_cast<Eigen::Index>(cfg_.h) * cfg_.w,
         ErrorKind::validation, "reference image shape mismatch");
  ensure(ref_image.allFinite(), ErrorKind::validation, "reference image must be finite");
  return encoder_stack(g, g.input(ref_image), 0, 1, {}, ref_enc_, false, nullptr);
}

Eigen::MatrixXd VideoDenoiser::reference_tokens_eval(const Eigen::MatrixXd& ref_image) const {
  Graph g;
  return reference_tokens(g, ref_image).val();
}

Var VideoDenoiser::temporal_stage(Graph& g, Var x, int hw,
                                  const std::vector<int>& pos_of_frame) const {
  const int frames = cfg_.frames;
  ensure(static_cast<int>(pos_of_frame.size()) == frames, ErrorKind::validation,
         "temporal stage: need one position row per frame");
  for (int p : pos_of_frame)
    ensure(p >= 0 && p < frames, ErrorKind::validation, "temporal stage: position out of range");
  Var tm = ad::to_time_major(x, frames, hw);
  std::vector<int> pidx(static_cast<size_t>(hw) * frames);
  for (int p = 0; p < hw; ++p)
    for (int f = 0; f < frames; ++f) pidx[static_cast<size_t>(p) * frames + f] = pos_of_frame[f];
  Var h = tattn_ln_(g, ad::add(tm, ad::gather_rows(g.param(*tpos_), std::move(pidx))));
  Var at =
      ad::block_attention(tattn_q_(g, h), tattn_k_(g, h), tattn_v_(g, h), frames, frames, false);
  return ad::add(x, ad::from_time_major(tattn_o_(g, at), frames, hw));
}

Var VideoDenoiser::predict_noise(Graph& g, Var x_t, int t, const std::vector<Var>& guidance,
                                 Var ref) const {
  const int levels = cfg_.levels();
  const int frames = cfg_.frames;
  ensure(x_t.rows() == 3 && x_t.cols() == static_cast<Eigen::Index>(frames) * cfg_.h * cfg_.w,
         ErrorKind::validation, "denoiser input shape mismatch");
  ensure(t >= 1 && t <= cfg_.diff_steps, ErrorKind::validation, "diffusion step out of range");
  if (!guidance.empty()) {
    ensure(static_cast<int>(guidance.size()) == levels, ErrorKind::validation,
           "guidance level count mismatch");
    for (int l = 0; l < levels; ++l)
      ensure(guidance[l].rows() == cfg_.channels[l] &&
                 guidance[l].cols() ==
                     static_cast<Eigen::Index>(frames) * (cfg_.h >> l) * (cfg_.w >> l),
             ErrorKind::validation, "guidance map shape mismatch");
  }
  const int hw_l = (cfg_.h >> (levels - 1)) * (cfg_.w >> (levels - 1));
  ensure(ref.rows() == cfg_.channels.back() && ref.cols() == hw_l, ErrorKind::validation,
         "reference token shape mismatch");

  std::vector<Var> skips;
  Var mid = encoder_stack(g, x_t, t, frames, guidance, enc_, true, &skips);

  // spatial attention; reference tokens join the keys/values of every frame
  Var tok = ad::transpose(mid);
  Var kv = ad::transpose(ad::interleave_cols(mid, ad::tile_cols(ref, frames), frames));
  Var hq = sattn_ln_(g, tok);
  Var hkv = sattn_ln_(g, kv);
  Var att = ad::block_attention(sattn_q_(g, hq), sattn_k_(g, hkv), sattn_v_(g, hkv), hw_l,
                                2 * hw_l, false);
  Var x = ad::add(mid, ad::transpose(sattn_o_(g, att)));

  std::vector<int> ident(frames);
  std::iota(ident.begin(), ident.end(), 0);
  x = temporal_stage(g, x, hw_l, ident);

  for (int l = levels - 2; l >= 0; --l) {
    ad::ConvDims below{frames, cfg_.h >> (l + 1), cfg_.w >> (l + 1)};
    ad::ConvDims here{frames, cfg_.h >> l, cfg_.w >> l};
    x = ad::upsample2(x, below);
    x = ad::relu(dec_[l](g, ad::concat_rows({x, skips[l]}), here));
  }
  return out_conv_(g, x, ad::ConvDims{frames, cfg_.h, cfg_.w});
}

Eigen::MatrixXd VideoDenoiser::predict_noise_eval(const Eigen::MatrixXd& x_t, int t,
                                                  const GuidancePyramid* guidance,
                                                  const Eigen::MatrixXd& ref_tokens) const {
  Graph g;
  std::vector<Var> gv;
  if (guidance) {
    ensure(guidance->frames == cfg_.frames, ErrorKind::validation,
           "guidance frame count mismatch");
    for (const Eigen::MatrixXd& lvl : guidance->levels) gv.push_back(g.input(lvl));
  }
  return predict_noise(g, g.input(x_t), t, gv, g.input(ref_tokens)).val();
}

namespace {

json video_config_to_json(const VideoConfig& c) {
  return json{{"h", c.h},
              {"w", c.w},
              {"frames", c.frames},
              {"channels", c.channels},
              {"diff_steps", c.diff_steps},
              {"beta_min", c.beta_min},
              {"beta_max", c.beta_max},
              {"seed", c.seed}};
}

VideoConfig video_config_from_json(const json& j) {
  VideoConfig c;
  try {
    c.h = j.at("h").get<int>();
    c.w = j.at("w").get<int>();
    c.frames = j.at("frames").get<int>();
    c.channels = j.at("channels").get<std::vector<int>>();
    c.diff_steps = j.at("diff_steps").get<int>();
    c.beta_min = j.at("beta_min").get<double>();
    c.beta_max = j.at("beta_max").get<double>();
    c.seed = j.at("seed").get<uint64_t>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, std::string("video config fields: ") + e.what());
  }
  return c;
}

Mat normal_matrix(int rows, Eigen::Index cols, RngStream& rng) {
  Mat m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (int r = 0; r < rows; ++r) m(r, c) = rng.normal();
  return m;
}

}  // namespace

void VideoDenoiser::save(const std::string& path, const nn::AdamW* opt) const {
  json meta;
  meta["kind"] = "video_denoiser";
  meta["config"] = video_config_to_json(cfg_);
  save_model(path, meta, params_, opt);
}

VideoDenoiser VideoDenoiser::load(const std::string& path, nn::AdamW* opt) {
  std::vector<NamedBlob> peek;
  json meta = load_checkpoint(path, peek);
  ensure(meta.value("kind", "") == "video_denoiser", ErrorKind::format,
         "checkpoint is not a video denoiser");
  VideoDenoiser m = create(video_config_from_json(meta.at("config")));
  load_model(path, m.params_, opt);
  return m;
}

double video_train_step(VideoDenoiser& model, GuidanceDecoder& gdec, const PoseCodec& codec,
                        const VideoClip& clip, const TokenWindow& win,
                        const Eigen::MatrixXd& ref_image, nn::AdamW& opt_model,
                        nn::AdamW& opt_gdec, RngStream& rng) {
  ensure_guidance_match(model.config(), gdec.config());
  clip.check_valid();
  ensure(clip.frames == model.config().frames && clip.h == model.config().h &&
             clip.w == model.config().w,
         ErrorKind::validation, "clip shape does not match the denoiser");
  int t = static_cast<int>(rng.uniform_int(1, model.schedule().steps()));
  Mat eps = normal_matrix(3, clip.pixels.cols(), rng);
  Mat x_t = ddpm_noise(model.schedule(), clip.pixels, t, eps);
  Graph g;
  std::vector<Var> pyr = gdec.pyramid_graph(g, gdec.style_features(g, codec, win));
  Var ref = model.reference_tokens(g, ref_image);
  Var eh = model.predict_noise(g, g.input(x_t), t, pyr, ref);
  Var loss = ad::mse(eh, g.input(eps));
  g.backward(loss);
  opt_model.step(model.params());
  opt_gdec.step(gdec.params());
  return loss.val()(0, 0);
}

double video_loss(const VideoDenoiser& model, const GuidanceDecoder& gdec, const PoseCodec& codec,
                  const VideoClip& clip, const TokenWindow& win, const Eigen::MatrixXd& ref_image,
                  int t, const Eigen::MatrixXd& eps) {
  ensure_guidance_match(model.config(), gdec.config());
  clip.check_valid();
  ensure(eps.rows() == 3 && eps.cols() == clip.pixels.cols(), ErrorKind::validation,
         "noise shape does not match the clip");
  Mat x_t = ddpm_noise(model.schedule(), clip.pixels, t, eps);
  Graph g;
  std::vector<Var> pyr = gdec.pyramid_graph(g, gdec.style_features(g, codec, win));
  Var ref = model.reference_tokens(g, ref_image);
  Var eh = model.predict_noise(g, g.input(x_t), t, pyr, ref);
  return ad::mse(eh, g.input(eps)).val()(0, 0);
}

VideoClip sample_video(const VideoDenoiser& model, const GuidanceDecoder& gdec,
                       const PoseCodec& codec, const TokenWindow& win,
                       const Eigen::MatrixXd& ref_image, uint64_t seed, bool use_guidance) {
  ensure_guidance_match(model.config(), gdec.config());
  const VideoConfig& cfg = model.config();
  const DiffusionSchedule& s = model.schedule();
  GuidancePyramid pyr;
  if (use_guidance) pyr = gdec.decode(codec, win);
  Mat ref_tokens = model.reference_tokens_eval(ref_image);
  RngStream rng(seed);
  Mat x = normal_matrix(3, static_cast<Eigen::Index>(cfg.frames) * cfg.h * cfg.w, rng);
  for (int t = s.steps(); t >= 1; --t) {
    Mat eh = model.predict_noise_eval(x, t, use_guidance ? &pyr : nullptr, ref_tokens);
    double b = s.beta(t - 1);
    double ab = s.alpha_bar(t - 1);
    x = (x - (b / std::sqrt(1.0 - ab)) * eh) / std::sqrt(1.0 - b);
    if (t > 1) {
      double ab_prev = s.alpha_bar(t - 2);
      double sigma = std::sqrt((1.0 - ab_prev) / (1.0 - ab) * b);
      x += sigma * normal_matrix(3, x.cols(), rng);
    }
  }
  VideoClip out;
  out.frames = cfg.frames;
  out.h = cfg.h;
  out.w = cfg.w;
  out.fps = win.grid.fps;
  out.pixels = x.cwiseMax(0.0).cwiseMin(1.0);
  return out;
}

}  // namespace choreo
