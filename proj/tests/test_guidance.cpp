// Copyright (C) 2026 the choreo authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "choreo/checkpoint.hpp"
#include "choreo/error.hpp"
#include "choreo/guidance.hpp"
#include "choreo/rng.hpp"

using namespace choreo;

namespace {

SkeletonTopology five_joint_topology() {
  SkeletonTopology t;
  t.joint_names = {"a", "b", "c", "d", "e"};
  t.part_of = {0, 1, 2, 3, 4};
  t.validate();
  return t;
}

CodecConfig tiny_codec_config() {
  CodecConfig c;
  c.tokens_per_part = 2;
  c.latent_dim = 2;
  c.codebook_size = 8;
  c.hidden = 8;
  c.seed = 3;
  return c;
}

GuidanceConfig tiny_guidance_config() {
  GuidanceConfig c;
  c.base_h = 4;
  c.base_w = 2;
  c.channels = {4, 6};
  c.window = 3;
  c.style_hidden = 8;
  c.seed = 4;
  return c;
}

TokenWindow random_window(const GuidanceConfig& gc, const CodecConfig& cc, int parts,
                          uint64_t seed) {
  TokenWindow w;
  w.grid.t = gc.window;
  w.grid.b = parts;
  w.grid.k = cc.tokens_per_part;
  w.grid.idx.resize(static_cast<size_t>(gc.window) * parts * cc.tokens_per_part);
  RngStream rng(seed);
  for (int& v : w.grid.idx) v = static_cast<int>(rng.uniform_int(0, cc.codebook_size - 1));
  w.part_conf.resize(gc.window, parts);
  for (int f = 0; f < gc.window; ++f)
    for (int j = 0; j < parts; ++j) w.part_conf(f, j) = rng.uniform(0.0, 1.0);
  w.valid_frames = gc.window;
  return w;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_SUITE("guidance") {
  TEST_CASE("window slicing repeats the last real frame") {
    PartTokenGrid grid;
    grid.t = 5;
    grid.b = 2;
    grid.k = 1;
    grid.idx = {1, 2, 3, 4, 5, 6, 7, 0, 2, 4};
    Eigen::MatrixXd conf(5, 2);
    for (int f = 0; f < 5; ++f) {
      conf(f, 0) = 0.1 * f;
      conf(f, 1) = 0.5;
    }
    TokenWindow w = slice_token_window(grid, conf, 3, 4);
    CHECK(w.valid_frames == 2);
    CHECK(w.grid.t == 4);
    CHECK(w.grid.at(0, 0, 0) == grid.at(3, 0, 0));
    CHECK(w.grid.at(1, 0, 0) == grid.at(4, 0, 0));
    CHECK(w.grid.at(2, 0, 0) == grid.at(4, 0, 0));
    CHECK(w.grid.at(3, 1, 0) == grid.at(4, 1, 0));
    CHECK(w.part_conf(3, 0) == conf(4, 0));

    TokenWindow full = slice_token_window(grid, conf, 0, 4);
    CHECK(full.valid_frames == 4);
    CHECK(full.grid.at(3, 0, 0) == grid.at(3, 0, 0));

    CHECK_THROWS_AS(slice_token_window(grid, conf, 5, 4), Error);
    CHECK_THROWS_AS(slice_token_window(grid, conf.topRows(4), 0, 4), Error);
  }

  TEST_CASE("pyramid shapes follow the configuration") {
    CodecConfig cc = tiny_codec_config();
    PoseCodec codec = PoseCodec::create(cc, five_joint_topology());
    GuidanceConfig gc = tiny_guidance_config();
    GuidanceDecoder dec = GuidanceDecoder::create(gc, cc, codec.parts());
    CHECK(dec.style_input_width() == codec.parts() * cc.tokens_per_part * cc.latent_dim +
                                         codec.parts());
    TokenWindow win = random_window(gc, cc, codec.parts(), 11);
    GuidancePyramid p = dec.decode(codec, win);
    REQUIRE(static_cast<int>(p.levels.size()) == gc.levels());
    CHECK(p.frames == gc.window);
    for (int l = 0; l < gc.levels(); ++l) {
      CHECK(p.levels[l].rows() == gc.channels[l]);
      CHECK(p.levels[l].cols() ==
            static_cast<Eigen::Index>(gc.window) * gc.level_h(l) * gc.level_w(l));
      CHECK(p.levels[l].allFinite());
    }
    CHECK(gc.level_h(0) == 8);
    CHECK(gc.level_w(0) == 4);
    CHECK(gc.level_h(1) == 4);
  }

  TEST_CASE("identical frames give identical per-frame pyramids") {
    CodecConfig cc = tiny_codec_config();
    PoseCodec codec = PoseCodec::create(cc, five_joint_topology());
    GuidanceConfig gc = tiny_guidance_config();
    GuidanceDecoder dec = GuidanceDecoder::create(gc, cc, codec.parts());
    TokenWindow win = random_window(gc, cc, codec.parts(), 13);
    for (int f = 1; f < gc.window; ++f) {
      for (int j = 0; j < win.grid.b; ++j)
        for (int k = 0; k < win.grid.k; ++k) win.grid.at(f, j, k) = win.grid.at(0, j, k);
      win.part_conf.row(f) = win.part_conf.row(0);
    }
    GuidancePyramid p = dec.decode(codec, win);
    for (int l = 0; l < gc.levels(); ++l) {
      int hw = gc.level_h(l) * gc.level_w(l);
      for (int f = 1; f < gc.window; ++f)
        CHECK((p.levels[l].middleCols(f * hw, hw).array() ==
               p.levels[l].middleCols(0, hw).array())
                  .all());
    }
  }

  TEST_CASE("maps depend on the tokens and nothing else") {
    CodecConfig cc = tiny_codec_config();
    PoseCodec codec = PoseCodec::create(cc, five_joint_topology());
    GuidanceConfig gc = tiny_guidance_config();
    GuidanceDecoder dec = GuidanceDecoder::create(gc, cc, codec.parts());
    TokenWindow win = random_window(gc, cc, codec.parts(), 17);
    GuidancePyramid a = dec.decode(codec, win);
    GuidancePyramid b = dec.decode(codec, win);
    for (int l = 0; l < gc.levels(); ++l)
      CHECK((a.levels[l].array() == b.levels[l].array()).all());

    TokenWindow moved = win;
    moved.grid.at(1, 2, 0) = (moved.grid.at(1, 2, 0) + 1) % cc.codebook_size;
    GuidancePyramid c = dec.decode(codec, moved);
    bool changed = false;
    for (int l = 0; l < gc.levels(); ++l)
      if (!(a.levels[l].array() == c.levels[l].array()).all()) changed = true;
    CHECK(changed);

    TokenWindow conf_moved = win;
    conf_moved.part_conf(0, 0) += 0.25;
    GuidancePyramid d = dec.decode(codec, conf_moved);
    changed = false;
    for (int l = 0; l < gc.levels(); ++l)
      if (!(a.levels[l].array() == d.levels[l].array()).all()) changed = true;
    CHECK(changed);
  }

  TEST_CASE("gradient reaches the codebook embeddings") {
    CodecConfig cc = tiny_codec_config();
    PoseCodec codec = PoseCodec::create(cc, five_joint_topology());
    GuidanceConfig gc = tiny_guidance_config();
    GuidanceDecoder dec = GuidanceDecoder::create(gc, cc, codec.parts());
    TokenWindow win = random_window(gc, cc, codec.parts(), 19);
    for (int j = 0; j < codec.parts(); ++j) codec.codebook(j, 0).entries->trainable = true;
    codec.params().zero_grads();
    dec.params().zero_grads();

    auto loss_value = [&]() {
      GuidancePyramid p = dec.decode(codec, win);
      double s = 0.0;
      for (const Eigen::MatrixXd& lvl : p.levels) s += lvl.array().square().mean();
      return s;
    };

    ad::Graph g;
    ad::Var style = dec.style_features(g, codec, win);
    std::vector<ad::Var> pyr = dec.pyramid_graph(g, style);
    ad::Var loss;
    for (ad::Var& v : pyr) {
      ad::Var m = ad::mse(v, g.input(Eigen::MatrixXd::Zero(v.rows(), v.cols())));
      loss = loss.valid() ? ad::add(loss, m) : m;
    }
    CHECK(loss.val()(0, 0) == doctest::Approx(loss_value()).epsilon(1e-12));
    g.backward(loss);

    ad::Param* entries = codec.codebook(0, 0).entries;
    double best = 0.0;
    int br = 0, bc = 0;
    for (int r = 0; r < entries->grad.rows(); ++r)
      for (int c = 0; c < entries->grad.cols(); ++c)
        if (std::abs(entries->grad(r, c)) > best) {
          best = std::abs(entries->grad(r, c));
          br = r;
          bc = c;
        }
    REQUIRE(best > 1e-8);
    double analytic = entries->grad(br, bc);
    const double h = 1e-5;
    entries->value(br, bc) += h;
    double up = loss_value();
    entries->value(br, bc) -= 2 * h;
    double dn = loss_value();
    entries->value(br, bc) += h;
    double fd = (up - dn) / (2 * h);
    CHECK(std::abs(fd - analytic) / std::max(std::abs(analytic), 1e-12) < 1e-3);
  }

  TEST_CASE("out-of-range tokens are rejected") {
    CodecConfig cc = tiny_codec_config();
    PoseCodec codec = PoseCodec::create(cc, five_joint_topology());
    GuidanceConfig gc = tiny_guidance_config();
    GuidanceDecoder dec = GuidanceDecoder::create(gc, cc, codec.parts());
    TokenWindow win = random_window(gc, cc, codec.parts(), 23);
    win.grid.idx[2] = cc.codebook_size;
    try {
      dec.decode(codec, win);
      FAIL("token past the codebook accepted");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::validation);
    }
    TokenWindow wrong_len = random_window(gc, cc, codec.parts(), 23);
    wrong_len.grid.t = gc.window + 1;
    wrong_len.grid.idx.resize(static_cast<size_t>(wrong_len.grid.t) * wrong_len.grid.b *
                              wrong_len.grid.k);
    CHECK_THROWS_AS(dec.decode(codec, wrong_len), Error);
  }

  TEST_CASE("checkpoints restore the decoder") {
    CodecConfig cc = tiny_codec_config();
    PoseCodec codec = PoseCodec::create(cc, five_joint_topology());
    GuidanceConfig gc = tiny_guidance_config();
    GuidanceDecoder a = GuidanceDecoder::create(gc, cc, codec.parts());
    std::string path = temp_path("choreo_guidance_ckpt.bin");
    a.save(path);
    GuidanceDecoder b = GuidanceDecoder::load(path, cc, codec.parts());
    auto f32 = [](double v) { return static_cast<double>(static_cast<float>(v)); };
    const auto& pa = a.params().items();
    const auto& pb = b.params().items();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) {
      CHECK(pa[i]->name == pb[i]->name);
      CHECK((pb[i]->value - pa[i]->value.unaryExpr(f32)).cwiseAbs().maxCoeff() == 0.0);
    }
    CodecConfig other = cc;
    other.latent_dim = 3;
    CHECK_THROWS_AS(GuidanceDecoder::load(path, other, codec.parts()), Error);
    std::filesystem::remove(path);
  }

  TEST_CASE("configuration validation") {
    GuidanceConfig c = tiny_guidance_config();
    c.channels.clear();
    CHECK_THROWS_AS(c.check_valid(), Error);
    c = tiny_guidance_config();
    c.window = 0;
    CHECK_THROWS_AS(c.check_valid(), Error);
    c = tiny_guidance_config();
    c.base_h = 0;
    CHECK_THROWS_AS(c.check_valid(), Error);
  }
}
