// Copyright (C) 2026 the choreo authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>
#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "choreo/error.hpp"
#include "choreo/image.hpp"
#include "choreo/pose.hpp"
#include "choreo/rng.hpp"

using namespace choreo;

namespace {

PoseFrame random_frame(int joints, RngStream& rng) {
  PoseFrame f = PoseFrame::zeros(joints);
  for (int j = 0; j < joints; ++j) {
    f.kp(j, 0) = rng.uniform(-0.1, 1.1);
    f.kp(j, 1) = rng.uniform(-0.1, 1.1);
    f.conf(j) = rng.uniform();
  }
  return f;
}

uint32_t read_be32(const std::vector<uint8_t>& buf, size_t at) {
  return (static_cast<uint32_t>(buf[at]) << 24) | (static_cast<uint32_t>(buf[at + 1]) << 16) |
         (static_cast<uint32_t>(buf[at + 2]) << 8) | static_cast<uint32_t>(buf[at + 3]);
}

}  // namespace

TEST_SUITE("pose") {
  TEST_CASE("standard topology shape") {
    SkeletonTopology topo = SkeletonTopology::standard60();
    CHECK(topo.joints() == 60);
    CHECK(topo.part_size(0) == 7);
    CHECK(topo.part_size(1) == 6);
    CHECK(topo.part_size(2) == 5);
    CHECK(topo.part_size(3) == 21);
    CHECK(topo.part_size(4) == 21);
    CHECK(topo.joint_names[0] == "neck");
    CHECK(topo.joint_names[18] == "l_hand_root");
    CHECK(topo.joint_names[39] == "r_hand_root");
    // every joint appears in exactly one part list
    std::set<int> seen;
    for (const auto& pj : topo.part_joints)
      for (int j : pj) CHECK(seen.insert(j).second);
    CHECK(seen.size() == 60);
  }

  TEST_CASE("topology json round trip and hash stability") {
    SkeletonTopology topo = SkeletonTopology::standard60();
    std::string text = topo.to_json();
    SkeletonTopology back = SkeletonTopology::from_json(text);
    CHECK(back.joints() == topo.joints());
    CHECK(back.bones == topo.bones);
    CHECK(back.part_of == topo.part_of);
    CHECK(back.content_hash() == topo.content_hash());
    CHECK(topo.content_hash() == topo.content_hash());
    CHECK(topo.content_hash().size() == 64);
  }

  TEST_CASE("topology validation rejects bad structures") {
    SkeletonTopology t = SkeletonTopology::standard60();
    SUBCASE("bone out of range") {
      t.bones.emplace_back(0, 99);
      CHECK_THROWS_AS(t.validate(), Error);
    }
    SUBCASE("part id out of range") {
      t.part_of[5] = 7;
      CHECK_THROWS_AS(t.validate(), Error);
    }
    SUBCASE("part_of size mismatch") {
      t.part_of.pop_back();
      CHECK_THROWS_AS(t.validate(), Error);
    }
    SUBCASE("disconnected part") {
      // moving one ear into upper_body disconnects it from that part's bones
      t.part_of[16] = static_cast<int>(BodyPart::upper_body);
      CHECK_THROWS_AS(t.validate(), Error);
    }
    SUBCASE("degenerate bone") {
      t.bones.emplace_back(3, 3);
      CHECK_THROWS_AS(t.validate(), Error);
    }
  }

  TEST_CASE("topology from_json rejects malformed documents") {
    CHECK_THROWS_AS(SkeletonTopology::from_json("not json"), Error);
    CHECK_THROWS_AS(SkeletonTopology::from_json("{}"), Error);
    SkeletonTopology topo = SkeletonTopology::standard60();
    std::string text = topo.to_json();
    // unknown part name
    std::string bad = text;
    size_t at = bad.find("upper_body");
    bad.replace(at, 10, "upper_limb");
    CHECK_THROWS_AS(SkeletonTopology::from_json(bad), Error);
  }

  TEST_CASE("partition and assemble round trip") {
    SkeletonTopology topo = SkeletonTopology::standard60();
    RngStream rng(42);
    for (int it = 0; it < 100; ++it) {
      PoseFrame f = random_frame(60, rng);
      auto parts = partition_pose(f, topo);
      REQUIRE(parts.size() == 5);
      for (int p = 0; p < 5; ++p) CHECK(parts[p].kp.rows() == topo.part_size(parts[p].part_id));
      PoseFrame back = assemble_pose(parts, topo);
      CHECK(back.kp == f.kp);
      CHECK(back.conf == f.conf);
      // assembly must not depend on the order parts are handed over
      std::reverse(parts.begin(), parts.end());
      PoseFrame back2 = assemble_pose(parts, topo);
      CHECK(back2.kp == f.kp);
    }
  }

  TEST_CASE("assemble rejects missing or duplicate parts") {
    SkeletonTopology topo = SkeletonTopology::standard60();
    RngStream rng(7);
    auto parts = partition_pose(random_frame(60, rng), topo);
    SUBCASE("too few") {
      parts.pop_back();
      CHECK_THROWS_AS(assemble_pose(parts, topo), Error);
    }
    SUBCASE("duplicate id") {
      parts[4].part_id = parts[3].part_id;
      CHECK_THROWS_AS(assemble_pose(parts, topo), Error);
    }
    SUBCASE("wrong joint count") {
      parts[0].kp.conservativeResize(3, 2);
      parts[0].conf.conservativeResize(3);
      CHECK_THROWS_AS(assemble_pose(parts, topo), Error);
    }
  }

  TEST_CASE("flat round trip and validity checks") {
    RngStream rng(3);
    PoseFrame f = random_frame(60, rng);
    PoseFrame back = PoseFrame::from_flat(f.flat());
    CHECK(back.kp == f.kp);
    CHECK(back.conf == f.conf);

    PoseFrame bad = f;
    bad.conf(0) = 1.5;
    CHECK_THROWS_AS(bad.check_valid(), Error);
    bad = f;
    bad.kp(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(bad.check_valid(), Error);
    f.check_valid();

    PoseFrame inside = PoseFrame::zeros(2);
    inside.kp << 0.2, 0.3, 0.9, 0.8;
    CHECK_FALSE(inside.any_off_frame());
    inside.kp(0, 0) = -0.01;
    CHECK(inside.any_off_frame());
  }

  TEST_CASE("bresenham line properties") {
    RngStream rng(99);
    for (int it = 0; it < 100; ++it) {
      int x0 = static_cast<int>(rng.uniform_int(0, 63));
      int y0 = static_cast<int>(rng.uniform_int(0, 63));
      int x1 = static_cast<int>(rng.uniform_int(0, 63));
      int y1 = static_cast<int>(rng.uniform_int(0, 63));
      auto pts = bresenham_line(x0, y0, x1, y1);
      REQUIRE(!pts.empty());
      CHECK(pts.front() == std::make_pair(x0, y0));
      CHECK(pts.back() == std::make_pair(x1, y1));
      CHECK(static_cast<int>(pts.size()) == std::max(std::abs(x1 - x0), std::abs(y1 - y0)) + 1);
      for (size_t i = 1; i < pts.size(); ++i) {
        CHECK(std::abs(pts[i].first - pts[i - 1].first) <= 1);
        CHECK(std::abs(pts[i].second - pts[i - 1].second) <= 1);
      }
      // every pixel stays within half a pixel of the ideal line
      double dx = x1 - x0, dy = y1 - y0;
      double len = std::max(1.0, std::hypot(dx, dy));
      for (auto [x, y] : pts) {
        double cross = std::abs((x - x0) * dy - (y - y0) * dx) / len;
        CHECK(cross <= 0.71);
      }
    }
  }

  TEST_CASE("render skeleton determinism and confidence gating") {
    SkeletonTopology topo = SkeletonTopology::standard60();
    PoseFrame f = PoseFrame::zeros(60);
    RngStream rng(5);
    for (int j = 0; j < 60; ++j) {
      f.kp(j, 0) = rng.uniform(0.1, 0.9);
      f.kp(j, 1) = rng.uniform(0.1, 0.9);
    }
    f.conf.setOnes();

    Image a = render_skeleton(f, topo, 128, 128);
    Image b = render_skeleton(f, topo, 128, 128);
    CHECK(a.rgb == b.rgb);

    RenderStyle style;
    // all five part colors appear when everything is confident
    std::set<std::array<uint8_t, 3>> colors;
    for (size_t i = 0; i < a.rgb.size(); i += 3) colors.insert({a.rgb[i], a.rgb[i + 1], a.rgb[i + 2]});
    for (const auto& c : style.part_colors) CHECK(colors.count(c) == 1);

    // below-threshold joints disappear entirely
    PoseFrame dim = f;
    dim.conf.setConstant(style.tau_draw - 0.01);
    Image blank = render_skeleton(dim, topo, 128, 128);
    for (size_t i = 0; i < blank.rgb.size(); ++i) CHECK(blank.rgb[i] == style.background[i % 3]);

    // hiding one part removes exactly that part's color
    PoseFrame nohand = f;
    for (int j : topo.part_joints[static_cast<int>(BodyPart::left_hand)]) nohand.conf(j) = 0.0;
    Image c = render_skeleton(nohand, topo, 128, 128);
    std::set<std::array<uint8_t, 3>> colors2;
    for (size_t i = 0; i < c.rgb.size(); i += 3) colors2.insert({c.rgb[i], c.rgb[i + 1], c.rgb[i + 2]});
    CHECK(colors2.count(style.part_colors[static_cast<int>(BodyPart::left_hand)]) == 0);
    CHECK(colors2.count(style.part_colors[static_cast<int>(BodyPart::right_hand)]) == 1);
  }
}

TEST_SUITE("image") {
  TEST_CASE("png container is well formed") {
    Image im = Image::filled(5, 7, {10, 20, 30});
    im.px(2, 3)[0] = 200;
    im.px(4, 6)[2] = 250;
    std::vector<uint8_t> png = encode_png(im);

    const uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    REQUIRE(png.size() > 8);
    for (int i = 0; i < 8; ++i) CHECK(png[i] == sig[i]);

    // IHDR
    size_t at = 8;
    uint32_t ihdr_len = read_be32(png, at);
    CHECK(ihdr_len == 13);
    CHECK(std::equal(png.begin() + 12, png.begin() + 16, "IHDR"));
    CHECK(read_be32(png, 16) == 7);  // width
    CHECK(read_be32(png, 20) == 5);  // height
    CHECK(png[24] == 8);             // bit depth
    CHECK(png[25] == 2);             // truecolor
    uint32_t crc_stored = read_be32(png, 8 + 4 + 4 + 13);
    uint32_t crc_calc = crc32(0L, png.data() + 12, 4 + 13);
    CHECK(crc_stored == crc_calc);

    // IDAT must inflate back to filter-0 scanlines
    at = 8 + 4 + 4 + 13 + 4;
    uint32_t idat_len = read_be32(png, at);
    REQUIRE(std::equal(png.begin() + at + 4, png.begin() + at + 8, "IDAT"));
    std::vector<uint8_t> raw(5 * (1 + 7 * 3));
    uLongf raw_len = raw.size();
    int rc = uncompress(raw.data(), &raw_len, png.data() + at + 8, idat_len);
    REQUIRE(rc == Z_OK);
    REQUIRE(raw_len == raw.size());
    for (int y = 0; y < 5; ++y) {
      CHECK(raw[y * 22] == 0);
      for (int x = 0; x < 7; ++x)
        for (int c = 0; c < 3; ++c)
          CHECK(raw[y * 22 + 1 + 3 * x + c] == im.px(y, x)[c]);
    }

    // IEND last
    size_t iend_at = at + 8 + idat_len + 4;
    CHECK(read_be32(png, iend_at) == 0);
    CHECK(std::equal(png.begin() + iend_at + 4, png.begin() + iend_at + 8, "IEND"));
    CHECK(iend_at + 12 == png.size());
  }

  TEST_CASE("matrix conversions round trip") {
    RngStream rng(11);
    Image im = Image::filled(8, 6, {0, 0, 0});
    for (auto& v : im.rgb) v = static_cast<uint8_t>(rng.uniform_int(0, 255));
    Eigen::MatrixXd m = image_to_matrix(im);
    CHECK(m.rows() == 3);
    CHECK(m.cols() == 48);
    CHECK(m.minCoeff() >= 0.0);
    CHECK(m.maxCoeff() <= 1.0);
    Image back = matrix_to_image(m, 8, 6);
    CHECK(back.rgb == im.rgb);

    // clamping
    Eigen::MatrixXd wild = Eigen::MatrixXd::Constant(3, 4, 2.5);
    wild(0, 0) = -1.0;
    Image cl = matrix_to_image(wild, 2, 2);
    CHECK(cl.px(0, 0)[0] == 0);
    CHECK(cl.px(0, 0)[1] == 255);
  }

  TEST_CASE("psnr values") {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(3, 10);
    CHECK(std::isinf(psnr(a, a)));
    Eigen::MatrixXd b = Eigen::MatrixXd::Constant(3, 10, 0.5);
    CHECK(psnr(a, b) == doctest::Approx(-10.0 * std::log10(0.25)).epsilon(1e-12));
    CHECK_THROWS_AS(psnr(a, Eigen::MatrixXd::Zero(3, 4)), Error);
  }

  TEST_CASE("foreground iou") {
    // 4 pixels: both bright, only a bright, only b bright, both dark
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(3, 4);
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(3, 4);
    a.col(0).setConstant(0.9);
    b.col(0).setConstant(0.9);
    a.col(1).setConstant(0.8);
    b.col(2).setConstant(0.8);
    CHECK(foreground_iou(a, b) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    Eigen::MatrixXd z = Eigen::MatrixXd::Zero(3, 4);
    CHECK(foreground_iou(z, z) == 1.0);
  }
}
