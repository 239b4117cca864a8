// Copyright (C) 2026 the choreo authors
// SPDX-License-Identifier: Apache-2.0
#include "choreo/pose.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <queue>

#include "choreo/binio.hpp"
#include "choreo/error.hpp"
#include "choreo/hashing.hpp"

namespace choreo {

using nlohmann::json;

const char* part_name(int part_id) {
  switch (static_cast<BodyPart>(part_id)) {
    case BodyPart::upper_body: return "upper_body";
    case BodyPart::lower_body: return "lower_body";
    case BodyPart::head: return "head";
    case BodyPart::left_hand: return "left_hand";
    case BodyPart::right_hand: return "right_hand";
  }
  throw Error(ErrorKind::structural, "invalid part id");
}

void SkeletonTopology::validate() {
  const int p = joints();
  ensure(p > 0, ErrorKind::structural, "topology has no joints");
  ensure(static_cast<int>(part_of.size()) == p, ErrorKind::structural,
         "part_of size must equal joint count");
  for (auto& pj : part_joints) pj.clear();
  for (int i = 0; i < p; ++i) {
    ensure(part_of[i] >= 0 && part_of[i] < kNumParts, ErrorKind::structural,
           "part id out of range for joint " + std::to_string(i));
    part_joints[part_of[i]].push_back(i);
  }
  for (int part = 0; part < kNumParts; ++part)
    ensure(!part_joints[part].empty(), ErrorKind::structural,
           std::string("empty part: ") + part_name(part));
  for (auto [a, b] : bones) {
    ensure(a >= 0 && a < p && b >= 0 && b < p, ErrorKind::structural, "bone joint index out of range");
    ensure(a != b, ErrorKind::structural, "degenerate bone");
  }
  // each part's induced bone graph must be connected
  for (int part = 0; part < kNumParts; ++part) {
    const auto& members = part_joints[part];
    std::vector<int> local(p, -1);
    for (size_t i = 0; i < members.size(); ++i) local[members[i]] = static_cast<int>(i);
    std::vector<std::vector<int>> adj(members.size());
    for (auto [a, b] : bones) {
      if (local[a] >= 0 && local[b] >= 0) {
        adj[local[a]].push_back(local[b]);
        adj[local[b]].push_back(local[a]);
      }
    }
    std::vector<bool> seen(members.size(), false);
    std::queue<int> q;
    q.push(0);
    seen[0] = true;
    size_t reached = 1;
    while (!q.empty()) {
      int v = q.front();
      q.pop();
      for (int nb : adj[v])
        if (!seen[nb]) {
          seen[nb] = true;
          ++reached;
          q.push(nb);
        }
    }
    ensure(reached == members.size(), ErrorKind::structural,
           std::string("bone graph not connected within part ") + part_name(part));
  }
}

std::string SkeletonTopology::to_json() const {
  json j;
  j["schema_version"] = schema_version;
  j["joint_names"] = joint_names;
  json bone_list = json::array();
  for (auto [a, b] : bones) bone_list.push_back({a, b});
  j["bones"] = bone_list;
  json part_map = json::object();
  for (int i = 0; i < joints(); ++i) part_map[joint_names[i]] = part_name(part_of[i]);
  j["part_assignment"] = part_map;
  return j.dump(2) + "\n";
}

SkeletonTopology SkeletonTopology::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, std::string("topology JSON parse: ") + e.what());
  }
  SkeletonTopology t;
  try {
    t.schema_version = j.at("schema_version").get<int>();
    t.joint_names = j.at("joint_names").get<std::vector<std::string>>();
    for (const auto& b : j.at("bones"))
      t.bones.emplace_back(b.at(0).get<int>(), b.at(1).get<int>());
    const auto& pm = j.at("part_assignment");
    t.part_of.resize(t.joint_names.size());
    for (size_t i = 0; i < t.joint_names.size(); ++i) {
      std::string pn = pm.at(t.joint_names[i]).get<std::string>();
      int id = -1;
      for (int k = 0; k < kNumParts; ++k)
        if (pn == part_name(k)) id = k;
      ensure(id >= 0, ErrorKind::format, "unknown part name: " + pn);
      t.part_of[i] = id;
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, std::string("topology JSON fields: ") + e.what());
  }
  ensure(t.schema_version == 1, ErrorKind::format, "unsupported topology schema_version");
  t.validate();
  return t;
}

SkeletonTopology SkeletonTopology::load_file(const std::string& path) {
  return from_json(read_text_file(path));
}

std::string SkeletonTopology::content_hash() const {
  return sha256_hex(to_json());
}

SkeletonTopology SkeletonTopology::standard60() {
  SkeletonTopology t;
  auto body = {"neck",    "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist", "r_wrist",
               "l_hip",   "r_hip",      "l_knee",     "r_knee",  "l_ankle", "r_ankle"};
  auto head = {"nose", "l_eye", "r_eye", "l_ear", "r_ear"};
  for (const char* n : body) t.joint_names.push_back(n);
  for (const char* n : head) t.joint_names.push_back(n);
  const char* fingers[] = {"thumb", "index", "middle", "ring", "pinky"};
  for (const char* side : {"l", "r"}) {
    t.joint_names.push_back(std::string(side) + "_hand_root");
    for (const char* f : fingers)
      for (int k = 1; k <= 4; ++k)
        t.joint_names.push_back(std::string(side) + "_" + f + std::to_string(k));
  }
  t.part_of.assign(60, 0);
  for (int i = 0; i < 7; ++i) t.part_of[i] = static_cast<int>(BodyPart::upper_body);
  for (int i = 7; i < 13; ++i) t.part_of[i] = static_cast<int>(BodyPart::lower_body);
  for (int i = 13; i < 18; ++i) t.part_of[i] = static_cast<int>(BodyPart::head);
  for (int i = 18; i < 39; ++i) t.part_of[i] = static_cast<int>(BodyPart::left_hand);
  for (int i = 39; i < 60; ++i) t.part_of[i] = static_cast<int>(BodyPart::right_hand);

  auto bone = [&](int a, int b) { t.bones.emplace_back(a, b); };
  // torso and arms
  bone(0, 1);
  bone(0, 2);
  bone(1, 3);
  bone(3, 5);
  bone(2, 4);
  bone(4, 6);
  // torso to hips, legs
  bone(0, 7);
  bone(0, 8);
  bone(7, 8);
  bone(7, 9);
  bone(9, 11);
  bone(8, 10);
  bone(10, 12);
  // head
  bone(0, 13);
  bone(13, 14);
  bone(13, 15);
  bone(14, 16);
  bone(15, 17);
  // hands: wrist -> root -> four-joint finger chains
  for (int side = 0; side < 2; ++side) {
    int wrist = side == 0 ? 5 : 6;
    int root = side == 0 ? 18 : 39;
    bone(wrist, root);
    for (int f = 0; f < 5; ++f) {
      int base = root + 1 + 4 * f;
      bone(root, base);
      for (int k = 0; k < 3; ++k) bone(base + k, base + k + 1);
    }
  }
  t.validate();
  return t;
}

Eigen::MatrixXd PoseFrame::flat() const {
  Eigen::MatrixXd out(joints(), 3);
  out.leftCols(2) = kp;
  out.col(2) = conf;
  return out;
}

PoseFrame PoseFrame::from_flat(const Eigen::MatrixXd& rows) {
  ensure(rows.cols() == 3, ErrorKind::structural, "flat pose must have 3 columns");
  PoseFrame f;
  f.kp = rows.leftCols(2);
  f.conf = rows.col(2);
  return f;
}

PoseFrame PoseFrame::zeros(int joints) {
  PoseFrame f;
  f.kp = Eigen::MatrixXd::Zero(joints, 2);
  f.conf = Eigen::VectorXd::Zero(joints);
  return f;
}

bool PoseFrame::any_off_frame() const {
  return (kp.array() < 0.0).any() || (kp.array() > 1.0).any();
}

void PoseFrame::check_valid() const {
  ensure(kp.rows() == conf.rows(), ErrorKind::structural, "keypoint/confidence count mismatch");
  ensure(kp.cols() == 2, ErrorKind::structural, "keypoints must be P x 2");
  ensure(kp.allFinite() && conf.allFinite(), ErrorKind::validation, "non-finite pose values");
  ensure((conf.array() >= 0.0).all() && (conf.array() <= 1.0).all(), ErrorKind::validation,
         "confidence outside [0,1]");
}

void PoseSequence::check_valid() const {
  ensure(!frames.empty(), ErrorKind::validation, "empty pose sequence");
  ensure(fps > 0.0, ErrorKind::validation, "fps must be positive");
  for (const auto& f : frames) {
    f.check_valid();
    ensure(f.joints() == frames[0].joints(), ErrorKind::structural,
           "inconsistent joint count across frames");
  }
}

std::vector<PartPose> partition_pose(const PoseFrame& frame, const SkeletonTopology& topo) {
  ensure(frame.joints() == topo.joints(), ErrorKind::structural,
         "pose joint count does not match topology");
  std::vector<PartPose> out(kNumParts);
  for (int part = 0; part < kNumParts; ++part) {
    const auto& members = topo.part_joints[part];
    PartPose pp;
    pp.part_id = part;
    pp.kp.resize(members.size(), 2);
    pp.conf.resize(members.size());
    for (size_t i = 0; i < members.size(); ++i) {
      pp.kp.row(static_cast<Eigen::Index>(i)) = frame.kp.row(members[i]);
      pp.conf(static_cast<Eigen::Index>(i)) = frame.conf(members[i]);
    }
    out[part] = std::move(pp);
  }
  return out;
}

PoseFrame assemble_pose(const std::vector<PartPose>& parts, const SkeletonTopology& topo) {
  ensure(parts.size() == kNumParts, ErrorKind::structural,
         "assemble_pose needs exactly " + std::to_string(kNumParts) + " parts");
  std::array<const PartPose*, kNumParts> by_id{};
  for (const auto& p : parts) {
    ensure(p.part_id >= 0 && p.part_id < kNumParts, ErrorKind::structural, "invalid part id");
    ensure(by_id[p.part_id] == nullptr, ErrorKind::structural,
           std::string("duplicate part: ") + part_name(p.part_id));
    by_id[p.part_id] = &p;
  }
  PoseFrame f = PoseFrame::zeros(topo.joints());
  for (int part = 0; part < kNumParts; ++part) {
    const auto& members = topo.part_joints[part];
    const PartPose& pp = *by_id[part];
    ensure(pp.kp.rows() == static_cast<Eigen::Index>(members.size()), ErrorKind::structural,
           std::string("joint count mismatch for part ") + part_name(part));
    for (size_t i = 0; i < members.size(); ++i) {
      f.kp.row(members[i]) = pp.kp.row(static_cast<Eigen::Index>(i));
      f.conf(members[i]) = pp.conf(static_cast<Eigen::Index>(i));
    }
  }
  return f;
}

Image Image::filled(int h, int w, std::array<uint8_t, 3> color) {
  Image im;
  im.h = h;
  im.w = w;
  im.rgb.resize(static_cast<size_t>(h) * w * 3);
  for (size_t i = 0; i < im.rgb.size(); i += 3) {
    im.rgb[i] = color[0];
    im.rgb[i + 1] = color[1];
    im.rgb[i + 2] = color[2];
  }
  return im;
}

std::vector<std::pair<int, int>> bresenham_line(int x0, int y0, int x1, int y1) {
  std::vector<std::pair<int, int>> pts;
  int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    pts.emplace_back(x0, y0);
    if (x0 == x1 && y0 == y1) break;
    int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
  return pts;
}

namespace {

void put_disc(Image& im, int cx, int cy, int radius, const std::array<uint8_t, 3>& color) {
  for (int y = cy - radius; y <= cy + radius; ++y) {
    if (y < 0 || y >= im.h) continue;
    for (int x = cx - radius; x <= cx + radius; ++x) {
      if (x < 0 || x >= im.w) continue;
      if ((x - cx) * (x - cx) + (y - cy) * (y - cy) > radius * radius) continue;
      uint8_t* p = im.px(y, x);
      p[0] = color[0];
      p[1] = color[1];
      p[2] = color[2];
    }
  }
}

}  // namespace

Image render_skeleton(const PoseFrame& frame, const SkeletonTopology& topo, int h, int w,
                      const RenderStyle& style) {
  ensure(h > 0 && w > 0, ErrorKind::validation, "canvas must be positive");
  ensure(frame.joints() == topo.joints(), ErrorKind::structural,
         "pose joint count does not match topology");
  Image im = Image::filled(h, w, style.background);
  auto to_px = [&](int joint) {
    int x = static_cast<int>(std::lround(frame.kp(joint, 0) * (w - 1)));
    int y = static_cast<int>(std::lround(frame.kp(joint, 1) * (h - 1)));
    return std::pair<int, int>{x, y};
  };
  int radius = std::max(0, style.line_width / 2);
  for (auto [a, b] : topo.bones) {
    if (frame.conf(a) < style.tau_draw || frame.conf(b) < style.tau_draw) continue;
    // color by the child joint's part so cross-part bones get a stable color
    const auto& color = style.part_colors[topo.part_of[b]];
    auto [xa, ya] = to_px(a);
    auto [xb, yb] = to_px(b);
    for (auto [x, y] : bresenham_line(xa, ya, xb, yb)) {
      if (radius == 0) {
        if (x < 0 || x >= w || y < 0 || y >= h) continue;
        uint8_t* p = im.px(y, x);
        p[0] = color[0];
        p[1] = color[1];
        p[2] = color[2];
      } else {
        put_disc(im, x, y, radius, color);
      }
    }
  }
  for (int j = 0; j < topo.joints(); ++j) {
    if (frame.conf(j) < style.tau_draw) continue;
    auto [x, y] = to_px(j);
    put_disc(im, x, y, std::max(1, radius), style.part_colors[topo.part_of[j]]);
  }
  return im;
}

}  // namespace choreo
