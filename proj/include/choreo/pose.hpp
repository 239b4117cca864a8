// Copyright (C) 2026 the choreo authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>
#include <utility>
#include <vector>

namespace choreo {

inline constexpr int kNumParts = 5;

// Part ids are fixed across the whole pipeline; the order below is also the
// serialization order of per-part data.
enum class BodyPart : int {
  upper_body = 0,
  lower_body = 1,
  head = 2,
  left_hand = 3,
  right_hand = 4,
};

const char* part_name(int part_id);

// Whole-body joint layout: joint names, bone list, and the 5-part partition.
// Loaded from a versioned JSON document or built in; everything downstream
// keys on this so the joint schema stays in one place.
struct SkeletonTopology {
  int schema_version = 1;
  std::vector<std::string> joint_names;
  std::vector<std::pair<int, int>> bones;  // (parent, child) joint indices
  std::vector<int> part_of;                // joint index -> part id

  // derived by validate()
  std::array<std::vector<int>, kNumParts> part_joints;  // ascending joint order

  int joints() const { return static_cast<int>(joint_names.size()); }
  int part_size(int part_id) const { return static_cast<int>(part_joints[part_id].size()); }

  // Checks the partition covers every joint exactly once, bones are in range,
  // and each part's induced bone graph is connected; fills part_joints.
  void validate();

  std::string to_json() const;
  static SkeletonTopology from_json(const std::string& text);
  static SkeletonTopology load_file(const std::string& path);
  // 13 body + 5 head + 2x21 hand joints (P=60).
  static SkeletonTopology standard60();

  // SHA-256 over the canonical JSON form; stored in checkpoints so a model is
  // never applied to a different joint schema.
  std::string content_hash() const;
};

// One frame of 2D keypoints in normalized image coordinates with per-joint
// confidence. Coordinates may leave [0,1] for off-frame joints.
struct PoseFrame {
  Eigen::MatrixXd kp;        // P x 2
  Eigen::VectorXd conf;      // P, each in [0,1]

  int joints() const { return static_cast<int>(kp.rows()); }
  // P x 3 rows of (x, y, confidence)
  Eigen::MatrixXd flat() const;
  static PoseFrame from_flat(const Eigen::MatrixXd& rows);
  static PoseFrame zeros(int joints);
  bool any_off_frame() const;
  void check_valid() const;  // throws on bad shapes / confidence range / NaN
};

struct PoseSequence {
  std::vector<PoseFrame> frames;
  double fps = 30.0;

  int length() const { return static_cast<int>(frames.size()); }
  void check_valid() const;
};

// A pose restricted to one part's joints, in topology (ascending) order.
struct PartPose {
  int part_id = 0;
  Eigen::MatrixXd kp;    // n_j x 2
  Eigen::VectorXd conf;  // n_j
};

std::vector<PartPose> partition_pose(const PoseFrame& frame, const SkeletonTopology& topo);
PoseFrame assemble_pose(const std::vector<PartPose>& parts, const SkeletonTopology& topo);

struct RenderStyle {
  int line_width = 1;
  double tau_draw = 0.3;  // joints below this confidence are not drawn
  std::array<std::array<uint8_t, 3>, kNumParts> part_colors = {{
      {230, 80, 80},    // upper body
      {80, 120, 230},   // lower body
      {230, 200, 60},   // head
      {90, 200, 120},   // left hand
      {200, 110, 210},  // right hand
  }};
  std::array<uint8_t, 3> background = {0, 0, 0};
};

struct Image {
  int h = 0, w = 0;
  std::vector<uint8_t> rgb;  // row-major h*w*3

  static Image filled(int h, int w, std::array<uint8_t, 3> color);
  uint8_t* px(int y, int x) { return rgb.data() + 3 * (static_cast<size_t>(y) * w + x); }
  const uint8_t* px(int y, int x) const {
    return rgb.data() + 3 * (static_cast<size_t>(y) * w + x);
  }
};

// Deterministic stick-figure raster. Bones are drawn when both endpoints meet
// the confidence threshold; joints are drawn as small discs.
Image render_skeleton(const PoseFrame& frame, const SkeletonTopology& topo, int h, int w,
                      const RenderStyle& style = {});

// Integer line rasterization used by render_skeleton; exposed for testing.
std::vector<std::pair<int, int>> bresenham_line(int x0, int y0, int x1, int y1);

}  // namespace choreo
