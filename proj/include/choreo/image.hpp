// Copyright (C) 2026 the choreo authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "choreo/pose.hpp"

namespace choreo {

// Minimal RGB8 PNG encoder (truecolor, no interlace).
std::vector<uint8_t> encode_png(const Image& im);
void write_png(const std::string& path, const Image& im);

// Channel-major float view used by the toy denoiser: 3 x (H*W), values [0,1].
Eigen::MatrixXd image_to_matrix(const Image& im);
Image matrix_to_image(const Eigen::MatrixXd& m, int h, int w);  // clamps to [0,1]

double psnr(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);  // peak 1.0, in dB

// Intersection-over-union of the non-background (brightness > thresh) masks.
double foreground_iou(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double thresh = 0.1);

}  // namespace choreo
