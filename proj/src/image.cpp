// Copyright (C) 2026 the choreo authors
// SPDX-License-Identifier: Apache-2.0
#include "choreo/image.hpp"

#include <zlib.h>

#include <cmath>

#include "choreo/binio.hpp"
#include "choreo/error.hpp"

namespace choreo {

namespace {

void push_be32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

void push_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& data) {
  push_be32(out, static_cast<uint32_t>(data.size()));
  size_t type_at = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  uint32_t crc = crc32(0L, out.data() + type_at, static_cast<uInt>(4 + data.size()));
  push_be32(out, crc);
}

}  // namespace

std::vector<uint8_t> encode_png(const Image& im) {
  ensure(im.h > 0 && im.w > 0, ErrorKind::validation, "empty image");
  ensure(im.rgb.size() == static_cast<size_t>(im.h) * im.w * 3, ErrorKind::structural,
         "image buffer size mismatch");
  std::vector<uint8_t> out = {137, 80, 78, 71, 13, 10, 26, 10};
  std::vector<uint8_t> ihdr;
  push_be32(ihdr, static_cast<uint32_t>(im.w));
  push_be32(ihdr, static_cast<uint32_t>(im.h));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // truecolor
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  push_chunk(out, "IHDR", ihdr);

  // each scanline prefixed with filter byte 0
  std::vector<uint8_t> raw;
  raw.reserve(static_cast<size_t>(im.h) * (1 + static_cast<size_t>(im.w) * 3));
  for (int y = 0; y < im.h; ++y) {
    raw.push_back(0);
    const uint8_t* row = im.px(y, 0);
    raw.insert(raw.end(), row, row + static_cast<size_t>(im.w) * 3);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> compressed(bound);
  int rc = compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6);
  ensure(rc == Z_OK, ErrorKind::io, "zlib compression failed");
  compressed.resize(bound);
  push_chunk(out, "IDAT", compressed);
  push_chunk(out, "IEND", {});
  return out;
}

void write_png(const std::string& path, const Image& im) { write_file(path, encode_png(im)); }

Eigen::MatrixXd image_to_matrix(const Image& im) {
  Eigen::MatrixXd m(3, static_cast<Eigen::Index>(im.h) * im.w);
  for (int y = 0; y < im.h; ++y)
    for (int x = 0; x < im.w; ++x) {
      const uint8_t* p = im.px(y, x);
      Eigen::Index col = static_cast<Eigen::Index>(y) * im.w + x;
      for (int c = 0; c < 3; ++c) m(c, col) = p[c] / 255.0;
    }
  return m;
}

Image matrix_to_image(const Eigen::MatrixXd& m, int h, int w) {
  ensure(m.rows() == 3 && m.cols() == static_cast<Eigen::Index>(h) * w, ErrorKind::structural,
         "matrix shape does not match image dims");
  Image im = Image::filled(h, w, {0, 0, 0});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      uint8_t* p = im.px(y, x);
      Eigen::Index col = static_cast<Eigen::Index>(y) * w + x;
      for (int c = 0; c < 3; ++c) {
        double v = std::clamp(m(c, col), 0.0, 1.0);
        p[c] = static_cast<uint8_t>(std::lround(v * 255.0));
      }
    }
  return im;
}

double psnr(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  ensure(a.rows() == b.rows() && a.cols() == b.cols(), ErrorKind::structural,
         "psnr: shape mismatch");
  double mse = (a - b).squaredNorm() / static_cast<double>(a.size());
  if (mse <= 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse);
}

double foreground_iou(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double thresh) {
  ensure(a.cols() == b.cols(), ErrorKind::structural, "iou: pixel count mismatch");
  Eigen::Index inter = 0, uni = 0;
  for (Eigen::Index i = 0; i < a.cols(); ++i) {
    bool fa = a.col(i).mean() > thresh;
    bool fb = b.col(i).mean() > thresh;
    if (fa && fb) ++inter;
    if (fa || fb) ++uni;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace choreo
