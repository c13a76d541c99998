#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "handmim/error.hpp"
#include "handmim/mat.hpp"

namespace handmim {

// RGB image, values in [0,1], stored as a [h*w, 3] row-major matrix with
// pixel (row y, col x) at matrix row y*w + x. The same flat layout is used
// by decoder feature maps, so images and reconstructions compare without
// index shuffling.
struct Image {
  int w = 0, h = 0;
  Mat pix;  // [h*w, 3]

  Image() = default;
  Image(int width, int height) : w(width), h(height), pix(Mat::Zero(width * height, 3)) {}

  double& at(int y, int x, int c) { return pix(y * w + x, c); }
  double at(int y, int x, int c) const { return pix(y * w + x, c); }

  bool valid() const { return w > 0 && h > 0 && pix.rows() == h * w && pix.cols() == 3; }

  void clamp01() { pix = pix.cwiseMax(0.0).cwiseMin(1.0); }

  // Bilinear lookup at continuous pixel coordinates (x right, y down),
  // sample centers at integer positions; clamped at the border.
  Eigen::RowVector3d sample(double x, double y) const {
    x = std::min(std::max(x, 0.0), static_cast<double>(w - 1));
    y = std::min(std::max(y, 0.0), static_cast<double>(h - 1));
    int x0 = std::min(static_cast<int>(std::floor(x)), w - 1);
    int y0 = std::min(static_cast<int>(std::floor(y)), h - 1);
    int x1 = std::min(x0 + 1, w - 1);
    int y1 = std::min(y0 + 1, h - 1);
    double fx = x - x0, fy = y - y0;
    return (1 - fx) * (1 - fy) * pix.row(y0 * w + x0) + fx * (1 - fy) * pix.row(y0 * w + x1) +
           (1 - fx) * fy * pix.row(y1 * w + x0) + fx * fy * pix.row(y1 * w + x1);
  }

  std::vector<std::uint8_t> to_bytes() const {
    std::vector<std::uint8_t> out(static_cast<std::size_t>(w) * h * 3);
    for (long i = 0; i < pix.rows(); ++i)
      for (int c = 0; c < 3; ++c) {
        double v = std::min(std::max(pix(i, c), 0.0), 1.0);
        out[static_cast<std::size_t>(i) * 3 + c] =
            static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    return out;
  }

  static Image from_bytes(const std::uint8_t* data, int width, int height, int channels) {
    HM_CHECK(channels >= 1 && channels <= 4, InvariantError, "from_bytes: bad channel count");
    Image img(width, height);
    for (long i = 0; i < static_cast<long>(width) * height; ++i) {
      if (channels >= 3) {
        for (int c = 0; c < 3; ++c) img.pix(i, c) = data[i * channels + c] / 255.0;
      } else {
        double g = data[i * channels] / 255.0;
        img.pix(i, 0) = img.pix(i, 1) = img.pix(i, 2) = g;
      }
    }
    return img;
  }
};

}  // namespace handmim
