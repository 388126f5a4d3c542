#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "hybridcal/geom.hpp"

namespace hycal {

// Row-major single-channel image with values in [0,1].
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  GrayImage() = default;
  GrayImage(int w, int h, double fill = 0.0) : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  double& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  double at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }

  // Border-replicating access.
  double clamped(int x, int y) const {
    return at(std::clamp(x, 0, width - 1), std::clamp(y, 0, height - 1));
  }

  bool operator==(const GrayImage&) const = default;
};

// Row-major RGB image, interleaved, values in [0,1].
struct ColorImage {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  ColorImage() = default;
  ColorImage(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, 0.0) {}

  Vec3 at(int x, int y) const {
    const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
    return {data[i], data[i + 1], data[i + 2]};
  }
  void set(int x, int y, const Vec3& c) {
    const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
    data[i] = c.x();
    data[i + 1] = c.y();
    data[i + 2] = c.z();
  }

  GrayImage luminance() const {
    GrayImage g(width, height);
    for (std::size_t i = 0; i < g.data.size(); ++i)
      g.data[i] = (data[3 * i] + data[3 * i + 1] + data[3 * i + 2]) / 3.0;
    return g;
  }

  bool operator==(const ColorImage&) const = default;
};

// Bilinear sample at continuous pixel coordinates; caller guarantees
// 0 <= u <= width-1, 0 <= v <= height-1.
inline double sample_bilinear(const GrayImage& img, double u, double v) {
  const int x0 = std::min(static_cast<int>(std::floor(u)), img.width - 2 < 0 ? 0 : img.width - 2);
  const int y0 = std::min(static_cast<int>(std::floor(v)), img.height - 2 < 0 ? 0 : img.height - 2);
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const double fx = u - x0, fy = v - y0;
  return (1 - fy) * ((1 - fx) * img.at(x0, y0) + fx * img.at(x1, y0)) +
         fy * ((1 - fx) * img.at(x0, y1) + fx * img.at(x1, y1));
}

inline Vec3 sample_bilinear(const ColorImage& img, double u, double v) {
  const int x0 = std::min(static_cast<int>(std::floor(u)), img.width - 2 < 0 ? 0 : img.width - 2);
  const int y0 = std::min(static_cast<int>(std::floor(v)), img.height - 2 < 0 ? 0 : img.height - 2);
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const double fx = u - x0, fy = v - y0;
  return (1 - fy) * ((1 - fx) * img.at(x0, y0) + fx * img.at(x1, y0)) +
         fy * ((1 - fx) * img.at(x0, y1) + fx * img.at(x1, y1));
}

// 2x2 box-filter decimation (odd trailing row/column folded into the last cell).
inline GrayImage downsample2(const GrayImage& img) {
  GrayImage out(std::max(1, img.width / 2), std::max(1, img.height / 2));
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) {
      double s = 0;
      int n = 0;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          const int sx = 2 * x + dx, sy = 2 * y + dy;
          if (sx < img.width && sy < img.height) {
            s += img.at(sx, sy);
            ++n;
          }
        }
      out.at(x, y) = s / n;
    }
  return out;
}

}  // namespace hycal
