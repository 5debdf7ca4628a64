// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "i2c2w/errors.hpp"
#include "i2c2w/rng.hpp"

namespace i2c2w {

// Fixed input canvas for rendering and recognition.
constexpr int kCanvasHeight = 32;
constexpr int kCanvasWidth = 128;

// Grayscale image, row-major, intensities in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int w, int h, float fill = 0.0f)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

  float& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  float at(int x, int y) const {
    return pixels[static_cast<std::size_t>(y) * width + x];
  }

  void clamp01() {
    for (float& p : pixels) p = std::clamp(p, 0.0f, 1.0f);
  }
};

// Bilinear sample with zero outside the canvas.
inline float sample_bilinear(const Image& img, double x, double y) {
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const double fx = x - x0;
  const double fy = y - y0;
  auto pixel = [&](int px, int py) -> double {
    if (px < 0 || px >= img.width || py < 0 || py >= img.height) return 0.0;
    return img.at(px, py);
  };
  const double top = pixel(x0, y0) * (1.0 - fx) + pixel(x0 + 1, y0) * fx;
  const double bot = pixel(x0, y0 + 1) * (1.0 - fx) + pixel(x0 + 1, y0 + 1) * fx;
  return static_cast<float>(top * (1.0 - fy) + bot * fy);
}

// Vertical per-column shift by a displacement field (positive moves ink down).
// Linear interpolation between the two straddling integer offsets preserves
// each column's center of mass exactly.
inline Image shift_columns(const Image& img, const std::vector<double>& dy) {
  Image out(img.width, img.height);
  for (int x = 0; x < img.width; ++x) {
    const double d = dy[x];
    for (int y = 0; y < img.height; ++y) {
      const double src_y = y - d;
      const int y0 = static_cast<int>(std::floor(src_y));
      const double f = src_y - y0;
      double v = 0.0;
      if (y0 >= 0 && y0 < img.height) v += img.at(x, y0) * (1.0 - f);
      if (y0 + 1 >= 0 && y0 + 1 < img.height) v += img.at(x, y0 + 1) * f;
      out.at(x, y) = static_cast<float>(v);
    }
  }
  return out;
}

// Rotation about the canvas center, inverse-mapped with bilinear sampling.
inline Image rotate(const Image& img, double degrees) {
  if (degrees == 0.0) return img;
  const double rad = degrees * M_PI / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  const double cx = (img.width - 1) / 2.0;
  const double cy = (img.height - 1) / 2.0;
  Image out(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double dx = x - cx, dyp = y - cy;
      const double sx = cx + c * dx + s * dyp;
      const double sy = cy - s * dx + c * dyp;
      out.at(x, y) = sample_bilinear(img, sx, sy);
    }
  }
  return out;
}

// Horizontal keystone: vertical scale varies linearly across the width,
// strength in [0, 1].
inline Image perspective_warp(const Image& img, double skew) {
  if (skew == 0.0) return img;
  const double cy = (img.height - 1) / 2.0;
  Image out(img.width, img.height);
  for (int x = 0; x < img.width; ++x) {
    const double t = img.width > 1 ? static_cast<double>(x) / (img.width - 1) : 0.0;
    const double scale_y = 1.0 + skew * (t - 0.5);
    for (int y = 0; y < img.height; ++y) {
      const double sy = cy + (y - cy) * scale_y;
      out.at(x, y) = sample_bilinear(img, x, sy);
    }
  }
  return out;
}

inline Image add_noise(const Image& img, double sigma, Rng& rng) {
  if (sigma == 0.0) return img;
  Image out = img;
  for (float& p : out.pixels)
    p = static_cast<float>(p + rng.normal(0.0, sigma));
  out.clamp01();
  return out;
}

// Separable Gaussian blur, sigma = radius / 2.
inline Image gaussian_blur(const Image& img, double radius) {
  if (radius <= 0.0) return img;
  const double sigma = radius / 2.0;
  const int half = std::max(1, static_cast<int>(std::ceil(2.0 * sigma)));
  std::vector<double> kernel(2 * half + 1);
  double norm = 0.0;
  for (int i = -half; i <= half; ++i) {
    kernel[i + half] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    norm += kernel[i + half];
  }
  for (double& k : kernel) k /= norm;

  Image tmp(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double v = 0.0;
      for (int i = -half; i <= half; ++i) {
        const int xx = std::clamp(x + i, 0, img.width - 1);
        v += kernel[i + half] * img.at(xx, y);
      }
      tmp.at(x, y) = static_cast<float>(v);
    }
  Image out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double v = 0.0;
      for (int i = -half; i <= half; ++i) {
        const int yy = std::clamp(y + i, 0, img.height - 1);
        v += kernel[i + half] * tmp.at(x, yy);
      }
      out.at(x, y) = static_cast<float>(v);
    }
  return out;
}

}  // namespace i2c2w
