#pragma once

#include <cstdint>
#include <vector>

#include "pct/common.hpp"

namespace pct {

/// 8-bit interleaved RGB image, the on-disk and in-memory form of a view.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> rgb;

  Image() = default;
  Image(int h, int w, uint8_t fill = 0)
      : height(h), width(w), rgb(static_cast<size_t>(h) * w * 3, fill) {}
  uint8_t& at(int r, int c, int ch) { return rgb[(static_cast<size_t>(r) * width + c) * 3 + ch]; }
  uint8_t at(int r, int c, int ch) const {
    return rgb[(static_cast<size_t>(r) * width + c) * 3 + ch];
  }
  bool operator==(const Image&) const = default;
};

/// Floating point RGB image with values nominally in [0, 1].
struct ImageF {
  int height = 0;
  int width = 0;
  std::vector<float> rgb;

  ImageF() = default;
  ImageF(int h, int w, float fill = 0.f)
      : height(h), width(w), rgb(static_cast<size_t>(h) * w * 3, fill) {}
  float& at(int r, int c, int ch) { return rgb[(static_cast<size_t>(r) * width + c) * 3 + ch]; }
  float at(int r, int c, int ch) const {
    return rgb[(static_cast<size_t>(r) * width + c) * 3 + ch];
  }
};

using LabelMap = Grid2<uint8_t>;

ImageF to_float(const Image& img);
/// Rounds to nearest and clamps to [0, 255].
Image to_u8(const ImageF& img);

void clamp01(ImageF& img);

/// Mixes each pixel toward its luma (Rec. 601 weights); amount in [0, 1].
void desaturate(ImageF& img, double amount);

/// Separable Gaussian blur with reflective (mirror, edge pixel not repeated
/// for interior, "reflect-101") padding. sigma <= 0 leaves the image as is.
void gaussian_blur(ImageF& img, double sigma);

}  // namespace pct
