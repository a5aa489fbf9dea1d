#include "pct/image.hpp"

#include <algorithm>
#include <cmath>

namespace pct {

ImageF to_float(const Image& img) {
  ImageF out(img.height, img.width);
  for (size_t k = 0; k < img.rgb.size(); ++k) out.rgb[k] = img.rgb[k] / 255.0f;
  return out;
}

Image to_u8(const ImageF& img) {
  Image out(img.height, img.width);
  for (size_t k = 0; k < img.rgb.size(); ++k) {
    const float v = std::clamp(img.rgb[k], 0.0f, 1.0f);
    out.rgb[k] = static_cast<uint8_t>(std::lround(v * 255.0f));
  }
  return out;
}

void clamp01(ImageF& img) {
  for (auto& v : img.rgb) v = std::clamp(v, 0.0f, 1.0f);
}

void desaturate(ImageF& img, double amount) {
  if (amount == 0.0) return;
  const auto a = static_cast<float>(amount);
  for (size_t p = 0; p < img.rgb.size(); p += 3) {
    const float gray = 0.299f * img.rgb[p] + 0.587f * img.rgb[p + 1] + 0.114f * img.rgb[p + 2];
    for (int ch = 0; ch < 3; ++ch) img.rgb[p + ch] = (1 - a) * img.rgb[p + ch] + a * gray;
  }
}

namespace {

int reflect(int x, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  x %= period;
  if (x < 0) x += period;
  return x < n ? x : period - x;
}

}  // namespace

void gaussian_blur(ImageF& img, double sigma) {
  if (!(sigma > 0)) return;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<float> kernel(2 * radius + 1);
  double total = 0;
  for (int k = -radius; k <= radius; ++k) {
    const double v = std::exp(-0.5 * k * k / (sigma * sigma));
    kernel[k + radius] = static_cast<float>(v);
    total += v;
  }
  for (auto& v : kernel) v = static_cast<float>(v / total);

  const int h = img.height, w = img.width;
  ImageF tmp(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      for (int ch = 0; ch < 3; ++ch) {
        float acc = 0;
        for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * img.at(r, reflect(c + k, w), ch);
        tmp.at(r, c, ch) = acc;
      }
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      for (int ch = 0; ch < 3; ++ch) {
        float acc = 0;
        for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * tmp.at(reflect(r + k, h), c, ch);
        img.at(r, c, ch) = acc;
      }
}

}  // namespace pct
