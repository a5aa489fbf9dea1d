#include "pct/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace pct::aug {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

// Ego-frame transform of a rig-level augmentation: rotation after mirror.
geom::Mat3 rig_transform(const GeomAugParams& geom) {
  geom::Mat3 mirror;
  if (geom.flip) mirror.m = {1, 0, 0, 0, -1, 0, 0, 0, 1};
  return geom::rotation_z(geom.rotation_deg * kDeg) * mirror;
}

template <class T>
void flip_columns(std::vector<T>& data, int height, int width, int channels) {
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width / 2; ++c)
      for (int ch = 0; ch < channels; ++ch)
        std::swap(data[(static_cast<size_t>(r) * width + c) * channels + ch],
                  data[(static_cast<size_t>(r) * width + (width - 1 - c)) * channels + ch]);
}

float bilinear(const Image& img, double x, double y, int ch) {
  // x, y in pixel-index space (pixel centers at integers).
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  const double tx = x - x0, ty = y - y0;
  auto px = [&](int r, int c) -> double {
    r = std::clamp(r, 0, img.height - 1);
    c = std::clamp(c, 0, img.width - 1);
    return img.at(r, c, ch);
  };
  const double top = px(y0, x0) * (1 - tx) + px(y0, x0 + 1) * tx;
  const double bottom = px(y0 + 1, x0) * (1 - tx) + px(y0 + 1, x0 + 1) * tx;
  return static_cast<float>(top * (1 - ty) + bottom * ty);
}

}  // namespace

bool GeomAugParams::is_identity() const {
  if (flip || rotation_deg != 0 || scale != 1.0) return false;
  return std::all_of(crop_offset.begin(), crop_offset.end(),
                     [](const auto& o) { return o.first == 0 && o.second == 0; });
}

void CamDropConfig::validate(int num_cameras) const {
  if (max_drops < 0 || max_drops > num_cameras - 1)
    throw ConfigError("camdrop: max_drops must lie in [0, " + std::to_string(num_cameras - 1) + "]");
  if (!(apply_prob >= 0 && apply_prob <= 1)) throw ConfigError("camdrop: apply_prob outside [0, 1]");
}

AugmentRecipe AugmentRecipe::uda() {
  AugmentRecipe r;
  r.blur = false;
  return r;
}

void AugmentRecipe::validate() const {
  if (!(flip_prob >= 0 && flip_prob <= 1)) throw ConfigError("augment: flip_prob outside [0, 1]");
  if (max_rotation_deg < 0 || max_rotation_deg > 10) throw ConfigError("augment: rotation limited to 10 deg");
  if (scale_min < 0.9 || scale_max > 1.1 || scale_min > scale_max)
    throw ConfigError("augment: scale range must lie in [0.9, 1.1]");
  if (jitter_strength < 0 || jitter_strength > 0.4) throw ConfigError("augment: jitter factors limited to [0.6, 1.4]");
  if (blur_sigma_min < 0 || blur_sigma_max > 2 || blur_sigma_min > blur_sigma_max)
    throw ConfigError("augment: blur sigma must lie in [0, 2]");
}

GeomAugParams sample_weak(uint64_t seed, const AugmentRecipe& recipe, int num_views, int image_width,
                          int image_height) {
  Rng rng(hash_seed(seed, 0x3EA4));
  GeomAugParams g;
  g.flip = rng.bernoulli(recipe.flip_prob);
  g.rotation_deg = rng.uniform(-recipe.max_rotation_deg, recipe.max_rotation_deg);
  g.scale = rng.uniform(recipe.scale_min, recipe.scale_max);
  for (int v = 0; v < num_views; ++v) {
    if (!recipe.crop) {
      g.crop_offset.emplace_back(0.0, 0.0);
      continue;
    }
    const double ex = (g.scale - 1.0) * image_width, ey = (g.scale - 1.0) * image_height;
    const double dx = std::round(rng.uniform(std::min(0.0, ex), std::max(0.0, ex)));
    const double dy = std::round(rng.uniform(std::min(0.0, ey), std::max(0.0, ey)));
    g.crop_offset.emplace_back(dx, dy);
  }
  return g;
}

std::pair<GeomAugParams, PhotoAugParams> sample_strong(uint64_t seed, const GeomAugParams& geom,
                                                       const CamDropConfig& camdrop_cfg,
                                                       const AugmentRecipe& recipe, int num_views) {
  camdrop_cfg.validate(num_views);
  Rng rng(hash_seed(seed, 0x57A0));
  PhotoAugParams p;
  const double s = recipe.jitter_strength;
  for (int v = 0; v < num_views; ++v) {
    ColorJitter j;
    if (rng.bernoulli(recipe.jitter_prob)) {
      j.brightness = rng.uniform(1 - s, 1 + s);
      j.contrast = rng.uniform(1 - s, 1 + s);
      j.saturation = rng.uniform(1 - s, 1 + s);
    }
    p.jitter.push_back(j);
    double sigma = 0;
    if (recipe.blur && rng.bernoulli(recipe.blur_prob))
      sigma = rng.uniform(recipe.blur_sigma_min, recipe.blur_sigma_max);
    p.blur_sigma.push_back(sigma);
  }
  Rng drop_rng(hash_seed(seed, 0xD40B));
  if (camdrop_cfg.max_drops > 0 && drop_rng.bernoulli(camdrop_cfg.apply_prob)) {
    const int d = 1 + static_cast<int>(drop_rng.below(camdrop_cfg.max_drops));
    std::vector<int> order(num_views);
    std::iota(order.begin(), order.end(), 0);
    for (int k = 0; k < d; ++k) {
      const auto pick = k + static_cast<int>(drop_rng.below(num_views - k));
      std::swap(order[k], order[pick]);
      p.camdrop.insert(order[k]);
    }
  }
  return {geom, p};
}

synth::Sample apply_geometric(const synth::Sample& sample, const GeomAugParams& geom,
                              const geom::BevGridSpec& grid) {
  if (geom.is_identity()) return sample;
  synth::Sample out = sample;
  const int n = sample.rig.size();

  if (geom.flip || geom.rotation_deg != 0) {
    const geom::Mat3 t = rig_transform(geom);
    geom::Mat3 cam_mirror;
    if (geom.flip) cam_mirror.m = {-1, 0, 0, 0, 1, 0, 0, 0, 1};
    for (int k = 0; k < n; ++k) {
      auto& cam = out.rig[k];
      cam.extrinsics.rotation = t * sample.rig[k].extrinsics.rotation * cam_mirror;
      cam.extrinsics.translation = t * sample.rig[k].extrinsics.translation;
      if (geom.flip) {
        cam.intrinsics.cx = cam.intrinsics.width - cam.intrinsics.cx;
        auto& img = out.images[k];
        flip_columns(img.rgb, img.height, img.width, 3);
        flip_columns(out.pv_labels[k].data, out.pv_labels[k].h, out.pv_labels[k].w, 1);
        if (!out.pv_pseudo.empty())
          flip_columns(out.pv_pseudo[k].data, out.pv_pseudo[k].h, out.pv_pseudo[k].w, 1);
      }
    }
    // new_gt(p) = old_gt(T^-1 p), nearest neighbor on cell centers.
    const geom::Mat3 inv = t.transposed();
    for (int i = 0; i < grid.h; ++i)
      for (int j = 0; j < grid.w; ++j) {
        const auto c = geom::cell_center(grid, i, j);
        const geom::Vec3 src = inv * geom::Vec3{c.x, c.y, 0};
        const auto cell = geom::cell_of(grid, src.x, src.y);
        for (int k = 0; k < out.bev_gt.c; ++k)
          out.bev_gt.at(k, i, j) = cell ? sample.bev_gt.at(k, cell->first, cell->second) : 0;
        out.bev_ignore.at(i, j) = cell ? sample.bev_ignore.at(cell->first, cell->second) : 1;
      }
  }

  {
    for (int k = 0; k < n; ++k) {
      const auto [dx, dy] = k < static_cast<int>(geom.crop_offset.size()) ? geom.crop_offset[k]
                                                                           : std::pair{0.0, 0.0};
      if (geom.scale == 1.0 && dx == 0 && dy == 0) continue;
      auto& cam = out.rig[k];
      const int h = cam.intrinsics.height, w = cam.intrinsics.width;
      const double s = geom.scale;
      cam.intrinsics.fx *= s;
      cam.intrinsics.fy *= s;
      cam.intrinsics.cx = std::clamp(s * cam.intrinsics.cx - dx, 0.0, std::nextafter(double(w), 0.0));
      cam.intrinsics.cy = std::clamp(s * cam.intrinsics.cy - dy, 0.0, std::nextafter(double(h), 0.0));

      const Image src = out.images[k];
      const LabelMap src_pv = out.pv_labels[k];
      const LabelMap src_pseudo = out.pv_pseudo.empty() ? LabelMap{} : out.pv_pseudo[k];
      for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
          // Continuous source position of the destination pixel center.
          const double u = (c + 0.5 + dx) / s, v = (r + 0.5 + dy) / s;
          const bool inside = u >= 0 && u < w && v >= 0 && v < h;
          for (int ch = 0; ch < 3; ++ch) {
            const float val = inside ? bilinear(src, u - 0.5, v - 0.5, ch) : 0.f;
            out.images[k].at(r, c, ch) = static_cast<uint8_t>(std::lround(std::clamp(val, 0.f, 255.f)));
          }
          const int sr = static_cast<int>(std::floor(v)), sc = static_cast<int>(std::floor(u));
          out.pv_labels[k].at(r, c) = inside ? src_pv.at(sr, sc) : synth::kIgnoreLabel;
          if (!out.pv_pseudo.empty())
            out.pv_pseudo[k].at(r, c) = inside ? src_pseudo.at(sr, sc) : synth::kIgnoreLabel;
        }
    }
  }
  return out;
}

void apply_photometric(ImageF& image, const ColorJitter& jitter, double blur_sigma) {
  if (jitter.brightness != 1.0)
    for (auto& v : image.rgb) v = static_cast<float>(v * jitter.brightness);
  if (jitter.contrast != 1.0) {
    double mean = 0;
    for (size_t p = 0; p < image.rgb.size(); p += 3)
      mean += 0.299 * image.rgb[p] + 0.587 * image.rgb[p + 1] + 0.114 * image.rgb[p + 2];
    mean /= static_cast<double>(image.rgb.size() / 3);
    for (auto& v : image.rgb) v = static_cast<float>((v - mean) * jitter.contrast + mean);
  }
  if (jitter.saturation != 1.0) desaturate(image, 1.0 - jitter.saturation);
  clamp01(image);
  gaussian_blur(image, blur_sigma);
  clamp01(image);
}

void apply_photometric(std::vector<Image>& images, const PhotoAugParams& photo) {
  for (size_t v = 0; v < images.size(); ++v) {
    const ColorJitter j = v < photo.jitter.size() ? photo.jitter[v] : ColorJitter{};
    const double sigma = v < photo.blur_sigma.size() ? photo.blur_sigma[v] : 0.0;
    if (j == ColorJitter{} && sigma <= 0) continue;
    ImageF f = to_float(images[v]);
    apply_photometric(f, j, sigma);
    images[v] = to_u8(f);
  }
}

CamDropResult camdrop(const synth::Sample& sample, const geom::DroppedSet& dropped,
                      const geom::BevGridSpec& grid) {
  const int n = sample.rig.size();
  if (static_cast<int>(dropped.size()) >= n) throw InvalidArgument("camdrop: cannot drop every camera");
  CamDropResult res{sample, {}, std::vector<uint8_t>(n, 0)};
  if (!dropped.empty()) {
    const BoolGrid exclusive = geom::exclusive_visibility_mask(grid, sample.rig, dropped);
    for (size_t idx = 0; idx < exclusive.size(); ++idx) res.sample.bev_ignore.data[idx] |= exclusive.data[idx];
    for (int k : dropped) {
      std::fill(res.sample.images[k].rgb.begin(), res.sample.images[k].rgb.end(), 0);
      res.pv_dropped[k] = 1;
    }
  }
  res.bev_ignore = res.sample.bev_ignore;
  return res;
}

}  // namespace pct::aug
