#include "pct/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace pct::synth {

namespace {

constexpr double kPi = std::numbers::pi;

// Smooth value noise in [-1, 1] on an integer lattice keyed by seed.
double lattice(uint64_t seed, int64_t ix, int64_t iy) {
  return 2.0 * to_unit(hash_seed(seed, static_cast<uint64_t>(ix), static_cast<uint64_t>(iy))) - 1.0;
}

double value_noise(uint64_t seed, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto ix = static_cast<int64_t>(fx), iy = static_cast<int64_t>(fy);
  double tx = x - fx, ty = y - fy;
  tx = tx * tx * (3 - 2 * tx);
  ty = ty * ty * (3 - 2 * ty);
  const double a = lattice(seed, ix, iy), b = lattice(seed, ix + 1, iy);
  const double c = lattice(seed, ix, iy + 1), d = lattice(seed, ix + 1, iy + 1);
  return (a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty;
}

// Two octaves keyed by world position so every camera sees the same texture.
double ground_texture(uint64_t seed, double x, double y) {
  return 0.65 * value_noise(seed, x / 1.0, y / 1.0) +
         0.35 * value_noise(seed ^ 0xA5A5A5A5ull, x / 0.25, y / 0.25);
}

double angle_between_lines(double a, double b) {
  double d = std::fmod(std::abs(a - b), kPi);
  return std::min(d, kPi - d);
}

Appearance sample_appearance(Rng& rng) {
  Appearance app;
  const double scene_light = rng.uniform(0.8, 1.2);
  auto jitter = [&](std::array<float, 3> base, double spread) {
    std::array<float, 3> out{};
    const double level = rng.uniform(1.0 - spread, 1.0 + spread);
    for (int ch = 0; ch < 3; ++ch)
      out[ch] = static_cast<float>(std::clamp(
          (base[ch] * level + rng.uniform(-0.04, 0.04)) * scene_light, 0.02, 0.98));
    return out;
  };
  app.albedo[kPvDrivable] = jitter({0.33f, 0.33f, 0.35f}, 0.3);
  app.albedo[kPvCrossing] = jitter({0.72f, 0.72f, 0.70f}, 0.12);
  app.albedo[kPvWalkway] = jitter({0.55f, 0.51f, 0.47f}, 0.2);
  app.albedo[kPvDivider] = jitter({0.78f, 0.70f, 0.40f}, 0.12);
  app.albedo[kPvSky] = jitter({0.62f, 0.68f, 0.76f}, 0.1);
  app.albedo[kPvOtherGround] = jitter({0.44f, 0.46f, 0.38f}, 0.25);
  app.beyond_extent = app.albedo[kPvOtherGround];
  app.texture_amplitude = static_cast<float>(rng.uniform(0.08, 0.16));
  return app;
}

}  // namespace

uint32_t SceneMap::class_bits_at(double x, double y) const {
  uint32_t bits = 0;
  bool walkway = false;
  for (const auto& road : roads) {
    const double ct = std::cos(road.heading), st = std::sin(road.heading);
    const double d = -st * x + ct * y - road.offset;
    const double s = ct * x + st * y;
    const double half = 0.5 * road.width;
    const double ad = std::abs(d);
    if (ad <= half) {
      bits |= 1u << kDrivable;
      if (ad <= 0.5 * layout.divider_width) bits |= 1u << kDivider;
      double phase = std::fmod(s - road.crossing_phase, layout.crossing_period);
      if (phase < 0) phase += layout.crossing_period;
      if (phase < layout.crossing_width) bits |= 1u << kCrossing;
    } else if (ad <= half + road.walkway) {
      walkway = true;
    }
  }
  if (walkway && !(bits & (1u << kDrivable))) bits |= 1u << kWalkway;
  return bits;
}

SceneMap generate_scene(uint64_t seed, const LayoutParams& params) {
  params.grid.validate();
  if (params.min_roads < 1 || params.max_roads < params.min_roads)
    throw InvalidArgument("generate_scene: invalid road count range");
  if (!(params.road_width_min > 0) || params.road_width_max < params.road_width_min)
    throw InvalidArgument("generate_scene: invalid road width range");

  Rng rng(hash_seed(seed, 0x5CE7E));
  SceneMap scene;
  scene.layout = params;
  scene.texture_seed = hash_seed(seed, 0x7E47);

  const int count =
      params.min_roads + static_cast<int>(rng.below(params.max_roads - params.min_roads + 1));
  const double reach = 0.7 * std::min(params.grid.x_max - params.grid.x_min,
                                      params.grid.y_max - params.grid.y_min) / 2;
  for (int r = 0; r < count; ++r) {
    Road road;
    road.width = rng.uniform(params.road_width_min, params.road_width_max);
    road.walkway = rng.uniform(params.walkway_width_min, params.walkway_width_max);
    road.crossing_phase = rng.uniform(0.0, params.crossing_period);
    if (r == 0) {
      road.heading = rng.uniform(0.0, kPi);
      road.offset = rng.uniform(-2.0, 2.0);
    } else {
      // Rejection-sample a heading far enough from the existing roads.
      for (int attempt = 0; attempt < 64; ++attempt) {
        road.heading = rng.uniform(0.0, kPi);
        bool ok = true;
        for (const auto& other : scene.roads)
          ok = ok && angle_between_lines(road.heading, other.heading) >=
                         params.min_road_angle_deg * kPi / 180.0;
        if (ok) break;
      }
      road.offset = rng.uniform(-reach, reach);
    }
    scene.roads.push_back(road);
  }
  scene.appearance = sample_appearance(rng);
  scene.labels = rasterize(scene, {});
  return scene;
}

BevLabels rasterize(const SceneMap& scene, const EgoPose& pose) {
  const auto& grid = scene.layout.grid;
  BevLabels labels(grid.num_classes, grid.h, grid.w, 0);
  const double c = std::cos(pose.yaw), s = std::sin(pose.yaw);
  for (int i = 0; i < grid.h; ++i) {
    for (int j = 0; j < grid.w; ++j) {
      const auto cell = geom::cell_center(grid, i, j);
      const double wx = pose.x + c * cell.x - s * cell.y;
      const double wy = pose.y + s * cell.x + c * cell.y;
      const uint32_t bits = scene.class_bits_at(wx, wy);
      for (int k = 0; k < grid.num_classes && k < kNumBevClasses; ++k)
        labels.at(k, i, j) = (bits >> k) & 1u;
    }
  }
  return labels;
}

EgoPose frame_pose(const SceneMap& scene, int frame_id, int frames_per_scene, uint64_t seed) {
  Rng rng(hash_seed(seed, 0xF0A5E, static_cast<uint64_t>(frame_id)));
  const Road& road = scene.roads.front();
  const double ct = std::cos(road.heading), st = std::sin(road.heading);
  const double along = (frame_id - 0.5 * (frames_per_scene - 1)) * 3.0 + rng.uniform(-0.5, 0.5);
  const double lateral = road.offset + rng.uniform(-0.25, 0.25) * road.width;
  EgoPose pose;
  pose.x = ct * along - st * lateral;
  pose.y = st * along + ct * lateral;
  pose.yaw = road.heading + rng.uniform(-5.0, 5.0) * kPi / 180.0 + (rng.bernoulli(0.5) ? kPi : 0.0);
  return pose;
}

uint8_t pv_class_of_cell(const BevLabels& labels, int i, int j) {
  if (labels.c > kDivider && labels.at(kDivider, i, j)) return kPvDivider;
  if (labels.c > kCrossing && labels.at(kCrossing, i, j)) return kPvCrossing;
  if (labels.at(kDrivable, i, j)) return kPvDrivable;
  if (labels.c > kWalkway && labels.at(kWalkway, i, j)) return kPvWalkway;
  return kPvOtherGround;
}

std::optional<geom::Vec3> intersect_ground(const geom::Camera& cam, double u, double v) {
  const auto& k = cam.intrinsics;
  const geom::Vec3 dir_cam{(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0};
  const geom::Vec3 dir = cam.extrinsics.rotation * dir_cam;
  const auto& t = cam.extrinsics.translation;
  if (!(dir.z < -1e-12)) return std::nullopt;
  const double s = -t.z / dir.z;
  if (!(s > 0)) return std::nullopt;
  return geom::Vec3{t.x + s * dir.x, t.y + s * dir.y, 0.0};
}

Sample render_sample(const SceneMap& scene, const geom::CameraRig& rig, const DomainSpec& domain,
                     uint64_t seed, const EgoPose& pose) {
  rig.validate();
  const auto& grid = scene.layout.grid;
  Sample sample;
  sample.rig = rig;
  sample.pose = pose;
  sample.bev_gt = rasterize(scene, pose);
  sample.bev_ignore = BoolGrid(grid.h, grid.w, 0);

  Rng rng(hash_seed(seed, 0x11647));
  const double light = rng.uniform(0.9, 1.1);
  const double c = std::cos(pose.yaw), s = std::sin(pose.yaw);
  const auto& app = scene.appearance;

  for (int cam_idx = 0; cam_idx < rig.size(); ++cam_idx) {
    const auto& cam = rig[cam_idx];
    const int height = cam.intrinsics.height, width = cam.intrinsics.width;
    ImageF image(height, width);
    LabelMap labels(height, width, kPvSky);
    for (int r = 0; r < height; ++r) {
      for (int col = 0; col < width; ++col) {
        const auto hit = intersect_ground(cam, col + 0.5, r + 0.5);
        std::array<float, 3> color{};
        double shade = 1.0;
        if (!hit) {
          color = app.albedo[kPvSky];
          shade = 1.0 + 0.15 * (static_cast<double>(r) / height - 0.5);
        } else {
          const double wx = pose.x + c * hit->x - s * hit->y;
          const double wy = pose.y + s * hit->x + c * hit->y;
          uint8_t cls = kPvOtherGround;
          if (const auto cell = geom::cell_of(grid, hit->x, hit->y)) {
            cls = pv_class_of_cell(sample.bev_gt, cell->first, cell->second);
            color = app.albedo[cls];
          } else {
            color = app.beyond_extent;
          }
          labels.at(r, col) = cls;
          shade = 1.0 + app.texture_amplitude * ground_texture(scene.texture_seed, wx, wy);
        }
        for (int ch = 0; ch < 3; ++ch)
          image.at(r, col, ch) = static_cast<float>(std::clamp(color[ch] * shade * light, 0.0, 1.0));
      }
    }
    sample.images.push_back(to_u8(apply_domain_shift(image, domain)));
    sample.pv_labels.push_back(std::move(labels));
  }
  return sample;
}

BoolGrid boundary_band(const LabelMap& labels) {
  BoolGrid band(labels.h, labels.w, 0);
  for (int r = 0; r < labels.h; ++r) {
    for (int c = 0; c < labels.w; ++c) {
      const uint8_t own = labels.at(r, c);
      if (own == kIgnoreLabel) continue;
      bool differs = false;
      for (int dr = -kBoundaryBand; dr <= kBoundaryBand && !differs; ++dr) {
        const int rr = r + dr;
        if (rr < 0 || rr >= labels.h) continue;
        for (int dc = -kBoundaryBand; dc <= kBoundaryBand; ++dc) {
          const int cc = c + dc;
          if (cc < 0 || cc >= labels.w) continue;
          const uint8_t other = labels.at(rr, cc);
          if (other != kIgnoreLabel && other != own) {
            differs = true;
            break;
          }
        }
      }
      band.at(r, c) = differs ? 1 : 0;
    }
  }
  return band;
}

LabelMap make_pseudo_labels(const LabelMap& labels, double noise_rate, uint64_t seed) {
  if (!(noise_rate >= 0 && noise_rate <= 1))
    throw InvalidArgument("make_pseudo_labels: noise_rate must lie in [0, 1]");
  LabelMap out = labels;
  if (noise_rate == 0) return out;
  const BoolGrid band = boundary_band(labels);
  for (size_t idx = 0; idx < labels.size(); ++idx) {
    const uint8_t own = labels.data[idx];
    if (own == kIgnoreLabel) continue;
    const double p = std::min(1.0, noise_rate * (band.data[idx] ? kBoundaryWeight : 1.0));
    if (to_unit(hash_seed(seed, idx, 0)) < p) {
      const auto shift = 1 + static_cast<int>(to_unit(hash_seed(seed, idx, 1)) * (kNumPvClasses - 1));
      out.data[idx] = static_cast<uint8_t>((own + shift) % kNumPvClasses);
    }
  }
  return out;
}

double expected_flip_fraction(const LabelMap& labels, double noise_rate) {
  const BoolGrid band = boundary_band(labels);
  double expected = 0;
  size_t count = 0;
  for (size_t idx = 0; idx < labels.size(); ++idx) {
    if (labels.data[idx] == kIgnoreLabel) continue;
    expected += std::min(1.0, noise_rate * (band.data[idx] ? kBoundaryWeight : 1.0));
    ++count;
  }
  return count ? expected / count : 0.0;
}

ImageF apply_domain_shift(const ImageF& image, const DomainSpec& domain) {
  ImageF out = image;
  if (domain.gain != 1.0 || domain.gamma != 1.0) {
    for (auto& v : out.rgb)
      v = static_cast<float>(std::clamp(std::pow(std::max(0.0, domain.gain * v), domain.gamma), 0.0, 1.0));
  }
  desaturate(out, domain.desaturation);
  gaussian_blur(out, domain.blur_sigma);
  clamp01(out);
  return out;
}

DomainSpec domain_by_name(const std::string& name) {
  DomainSpec d;
  d.name = name;
  if (name == "day") return d;
  if (name == "night") {
    d.gain = 0.25;
    d.gamma = 1.4;
    return d;
  }
  if (name == "rain") {
    d.desaturation = 0.5;
    d.blur_sigma = 1.5;
    return d;
  }
  if (name == "city_a") {
    d.road_width_min = 5.0;
    d.road_width_max = 7.0;
    d.max_roads = 1;
    d.walkway_width_max = 2.5;
    return d;
  }
  if (name == "city_b") {
    d.road_width_min = 10.0;
    d.road_width_max = 14.0;
    d.max_roads = 3;
    d.walkway_width_max = 4.5;
    return d;
  }
  throw InvalidArgument("unknown domain '" + name + "'");
}

LayoutParams apply_layout_shift(LayoutParams params, const DomainSpec& domain) {
  if (domain.road_width_min) params.road_width_min = *domain.road_width_min;
  if (domain.road_width_max) params.road_width_max = *domain.road_width_max;
  if (domain.max_roads) params.max_roads = std::max(params.min_roads, *domain.max_roads);
  if (domain.walkway_width_max)
    params.walkway_width_max = std::max(params.walkway_width_min, *domain.walkway_width_max);
  return params;
}

}  // namespace pct::synth
