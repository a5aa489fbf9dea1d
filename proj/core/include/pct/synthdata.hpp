#pragma once

// Procedural flat-ground driving scenes with exact BEV and perspective-view
// ground truth, a noisy pseudo-label oracle and photometric domain shifts.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pct/common.hpp"
#include "pct/geometry.hpp"
#include "pct/image.hpp"

namespace pct::synth {

// BEV channels (multi-label).
enum BevClass : int { kDrivable = 0, kCrossing = 1, kWalkway = 2, kDivider = 3 };
inline constexpr int kNumBevClasses = 4;
inline constexpr std::array<const char*, kNumBevClasses> kBevClassNames = {
    "drivable", "crossing", "walkway", "divider"};

// Perspective-view classes. The four ground classes share ids with the BEV
// channels; kOtherGround covers background ground inside the grid and all
// ground beyond the grid extent.
enum PvClass : uint8_t {
  kPvDrivable = 0,
  kPvCrossing = 1,
  kPvWalkway = 2,
  kPvDivider = 3,
  kPvSky = 4,
  kPvOtherGround = 5,
};
inline constexpr int kNumPvClasses = 6;
inline constexpr uint8_t kIgnoreLabel = 255;

using BevLabels = Grid3<uint8_t>;  // num_classes x h x w, values 0/1

struct LayoutParams {
  geom::BevGridSpec grid;
  int min_roads = 1;
  int max_roads = 3;
  double road_width_min = 7.0;
  double road_width_max = 11.0;
  double divider_width = 0.8;
  double walkway_width_min = 2.0;
  double walkway_width_max = 3.5;
  double crossing_period = 18.0;
  double crossing_width = 3.0;
  double min_road_angle_deg = 40.0;
  bool operator==(const LayoutParams&) const = default;
};

struct Road {
  double heading = 0;  // radians, direction of travel
  double offset = 0;   // signed lateral offset of the center line from origin
  double width = 0;
  double walkway = 0;
  double crossing_phase = 0;
  bool operator==(const Road&) const = default;
};

/// Per-scene surface colors, linear RGB in [0, 1].
struct Appearance {
  std::array<std::array<float, 3>, kNumPvClasses> albedo{};
  std::array<float, 3> beyond_extent{};
  float texture_amplitude = 0.12f;
  bool operator==(const Appearance&) const = default;
};

struct SceneMap {
  BevLabels labels;  // rasterized at the identity ego pose
  uint64_t texture_seed = 0;
  LayoutParams layout;
  std::vector<Road> roads;
  Appearance appearance;

  /// Bitmask over BevClass of the analytic layout at a world point.
  uint32_t class_bits_at(double x, double y) const;
};

struct EgoPose {
  double x = 0;
  double y = 0;
  double yaw = 0;  // radians
  bool operator==(const EgoPose&) const = default;
};

struct DomainSpec {
  std::string name = "day";
  double gain = 1.0;
  double gamma = 1.0;
  double desaturation = 0.0;
  double blur_sigma = 0.0;
  // Layout overrides applied to LayoutParams for city shifts.
  std::optional<double> road_width_min;
  std::optional<double> road_width_max;
  std::optional<int> max_roads;
  std::optional<double> walkway_width_max;
  bool operator==(const DomainSpec&) const = default;
};

/// Named domains: day, night, rain, city_a, city_b.
DomainSpec domain_by_name(const std::string& name);
LayoutParams apply_layout_shift(LayoutParams params, const DomainSpec& domain);

struct Sample {
  std::vector<Image> images;  // one per camera
  geom::CameraRig rig;
  BevLabels bev_gt;
  BoolGrid bev_ignore;
  std::vector<LabelMap> pv_labels;
  std::vector<LabelMap> pv_pseudo;  // empty until pseudo-labels are generated
  int scene_id = 0;
  int frame_id = 0;
  EgoPose pose;
  bool operator==(const Sample&) const = default;
};

/// Deterministic in seed. Throws InvalidArgument on a degenerate grid.
SceneMap generate_scene(uint64_t seed, const LayoutParams& params);

/// BEV labels of the scene seen from an ego pose, sampled at cell centers.
BevLabels rasterize(const SceneMap& scene, const EgoPose& pose);

/// Ego pose of a frame: the ego drives along the first road.
EgoPose frame_pose(const SceneMap& scene, int frame_id, int frames_per_scene,
                   uint64_t seed);

/// PV class of a BEV cell from its label bits (priority divider > crossing >
/// drivable > walkway > other ground).
uint8_t pv_class_of_cell(const BevLabels& labels, int i, int j);

/// Ground intersection of the ray through continuous pixel (u, v), in the
/// ego frame. None when the ray does not point below the horizon.
std::optional<geom::Vec3> intersect_ground(const geom::Camera& cam, double u, double v);

Sample render_sample(const SceneMap& scene, const geom::CameraRig& rig,
                     const DomainSpec& domain, uint64_t seed, const EgoPose& pose = {});

/// Pixels within this Chebyshev distance of a differently labeled pixel form
/// the boundary band where pseudo-label errors concentrate.
inline constexpr int kBoundaryBand = 2;
inline constexpr double kBoundaryWeight = 3.0;

/// 1 inside the boundary band, 0 elsewhere (ignore pixels never count).
BoolGrid boundary_band(const LabelMap& labels);

/// Flips each non-ignore pixel to a different class with probability
/// min(1, noise_rate * w), w = 3 in the boundary band and 1 elsewhere.
/// Uses one uniform draw per pixel so disagreement is monotone in the rate.
LabelMap make_pseudo_labels(const LabelMap& labels, double noise_rate, uint64_t seed);

/// Expected fraction of flipped (non-ignore) pixels for a label map.
double expected_flip_fraction(const LabelMap& labels, double noise_rate);

/// Photometric part of a domain: clamp((gain * x)^gamma), then desaturation,
/// then Gaussian blur. Identity for the reference domain.
ImageF apply_domain_shift(const ImageF& image, const DomainSpec& domain);

}  // namespace pct::synth
