#pragma once

// Weak/strong augmentation with a shared-geometry contract, and CamDrop.
//
// Flip and rotation act on the whole rig: the same ego-frame transform is
// composed into every camera's extrinsics and applied to the BEV labels.
// Scale and crop act per image by editing the intrinsics and resampling the
// image and its label maps.

#include <cstdint>
#include <utility>
#include <vector>

#include "pct/geometry.hpp"
#include "pct/synthdata.hpp"

namespace pct::aug {

struct GeomAugParams {
  bool flip = false;
  double rotation_deg = 0;  // about ego z
  double scale = 1.0;
  std::vector<std::pair<double, double>> crop_offset;  // per view (dx, dy) pixels

  bool is_identity() const;
  bool operator==(const GeomAugParams&) const = default;
};

struct ColorJitter {
  double brightness = 1.0;
  double contrast = 1.0;
  double saturation = 1.0;
  bool operator==(const ColorJitter&) const = default;
};

struct PhotoAugParams {
  std::vector<ColorJitter> jitter;  // per view
  std::vector<double> blur_sigma;   // per view
  geom::DroppedSet camdrop;
  bool operator==(const PhotoAugParams&) const = default;
};

struct CamDropConfig {
  int max_drops = 1;
  double apply_prob = 0.5;

  /// Throws ConfigError unless 0 <= max_drops <= num_cameras - 1.
  void validate(int num_cameras) const;
};

/// Sampling ranges for the two pipelines.
struct AugmentRecipe {
  double flip_prob = 0.5;
  double max_rotation_deg = 10.0;
  double scale_min = 0.9;
  double scale_max = 1.1;
  bool crop = true;
  double jitter_prob = 0.8;
  double jitter_strength = 0.4;  // factors drawn from [1 - s, 1 + s]
  bool blur = true;
  double blur_prob = 0.5;
  double blur_sigma_min = 0.1;
  double blur_sigma_max = 2.0;

  /// UDA preset: strong augmentation without Gaussian blur.
  static AugmentRecipe uda();
  void validate() const;
};

GeomAugParams sample_weak(uint64_t seed, const AugmentRecipe& recipe, int num_views,
                          int image_width, int image_height);

/// Reuses `geom` verbatim and adds photometric params plus a CamDrop draw:
/// with probability apply_prob drop d cameras, d uniform on {1..max_drops}.
std::pair<GeomAugParams, PhotoAugParams> sample_strong(uint64_t seed, const GeomAugParams& geom,
                                                       const CamDropConfig& camdrop,
                                                       const AugmentRecipe& recipe, int num_views);

/// Cells whose source position after a rig rotation falls outside the grid
/// become ignored (and zero in bev_gt).
synth::Sample apply_geometric(const synth::Sample& sample, const GeomAugParams& geom,
                              const geom::BevGridSpec& grid);

void apply_photometric(ImageF& image, const ColorJitter& jitter, double blur_sigma);
void apply_photometric(std::vector<Image>& images, const PhotoAugParams& photo);

struct CamDropResult {
  synth::Sample sample;
  BoolGrid bev_ignore;              // same as sample.bev_ignore
  std::vector<uint8_t> pv_dropped;  // per view: PV loss fully ignored
};

/// Zeroes dropped views and ORs the exclusive-visibility mask of the dropped
/// cameras into bev_ignore. Throws InvalidArgument when every camera is dropped.
CamDropResult camdrop(const synth::Sample& sample, const geom::DroppedSet& dropped,
                      const geom::BevGridSpec& grid);

}  // namespace pct::aug
