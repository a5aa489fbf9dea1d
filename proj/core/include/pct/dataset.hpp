#pragma once

// On-disk dataset container.
//
//   <root>/dataset.json                      dataset manifest
//   <root>/scene_0000/frame_000/frame.json   frame manifest with camera params
//   <root>/scene_0000/frame_000/cam0.png     RGB view, one per camera
//   <root>/scene_0000/frame_000/cam0_pv.png  PV class ids (8-bit gray)
//   <root>/scene_0000/frame_000/cam0_pseudo.png  pseudo-labels, optional
//   <root>/scene_0000/frame_000/bev_gt.bin   uint8 C x h x w raw grid
//   <root>/scene_0000/frame_000/bev_ignore.bin  uint8 h x w raw grid
//
// Every manifest carries format_version.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pct/synthdata.hpp"

namespace pct::synth {

inline constexpr int kDatasetFormatVersion = 1;

struct PseudoLabelInfo {
  double noise_rate = 0;
  uint64_t seed = 0;
  bool operator==(const PseudoLabelInfo&) const = default;
};

struct DatasetManifest {
  int format_version = kDatasetFormatVersion;
  std::string name;
  uint64_t seed = 0;
  geom::BevGridSpec grid;
  int image_height = 96;
  int image_width = 192;
  DomainSpec domain;
  LayoutParams layout;
  int frames_per_scene = 0;
  std::vector<int> scene_ids;
  std::optional<PseudoLabelInfo> pseudo_labels;
  bool operator==(const DatasetManifest&) const = default;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<Sample> samples;  // scene-major, frame-minor

  std::vector<size_t> indices_of_scenes(const std::vector<int>& scene_ids) const;
};

struct GenerateOptions {
  std::string name = "synthetic";
  int scenes = 16;
  int frames_per_scene = 8;
  std::string domain = "day";
  uint64_t seed = 0;
  int first_scene_id = 0;
  LayoutParams layout;
  geom::CameraRig rig = geom::make_default_rig();
};

/// Named grid and image-size combinations: "default" (64x64 cells of 0.5 m,
/// 96x192 images) and "desk" (32x32 cells of 1 m, 48x96 images).
struct GridPreset {
  geom::BevGridSpec grid;
  int image_height = 96;
  int image_width = 192;
};
GridPreset grid_preset(const std::string& name);  // throws InvalidArgument

/// Scene seed = hash(dataset seed, scene id); frame seed adds the frame id.
Dataset generate_dataset(const GenerateOptions& opts);

/// Replaces pv_pseudo of every frame and records the noise rate.
void pseudo_label_dataset(Dataset& dataset, double noise_rate, uint64_t seed);

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);
/// Throws LoadError naming the offending file on missing or corrupt data.
Dataset read_dataset(const std::filesystem::path& dir);
DatasetManifest read_dataset_manifest(const std::filesystem::path& dir);

std::filesystem::path frame_dir(const std::filesystem::path& root, int scene_id, int frame_id);

}  // namespace pct::synth
