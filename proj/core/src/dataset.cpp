#include "pct/dataset.hpp"

#include <cstring>
#include <cstdio>

#include "pct/io.hpp"
#include "pct/serialization.hpp"

namespace pct::synth {

namespace fs = std::filesystem;

namespace {

std::string scene_name(int id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%04d", id);
  return buf;
}

std::string frame_name(int id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%03d", id);
  return buf;
}

std::string view_file(size_t view, const char* suffix) {
  return "cam" + std::to_string(view) + suffix + ".png";
}

}  // namespace

std::vector<size_t> Dataset::indices_of_scenes(const std::vector<int>& scene_ids) const {
  std::vector<size_t> out;
  for (size_t k = 0; k < samples.size(); ++k)
    for (int id : scene_ids)
      if (samples[k].scene_id == id) {
        out.push_back(k);
        break;
      }
  return out;
}

GridPreset grid_preset(const std::string& name) {
  GridPreset p;
  if (name == "default") return p;
  if (name == "desk") {
    p.grid.h = 32;
    p.grid.w = 32;
    p.grid.resolution = 1.0;
    p.image_height = 48;
    p.image_width = 96;
    return p;
  }
  if (name == "tiny") {
    p.grid.h = 16;
    p.grid.w = 16;
    p.grid.resolution = 2.0;
    p.image_height = 32;
    p.image_width = 64;
    return p;
  }
  throw InvalidArgument("unknown grid preset '" + name + "' (expected default, desk or tiny)");
}

Dataset generate_dataset(const GenerateOptions& opts) {
  if (opts.scenes <= 0 || opts.frames_per_scene <= 0)
    throw InvalidArgument("generate_dataset: scenes and frames must be positive");
  const DomainSpec domain = domain_by_name(opts.domain);
  const LayoutParams layout = apply_layout_shift(opts.layout, domain);
  Dataset ds;
  auto& m = ds.manifest;
  m.name = opts.name;
  m.seed = opts.seed;
  m.grid = layout.grid;
  m.image_height = opts.rig[0].intrinsics.height;
  m.image_width = opts.rig[0].intrinsics.width;
  m.domain = domain;
  m.layout = layout;
  m.frames_per_scene = opts.frames_per_scene;
  for (int s = 0; s < opts.scenes; ++s) {
    const int scene_id = opts.first_scene_id + s;
    m.scene_ids.push_back(scene_id);
    const auto scene_seed = hash_seed(opts.seed, static_cast<uint64_t>(scene_id));
    const SceneMap scene = generate_scene(scene_seed, layout);
    for (int f = 0; f < opts.frames_per_scene; ++f) {
      const auto frame_seed = hash_seed(opts.seed, static_cast<uint64_t>(scene_id), static_cast<uint64_t>(f));
      Sample sample = render_sample(scene, opts.rig, domain, frame_seed,
                                    frame_pose(scene, f, opts.frames_per_scene, scene_seed));
      sample.scene_id = scene_id;
      sample.frame_id = f;
      ds.samples.push_back(std::move(sample));
    }
  }
  return ds;
}

void pseudo_label_dataset(Dataset& dataset, double noise_rate, uint64_t seed) {
  for (auto& sample : dataset.samples) {
    sample.pv_pseudo.clear();
    for (size_t v = 0; v < sample.pv_labels.size(); ++v) {
      const auto view_seed = hash_seed(seed, static_cast<uint64_t>(sample.scene_id),
                                       static_cast<uint64_t>(sample.frame_id), v);
      sample.pv_pseudo.push_back(make_pseudo_labels(sample.pv_labels[v], noise_rate, view_seed));
    }
  }
  dataset.manifest.pseudo_labels = PseudoLabelInfo{noise_rate, seed};
}

fs::path frame_dir(const fs::path& root, int scene_id, int frame_id) {
  return root / scene_name(scene_id) / frame_name(frame_id);
}

namespace {

Json manifest_to_json(const DatasetManifest& m) {
  Json scenes = Json::array();
  for (int id : m.scene_ids) scenes.push_back({{"scene_id", id}, {"dir", scene_name(id)}});
  Json j{{"format_version", m.format_version},
         {"kind", "pct-synthetic-dataset"},
         {"name", m.name},
         {"seed", m.seed},
         {"grid", m.grid},
         {"image", {{"height", m.image_height}, {"width", m.image_width}}},
         {"domain", m.domain},
         {"layout", m.layout},
         {"frames_per_scene", m.frames_per_scene},
         {"scenes", scenes}};
  j["pseudo_labels"] = m.pseudo_labels
                           ? Json{{"noise_rate", m.pseudo_labels->noise_rate}, {"seed", m.pseudo_labels->seed}}
                           : Json(nullptr);
  return j;
}

DatasetManifest manifest_from_json(const Json& j) {
  DatasetManifest m;
  j.at("format_version").get_to(m.format_version);
  if (m.format_version != kDatasetFormatVersion)
    throw LoadError("unsupported dataset format_version " + std::to_string(m.format_version));
  j.at("name").get_to(m.name);
  j.at("seed").get_to(m.seed);
  j.at("grid").get_to(m.grid);
  j.at("image").at("height").get_to(m.image_height);
  j.at("image").at("width").get_to(m.image_width);
  j.at("domain").get_to(m.domain);
  j.at("layout").get_to(m.layout);
  j.at("frames_per_scene").get_to(m.frames_per_scene);
  for (const auto& s : j.at("scenes")) m.scene_ids.push_back(s.at("scene_id").get<int>());
  const auto& p = j.at("pseudo_labels");
  if (!p.is_null()) m.pseudo_labels = PseudoLabelInfo{p.at("noise_rate").get<double>(), p.at("seed").get<uint64_t>()};
  return m;
}

io::RawGrid to_raw(const BevLabels& labels) {
  return {io::kDtypeU8, {labels.c, labels.h, labels.w}, labels.data};
}

io::RawGrid to_raw(const BoolGrid& mask) { return {io::kDtypeU8, {mask.h, mask.w}, mask.data}; }

}  // namespace

void write_dataset(const Dataset& dataset, const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& sample : dataset.samples) {
    const fs::path fdir = frame_dir(dir, sample.scene_id, sample.frame_id);
    fs::create_directories(fdir);
    Json cams = Json::array();
    for (const auto& cam : sample.rig.cameras) cams.push_back(cam);
    Json frame{{"format_version", kDatasetFormatVersion},
               {"scene_id", sample.scene_id},
               {"frame_id", sample.frame_id},
               {"pose", sample.pose},
               {"cameras", cams},
               {"has_pseudo", !sample.pv_pseudo.empty()}};
    for (size_t v = 0; v < sample.images.size(); ++v) {
      io::write_png_rgb(fdir / view_file(v, ""), sample.images[v]);
      io::write_png_gray(fdir / view_file(v, "_pv"), sample.pv_labels[v]);
      if (!sample.pv_pseudo.empty())
        io::write_png_gray(fdir / view_file(v, "_pseudo"), sample.pv_pseudo[v]);
    }
    io::write_raw_grid(fdir / "bev_gt.bin", to_raw(sample.bev_gt));
    io::write_raw_grid(fdir / "bev_ignore.bin", to_raw(sample.bev_ignore));
    io::write_text(fdir / "frame.json", frame.dump(2) + "\n");
  }
  // The dataset manifest goes last: its presence marks a complete dataset.
  io::write_text(dir / "dataset.json", manifest_to_json(dataset.manifest).dump(2) + "\n");
}

DatasetManifest read_dataset_manifest(const fs::path& dir) {
  const fs::path path = dir / "dataset.json";
  if (!fs::exists(path)) throw LoadError("missing dataset manifest '" + path.string() + "'");
  try {
    return manifest_from_json(Json::parse(io::read_text(path)));
  } catch (const Json::exception& e) {
    throw LoadError("corrupt dataset manifest '" + path.string() + "': " + e.what());
  }
}

Dataset read_dataset(const fs::path& dir) {
  Dataset ds;
  ds.manifest = read_dataset_manifest(dir);
  const auto& m = ds.manifest;
  for (int scene_id : m.scene_ids) {
    for (int f = 0; f < m.frames_per_scene; ++f) {
      const fs::path fdir = frame_dir(dir, scene_id, f);
      const fs::path fpath = fdir / "frame.json";
      if (!fs::exists(fpath)) throw LoadError("missing frame manifest '" + fpath.string() + "'");
      Sample sample;
      try {
        const Json frame = Json::parse(io::read_text(fpath));
        if (frame.at("format_version").get<int>() != kDatasetFormatVersion)
          throw LoadError("unsupported frame format_version in '" + fpath.string() + "'");
        frame.at("scene_id").get_to(sample.scene_id);
        frame.at("frame_id").get_to(sample.frame_id);
        frame.at("pose").get_to(sample.pose);
        for (const auto& cam : frame.at("cameras")) sample.rig.cameras.push_back(cam.get<geom::Camera>());
        const bool has_pseudo = frame.at("has_pseudo").get<bool>();
        for (int v = 0; v < sample.rig.size(); ++v) {
          sample.images.push_back(io::read_png_rgb(fdir / view_file(v, "")));
          sample.pv_labels.push_back(io::read_png_gray(fdir / view_file(v, "_pv")));
          if (has_pseudo)
            sample.pv_pseudo.push_back(io::read_png_gray(fdir / view_file(v, "_pseudo")));
        }
      } catch (const Json::exception& e) {
        throw LoadError("corrupt frame manifest '" + fpath.string() + "': " + e.what());
      }
      const auto gt = io::read_raw_grid(fdir / "bev_gt.bin");
      if (gt.dims.size() != 3 || gt.dims[0] != m.grid.num_classes || gt.dims[1] != m.grid.h ||
          gt.dims[2] != m.grid.w)
        throw LoadError("bev_gt shape mismatch in '" + (fdir / "bev_gt.bin").string() + "'");
      sample.bev_gt = BevLabels(gt.dims[0], gt.dims[1], gt.dims[2]);
      sample.bev_gt.data = gt.bytes;
      const auto ign = io::read_raw_grid(fdir / "bev_ignore.bin");
      if (ign.dims.size() != 2 || ign.dims[0] != m.grid.h || ign.dims[1] != m.grid.w)
        throw LoadError("bev_ignore shape mismatch in '" + (fdir / "bev_ignore.bin").string() + "'");
      sample.bev_ignore = BoolGrid(ign.dims[0], ign.dims[1]);
      sample.bev_ignore.data = ign.bytes;
      ds.samples.push_back(std::move(sample));
    }
  }
  return ds;
}

}  // namespace pct::synth
