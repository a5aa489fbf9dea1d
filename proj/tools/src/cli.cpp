#include "cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include "pct/checkpoint.hpp"
#include "pct/dataset.hpp"
#include "pct/eval.hpp"
#include "pct/io.hpp"
#include "pct/trainers.hpp"

namespace pct::cli {

namespace fs = std::filesystem;

namespace {

struct UsageError : Error {
  using Error::Error;
};

fs::path data_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("PCT_DATA_ROOT")) return env;
  return {};
}

fs::path resolve(const std::string& p, const fs::path& root) {
  if (p.empty()) return {};
  fs::path path(p);
  if (path.is_absolute() || root.empty()) return path;
  return root / path;
}

double parse_fraction(const std::string& s) {
  try {
    const auto slash = s.find('/');
    if (slash == std::string::npos) return std::stod(s);
    return std::stod(s.substr(0, slash)) / std::stod(s.substr(slash + 1));
  } catch (const std::exception&) {
    throw UsageError("bad fraction '" + s + "'");
  }
}

std::string fraction_tag(double f) {
  const double inv = 1.0 / f;
  if (std::abs(inv - std::round(inv)) < 1e-9) return "1-" + std::to_string(static_cast<int>(std::round(inv)));
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", f);
  return buf;
}

// ---- gen-data ---------------------------------------------------------------

struct GenArgs {
  std::string out;
  int scenes = 16;
  int frames = 8;
  std::string domain = "day";
  uint64_t seed = 0;
  std::string grid_preset = "default";
  int first_scene = 0;
  std::string name;
  bool force = false;
};

int gen_data(const GenArgs& a, const fs::path& root, std::ostream& out) {
  const fs::path dir = resolve(a.out, root);
  if (fs::exists(dir / "dataset.json") && !a.force)
    throw UsageError("'" + dir.string() + "' already holds a dataset (use --force to overwrite)");
  if (a.force && fs::exists(dir / "dataset.json")) fs::remove_all(dir);
  const auto preset = synth::grid_preset(a.grid_preset);
  synth::GenerateOptions g;
  g.name = a.name.empty() ? dir.filename().string() : a.name;
  g.scenes = a.scenes;
  g.frames_per_scene = a.frames;
  g.domain = a.domain;
  g.seed = a.seed;
  g.first_scene_id = a.first_scene;
  g.layout.grid = preset.grid;
  g.rig = geom::make_default_rig(preset.image_height, preset.image_width);
  synth::write_dataset(synth::generate_dataset(g), dir);
  out << (dir / "dataset.json").string() << "\n";
  return kOk;
}

// ---- make-splits ------------------------------------------------------------

int make_splits(const std::string& data, const std::string& fraction, uint64_t seed, const std::string& out_flag,
                bool force, const fs::path& root, std::ostream& out) {
  const fs::path dir = resolve(data, root);
  const auto manifest = synth::read_dataset_manifest(dir);
  const double f = parse_fraction(fraction);
  auto split = eval::make_splits(manifest.scene_ids, f, seed);
  split.dataset = manifest.name;
  const fs::path path = out_flag.empty() ? dir / ("split_" + fraction_tag(f) + "_seed" + std::to_string(seed) + ".json")
                                         : resolve(out_flag, root);
  if (fs::exists(path) && !force) {
    const auto existing = eval::read_split(path);
    if (existing.labeled != split.labeled || existing.unlabeled != split.unlabeled)
      throw UsageError("'" + path.string() + "' exists with a different split (use --force)");
  }
  eval::write_split(path, split);
  out << path.string() << "\n";
  out << "labeled " << split.labeled.size() << " scenes, unlabeled " << split.unlabeled.size() << " scenes\n";
  return kOk;
}

// ---- pseudo-label -----------------------------------------------------------

int pseudo_label(const std::string& data, double noise, uint64_t seed, bool force, const fs::path& root,
                 std::ostream& out) {
  if (!(noise >= 0 && noise <= 1)) throw UsageError("--noise must be in [0, 1]");
  const fs::path dir = resolve(data, root);
  auto ds = synth::read_dataset(dir);
  const synth::PseudoLabelInfo want{noise, seed};
  if (ds.manifest.pseudo_labels) {
    if (*ds.manifest.pseudo_labels == want) {
      out << "pseudo-labels already present (noise " << noise << ", seed " << seed << ")\n";
      return kOk;
    }
    if (!force) throw UsageError("dataset already has pseudo-labels with other settings (use --force)");
  }
  synth::pseudo_label_dataset(ds, noise, seed);
  synth::write_dataset(ds, dir);
  double flipped = 0, total = 0;
  for (const auto& s : ds.samples)
    for (size_t v = 0; v < s.pv_labels.size(); ++v)
      for (size_t k = 0; k < s.pv_labels[v].data.size(); ++k) {
        if (s.pv_labels[v].data[k] == synth::kIgnoreLabel) continue;
        total += 1;
        flipped += s.pv_labels[v].data[k] != s.pv_pseudo[v].data[k];
      }
  out << "pseudo-labelled " << ds.samples.size() << " frames, disagreement " << (total ? flipped / total : 0.0)
      << "\n";
  return kOk;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string out;
  std::string mode;
  std::optional<bool> camdrop, bfd;
  std::optional<uint64_t> seed;
  std::optional<int64_t> iterations;
  std::string train, split, val, source, target;
  bool resume = false;
  bool force = false;
  bool quiet = false;
};

struct LoadedData {
  std::map<fs::path, synth::Dataset> cache;
  const synth::Dataset* load(const fs::path& p) {
    if (p.empty()) return nullptr;
    auto it = cache.find(p);
    if (it == cache.end()) it = cache.emplace(p, synth::read_dataset(p)).first;
    return &it->second;
  }
};

std::vector<size_t> all_frames(const synth::Dataset& ds) {
  std::vector<size_t> v(ds.samples.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = i;
  return v;
}

int train_cmd(TrainArgs a, bool uda, const fs::path& root, std::ostream& out, std::ostream& err) {
  auto cfg = train::read_run_config(resolve(a.config, root).empty() ? fs::path(a.config) : fs::path(a.config));
  if (!a.mode.empty()) cfg.mode = train::parse_mode(a.mode);
  if (uda) {
    // --mode sup gives the source-only baseline
    if (a.mode.empty()) cfg.mode = train::Mode::kUda;
    if (cfg.mode != train::Mode::kUda && cfg.mode != train::Mode::kSup)
      throw UsageError("train-uda takes --mode uda or sup");
  }
  if (a.camdrop) cfg.camdrop = *a.camdrop;
  if (a.bfd) cfg.bfd = *a.bfd;
  if (a.seed) cfg.seed = *a.seed;
  if (a.iterations) cfg.iterations = *a.iterations;
  for (auto [flag, field] : {std::pair{&a.train, &cfg.data.train}, std::pair{&a.split, &cfg.data.split},
                             std::pair{&a.val, &cfg.data.val}, std::pair{&a.source, &cfg.data.source},
                             std::pair{&a.target, &cfg.data.target}})
    if (!flag->empty()) *field = *flag;
  cfg.validate();

  LoadedData loaded;
  train::TrainData data;
  Json extra = Json::object();
  if (uda || cfg.mode == train::Mode::kUda) {
    if (cfg.data.source.empty() || cfg.data.target.empty()) throw UsageError("uda needs --source and --target");
    data.labeled = loaded.load(resolve(cfg.data.source, root));
    data.labeled_frames = all_frames(*data.labeled);
    const auto* target = loaded.load(resolve(cfg.data.target, root));
    if (cfg.mode == train::Mode::kUda) {
      data.unlabeled = target;
      data.unlabeled_frames = all_frames(*target);
    }
    extra["source"] = data.labeled->manifest.name;
    extra["target"] = target->manifest.name;
    extra["split_fraction"] = 1.0;
    const auto& pl = target->manifest.pseudo_labels;
    extra["pseudo_noise"] = pl ? Json(pl->noise_rate) : Json(nullptr);
  } else {
    if (cfg.data.train.empty()) throw UsageError("no training dataset (set data.train or --train)");
    const auto* ds = loaded.load(resolve(cfg.data.train, root));
    data.labeled = ds;
    if (cfg.data.split.empty()) {
      data.labeled_frames = all_frames(*ds);
      extra["split_fraction"] = 1.0;
    } else {
      const auto split = eval::read_split(resolve(cfg.data.split, root));
      data.labeled_frames = ds->indices_of_scenes(split.labeled);
      data.unlabeled = ds;
      data.unlabeled_frames = ds->indices_of_scenes(split.unlabeled);
      extra["split_fraction"] = split.fraction;
      if (data.labeled_frames.empty()) throw ConfigError("split selects no labeled frames of this dataset");
    }
    extra["dataset"] = ds->manifest.name;
    const auto& pl = ds->manifest.pseudo_labels;
    extra["pseudo_noise"] = pl ? Json(pl->noise_rate) : Json(nullptr);
  }
  if (!cfg.data.val.empty()) {
    data.val = loaded.load(resolve(cfg.data.val, root));
    data.val_frames = all_frames(*data.val);
    if (cfg.data.val_frames > 0 && static_cast<size_t>(cfg.data.val_frames) < data.val_frames.size())
      data.val_frames.resize(cfg.data.val_frames);
  }

  const fs::path run_dir = a.out.empty() ? fs::path("runs") / (train::to_string(cfg.mode) + "_seed" + std::to_string(cfg.seed))
                                         : fs::path(a.out);
  train::TrainOptions opts;
  opts.resume = a.resume;
  opts.force = a.force;
  opts.summary_extra = extra;
  if (!a.quiet) opts.log = [&](const std::string& m) { err << m << "\n"; };
  const auto r = train::train(cfg, data, run_dir, opts);
  out << (run_dir / "summary.json").string() << "\n";
  if (data.val) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "mIoU %.4f (%s)\n", r.primary_miou, r.teacher ? "teacher" : "student");
    out << buf;
  }
  return kOk;
}

// ---- eval -------------------------------------------------------------------

int eval_cmd(const std::string& ckpt_path, const std::string& data, const std::string& which,
             const std::string& out_path, double threshold, bool force, const fs::path& root, std::ostream& out) {
  if (which != "student" && which != "teacher") throw UsageError("--which must be student or teacher");
  if (!fs::exists(ckpt_path)) throw LoadError("checkpoint not found: '" + ckpt_path + "'");
  const auto ck = model::read_checkpoint(ckpt_path);
  if (!ck.has_prefix(which)) throw LoadError("checkpoint '" + ckpt_path + "' holds no " + which + " model");
  auto net = model::make_model(ck.config, 0);
  model::load_model(net, ck, which);
  const auto ds = synth::read_dataset(resolve(data, root));
  if (ds.samples.empty()) throw InvalidArgument("cannot evaluate on an empty dataset");
  auto report = eval::evaluate(net, ds, threshold);
  report.checkpoint_id = fs::path(ckpt_path).string() + ":" + which;
  const std::string text = Json(report).dump(2) + "\n";
  if (!out_path.empty()) {
    if (fs::exists(out_path) && !force) throw UsageError("'" + out_path + "' exists (use --force)");
    io::write_text(out_path, text);
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "mIoU %.4f over %lld frames\n", report.miou, static_cast<long long>(report.frames));
  out << buf;
  return kOk;
}

// ---- report -----------------------------------------------------------------

std::string csv_number(const Json& j) { return j.is_null() ? "" : j.dump(); }

int report_cmd(const std::vector<std::string>& runs, const std::string& out_path, bool force, std::ostream& out) {
  std::string csv =
      "run,mode,camdrop,bfd,split_fraction,pseudo_noise,seed,iterations,primary,miou,student_miou,teacher_miou";
  for (const char* n : synth::kBevClassNames) csv += std::string(",") + n;
  csv += "\n";
  for (const auto& r : runs) {
    const fs::path p = fs::path(r) / "summary.json";
    if (!fs::exists(p)) throw LoadError("no summary in run directory '" + r + "'");
    Json s;
    try {
      s = Json::parse(io::read_text(p));
    } catch (const Json::exception& e) {
      throw LoadError("bad summary '" + p.string() + "': " + e.what());
    }
    const std::string primary = s.value("primary", "student");
    const Json& prim = s.contains(primary) ? s[primary] : Json();
    csv += r + "," + s.value("mode", "") + "," + (s.value("camdrop", false) ? "1" : "0") + "," +
           (s.value("bfd", false) ? "1" : "0") + "," + csv_number(s.value("split_fraction", Json())) + "," +
           csv_number(s.value("pseudo_noise", Json())) + "," + csv_number(s.value("seed", Json())) + "," +
           csv_number(s.value("iterations", Json())) + "," + primary + "," + csv_number(s.value("miou", Json())) +
           "," + (s.contains("student") && !s["student"].is_null() ? csv_number(s["student"]["miou"]) : "") + "," +
           (s.contains("teacher") && !s["teacher"].is_null() ? csv_number(s["teacher"]["miou"]) : "");
    for (size_t k = 0; k < synth::kBevClassNames.size(); ++k)
      csv += "," + (prim.is_object() && k < prim["classes"].size() ? csv_number(prim["classes"][k]["iou"]) : "");
    csv += "\n";
  }
  if (out_path.empty()) {
    out << csv;
    return kOk;
  }
  if (fs::exists(out_path) && !force) throw UsageError("'" + out_path + "' exists (use --force)");
  io::write_text(out_path, csv);
  out << out_path << "\n";
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Perspective cue training for multi-camera BEV segmentation on synthetic scenes", "pct"};
  app.require_subcommand(1);
  std::string root_flag;
  app.add_option("--data-root", root_flag, "Base directory for relative data paths (default: $PCT_DATA_ROOT)");

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--scenes", gen.scenes, "Number of scenes")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--frames-per-scene", gen.frames, "Frames per scene")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--domain", gen.domain, "day, night, rain, city_a or city_b");
  gen_cmd->add_option("--seed", gen.seed, "Dataset seed");
  gen_cmd->add_option("--grid-preset", gen.grid_preset, "default or desk");
  gen_cmd->add_option("--first-scene-id", gen.first_scene, "Id of the first scene");
  gen_cmd->add_option("--name", gen.name, "Dataset name (default: directory name)");
  gen_cmd->add_flag("--force", gen.force, "Overwrite an existing dataset");

  std::string split_data, split_fraction, split_out;
  uint64_t split_seed = 0;
  bool split_force = false;
  auto* split_cmd = app.add_subcommand("make-splits", "Write a scene-level labeled/unlabeled split");
  split_cmd->add_option("--data", split_data, "Dataset directory")->required();
  split_cmd->add_option("--fraction", split_fraction, "Labeled fraction, e.g. 1/8 or 0.125")->required();
  split_cmd->add_option("--seed", split_seed, "Split seed");
  split_cmd->add_option("--out", split_out, "Manifest path (default: inside the dataset)");
  split_cmd->add_flag("--force", split_force, "Overwrite a different existing split");

  std::string pl_data;
  double pl_noise = 0;
  uint64_t pl_seed = 0;
  bool pl_force = false;
  auto* pl_cmd = app.add_subcommand("pseudo-label", "Generate noisy PV pseudo-labels for every frame");
  pl_cmd->add_option("--data", pl_data, "Dataset directory")->required();
  pl_cmd->add_option("--noise", pl_noise, "Base flip rate in [0, 1]")->required();
  pl_cmd->add_option("--seed", pl_seed, "Pseudo-label seed");
  pl_cmd->add_flag("--force", pl_force, "Replace pseudo-labels made with other settings");

  TrainArgs tr;
  auto add_train_opts = [&](CLI::App* c) {
    c->add_option("--config", tr.config, "Run config (JSON)")->required();
    c->add_option("--out", tr.out, "Run directory");
    c->add_option("--seed", tr.seed, "Override the seed");
    c->add_option("--iterations", tr.iterations, "Override the iteration count");
    c->add_option("--val", tr.val, "Validation dataset");
    c->add_flag("--resume", tr.resume, "Continue from the run directory's checkpoint");
    c->add_flag("--force", tr.force, "Replace an existing run");
    c->add_flag("--quiet", tr.quiet, "No progress output");
    c->add_flag("--camdrop,!--no-camdrop", tr.camdrop, "Enable or disable CamDrop");
  };
  auto* train_cmd_app = app.add_subcommand("train", "Train in sup, pct, mt or pct_mt mode");
  add_train_opts(train_cmd_app);
  train_cmd_app->add_option("--mode", tr.mode, "sup, pct, mt, pct_mt or uda");
  train_cmd_app->add_flag("--bfd,!--no-bfd", tr.bfd, "Enable or disable BEV feature dropout");
  train_cmd_app->add_option("--train", tr.train, "Training dataset");
  train_cmd_app->add_option("--split", tr.split, "Split manifest");
  auto* uda_cmd = app.add_subcommand("train-uda", "Train with a labeled source and an unlabeled target domain");
  add_train_opts(uda_cmd);
  uda_cmd->add_option("--source", tr.source, "Labeled source dataset");
  uda_cmd->add_option("--target", tr.target, "Unlabeled target dataset");
  uda_cmd->add_option("--mode", tr.mode, "uda, or sup for the source-only baseline");

  std::string ev_ckpt, ev_data, ev_which = "teacher", ev_out;
  double ev_threshold = 0.5;
  bool ev_force = false;
  auto* ev_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  ev_cmd->add_option("--ckpt", ev_ckpt, "Checkpoint file")->required();
  ev_cmd->add_option("--data", ev_data, "Dataset directory")->required();
  ev_cmd->add_option("--which", ev_which, "student or teacher (default teacher, falling back to student)");
  ev_cmd->add_option("--out", ev_out, "Report path (JSON)");
  ev_cmd->add_option("--threshold", ev_threshold, "Probability threshold");
  ev_cmd->add_flag("--force", ev_force, "Overwrite the report");

  std::vector<std::string> rep_runs;
  std::string rep_out;
  bool rep_force = false;
  auto* rep_cmd = app.add_subcommand("report", "Collate run summaries into one CSV table");
  rep_cmd->add_option("--runs", rep_runs, "Run directories")->required();
  rep_cmd->add_option("--out", rep_out, "CSV path (default: stdout)");
  rep_cmd->add_flag("--force", rep_force, "Overwrite the table");

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kUsage;
  }

  const fs::path root = data_root(root_flag);
  try {
    if (gen_cmd->parsed()) return gen_data(gen, root, out);
    if (split_cmd->parsed()) return make_splits(split_data, split_fraction, split_seed, split_out, split_force, root, out);
    if (pl_cmd->parsed()) return pseudo_label(pl_data, pl_noise, pl_seed, pl_force, root, out);
    if (train_cmd_app->parsed()) return train_cmd(tr, false, root, out, err);
    if (uda_cmd->parsed()) return train_cmd(tr, true, root, out, err);
    if (ev_cmd->parsed()) {
      if (ev_which == "teacher" && !ev_cmd->count("--which") && fs::exists(ev_ckpt) &&
          !model::read_checkpoint(ev_ckpt).has_prefix("teacher"))
        ev_which = "student";
      return eval_cmd(ev_ckpt, ev_data, ev_which, ev_out, ev_threshold, ev_force, root, out);
    }
    if (rep_cmd->parsed()) return report_cmd(rep_runs, rep_out, rep_force, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\nsee pct --help\n";
    return kUsage;
  } catch (const LoadError& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kUsage;
}

}  // namespace pct::cli
