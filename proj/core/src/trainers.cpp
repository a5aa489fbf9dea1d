#include "pct/trainers.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "pct/checkpoint.hpp"
#include "pct/io.hpp"

namespace pct::train {

namespace fs = std::filesystem;

namespace {

enum Stream : uint64_t { kLabeledStream = 1, kUnlabeledStream = 2 };
enum Purpose : uint64_t { kPick = 1, kGeom = 2, kPhoto = 3, kBfdMask = 4, kInit = 5 };

struct StreamBatch {
  std::vector<synth::Sample> samples;
  std::vector<geom::DroppedSet> dropped;

  std::vector<const synth::Sample*> ptrs() const {
    std::vector<const synth::Sample*> out;
    for (const auto& s : samples) out.push_back(&s);
    return out;
  }
  std::vector<bool> pv_dropped() const {
    std::vector<bool> out;
    for (size_t b = 0; b < samples.size(); ++b)
      for (int v = 0; v < samples[b].rig.size(); ++v) out.push_back(dropped[b].count(v) > 0);
    return out;
  }
};

aug::CamDropConfig camdrop_or_off(const RunConfig& c) {
  return c.camdrop ? c.camdrop_config : aug::CamDropConfig{0, 0.0};
}

const synth::Sample& pick(const synth::Dataset& ds, const std::vector<size_t>& frames, uint64_t seed, int64_t iter,
                          Stream stream, int slot) {
  Rng rng(hash_seed(seed, iter, stream, slot, kPick));
  return ds.samples.at(frames.at(rng.below(frames.size())));
}

// Geometric then photometric augmentation, then CamDrop.
StreamBatch labeled_stream(const RunConfig& c, const TrainData& data, int64_t iter) {
  StreamBatch out;
  const auto& grid = c.model.grid;
  for (int b = 0; b < c.labeled_batch; ++b) {
    const auto& s = pick(*data.labeled, data.labeled_frames, c.seed, iter, kLabeledStream, b);
    auto g = aug::sample_weak(hash_seed(c.seed, iter, kLabeledStream, b, kGeom), c.augment, s.rig.size(),
                              c.model.image_width, c.model.image_height);
    auto [geom, photo] =
        aug::sample_strong(hash_seed(c.seed, iter, kLabeledStream, b, kPhoto), g, camdrop_or_off(c), c.augment,
                           s.rig.size());
    auto a = aug::apply_geometric(s, geom, grid);
    aug::apply_photometric(a.images, photo);
    if (!photo.camdrop.empty()) a = aug::camdrop(a, photo.camdrop, grid).sample;
    out.samples.push_back(std::move(a));
    out.dropped.push_back(photo.camdrop);
  }
  return out;
}

// Weak (geometric only) view of the unlabeled batch and, when requested, the
// strong view sharing its geometry.
std::pair<StreamBatch, StreamBatch> unlabeled_streams(const RunConfig& c, const TrainData& data, int64_t iter,
                                                      bool want_strong) {
  StreamBatch weak, strong;
  const auto& grid = c.model.grid;
  for (int b = 0; b < c.unlabeled_batch; ++b) {
    const auto& s = pick(*data.unlabeled, data.unlabeled_frames, c.seed, iter, kUnlabeledStream, b);
    auto g = aug::sample_weak(hash_seed(c.seed, iter, kUnlabeledStream, b, kGeom), c.augment, s.rig.size(),
                              c.model.image_width, c.model.image_height);
    auto w = aug::apply_geometric(s, g, grid);
    if (want_strong) {
      auto [geom, photo] = aug::sample_strong(hash_seed(c.seed, iter, kUnlabeledStream, b, kPhoto), g,
                                              camdrop_or_off(c), c.augment, s.rig.size());
      auto st = w;
      aug::apply_photometric(st.images, photo);
      if (!photo.camdrop.empty()) st = aug::camdrop(st, photo.camdrop, grid).sample;
      strong.samples.push_back(std::move(st));
      strong.dropped.push_back(photo.camdrop);
    }
    weak.samples.push_back(std::move(w));
    weak.dropped.emplace_back();
  }
  return {std::move(weak), std::move(strong)};
}

double checked(const torch::Tensor& t, const char* name, int64_t iter) {
  const double v = t.item<double>();
  if (!std::isfinite(v))
    throw TrainingError(std::string("non-finite ") + name + " at iteration " + std::to_string(iter));
  return v;
}

std::string serialize_optimizer(torch::optim::AdamW& opt) {
  torch::serialize::OutputArchive archive;
  opt.save(archive);
  std::ostringstream ss;
  archive.save_to(ss);
  return ss.str();
}

std::unique_ptr<torch::optim::AdamW> make_optimizer(model::BevSegModel& student, const OptimizerConfig& o) {
  auto opts = torch::optim::AdamWOptions(o.lr)
                  .betas({o.beta1, o.beta2})
                  .eps(o.eps)
                  .weight_decay(o.weight_decay);
  return std::make_unique<torch::optim::AdamW>(student->parameters(), opts);
}

}  // namespace

void ema_update(model::BevSegModel& teacher, model::BevSegModel& student, double alpha) {
  torch::NoGradGuard guard;
  auto tp = teacher->named_parameters();
  auto sp = student->named_parameters();
  if (tp.size() != sp.size()) throw ShapeError("ema: parameter sets differ");
  for (auto& t : tp) {
    const auto* s = sp.find(t.key());
    if (!s || s->sizes() != t.value().sizes()) throw ShapeError("ema: parameter '" + t.key() + "' differs");
    t.value().mul_(alpha).add_(*s, 1.0 - alpha);
  }
}

torch::Tensor bfd(const torch::Tensor& f, double p, uint64_t seed, bool channelwise) {
  if (!(p >= 0 && p < 1)) throw InvalidArgument("bfd: p must be in [0, 1)");
  if (p == 0) return f;
  const int64_t b = f.size(0), d = f.size(1);
  const int64_t per = channelwise ? 1 : f.size(2) * f.size(3);
  auto mask = torch::empty({b * d * per}, torch::kFloat64);
  auto acc = mask.accessor<double, 1>();
  Rng rng(seed);
  const double scale = 1.0 / (1.0 - p);
  for (int64_t i = 0; i < mask.numel(); ++i) acc[i] = rng.bernoulli(p) ? 0.0 : scale;
  mask = channelwise ? mask.view({b, d, 1, 1}) : mask.view(f.sizes());
  return f * mask.to(f.dtype());
}

TrainState init_state(const RunConfig& config) {
  config.validate();
  TrainState s;
  s.student = model::make_model(config.model, hash_seed(config.seed, kInit));
  if (uses_teacher(config.mode)) s.teacher = model::clone_model(s.student);
  s.optimizer = make_optimizer(s.student, config.optimizer);
  return s;
}

std::vector<synth::Sample> draw_labeled_batch(const RunConfig& config, const TrainData& data, int64_t iteration) {
  return labeled_stream(config, data, iteration).samples;
}

void check_compatible(const RunConfig& c, const TrainData& d) {
  auto check_ds = [&](const synth::Dataset* ds, const char* what) {
    if (!ds) return;
    if (ds->manifest.grid != c.model.grid)
      throw ConfigError(std::string(what) + " dataset grid does not match the model config");
    if (ds->manifest.image_height != c.model.image_height || ds->manifest.image_width != c.model.image_width)
      throw ConfigError(std::string(what) + " dataset image size does not match the model config");
  };
  if (!d.labeled || d.labeled_frames.empty()) throw ConfigError("no labeled frames to train on");
  check_ds(d.labeled, "labeled");
  check_ds(d.unlabeled, "unlabeled");
  check_ds(d.val, "validation");
  const bool needs_unlabeled = uses_teacher(c.mode) || c.mode == Mode::kUda;
  if (needs_unlabeled && c.unlabeled_batch > 0 && (!d.unlabeled || d.unlabeled_frames.empty()))
    throw ConfigError("mode " + to_string(c.mode) + " needs unlabeled (target) frames");
  if (uses_pv(c.mode)) {
    auto has_pseudo = [](const synth::Dataset* ds, const std::vector<size_t>& frames) {
      for (size_t f : frames)
        if (ds->samples.at(f).pv_pseudo.empty()) return false;
      return true;
    };
    if (!has_pseudo(d.labeled, d.labeled_frames) ||
        (d.unlabeled && c.unlabeled_batch > 0 && !has_pseudo(d.unlabeled, d.unlabeled_frames)))
      throw ConfigError("mode " + to_string(c.mode) + " needs pseudo-labels; run pseudo-label first");
  }
}

loss::LossBundle step(TrainState& state, const RunConfig& c, const TrainData& data) {
  const int64_t iter = state.iteration;
  const bool teacher = uses_teacher(c.mode);
  const bool pv = uses_pv(c.mode);
  const bool has_unlabeled = data.unlabeled && !data.unlabeled_frames.empty() && c.unlabeled_batch > 0;
  auto& student = state.student;
  const auto& mc = c.model;
  student->train();

  auto lab = labeled_stream(c, data, iter);
  auto lab_ptrs = lab.ptrs();
  auto out_l = student->forward(model::make_view_batch(lab_ptrs, lab.dropped, mc), {.bev = true, .pv = pv});
  auto targets = loss::bev_targets(lab_ptrs, mc.dtype());
  auto l_bev = loss::focal_loss(out_l.bev_logits, targets.target, targets.ignore, c.loss.focal_gamma).value;

  auto zero = torch::zeros({}, torch::TensorOptions().dtype(mc.dtype()));
  torch::Tensor l_pv = zero, l_strong = zero, l_bfd = zero;
  std::vector<loss::PvTerm> pv_terms;
  if (pv) pv_terms.push_back({out_l.pv_logits, loss::pv_targets(lab_ptrs), lab.pv_dropped()});

  if (has_unlabeled && (pv || teacher)) {
    auto [weak, strong] = unlabeled_streams(c, data, iter, teacher);
    auto weak_ptrs = weak.ptrs();
    auto weak_batch = model::make_view_batch(weak_ptrs, weak.dropped, mc);
    model::ForwardOptions wopts{.bev = teacher && c.bfd, .pv = pv};
    if (wopts.bev) {
      const uint64_t bseed = hash_seed(c.seed, iter, kUnlabeledStream, 0, kBfdMask);
      wopts.bev_feature_hook = [&, bseed](const torch::Tensor& f) {
        return bfd(f, c.bfd_config.p, bseed, c.bfd_config.channelwise);
      };
    }
    model::ForwardOutput out_w;
    if (wopts.bev || wopts.pv) out_w = student->forward(weak_batch, wopts);
    if (pv) pv_terms.push_back({out_w.pv_logits, loss::pv_targets(weak_ptrs), weak.pv_dropped()});

    if (teacher) {
      torch::Tensor p_teacher;
      {
        torch::NoGradGuard guard;
        state.teacher->eval();
        p_teacher = torch::sigmoid(state.teacher->forward(weak_batch, {.bev = true, .pv = false}).bev_logits);
      }
      auto strong_ptrs = strong.ptrs();
      auto out_s = student->forward(model::make_view_batch(strong_ptrs, strong.dropped, mc), {.bev = true, .pv = false});
      l_strong = loss::mse_consistency(torch::sigmoid(out_s.bev_logits), p_teacher);
      if (c.bfd) l_bfd = loss::mse_consistency(torch::sigmoid(out_w.bev_logits), p_teacher);
    }
  }
  if (pv) l_pv = loss::pv_loss(pv_terms).value;

  loss::LossBundle bundle;
  torch::Tensor total;
  if (teacher) {
    bundle.rampup_w = loss::sigmoid_rampup(iter, c.loss.rampup_iters);
    total = loss::combine_ssl(l_bev, l_pv, l_strong, l_bfd, c.loss, bundle.rampup_w);
    bundle.w_strong = bundle.rampup_w * c.loss.lambda_strong;
    bundle.w_bfd = bundle.rampup_w * c.loss.lambda_bfd;
  } else {
    total = pv ? loss::combine_pct(l_bev, l_pv, c.loss) : l_bev;
  }
  bundle.w_pv = pv ? c.loss.lambda_pv : 0.0;
  bundle.l_bev = checked(l_bev, "l_bev", iter);
  bundle.l_pv = checked(l_pv, "l_pv", iter);
  bundle.l_strong = checked(l_strong, "l_strong", iter);
  bundle.l_bfd = checked(l_bfd, "l_bfd", iter);
  bundle.total = checked(total, "total loss", iter);

  state.optimizer->zero_grad();
  total.backward();
  // Every parameter takes an optimizer step, including those outside this
  // mode's graph, so weight decay acts identically in every mode.
  for (auto& p : student->parameters())
    if (!p.grad().defined()) p.mutable_grad() = torch::zeros_like(p);
  const double lr = one_cycle_lr(iter, c.iterations, c.optimizer);
  for (auto& group : state.optimizer->param_groups())
    static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);
  state.optimizer->step();

  if (teacher && (iter + 1) % c.ema.update_every == 0) ema_update(state.teacher, student, c.ema.alpha);
  state.iteration = iter + 1;
  return bundle;
}

namespace {

loss::LossBundle checked_step(Mode want, TrainState& state, const RunConfig& config, const TrainData& data) {
  if (config.mode != want)
    throw ConfigError(to_string(want) + " step called with mode " + to_string(config.mode));
  return step(state, config, data);
}

}  // namespace

loss::LossBundle supervised_step(TrainState& s, const RunConfig& c, const TrainData& d) {
  return checked_step(Mode::kSup, s, c, d);
}
loss::LossBundle pct_step(TrainState& s, const RunConfig& c, const TrainData& d) {
  return checked_step(Mode::kPct, s, c, d);
}
loss::LossBundle mt_step(TrainState& s, const RunConfig& c, const TrainData& d) {
  return checked_step(Mode::kMt, s, c, d);
}
loss::LossBundle pct_mt_step(TrainState& s, const RunConfig& c, const TrainData& d) {
  return checked_step(Mode::kPctMt, s, c, d);
}
loss::LossBundle uda_step(TrainState& s, const RunConfig& c, const TrainData& d) {
  return checked_step(Mode::kUda, s, c, d);
}

model::Checkpoint make_checkpoint(TrainState& state, const RunConfig& config) {
  model::Checkpoint ck;
  ck.config = config.model;
  ck.meta = {{"iteration", state.iteration}, {"mode", to_string(config.mode)}, {"seed", config.seed},
             {"run_config", config}};
  model::store_model(ck, state.student, "student");
  if (state.teacher) model::store_model(ck, state.teacher, "teacher");
  ck.optimizer_state = serialize_optimizer(*state.optimizer);
  return ck;
}

TrainState restore_state(const model::Checkpoint& ck, const RunConfig& config) {
  if (!(ck.config == config.model)) throw ConfigError("checkpoint model config differs from the run config");
  TrainState s = init_state(config);
  model::load_model(s.student, ck, "student");
  if (s.teacher) model::load_model(s.teacher, ck, "teacher");
  if (!ck.optimizer_state.empty()) {
    torch::serialize::InputArchive archive;
    std::istringstream ss(ck.optimizer_state);
    archive.load_from(ss);
    s.optimizer->load(archive);
  }
  s.iteration = ck.meta.at("iteration").get<int64_t>();
  return s;
}

namespace {

class RunLock {
 public:
  explicit RunLock(const fs::path& dir) : path_(dir / ".lock") {
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0)
      throw Error("run directory '" + dir.string() + "' is in use (remove " + path_.string() +
                  " if no run is active)");
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd_, pid.data(), pid.size());
  }
  ~RunLock() {
    ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

constexpr const char* kMetricsHeader = "iter,l_bev,l_pv,l_strong,l_bfd,rampup_w,total,lr\n";

std::string metrics_row(int64_t iter, const loss::LossBundle& b, double lr) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.6g\n", static_cast<long long>(iter), b.l_bev,
                b.l_pv, b.l_strong, b.l_bfd, b.rampup_w, b.total, lr);
  return buf;
}

// Keeps the header and rows for iterations below `keep`.
void truncate_csv(const fs::path& path, int64_t keep) {
  if (!fs::exists(path)) return;
  std::istringstream in(io::read_text(path));
  std::string line, out;
  bool header = true;
  while (std::getline(in, line)) {
    if (header || std::stoll(line.substr(0, line.find(','))) < keep) out += line + "\n";
    header = false;
  }
  io::write_text(path, out);
}

std::string eval_row(int64_t iter, const char* which, const eval::MetricsReport& r) {
  std::string row = std::to_string(iter) + "," + which;
  char buf[64];
  std::snprintf(buf, sizeof(buf), ",%.6f", r.miou);
  row += buf;
  for (const auto& iou : r.iou) {
    std::snprintf(buf, sizeof(buf), ",%.6f", iou ? *iou : std::nan(""));
    row += buf;
  }
  return row + "\n";
}

// Loss columns of the last metrics row, or null before the first iteration.
Json last_losses(const fs::path& path) {
  std::istringstream in(io::read_text(path));
  std::string line, last;
  std::getline(in, line);
  while (std::getline(in, line))
    if (!line.empty()) last = line;
  if (last.empty()) return nullptr;
  std::vector<double> v;
  std::istringstream row(last);
  for (std::string cell; std::getline(row, cell, ',');) v.push_back(std::stod(cell));
  return {{"l_bev", v.at(1)}, {"l_pv", v.at(2)}, {"l_strong", v.at(3)}, {"l_bfd", v.at(4)}, {"total", v.at(6)}};
}

}  // namespace

TrainResult train(const RunConfig& config, const TrainData& data, const fs::path& run_dir, const TrainOptions& opt) {
  config.validate();
  check_compatible(config, data);
  auto log = [&](const std::string& m) {
    if (opt.log) opt.log(m);
  };
  fs::create_directories(run_dir);
  RunLock lock(run_dir);

  const fs::path ckpt_path = run_dir / "checkpoint.ckpt";
  const fs::path metrics_path = run_dir / "metrics.csv";
  const fs::path eval_path = run_dir / "eval.csv";
  const bool can_resume = opt.resume && fs::exists(ckpt_path);
  if (!can_resume) {
    const bool occupied = fs::exists(ckpt_path) || fs::exists(run_dir / "summary.json") || fs::exists(metrics_path);
    if (occupied && !opt.force)
      throw Error("run directory '" + run_dir.string() + "' already holds a run (use --resume or --force)");
    for (const char* f : {"checkpoint.ckpt", "final.ckpt", "summary.json", "metrics.csv", "eval.csv"})
      fs::remove(run_dir / f);
  }
  io::write_text(run_dir / "config.json", Json(config).dump(2) + "\n");

  torch::set_num_threads(1);
  TrainState state = can_resume ? restore_state(model::read_checkpoint(ckpt_path), config) : init_state(config);
  if (can_resume) {
    log("resuming at iteration " + std::to_string(state.iteration));
    truncate_csv(metrics_path, state.iteration);
    truncate_csv(eval_path, state.iteration + 1);
  }
  if (!fs::exists(metrics_path)) io::write_text(metrics_path, kMetricsHeader);
  if (!fs::exists(eval_path)) {
    std::string header = "iter,model,miou";
    for (const char* n : synth::kBevClassNames) header += std::string(",") + n;
    io::write_text(eval_path, header + "\n");
  }
  std::ofstream metrics(metrics_path, std::ios::app);
  std::ofstream evals(eval_path, std::ios::app);

  auto evaluate_all = [&](int64_t iter) {
    TrainResult r;
    if (!data.val || data.val_frames.empty()) return r;
    r.student = eval::evaluate(state.student, *data.val, data.val_frames, config.eval_threshold);
    evals << eval_row(iter, "student", r.student);
    if (state.teacher) {
      r.teacher = eval::evaluate(state.teacher, *data.val, data.val_frames, config.eval_threshold);
      evals << eval_row(iter, "teacher", *r.teacher);
    }
    evals.flush();
    r.primary_miou = r.teacher ? r.teacher->miou : r.student.miou;
    return r;
  };
  auto save = [&] {
    model::write_checkpoint(ckpt_path, make_checkpoint(state, config));
  };

  const auto start = std::chrono::steady_clock::now();
  while (state.iteration < config.iterations) {
    if (opt.stop_after >= 0 && state.iteration >= opt.stop_after) {
      save();
      TrainResult partial;
      partial.iterations = state.iteration;
      return partial;
    }
    const int64_t iter = state.iteration;
    const double lr = one_cycle_lr(iter, config.iterations, config.optimizer);
    const auto bundle = step(state, config, data);
    metrics << metrics_row(iter, bundle, lr);
    metrics.flush();
    if ((iter + 1) % 100 == 0 || iter == 0) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      char buf[160];
      std::snprintf(buf, sizeof(buf), "iter %lld/%lld total %.4f l_bev %.4f (%.0fs)", static_cast<long long>(iter + 1),
                    static_cast<long long>(config.iterations), bundle.total, bundle.l_bev, secs);
      log(buf);
    }
    if (config.eval_every > 0 && state.iteration % config.eval_every == 0 && state.iteration < config.iterations) {
      auto r = evaluate_all(state.iteration);
      if (data.val) log("eval at " + std::to_string(state.iteration) + ": mIoU " + std::to_string(r.primary_miou));
    }
    if (config.checkpoint_every > 0 && state.iteration % config.checkpoint_every == 0) save();
  }

  save();
  model::write_checkpoint(run_dir / "final.ckpt", make_checkpoint(state, config));
  TrainResult result = evaluate_all(state.iteration);
  result.iterations = state.iteration;
  result.finished = true;

  Json summary = {{"format_version", 1},
                  {"mode", to_string(config.mode)},
                  {"camdrop", config.camdrop},
                  {"bfd", config.bfd},
                  {"seed", config.seed},
                  {"iterations", state.iteration},
                  {"primary", state.teacher ? "teacher" : "student"}};
  metrics.close();
  summary["final_losses"] = last_losses(metrics_path);
  for (auto& [k, v] : opt.summary_extra.items()) summary[k] = v;
  if (data.val && !data.val_frames.empty()) {
    summary["student"] = result.student;
    summary["teacher"] = result.teacher ? Json(*result.teacher) : Json(nullptr);
    summary["miou"] = result.primary_miou;
  }
  io::write_text(run_dir / "summary.json", summary.dump(2) + "\n");
  return result;
}

}  // namespace pct::train
