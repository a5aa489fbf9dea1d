#pragma once

// Training modes (supervised, PCT, mean teacher, PCT + mean teacher, UDA),
// EMA, BEV feature dropout and the optimization loop.
//
// Every random decision is a pure function of (run seed, iteration, stream,
// batch slot, purpose), so an iteration is reproducible in isolation and a
// resumed run replays the uninterrupted one.

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "pct/dataset.hpp"
#include "pct/checkpoint.hpp"
#include "pct/eval.hpp"
#include "pct/run_config.hpp"

namespace pct::train {

/// teacher <- alpha * teacher + (1 - alpha) * student, for every parameter.
void ema_update(model::BevSegModel& teacher, model::BevSegModel& student, double alpha);

/// Inverted dropout on the feature channels of f [B, D, h, w] (or on single
/// elements when `channelwise` is false); deterministic in seed.
torch::Tensor bfd(const torch::Tensor& f, double p, uint64_t seed, bool channelwise = true);

struct TrainData {
  const synth::Dataset* labeled = nullptr;
  std::vector<size_t> labeled_frames;
  const synth::Dataset* unlabeled = nullptr;
  std::vector<size_t> unlabeled_frames;
  const synth::Dataset* val = nullptr;
  std::vector<size_t> val_frames;
};

struct TrainState {
  model::BevSegModel student{nullptr};
  model::BevSegModel teacher{nullptr};  // null outside mean-teacher modes
  std::unique_ptr<torch::optim::AdamW> optimizer;
  int64_t iteration = 0;
};

TrainState init_state(const RunConfig& config);

/// One optimizer step of the configured mode. Advances state.iteration.
loss::LossBundle step(TrainState& state, const RunConfig& config, const TrainData& data);

// Mode-checked entry points; each throws ConfigError on a mode mismatch.
loss::LossBundle supervised_step(TrainState& state, const RunConfig& config, const TrainData& data);
loss::LossBundle pct_step(TrainState& state, const RunConfig& config, const TrainData& data);
loss::LossBundle mt_step(TrainState& state, const RunConfig& config, const TrainData& data);
loss::LossBundle pct_mt_step(TrainState& state, const RunConfig& config, const TrainData& data);
loss::LossBundle uda_step(TrainState& state, const RunConfig& config, const TrainData& data);

/// The augmented labeled batch that step() would train on at `iteration`.
std::vector<synth::Sample> draw_labeled_batch(const RunConfig& config, const TrainData& data, int64_t iteration);

/// Throws ConfigError when the datasets cannot serve the config.
void check_compatible(const RunConfig& config, const TrainData& data);

model::Checkpoint make_checkpoint(TrainState& state, const RunConfig& config);
TrainState restore_state(const model::Checkpoint& ckpt, const RunConfig& config);

struct TrainOptions {
  bool resume = false;  // continue from <run_dir>/checkpoint.ckpt if present
  bool force = false;   // allow reusing a run directory that holds a finished run
  int64_t stop_after = -1;  // stop (with a checkpoint) once this iteration count is reached
  std::function<void(const std::string&)> log;
  Json summary_extra = Json::object();  // merged into summary.json (split fraction, pseudo-label noise, ...)
};

struct TrainResult {
  eval::MetricsReport student;
  std::optional<eval::MetricsReport> teacher;
  double primary_miou = 0;
  int64_t iterations = 0;
  bool finished = false;
};

/// Runs the loop and writes into run_dir: config.json, metrics.csv,
/// eval.csv, checkpoint.ckpt (latest), final.ckpt and summary.json.
TrainResult train(const RunConfig& config, const TrainData& data, const std::filesystem::path& run_dir,
                  const TrainOptions& options = {});

}  // namespace pct::train
