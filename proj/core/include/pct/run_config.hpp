#pragma once

// Run configuration: training mode, perturbation flags, loss weights,
// optimizer, augmentation, model and data locations. Serialized as JSON with
// a schema_version; unknown keys are rejected at every level.

#include <cstdint>
#include <string>

#include "pct/augment.hpp"
#include "pct/losses.hpp"
#include "pct/model.hpp"
#include "pct/serialization.hpp"

namespace pct::train {

inline constexpr int kRunConfigSchema = 1;

enum class Mode { kSup, kPct, kMt, kPctMt, kUda };

Mode parse_mode(const std::string& s);  // throws ConfigError
std::string to_string(Mode m);
bool uses_teacher(Mode m);
bool uses_pv(Mode m);

struct EmaConfig {
  double alpha = 0.999;
  int update_every = 1;
  void validate() const;
};

struct BfdConfig {
  double p = 0.5;
  bool channelwise = true;  // false: element-wise dropout
};

/// AdamW with a one-cycle schedule (cosine annealing, two phases).
struct OptimizerConfig {
  double lr = 0.004;  // peak learning rate
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double pct_start = 0.3;
  double div_factor = 25.0;
  double final_div_factor = 1e4;
  void validate() const;
};

/// Dataset locations; relative paths resolve against the data root.
struct DataPaths {
  std::string train;       // SSL: dataset holding labeled and unlabeled scenes
  std::string split;       // SSL: split manifest
  std::string val;         // validation dataset
  std::string source;      // UDA: labeled source dataset
  std::string target;      // UDA: unlabeled target dataset
  int val_frames = 0;      // evaluate on the first n frames only (0 = all)
};

struct RunConfig {
  Mode mode = Mode::kSup;
  bool camdrop = false;
  bool bfd = false;
  uint64_t seed = 0;
  int64_t iterations = 2000;
  int labeled_batch = 8;
  int unlabeled_batch = 8;
  int64_t eval_every = 500;  // 0: final evaluation only
  int64_t checkpoint_every = 500;
  double eval_threshold = 0.5;
  loss::LossWeights loss;
  EmaConfig ema;
  aug::CamDropConfig camdrop_config;
  BfdConfig bfd_config;
  OptimizerConfig optimizer;
  aug::AugmentRecipe augment;
  model::ModelConfig model;
  DataPaths data;

  /// Throws ConfigError on inconsistent settings (e.g. bfd without a teacher).
  void validate() const;
};

/// Learning rate of the one-cycle schedule at `iter` of `total`.
double one_cycle_lr(int64_t iter, int64_t total, const OptimizerConfig& cfg);

void to_json(Json& j, const RunConfig& v);
void from_json(const Json& j, RunConfig& v);

RunConfig read_run_config(const std::filesystem::path& path);

}  // namespace pct::train

namespace pct::aug {
void to_json(Json& j, const AugmentRecipe& v);
void from_json(const Json& j, AugmentRecipe& v);
void to_json(Json& j, const CamDropConfig& v);
void from_json(const Json& j, CamDropConfig& v);
}  // namespace pct::aug

namespace pct::loss {
void to_json(Json& j, const LossWeights& v);
void from_json(const Json& j, LossWeights& v);
}  // namespace pct::loss
