#pragma once

// IoU metrics with dataset-level accumulation, scene-level SSL splits and
// evaluation of a model over a dataset.

#include <torch/torch.h>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pct/dataset.hpp"
#include "pct/model.hpp"
#include "pct/serialization.hpp"

namespace pct::eval {

inline constexpr int kReportFormatVersion = 1;
inline constexpr int kSplitFormatVersion = 1;

struct ClassCounts {
  int64_t intersection = 0;
  int64_t union_ = 0;
  int64_t ignored = 0;
  bool operator==(const ClassCounts&) const = default;
};

struct MetricsReport {
  std::vector<std::string> class_names;
  std::vector<ClassCounts> counts;
  std::vector<std::optional<double>> iou;  // nullopt when the union is empty
  double miou = 0;                         // NaN when no class is defined
  std::vector<std::string> notes;
  std::string dataset_id;
  std::string checkpoint_id;
  int64_t frames = 0;
  double threshold = 0.5;
};

/// Integer counts, so the order in which batches are added does not matter.
class IouAccumulator {
 public:
  explicit IouAccumulator(int num_classes, double threshold = 0.5);

  /// probs/target [B, C, h, w]; ignore [B, 1, h, w] bool or undefined.
  void add(const torch::Tensor& probs, const torch::Tensor& target, const torch::Tensor& ignore);
  MetricsReport report() const;

 private:
  double threshold_;
  std::vector<ClassCounts> counts_;
  int64_t frames_ = 0;
};

MetricsReport compute_iou(const torch::Tensor& probs, const torch::Tensor& target, const torch::Tensor& ignore,
                          double threshold = 0.5);

struct SplitManifest {
  int format_version = kSplitFormatVersion;
  double fraction = 1.0;
  uint64_t seed = 0;
  std::string dataset;
  std::vector<int> labeled;
  std::vector<int> unlabeled;
};

/// Draws ceil(fraction * n) labeled scenes uniformly without replacement.
/// Splits of different fractions are drawn independently (not nested).
SplitManifest make_splits(const std::vector<int>& scene_ids, double fraction, uint64_t seed);

void to_json(Json& j, const SplitManifest& v);
void from_json(const Json& j, SplitManifest& v);
void to_json(Json& j, const MetricsReport& v);
void from_json(const Json& j, MetricsReport& v);

void write_split(const std::filesystem::path& path, const SplitManifest& split);
SplitManifest read_split(const std::filesystem::path& path);

/// Inference without augmentation or CamDrop. Throws InvalidArgument on an
/// empty frame list.
MetricsReport evaluate(model::BevSegModel& model, const synth::Dataset& dataset,
                       const std::vector<size_t>& frames, double threshold = 0.5, int batch_size = 8);
MetricsReport evaluate(model::BevSegModel& model, const synth::Dataset& dataset, double threshold = 0.5);

}  // namespace pct::eval
