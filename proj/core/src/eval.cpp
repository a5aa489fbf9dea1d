#include "pct/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pct/io.hpp"
#include "pct/losses.hpp"

namespace pct::eval {

IouAccumulator::IouAccumulator(int num_classes, double threshold)
    : threshold_(threshold), counts_(num_classes) {}

void IouAccumulator::add(const torch::Tensor& probs, const torch::Tensor& target, const torch::Tensor& ignore) {
  if (probs.sizes() != target.sizes()) throw ShapeError("iou: prediction and target shapes differ");
  if (probs.size(1) != static_cast<int64_t>(counts_.size())) throw ShapeError("iou: class count differs");
  auto pred = probs >= threshold_;
  auto gt = target > 0.5;
  auto keep = ignore.defined() ? ignore.logical_not().expand_as(pred) : torch::ones_like(pred);
  auto inter = (pred & gt & keep).sum({0, 2, 3});
  auto uni = ((pred | gt) & keep).sum({0, 2, 3});
  auto ign = keep.logical_not().sum({0, 2, 3});
  for (size_t k = 0; k < counts_.size(); ++k) {
    counts_[k].intersection += inter[k].item<int64_t>();
    counts_[k].union_ += uni[k].item<int64_t>();
    counts_[k].ignored += ign[k].item<int64_t>();
  }
  frames_ += probs.size(0);
}

MetricsReport IouAccumulator::report() const {
  MetricsReport r;
  r.counts = counts_;
  r.frames = frames_;
  r.threshold = threshold_;
  double sum = 0;
  int defined = 0;
  for (size_t k = 0; k < counts_.size(); ++k) {
    r.class_names.push_back(k < synth::kBevClassNames.size() ? synth::kBevClassNames[k] : "class" + std::to_string(k));
    if (counts_[k].union_ == 0) {
      r.iou.push_back(std::nullopt);
      r.notes.push_back("class '" + r.class_names.back() + "' has an empty union and is excluded from mIoU");
      continue;
    }
    const double iou = static_cast<double>(counts_[k].intersection) / static_cast<double>(counts_[k].union_);
    r.iou.push_back(iou);
    sum += iou;
    ++defined;
  }
  r.miou = defined ? sum / defined : std::nan("");
  return r;
}

MetricsReport compute_iou(const torch::Tensor& probs, const torch::Tensor& target, const torch::Tensor& ignore,
                          double threshold) {
  IouAccumulator acc(static_cast<int>(probs.size(1)), threshold);
  acc.add(probs, target, ignore);
  return acc.report();
}

SplitManifest make_splits(const std::vector<int>& scene_ids, double fraction, uint64_t seed) {
  if (!(fraction > 0 && fraction <= 1)) throw InvalidArgument("split fraction must be in (0, 1]");
  const size_t n = scene_ids.size();
  const double denominator = 1.0 / fraction;
  if (static_cast<double>(n) + 1e-9 < denominator)
    throw InvalidArgument("split needs at least " + std::to_string(static_cast<int>(std::ceil(denominator - 1e-9))) +
                          " scenes, dataset has " + std::to_string(n));
  auto ids = scene_ids;
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw InvalidArgument("duplicate scene ids");
  const size_t k = static_cast<size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
  Rng rng(hash_seed(seed, 0x5b1175u));
  for (size_t i = 0; i < k; ++i) std::swap(ids[i], ids[i + rng.below(n - i)]);
  SplitManifest s;
  s.fraction = fraction;
  s.seed = seed;
  s.labeled.assign(ids.begin(), ids.begin() + k);
  s.unlabeled.assign(ids.begin() + k, ids.end());
  std::sort(s.labeled.begin(), s.labeled.end());
  std::sort(s.unlabeled.begin(), s.unlabeled.end());
  return s;
}

void to_json(Json& j, const SplitManifest& v) {
  j = Json{{"format_version", v.format_version}, {"fraction", v.fraction}, {"seed", v.seed},
           {"dataset", v.dataset},               {"labeled", v.labeled},   {"unlabeled", v.unlabeled}};
}

void from_json(const Json& j, SplitManifest& v) {
  reject_unknown_keys(j, {"format_version", "fraction", "seed", "dataset", "labeled", "unlabeled"}, "split");
  j.at("format_version").get_to(v.format_version);
  if (v.format_version != kSplitFormatVersion)
    throw LoadError("unsupported split format_version " + std::to_string(v.format_version));
  j.at("fraction").get_to(v.fraction);
  j.at("seed").get_to(v.seed);
  v.dataset = j.value("dataset", "");
  j.at("labeled").get_to(v.labeled);
  j.at("unlabeled").get_to(v.unlabeled);
}

void to_json(Json& j, const MetricsReport& v) {
  Json classes = Json::array();
  for (size_t k = 0; k < v.counts.size(); ++k) {
    classes.push_back({{"name", v.class_names[k]},
                       {"iou", v.iou[k] ? Json(*v.iou[k]) : Json(nullptr)},
                       {"intersection", v.counts[k].intersection},
                       {"union", v.counts[k].union_},
                       {"ignored", v.counts[k].ignored}});
  }
  j = Json{{"format_version", kReportFormatVersion},
           {"miou", std::isnan(v.miou) ? Json(nullptr) : Json(v.miou)},
           {"classes", classes},
           {"notes", v.notes},
           {"dataset", v.dataset_id},
           {"checkpoint", v.checkpoint_id},
           {"frames", v.frames},
           {"threshold", v.threshold}};
}

void from_json(const Json& j, MetricsReport& v) {
  if (j.at("format_version").get<int>() != kReportFormatVersion) throw LoadError("unsupported report format_version");
  v = MetricsReport{};
  v.miou = j.at("miou").is_null() ? std::nan("") : j.at("miou").get<double>();
  for (const auto& c : j.at("classes")) {
    v.class_names.push_back(c.at("name"));
    v.iou.push_back(c.at("iou").is_null() ? std::nullopt : std::optional<double>(c.at("iou").get<double>()));
    v.counts.push_back({c.at("intersection"), c.at("union"), c.at("ignored")});
  }
  j.at("notes").get_to(v.notes);
  j.at("dataset").get_to(v.dataset_id);
  j.at("checkpoint").get_to(v.checkpoint_id);
  j.at("frames").get_to(v.frames);
  j.at("threshold").get_to(v.threshold);
}

void write_split(const std::filesystem::path& path, const SplitManifest& split) {
  io::write_text(path, Json(split).dump(2) + "\n");
}

SplitManifest read_split(const std::filesystem::path& path) {
  try {
    return Json::parse(io::read_text(path)).get<SplitManifest>();
  } catch (const Json::exception& e) {
    throw LoadError("bad split manifest '" + path.string() + "': " + e.what());
  }
}

MetricsReport evaluate(model::BevSegModel& model, const synth::Dataset& dataset, const std::vector<size_t>& frames,
                       double threshold, int batch_size) {
  if (frames.empty()) throw InvalidArgument("cannot evaluate on an empty dataset");
  const auto& cfg = model->config();
  if (dataset.manifest.grid != cfg.grid) throw ConfigError("dataset grid does not match the model");
  torch::NoGradGuard guard;
  const bool was_training = model->is_training();
  model->eval();
  IouAccumulator acc(cfg.num_classes, threshold);
  for (size_t start = 0; start < frames.size(); start += batch_size) {
    std::vector<const synth::Sample*> batch;
    for (size_t i = start; i < std::min(frames.size(), start + batch_size); ++i)
      batch.push_back(&dataset.samples.at(frames[i]));
    std::vector<geom::DroppedSet> none(batch.size());
    auto out = model->forward(model::make_view_batch(batch, none, cfg), {.bev = true, .pv = false});
    auto targets = loss::bev_targets(batch, cfg.dtype());
    acc.add(torch::sigmoid(out.bev_logits), targets.target, targets.ignore);
  }
  model->train(was_training);
  auto r = acc.report();
  r.dataset_id = dataset.manifest.name;
  return r;
}

MetricsReport evaluate(model::BevSegModel& model, const synth::Dataset& dataset, double threshold) {
  std::vector<size_t> all(dataset.samples.size());
  std::iota(all.begin(), all.end(), 0);
  return evaluate(model, dataset, all, threshold);
}

}  // namespace pct::eval
