#include "pct/losses.hpp"

#include <cmath>
#include <cstring>

#include "pct/common.hpp"
#include "pct/synthdata.hpp"

namespace pct::loss {

namespace F = torch::nn::functional;

void LossWeights::validate() const {
  if (lambda_pv < 0 || lambda_strong < 0 || lambda_bfd < 0 || focal_gamma < 0)
    throw ConfigError("loss weights must be non-negative");
  if (rampup_iters < 0) throw ConfigError("rampup_iters must be non-negative");
}

LossValue focal_loss(const torch::Tensor& logits, const torch::Tensor& target, const torch::Tensor& ignore,
                     double gamma) {
  if (logits.sizes() != target.sizes()) throw ShapeError("focal loss: logits and target shapes differ");
  auto t = target.to(logits.dtype());
  auto log_pt = t * F::logsigmoid(logits) + (1 - t) * F::logsigmoid(-logits);
  auto term = -log_pt;
  if (gamma != 0) term = term * (1 - log_pt.exp()).pow(gamma);
  if (!ignore.defined()) return {term.mean(), false};
  if (ignore.size(0) != logits.size(0) || ignore.size(2) != logits.size(2) || ignore.size(3) != logits.size(3))
    throw ShapeError("focal loss: ignore mask shape differs");
  auto keep = ignore.logical_not().expand_as(term);
  const auto count = keep.sum().item<int64_t>();
  if (count == 0) return {torch::zeros({}, logits.options()), true};
  return {torch::where(keep, term, torch::zeros_like(term)).sum() / static_cast<double>(count), false};
}

LossValue pv_loss(std::span<const PvTerm> terms) {
  torch::Tensor sum;
  int64_t count = 0;
  for (const auto& term : terms) {
    if (!term.logits.defined() || term.logits.size(0) == 0) continue;
    const int64_t v = term.logits.size(0);
    if (term.labels.dim() != 3 || term.labels.size(0) != v || term.labels.size(1) != term.logits.size(2) ||
        term.labels.size(2) != term.logits.size(3))
      throw ShapeError("pv loss: labels do not match logits");
    auto labels = term.labels;
    if (!term.dropped.empty()) {
      if (static_cast<int64_t>(term.dropped.size()) != v) throw ShapeError("pv loss: dropped flags length");
      labels = labels.clone();
      for (int64_t k = 0; k < v; ++k)
        if (term.dropped[k]) labels[k].fill_(synth::kIgnoreLabel);
    }
    count += (labels != synth::kIgnoreLabel).sum().item<int64_t>();
    auto s = F::cross_entropy(term.logits, labels,
                              F::CrossEntropyFuncOptions().ignore_index(synth::kIgnoreLabel).reduction(torch::kSum));
    sum = sum.defined() ? sum + s : s;
  }
  if (count == 0) {
    auto opts = sum.defined() ? sum.options() : torch::TensorOptions().dtype(torch::kFloat32);
    return {torch::zeros({}, opts), true};
  }
  return {sum / static_cast<double>(count), false};
}

torch::Tensor mse_consistency(const torch::Tensor& p_a, const torch::Tensor& p_b, const torch::Tensor& ignore) {
  if (p_a.sizes() != p_b.sizes()) throw ShapeError("mse consistency: shapes differ");
  auto sq = (p_a - p_b).square();
  if (!ignore.defined()) return sq.mean();
  auto keep = ignore.logical_not().expand_as(sq);
  const auto count = keep.sum().item<int64_t>();
  if (count == 0) return torch::zeros({}, p_a.options());
  return torch::where(keep, sq, torch::zeros_like(sq)).sum() / static_cast<double>(count);
}

BevTargets bev_targets(std::span<const synth::Sample* const> samples, torch::Dtype dtype) {
  if (samples.empty()) throw InvalidArgument("empty batch");
  const auto& g0 = samples[0]->bev_gt;
  const int64_t b = samples.size(), c = g0.c, h = g0.h, w = g0.w;
  auto target = torch::empty({b, c, h, w}, torch::kUInt8);
  auto ignore = torch::empty({b, 1, h, w}, torch::kUInt8);
  for (int64_t i = 0; i < b; ++i) {
    const auto& s = *samples[i];
    if (s.bev_gt.c != c || s.bev_gt.h != h || s.bev_gt.w != w || s.bev_ignore.h != h || s.bev_ignore.w != w)
      throw ShapeError("bev label shapes differ within a batch");
    std::memcpy(target[i].data_ptr(), s.bev_gt.data.data(), c * h * w);
    std::memcpy(ignore[i].data_ptr(), s.bev_ignore.data.data(), h * w);
  }
  return {target.to(dtype), ignore.to(torch::kBool)};
}

torch::Tensor pv_targets(std::span<const synth::Sample* const> samples, bool pseudo) {
  if (samples.empty()) throw InvalidArgument("empty batch");
  std::vector<torch::Tensor> views;
  for (const auto* s : samples) {
    const auto& maps = pseudo ? s->pv_pseudo : s->pv_labels;
    if (maps.size() != s->images.size())
      throw InvalidArgument(pseudo ? "sample has no pseudo-labels" : "sample has no PV labels");
    for (const auto& m : maps)
      views.push_back(torch::from_blob(const_cast<uint8_t*>(m.data.data()), {m.h, m.w}, torch::kUInt8)
                          .to(torch::kInt64));
  }
  return torch::stack(views);
}

double sigmoid_rampup(int64_t iter, int64_t rampup_iters) {
  if (iter < 0) throw InvalidArgument("rampup iteration must be non-negative");
  if (rampup_iters == 0 || iter >= rampup_iters) return 1.0;
  const double phase = 1.0 - static_cast<double>(iter) / static_cast<double>(rampup_iters);
  return std::exp(-5.0 * phase * phase);
}

}  // namespace pct::loss
