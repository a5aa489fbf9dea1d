#pragma once

// Training objectives. All reductions are means over contributing
// (non-ignored) elements; an objective with no contributing element is 0 and
// flagged `empty`.

#include <torch/torch.h>

#include <span>
#include <vector>

#include "pct/synthdata.hpp"

namespace pct::loss {

struct LossWeights {
  double lambda_pv = 0.1;
  double lambda_strong = 0.1;
  double lambda_bfd = 0.5;
  double focal_gamma = 2.0;
  int64_t rampup_iters = 9000;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

struct LossValue {
  torch::Tensor value;  // scalar
  bool empty = false;
};

/// Sigmoid focal loss. logits/target [B, C, h, w]; ignore [B, 1, h, w] (bool,
/// may be undefined). Ignored cells drop out of numerator and denominator.
LossValue focal_loss(const torch::Tensor& logits, const torch::Tensor& target, const torch::Tensor& ignore,
                     double gamma);

/// PV predictions and pseudo-labels for one set of views.
struct PvTerm {
  torch::Tensor logits;       // [V, K, H, W]
  torch::Tensor labels;       // [V, H, W] int64, 255 = ignore
  std::vector<bool> dropped;  // per view; empty = none dropped
};

/// Cross-entropy pooled over every non-ignored pixel of every non-dropped view
/// across all terms.
LossValue pv_loss(std::span<const PvTerm> terms);

/// Mean squared difference of probabilities over non-ignored elements.
/// ignore [B, 1, h, w] (bool, may be undefined).
torch::Tensor mse_consistency(const torch::Tensor& p_a, const torch::Tensor& p_b,
                              const torch::Tensor& ignore = {});

/// exp(-5 (1 - min(iter / rampup_iters, 1))^2); 1 when rampup_iters == 0.
double sigmoid_rampup(int64_t iter, int64_t rampup_iters);

template <class T>
T combine_pct(const T& l_bev, const T& l_pv, const LossWeights& w) {
  return l_bev + w.lambda_pv * l_pv;
}

template <class T>
T combine_uda(const T& l_bev, const T& l_pv, const LossWeights& w) {
  return combine_pct(l_bev, l_pv, w);
}

template <class T>
T combine_ssl(const T& l_bev, const T& l_pv, const T& l_strong, const T& l_bfd, const LossWeights& w,
              double rampup_w) {
  return l_bev + w.lambda_pv * l_pv + rampup_w * (w.lambda_strong * l_strong + w.lambda_bfd * l_bfd);
}

struct BevTargets {
  torch::Tensor target;  // [B, C, h, w] in {0, 1}
  torch::Tensor ignore;  // [B, 1, h, w] bool
};

BevTargets bev_targets(std::span<const synth::Sample* const> samples, torch::Dtype dtype);

/// [B*N, H, W] int64 from pv_pseudo (or pv_labels when `pseudo` is false).
torch::Tensor pv_targets(std::span<const synth::Sample* const> samples, bool pseudo = true);

/// Logged per iteration.
struct LossBundle {
  double l_bev = 0;
  double l_pv = 0;
  double l_strong = 0;
  double l_bfd = 0;
  double rampup_w = 0;
  // weights actually applied to each term in the total
  double w_pv = 0;
  double w_strong = 0;
  double w_bfd = 0;
  double total = 0;

  double reconstruct() const { return l_bev + w_pv * l_pv + w_strong * l_strong + w_bfd * l_bfd; }
};

}  // namespace pct::loss
