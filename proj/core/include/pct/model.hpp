#pragma once

// Multi-camera BEV segmentation network with a perspective-view task head.
//
//   images --ImageEncoder--> pyramid (strides 4, 8, 16)
//   pyramid --PvHead--> per-view PV logits at input resolution
//   stride-4 level --ViewToBev--> BEV features (+ validity mask)
//   BEV features --BevEncoder--> --BevDecoder--> BEV logits (per-class sigmoid)

#include <torch/torch.h>

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pct/geometry.hpp"
#include "pct/synthdata.hpp"

namespace pct::model {

struct ModelConfig {
  int stem_width = 16;
  std::array<int, 3> encoder_widths{32, 64, 96};
  int fpn_width = 32;
  int bev_dim = 64;
  int pv_classes = synth::kNumPvClasses;
  int num_classes = synth::kNumBevClasses;
  int image_height = 96;
  int image_width = 192;
  geom::BevGridSpec grid;
  std::string projection = "ground_plane";
  int norm_groups = 8;
  bool double_precision = false;

  torch::Dtype dtype() const { return double_precision ? torch::kFloat64 : torch::kFloat32; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

inline constexpr int kProjectionStride = 4;

/// Sampling locations of every BEV cell in every view's stride-4 feature map.
struct ProjectionGeometry {
  torch::Tensor sample_grid;  // [B*N, h, w, 2], grid_sample coordinates (x, y)
  torch::Tensor hit;          // [B*N, 1, h, w], 1 where the cell projects into a kept view
  int batch = 0;
  int views = 0;
};

/// Built from geom::project_ego_to_image on cell centers, the same predicate
/// as geom::visibility_mask. Dropped cameras never hit.
ProjectionGeometry make_projection_geometry(std::span<const geom::CameraRig* const> rigs,
                                            std::span<const geom::DroppedSet> dropped,
                                            const ModelConfig& config);

struct ViewBatch {
  torch::Tensor images;  // [B*N, 3, H, W]
  ProjectionGeometry geometry;
};

/// Converts samples into model input. Dropped views' images are zeroed.
ViewBatch make_view_batch(std::span<const synth::Sample* const> samples,
                          std::span<const geom::DroppedSet> dropped, const ModelConfig& config);

/// conv3x3 -> GroupNorm -> SiLU
class ConvNormActImpl : public torch::nn::Module {
 public:
  ConvNormActImpl(int in, int out, int stride, int groups);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv_{nullptr};
  torch::nn::GroupNorm norm_{nullptr};
};
TORCH_MODULE(ConvNormAct);

class ImageEncoderImpl : public torch::nn::Module {
 public:
  explicit ImageEncoderImpl(const ModelConfig& config);
  /// Three levels at strides 4, 8, 16 with the configured widths.
  std::vector<torch::Tensor> forward(const torch::Tensor& images);

 private:
  ModelConfig config_;
  torch::nn::Sequential stem_{nullptr}, stage1_{nullptr}, stage2_{nullptr}, stage3_{nullptr};
};
TORCH_MODULE(ImageEncoder);

/// FPN top-down pathway with UPerNet-style fusion of all levels.
class PvHeadImpl : public torch::nn::Module {
 public:
  explicit PvHeadImpl(const ModelConfig& config);
  torch::Tensor forward(const std::vector<torch::Tensor>& pyramid, int64_t out_h, int64_t out_w);

 private:
  torch::nn::ModuleList lateral_{nullptr};
  ConvNormAct fuse_{nullptr};
  torch::nn::Conv2d classifier_{nullptr};
};
TORCH_MODULE(PvHead);

struct BevFeature {
  torch::Tensor features;  // [B, D, h, w]; zero at invalid cells
  torch::Tensor valid;     // [B, 1, h, w] in {0, 1}
};

/// Pluggable 2D-to-BEV stage.
class ViewToBevImpl : public torch::nn::Module {
 public:
  virtual ~ViewToBevImpl() = default;
  virtual BevFeature forward(const torch::Tensor& level0, const ProjectionGeometry& geometry) = 0;
};

/// Ground-plane inverse projective sampling: bilinear samples of the stride-4
/// level at each cell's projection, averaged over hitting cameras, then a
/// bias-free 1x1 projection to the BEV width.
class GroundPlaneProjectionImpl : public ViewToBevImpl {
 public:
  explicit GroundPlaneProjectionImpl(const ModelConfig& config);
  BevFeature forward(const torch::Tensor& level0, const ProjectionGeometry& geometry) override;

  /// Mean over hitting cameras before the channel projection.
  BevFeature aggregate(const torch::Tensor& level0, const ProjectionGeometry& geometry) const;

 private:
  torch::nn::Conv2d channel_proj_{nullptr};
};

std::shared_ptr<ViewToBevImpl> make_view_to_bev(const ModelConfig& config);

/// Per-cell LayerNorm over channels; keeps the BEV path spatially local.
class CellNormImpl : public torch::nn::Module {
 public:
  explicit CellNormImpl(int channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::Tensor weight_, bias_;
};
TORCH_MODULE(CellNorm);

class ResidualBlockImpl : public torch::nn::Module {
 public:
  explicit ResidualBlockImpl(int channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
  CellNorm norm_{nullptr};
};
TORCH_MODULE(ResidualBlock);

class BevEncoderImpl : public torch::nn::Module {
 public:
  explicit BevEncoderImpl(const ModelConfig& config);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential blocks_{nullptr};
};
TORCH_MODULE(BevEncoder);

class BevDecoderImpl : public torch::nn::Module {
 public:
  explicit BevDecoderImpl(const ModelConfig& config);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
  CellNorm norm_{nullptr};
};
TORCH_MODULE(BevDecoder);

struct ForwardOptions {
  bool bev = true;
  bool pv = true;
  /// Applied to the projected BEV features before the BEV encoder.
  std::function<torch::Tensor(const torch::Tensor&)> bev_feature_hook;
};

struct ForwardOutput {
  torch::Tensor bev_logits;    // [B, C, h, w]
  torch::Tensor pv_logits;     // [B*N, pv_classes, H, W]
  torch::Tensor valid;         // [B, 1, h, w]
  torch::Tensor bev_features;  // projected features before the encoder
};

class BevSegModelImpl : public torch::nn::Module {
 public:
  explicit BevSegModelImpl(const ModelConfig& config);

  ForwardOutput forward(const ViewBatch& batch, const ForwardOptions& options = {});

  const ModelConfig& config() const { return config_; }
  ImageEncoder& image_encoder() { return image_encoder_; }
  PvHead& pv_head() { return pv_head_; }
  ViewToBevImpl& view_to_bev() { return *view_to_bev_; }
  BevEncoder& bev_encoder() { return bev_encoder_; }
  BevDecoder& bev_decoder() { return bev_decoder_; }

 private:
  ModelConfig config_;
  ImageEncoder image_encoder_{nullptr};
  PvHead pv_head_{nullptr};
  std::shared_ptr<ViewToBevImpl> view_to_bev_;
  BevEncoder bev_encoder_{nullptr};
  BevDecoder bev_decoder_{nullptr};
};
TORCH_MODULE(BevSegModel);

/// Builds a model with parameters initialized from `seed`.
BevSegModel make_model(const ModelConfig& config, uint64_t seed);

/// Single-sample convenience wrapper.
ForwardOutput forward(BevSegModel& model, const synth::Sample& sample, const geom::DroppedSet& dropped);

/// Deep copy of all parameters into a fresh model with the same config.
BevSegModel clone_model(BevSegModel& model);

}  // namespace pct::model
