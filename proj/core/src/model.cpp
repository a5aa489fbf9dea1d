#include "pct/model.hpp"

#include <cmath>

#include "pct/common.hpp"

namespace pct::model {

namespace F = torch::nn::functional;

void ModelConfig::validate() const {
  if (stem_width <= 0 || fpn_width <= 0 || bev_dim <= 0) throw ConfigError("model widths must be positive");
  for (int w : encoder_widths)
    if (w <= 0) throw ConfigError("model widths must be positive");
  if (pv_classes < 2 || num_classes < 1) throw ConfigError("bad class counts");
  if (num_classes != grid.num_classes) throw ConfigError("num_classes disagrees with grid spec");
  if (image_height <= 0 || image_width <= 0) throw ConfigError("image size must be positive");
  if (norm_groups <= 0) throw ConfigError("norm_groups must be positive");
  for (int w : {stem_width, encoder_widths[0], encoder_widths[1], encoder_widths[2], fpn_width})
    if (w % norm_groups != 0) throw ConfigError("widths must be divisible by norm_groups");
  if (projection != "ground_plane") throw ConfigError("unknown projection variant: " + projection);
  grid.validate();
}

namespace {

torch::nn::Conv2d conv(int in, int out, int k, int stride = 1, bool bias = true) {
  return torch::nn::Conv2d(
      torch::nn::Conv2dOptions(in, out, k).stride(stride).padding(k / 2).bias(bias));
}

}  // namespace

ProjectionGeometry make_projection_geometry(std::span<const geom::CameraRig* const> rigs,
                                            std::span<const geom::DroppedSet> dropped,
                                            const ModelConfig& config) {
  if (rigs.empty()) throw InvalidArgument("empty batch");
  if (dropped.size() != rigs.size()) throw InvalidArgument("dropped sets and rigs differ in length");
  const int b = static_cast<int>(rigs.size());
  const int n = rigs[0]->size();
  const auto& grid = config.grid;
  const int h = grid.h, w = grid.w;

  ProjectionGeometry g;
  g.batch = b;
  g.views = n;
  g.sample_grid = torch::zeros({b * n, h, w, 2}, torch::kFloat64);
  g.hit = torch::zeros({b * n, 1, h, w}, torch::kFloat64);
  auto sg = g.sample_grid.accessor<double, 4>();
  auto hit = g.hit.accessor<double, 4>();

  for (int bi = 0; bi < b; ++bi) {
    const auto& rig = *rigs[bi];
    if (rig.size() != n) throw ShapeError("all rigs in a batch must have the same camera count");
    for (int d : dropped[bi])
      if (d < 0 || d >= n) throw InvalidArgument("dropped camera index out of range");
    if (static_cast<int>(dropped[bi].size()) >= n) throw InvalidArgument("cannot drop every camera");
    for (int v = 0; v < n; ++v) {
      if (dropped[bi].count(v)) continue;
      const auto& cam = rig[v];
      const double iw = cam.intrinsics.width, ih = cam.intrinsics.height;
      for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
          auto c = geom::cell_center(grid, i, j);
          auto px = geom::project_ego_to_image({c.x, c.y, 0.0}, cam.intrinsics, cam.extrinsics);
          if (!px) continue;
          const int k = bi * n + v;
          sg[k][i][j][0] = 2.0 * px->u / iw - 1.0;
          sg[k][i][j][1] = 2.0 * px->v / ih - 1.0;
          hit[k][0][i][j] = 1.0;
        }
      }
    }
  }
  if (config.dtype() != torch::kFloat64) {
    g.sample_grid = g.sample_grid.to(config.dtype());
    g.hit = g.hit.to(config.dtype());
  }
  return g;
}

ViewBatch make_view_batch(std::span<const synth::Sample* const> samples,
                          std::span<const geom::DroppedSet> dropped, const ModelConfig& config) {
  if (samples.empty()) throw InvalidArgument("empty batch");
  std::vector<const geom::CameraRig*> rigs;
  const int n = samples[0]->rig.size();
  const int64_t hh = config.image_height, ww = config.image_width;
  auto images = torch::zeros({static_cast<int64_t>(samples.size()) * n, 3, hh, ww}, torch::kFloat32);
  auto acc = images.accessor<float, 4>();
  for (size_t bi = 0; bi < samples.size(); ++bi) {
    const auto& s = *samples[bi];
    rigs.push_back(&s.rig);
    if (static_cast<int>(s.images.size()) != n) throw ShapeError("view count mismatch in batch");
    for (int v = 0; v < n; ++v) {
      const auto& im = s.images[v];
      if (im.height != hh || im.width != ww)
        throw ShapeError("image size " + std::to_string(im.height) + "x" + std::to_string(im.width) +
                         " does not match model config " + std::to_string(hh) + "x" + std::to_string(ww));
      if (dropped[bi].count(v)) continue;
      const int64_t k = static_cast<int64_t>(bi) * n + v;
      for (int r = 0; r < hh; ++r)
        for (int c = 0; c < ww; ++c)
          for (int ch = 0; ch < 3; ++ch) acc[k][ch][r][c] = im.at(r, c, ch) / 255.0f - 0.5f;
    }
  }
  ViewBatch out;
  out.images = images.to(config.dtype());
  out.geometry = make_projection_geometry(rigs, dropped, config);
  return out;
}

ConvNormActImpl::ConvNormActImpl(int in, int out, int stride, int groups) {
  conv_ = register_module("conv", conv(in, out, 3, stride));
  norm_ = register_module("norm", torch::nn::GroupNorm(groups, out));
}

torch::Tensor ConvNormActImpl::forward(const torch::Tensor& x) {
  return torch::silu(norm_->forward(conv_->forward(x)));
}

ImageEncoderImpl::ImageEncoderImpl(const ModelConfig& config) : config_(config) {
  const int g = config.norm_groups;
  const auto& wd = config.encoder_widths;
  stem_ = register_module("stem", torch::nn::Sequential(ConvNormAct(3, config.stem_width, 2, g)));
  stage1_ = register_module("stage1", torch::nn::Sequential(ConvNormAct(config.stem_width, wd[0], 2, g),
                                                             ConvNormAct(wd[0], wd[0], 1, g)));
  stage2_ = register_module("stage2", torch::nn::Sequential(ConvNormAct(wd[0], wd[1], 2, g),
                                                             ConvNormAct(wd[1], wd[1], 1, g)));
  stage3_ = register_module("stage3", torch::nn::Sequential(ConvNormAct(wd[1], wd[2], 2, g),
                                                             ConvNormAct(wd[2], wd[2], 1, g)));
}

std::vector<torch::Tensor> ImageEncoderImpl::forward(const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != config_.image_height ||
      images.size(3) != config_.image_width)
    throw ShapeError("image encoder expects [V, 3, " + std::to_string(config_.image_height) + ", " +
                     std::to_string(config_.image_width) + "]");
  auto x = stem_->forward(images);
  auto c1 = stage1_->forward(x);
  auto c2 = stage2_->forward(c1);
  auto c3 = stage3_->forward(c2);
  return {c1, c2, c3};
}

PvHeadImpl::PvHeadImpl(const ModelConfig& config) {
  lateral_ = register_module("lateral", torch::nn::ModuleList());
  for (int w : config.encoder_widths) lateral_->push_back(conv(w, config.fpn_width, 1));
  fuse_ = register_module("fuse", ConvNormAct(3 * config.fpn_width, config.fpn_width, 1, config.norm_groups));
  classifier_ = register_module("classifier", conv(config.fpn_width, config.pv_classes, 1));
}

torch::Tensor PvHeadImpl::forward(const std::vector<torch::Tensor>& pyramid, int64_t out_h, int64_t out_w) {
  if (pyramid.size() != 3) throw ShapeError("pv head expects three pyramid levels");
  auto up = [](const torch::Tensor& x, const torch::Tensor& like) {
    return F::interpolate(x, F::InterpolateFuncOptions()
                                 .size(std::vector<int64_t>{like.size(2), like.size(3)})
                                 .mode(torch::kBilinear)
                                 .align_corners(false));
  };
  auto l1 = lateral_[0]->as<torch::nn::Conv2dImpl>()->forward(pyramid[0]);
  auto l2 = lateral_[1]->as<torch::nn::Conv2dImpl>()->forward(pyramid[1]);
  auto l3 = lateral_[2]->as<torch::nn::Conv2dImpl>()->forward(pyramid[2]);
  auto p3 = l3;
  auto p2 = l2 + up(p3, l2);
  auto p1 = l1 + up(p2, l1);
  auto fused = fuse_->forward(torch::cat({p1, up(p2, p1), up(p3, p1)}, 1));
  auto logits = classifier_->forward(fused);
  return F::interpolate(logits, F::InterpolateFuncOptions()
                                    .size(std::vector<int64_t>{out_h, out_w})
                                    .mode(torch::kBilinear)
                                    .align_corners(false));
}

GroundPlaneProjectionImpl::GroundPlaneProjectionImpl(const ModelConfig& config) {
  channel_proj_ = register_module(
      "channel_proj", torch::nn::Conv2d(torch::nn::Conv2dOptions(config.encoder_widths[0], config.bev_dim, 1).bias(false)));
}

BevFeature GroundPlaneProjectionImpl::aggregate(const torch::Tensor& level0,
                                                const ProjectionGeometry& geometry) const {
  const int64_t b = geometry.batch, n = geometry.views;
  if (level0.size(0) != b * n) throw ShapeError("feature batch does not match projection geometry");
  auto sampled = F::grid_sample(level0, geometry.sample_grid.to(level0.dtype()),
                                F::GridSampleFuncOptions()
                                    .mode(torch::kBilinear)
                                    .padding_mode(torch::kBorder)
                                    .align_corners(false));
  auto hit = geometry.hit.to(level0.dtype());
  const int64_t c = sampled.size(1), h = sampled.size(2), w = sampled.size(3);
  auto summed = (sampled * hit).view({b, n, c, h, w}).sum(1);
  auto count = hit.view({b, n, 1, h, w}).sum(1);
  auto valid = (count > 0).to(level0.dtype());
  return {summed / count.clamp_min(1.0), valid};
}

BevFeature GroundPlaneProjectionImpl::forward(const torch::Tensor& level0, const ProjectionGeometry& geometry) {
  auto agg = aggregate(level0, geometry);
  return {channel_proj_->forward(agg.features) * agg.valid, agg.valid};
}

std::shared_ptr<ViewToBevImpl> make_view_to_bev(const ModelConfig& config) {
  if (config.projection == "ground_plane") return std::make_shared<GroundPlaneProjectionImpl>(config);
  throw ConfigError("unknown projection variant: " + config.projection);
}

CellNormImpl::CellNormImpl(int channels) {
  weight_ = register_parameter("weight", torch::ones({channels}));
  bias_ = register_parameter("bias", torch::zeros({channels}));
}

torch::Tensor CellNormImpl::forward(const torch::Tensor& x) {
  auto y = torch::layer_norm(x.permute({0, 2, 3, 1}), {x.size(1)}, weight_, bias_, 1e-5);
  return y.permute({0, 3, 1, 2});
}

ResidualBlockImpl::ResidualBlockImpl(int channels) {
  conv1_ = register_module("conv1", conv(channels, channels, 3));
  norm_ = register_module("norm", CellNorm(channels));
  conv2_ = register_module("conv2", conv(channels, channels, 3));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
  return x + conv2_->forward(torch::silu(norm_->forward(conv1_->forward(x))));
}

BevEncoderImpl::BevEncoderImpl(const ModelConfig& config) {
  blocks_ = register_module("blocks", torch::nn::Sequential());
  for (int i = 0; i < 3; ++i) blocks_->push_back(ResidualBlock(config.bev_dim));
}

torch::Tensor BevEncoderImpl::forward(const torch::Tensor& x) { return blocks_->forward(x); }

BevDecoderImpl::BevDecoderImpl(const ModelConfig& config) {
  conv1_ = register_module("conv1", conv(config.bev_dim, config.bev_dim, 3));
  norm_ = register_module("norm", CellNorm(config.bev_dim));
  conv2_ = register_module("conv2", conv(config.bev_dim, config.num_classes, 1));
}

torch::Tensor BevDecoderImpl::forward(const torch::Tensor& x) {
  return conv2_->forward(torch::silu(norm_->forward(conv1_->forward(x))));
}

BevSegModelImpl::BevSegModelImpl(const ModelConfig& config) : config_(config) {
  config_.validate();
  image_encoder_ = register_module("image_encoder", ImageEncoder(config_));
  pv_head_ = register_module("pv_head", PvHead(config_));
  view_to_bev_ = register_module("view_to_bev", make_view_to_bev(config_));
  bev_encoder_ = register_module("bev_encoder", BevEncoder(config_));
  bev_decoder_ = register_module("bev_decoder", BevDecoder(config_));
  to(config_.dtype());
}

ForwardOutput BevSegModelImpl::forward(const ViewBatch& batch, const ForwardOptions& options) {
  ForwardOutput out;
  auto pyramid = image_encoder_->forward(batch.images);
  if (options.pv) out.pv_logits = pv_head_->forward(pyramid, batch.images.size(2), batch.images.size(3));
  if (options.bev) {
    auto f = view_to_bev_->forward(pyramid[0], batch.geometry);
    out.valid = f.valid;
    out.bev_features = f.features;
    auto x = options.bev_feature_hook ? options.bev_feature_hook(f.features) : f.features;
    out.bev_logits = bev_decoder_->forward(bev_encoder_->forward(x));
  }
  return out;
}

BevSegModel make_model(const ModelConfig& config, uint64_t seed) {
  torch::manual_seed(seed);
  return BevSegModel(config);
}

ForwardOutput forward(BevSegModel& model, const synth::Sample& sample, const geom::DroppedSet& dropped) {
  const synth::Sample* ptr = &sample;
  auto batch = make_view_batch(std::span(&ptr, 1), std::span(&dropped, 1), model->config());
  return model->forward(batch);
}

BevSegModel clone_model(BevSegModel& model) {
  BevSegModel copy(model->config());
  torch::NoGradGuard guard;
  auto src = model->named_parameters();
  auto dst = copy->named_parameters();
  for (auto& p : dst) p.value().copy_(src[p.key()]);
  auto sb = model->named_buffers();
  for (auto& p : copy->named_buffers()) p.value().copy_(sb[p.key()]);
  return copy;
}

}  // namespace pct::model
