#include "pct/model.hpp"

#include <gtest/gtest.h>

#include <numbers>

#include "pct/checkpoint.hpp"
#include "pct/io.hpp"
#include "test_support.hpp"

namespace pct::model {
namespace {

using testing::finite_difference;
using testing::relative_error;
using testing::render;
using testing::tiny_config;

ViewBatch batch_of(const synth::Sample& s, const ModelConfig& c, geom::DroppedSet dropped = {}) {
  const synth::Sample* p = &s;
  return make_view_batch(std::span(&p, 1), std::span(&dropped, 1), c);
}

TEST(ImageEncoder, LevelSizesFollowStrides) {
  ModelConfig c;
  ImageEncoder enc(c);
  auto levels = enc->forward(torch::randn({2, 3, 96, 192}));
  ASSERT_EQ(levels.size(), 3u);
  EXPECT_EQ(levels[0].sizes(), (std::vector<int64_t>{2, 32, 24, 48}));
  EXPECT_EQ(levels[1].sizes(), (std::vector<int64_t>{2, 64, 12, 24}));
  EXPECT_EQ(levels[2].sizes(), (std::vector<int64_t>{2, 96, 6, 12}));
}

TEST(ImageEncoder, OddSizesRoundUp) {
  ModelConfig c = tiny_config();
  c.image_height = 30;
  c.image_width = 62;
  ImageEncoder enc(c);
  enc->to(torch::kFloat64);
  auto levels = enc->forward(torch::randn({1, 3, 30, 62}, torch::kFloat64));
  EXPECT_EQ(levels[0].size(2), 8);
  EXPECT_EQ(levels[0].size(3), 16);
  EXPECT_EQ(levels[2].size(2), 2);
  EXPECT_EQ(levels[2].size(3), 4);
}

TEST(ImageEncoder, SizeMismatchThrows) {
  ImageEncoder enc(ModelConfig{});
  EXPECT_THROW(enc->forward(torch::randn({1, 3, 64, 64})), ShapeError);
}

TEST(ImageEncoder, SharedWeightsAcrossViews) {
  torch::manual_seed(0);
  ImageEncoder enc(ModelConfig{});
  auto one = torch::randn({1, 3, 96, 192});
  auto levels = enc->forward(torch::cat({one, one}));
  for (auto& l : levels) EXPECT_TRUE(torch::equal(l[0], l[1]));
}

TEST(ImageEncoder, ZeroParametersGiveZeroPyramid) {
  ImageEncoder enc(ModelConfig{});
  torch::NoGradGuard guard;
  for (auto& p : enc->parameters()) p.zero_();
  for (auto& l : enc->forward(torch::zeros({1, 3, 96, 192}))) EXPECT_EQ(l.abs().max().item<float>(), 0.0f);
}

TEST(PvHead, OutputMatchesInputResolution) {
  ModelConfig c;
  ImageEncoder enc(c);
  PvHead head(c);
  auto out = head->forward(enc->forward(torch::randn({2, 3, 96, 192})), 96, 192);
  EXPECT_EQ(out.sizes(), (std::vector<int64_t>{2, 6, 96, 192}));
}

TEST(PvHead, EveryLevelContributes) {
  torch::manual_seed(1);
  ModelConfig c;
  ImageEncoder enc(c);
  PvHead head(c);
  torch::NoGradGuard guard;
  auto levels = enc->forward(torch::randn({1, 3, 96, 192}));
  auto base = head->forward(levels, 96, 192);
  for (int k = 0; k < 3; ++k) {
    auto changed = levels;
    changed[k] = torch::zeros_like(levels[k]);
    EXPECT_GT((head->forward(changed, 96, 192) - base).abs().max().item<float>(), 1e-6f) << "level " << k;
  }
}

class GradientCheck : public ::testing::Test {
 protected:
  void SetUp() override {
    config_ = tiny_config();
    model_ = make_model(config_, 3);
    sample_ = render(5, config_);
    batch_ = batch_of(sample_, config_);
    torch::manual_seed(9);
    auto probe = model_->forward(batch_);
    bev_weights_ = torch::randn_like(probe.bev_logits);
    pv_weights_ = torch::randn_like(probe.pv_logits);
  }

  torch::Tensor loss() {
    auto out = model_->forward(batch_);
    return (out.bev_logits * bev_weights_).sum() + (out.pv_logits * pv_weights_).mean();
  }

  // Checks the elements of `param` with the largest backprop gradients.
  void check(const std::string& name, int probes = 3) {
    auto params = model_->named_parameters();
    ASSERT_TRUE(params.contains(name)) << name;
    auto p = params[name];
    model_->zero_grad();
    loss().backward();
    auto grad = p.grad().view({-1}).clone();
    auto order = grad.abs().argsort(0, true);
    for (int k = 0; k < probes && k < grad.numel(); ++k) {
      const int64_t idx = order[k].item<int64_t>();
      const double fd = finite_difference([&] { return loss(); }, p, idx);
      EXPECT_LT(relative_error(grad[idx].item<double>(), fd), 1e-4) << name << "[" << idx << "]";
    }
  }

  ModelConfig config_;
  BevSegModel model_{nullptr};
  synth::Sample sample_;
  ViewBatch batch_;
  torch::Tensor bev_weights_, pv_weights_;
};

TEST_F(GradientCheck, PvHead) {
  check("pv_head.classifier.weight");
  check("pv_head.lateral.2.weight");
}

TEST_F(GradientCheck, BevEncoder) { check("bev_encoder.blocks.1.conv1.weight"); }

TEST_F(GradientCheck, BevDecoder) {
  check("bev_decoder.conv1.weight");
  check("bev_decoder.conv2.bias");
}

TEST_F(GradientCheck, Projection) { check("view_to_bev.channel_proj.weight"); }

TEST(Projection, ValidityIsUnionOfVisibilityMasks) {
  ModelConfig c;
  auto rig = geom::make_default_rig();
  const geom::CameraRig* r = &rig;
  geom::DroppedSet none;
  auto g = make_projection_geometry(std::span(&r, 1), std::span(&none, 1), c);
  auto hits = g.hit.sum(0)[0];
  for (int i = 0; i < c.grid.h; ++i)
    for (int j = 0; j < c.grid.w; ++j) {
      bool any = false;
      for (int v = 0; v < 4; ++v) any |= geom::visibility_mask(c.grid, rig[v]).at(i, j) != 0;
      ASSERT_EQ(hits[i][j].item<float>() > 0, any) << i << "," << j;
    }
}

TEST(Projection, DroppedCameraCellsAreInvalidAndZero) {
  ModelConfig c;
  c.image_height = 48;
  c.image_width = 96;
  auto model = make_model(c, 0);
  auto s = render(2, c);
  torch::NoGradGuard guard;
  auto out = model->forward(batch_of(s, c, {0}));
  auto excl = geom::exclusive_visibility_mask(c.grid, s.rig, {0});
  int checked = 0;
  for (int i = 0; i < c.grid.h; ++i)
    for (int j = 0; j < c.grid.w; ++j) {
      if (!excl.at(i, j)) continue;
      ++checked;
      EXPECT_EQ(out.valid[0][0][i][j].item<float>(), 0.0f);
      EXPECT_EQ(out.bev_features[0].select(1, i).select(1, j).abs().max().item<float>(), 0.0f);
    }
  EXPECT_GT(checked, 100);
}

TEST(Projection, DroppingAllCamerasThrows) {
  ModelConfig c;
  auto rig = geom::make_default_rig();
  const geom::CameraRig* r = &rig;
  geom::DroppedSet all{0, 1, 2, 3};
  EXPECT_THROW(make_projection_geometry(std::span(&r, 1), std::span(&all, 1), c), InvalidArgument);
}

TEST(Projection, ConstantFeaturesAverageToConstant) {
  ModelConfig c;
  GroundPlaneProjectionImpl proj(c);
  auto rig = geom::make_default_rig();
  const geom::CameraRig* r = &rig;
  geom::DroppedSet none;
  auto g = make_projection_geometry(std::span(&r, 1), std::span(&none, 1), c);
  auto level0 = torch::full({4, 32, 24, 48}, 0.75);
  auto agg = proj.aggregate(level0, g);
  auto err = ((agg.features - 0.75) * agg.valid).abs().max().item<float>();
  EXPECT_LT(err, 1e-6f);
  EXPECT_EQ((agg.features * (1 - agg.valid)).abs().max().item<float>(), 0.0f);
}

TEST(Projection, RotationEquivariance) {
  ModelConfig c;
  c.double_precision = true;
  GroundPlaneProjectionImpl proj(c);
  proj.to(torch::kFloat64);
  auto rig = geom::make_default_rig();
  const geom::CameraRig* r = &rig;
  geom::DroppedSet none;
  auto g = make_projection_geometry(std::span(&r, 1), std::span(&none, 1), c);

  // Rotating the rig by +90 deg moves camera k onto camera k+1's pose, so the
  // rotated rig is the original rig with features shifted by one view.
  torch::manual_seed(4);
  auto feats = torch::rand({4, 32, 24, 48}, torch::kFloat64);
  auto shifted = torch::empty_like(feats);
  for (int k = 0; k < 4; ++k) shifted[(k + 1) % 4] = feats[k];
  auto before = proj.aggregate(feats, g).features[0];
  auto after = proj.aggregate(shifted, g).features[0];
  const int w = c.grid.w;
  double worst = 0;
  for (int i = 0; i < c.grid.h; ++i)
    for (int j = 0; j < w; ++j)
      worst = std::max(worst, (after.select(1, w - 1 - j).select(1, i) - before.select(1, i).select(1, j))
                                  .abs()
                                  .max()
                                  .item<double>());
  EXPECT_LT(worst, 1e-5);
}

TEST(BevEncoder, ShapeAndResidualIdentity) {
  ModelConfig c;
  BevEncoder enc(c);
  auto x = torch::randn({2, 64, 64, 64});
  EXPECT_EQ(enc->forward(x).sizes(), x.sizes());
  torch::NoGradGuard guard;
  for (auto& p : enc->parameters()) p.zero_();
  EXPECT_TRUE(torch::equal(enc->forward(x), x));
}

TEST(BevDecoder, ShapeAndSigmoid) {
  ModelConfig c;
  BevDecoder dec(c);
  EXPECT_EQ(dec->forward(torch::randn({1, 64, 64, 64})).sizes(), (std::vector<int64_t>{1, 4, 64, 64}));
  EXPECT_EQ(torch::sigmoid(torch::zeros({1})).item<float>(), 0.5f);
}

TEST(Forward, Shapes) {
  ModelConfig c;
  auto model = make_model(c, 0);
  auto s = render(1, c);
  torch::NoGradGuard guard;
  auto out = forward(model, s, {});
  EXPECT_EQ(out.bev_logits.sizes(), (std::vector<int64_t>{1, 4, 64, 64}));
  EXPECT_EQ(out.pv_logits.sizes(), (std::vector<int64_t>{4, 6, 96, 192}));
  EXPECT_EQ(out.valid.sizes(), (std::vector<int64_t>{1, 1, 64, 64}));
}

TEST(Forward, WrongImageSizeThrows) {
  auto model = make_model(tiny_config(), 0);
  auto s = render(1, ModelConfig{});
  EXPECT_THROW(forward(model, s, {}), ShapeError);
}

TEST(Forward, DroppingACameraKeepsOtherViewsPv) {
  auto c = tiny_config(false);
  auto model = make_model(c, 0);
  auto s = render(3, c);
  torch::NoGradGuard guard;
  auto full = forward(model, s, {});
  auto dropped = forward(model, s, {2});
  for (int v = 0; v < 4; ++v) {
    if (v == 2) continue;
    EXPECT_TRUE(torch::equal(full.pv_logits[v], dropped.pv_logits[v])) << v;
  }
  EXPECT_FALSE(torch::equal(full.pv_logits[2], dropped.pv_logits[2]));
}

// 3 residual blocks x two 3x3 convs plus the decoder's 3x3 conv.
constexpr int kReceptiveRadius = 7;

BoolGrid dilate(const BoolGrid& m, int r) {
  BoolGrid out(m.h, m.w);
  for (int i = 0; i < m.h; ++i)
    for (int j = 0; j < m.w; ++j) {
      bool any = false;
      for (int di = -r; di <= r && !any; ++di)
        for (int dj = -r; dj <= r && !any; ++dj) {
          const int ii = i + di, jj = j + dj;
          any = ii >= 0 && jj >= 0 && ii < m.h && jj < m.w && m.at(ii, jj);
        }
      out.at(i, j) = any;
    }
  return out;
}

TEST(Forward, DroppedCameraChangesLogitsOnlyWithinReceptiveField) {
  ModelConfig c;
  c.image_height = 32;
  c.image_width = 64;
  c.bev_dim = 16;
  auto model = make_model(c, 2);
  auto s = render(4, c);
  torch::NoGradGuard guard;
  auto full = forward(model, s, {});
  auto dropped = forward(model, s, {0});
  auto reach = dilate(geom::visibility_mask(c.grid, s.rig[0]), kReceptiveRadius);
  int changed = 0;
  for (int i = 0; i < c.grid.h; ++i)
    for (int j = 0; j < c.grid.w; ++j) {
      const bool same = torch::equal(full.bev_logits[0].select(1, i).select(1, j),
                                     dropped.bev_logits[0].select(1, i).select(1, j));
      if (!same) {
        ++changed;
        EXPECT_TRUE(reach.at(i, j)) << i << "," << j;
      }
    }
  EXPECT_GT(changed, 0);
}

TEST(Forward, UnreachableCellsIgnoreImageContent) {
  ModelConfig c;
  c.image_height = 32;
  c.image_width = 64;
  c.bev_dim = 16;
  auto model = make_model(c, 2);
  auto a = render(4, c), b = render(8, c);
  torch::NoGradGuard guard;
  const geom::DroppedSet front_only{1, 2, 3};
  auto oa = forward(model, a, front_only);
  auto ob = forward(model, b, front_only);
  auto reach = dilate(geom::visibility_mask(c.grid, a.rig[0]), kReceptiveRadius);
  int checked = 0;
  for (int i = 0; i < c.grid.h; ++i)
    for (int j = 0; j < c.grid.w; ++j) {
      if (reach.at(i, j)) continue;
      ++checked;
      ASSERT_TRUE(torch::equal(oa.bev_logits[0].select(1, i).select(1, j), ob.bev_logits[0].select(1, i).select(1, j)))
          << i << "," << j;
    }
  EXPECT_GT(checked, 100);
  EXPECT_FALSE(torch::equal(oa.bev_logits, ob.bev_logits));
}

TEST(Model, SeededInitIsDeterministic) {
  auto a = make_model(tiny_config(), 7), b = make_model(tiny_config(), 7);
  auto pa = a->named_parameters(), pb = b->named_parameters();
  for (auto& p : pa) EXPECT_TRUE(torch::equal(p.value(), pb[p.key()])) << p.key();
}

TEST(Model, CloneIsIndependentCopy) {
  auto a = make_model(tiny_config(), 7);
  auto b = clone_model(a);
  auto pb = b->named_parameters();
  for (auto& p : a->named_parameters()) EXPECT_TRUE(torch::equal(p.value(), pb[p.key()]));
  torch::NoGradGuard guard;
  pb["bev_decoder.conv2.bias"].add_(1.0);
  EXPECT_FALSE(torch::equal(a->named_parameters()["bev_decoder.conv2.bias"], pb["bev_decoder.conv2.bias"]));
}

TEST(Model, UnknownProjectionRejected) {
  ModelConfig c;
  c.projection = "lift_splat";
  EXPECT_THROW(c.validate(), ConfigError);
}

class CheckpointTest : public ::testing::Test {
 protected:
  std::filesystem::path path_ = std::filesystem::temp_directory_path() / "pct_model_test.ckpt";
  void TearDown() override { std::filesystem::remove(path_); }
};

TEST_F(CheckpointTest, RoundTrip) {
  auto a = make_model(tiny_config(), 1);
  Checkpoint ck;
  ck.config = a->config();
  ck.meta = {{"iteration", 12}};
  ck.optimizer_state = std::string("\0opaque\xff", 8);
  store_model(ck, a, "student");
  write_checkpoint(path_, ck);

  auto back = read_checkpoint(path_);
  EXPECT_EQ(back.config, a->config());
  EXPECT_EQ(back.meta["iteration"], 12);
  EXPECT_EQ(back.optimizer_state, ck.optimizer_state);
  auto b = make_model(back.config, 2);
  load_model(b, back, "student");
  auto pb = b->named_parameters();
  for (auto& p : a->named_parameters()) EXPECT_TRUE(torch::equal(p.value(), pb[p.key()])) << p.key();
}

TEST_F(CheckpointTest, ShapeMismatchRejected) {
  auto a = make_model(tiny_config(), 1);
  Checkpoint ck;
  ck.config = a->config();
  store_model(ck, a, "student");
  write_checkpoint(path_, ck);
  auto other = tiny_config();
  other.bev_dim = 16;
  auto b = make_model(other, 1);
  EXPECT_THROW(load_model(b, read_checkpoint(path_), "student"), LoadError);
  EXPECT_THROW(load_model(a, read_checkpoint(path_), "teacher"), LoadError);
}

TEST_F(CheckpointTest, CorruptFileRejected) {
  io::write_text(path_, "not a checkpoint");
  EXPECT_THROW(read_checkpoint(path_), LoadError);
  EXPECT_THROW(read_checkpoint(path_.string() + ".missing"), LoadError);
}

}  // namespace
}  // namespace pct::model
