#include "pct/augment.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

namespace pct::aug {
namespace {

using synth::Sample;

geom::BevGridSpec grid() { return geom::default_grid(); }

Sample make_sample(uint64_t seed, synth::EgoPose pose = {}) {
  const auto scene = synth::generate_scene(seed, synth::LayoutParams{});
  Sample s = synth::render_sample(scene, geom::make_default_rig(), synth::domain_by_name("day"), seed, pose);
  s.pv_pseudo = s.pv_labels;
  return s;
}


// Fraction of random non-boundary ground points whose PV label (read at the
// projected pixel of the first camera that sees them) matches the BEV class.
double label_agreement(const Sample& s, uint64_t seed) {
  Rng rng(seed);
  int agree = 0, total = 0;
  for (int trial = 0; trial < 4000 && total < 400; ++trial) {
    const double x = rng.uniform(-16, 16), y = rng.uniform(-16, 16);
    const auto cell = geom::cell_of(grid(), x, y);
    const auto [i, j] = *cell;
    if (s.bev_ignore.at(i, j)) continue;
    bool boundary = false;
    const uint8_t own = synth::pv_class_of_cell(s.bev_gt, i, j);
    for (int di = -1; di <= 1; ++di)
      for (int dj = -1; dj <= 1; ++dj) {
        const int ii = std::clamp(i + di, 0, 63), jj = std::clamp(j + dj, 0, 63);
        boundary |= synth::pv_class_of_cell(s.bev_gt, ii, jj) != own;
      }
    if (boundary) continue;
    for (int k = 0; k < s.rig.size(); ++k) {
      const auto hit = geom::project_ego_to_image({x, y, 0}, s.rig[k].intrinsics, s.rig[k].extrinsics);
      if (!hit) continue;
      const uint8_t label = s.pv_labels[k].at(static_cast<int>(hit->v), static_cast<int>(hit->u));
      if (label == synth::kIgnoreLabel) break;
      agree += label == own;
      ++total;
      break;
    }
  }
  return total ? static_cast<double>(agree) / total : 0.0;
}

TEST(SampleStrongTest, ZeroMaxDropsNeverDrops) {
  const AugmentRecipe recipe;
  for (uint64_t seed = 0; seed < 200; ++seed) {
    const auto g = sample_weak(seed, recipe, 4, 192, 96);
    const auto [geom, photo] = sample_strong(seed, g, CamDropConfig{0, 1.0}, recipe, 4);
    EXPECT_TRUE(photo.camdrop.empty());
  }
}

TEST(SampleStrongTest, SingleDropFrequencies) {
  const AugmentRecipe recipe;
  std::array<int, 4> counts{};
  const int draws = 10000;
  for (int seed = 0; seed < draws; ++seed) {
    const auto [geom, photo] = sample_strong(seed, GeomAugParams{}, CamDropConfig{1, 1.0}, recipe, 4);
    ASSERT_EQ(photo.camdrop.size(), 1u);
    ++counts[*photo.camdrop.begin()];
  }
  for (int c : counts) EXPECT_NEAR(static_cast<double>(c) / draws, 0.25, 0.03);
}

TEST(SampleStrongTest, DropCountUniformUpToMax) {
  std::array<int, 4> sizes{};
  for (int seed = 0; seed < 3000; ++seed) {
    const auto [geom, photo] = sample_strong(seed, GeomAugParams{}, CamDropConfig{3, 1.0}, AugmentRecipe{}, 4);
    ++sizes[photo.camdrop.size()];
  }
  EXPECT_EQ(sizes[0], 0);
  for (int d = 1; d <= 3; ++d) EXPECT_NEAR(sizes[d] / 3000.0, 1.0 / 3, 0.04);
}

TEST(SampleStrongTest, ReusesGeometryVerbatim) {
  const AugmentRecipe recipe;
  for (uint64_t seed = 0; seed < 50; ++seed) {
    const auto g = sample_weak(seed, recipe, 4, 192, 96);
    const auto [geom, photo] = sample_strong(seed + 1000, g, CamDropConfig{}, recipe, 4);
    EXPECT_EQ(geom, g);
    for (const auto& j : photo.jitter) {
      EXPECT_GE(j.brightness, 0.6);
      EXPECT_LE(j.brightness, 1.4);
    }
    for (double s : photo.blur_sigma) {
      EXPECT_GE(s, 0.0);
      EXPECT_LE(s, 2.0);
    }
  }
}

TEST(SampleStrongTest, TooManyDropsIsConfigError) {
  EXPECT_THROW(sample_strong(1, GeomAugParams{}, CamDropConfig{4, 0.5}, AugmentRecipe{}, 4), ConfigError);
}

TEST(SampleWeakTest, RangesRespected) {
  const AugmentRecipe recipe;
  for (uint64_t seed = 0; seed < 200; ++seed) {
    const auto g = sample_weak(seed, recipe, 4, 192, 96);
    EXPECT_LE(std::abs(g.rotation_deg), 10.0);
    EXPECT_GE(g.scale, 0.9);
    EXPECT_LE(g.scale, 1.1);
    EXPECT_EQ(g.crop_offset.size(), 4u);
  }
  EXPECT_FALSE(AugmentRecipe::uda().blur);
}

TEST(ApplyGeometricTest, IdentityIsBitExact) {
  const Sample s = make_sample(3);
  GeomAugParams id;
  id.crop_offset.assign(4, {0.0, 0.0});
  EXPECT_TRUE(apply_geometric(s, id, grid()) == s);
}

TEST(ApplyGeometricTest, FlipTwiceRestoresOriginal) {
  const Sample s = make_sample(4);
  GeomAugParams flip;
  flip.flip = true;
  const Sample once = apply_geometric(s, flip, grid());
  EXPECT_NE(once.bev_gt, s.bev_gt);
  const Sample twice = apply_geometric(once, flip, grid());
  EXPECT_EQ(twice.bev_gt, s.bev_gt);
  EXPECT_EQ(twice.bev_ignore, s.bev_ignore);
  EXPECT_EQ(twice.images, s.images);
  EXPECT_EQ(twice.pv_labels, s.pv_labels);
}

TEST(ApplyGeometricTest, FlippedSampleStaysConsistent) {
  const Sample s = make_sample(6);
  GeomAugParams flip;
  flip.flip = true;
  const Sample f = apply_geometric(s, flip, grid());
  EXPECT_NO_THROW(f.rig.validate());
  EXPECT_GE(label_agreement(f, 1), 0.99);
}

TEST(ApplyGeometricTest, QuarterTurnMatchesReRender) {
  const auto scene = synth::generate_scene(21, synth::LayoutParams{});
  const synth::EgoPose pose{1.0, -2.0, 0.3};
  const Sample s = synth::render_sample(scene, geom::make_default_rig(), synth::domain_by_name("day"), 5, pose);
  GeomAugParams rot;
  rot.rotation_deg = 90;
  const Sample r = apply_geometric(s, rot, grid());

  // The rotated sample shows the world from a pose rotated the other way.
  const synth::EgoPose turned{pose.x, pose.y, pose.yaw - std::numbers::pi / 2};
  const Sample rendered = synth::render_sample(scene, r.rig, synth::domain_by_name("day"), 5, turned);
  EXPECT_EQ(r.bev_gt, rendered.bev_gt);
  size_t same = 0, total = 0;
  for (int k = 0; k < 4; ++k)
    for (size_t p = 0; p < r.pv_labels[k].size(); ++p) {
      same += r.pv_labels[k].data[p] == rendered.pv_labels[k].data[p];
      ++total;
    }
  EXPECT_GE(static_cast<double>(same) / total, 0.995);
  // BEV labels rotate with the rig: cell (i, j) moves to (w - 1 - j, i).
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 64; ++j)
      for (int k = 0; k < 4; ++k) ASSERT_EQ(r.bev_gt.at(k, 63 - j, i), s.bev_gt.at(k, i, j));
}

TEST(ApplyGeometricTest, SmallRotationMarksOutOfExtentIgnored) {
  const Sample s = make_sample(8);
  GeomAugParams rot;
  rot.rotation_deg = 10;
  const Sample r = apply_geometric(s, rot, grid());
  EXPECT_TRUE(r.bev_ignore.at(0, 0));
  EXPECT_FALSE(r.bev_ignore.at(32, 32));
  EXPECT_GE(label_agreement(r, 2), 0.99);
}

TEST(ApplyGeometricTest, ScaleAndCropKeepLabelsAligned) {
  const Sample s = make_sample(9);
  for (double scale : {0.9, 1.1}) {
    GeomAugParams g;
    g.scale = scale;
    g.crop_offset = {{3, 2}, {-4, 0}, {0, 5}, {2, -3}};
    if (scale > 1) g.crop_offset = {{10, 5}, {0, 0}, {19, 9}, {5, 1}};
    const Sample out = apply_geometric(s, g, grid());
    EXPECT_NO_THROW(out.rig.validate());
    EXPECT_EQ(out.bev_gt, s.bev_gt);
    EXPECT_GE(label_agreement(out, 3), 0.98) << scale;
  }
}

TEST(ApplyPhotometricTest, NeutralIsIdentity) {
  ImageF img(8, 8);
  Rng rng(5);
  for (auto& v : img.rgb) v = static_cast<float>(rng.uniform());
  const ImageF before = img;
  apply_photometric(img, ColorJitter{}, 0.0);
  EXPECT_EQ(img.rgb, before.rgb);
}

TEST(ApplyPhotometricTest, BrightnessScalesLinearly) {
  ImageF img(6, 6, 0.8f);
  apply_photometric(img, ColorJitter{0.5, 1.0, 1.0}, 0.0);
  for (float v : img.rgb) EXPECT_NEAR(v, 0.4f, 1e-6);
}

TEST(ApplyPhotometricTest, BlurPreservesMean) {
  Rng rng(12);
  for (int trial = 0; trial < 5; ++trial) {
    ImageF img(48, 64);
    for (auto& v : img.rgb) v = static_cast<float>(rng.uniform());
    double before = 0, after = 0;
    for (float v : img.rgb) before += v;
    apply_photometric(img, ColorJitter{}, rng.uniform(0.5, 2.0));
    for (float v : img.rgb) after += v;
    EXPECT_NEAR(after / img.rgb.size(), before / img.rgb.size(), 1e-3);
  }
}

TEST(CamDropTest, EmptyDropChangesNothing) {
  const Sample s = make_sample(10);
  const auto res = camdrop(s, {}, grid());
  EXPECT_EQ(res.bev_ignore, s.bev_ignore);
  EXPECT_TRUE(res.sample == s);
  for (auto f : res.pv_dropped) EXPECT_EQ(f, 0);
}

TEST(CamDropTest, OverlappingPairKeepsIgnoreUnchanged) {
  Sample s = make_sample(11);
  s.rig.cameras = {s.rig[0], s.rig[0]};
  s.images.resize(2);
  s.pv_labels.resize(2);
  s.pv_pseudo.resize(2);
  const auto res = camdrop(s, {1}, grid());
  EXPECT_EQ(res.bev_ignore, s.bev_ignore);
  EXPECT_EQ(res.pv_dropped, (std::vector<uint8_t>{0, 1}));
}

TEST(CamDropTest, BackCameraWedge) {
  const Sample s = make_sample(12);
  const auto res = camdrop(s, {2}, grid());
  // Independent predicate per cell.
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 64; ++j) {
      const auto c = geom::cell_center(grid(), i, j);
      bool back = false, others = false;
      for (int k = 0; k < 4; ++k) {
        const bool vis = geom::project_ego_to_image({c.x, c.y, 0}, s.rig[k].intrinsics, s.rig[k].extrinsics).has_value();
        (k == 2 ? back : others) |= vis;
      }
      ASSERT_EQ(res.bev_ignore.at(i, j) != 0, back && !others) << i << "," << j;
    }
  const auto behind = geom::cell_of(grid(), -10.0, 0.2);
  const auto front = geom::cell_of(grid(), 10.0, 0.2);
  const auto overlap = geom::cell_of(grid(), -10.0, 10.0);
  EXPECT_TRUE(res.bev_ignore.at(behind->first, behind->second));
  EXPECT_FALSE(res.bev_ignore.at(front->first, front->second));
  EXPECT_FALSE(res.bev_ignore.at(overlap->first, overlap->second));
  for (auto v : res.sample.images[2].rgb) ASSERT_EQ(v, 0);
  EXPECT_EQ(res.sample.images[0], s.images[0]);
  EXPECT_EQ(res.pv_dropped, (std::vector<uint8_t>{0, 0, 1, 0}));
}

TEST(CamDropTest, DropAllThrows) {
  EXPECT_THROW(camdrop(make_sample(13), {0, 1, 2, 3}, grid()), InvalidArgument);
}

TEST(CamDropProperty, IgnoreEqualsExclusiveMaskForAllSubsets) {
  const Sample s = make_sample(14);
  for (int bits = 0; bits < 15; ++bits) {
    geom::DroppedSet d;
    for (int k = 0; k < 4; ++k)
      if (bits & (1 << k)) d.insert(k);
    const auto res = camdrop(s, d, grid());
    EXPECT_EQ(res.bev_ignore, geom::exclusive_visibility_mask(grid(), s.rig, d)) << bits;
  }
}

TEST(SharedGeometryProperty, WeakAndStrongAgreeOnGeometry) {
  const Sample s = make_sample(15);
  const AugmentRecipe recipe;
  for (uint64_t seed = 0; seed < 10; ++seed) {
    const auto g = sample_weak(seed, recipe, 4, 192, 96);
    const auto [sg, photo] = sample_strong(seed, g, CamDropConfig{1, 1.0}, recipe, 4);
    const Sample weak = apply_geometric(s, g, grid());
    Sample strong = apply_geometric(s, sg, grid());
    EXPECT_EQ(weak.bev_gt, strong.bev_gt);
    EXPECT_EQ(weak.rig, strong.rig);
    apply_photometric(strong.images, photo);
    const auto dropped = camdrop(strong, photo.camdrop, grid());
    EXPECT_EQ(dropped.sample.bev_gt, weak.bev_gt);
  }
}

}  // namespace
}  // namespace pct::aug
