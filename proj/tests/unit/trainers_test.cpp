#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "pct/io.hpp"
#include "pct/trainers.hpp"
#include "test_support.hpp"

namespace pct::train {
namespace {

namespace fs = std::filesystem;
using pct::testing::all_frames;
using pct::testing::tiny_config;
using pct::testing::tiny_dataset;

RunConfig tiny_run(Mode mode, bool double_precision = false) {
  RunConfig c;
  c.mode = mode;
  c.model = tiny_config(double_precision);
  c.labeled_batch = 1;
  c.unlabeled_batch = 1;
  c.iterations = 50;
  c.eval_every = 0;
  c.checkpoint_every = 0;
  c.loss.rampup_iters = 20;
  c.optimizer.lr = 0.004;
  c.ema.alpha = 0.9;
  return c;
}

struct Fixture : ::testing::Test {
  static void SetUpTestSuite() {
    const auto c = tiny_config(false);
    day = new synth::Dataset(tiny_dataset(c, 4, 2, 1));
    night = new synth::Dataset(tiny_dataset(c, 3, 2, 2, "night", 100));
    day64 = new synth::Dataset(tiny_dataset(tiny_config(true), 2, 2, 3));
  }
  static void TearDownTestSuite() {
    delete day;
    delete night;
    delete day64;
  }

  // scenes 0-1 labeled, 2-3 unlabeled
  static TrainData ssl_data(const synth::Dataset& ds = *day) {
    TrainData d;
    d.labeled = &ds;
    d.unlabeled = &ds;
    const auto n = ds.samples.size();
    for (size_t i = 0; i < n; ++i) (i < n / 2 ? d.labeled_frames : d.unlabeled_frames).push_back(i);
    return d;
  }
  static TrainData uda_data() {
    TrainData d;
    d.labeled = day;
    d.labeled_frames = all_frames(*day);
    d.unlabeled = night;
    d.unlabeled_frames = all_frames(*night);
    return d;
  }

  static inline synth::Dataset* day = nullptr;
  static inline synth::Dataset* night = nullptr;
  static inline synth::Dataset* day64 = nullptr;
};

std::vector<torch::Tensor> snapshot(model::BevSegModel& m) {
  std::vector<torch::Tensor> out;
  for (auto& p : m->parameters()) out.push_back(p.detach().clone());
  return out;
}

bool bit_equal(const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i)
    if (!torch::equal(a[i], b[i])) return false;
  return true;
}

std::vector<std::vector<torch::Tensor>> trajectory(const RunConfig& c, const TrainData& d, int iters) {
  auto s = init_state(c);
  std::vector<std::vector<torch::Tensor>> out;
  for (int i = 0; i < iters; ++i) {
    step(s, c, d);
    out.push_back(snapshot(s.student));
  }
  return out;
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("pct_trainers_" + name);
  fs::remove_all(p);
  return p;
}

// ---- EMA -------------------------------------------------------------------

TEST(Ema, FixedPointAndCopy) {
  auto c = tiny_config(true);
  auto s = model::make_model(c, 1), t = model::make_model(c, 2);
  auto before = snapshot(t);
  ema_update(t, s, 1.0);
  EXPECT_TRUE(bit_equal(snapshot(t), before));
  ema_update(t, s, 0.0);
  EXPECT_TRUE(bit_equal(snapshot(t), snapshot(s)));
}

TEST(Ema, ScalarArithmetic) {
  auto c = tiny_config(true);
  auto s = model::make_model(c, 1), t = model::make_model(c, 2);
  {
    torch::NoGradGuard g;
    for (auto& p : t->parameters()) p.fill_(1.0);
    for (auto& p : s->parameters()) p.fill_(0.0);
  }
  ema_update(t, s, 0.999);
  for (auto& p : t->parameters()) EXPECT_DOUBLE_EQ(p.max().item<double>(), 0.999);
}

TEST_F(Fixture, TeacherFollowsUnrolledRecursion) {
  auto c = tiny_run(Mode::kPctMt, true);
  c.camdrop = true;
  c.bfd = true;
  c.ema.alpha = 0.95;
  auto d = ssl_data(*day64);
  auto s = init_state(c);
  // independent unrolling on flat double vectors
  std::vector<std::vector<double>> teacher;
  for (auto& p : s.student->parameters()) {
    auto f = p.detach().reshape(-1).contiguous();
    teacher.emplace_back(f.data_ptr<double>(), f.data_ptr<double>() + f.numel());
  }
  for (int k = 0; k < 15; ++k) {
    step(s, c, d);
    auto params = s.student->parameters();
    for (size_t i = 0; i < params.size(); ++i) {
      auto f = params[i].detach().reshape(-1).contiguous();
      const double* sp = f.data_ptr<double>();
      for (size_t e = 0; e < teacher[i].size(); ++e) teacher[i][e] = 0.95 * teacher[i][e] + 0.05 * sp[e];
    }
  }
  double worst = 0;
  auto tp = s.teacher->parameters();
  for (size_t i = 0; i < tp.size(); ++i) {
    auto f = tp[i].detach().reshape(-1).contiguous();
    for (size_t e = 0; e < teacher[i].size(); ++e) worst = std::max(worst, std::abs(f.data_ptr<double>()[e] - teacher[i][e]));
  }
  EXPECT_LE(worst, 1e-12);
}

TEST_F(Fixture, TeacherIsPure) {
  auto c = tiny_run(Mode::kPctMt);
  c.bfd = true;
  auto d = ssl_data();
  auto s = init_state(c);
  std::set<const void*> teacher_ptrs;
  for (auto& p : s.teacher->parameters()) teacher_ptrs.insert(p.data_ptr());
  for (int i = 0; i < 3; ++i) step(s, c, d);
  for (const auto& group : s.optimizer->param_groups())
    for (const auto& p : group.params()) EXPECT_EQ(teacher_ptrs.count(p.data_ptr()), 0u);
  for (auto& p : s.teacher->parameters()) EXPECT_FALSE(p.grad().defined());
}

TEST(Ema, TeacherStartsAsExactCopy) {
  auto c = tiny_run(Mode::kMt);
  auto s = init_state(c);
  EXPECT_TRUE(bit_equal(snapshot(s.student), snapshot(s.teacher)));
}

// ---- BEV feature dropout ---------------------------------------------------

TEST(Bfd, ZeroRateIsIdentity) {
  auto f = torch::randn({2, 8, 4, 4});
  EXPECT_TRUE(torch::equal(bfd(f, 0.0, 1), f));
}

TEST(Bfd, PreservesExpectation) {
  auto f = torch::rand({1, 8, 3, 3}, torch::kFloat64) + 0.5;
  for (bool channelwise : {true, false}) {
    auto sum = torch::zeros_like(f);
    for (uint64_t s = 0; s < 10000; ++s) sum += bfd(f, 0.2, s, channelwise);
    auto rel = ((sum / 10000 - f).abs() / f).max().item<double>();
    EXPECT_LT(rel, 0.02) << "channelwise " << channelwise;
  }
}

TEST(Bfd, ZeroedChannelCountIsBinomial) {
  const int d = 64, draws = 2000;
  const double p = 0.3;
  auto f = torch::ones({1, d, 2, 2});
  int64_t total = 0;
  for (uint64_t s = 0; s < draws; ++s) {
    auto out = bfd(f, p, s);
    auto zero = (out.select(0, 0).select(1, 0).select(1, 0) == 0);
    // whole channels are dropped together
    EXPECT_TRUE(torch::equal(out == 0, zero.view({1, d, 1, 1}).expand_as(out)));
    const int64_t k = zero.sum().item<int64_t>();
    // 6 sigma per draw
    EXPECT_LE(std::abs(k - p * d), 6 * std::sqrt(d * p * (1 - p)));
    total += k;
  }
  const double n = static_cast<double>(d) * draws;
  EXPECT_LE(std::abs(total - p * n), 4 * std::sqrt(n * p * (1 - p)));
}

TEST(Bfd, Deterministic) {
  auto f = torch::randn({2, 8, 4, 4});
  EXPECT_TRUE(torch::equal(bfd(f, 0.5, 9), bfd(f, 0.5, 9)));
  EXPECT_FALSE(torch::equal(bfd(f, 0.5, 9), bfd(f, 0.5, 10)));
  EXPECT_THROW(bfd(f, 1.0, 0), InvalidArgument);
}

// ---- supervised / determinism ------------------------------------------------

TEST_F(Fixture, OverfitsFourScenes) {
  auto c = tiny_run(Mode::kSup);
  c.augment = aug::AugmentRecipe{0, 0, 1, 1, false, 0, 0, false, 0, 0.1, 2.0};
  c.labeled_batch = 4;
  c.iterations = 200;
  c.optimizer.lr = 0.02;
  TrainData d;
  d.labeled = day;
  d.labeled_frames = all_frames(*day);
  auto s = init_state(c);
  double first = 0, last = 0;
  for (int i = 0; i < c.iterations; ++i) {
    const double l = step(s, c, d).l_bev;
    if (i < 5) first += l / 5;
    if (i >= c.iterations - 10) last += l / 10;
  }
  EXPECT_LT(last, 0.2 * first);
}

TEST_F(Fixture, OverfitModelScoresHighOnItsScenes) {
  auto c = tiny_run(Mode::kSup);
  c.augment = aug::AugmentRecipe{0, 0, 1, 1, false, 0, 0, false, 0, 0.1, 2.0};
  c.labeled_batch = 4;
  c.iterations = 1000;
  c.optimizer.lr = 0.01;
  c.optimizer.weight_decay = 0;
  TrainData d;
  d.labeled = day;
  d.labeled_frames = all_frames(*day);
  auto s = init_state(c);
  for (int i = 0; i < c.iterations; ++i) step(s, c, d);
  EXPECT_GE(eval::evaluate(s.student, *day).miou, 0.9);
}

TEST_F(Fixture, EqualSeedsGiveIdenticalTrajectories) {
  auto c = tiny_run(Mode::kPctMt);
  c.camdrop = true;
  c.bfd = true;
  auto d = ssl_data();
  auto a = trajectory(c, d, 50), b = trajectory(c, d, 50);
  for (int i = 0; i < 50; ++i) ASSERT_TRUE(bit_equal(a[i], b[i])) << "iteration " << i;
  c.seed = 1;
  EXPECT_FALSE(bit_equal(trajectory(c, d, 1)[0], a[0]));
}

TEST_F(Fixture, CamDropOffLeavesIgnoreEmpty) {
  auto c = tiny_run(Mode::kSup);
  c.augment.max_rotation_deg = 0;  // rotation marks out-of-extent cells ignored
  c.labeled_batch = 4;
  TrainData d;
  d.labeled = day;
  d.labeled_frames = all_frames(*day);
  int64_t with_drop = 0;
  for (int it = 0; it < 10; ++it) {
    for (const auto& s : draw_labeled_batch(c, d, it))
      for (auto v : s.bev_ignore.data) EXPECT_FALSE(v);
  }
  c.camdrop = true;
  c.camdrop_config.apply_prob = 1.0;
  for (int it = 0; it < 10; ++it)
    for (const auto& s : draw_labeled_batch(c, d, it))
      for (auto v : s.bev_ignore.data) with_drop += v;
  EXPECT_GT(with_drop, 0);
}

// ---- reduction lattice -------------------------------------------------------

TEST_F(Fixture, ReductionLattice) {
  auto d = ssl_data();
  auto base = tiny_run(Mode::kSup);
  base.camdrop = true;
  const auto sup = trajectory(base, d, 12);

  auto pct = base;
  pct.mode = Mode::kPct;
  pct.loss.lambda_pv = 0;
  auto mt = base;
  mt.mode = Mode::kMt;
  mt.loss.lambda_strong = mt.loss.lambda_bfd = 0;
  mt.bfd = true;
  auto pct_mt = mt;
  pct_mt.mode = Mode::kPctMt;
  pct_mt.loss.lambda_pv = 0;
  for (const auto& c : {pct, mt, pct_mt}) {
    const auto t = trajectory(c, d, 12);
    for (int i = 0; i < 12; ++i) ASSERT_TRUE(bit_equal(t[i], sup[i])) << to_string(c.mode) << " iteration " << i;
  }

  // pct_mt without consistency terms is pct
  auto pct_on = base;
  pct_on.mode = Mode::kPct;
  auto pct_mt_on = pct_on;
  pct_mt_on.mode = Mode::kPctMt;
  pct_mt_on.bfd = true;
  pct_mt_on.loss.lambda_strong = pct_mt_on.loss.lambda_bfd = 0;
  const auto a = trajectory(pct_on, d, 12), b = trajectory(pct_mt_on, d, 12);
  for (int i = 0; i < 12; ++i) ASSERT_TRUE(bit_equal(a[i], b[i])) << "iteration " << i;
  EXPECT_FALSE(bit_equal(a.back(), sup.back()));
}

TEST_F(Fixture, UdaWithoutPvIsSourceOnly) {
  auto d = uda_data();
  auto sup = tiny_run(Mode::kSup);
  sup.camdrop = true;
  auto uda = sup;
  uda.mode = Mode::kUda;
  uda.loss.lambda_pv = 0;
  const auto a = trajectory(sup, d, 10), b = trajectory(uda, d, 10);
  for (int i = 0; i < 10; ++i) ASSERT_TRUE(bit_equal(a[i], b[i])) << "iteration " << i;
}

// ---- PCT ---------------------------------------------------------------------

TEST_F(Fixture, PvLossOnLabeledViewsWhenNoUnlabeledBatch) {
  auto c = tiny_run(Mode::kPct);
  c.unlabeled_batch = 0;
  TrainData d;
  d.labeled = day;
  d.labeled_frames = all_frames(*day);
  auto s = init_state(c);
  auto b = step(s, c, d);
  EXPECT_GT(b.l_pv, 0);
  EXPECT_TRUE(std::isfinite(b.total));
}

TEST_F(Fixture, PvGradientStaysInImagePath) {
  auto c = tiny_config(false);
  auto net = model::make_model(c, 3);
  std::vector<const synth::Sample*> ptrs{&day->samples[0], &day->samples[3]};
  const std::vector<geom::DroppedSet> dropped{{}, {1}};
  auto out = net->forward(model::make_view_batch(ptrs, dropped, c), {.bev = true, .pv = true});
  loss::PvTerm term{out.pv_logits, loss::pv_targets(ptrs), {false, false, false, false, false, true, false, false}};
  loss::pv_loss(std::span(&term, 1)).value.backward();
  for (auto& p : net->named_parameters()) {
    const auto& k = p.key();
    const bool bev_side = k.rfind("bev_", 0) == 0 || k.rfind("view_to_bev", 0) == 0;
    const double norm = p.value().grad().defined() ? p.value().grad().abs().sum().item<double>() : 0.0;
    if (bev_side) EXPECT_EQ(norm, 0.0) << k;
    if (k == "image_encoder.stem.0.conv.weight" || k == "pv_head.classifier.weight") EXPECT_GT(norm, 0.0) << k;
  }
}

// ---- mean teacher ------------------------------------------------------------

TEST_F(Fixture, StrongLossVanishesWithoutPerturbation) {
  auto c = tiny_run(Mode::kMt);
  c.augment.jitter_prob = 0;
  c.augment.blur = false;
  c.camdrop = false;
  c.bfd = false;
  auto d = ssl_data();
  auto s = init_state(c);
  auto b = step(s, c, d);
  EXPECT_LE(b.l_strong, 1e-12);
  EXPECT_GT(b.l_bev, 0);
}

TEST_F(Fixture, RampupAndBookkeeping) {
  auto c = tiny_run(Mode::kPctMt, true);
  c.camdrop = true;
  c.bfd = true;
  c.augment.blur = false;
  auto d = ssl_data(*day64);
  auto s = init_state(c);
  for (int i = 0; i < 25; ++i) {
    auto b = step(s, c, d);
    const double w = loss::sigmoid_rampup(i, c.loss.rampup_iters);
    if (i == 0) EXPECT_EQ(b.rampup_w, std::exp(-5.0));
    EXPECT_EQ(b.rampup_w, w);
    EXPECT_EQ(b.w_strong, w * c.loss.lambda_strong);
    EXPECT_EQ(b.w_bfd, w * c.loss.lambda_bfd);
    EXPECT_EQ(b.w_pv, c.loss.lambda_pv);
    EXPECT_NEAR(b.total, b.reconstruct(), 1e-9 * std::max(1.0, std::abs(b.total)));
    EXPECT_GT(b.l_bfd, 0);
  }
}

TEST_F(Fixture, StableOverFiveHundredIterations) {
  auto c = tiny_run(Mode::kPctMt);
  c.camdrop = true;
  c.bfd = true;
  c.iterations = 500;
  c.loss = loss::LossWeights{};
  c.loss.rampup_iters = 150;
  auto d = ssl_data();
  auto s = init_state(c);
  for (int i = 0; i < c.iterations; ++i) {
    auto b = step(s, c, d);  // step throws TrainingError on a non-finite term
    ASSERT_TRUE(std::isfinite(b.l_bev + b.l_pv + b.l_strong + b.l_bfd)) << "iteration " << i;
  }
  for (auto& p : s.teacher->parameters()) ASSERT_TRUE(torch::isfinite(p).all().item<bool>());
}

// ---- UDA ---------------------------------------------------------------------

double target_pv_loss(model::BevSegModel& net, const synth::Dataset& ds, const model::ModelConfig& c) {
  torch::NoGradGuard g;
  std::vector<const synth::Sample*> ptrs;
  for (const auto& s : ds.samples) ptrs.push_back(&s);
  std::vector<geom::DroppedSet> none(ptrs.size());
  auto out = net->forward(model::make_view_batch(ptrs, none, c), {.bev = false, .pv = true});
  loss::PvTerm term{out.pv_logits, loss::pv_targets(ptrs), std::vector<bool>(ptrs.size() * 4, false)};
  return loss::pv_loss(std::span(&term, 1)).value.item<double>();
}

TEST_F(Fixture, UdaAdaptsPvHeadOnTarget) {
  auto c = tiny_run(Mode::kUda);
  c.camdrop = true;
  c.iterations = 500;
  auto d = uda_data();
  auto s = init_state(c);
  const double before = target_pv_loss(s.student, *night, c.model);
  for (int i = 0; i < c.iterations; ++i) {
    auto b = step(s, c, d);
    ASSERT_GT(b.l_bev, 0);
    ASSERT_GT(b.l_pv, 0);
  }
  const double after = target_pv_loss(s.student, *night, c.model);
  EXPECT_LT(after, 0.8 * before) << before << " -> " << after;
}

TEST_F(Fixture, ModeCheckedWrappers) {
  auto c = tiny_run(Mode::kSup);
  auto d = ssl_data();
  auto s = init_state(c);
  EXPECT_THROW(pct_step(s, c, d), ConfigError);
  EXPECT_NO_THROW(supervised_step(s, c, d));
  EXPECT_EQ(s.iteration, 1);
}

TEST_F(Fixture, CompatibilityChecks) {
  auto c = tiny_run(Mode::kMt);
  TrainData d;
  d.labeled = day;
  d.labeled_frames = all_frames(*day);
  EXPECT_THROW(check_compatible(c, d), ConfigError);
  auto other = c;
  other.model.grid.h = 8;
  EXPECT_THROW(check_compatible(other, ssl_data()), ConfigError);
  auto no_pseudo = *day;
  for (auto& s : no_pseudo.samples) s.pv_pseudo.clear();
  auto p = tiny_run(Mode::kPct);
  EXPECT_THROW(check_compatible(p, ssl_data(no_pseudo)), ConfigError);
  EXPECT_NO_THROW(check_compatible(c, ssl_data()));
}

// ---- schedule ----------------------------------------------------------------

TEST(OneCycle, Shape) {
  OptimizerConfig o;
  const int64_t total = 1000;
  int64_t argmax = 0;
  double best = 0;
  for (int64_t i = 0; i < total; ++i) {
    const double lr = one_cycle_lr(i, total, o);
    if (lr > best) best = lr, argmax = i;
  }
  EXPECT_NEAR(static_cast<double>(argmax), o.pct_start * total, 1.0);
  EXPECT_DOUBLE_EQ(best, o.lr);
  EXPECT_DOUBLE_EQ(one_cycle_lr(0, total, o), o.lr / o.div_factor);
  EXPECT_LT(one_cycle_lr(total - 1, total, o), one_cycle_lr(0, total, o));
}

// ---- train loop --------------------------------------------------------------

int count_lines(const fs::path& p) {
  std::istringstream in(io::read_text(p));
  std::string line;
  int n = 0;
  while (std::getline(in, line)) ++n;
  return n;
}

TEST_F(Fixture, RunDirectoryContents) {
  auto c = tiny_run(Mode::kPctMt);
  c.iterations = 12;
  c.eval_every = 5;
  c.checkpoint_every = 4;
  auto d = ssl_data();
  d.val = day;
  d.val_frames = {0, 1};
  const auto dir = temp_dir("contents");
  auto r = train(c, d, dir);
  EXPECT_TRUE(r.finished);
  EXPECT_EQ(count_lines(dir / "metrics.csv"), 1 + 12);
  // evals after 5 and 10 plus the final one, for student and teacher
  EXPECT_EQ(count_lines(dir / "eval.csv"), 1 + 3 * 2);
  for (const char* f : {"config.json", "checkpoint.ckpt", "final.ckpt", "summary.json"}) EXPECT_TRUE(fs::exists(dir / f)) << f;
  EXPECT_FALSE(fs::exists(dir / ".lock"));
  auto summary = Json::parse(io::read_text(dir / "summary.json"));
  EXPECT_EQ(summary["primary"], "teacher");
  EXPECT_EQ(summary["miou"].get<double>(), r.teacher->miou);
  EXPECT_EQ(read_run_config(dir / "config.json").iterations, 12);

  EXPECT_THROW(train(c, d, dir), Error);
  TrainOptions force;
  force.force = true;
  EXPECT_NO_THROW(train(c, d, dir, force));
  fs::remove_all(dir);
}

TEST_F(Fixture, ResumeReproducesUninterruptedRun) {
  auto c = tiny_run(Mode::kPctMt);
  c.camdrop = true;
  c.bfd = true;
  c.iterations = 20;
  auto d = ssl_data();
  const auto full_dir = temp_dir("full"), split_dir = temp_dir("split");
  train(c, d, full_dir);
  TrainOptions first;
  first.stop_after = 9;
  auto partial = train(c, d, split_dir, first);
  EXPECT_FALSE(partial.finished);
  TrainOptions rest;
  rest.resume = true;
  train(c, d, split_dir, rest);

  auto a = model::read_checkpoint(full_dir / "final.ckpt");
  auto b = model::read_checkpoint(split_dir / "final.ckpt");
  ASSERT_EQ(a.tensors.size(), b.tensors.size());
  for (size_t i = 0; i < a.tensors.size(); ++i) {
    EXPECT_EQ(a.tensors[i].first, b.tensors[i].first);
    EXPECT_TRUE(torch::equal(a.tensors[i].second, b.tensors[i].second)) << a.tensors[i].first;
  }
  EXPECT_EQ(io::read_text(full_dir / "metrics.csv"), io::read_text(split_dir / "metrics.csv"));
  fs::remove_all(full_dir);
  fs::remove_all(split_dir);
}

}  // namespace
}  // namespace pct::train
