#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "scale/data.hpp"
#include "scale/trainer.hpp"

using namespace scale;

namespace {

AugTheta rot_only(double pi, double alpha) {
  return AugTheta{{AugBlock::continuous(Family::rotation, pi, alpha, std::numbers::pi)}};
}

TrainConfig small_cfg() {
  TrainConfig c;
  c.mc_samples = 4;
  c.batch_size = 32;
  c.epochs_joint = 3;
  c.epochs_model_only = 1;
  c.lr_model = 1e-2;
  c.lr_aug = 0.05;
  c.seed = 11;
  return c;
}

TrainState<double> blob_state(const TrainConfig& cfg, const AugTheta& th, std::size_t n) {
  const auto arch = Architecture::mlp({2, 1, 1}, {8}, 2);
  return init_state<double>(init_params<double>(arch, Stream(5)), th, cfg, n);
}

}  // namespace

TEST(ClampSchedule, Examples) {
  const double c0 = 0.4 / 7;
  EXPECT_DOUBLE_EQ(clamp_schedule(c0, 0, 20), c0);
  EXPECT_DOUBLE_EQ(clamp_schedule(c0, 10, 20), c0 / 2);
  EXPECT_EQ(clamp_schedule(c0, 20, 20), 0.0);
  EXPECT_EQ(clamp_schedule(c0, 25, 20), 0.0);
  TrainConfig c;
  EXPECT_DOUBLE_EQ(c.c0_for(default_spec()), 0.4 / 7);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.mc_samples = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.c0 = 0.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(TrainStep, ForwardCountIsNTimesM) {
  const auto train = load_idx(std::string(SCALE_SOURCE_DIR) + "/data/mnist5k/train-images-idx3-ubyte.gz",
                              std::string(SCALE_SOURCE_DIR) + "/data/mnist5k/train-labels-idx1-ubyte.gz");
  const auto eight = train.slice(0, 8);
  TrainConfig cfg = small_cfg();
  auto st = init_state<double>(init_params<double>(Architecture::mlp({1, 28, 28}, {16}, 10), Stream(1)),
                               default_spec(), cfg, 8);
  const std::vector<std::size_t> rows = {0, 1, 2, 3, 4, 5, 6, 7};
  const auto s = train_step<double>(st, eight, rows, cfg, 0, 0, true, cfg.lr_aug, 0.05);
  EXPECT_EQ(s.forward_count, 32u);
  EXPECT_EQ(s.pi_grad.size(), 7u);
}

TEST(TrainStep, FrozenThetaWhenNoAugLearning) {
  const auto data = make_blobs2d(BlobKind::plain, 64, 1);
  TrainConfig cfg = small_cfg();
  cfg.reg.lambda_reg = 0.0;
  cfg.lr_aug = 0.0;
  const auto th = rot_only(0.3, 0.2);
  auto st = blob_state(cfg, th, 64);
  const std::vector<std::size_t> rows = {0, 1, 2, 3, 4, 5};
  train_step<double>(st, data, rows, cfg, 0, 0, true, 0.0, 0.0);
  EXPECT_EQ(st.theta.blocks[0].pi, 0.3);
  EXPECT_EQ(st.theta.blocks[0].alpha, 0.2);
}

TEST(TrainStep, ConstantLossLeavesOnlyRegularizer) {
  // Zero weights give the same loss log 2 for every input. Both indicator
  // groups are non-empty (M = 64, pi = 1/2), so the data term is exactly 0.
  const auto data = make_blobs2d(BlobKind::plain, 16, 2);
  TrainConfig cfg = small_cfg();
  cfg.mc_samples = 64;
  cfg.lr_model = 0.0;
  const auto th = rot_only(0.5, 0.4);
  auto st = blob_state(cfg, th, 16);
  std::fill(st.params.w.begin(), st.params.w.end(), 0.0);
  const std::vector<std::size_t> rows = {0, 1, 2, 3};
  const double lr = 0.01;
  const auto rg = reg_grad(th, cfg.reg);
  const auto s = train_step<double>(st, data, rows, cfg, 0, 0, true, lr, 0.01);
  EXPECT_EQ(s.pi_grad[0], 0.0);
  EXPECT_EQ(s.alpha_grad[0], 0.0);
  EXPECT_DOUBLE_EQ(st.theta.blocks[0].pi, 0.5 - lr * cfg.reg.lambda_reg * rg[0].d_pi);
  EXPECT_DOUBLE_EQ(st.theta.blocks[0].alpha, 0.4 - lr * cfg.reg.lambda_reg * rg[0].d_alpha);
}

TEST(TrainStep, ModelOnlyPhaseKeepsTheta) {
  const auto data = make_blobs2d(BlobKind::plain, 16, 2);
  TrainConfig cfg = small_cfg();
  const auto th = rot_only(0.5, 0.4);
  auto st = blob_state(cfg, th, 16);
  const auto w_before = st.params.w;
  const std::vector<std::size_t> rows = {0, 1, 2, 3};
  const auto s = train_step<double>(st, data, rows, cfg, 0, 0, false, 1.0, 0.0);
  EXPECT_EQ(st.theta, th);
  EXPECT_TRUE(s.pi_grad.empty());
  EXPECT_NE(st.params.w, w_before);
}

TEST(TrainStep, NonFiniteLossAborts) {
  const auto data = make_blobs2d(BlobKind::plain, 16, 2);
  TrainConfig cfg = small_cfg();
  auto st = blob_state(cfg, rot_only(0.5, 0.4), 16);
  st.params.w[0] = std::numeric_limits<double>::infinity();
  const std::vector<std::size_t> rows = {0, 1};
  EXPECT_THROW(train_step<double>(st, data, rows, cfg, 0, 0, true, 0.01, 0.01), std::runtime_error);
}

TEST(EpochOrder, IsPermutationAndSeeded) {
  auto a = epoch_order(100, 3, 0);
  EXPECT_EQ(a, epoch_order(100, 3, 0));
  EXPECT_NE(a, epoch_order(100, 3, 1));
  std::sort(a.begin(), a.end());
  for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(a[i], i);
  EXPECT_EQ(batches_per_epoch(100, 32), 4u);
}

TEST(TrainRun, ZeroEpochsIsVacuous) {
  const auto data = make_blobs2d(BlobKind::plain, 32, 2);
  TrainConfig cfg = small_cfg();
  cfg.epochs_joint = cfg.epochs_model_only = 0;
  auto st = blob_state(cfg, rot_only(0.2, 0.3), 32);
  const auto before = st.params.w;
  const auto th = st.theta;
  EXPECT_TRUE(train_run<double>(st, data, nullptr, cfg).empty());
  EXPECT_EQ(st.params.w, before);
  EXPECT_EQ(st.theta, th);
}

TEST(TrainRun, ClampInvariantsAndPhases) {
  const auto data = make_blobs2d(BlobKind::rotation_invariant, 96, 4);
  TrainConfig cfg = small_cfg();
  cfg.lr_aug = 0.5;
  auto st = blob_state(cfg, rot_only(0.5, 0.5), 96);
  const double c0 = cfg.c0_for(st.theta);
  AugTheta at_end_of_joint;
  const auto series = train_run<double>(st, data, &data, cfg, [&](const TrainState<double>& s, const MetricsRecord& r) {
    const double c = std::max(clamp_schedule(c0, r.epoch - 1, cfg.epochs_joint), kPiInterior);
    for (const auto& b : s.theta.blocks) {
      EXPECT_GE(b.pi, c - 1e-15);
      EXPECT_LE(b.pi, 1 - c + 1e-15);
      EXPECT_GE(b.alpha, kAlphaFloor);
      EXPECT_LE(b.alpha, b.a_max);
    }
    if (r.epoch == cfg.epochs_joint) at_end_of_joint = s.theta;
  });
  ASSERT_EQ(series.size(), 4u);
  EXPECT_EQ(series[2].phase, Phase::joint);
  EXPECT_EQ(series[3].phase, Phase::model_only);
  EXPECT_EQ(series[3].theta, at_end_of_joint);
  EXPECT_FALSE(std::isnan(series[3].acc_val));
  EXPECT_EQ(st.aug_step, 3 * batches_per_epoch(96, 32));
}

TEST(TrainRun, BitReproducibleAndWorkerIndependent) {
  const auto data = make_blobs2d(BlobKind::plain, 80, 4);
  TrainConfig cfg = small_cfg();
  auto a = blob_state(cfg, rot_only(0.5, 0.5), 80);
  auto b = a;
  const auto sa = train_run<double>(a, data, nullptr, cfg);
  cfg.workers = 3;
  const auto sb = train_run<double>(b, data, nullptr, cfg);
  ASSERT_EQ(sa.size(), sb.size());
  for (std::size_t i = 0; i < sa.size(); ++i) {
    EXPECT_EQ(sa[i].train_loss, sb[i].train_loss);
    EXPECT_EQ(sa[i].theta, sb[i].theta);
  }
  EXPECT_EQ(a.params.w, b.params.w);
}

TEST(TrainRun, ResumeMatchesStraightRun) {
  const auto data = make_blobs2d(BlobKind::plain, 80, 4);
  const TrainConfig cfg = small_cfg();
  auto full = blob_state(cfg, rot_only(0.5, 0.5), 80);
  TrainState<double> snap;
  const auto series = train_run<double>(full, data, nullptr, cfg, [&](const TrainState<double>& s, const MetricsRecord& r) {
    if (r.epoch == 2) snap = s;
  });
  const auto tail = train_run<double>(snap, data, nullptr, cfg);
  ASSERT_EQ(tail.size(), 2u);
  EXPECT_EQ(tail[0].train_loss, series[2].train_loss);
  EXPECT_EQ(tail[1].train_loss, series[3].train_loss);
  EXPECT_EQ(snap.params.w, full.params.w);
  EXPECT_EQ(snap.optim.m, full.optim.m);
}

TEST(TrainRun, ShapeMismatchThrows) {
  const auto data = make_blobs2d(BlobKind::plain, 8, 4);
  TrainConfig cfg = small_cfg();
  auto st = init_state<double>(init_params<double>(Architecture::mlp({1, 2, 2}, {}, 2), Stream(1)),
                               rot_only(0.5, 0.5), cfg, 8);
  EXPECT_THROW(train_run<double>(st, data, nullptr, cfg), std::invalid_argument);
}
