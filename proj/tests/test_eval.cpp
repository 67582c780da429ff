#include <gtest/gtest.h>

#include <numbers>

#include "scale/data.hpp"
#include "scale/eval.hpp"

using namespace scale;

TEST(Ece, HandFixture) {
  const std::vector<double> conf = {0.9, 0.8, 0.4, 0.3};
  const std::vector<int> ok = {1, 0, 1, 0};
  EXPECT_EQ(ece(conf, ok, 2), 0.25);
  const auto b = reliability_bins(conf, ok, 2);
  ASSERT_EQ(b.bins.size(), 2u);
  EXPECT_EQ(b.bins[0].count, 2u);
  EXPECT_DOUBLE_EQ(b.bins[0].acc, 0.5);
  EXPECT_DOUBLE_EQ(b.bins[0].conf, 0.35);
  EXPECT_DOUBLE_EQ(b.bins[1].acc, 0.5);
  EXPECT_DOUBLE_EQ(b.bins[1].conf, 0.85);
}

TEST(Ece, AllConfidentAndCorrect) {
  const std::vector<double> conf(10, 1.0);
  const std::vector<int> ok(10, 1);
  EXPECT_EQ(ece(conf, ok), 0.0);
  // Confidence 1 lands in the right-closed top bin.
  EXPECT_EQ(reliability_bins(conf, ok).bins.back().count, 10u);
}

TEST(Ece, Errors) {
  const std::vector<double> none;
  const std::vector<int> no;
  EXPECT_THROW(ece(none, no), std::invalid_argument);
  const std::vector<double> bad = {1.5};
  const std::vector<int> one = {1};
  EXPECT_THROW(ece(bad, one), std::domain_error);
}

TEST(Ece, SingleBin) {
  const std::vector<double> conf = {0.2, 0.6, 0.9};
  const std::vector<int> ok = {0, 1, 1};
  const auto b = reliability_bins(conf, ok, 1);
  EXPECT_DOUBLE_EQ(b.bins[0].acc, 2.0 / 3);
  EXPECT_DOUBLE_EQ(b.bins[0].conf, (0.2 + 0.6 + 0.9) / 3);
}

TEST(Ece, RandomPartitionAndBitExactReconstruction) {
  Stream s(3);
  std::vector<double> conf(5000);
  std::vector<int> ok(5000);
  for (std::size_t i = 0; i < conf.size(); ++i) {
    conf[i] = s.uniform01();
    ok[i] = s.bernoulli(0.7);
  }
  const auto b = reliability_bins(conf, ok);
  std::size_t total = 0;
  for (const auto& x : b.bins) total += x.count;
  EXPECT_EQ(total, conf.size());
  const double e = ece(conf, ok);
  EXPECT_EQ(ece_from_bins(b), e);
  EXPECT_GE(e, 0.0);
  EXPECT_LE(e, 1.0);
}

TEST(Ece, CalibratedStream) {
  Stream s(7);
  const std::size_t n = 100000;
  std::vector<double> conf(n);
  std::vector<int> ok(n);
  for (std::size_t i = 0; i < n; ++i) {
    conf[i] = s.uniform01();
    ok[i] = s.bernoulli(conf[i]);
  }
  EXPECT_LE(ece(conf, ok), 0.02);
}

TEST(Accuracy, IdentityWrongAndTies) {
  Eigen::MatrixXd p = Eigen::MatrixXd::Identity(3, 3);
  std::vector<int> y = {0, 1, 2};
  EXPECT_EQ(accuracy(p, y), 1.0);
  std::vector<int> wrong = {1, 2, 0};
  EXPECT_EQ(accuracy(p, wrong), 0.0);
  Eigen::MatrixXd u = Eigen::MatrixXd::Constant(2, 4, 0.25);
  EXPECT_EQ(argmax_row(u, 0), 0u);
  std::vector<int> zeros = {0, 0};
  EXPECT_EQ(accuracy(u, zeros), 1.0);
}

namespace {

struct TtaFixture {
  Dataset data = make_blobs2d(BlobKind::plain, 20, 1);
  ModelParams<double> params = init_params<double>(Architecture::mlp({2, 1, 1}, {6}, 2), Stream(2));
  ImageBatch<double> batch = data.images;
};

AugTheta rot(double pi, double alpha) {
  return AugTheta{{AugBlock::continuous(Family::rotation, pi, alpha, std::numbers::pi)}};
}

}  // namespace

TEST(Tta, IdentityTransformsMatchForward) {
  TtaFixture f;
  const auto plain = forward<double>(f.params, f.batch);
  const auto t1 = predict_tta<double>(f.params, rot(0.0, 0.5), f.batch, Geometry::points, 1, Stream(1));
  const auto t2 = predict_tta<double>(f.params, rot(0.0, 0.5), f.batch, Geometry::points, 2, Stream(1));
  EXPECT_TRUE(plain.isApprox(t1, 1e-12));
  EXPECT_TRUE(t1.isApprox(t2, 1e-12));
}

TEST(Tta, RowsNormalizedAndDeterministic) {
  TtaFixture f;
  const auto a = predict_tta<double>(f.params, rot(0.7, 2.0), f.batch, Geometry::points, 8, Stream(4), 1);
  const auto b = predict_tta<double>(f.params, rot(0.7, 2.0), f.batch, Geometry::points, 8, Stream(4), 3);
  for (Eigen::Index i = 0; i < a.rows(); ++i) EXPECT_NEAR(a.row(i).sum(), 1.0, 1e-6);
  EXPECT_EQ(a, b);
  EXPECT_THROW(predict_tta<double>(f.params, rot(0.7, 2.0), f.batch, Geometry::points, 0, Stream(4)),
               std::invalid_argument);
}

TEST(Tta, VarianceShrinksLikeOneOverN) {
  TtaFixture f;
  f.params = init_params<double>(Architecture::mlp({2, 1, 1}, {6}, 2), Stream(9));
  const auto th = rot(0.8, 3.0);
  auto var_at = [&](std::size_t N) {
    const std::size_t reps = 400;
    double s = 0, s2 = 0;
    for (std::size_t r = 0; r < reps; ++r) {
      const double v = predict_tta<double>(f.params, th, f.batch, Geometry::points, N, Stream(100 + r))(0, 0);
      s += v;
      s2 += v * v;
    }
    const double m = s / reps;
    return s2 / reps - m * m;
  };
  const double v4 = var_at(4), v16 = var_at(16), v64 = var_at(64);
  EXPECT_GT(v4 / v16, 2.5);
  EXPECT_LT(v4 / v16, 6.0);
  EXPECT_GT(v16 / v64, 2.5);
  EXPECT_LT(v16 / v64, 6.0);
}
