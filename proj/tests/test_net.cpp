#include <gtest/gtest.h>

#include <cmath>

#include "scale/net.hpp"
#include "scale/verify.hpp"

using namespace scale;

namespace {

ImageBatch<double> rand_batch(std::size_t n, Shape s, std::uint64_t seed) {
  ImageBatch<double> b(n, s.channels, s.height, s.width);
  Stream r(seed);
  for (double& v : b.data) v = r.uniform01();
  return b;
}

double loss_of(const ModelParams<double>& p, const ImageBatch<double>& b, const std::vector<int>& y) {
  return loss_and_grad<double>(p, b, y, 1, false).loss;
}

// Finite-difference check of every parameter of a tiny network.
void check_all_coords(const Architecture& arch, std::uint64_t seed) {
  auto p = init_params<double>(arch, Stream(seed));
  Stream r(seed + 1);
  for (double& w : p.w) w += 0.05 * r.uniform(-1, 1);
  const auto b = rand_batch(2, arch.input, seed + 2);
  std::vector<int> y = {0, static_cast<int>(arch.num_classes() - 1)};
  const auto lg = loss_and_grad<double>(p, b, y, 1, true);
  for (std::size_t j = 0; j < p.w.size(); ++j) {
    auto q = p;
    q.w[j] += 1e-5;
    const double fp = loss_of(q, b, y);
    q.w[j] -= 2e-5;
    const double fm = loss_of(q, b, y);
    const double fd = (fp - fm) / 2e-5;
    EXPECT_LE(std::abs(fd - lg.grad[j]) / std::max(std::abs(fd), 1e-6), 1e-4)
        << arch.describe() << " coord " << j << " fd " << fd << " an " << lg.grad[j];
  }
}

}  // namespace

TEST(Architecture, ParamCountAudit) {
  const auto a = Architecture::cnn5({1, 28, 28}, {16, 16, 32, 32, 32}, 10);
  const std::size_t expect = (16 * 9 + 16) + (16 * 16 * 9 + 16) + (32 * 16 * 9 + 32) +
                             (32 * 32 * 9 + 32) + (32 * 32 * 9 + 32) + (10 * 32 * 7 * 7 + 10);
  EXPECT_EQ(a.param_count(), expect);
  const auto m = Architecture::mlp({1, 28, 28}, {256}, 10);
  EXPECT_EQ(m.param_count(), 784u * 256 + 256 + 256 * 10 + 10);
  auto p = init_params<float>(a, Stream(1));
  EXPECT_EQ(p.w.size(), expect);
  EXPECT_EQ(p.w0, p.w);
}

TEST(Architecture, DescribeParseRoundTrip) {
  const auto a = Architecture::cnn5({1, 28, 28}, {16, 16, 32, 32, 32}, 10);
  EXPECT_TRUE(Architecture::parse(a.describe()) == a);
  EXPECT_THROW(Architecture::parse("1x2x2|dense:3,bogus"), std::invalid_argument);
  EXPECT_THROW(Architecture::parse("1x2x2|dense:3,relu"), std::invalid_argument);
}

TEST(Forward, ZeroWeightsUniform) {
  const auto a = Architecture::mlp({1, 4, 4}, {8}, 5);
  ModelParams<double> p{a, Buffer<double>(a.param_count(), 0.0), {}};
  p.w0 = p.w;
  const auto probs = forward<double>(p, rand_batch(3, a.input, 1));
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < 5; ++c) EXPECT_DOUBLE_EQ(probs(i, c), 0.2);
}

TEST(Forward, OneHotSelector) {
  const auto a = Architecture::mlp({4, 1, 1}, {}, 4);
  ModelParams<double> p{a, Buffer<double>(a.param_count(), 0.0), {}};
  for (int k = 0; k < 4; ++k) p.w[k * 4 + k] = 10.0;
  p.w0 = p.w;
  ImageBatch<double> b(4, 4, 1, 1);
  for (int k = 0; k < 4; ++k) b.data[k * 4 + k] = 1.0;
  const auto probs = forward<double>(p, b);
  for (int i = 0; i < 4; ++i) {
    Eigen::Index arg;
    probs.row(i).maxCoeff(&arg);
    EXPECT_EQ(arg, i);
  }
}

TEST(Forward, RowsSumToOne) {
  const auto a = Architecture::cnn5({1, 12, 12}, {4, 4, 6, 6, 6}, 7);
  auto p = init_params<double>(a, Stream(3));
  const auto probs = forward<double>(p, rand_batch(5, a.input, 2), 2);
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(probs.row(i).sum(), 1.0, 1e-6);
}

TEST(Forward, ShapeMismatchThrows) {
  const auto a = Architecture::mlp({1, 4, 4}, {8}, 5);
  auto p = init_params<double>(a, Stream(3));
  EXPECT_THROW(forward<double>(p, rand_batch(1, {1, 4, 5}, 1)), std::invalid_argument);
}

TEST(Loss, PerfectAndUniform) {
  std::vector<double> dl(3);
  const double big[] = {0.0, 800.0, 0.0};
  EXPECT_EQ(softmax_cross_entropy<double>(big, 1, dl), 0.0);
  const double flat[] = {0.5, 0.5, 0.5};
  EXPECT_NEAR(softmax_cross_entropy<double>(flat, 2, dl), std::log(3.0), 1e-15);
  EXPECT_THROW(softmax_cross_entropy<double>(flat, 3, dl), std::out_of_range);
}

TEST(Gradients, DenseOnly) { check_all_coords(Architecture::mlp({3, 1, 1}, {}, 3), 1); }
TEST(Gradients, DenseRelu) { check_all_coords(Architecture::mlp({2, 2, 2}, {5, 4}, 3), 2); }
TEST(Gradients, ConvOnly) {
  check_all_coords(Architecture::parse("2x4x5|conv:3,dense:2"), 3);
}
TEST(Gradients, ConvReluPool) {
  check_all_coords(Architecture::parse("1x6x6|conv:2,relu,pool,dense:3"), 4);
}
TEST(Gradients, PoolOddSize) { check_all_coords(Architecture::parse("2x5x5|pool,dense:2"), 5); }

TEST(Gradients, ComposedSampled) {
  for (const auto& r : check_net_grads(60, 21)) EXPECT_TRUE(r.pass) << r.name << " rel " << r.rel_err;
}

TEST(Gradients, LabelOutOfRangeThrows) {
  const auto a = Architecture::mlp({1, 2, 2}, {}, 2);
  auto p = init_params<double>(a, Stream(3));
  std::vector<int> y = {2};
  EXPECT_THROW(loss_and_grad<double>(p, rand_batch(1, a.input, 1), y), std::out_of_range);
}

TEST(Determinism, WorkerCountDoesNotChangeResults) {
  const auto a = Architecture::cnn5({1, 10, 10}, {3, 3, 4, 4, 4}, 4);
  auto p = init_params<double>(a, Stream(8));
  const auto b = rand_batch(37, a.input, 9);
  std::vector<int> y(37);
  for (int i = 0; i < 37; ++i) y[i] = i % 4;
  const auto g1 = loss_and_grad<double>(p, b, y, 1), g3 = loss_and_grad<double>(p, b, y, 3);
  EXPECT_EQ(g1.grad, g3.grad);
  EXPECT_EQ(g1.loss, g3.loss);
  EXPECT_EQ(g1.input_grad.data, g3.input_grad.data);
}

TEST(Precision, FloatTracksDouble) {
  const auto a = Architecture::cnn5({1, 10, 10}, {3, 3, 4, 4, 4}, 4);
  auto pd = init_params<double>(a, Stream(8));
  ModelParams<float> pf{a, Buffer<float>(pd.w.begin(), pd.w.end()), {}};
  pf.w0 = pf.w;
  const auto b = rand_batch(4, a.input, 9);
  std::vector<int> y = {0, 1, 2, 3};
  EXPECT_NEAR(loss_and_grad<double>(pd, b, y).loss, loss_and_grad<float>(pf, b.cast<float>(), y).loss, 1e-5);
}
