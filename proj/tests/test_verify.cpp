#include <gtest/gtest.h>

#include <cmath>

#include "scale/pacreg.hpp"
#include "scale/verify.hpp"

using namespace scale;

TEST(FiniteDiff, QuadraticAndLinear) {
  EXPECT_NEAR(finite_diff_scalar([](double x) { return x * x; }, 3.0, 1e-5), 6.0, 1e-8);
  for (double h : {1e-6, 0.1, 3.0})
    EXPECT_NEAR(finite_diff_scalar([](double x) { return 2.5 * x - 1; }, -4.0, h), 2.5, 1e-9);
  const double x[2] = {1.0, 2.0};
  const auto g = finite_diff([](std::span<const double> p) { return p[0] * p[1]; }, x, 1e-4);
  EXPECT_NEAR(g[0], 2.0, 1e-9);
  EXPECT_NEAR(g[1], 1.0, 1e-9);
}

TEST(FiniteDiff, Errors) {
  EXPECT_THROW(finite_diff_scalar([](double x) { return x; }, 0.0, 0.0), std::invalid_argument);
  EXPECT_THROW(finite_diff_scalar([](double x) { return std::log(x); }, 0.0, 1e-3), std::domain_error);
}

TEST(KlQuadrature, EqualDistributionsGiveZero) {
  EXPECT_NEAR(kl_quadrature(0.99, 1.0, 1.0, 0.01), 0.0, 1e-9);
  EXPECT_NEAR(kl_discrete_sum(0.99, 5, 0.01), 0.0, 1e-12);
}

TEST(KlQuadrature, MatchesClosedFormAndConverges) {
  EXPECT_NEAR(kl_quadrature(0.5, 0.5, 1.0, 0.01), kl_continuous_block(0.5, 0.5, 1.0, 0.01), 1e-6);
  EXPECT_LT(std::abs(kl_quadrature(0.5, 0.5, 1.0, 0.01, 10000) - kl_quadrature(0.5, 0.5, 1.0, 0.01, 20000)),
            1e-8);
  EXPECT_THROW(kl_quadrature(0.5, 0.5, 1.0, 0.01, 10), std::invalid_argument);
}

TEST(Mixture, ConstantAndStepLosses) {
  const auto c = exact_mixture_loss_and_grads([](double) { return 1.7; }, 0.4, 0.5);
  EXPECT_NEAR(c.loss, 1.7, 1e-12);
  EXPECT_NEAR(c.d_pi, 0.0, 1e-12);
  EXPECT_NEAR(c.d_alpha, 0.0, 1e-9);
  const auto s = exact_mixture_loss_and_grads([](double a) { return a == 0.0 ? 2.0 : 1.0; }, 0.4, 0.5);
  EXPECT_EQ(s.d_pi, -1.0);
}

TEST(Mixture, TestbedRegressionFixture) {
  const Testbed tb = Testbed::make();
  const auto m = exact_mixture_loss_and_grads([&](double a) { return tb.loss_at(a); }, 0.5, 0.9);
  // Frozen after the first computation.
  EXPECT_NEAR(m.loss, 5.3289823835858652, 1e-10);
  EXPECT_NEAR(m.d_pi, -0.023292961951373314, 1e-10);
  EXPECT_NEAR(m.d_alpha, 0.21123025932823222, 1e-7);
}

TEST(Testbed, AlphaGradientMatchesFiniteDifference) {
  const Testbed tb = Testbed::make();
  const auto th = tb.theta(1.0, 0.6);
  const auto st = realize(th, {1}, {0.7});
  const double fd = finite_diff_scalar([&](double al) {
    return tb.loss_and_alpha_grad(tb.theta(1.0, al), realize(tb.theta(1.0, al), {1}, {0.7})).first;
  }, 0.6, 1e-6);
  EXPECT_NEAR(tb.loss_and_alpha_grad(th, st).second, fd, 1e-6);
}

TEST(Report, PassFlagFollowsTolerance) {
  EXPECT_TRUE(make_report("a", 1.0, 1.0 + 1e-7, 1e-6).pass);
  EXPECT_FALSE(make_report("a", 1.0, 1.1, 1e-6).pass);
  const auto r = make_report("r", 200.0, 201.0, 0.01, true);
  EXPECT_TRUE(r.uses_rel);
  EXPECT_NEAR(r.rel_err, 1.0 / 201.0, 1e-15);
  EXPECT_TRUE(r.pass);
}

TEST(Suites, KlAndRegGridPass) {
  const auto kl = check_kl_grid();
  EXPECT_GE(kl.size(), 45u);
  for (const auto& r : kl) EXPECT_TRUE(r.pass) << r.name << " err " << r.abs_err;
  for (const auto& r : check_reg_grad()) EXPECT_TRUE(r.pass) << r.name << " rel " << r.rel_err;
}

TEST(Suites, RegDescentReachesPriorMode) {
  RegConfig cfg;
  const auto d = reg_descent(default_spec(), cfg);
  EXPECT_TRUE(d.converged);
  EXPECT_LE(d.steps, 10000u);
}
