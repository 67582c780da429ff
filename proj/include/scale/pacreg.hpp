#pragma once

// PAC-Bayes regularizer Reg(theta) and the bound arithmetic around it.
//
// Prior per block:      beta * delta_0 + (1 - beta) * U[-A, A]   (or U over N)
// Posterior per block:  (1 - pi) * delta_0 + pi * U[-alpha, alpha]
// All logarithms are natural.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "scale/augspec.hpp"

namespace scale {

enum class RegSchedule { constant, linear_decay };

struct RegConfig {
  double beta = 0.01;
  double lambda_reg = 0.006;
  RegSchedule schedule = RegSchedule::constant;

  void validate() const {
    if (!(beta > 0.0 && beta < 1.0))
      throw std::invalid_argument("reg.beta must lie in (0, 1)");
    if (!(lambda_reg >= 0.0))
      throw std::invalid_argument("reg.lambda_reg must be >= 0");
  }

  /// lambda_reg at `epoch` of a joint phase lasting `epochs` epochs.
  [[nodiscard]] double lambda_at(std::size_t epoch, std::size_t epochs) const {
    if (schedule == RegSchedule::constant || epochs == 0) return lambda_reg;
    const double frac =
        static_cast<double>(epoch) / static_cast<double>(epochs);
    return lambda_reg * std::max(0.0, 1.0 - frac);
  }
};

struct BoundConfig {
  double n = 1.0;           // sample count
  double p = 1.0;           // parameter count
  double prior_std = 1.0;   // s
  double lipschitz = 1.0;   // L
  double delta = 0.05;
  double loss_range = 0.0;  // b - a for the bounded-loss variant; 0 disables

  void validate() const {
    if (!(n >= 1.0)) throw std::invalid_argument("bound.n must be >= 1");
    if (!(p >= 1.0)) throw std::invalid_argument("bound.p must be >= 1");
    if (!(prior_std > 0.0))
      throw std::invalid_argument("bound.prior_std must be > 0");
    if (!(lipschitz >= 0.0))
      throw std::invalid_argument("bound.lipschitz must be >= 0");
    if (!(delta > 0.0 && delta < 1.0))
      throw std::invalid_argument("bound.delta must lie in (0, 1)");
  }
};

namespace detail {

// x * log(x / y) with 0 * log 0 := 0.
inline double xlogxy(double x, double y) {
  return x == 0.0 ? 0.0 : x * std::log(x / y);
}

inline double bernoulli_kl(double q, double p) {
  return xlogxy(1.0 - q, 1.0 - p) + xlogxy(q, p);
}

inline void check_unit(double pi, double beta) {
  if (!(pi >= 0.0 && pi <= 1.0))
    throw std::domain_error("KL: pi must lie in [0, 1]");
  if (!(beta > 0.0 && beta < 1.0))
    throw std::domain_error("KL: beta must lie in (0, 1)");
}

}  // namespace detail

/// KL(B(pi) || B(1 - beta)) + pi * KL(U[-alpha, alpha] || U[-A, A]).
inline double kl_continuous_block(double pi, double alpha, double a_max,
                                  double beta) {
  detail::check_unit(pi, beta);
  if (!(alpha > 0.0) || !(alpha <= a_max))
    throw std::domain_error("KL: alpha must lie in (0, a_max]");
  return detail::bernoulli_kl(pi, 1.0 - beta) + pi * std::log(a_max / alpha);
}

/// KL(B((1 - 1/N) pi) || B((1 - 1/N)(1 - beta))).
inline double kl_discrete_block(double pi, int n_support, double beta) {
  detail::check_unit(pi, beta);
  if (n_support < 2) throw std::domain_error("KL: n_support must be >= 2");
  const double f = 1.0 - 1.0 / static_cast<double>(n_support);
  return detail::bernoulli_kl(f * pi, f * (1.0 - beta));
}

inline double kl_block(const AugBlock& b, double beta) {
  return b.is_continuous() ? kl_continuous_block(b.pi, b.alpha, b.a_max, beta)
                           : kl_discrete_block(b.pi, b.n_support, beta);
}

inline double reg_theta(const AugTheta& theta, const RegConfig& cfg) {
  double r = 0.0;
  for (const AugBlock& b : theta.blocks) r += kl_block(b, cfg.beta);
  return r;
}

struct BlockGrad {
  double d_pi = 0.0;
  double d_alpha = 0.0;  // zero for discrete blocks
};

/// Analytic partial derivatives of Reg(theta); pi must be interior.
inline std::vector<BlockGrad> reg_grad(const AugTheta& theta,
                                       const RegConfig& cfg) {
  const double beta = cfg.beta;
  std::vector<BlockGrad> g(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const AugBlock& b = theta.blocks[i];
    if (!(b.pi > 0.0 && b.pi < 1.0))
      throw std::domain_error("reg_grad: pi of block " +
                              std::string(to_string(b.family)) +
                              " is on the boundary; clamp first");
    if (b.is_continuous()) {
      g[i].d_pi = std::log(b.pi / (1.0 - beta)) -
                  std::log((1.0 - b.pi) / beta) + std::log(b.a_max / b.alpha);
      g[i].d_alpha = -b.pi / b.alpha;
    } else {
      const double f = 1.0 - 1.0 / static_cast<double>(b.n_support);
      const double q = f * b.pi, p = f * (1.0 - beta);
      g[i].d_pi = f * (std::log(q / p) - std::log((1.0 - q) / (1.0 - p)));
    }
  }
  return g;
}

struct BoundTerms {
  double sigma_star = 0.0;
  double c_n = 0.0;          // sub-Gaussian form, variance factor s^2
  double c_n_bounded = 0.0;  // bounded-loss form, f = (b - a)^2 / 8 at lambda = sqrt(n)
};

/// sigma*(sqrt(n)) and the constant c_n of the bound at lambda = sqrt(n).
inline BoundTerms bound_terms(const BoundConfig& cfg) {
  cfg.validate();
  const double n = cfg.n, p = cfg.p, s = cfg.prior_std, L = cfg.lipschitz;
  const double lambda = std::sqrt(n);
  BoundTerms t;
  t.sigma_star = 1.0 / (std::sqrt(lambda * lambda * L * L / p + 1.0 / (s * s)) +
                        lambda * L / std::sqrt(p));
  if (L == 0.0)
    throw std::domain_error(
        "bound_terms: c_n diverges for lipschitz = 0 (sigma* = s)");
  const double common = p * std::log(2.0 * L * s * std::sqrt(n) / std::sqrt(p)) +
                        p * p / (8.0 * L * L * s * s * n) +
                        std::log(1.0 / cfg.delta) + p / 2.0;
  t.c_n = (common + s * s / 2.0) / std::sqrt(n);
  t.c_n_bounded =
      (common + cfg.loss_range * cfg.loss_range / 8.0) / std::sqrt(n);
  return t;
}

/// sigma* alone; well defined for L = 0 where it equals s.
inline double sigma_star(const BoundConfig& cfg) {
  const double lambda = std::sqrt(cfg.n), L = cfg.lipschitz;
  return 1.0 / (std::sqrt(lambda * lambda * L * L / cfg.p +
                          1.0 / (cfg.prior_std * cfg.prior_std)) +
                lambda * L / std::sqrt(cfg.p));
}

inline double squared_distance(std::span<const double> w,
                               std::span<const double> w0) {
  if (w.size() != w0.size())
    throw std::invalid_argument("weight vectors differ in length");
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double d = w[i] - w0[i];
    acc += d * d;
  }
  return acc;
}

struct BoundValue {
  double weight_norm_term = 0.0;  // ||w - w0||^2 / (2 s^2 sqrt(n))
  double reg_term = 0.0;          // Reg(theta) / sqrt(n)
  double value = 0.0;
};

/// R_n + (||w - w0||^2 / (2 s^2) + Reg(theta)) / sqrt(n) + c_n.
inline BoundValue pac_bound(double train_risk, double weight_dist_sq,
                            const AugTheta& theta, const RegConfig& reg_cfg,
                            const BoundConfig& bound_cfg) {
  const BoundTerms t = bound_terms(bound_cfg);
  const double sqrt_n = std::sqrt(bound_cfg.n);
  BoundValue b;
  b.weight_norm_term =
      weight_dist_sq / (2.0 * bound_cfg.prior_std * bound_cfg.prior_std) /
      sqrt_n;
  b.reg_term = reg_theta(theta, reg_cfg) / sqrt_n;
  b.value = train_risk + b.weight_norm_term + b.reg_term + t.c_n;
  return b;
}

inline BoundValue pac_bound(double train_risk, std::span<const double> w,
                            std::span<const double> w0, const AugTheta& theta,
                            const RegConfig& reg_cfg,
                            const BoundConfig& bound_cfg) {
  return pac_bound(train_risk, squared_distance(w, w0), theta, reg_cfg,
                   bound_cfg);
}

}  // namespace scale
