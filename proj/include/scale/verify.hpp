#pragma once

// Brute-force oracles for the closed forms and estimators, plus the check
// suites built on them. The oracles use quadrature, explicit sums and finite
// differences only; none of them call the code they check.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "scale/augspec.hpp"
#include "scale/gradest.hpp"
#include "scale/net.hpp"
#include "scale/pacreg.hpp"
#include "scale/transform.hpp"
#include "scale/warp.hpp"

namespace scale {

struct OracleReport {
  std::string name;
  double closed_form = 0.0;
  double oracle = 0.0;
  double abs_err = 0.0;
  double rel_err = 0.0;
  double tolerance = 0.0;
  bool uses_rel = false;  // which error the tolerance applies to
  bool pass = false;
};

inline OracleReport make_report(std::string name, double closed, double oracle,
                                double tol, bool rel = false,
                                double rel_floor = 1.0) {
  OracleReport r{std::move(name), closed, oracle, 0.0, 0.0, tol, rel, false};
  r.abs_err = std::abs(closed - oracle);
  r.rel_err = r.abs_err / std::max(std::abs(oracle), rel_floor);
  r.pass = (rel ? r.rel_err : r.abs_err) <= tol;
  return r;
}

// ------------------------------------------------------------ KL oracles

/// KL(Q || P) for Q = (1 - pi) delta_0 + pi U[-alpha, alpha] and
/// P = beta delta_0 + (1 - beta) U[-A, A]: the atom at 0 contributes
/// (1 - pi) log((1 - pi) / beta) exactly; the density part is a midpoint sum
/// of q log(q / p) over the support of q.
inline double kl_quadrature(double pi, double alpha, double a_max, double beta,
                            std::size_t grid_points = 10000) {
  if (grid_points < 1000)
    throw std::invalid_argument("kl_quadrature: need >= 1000 grid points");
  auto q = [&](double x) { return std::abs(x) <= alpha ? pi / (2.0 * alpha) : 0.0; };
  auto p = [&](double x) {
    return std::abs(x) <= a_max ? (1.0 - beta) / (2.0 * a_max) : 0.0;
  };
  double atom = 0.0;
  if (pi < 1.0) atom = (1.0 - pi) * std::log((1.0 - pi) / beta);
  const double dx = 2.0 * alpha / static_cast<double>(grid_points);
  double dens = 0.0;
  for (std::size_t k = 0; k < grid_points; ++k) {
    const double x = -alpha + (static_cast<double>(k) + 0.5) * dx;
    const double qx = q(x);
    if (qx > 0.0) dens += qx * std::log(qx / p(x)) * dx;
  }
  return atom + dens;
}

/// Explicit sum over the N outcomes of a discrete block, one of which (index
/// 0) is the identity.
inline double kl_discrete_sum(double pi, int n_support, double beta) {
  const double N = static_cast<double>(n_support);
  double kl = 0.0;
  for (int k = 0; k < n_support; ++k) {
    const double qk = (k == 0 ? 1.0 - pi : 0.0) + pi / N;
    const double pk = (k == 0 ? beta : 0.0) + (1.0 - beta) / N;
    if (qk > 0.0) kl += qk * std::log(qk / pk);
  }
  return kl;
}

// ------------------------------------------------------------ finite differences

/// Central differences of f at x, one coordinate at a time.
inline std::vector<double> finite_diff(const std::function<double(std::span<const double>)>& f,
                                       std::span<const double> x, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff: h must be > 0");
  std::vector<double> pt(x.begin(), x.end()), g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = pt[i];
    pt[i] = x0 + h;
    const double fp = f(pt);
    pt[i] = x0 - h;
    const double fm = f(pt);
    pt[i] = x0;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::domain_error("finite_diff: non-finite evaluation at coordinate " +
                              std::to_string(i));
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline double finite_diff_scalar(const std::function<double(double)>& f, double x,
                                 double h) {
  const double xs[1] = {x};
  return finite_diff([&](std::span<const double> p) { return f(p[0]); }, xs, h)[0];
}

// ------------------------------------------------------------ K = 1 testbed

/// One rotation block acting on a fixed 4x4 image read by a linear softmax
/// head. Small enough that every expectation can be computed by quadrature.
struct Testbed {
  Shape shape{1, 4, 4};
  std::vector<double> image;
  ModelParams<double> head;
  int label = 0;

  static Testbed make(std::uint64_t seed = 7) {
    Testbed tb;
    tb.image.resize(16);
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 4; ++x) {
        const double u = static_cast<double>(x) - 1.2, v = static_cast<double>(y) - 1.7;
        tb.image[y * 4 + x] = std::exp(-(u * u + 0.5 * v * v) / 2.0) + 0.3 * (u > 0);
      }
    tb.head.arch = Architecture::mlp(tb.shape, {}, 3);
    Stream s = Stream::derive(seed, {0x7465737462656400ULL});
    tb.head.w.resize(tb.head.arch.param_count());
    for (double& w : tb.head.w) w = s.uniform(-3.0, 3.0);
    tb.head.w0 = tb.head.w;
    return tb;
  }

  [[nodiscard]] AugTheta theta(double pi, double alpha) const {
    return AugTheta{{AugBlock::continuous(Family::rotation, pi, alpha, std::numbers::pi)}};
  }

  /// Loss after rotating by angle a.
  [[nodiscard]] double loss_at(double a) const {
    std::vector<double> x(16);
    warp_image<double>(image, shape, affine_matrix(Family::rotation, a), x);
    const Network<double> net(head.arch);
    Workspace<double> ws;
    std::vector<double> dl(3);
    return softmax_cross_entropy<double>(net.forward(head.w, x, ws),
                                         static_cast<std::size_t>(label), dl);
  }

  /// Loss of a sampled transform and dl/dalpha of the block.
  [[nodiscard]] std::pair<double, double> loss_and_alpha_grad(const AugTheta& th,
                                                               const SampledTransform& st) const {
    std::vector<double> x(16), pre;
    apply_transform<double>(image, shape, Geometry::image, th, st, x, &pre);
    const Network<double> net(head.arch);
    Workspace<double> ws;
    std::vector<double> dl(3), dx(16), dw(head.w.size(), 0.0);
    const double l = softmax_cross_entropy<double>(net.forward(head.w, x, ws),
                                                   static_cast<std::size_t>(label), dl);
    net.backward(head.w, ws, dl, dw, dx);
    const auto ga = transform_alpha_grads<double>(pre, shape, Geometry::image, th, st, dx);
    return {l, ga[0]};
  }
};

struct MixtureValue {
  double loss = 0.0;     // L(pi, alpha)
  double d_pi = 0.0;
  double d_alpha = 0.0;
};

/// L = (1 - pi) l(0) + pi E_{eps ~ U[-1,1]} l(alpha eps), the expectation by
/// a midpoint rule; dL/dpi exactly, dL/dalpha by central differences.
inline MixtureValue exact_mixture_loss_and_grads(const std::function<double(double)>& loss,
                                                 double pi, double alpha,
                                                 std::size_t grid = 10000,
                                                 double h = 1e-5) {
  auto expected_applied = [&](double al) {
    double acc = 0.0;
    for (std::size_t k = 0; k < grid; ++k) {
      const double eps = -1.0 + (static_cast<double>(k) + 0.5) * 2.0 / static_cast<double>(grid);
      acc += loss(al * eps);
    }
    return acc / static_cast<double>(grid);
  };
  const double l_skip = loss(0.0);
  const double e_apply = expected_applied(alpha);
  MixtureValue m;
  m.loss = (1.0 - pi) * l_skip + pi * e_apply;
  m.d_pi = e_apply - l_skip;
  m.d_alpha = pi * (expected_applied(alpha + h) - expected_applied(alpha - h)) / (2.0 * h);
  return m;
}

// ------------------------------------------------------------ check suites

/// KL closed forms against the oracles on the (pi, alpha / A, beta) grid.
inline std::vector<OracleReport> check_kl_grid() {
  std::vector<OracleReport> out;
  const double betas[] = {0.01, 0.1};
  const double pis[] = {0.0, 0.01, 0.25, 0.5, 0.9, 0.99};
  const double ratios[] = {0.1, 0.5, 1.0};
  const double a_maxes[] = {1.0, std::numbers::pi};
  const int supports[] = {2, 81};
  for (double beta : betas)
    for (double pi : pis) {
      for (double A : a_maxes)
        for (double r : ratios) {
          const double alpha = r * A;
          out.push_back(make_report(
              "kl_cont pi=" + std::to_string(pi) + " a/A=" + std::to_string(r) +
                  " A=" + std::to_string(A) + " beta=" + std::to_string(beta),
              kl_continuous_block(pi, alpha, A, beta), kl_quadrature(pi, alpha, A, beta), 1e-6));
        }
      for (int N : supports)
        out.push_back(make_report("kl_disc pi=" + std::to_string(pi) + " N=" +
                                      std::to_string(N) + " beta=" + std::to_string(beta),
                                  kl_discrete_block(pi, N, beta), kl_discrete_sum(pi, N, beta),
                                  1e-6));
    }
  return out;
}

/// reg_grad against central differences of reg_theta (h = 1e-6). The
/// relative error uses max(|fd|, 1) as denominator so that near-zero
/// partials are judged on absolute scale.
inline std::vector<OracleReport> check_reg_grad(double h = 1e-6) {
  std::vector<OracleReport> out;
  const double betas[] = {0.01, 0.1};
  const double pis[] = {0.1, 0.3, 0.5, 0.7, 0.9};
  const double ratios[] = {0.1, 0.5, 0.9};
  for (double beta : betas) {
    RegConfig cfg;
    cfg.beta = beta;
    for (double pi : pis)
      for (double r : ratios) {
        AugTheta th = default_spec();
        for (auto& b : th.blocks) {
          b.pi = pi;
          if (b.is_continuous()) b.alpha = r * b.a_max;
        }
        const auto g = reg_grad(th, cfg);
        for (std::size_t k = 0; k < th.size(); ++k) {
          const std::string tag = std::string(to_string(th.blocks[k].family)) +
                                  " pi=" + std::to_string(pi) + " r=" + std::to_string(r) +
                                  " beta=" + std::to_string(beta);
          const double fd_pi = finite_diff_scalar(
              [&](double v) {
                AugTheta t = th;
                t.blocks[k].pi = v;
                return reg_theta(t, cfg);
              },
              pi, h);
          out.push_back(make_report("d/dpi " + tag, g[k].d_pi, fd_pi, 1e-6, true));
          if (!th.blocks[k].is_continuous()) continue;
          const double fd_a = finite_diff_scalar(
              [&](double v) {
                AugTheta t = th;
                t.blocks[k].alpha = v;
                return reg_theta(t, cfg);
              },
              th.blocks[k].alpha, h);
          out.push_back(make_report("d/dalpha " + tag, g[k].d_alpha, fd_a, 1e-6, true));
        }
      }
  }
  return out;
}

namespace detail {

inline std::vector<double> smooth_image(const Shape& s, Stream& rng) {
  std::vector<double> img(s.size(), 0.0);
  for (std::size_t c = 0; c < s.channels; ++c)
    for (int bump = 0; bump < 3; ++bump) {
      const double cx = rng.uniform(0.0, static_cast<double>(s.width - 1));
      const double cy = rng.uniform(0.0, static_cast<double>(s.height - 1));
      const double amp = rng.uniform(0.3, 1.0), sig = rng.uniform(1.5, 3.0);
      for (std::size_t y = 0; y < s.height; ++y)
        for (std::size_t x = 0; x < s.width; ++x) {
          const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
          img[(c * s.height + y) * s.width + x] +=
              amp * std::exp(-(dx * dx + dy * dy) / (2.0 * sig * sig));
        }
    }
  return img;
}

// True when no sampling location of warp(M(a')) changes bilinear cell for
// a' in [a - h, a + h], i.e. the warp is smooth in a on that interval.
inline bool cells_stable(const Shape& s, const std::function<Mat3(double)>& mat,
                         double a, double h) {
  auto cells = [&](double av) {
    const Mat3 minv = mat(av).inverse();
    const double sx = static_cast<double>(s.width) / 2.0, sy = static_cast<double>(s.height) / 2.0;
    std::vector<long> out;
    for (std::size_t i = 0; i < s.height; ++i)
      for (std::size_t j = 0; j < s.width; ++j) {
        // normalized target coordinate of pixel (i, j)
        const double xn = (2.0 * static_cast<double>(j) + 1.0) / static_cast<double>(s.width) - 1.0;
        const double yn = (2.0 * static_cast<double>(i) + 1.0) / static_cast<double>(s.height) - 1.0;
        const double xs = minv(0, 0) * xn + minv(0, 1) * yn + minv(0, 2);
        const double ys = minv(1, 0) * xn + minv(1, 1) * yn + minv(1, 2);
        out.push_back(static_cast<long>(std::floor((xs + 1.0) * sx - 0.5)));
        out.push_back(static_cast<long>(std::floor((ys + 1.0) * sy - 0.5)));
      }
    return out;
  };
  const auto c0 = cells(a - h), c1 = cells(a), c2 = cells(a + h);
  return c0 == c1 && c1 == c2;
}

}  // namespace detail

/// Per affine family, `configs` random smooth configurations on an 8x8
/// two-channel image: grad_a against central differences (h = 1e-4,
/// abs 1e-4) and the adjoint dot-product identity (rel 1e-6).
inline std::vector<OracleReport> check_warp_grads(std::size_t configs = 20,
                                                  std::uint64_t seed = 11) {
  std::vector<OracleReport> out;
  const Shape s{2, 8, 8};
  const double h = 1e-4;
  const Family fams[] = {Family::rotation, Family::scale_x, Family::scale_y,
                         Family::shear_x,  Family::rot180,  Family::hflip};
  for (Family f : fams) {
    Stream rng = Stream::derive(seed, {static_cast<std::uint64_t>(f)});
    for (std::size_t c = 0; c < configs; ++c) {
      const auto img = detail::smooth_image(s, rng);
      std::vector<double> G(s.size());
      for (double& g : G) g = rng.uniform(-1.0, 1.0);
      // A second fixed factor makes the composed matrix generic.
      const Mat3 pre = affine_matrix(Family::rotation, rng.uniform(-0.3, 0.3));
      double a = 0.0;
      auto mat = [&](double av) { return Mat3(pre * affine_matrix(f, av)); };
      for (int tries = 0;; ++tries) {
        if (tries > 1000) throw std::runtime_error("check_warp_grads: no smooth point");
        switch (f) {
          case Family::rot180: a = std::numbers::pi + rng.uniform(-0.2, 0.2); break;
          case Family::hflip: a = rng.uniform(0.0, 1.0) < 0.5 ? -1.0 : 1.0; break;
          default: a = rng.uniform(-0.5, 0.5);
        }
        if (detail::cells_stable(s, mat, a, h)) break;
        if (f == Family::hflip) a += rng.uniform(-0.05, 0.05);
        if (detail::cells_stable(s, mat, a, h)) break;
      }
      auto objective = [&](double av) {
        std::vector<double> o(s.size());
        warp_image<double>(img, s, mat(av), o);
        double acc = 0.0;
        for (std::size_t i = 0; i < o.size(); ++i) acc += o[i] * G[i];
        return acc;
      };
      const Mat3 dm[1] = {pre * affine_matrix_derivative(f, a)};
      double ga[1] = {0.0};
      warp_image_param_grads<double>(img, s, mat(a), dm, G, ga);
      const std::string tag = std::string(to_string(f)) + " #" + std::to_string(c);
      out.push_back(make_report("grad_a " + tag, ga[0], finite_diff_scalar(objective, a, h), 1e-4));

      std::vector<double> warped(s.size()), adj(s.size(), 0.0);
      warp_image<double>(img, s, mat(a), warped);
      warp_image_adjoint<double>(G, s, mat(a), adj);
      double lhs = 0.0, rhs = 0.0;
      for (std::size_t i = 0; i < s.size(); ++i) {
        lhs += warped[i] * G[i];
        rhs += img[i] * adj[i];
      }
      out.push_back(make_report("adjoint " + tag, rhs, lhs, 1e-6, true, 1e-12));
    }
  }
  return out;
}

/// Coordinate finite differences of the mean cross-entropy for a small MLP
/// and a small 5-conv CNN: `coords` random coordinates each, h = 1e-5,
/// rel err <= 1e-4 with denominator max(|fd|, 1e-6).
inline std::vector<OracleReport> check_net_grads(std::size_t coords = 200,
                                                 std::uint64_t seed = 5) {
  std::vector<OracleReport> out;
  const double h = 1e-5;
  struct Case {
    std::string name;
    Architecture arch;
  };
  const Case cases[] = {
      {"mlp", Architecture::mlp({1, 6, 6}, {12, 8}, 4)},
      {"cnn5", Architecture::cnn5({1, 8, 8}, {3, 3, 4, 4, 4}, 4)},
  };
  for (const auto& cs : cases) {
    Stream rng = Stream::derive(seed, {cs.arch.param_count()});
    auto params = init_params<double>(cs.arch, rng.split(1));
    for (double& w : params.w) w += 0.05 * rng.uniform(-1.0, 1.0);  // nonzero biases
    ImageBatch<double> batch(3, cs.arch.input.channels, cs.arch.input.height, cs.arch.input.width);
    for (double& v : batch.data) v = rng.uniform(0.0, 1.0);
    std::vector<int> labels = {0, 1, 3};
    const auto lg = loss_and_grad<double>(params, batch, labels, 1, false);
    auto f = [&](std::span<const double> w) {
      ModelParams<double> p = params;
      p.w.assign(w.begin(), w.end());
      return loss_and_grad<double>(p, batch, labels, 1, false).loss;
    };
    std::vector<double> w(params.w.begin(), params.w.end());
    for (std::size_t k = 0; k < coords; ++k) {
      const std::size_t j = rng.index(w.size());
      const double fd = finite_diff_scalar(
          [&](double v) {
            std::vector<double> ww = w;
            ww[j] = v;
            return f(ww);
          },
          w[j], h);
      out.push_back(make_report(cs.name + " w[" + std::to_string(j) + "]", lg.grad[j], fd,
                                1e-4, true, 1e-6));
    }
    // Input gradient, the quantity the alpha chain consumes.
    const auto lgx = loss_and_grad<double>(params, batch, labels, 1, true);
    for (std::size_t k = 0; k < 10; ++k) {
      const std::size_t j = rng.index(batch.sample_size());
      const double fd = finite_diff_scalar(
          [&](double v) {
            ImageBatch<double> b = batch;
            b.data[j] = v;
            return loss_and_grad<double>(params, b, labels, 1, false).per_sample[0];
          },
          batch.data[j], h);
      out.push_back(make_report(cs.name + " dx[" + std::to_string(j) + "]",
                                lgx.input_grad.data[j], fd, 1e-4, true, 1e-6));
    }
  }
  return out;
}

struct EstimatorStats {
  double mean = 0.0;
  double var = 0.0;  // sample variance of one draw
  double se = 0.0;   // standard error of the mean
};

inline EstimatorStats summarize(const std::vector<double>& v) {
  EstimatorStats s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  for (double x : v) s.var += (x - s.mean) * (x - s.mean);
  s.var /= static_cast<double>(v.size() - 1);
  s.se = std::sqrt(s.var / static_cast<double>(v.size()));
  return s;
}

/// R independent draws of the three estimators on the testbed at M samples.
struct EstimatorDraws {
  std::vector<double> pi_paired, pi_shared, alpha_shared;
};

inline EstimatorDraws draw_estimators(const Testbed& tb, double pi, double alpha,
                                      std::size_t M, std::size_t R, std::uint64_t seed,
                                      bool with_paired = true) {
  const AugTheta th = tb.theta(pi, alpha);
  EstimatorDraws d;
  const TransformLoss loss = [&](std::size_t, const SampledTransform& g) {
    return tb.loss_and_alpha_grad(th, g).first;
  };
  for (std::size_t r = 0; r < R; ++r) {
    const Stream base = Stream::derive(seed, {M, r});
    std::vector<SampleLossRecord> recs(M);
    for (std::size_t j = 0; j < M; ++j) {
      const auto st = sample_transform(th, base.split(1).split(0).split(j));
      const auto [l, ga] = tb.loss_and_alpha_grad(th, st);
      recs[j] = {0, j, l, st.applied, {st.applied[0] ? ga : 0.0}};
    }
    d.pi_shared.push_back(pi_grads_shared(recs, th)[0]);
    d.alpha_shared.push_back(alpha_grads_shared(recs, th)[0]);
    if (with_paired) d.pi_paired.push_back(pi_grad_paired(th, 0, 1, M, loss, base.split(2)));
  }
  return d;
}

/// Expected value of the shared pi estimator at M samples: the empty-group
/// rule makes it E_apply - E_skip only in the large-M limit.
inline double shared_pi_expectation(double pi, std::size_t M, double l_skip, double e_apply) {
  const double pM = std::pow(pi, static_cast<double>(M));
  const double qM = std::pow(1.0 - pi, static_cast<double>(M));
  return (1.0 - pM - qM) * (e_apply - l_skip) + pM * e_apply - qM * l_skip;
}

/// Statistical calibration of the estimators at the six (pi, alpha) settings.
inline std::vector<OracleReport> check_estimators(std::size_t R = 10000,
                                                  std::uint64_t seed = 3) {
  std::vector<OracleReport> out;
  const Testbed tb = Testbed::make();
  const auto loss = [&](double a) { return tb.loss_at(a); };
  const double pis[] = {0.2, 0.5, 0.8};
  const double alphas[] = {0.3, 0.9};
  auto within = [&](std::string name, const EstimatorStats& s, double target) {
    OracleReport r = make_report(std::move(name), s.mean, target, 3.0 * s.se);
    out.push_back(r);
  };
  for (double pi : pis)
    for (double alpha : alphas) {
      const auto ex = exact_mixture_loss_and_grads(loss, pi, alpha);
      const std::string tag = " pi=" + std::to_string(pi) + " alpha=" + std::to_string(alpha);
      const auto d4 = draw_estimators(tb, pi, alpha, 4, R, seed);
      const auto d16 = draw_estimators(tb, pi, alpha, 16, R, seed);
      const auto d64 = draw_estimators(tb, pi, alpha, 64, R / 4, seed, false);
      const auto pp4 = summarize(d4.pi_paired), ps4 = summarize(d4.pi_shared);
      const auto a4 = summarize(d4.alpha_shared);
      within("pi paired M=4" + tag, pp4, ex.d_pi);
      within("pi shared M=64" + tag, summarize(d64.pi_shared), ex.d_pi);
      within("pi shared M=4 vs its expectation" + tag, ps4,
             shared_pi_expectation(pi, 4, loss(0.0), ex.d_pi + loss(0.0)));
      within("alpha shared M=4" + tag, a4, ex.d_alpha);
      const double rp = pp4.var / summarize(d16.pi_paired).var;
      const double ra = a4.var / summarize(d16.alpha_shared).var;
      OracleReport vp{"var ratio pi paired M4/M16" + tag, rp, 4.0, std::abs(rp - 4.0), 0.0, 1.0, false,
                      rp >= 3.0 && rp <= 5.0};
      OracleReport va{"var ratio alpha shared M4/M16" + tag, ra, 4.0, std::abs(ra - 4.0), 0.0, 1.0, false,
                      ra >= 3.0 && ra <= 5.0};
      out.push_back(vp);
      out.push_back(va);
    }
  return out;
}

struct DescentResult {
  AugTheta theta;
  std::size_t steps = 0;
  bool converged = false;
};

/// Projected gradient descent on Reg(theta) alone until every pi is within
/// `tol` of 1 - beta and every alpha within `tol` of A.
inline DescentResult reg_descent(AugTheta theta, const RegConfig& cfg, double eta = 0.005,
                                 std::size_t max_steps = 10000, double tol = 1e-3) {
  DescentResult r;
  auto done = [&](const AugTheta& t) {
    for (const auto& b : t.blocks) {
      if (std::abs(b.pi - (1.0 - cfg.beta)) > tol) return false;
      if (b.is_continuous() && std::abs(b.alpha - b.a_max) > tol) return false;
    }
    return true;
  };
  for (; r.steps < max_steps && !done(theta); ++r.steps) {
    const auto g = reg_grad(theta, cfg);
    for (std::size_t k = 0; k < theta.size(); ++k) {
      theta.blocks[k].pi -= eta * g[k].d_pi;
      if (theta.blocks[k].is_continuous()) theta.blocks[k].alpha -= eta * g[k].d_alpha;
    }
    theta = clamp_theta(theta, 1e-6);
  }
  r.converged = done(theta);
  r.theta = theta;
  return r;
}

}  // namespace scale
