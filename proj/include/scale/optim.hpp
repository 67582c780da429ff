#pragma once

// First-order optimizers with cosine annealing and decoupled weight decay.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace scale {

enum class OptimizerKind { sgd_nesterov, adam };

inline const char* to_string(OptimizerKind k) {
  return k == OptimizerKind::adam ? "adam" : "sgd-nesterov";
}

inline OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd-nesterov") return OptimizerKind::sgd_nesterov;
  throw std::invalid_argument("unknown optimizer '" + s + "'");
}

struct OptimState {
  OptimizerKind kind = OptimizerKind::adam;
  double lr0 = 1e-3;
  double momentum = 0.9;  // sgd-nesterov
  double beta1 = 0.9;     // adam
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  std::size_t horizon = 0;  // T of the cosine schedule; 0 keeps lr constant
  std::size_t step = 0;
  std::vector<double> m;  // momentum buffer / first moment
  std::vector<double> v;  // second moment (adam)

  /// lr0 * (1 + cos(pi t / T)) / 2, held at 0 once t >= T.
  [[nodiscard]] double lr_at(std::size_t t) const {
    if (horizon == 0) return lr0;
    if (t >= horizon) return 0.0;
    return lr0 * 0.5 *
           (1.0 + std::cos(std::numbers::pi * static_cast<double>(t) /
                           static_cast<double>(horizon)));
  }

  void reset(std::size_t p) {
    step = 0;
    m.assign(p, 0.0);
    v.assign(kind == OptimizerKind::adam ? p : 0, 0.0);
  }
};

/// One update of `w` along `grad`. Weight decay shrinks w by lr * wd * w
/// outside the gradient, so it never enters the adaptive moments.
template <typename T>
void optimizer_step(OptimState& st, std::span<T> w,
                    std::span<const double> grad) {
  if (grad.size() != w.size())
    throw std::invalid_argument("optimizer_step: gradient length mismatch");
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!std::isfinite(grad[i]))
      throw std::runtime_error("optimizer_step: non-finite gradient at index " +
                               std::to_string(i) + ", step " +
                               std::to_string(st.step));
  if (st.m.size() != w.size() ||
      (st.kind == OptimizerKind::adam && st.v.size() != w.size()))
    throw std::invalid_argument("optimizer_step: buffers do not match weights");

  const double lr = st.lr_at(st.step);
  const double decay = lr * st.weight_decay;
  if (st.kind == OptimizerKind::adam) {
    const double t = static_cast<double>(st.step + 1);
    const double c1 = 1.0 - std::pow(st.beta1, t);
    const double c2 = 1.0 - std::pow(st.beta2, t);
    for (std::size_t i = 0; i < w.size(); ++i) {
      st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * grad[i];
      st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * grad[i] * grad[i];
      const double mhat = st.m[i] / c1, vhat = st.v[i] / c2;
      double wi = static_cast<double>(w[i]);
      wi -= lr * mhat / (std::sqrt(vhat) + st.eps) + decay * wi;
      w[i] = static_cast<T>(wi);
    }
  } else {
    for (std::size_t i = 0; i < w.size(); ++i) {
      st.m[i] = st.momentum * st.m[i] + grad[i];
      double wi = static_cast<double>(w[i]);
      wi -= lr * (grad[i] + st.momentum * st.m[i]) + decay * wi;
      w[i] = static_cast<T>(wi);
    }
  }
  ++st.step;
}

}  // namespace scale
