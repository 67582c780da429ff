#pragma once

// The learnable augmentation distribution: a composition g = g_1 o ... o g_K
// of stochastic blocks. Block i applies a transform with probability pi_i and
// the identity otherwise. Continuous blocks draw a = alpha_i * eps with
// eps ~ U[-1, 1]; discrete blocks draw uniformly from N_i options, one of
// which is the identity.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "scale/family.hpp"
#include "scale/rng.hpp"
#include "scale/warp.hpp"

namespace scale {

inline constexpr double kAlphaFloor = 1e-4;
inline constexpr int kDefaultCropPad = 4;

enum class BlockKind { continuous, discrete };

struct AugBlock {
  Family family = Family::rotation;
  BlockKind kind = BlockKind::continuous;
  double pi = 0.0;
  double alpha = 0.0;  // continuous only
  double a_max = 0.0;  // continuous only
  int n_support = 0;   // discrete only

  static AugBlock continuous(Family f, double pi, double alpha, double a_max) {
    return {f, BlockKind::continuous, pi, alpha, a_max, 0};
  }
  static AugBlock discrete(Family f, double pi, int n_support) {
    return {f, BlockKind::discrete, pi, 0.0, 0.0, n_support};
  }
  static AugBlock crop(double pi, int pad = kDefaultCropPad) {
    return discrete(Family::crop, pi, (2 * pad + 1) * (2 * pad + 1));
  }

  [[nodiscard]] bool is_continuous() const noexcept {
    return kind == BlockKind::continuous;
  }

  friend bool operator==(const AugBlock&, const AugBlock&) = default;

  /// Padding of a crop block, recovered from its (2 pad + 1)^2 support.
  [[nodiscard]] int crop_pad() const {
    const int side = static_cast<int>(std::lround(std::sqrt(n_support)));
    if (side * side != n_support || side % 2 == 0)
      throw std::invalid_argument(
          "crop block n_support must be an odd square (2 pad + 1)^2");
    return (side - 1) / 2;
  }

  void validate() const {
    const std::string name(to_string(family));
    if (!(pi >= 0.0 && pi <= 1.0))
      throw std::invalid_argument("block " + name + ": pi must lie in [0, 1]");
    if (is_continuous()) {
      if (!scale::is_continuous(family))
        throw std::invalid_argument("block " + name +
                                    ": family has no continuous range");
      if (!(a_max > 0.0))
        throw std::invalid_argument("block " + name + ": a_max must be > 0");
      if (!(alpha > 0.0 && alpha <= a_max))
        throw std::invalid_argument("block " + name +
                                    ": alpha must lie in (0, a_max]");
    } else {
      if (scale::is_continuous(family))
        throw std::invalid_argument("block " + name + ": family is continuous");
      if (n_support < 2)
        throw std::invalid_argument("block " + name + ": n_support must be >= 2");
      if ((family == Family::rot180 || family == Family::hflip) &&
          n_support != 2)
        throw std::invalid_argument("block " + name + ": n_support must be 2");
      if (family == Family::crop) (void)crop_pad();
    }
  }
};

struct AugTheta {
  std::vector<AugBlock> blocks;

  [[nodiscard]] std::size_t size() const noexcept { return blocks.size(); }

  friend bool operator==(const AugTheta&, const AugTheta&) = default;

  [[nodiscard]] std::size_t k_parametric() const noexcept {
    std::size_t k = 0;
    while (k < blocks.size() && blocks[k].is_continuous()) ++k;
    return k;
  }

  [[nodiscard]] std::optional<std::size_t> find(Family f) const noexcept {
    for (std::size_t i = 0; i < blocks.size(); ++i)
      if (blocks[i].family == f) return i;
    return std::nullopt;
  }

  void validate() const {
    if (blocks.empty())
      throw std::invalid_argument("augmentation spec needs at least one block");
    const std::size_t k = k_parametric();
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      blocks[i].validate();
      if (i >= k && blocks[i].is_continuous())
        throw std::invalid_argument(
            "continuous blocks must precede all discrete blocks");
      if (blocks[i].family == Family::crop && i + 1 != blocks.size())
        throw std::invalid_argument("the crop block must be the last block");
    }
  }
};

/// One realized g ~ Q_theta.
struct SampledTransform {
  std::vector<std::uint8_t> applied;  // t_i
  std::vector<double> draw;   // eps in [-1, 1] or a discrete index
  std::vector<double> param;  // realized a_i of affine blocks (0 if skipped)
  Mat3 matrix = Mat3::Identity();
  std::optional<std::pair<int, int>> crop_offset;  // (dx, dy)

  [[nodiscard]] bool any_affine(const AugTheta& theta) const {
    for (std::size_t i = 0; i < applied.size(); ++i)
      if (applied[i] && is_affine(theta.blocks[i].family)) return true;
    return false;
  }
};

/// The seven-block default: rotation, scale-x, scale-y, shear-x (continuous),
/// rot180, hflip and crop (discrete); pi = 1/7, alpha = 0.1.
inline AugTheta default_spec() {
  constexpr double pi0 = 1.0 / 7.0;
  constexpr double alpha0 = 0.1;
  AugTheta t;
  t.blocks = {
      AugBlock::continuous(Family::rotation, pi0, alpha0, std::numbers::pi),
      AugBlock::continuous(Family::scale_x, pi0, alpha0, 1.0),
      AugBlock::continuous(Family::scale_y, pi0, alpha0, 1.0),
      AugBlock::continuous(Family::shear_x, pi0, alpha0, 1.0),
      AugBlock::discrete(Family::rot180, pi0, 2),
      AugBlock::discrete(Family::hflip, pi0, 2),
      AugBlock::crop(pi0),
  };
  return t;
}

/// Parameter value a discrete draw maps to (angle, flip sign or crop index).
inline double discrete_param(Family f, std::size_t index) {
  switch (f) {
    case Family::rot180: return index == 0 ? 0.0 : std::numbers::pi;
    case Family::hflip: return index == 0 ? 1.0 : -1.0;
    default: return static_cast<double>(index);
  }
}

inline std::pair<int, int> crop_offset_from_index(std::size_t index, int pad) {
  const int side = 2 * pad + 1;
  const int i = static_cast<int>(index);
  return {i % side - pad, i / side - pad};
}

/// Builds the transform for given application flags and raw draws.
inline SampledTransform realize(const AugTheta& theta,
                                std::vector<std::uint8_t> applied,
                                std::vector<double> draw) {
  const std::size_t K = theta.size();
  if (applied.size() != K || draw.size() != K)
    throw std::invalid_argument("realize: flag/draw length must equal K");
  SampledTransform st;
  st.applied = std::move(applied);
  st.draw = std::move(draw);
  st.param.assign(K, 0.0);
  for (std::size_t i = 0; i < K; ++i) {
    if (!st.applied[i]) continue;
    const AugBlock& b = theta.blocks[i];
    if (b.family == Family::crop) {
      st.crop_offset = crop_offset_from_index(
          static_cast<std::size_t>(st.draw[i]), b.crop_pad());
      st.param[i] = st.draw[i];
      continue;
    }
    const double a = b.is_continuous()
                         ? b.alpha * st.draw[i]
                         : discrete_param(b.family,
                                          static_cast<std::size_t>(st.draw[i]));
    st.param[i] = a;
    st.matrix = st.matrix * affine_matrix(b.family, a);
  }
  return st;
}

/// Draws g ~ Q_theta. Block i uses the child stream `stream.split(i)`, which
/// always yields the Bernoulli uniform first and the value draw second, so
/// the values drawn do not depend on pi (common random numbers).
inline SampledTransform sample_transform(const AugTheta& theta,
                                         const Stream& stream) {
  const std::size_t K = theta.size();
  std::vector<std::uint8_t> applied(K, 0);
  std::vector<double> draw(K, 0.0);
  for (std::size_t i = 0; i < K; ++i) {
    const AugBlock& b = theta.blocks[i];
    Stream s = stream.split(i);
    applied[i] = s.bernoulli(b.pi) ? 1 : 0;
    draw[i] = b.is_continuous()
                  ? s.uniform(-1.0, 1.0)
                  : static_cast<double>(
                        s.index(static_cast<std::uint64_t>(b.n_support)));
  }
  return realize(theta, std::move(applied), std::move(draw));
}

/// d matrix / d a_s for an applied affine block s: the ordered product with
/// block s's factor replaced by its derivative.
inline Mat3 matrix_derivative(const AugTheta& theta, const SampledTransform& st,
                              std::size_t s) {
  Mat3 d = Mat3::Identity();
  for (std::size_t i = 0; i < theta.size(); ++i) {
    if (!st.applied[i] || !is_affine(theta.blocks[i].family)) continue;
    const Family f = theta.blocks[i].family;
    d = d * (i == s ? affine_matrix_derivative(f, st.param[i])
                    : affine_matrix(f, st.param[i]));
  }
  return d;
}

/// Projects pi_i onto [c, 1 - c] and alpha_i onto [alpha_floor, a_max].
inline AugTheta clamp_theta(AugTheta theta, double c,
                            double alpha_floor = kAlphaFloor) {
  if (!(c >= 0.0 && c < 0.5))
    throw std::invalid_argument("clamp_theta: c must lie in [0, 0.5)");
  for (AugBlock& b : theta.blocks) {
    b.pi = std::min(std::max(b.pi, c), 1.0 - c);
    if (b.is_continuous())
      b.alpha = std::min(std::max(b.alpha, alpha_floor), b.a_max);
  }
  return theta;
}

}  // namespace scale
