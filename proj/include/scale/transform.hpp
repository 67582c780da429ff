#pragma once

// Applying a sampled transform to one sample, and the reparametrized
// derivative of that application with respect to each range alpha_i.

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "scale/augspec.hpp"
#include "scale/data.hpp"
#include "scale/warp.hpp"

namespace scale {

/// Crop padding of the spec's crop block, or 0 without one.
inline int spec_crop_pad(const AugTheta& theta) {
  const auto idx = theta.find(Family::crop);
  return idx ? theta.blocks[*idx].crop_pad() : 0;
}

/// out = g(x). Images are cropped first, then warped once by the composed
/// matrix; `pre_warp` (if given) receives the cropped image that the warp
/// reads from, which the alpha-chain needs later.
template <typename T>
void apply_transform(std::span<const T> x, const Shape& s, Geometry geo,
                     const AugTheta& theta, const SampledTransform& st,
                     std::span<T> out, std::vector<T>* pre_warp = nullptr) {
  if (x.size() != s.size() || out.size() != s.size())
    throw std::invalid_argument("apply_transform: sample size mismatch");
  if (geo == Geometry::points) {
    if (st.crop_offset)
      throw std::invalid_argument("crop blocks cannot act on point data");
    const Mat3& m = st.matrix;
    const double px = static_cast<double>(x[0]), py = static_cast<double>(x[1]);
    out[0] = static_cast<T>(m(0, 0) * px + m(0, 1) * py);
    out[1] = static_cast<T>(m(1, 0) * px + m(1, 1) * py);
    if (pre_warp) pre_warp->assign(x.begin(), x.end());
    return;
  }
  std::vector<T> local;
  std::vector<T>& src = pre_warp ? *pre_warp : local;
  src.assign(x.begin(), x.end());
  if (st.crop_offset) {
    const auto [dx, dy] = *st.crop_offset;
    crop_image<T>(x, s, spec_crop_pad(theta), dx, dy, src);
  }
  if (st.any_affine(theta))
    warp_image<T>(src, s, st.matrix, out);
  else
    std::copy(src.begin(), src.end(), out.begin());
}

/// dl/dalpha_i = eps_i * dl/da_i for each applied continuous block; other
/// entries are 0. `grad_out` is dl/d(out) of the transformed sample.
template <typename T>
std::vector<double> transform_alpha_grads(std::span<const T> pre_warp,
                                          const Shape& s, Geometry geo,
                                          const AugTheta& theta,
                                          const SampledTransform& st,
                                          std::span<const T> grad_out) {
  const std::size_t K = theta.size();
  std::vector<double> out(K, 0.0);
  std::vector<std::size_t> idx;
  std::vector<Mat3> dms;
  for (std::size_t i = 0; i < K; ++i)
    if (st.applied[i] && theta.blocks[i].is_continuous()) {
      idx.push_back(i);
      dms.push_back(matrix_derivative(theta, st, i));
    }
  if (idx.empty()) return out;
  std::vector<double> da(idx.size(), 0.0);
  if (geo == Geometry::points) {
    const double px = static_cast<double>(pre_warp[0]);
    const double py = static_cast<double>(pre_warp[1]);
    const double g0 = static_cast<double>(grad_out[0]);
    const double g1 = static_cast<double>(grad_out[1]);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const Mat3& d = dms[k];
      da[k] = g0 * (d(0, 0) * px + d(0, 1) * py) + g1 * (d(1, 0) * px + d(1, 1) * py);
    }
  } else {
    warp_image_param_grads<T>(pre_warp, s, st.matrix, dms, grad_out, da);
  }
  for (std::size_t k = 0; k < idx.size(); ++k) out[idx[k]] = st.draw[idx[k]] * da[k];
  return out;
}

}  // namespace scale
