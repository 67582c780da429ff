#pragma once

// Differentiable affine warping and integer crops of image batches.
//
// Coordinates: each axis is normalized to [-1, 1] with the origin at the image
// center (pixel centers sit at (2j + 1) / W - 1). A transform matrix M acts on
// normalized coordinates and images are inverse-warped, i.e. the output pixel
// at p reads the input at M^-1 p. Composing matrices M1 * M2 therefore applies
// M2 to the image first, then M1. Samples falling outside the grid read as 0.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "scale/family.hpp"
#include "scale/tensor.hpp"

namespace scale {

using Mat3 = Eigen::Matrix3d;

inline Mat3 affine_matrix(Family family, double a) {
  Mat3 m = Mat3::Identity();
  switch (family) {
    case Family::rotation:
    case Family::rot180:
      m(0, 0) = std::cos(a);
      m(0, 1) = -std::sin(a);
      m(1, 0) = std::sin(a);
      m(1, 1) = std::cos(a);
      return m;
    case Family::scale_x: m(0, 0) = std::exp(a); return m;
    case Family::scale_y: m(1, 1) = std::exp(a); return m;
    case Family::shear_x: m(0, 1) = a; return m;
    case Family::hflip: m(0, 0) = a; return m;
    case Family::crop: break;
  }
  throw std::invalid_argument("affine_matrix: family '" +
                              std::string(to_string(family)) +
                              "' is not affine");
}

/// d affine_matrix(family, a) / da.
inline Mat3 affine_matrix_derivative(Family family, double a) {
  Mat3 d = Mat3::Zero();
  switch (family) {
    case Family::rotation:
    case Family::rot180:
      d(0, 0) = -std::sin(a);
      d(0, 1) = -std::cos(a);
      d(1, 0) = std::cos(a);
      d(1, 1) = -std::sin(a);
      return d;
    case Family::scale_x: d(0, 0) = std::exp(a); return d;
    case Family::scale_y: d(1, 1) = std::exp(a); return d;
    case Family::shear_x: d(0, 1) = 1.0; return d;
    case Family::hflip: d(0, 0) = 1.0; return d;
    case Family::crop: break;
  }
  throw std::invalid_argument("affine_matrix_derivative: family '" +
                              std::string(to_string(family)) +
                              "' is not affine");
}

namespace detail {

// Source pixel = A * (target pixel relative to center) + center.
struct PixelMap {
  double a00, a01, a02, a10, a11, a12;
  double cx, cy;
};

inline Mat3 checked_inverse(const Mat3& m) {
  const double det = m.determinant();
  if (!std::isfinite(det) || std::abs(det) < 1e-12)
    throw std::domain_error("warp: transform matrix is singular");
  return m.inverse();
}

// Maps a matrix on normalized coordinates to pixel units. Diagonal factors
// are sx/sx == 1 exactly, so the identity maps every pixel onto itself.
inline PixelMap to_pixel_map(const Mat3& m, std::size_t h, std::size_t w) {
  const double sx = static_cast<double>(w) / 2.0;
  const double sy = static_cast<double>(h) / 2.0;
  PixelMap p{};
  p.a00 = m(0, 0);
  p.a01 = m(0, 1) * (sx / sy);
  p.a02 = m(0, 2) * sx;
  p.a10 = m(1, 0) * (sy / sx);
  p.a11 = m(1, 1);
  p.a12 = m(1, 2) * sy;
  p.cx = (static_cast<double>(w) - 1.0) / 2.0;
  p.cy = (static_cast<double>(h) - 1.0) / 2.0;
  return p;
}

struct Tap {
  std::ptrdiff_t x0, y0;
  double fx, fy;
};

inline Tap tap_at(double xs, double ys) {
  const double fx0 = std::floor(xs);
  const double fy0 = std::floor(ys);
  return {static_cast<std::ptrdiff_t>(fx0), static_cast<std::ptrdiff_t>(fy0),
          xs - fx0, ys - fy0};
}

template <typename T>
inline double read(const T* plane, std::ptrdiff_t h, std::ptrdiff_t w,
                   std::ptrdiff_t y, std::ptrdiff_t x) {
  if (x < 0 || y < 0 || x >= w || y >= h) return 0.0;
  return static_cast<double>(plane[y * w + x]);
}

// Iterates over target pixels of one sample, handing the source location.
template <typename F>
inline void for_each_target(const PixelMap& p, std::size_t h, std::size_t w,
                            F&& f) {
  for (std::size_t i = 0; i < h; ++i) {
    const double v = static_cast<double>(i) - p.cy;
    for (std::size_t j = 0; j < w; ++j) {
      const double u = static_cast<double>(j) - p.cx;
      const double xs = p.a00 * u + p.a01 * v + p.a02 + p.cx;
      const double ys = p.a10 * u + p.a11 * v + p.a12 + p.cy;
      f(i, j, u, v, xs, ys);
    }
  }
}

}  // namespace detail

/// Warps one sample (channels x h x w) into `dst`.
template <typename T>
void warp_image(std::span<const T> src, const Shape& s, const Mat3& m,
                std::span<T> dst) {
  const auto pm = detail::to_pixel_map(detail::checked_inverse(m), s.height,
                                       s.width);
  const auto H = static_cast<std::ptrdiff_t>(s.height);
  const auto W = static_cast<std::ptrdiff_t>(s.width);
  const std::size_t plane = s.height * s.width;
  detail::for_each_target(
      pm, s.height, s.width,
      [&](std::size_t i, std::size_t j, double, double, double xs, double ys) {
        const auto t = detail::tap_at(xs, ys);
        const double w00 = (1.0 - t.fx) * (1.0 - t.fy), w01 = t.fx * (1.0 - t.fy);
        const double w10 = (1.0 - t.fx) * t.fy, w11 = t.fx * t.fy;
        for (std::size_t c = 0; c < s.channels; ++c) {
          const T* pl = src.data() + c * plane;
          const double v =
              w00 * detail::read(pl, H, W, t.y0, t.x0) +
              w01 * detail::read(pl, H, W, t.y0, t.x0 + 1) +
              w10 * detail::read(pl, H, W, t.y0 + 1, t.x0) +
              w11 * detail::read(pl, H, W, t.y0 + 1, t.x0 + 1);
          dst[c * plane + i * s.width + j] = static_cast<T>(v);
        }
      });
}

/// Adds the adjoint of `warp_image` applied to `grad_out` into `grad_src`.
template <typename T>
void warp_image_adjoint(std::span<const T> grad_out, const Shape& s,
                        const Mat3& m, std::span<T> grad_src) {
  const auto pm = detail::to_pixel_map(detail::checked_inverse(m), s.height,
                                       s.width);
  const auto H = static_cast<std::ptrdiff_t>(s.height);
  const auto W = static_cast<std::ptrdiff_t>(s.width);
  const std::size_t plane = s.height * s.width;
  auto scatter = [&](T* pl, std::ptrdiff_t y, std::ptrdiff_t x, double v) {
    if (x < 0 || y < 0 || x >= W || y >= H) return;
    pl[y * W + x] += static_cast<T>(v);
  };
  detail::for_each_target(
      pm, s.height, s.width,
      [&](std::size_t i, std::size_t j, double, double, double xs, double ys) {
        const auto t = detail::tap_at(xs, ys);
        const double w00 = (1.0 - t.fx) * (1.0 - t.fy), w01 = t.fx * (1.0 - t.fy);
        const double w10 = (1.0 - t.fx) * t.fy, w11 = t.fx * t.fy;
        for (std::size_t c = 0; c < s.channels; ++c) {
          const double g =
              static_cast<double>(grad_out[c * plane + i * s.width + j]);
          if (g == 0.0) continue;
          T* pl = grad_src.data() + c * plane;
          scatter(pl, t.y0, t.x0, w00 * g);
          scatter(pl, t.y0, t.x0 + 1, w01 * g);
          scatter(pl, t.y0 + 1, t.x0, w10 * g);
          scatter(pl, t.y0 + 1, t.x0 + 1, w11 * g);
        }
      });
}

/// For each derivative dM/da_k in `d_matrices`, accumulates
/// sum_p grad_out(p) * d warp(src, M)(p) / d a_k into `grad_a[k]`.
///
/// Bilinear sampling is piecewise smooth; on cell boundaries the derivative
/// is the one-sided value from the cell selected by floor().
template <typename T>
void warp_image_param_grads(std::span<const T> src, const Shape& s,
                            const Mat3& m, std::span<const Mat3> d_matrices,
                            std::span<const T> grad_out,
                            std::span<double> grad_a) {
  if (d_matrices.size() != grad_a.size())
    throw std::invalid_argument("warp_image_param_grads: size mismatch");
  const Mat3 minv = detail::checked_inverse(m);
  const auto pm = detail::to_pixel_map(minv, s.height, s.width);
  std::vector<detail::PixelMap> dpm;
  dpm.reserve(d_matrices.size());
  for (const Mat3& dm : d_matrices)
    dpm.push_back(detail::to_pixel_map(-minv * dm * minv, s.height, s.width));

  const auto H = static_cast<std::ptrdiff_t>(s.height);
  const auto W = static_cast<std::ptrdiff_t>(s.width);
  const std::size_t plane = s.height * s.width;
  detail::for_each_target(
      pm, s.height, s.width,
      [&](std::size_t i, std::size_t j, double u, double v, double xs,
          double ys) {
        const auto t = detail::tap_at(xs, ys);
        double gx = 0.0, gy = 0.0;
        for (std::size_t c = 0; c < s.channels; ++c) {
          const double g =
              static_cast<double>(grad_out[c * plane + i * s.width + j]);
          if (g == 0.0) continue;
          const T* pl = src.data() + c * plane;
          const double i00 = detail::read(pl, H, W, t.y0, t.x0);
          const double i01 = detail::read(pl, H, W, t.y0, t.x0 + 1);
          const double i10 = detail::read(pl, H, W, t.y0 + 1, t.x0);
          const double i11 = detail::read(pl, H, W, t.y0 + 1, t.x0 + 1);
          gx += g * ((1.0 - t.fy) * (i01 - i00) + t.fy * (i11 - i10));
          gy += g * ((1.0 - t.fx) * (i10 - i00) + t.fx * (i11 - i01));
        }
        if (gx == 0.0 && gy == 0.0) return;
        for (std::size_t k = 0; k < dpm.size(); ++k) {
          const auto& d = dpm[k];
          const double dxs = d.a00 * u + d.a01 * v + d.a02;
          const double dys = d.a10 * u + d.a11 * v + d.a12;
          grad_a[k] += gx * dxs + gy * dys;
        }
      });
}

template <typename T>
ImageBatch<T> warp_bilinear(const ImageBatch<T>& batch, const Mat3& m) {
  ImageBatch<T> out(batch.n, batch.channels, batch.height, batch.width);
  const Shape s{batch.channels, batch.height, batch.width};
  for (std::size_t i = 0; i < batch.n; ++i)
    warp_image<T>(batch.sample(i), s, m, out.sample(i));
  return out;
}

template <typename T>
struct WarpGradients {
  ImageBatch<T> grad_in;
  std::vector<double> grad_a;  // one entry per sample
};

/// Backward pass of `warp_bilinear(batch, matrix(a))` given d matrix / da.
template <typename T>
WarpGradients<T> warp_backward(const ImageBatch<T>& batch, const Mat3& m,
                               const Mat3& d_matrix_d_a,
                               const ImageBatch<T>& grad_out) {
  if (!batch.same_shape(grad_out))
    throw std::invalid_argument("warp_backward: grad_out shape mismatch");
  WarpGradients<T> g{
      ImageBatch<T>(batch.n, batch.channels, batch.height, batch.width),
      std::vector<double>(batch.n, 0.0)};
  const Shape s{batch.channels, batch.height, batch.width};
  const Mat3 dms[1] = {d_matrix_d_a};
  for (std::size_t i = 0; i < batch.n; ++i) {
    warp_image_adjoint<T>(grad_out.sample(i), s, m, g.grad_in.sample(i));
    warp_image_param_grads<T>(batch.sample(i), s, m, dms, grad_out.sample(i),
                              std::span<double>(&g.grad_a[i], 1));
  }
  return g;
}

/// Integer-offset crop of the zero-padded sample: out(y, x) = in(y + dy, x + dx).
template <typename T>
void crop_image(std::span<const T> src, const Shape& s, int pad, int dx,
                int dy, std::span<T> dst) {
  if (pad < 0 || std::abs(dx) > pad || std::abs(dy) > pad)
    throw std::out_of_range("crop: offset exceeds padding");
  const auto H = static_cast<std::ptrdiff_t>(s.height);
  const auto W = static_cast<std::ptrdiff_t>(s.width);
  const std::size_t plane = s.height * s.width;
  for (std::size_t c = 0; c < s.channels; ++c)
    for (std::ptrdiff_t y = 0; y < H; ++y)
      for (std::ptrdiff_t x = 0; x < W; ++x) {
        const std::ptrdiff_t sy = y + dy, sx = x + dx;
        dst[c * plane + y * W + x] =
            (sx < 0 || sy < 0 || sx >= W || sy >= H)
                ? T(0)
                : src[c * plane + sy * W + sx];
      }
}

template <typename T>
ImageBatch<T> apply_crop(const ImageBatch<T>& batch, int pad, int dx, int dy) {
  ImageBatch<T> out(batch.n, batch.channels, batch.height, batch.width);
  const Shape s{batch.channels, batch.height, batch.width};
  for (std::size_t i = 0; i < batch.n; ++i)
    crop_image<T>(batch.sample(i), s, pad, dx, dy, out.sample(i));
  return out;
}

}  // namespace scale
