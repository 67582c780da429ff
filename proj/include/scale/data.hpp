#pragma once

// Datasets: IDX (MNIST) files, generated rotMNIST and 2D toy point clouds.

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "scale/rng.hpp"
#include "scale/tensor.hpp"
#include "scale/warp.hpp"

namespace scale {

/// How augmentation matrices act on a sample: images are warped, 2-feature
/// points are multiplied by the top-left 2x2 block.
enum class Geometry { image, points };

struct Dataset {
  ImageBatch<double> images;
  std::vector<int> labels;
  std::size_t num_classes = 0;
  std::string name;
  Geometry geometry = Geometry::image;

  [[nodiscard]] std::size_t size() const noexcept { return labels.size(); }
  [[nodiscard]] Shape shape() const {
    return {images.channels, images.height, images.width};
  }

  void validate() const {
    if (images.n != labels.size())
      throw std::invalid_argument("dataset '" + name +
                                  "': image count != label count");
    for (int y : labels)
      if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
        throw std::invalid_argument("dataset '" + name +
                                    "': label out of range");
    if (geometry == Geometry::points && shape() != Shape{2, 1, 1})
      throw std::invalid_argument("point datasets must have shape 2x1x1");
  }

  /// Rows [begin, end) as a new dataset.
  [[nodiscard]] Dataset slice(std::size_t begin, std::size_t end) const {
    if (begin >= end || end > size())
      throw std::out_of_range("dataset slice out of range");
    Dataset d;
    d.images = ImageBatch<double>(end - begin, images.channels, images.height,
                                  images.width);
    const std::size_t ss = images.sample_size();
    std::copy(images.data.begin() + static_cast<std::ptrdiff_t>(begin * ss),
              images.data.begin() + static_cast<std::ptrdiff_t>(end * ss),
              d.images.data.begin());
    d.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(begin),
                    labels.begin() + static_cast<std::ptrdiff_t>(end));
    d.num_classes = num_classes;
    d.name = name;
    d.geometry = geometry;
    return d;
  }

  [[nodiscard]] std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> c(num_classes, 0);
    for (int y : labels) ++c[static_cast<std::size_t>(y)];
    return c;
  }
};

// ---------------------------------------------------------------- IDX files

enum class IdxErrorKind { open, magic, truncated, count_mismatch, write };

class IdxError : public std::runtime_error {
 public:
  IdxError(IdxErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  [[nodiscard]] IdxErrorKind kind() const noexcept { return kind_; }

 private:
  IdxErrorKind kind_;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

namespace detail {

// Whole file, gunzipped transparently when compressed.
inline std::vector<unsigned char> read_all(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw IdxError(IdxErrorKind::open, "cannot open '" + path + "'");
  std::vector<unsigned char> out;
  std::array<unsigned char, 1 << 16> buf{};
  int got = 0;
  while ((got = gzread(f, buf.data(), static_cast<unsigned>(buf.size()))) > 0)
    out.insert(out.end(), buf.begin(), buf.begin() + got);
  const bool failed = got < 0;
  gzclose(f);
  if (failed)
    throw IdxError(IdxErrorKind::truncated,
                   "'" + path + "': corrupt or truncated gzip stream");
  return out;
}

inline std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) |
         (std::uint32_t{b[at + 2]} << 8) | std::uint32_t{b[at + 3]};
}

inline void put_be32(std::vector<unsigned char>& b, std::uint32_t v) {
  b.push_back(static_cast<unsigned char>(v >> 24));
  b.push_back(static_cast<unsigned char>(v >> 16));
  b.push_back(static_cast<unsigned char>(v >> 8));
  b.push_back(static_cast<unsigned char>(v));
}

inline void write_all(const std::string& path,
                      const std::vector<unsigned char>& bytes) {
  const bool gz = path.size() > 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
  gzFile f = gzopen(path.c_str(), gz ? "wb9" : "wbT");
  if (!f) throw IdxError(IdxErrorKind::write, "cannot write '" + path + "'");
  const int put =
      bytes.empty() ? 0 : gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
  const int rc = gzclose(f);
  if (put != static_cast<int>(bytes.size()) || rc != Z_OK)
    throw IdxError(IdxErrorKind::write, "short write to '" + path + "'");
}

}  // namespace detail

/// Reads an IDX image file and its label file. Pixels are scaled to [0, 1].
inline Dataset load_idx(const std::string& images_path,
                        const std::string& labels_path,
                        std::size_t num_classes = 10) {
  const auto img = detail::read_all(images_path);
  const auto lab = detail::read_all(labels_path);
  if (img.size() < 4 || lab.size() < 4)
    throw IdxError(IdxErrorKind::truncated, "IDX file shorter than its magic number");
  if (detail::be32(img, 0) != kIdxImageMagic)
    throw IdxError(IdxErrorKind::magic,
                   "'" + images_path + "': not an IDX image file (magic mismatch)");
  if (detail::be32(lab, 0) != kIdxLabelMagic)
    throw IdxError(IdxErrorKind::magic,
                   "'" + labels_path + "': not an IDX label file (magic mismatch)");
  if (img.size() < 16)
    throw IdxError(IdxErrorKind::truncated, "'" + images_path + "': header truncated");
  if (lab.size() < 8)
    throw IdxError(IdxErrorKind::truncated, "'" + labels_path + "': header truncated");
  const std::size_t n = detail::be32(img, 4);
  const std::size_t rows = detail::be32(img, 8), cols = detail::be32(img, 12);
  const std::size_t n_labels = detail::be32(lab, 4);
  if (img.size() != 16 + n * rows * cols)
    throw IdxError(IdxErrorKind::truncated,
                   "'" + images_path + "': payload size does not match header");
  if (lab.size() != 8 + n_labels)
    throw IdxError(IdxErrorKind::truncated,
                   "'" + labels_path + "': payload size does not match header");
  if (n != n_labels)
    throw IdxError(IdxErrorKind::count_mismatch,
                   "image count " + std::to_string(n) + " != label count " +
                       std::to_string(n_labels));

  Dataset d;
  d.images = ImageBatch<double>(n, 1, rows, cols);
  for (std::size_t i = 0; i < d.images.data.size(); ++i)
    d.images.data[i] = static_cast<double>(img[16 + i]) / 255.0;
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    d.labels[i] = lab[8 + i];
    if (static_cast<std::size_t>(d.labels[i]) >= num_classes)
      throw IdxError(IdxErrorKind::count_mismatch,
                     "'" + labels_path + "': label " +
                         std::to_string(d.labels[i]) + " >= num_classes");
  }
  d.num_classes = num_classes;
  d.name = "idx";
  return d;
}

/// Writes single-channel images as IDX; values are mapped back to bytes by
/// round(255 v), so files produced by load_idx round-trip exactly. A ".gz"
/// suffix selects gzip output.
inline void write_idx(const Dataset& d, const std::string& images_path,
                      const std::string& labels_path) {
  if (d.images.channels != 1)
    throw IdxError(IdxErrorKind::write, "IDX images must have one channel");
  std::vector<unsigned char> img, lab;
  detail::put_be32(img, kIdxImageMagic);
  detail::put_be32(img, static_cast<std::uint32_t>(d.size()));
  detail::put_be32(img, static_cast<std::uint32_t>(d.images.height));
  detail::put_be32(img, static_cast<std::uint32_t>(d.images.width));
  for (double v : d.images.data)
    img.push_back(static_cast<unsigned char>(
        std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  detail::put_be32(lab, kIdxLabelMagic);
  detail::put_be32(lab, static_cast<std::uint32_t>(d.size()));
  for (int y : d.labels) lab.push_back(static_cast<unsigned char>(y));
  detail::write_all(images_path, img);
  detail::write_all(labels_path, lab);
}

// ---------------------------------------------------------------- rotMNIST

inline constexpr std::uint64_t kRotMnistTag = 0x726f746d6e697374ULL;

/// Rotation angle of image i, uniform on [0, 2 pi).
inline double rotmnist_angle(std::uint64_t seed, std::size_t i) {
  return Stream::derive(seed, {kRotMnistTag, i}).uniform(0.0, 2.0 * std::numbers::pi);
}

/// Rotates every image once by its own angle; labels are kept.
inline Dataset make_rotmnist(const Dataset& base, std::uint64_t seed) {
  if (base.geometry != Geometry::image)
    throw std::invalid_argument("make_rotmnist needs image data");
  Dataset d = base;
  const Shape s = base.shape();
  for (std::size_t i = 0; i < base.size(); ++i)
    warp_image<double>(base.images.sample(i), s,
                       affine_matrix(Family::rotation, rotmnist_angle(seed, i)),
                       d.images.sample(i));
  d.name = "rot" + base.name;
  return d;
}

// ---------------------------------------------------------------- 2D toys

enum class BlobKind { plain, rotation_invariant };

struct BlobParams {
  // plain: class k centered at (radius, +-offset) with isotropic noise sigma.
  // The centers sit far from the origin relative to their separation, so
  // even small rotations push points across the class boundary.
  double radius = 10.0;
  double offset = 0.5;
  double sigma = 0.1;
  // rotation-invariant: class k has radius uniform on ring[k].
  double ring0_lo = 1.0, ring0_hi = 2.0;
  double ring1_lo = 2.5, ring1_hi = 3.5;
};

inline constexpr std::uint64_t kBlobTag = 0x626c6f6273324400ULL;

/// Labels alternate 0, 1, 0, ... so every prefix is stratified.
inline Dataset make_blobs2d(BlobKind kind, std::size_t n, std::uint64_t seed,
                            const BlobParams& bp = {}) {
  if (n < 2) throw std::invalid_argument("make_blobs2d: n must be >= 2");
  Dataset d;
  d.images = ImageBatch<double>(n, 2, 1, 1);
  d.labels.resize(n);
  d.num_classes = 2;
  d.geometry = Geometry::points;
  d.name = kind == BlobKind::plain ? "blobs-plain" : "blobs-rotinv";
  for (std::size_t i = 0; i < n; ++i) {
    Stream s = Stream::derive(seed, {kBlobTag, static_cast<std::uint64_t>(kind), i});
    const int y = static_cast<int>(i % 2);
    double px = 0.0, py = 0.0;
    if (kind == BlobKind::plain) {
      px = bp.radius + bp.sigma * s.normal();
      py = (y == 0 ? bp.offset : -bp.offset) + bp.sigma * s.normal();
    } else {
      const double r = y == 0 ? s.uniform(bp.ring0_lo, bp.ring0_hi)
                              : s.uniform(bp.ring1_lo, bp.ring1_hi);
      const double phi = s.uniform(0.0, 2.0 * std::numbers::pi);
      px = r * std::cos(phi);
      py = r * std::sin(phi);
    }
    d.images.data[2 * i] = px;
    d.images.data[2 * i + 1] = py;
    d.labels[i] = y;
  }
  return d;
}

/// Applies the top-left 2x2 block of `m` to every point.
inline Dataset transform_points(const Dataset& d, const Mat3& m) {
  if (d.geometry != Geometry::points)
    throw std::invalid_argument("transform_points needs point data");
  Dataset out = d;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double x = d.images.data[2 * i], y = d.images.data[2 * i + 1];
    out.images.data[2 * i] = m(0, 0) * x + m(0, 1) * y;
    out.images.data[2 * i + 1] = m(1, 0) * x + m(1, 1) * y;
  }
  return out;
}

}  // namespace scale
