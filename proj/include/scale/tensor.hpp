#pragma once

#include <cmath>
#include <cstddef>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace scale {

// Vectorized Eigen kernels round differently depending on where a buffer
// starts relative to the SIMD width. Every numeric buffer is 64-byte aligned
// so results depend on the data layout only, not on which thread or
// allocation order produced the memory.
inline constexpr std::size_t kBufferAlign = 64;

template <typename T>
struct AlignedAllocator {
  using value_type = T;
  AlignedAllocator() noexcept = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{kBufferAlign}));
  }
  void deallocate(T* p, std::size_t) noexcept {
    ::operator delete(p, std::align_val_t{kBufferAlign});
  }
  template <typename U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) noexcept {
    return true;
  }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

/// Dense (n, channels, height, width) tensor, row-major.
template <typename T>
struct ImageBatch {
  std::size_t n = 0;
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  Buffer<T> data;

  ImageBatch() = default;
  ImageBatch(std::size_t n_, std::size_t c, std::size_t h, std::size_t w)
      : n(n_), channels(c), height(h), width(w), data(n_ * c * h * w, T(0)) {
    if (n_ == 0 || c == 0 || h == 0 || w == 0)
      throw std::invalid_argument("ImageBatch: all dimensions must be >= 1");
  }

  [[nodiscard]] std::size_t sample_size() const noexcept {
    return channels * height * width;
  }
  [[nodiscard]] bool same_shape(const ImageBatch& o) const noexcept {
    return n == o.n && channels == o.channels && height == o.height &&
           width == o.width;
  }

  T& at(std::size_t i, std::size_t c, std::size_t y, std::size_t x) {
    return data[((i * channels + c) * height + y) * width + x];
  }
  const T& at(std::size_t i, std::size_t c, std::size_t y,
              std::size_t x) const {
    return data[((i * channels + c) * height + y) * width + x];
  }

  std::span<T> sample(std::size_t i) {
    return {data.data() + i * sample_size(), sample_size()};
  }
  std::span<const T> sample(std::size_t i) const {
    return {data.data() + i * sample_size(), sample_size()};
  }

  [[nodiscard]] bool all_finite() const {
    for (const T& v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <typename U>
  [[nodiscard]] ImageBatch<U> cast() const {
    ImageBatch<U> out;
    out.n = n;
    out.channels = channels;
    out.height = height;
    out.width = width;
    out.data.assign(data.begin(), data.end());
    return out;
  }
};

/// Shape of a single sample.
struct Shape {
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;

  [[nodiscard]] std::size_t size() const noexcept {
    return channels * height * width;
  }
  friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" +
         std::to_string(s.width);
}

}  // namespace scale
