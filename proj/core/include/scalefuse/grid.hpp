#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "scalefuse/errors.hpp"

namespace scalefuse {

/// Row-major raster with a per-pixel validity mask. Invalid pixels carry a
/// default-constructed value and must not be interpreted as data.
template <typename T>
class PixelGridMap {
 public:
  PixelGridMap() = default;
  PixelGridMap(int width, int height, T fill = T{}, bool valid = false)
      : width_(width),
        height_(height),
        values_(static_cast<std::size_t>(width) * height, fill),
        mask_(static_cast<std::size_t>(width) * height, valid ? 1 : 0) {}

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  std::size_t index(int u, int v) const noexcept {
    return static_cast<std::size_t>(v) * width_ + u;
  }
  bool in_bounds(int u, int v) const noexcept {
    return u >= 0 && v >= 0 && u < width_ && v < height_;
  }

  const T& operator()(int u, int v) const noexcept { return values_[index(u, v)]; }
  T& operator()(int u, int v) noexcept { return values_[index(u, v)]; }
  const T& operator[](std::size_t i) const noexcept { return values_[i]; }
  T& operator[](std::size_t i) noexcept { return values_[i]; }

  bool valid(std::size_t i) const noexcept { return mask_[i] != 0; }
  bool valid(int u, int v) const noexcept { return mask_[index(u, v)] != 0; }

  void set(std::size_t i, T value) noexcept {
    values_[i] = std::move(value);
    mask_[i] = 1;
  }
  void invalidate(std::size_t i) noexcept {
    values_[i] = T{};
    mask_[i] = 0;
  }

  std::span<const T> values() const noexcept { return values_; }
  std::span<T> values() noexcept { return values_; }
  std::span<const std::uint8_t> mask() const noexcept { return mask_; }

  std::size_t valid_count() const noexcept {
    std::size_t n = 0;
    for (auto m : mask_) n += m;
    return n;
  }

  template <typename U>
  bool same_shape(const PixelGridMap<U>& other) const noexcept {
    return width_ == other.width() && height_ == other.height();
  }

  friend bool operator==(const PixelGridMap&, const PixelGridMap&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<T> values_;
  std::vector<std::uint8_t> mask_;
};

template <typename A, typename B>
void require_same_shape(const PixelGridMap<A>& a, const PixelGridMap<B>& b,
                        const char* what) {
  if (!a.same_shape(b)) {
    throw Error(ErrorCode::kDimensionMismatch,
                std::string("raster size mismatch: ") + what);
  }
}

}  // namespace scalefuse
