#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stackdenoise/error.hpp"

namespace stackdenoise {

/// Dense row-major 2D array.
template <typename T>
class Image {
 public:
  using value_type = T;

  Image() = default;
  Image(std::size_t height, std::size_t width, T fill = T{})
      : height_(height), width_(width), data_(height * width, fill) {}
  Image(std::size_t height, std::size_t width, std::vector<T> data)
      : height_(height), width_(width), data_(std::move(data)) {
    require(data_.size() == height_ * width_, ErrorKind::shape_mismatch,
            "image buffer holds " + std::to_string(data_.size()) + " values, expected " +
                std::to_string(height_ * width_));
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t row, std::size_t col) { return data_[row * width_ + col]; }
  const T& operator()(std::size_t row, std::size_t col) const { return data_[row * width_ + col]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::span<T> row(std::size_t r) { return {data_.data() + r * width_, width_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * width_, width_}; }

  template <typename U>
  bool same_shape(const Image<U>& other) const noexcept {
    return height_ == other.height() && width_ == other.width();
  }

  bool operator==(const Image&) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<T> data_;
};

using Plane = Image<double>;

template <typename T, typename U>
void require_same_shape(const Image<T>& a, const Image<U>& b, const std::string& what) {
  if (!a.same_shape(b)) {
    fail(ErrorKind::shape_mismatch, what + ": " + std::to_string(a.height()) + "x" +
                                        std::to_string(a.width()) + " vs " +
                                        std::to_string(b.height()) + "x" + std::to_string(b.width()));
  }
}

inline bool all_finite(const Plane& p) {
  return std::all_of(p.values().begin(), p.values().end(), [](double v) { return std::isfinite(v); });
}

/// Ordered, co-registered planes of one volumetric acquisition. Immutable once
/// constructed; the constructor enforces shape agreement and finite samples.
class ImageStack {
 public:
  ImageStack() = default;
  ImageStack(std::string id, std::vector<Plane> planes, std::optional<double> plane_spacing = {})
      : id_(std::move(id)), planes_(std::move(planes)), spacing_(plane_spacing) {
    require(!planes_.empty(), ErrorKind::invalid_argument, "stack '" + id_ + "' has no planes");
    const auto& first = planes_.front();
    require(first.height() > 0 && first.width() > 0, ErrorKind::invalid_argument,
            "stack '" + id_ + "' has empty planes");
    for (std::size_t i = 0; i < planes_.size(); ++i) {
      require_same_shape(first, planes_[i], "stack '" + id_ + "' plane " + std::to_string(i));
      require(all_finite(planes_[i]), ErrorKind::non_finite,
              "stack '" + id_ + "' plane " + std::to_string(i) + " has non-finite samples");
    }
  }

  const std::string& id() const noexcept { return id_; }
  std::size_t size() const noexcept { return planes_.size(); }
  std::size_t height() const noexcept { return planes_.empty() ? 0 : planes_.front().height(); }
  std::size_t width() const noexcept { return planes_.empty() ? 0 : planes_.front().width(); }
  std::optional<double> plane_spacing() const noexcept { return spacing_; }

  const Plane& operator[](std::size_t i) const { return planes_[i]; }
  const Plane& at(std::size_t i) const {
    require(i < planes_.size(), ErrorKind::index_out_of_range,
            "plane " + std::to_string(i) + " of stack '" + id_ + "' with " +
                std::to_string(planes_.size()) + " planes");
    return planes_[i];
  }
  std::span<const Plane> planes() const noexcept { return planes_; }

  bool same_shape(const ImageStack& other) const noexcept {
    return size() == other.size() && height() == other.height() && width() == other.width();
  }

 private:
  std::string id_;
  std::vector<Plane> planes_;
  std::optional<double> spacing_;
};

}  // namespace stackdenoise
