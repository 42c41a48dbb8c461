#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "stackdenoise/error.hpp"

namespace stackdenoise::nn {

/// Dense NCHW tensor.
template <typename T>
struct Tensor4 {
  std::size_t n = 0, c = 0, h = 0, w = 0;
  std::vector<T> data;

  Tensor4() = default;
  Tensor4(std::size_t n_, std::size_t c_, std::size_t h_, std::size_t w_, T fill = T{})
      : n(n_), c(c_), h(h_), w(w_), data(n_ * c_ * h_ * w_, fill) {}

  std::size_t size() const noexcept { return data.size(); }
  std::size_t plane_size() const noexcept { return h * w; }

  T* plane(std::size_t in, std::size_t ic) noexcept { return data.data() + (in * c + ic) * h * w; }
  const T* plane(std::size_t in, std::size_t ic) const noexcept { return data.data() + (in * c + ic) * h * w; }

  T& at(std::size_t in, std::size_t ic, std::size_t y, std::size_t x) { return plane(in, ic)[y * w + x]; }
  const T& at(std::size_t in, std::size_t ic, std::size_t y, std::size_t x) const { return plane(in, ic)[y * w + x]; }

  template <typename U>
  bool same_shape(const Tensor4<U>& o) const noexcept {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }

  std::string shape_string() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w);
  }

  bool all_finite() const {
    for (const auto& v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  template <typename U>
  Tensor4<U> cast() const {
    Tensor4<U> out(n, c, h, w);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

template <typename T, typename U>
void require_same_shape(const Tensor4<T>& a, const Tensor4<U>& b, const std::string& what) {
  require(a.same_shape(b), ErrorKind::shape_mismatch, what + ": " + a.shape_string() + " vs " + b.shape_string());
}

}  // namespace stackdenoise::nn
