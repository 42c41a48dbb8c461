#pragma once

// The fixed operator set of the denoising U-Nets, each with a forward and a
// reverse-mode pass. Backward functions accumulate (+=) into gradient
// buffers so that fan-out in the graph sums naturally.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "stackdenoise/error.hpp"
#include "stackdenoise/nnet/tensor.hpp"

namespace stackdenoise::nn {

enum class Activation { linear, relu, leaky_relu };

inline constexpr double leaky_relu_slope = 0.1;

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::linear: return "linear";
    case Activation::relu: return "relu";
    case Activation::leaky_relu: return "leaky_relu";
  }
  return "?";
}

namespace ops {

namespace detail {

/// Copies each channel plane into a zero border of one pixel.
template <typename T>
void pad_planes(const T* src, std::size_t planes, std::size_t h, std::size_t w, std::vector<T>& dst) {
  const std::size_t pw = w + 2;
  const std::size_t ph = h + 2;
  dst.assign(planes * ph * pw, T{});
  for (std::size_t p = 0; p < planes; ++p) {
    T* d = dst.data() + p * ph * pw;
    const T* s = src + p * h * w;
    for (std::size_t y = 0; y < h; ++y) std::copy(s + y * w, s + (y + 1) * w, d + (y + 1) * pw + 1);
  }
}

/// out[y][x] += sum_{a,b} k[a*3+b] * padded[y+a][x+b]
template <typename T>
void accumulate_3x3(T* __restrict out, const T* __restrict padded, const T* k, std::size_t h, std::size_t w) {
  const std::size_t pw = w + 2;
  const T k0 = k[0], k1 = k[1], k2 = k[2], k3 = k[3], k4 = k[4], k5 = k[5], k6 = k[6], k7 = k[7], k8 = k[8];
  for (std::size_t y = 0; y < h; ++y) {
    const T* __restrict r0 = padded + y * pw;
    const T* __restrict r1 = r0 + pw;
    const T* __restrict r2 = r1 + pw;
    T* __restrict o = out + y * w;
    for (std::size_t x = 0; x < w; ++x) {
      o[x] += k0 * r0[x] + k1 * r0[x + 1] + k2 * r0[x + 2] + k3 * r1[x] + k4 * r1[x + 1] + k5 * r1[x + 2] +
              k6 * r2[x] + k7 * r2[x + 1] + k8 * r2[x + 2];
    }
  }
}

/// Four output planes at once, sharing the input row loads.
template <typename T>
void accumulate_3x3_x4(T* __restrict o0, T* __restrict o1, T* __restrict o2, T* __restrict o3,
                       const T* __restrict padded, const T* k0, const T* k1, const T* k2, const T* k3, std::size_t h,
                       std::size_t w) {
  const std::size_t pw = w + 2;
  for (std::size_t y = 0; y < h; ++y) {
    const T* __restrict r0 = padded + y * pw;
    const T* __restrict r1 = r0 + pw;
    const T* __restrict r2 = r1 + pw;
    T* __restrict a = o0 + y * w;
    T* __restrict b = o1 + y * w;
    T* __restrict c = o2 + y * w;
    T* __restrict d = o3 + y * w;
    for (std::size_t x = 0; x < w; ++x) {
      const T v0 = r0[x], v1 = r0[x + 1], v2 = r0[x + 2];
      const T v3 = r1[x], v4 = r1[x + 1], v5 = r1[x + 2];
      const T v6 = r2[x], v7 = r2[x + 1], v8 = r2[x + 2];
      a[x] += k0[0] * v0 + k0[1] * v1 + k0[2] * v2 + k0[3] * v3 + k0[4] * v4 + k0[5] * v5 + k0[6] * v6 + k0[7] * v7 + k0[8] * v8;
      b[x] += k1[0] * v0 + k1[1] * v1 + k1[2] * v2 + k1[3] * v3 + k1[4] * v4 + k1[5] * v5 + k1[6] * v6 + k1[7] * v7 + k1[8] * v8;
      c[x] += k2[0] * v0 + k2[1] * v1 + k2[2] * v2 + k2[3] * v3 + k2[4] * v4 + k2[5] * v5 + k2[6] * v6 + k2[7] * v7 + k2[8] * v8;
      d[x] += k3[0] * v0 + k3[1] * v1 + k3[2] * v2 + k3[3] * v3 + k3[4] * v4 + k3[5] * v5 + k3[6] * v6 + k3[7] * v7 + k3[8] * v8;
    }
  }
}

/// Adds the nine weight gradients sum_{y,x} g[y][x] * padded[y + k/3][x + k%3]
/// into gw[k]. Columns are processed in fixed-width chunks so the partial
/// sums stay in registers.
template <typename T>
void correlate_3x3(T* gw, const T* __restrict g, const T* __restrict padded, std::size_t h, std::size_t w) {
  constexpr std::size_t V = 16;
  const std::size_t pw = w + 2;
  T total[9] = {};
  std::size_t x0 = 0;
  for (; x0 + V <= w; x0 += V) {
    T a[9][V] = {};
    for (std::size_t y = 0; y < h; ++y) {
      const T* gr = g + y * w + x0;
      const T* r0 = padded + y * pw + x0;
      const T* r1 = r0 + pw;
      const T* r2 = r1 + pw;
      for (std::size_t v = 0; v < V; ++v) {
        const T d = gr[v];
        a[0][v] += d * r0[v];
        a[1][v] += d * r0[v + 1];
        a[2][v] += d * r0[v + 2];
        a[3][v] += d * r1[v];
        a[4][v] += d * r1[v + 1];
        a[5][v] += d * r1[v + 2];
        a[6][v] += d * r2[v];
        a[7][v] += d * r2[v + 1];
        a[8][v] += d * r2[v + 2];
      }
    }
    for (std::size_t k = 0; k < 9; ++k)
      for (std::size_t v = 0; v < V; ++v) total[k] += a[k][v];
  }
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = x0; x < w; ++x) {
      const T d = g[y * w + x];
      for (std::size_t k = 0; k < 9; ++k) total[k] += d * padded[(y + k / 3) * pw + x + k % 3];
    }
  }
  for (std::size_t k = 0; k < 9; ++k) gw[k] += total[k];
}

}  // namespace detail

/// 3x3 convolution, stride 1, zero "same" padding. `weight` is laid out
/// out x in x 3 x 3. Returns the pre-activation output.
template <typename T>
Tensor4<T> conv3x3(const Tensor4<T>& x, std::span<const T> weight, std::span<const T> bias, std::size_t out_channels) {
  const std::size_t cin = x.c;
  require(weight.size() == out_channels * cin * 9, ErrorKind::shape_mismatch,
          "conv3x3: weight holds " + std::to_string(weight.size()) + " values for " + std::to_string(out_channels) +
              "x" + std::to_string(cin) + "x3x3");
  require(bias.size() == out_channels, ErrorKind::shape_mismatch, "conv3x3: bias size mismatch");
  Tensor4<T> y(x.n, out_channels, x.h, x.w);
  std::vector<T> padded;
  const std::size_t pplane = (x.h + 2) * (x.w + 2);
  for (std::size_t n = 0; n < x.n; ++n) {
    detail::pad_planes(x.plane(n, 0), cin, x.h, x.w, padded);
    for (std::size_t co = 0; co < out_channels; ++co) std::fill_n(y.plane(n, co), y.plane_size(), bias[co]);
    std::size_t co = 0;
    for (; co + 4 <= out_channels; co += 4) {
      for (std::size_t ci = 0; ci < cin; ++ci) {
        detail::accumulate_3x3_x4(y.plane(n, co), y.plane(n, co + 1), y.plane(n, co + 2), y.plane(n, co + 3),
                                  padded.data() + ci * pplane, &weight[((co + 0) * cin + ci) * 9],
                                  &weight[((co + 1) * cin + ci) * 9], &weight[((co + 2) * cin + ci) * 9],
                                  &weight[((co + 3) * cin + ci) * 9], x.h, x.w);
      }
    }
    for (; co < out_channels; ++co)
      for (std::size_t ci = 0; ci < cin; ++ci)
        detail::accumulate_3x3(y.plane(n, co), padded.data() + ci * pplane, &weight[(co * cin + ci) * 9], x.h, x.w);
  }
  return y;
}

/// Reverse pass of conv3x3 given the gradient w.r.t. its pre-activation
/// output. Accumulates into grad_weight / grad_bias and, when non-null, dx.
template <typename T>
void conv3x3_backward(const Tensor4<T>& x, std::span<const T> weight, const Tensor4<T>& dy, std::span<T> grad_weight,
                      std::span<T> grad_bias, Tensor4<T>* dx) {
  const std::size_t cin = x.c;
  const std::size_t cout = dy.c;
  require(dy.n == x.n && dy.h == x.h && dy.w == x.w, ErrorKind::shape_mismatch, "conv3x3_backward: shape mismatch");
  const std::size_t h = x.h, w = x.w, pw = w + 2;
  const std::size_t pplane = (h + 2) * pw;

  std::vector<T> xpad, dypad;
  std::vector<T> rotated(cout * cin * 9);
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t ci = 0; ci < cin; ++ci)
      for (std::size_t k = 0; k < 9; ++k) rotated[(ci * cout + co) * 9 + k] = weight[(co * cin + ci) * 9 + (8 - k)];

  for (std::size_t n = 0; n < x.n; ++n) {
    for (std::size_t co = 0; co < cout; ++co) {
      const T* g = dy.plane(n, co);
      T s{};
      for (std::size_t i = 0; i < dy.plane_size(); ++i) s += g[i];
      grad_bias[co] += s;
    }

    detail::pad_planes(x.plane(n, 0), cin, h, w, xpad);
    for (std::size_t co = 0; co < cout; ++co) {
      const T* g = dy.plane(n, co);
      for (std::size_t ci = 0; ci < cin; ++ci) {
        detail::correlate_3x3(&grad_weight[(co * cin + ci) * 9], g, xpad.data() + ci * pplane, h, w);
      }
    }

    if (dx) {
      detail::pad_planes(dy.plane(n, 0), cout, h, w, dypad);
      std::size_t ci = 0;
      for (; ci + 4 <= cin; ci += 4) {
        for (std::size_t co = 0; co < cout; ++co) {
          detail::accumulate_3x3_x4(dx->plane(n, ci), dx->plane(n, ci + 1), dx->plane(n, ci + 2), dx->plane(n, ci + 3),
                                    dypad.data() + co * pplane, &rotated[((ci + 0) * cout + co) * 9],
                                    &rotated[((ci + 1) * cout + co) * 9], &rotated[((ci + 2) * cout + co) * 9],
                                    &rotated[((ci + 3) * cout + co) * 9], h, w);
        }
      }
      for (; ci < cin; ++ci)
        for (std::size_t co = 0; co < cout; ++co)
          detail::accumulate_3x3(dx->plane(n, ci), dypad.data() + co * pplane, &rotated[(ci * cout + co) * 9], h, w);
    }
  }
}

template <typename T>
void activate(Tensor4<T>& y, Activation act) {
  if (act == Activation::linear) return;
  const T slope = act == Activation::relu ? T(0) : T(leaky_relu_slope);
  for (auto& v : y.data)
    if (v < T(0)) v *= slope;
}

/// Chain rule through an activation using its *output*: both ReLU variants
/// preserve sign, so output > 0 identifies the unit-slope branch.
template <typename T>
void activation_backward(const Tensor4<T>& output, Tensor4<T>& grad, Activation act) {
  if (act == Activation::linear) return;
  const T slope = act == Activation::relu ? T(0) : T(leaky_relu_slope);
  for (std::size_t i = 0; i < grad.data.size(); ++i)
    if (!(output.data[i] > T(0))) grad.data[i] *= slope;
}

/// 2x2 max pooling, stride 2. `argmax` receives the winning position (0..3)
/// of every output element; ties resolve to the first in row-major order.
template <typename T>
Tensor4<T> maxpool2x2(const Tensor4<T>& x, std::vector<std::uint8_t>* argmax = nullptr) {
  require(x.h % 2 == 0 && x.w % 2 == 0, ErrorKind::shape_mismatch,
          "maxpool2x2 needs even spatial dimensions, got " + x.shape_string());
  Tensor4<T> y(x.n, x.c, x.h / 2, x.w / 2);
  if (argmax) argmax->assign(y.size(), 0);
  for (std::size_t p = 0; p < x.n * x.c; ++p) {
    const T* s = x.data.data() + p * x.plane_size();
    T* d = y.data.data() + p * y.plane_size();
    for (std::size_t yy = 0; yy < y.h; ++yy) {
      for (std::size_t xx = 0; xx < y.w; ++xx) {
        const T* q = s + 2 * yy * x.w + 2 * xx;
        const T cand[4] = {q[0], q[1], q[x.w], q[x.w + 1]};
        std::uint8_t best = 0;
        for (std::uint8_t k = 1; k < 4; ++k)
          if (cand[k] > cand[best]) best = k;
        d[yy * y.w + xx] = cand[best];
        if (argmax) (*argmax)[p * y.plane_size() + yy * y.w + xx] = best;
      }
    }
  }
  return y;
}

template <typename T>
void maxpool2x2_backward(const Tensor4<T>& dy, const std::vector<std::uint8_t>& argmax, Tensor4<T>& dx) {
  require(dx.h == 2 * dy.h && dx.w == 2 * dy.w && dx.n == dy.n && dx.c == dy.c, ErrorKind::shape_mismatch,
          "maxpool2x2_backward: shape mismatch");
  for (std::size_t p = 0; p < dy.n * dy.c; ++p) {
    const T* g = dy.data.data() + p * dy.plane_size();
    T* d = dx.data.data() + p * dx.plane_size();
    for (std::size_t yy = 0; yy < dy.h; ++yy) {
      for (std::size_t xx = 0; xx < dy.w; ++xx) {
        const std::size_t o = yy * dy.w + xx;
        const auto k = argmax[p * dy.plane_size() + o];
        d[(2 * yy + k / 2) * dx.w + 2 * xx + k % 2] += g[o];
      }
    }
  }
}

/// Nearest-neighbor 2x upsampling.
template <typename T>
Tensor4<T> upsample2x2(const Tensor4<T>& x) {
  Tensor4<T> y(x.n, x.c, 2 * x.h, 2 * x.w);
  for (std::size_t p = 0; p < x.n * x.c; ++p) {
    const T* s = x.data.data() + p * x.plane_size();
    T* d = y.data.data() + p * y.plane_size();
    for (std::size_t yy = 0; yy < y.h; ++yy)
      for (std::size_t xx = 0; xx < y.w; ++xx) d[yy * y.w + xx] = s[(yy / 2) * x.w + xx / 2];
  }
  return y;
}

template <typename T>
void upsample2x2_backward(const Tensor4<T>& dy, Tensor4<T>& dx) {
  require(dy.h == 2 * dx.h && dy.w == 2 * dx.w && dx.n == dy.n && dx.c == dy.c, ErrorKind::shape_mismatch,
          "upsample2x2_backward: shape mismatch");
  for (std::size_t p = 0; p < dx.n * dx.c; ++p) {
    const T* g = dy.data.data() + p * dy.plane_size();
    T* d = dx.data.data() + p * dx.plane_size();
    for (std::size_t yy = 0; yy < dy.h; ++yy)
      for (std::size_t xx = 0; xx < dy.w; ++xx) d[(yy / 2) * dx.w + xx / 2] += g[yy * dy.w + xx];
  }
}

/// Channel concatenation [a, b].
template <typename T>
Tensor4<T> concat(const Tensor4<T>& a, const Tensor4<T>& b) {
  require(a.n == b.n && a.h == b.h && a.w == b.w, ErrorKind::shape_mismatch,
          "concat: " + a.shape_string() + " vs " + b.shape_string());
  Tensor4<T> y(a.n, a.c + b.c, a.h, a.w);
  for (std::size_t n = 0; n < a.n; ++n) {
    std::copy_n(a.plane(n, 0), a.c * a.plane_size(), y.plane(n, 0));
    std::copy_n(b.plane(n, 0), b.c * b.plane_size(), y.plane(n, a.c));
  }
  return y;
}

template <typename T>
void concat_backward(const Tensor4<T>& dy, Tensor4<T>& da, Tensor4<T>& db) {
  for (std::size_t n = 0; n < dy.n; ++n) {
    const T* g = dy.plane(n, 0);
    T* pa = da.plane(n, 0);
    for (std::size_t i = 0; i < da.c * da.plane_size(); ++i) pa[i] += g[i];
    g = dy.plane(n, da.c);
    T* pb = db.plane(n, 0);
    for (std::size_t i = 0; i < db.c * db.plane_size(); ++i) pb[i] += g[i];
  }
}

template <typename T>
Tensor4<T> add(const Tensor4<T>& a, const Tensor4<T>& b) {
  require_same_shape(a, b, "add");
  Tensor4<T> y = a;
  for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += b.data[i];
  return y;
}

template <typename T>
void add_backward(const Tensor4<T>& dy, Tensor4<T>& da, Tensor4<T>& db) {
  for (std::size_t i = 0; i < dy.data.size(); ++i) {
    da.data[i] += dy.data[i];
    db.data[i] += dy.data[i];
  }
}

/// Channel weights that pick the "middle plane" of an n-channel input: the
/// center channel for odd n, the mean of the two central channels for even n.
inline std::vector<std::pair<std::size_t, double>> middle_channel_weights(std::size_t n_in) {
  require(n_in >= 1, ErrorKind::invalid_argument, "middle channel of an empty input");
  if (n_in % 2 == 1) return {{n_in / 2, 1.0}};
  return {{n_in / 2 - 1, 0.5}, {n_in / 2, 0.5}};
}

template <typename T>
Tensor4<T> middle_channel(const Tensor4<T>& x) {
  Tensor4<T> y(x.n, 1, x.h, x.w);
  for (std::size_t n = 0; n < x.n; ++n) {
    T* d = y.plane(n, 0);
    for (const auto& [ch, wt] : middle_channel_weights(x.c)) {
      const T* s = x.plane(n, ch);
      for (std::size_t i = 0; i < x.plane_size(); ++i) d[i] += static_cast<T>(wt) * s[i];
    }
  }
  return y;
}

template <typename T>
void middle_channel_backward(const Tensor4<T>& dy, Tensor4<T>& dx) {
  for (std::size_t n = 0; n < dx.n; ++n) {
    const T* g = dy.plane(n, 0);
    for (const auto& [ch, wt] : middle_channel_weights(dx.c)) {
      T* d = dx.plane(n, ch);
      for (std::size_t i = 0; i < dx.plane_size(); ++i) d[i] += static_cast<T>(wt) * g[i];
    }
  }
}

}  // namespace ops
}  // namespace stackdenoise::nn
