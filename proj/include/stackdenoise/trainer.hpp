#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "stackdenoise/error.hpp"
#include "stackdenoise/image.hpp"
#include "stackdenoise/io/manifest.hpp"
#include "stackdenoise/nnet/network.hpp"
#include "stackdenoise/random.hpp"
#include "stackdenoise/stack.hpp"

namespace stackdenoise::training {

using nn::Network;
using nn::ParamSet;
using nn::Tensor4;

enum class AugmentKind { none, mri_translate, microscopy };

inline std::string to_string(AugmentKind a) {
  switch (a) {
    case AugmentKind::none: return "none";
    case AugmentKind::mri_translate: return "mri_translate";
    case AugmentKind::microscopy: return "microscopy";
  }
  return "?";
}

inline AugmentKind parse_augment(const std::string& s) {
  for (auto a : {AugmentKind::none, AugmentKind::mri_translate, AugmentKind::microscopy})
    if (to_string(a) == s) return a;
  fail(ErrorKind::invalid_argument, "unknown augmentation '" + s + "'");
}

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  double lr0 = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  AugmentKind augment = AugmentKind::none;
  std::size_t max_shift = 64;
  std::size_t crop = 256;
  SamplerConfig sampler;
  io::DatasetKind dataset_kind = io::DatasetKind::synthetic;

  void validate() const {
    require(epochs >= 1, ErrorKind::invalid_argument, "epochs must be at least 1");
    require(batch_size >= 1, ErrorKind::invalid_argument, "batch_size must be at least 1");
    require(lr0 > 0.0 && std::isfinite(lr0), ErrorKind::invalid_argument, "lr0 must be positive");
    require(weight_decay == 0.0, ErrorKind::invalid_argument, "weight_decay is fixed at 0");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && eps > 0.0, ErrorKind::invalid_argument,
            "Adam hyper-parameters out of range");
    sampler.validate();
  }
};

/// Cosine decay from lr0 at epoch 0 to 0 at the final epoch; a one-epoch run
/// stays at lr0.
inline double cosine_lr(std::size_t epoch, std::size_t epochs, double lr0) {
  require(epochs >= 1 && epoch < epochs, ErrorKind::index_out_of_range,
          "epoch " + std::to_string(epoch) + " outside a run of " + std::to_string(epochs));
  if (epochs == 1) return lr0;
  const double t = static_cast<double>(epoch) / static_cast<double>(epochs - 1);
  return 0.5 * lr0 * (1.0 + std::cos(std::numbers::pi * t));
}

template <typename T>
struct LossResult {
  double loss = 0.0;
  Tensor4<T> grad;
};

/// Mean squared error over every element and its gradient 2(p - t)/count.
template <typename T>
LossResult<T> mse_loss(const Tensor4<T>& pred, const Tensor4<T>& target) {
  nn::require_same_shape(pred, target, "mse_loss");
  LossResult<T> r;
  r.grad = Tensor4<T>(pred.n, pred.c, pred.h, pred.w);
  const double count = static_cast<double>(pred.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred.data[i]) - static_cast<double>(target.data[i]);
    sum += d * d;
    r.grad.data[i] = static_cast<T>(2.0 * d / count);
  }
  r.loss = sum / count;
  return r;
}

template <typename T>
struct AdamState {
  ParamSet<T> m, v;
  std::uint64_t t = 0;

  explicit AdamState(const ParamSet<T>& like) : m(nn::zeros_like(like)), v(nn::zeros_like(like)) {}
};

namespace detail {

template <typename T>
void adam_update(std::span<T> p, std::span<const T> g, std::span<T> m, std::span<T> v, double lr, double b1,
                 double b2, double eps, double c1, double c2) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double gi = g[i];
    const double mi = b1 * m[i] + (1.0 - b1) * gi;
    const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    p[i] = static_cast<T>(p[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + eps));
  }
}

}  // namespace detail

/// One Adam step with bias-corrected moments; no weight decay term.
template <typename T>
void adam_step(ParamSet<T>& params, const ParamSet<T>& grads, AdamState<T>& state, double lr, const TrainConfig& cfg) {
  require(grads.size() == params.size() && state.m.size() == params.size(), ErrorKind::shape_mismatch,
          "adam_step: parameter structure mismatch");
  for (std::size_t l = 0; l < grads.size(); ++l) {
    for (const auto* vec : {&grads[l].weight, &grads[l].bias})
      for (std::size_t i = 0; i < vec->size(); ++i)
        if (!std::isfinite(static_cast<double>((*vec)[i])))
          fail(ErrorKind::non_finite, "adam_step: non-finite gradient in parameter group " + std::to_string(l));
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t l = 0; l < params.size(); ++l) {
    detail::adam_update<T>(params[l].weight, grads[l].weight, state.m[l].weight, state.v[l].weight, lr, cfg.beta1,
                           cfg.beta2, cfg.eps, c1, c2);
    detail::adam_update<T>(params[l].bias, grads[l].bias, state.m[l].bias, state.v[l].bias, lr, cfg.beta1, cfg.beta2,
                           cfg.eps, c1, c2);
  }
}

// ---- augmentation ----------------------------------------------------------

struct ShiftDraw {
  long dy = 0;
  long dx = 0;
};

/// Signed shifts with magnitude uniform in [0, max_shift] and a fair sign.
inline ShiftDraw draw_shift(Rng& rng, std::size_t max_shift) {
  auto one = [&] {
    const auto mag = static_cast<long>(uniform_index(rng, max_shift + 1));
    return coin(rng) ? -mag : mag;
  };
  ShiftDraw d;
  d.dy = one();
  d.dx = one();
  return d;
}

/// out(r, c) = in(r - dy, c - dx); vacated pixels take `fill`.
inline Plane shift_plane(const Plane& in, const ShiftDraw& s, double fill) {
  Plane out(in.height(), in.width(), fill);
  const long h = static_cast<long>(in.height()), w = static_cast<long>(in.width());
  for (long r = 0; r < h; ++r) {
    const long sr = r - s.dy;
    if (sr < 0 || sr >= h) continue;
    for (long c = 0; c < w; ++c) {
      const long sc = c - s.dx;
      if (sc >= 0 && sc < w) out(r, c) = in(sr, sc);
    }
  }
  return out;
}

inline double plane_min(const Plane& p) {
  return *std::min_element(p.values().begin(), p.values().end());
}

/// One shared random translation for every input plane and the target; each
/// plane is filled with its own minimum (the scaled background).
inline void augment_mri(std::vector<Plane>& inputs, Plane& target, Rng& rng, std::size_t max_shift) {
  require(max_shift < target.height() && max_shift < target.width(), ErrorKind::invalid_argument,
          "shift range " + std::to_string(max_shift) + " is not smaller than the " +
              std::to_string(target.height()) + "x" + std::to_string(target.width()) + " image");
  const auto s = draw_shift(rng, max_shift);
  for (auto& p : inputs) p = shift_plane(p, s, plane_min(p));
  target = shift_plane(target, s, plane_min(target));
}

struct GeometryDraw {
  int rot90 = 0;  // counter-clockwise quarter turns
  bool flip_h = false;
  bool flip_v = false;
  std::size_t crop_y = 0;
  std::size_t crop_x = 0;
};

inline GeometryDraw draw_geometry(Rng& rng, std::size_t height, std::size_t width, std::size_t crop) {
  require(crop >= 1 && height >= crop && width >= crop, ErrorKind::invalid_argument,
          "cannot crop " + std::to_string(crop) + "x" + std::to_string(crop) + " from " + std::to_string(height) +
              "x" + std::to_string(width));
  GeometryDraw d;
  d.rot90 = static_cast<int>(uniform_index(rng, 4));
  d.flip_h = coin(rng);
  d.flip_v = coin(rng);
  d.crop_y = uniform_index(rng, height - crop + 1);
  d.crop_x = uniform_index(rng, width - crop + 1);
  return d;
}

/// Quarter-turn rotation counter-clockwise.
inline Plane rotate90(const Plane& in, int turns) {
  turns = ((turns % 4) + 4) % 4;
  const std::size_t h = in.height(), w = in.width();
  if (turns == 0) return in;
  Plane out(turns == 2 ? h : w, turns == 2 ? w : h);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      switch (turns) {
        case 1: out(w - 1 - c, r) = in(r, c); break;
        case 2: out(h - 1 - r, w - 1 - c) = in(r, c); break;
        default: out(c, h - 1 - r) = in(r, c); break;
      }
    }
  }
  return out;
}

/// Crop, then rotate, then flip horizontally / vertically.
inline Plane apply_geometry(const Plane& in, const GeometryDraw& d, std::size_t crop) {
  Plane c(crop, crop);
  for (std::size_t r = 0; r < crop; ++r)
    for (std::size_t x = 0; x < crop; ++x) c(r, x) = in(d.crop_y + r, d.crop_x + x);
  Plane out = rotate90(c, d.rot90);
  if (d.flip_h)
    for (std::size_t r = 0; r < crop; ++r) std::reverse(out.row(r).begin(), out.row(r).end());
  if (d.flip_v)
    for (std::size_t r = 0; r < crop / 2; ++r) std::swap_ranges(out.row(r).begin(), out.row(r).end(), out.row(crop - 1 - r).begin());
  return out;
}

inline void augment_microscopy(std::vector<Plane>& inputs, Plane& target, Rng& rng, std::size_t crop) {
  const auto d = draw_geometry(rng, target.height(), target.width(), crop);
  for (auto& p : inputs) p = apply_geometry(p, d, crop);
  target = apply_geometry(target, d, crop);
}

inline void augment(const TrainConfig& cfg, std::vector<Plane>& inputs, Plane& target, Rng& rng) {
  switch (cfg.augment) {
    case AugmentKind::none: break;
    case AugmentKind::mri_translate: augment_mri(inputs, target, rng, cfg.max_shift); break;
    case AugmentKind::microscopy: augment_microscopy(inputs, target, rng, cfg.crop); break;
  }
}

// ---- batching and the loop -------------------------------------------------

struct Example {
  std::vector<Plane> inputs;
  Plane target;
};

template <typename T>
struct Batch {
  Tensor4<T> x;
  Tensor4<T> y;
};

template <typename T>
Batch<T> assemble(std::span<const Example> examples) {
  require(!examples.empty(), ErrorKind::invalid_argument, "empty batch");
  const auto& first = examples.front();
  const std::size_t c = first.inputs.size(), h = first.target.height(), w = first.target.width();
  Batch<T> b{Tensor4<T>(examples.size(), c, h, w), Tensor4<T>(examples.size(), 1, h, w)};
  for (std::size_t n = 0; n < examples.size(); ++n) {
    const auto& e = examples[n];
    require(e.inputs.size() == c && e.target.height() == h && e.target.width() == w, ErrorKind::shape_mismatch,
            "examples in one batch must share a shape");
    for (std::size_t ch = 0; ch < c; ++ch) {
      require_same_shape(e.inputs[ch], e.target, "example input plane");
      std::transform(e.inputs[ch].values().begin(), e.inputs[ch].values().end(), b.x.plane(n, ch),
                     [](double v) { return static_cast<T>(v); });
    }
    std::transform(e.target.values().begin(), e.target.values().end(), b.y.plane(n, 0),
                   [](double v) { return static_cast<T>(v); });
  }
  return b;
}

inline Example make_example(const StackPair& pair, std::size_t plane, const SamplerConfig& sampler) {
  auto s = sample_example(pair.input, pair.target, plane, sampler);
  return Example{std::move(s.input_planes), std::move(s.target_plane)};
}

struct HistoryRow {
  std::size_t epoch = 0;
  double train_mse = 0.0;
  double val_mse = std::numeric_limits<double>::quiet_NaN();
  double lr = 0.0;
};

template <typename T>
struct TrainResult {
  ParamSet<T> best_params;
  std::size_t best_epoch = 0;
  std::vector<HistoryRow> history;
};

/// FNV-1a over the raw parameter bytes.
template <typename T>
std::uint64_t params_hash(const ParamSet<T>& p) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const std::vector<T>& v) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(v.data());
    for (std::size_t i = 0; i < v.size() * sizeof(T); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& c : p) {
    mix(c.weight);
    mix(c.bias);
  }
  return h;
}

/// Mean squared error of the network over every plane of `pairs`, without
/// augmentation; batches of `batch_size`.
template <typename T>
double validation_mse(const Network<T>& net, std::span<const StackPair> pairs, const SamplerConfig& sampler,
                      std::size_t batch_size) {
  double sum = 0.0;
  double count = 0.0;
  std::vector<Example> batch;
  auto flush = [&] {
    if (batch.empty()) return;
    const auto b = assemble<T>(batch);
    const auto pred = net.infer(b.x);
    const auto r = mse_loss(pred, b.y);
    sum += r.loss * static_cast<double>(pred.size());
    count += static_cast<double>(pred.size());
    batch.clear();
  };
  for (const auto& pair : pairs) {
    for (std::size_t p = 0; p < pair.input.size(); ++p) {
      batch.push_back(make_example(pair, p, sampler));
      if (batch.size() == batch_size) flush();
    }
  }
  flush();
  return count > 0 ? sum / count : std::numeric_limits<double>::quiet_NaN();
}

/// Trains `net` in place from its current parameters. After the run `net`
/// holds the parameters of the epoch with the lowest validation MSE (the
/// last epoch when there is no validation set).
template <typename T>
TrainResult<T> train(std::span<const StackPair> train_pairs, std::span<const StackPair> val_pairs, Network<T>& net,
                     const TrainConfig& cfg, const std::function<void(const HistoryRow&)>& on_epoch = {}) {
  cfg.validate();
  require(!train_pairs.empty(), ErrorKind::invalid_argument, "training set is empty");
  require(net.n_in() == cfg.sampler.input_width(), ErrorKind::shape_mismatch,
          "network takes " + std::to_string(net.n_in()) + " planes but the sampler produces " +
              std::to_string(cfg.sampler.input_width()));

  TrainResult<T> result;
  AdamState<T> adam(net.params());
  double best_val = std::numeric_limits<double>::infinity();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, cfg.epochs, cfg.lr0);
    const auto order = enumerate_epoch(train_pairs, derive_seed(cfg.seed, {1, epoch}));
    double loss_sum = 0.0;
    double loss_count = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<Example> batch;
      for (std::size_t k = start; k < end; ++k) {
        auto e = make_example(train_pairs[order[k].stack], order[k].plane, cfg.sampler);
        Rng rng(derive_seed(cfg.seed, {2, epoch, k}));
        augment(cfg, e.inputs, e.target, rng);
        batch.push_back(std::move(e));
      }
      const auto b = assemble<T>(batch);
      const auto pred = net.forward(b.x);
      const auto loss = mse_loss(pred, b.y);
      require(std::isfinite(loss.loss), ErrorKind::non_finite,
              "non-finite training loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index));
      const auto grads = net.backward(loss.grad);
      adam_step(net.params(), grads, adam, lr, cfg);
      loss_sum += loss.loss * static_cast<double>(end - start);
      loss_count += static_cast<double>(end - start);
    }

    HistoryRow row;
    row.epoch = epoch;
    row.train_mse = loss_sum / loss_count;
    row.lr = lr;
    if (!val_pairs.empty()) row.val_mse = validation_mse(net, val_pairs, cfg.sampler, cfg.batch_size);
    result.history.push_back(row);
    if (on_epoch) on_epoch(row);

    const bool better = val_pairs.empty() ? true : row.val_mse < best_val;
    if (better) {
      if (!val_pairs.empty()) best_val = row.val_mse;
      result.best_epoch = epoch;
      result.best_params = net.params();
    }
  }
  if (result.best_params.empty()) result.best_params = net.params();
  net.params() = result.best_params;
  return result;
}

inline nlohmann::json history_json(const std::vector<HistoryRow>& rows) {
  auto out = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j{{"epoch", r.epoch}, {"train_mse", r.train_mse}, {"lr", r.lr}};
    j["val_mse"] = std::isfinite(r.val_mse) ? nlohmann::json(r.val_mse) : nlohmann::json(nullptr);
    out.push_back(std::move(j));
  }
  return out;
}

}  // namespace stackdenoise::training
