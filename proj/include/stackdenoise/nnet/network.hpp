#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stackdenoise/error.hpp"
#include "stackdenoise/nnet/ops.hpp"
#include "stackdenoise/nnet/tensor.hpp"
#include "stackdenoise/random.hpp"

namespace stackdenoise::nn {

enum class LayerKind { input, conv3x3, maxpool2x2, upsample2x2, concat, add_middle_input };
enum class Variant { mri, microscopy };

inline std::string to_string(LayerKind k) {
  switch (k) {
    case LayerKind::input: return "input";
    case LayerKind::conv3x3: return "conv3x3";
    case LayerKind::maxpool2x2: return "maxpool2x2";
    case LayerKind::upsample2x2: return "upsample2x2";
    case LayerKind::concat: return "concat";
    case LayerKind::add_middle_input: return "add_middle_input";
  }
  return "?";
}

inline std::string to_string(Variant v) { return v == Variant::mri ? "mri" : "microscopy"; }

inline Variant parse_variant(const std::string& s) {
  if (s == "mri") return Variant::mri;
  if (s == "microscopy") return Variant::microscopy;
  fail(ErrorKind::invalid_argument, "unknown network variant '" + s + "'");
}

/// One row of an architecture table. Every layer reads the previous layer's
/// output; concat additionally reads layer `source` (appended after it).
struct LayerSpec {
  int id = 0;
  LayerKind kind = LayerKind::input;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  Activation activation = Activation::linear;
  int source = 0;
};

struct LayerShape {
  int id;
  LayerKind kind;
  std::size_t channels, height, width;
};

template <typename T>
struct ConvParams {
  std::vector<T> weight;  // out x in x 3 x 3
  std::vector<T> bias;

  std::size_t size() const { return weight.size() + bias.size(); }
  bool operator==(const ConvParams&) const = default;
};

/// Per-layer parameter storage aligned with Network::layers (empty for
/// parameter-free layers). Used for both parameters and their gradients.
template <typename T>
using ParamSet = std::vector<ConvParams<T>>;

template <typename T>
ParamSet<T> zeros_like(const ParamSet<T>& p) {
  ParamSet<T> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    out[i].weight.assign(p[i].weight.size(), T{});
    out[i].bias.assign(p[i].bias.size(), T{});
  }
  return out;
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

template <typename T>
class Network {
 public:
  Network(Variant variant, std::size_t n_in, double width_scale, std::vector<LayerSpec> layers)
      : variant_(variant), n_in_(n_in), width_scale_(width_scale), layers_(std::move(layers)) {
    require(!layers_.empty() && layers_.front().kind == LayerKind::input, ErrorKind::invalid_argument,
            "network must start with an input layer");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      if (l.kind == LayerKind::concat)
        require(index_of(l.source) < i, ErrorKind::invalid_argument,
                "layer " + std::to_string(l.id) + " concatenates a later layer");
    }
    require(layers_.back().out_channels == 1, ErrorKind::invalid_argument, "network output must have one channel");
    params_.resize(layers_.size());
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (layers_[i].kind != LayerKind::conv3x3) continue;
      params_[i].weight.assign(layers_[i].out_channels * layers_[i].in_channels * 9, T{});
      params_[i].bias.assign(layers_[i].out_channels, T{});
    }
  }

  Variant variant() const { return variant_; }
  std::size_t n_in() const { return n_in_; }
  double width_scale() const { return width_scale_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  std::size_t depth() const {
    std::size_t d = 0;
    for (const auto& l : layers_)
      if (l.kind == LayerKind::maxpool2x2) ++d;
    return d;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
  }

  std::size_t index_of(int id) const {
    for (std::size_t i = 0; i < layers_.size(); ++i)
      if (layers_[i].id == id) return i;
    fail(ErrorKind::invalid_argument, "no layer with id " + std::to_string(id));
  }

  /// Canonical topology string; its hash guards checkpoints.
  std::string topology() const {
    std::string s = to_string(variant_) + ";n_in=" + std::to_string(n_in_);
    for (const auto& l : layers_) {
      s += ";" + std::to_string(l.id) + ":" + to_string(l.kind) + ":" + std::to_string(l.in_channels) + ">" +
           std::to_string(l.out_channels) + ":" + to_string(l.activation);
      if (l.kind == LayerKind::concat) s += ":" + std::to_string(l.source);
    }
    return s;
  }

  std::uint64_t graph_hash() const { return fnv1a(topology()); }

  /// Per-layer output shapes for an h x w input.
  std::vector<LayerShape> shape_walk(std::size_t h, std::size_t w) const {
    check_spatial(h, w);
    std::vector<LayerShape> out;
    for (const auto& l : layers_) {
      if (l.kind == LayerKind::maxpool2x2) {
        h /= 2;
        w /= 2;
      } else if (l.kind == LayerKind::upsample2x2) {
        h *= 2;
        w *= 2;
      }
      out.push_back({l.id, l.kind, l.out_channels, h, w});
    }
    return out;
  }

  /// Test hook: replaces every activation (ReLU and LeakyReLU) by `act`.
  void override_activations(std::optional<Activation> act) { override_ = act; }

  void zero_params() {
    for (auto& p : params_) {
      std::fill(p.weight.begin(), p.weight.end(), T{});
      std::fill(p.bias.begin(), p.bias.end(), T{});
    }
  }

  /// Normal weights with variance 2 / fan_in, zero biases.
  void init_he(std::uint64_t seed) {
    Rng rng(seed);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (layers_[i].kind != LayerKind::conv3x3) continue;
      const double sd = std::sqrt(2.0 / static_cast<double>(layers_[i].in_channels * 9));
      for (auto& v : params_[i].weight) v = static_cast<T>(sd * normal(rng));
      std::fill(params_[i].bias.begin(), params_[i].bias.end(), T{});
    }
  }

  /// Forward pass that keeps activations for backward().
  Tensor4<T> forward(const Tensor4<T>& x) {
    cache_ = run(x, true);
    return cache_.outputs.back();
  }

  /// Forward pass without caching; safe to call concurrently.
  Tensor4<T> infer(const Tensor4<T>& x) const { return run(x, false).outputs.back(); }

  /// Reverse pass from dL/d(output). Returns parameter gradients; when
  /// `input_grad` is non-null it receives dL/d(input).
  ParamSet<T> backward(const Tensor4<T>& output_grad, Tensor4<T>* input_grad = nullptr) const {
    require(!cache_.outputs.empty(), ErrorKind::state, "backward called before forward");
    require_same_shape(output_grad, cache_.outputs.back(), "backward: output gradient");
    const auto& outs = cache_.outputs;
    std::vector<Tensor4<T>> grads(layers_.size());
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& o = outs[i];
      grads[i] = Tensor4<T>(o.n, o.c, o.h, o.w);
    }
    grads.back() = output_grad;
    ParamSet<T> pg = zeros_like(params_);

    for (std::size_t i = layers_.size() - 1; i >= 1; --i) {
      const auto& l = layers_[i];
      Tensor4<T>& g = grads[i];
      Tensor4<T>& gprev = grads[i - 1];
      switch (l.kind) {
        case LayerKind::conv3x3: {
          ops::activation_backward(outs[i], g, activation_of(l));
          const bool need_dx = i - 1 > 0 || input_grad != nullptr;
          ops::conv3x3_backward<T>(outs[i - 1], params_[i].weight, g, pg[i].weight, pg[i].bias,
                                   need_dx ? &gprev : nullptr);
          break;
        }
        case LayerKind::maxpool2x2:
          ops::maxpool2x2_backward(g, cache_.argmax[i], gprev);
          break;
        case LayerKind::upsample2x2:
          ops::upsample2x2_backward(g, gprev);
          break;
        case LayerKind::concat:
          ops::concat_backward(g, gprev, grads[index_of(l.source)]);
          break;
        case LayerKind::add_middle_input:
          for (std::size_t k = 0; k < g.data.size(); ++k) gprev.data[k] += g.data[k];
          ops::middle_channel_backward(g, grads[0]);
          break;
        case LayerKind::input:
          break;
      }
    }
    if (input_grad) *input_grad = std::move(grads[0]);
    return pg;
  }

  template <typename U>
  Network<U> cast() const {
    Network<U> out(variant_, n_in_, width_scale_, layers_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      out.params()[i].weight.assign(params_[i].weight.begin(), params_[i].weight.end());
      out.params()[i].bias.assign(params_[i].bias.begin(), params_[i].bias.end());
    }
    return out;
  }

 private:
  struct Cache {
    std::vector<Tensor4<T>> outputs;
    std::vector<std::vector<std::uint8_t>> argmax;
  };

  Activation activation_of(const LayerSpec& l) const {
    if (override_ && l.activation != Activation::linear) return *override_;
    return l.activation;
  }

  void check_spatial(std::size_t h, std::size_t w) const {
    const std::size_t m = std::size_t{1} << depth();
    require(h > 0 && w > 0 && h % m == 0 && w % m == 0, ErrorKind::shape_mismatch,
            "input " + std::to_string(h) + "x" + std::to_string(w) + " is not divisible by " + std::to_string(m) +
                " (2^depth)");
  }

  Cache run(const Tensor4<T>& x, bool keep) const {
    require(x.c == n_in_, ErrorKind::shape_mismatch,
            "network expects " + std::to_string(n_in_) + " input channels, got " + std::to_string(x.c));
    check_spatial(x.h, x.w);
    Cache c;
    c.outputs.resize(layers_.size());
    if (keep) c.argmax.resize(layers_.size());
    c.outputs[0] = x;
    for (std::size_t i = 1; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      const Tensor4<T>& in = c.outputs[i - 1];
      Tensor4<T> y;
      switch (l.kind) {
        case LayerKind::conv3x3:
          y = ops::conv3x3<T>(in, params_[i].weight, params_[i].bias, l.out_channels);
          ops::activate(y, activation_of(l));
          break;
        case LayerKind::maxpool2x2:
          y = ops::maxpool2x2(in, keep ? &c.argmax[i] : nullptr);
          break;
        case LayerKind::upsample2x2:
          y = ops::upsample2x2(in);
          break;
        case LayerKind::concat:
          y = ops::concat(in, c.outputs[index_of(l.source)]);
          break;
        case LayerKind::add_middle_input:
          y = ops::add(in, ops::middle_channel(c.outputs[0]));
          break;
        case LayerKind::input:
          fail(ErrorKind::invalid_argument, "input layer after the first position");
      }
      c.outputs[i] = std::move(y);
      if (!keep) release_unused(c, i - 1);
    }
    return c;
  }

  // Frees an activation during inference once nothing downstream reads it.
  void release_unused(Cache& c, std::size_t i) const {
    for (const auto& l : layers_)
      if (l.kind == LayerKind::concat && index_of(l.source) == i) return;
    if (i == 0) return;
    c.outputs[i] = Tensor4<T>();
  }

  Variant variant_;
  std::size_t n_in_;
  double width_scale_;
  std::vector<LayerSpec> layers_;
  ParamSet<T> params_;
  std::optional<Activation> override_;
  Cache cache_;
};

}  // namespace stackdenoise::nn
