#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "stackdenoise/error.hpp"
#include "stackdenoise/nnet/network.hpp"

namespace stackdenoise::nn {

namespace detail {

class GraphBuilder {
 public:
  GraphBuilder(std::size_t n_in, double width_scale, Activation act) : scale_(width_scale), act_(act) {
    require(n_in >= 1, ErrorKind::invalid_argument, "n_in must be at least 1");
    require(width_scale > 0.0 && width_scale <= 1.0, ErrorKind::invalid_argument,
            "width_scale must lie in (0, 1], got " + std::to_string(width_scale));
    layers_.push_back({1, LayerKind::input, n_in, n_in, Activation::linear, 0});
  }

  std::size_t width(std::size_t c) const {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(c) * scale_)));
  }

  void conv(std::size_t out) { push(LayerKind::conv3x3, width(out), act_); }
  void conv_linear(std::size_t out) { push(LayerKind::conv3x3, out, Activation::linear); }
  void pool() { push(LayerKind::maxpool2x2, channels(), Activation::linear); }
  void up() { push(LayerKind::upsample2x2, channels(), Activation::linear); }
  void concat(int source) {
    std::size_t src_c = 0;
    for (const auto& l : layers_)
      if (l.id == source) src_c = l.out_channels;
    push(LayerKind::concat, channels() + src_c, Activation::linear, source);
  }
  void add_middle() { push(LayerKind::add_middle_input, channels(), Activation::linear); }

  std::vector<LayerSpec> take() { return std::move(layers_); }

 private:
  std::size_t channels() const { return layers_.back().out_channels; }
  void push(LayerKind k, std::size_t out, Activation a, int source = 0) {
    layers_.push_back({static_cast<int>(layers_.size()) + 1, k, channels(), out, a, source});
  }

  double scale_;
  Activation act_;
  std::vector<LayerSpec> layers_;
};

}  // namespace detail

/// Five-level U-Net with LeakyReLU(0.1); layer ids follow the MRI architecture table.
template <typename T = float>
Network<T> build_mri_unet(std::size_t n_in, double width_scale = 1.0) {
  detail::GraphBuilder b(n_in, width_scale, Activation::leaky_relu);
  b.conv(48);  // 2
  b.conv(48);
  b.pool();    // 4
  b.conv(48);
  b.pool();    // 6
  b.conv(48);
  b.pool();    // 8
  b.conv(48);
  b.pool();    // 10
  b.conv(48);
  b.pool();    // 12
  b.conv(48);  // 13
  for (int skip : {10, 8, 6, 4}) {
    b.up();
    b.concat(skip);
    b.conv(96);
    b.conv(96);
  }
  b.up();       // 30
  b.concat(1);  // 31
  b.conv(64);
  b.conv(32);
  b.conv_linear(1);  // 34
  return Network<T>(Variant::mri, n_in, width_scale, b.take());
}

/// Two-level U-Net with ReLU and a residual connection to the middle input
/// plane; layer ids follow the microscopy architecture table.
template <typename T = float>
Network<T> build_microscopy_unet(std::size_t n_in, double width_scale = 1.0) {
  detail::GraphBuilder b(n_in, width_scale, Activation::relu);
  b.conv(32);  // 2
  b.conv(32);
  b.pool();    // 4
  b.conv(64);
  b.conv(64);  // 6
  b.pool();
  b.conv(128);  // 8
  b.conv(64);
  b.up();       // 10
  b.concat(6);
  b.conv(64);
  b.conv(32);   // 13
  b.up();
  b.concat(3);  // 15
  b.conv(32);
  b.conv(32);
  b.conv_linear(1);  // 18
  b.add_middle();    // 19
  return Network<T>(Variant::microscopy, n_in, width_scale, b.take());
}

template <typename T = float>
Network<T> build_unet(Variant v, std::size_t n_in, double width_scale = 1.0) {
  return v == Variant::mri ? build_mri_unet<T>(n_in, width_scale) : build_microscopy_unet<T>(n_in, width_scale);
}

}  // namespace stackdenoise::nn
