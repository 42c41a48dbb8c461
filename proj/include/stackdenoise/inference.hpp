#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

#include "stackdenoise/image.hpp"
#include "stackdenoise/nnet/network.hpp"
#include "stackdenoise/stack.hpp"

namespace stackdenoise {

template <typename T>
nn::Tensor4<T> to_tensor(const std::vector<Plane>& planes) {
  require(!planes.empty(), ErrorKind::invalid_argument, "no planes to stack into a tensor");
  nn::Tensor4<T> x(1, planes.size(), planes[0].height(), planes[0].width());
  for (std::size_t c = 0; c < planes.size(); ++c) {
    require_same_shape(planes[c], planes[0], "to_tensor");
    std::transform(planes[c].values().begin(), planes[c].values().end(), x.plane(0, c),
                   [](double v) { return static_cast<T>(v); });
  }
  return x;
}

template <typename T>
Plane to_plane(const nn::Tensor4<T>& y, std::size_t n = 0, std::size_t c = 0) {
  Plane out(y.h, y.w);
  std::transform(y.plane(n, c), y.plane(n, c) + y.plane_size(), out.values().begin(),
                 [](T v) { return static_cast<double>(v); });
  return out;
}

/// Network prediction for plane `i` of a noisy stack.
template <typename T>
Plane predict_plane(const nn::Network<T>& net, const ImageStack& noisy, std::size_t i, const SamplerConfig& sampler) {
  require(net.n_in() == sampler.input_width(), ErrorKind::shape_mismatch,
          "model takes " + std::to_string(net.n_in()) + " planes but the sampler produces " +
              std::to_string(sampler.input_width()));
  const auto ex = sample_example(noisy, noisy, i, sampler);
  return to_plane(net.infer(to_tensor<T>(ex.input_planes)));
}

/// Denoises every plane; planes are distributed over `workers` threads.
template <typename T>
std::vector<Plane> denoise_stack(const nn::Network<T>& net, const ImageStack& noisy, const SamplerConfig& sampler,
                                 std::size_t workers = 1) {
  std::vector<Plane> out(noisy.size());
  workers = std::max<std::size_t>(1, std::min(workers, noisy.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < noisy.size(); ++i) out[i] = predict_plane(net, noisy, i, sampler);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < workers; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < noisy.size(); i = next++) {
        try {
          out[i] = predict_plane(net, noisy, i, sampler);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
  return out;
}

}  // namespace stackdenoise
