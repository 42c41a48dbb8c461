#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "stackdenoise/error.hpp"
#include "stackdenoise/image.hpp"
#include "stackdenoise/random.hpp"

namespace stackdenoise::data {

/// Synthetic volumetric stack: planes are slices of a smooth 3D random field
/// inside a head-like ellipsoid, taken `drift` pixels apart along z.
struct PhantomSpec {
  std::size_t planes = 16;
  std::size_t height = 64;
  std::size_t width = 64;
  /// Correlation length of the texture, in pixels.
  double smoothness = 3.0;
  /// Distance between consecutive planes, in pixels of the same field.
  double drift = 0.75;
  /// Standard deviation of independent per-plane Gaussian noise.
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  std::size_t modes = 192;
  std::string id = "phantom";

  void validate() const {
    require(planes >= 1 && height >= 1 && width >= 1, ErrorKind::invalid_argument, "phantom dimensions must be positive");
    require(smoothness > 0.0 && drift >= 0.0 && noise_sigma >= 0.0 && modes >= 1, ErrorKind::invalid_argument,
            "phantom smoothness must be positive; drift and noise must be non-negative");
  }
};

inline ImageStack generate_phantom_stack(const PhantomSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);

  struct Mode {
    double kx, ky, kz, phase, amp;
  };
  // Two texture scales: a coarse anatomy-like field and finer detail.
  std::vector<Mode> modes;
  const double sqrt_half = std::sqrt(2.0 / static_cast<double>(spec.modes));
  for (std::size_t m = 0; m < spec.modes; ++m) {
    const double len = m % 2 == 0 ? spec.smoothness : 2.5 * spec.smoothness;
    const double amp = (m % 2 == 0 ? 0.6 : 0.8) * sqrt_half;
    modes.push_back({normal(rng) / len, normal(rng) / len, normal(rng) / len, 2.0 * std::numbers::pi * uniform01(rng), amp});
  }

  const double cy = 0.5 * static_cast<double>(spec.height - 1);
  const double cx = 0.5 * static_cast<double>(spec.width - 1);
  const double ry = 0.42 * static_cast<double>(spec.height) * (1.0 + 0.1 * (uniform01(rng) - 0.5));
  const double rx = 0.36 * static_cast<double>(spec.width) * (1.0 + 0.1 * (uniform01(rng) - 0.5));
  const double z_center = 0.5 * static_cast<double>(spec.planes - 1) * spec.drift;
  const double rz = std::max(1.0, 1.6 * z_center);
  const double edge = 1.5;

  std::vector<Plane> planes;
  std::vector<double> cos_row(spec.width);
  for (std::size_t p = 0; p < spec.planes; ++p) {
    const double z = static_cast<double>(p) * spec.drift;
    const double dz = (z - z_center) / rz;
    const double shrink = std::sqrt(std::max(0.05, 1.0 - dz * dz));

    Plane texture(spec.height, spec.width, 0.0);
    for (const auto& m : modes) {
      for (std::size_t r = 0; r < spec.height; ++r) {
        const double base = m.ky * static_cast<double>(r) + m.kz * z + m.phase;
        for (std::size_t c = 0; c < spec.width; ++c)
          texture(r, c) += m.amp * std::cos(base + m.kx * static_cast<double>(c));
      }
    }

    Plane out(spec.height, spec.width);
    for (std::size_t r = 0; r < spec.height; ++r) {
      for (std::size_t c = 0; c < spec.width; ++c) {
        const double ny = (static_cast<double>(r) - cy) / (ry * shrink);
        const double nx = (static_cast<double>(c) - cx) / (rx * shrink);
        const double dist = (std::sqrt(nx * nx + ny * ny) - 1.0) * std::min(ry, rx) * shrink;
        const double inside = 1.0 / (1.0 + std::exp(dist / edge * 2.0));
        const double t = texture(r, c);
        // Bright rim plus textured interior with sharp-ish tissue boundaries.
        const double tissue = 0.45 + 0.22 * t + 0.18 * std::tanh(3.0 * t);
        const double rim = 0.25 * std::exp(-dist * dist / 4.0);
        double v = inside * tissue + rim;
        if (spec.noise_sigma > 0.0) v += spec.noise_sigma * normal(rng);
        out(r, c) = v;
      }
    }
    planes.push_back(std::move(out));
  }
  return ImageStack(spec.id, std::move(planes));
}

}  // namespace stackdenoise::data
