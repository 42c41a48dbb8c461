#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <mutex>
#include <vector>

#include <fftw3.h>

#include "stackdenoise/error.hpp"
#include "stackdenoise/image.hpp"
#include "stackdenoise/random.hpp"

namespace stackdenoise::kspace {

using Complex = std::complex<double>;
using Spectrum = Image<Complex>;
using Mask = Image<std::uint8_t>;

namespace detail {

// The FFTW planner is not reentrant; execution of a finished plan is.
inline std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

inline void transform(std::vector<Complex>& data, std::size_t h, std::size_t w, int sign) {
  auto* buf = reinterpret_cast<fftw_complex*>(data.data());
  fftw_plan plan;
  {
    std::lock_guard lock(planner_mutex());
    plan = fftw_plan_dft_2d(static_cast<int>(h), static_cast<int>(w), buf, buf, sign, FFTW_ESTIMATE);
  }
  require(plan != nullptr, ErrorKind::state, "FFTW could not create a plan");
  fftw_execute(plan);
  std::lock_guard lock(planner_mutex());
  fftw_destroy_plan(plan);
}

}  // namespace detail

/// Unnormalized forward 2D DFT with the DC bin at index (0, 0).
inline Spectrum dft2(const Spectrum& image) {
  require(image.height() >= 1 && image.width() >= 1, ErrorKind::invalid_argument, "dft2 of an empty image");
  std::vector<Complex> data(image.values().begin(), image.values().end());
  for (const auto& v : data) {
    require(std::isfinite(v.real()) && std::isfinite(v.imag()), ErrorKind::non_finite, "dft2 input is not finite");
  }
  detail::transform(data, image.height(), image.width(), FFTW_FORWARD);
  return Spectrum(image.height(), image.width(), std::move(data));
}

inline Spectrum dft2(const Plane& image) {
  Spectrum c(image.height(), image.width());
  for (std::size_t i = 0; i < image.size(); ++i) c[i] = image[i];
  return dft2(c);
}

/// Inverse 2D DFT carrying the 1/(H*W) factor.
inline Spectrum idft2(const Spectrum& spectrum) {
  require(spectrum.height() >= 1 && spectrum.width() >= 1, ErrorKind::invalid_argument, "idft2 of an empty spectrum");
  std::vector<Complex> data(spectrum.values().begin(), spectrum.values().end());
  detail::transform(data, spectrum.height(), spectrum.width(), FFTW_BACKWARD);
  const double scale = 1.0 / static_cast<double>(spectrum.size());
  for (auto& v : data) v *= scale;
  return Spectrum(spectrum.height(), spectrum.width(), std::move(data));
}

inline Plane real_part(const Spectrum& s) {
  Plane out(s.height(), s.width());
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = s[i].real();
  return out;
}

/// Signed frequency of DFT index `u` on an axis of length `n`, matching the
/// fftshift convention (the Nyquist bin of an even axis is negative).
inline long signed_frequency(std::size_t u, std::size_t n) {
  const auto su = static_cast<long>(u);
  return u < (n + 1) / 2 ? su : su - static_cast<long>(n);
}

/// |k| of bin (u, v): Euclidean distance, in bins, from the centered DC bin.
inline double frequency_radius(std::size_t u, std::size_t v, std::size_t h, std::size_t w) {
  const auto fu = static_cast<double>(signed_frequency(u, h));
  const auto fv = static_cast<double>(signed_frequency(v, w));
  return std::sqrt(fu * fu + fv * fv);
}

/// Linear index of the bin holding the conjugate partner of (u, v).
inline std::size_t conjugate_index(std::size_t u, std::size_t v, std::size_t h, std::size_t w) {
  return ((h - u) % h) * w + ((w - v) % w);
}

/// Sampling probability p(k) = exp(-lambda |k|) for every bin.
inline Plane retention_probability(std::size_t h, std::size_t w, double lambda) {
  Plane p(h, w);
  for (std::size_t u = 0; u < h; ++u)
    for (std::size_t v = 0; v < w; ++v) p(u, v) = std::exp(-lambda * frequency_radius(u, v, h, w));
  return p;
}

inline double mean_retention(std::size_t h, std::size_t w, double lambda) {
  const Plane p = retention_probability(h, w, lambda);
  double acc = 0.0;
  for (double v : p.values()) acc += v;
  return acc / static_cast<double>(p.size());
}

/// Finds lambda with mean_k exp(-lambda |k|) == retain_fraction (to 1e-6) by
/// bisection. The DC bin is always kept, so fractions at or below 1/(H*W)
/// are unreachable.
inline double calibrate_lambda(std::size_t h, std::size_t w, double retain_fraction) {
  require(retain_fraction > 0.0 && retain_fraction <= 1.0, ErrorKind::invalid_argument,
          "retain fraction must lie in (0, 1], got " + std::to_string(retain_fraction));
  require(h >= 1 && w >= 1, ErrorKind::invalid_argument, "calibrate_lambda on an empty grid");
  if (retain_fraction == 1.0) return 0.0;
  require(retain_fraction > 1.0 / static_cast<double>(h * w), ErrorKind::invalid_argument,
          "retain fraction " + std::to_string(retain_fraction) + " is unreachable on a " + std::to_string(h) + "x" +
              std::to_string(w) + " grid");

  double lo = 0.0;
  double hi = 1.0;
  while (mean_retention(h, w, hi) > retain_fraction) hi *= 2.0;
  double mid = 0.5 * (lo + hi);
  for (int iter = 0; iter < 200; ++iter) {
    mid = 0.5 * (lo + hi);
    const double m = mean_retention(h, w, mid);
    if (std::abs(m - retain_fraction) < 1e-6) break;
    if (m > retain_fraction) lo = mid;
    else hi = mid;
  }
  return mid;
}

struct NoiseSpec {
  double retain_fraction = 0.10;
  /// Negative means "not calibrated yet".
  double lambda = -1.0;
  std::uint64_t seed = 0;
  bool symmetric_mask = true;

  static NoiseSpec calibrated(std::size_t h, std::size_t w, double retain_fraction, std::uint64_t seed,
                              bool symmetric = true) {
    return NoiseSpec{retain_fraction, calibrate_lambda(h, w, retain_fraction), seed, symmetric};
  }
};

struct NoiseRealization {
  Plane noisy_image;
  Mask mask;
  /// Unweighted sampled spectrum; zero wherever the mask is false.
  Spectrum raw_spectrum;
  double lambda_used = 0.0;

  double retained_fraction() const {
    std::size_t kept = 0;
    for (auto m : mask.values()) kept += m != 0;
    return static_cast<double>(kept) / static_cast<double>(mask.size());
  }
};

/// Draws a Bernoulli(p(k)) frequency mask. With `symmetric` set, each
/// conjugate pair of bins shares one draw so the mask is Hermitian.
inline Mask sample_mask(const Plane& probability, bool symmetric, Rng& rng) {
  const std::size_t h = probability.height();
  const std::size_t w = probability.width();
  Mask mask(h, w, 0);
  for (std::size_t u = 0; u < h; ++u) {
    for (std::size_t v = 0; v < w; ++v) {
      const std::size_t idx = u * w + v;
      const std::size_t partner = conjugate_index(u, v, h, w);
      if (symmetric && partner < idx) {
        mask[idx] = mask[partner];
        continue;
      }
      mask[idx] = uniform01(rng) < probability[idx] ? 1 : 0;
    }
  }
  return mask;
}

/// Simulates frequency undersampling: keeps each bin with probability p(k),
/// reweights kept bins by 1/p(k) and returns the real inverse transform.
inline NoiseRealization corrupt(const Plane& clean, const NoiseSpec& spec) {
  require(spec.lambda >= 0.0, ErrorKind::invalid_argument, "noise lambda is uncalibrated (negative)");
  require(all_finite(clean), ErrorKind::non_finite, "corrupt: clean image is not finite");
  const std::size_t h = clean.height();
  const std::size_t w = clean.width();

  Rng rng(spec.seed);
  const Plane p = retention_probability(h, w, spec.lambda);
  NoiseRealization out;
  out.lambda_used = spec.lambda;
  out.mask = sample_mask(p, spec.symmetric_mask, rng);

  const Spectrum full = dft2(clean);
  out.raw_spectrum = Spectrum(h, w);
  Spectrum weighted(h, w);
  for (std::size_t i = 0; i < full.size(); ++i) {
    if (out.mask[i]) {
      out.raw_spectrum[i] = full[i];
      weighted[i] = full[i] / p[i];
    }
  }
  out.noisy_image = real_part(idft2(weighted));
  return out;
}

/// Replaces the spectrum of `output` by the measured values at every sampled
/// bin and transforms back.
inline Plane data_consistency(const Plane& output, const NoiseRealization& realization) {
  require_same_shape(output, realization.mask, "data_consistency");
  require_same_shape(output, realization.raw_spectrum, "data_consistency");
  Spectrum s = dft2(output);
  for (std::size_t i = 0; i < s.size(); ++i)
    if (realization.mask[i]) s[i] = realization.raw_spectrum[i];
  return real_part(idft2(s));
}

/// Merges two independent realizations of the same image: union of masks,
/// mean of the measured values where both copies sampled a bin.
inline Plane combine_copies(const NoiseRealization& a, const NoiseRealization& b) {
  require_same_shape(a.mask, b.mask, "combine_copies");
  require_same_shape(a.raw_spectrum, b.raw_spectrum, "combine_copies");
  Spectrum s(a.mask.height(), a.mask.width());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const bool in_a = a.mask[i] != 0;
    const bool in_b = b.mask[i] != 0;
    if (in_a && in_b) s[i] = 0.5 * (a.raw_spectrum[i] + b.raw_spectrum[i]);
    else if (in_a) s[i] = a.raw_spectrum[i];
    else if (in_b) s[i] = b.raw_spectrum[i];
  }
  return real_part(idft2(s));
}

}  // namespace stackdenoise::kspace
