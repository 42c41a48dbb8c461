#pragma once

#include <algorithm>
#include <span>
#include <vector>

#include "stackdenoise/error.hpp"
#include "stackdenoise/image.hpp"
#include "stackdenoise/metrics.hpp"

namespace stackdenoise::data {

/// Min-max scales one plane to [-0.5, 0.5].
inline Plane scale_to_unit_range(const Plane& p) {
  const auto [lo_it, hi_it] = std::minmax_element(p.values().begin(), p.values().end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  require(hi > lo, ErrorKind::degenerate, "cannot scale a constant image");
  Plane out(p.height(), p.width());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = (p[i] - lo) / (hi - lo) - 0.5;
  return out;
}

inline constexpr std::size_t mri_full_planes = 150;
inline constexpr std::size_t mri_kept_planes = 100;

/// MRI preprocessing: a 150-plane volume is trimmed to its 100 middle planes
/// (indices 25..124), then every plane is scaled to [-0.5, 0.5] on its own.
inline ImageStack preprocess_mri(const ImageStack& stack) {
  std::size_t first = 0;
  std::size_t count = stack.size();
  if (stack.size() == mri_full_planes) {
    first = (mri_full_planes - mri_kept_planes) / 2;
    count = mri_kept_planes;
  }
  std::vector<Plane> planes;
  planes.reserve(count);
  for (std::size_t i = first; i < first + count; ++i) planes.push_back(scale_to_unit_range(stack[i]));
  return ImageStack(stack.id(), std::move(planes), stack.plane_spacing());
}

struct MicroscopyPreprocessed {
  Plane background;
  std::vector<ImageStack> stacks;
};

/// Pixelwise median over every plane of every stack (mean of the two middle
/// values for an even count).
inline Plane median_background(std::span<const ImageStack> stacks) {
  require(!stacks.empty() && stacks.front().size() > 0, ErrorKind::invalid_argument,
          "background estimation needs at least one image");
  const auto h = stacks.front().height();
  const auto w = stacks.front().width();
  std::vector<const Plane*> all;
  for (const auto& s : stacks) {
    require(s.height() == h && s.width() == w, ErrorKind::shape_mismatch,
            "stack '" + s.id() + "' does not match the modality's image size");
    for (const auto& p : s.planes()) all.push_back(&p);
  }
  Plane bg(h, w);
  std::vector<double> column(all.size());
  for (std::size_t i = 0; i < bg.size(); ++i) {
    for (std::size_t k = 0; k < all.size(); ++k) column[k] = (*all[k])[i];
    const auto mid = column.size() / 2;
    std::nth_element(column.begin(), column.begin() + static_cast<long>(mid), column.end());
    double m = column[mid];
    if (column.size() % 2 == 0) {
      const double below = *std::max_element(column.begin(), column.begin() + static_cast<long>(mid));
      m = 0.5 * (m + below);
    }
    bg[i] = m;
  }
  return bg;
}

/// Percentile normalization: p_lo -> 0, p_hi -> 1 (values outside are kept).
inline Plane percentile_normalize(const Plane& p, double q_lo, double q_hi) {
  const double lo = metrics::percentile(p.values(), q_lo);
  const double hi = metrics::percentile(p.values(), q_hi);
  require(hi > lo, ErrorKind::degenerate,
          "degenerate percentiles: p" + std::to_string(q_lo) + " == p" + std::to_string(q_hi));
  Plane out(p.height(), p.width());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = (p[i] - lo) / (hi - lo);
  return out;
}

/// Microscopy preprocessing for the stacks of one modality: subtract the
/// camera background (pixelwise median over all images), then normalize each
/// image between its 3rd and 99.8th percentiles.
inline MicroscopyPreprocessed preprocess_microscopy(std::span<const ImageStack> stacks) {
  MicroscopyPreprocessed out;
  out.background = median_background(stacks);
  for (const auto& s : stacks) {
    std::vector<Plane> planes;
    for (const auto& p : s.planes()) {
      Plane sub(p.height(), p.width());
      for (std::size_t i = 0; i < p.size(); ++i) sub[i] = p[i] - out.background[i];
      planes.push_back(percentile_normalize(sub, 3.0, 99.8));
    }
    out.stacks.emplace_back(s.id(), std::move(planes), s.plane_spacing());
  }
  return out;
}

}  // namespace stackdenoise::data
