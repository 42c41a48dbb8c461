#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stackdenoise/error.hpp"
#include "stackdenoise/image.hpp"
#include "stackdenoise/metrics.hpp"
#include "stackdenoise/random.hpp"

namespace stackdenoise {

enum class SamplerMode { copy_supervised, self_supervised };

inline std::string to_string(SamplerMode m) {
  return m == SamplerMode::copy_supervised ? "copy_supervised" : "self_supervised";
}

inline SamplerMode parse_sampler_mode(const std::string& s) {
  if (s == "copy_supervised" || s == "copy") return SamplerMode::copy_supervised;
  if (s == "self_supervised" || s == "self") return SamplerMode::self_supervised;
  fail(ErrorKind::invalid_argument, "unknown sampler mode '" + s + "'");
}

/// Which neighbor planes feed the network. Absent neighbors at the stack
/// margins are always resolved by reflecting the offset (see reflect_index).
struct SamplerConfig {
  std::size_t neighbors_per_side = 1;
  SamplerMode mode = SamplerMode::self_supervised;

  void validate() const {
    require(mode == SamplerMode::copy_supervised || neighbors_per_side >= 1, ErrorKind::invalid_argument,
            "self-supervised sampling needs at least one neighbor per side");
  }

  /// 2K+1 planes in copy mode, 2K in self mode.
  std::size_t input_width() const {
    return mode == SamplerMode::copy_supervised ? 2 * neighbors_per_side + 1 : 2 * neighbors_per_side;
  }

  /// Plane offsets in channel order, strictly increasing.
  std::vector<long> offsets() const {
    std::vector<long> out;
    const auto k = static_cast<long>(neighbors_per_side);
    for (long d = -k; d <= k; ++d) {
      if (d == 0 && mode == SamplerMode::self_supervised) continue;
      out.push_back(d);
    }
    return out;
  }
};

/// Resolves plane `i + offset` in a stack of `count` planes. Out-of-range
/// indices are mirrored (i - offset); if the mirror also falls outside, the
/// index is clamped. A single-plane stack resolves every offset to 0 when
/// `clamp` is set and is an error otherwise.
inline std::size_t reflect_index(long i, long offset, std::size_t count, bool clamp = true) {
  const auto p = static_cast<long>(count);
  require(count >= 1 && i >= 0 && i < p, ErrorKind::index_out_of_range,
          "plane " + std::to_string(i) + " outside a stack of " + std::to_string(count));
  if (offset == 0) return static_cast<std::size_t>(i);
  if (count == 1) {
    require(clamp, ErrorKind::invalid_argument, "neighbor offset requested on a single-plane stack");
    return 0;
  }
  const long direct = i + offset;
  if (direct >= 0 && direct < p) return static_cast<std::size_t>(direct);
  const long mirrored = i - offset;
  if (mirrored >= 0 && mirrored < p) return static_cast<std::size_t>(mirrored);
  return static_cast<std::size_t>(mirrored < 0 ? 0 : p - 1);
}

struct SampledExample {
  std::vector<Plane> input_planes;
  std::vector<std::size_t> input_indices;
  Plane target_plane;
  std::size_t target_index = 0;
  std::string source_stack_id;
  SamplerMode mode = SamplerMode::self_supervised;
};

/// Builds one training example for plane `i`: neighbors (and, in copy mode,
/// the plane itself) come from `stack_in`, the target from `stack_target`.
inline SampledExample sample_example(const ImageStack& stack_in, const ImageStack& stack_target, std::size_t i,
                                     const SamplerConfig& cfg) {
  cfg.validate();
  require(stack_in.same_shape(stack_target), ErrorKind::shape_mismatch,
          "input stack '" + stack_in.id() + "' and target stack '" + stack_target.id() + "' differ in shape");
  require(i < stack_in.size(), ErrorKind::index_out_of_range,
          "plane " + std::to_string(i) + " outside stack '" + stack_in.id() + "' of " +
              std::to_string(stack_in.size()) + " planes");

  SampledExample ex;
  ex.mode = cfg.mode;
  ex.target_index = i;
  ex.source_stack_id = stack_in.id();
  ex.target_plane = stack_target[i];
  for (long d : cfg.offsets()) {
    const auto j = reflect_index(static_cast<long>(i), d, stack_in.size());
    ex.input_indices.push_back(j);
    ex.input_planes.push_back(stack_in[j]);
  }
  return ex;
}

struct PlaneRef {
  std::size_t stack = 0;
  std::size_t plane = 0;
  bool operator==(const PlaneRef&) const = default;
  auto operator<=>(const PlaneRef&) const = default;
};

/// One epoch: every (stack, plane) exactly once, in a seed-determined order.
inline std::vector<PlaneRef> enumerate_epoch(std::span<const std::size_t> plane_counts, std::uint64_t seed) {
  require(!plane_counts.empty(), ErrorKind::invalid_argument, "enumerate_epoch: no stacks");
  std::vector<PlaneRef> order;
  for (std::size_t s = 0; s < plane_counts.size(); ++s)
    for (std::size_t p = 0; p < plane_counts[s]; ++p) order.push_back({s, p});
  Rng rng(seed);
  shuffle(std::span<PlaneRef>(order), rng);
  return order;
}

struct StackPair {
  ImageStack input;
  ImageStack target;
};

inline std::vector<PlaneRef> enumerate_epoch(std::span<const StackPair> pairs, std::uint64_t seed) {
  std::vector<std::size_t> counts;
  for (const auto& p : pairs) counts.push_back(p.input.size());
  return enumerate_epoch(std::span<const std::size_t>(counts), seed);
}

struct SimilarityConfig {
  metrics::MetricConfig metric;
  /// Plane distances examined besides the adjacent pairs.
  std::vector<std::size_t> distant_offsets{8};
};

struct SimilarityRow {
  std::size_t plane_i = 0;
  std::size_t plane_j = 0;
  double ssim = 0.0;
  double residual_mean = 0.0;
  double residual_std = 0.0;
};

/// SSIM and residual statistics (plane_j - plane_i) for every adjacent pair,
/// followed by every pair at each configured distance.
inline std::vector<SimilarityRow> neighbor_similarity_report(const ImageStack& stack, const SimilarityConfig& cfg = {}) {
  require(stack.size() >= 2, ErrorKind::invalid_argument, "neighbor similarity needs at least two planes");
  std::vector<std::size_t> distances{1};
  for (auto d : cfg.distant_offsets)
    if (d > 1) distances.push_back(d);

  std::vector<SimilarityRow> rows;
  for (auto d : distances) {
    for (std::size_t i = 0; i + d < stack.size(); ++i) {
      const Plane& a = stack[i];
      const Plane& b = stack[i + d];
      SimilarityRow row{i, i + d, metrics::ssim(a, b, cfg.metric), 0.0, 0.0};
      const auto n = static_cast<double>(a.size());
      for (std::size_t k = 0; k < a.size(); ++k) row.residual_mean += b[k] - a[k];
      row.residual_mean /= n;
      for (std::size_t k = 0; k < a.size(); ++k) {
        const double r = b[k] - a[k] - row.residual_mean;
        row.residual_std += r * r;
      }
      row.residual_std = std::sqrt(row.residual_std / n);
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace stackdenoise
