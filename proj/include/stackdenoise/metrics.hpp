#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

#include "stackdenoise/error.hpp"
#include "stackdenoise/image.hpp"

namespace stackdenoise::metrics {

enum class Protocol { raw, mri, microscopy };

inline Protocol parse_protocol(const std::string& s) {
  if (s == "raw") return Protocol::raw;
  if (s == "mri") return Protocol::mri;
  if (s == "microscopy") return Protocol::microscopy;
  fail(ErrorKind::invalid_argument, "unknown metric protocol '" + s + "'");
}

struct MetricConfig {
  double data_range = 1.0;
  std::size_t ssim_window = 11;
  double ssim_sigma = 1.5;
  double ssim_k1 = 0.01;
  double ssim_k2 = 0.03;
  Protocol protocol = Protocol::raw;

  void validate() const {
    require(data_range > 0.0, ErrorKind::invalid_argument, "data_range must be positive");
    require(ssim_window % 2 == 1, ErrorKind::invalid_argument, "SSIM window size must be odd");
    require(ssim_sigma > 0.0, ErrorKind::invalid_argument, "SSIM sigma must be positive");
  }
};

/// PSNR sentinel returned for a perfect reconstruction.
inline constexpr double psnr_infinite = std::numeric_limits<double>::infinity();

inline double mse(const Plane& gt, const Plane& pred) {
  require_same_shape(gt, pred, "mse");
  double acc = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double d = gt[i] - pred[i];
    acc += d * d;
  }
  return acc / static_cast<double>(gt.size());
}

inline double psnr(const Plane& gt, const Plane& pred, const MetricConfig& cfg = {}) {
  const double err = mse(gt, pred);
  if (err == 0.0) return psnr_infinite;
  return 10.0 * std::log10(cfg.data_range * cfg.data_range / err);
}

inline double nrmse(const Plane& gt, const Plane& pred, const MetricConfig& = {}) {
  require_same_shape(gt, pred, "nrmse");
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double d = gt[i] - pred[i];
    num += d * d;
    den += gt[i] * gt[i];
  }
  require(den > 0.0, ErrorKind::degenerate, "nrmse: ground truth has zero norm");
  return std::sqrt(num / den);
}

namespace detail {

inline std::vector<double> gaussian_kernel(std::size_t size, double sigma) {
  std::vector<double> k(size);
  const double r = static_cast<double>(size / 2);
  double total = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double x = static_cast<double>(i) - r;
    k[i] = std::exp(-x * x / (2.0 * sigma * sigma));
    total += k[i];
  }
  for (auto& v : k) v /= total;
  return k;
}

// Separable filter, keeping only positions where the whole window fits.
inline Plane filter_valid(const Plane& img, std::span<const double> k) {
  const std::size_t n = k.size();
  const std::size_t oh = img.height() - n + 1;
  const std::size_t ow = img.width() - n + 1;
  Plane tmp(img.height(), ow);
  for (std::size_t r = 0; r < img.height(); ++r) {
    for (std::size_t c = 0; c < ow; ++c) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += k[i] * img(r, c + i);
      tmp(r, c) = acc;
    }
  }
  Plane out(oh, ow);
  for (std::size_t r = 0; r < oh; ++r) {
    for (std::size_t c = 0; c < ow; ++c) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += k[i] * tmp(r + i, c);
      out(r, c) = acc;
    }
  }
  return out;
}

}  // namespace detail

/// Mean of the Gaussian-weighted local SSIM map over every window position
/// that lies fully inside the image.
inline double ssim(const Plane& gt, const Plane& pred, const MetricConfig& cfg = {}) {
  cfg.validate();
  require_same_shape(gt, pred, "ssim");
  require(gt.height() >= cfg.ssim_window && gt.width() >= cfg.ssim_window, ErrorKind::invalid_argument,
          "ssim: image " + std::to_string(gt.height()) + "x" + std::to_string(gt.width()) +
              " is smaller than the " + std::to_string(cfg.ssim_window) + "-pixel window");

  const auto k = detail::gaussian_kernel(cfg.ssim_window, cfg.ssim_sigma);
  Plane xx(gt.height(), gt.width()), yy(gt.height(), gt.width()), xy(gt.height(), gt.width());
  for (std::size_t i = 0; i < gt.size(); ++i) {
    xx[i] = gt[i] * gt[i];
    yy[i] = pred[i] * pred[i];
    xy[i] = gt[i] * pred[i];
  }
  const Plane mx = detail::filter_valid(gt, k);
  const Plane my = detail::filter_valid(pred, k);
  const Plane mxx = detail::filter_valid(xx, k);
  const Plane myy = detail::filter_valid(yy, k);
  const Plane mxy = detail::filter_valid(xy, k);

  const double c1 = (cfg.ssim_k1 * cfg.data_range) * (cfg.ssim_k1 * cfg.data_range);
  const double c2 = (cfg.ssim_k2 * cfg.data_range) * (cfg.ssim_k2 * cfg.data_range);
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = mxx[i] - mx[i] * mx[i];
    const double vy = myy[i] - my[i] * my[i];
    const double cov = mxy[i] - mx[i] * my[i];
    total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mx.size());
}

/// Linear-interpolation quantile (the numpy default estimator), q in [0, 100].
inline double percentile(std::span<const double> values, double q) {
  require(!values.empty(), ErrorKind::invalid_argument, "percentile of an empty set");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double pos = q / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

struct MicroscopyNormalization {
  Plane gt_norm;
  Plane pred_fit;
  double scale = 0.0;
  double offset = 0.0;
  bool constant_prediction = false;
};

/// Percentile-normalizes the ground truth to [p0.1, p99.9] -> [0, 1], then
/// fits the prediction with the least-squares affine map onto it.
inline MicroscopyNormalization normalize_for_metrics_microscopy(const Plane& gt, const Plane& pred) {
  require_same_shape(gt, pred, "normalize_for_metrics_microscopy");
  const double lo = percentile(gt.values(), 0.1);
  const double hi = percentile(gt.values(), 99.9);
  require(hi > lo, ErrorKind::degenerate, "ground truth percentiles p0.1 and p99.9 coincide");

  MicroscopyNormalization out;
  out.gt_norm = Plane(gt.height(), gt.width());
  for (std::size_t i = 0; i < gt.size(); ++i) out.gt_norm[i] = (gt[i] - lo) / (hi - lo);

  const auto n = static_cast<double>(gt.size());
  double mean_p = 0.0, mean_g = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    mean_p += pred[i];
    mean_g += out.gt_norm[i];
  }
  mean_p /= n;
  mean_g /= n;
  double var_p = 0.0, cov = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double dp = pred[i] - mean_p;
    var_p += dp * dp;
    cov += dp * (out.gt_norm[i] - mean_g);
  }
  if (var_p == 0.0) {
    out.constant_prediction = true;
    out.scale = 0.0;
    out.offset = mean_g;
  } else {
    out.scale = cov / var_p;
    out.offset = mean_g - out.scale * mean_p;
  }
  out.pred_fit = Plane(pred.height(), pred.width());
  for (std::size_t i = 0; i < pred.size(); ++i) out.pred_fit[i] = out.scale * pred[i] + out.offset;
  return out;
}

struct MetricRow {
  std::string id;
  std::size_t plane = 0;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double nrmse = 0.0;
};

struct Interval {
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

struct MetricReport {
  std::vector<MetricRow> rows;
  Interval psnr_db;
  Interval ssim;
  Interval nrmse;
  /// Number of units the confidence intervals are computed over, and whether
  /// those units are stacks (true) or planes of a single stack (false).
  std::size_t ci_units = 0;
  bool ci_over_stacks = false;
  std::vector<std::string> flags;
};

inline MetricRow evaluate_plane(const Plane& gt, const Plane& pred, const MetricConfig& cfg,
                                std::vector<std::string>* flags = nullptr) {
  MetricRow row;
  if (cfg.protocol == Protocol::microscopy) {
    const auto norm = normalize_for_metrics_microscopy(gt, pred);
    if (norm.constant_prediction && flags) flags->push_back("constant prediction; affine scale set to 0");
    row.psnr_db = psnr(norm.gt_norm, norm.pred_fit, cfg);
    row.ssim = ssim(norm.gt_norm, norm.pred_fit, cfg);
    row.nrmse = nrmse(norm.gt_norm, norm.pred_fit, cfg);
  } else {
    row.psnr_db = psnr(gt, pred, cfg);
    row.ssim = ssim(gt, pred, cfg);
    row.nrmse = nrmse(gt, pred, cfg);
  }
  return row;
}

namespace detail {

// Half-width of the 95% Student t-interval of the mean; 0 for fewer than two
// units or non-finite values.
inline double t_half_width(std::span<const double> values) {
  const auto n = values.size();
  if (n < 2) return 0.0;
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
  if (!std::isfinite(mean)) return 0.0;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  const boost::math::students_t dist(static_cast<double>(n - 1));
  return boost::math::quantile(dist, 0.975) * sd / std::sqrt(static_cast<double>(n));
}

inline double mean_of(std::span<const MetricRow> rows, double MetricRow::*field) {
  double acc = 0.0;
  for (const auto& r : rows) acc += r.*field;
  return acc / static_cast<double>(rows.size());
}

}  // namespace detail

struct StackPairRef {
  const ImageStack* gt;
  const ImageStack* pred;
};

/// Evaluates every plane of every stack pair. Means are taken over all rows;
/// 95% t-intervals are taken over per-stack means when there are several
/// stacks, and over planes when a single stack is given.
inline MetricReport evaluate_stacks(std::span<const StackPairRef> pairs, const MetricConfig& cfg = {}) {
  cfg.validate();
  require(!pairs.empty(), ErrorKind::invalid_argument, "evaluate: no stacks given");
  MetricReport report;
  std::vector<std::size_t> bounds{0};
  for (const auto& [gt, pred] : pairs) {
    require(gt->size() > 0 && pred->size() > 0, ErrorKind::invalid_argument, "evaluate: empty stack");
    require(gt->same_shape(*pred), ErrorKind::shape_mismatch,
            "evaluate: stack '" + gt->id() + "' and prediction '" + pred->id() + "' differ in shape");
    for (std::size_t i = 0; i < gt->size(); ++i) {
      auto row = evaluate_plane((*gt)[i], (*pred)[i], cfg, &report.flags);
      row.id = gt->id();
      row.plane = i;
      report.rows.push_back(std::move(row));
    }
    bounds.push_back(report.rows.size());
  }

  auto summarize = [&](double MetricRow::*field) {
    std::vector<double> units;
    if (pairs.size() > 1) {
      for (std::size_t s = 0; s + 1 < bounds.size(); ++s) {
        std::span<const MetricRow> rows(report.rows.data() + bounds[s], bounds[s + 1] - bounds[s]);
        units.push_back(detail::mean_of(rows, field));
      }
    } else {
      for (const auto& r : report.rows) units.push_back(r.*field);
    }
    Interval iv;
    iv.mean = detail::mean_of(report.rows, field);
    const double half = std::isfinite(iv.mean) ? detail::t_half_width(units) : 0.0;
    iv.lo = iv.mean - half;
    iv.hi = iv.mean + half;
    return iv;
  };
  report.psnr_db = summarize(&MetricRow::psnr_db);
  report.ssim = summarize(&MetricRow::ssim);
  report.nrmse = summarize(&MetricRow::nrmse);
  report.ci_over_stacks = pairs.size() > 1;
  report.ci_units = pairs.size() > 1 ? pairs.size() : report.rows.size();
  return report;
}

inline MetricReport evaluate_stack(const ImageStack& gt, const ImageStack& pred, const MetricConfig& cfg = {}) {
  const StackPairRef pair{&gt, &pred};
  return evaluate_stacks(std::span<const StackPairRef>(&pair, 1), cfg);
}

// Report serialization. Infinite PSNR is written as "inf" in both formats.

inline std::string format_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

inline std::string report_csv(const MetricReport& report) {
  std::ostringstream os;
  os << "id,plane,psnr_db,ssim,nrmse\n";
  for (const auto& r : report.rows) {
    os << r.id << ',' << r.plane << ',' << format_number(r.psnr_db) << ',' << format_number(r.ssim) << ','
       << format_number(r.nrmse) << '\n';
  }
  return os.str();
}

inline nlohmann::json json_number(double v) {
  if (std::isfinite(v)) return v;
  return format_number(v);
}

inline nlohmann::json report_json(const MetricReport& report) {
  auto iv = [](const Interval& i) {
    return nlohmann::json{{"mean", json_number(i.mean)}, {"ci95", {json_number(i.lo), json_number(i.hi)}}};
  };
  return nlohmann::json{{"rows", report.rows.size()},
                        {"psnr_db", iv(report.psnr_db)},
                        {"ssim", iv(report.ssim)},
                        {"nrmse", iv(report.nrmse)},
                        {"ci_units", report.ci_units},
                        {"ci_over", report.ci_over_stacks ? "stacks" : "planes"},
                        {"flags", report.flags}};
}

}  // namespace stackdenoise::metrics
