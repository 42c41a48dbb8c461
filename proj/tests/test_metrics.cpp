#include "metric_oracles.hpp"
#include "support.hpp"

#include "stackdenoise/metrics.hpp"

using namespace stackdenoise;
using namespace stackdenoise::metrics;

namespace {

Plane offset(const Plane& p, double d) {
  Plane q = p;
  for (auto& v : q.values()) v += d;
  return q;
}

Plane scaled(const Plane& p, double k) {
  Plane q = p;
  for (auto& v : q.values()) v *= k;
  return q;
}

}  // namespace

TEST_CASE("metrics match the direct oracles on 25 fixture pairs") {
  for (const auto& [gt, pred] : oracle::fixture_pairs(25, 17)) {
    INFO(gt.height() << "x" << gt.width());
    CHECK(std::abs(psnr(gt, pred) - oracle::psnr(gt, pred)) < 1e-9);
    CHECK(std::abs(ssim(gt, pred) - oracle::ssim(gt, pred)) < 1e-6);
    CHECK(std::abs(nrmse(gt, pred) - oracle::nrmse(gt, pred)) < 1e-9);
  }
}

TEST_CASE("PSNR examples") {
  std::mt19937_64 rng(1);
  const auto gt = test_support::random_plane(32, 32, rng);
  CHECK(psnr(gt, offset(gt, 0.1)) == Catch::Approx(20.0).epsilon(1e-10));
  CHECK(psnr(gt, gt) == psnr_infinite);
  const auto pred = test_support::random_plane(32, 32, rng);
  CHECK(psnr(offset(gt, 3.0), offset(pred, 3.0)) == Catch::Approx(psnr(gt, pred)).epsilon(1e-10));
  MetricConfig cfg;
  cfg.data_range = 2.0;
  CHECK(psnr(gt, offset(gt, 0.1), cfg) == Catch::Approx(20.0 + 20.0 * std::log10(2.0)));
  REQUIRE_ERROR_KIND(psnr(gt, Plane(32, 31)), ErrorKind::shape_mismatch);
}

TEST_CASE("SSIM examples") {
  std::mt19937_64 rng(2);
  const auto a = test_support::random_plane(24, 24, rng);
  const auto b = test_support::random_plane(24, 24, rng);
  CHECK(ssim(a, a) == Catch::Approx(1.0).margin(1e-12));
  CHECK(std::abs(ssim(a, b) - ssim(b, a)) < 1e-12);
  CHECK(ssim(a, b) >= -1.0);
  CHECK(ssim(a, b) <= 1.0);

  SECTION("constant images") {
    const double x = 0.3, y = -0.2, c1 = 1e-4;
    const double expected = (2 * x * y + c1) / (x * x + y * y + c1);
    CHECK(std::abs(ssim(Plane(16, 16, x), Plane(16, 16, y)) - expected) < 1e-12);
  }
  REQUIRE_ERROR_KIND(ssim(Plane(10, 30), Plane(10, 30)), ErrorKind::invalid_argument);
}

TEST_CASE("NRMSE examples") {
  std::mt19937_64 rng(3);
  const auto gt = test_support::random_plane(20, 20, rng);
  CHECK(nrmse(gt, gt) == 0.0);
  CHECK(nrmse(gt, scaled(gt, 2.0)) == Catch::Approx(1.0).epsilon(1e-12));
  const auto e = test_support::random_plane(20, 20, rng);
  Plane p1 = gt, p3 = gt;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    p1[i] += e[i];
    p3[i] += 3.0 * e[i];
  }
  CHECK(nrmse(gt, p3) == Catch::Approx(3.0 * nrmse(gt, p1)).epsilon(1e-12));
  REQUIRE_ERROR_KIND(nrmse(Plane(4, 4, 0.0), Plane(4, 4, 1.0)), ErrorKind::degenerate);
}

TEST_CASE("PSNR, NRMSE and ground-truth RMS are mutually consistent") {
  // 20.7 dB at range 1 is an RMS error of 10^(-20.7/20); over a ground truth
  // RMS of 0.378 that is an NRMSE of about 0.244.
  const double rmse = std::pow(10.0, -20.7 / 20.0);
  CHECK(rmse == Catch::Approx(0.09226).epsilon(1e-3));
  const auto [gt, pred] = oracle::rms_pair(64, 0.378, rmse, 5);
  CHECK(psnr(gt, pred) == Catch::Approx(20.7).epsilon(0.01));
  CHECK(nrmse(gt, pred) == Catch::Approx(0.244).epsilon(0.01));
}

TEST_CASE("microscopy normalization") {
  std::mt19937_64 rng(4);
  const auto gt = test_support::random_plane(32, 32, rng, 100.0, 900.0);

  SECTION("ground truth maps p0.1 and p99.9 onto 0 and 1") {
    const auto n = normalize_for_metrics_microscopy(gt, gt);
    const double lo = percentile(gt.values(), 0.1), hi = percentile(gt.values(), 99.9);
    CHECK(n.gt_norm[0] == Catch::Approx((gt[0] - lo) / (hi - lo)));
  }
  SECTION("an affine copy of the normalized ground truth fits exactly") {
    const auto n0 = normalize_for_metrics_microscopy(gt, gt);
    Plane pred(32, 32);
    for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = -3.0 * n0.gt_norm[i] + 7.0;
    const auto n = normalize_for_metrics_microscopy(gt, pred);
    CHECK(nrmse(n.gt_norm, n.pred_fit) < 1e-10);
  }
  SECTION("fit coefficients solve the normal equations") {
    const auto pred = test_support::random_plane(32, 32, rng, -1.0, 1.0);
    const auto n = normalize_for_metrics_microscopy(gt, pred);
    double spp = 0, sp = 0, spg = 0, sg = 0;
    const double count = double(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
      spp += pred[i] * pred[i];
      sp += pred[i];
      spg += pred[i] * n.gt_norm[i];
      sg += n.gt_norm[i];
    }
    // [spp sp; sp n] [a; b] = [spg; sg]
    const double det = spp * count - sp * sp;
    const double a = (spg * count - sp * sg) / det;
    const double b = (spp * sg - sp * spg) / det;
    CHECK(n.scale == Catch::Approx(a).epsilon(1e-9));
    CHECK(n.offset == Catch::Approx(b).epsilon(1e-9).margin(1e-12));
    CHECK(mse(n.gt_norm, n.pred_fit) <= mse(n.gt_norm, pred));
  }
  SECTION("degenerate inputs") {
    REQUIRE_ERROR_KIND(normalize_for_metrics_microscopy(Plane(8, 8, 1.0), Plane(8, 8)),
                       ErrorKind::degenerate);
    const auto n = normalize_for_metrics_microscopy(gt, Plane(32, 32, 5.0));
    CHECK(n.constant_prediction);
    CHECK(n.scale == 0.0);
  }
}

TEST_CASE("percentile uses linear interpolation") {
  const std::vector<double> v{4, 1, 3, 2, 5};
  CHECK(percentile(v, 0) == 1.0);
  CHECK(percentile(v, 100) == 5.0);
  CHECK(percentile(v, 50) == 3.0);
  CHECK(percentile(v, 10) == Catch::Approx(1.4));
}

TEST_CASE("stack evaluation aggregates") {
  std::mt19937_64 rng(6);
  std::vector<ImageStack> gts, preds;
  for (int s = 0; s < 6; ++s) {
    std::vector<Plane> g, p;
    for (int k = 0; k < 3; ++k) {
      g.push_back(test_support::random_plane(16, 16, rng));
      Plane q = g.back();
      for (auto& v : q.values()) v += std::uniform_real_distribution<double>(-0.1, 0.1)(rng);
      p.push_back(q);
    }
    gts.emplace_back("s" + std::to_string(s), g);
    preds.emplace_back("s" + std::to_string(s), p);
  }
  std::vector<StackPairRef> refs;
  for (std::size_t s = 0; s < 6; ++s) refs.push_back({&gts[s], &preds[s]});
  const auto report = evaluate_stacks(refs);
  REQUIRE(report.rows.size() == 18);
  double sum = 0.0;
  std::vector<double> stack_means(6, 0.0);
  for (std::size_t i = 0; i < 18; ++i) {
    sum += report.rows[i].psnr_db;
    stack_means[i / 3] += report.rows[i].psnr_db / 3.0;
    CHECK(report.rows[i].psnr_db == oracle::psnr(gts[i / 3][i % 3], preds[i / 3][i % 3]));
  }
  CHECK(report.psnr_db.mean == Catch::Approx(sum / 18.0).epsilon(1e-12));

  // 95% t-interval over the six stack means; t(0.975, 5) = 2.570581836.
  double m = 0.0, ss = 0.0;
  for (double v : stack_means) m += v / 6.0;
  for (double v : stack_means) ss += (v - m) * (v - m);
  const double half = 2.570581836 * std::sqrt(ss / 5.0) / std::sqrt(6.0);
  CHECK(report.psnr_db.hi - report.psnr_db.mean == Catch::Approx(half).epsilon(1e-6));
  CHECK(report.ci_over_stacks);
  CHECK(report.ci_units == 6);

  SECTION("single plane has a degenerate interval") {
    const ImageStack g("one", {gts[0][0]}), p("one", {preds[0][0]});
    const auto r = evaluate_stack(g, p);
    CHECK(r.psnr_db.lo == r.psnr_db.mean);
    CHECK(r.psnr_db.hi == r.psnr_db.mean);
    CHECK(r.psnr_db.mean == r.rows[0].psnr_db);
  }
  SECTION("identical stacks") {
    const auto r = evaluate_stack(gts[1], gts[1]);
    for (const auto& row : r.rows) {
      CHECK(row.psnr_db == psnr_infinite);
      CHECK(row.ssim == Catch::Approx(1.0).margin(1e-12));
      CHECK(row.nrmse == 0.0);
    }
    CHECK(report_csv(r).find("inf") != std::string::npos);
    const auto j = report_json(r);
    CHECK(j.dump().find("inf") != std::string::npos);
  }
  SECTION("csv columns") {
    const auto csv = report_csv(report);
    CHECK(csv.rfind("id,plane,psnr_db,ssim,nrmse\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 19);
  }
  SECTION("errors") {
    REQUIRE_ERROR_KIND(evaluate_stacks({}), ErrorKind::invalid_argument);
    const ImageStack short_stack("s0", {gts[0][0]});
    REQUIRE_ERROR_KIND(evaluate_stack(gts[0], short_stack), ErrorKind::shape_mismatch);
    REQUIRE_ERROR_KIND(parse_protocol("other"), ErrorKind::invalid_argument);
  }
}

TEST_CASE("microscopy protocol evaluates the fitted prediction") {
  std::mt19937_64 rng(8);
  const auto gt = test_support::random_plane(16, 16, rng, 10.0, 50.0);
  Plane pred = gt;
  for (auto& v : pred.values()) v = 0.01 * v - 2.0;
  MetricConfig cfg;
  cfg.protocol = Protocol::microscopy;
  const auto r = evaluate_stack(ImageStack("m", {gt}), ImageStack("m", {pred}), cfg);
  CHECK(r.rows[0].nrmse < 1e-10);
}
