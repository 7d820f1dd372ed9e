#include <cmath>
#include <numbers>

#include "doctest.h"
#include "llalign/metrics.hpp"
#include "llalign/rng.hpp"

using namespace llalign;

namespace {

/// Pixel-center rasterization of both footprints over their joint bounding window.
double raster_iou(const Box7& a, const Box7& b, int n = 1000) {
  const auto pa = BevPolygon::from_box(a).points(), pb = BevPolygon::from_box(b).points();
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto* poly : {&pa, &pb}) {
    for (const auto& p : *poly) {
      x0 = std::min(x0, p.x), x1 = std::max(x1, p.x), y0 = std::min(y0, p.y), y1 = std::max(y1, p.y);
    }
  }
  auto inside = [](const std::vector<Point2>& poly, double x, double y) {
    for (std::size_t i = 0; i < poly.size(); ++i) {
      const auto& p = poly[i];
      const auto& q = poly[(i + 1) % poly.size()];
      if ((q.x - p.x) * (y - p.y) - (q.y - p.y) * (x - p.x) < 0) return false;
    }
    return true;
  };
  long both = 0, either = 0;
  for (int i = 0; i < n; ++i) {
    const double x = x0 + (i + 0.5) * (x1 - x0) / n;
    for (int j = 0; j < n; ++j) {
      const double y = y0 + (j + 0.5) * (y1 - y0) / n;
      const bool ia = inside(pa, x, y), ib = inside(pb, x, y);
      both += ia && ib;
      either += ia || ib;
    }
  }
  return either ? static_cast<double>(both) / static_cast<double>(either) : 0.0;
}

Box7 random_box(Rng& rng) {
  return {rng.uniform(-3, 3), rng.uniform(-3, 3), 0.0, rng.uniform(0.5, 5), rng.uniform(0.5, 3), 1.0,
          rng.uniform(-std::numbers::pi, std::numbers::pi)};
}

}  // namespace

TEST_CASE("bleu hand values") {
  using metrics::bleu;
  CHECK(bleu({"the the the"}, {"the cat"}, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  const double expected = std::exp(1.0 - 7.0 / 6.0) * std::sqrt(1.0 * 4.0 / 5.0);
  CHECK(std::abs(bleu({"a car parked on the street"}, {"a car is parked on the street"}, 2) - expected) < 1e-9);
  CHECK(std::abs(expected - 0.757) < 5e-4);
  for (int n = 1; n <= 4; ++n) CHECK(bleu({"a b c d e", "x y z w"}, {"a b c d e", "x y z w"}, n) == 1.0);
}

TEST_CASE("bleu corner cases") {
  using metrics::bleu;
  CHECK_THROWS(bleu({}, {}, 2));
  CHECK_THROWS(bleu({"a"}, {"a", "b"}, 1));
  CHECK_THROWS(bleu({"a"}, {"a"}, 5));
  CHECK(bleu({"a b"}, {"a b"}, 3) == 0.0);  // no trigrams at all
  CHECK(bleu({""}, {"a b"}, 1) == 0.0);
}

TEST_CASE("bleu equals one only for exact corpus match") {
  Rng rng(3);
  const std::vector<std::string> pool = {"car", "bus", "the", "is", "moving", "parked"};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::string> cand, ref;
    bool same = true;
    for (int s = 0; s < 3; ++s) {
      std::string c, r;
      for (int w = 0; w < 5; ++w) {
        const auto& cw = pool[rng.categorical({1, 1, 1, 1, 1, 1})];
        const auto& rw = rng.uniform() < 0.9 ? cw : pool[rng.categorical({1, 1, 1, 1, 1, 1})];
        same = same && cw == rw;
        c += (w ? " " : "") + cw;
        r += (w ? " " : "") + rw;
      }
      cand.push_back(c);
      ref.push_back(r);
    }
    for (int n = 1; n <= 4; ++n) {
      const double b = metrics::bleu(cand, ref, n);
      CHECK(b >= 0.0);
      CHECK(b <= 1.0 + 1e-15);
      if (same) CHECK(b == 1.0);
      if (!same) CHECK(b < 1.0);
    }
  }
}

TEST_CASE("exact match normalization") {
  CHECK(metrics::exact_match("2", "2"));
  CHECK_FALSE(metrics::exact_match("Two", "2"));
  CHECK(metrics::exact_match("Yes.", "yes"));
  CHECK(metrics::exact_match("  The  car is   moving. ", "the car is moving"));
}

TEST_CASE("exact match accuracy breakdown") {
  DatasetRecord a, b, c;
  a.answer = "yes";
  a.qa_type = QaType::kExistence;
  a.hops = Hops::kH0;
  b.answer = "2";
  b.qa_type = QaType::kCounting;
  b.hops = Hops::kH1;
  c.answer = "no";
  c.qa_type = QaType::kExistence;
  c.hops = Hops::kH1;
  const auto r = metrics::exact_match_accuracy({"Yes.", "two", "no"}, {a, b, c});
  CHECK(r.overall.correct == 2);
  CHECK(r.overall.total == 3);
  CHECK(r.cells.at("existence/All").rate() == 1.0);
  CHECK(r.cells.at("counting/H1").rate() == 0.0);
  CHECK_THROWS(metrics::exact_match_accuracy({"x"}, {a, b}));
}

TEST_CASE("bev iou analytic cases") {
  const Box7 unit{0, 0, 0, 1, 1, 1, 0};
  CHECK(bev_iou(unit, unit) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(bev_iou(unit, {0.5, 0, 0, 1, 1, 1, 0}) - 1.0 / 3.0) < 1e-12);
  const double octagon = 2.0 * (std::sqrt(2.0) - 1.0);
  CHECK(std::abs(bev_iou(unit, {0, 0, 0, 1, 1, 1, std::numbers::pi / 4}) - octagon / (2.0 - octagon)) < 1e-9);
  CHECK(std::abs(bev_iou(unit, {0, 0, 0, 1, 1, 1, std::numbers::pi / 4}) - 0.7071) < 1e-4);
  CHECK(bev_iou(unit, {5, 5, 0, 1, 1, 1, 0}) == 0.0);
  CHECK_THROWS(bev_iou(unit, {0, 0, 0, 0, 1, 1, 0}));
}

TEST_CASE("bev iou symmetry, bounds and yaw periodicity") {
  Rng rng(17);
  for (int i = 0; i < 500; ++i) {
    const Box7 a = random_box(rng), b = random_box(rng);
    const double ab = bev_iou(a, b);
    CHECK(std::abs(ab - bev_iou(b, a)) < 1e-12);
    CHECK(ab >= 0.0);
    CHECK(ab <= 1.0);
    Box7 flipped = a;
    flipped.yaw = wrap_yaw(a.yaw + std::numbers::pi);
    CHECK(std::abs(bev_iou(flipped, b) - ab) < 1e-9);
  }
}

TEST_CASE("bev iou matches rasterization on random pairs") {
  Rng rng(2024);
  double worst = 0;
  for (int i = 0; i < 40; ++i) {
    const Box7 a = random_box(rng), b = random_box(rng);
    worst = std::max(worst, std::abs(bev_iou(a, b) - raster_iou(a, b, 400)));
  }
  CHECK(worst < 5e-3);  // coarser raster than the acceptance sweep
}

TEST_CASE("greedy mIoU") {
  const Box7 g1{0, 0, 0, 2, 2, 1, 0}, g2{10, 0, 0, 2, 2, 1, 0};
  // Prediction overlapping g1 at IoU 0.6: shift along x so overlap/union = 0.6.
  const double dx = 2.0 * (1.0 - 2.0 * 0.6 / 1.6);
  const Box7 p{dx, 0, 0, 2, 2, 1, 0};
  REQUIRE(std::abs(bev_iou(p, g1) - 0.6) < 1e-12);
  const auto r = metrics::bev_miou({{Category::kCar, {p}, {g1, g2}}});
  CHECK(std::abs(r.per_category.at(Category::kCar) - 0.3) < 1e-12);
  CHECK(metrics::bev_miou({{Category::kCar, {}, {g1}}}).per_category.at(Category::kCar) == 0.0);
  CHECK(metrics::bev_miou({{Category::kBus, {g1, g2}, {g1, g2}}}).per_category.at(Category::kBus) == 1.0);
}

TEST_CASE("greedy matching agrees with brute force on small instances") {
  Rng rng(8);
  for (int t = 0; t < 100; ++t) {
    std::vector<Box7> pred, gt;
    for (int i = 0; i < 2; ++i) pred.push_back(random_box(rng));
    for (int i = 0; i < 2; ++i) gt.push_back(random_box(rng));
    // Brute force over the two assignments, preferring the one containing the single best pair.
    const double m00 = bev_iou(pred[0], gt[0]), m01 = bev_iou(pred[0], gt[1]);
    const double m10 = bev_iou(pred[1], gt[0]), m11 = bev_iou(pred[1], gt[1]);
    const double best = std::max({m00, m01, m10, m11});
    std::vector<double> want(2, 0.0);
    if (best > 0) {
      if (best == m00 || best == m11) {
        want = {m00, m11};
      } else {
        want = {m10, m01};
      }
    }
    const auto got = metrics::greedy_match(pred, gt);
    CHECK(got[0] == doctest::Approx(want[0]));
    CHECK(got[1] == doctest::Approx(want[1]));
  }
}

TEST_CASE("report footers cite the published values") {
  metrics::RawResults raw;
  raw.caption = metrics::CaptionScores{};
  raw.grounding = metrics::GroundingScores{};
  raw.qa = metrics::AccuracyBreakdown{};
  const auto rep = metrics::assemble_report(raw);
  for (const char* s : {"40.98", "29.96", "23.43", "19.26", "34.4", "63.1", "14.3", "48.6"}) {
    CHECK(rep.text.find(s) != std::string::npos);
  }
  CHECK(rep.json.at("schema_version") == metrics::kReportSchemaVersion);
}
