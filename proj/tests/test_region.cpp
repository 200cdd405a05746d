#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "iars/random.hpp"
#include "iars/region_metrics.hpp"

using iars::BinaryMask;

namespace {

BinaryMask random_mask(int h, int w, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution d(p);
  BinaryMask m = BinaryMask::filled(h, w, false);
  for (auto& v : m.data) v = d(rng) ? 1 : 0;
  return m;
}

BinaryMask complement(const BinaryMask& m) {
  BinaryMask o = m;
  for (auto& v : o.data) v = v ? 0 : 1;
  return o;
}

}  // namespace

TEST_CASE("confusion counts tally exactly") {
  BinaryMask g = BinaryMask::filled(4, 4, false);
  BinaryMask p = BinaryMask::filled(4, 4, true);
  auto c = iars::confusion_counts(g, p);
  CHECK(c.fp == 16);
  CHECK(c.tp == 0);
  CHECK(c.tn == 0);
  CHECK(c.fn == 0);

  auto eq = iars::confusion_counts(p, p);
  CHECK(eq.tp == 16);
  CHECK(eq.fp == 0);
  CHECK(eq.fn == 0);

  CHECK_THROWS_AS(iars::confusion_counts(g, BinaryMask::filled(4, 5, false)),
                  std::invalid_argument);
}

TEST_CASE("region report reproduces hand-computed overlaps") {
  // 4 truth pixels, 4 predicted, 2 overlapping
  BinaryMask g = BinaryMask::filled(4, 4, false);
  BinaryMask p = BinaryMask::filled(4, 4, false);
  g.at(0, 0) = g.at(0, 1) = g.at(0, 2) = g.at(0, 3) = 1;
  p.at(0, 2) = p.at(0, 3) = p.at(1, 0) = p.at(1, 1) = 1;
  auto r = iars::region_report(g, p);
  CHECK(r.iou == Catch::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(r.dice == Catch::Approx(0.5).epsilon(1e-12));

  auto ident = iars::region_report(g, g);
  CHECK(ident.iou == 1.0);
  CHECK(ident.dice == 1.0);
  CHECK(ident.fpr == 0.0);
  CHECK(ident.fnr == 0.0);

  BinaryMask q = BinaryMask::filled(4, 4, false);
  q.at(3, 0) = 1;
  auto disj = iars::region_report(g, q);
  CHECK(disj.iou == 0.0);
  CHECK(disj.dice == 0.0);
}

TEST_CASE("degenerate masks follow the agreement convention") {
  BinaryMask e = BinaryMask::filled(3, 3, false);
  auto r = iars::region_report(e, e);
  CHECK(r.iou == 1.0);
  CHECK(r.dice == 1.0);
  CHECK(r.tpr == 1.0);  // no foreground to miss
  CHECK(r.tnr == 1.0);

  BinaryMask full = BinaryMask::filled(3, 3, true);
  auto rf = iars::region_report(full, full);
  CHECK(rf.tnr == 1.0);  // no background to mislabel
  CHECK(rf.fpr == 0.0);
}

TEST_CASE("metrics agree with a per-pixel loop oracle on random pairs") {
  auto rng = iars::make_rng(404);
  std::uniform_real_distribution<double> dens(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    auto g = random_mask(16, 16, dens(rng), rng);
    auto p = random_mask(16, 16, dens(rng), rng);
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) {
        if (g.at(y, x) && p.at(y, x)) ++tp;
        if (!g.at(y, x) && p.at(y, x)) ++fp;
        if (!g.at(y, x) && !p.at(y, x)) ++tn;
        if (g.at(y, x) && !p.at(y, x)) ++fn;
      }
    auto c = iars::confusion_counts(g, p);
    REQUIRE(c.tp == tp);
    REQUIRE(c.fp == fp);
    REQUIRE(c.tn == tn);
    REQUIRE(c.fn == fn);
    REQUIRE(c.total() == 256);

    auto r = iars::region_report(c);
    // the two scores are tied by construction
    REQUIRE(r.dice == Catch::Approx(2.0 * r.iou / (1.0 + r.iou)).margin(1e-12));
    // complement rates
    if (tp + fn > 0) REQUIRE(r.tpr + r.fnr == Catch::Approx(1.0).margin(1e-12));
    if (tn + fp > 0) REQUIRE(r.tnr + r.fpr == Catch::Approx(1.0).margin(1e-12));
    // symmetry of the overlap scores
    auto rs = iars::region_report(p, g);
    REQUIRE(rs.iou == Catch::Approx(r.iou).margin(1e-15));
    REQUIRE(rs.dice == Catch::Approx(r.dice).margin(1e-15));
    // swapping foreground and background swaps the rate pair
    auto rc = iars::region_report(complement(g), complement(p));
    REQUIRE(rc.tnr == Catch::Approx(r.tpr).margin(1e-15));
  }
}

TEST_CASE("a newly correct foreground pixel never lowers IoU") {
  auto rng = iars::make_rng(405);
  for (int trial = 0; trial < 50; ++trial) {
    auto g = random_mask(8, 8, 0.4, rng);
    auto p = random_mask(8, 8, 0.4, rng);
    auto before = iars::region_report(g, p);
    // flip one missed foreground pixel to predicted
    bool flipped = false;
    for (std::size_t i = 0; i < g.data.size() && !flipped; ++i)
      if (g.data[i] && !p.data[i]) {
        p.data[i] = 1;
        flipped = true;
      }
    if (!flipped) continue;
    auto after = iars::region_report(g, p);
    REQUIRE(after.iou >= before.iou);
  }
}

TEST_CASE("aggregate averages each field") {
  iars::RegionReport a{.iou = 0.2, .dice = 0.4, .tpr = 1.0, .tnr = 0.5, .fpr = 0.5, .fnr = 0.0};
  iars::RegionReport b{.iou = 0.4, .dice = 0.6, .tpr = 0.0, .tnr = 1.0, .fpr = 0.0, .fnr = 1.0};
  CHECK(iars::aggregate({a}).iou == 0.2);
  auto m = iars::aggregate({a, b});
  CHECK(m.iou == Catch::Approx(0.3));
  CHECK(m.dice == Catch::Approx(0.5));
  CHECK(m.tpr == Catch::Approx(0.5));
  CHECK_THROWS_AS(iars::aggregate({}), std::invalid_argument);
}

TEST_CASE("csv serialization keeps the fixed column order") {
  CHECK(iars::region_csv_header() == "model,tpr,fpr,tnr,fnr,dice,iou");
  iars::RegionReport r{.iou = 0.25, .dice = 0.4, .tpr = 0.9, .tnr = 0.8, .fpr = 0.2, .fnr = 0.1};
  CHECK(iars::region_csv_row("m2", r) == "m2,0.900000,0.200000,0.800000,0.100000,0.400000,0.250000");
}
