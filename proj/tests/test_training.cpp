#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "iars/gradcheck.hpp"
#include "iars/model.hpp"
#include "iars/random.hpp"
#include "iars/region_metrics.hpp"
#include "iars/synth.hpp"
#include "iars/training.hpp"

using iars::BinaryMask;
using iars::RgbImage;
using iars::Sample;
using iars::Tensor;

namespace {

Tensor<double> scalar_prob(double p) { return Tensor<double>::from({1, 1, 1, 1}, {p}); }
Tensor<double> scalar_target(double t) { return Tensor<double>::from({1, 1, 1, 1}, {t}); }

iars::ArchConfig tiny_arch(int h = 16, int w = 16, double wf = 1.0, bool bn = true) {
  iars::ArchConfig a;
  a.input_h = h;
  a.input_w = w;
  a.depth = 2;
  a.stage_widths = {4, 8};
  a.width_factor = wf;
  a.use_batch_norm = bn;
  return a;
}

BinaryMask centered_disk(int h, int w, double r) {
  BinaryMask m = BinaryMask::filled(h, w, false);
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r) m.at(y, x) = 1;
  return m;
}

std::vector<double> snapshot(const iars::SegModel<float>& model) {
  std::vector<double> out;
  for (const auto& [name, t] : model.parameters)
    for (float v : t.data()) out.push_back(v);
  return out;
}

}  // namespace

TEST_CASE("focal loss closed-form values") {
  SECTION("confident correct predictions cost nothing") {
    auto probs = Tensor<double>::from({1, 1, 2, 2}, {1.0, 1.0, 0.0, 0.0});
    auto target = Tensor<double>::from({1, 1, 2, 2}, {1.0, 1.0, 0.0, 0.0});
    CHECK(iars::focal_loss(probs, target).data()[0] < 1e-12);
  }
  SECTION("single foreground pixel at half confidence") {
    const double expected = 0.25 * 0.25 * std::log(2.0);
    auto loss = iars::focal_loss(scalar_prob(0.5), scalar_target(1.0), {0.25, 2.0});
    CHECK(loss.data()[0] == Catch::Approx(expected).epsilon(1e-9));
    CHECK(loss.data()[0] == Catch::Approx(0.043322).margin(5e-7));
  }
  SECTION("gamma zero and even weighting reduce to scaled cross-entropy") {
    auto rng = iars::make_rng(11);
    std::vector<double> pv(36), tv(36);
    for (auto& v : pv) v = 0.1 + 0.8 * iars::unit_uniform(rng);
    for (auto& v : tv) v = iars::unit_uniform(rng) < 0.5 ? 0.0 : 1.0;
    auto probs = Tensor<double>::from({1, 1, 6, 6}, pv);
    auto target = Tensor<double>::from({1, 1, 6, 6}, tv);
    double bce = 0.0;
    for (int i = 0; i < 36; ++i)
      bce += tv[i] == 1.0 ? -std::log(pv[i]) : -std::log(1.0 - pv[i]);
    bce /= 36.0;
    auto loss = iars::focal_loss(probs, target, {0.5, 0.0});
    CHECK(loss.data()[0] == Catch::Approx(0.5 * bce).margin(1e-12));
  }
}

TEST_CASE("focal loss ordering and positivity") {
  auto rng = iars::make_rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const double p = 0.05 + 0.9 * iars::unit_uniform(rng);
    const double t = iars::unit_uniform(rng) < 0.5 ? 0.0 : 1.0;
    CHECK(iars::focal_loss(scalar_prob(p), scalar_target(t)).data()[0] >= 0.0);
  }
  // raising the true-class probability always lowers the cost
  CHECK(iars::focal_loss(scalar_prob(0.7), scalar_target(1.0)).data()[0] <
        iars::focal_loss(scalar_prob(0.6), scalar_target(1.0)).data()[0]);
  CHECK(iars::focal_loss(scalar_prob(0.3), scalar_target(0.0)).data()[0] <
        iars::focal_loss(scalar_prob(0.4), scalar_target(0.0)).data()[0]);
}

TEST_CASE("focal loss gradient matches finite differences") {
  auto rng = iars::make_rng(13);
  std::vector<double> pv(2 * 16), tv(2 * 16);
  for (auto& v : pv) v = 0.08 + 0.84 * iars::unit_uniform(rng);
  for (auto& v : tv) v = iars::unit_uniform(rng) < 0.5 ? 0.0 : 1.0;
  auto probs = Tensor<double>::from({2, 1, 4, 4}, pv);
  auto target = Tensor<double>::from({2, 1, 4, 4}, tv);
  for (double gamma : {2.0, 0.0, 3.5}) {
    auto report = iars::finite_diff_check<double>(
        {probs}, [&] { return iars::focal_loss(probs, target, {0.25, gamma}); });
    INFO("gamma " << gamma << " rel err " << report.max_rel_err);
    CHECK(report.ok(1e-6));
  }
}

TEST_CASE("focal loss validation") {
  auto p = scalar_prob(0.5);
  CHECK_THROWS_AS(iars::focal_loss(p, scalar_target(0.5)), std::invalid_argument);
  CHECK_THROWS_AS(iars::focal_loss(p, scalar_target(1.0), {1.5, 2.0}), std::invalid_argument);
  CHECK_THROWS_AS(iars::focal_loss(p, scalar_target(1.0), {0.25, -1.0}), std::invalid_argument);
  CHECK_THROWS_AS(iars::focal_loss(p, Tensor<double>::zeros({1, 1, 2, 2})),
                  std::invalid_argument);
  CHECK_THROWS_AS(iars::focal_loss(Tensor<double>::zeros({1, 2, 2, 2}),
                                   Tensor<double>::zeros({1, 2, 2, 2})),
                  std::invalid_argument);
}

TEST_CASE("focal loss accepts a batch of masks") {
  auto rng = iars::make_rng(14);
  std::vector<double> pv(2 * 9);
  for (auto& v : pv) v = 0.1 + 0.8 * iars::unit_uniform(rng);
  auto probs = Tensor<double>::from({2, 1, 3, 3}, pv);
  std::vector<BinaryMask> masks{centered_disk(3, 3, 1.0), BinaryMask::filled(3, 3, false)};
  Tensor<double> target = Tensor<double>::zeros({2, 1, 3, 3});
  iars::fill_mask(target, 0, masks[0]);
  iars::fill_mask(target, 1, masks[1]);
  CHECK(iars::focal_loss(probs, masks).data()[0] ==
        iars::focal_loss(probs, target).data()[0]);
  CHECK_THROWS_AS(iars::focal_loss(probs, std::vector<BinaryMask>{masks[0]}),
                  std::invalid_argument);
}

TEST_CASE("augmentation identities") {
  iars::SyntheticGenConfig gen;
  gen.count = 1;
  gen.height = 20;
  gen.width = 24;
  gen.seed = 5;
  Sample s = iars::synth_generate(gen)[0];

  SECTION("disabled policy is the identity") {
    auto rng = iars::make_rng(1);
    iars::AugmentPolicy off{false, 0.0};
    Sample out = iars::augment(s, off, rng);
    CHECK(out.mask == s.mask);
    CHECK(out.image.pix == s.image.pix);
  }
  SECTION("horizontal flip is an involution") {
    CHECK(iars::hflip(iars::hflip(s.image)).pix == s.image.pix);
    CHECK(iars::hflip(iars::hflip(s.mask)) == s.mask);
  }
  SECTION("zero-angle rotation is exact") {
    CHECK(iars::rotate_bilinear(s.image, 0.0).pix == s.image.pix);
    CHECK(iars::rotate_nearest(s.mask, 0.0) == s.mask);
  }
  SECTION("same draw stream reproduces the same augmented sample") {
    iars::AugmentPolicy policy;
    auto r1 = iars::make_rng(9), r2 = iars::make_rng(9);
    Sample a = iars::augment(s, policy, r1);
    Sample b = iars::augment(s, policy, r2);
    CHECK(a.mask == b.mask);
    CHECK(a.image.pix == b.image.pix);
  }
}

TEST_CASE("rotating a centered disk forth and back nearly restores it") {
  BinaryMask disk = centered_disk(48, 64, 10.0);
  BinaryMask rotated = iars::rotate_nearest(iars::rotate_nearest(disk, 40.0), -40.0);
  const double iou = iars::region_report(disk, rotated).iou;
  INFO("round-trip IoU " << iou);
  CHECK(iou >= 0.95);
}

TEST_CASE("rotation keeps a centered lesion non-empty and fills the frame edge") {
  BinaryMask small = centered_disk(16, 16, 1.5);
  REQUIRE(small.count() >= 4);
  for (double angle : {-40.0, -25.0, -10.0, 10.0, 25.0, 40.0})
    CHECK(iars::rotate_nearest(small, angle).count() > 0);

  RgbImage ones = RgbImage::filled(16, 16, 1.0f, 1.0f, 1.0f);
  RgbImage turned = iars::rotate_bilinear(ones, 45.0);
  CHECK(turned.at(0, 0, 0) == 0.0f);  // corner leaves the frame
  CHECK(turned.at(8, 8, 0) == Catch::Approx(1.0).margin(1e-6));
}

TEST_CASE("zero learning rate leaves parameters and losses frozen") {
  iars::SyntheticGenConfig gen;
  gen.count = 3;
  gen.height = 16;
  gen.width = 16;
  gen.seed = 21;
  auto samples = iars::synth_generate(gen);

  auto model = iars::build_model<float>(tiny_arch(), iars::variant_flags("m2"), 3);
  const auto before = snapshot(model);
  iars::TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.epochs = 3;
  // one batch holds the whole split: batch statistics are then independent of
  // the per-epoch visiting order, so the loss must repeat exactly
  cfg.batch_size = 4;
  cfg.augment = {false, 0.0};
  auto log = iars::train(model, samples, {}, cfg);
  CHECK(snapshot(model) == before);
  REQUIRE(log.rows.size() == 3);
  for (int e = 0; e < 3; ++e) CHECK(log.rows[e].epoch == e);
  CHECK(log.rows[1].train_loss == log.rows[0].train_loss);
  CHECK(log.rows[2].train_loss == log.rows[0].train_loss);
}

TEST_CASE("training is deterministic for a fixed seed") {
  iars::SyntheticGenConfig gen;
  gen.count = 4;
  gen.height = 16;
  gen.width = 16;
  gen.seed = 22;
  auto samples = iars::synth_generate(gen);

  iars::TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 2;
  cfg.seed = 77;  // augmentation stays on to exercise the derived draw streams

  auto run = [&] {
    auto model = iars::build_model<float>(tiny_arch(), iars::variant_flags("m2"), 3);
    return iars::train(model, samples, {}, cfg);
  };
  auto a = run(), b = run();
  REQUIRE(a.rows.size() == b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(a.rows[i].train_loss == b.rows[i].train_loss);
    CHECK(a.rows[i].val_iou == b.rows[i].val_iou);
  }
}

TEST_CASE("training validation and divergence handling") {
  auto model = iars::build_model<float>(tiny_arch(), iars::variant_flags("m1"), 3);
  iars::TrainConfig cfg;
  cfg.epochs = 1;
  CHECK_THROWS_AS(iars::train(model, {}, {}, cfg), std::invalid_argument);

  iars::SyntheticGenConfig gen;
  gen.count = 1;
  gen.height = 16;
  gen.width = 16;
  gen.seed = 23;
  auto samples = iars::synth_generate(gen);
  model.parameters.back().second.data()[0] = std::nanf("");  // classifier bias, past every rectifier
  CHECK_THROWS_WITH(iars::train(model, samples, {}, cfg),
                    Catch::Matchers::ContainsSubstring("diverged"));

  iars::TrainConfig bad;
  bad.batch_size = 0;
  auto fresh = iars::build_model<float>(tiny_arch(), iars::variant_flags("m1"), 3);
  CHECK_THROWS_AS(iars::train(fresh, samples, {}, bad), std::invalid_argument);
}

TEST_CASE("momentum optimizer also trains") {
  iars::SyntheticGenConfig gen;
  gen.count = 2;
  gen.height = 16;
  gen.width = 16;
  gen.seed = 24;
  auto samples = iars::synth_generate(gen);
  auto model = iars::build_model<float>(tiny_arch(), iars::variant_flags("m1"), 3);
  const auto before = snapshot(model);
  iars::TrainConfig cfg;
  cfg.optimizer = iars::Optimizer::sgd_momentum;
  cfg.learning_rate = 1e-2;
  cfg.epochs = 2;
  cfg.augment = {false, 0.0};
  auto log = iars::train(model, samples, {}, cfg);
  CHECK(snapshot(model) != before);
  for (const auto& row : log.rows) CHECK(std::isfinite(row.train_loss));
}

TEST_CASE("a narrow model overfits a single sample") {
  iars::SyntheticGenConfig gen;
  gen.count = 1;
  gen.height = 32;
  gen.width = 32;
  gen.seed = 25;
  auto samples = iars::synth_generate(gen);

  auto arch = tiny_arch(32, 32, 0.0625);
  arch.stage_widths = {64, 128};
  auto model = iars::build_model<float>(arch, iars::variant_flags("m2"), 7);
  iars::TrainConfig cfg;
  cfg.epochs = 200;  // one sample per epoch, so 200 optimizer steps
  cfg.batch_size = 1;
  cfg.learning_rate = 5e-3;
  cfg.augment = {false, 0.0};
  auto log = iars::train(model, samples, {}, cfg);

  const double final_loss = log.rows.back().train_loss;
  INFO("final focal loss " << final_loss);
  CHECK(final_loss < 0.01);
  CHECK(iars::mean_iou(model, samples) >= 0.98);
}
