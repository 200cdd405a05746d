#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <unistd.h>
#include <vector>

#include "iars/checkpoint.hpp"
#include "iars/contour.hpp"
#include "iars/dataset.hpp"
#include "iars/efd.hpp"
#include "iars/gradcheck.hpp"
#include "iars/hu.hpp"
#include "iars/image.hpp"
#include "iars/interpret.hpp"
#include "iars/model.hpp"
#include "iars/ops.hpp"
#include "iars/random.hpp"
#include "iars/region_metrics.hpp"
#include "iars/stats.hpp"
#include "iars/synth.hpp"
#include "iars/training.hpp"

// Oracle checks shared by `iars selftest` and the acceptance gate. Each check
// validates library output against an independently computed reference: a
// closed form, a brute-force loop, or a finite-difference probe.
namespace iarscheck {

struct CheckResult {
  std::string name;
  bool pass = false;
  bool expected_failure = false;  // documented discrepancy; reported, not counted
  std::string detail;
};

namespace detail {

inline std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline iars::BinaryMask random_mask(int h, int w, std::uint64_t seed, double density) {
  auto rng = iars::make_rng(seed);
  iars::BinaryMask m = iars::BinaryMask::filled(h, w, false);
  for (auto& v : m.data) v = iars::unit_uniform(rng) < density ? 1 : 0;
  return m;
}

template <typename T>
iars::Tensor<T> random_tensor(iars::Shape shape, std::uint64_t seed, T lo, T hi) {
  auto rng = iars::make_rng(seed);
  auto t = iars::Tensor<T>::zeros(shape);
  for (auto& v : t.data())
    v = lo + static_cast<T>(iars::unit_uniform(rng)) * (hi - lo);
  return t;
}

struct Scratch {
  std::filesystem::path dir;
  Scratch() {
    static int counter = 0;
    dir = std::filesystem::temp_directory_path() /
          ("iars_check_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(dir);
  }
  ~Scratch() { std::filesystem::remove_all(dir); }
  std::string file(const std::string& name) const { return (dir / name).string(); }
};

inline std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Gradients: each differentiable op, then a two-stage miniature per variant.
// ---------------------------------------------------------------------------

inline CheckResult check_gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  using iars::Tensor;
  double worst = 0.0;
  std::string worst_site;
  std::size_t skipped = 0;
  auto track = [&](const char* site, const iars::GradCheckReport& r) {
    skipped += r.coords_skipped;
    if (r.max_rel_err > worst) {
      worst = r.max_rel_err;
      worst_site = site;
    }
  };

  {
    auto in = detail::random_tensor<double>({1, 2, 6, 6}, 11, -1.0, 1.0);
    auto w = detail::random_tensor<double>({3, 2, 3, 3}, 12, -0.5, 0.5);
    auto b = detail::random_tensor<double>({3}, 13, -0.2, 0.2);
    auto proj = detail::random_tensor<double>({1, 3, 6, 6}, 14, -1.0, 1.0);
    track("conv2d", iars::finite_diff_check<double>({in, w, b}, [&] {
      return iars::sum(iars::mul(iars::conv2d(in, w, b, 1, 1), proj));
    }, 1e-6));
  }
  {
    auto in = detail::random_tensor<double>({2, 3, 4, 4}, 21, -1.0, 1.0);
    auto scale = detail::random_tensor<double>({3}, 22, 0.5, 1.5);
    auto shift = detail::random_tensor<double>({3}, 23, -0.3, 0.3);
    auto proj = detail::random_tensor<double>({2, 3, 4, 4}, 24, -1.0, 1.0);
    track("batch_norm", iars::finite_diff_check<double>({in, scale, shift}, [&] {
      iars::BatchNormState<double> state{Tensor<double>::zeros({3}),
                                         Tensor<double>::full({3}, 1.0)};
      return iars::sum(iars::mul(iars::batch_norm(in, scale, shift, state, true), proj));
    }, 1e-6));
  }
  {
    // keep every activation away from the rectifier kink
    auto in = detail::random_tensor<double>({1, 2, 4, 4}, 31, 0.2, 1.0);
    for (std::size_t i = 0; i < in.size(); i += 2) in.data()[i] = -in.data()[i];
    auto proj = detail::random_tensor<double>({1, 2, 4, 4}, 32, -1.0, 1.0);
    track("relu", iars::finite_diff_check<double>({in}, [&] {
      return iars::sum(iars::mul(iars::relu(in), proj));
    }, 1e-6));
    track("sigmoid", iars::finite_diff_check<double>({in}, [&] {
      return iars::sum(iars::mul(iars::sigmoid(in), proj));
    }, 1e-6));
  }
  {
    auto a = detail::random_tensor<double>({1, 2, 4, 4}, 41, -1.0, 1.0);
    auto b = detail::random_tensor<double>({1, 2, 4, 4}, 42, -1.0, 1.0);
    auto proj = detail::random_tensor<double>({1, 2, 4, 4}, 43, -1.0, 1.0);
    auto proj4 = detail::random_tensor<double>({1, 4, 4, 4}, 44, -1.0, 1.0);
    track("add", iars::finite_diff_check<double>({a, b}, [&] {
      return iars::sum(iars::mul(iars::add(a, b), proj));
    }, 1e-6));
    track("mul", iars::finite_diff_check<double>({a, b}, [&] {
      return iars::sum(iars::mul(iars::mul(a, b), proj));
    }, 1e-6));
    track("concat_channels", iars::finite_diff_check<double>({a, b}, [&] {
      return iars::sum(iars::mul(iars::concat_channels(a, b), proj4));
    }, 1e-6));
    track("scale", iars::finite_diff_check<double>({a}, [&] {
      return iars::sum(iars::mul(iars::scale(a, 1.7), proj));
    }, 1e-6));
  }
  {
    auto x = detail::random_tensor<double>({1, 2, 4, 4}, 51, -1.0, 1.0);
    auto m = detail::random_tensor<double>({1, 1, 4, 4}, 52, 0.1, 0.9);
    auto proj = detail::random_tensor<double>({1, 2, 4, 4}, 53, -1.0, 1.0);
    track("scale_by_map", iars::finite_diff_check<double>({x, m}, [&] {
      return iars::sum(iars::mul(iars::scale_by_map(x, m), proj));
    }, 1e-6));
  }
  {
    // well-separated values keep the pooling argmax stable under the probe step
    auto in = iars::Tensor<double>::zeros({1, 1, 4, 4});
    auto rng = iars::make_rng(61);
    std::vector<double> levels(16);
    for (std::size_t i = 0; i < levels.size(); ++i) levels[i] = static_cast<double>(i) * 0.25;
    for (std::size_t i = levels.size(); i > 1; --i)
      std::swap(levels[i - 1], levels[rng() % i]);
    in.data() = levels;
    auto proj2 = detail::random_tensor<double>({1, 1, 2, 2}, 62, -1.0, 1.0);
    auto proj4 = detail::random_tensor<double>({1, 1, 4, 4}, 63, -1.0, 1.0);
    track("max_pool_2x2", iars::finite_diff_check<double>({in}, [&] {
      return iars::sum(iars::mul(iars::max_pool_2x2(in).output, proj2));
    }, 1e-6));
    track("max_unpool_2x2", iars::finite_diff_check<double>({in}, [&] {
      auto pooled = iars::max_pool_2x2(in);
      return iars::sum(iars::mul(iars::max_unpool_2x2(pooled.output, pooled.indices, 4, 4), proj4));
    }, 1e-6));
    track("upsample_nearest_2x", iars::finite_diff_check<double>({proj2}, [&] {
      return iars::sum(iars::mul(iars::upsample_nearest_2x(proj2), proj4));
    }, 1e-6));
  }
  {
    auto logits = detail::random_tensor<double>({1, 1, 4, 4}, 71, -2.0, 2.0);
    auto target = iars::Tensor<double>::zeros({1, 1, 4, 4});
    auto rng = iars::make_rng(72);
    for (auto& v : target.data()) v = rng() % 2 ? 1.0 : 0.0;
    track("focal_loss", iars::finite_diff_check<double>({logits}, [&] {
      return iars::focal_loss(iars::sigmoid(logits), target);
    }, 1e-6));
  }

  // two-stage miniatures: the full forward graph of every variant
  iars::ArchConfig mini;
  mini.input_h = 16;
  mini.input_w = 16;
  mini.depth = 2;
  mini.stage_widths = {4, 8};
  auto batch = detail::random_tensor<double>({1, 3, 16, 16}, 500, 0.0, 1.0);
  auto target = detail::random_tensor<double>({1, 1, 16, 16}, 501, -0.5, 0.5);
  double worst_inert = 0.0;
  for (const char* variant : {"m1", "m2", "m3", "m4"}) {
    auto model = iars::build_model<double>(mini, iars::variant_flags(variant), 37);
    // a conv bias feeding batch norm has an exactly zero gradient (the mean
    // subtraction cancels it); probe it analytically, sweep the rest
    std::vector<Tensor<double>> live, inert;
    for (auto& [name, t] : model.parameters) {
      bool normed = false;
      if (name.size() > 5 && name.compare(name.size() - 5, 5, ".bias") == 0) {
        const auto sibling = name.substr(0, name.size() - 5) + ".norm.scale";
        for (auto& [other, _] : model.parameters) normed = normed || other == sibling;
      }
      (normed ? inert : live).push_back(t);
    }
    auto loss = [&] { return iars::sum(iars::mul(model.forward(batch, true), target)); };
    track(variant, iars::finite_diff_check<double>(live, loss, 1e-6, 3));

    for (auto& t : model.parameters) t.second.set_requires_grad(true);
    for (auto& t : model.parameters) t.second.zero_grad();
    {
      iars::Tape<double> tape;
      tape.backward(loss());
    }
    for (auto& t : inert)
      for (double g : t.grad()) worst_inert = std::max(worst_inert, std::abs(g));
    for (auto& t : model.parameters) t.second.zero_grad();
  }

  const double elapsed = detail::seconds_since(t0);
  CheckResult r;
  r.name = "gradient suite";
  r.pass = worst < 1e-4 && worst_inert < 1e-10 && elapsed < 120.0;
  r.detail = "max rel err " + detail::fmt("%.3g", worst) + " (" + worst_site +
             "), inert-bias grad " + detail::fmt("%.1e", worst_inert) + ", " +
             std::to_string(skipped) + " nonsmooth coords skipped, " +
             detail::fmt("%.1f", elapsed) + " s";
  return r;
}

// ---------------------------------------------------------------------------
// Region metrics against a brute-force per-pixel loop.
// ---------------------------------------------------------------------------

inline CheckResult check_region_oracle() {
  const double densities[] = {0.0, 0.15, 0.5, 0.85, 1.0};
  int bad = 0;
  double worst_identity = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double dt = densities[i % 5];
    const double dp = densities[(i / 5) % 5];
    const auto truth = detail::random_mask(16, 16, 9000 + 2 * i, dt);
    const auto pred = detail::random_mask(16, 16, 9001 + 2 * i, dp);

    long tp = 0, fp = 0, tn = 0, fn = 0;
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) {
        const bool t = truth.at(y, x) != 0, p = pred.at(y, x) != 0;
        tp += t && p;
        fp += !t && p;
        tn += !t && !p;
        fn += t && !p;
      }
    auto ratio = [](double num, double den) { return den == 0 ? 1.0 : num / den; };
    const double iou = ratio(tp, tp + fp + fn);
    const double dice = ratio(2.0 * tp, 2.0 * tp + fp + fn);
    const double tpr = ratio(tp, tp + fn);
    const double tnr = ratio(tn, tn + fp);

    const auto got = iars::region_report(truth, pred);
    if (got.iou != iou || got.dice != dice || got.tpr != tpr || got.tnr != tnr ||
        got.fpr != 1.0 - tnr || got.fnr != 1.0 - tpr)
      ++bad;
    worst_identity = std::max(worst_identity, std::abs(got.dice - 2.0 * got.iou / (1.0 + got.iou)));
  }
  CheckResult r;
  r.name = "region metric oracle";
  r.pass = bad == 0 && worst_identity <= 1e-12;
  r.detail = std::to_string(bad) + "/1000 pairs off the loop oracle, worst Dice-IoU identity gap " +
             detail::fmt("%.2e", worst_identity);
  return r;
}

// ---------------------------------------------------------------------------
// Shape descriptors: Hu closed forms and invariances, EFD against direct
// arc-length integration, reconstruction convergence.
// ---------------------------------------------------------------------------

namespace detail {

inline iars::BinaryMask raster_ellipse(int h, int w, double a, double b) {
  iars::BinaryMask m = iars::BinaryMask::filled(h, w, false);
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double u = (x - cx) / a, v = (y - cy) / b;
      m.at(y, x) = u * u + v * v <= 1.0 ? 1 : 0;
    }
  return m;
}

inline iars::BinaryMask translate(const iars::BinaryMask& m, int H, int W, int dy, int dx) {
  iars::BinaryMask out = iars::BinaryMask::filled(H, W, false);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      if (m.at(y, x)) out.at(y + dy, x + dx) = 1;
  return out;
}

inline iars::BinaryMask rot90(const iars::BinaryMask& m) {
  iars::BinaryMask out = iars::BinaryMask::filled(m.width, m.height, false);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      if (m.at(y, x)) out.at(x, m.height - 1 - y) = 1;
  return out;
}

inline iars::BinaryMask mirror(const iars::BinaryMask& m) {
  iars::BinaryMask out = iars::BinaryMask::filled(m.height, m.width, false);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      if (m.at(y, x)) out.at(y, m.width - 1 - x) = 1;
  return out;
}

// First-harmonic minor/major axis ratio of a closed path traversed at
// constant speed: dense equal-arc-length resampling, trapezoid Fourier
// integral, then the singular values of [[a1,b1],[c1,d1]] (the semi-axes of
// the harmonic ellipse). Entirely independent of the per-segment closed forms
// used by the library.
inline double first_harmonic_ratio(const std::vector<std::pair<double, double>>& path) {
  const int M = 200000;
  const double twopi = 2.0 * std::numbers::pi;
  const std::size_t K = path.size();
  std::vector<double> cum(K + 1, 0.0);
  for (std::size_t i = 0; i < K; ++i) {
    const auto& p = path[i];
    const auto& q = path[(i + 1) % K];
    cum[i + 1] = cum[i] + std::hypot(q.first - p.first, q.second - p.second);
  }
  const double L = cum[K];
  auto at_arc = [&](double s) {
    const auto it = std::upper_bound(cum.begin(), cum.end(), s);
    const std::size_t seg = std::min(K - 1, static_cast<std::size_t>(it - cum.begin()) - 1);
    const double t = (s - cum[seg]) / std::max(1e-300, cum[seg + 1] - cum[seg]);
    const auto& p = path[seg];
    const auto& q = path[(seg + 1) % K];
    return std::pair<double, double>{p.first + t * (q.first - p.first),
                                     p.second + t * (q.second - p.second)};
  };
  double a1 = 0, b1 = 0, c1 = 0, d1 = 0;
  auto prev = at_arc(0.0);
  for (int i = 1; i <= M; ++i) {
    const double s = L * i / M;
    const auto cur = at_arc(std::min(s, L));
    const double ds = L / M;
    const double ang = twopi * (s - ds / 2.0) / L;
    a1 += (prev.first + cur.first) / 2.0 * std::cos(ang) * ds;
    b1 += (prev.first + cur.first) / 2.0 * std::sin(ang) * ds;
    c1 += (prev.second + cur.second) / 2.0 * std::cos(ang) * ds;
    d1 += (prev.second + cur.second) / 2.0 * std::sin(ang) * ds;
    prev = cur;
  }
  a1 *= 2.0 / L;
  b1 *= 2.0 / L;
  c1 *= 2.0 / L;
  d1 *= 2.0 / L;
  const double q = a1 * a1 + b1 * b1 + c1 * c1 + d1 * d1;
  const double det = a1 * d1 - b1 * c1;
  const double disc = std::sqrt(std::max(0.0, q * q - 4.0 * det * det));
  const double major = std::sqrt((q + disc) / 2.0);
  const double minor = std::sqrt(std::max(0.0, (q - disc) / 2.0));
  return minor / major;
}

inline std::vector<std::pair<double, double>> analytic_ellipse_path(double a, double b) {
  std::vector<std::pair<double, double>> path(4096);
  for (std::size_t i = 0; i < path.size(); ++i) {
    const double th = 2.0 * std::numbers::pi * static_cast<double>(i) / path.size();
    path[i] = {a * std::cos(th), b * std::sin(th)};
  }
  return path;
}

inline std::vector<std::pair<double, double>> chain_path(const iars::ContourChain& chain) {
  std::vector<std::pair<double, double>> path;
  path.reserve(chain.points.size());
  for (const auto& [x, y] : chain.points)
    path.emplace_back(static_cast<double>(x), static_cast<double>(y));
  return path;
}

inline double point_segment_dist(double px, double py, double ax, double ay, double bx,
                                 double by) {
  const double vx = bx - ax, vy = by - ay;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(px - (ax + t * vx), py - (ay + t * vy));
}

inline double recon_error(const iars::ContourChain& chain, const iars::EfdDescriptor& d,
                          int n_use) {
  const auto pts = iars::efd_reconstruct(d, n_use, 4 * static_cast<int>(chain.points.size()));
  double total = 0;
  const std::size_t K = chain.points.size();
  for (const auto& [px, py] : pts) {
    double best = 1e300;
    for (std::size_t i = 0; i < K; ++i) {
      const auto& p = chain.points[i];
      const auto& q = chain.points[(i + 1) % K];
      best = std::min(best, point_segment_dist(px, py, p.first, p.second, q.first, q.second));
    }
    total += best;
  }
  return total / static_cast<double>(pts.size());
}

}  // namespace detail

inline CheckResult check_disk_phi1() {
  const auto disk = detail::raster_ellipse(96, 96, 32.0, 32.0);
  const double phi1 = iars::hu_moments(disk).raw_phi[0];
  const double expect = 1.0 / (2.0 * std::numbers::pi);
  CheckResult r;
  r.name = "disk hu phi1";
  r.pass = std::abs(phi1 - expect) <= 0.01 * expect;
  r.detail = "radius-32 disk phi1 " + detail::fmt("%.6f", phi1) + " vs 1/(2pi) " +
             detail::fmt("%.6f", expect);
  return r;
}

inline CheckResult check_hu_invariances() {
  const auto data = iars::synth_generate(
      {.count = 1, .height = 48, .width = 64, .seed = 5, .boundary_roughness = 0.3});
  const iars::BinaryMask& blob = data[0].mask;
  const auto base = iars::hu_moments(detail::translate(blob, 96, 112, 10, 12));
  const auto moved = iars::hu_moments(detail::translate(blob, 96, 112, 31, 37));
  const auto turned = iars::hu_moments(detail::rot90(blob));
  const auto flipped = iars::hu_moments(detail::mirror(blob));
  const auto plain = iars::hu_moments(blob);

  double trans_gap = 0, rot_gap = 0, flip_gap = 0;
  for (int i = 0; i < 7; ++i)
    trans_gap = std::max(trans_gap, std::abs(base.raw_phi[i] - moved.raw_phi[i]));
  for (int i = 0; i < 6; ++i) {
    rot_gap = std::max(rot_gap, std::abs(turned.raw_phi[i] - plain.raw_phi[i]));
    flip_gap = std::max(flip_gap, std::abs(flipped.raw_phi[i] - plain.raw_phi[i]));
  }
  rot_gap = std::max(rot_gap, std::abs(turned.raw_phi[6] - plain.raw_phi[6]));

  // the synth blobs are nearly mirror-symmetric (phi7 within noise of zero),
  // so probe the sign flip on a scalene right triangle, which is chiral by
  // construction
  iars::BinaryMask tri = iars::BinaryMask::filled(48, 64, false);
  for (int y = 5; y < 40; ++y)
    for (int x = 5; x < 55; ++x)
      if ((x - 5) / 50.0 + (y - 5) / 35.0 <= 1.0) tri.at(y, x) = 1;
  const double p7 = iars::hu_moments(tri).raw_phi[6];
  const double m7 = iars::hu_moments(detail::mirror(tri)).raw_phi[6];
  const bool sign_flip = p7 * m7 < 0 && std::abs(p7 + m7) <= 1e-9 && std::abs(p7) > 1e-8;

  CheckResult r;
  r.name = "hu invariances";
  r.pass = trans_gap <= 1e-12 && rot_gap <= 1e-9 && flip_gap <= 1e-9 && sign_flip;
  r.detail = "translation gap " + detail::fmt("%.1e", trans_gap) + ", rotation gap " +
             detail::fmt("%.1e", rot_gap) + ", triangle phi7 " + detail::fmt("%.3e", p7) +
             " -> " + detail::fmt("%.3e", m7);
  return r;
}

// spec_target: compare harmonic-1 D against the idealized 0.5 of the axis
// ratio (the published expectation). The constant-speed parameterization of a
// 2:1 ellipse puts it near 0.587 instead, so that comparison is reported as a
// known discrepancy. The pass/fail oracle integrates the first harmonic over
// the same traced polygon by brute force, which pins the library's closed
// forms without the rasterization gap in the way.
inline CheckResult check_ellipse_efd(bool spec_target) {
  const auto mask = detail::raster_ellipse(56, 96, 40.0, 20.0);
  const auto chain = iars::trace_boundary(mask);
  const auto d = iars::efd_normalize(iars::efd_compute(chain, 50));
  const double a1 = d.at(0, 0), b1 = d.at(0, 1), c1 = d.at(0, 2), d1 = std::abs(d.at(0, 3));
  CheckResult r;
  if (spec_target) {
    r.name = "ellipse efd vs idealized (1,0,0,0.5)";
    const double gap = std::max(std::max(std::abs(a1 - 1.0), std::abs(b1)),
                                std::max(std::abs(c1), std::abs(d1 - 0.5)));
    r.pass = gap <= 0.02;
    r.expected_failure = !r.pass;
    r.detail = "normalized harmonic 1 (" + detail::fmt("%.4f", a1) + ", " +
               detail::fmt("%.4f", b1) + ", " + detail::fmt("%.4f", c1) + ", " +
               detail::fmt("%.4f", d1) +
               "); constant-speed traversal of a 2:1 ellipse has minor/major " +
               detail::fmt("%.4f", detail::first_harmonic_ratio(
                                       detail::analytic_ellipse_path(2.0, 1.0))) +
               ", not the axis ratio 0.5";
  } else {
    r.name = "ellipse efd integration oracle";
    const double expect = detail::first_harmonic_ratio(detail::chain_path(chain));
    const double ideal =
        detail::first_harmonic_ratio(detail::analytic_ellipse_path(40.0, 20.0));
    const double gap = std::max(std::max(std::abs(a1 - 1.0), std::abs(b1)),
                                std::max(std::abs(c1), std::abs(d1 - expect)));
    r.pass = gap <= 1e-3;
    r.detail = "harmonic-1 D " + detail::fmt("%.6f", d1) + " vs polygon integral " +
               detail::fmt("%.6f", expect) + " (continuum 2:1 ellipse " +
               detail::fmt("%.6f", ideal) + "), off-terms <= " +
               detail::fmt("%.1e", std::max(std::abs(b1), std::abs(c1)));
  }
  return r;
}

inline CheckResult check_efd_reconstruction() {
  const auto data = iars::synth_generate({.count = 50, .height = 48, .width = 64, .seed = 99,
                                          .boundary_roughness = 0.3});
  const int ladder[] = {1, 2, 5, 10, 25, 50, 100};
  std::array<double, 7> mean{};
  for (const auto& s : data) {
    const auto chain = iars::trace_boundary(s.mask);
    const auto d = iars::efd_compute(chain, 100);
    for (std::size_t k = 0; k < 7; ++k) mean[k] += detail::recon_error(chain, d, ladder[k]);
  }
  for (auto& v : mean) v /= 50.0;
  bool monotone = true;
  for (std::size_t k = 1; k < 7; ++k) monotone = monotone && mean[k] <= mean[k - 1] + 1e-9;
  CheckResult r;
  r.name = "efd reconstruction";
  r.pass = monotone && mean[6] < 0.5;
  r.detail = "corpus-mean error px: N=1 " + detail::fmt("%.3f", mean[0]) + ", N=10 " +
             detail::fmt("%.3f", mean[3]) + ", N=100 " + detail::fmt("%.3f", mean[6]) +
             (monotone ? ", monotone" : ", NOT monotone");
  return r;
}

// ---------------------------------------------------------------------------
// Rank-sum test: textbook exact value, then exact vs normal agreement.
// ---------------------------------------------------------------------------

inline CheckResult check_stats_oracle() {
  const auto text =
      iars::rank_sum_test({1.0, 2.0, 3.0}, {4.0, 5.0, 6.0}, iars::RankSumMethod::exact);
  const double text_gap = std::abs(text.p_two_sided - 0.1);

  double worst = 0.0;
  auto rng = iars::make_rng(4040);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> pool(16);
    for (std::size_t i = 0; i < pool.size(); ++i)
      pool[i] = static_cast<double>(i) + 0.8 * iars::unit_uniform(rng);
    for (std::size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[rng() % i]);
    const std::vector<double> x(pool.begin(), pool.begin() + 8);
    const std::vector<double> y(pool.begin() + 8, pool.end());
    const auto exact = iars::rank_sum_test(x, y, iars::RankSumMethod::exact);
    const auto normal = iars::rank_sum_test(x, y, iars::RankSumMethod::normal);
    worst = std::max(worst, std::abs(exact.p_two_sided - normal.p_two_sided));
  }
  CheckResult r;
  r.name = "rank-sum oracle";
  r.pass = text_gap <= 1e-12 && worst <= 0.02;
  r.detail = "p([1,2,3],[4,5,6]) = " + detail::fmt("%.12f", text.p_two_sided) +
             ", worst exact-vs-normal gap " + detail::fmt("%.4f", worst) + " over 100 draws";
  return r;
}

// ---------------------------------------------------------------------------
// Residual rewiring keeps the parameter count.
// ---------------------------------------------------------------------------

inline CheckResult check_parameter_parity() {
  iars::ArchConfig a;
  a.input_h = 48;
  a.input_w = 64;
  a.depth = 4;
  a.width_factor = 0.125;
  std::array<std::int64_t, 4> counts{};
  const char* names[] = {"m1", "m2", "m3", "m4"};
  for (int i = 0; i < 4; ++i) {
    auto m = iars::build_model<float>(a, iars::variant_flags(names[i]), 1);
    counts[static_cast<std::size_t>(i)] = iars::parameter_count(m);
  }
  CheckResult r;
  r.name = "parameter parity";
  r.pass = counts[2] == counts[1];
  r.detail = "m1 " + std::to_string(counts[0]) + ", m2 " + std::to_string(counts[1]) + ", m3 " +
             std::to_string(counts[2]) + ", m4 " + std::to_string(counts[3]) +
             (r.pass ? " (m2 == m3)" : " (m2 != m3)");
  return r;
}

// ---------------------------------------------------------------------------
// Interpretability contracts: diff algebra, grid arithmetic, determinism.
// ---------------------------------------------------------------------------

inline std::vector<CheckResult> check_interpret_contracts() {
  std::vector<CheckResult> out;
  {
    int bad = 0;
    for (int i = 0; i < 100; ++i) {
      const auto base = detail::random_mask(32, 32, 7000 + 2 * i, 0.4);
      const auto refined = detail::random_mask(32, 32, 7001 + 2 * i, 0.5);
      const auto d = iars::mask_diff(base, refined);
      bool disjoint = true;
      for (std::size_t k = 0; k < d.added.data.size(); ++k)
        disjoint = disjoint && !(d.added.data[k] && d.removed.data[k]);
      if (!disjoint || !(iars::apply_diff(base, d) == refined)) ++bad;
    }
    CheckResult r;
    r.name = "mask diff identity";
    r.pass = bad == 0;
    r.detail = std::to_string(bad) + "/100 random pairs broke (base \\ removed) + added == refined";
    out.push_back(r);
  }
  {
    std::vector<iars::MipImage> mips;
    for (int i = 0; i < 10; ++i) {
      iars::MipImage m;
      m.height = 12;
      m.width = 16;
      m.values.assign(12 * 16, i / 10.0);
      mips.push_back(m);
    }
    const auto grid = iars::render_mip_grid_image(mips);
    CheckResult r;
    r.name = "mip grid layout";
    r.pass = grid.height == 2 * 12 + 2 && grid.width == 5 * 16 + 8;
    r.detail = "depth-5 grid " + std::to_string(grid.height) + "x" + std::to_string(grid.width) +
               " vs expected 26x88";
    out.push_back(r);
  }
  {
    detail::Scratch tmp;
    const auto data =
        iars::synth_generate({.count = 1, .height = 32, .width = 32, .seed = 77});
    const auto base = detail::random_mask(32, 32, 301, 0.4);
    const auto refined = detail::random_mask(32, 32, 302, 0.45);
    const auto d = iars::mask_diff(base, refined);
    iars::render_panel(data[0].image, d, tmp.file("p1.ppm"));
    iars::render_panel(data[0].image, d, tmp.file("p2.ppm"));
    std::vector<iars::MipImage> mips(2);
    for (auto& m : mips) {
      m.height = 8;
      m.width = 8;
      m.values.assign(64, 0.5);
    }
    mips[1].values.assign(64, 0.25);
    iars::render_mip_grid(mips, tmp.file("g1.ppm"));
    iars::render_mip_grid(mips, tmp.file("g2.ppm"));
    CheckResult r;
    r.name = "render determinism";
    const bool panels = detail::slurp(tmp.file("p1.ppm")) == detail::slurp(tmp.file("p2.ppm"));
    const bool grids = detail::slurp(tmp.file("g1.ppm")) == detail::slurp(tmp.file("g2.ppm"));
    r.pass = panels && grids;
    r.detail = std::string("repeat renders byte-identical: panel ") + (panels ? "yes" : "NO") +
               ", grid " + (grids ? "yes" : "NO");
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence: bit-exact round trips and a corrupted-file fuzz corpus.
// ---------------------------------------------------------------------------

inline std::vector<CheckResult> check_persistence() {
  std::vector<CheckResult> out;
  detail::Scratch tmp;

  iars::ArchConfig a;
  a.input_h = 16;
  a.input_w = 16;
  a.depth = 2;
  a.stage_widths = {4, 8};
  auto model = iars::build_model<float>(a, iars::variant_flags("m2"), 3);
  const auto data = iars::synth_generate({.count = 3, .height = 16, .width = 16, .seed = 31});
  iars::TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 3;
  tc.augment.hflip = false;
  tc.augment.rotation_degrees = 0.0;
  iars::train(model, data, {}, tc);

  {
    const std::string path = tmp.file("model.ckpt");
    iars::save_checkpoint(model, path);
    auto back = iars::load_model<float>(path);
    bool same = true;
    for (std::size_t i = 0; i < model.parameters.size(); ++i) {
      const auto& x = model.parameters[i].second.data();
      const auto& y = back.parameters[i].second.data();
      same = same && std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) == 0;
    }
    for (std::size_t i = 0; i < model.buffers.size(); ++i) {
      const auto& x = model.buffers[i].second.data();
      const auto& y = back.buffers[i].second.data();
      same = same && std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) == 0;
    }
    CheckResult r;
    r.name = "checkpoint round trip";
    r.pass = same;
    r.detail = same ? "all parameters and buffers bit-identical after save/load"
                    : "tensor payload changed across save/load";
    out.push_back(r);
  }
  {
    const std::string p1 = tmp.file("s.ppm"), p2 = tmp.file("s2.ppm");
    const std::string g1 = tmp.file("s.pgm"), g2 = tmp.file("s2.pgm");
    iars::write_ppm(p1, data[0].image);
    iars::write_ppm(p2, iars::read_ppm(p1));
    iars::write_pgm(g1, data[0].mask);
    iars::write_pgm(g2, iars::read_pgm(g1));
    CheckResult r;
    r.name = "codec round trip";
    r.pass = detail::slurp(p1) == detail::slurp(p2) && detail::slurp(g1) == detail::slurp(g2);
    r.detail = r.pass ? "ppm and pgm write(read(f)) byte-identical" : "codec round trip drifted";
    out.push_back(r);
  }
  {
    // single-byte corruptions must surface as typed errors, never crashes;
    // image payload bytes carry no checksum, so a payload flip that still
    // decodes cleanly counts as survived
    auto rng = iars::make_rng(777);
    const std::string ck = detail::slurp(tmp.file("model.ckpt"));
    const std::string ppm = detail::slurp(tmp.file("s.ppm"));
    const std::string pgm = detail::slurp(tmp.file("s.pgm"));
    int ck_typed = 0, img_typed = 0, img_clean = 0, escaped = 0;
    for (int i = 0; i < 100; ++i) {
      std::string mutant = ck;
      mutant[rng() % mutant.size()] ^= static_cast<char>(1 + rng() % 255);
      const std::string path = tmp.file("mut.ckpt");
      std::ofstream(path, std::ios::binary) << mutant;
      try {
        (void)iars::load_checkpoint(path);
      } catch (const iars::CheckpointError&) {
        ++ck_typed;
      } catch (...) {
        ++escaped;
      }
    }
    for (int i = 0; i < 100; ++i) {
      const bool color = i % 2 == 0;
      std::string mutant = color ? ppm : pgm;
      mutant[rng() % mutant.size()] ^= static_cast<char>(1 + rng() % 255);
      const std::string path = tmp.file(color ? "mut.ppm" : "mut.pgm");
      std::ofstream(path, std::ios::binary) << mutant;
      try {
        if (color)
          (void)iars::read_ppm(path);
        else
          (void)iars::read_pgm(path);
        ++img_clean;
      } catch (const iars::ImageIoError&) {
        ++img_typed;
      } catch (...) {
        ++escaped;
      }
    }
    CheckResult r;
    r.name = "fuzz corpus";
    r.pass = ck_typed == 100 && escaped == 0;
    r.detail = "checkpoint " + std::to_string(ck_typed) + "/100 typed, images " +
               std::to_string(img_typed) + " typed + " + std::to_string(img_clean) +
               " benign decodes, " + std::to_string(escaped) + " untyped escapes";
    out.push_back(r);
  }
  return out;
}

// Everything fast; the desk-scale end-to-end run lives in the acceptance gate.
inline std::vector<CheckResult> run_selftest() {
  std::vector<CheckResult> out;
  out.push_back(check_gradient_suite());
  out.push_back(check_region_oracle());
  out.push_back(check_disk_phi1());
  out.push_back(check_hu_invariances());
  out.push_back(check_ellipse_efd(false));
  out.push_back(check_efd_reconstruction());
  out.push_back(check_stats_oracle());
  out.push_back(check_parameter_parity());
  for (auto& r : check_interpret_contracts()) out.push_back(std::move(r));
  for (auto& r : check_persistence()) out.push_back(std::move(r));
  return out;
}

}  // namespace iarscheck
