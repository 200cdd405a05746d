#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

#include "iars/image.hpp"
#include "iars/random.hpp"

namespace iars {

struct SyntheticGenConfig {
  int count = 1;
  int height = 48;
  int width = 64;
  std::uint64_t seed = 0;
  bool distractor_hair = false;
  double boundary_roughness = 0.2;
};

struct Sample {
  RgbImage image;
  BinaryMask mask;
};

namespace detail {

// Radial lesion outline: an oriented ellipse whose radius is modulated by a
// handful of low-frequency harmonics. Star-shaped by construction, so the
// rasterized region is simply connected.
struct BlobShape {
  double cx, cy;        // center in pixel coordinates
  double a, b;          // ellipse semi-axes
  double phi;           // ellipse orientation
  double rough;         // modulation amplitude
  double coef[4];       // harmonics k = 2..5, |coef| sums to <= 1
  double phase[4];

  double radius(double theta) const {
    const double t = theta - phi;
    const double re = a * b / std::hypot(b * std::cos(t), a * std::sin(t));
    double s = 0;
    for (int k = 0; k < 4; ++k) s += coef[k] * std::cos((k + 2) * theta + phase[k]);
    return re * (1.0 + rough * s);
  }
  bool contains(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double rho = std::hypot(dx, dy);
    if (rho < 1e-9) return true;
    return rho <= radius(std::atan2(dy, dx));
  }
};

inline BlobShape draw_blob(std::mt19937_64& rng, int h, int w, double roughness) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  BlobShape s{};
  const double mindim = static_cast<double>(std::min(h, w));
  s.a = mindim * (0.20 + 0.10 * u01(rng));
  s.b = s.a * (0.65 + 0.30 * u01(rng));
  s.phi = u01(rng) * std::numbers::pi;
  s.rough = roughness;
  double norm = 0;
  for (int k = 0; k < 4; ++k) {
    s.coef[k] = 2.0 * u01(rng) - 1.0;
    s.phase[k] = u01(rng) * 2.0 * std::numbers::pi;
    norm += std::abs(s.coef[k]);
  }
  const double amp = 0.5 + 0.5 * u01(rng);
  if (norm > 0)
    for (int k = 0; k < 4; ++k) s.coef[k] *= amp / norm;
  const double rmax = s.a * (1.0 + roughness) + 1.0;
  const double lox = std::min(rmax, w / 2.0), loy = std::min(rmax, h / 2.0);
  s.cx = lox + u01(rng) * std::max(0.0, w - 2.0 * lox);
  s.cy = loy + u01(rng) * std::max(0.0, h - 2.0 * loy);
  return s;
}

inline void draw_hair(RgbImage& im, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const int h = im.height, w = im.width;
  // endpoints on opposite borders, bowed through a jittered midpoint
  double x0, y0, x1, y1;
  if (u01(rng) < 0.5) {
    x0 = u01(rng) * w;
    y0 = 0;
    x1 = u01(rng) * w;
    y1 = h - 1;
  } else {
    x0 = 0;
    y0 = u01(rng) * h;
    x1 = w - 1;
    y1 = u01(rng) * h;
  }
  const double mx = 0.5 * (x0 + x1) + (u01(rng) - 0.5) * 0.4 * w;
  const double my = 0.5 * (y0 + y1) + (u01(rng) - 0.5) * 0.4 * h;
  const float hair[3] = {0.10f, 0.08f, 0.07f};
  const int steps = 2 * (h + w);
  for (int i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    const double x = (1 - t) * (1 - t) * x0 + 2 * (1 - t) * t * mx + t * t * x1;
    const double y = (1 - t) * (1 - t) * y0 + 2 * (1 - t) * t * my + t * t * y1;
    const int px = static_cast<int>(std::lround(x)), py = static_cast<int>(std::lround(y));
    if (px < 0 || px >= w || py < 0 || py >= h) continue;
    for (int c = 0; c < 3; ++c)
      im.at(py, px, c) = 0.25f * im.at(py, px, c) + 0.75f * hair[c];
  }
}

}  // namespace detail

// Deterministic synthetic dermoscopy-like dataset: dark textured blob on a
// skin-toned background, optional hair strokes, mask rasterized from the
// exact generator outline.
inline std::vector<Sample> synth_generate(const SyntheticGenConfig& cfg) {
  if (cfg.count < 1) throw std::invalid_argument("synth_generate: count must be >= 1");
  if (cfg.height < 8 || cfg.width < 8)
    throw std::invalid_argument("synth_generate: dims must be at least 8x8");
  if (cfg.boundary_roughness < 0)
    throw std::invalid_argument("synth_generate: boundary_roughness must be >= 0");

  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(cfg.count));
  const std::size_t frame = static_cast<std::size_t>(cfg.height) * cfg.width;

  for (int i = 0; i < cfg.count; ++i) {
    auto rng = make_rng(cfg.seed, static_cast<std::uint64_t>(i));
    std::uniform_real_distribution<double> u01(0.0, 1.0);

    // resample until the lesion lands comfortably inside the required
    // [5%, 60%] area band
    detail::BlobShape blob{};
    BinaryMask mask;
    bool ok = false;
    for (int attempt = 0; attempt < 32 && !ok; ++attempt) {
      blob = detail::draw_blob(rng, cfg.height, cfg.width, cfg.boundary_roughness);
      mask = BinaryMask::filled(cfg.height, cfg.width, false);
      for (int y = 0; y < cfg.height; ++y)
        for (int x = 0; x < cfg.width; ++x)
          if (blob.contains(x, y)) mask.at(y, x) = 1;
      const double frac = static_cast<double>(mask.count()) / static_cast<double>(frame);
      ok = frac >= 0.055 && frac <= 0.55;
    }
    if (!ok) throw std::runtime_error("synth_generate: could not place a lesion in-band");

    // background: skin tone with two smooth waves, lesion: dark texture with
    // a radial gradient, soft blend only in the image (mask stays exact)
    const float skin[3] = {0.87f, 0.68f, 0.58f};
    const float lesion[3] = {0.38f, 0.25f, 0.20f};
    const double wf1 = 1.0 + 2.0 * u01(rng), wf2 = 1.0 + 2.0 * u01(rng);
    const double wp1 = u01(rng) * 6.283, wp2 = u01(rng) * 6.283;
    RgbImage im = RgbImage::filled(cfg.height, cfg.width, 0, 0, 0);
    std::uniform_real_distribution<float> noise(-0.015f, 0.015f);
    for (int y = 0; y < cfg.height; ++y)
      for (int x = 0; x < cfg.width; ++x) {
        const double wave =
            0.035 * (std::cos(6.283 * wf1 * x / cfg.width + wp1) +
                     std::cos(6.283 * wf2 * y / cfg.height + wp2));
        const double dx = x - blob.cx, dy = y - blob.cy;
        const double rho = std::hypot(dx, dy);
        const double r = blob.radius(rho < 1e-9 ? 0.0 : std::atan2(dy, dx));
        // signed distance proxy along the ray; >0 outside
        const double d = rho - r;
        const double tblend = std::clamp(0.5 + d / 1.5, 0.0, 1.0);
        const double shade = 0.75 + 0.25 * std::min(rho / std::max(r, 1.0), 1.0);
        const float n = noise(rng);
        for (int c = 0; c < 3; ++c) {
          const double lv = lesion[c] * shade;
          const double bv = skin[c] + wave;
          const double v = (1.0 - tblend) * lv + tblend * bv + n;
          im.at(y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }

    if (cfg.distractor_hair) {
      const int hairs = static_cast<int>(u01(rng) * 3.999);  // 0..3
      for (int k = 0; k < hairs; ++k) detail::draw_hair(im, rng);
    }

    out.push_back(Sample{std::move(im), std::move(mask)});
  }
  return out;
}

}  // namespace iars
