#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "iars/dataset.hpp"
#include "iars/image.hpp"
#include "iars/model.hpp"
#include "iars/region_metrics.hpp"
#include "iars/tensor.hpp"

namespace iars {

// Per-pixel maximum over channels, min-max normalized. A constant feature map
// has no contrast to show; it renders as all zeros and says so.
struct MipImage {
  int height = 0;
  int width = 0;
  std::vector<double> values;  // row-major, in [0,1]
  std::string label;
  bool constant = false;

  double at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

template <typename T>
MipImage mip(const Tensor<T>& feature_map, std::string label = "") {
  auto shape = feature_map.shape();
  std::size_t base = 0;
  if (shape.size() == 4) {
    if (shape[0] != 1)
      throw std::invalid_argument("mip: a batched feature map must have one slot");
    shape.erase(shape.begin());
  }
  if (shape.size() != 3) throw std::invalid_argument("mip: feature map must be (C,H,W)");
  const int C = shape[0], H = shape[1], W = shape[2];
  if (C < 1) throw std::invalid_argument("mip: need at least one channel");

  MipImage out;
  out.height = H;
  out.width = W;
  out.label = std::move(label);
  out.values.assign(static_cast<std::size_t>(H) * W, 0.0);
  const auto& vals = feature_map.data();
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (std::size_t i = 0; i < plane; ++i) {
    double m = static_cast<double>(vals[base + i]);
    for (int c = 1; c < C; ++c)
      m = std::max(m, static_cast<double>(vals[base + c * plane + i]));
    out.values[i] = m;
  }
  const auto [lo_it, hi_it] = std::minmax_element(out.values.begin(), out.values.end());
  const double lo = *lo_it, hi = *hi_it;
  if (hi == lo) {
    out.constant = true;
    std::fill(out.values.begin(), out.values.end(), 0.0);
  } else {
    for (auto& v : out.values) v = (v - lo) / (hi - lo);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mask diffs

struct DiffPanel {
  BinaryMask added;
  BinaryMask removed;
  std::string base_label;
  std::string refined_label;
};

inline DiffPanel mask_diff(const BinaryMask& base, const BinaryMask& refined,
                           std::string base_label = "", std::string refined_label = "") {
  if (base.height != refined.height || base.width != refined.width)
    throw std::invalid_argument("mask_diff: masks are " + std::to_string(base.height) + "x" +
                                std::to_string(base.width) + " vs " +
                                std::to_string(refined.height) + "x" +
                                std::to_string(refined.width));
  DiffPanel d;
  d.added = BinaryMask::filled(base.height, base.width, false);
  d.removed = BinaryMask::filled(base.height, base.width, false);
  d.base_label = std::move(base_label);
  d.refined_label = std::move(refined_label);
  for (std::size_t i = 0; i < base.data.size(); ++i) {
    d.added.data[i] = refined.data[i] && !base.data[i] ? 1 : 0;
    d.removed.data[i] = base.data[i] && !refined.data[i] ? 1 : 0;
  }
  return d;
}

// Replays a diff: (base minus removed) plus added. mask_diff followed by
// apply_diff reconstructs the refined mask exactly.
inline BinaryMask apply_diff(const BinaryMask& base, const DiffPanel& d) {
  if (base.height != d.added.height || base.width != d.added.width)
    throw std::invalid_argument("apply_diff: dimension mismatch");
  BinaryMask out = base;
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = (out.data[i] && !d.removed.data[i]) || d.added.data[i] ? 1 : 0;
  return out;
}

// ---------------------------------------------------------------------------
// Rendering

// Overlay contract: added pixels pure blue, removed pixels pure red,
// everything else the input dimmed to 60% so the overlays stand out.
inline RgbImage render_panel_image(const RgbImage& image, const DiffPanel& d) {
  if (image.height != d.added.height || image.width != d.added.width)
    throw std::invalid_argument("render_panel: image and diff dimensions differ");
  RgbImage out = image;
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      if (d.added.at(y, x)) {
        out.at(y, x, 0) = 0.0f;
        out.at(y, x, 1) = 0.0f;
        out.at(y, x, 2) = 1.0f;
      } else if (d.removed.at(y, x)) {
        out.at(y, x, 0) = 1.0f;
        out.at(y, x, 1) = 0.0f;
        out.at(y, x, 2) = 0.0f;
      } else {
        for (int c = 0; c < 3; ++c) out.at(y, x, c) = image.at(y, x, c) * 0.6f;
      }
    }
  }
  return out;
}

inline void render_panel(const RgbImage& image, const DiffPanel& d, const std::string& out_path) {
  write_ppm(out_path, render_panel_image(image, d));
}

namespace detail {

inline MipImage resize_mip_nearest(const MipImage& m, int h, int w) {
  if (m.height == h && m.width == w) return m;
  MipImage out = m;
  out.height = h;
  out.width = w;
  out.values.assign(static_cast<std::size_t>(h) * w, 0.0);
  for (int y = 0; y < h; ++y) {
    const int sy = y * m.height / h;
    for (int x = 0; x < w; ++x) out.values[static_cast<std::size_t>(y) * w + x] = m.at(sy, x * m.width / w);
  }
  return out;
}

}  // namespace detail

// Two rows of tiles: the first half of the list across the top, the second
// half beneath, 2-px white separators between tiles. Smaller maps (deeper
// blocks) are nearest-upsampled to the largest tile so the grid is regular.
inline RgbImage render_mip_grid_image(const std::vector<MipImage>& mips) {
  if (mips.size() < 2 || mips.size() % 2 != 0)
    throw std::invalid_argument("mip grid: need an even number of at least two tiles");
  int H = 0, W = 0;
  for (const auto& m : mips) {
    H = std::max(H, m.height);
    W = std::max(W, m.width);
  }
  const int cols = static_cast<int>(mips.size()) / 2;
  const int out_h = 2 * H + 2, out_w = cols * W + 2 * (cols - 1);
  RgbImage out = RgbImage::filled(out_h, out_w, 1.0f, 1.0f, 1.0f);
  for (int i = 0; i < static_cast<int>(mips.size()); ++i) {
    const MipImage tile = detail::resize_mip_nearest(mips[i], H, W);
    const int row = i / cols, col = i % cols;
    const int oy = row * (H + 2), ox = col * (W + 2);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const float v = static_cast<float>(tile.at(y, x));
        for (int c = 0; c < 3; ++c) out.at(oy + y, ox + x, c) = v;
      }
  }
  return out;
}

inline void render_mip_grid(const std::vector<MipImage>& mips, const std::string& out_path) {
  write_ppm(out_path, render_mip_grid_image(mips));
}

// ---------------------------------------------------------------------------
// Variant progression

inline std::string variant_name(const VariantFlags& f) {
  if (!f.skip && !f.residual && !f.attention) return "m1";
  if (f.skip && !f.residual && !f.attention) return "m2";
  if (f.skip && f.residual && !f.attention) return "m3";
  if (f.skip && f.residual && f.attention) return "m4";
  return "custom";
}

struct ProgressionStep {
  DiffPanel panel;
  double iou = 0.0;  // refined mask vs ground truth, when truth is given
};

struct ProgressionReport {
  std::vector<BinaryMask> masks;       // one per model, in the order given
  std::vector<ProgressionStep> steps;  // consecutive diffs, masks.size()-1 entries
  std::vector<double> iou;             // per model, when truth is given
};

// Runs each model on one image and diffs consecutive predictions, tracing how
// each architectural addition reshapes the mask. Applying the step diffs in
// order to the first mask reproduces the last one exactly.
template <typename T>
ProgressionReport variant_progression(std::vector<SegModel<T>>& models, const RgbImage& image,
                                      const BinaryMask* truth = nullptr) {
  if (models.size() < 2)
    throw std::invalid_argument("variant progression: need at least two models");
  ProgressionReport rep;
  for (auto& model : models) {
    if (model.config.input_h != image.height || model.config.input_w != image.width)
      throw std::invalid_argument("variant progression: model " + variant_name(model.flags) +
                                  " expects " + std::to_string(model.config.input_h) + "x" +
                                  std::to_string(model.config.input_w) + " input");
    Tensor<T> batch = Tensor<T>::zeros({1, 3, image.height, image.width});
    fill_image(batch, 0, image);
    rep.masks.push_back(mask_from_tensor(model.forward(batch, false), 0));
    if (truth) rep.iou.push_back(region_report(*truth, rep.masks.back()).iou);
  }
  for (std::size_t i = 0; i + 1 < rep.masks.size(); ++i) {
    ProgressionStep step;
    step.panel = mask_diff(rep.masks[i], rep.masks[i + 1], variant_name(models[i].flags),
                           variant_name(models[i + 1].flags));
    if (truth) step.iou = rep.iou[i + 1];
    rep.steps.push_back(std::move(step));
  }
  return rep;
}

}  // namespace iars
