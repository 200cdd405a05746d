#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "iars/dataset.hpp"
#include "iars/image.hpp"
#include "iars/model.hpp"
#include "iars/ops.hpp"
#include "iars/random.hpp"
#include "iars/region_metrics.hpp"
#include "iars/synth.hpp"
#include "iars/tensor.hpp"

namespace iars {

struct FocalLossParams {
  double alpha = 0.25;
  double gamma = 2.0;
};

inline void validate_focal(const FocalLossParams& p) {
  if (!(p.alpha >= 0.0 && p.alpha <= 1.0))
    throw std::invalid_argument("focal loss: alpha must lie in [0,1]");
  if (!(p.gamma >= 0.0)) throw std::invalid_argument("focal loss: gamma must be non-negative");
}

namespace detail {

constexpr double kProbFloor = 1e-7;

// Derivative of -a*(1-pt)^g*ln(pt) with respect to pt. The g term vanishes
// identically at g=0, where the loss reduces to weighted cross-entropy.
inline double focal_dpt(double pt, double a, double g) {
  const double mod = g == 0.0 ? 1.0 : std::pow(1.0 - pt, g);
  double d = -a * mod / pt;
  if (g > 0.0) d += a * g * std::pow(1.0 - pt, g - 1.0) * std::log(pt);
  return d;
}

}  // namespace detail

// Mean over all pixels of -a_t*(1-p_t)^gamma*ln(p_t), where p_t is the
// predicted probability of the pixel's true class and a_t weights foreground
// pixels by alpha, background by 1-alpha. Probabilities are clamped away from
// {0,1} before the logarithm; a pixel pushed into the clamp contributes no
// gradient there.
template <typename T>
Tensor<T> focal_loss(const Tensor<T>& probs, const Tensor<T>& target,
                     const FocalLossParams& params = {}) {
  validate_focal(params);
  detail::require_4d(probs.shape(), "focal_loss probs");
  if (probs.dim(1) != 1)
    throw std::invalid_argument("focal_loss: probs must have a single channel");
  detail::require_same_shape(probs.shape(), target.shape(), "focal_loss");
  const auto& pv = probs.data();
  const auto& tv = target.data();
  const std::size_t n = pv.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(tv[i]);
    if (t != 0.0 && t != 1.0) throw std::invalid_argument("focal_loss: target must be binary");
    const double p = static_cast<double>(pv[i]);
    const double pt =
        std::clamp(t == 1.0 ? p : 1.0 - p, detail::kProbFloor, 1.0 - detail::kProbFloor);
    const double at = t == 1.0 ? params.alpha : 1.0 - params.alpha;
    const double mod = params.gamma == 0.0 ? 1.0 : std::pow(1.0 - pt, params.gamma);
    acc += -at * mod * std::log(pt);
  }
  Tensor<T> out = Tensor<T>::from({1}, {static_cast<T>(acc / static_cast<double>(n))});
  if (tracing<T>({probs.requires_grad()})) {
    out.set_requires_grad(true);
    auto ph = probs.handle(), oh = out.handle();
    auto th = target.handle();
    const double alpha = params.alpha, gamma = params.gamma;
    Tape<T>::active()->record("focal_loss", [ph, th, oh, alpha, gamma, n] {
      ph->ensure_grad();
      const double g = static_cast<double>(oh->grad[0]) / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(th->value[i]);
        const double p = static_cast<double>(ph->value[i]);
        const double raw = t == 1.0 ? p : 1.0 - p;
        if (raw <= detail::kProbFloor || raw >= 1.0 - detail::kProbFloor) continue;
        const double sign = t == 1.0 ? 1.0 : -1.0;
        const double at = t == 1.0 ? alpha : 1.0 - alpha;
        ph->grad[i] += static_cast<T>(g * sign * detail::focal_dpt(raw, at, gamma));
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> focal_loss(const Tensor<T>& probs, const std::vector<BinaryMask>& masks,
                     const FocalLossParams& params = {}) {
  detail::require_4d(probs.shape(), "focal_loss probs");
  if (static_cast<std::size_t>(probs.dim(0)) != masks.size())
    throw std::invalid_argument("focal_loss: batch holds " + std::to_string(probs.dim(0)) +
                                " slots but " + std::to_string(masks.size()) + " masks given");
  Tensor<T> target = Tensor<T>::zeros(probs.shape());
  for (std::size_t i = 0; i < masks.size(); ++i) fill_mask(target, static_cast<int>(i), masks[i]);
  return focal_loss(probs, target, params);
}

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentPolicy {
  bool hflip = true;
  double rotation_degrees = 40.0;
};

inline RgbImage hflip(const RgbImage& im) {
  RgbImage out = im;
  for (int y = 0; y < im.height; ++y)
    for (int x = 0; x < im.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = im.at(y, im.width - 1 - x, c);
  return out;
}

inline BinaryMask hflip(const BinaryMask& m) {
  BinaryMask out = m;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) out.at(y, x) = m.at(y, m.width - 1 - x);
  return out;
}

namespace detail {

// Maps an output pixel back to its source location for a rotation about the
// image centre.
struct InverseRotation {
  double cy, cx, sin_t, cos_t;
  InverseRotation(int h, int w, double degrees)
      : cy((h - 1) / 2.0),
        cx((w - 1) / 2.0),
        sin_t(std::sin(degrees * std::acos(-1.0) / 180.0)),
        cos_t(std::cos(degrees * std::acos(-1.0) / 180.0)) {}
  std::pair<double, double> source(int y, int x) const {
    const double dy = y - cy, dx = x - cx;
    return {cy + cos_t * dy - sin_t * dx, cx + sin_t * dy + cos_t * dx};
  }
};

}  // namespace detail

// Bilinear resample of a rotation about the image centre; out-of-frame area
// reads as zero.
inline RgbImage rotate_bilinear(const RgbImage& im, double degrees) {
  RgbImage out = RgbImage::filled(im.height, im.width, 0.0f, 0.0f, 0.0f);
  const detail::InverseRotation inv(im.height, im.width, degrees);
  for (int y = 0; y < im.height; ++y) {
    for (int x = 0; x < im.width; ++x) {
      const auto [sy, sx] = inv.source(y, x);
      const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
      const double fy = sy - y0, fx = sx - x0;
      for (int c = 0; c < 3; ++c) {
        double v = 0.0;
        for (int oy = 0; oy < 2; ++oy) {
          for (int ox = 0; ox < 2; ++ox) {
            const int yy = y0 + oy, xx = x0 + ox;
            if (yy < 0 || yy >= im.height || xx < 0 || xx >= im.width) continue;
            const double w = (oy ? fy : 1.0 - fy) * (ox ? fx : 1.0 - fx);
            v += w * im.at(yy, xx, c);
          }
        }
        out.at(y, x, c) = static_cast<float>(v);
      }
    }
  }
  return out;
}

// Nearest-neighbour rotation of a mask; out-of-frame area reads as
// background, and the result stays strictly binary.
inline BinaryMask rotate_nearest(const BinaryMask& m, double degrees) {
  BinaryMask out = BinaryMask::filled(m.height, m.width, false);
  const detail::InverseRotation inv(m.height, m.width, degrees);
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      const auto [sy, sx] = inv.source(y, x);
      const int yy = static_cast<int>(std::lround(sy)), xx = static_cast<int>(std::lround(sx));
      if (yy < 0 || yy >= m.height || xx < 0 || xx >= m.width) continue;
      out.at(y, x) = m.at(yy, xx) ? 1 : 0;
    }
  }
  return out;
}

// Applies one random flip/rotation draw to a paired sample. Image and mask
// always receive the same geometric transform; the image is resampled
// bilinearly, the mask with nearest-neighbour so it stays binary.
inline Sample augment(const Sample& s, const AugmentPolicy& policy, std::mt19937_64& rng) {
  Sample out = s;
  if (policy.hflip && unit_uniform(rng) < 0.5) {
    out.image = hflip(out.image);
    out.mask = hflip(out.mask);
  }
  if (policy.rotation_degrees > 0.0) {
    const double angle = (2.0 * unit_uniform(rng) - 1.0) * policy.rotation_degrees;
    out.image = rotate_bilinear(out.image, angle);
    out.mask = rotate_nearest(out.mask, angle);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimization loop

enum class Optimizer { sgd_momentum, adam };

struct TrainConfig {
  double learning_rate = 1e-3;
  int epochs = 1;
  int batch_size = 8;
  std::uint64_t seed = 0;
  Optimizer optimizer = Optimizer::adam;
  AugmentPolicy augment;
  double momentum = 0.9;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
};

inline void validate_train_config(const TrainConfig& cfg) {
  if (!(cfg.learning_rate >= 0.0))
    throw std::invalid_argument("train config: learning rate must be non-negative");
  if (cfg.epochs < 0) throw std::invalid_argument("train config: epochs must be non-negative");
  if (cfg.batch_size <= 0) throw std::invalid_argument("train config: batch size must be positive");
  if (!(cfg.augment.rotation_degrees >= 0.0 && cfg.augment.rotation_degrees <= 180.0))
    throw std::invalid_argument("train config: rotation range must lie in [0,180] degrees");
}

// Per-parameter optimizer slots, kept in model registry order so they can be
// checkpointed alongside the parameters they belong to.
template <typename T>
struct OptimizerState {
  int step = 0;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
};

struct TrainRow {
  int epoch = 0;
  double train_loss = 0.0;
  double val_iou = 0.0;
};

struct TrainLog {
  std::vector<TrainRow> rows;
};

namespace detail {

template <typename T>
void ensure_optimizer_slots(OptimizerState<T>& st, const SegModel<T>& model, Optimizer kind) {
  if (!st.first_moment.empty()) return;
  for (const auto& [name, t] : model.parameters) {
    st.first_moment.emplace_back(t.size(), T(0));
    if (kind == Optimizer::adam) st.second_moment.emplace_back(t.size(), T(0));
  }
}

template <typename T>
void optimizer_step(SegModel<T>& model, OptimizerState<T>& st, const TrainConfig& cfg) {
  ++st.step;
  for (std::size_t pi = 0; pi < model.parameters.size(); ++pi) {
    auto& tensor = model.parameters[pi].second;
    auto& vals = tensor.data();
    const auto& grads = tensor.grad();
    auto& m = st.first_moment[pi];
    if (cfg.optimizer == Optimizer::sgd_momentum) {
      for (std::size_t i = 0; i < vals.size(); ++i) {
        m[i] = static_cast<T>(cfg.momentum * m[i] + grads[i]);
        vals[i] -= static_cast<T>(cfg.learning_rate * m[i]);
      }
    } else {
      auto& v = st.second_moment[pi];
      const double c1 = 1.0 - std::pow(cfg.adam_beta1, st.step);
      const double c2 = 1.0 - std::pow(cfg.adam_beta2, st.step);
      for (std::size_t i = 0; i < vals.size(); ++i) {
        const double g = grads[i];
        m[i] = static_cast<T>(cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * g);
        v[i] = static_cast<T>(cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * g * g);
        const double mhat = m[i] / c1, vhat = v[i] / c2;
        vals[i] -= static_cast<T>(cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps));
      }
    }
  }
}

// Hand-rolled shuffle so the visit order depends only on the seed, not on a
// library's distribution internals.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  auto rng = make_rng(mix_seed(seed, 0x5eedu), static_cast<std::uint64_t>(epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  return order;
}

}  // namespace detail

// Mean intersection-over-union of thresholded predictions against ground
// truth, evaluated with frozen normalization statistics.
template <typename T>
double mean_iou(SegModel<T>& model, const std::vector<Sample>& samples, int batch_size = 8) {
  if (samples.empty()) throw std::invalid_argument("mean_iou: no samples");
  const int H = model.config.input_h, W = model.config.input_w;
  double acc = 0.0;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const int b = static_cast<int>(std::min<std::size_t>(batch_size, samples.size() - start));
    Tensor<T> batch = Tensor<T>::zeros({b, 3, H, W});
    for (int i = 0; i < b; ++i) fill_image(batch, i, samples[start + i].image);
    Tensor<T> out = model.forward(batch, false);
    for (int i = 0; i < b; ++i) {
      const BinaryMask pred = mask_from_tensor(out, i);
      acc += region_report(samples[start + i].mask, pred).iou;
    }
  }
  return acc / static_cast<double>(samples.size());
}

// Focal-loss training loop. Deterministic for a fixed seed: the shuffle order
// and every augmentation draw derive from (seed, epoch, sample index), so a
// rerun reproduces the loss curve exactly. Validation IoU falls back to the
// training split when no validation samples are supplied.
template <typename T>
TrainLog train(SegModel<T>& model, const std::vector<Sample>& train_set,
               const std::vector<Sample>& val_set, const TrainConfig& cfg,
               const FocalLossParams& fl = {}, OptimizerState<T>* resume = nullptr) {
  validate_train_config(cfg);
  validate_focal(fl);
  if (train_set.empty()) throw std::invalid_argument("train: training split is empty");
  if (model.config.input_channels != 3)
    throw std::invalid_argument("train: model must take 3-channel input");
  const int H = model.config.input_h, W = model.config.input_w;

  OptimizerState<T> local;
  OptimizerState<T>& st = resume ? *resume : local;
  detail::ensure_optimizer_slots(st, model, cfg.optimizer);

  TrainLog log;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = detail::epoch_order(train_set.size(), cfg.seed, epoch);
    double loss_acc = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const int b = static_cast<int>(std::min<std::size_t>(cfg.batch_size, order.size() - start));
      Tensor<T> batch = Tensor<T>::zeros({b, 3, H, W});
      Tensor<T> target = Tensor<T>::zeros({b, 1, H, W});
      for (int i = 0; i < b; ++i) {
        const std::size_t idx = order[start + i];
        auto rng = make_rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)),
                            static_cast<std::uint64_t>(idx));
        const Sample s = augment(train_set[idx], cfg.augment, rng);
        fill_image(batch, i, s.image);
        fill_mask(target, i, s.mask);
      }
      Tape<T> tape;
      Tensor<T> out = model.forward(batch, true);
      Tensor<T> loss = focal_loss(out, target, fl);
      const double lv = static_cast<double>(loss.data()[0]);
      if (!std::isfinite(lv))
        throw std::runtime_error("train: loss diverged (not finite) at epoch " +
                                 std::to_string(epoch) + ", batch offset " +
                                 std::to_string(start));
      for (auto& [name, t] : model.parameters) t.zero_grad();
      tape.backward(loss);
      detail::optimizer_step(model, st, cfg);
      loss_acc += lv * b;
    }
    TrainRow row;
    row.epoch = epoch;
    row.train_loss = loss_acc / static_cast<double>(train_set.size());
    row.val_iou = mean_iou(model, val_set.empty() ? train_set : val_set, cfg.batch_size);
    log.rows.push_back(row);
  }
  return log;
}

}  // namespace iars
