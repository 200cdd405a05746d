#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "iars/tensor.hpp"

namespace iars {

// Argmax positions recorded by max_pool_2x2. shape matches the pooled
// output; each entry is the flat row-major position (h * W + w) of the
// selected maximum inside the pre-pool plane.
struct PoolIndices {
  Shape shape;
  int input_h = 0;
  int input_w = 0;
  std::vector<std::int32_t> idx;
};

namespace detail {

inline void require_4d(const Shape& s, const char* what) {
  if (s.size() != 4)
    throw std::invalid_argument(std::string(what) + " expects a 4-d tensor, got " + shape_str(s));
}

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b)
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_str(a) +
                                " vs " + shape_str(b));
}

// Valid output range [lo, hi) such that 0 <= o*stride + k - pad < limit.
inline void conv_output_range(int kernel_off, int stride, int pad, int limit, int out_limit,
                              int& lo, int& hi) {
  lo = 0;
  while (lo < out_limit && lo * stride + kernel_off - pad < 0) ++lo;
  hi = out_limit;
  while (hi > lo && (hi - 1) * stride + kernel_off - pad >= limit) --hi;
}

}  // namespace detail

// 2-d cross-correlation (no kernel flip) with per-output-channel bias.
// input [N,C,H,W], weight [O,C,kh,kw], bias [O].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride = 1, int padding = 0) {
  detail::require_4d(input.shape(), "conv2d input");
  detail::require_4d(weight.shape(), "conv2d weight");
  const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int O = weight.dim(0), KC = weight.dim(1), KH = weight.dim(2), KW = weight.dim(3);
  if (C != KC)
    throw std::invalid_argument("conv2d: input channels " + shape_str(input.shape()) +
                                " do not match weight " + shape_str(weight.shape()));
  if (bias.rank() != 1 || bias.dim(0) != O)
    throw std::invalid_argument("conv2d: bias must have shape (" + std::to_string(O) + "), got " +
                                shape_str(bias.shape()));
  if (stride <= 0 || padding < 0) throw std::invalid_argument("conv2d: bad stride/padding");
  const int HN = H + 2 * padding - KH;
  const int WN = W + 2 * padding - KW;
  if (HN < 0 || WN < 0 || HN % stride != 0 || WN % stride != 0)
    throw std::invalid_argument("conv2d: output extent not integral for input " +
                                shape_str(input.shape()) + ", kernel " + shape_str(weight.shape()) +
                                ", stride " + std::to_string(stride) + ", padding " +
                                std::to_string(padding));
  const int OH = HN / stride + 1;
  const int OW = WN / stride + 1;

  Tensor<T> out = Tensor<T>::zeros({N, O, OH, OW});
  const T* in = input.data().data();
  const T* w = weight.data().data();
  const T* b = bias.data().data();
  T* o = out.data().data();

  for (int n = 0; n < N; ++n) {
    for (int oc = 0; oc < O; ++oc) {
      T* oplane = o + (static_cast<std::size_t>(n) * O + oc) * OH * OW;
      std::fill(oplane, oplane + OH * OW, b[oc]);
      for (int c = 0; c < C; ++c) {
        const T* iplane = in + (static_cast<std::size_t>(n) * C + c) * H * W;
        const T* wk = w + (static_cast<std::size_t>(oc) * C + c) * KH * KW;
        for (int ki = 0; ki < KH; ++ki) {
          int oh_lo, oh_hi;
          detail::conv_output_range(ki, stride, padding, H, OH, oh_lo, oh_hi);
          for (int kj = 0; kj < KW; ++kj) {
            const T wv = wk[ki * KW + kj];
            int ow_lo, ow_hi;
            detail::conv_output_range(kj, stride, padding, W, OW, ow_lo, ow_hi);
            for (int oh = oh_lo; oh < oh_hi; ++oh) {
              const int ih = oh * stride + ki - padding;
              const T* irow = iplane + static_cast<std::size_t>(ih) * W + kj - padding;
              T* orow = oplane + static_cast<std::size_t>(oh) * OW;
              for (int ow = ow_lo; ow < ow_hi; ++ow) orow[ow] += wv * irow[ow * stride];
            }
          }
        }
      }
    }
  }

  if (tracing<T>({input.requires_grad(), weight.requires_grad(), bias.requires_grad()})) {
    out.set_requires_grad(true);
    auto ih = input.handle(), wh = weight.handle(), bh = bias.handle(), oh_ = out.handle();
    Tape<T>::active()->record("conv2d", [ih, wh, bh, oh_, N, C, H, W, O, KH, KW, OH, OW, stride,
                                         padding] {
      const T* go = oh_->grad.data();
      const bool need_in = ih->requires_grad;
      const bool need_w = wh->requires_grad;
      const bool need_b = bh->requires_grad;
      if (need_in) ih->ensure_grad();
      if (need_w) wh->ensure_grad();
      if (need_b) bh->ensure_grad();
      for (int n = 0; n < N; ++n) {
        for (int oc = 0; oc < O; ++oc) {
          const T* gplane = go + (static_cast<std::size_t>(n) * O + oc) * OH * OW;
          if (need_b) {
            T acc = 0;
            for (int i = 0; i < OH * OW; ++i) acc += gplane[i];
            bh->grad[oc] += acc;
          }
          for (int c = 0; c < C; ++c) {
            const T* iplane = ih->value.data() + (static_cast<std::size_t>(n) * C + c) * H * W;
            T* giplane = need_in
                             ? ih->grad.data() + (static_cast<std::size_t>(n) * C + c) * H * W
                             : nullptr;
            const std::size_t wbase = (static_cast<std::size_t>(oc) * C + c) * KH * KW;
            for (int ki = 0; ki < KH; ++ki) {
              int oh_lo, oh_hi;
              detail::conv_output_range(ki, stride, padding, H, OH, oh_lo, oh_hi);
              for (int kj = 0; kj < KW; ++kj) {
                const T wv = wh->value[wbase + ki * KW + kj];
                int ow_lo, ow_hi;
                detail::conv_output_range(kj, stride, padding, W, OW, ow_lo, ow_hi);
                T wacc = 0;
                for (int oh = oh_lo; oh < oh_hi; ++oh) {
                  const int ih_r = oh * stride + ki - padding;
                  const std::size_t ioff = static_cast<std::size_t>(ih_r) * W + kj - padding;
                  const T* grow = gplane + static_cast<std::size_t>(oh) * OW;
                  const T* irow = iplane + ioff;
                  if (need_w)
                    for (int ow = ow_lo; ow < ow_hi; ++ow) wacc += irow[ow * stride] * grow[ow];
                  if (need_in) {
                    T* girow = giplane + ioff;
                    for (int ow = ow_lo; ow < ow_hi; ++ow) girow[ow * stride] += wv * grow[ow];
                  }
                }
                if (need_w) wh->grad[wbase + ki * KW + kj] += wacc;
              }
            }
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
struct PoolResult {
  Tensor<T> output;
  PoolIndices indices;
};

// 2x2 max pooling, stride 2. Ties break to the smallest row-major position.
template <typename T>
PoolResult<T> max_pool_2x2(const Tensor<T>& input) {
  detail::require_4d(input.shape(), "max_pool_2x2");
  const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (H % 2 != 0 || W % 2 != 0)
    throw std::invalid_argument("max_pool_2x2: spatial dims must be even, got " +
                                shape_str(input.shape()) + "; pad the input first");
  const int OH = H / 2, OW = W / 2;
  PoolResult<T> res{Tensor<T>::zeros({N, C, OH, OW}),
                    PoolIndices{{N, C, OH, OW}, H, W, {}}};
  res.indices.idx.resize(static_cast<std::size_t>(N) * C * OH * OW);

  const T* in = input.data().data();
  T* out = res.output.data().data();
  std::int32_t* idx = res.indices.idx.data();
  std::size_t p = 0;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* plane = in + (static_cast<std::size_t>(n) * C + c) * H * W;
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow, ++p) {
          T best = plane[(2 * oh) * W + 2 * ow];
          int best_pos = (2 * oh) * W + 2 * ow;
          for (int di = 0; di < 2; ++di)
            for (int dj = 0; dj < 2; ++dj) {
              const int pos = (2 * oh + di) * W + 2 * ow + dj;
              if (plane[pos] > best) {
                best = plane[pos];
                best_pos = pos;
              }
            }
          out[p] = best;
          idx[p] = best_pos;
        }
    }

  if (tracing<T>({input.requires_grad()})) {
    res.output.set_requires_grad(true);
    auto ih = input.handle();
    auto oh_ = res.output.handle();
    auto indices = res.indices;  // copies the index vector
    const int planes = N * C, plane_in = H * W, plane_out = OH * OW;
    Tape<T>::active()->record("max_pool_2x2", [ih, oh_, indices, planes, plane_in, plane_out] {
      ih->ensure_grad();
      const T* go = oh_->grad.data();
      for (int pl = 0; pl < planes; ++pl) {
        T* gi = ih->grad.data() + static_cast<std::size_t>(pl) * plane_in;
        const T* g = go + static_cast<std::size_t>(pl) * plane_out;
        const std::int32_t* ix = indices.idx.data() + static_cast<std::size_t>(pl) * plane_out;
        for (int i = 0; i < plane_out; ++i) gi[ix[i]] += g[i];
      }
    });
  }
  return res;
}

// Scatters input values back to their recorded argmax positions; all other
// cells are zero.
template <typename T>
Tensor<T> max_unpool_2x2(const Tensor<T>& input, const PoolIndices& indices, int out_h,
                         int out_w) {
  detail::require_4d(input.shape(), "max_unpool_2x2");
  detail::require_same_shape(input.shape(), indices.shape, "max_unpool_2x2 input vs indices");
  const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (out_h != 2 * H || out_w != 2 * W)
    throw std::invalid_argument("max_unpool_2x2: output dims must be exactly 2x input, got " +
                                std::to_string(out_h) + "x" + std::to_string(out_w) + " for input " +
                                shape_str(input.shape()));
  Tensor<T> out = Tensor<T>::zeros({N, C, out_h, out_w});
  const T* in = input.data().data();
  T* o = out.data().data();
  const std::int32_t* ix = indices.idx.data();
  const std::size_t plane_in = static_cast<std::size_t>(H) * W;
  const std::size_t plane_out = static_cast<std::size_t>(out_h) * out_w;
  for (int pl = 0; pl < N * C; ++pl) {
    const T* src = in + pl * plane_in;
    T* dst = o + pl * plane_out;
    const std::int32_t* pix = ix + pl * plane_in;
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w) {
        const std::int32_t pos = pix[h * static_cast<std::size_t>(W) + w];
        const int ph = pos / out_w, pw = pos % out_w;
        if (pos < 0 || pos >= static_cast<std::int32_t>(plane_out) || ph / 2 != h || pw / 2 != w)
          throw std::invalid_argument("max_unpool_2x2: index " + std::to_string(pos) +
                                      " falls outside its 2x2 window (corrupted indices)");
        dst[pos] = src[h * static_cast<std::size_t>(W) + w];
      }
  }

  if (tracing<T>({input.requires_grad()})) {
    out.set_requires_grad(true);
    auto ih = input.handle();
    auto oh_ = out.handle();
    auto idxcopy = indices;
    const int planes = N * C;
    Tape<T>::active()->record("max_unpool_2x2",
                              [ih, oh_, idxcopy, planes, plane_in, plane_out] {
                                ih->ensure_grad();
                                const T* go = oh_->grad.data();
                                for (int pl = 0; pl < planes; ++pl) {
                                  T* gi = ih->grad.data() + pl * plane_in;
                                  const T* g = go + pl * plane_out;
                                  const std::int32_t* ix2 = idxcopy.idx.data() + pl * plane_in;
                                  for (std::size_t i = 0; i < plane_in; ++i) gi[i] += g[ix2[i]];
                                }
                              });
  }
  return out;
}

// Nearest-neighbor 2x upsampling: each pixel becomes a 2x2 block.
template <typename T>
Tensor<T> upsample_nearest_2x(const Tensor<T>& input) {
  detail::require_4d(input.shape(), "upsample_nearest_2x");
  const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  Tensor<T> out = Tensor<T>::zeros({N, C, 2 * H, 2 * W});
  const T* in = input.data().data();
  T* o = out.data().data();
  for (int pl = 0; pl < N * C; ++pl) {
    const T* src = in + static_cast<std::size_t>(pl) * H * W;
    T* dst = o + static_cast<std::size_t>(pl) * 4 * H * W;
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w) {
        const T v = src[h * W + w];
        T* d = dst + (2 * h) * (2 * W) + 2 * w;
        d[0] = v;
        d[1] = v;
        d[2 * W] = v;
        d[2 * W + 1] = v;
      }
  }
  if (tracing<T>({input.requires_grad()})) {
    out.set_requires_grad(true);
    auto ih = input.handle();
    auto oh_ = out.handle();
    const int planes = N * C;
    Tape<T>::active()->record("upsample_nearest_2x", [ih, oh_, planes, H, W] {
      ih->ensure_grad();
      const T* go = oh_->grad.data();
      for (int pl = 0; pl < planes; ++pl) {
        T* gi = ih->grad.data() + static_cast<std::size_t>(pl) * H * W;
        const T* g = go + static_cast<std::size_t>(pl) * 4 * H * W;
        for (int h = 0; h < H; ++h)
          for (int w = 0; w < W; ++w) {
            const T* s = g + (2 * h) * (2 * W) + 2 * w;
            gi[h * W + w] += s[0] + s[1] + s[2 * W] + s[2 * W + 1];
          }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const auto& xv = x.data();
  auto& ov = out.data();
  for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = xv[i] > T(0) ? xv[i] : T(0);
  if (tracing<T>({x.requires_grad()})) {
    out.set_requires_grad(true);
    auto xh = x.handle(), oh_ = out.handle();
    Tape<T>::active()->record("relu", [xh, oh_] {
      xh->ensure_grad();
      for (std::size_t i = 0; i < xh->value.size(); ++i)
        if (xh->value[i] > T(0)) xh->grad[i] += oh_->grad[i];
    });
  }
  return out;
}

// Numerically stable logistic; safe for |x| up to at least 1e3.
template <typename T>
inline T sigmoid_scalar(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const auto& xv = x.data();
  auto& ov = out.data();
  for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = sigmoid_scalar(xv[i]);
  if (tracing<T>({x.requires_grad()})) {
    out.set_requires_grad(true);
    auto xh = x.handle(), oh_ = out.handle();
    Tape<T>::active()->record("sigmoid", [xh, oh_] {
      xh->ensure_grad();
      for (std::size_t i = 0; i < xh->value.size(); ++i) {
        const T y = oh_->value[i];
        xh->grad[i] += y * (T(1) - y) * oh_->grad[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const auto& av = a.data();
  const auto& bv = b.data();
  auto& ov = out.data();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] + bv[i];
  if (tracing<T>({a.requires_grad(), b.requires_grad()})) {
    out.set_requires_grad(true);
    auto ah = a.handle(), bh = b.handle(), oh_ = out.handle();
    Tape<T>::active()->record("add", [ah, bh, oh_] {
      if (ah->requires_grad) {
        ah->ensure_grad();
        for (std::size_t i = 0; i < ah->grad.size(); ++i) ah->grad[i] += oh_->grad[i];
      }
      if (bh->requires_grad) {
        bh->ensure_grad();
        for (std::size_t i = 0; i < bh->grad.size(); ++i) bh->grad[i] += oh_->grad[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const auto& av = a.data();
  const auto& bv = b.data();
  auto& ov = out.data();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * bv[i];
  if (tracing<T>({a.requires_grad(), b.requires_grad()})) {
    out.set_requires_grad(true);
    auto ah = a.handle(), bh = b.handle(), oh_ = out.handle();
    Tape<T>::active()->record("mul", [ah, bh, oh_] {
      if (ah->requires_grad) {
        ah->ensure_grad();
        for (std::size_t i = 0; i < ah->grad.size(); ++i)
          ah->grad[i] += bh->value[i] * oh_->grad[i];
      }
      if (bh->requires_grad) {
        bh->ensure_grad();
        for (std::size_t i = 0; i < bh->grad.size(); ++i)
          bh->grad[i] += ah->value[i] * oh_->grad[i];
      }
    });
  }
  return out;
}

// x [N,C,H,W] * m [N,1,H,W], map broadcast across channels. Used by the
// attention gate to apply its per-pixel weights.
template <typename T>
Tensor<T> scale_by_map(const Tensor<T>& x, const Tensor<T>& m) {
  detail::require_4d(x.shape(), "scale_by_map x");
  detail::require_4d(m.shape(), "scale_by_map map");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (m.dim(0) != N || m.dim(1) != 1 || m.dim(2) != H || m.dim(3) != W)
    throw std::invalid_argument("scale_by_map: map " + shape_str(m.shape()) +
                                " incompatible with " + shape_str(x.shape()));
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int n = 0; n < N; ++n) {
    const T* mp = m.data().data() + n * plane;
    for (int c = 0; c < C; ++c) {
      const T* xp = x.data().data() + (static_cast<std::size_t>(n) * C + c) * plane;
      T* op = out.data().data() + (static_cast<std::size_t>(n) * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) op[i] = xp[i] * mp[i];
    }
  }
  if (tracing<T>({x.requires_grad(), m.requires_grad()})) {
    out.set_requires_grad(true);
    auto xh = x.handle(), mh = m.handle(), oh_ = out.handle();
    Tape<T>::active()->record("scale_by_map", [xh, mh, oh_, N, C, plane] {
      const T* go = oh_->grad.data();
      if (xh->requires_grad) {
        xh->ensure_grad();
        for (int n = 0; n < N; ++n) {
          const T* mp = mh->value.data() + n * plane;
          for (int c = 0; c < C; ++c) {
            const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) xh->grad[off + i] += go[off + i] * mp[i];
          }
        }
      }
      if (mh->requires_grad) {
        mh->ensure_grad();
        for (int n = 0; n < N; ++n) {
          T* gm = mh->grad.data() + n * plane;
          for (int c = 0; c < C; ++c) {
            const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) gm[i] += go[off + i] * xh->value[off + i];
          }
        }
      }
    });
  }
  return out;
}

// Concatenation along the channel axis; a fills the first Ca channels.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_4d(a.shape(), "concat_channels a");
  detail::require_4d(b.shape(), "concat_channels b");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw std::invalid_argument("concat_channels: incompatible shapes " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  const int N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), H = a.dim(2), W = a.dim(3);
  Tensor<T> out = Tensor<T>::zeros({N, Ca + Cb, H, W});
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int n = 0; n < N; ++n) {
    std::copy_n(a.data().data() + static_cast<std::size_t>(n) * Ca * plane, Ca * plane,
                out.data().data() + static_cast<std::size_t>(n) * (Ca + Cb) * plane);
    std::copy_n(b.data().data() + static_cast<std::size_t>(n) * Cb * plane, Cb * plane,
                out.data().data() + (static_cast<std::size_t>(n) * (Ca + Cb) + Ca) * plane);
  }
  if (tracing<T>({a.requires_grad(), b.requires_grad()})) {
    out.set_requires_grad(true);
    auto ah = a.handle(), bh = b.handle(), oh_ = out.handle();
    Tape<T>::active()->record("concat_channels", [ah, bh, oh_, N, Ca, Cb, plane] {
      const T* go = oh_->grad.data();
      if (ah->requires_grad) {
        ah->ensure_grad();
        for (int n = 0; n < N; ++n)
          for (std::size_t i = 0; i < Ca * plane; ++i)
            ah->grad[static_cast<std::size_t>(n) * Ca * plane + i] +=
                go[static_cast<std::size_t>(n) * (Ca + Cb) * plane + i];
      }
      if (bh->requires_grad) {
        bh->ensure_grad();
        for (int n = 0; n < N; ++n)
          for (std::size_t i = 0; i < Cb * plane; ++i)
            bh->grad[static_cast<std::size_t>(n) * Cb * plane + i] +=
                go[(static_cast<std::size_t>(n) * (Ca + Cb) + Ca) * plane + i];
      }
    });
  }
  return out;
}

// Per-channel running statistics owned by the model, updated in training
// mode with the given momentum (biased batch variance is stored).
template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
};

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& scale, const Tensor<T>& shift,
                     BatchNormState<T>& state, bool training, T momentum = T(0.1),
                     T eps = T(1e-5)) {
  detail::require_4d(input.shape(), "batch_norm");
  const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (scale.rank() != 1 || scale.dim(0) != C || shift.rank() != 1 || shift.dim(0) != C)
    throw std::invalid_argument("batch_norm: scale/shift must be per-channel vectors of length " +
                                std::to_string(C));
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  const std::size_t m = static_cast<std::size_t>(N) * plane;

  std::vector<T> mean(C), inv_std(C);
  if (training) {
    for (int c = 0; c < C; ++c) {
      double acc = 0;
      for (int n = 0; n < N; ++n) {
        const T* p = input.data().data() + (static_cast<std::size_t>(n) * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      }
      const double mu = acc / static_cast<double>(m);
      double vacc = 0;
      for (int n = 0; n < N; ++n) {
        const T* p = input.data().data() + (static_cast<std::size_t>(n) * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = p[i] - mu;
          vacc += d * d;
        }
      }
      const double var = vacc / static_cast<double>(m);
      mean[c] = static_cast<T>(mu);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      state.running_mean.data()[c] =
          (T(1) - momentum) * state.running_mean.data()[c] + momentum * static_cast<T>(mu);
      state.running_var.data()[c] =
          (T(1) - momentum) * state.running_var.data()[c] + momentum * static_cast<T>(var);
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean[c] = state.running_mean.data()[c];
      inv_std[c] = T(1) / std::sqrt(state.running_var.data()[c] + eps);
    }
  }

  Tensor<T> out = Tensor<T>::zeros(input.shape());
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* p = input.data().data() + (static_cast<std::size_t>(n) * C + c) * plane;
      T* o = out.data().data() + (static_cast<std::size_t>(n) * C + c) * plane;
      const T g = scale.data()[c], b = shift.data()[c], mu = mean[c], is = inv_std[c];
      for (std::size_t i = 0; i < plane; ++i) o[i] = g * (p[i] - mu) * is + b;
    }

  if (tracing<T>({input.requires_grad(), scale.requires_grad(), shift.requires_grad()})) {
    out.set_requires_grad(true);
    auto xh = input.handle(), gh = scale.handle(), bh = shift.handle(), oh_ = out.handle();
    Tape<T>::active()->record(
        "batch_norm", [xh, gh, bh, oh_, mean, inv_std, training, N, C, plane, m] {
          const T* go = oh_->grad.data();
          if (bh->requires_grad) bh->ensure_grad();
          if (gh->requires_grad) gh->ensure_grad();
          if (xh->requires_grad) xh->ensure_grad();
          for (int c = 0; c < C; ++c) {
            const T mu = mean[c], is = inv_std[c], g = gh->value[c];
            double sum_dy = 0, sum_dy_xhat = 0;
            for (int n = 0; n < N; ++n) {
              const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
              for (std::size_t i = 0; i < plane; ++i) {
                const T xhat = (xh->value[off + i] - mu) * is;
                sum_dy += go[off + i];
                sum_dy_xhat += go[off + i] * xhat;
              }
            }
            if (bh->requires_grad) bh->grad[c] += static_cast<T>(sum_dy);
            if (gh->requires_grad) gh->grad[c] += static_cast<T>(sum_dy_xhat);
            if (!xh->requires_grad) continue;
            if (training) {
              const T mean_dy = static_cast<T>(sum_dy / static_cast<double>(m));
              const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / static_cast<double>(m));
              for (int n = 0; n < N; ++n) {
                const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                  const T xhat = (xh->value[off + i] - mu) * is;
                  xh->grad[off + i] +=
                      g * is * (go[off + i] - mean_dy - xhat * mean_dy_xhat);
                }
              }
            } else {
              for (int n = 0; n < N; ++n) {
                const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) xh->grad[off + i] += g * is * go[off + i];
              }
            }
          }
        });
  }
  return out;
}

// Sum of all elements, as a scalar tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  double acc = 0;
  for (T v : x.data()) acc += v;
  Tensor<T> out = Tensor<T>::from({1}, {static_cast<T>(acc)});
  if (tracing<T>({x.requires_grad()})) {
    out.set_requires_grad(true);
    auto xh = x.handle(), oh_ = out.handle();
    Tape<T>::active()->record("sum", [xh, oh_] {
      xh->ensure_grad();
      const T g = oh_->grad[0];
      for (auto& v : xh->grad) v += g;
    });
  }
  return out;
}

// Multiplication by a compile-time-known constant.
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T k) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  for (std::size_t i = 0; i < x.data().size(); ++i) out.data()[i] = x.data()[i] * k;
  if (tracing<T>({x.requires_grad()})) {
    out.set_requires_grad(true);
    auto xh = x.handle(), oh_ = out.handle();
    Tape<T>::active()->record("scale", [xh, oh_, k] {
      xh->ensure_grad();
      for (std::size_t i = 0; i < xh->grad.size(); ++i) xh->grad[i] += k * oh_->grad[i];
    });
  }
  return out;
}

}  // namespace iars
