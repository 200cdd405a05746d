#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "iars/ops.hpp"
#include "iars/random.hpp"
#include "iars/tensor.hpp"

namespace iars {

struct VariantFlags {
  bool skip = false;
  bool residual = false;
  bool attention = false;
};

inline VariantFlags variant_flags(const std::string& name) {
  if (name == "m1") return {false, false, false};
  if (name == "m2") return {true, false, false};
  if (name == "m3") return {true, true, false};
  if (name == "m4") return {true, true, true};
  throw std::invalid_argument("variant_flags: unknown variant '" + name + "'");
}

struct ArchConfig {
  int input_channels = 3;
  int input_h = 192;
  int input_w = 256;
  int depth = 5;
  std::vector<int> stage_widths = {64, 128, 256, 512, 512};
  double width_factor = 1.0;
  bool use_batch_norm = true;
};

inline void validate_arch(const ArchConfig& c, const VariantFlags& f) {
  if (c.input_channels < 1) throw std::invalid_argument("ArchConfig: input_channels < 1");
  if (c.depth < 1) throw std::invalid_argument("ArchConfig: depth < 1");
  if (static_cast<int>(c.stage_widths.size()) < c.depth)
    throw std::invalid_argument("ArchConfig: fewer stage_widths than depth");
  for (int w : c.stage_widths)
    if (w < 1) throw std::invalid_argument("ArchConfig: nonpositive stage width");
  if (c.width_factor <= 0.0) throw std::invalid_argument("ArchConfig: nonpositive width_factor");
  const int step = 1 << c.depth;
  if (c.input_h % step != 0 || c.input_w % step != 0)
    throw std::invalid_argument("ArchConfig: input dims not divisible by 2^depth");
  if (f.attention && !f.skip)
    throw std::invalid_argument("VariantFlags: attention requires skip connections");
}

inline int scaled_width(const ArchConfig& c, int stage) {
  const double w = c.stage_widths[stage] * c.width_factor;
  return std::max(1, static_cast<int>(std::lround(w)));
}

namespace detail {

template <typename T>
struct ConvLayer {
  Tensor<T> weight;  // (OC, IC, K, K)
  Tensor<T> bias;    // (OC)
};

template <typename T>
struct NormLayer {
  Tensor<T> scale;
  Tensor<T> shift;
  BatchNormState<T> state;
};

// conv (+ batch norm); activation is applied by the caller
template <typename T>
struct ConvUnit {
  ConvLayer<T> conv;
  std::optional<NormLayer<T>> norm;
  int padding = 1;

  Tensor<T> apply(const Tensor<T>& x, bool training) {
    Tensor<T> y = conv2d(x, conv.weight, conv.bias, 1, padding);
    if (norm) y = batch_norm(y, norm->scale, norm->shift, norm->state, training);
    return y;
  }
};

template <typename T>
struct AttentionGate {
  ConvLayer<T> wx;   // 1x1 on the skip features
  ConvLayer<T> wg;   // 1x1 on the gating signal
  ConvLayer<T> psi;  // 1x1 to a single attention channel
};

template <typename T>
struct EncoderStage {
  ConvUnit<T> entry;  // channel change
  ConvUnit<T> stack1;
  ConvUnit<T> stack2;
};

template <typename T>
struct DecoderStage {
  std::optional<ConvUnit<T>> entry;              // unpool path: channel change
  std::optional<ConvUnit<T>> upconv;             // skip path: conv after upsample
  std::optional<ConvUnit<T>> reduce;             // skip path: 1x1 after concat
  std::optional<AttentionGate<T>> gate;
  ConvUnit<T> stack1;
  ConvUnit<T> stack2;
};

}  // namespace detail

// The two-conv within-stage stack. Plain: conv-norm-relu twice. Residual:
// same two convs plus a parameter-free identity shortcut before the last
// activation, so both arrangements hold exactly the same parameters.
template <typename T>
Tensor<T> residual_block_forward(const Tensor<T>& x, detail::ConvUnit<T>& first,
                                 detail::ConvUnit<T>& second, bool training) {
  Tensor<T> f = relu(first.apply(x, training));
  f = second.apply(f, training);
  return relu(add(f, x));
}

template <typename T>
Tensor<T> plain_stack_forward(const Tensor<T>& x, detail::ConvUnit<T>& first,
                              detail::ConvUnit<T>& second, bool training) {
  return relu(second.apply(relu(first.apply(x, training)), training));
}

template <typename T>
struct GatedSkip {
  Tensor<T> output;
  Tensor<T> alpha;  // (N,1,H,W) attention map
};

// alpha = sigmoid(psi(relu(Wx x + Wg up(g)))); the skip features are scaled,
// never cropped. The gating signal may arrive at half resolution (one 2x
// nearest upsample) or already matched.
template <typename T>
GatedSkip<T> attention_gate_forward(const Tensor<T>& x, const Tensor<T>& g,
                                    const detail::AttentionGate<T>& gate) {
  Tensor<T> gu = g;
  if (g.dim(2) * 2 == x.dim(2) && g.dim(3) * 2 == x.dim(3)) {
    gu = upsample_nearest_2x(g);
  } else if (g.dim(2) != x.dim(2) || g.dim(3) != x.dim(3)) {
    throw std::invalid_argument("attention_gate_forward: gating resolution not x1 or x2 of skip");
  }
  Tensor<T> a = add(conv2d(x, gate.wx.weight, gate.wx.bias),
                    conv2d(gu, gate.wg.weight, gate.wg.bias));
  Tensor<T> alpha = sigmoid(conv2d(relu(a), gate.psi.weight, gate.psi.bias));
  return {scale_by_map(x, alpha), alpha};
}

template <typename T>
class SegModel {
 public:
  ArchConfig config;
  VariantFlags flags;

  std::vector<std::pair<std::string, Tensor<T>>> parameters;  // trainable, unique names
  std::vector<std::pair<std::string, Tensor<T>>> buffers;     // batch-norm running stats

  // capture buffers, refilled by a capture-enabled forward pass
  std::vector<Tensor<T>> captured_blocks;  // 2*depth post-activation maps
  std::vector<Tensor<T>> attention_maps;   // one per gated decoder stage

  Tensor<T> forward(const Tensor<T>& batch, bool training, bool capture = false) {
    if (batch.rank() != 4 || batch.dim(1) != config.input_channels ||
        batch.dim(2) != config.input_h || batch.dim(3) != config.input_w)
      throw std::invalid_argument("SegModel::forward: batch shape does not match config");
    if (capture) {
      captured_blocks.clear();
      attention_maps.clear();
    }

    std::vector<Tensor<T>> skips;
    std::vector<PoolIndices> indices;
    Tensor<T> x = batch;
    for (int i = 0; i < config.depth; ++i) {
      auto& st = encoder_[i];
      x = relu(st.entry.apply(x, training));
      x = flags.residual ? residual_block_forward(x, st.stack1, st.stack2, training)
                         : plain_stack_forward(x, st.stack1, st.stack2, training);
      if (capture) captured_blocks.push_back(x);
      if (flags.skip) skips.push_back(x);
      auto pooled = max_pool_2x2(x);
      x = pooled.output;
      if (!flags.skip) indices.push_back(std::move(pooled.indices));
    }

    for (int j = config.depth - 1; j >= 0; --j) {
      auto& st = decoder_[j];
      if (!flags.skip) {
        x = max_unpool_2x2(x, indices[j], indices[j].input_h, indices[j].input_w);
        x = relu(st.entry->apply(x, training));
      } else {
        Tensor<T> s = skips[j];
        if (flags.attention) {
          auto gated = attention_gate_forward(s, x, *st.gate);
          s = gated.output;
          if (capture) attention_maps.push_back(gated.alpha);
        }
        x = relu(st.upconv->apply(upsample_nearest_2x(x), training));
        x = concat_channels(x, s);
        x = relu(st.reduce->apply(x, training));
      }
      x = flags.residual ? residual_block_forward(x, st.stack1, st.stack2, training)
                         : plain_stack_forward(x, st.stack1, st.stack2, training);
      if (capture) captured_blocks.push_back(x);
    }

    return sigmoid(conv2d(x, classifier_.weight, classifier_.bias));
  }

  Tensor<T>* find_parameter(const std::string& name) {
    for (auto& [n, t] : parameters)
      if (n == name) return &t;
    return nullptr;
  }

  // build_model wires these directly
  std::vector<detail::EncoderStage<T>> encoder_;
  std::vector<detail::DecoderStage<T>> decoder_;
  detail::ConvLayer<T> classifier_;
};

namespace detail {

template <typename T>
class ModelBuilder {
 public:
  ModelBuilder(SegModel<T>& model, std::uint64_t seed) : model_(model), rng_(make_rng(seed, 17)) {}

  ConvLayer<T> conv(const std::string& name, int in_ch, int out_ch, int k) {
    ConvLayer<T> layer;
    layer.weight = Tensor<T>::zeros({out_ch, in_ch, k, k});
    layer.bias = Tensor<T>::zeros({out_ch});
    const double std_dev = std::sqrt(2.0 / (in_ch * k * k));  // He fan-in
    for (T& w : layer.weight.data()) w = static_cast<T>(unit_normal(rng_) * std_dev);
    reg(name + ".weight", layer.weight);
    reg(name + ".bias", layer.bias);
    return layer;
  }

  ConvUnit<T> unit(const std::string& name, int in_ch, int out_ch, int k, bool normed) {
    ConvUnit<T> u;
    u.conv = conv(name, in_ch, out_ch, k);
    u.padding = k / 2;
    if (normed) {
      NormLayer<T> n;
      n.scale = Tensor<T>::full({out_ch}, T(1));
      n.shift = Tensor<T>::zeros({out_ch});
      n.state.running_mean = Tensor<T>::zeros({out_ch});
      n.state.running_var = Tensor<T>::full({out_ch}, T(1));
      reg(name + ".norm.scale", n.scale);
      reg(name + ".norm.shift", n.shift);
      model_.buffers.emplace_back(name + ".norm.running_mean", n.state.running_mean);
      model_.buffers.emplace_back(name + ".norm.running_var", n.state.running_var);
      u.norm = std::move(n);
    }
    return u;
  }

  AttentionGate<T> attention(const std::string& name, int skip_ch, int gate_ch) {
    const int inter = std::max(1, skip_ch / 2);
    AttentionGate<T> g;
    g.wx = conv(name + ".wx", skip_ch, inter, 1);
    g.wg = conv(name + ".wg", gate_ch, inter, 1);
    g.psi = conv(name + ".psi", inter, 1, 1);
    return g;
  }

 private:
  void reg(const std::string& name, const Tensor<T>& t) {
    model_.parameters.emplace_back(name, t);
    model_.parameters.back().second.set_requires_grad(true);
  }

  SegModel<T>& model_;
  std::mt19937_64 rng_;
};

}  // namespace detail

template <typename T = float>
SegModel<T> build_model(const ArchConfig& config, const VariantFlags& flags, std::uint64_t seed) {
  validate_arch(config, flags);
  SegModel<T> model;
  model.config = config;
  model.flags = flags;
  detail::ModelBuilder<T> mk(model, seed);
  const bool bn = config.use_batch_norm;

  int in_ch = config.input_channels;
  for (int i = 0; i < config.depth; ++i) {
    const int w = scaled_width(config, i);
    const std::string base = "enc" + std::to_string(i + 1);
    detail::EncoderStage<T> st;
    st.entry = mk.unit(base + ".entry", in_ch, w, 3, bn);
    st.stack1 = mk.unit(base + ".stack1", w, w, 3, bn);
    st.stack2 = mk.unit(base + ".stack2", w, w, 3, bn);
    model.encoder_.push_back(std::move(st));
    in_ch = w;
  }

  model.decoder_.resize(config.depth);
  int cur = scaled_width(config, config.depth - 1);
  for (int j = config.depth - 1; j >= 0; --j) {
    const int target = scaled_width(config, std::max(j - 1, 0));
    const int skip_ch = scaled_width(config, j);
    const std::string base = "dec" + std::to_string(j + 1);
    detail::DecoderStage<T> st;
    if (!flags.skip) {
      st.entry = mk.unit(base + ".entry", cur, target, 3, bn);
    } else {
      if (flags.attention) st.gate = mk.attention(base + ".gate", skip_ch, cur);
      st.upconv = mk.unit(base + ".upconv", cur, target, 3, bn);
      st.reduce = mk.unit(base + ".reduce", target + skip_ch, target, 1, bn);
    }
    st.stack1 = mk.unit(base + ".stack1", target, target, 3, bn);
    st.stack2 = mk.unit(base + ".stack2", target, target, 3, bn);
    model.decoder_[j] = std::move(st);
    cur = target;
  }

  model.classifier_ = mk.conv("classifier", cur, 1, 1);
  return model;
}

template <typename T>
Tensor<T> model_forward(SegModel<T>& model, const Tensor<T>& batch, bool capture = false) {
  return model.forward(batch, false, capture);
}

template <typename T>
std::int64_t parameter_count(const SegModel<T>& model) {
  std::int64_t total = 0;
  for (const auto& [name, t] : model.parameters) total += t.size();
  return total;
}

}  // namespace iars
