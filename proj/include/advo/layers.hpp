#pragma once

#include <string>

#include "advo/conv.hpp"
#include "advo/ops.hpp"

namespace advo {

enum class LayerKind {
  kConv,
  kDeconv,
  kLinear,
  kBatchNorm,
  kRelu,
  kSigmoid,
  kMaxPool,
  kDropout,
  kFlatten,
  kResidual,
};

/// One entry of a layer plan. Composing a plan determines the output shape
/// statically (layer_output_shape), independent of any parameter values.
struct LayerSpec {
  LayerKind kind{};
  int in_ch = 0, out_ch = 0;  // conv/deconv channels, linear features, bn/residual channels
  int kernel = 0, stride = 1, padding = 0;
  int window = 2;  // maxpool
  double p = 0.0;  // dropout
};

inline LayerSpec conv_spec(int in_ch, int out_ch, int k, int stride = 1, int pad = 0) {
  return {LayerKind::kConv, in_ch, out_ch, k, stride, pad};
}
inline LayerSpec deconv_spec(int in_ch, int out_ch, int k, int stride = 1, int pad = 0) {
  return {LayerKind::kDeconv, in_ch, out_ch, k, stride, pad};
}
inline LayerSpec linear_spec(int in_f, int out_f) {
  return {LayerKind::kLinear, in_f, out_f};
}
inline LayerSpec bn_spec(int ch) { return {LayerKind::kBatchNorm, ch, ch}; }
inline LayerSpec relu_spec() { return {LayerKind::kRelu}; }
inline LayerSpec sigmoid_spec() { return {LayerKind::kSigmoid}; }
inline LayerSpec pool_spec(int window = 2) {
  LayerSpec s{LayerKind::kMaxPool};
  s.window = window;
  return s;
}
inline LayerSpec dropout_spec(double p) {
  LayerSpec s{LayerKind::kDropout};
  s.p = p;
  return s;
}
inline LayerSpec flatten_spec() { return {LayerKind::kFlatten}; }
inline LayerSpec residual_spec(int ch) { return {LayerKind::kResidual, ch, ch}; }

inline Shape layer_output_shape(const LayerSpec& s, const Shape& in) {
  auto conv_extent = [&](int e) {
    const int span = e + 2 * s.padding - s.kernel;
    if (span < 0 || span % s.stride != 0)
      fail("layer plan: conv extent " + std::to_string(e) + " invalid for kernel " +
           std::to_string(s.kernel) + " stride " + std::to_string(s.stride) + " padding " +
           std::to_string(s.padding));
    return span / s.stride + 1;
  };
  switch (s.kind) {
    case LayerKind::kConv: {
      if (in.size() != 4 || in[1] != s.in_ch)
        fail("layer plan: conv expects " + std::to_string(s.in_ch) + " channels, got " +
             shape_str(in));
      return {in[0], s.out_ch, conv_extent(in[2]), conv_extent(in[3])};
    }
    case LayerKind::kDeconv: {
      if (in.size() != 4 || in[1] != s.in_ch)
        fail("layer plan: deconv expects " + std::to_string(s.in_ch) + " channels, got " +
             shape_str(in));
      const int ho = (in[2] - 1) * s.stride - 2 * s.padding + s.kernel;
      const int wo = (in[3] - 1) * s.stride - 2 * s.padding + s.kernel;
      if (ho <= 0 || wo <= 0)
        fail("layer plan: deconv output extent " + std::to_string(ho) + "x" +
             std::to_string(wo) + " not positive");
      return {in[0], s.out_ch, ho, wo};
    }
    case LayerKind::kLinear:
      if (in.size() != 2 || in[1] != s.in_ch)
        fail("layer plan: linear expects width " + std::to_string(s.in_ch) + ", got " +
             shape_str(in));
      return {in[0], s.out_ch};
    case LayerKind::kBatchNorm:
      if (in.size() < 2 || in[1] != s.in_ch)
        fail("layer plan: batchnorm expects " + std::to_string(s.in_ch) + " channels, got " +
             shape_str(in));
      return in;
    case LayerKind::kRelu:
    case LayerKind::kSigmoid:
    case LayerKind::kDropout:
      return in;
    case LayerKind::kMaxPool:
      if (in.size() != 4 || in[2] % s.window != 0 || in[3] % s.window != 0)
        fail("layer plan: maxpool window " + std::to_string(s.window) +
             " does not divide extents of " + shape_str(in));
      return {in[0], in[1], in[2] / s.window, in[3] / s.window};
    case LayerKind::kFlatten: {
      int64_t n = 1;
      for (size_t i = 1; i < in.size(); ++i) n *= in[i];
      return {in[0], static_cast<int>(n)};
    }
    case LayerKind::kResidual:
      if (in.size() != 4 || in[1] != s.in_ch)
        fail("layer plan: residual block expects " + std::to_string(s.in_ch) +
             " channels, got " + shape_str(in));
      return in;
  }
  fail("layer plan: unknown layer kind");
}

inline Shape stack_output_shape(const std::vector<LayerSpec>& specs, Shape in) {
  for (const auto& s : specs) in = layer_output_shape(s, in);
  return in;
}

// ---------------------------------------------------------------------------
// initialization
// ---------------------------------------------------------------------------

/// I.i.d. uniform on [-1/sqrt(fan_in), +1/sqrt(fan_in)], the behavioral
/// default for conv/linear weights and biases.
template <typename T>
Tensor<T> init_fanin_uniform(Shape shape, int64_t fan_in, Rng& rng) {
  if (fan_in < 1) fail("init_fanin_uniform: fan_in must be >= 1");
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

// ---------------------------------------------------------------------------
// materialized layers
// ---------------------------------------------------------------------------

template <typename T>
struct Layer {
  LayerSpec spec;
  Tensor<T> weight, bias;                  // conv / deconv / linear
  Tensor<T> gamma, beta;                   // batchnorm
  Tensor<T> running_mean, running_var;     // batchnorm buffers (not trainable)
  std::vector<Layer<T>> sub;               // residual: conv,bn,conv,bn
};

template <typename T>
struct LayerStack {
  std::vector<Layer<T>> layers;

  Tensor<T> forward(const Tensor<T>& x, bool train, Rng& dropout_rng) {
    Tensor<T> h = x;
    for (auto& l : layers) h = apply(l, h, train, dropout_rng);
    return h;
  }

  static Tensor<T> apply(Layer<T>& l, const Tensor<T>& x, bool train, Rng& rng) {
    switch (l.spec.kind) {
      case LayerKind::kConv:
        return conv2d(x, l.weight, l.bias, l.spec.stride, l.spec.padding);
      case LayerKind::kDeconv:
        return conv_transpose2d(x, l.weight, l.bias, l.spec.stride, l.spec.padding);
      case LayerKind::kLinear:
        return linear(x, l.weight, l.bias);
      case LayerKind::kBatchNorm:
        return batchnorm(x, l.gamma, l.beta, l.running_mean, l.running_var, train);
      case LayerKind::kRelu:
        return relu(x);
      case LayerKind::kSigmoid:
        return sigmoid(x);
      case LayerKind::kMaxPool:
        return maxpool2d(x, l.spec.window);
      case LayerKind::kDropout:
        return dropout(x, l.spec.p, train, rng);
      case LayerKind::kFlatten:
        return reshape(x, {x.dim(0), static_cast<int>(x.size() / x.dim(0))});
      case LayerKind::kResidual: {
        // conv-bn-relu-conv-bn, identity skip, trailing relu
        Tensor<T> h = apply(l.sub[0], x, train, rng);
        h = apply(l.sub[1], h, train, rng);
        h = relu(h);
        h = apply(l.sub[2], h, train, rng);
        h = apply(l.sub[3], h, train, rng);
        return relu(add(h, x));
      }
    }
    fail("layer: unknown kind");
  }
};

namespace detail {

template <typename T>
Layer<T> materialize(const LayerSpec& s, Rng& rng) {
  Layer<T> l;
  l.spec = s;
  switch (s.kind) {
    case LayerKind::kConv: {
      const int64_t fan_in = int64_t(s.in_ch) * s.kernel * s.kernel;
      l.weight = init_fanin_uniform<T>({s.out_ch, s.in_ch, s.kernel, s.kernel}, fan_in, rng);
      l.bias = init_fanin_uniform<T>({s.out_ch}, fan_in, rng);
      break;
    }
    case LayerKind::kDeconv: {
      // weight [in, out, k, k]; fan-in counts the out-channel taps
      const int64_t fan_in = int64_t(s.out_ch) * s.kernel * s.kernel;
      l.weight = init_fanin_uniform<T>({s.in_ch, s.out_ch, s.kernel, s.kernel}, fan_in, rng);
      l.bias = init_fanin_uniform<T>({s.out_ch}, fan_in, rng);
      break;
    }
    case LayerKind::kLinear: {
      l.weight = init_fanin_uniform<T>({s.out_ch, s.in_ch}, s.in_ch, rng);
      l.bias = init_fanin_uniform<T>({s.out_ch}, s.in_ch, rng);
      break;
    }
    case LayerKind::kBatchNorm:
      l.gamma = Tensor<T>::full({s.in_ch}, T(1));
      l.beta = Tensor<T>({s.in_ch});
      l.running_mean = Tensor<T>({s.in_ch});
      l.running_var = Tensor<T>::full({s.in_ch}, T(1));
      break;
    case LayerKind::kResidual: {
      const int ch = s.in_ch;
      l.sub.push_back(materialize<T>(conv_spec(ch, ch, 3, 1, 1), rng));
      l.sub.push_back(materialize<T>(bn_spec(ch), rng));
      l.sub.push_back(materialize<T>(conv_spec(ch, ch, 3, 1, 1), rng));
      l.sub.push_back(materialize<T>(bn_spec(ch), rng));
      break;
    }
    default:
      break;  // parameter-free layers
  }
  return l;
}

}  // namespace detail

template <typename T>
LayerStack<T> make_stack(const std::vector<LayerSpec>& specs, Rng& rng) {
  LayerStack<T> st;
  st.layers.reserve(specs.size());
  for (const auto& s : specs) st.layers.push_back(detail::materialize<T>(s, rng));
  return st;
}

template <typename T>
void collect_trainable(Layer<T>& l, std::vector<Tensor<T>*>& out) {
  if (!l.weight.empty()) out.push_back(&l.weight);
  if (!l.bias.empty()) out.push_back(&l.bias);
  if (!l.gamma.empty()) out.push_back(&l.gamma);
  if (!l.beta.empty()) out.push_back(&l.beta);
  for (auto& s : l.sub) collect_trainable(s, out);
}

template <typename T>
void collect_trainable(LayerStack<T>& st, std::vector<Tensor<T>*>& out) {
  for (auto& l : st.layers) collect_trainable(l, out);
}

template <typename T>
void collect_running(Layer<T>& l, std::vector<Tensor<T>*>& out) {
  if (!l.running_mean.empty()) out.push_back(&l.running_mean);
  if (!l.running_var.empty()) out.push_back(&l.running_var);
  for (auto& s : l.sub) collect_running(s, out);
}

template <typename T>
void collect_running(LayerStack<T>& st, std::vector<Tensor<T>*>& out) {
  for (auto& l : st.layers) collect_running(l, out);
}

// ---------------------------------------------------------------------------
// concrete plans
// ---------------------------------------------------------------------------

/// Encoder: two conv stages, each halving the spatial extent, ending at 32
/// channels. blocks == 0 is the plain four-conv plan; blocks in 1..3 swaps
/// each stage's conv pair for an entry conv plus that many channel-preserving
/// residual blocks (capacity variant).
inline std::vector<LayerSpec> build_advocate_encoder(int in_channels, int blocks = 0) {
  if (in_channels < 1) fail("encoder: in_channels must be >= 1");
  if (blocks < 0 || blocks > 3) fail("encoder: blocks must be in 0..3");
  std::vector<LayerSpec> p;
  if (blocks == 0) {
    p = {conv_spec(in_channels, 32, 3, 1, 1), bn_spec(32), relu_spec(),
         conv_spec(32, 64, 3, 1, 1),          bn_spec(64), relu_spec(), pool_spec(),
         conv_spec(64, 64, 3, 1, 1),          bn_spec(64), relu_spec(),
         conv_spec(64, 32, 3, 1, 1),          bn_spec(32), relu_spec(), pool_spec()};
  } else {
    p = {conv_spec(in_channels, 64, 3, 1, 1), bn_spec(64), relu_spec()};
    for (int i = 0; i < blocks; ++i) p.push_back(residual_spec(64));
    p.push_back(pool_spec());
    p.push_back(conv_spec(64, 32, 3, 1, 1));
    p.push_back(bn_spec(32));
    p.push_back(relu_spec());
    for (int i = 0; i < blocks; ++i) p.push_back(residual_spec(32));
    p.push_back(pool_spec());
  }
  return p;
}

/// Decoder: restores the encoder's 32 x H/4 x W/4 latent to the input extent
/// and squashes to an attention map in (0,1) via the trailing sigmoid.
inline std::vector<LayerSpec> build_advocate_decoder(int out_channels) {
  if (out_channels < 1) fail("decoder: out_channels must be >= 1");
  return {deconv_spec(32, 32, 3, 1, 1), bn_spec(32), relu_spec(),
          deconv_spec(32, 16, 2, 2, 0), bn_spec(16), relu_spec(),
          deconv_spec(16, 8, 2, 2, 0),  bn_spec(8),  relu_spec(),
          deconv_spec(8, 4, 5, 1, 2),   bn_spec(4),  relu_spec(),
          conv_spec(4, 2, 3, 1, 1),     bn_spec(2),
          conv_spec(2, out_channels, 1, 1, 0),
          sigmoid_spec()};
}

/// Judge: encoder-mirroring conv stack over the stacked evidence channels,
/// then a 512-wide fully connected head with dropout, ending in raw logits
/// (log-softmax is applied by the model).
inline std::vector<LayerSpec> build_judge(int num_classes, int evidence_channels, int height,
                                          int width, int blocks = 0) {
  if (num_classes < 2) fail("judge: num_classes must be >= 2");
  if (blocks < 0 || blocks > 5) fail("judge: blocks must be in 0..5");
  if (height % 4 != 0 || width % 4 != 0)
    fail("judge: input extent " + std::to_string(height) + "x" + std::to_string(width) +
         " must be divisible by 4");
  std::vector<LayerSpec> p;
  if (blocks == 0) {
    p = {conv_spec(evidence_channels, 32, 3, 1, 1), bn_spec(32), relu_spec(),
         conv_spec(32, 64, 3, 1, 1),                bn_spec(64), relu_spec(), pool_spec(),
         conv_spec(64, 64, 3, 1, 1),                bn_spec(64), relu_spec(),
         conv_spec(64, 32, 3, 1, 1),                bn_spec(32), relu_spec(), pool_spec()};
  } else {
    p = {conv_spec(evidence_channels, 64, 3, 1, 1), bn_spec(64), relu_spec()};
    for (int i = 0; i < blocks; ++i) p.push_back(residual_spec(64));
    p.push_back(pool_spec());
    p.push_back(conv_spec(64, 32, 3, 1, 1));
    p.push_back(bn_spec(32));
    p.push_back(relu_spec());
    for (int i = 0; i < blocks; ++i) p.push_back(residual_spec(32));
    p.push_back(pool_spec());
  }
  const int fc_in = 32 * (height / 4) * (width / 4);
  p.push_back(flatten_spec());
  p.push_back(linear_spec(fc_in, 512));
  p.push_back(bn_spec(512));
  p.push_back(relu_spec());
  p.push_back(dropout_spec(0.2));
  p.push_back(linear_spec(512, num_classes));
  return p;
}

}  // namespace advo
