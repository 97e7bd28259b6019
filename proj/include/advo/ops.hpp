#pragma once

#include <Eigen/Core>
#include <cmath>

#include "advo/rng.hpp"
#include "advo/tensor.hpp"

namespace advo {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EMap = Eigen::Map<EMat<T>>;
template <typename T>
using ECMap = Eigen::Map<const EMat<T>>;

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    fail("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out(a.shape());
  const size_t n = out.data().size();
  for (size_t i = 0; i < n; ++i) out.data()[i] = a[i] * b[i];

  if (auto* tape = detail::result_tape<T>({&a, &b})) {
    auto as = a.storage(), bs = b.storage();
    int an = a.node(), bn = b.node();
    out.bind(tape, tape->record({an, bn}, [as, bs, an, bn](const std::vector<T>& g, BackwardState<T>& bp) {
      const size_t n = g.size();
      if (bp.wants(an)) {
        auto& da = bp.acc(an, n);
        for (size_t i = 0; i < n; ++i) da[i] += g[i] * (*bs)[i];
      }
      if (bp.wants(bn)) {
        auto& db = bp.acc(bn, n);
        for (size_t i = 0; i < n; ++i) db[i] += g[i] * (*as)[i];
      }
    }));
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    fail("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out(a.shape());
  const size_t n = out.data().size();
  for (size_t i = 0; i < n; ++i) out.data()[i] = a[i] + b[i];

  if (auto* tape = detail::result_tape<T>({&a, &b})) {
    int an = a.node(), bn = b.node();
    out.bind(tape, tape->record({an, bn}, [an, bn](const std::vector<T>& g, BackwardState<T>& bp) {
      if (bp.wants(an)) bp.add(an, g.data(), g.size());
      if (bp.wants(bn)) bp.add(bn, g.data(), g.size());
    }));
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  Tensor<T> out(a.shape());
  const size_t n = out.data().size();
  for (size_t i = 0; i < n; ++i) out.data()[i] = a[i] * c;

  if (auto* tape = detail::result_tape<T>({&a})) {
    int an = a.node();
    out.bind(tape, tape->record({an}, [an, c](const std::vector<T>& g, BackwardState<T>& bp) {
      if (!bp.wants(an)) return;
      auto& da = bp.acc(an, g.size());
      for (size_t i = 0; i < g.size(); ++i) da[i] += g[i] * c;
    }));
  }
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const size_t n = out.data().size();
  for (size_t i = 0; i < n; ++i) out.data()[i] = x[i] > T(0) ? x[i] : T(0);

  if (auto* tape = detail::result_tape<T>({&x})) {
    auto xs = x.storage();
    int xn = x.node();
    out.bind(tape, tape->record({xn}, [xs, xn](const std::vector<T>& g, BackwardState<T>& bp) {
      if (!bp.wants(xn)) return;
      auto& dx = bp.acc(xn, g.size());
      for (size_t i = 0; i < g.size(); ++i)
        if ((*xs)[i] > T(0)) dx[i] += g[i];
    }));
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const size_t n = out.data().size();
  for (size_t i = 0; i < n; ++i) out.data()[i] = T(1) / (T(1) + std::exp(-x[i]));

  if (auto* tape = detail::result_tape<T>({&x})) {
    auto ys = out.storage();
    int xn = x.node();
    out.bind(tape, tape->record({xn}, [ys, xn](const std::vector<T>& g, BackwardState<T>& bp) {
      if (!bp.wants(xn)) return;
      auto& dx = bp.acc(xn, g.size());
      for (size_t i = 0; i < g.size(); ++i) {
        const T y = (*ys)[i];
        dx[i] += g[i] * y * (T(1) - y);
      }
    }));
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions / views
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = T(0);
  for (int64_t i = 0; i < x.size(); ++i) total += x[i];
  Tensor<T> out = Tensor<T>::scalar(total);

  if (auto* tape = detail::result_tape<T>({&x})) {
    int xn = x.node();
    const size_t n = static_cast<size_t>(x.size());
    out.bind(tape, tape->record({xn}, [xn, n](const std::vector<T>& g, BackwardState<T>& bp) {
      if (!bp.wants(xn)) return;
      auto& dx = bp.acc(xn, n);
      for (size_t i = 0; i < n; ++i) dx[i] += g[0];
    }));
  }
  return out;
}

/// mean over leading (batch) dimension of the L1 norm of each sample.
template <typename T>
Tensor<T> asum_batch_mean(const Tensor<T>& x) {
  const T inv_b = T(1) / T(x.dim(0));
  T total = T(0);
  for (int64_t i = 0; i < x.size(); ++i) total += std::abs(x[i]);
  Tensor<T> out = Tensor<T>::scalar(total * inv_b);

  if (auto* tape = detail::result_tape<T>({&x})) {
    auto xs = x.storage();
    int xn = x.node();
    out.bind(tape, tape->record({xn}, [xs, xn, inv_b](const std::vector<T>& g, BackwardState<T>& bp) {
      if (!bp.wants(xn)) return;
      auto& dx = bp.acc(xn, xs->size());
      for (size_t i = 0; i < xs->size(); ++i) {
        const T v = (*xs)[i];
        const T sgn = v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
        dx[i] += g[0] * inv_b * sgn;
      }
    }));
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.size())
    fail("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  Tensor<T> out(std::move(shape), x.data());  // contiguous row-major: plain copy
  if (auto* tape = detail::result_tape<T>({&x})) {
    int xn = x.node();
    out.bind(tape, tape->record({xn}, [xn](const std::vector<T>& g, BackwardState<T>& bp) {
      if (bp.wants(xn)) bp.add(xn, g.data(), g.size());
    }));
  }
  return out;
}

/// Concatenate NCHW tensors along the channel axis, in argument order.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) fail("concat_channels: no inputs");
  const auto& s0 = parts[0].shape();
  if (s0.size() != 4) fail("concat_channels: expected NCHW, got " + shape_str(s0));
  int channels = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    if (s.size() != 4 || s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3])
      fail("concat_channels: incompatible shapes " + shape_str(s0) + " vs " + shape_str(s));
    channels += s[1];
  }
  const int b = s0[0], h = s0[2], w = s0[3];
  const size_t plane = static_cast<size_t>(h) * w;
  Tensor<T> out({b, channels, h, w});

  size_t ch_off = 0;
  for (const auto& p : parts) {
    const size_t pc = static_cast<size_t>(p.dim(1));
    for (int n = 0; n < b; ++n) {
      const T* src = p.ptr() + static_cast<size_t>(n) * pc * plane;
      T* dst = out.ptr() + (static_cast<size_t>(n) * channels + ch_off) * plane;
      std::copy(src, src + pc * plane, dst);
    }
    ch_off += pc;
  }

  std::vector<const Tensor<T>*> ins;
  for (const auto& p : parts) ins.push_back(&p);
  Tape<T>* tape = nullptr;
  for (const auto* t : ins) {
    if (!t->recorded()) continue;
    if (tape && tape != t->tape()) fail("concat_channels: inputs on different tapes");
    tape = t->tape();
  }
  if (tape) {
    struct Slice { int node; size_t ch, off; };
    std::vector<Slice> slices;
    std::vector<int> in_nodes;
    size_t off = 0;
    for (const auto& p : parts) {
      slices.push_back({p.node(), static_cast<size_t>(p.dim(1)), off});
      in_nodes.push_back(p.node());
      off += static_cast<size_t>(p.dim(1));
    }
    const size_t total_ch = static_cast<size_t>(channels);
    out.bind(tape, tape->record(std::move(in_nodes),
        [slices, b, plane, total_ch](const std::vector<T>& g, BackwardState<T>& bp) {
      for (const auto& sl : slices) {
        if (!bp.wants(sl.node)) continue;
        auto& dp = bp.acc(sl.node, static_cast<size_t>(b) * sl.ch * plane);
        for (int n = 0; n < b; ++n) {
          const T* src = g.data() + (static_cast<size_t>(n) * total_ch + sl.off) * plane;
          T* dst = dp.data() + static_cast<size_t>(n) * sl.ch * plane;
          for (size_t i = 0; i < sl.ch * plane; ++i) dst[i] += src[i];
        }
      }
    }));
  }
  return out;
}

// ---------------------------------------------------------------------------
// linear / softmax
// ---------------------------------------------------------------------------

/// y = x * W^T + bias, with x [B?, in], W [out, in], bias [out].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.rank() != 2 || w.rank() != 2)
    fail("linear: expected 2-d input and weight, got " + shape_str(x.shape()) + " and " +
         shape_str(w.shape()));
  const int batch = x.dim(0), in = x.dim(1), out_f = w.dim(0);
  if (w.dim(1) != in)
    fail("linear: inner dimensions disagree, input " + shape_str(x.shape()) + " weight " +
         shape_str(w.shape()));
  if (b.size() != out_f)
    fail("linear: bias size " + std::to_string(b.size()) + " != out features " +
         std::to_string(out_f));

  Tensor<T> out({batch, out_f});
  ECMap<T> X(x.ptr(), batch, in), W(w.ptr(), out_f, in);
  EMap<T> Y(out.ptr(), batch, out_f);
  Y.noalias() = X * W.transpose();
  for (int n = 0; n < batch; ++n)
    for (int o = 0; o < out_f; ++o) out.data()[static_cast<size_t>(n) * out_f + o] += b[o];

  if (auto* tape = detail::result_tape<T>({&x, &w, &b})) {
    auto xs = x.storage(), ws = w.storage();
    int xn = x.node(), wn = w.node(), bn = b.node();
    out.bind(tape, tape->record({xn, wn, bn},
        [xs, ws, xn, wn, bn, batch, in, out_f](const std::vector<T>& g, BackwardState<T>& bp) {
      ECMap<T> G(g.data(), batch, out_f);
      if (bp.wants(xn)) {
        EMap<T> DX(bp.acc(xn, xs->size()).data(), batch, in);
        ECMap<T> W(ws->data(), out_f, in);
        DX.noalias() += G * W;
      }
      if (bp.wants(wn)) {
        EMap<T> DW(bp.acc(wn, ws->size()).data(), out_f, in);
        ECMap<T> X(xs->data(), batch, in);
        DW.noalias() += G.transpose() * X;
      }
      if (bp.wants(bn)) {
        auto& db = bp.acc(bn, static_cast<size_t>(out_f));
        for (int n = 0; n < batch; ++n)
          for (int o = 0; o < out_f; ++o) db[static_cast<size_t>(o)] += G(n, o);
      }
    }));
  }
  return out;
}

/// Numerically stabilized log-softmax along `axis` (max subtraction, then
/// log-sum-exp), so exp(out) sums to 1 even for logits of magnitude ~1e2.
template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, int axis) {
  if (axis < 0 || axis >= x.rank())
    fail("log_softmax: axis " + std::to_string(axis) + " invalid for shape " +
         shape_str(x.shape()));
  const int64_t len = x.dim(static_cast<size_t>(axis));
  int64_t inner = 1, outer = 1;
  for (int i = axis + 1; i < x.rank(); ++i) inner *= x.dim(static_cast<size_t>(i));
  for (int i = 0; i < axis; ++i) outer *= x.dim(static_cast<size_t>(i));

  Tensor<T> out(x.shape());
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      const T* src = x.ptr() + o * len * inner + in;
      T* dst = out.ptr() + o * len * inner + in;
      T mx = src[0];
      for (int64_t k = 1; k < len; ++k) mx = std::max(mx, src[k * inner]);
      T lse = T(0);
      for (int64_t k = 0; k < len; ++k) lse += std::exp(src[k * inner] - mx);
      lse = std::log(lse) + mx;
      for (int64_t k = 0; k < len; ++k) dst[k * inner] = src[k * inner] - lse;
    }
  }

  if (auto* tape = detail::result_tape<T>({&x})) {
    auto ys = out.storage();
    int xn = x.node();
    out.bind(tape, tape->record({xn},
        [ys, xn, len, inner, outer](const std::vector<T>& g, BackwardState<T>& bp) {
      if (!bp.wants(xn)) return;
      auto& dx = bp.acc(xn, ys->size());
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
          const int64_t base = o * len * inner + in;
          T gsum = T(0);
          for (int64_t k = 0; k < len; ++k) gsum += g[static_cast<size_t>(base + k * inner)];
          for (int64_t k = 0; k < len; ++k) {
            const size_t i = static_cast<size_t>(base + k * inner);
            dx[i] += g[i] - std::exp((*ys)[i]) * gsum;
          }
        }
      }
    }));
  }
  return out;
}

// ---------------------------------------------------------------------------
// batchnorm / dropout
// ---------------------------------------------------------------------------

/// Channel-axis batch normalization for NC or NCHW input. Train mode uses
/// batch statistics (biased variance) and updates the running buffers with
/// momentum (unbiased variance, matching the usual convention); eval mode
/// normalizes with the running buffers. Running buffers are never recorded.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    Tensor<T>& running_mean, Tensor<T>& running_var, bool train,
                    double momentum = 0.1, double eps = 1e-5) {
  if (x.rank() != 2 && x.rank() != 4)
    fail("batchnorm: expected NC or NCHW input, got " + shape_str(x.shape()));
  const int channels = x.dim(1);
  if (gamma.size() != channels || beta.size() != channels)
    fail("batchnorm: gamma/beta size must equal channel count " + std::to_string(channels));
  if (running_mean.size() != channels || running_var.size() != channels)
    fail("batchnorm: running buffer size must equal channel count");
  if (train && x.dim(0) < 2)
    fail("batchnorm: train mode requires batch size >= 2, got " + std::to_string(x.dim(0)));

  const int batch = x.dim(0);
  const int64_t plane = x.rank() == 4 ? int64_t(x.dim(2)) * x.dim(3) : 1;
  const int64_t per_ch = int64_t(batch) * plane;  // elements normalized per channel
  const int64_t ch_stride = int64_t(channels) * plane;

  std::vector<T> mean(static_cast<size_t>(channels)), invstd(static_cast<size_t>(channels));
  if (train) {
    for (int c = 0; c < channels; ++c) {
      T s = T(0), s2 = T(0);
      for (int n = 0; n < batch; ++n) {
        const T* p = x.ptr() + n * ch_stride + c * plane;
        for (int64_t i = 0; i < plane; ++i) {
          s += p[i];
          s2 += p[i] * p[i];
        }
      }
      const T mu = s / T(per_ch);
      T var = s2 / T(per_ch) - mu * mu;
      if (var < T(0)) var = T(0);  // guard fp cancellation
      mean[static_cast<size_t>(c)] = mu;
      invstd[static_cast<size_t>(c)] = T(1) / std::sqrt(var + T(eps));
      const T unbiased = per_ch > 1 ? var * T(per_ch) / T(per_ch - 1) : var;
      running_mean.data()[static_cast<size_t>(c)] =
          T(1 - momentum) * running_mean[c] + T(momentum) * mu;
      running_var.data()[static_cast<size_t>(c)] =
          T(1 - momentum) * running_var[c] + T(momentum) * unbiased;
    }
  } else {
    for (int c = 0; c < channels; ++c) {
      mean[static_cast<size_t>(c)] = running_mean[c];
      invstd[static_cast<size_t>(c)] = T(1) / std::sqrt(running_var[c] + T(eps));
    }
  }

  Tensor<T> out(x.shape());
  for (int n = 0; n < batch; ++n) {
    for (int c = 0; c < channels; ++c) {
      const T* p = x.ptr() + n * ch_stride + c * plane;
      T* q = out.ptr() + n * ch_stride + c * plane;
      const T mu = mean[static_cast<size_t>(c)], is = invstd[static_cast<size_t>(c)];
      const T gm = gamma[c], bt = beta[c];
      for (int64_t i = 0; i < plane; ++i) q[i] = (p[i] - mu) * is * gm + bt;
    }
  }

  if (auto* tape = detail::result_tape<T>({&x, &gamma, &beta})) {
    auto xs = x.storage(), gs = gamma.storage();
    int xn = x.node(), gn = gamma.node(), bn = beta.node();
    out.bind(tape, tape->record({xn, gn, bn},
        [xs, gs, xn, gn, bn, mean, invstd, train, batch, channels, plane, ch_stride,
         per_ch](const std::vector<T>& g, BackwardState<T>& bp) {
      const bool want_x = bp.wants(xn), want_g = bp.wants(gn), want_b = bp.wants(bn);
      if (!want_x && !want_g && !want_b) return;
      for (int c = 0; c < channels; ++c) {
        const T mu = mean[static_cast<size_t>(c)], is = invstd[static_cast<size_t>(c)];
        const T gm = (*gs)[static_cast<size_t>(c)];
        T sum_g = T(0), sum_gx = T(0);
        for (int n = 0; n < batch; ++n) {
          const T* xp = xs->data() + n * ch_stride + c * plane;
          const T* gp = g.data() + n * ch_stride + c * plane;
          for (int64_t i = 0; i < plane; ++i) {
            sum_g += gp[i];
            sum_gx += gp[i] * (xp[i] - mu) * is;
          }
        }
        if (want_g) bp.acc(gn, static_cast<size_t>(channels))[static_cast<size_t>(c)] += sum_gx;
        if (want_b) bp.acc(bn, static_cast<size_t>(channels))[static_cast<size_t>(c)] += sum_g;
        if (want_x) {
          auto& dx = bp.acc(xn, xs->size());
          if (train) {
            // d/dx of batch-stat normalization: remove the per-channel mean
            // of g and of g*xhat from each element's direct term.
            const T inv_m = T(1) / T(per_ch);
            for (int n = 0; n < batch; ++n) {
              const T* xp = xs->data() + n * ch_stride + c * plane;
              const T* gp = g.data() + n * ch_stride + c * plane;
              T* dp = dx.data() + n * ch_stride + c * plane;
              for (int64_t i = 0; i < plane; ++i) {
                const T xhat = (xp[i] - mu) * is;
                dp[i] += gm * is * (gp[i] - inv_m * (sum_g + xhat * sum_gx));
              }
            }
          } else {
            for (int n = 0; n < batch; ++n) {
              const T* gp = g.data() + n * ch_stride + c * plane;
              T* dp = dx.data() + n * ch_stride + c * plane;
              for (int64_t i = 0; i < plane; ++i) dp[i] += gp[i] * gm * is;
            }
          }
        }
      }
    }));
  }
  return out;
}

/// Inverted dropout: train mode zeroes with probability p and scales the
/// survivors by 1/(1-p); eval mode is the identity.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool train, Rng& rng) {
  if (p < 0 || p >= 1) fail("dropout: p must be in [0,1), got " + std::to_string(p));
  if (!train || p == 0) return x;

  const T keep_scale = T(1.0 / (1.0 - p));
  auto mask = std::make_shared<std::vector<T>>(static_cast<size_t>(x.size()));
  Tensor<T> out(x.shape());
  for (int64_t i = 0; i < x.size(); ++i) {
    const T m = rng.bernoulli(p) ? T(0) : keep_scale;
    (*mask)[static_cast<size_t>(i)] = m;
    out.data()[static_cast<size_t>(i)] = x[i] * m;
  }

  if (auto* tape = detail::result_tape<T>({&x})) {
    int xn = x.node();
    out.bind(tape, tape->record({xn}, [mask, xn](const std::vector<T>& g, BackwardState<T>& bp) {
      if (!bp.wants(xn)) return;
      auto& dx = bp.acc(xn, g.size());
      for (size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * (*mask)[i];
    }));
  }
  return out;
}

}  // namespace advo
