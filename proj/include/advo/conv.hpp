#pragma once

#include <cstring>

#include "advo/ops.hpp"

namespace advo {
namespace detail {

/// Lower one image [C,H,W] into columns [C*K*K x Ho*Wo] for GEMM-based
/// convolution. Out-of-range taps (padding) become zeros.
template <typename T>
void im2col(const T* img, int ch, int h, int w, int k, int stride, int pad, int ho, int wo,
            T* col) {
  const int64_t out_plane = int64_t(ho) * wo;
  for (int c = 0; c < ch; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + (int64_t(c) * k * k + ky * k + kx) * out_plane;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) {
            std::memset(row + int64_t(oy) * wo, 0, sizeof(T) * wo);
            continue;
          }
          const T* src = img + (int64_t(c) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            row[int64_t(oy) * wo + ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatter-add columns back into the image.
template <typename T>
void col2im_acc(const T* col, int ch, int h, int w, int k, int stride, int pad, int ho, int wo,
                T* img) {
  const int64_t out_plane = int64_t(ho) * wo;
  for (int c = 0; c < ch; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + (int64_t(c) * k * k + ky * k + kx) * out_plane;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          T* dst = img + (int64_t(c) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += row[int64_t(oy) * wo + ox];
          }
        }
      }
    }
  }
}

template <typename T>
std::vector<T>& conv_scratch() {
  static thread_local std::vector<T> buf;
  return buf;
}

}  // namespace detail

/// 2-d cross-correlation, input [B,C,H,W], weight [O,C,K,K], bias [O].
/// The output extent (H + 2*pad - K) / stride + 1 must divide exactly.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride,
                 int padding) {
  if (x.rank() != 4 || w.rank() != 4)
    fail("conv2d: expected NCHW input and OIKK weight, got " + shape_str(x.shape()) + " and " +
         shape_str(w.shape()));
  const int batch = x.dim(0), ch = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int out_ch = w.dim(0), k = w.dim(2);
  if (w.dim(1) != ch)
    fail("conv2d: input has " + std::to_string(ch) + " channels but weight expects " +
         std::to_string(w.dim(1)));
  if (w.dim(3) != k) fail("conv2d: non-square kernel " + shape_str(w.shape()));
  if (b.size() != out_ch) fail("conv2d: bias size != output channels");
  if (stride < 1) fail("conv2d: stride must be >= 1");
  auto out_extent = [&](int in) {
    const int span = in + 2 * padding - k;
    if (span < 0 || span % stride != 0)
      fail("conv2d: extent " + std::to_string(in) + " with kernel " + std::to_string(k) +
           ", stride " + std::to_string(stride) + ", padding " + std::to_string(padding) +
           " gives non-integral output");
    return span / stride + 1;
  };
  const int ho = out_extent(h), wo = out_extent(wd);

  const int64_t ckk = int64_t(ch) * k * k;
  const int64_t out_plane = int64_t(ho) * wo;
  Tensor<T> out({batch, out_ch, ho, wo});
  auto& col = detail::conv_scratch<T>();
  col.resize(static_cast<size_t>(ckk * out_plane));
  ECMap<T> W(w.ptr(), out_ch, ckk);
  for (int n = 0; n < batch; ++n) {
    detail::im2col(x.ptr() + int64_t(n) * ch * h * wd, ch, h, wd, k, stride, padding, ho, wo,
                   col.data());
    EMap<T> Y(out.ptr() + int64_t(n) * out_ch * out_plane, out_ch, out_plane);
    ECMap<T> C(col.data(), ckk, out_plane);
    Y.noalias() = W * C;
    for (int o = 0; o < out_ch; ++o) Y.row(o).array() += b[o];
  }

  if (auto* tape = detail::result_tape<T>({&x, &w, &b})) {
    auto xs = x.storage(), ws = w.storage();
    int xn = x.node(), wn = w.node(), bn = b.node();
    out.bind(tape, tape->record({xn, wn, bn},
        [xs, ws, xn, wn, bn, batch, ch, h, wd, out_ch, k, stride, padding, ho, wo, ckk,
         out_plane](const std::vector<T>& g, BackwardState<T>& bp) {
      const bool want_x = bp.wants(xn), want_w = bp.wants(wn), want_b = bp.wants(bn);
      if (!want_x && !want_w && !want_b) return;
      auto& col = detail::conv_scratch<T>();
      col.resize(static_cast<size_t>(ckk * out_plane));
      for (int n = 0; n < batch; ++n) {
        ECMap<T> G(g.data() + int64_t(n) * out_ch * out_plane, out_ch, out_plane);
        if (want_b) {
          auto& db = bp.acc(bn, static_cast<size_t>(out_ch));
          for (int o = 0; o < out_ch; ++o) db[static_cast<size_t>(o)] += G.row(o).sum();
        }
        if (want_w) {
          detail::im2col(xs->data() + int64_t(n) * ch * h * wd, ch, h, wd, k, stride, padding,
                         ho, wo, col.data());
          EMap<T> DW(bp.acc(wn, ws->size()).data(), out_ch, ckk);
          ECMap<T> C(col.data(), ckk, out_plane);
          DW.noalias() += G * C.transpose();
        }
        if (want_x) {
          ECMap<T> W(ws->data(), out_ch, ckk);
          EMap<T> C(col.data(), ckk, out_plane);
          C.noalias() = W.transpose() * G;
          detail::col2im_acc(col.data(), ch, h, wd, k, stride, padding, ho, wo,
                             bp.acc(xn, xs->size()).data() + int64_t(n) * ch * h * wd);
        }
      }
    }));
  }
  return out;
}

/// Fractionally strided (transposed) convolution, input [B,I,H,W], weight
/// [I,O,K,K], bias [O]. Forward equals the input-gradient of conv2d with the
/// same weight, so output extent is (H-1)*stride - 2*pad + K.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                           int stride, int padding) {
  if (x.rank() != 4 || w.rank() != 4)
    fail("conv_transpose2d: expected NCHW input and IOKK weight, got " + shape_str(x.shape()) +
         " and " + shape_str(w.shape()));
  const int batch = x.dim(0), in_ch = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int out_ch = w.dim(1), k = w.dim(2);
  if (w.dim(0) != in_ch)
    fail("conv_transpose2d: input has " + std::to_string(in_ch) +
         " channels but weight expects " + std::to_string(w.dim(0)));
  if (w.dim(3) != k) fail("conv_transpose2d: non-square kernel " + shape_str(w.shape()));
  if (b.size() != out_ch) fail("conv_transpose2d: bias size != output channels");
  if (stride < 1) fail("conv_transpose2d: stride must be >= 1");
  const int ho = (h - 1) * stride - 2 * padding + k;
  const int wo = (wd - 1) * stride - 2 * padding + k;
  if (ho <= 0 || wo <= 0)
    fail("conv_transpose2d: computed output extent " + std::to_string(ho) + "x" +
         std::to_string(wo) + " is not positive");

  const int64_t okk = int64_t(out_ch) * k * k;
  const int64_t in_plane = int64_t(h) * wd;
  const int64_t out_img = int64_t(out_ch) * ho * wo;
  Tensor<T> out({batch, out_ch, ho, wo});
  auto& col = detail::conv_scratch<T>();
  col.resize(static_cast<size_t>(okk * in_plane));
  ECMap<T> W(w.ptr(), in_ch, okk);
  for (int n = 0; n < batch; ++n) {
    ECMap<T> X(x.ptr() + int64_t(n) * in_ch * in_plane, in_ch, in_plane);
    EMap<T> C(col.data(), okk, in_plane);
    C.noalias() = W.transpose() * X;
    T* dst = out.ptr() + int64_t(n) * out_img;
    detail::col2im_acc(col.data(), out_ch, ho, wo, k, stride, padding, h, wd, dst);
    for (int o = 0; o < out_ch; ++o)
      for (int64_t i = 0; i < int64_t(ho) * wo; ++i) dst[int64_t(o) * ho * wo + i] += b[o];
  }

  if (auto* tape = detail::result_tape<T>({&x, &w, &b})) {
    auto xs = x.storage(), ws = w.storage();
    int xn = x.node(), wn = w.node(), bn = b.node();
    out.bind(tape, tape->record({xn, wn, bn},
        [xs, ws, xn, wn, bn, batch, in_ch, h, wd, out_ch, k, stride, padding, ho, wo, okk,
         in_plane](const std::vector<T>& g, BackwardState<T>& bp) {
      const bool want_x = bp.wants(xn), want_w = bp.wants(wn), want_b = bp.wants(bn);
      if (!want_x && !want_w && !want_b) return;
      auto& col = detail::conv_scratch<T>();
      col.resize(static_cast<size_t>(okk * in_plane));
      const int64_t out_img = int64_t(out_ch) * ho * wo;
      for (int n = 0; n < batch; ++n) {
        const T* gp = g.data() + int64_t(n) * out_img;
        if (want_b) {
          auto& db = bp.acc(bn, static_cast<size_t>(out_ch));
          for (int o = 0; o < out_ch; ++o)
            for (int64_t i = 0; i < int64_t(ho) * wo; ++i)
              db[static_cast<size_t>(o)] += gp[int64_t(o) * ho * wo + i];
        }
        if (want_x || want_w) {
          // Gradient flows through the scatter: gather it back into columns.
          detail::im2col(gp, out_ch, ho, wo, k, stride, padding, h, wd, col.data());
          ECMap<T> C(col.data(), okk, in_plane);
          if (want_x) {
            ECMap<T> W(ws->data(), in_ch, okk);
            EMap<T> DX(bp.acc(xn, xs->size()).data() + int64_t(n) * in_ch * in_plane, in_ch,
                       in_plane);
            DX.noalias() += W * C;
          }
          if (want_w) {
            ECMap<T> X(xs->data() + int64_t(n) * in_ch * in_plane, in_ch, in_plane);
            EMap<T> DW(bp.acc(wn, ws->size()).data(), in_ch, okk);
            DW.noalias() += X * C.transpose();
          }
        }
      }
    }));
  }
  return out;
}

/// Non-overlapping max pooling; extents must divide by the window. Backward
/// routes each window's gradient to the first maximal element (row-major).
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, int window = 2) {
  if (x.rank() != 4) fail("maxpool2d: expected NCHW input, got " + shape_str(x.shape()));
  if (window < 1) fail("maxpool2d: window must be >= 1");
  const int batch = x.dim(0), ch = x.dim(1), h = x.dim(2), wd = x.dim(3);
  if (h % window != 0 || wd % window != 0)
    fail("maxpool2d: extents " + std::to_string(h) + "x" + std::to_string(wd) +
         " not divisible by window " + std::to_string(window));
  const int ho = h / window, wo = wd / window;

  Tensor<T> out({batch, ch, ho, wo});
  auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(out.size()));
  int64_t oi = 0;
  for (int n = 0; n < batch; ++n) {
    for (int c = 0; c < ch; ++c) {
      const T* plane = x.ptr() + (int64_t(n) * ch + c) * h * wd;
      const int64_t plane_off = (int64_t(n) * ch + c) * h * wd;
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox, ++oi) {
          T best = plane[int64_t(oy) * window * wd + int64_t(ox) * window];
          int64_t best_idx = int64_t(oy) * window * wd + int64_t(ox) * window;
          for (int ky = 0; ky < window; ++ky) {
            for (int kx = 0; kx < window; ++kx) {
              const int64_t idx = (int64_t(oy) * window + ky) * wd + int64_t(ox) * window + kx;
              if (plane[idx] > best) {
                best = plane[idx];
                best_idx = idx;
              }
            }
          }
          out.data()[static_cast<size_t>(oi)] = best;
          (*argmax)[static_cast<size_t>(oi)] = plane_off + best_idx;
        }
      }
    }
  }

  if (auto* tape = detail::result_tape<T>({&x})) {
    int xn = x.node();
    const size_t in_size = static_cast<size_t>(x.size());
    out.bind(tape, tape->record({xn},
        [argmax, xn, in_size](const std::vector<T>& g, BackwardState<T>& bp) {
      if (!bp.wants(xn)) return;
      auto& dx = bp.acc(xn, in_size);
      for (size_t i = 0; i < g.size(); ++i) dx[static_cast<size_t>((*argmax)[i])] += g[i];
    }));
  }
  return out;
}

}  // namespace advo
