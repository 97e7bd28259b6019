// Test-side reference implementations, kept independent of the library's
// GEMM-lowered kernels: plain nested loops and direct scatter placement.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "advo/rng.hpp"
#include "advo/tensor.hpp"

namespace oracle {

template <typename T>
advo::Tensor<T> random_tensor(advo::Shape shape, advo::Rng& rng, double lo = -1.0,
                              double hi = 1.0) {
  advo::Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

/// conv2d by six nested loops.
template <typename T>
advo::Tensor<T> conv2d_ref(const advo::Tensor<T>& x, const advo::Tensor<T>& w,
                           const advo::Tensor<T>& b, int stride, int pad) {
  const int batch = x.dim(0), ch = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int out_ch = w.dim(0), k = w.dim(2);
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (wd + 2 * pad - k) / stride + 1;
  advo::Tensor<T> out({batch, out_ch, ho, wo});
  for (int n = 0; n < batch; ++n)
    for (int o = 0; o < out_ch; ++o)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          T acc = b[o];
          for (int c = 0; c < ch; ++c)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * stride - pad + ky;
                const int ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                acc += x[((int64_t(n) * ch + c) * h + iy) * wd + ix] *
                       w[((int64_t(o) * ch + c) * k + ky) * k + kx];
              }
          out.data()[((size_t(n) * out_ch + o) * ho + oy) * wo + ox] = acc;
        }
  return out;
}

/// conv_transpose2d by direct placement of scaled kernel copies.
template <typename T>
advo::Tensor<T> conv_transpose2d_ref(const advo::Tensor<T>& x, const advo::Tensor<T>& w,
                                     const advo::Tensor<T>& b, int stride, int pad) {
  const int batch = x.dim(0), in_ch = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int out_ch = w.dim(1), k = w.dim(2);
  const int ho = (h - 1) * stride - 2 * pad + k;
  const int wo = (wd - 1) * stride - 2 * pad + k;
  advo::Tensor<T> out({batch, out_ch, ho, wo});
  for (int n = 0; n < batch; ++n) {
    for (int o = 0; o < out_ch; ++o)
      for (int64_t i = 0; i < int64_t(ho) * wo; ++i)
        out.data()[(size_t(n) * out_ch + o) * ho * wo + static_cast<size_t>(i)] = b[o];
    for (int c = 0; c < in_ch; ++c)
      for (int iy = 0; iy < h; ++iy)
        for (int ix = 0; ix < wd; ++ix) {
          const T v = x[((int64_t(n) * in_ch + c) * h + iy) * wd + ix];
          for (int o = 0; o < out_ch; ++o)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int oy = iy * stride - pad + ky;
                const int ox = ix * stride - pad + kx;
                if (oy < 0 || oy >= ho || ox < 0 || ox >= wo) continue;
                out.data()[((size_t(n) * out_ch + o) * ho + oy) * wo + ox] +=
                    v * w[((int64_t(c) * out_ch + o) * k + ky) * k + kx];
              }
        }
  }
  return out;
}

template <typename T>
advo::Tensor<T> maxpool2d_ref(const advo::Tensor<T>& x, int window) {
  const int batch = x.dim(0), ch = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int ho = h / window, wo = wd / window;
  advo::Tensor<T> out({batch, ch, ho, wo});
  for (int n = 0; n < batch; ++n)
    for (int c = 0; c < ch; ++c)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          T best = -std::numeric_limits<T>::infinity();
          for (int ky = 0; ky < window; ++ky)
            for (int kx = 0; kx < window; ++kx)
              best = std::max(best, x[((int64_t(n) * ch + c) * h + oy * window + ky) * wd +
                                      ox * window + kx]);
          out.data()[((size_t(n) * ch + c) * ho + oy) * wo + ox] = best;
        }
  return out;
}

template <typename T>
T max_abs_diff(const advo::Tensor<T>& a, const advo::Tensor<T>& b) {
  T worst = T(0);
  for (int64_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

/// AUROC by exhaustive pair counting (ties count half).
inline double auroc_pairs_ref(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0;
  int64_t pairs = 0;
  for (size_t p = 0; p < scores.size(); ++p) {
    if (labels[p] != 1) continue;
    for (size_t q = 0; q < scores.size(); ++q) {
      if (labels[q] != 0) continue;
      ++pairs;
      if (scores[p] > scores[q]) wins += 1;
      else if (scores[p] == scores[q]) wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

/// AUPR by exhaustive threshold enumeration: step summation of precision
/// at each distinct score level, descending.
inline double aupr_threshold_ref(const std::vector<double>& scores,
                                 const std::vector<int>& labels) {
  std::vector<double> levels = scores;
  std::sort(levels.begin(), levels.end(), std::greater<>());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  int total_pos = 0;
  for (int y : labels) total_pos += y;
  double ap = 0, prev_recall = 0;
  for (double t : levels) {
    int tp = 0, fp = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] >= t) (labels[i] == 1 ? tp : fp)++;
    }
    const double recall = static_cast<double>(tp) / total_pos;
    const double precision = static_cast<double>(tp) / (tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

}  // namespace oracle
