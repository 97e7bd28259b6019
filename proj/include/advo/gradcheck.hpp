#pragma once

#include <algorithm>
#include <functional>

#include "advo/rng.hpp"
#include "advo/tensor.hpp"

namespace advo {

/// Compare reverse-mode gradients of a scalar-valued forward against central
/// finite differences. `forward` must rebuild the graph from the current
/// parameter values on every call and be deterministic (fix any dropout mask
/// by reseeding inside `forward`); non-determinism is detected and rejected.
///
/// Returns max over checked elements of |analytic - numeric| /
/// max(|analytic|, |numeric|, 1e-8). With max_elements_per_tensor > 0 a
/// seeded random subset of each tensor is checked instead of every element.
/// abs_tol > 0 counts a pair as matching when |analytic - numeric| <= abs_tol:
/// below the roundoff noise of the difference quotient the ratio above is
/// meaningless (e.g. structurally zero gradients such as a bias absorbed by a
/// downstream train-mode batchnorm), while every measurable gradient still
/// faces the full relative test.
template <typename T>
T grad_check(const std::function<Tensor<T>()>& forward, const std::vector<Tensor<T>*>& params,
             T eps, int max_elements_per_tensor = 0, uint64_t pick_seed = 0, T abs_tol = T(0)) {
  const T f0 = forward().item();
  const T f0_again = forward().item();
  if (!(f0 == f0_again))
    throw std::runtime_error("grad_check: forward is not deterministic (" +
                             std::to_string(static_cast<double>(f0)) + " vs " +
                             std::to_string(static_cast<double>(f0_again)) + ")");

  GradMap<T> analytic;
  {
    Tape<T> tape;
    TapeScope<T> scope(tape, params);
    Tensor<T> loss = forward();
    std::vector<const Tensor<T>*> wrt(params.begin(), params.end());
    analytic = backward(loss, wrt);
  }

  Rng pick(pick_seed);
  T worst = T(0);
  for (auto* p : params) {
    const auto grads = analytic.dense(*p);
    std::vector<int64_t> idx;
    if (max_elements_per_tensor <= 0 || p->size() <= max_elements_per_tensor) {
      idx.resize(static_cast<size_t>(p->size()));
      for (int64_t i = 0; i < p->size(); ++i) idx[static_cast<size_t>(i)] = i;
    } else {
      for (int i = 0; i < max_elements_per_tensor; ++i)
        idx.push_back(static_cast<int64_t>(pick.below(static_cast<uint64_t>(p->size()))));
    }
    for (int64_t i : idx) {
      T& slot = p->data()[static_cast<size_t>(i)];
      const T saved = slot;
      slot = saved + eps;
      const T fp = forward().item();
      slot = saved - eps;
      const T fm = forward().item();
      slot = saved;
      const T numeric = (fp - fm) / (T(2) * eps);
      const T a = grads[static_cast<size_t>(i)];
      if (abs_tol > T(0) && std::abs(a - numeric) <= abs_tol) continue;
      const T denom = std::max({std::abs(a), std::abs(numeric), T(1e-8)});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace advo
