#pragma once

#include <map>
#include <string>

#include "advo/tensor.hpp"

namespace advo {

/// Named, disjoint group of trainable tensors. When frozen, optimizer steps
/// must be skipped by the caller; adam_step refuses frozen partitions.
template <typename T>
struct Partition {
  std::string name;
  std::vector<Tensor<T>*> tensors;
  bool frozen = false;
};

struct OptimConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (learning_rate <= 0) fail("optim: learning_rate must be positive");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
      fail("optim: betas must be in [0,1)");
  }
};

/// Adam moment buffers for one partition; the step counter is per partition
/// so interleaved updates keep independent bias correction.
template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m, v;
  uint64_t t = 0;

  void init_for(const Partition<T>& part) {
    m.clear();
    v.clear();
    for (const auto* p : part.tensors) {
      m.emplace_back(static_cast<size_t>(p->size()), T(0));
      v.emplace_back(static_cast<size_t>(p->size()), T(0));
    }
    t = 0;
  }
};

/// One Adam update of every tensor in the partition, gradients taken from
/// the map (absent entries count as zero). Touches nothing outside the
/// partition and its state.
template <typename T>
void adam_step(Partition<T>& part, const GradMap<T>& grads, AdamState<T>& state,
               const OptimConfig& cfg) {
  if (part.frozen) fail("adam_step: partition '" + part.name + "' is frozen");
  if (state.m.size() != part.tensors.size())
    fail("adam_step: state not initialized for partition '" + part.name + "'");
  state.t += 1;
  const T lr = T(cfg.learning_rate), b1 = T(cfg.beta1), b2 = T(cfg.beta2);
  const T eps = T(cfg.epsilon);
  const T corr1 = T(1) - std::pow(b1, T(state.t));
  const T corr2 = T(1) - std::pow(b2, T(state.t));
  for (size_t k = 0; k < part.tensors.size(); ++k) {
    Tensor<T>& w = *part.tensors[k];
    const std::vector<T>* g = grads.find(w);
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (size_t i = 0; i < m.size(); ++i) {
      const T gi = g ? (*g)[i] : T(0);
      m[i] = b1 * m[i] + (T(1) - b1) * gi;
      v[i] = b2 * v[i] + (T(1) - b2) * gi * gi;
      const T mhat = m[i] / corr1;
      const T vhat = v[i] / corr2;
      w.data()[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace advo
