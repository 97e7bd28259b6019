#pragma once

#include <chrono>
#include <cstdio>
#include <map>

#include "advo/data.hpp"
#include "advo/model.hpp"

namespace advo {

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

/// Cross-entropy against the true labels: batch mean of -log p[n, y_n].
template <typename T>
Tensor<T> ce_loss(const Tensor<T>& log_probs, const std::vector<int>& labels) {
  const int batch = log_probs.dim(0), n = log_probs.dim(1);
  if (static_cast<int>(labels.size()) != batch)
    fail("ce_loss: " + std::to_string(labels.size()) + " labels for batch " +
         std::to_string(batch));
  T total = T(0);
  for (int b = 0; b < batch; ++b) {
    const int y = labels[static_cast<size_t>(b)];
    if (y < 1 || y > n)
      fail("ce_loss: label " + std::to_string(y) + " outside 1.." + std::to_string(n));
    total -= log_probs[int64_t(b) * n + (y - 1)];
  }
  Tensor<T> out = Tensor<T>::scalar(total / T(batch));
  if (auto* tape = detail::result_tape<T>({&log_probs})) {
    int ln = log_probs.node();
    auto ys = labels;
    const size_t sz = static_cast<size_t>(log_probs.size());
    out.bind(tape, tape->record({ln}, [ln, ys, n, sz](const std::vector<T>& g, BackwardState<T>& bp) {
      if (!bp.wants(ln)) return;
      auto& d = bp.acc(ln, sz);
      const T scale = g[0] / T(ys.size());
      for (size_t b = 0; b < ys.size(); ++b)
        d[b * static_cast<size_t>(n) + static_cast<size_t>(ys[b] - 1)] -= scale;
    }));
  }
  return out;
}

/// Deceptive advocate objective: batch mean of -log p[n, i], independent of
/// the true labels.
template <typename T>
Tensor<T> advocate_loss(const Tensor<T>& log_probs, int class_index) {
  const int batch = log_probs.dim(0), n = log_probs.dim(1);
  if (class_index < 1 || class_index > n)
    fail("advocate_loss: class index " + std::to_string(class_index) + " outside 1.." +
         std::to_string(n));
  T total = T(0);
  for (int b = 0; b < batch; ++b) total -= log_probs[int64_t(b) * n + (class_index - 1)];
  Tensor<T> out = Tensor<T>::scalar(total / T(batch));
  if (auto* tape = detail::result_tape<T>({&log_probs})) {
    int ln = log_probs.node();
    const size_t sz = static_cast<size_t>(log_probs.size());
    out.bind(tape, tape->record({ln},
        [ln, n, batch, class_index, sz](const std::vector<T>& g, BackwardState<T>& bp) {
      if (!bp.wants(ln)) return;
      auto& d = bp.acc(ln, sz);
      const T scale = g[0] / T(batch);
      for (int b = 0; b < batch; ++b)
        d[static_cast<size_t>(int64_t(b) * n + class_index - 1)] -= scale;
    }));
  }
  return out;
}

/// Honest advocate objective: mean of -log p[n, i] over rows whose true
/// label is i. With no matching row the result is an exact constant zero
/// carrying no gradient.
template <typename T>
Tensor<T> honest_advocate_loss(const Tensor<T>& log_probs, int class_index,
                               const std::vector<int>& labels) {
  const int batch = log_probs.dim(0), n = log_probs.dim(1);
  if (class_index < 1 || class_index > n)
    fail("honest_advocate_loss: class index " + std::to_string(class_index) + " outside 1.." +
         std::to_string(n));
  if (static_cast<int>(labels.size()) != batch)
    fail("honest_advocate_loss: label count mismatch");
  std::vector<int> rows;
  for (int b = 0; b < batch; ++b)
    if (labels[static_cast<size_t>(b)] == class_index) rows.push_back(b);
  if (rows.empty()) return Tensor<T>::scalar(T(0));

  T total = T(0);
  for (int b : rows) total -= log_probs[int64_t(b) * n + (class_index - 1)];
  Tensor<T> out = Tensor<T>::scalar(total / T(rows.size()));
  if (auto* tape = detail::result_tape<T>({&log_probs})) {
    int ln = log_probs.node();
    const size_t sz = static_cast<size_t>(log_probs.size());
    out.bind(tape, tape->record({ln},
        [ln, n, rows, class_index, sz](const std::vector<T>& g, BackwardState<T>& bp) {
      if (!bp.wants(ln)) return;
      auto& d = bp.acc(ln, sz);
      const T scale = g[0] / T(rows.size());
      for (int b : rows)
        d[static_cast<size_t>(int64_t(b) * n + class_index - 1)] -= scale;
    }));
  }
  return out;
}

/// Sparsity penalty: lambda * (batch mean of the map's L1 norm).
template <typename T>
Tensor<T> attention_l1_penalty(const Tensor<T>& attention_map, double lambda) {
  if (lambda < 0) fail("attention_l1_penalty: lambda must be >= 0");
  return scale(asum_batch_mean(attention_map), T(lambda));
}

// ---------------------------------------------------------------------------
// training steps
// ---------------------------------------------------------------------------

struct TrainConfig {
  int batch_size = 128;
  int max_epochs = 100;
  int patience = 10;
  double validation_fraction = 0.10;
  double l1_coefficient = 1e-4;
  uint64_t seed = 1;
  OptimConfig optim;

  void validate() const {
    if (batch_size < 1) fail("train: batch_size must be >= 1");
    if (max_epochs < 1) fail("train: max_epochs must be >= 1");
    if (patience < 1) fail("train: patience must be >= 1");
    if (validation_fraction <= 0 || validation_fraction >= 1)
      fail("train: validation_fraction must be in (0,1), got " +
           std::to_string(validation_fraction));
    if (l1_coefficient < 0) fail("train: l1_coefficient must be >= 0");
    optim.validate();
  }
};

template <typename T>
struct StepLosses {
  double judge = 0;
  std::vector<double> advocates;   // loss per module; meaningful where updated
  std::vector<char> updated;       // whether advocate i stepped this batch
};

/// One interleaved advocacy update (Algorithm 1 on a minibatch): a single
/// shared forward, gradients of the judge loss w.r.t. the judge partition
/// and of each advocate loss (+ L1 penalty) w.r.t. that advocate's partition,
/// all evaluated at the pre-step parameters, then Adam applied to the judge,
/// each advocate in ascending class order, and the shared encoder once (its
/// gradient is the sum over this step's advocate losses).
template <typename T>
StepLosses<T> advocacy_train_step(Model<T>& model, const Tensor<T>& x,
                                  const std::vector<int>& y, const TrainConfig& cfg,
                                  bool honest) {
  if (!is_advocacy_trained(model.config().variant))
    fail("advocacy_train_step: variant '" + variant_name(model.config().variant) +
         "' trains end-to-end; use baseline_train_step");
  const int n = model.config().num_classes;
  auto& parts = model.partitions();
  Partition<T>& judge = parts[0];
  const bool shared = model.config().shared_encoder;
  Partition<T>* encoder = shared ? &parts.back() : nullptr;

  Tape<T> tape;
  auto params = model.all_trainable();
  TapeScope<T> scope(tape, params);

  ForwardOptions opt;
  opt.advocates_train = true;
  opt.judge_train = !judge.frozen;  // frozen judge stays in eval (running stats untouched)
  ForwardResult<T> fwd = model.forward(x, opt);

  StepLosses<T> losses;
  losses.advocates.assign(static_cast<size_t>(n), 0.0);
  losses.updated.assign(static_cast<size_t>(n), 0);

  Tensor<T> judge_ce = ce_loss(fwd.log_probs, y);
  losses.judge = static_cast<double>(judge_ce.item());

  GradMap<T> judge_grads;
  if (!judge.frozen) {
    std::vector<const Tensor<T>*> wrt(judge.tensors.begin(), judge.tensors.end());
    judge_grads = backward(judge_ce, wrt);
  }

  // Per-advocate gradients from the same forward. With a shared encoder the
  // traversal stops at the encoder output; its cotangents are summed across
  // advocates and pushed through the encoder once afterwards.
  std::vector<GradMap<T>> adv_grads(static_cast<size_t>(n));
  std::vector<T> encoder_seed;
  const Tensor<T>* enc_out = shared ? &fwd.encoder_out[0] : nullptr;
  for (int i = 1; i <= n; ++i) {
    Partition<T>& part = parts[static_cast<size_t>(i)];
    if (part.frozen) continue;
    Tensor<T> adv = honest ? honest_advocate_loss(fwd.log_probs, i, y)
                           : advocate_loss(fwd.log_probs, i);
    if (!adv.recorded()) continue;  // honest mode, class absent from batch
    Tensor<T> total = add(adv, attention_l1_penalty(fwd.attention[static_cast<size_t>(i - 1)],
                                                    cfg.l1_coefficient));
    losses.advocates[static_cast<size_t>(i - 1)] = static_cast<double>(total.item());
    losses.updated[static_cast<size_t>(i - 1)] = 1;

    std::vector<const Tensor<T>*> wrt(part.tensors.begin(), part.tensors.end());
    if (shared) wrt.push_back(enc_out);
    adv_grads[static_cast<size_t>(i - 1)] = backward(total, wrt);
    if (shared) {
      if (const auto* ge = adv_grads[static_cast<size_t>(i - 1)].find(*enc_out)) {
        if (encoder_seed.empty()) encoder_seed.assign(ge->size(), T(0));
        for (size_t k = 0; k < ge->size(); ++k) encoder_seed[k] += (*ge)[k];
      }
    }
  }

  GradMap<T> encoder_grads;
  if (shared && !encoder->frozen && !encoder_seed.empty()) {
    std::vector<SeedRoot<T>> roots;
    roots.push_back(SeedRoot<T>{enc_out, std::move(encoder_seed)});
    std::vector<const Tensor<T>*> wrt(encoder->tensors.begin(), encoder->tensors.end());
    encoder_grads = backward_seeded(tape, roots, wrt);
  }

  // All gradients are in hand; apply in the contract order.
  if (!judge.frozen) adam_step(judge, judge_grads, model.adam_state(0), cfg.optim);
  for (int i = 1; i <= n; ++i) {
    if (!losses.updated[static_cast<size_t>(i - 1)]) continue;
    adam_step(parts[static_cast<size_t>(i)], adv_grads[static_cast<size_t>(i - 1)],
              model.adam_state(static_cast<size_t>(i)), cfg.optim);
  }
  if (shared && !encoder->frozen && encoder_grads.entries() > 0)
    adam_step(*encoder, encoder_grads, model.adam_state(parts.size() - 1), cfg.optim);
  return losses;
}

/// Standard end-to-end step for the attention baselines: one cross-entropy
/// loss plus the L1 penalties, one backward, one Adam step over every
/// partition.
template <typename T>
double baseline_train_step(Model<T>& model, const Tensor<T>& x, const std::vector<int>& y,
                           const TrainConfig& cfg) {
  if (is_advocacy_trained(model.config().variant))
    fail("baseline_train_step: variant '" + variant_name(model.config().variant) +
         "' uses interleaved advocacy updates");
  Tape<T> tape;
  auto params = model.all_trainable();
  TapeScope<T> scope(tape, params);

  ForwardResult<T> fwd = model.forward(x, ForwardOptions::train());
  Tensor<T> loss = ce_loss(fwd.log_probs, y);
  for (const auto& a : fwd.attention)
    loss = add(loss, attention_l1_penalty(a, cfg.l1_coefficient));
  const double value = static_cast<double>(loss.item());

  std::vector<const Tensor<T>*> wrt(params.begin(), params.end());
  GradMap<T> grads = backward(loss, wrt);
  auto& parts = model.partitions();
  for (size_t i = 0; i < parts.size(); ++i) {
    if (parts[i].frozen) continue;
    adam_step(parts[i], grads, model.adam_state(i), cfg.optim);
  }
  return value;
}

/// Dispatch on the model's variant.
template <typename T>
double train_step(Model<T>& model, const Tensor<T>& x, const std::vector<int>& y,
                  const TrainConfig& cfg) {
  if (is_advocacy_trained(model.config().variant)) {
    auto losses = advocacy_train_step(model, x, y, cfg,
                                      model.config().variant == Variant::kHonestAdvocacy);
    return losses.judge;
  }
  return baseline_train_step(model, x, y, cfg);
}

// ---------------------------------------------------------------------------
// evaluation / fit
// ---------------------------------------------------------------------------

template <typename T>
struct EvalResult {
  double mean_ce = 0;
  double accuracy = 0;
  std::vector<int> predicted;       // 1-based
  std::vector<double> probs;        // row-major [count, num_classes]
};

template <typename T>
EvalResult<T> evaluate(Model<T>& model, const LabeledDataset& ds, int batch_size = 256) {
  if (ds.size() == 0) fail("evaluate: empty dataset");
  EvalResult<T> r;
  const int n = model.config().num_classes;
  r.predicted.reserve(ds.size());
  r.probs.reserve(ds.size() * static_cast<size_t>(n));
  double ce_total = 0;
  size_t correct = 0;
  std::vector<int> order(ds.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  for (size_t at = 0; at < order.size(); at += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(order.size(), at + static_cast<size_t>(batch_size));
    std::vector<int> idx(order.begin() + static_cast<int64_t>(at),
                         order.begin() + static_cast<int64_t>(end));
    auto [x, y] = make_batch<T>(ds, idx);
    ForwardResult<T> fwd = model.forward(x, ForwardOptions::eval());
    auto preds = Model<T>::argmax_rows(fwd.log_probs);
    for (size_t b = 0; b < idx.size(); ++b) {
      ce_total -= static_cast<double>(fwd.log_probs[int64_t(b) * n + (y[b] - 1)]);
      if (preds[b] == y[b]) ++correct;
      r.predicted.push_back(preds[b]);
      for (int c = 0; c < n; ++c)
        r.probs.push_back(std::exp(static_cast<double>(fwd.log_probs[int64_t(b) * n + c])));
    }
  }
  r.mean_ce = ce_total / static_cast<double>(ds.size());
  r.accuracy = static_cast<double>(correct) / static_cast<double>(ds.size());
  return r;
}

struct EpochStats {
  double train_loss = 0, val_loss = 0, val_accuracy = 0;
};

struct RunRecord {
  std::string variant;
  uint64_t seed = 0;
  std::vector<EpochStats> epochs;
  int best_epoch = 0;
  std::map<std::string, uint64_t> step_counters;
  double test_accuracy = -1, test_ce = -1;  // filled once the harness evaluates
  double wall_seconds = 0;

  /// Key-value block plus a per-epoch table. Wall time is kept out of the
  /// deterministic form so equal runs serialize identically.
  std::string to_text(bool include_wall = true) const {
    char buf[160];
    std::string s;
    s += "variant = " + variant + "\n";
    s += "seed = " + std::to_string(seed) + "\n";
    s += "epochs_run = " + std::to_string(epochs.size()) + "\n";
    s += "best_epoch = " + std::to_string(best_epoch) + "\n";
    for (const auto& [name, t] : step_counters)
      s += "steps." + name + " = " + std::to_string(t) + "\n";
    if (test_accuracy >= 0) {
      std::snprintf(buf, sizeof buf, "test_accuracy = %.9g\ntest_ce = %.9g\n", test_accuracy,
                    test_ce);
      s += buf;
    }
    if (include_wall) {
      std::snprintf(buf, sizeof buf, "wall_seconds = %.3f\n", wall_seconds);
      s += buf;
    }
    s += "[epochs]\n";
    s += "epoch, train_loss, val_loss, val_accuracy\n";
    for (size_t e = 0; e < epochs.size(); ++e) {
      std::snprintf(buf, sizeof buf, "%zu, %.9g, %.9g, %.9g\n", e + 1, epochs[e].train_loss,
                    epochs[e].val_loss, epochs[e].val_accuracy);
      s += buf;
    }
    return s;
  }
};

namespace detail {

template <typename T>
struct ParamSnapshot {
  std::vector<std::vector<T>> values;

  static ParamSnapshot take(Model<T>& model) {
    ParamSnapshot s;
    for (auto* t : model.all_trainable()) s.values.push_back(t->data());
    for (auto* t : model.all_running()) s.values.push_back(t->data());
    return s;
  }

  void restore(Model<T>& model) const {
    size_t k = 0;
    for (auto* t : model.all_trainable()) t->data() = values[k++];
    for (auto* t : model.all_running()) t->data() = values[k++];
  }
};

}  // namespace detail

/// Epoch loop with a seeded 10% validation split, per-epoch shuffling, and
/// early stopping: training stops after `patience` consecutive epochs
/// without a validation-loss improvement and the best epoch's parameters
/// are restored.
template <typename T>
RunRecord fit(Model<T>& model, const LabeledDataset& train_pool, const TrainConfig& cfg) {
  cfg.validate();
  if (train_pool.size() == 0) fail("fit: empty dataset");
  if (train_pool.size() < 2) fail("fit: need at least 2 samples for a train/val split");
  const auto t0 = std::chrono::steady_clock::now();

  auto [train_idx, val_idx] = train_val_split(train_pool.size(), cfg.validation_fraction,
                                              cfg.seed);
  LabeledDataset val_set = subset(train_pool, val_idx);

  RunRecord rec;
  rec.variant = variant_name(model.config().variant);
  rec.seed = cfg.seed;

  double best_val = std::numeric_limits<double>::infinity();
  int fails = 0;
  detail::ParamSnapshot<T> best;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    auto batches = batch_indices(train_idx.size(), cfg.batch_size, cfg.seed,
                                 static_cast<uint64_t>(epoch));
    double loss_sum = 0;
    size_t sample_sum = 0;
    for (const auto& b : batches) {
      std::vector<int> idx;
      idx.reserve(b.size());
      for (int j : b) idx.push_back(train_idx[static_cast<size_t>(j)]);
      auto [x, y] = make_batch<T>(train_pool, idx);
      loss_sum += train_step(model, x, y, cfg) * static_cast<double>(idx.size());
      sample_sum += idx.size();
    }
    EvalResult<T> val = evaluate(model, val_set, cfg.batch_size);
    rec.epochs.push_back({loss_sum / static_cast<double>(sample_sum), val.mean_ce,
                          val.accuracy});
    if (val.mean_ce < best_val) {
      best_val = val.mean_ce;
      rec.best_epoch = epoch;
      best = detail::ParamSnapshot<T>::take(model);
      fails = 0;
    } else if (++fails >= cfg.patience) {
      break;
    }
  }
  if (!best.values.empty()) best.restore(model);
  rec.step_counters = partition_step_counters(model);
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

struct FrozenJudgeReport {
  double accuracy_before = 0;
  double accuracy_after = 0;
  int epochs = 0;
};

/// Freeze the judge and keep updating the advocates. The judge partition and
/// its running statistics stay bit-identical (the judge runs in eval mode);
/// accuracy is measured on eval_set before and after.
template <typename T>
FrozenJudgeReport continue_with_frozen_judge(Model<T>& model, const LabeledDataset& train_pool,
                                             const LabeledDataset& eval_set, int epochs,
                                             const TrainConfig& cfg) {
  if (!is_advocacy_trained(model.config().variant))
    fail("continue_with_frozen_judge: requires an advocacy-trained variant");
  if (epochs < 0) fail("continue_with_frozen_judge: epochs must be >= 0");
  FrozenJudgeReport rep;
  rep.epochs = epochs;
  rep.accuracy_before = evaluate(model, eval_set, cfg.batch_size).accuracy;
  model.partition("judge").frozen = true;
  const bool honest = model.config().variant == Variant::kHonestAdvocacy;
  for (int epoch = 1; epoch <= epochs; ++epoch) {
    auto batches = batch_indices(train_pool.size(), cfg.batch_size, cfg.seed ^ 0x66726F7A,
                                 static_cast<uint64_t>(epoch));
    for (const auto& idx : batches) {
      auto [x, y] = make_batch<T>(train_pool, idx);
      advocacy_train_step(model, x, y, cfg, honest);
    }
  }
  rep.accuracy_after = evaluate(model, eval_set, cfg.batch_size).accuracy;
  return rep;
}

}  // namespace advo
