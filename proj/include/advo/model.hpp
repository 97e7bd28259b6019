#pragma once

#include <map>

#include "advo/layers.hpp"
#include "advo/optim.hpp"
#include "advo/rng.hpp"

namespace advo {

enum class Variant { kAdvocacy, kHonestAdvocacy, kMultiAttention, kAttention };

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kAdvocacy: return "advocacy";
    case Variant::kHonestAdvocacy: return "honest_advocacy";
    case Variant::kMultiAttention: return "multi_attention";
    case Variant::kAttention: return "attention";
  }
  return "?";
}

inline Variant variant_from_name(const std::string& s) {
  if (s == "advocacy") return Variant::kAdvocacy;
  if (s == "honest_advocacy") return Variant::kHonestAdvocacy;
  if (s == "multi_attention") return Variant::kMultiAttention;
  if (s == "attention") return Variant::kAttention;
  fail("unknown model variant '" + s + "' (expected advocacy, honest_advocacy, "
       "multi_attention or attention)");
}

inline bool is_advocacy_trained(Variant v) {
  return v == Variant::kAdvocacy || v == Variant::kHonestAdvocacy;
}

struct ModelConfig {
  Variant variant = Variant::kAdvocacy;
  int num_classes = 0;
  int in_channels = 1;
  int height = 28, width = 28;
  bool shared_encoder = true;
  int judge_blocks = 0;     // 0 = plain plan, 1..5 = residual capacity variant
  int advocate_blocks = 0;  // 0 = plain plan, 1..3

  void validate() const {
    if (num_classes < 2) fail("model: num_classes must be >= 2");
    if (in_channels < 1) fail("model: in_channels must be >= 1");
    if (height % 4 != 0 || width % 4 != 0)
      fail("model: input extent " + std::to_string(height) + "x" + std::to_string(width) +
           " must be divisible by 4 (two 2x pools)");
    if (judge_blocks < 0 || judge_blocks > 5) fail("model: judge_blocks must be in 0..5");
    if (advocate_blocks < 0 || advocate_blocks > 3)
      fail("model: advocate_blocks must be in 0..3");
  }
};

struct ForwardOptions {
  bool advocates_train = false;
  bool judge_train = false;
  static ForwardOptions train() { return {true, true}; }
  static ForwardOptions eval() { return {false, false}; }
};

/// Everything one forward pass produces. Attention maps and evidence are
/// indexed by attention module (class order for advocacy variants).
template <typename T>
struct ForwardResult {
  std::vector<Tensor<T>> attention;  // a^i, each in (0,1)
  std::vector<Tensor<T>> evidence;   // e_i = a^i (*) x
  Tensor<T> evidence_stack;          // E, channel-concatenated in class order
  Tensor<T> log_probs;               // [B, N]
  std::vector<Tensor<T>> encoder_out;  // latent per module (single entry when shared)
};

/// Advocates + judge with per-subnetwork parameter partitions. One instance
/// covers all four variants; the variant decides the number of attention
/// modules and which training procedure applies.
template <typename T>
class Model {
 public:
  Model(const ModelConfig& cfg, uint64_t master_seed) : cfg_(cfg) {
    cfg_.validate();
    Rng init = derive_stream(master_seed, Stream::kInit);
    dropout_rng_ = derive_stream(master_seed, Stream::kDropout);

    const int modules = attention_modules();
    const Shape input{1, cfg_.in_channels, cfg_.height, cfg_.width};
    const auto enc_plan = build_advocate_encoder(cfg_.in_channels, cfg_.advocate_blocks);
    const auto dec_plan = build_advocate_decoder(cfg_.in_channels);
    const Shape latent = stack_output_shape(enc_plan, input);
    const Shape restored = stack_output_shape(dec_plan, latent);
    if (restored[2] != cfg_.height || restored[3] != cfg_.width)
      fail("model: decoder restores " + shape_str(restored) + ", expected input extent");

    if (cfg_.shared_encoder) {
      encoders_.push_back(make_stack<T>(enc_plan, init));
    } else {
      for (int i = 0; i < modules; ++i) encoders_.push_back(make_stack<T>(enc_plan, init));
    }
    for (int i = 0; i < modules; ++i) decoders_.push_back(make_stack<T>(dec_plan, init));

    const int evidence_ch = modules * cfg_.in_channels;
    judge_ = make_stack<T>(
        build_judge(cfg_.num_classes, evidence_ch, cfg_.height, cfg_.width, cfg_.judge_blocks),
        init);

    // Partition order is the update order: judge, advocates ascending,
    // shared encoder last.
    partitions_.push_back({"judge", {}, false});
    collect_trainable(judge_, partitions_.back().tensors);
    for (int i = 0; i < modules; ++i) {
      partitions_.push_back({"advocate_" + std::to_string(i + 1), {}, false});
      if (!cfg_.shared_encoder)
        collect_trainable(encoders_[static_cast<size_t>(i)], partitions_.back().tensors);
      collect_trainable(decoders_[static_cast<size_t>(i)], partitions_.back().tensors);
    }
    if (cfg_.shared_encoder) {
      partitions_.push_back({"shared_encoder", {}, false});
      collect_trainable(encoders_[0], partitions_.back().tensors);
    }

    adam_.resize(partitions_.size());
    for (size_t i = 0; i < partitions_.size(); ++i) adam_[i].init_for(partitions_[i]);
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  int attention_modules() const {
    return cfg_.variant == Variant::kAttention ? 1 : cfg_.num_classes;
  }

  /// Run one advocate: attention map and evidence for module i (1-based).
  std::pair<Tensor<T>, Tensor<T>> advocate_forward(const Tensor<T>& x, int class_index,
                                                   const ForwardOptions& opt = {}) {
    if (class_index < 1 || class_index > attention_modules())
      fail("advocate_forward: class index " + std::to_string(class_index) + " out of range 1.." +
           std::to_string(attention_modules()));
    validate_input(x);
    auto& enc = encoders_[cfg_.shared_encoder ? 0 : static_cast<size_t>(class_index - 1)];
    Tensor<T> latent = enc.forward(x, opt.advocates_train, dropout_rng_);
    Tensor<T> a = decoders_[static_cast<size_t>(class_index - 1)].forward(
        latent, opt.advocates_train, dropout_rng_);
    return {a, mul(a, x)};
  }

  ForwardResult<T> forward(const Tensor<T>& x, const ForwardOptions& opt = {}) {
    validate_input(x);
    ForwardResult<T> r;
    const int modules = attention_modules();
    if (cfg_.shared_encoder)
      r.encoder_out.push_back(encoders_[0].forward(x, opt.advocates_train, dropout_rng_));
    for (int i = 0; i < modules; ++i) {
      const Tensor<T>& latent =
          cfg_.shared_encoder
              ? r.encoder_out[0]
              : r.encoder_out.emplace_back(encoders_[static_cast<size_t>(i)].forward(
                    x, opt.advocates_train, dropout_rng_));
      Tensor<T> a = decoders_[static_cast<size_t>(i)].forward(latent, opt.advocates_train,
                                                              dropout_rng_);
      r.evidence.push_back(mul(a, x));
      r.attention.push_back(std::move(a));
    }
    r.evidence_stack = modules > 1 ? concat_channels(r.evidence) : r.evidence[0];
    Tensor<T> logits = judge_.forward(r.evidence_stack, opt.judge_train, dropout_rng_);
    r.log_probs = log_softmax(logits, 1);
    return r;
  }

  /// Eval-mode class predictions (1-based); ties break to the lowest index.
  std::vector<int> predict(const Tensor<T>& x) {
    ForwardResult<T> r = forward(x, ForwardOptions::eval());
    return argmax_rows(r.log_probs);
  }

  static std::vector<int> argmax_rows(const Tensor<T>& log_probs) {
    const int batch = log_probs.dim(0), n = log_probs.dim(1);
    std::vector<int> out(static_cast<size_t>(batch));
    for (int b = 0; b < batch; ++b) {
      const T* row = log_probs.ptr() + int64_t(b) * n;
      int best = 0;
      for (int c = 1; c < n; ++c)
        if (row[c] > row[best]) best = c;
      out[static_cast<size_t>(b)] = best + 1;
    }
    return out;
  }

  std::vector<Partition<T>>& partitions() { return partitions_; }
  const std::vector<Partition<T>>& partitions() const { return partitions_; }

  Partition<T>& partition(const std::string& name) {
    for (auto& p : partitions_)
      if (p.name == name) return p;
    fail("model: no partition named '" + name + "'");
  }

  AdamState<T>& adam_state(size_t partition_index) { return adam_.at(partition_index); }

  std::vector<Tensor<T>*> all_trainable() {
    std::vector<Tensor<T>*> out;
    for (auto& p : partitions_)
      for (auto* t : p.tensors) out.push_back(t);
    return out;
  }

  /// Batchnorm running buffers in a fixed enumeration order (checkpointing).
  std::vector<Tensor<T>*> all_running() {
    std::vector<Tensor<T>*> out;
    for (auto& e : encoders_) collect_running(e, out);
    for (auto& d : decoders_) collect_running(d, out);
    collect_running(judge_, out);
    return out;
  }

  Rng& dropout_rng() { return dropout_rng_; }
  LayerStack<T>& judge_stack() { return judge_; }
  std::vector<LayerStack<T>>& decoder_stacks() { return decoders_; }
  std::vector<LayerStack<T>>& encoder_stacks() { return encoders_; }

 private:
  void validate_input(const Tensor<T>& x) const {
    const Shape expect{x.rank() >= 1 ? x.dim(0) : 1, cfg_.in_channels, cfg_.height, cfg_.width};
    if (x.rank() != 4 || x.dim(1) != cfg_.in_channels || x.dim(2) != cfg_.height ||
        x.dim(3) != cfg_.width)
      fail("model: input shape " + shape_str(x.shape()) + " does not match configured " +
           shape_str(expect));
  }

  ModelConfig cfg_;
  std::vector<LayerStack<T>> encoders_;  // one if shared, else per advocate
  std::vector<LayerStack<T>> decoders_;
  LayerStack<T> judge_;
  std::vector<Partition<T>> partitions_;
  std::vector<AdamState<T>> adam_;
  Rng dropout_rng_;
};

/// Current Adam step counter per partition (update-interleaving probe).
template <typename T>
std::map<std::string, uint64_t> partition_step_counters(Model<T>& model) {
  std::map<std::string, uint64_t> out;
  for (size_t i = 0; i < model.partitions().size(); ++i)
    out[model.partitions()[i].name] = model.adam_state(i).t;
  return out;
}

}  // namespace advo
