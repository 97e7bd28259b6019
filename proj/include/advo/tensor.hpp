#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace advo {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

[[noreturn]] inline void fail(const std::string& msg) {
  throw std::invalid_argument(msg);
}

template <typename T>
class Tape;

/// Dense row-major n-d array. Copies alias the underlying buffer; use
/// clone() for a deep copy. A tensor optionally carries a handle into a
/// Tape when it participates in a differentiated forward pass.
template <typename T>
class Tensor {
 public:
  Tensor() : data_(std::make_shared<std::vector<T>>()) {}

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    validate_shape();
    data_ = std::make_shared<std::vector<T>>(shape_numel(shape_), T(0));
  }

  Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)) {
    validate_shape();
    if (static_cast<int64_t>(values.size()) != shape_numel(shape_))
      fail("tensor: " + std::to_string(values.size()) + " values for shape " + shape_str(shape_));
    data_ = std::make_shared<std::vector<T>>(std::move(values));
  }

  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  static Tensor full(Shape shape, T v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data()) x = v;
    return t;
  }

  const Shape& shape() const { return shape_; }
  int dim(size_t i) const { return shape_.at(i); }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t size() const { return static_cast<int64_t>(data_->size()); }
  bool empty() const { return data_->empty(); }

  std::vector<T>& data() { return *data_; }
  const std::vector<T>& data() const { return *data_; }
  T* ptr() { return data_->data(); }
  const T* ptr() const { return data_->data(); }
  T operator[](int64_t i) const { return (*data_)[i]; }

  T item() const {
    if (size() != 1) fail("item: tensor is not scalar, shape " + shape_str(shape_));
    return (*data_)[0];
  }

  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = std::make_shared<std::vector<T>>(*data_);
    return t;
  }

  /// Identity of the underlying buffer; stable across tape attach/detach.
  const void* buffer_id() const { return data_.get(); }
  std::shared_ptr<std::vector<T>> storage() const { return data_; }

  bool recorded() const { return node_ >= 0; }
  int node() const { return node_; }
  Tape<T>* tape() const { return tape_; }
  void bind(Tape<T>* tape, int node) { tape_ = tape; node_ = node; }
  void unbind() { tape_ = nullptr; node_ = -1; }

 private:
  void validate_shape() const {
    if (shape_.empty()) fail("tensor: empty shape");
    for (int d : shape_)
      if (d <= 0) fail("tensor: non-positive extent in shape " + shape_str(shape_));
  }

  std::shared_ptr<std::vector<T>> data_;
  Shape shape_;
  Tape<T>* tape_ = nullptr;
  int node_ = -1;
};

/// Per-backward-call scratch: gradient buffers per tape node plus the
/// "needed" mask (nodes whose subtree contains a requested tensor). Op
/// backward closures consult wants() so unused branches cost nothing.
template <typename T>
class BackwardState {
 public:
  explicit BackwardState(size_t nodes) : grads_(nodes), needed_(nodes, 0) {}

  bool wants(int node) const { return node >= 0 && needed_[static_cast<size_t>(node)]; }

  /// Accumulation target for node, allocated zero-filled on first use.
  std::vector<T>& acc(int node, size_t n) {
    auto& g = grads_[static_cast<size_t>(node)];
    if (g.empty()) g.assign(n, T(0));
    return g;
  }

  void add(int node, const T* g, size_t n) {
    auto& dst = acc(node, n);
    for (size_t i = 0; i < n; ++i) dst[i] += g[i];
  }

  std::vector<std::vector<T>> grads_;
  std::vector<char> needed_;
};

/// Reverse-mode tape: append-only node list, topological by construction
/// (a node's inputs always precede it). One tape per forward pass; backward
/// may be invoked any number of times and never mutates tape state.
template <typename T>
class Tape {
 public:
  using BackFn = std::function<void(const std::vector<T>&, BackwardState<T>&)>;

  struct Node {
    std::vector<int> inputs;
    BackFn back;  // null for leaves
  };

  /// Register a leaf (parameter or watched input).
  int watch(Tensor<T>& t) {
    if (t.recorded()) {
      if (t.tape() != this) fail("watch: tensor already bound to another tape");
      return t.node();
    }
    nodes_.push_back(Node{{}, nullptr});
    int id = static_cast<int>(nodes_.size()) - 1;
    t.bind(this, id);
    return id;
  }

  int record(std::vector<int> inputs, BackFn back) {
    nodes_.push_back(Node{std::move(inputs), std::move(back)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  size_t node_count() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }

 private:
  std::vector<Node> nodes_;
};

/// RAII attachment of parameters to a tape for one forward/backward cycle.
template <typename T>
class TapeScope {
 public:
  TapeScope(Tape<T>& tape, const std::vector<Tensor<T>*>& params) : params_(params) {
    for (auto* p : params_) tape.watch(*p);
  }
  ~TapeScope() {
    for (auto* p : params_) p->unbind();
  }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  std::vector<Tensor<T>*> params_;
};

/// Gradients keyed by buffer identity, so lookups survive tape detachment.
template <typename T>
class GradMap {
 public:
  const std::vector<T>* find(const Tensor<T>& t) const {
    auto it = m_.find(t.buffer_id());
    return it == m_.end() ? nullptr : &it->second;
  }

  bool contains(const Tensor<T>& t) const { return find(t) != nullptr; }

  /// Gradient as a dense vector; zeros when the tensor was unreachable.
  std::vector<T> dense(const Tensor<T>& t) const {
    if (const auto* g = find(t)) return *g;
    return std::vector<T>(static_cast<size_t>(t.size()), T(0));
  }

  void put(const void* key, std::vector<T> g) { m_[key] = std::move(g); }
  size_t entries() const { return m_.size(); }

 private:
  std::unordered_map<const void*, std::vector<T>> m_;
};

template <typename T>
struct SeedRoot {
  const Tensor<T>* value;
  std::vector<T> seed;  // same element count as *value
};

namespace detail {

template <typename T>
GradMap<T> run_backward(Tape<T>& tape, const std::vector<SeedRoot<T>>& roots,
                        const std::vector<const Tensor<T>*>& wrt) {
  const auto& nodes = tape.nodes();
  BackwardState<T> state(nodes.size());

  // Mark requested tensors, then propagate "subtree contains a request".
  for (const auto* t : wrt) {
    if (t->recorded() && t->tape() == &tape)
      state.needed_[static_cast<size_t>(t->node())] = 1;
  }
  for (size_t i = 0; i < nodes.size(); ++i) {
    if (state.needed_[i]) continue;
    for (int j : nodes[i].inputs) {
      if (j >= 0 && state.needed_[static_cast<size_t>(j)]) {
        state.needed_[i] = 1;
        break;
      }
    }
  }

  int start = -1;
  for (const auto& r : roots) {
    if (!r.value->recorded() || r.value->tape() != &tape)
      fail("backward: root tensor is not recorded on this tape");
    if (static_cast<int64_t>(r.seed.size()) != r.value->size())
      fail("backward: seed size mismatch for root");
    state.add(r.value->node(), r.seed.data(), r.seed.size());
    start = std::max(start, r.value->node());
  }

  for (int i = start; i >= 0; --i) {
    const auto& g = state.grads_[static_cast<size_t>(i)];
    const auto& node = nodes[static_cast<size_t>(i)];
    if (g.empty() || !node.back) continue;
    bool useful = false;
    for (int j : node.inputs)
      if (state.wants(j)) { useful = true; break; }
    if (useful) node.back(g, state);
  }

  GradMap<T> out;
  std::unordered_set<int> taken;
  for (const auto* t : wrt) {
    if (!t->recorded() || t->tape() != &tape) continue;
    int n = t->node();
    if (!taken.insert(n).second) continue;
    auto& g = state.grads_[static_cast<size_t>(n)];
    if (!g.empty()) out.put(t->buffer_id(), std::move(g));
  }
  return out;
}

}  // namespace detail

/// Reverse-mode gradients of a scalar loss with respect to the listed
/// tensors. Tensors absent from the graph simply get no entry (zero
/// gradient); two calls on the same tape return bit-identical results.
template <typename T>
GradMap<T> backward(const Tensor<T>& loss, const std::vector<const Tensor<T>*>& wrt) {
  if (loss.size() != 1)
    fail("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  if (!loss.recorded())
    fail("backward: loss is not recorded on a tape");
  std::vector<SeedRoot<T>> roots;
  roots.push_back(SeedRoot<T>{&loss, {T(1)}});
  return detail::run_backward(*loss.tape(), roots, wrt);
}

/// Vector-Jacobian products from arbitrary (tensor, cotangent) roots.
/// Used to resume backpropagation from an intermediate activation.
template <typename T>
GradMap<T> backward_seeded(Tape<T>& tape, const std::vector<SeedRoot<T>>& roots,
                           const std::vector<const Tensor<T>*>& wrt) {
  return detail::run_backward(tape, roots, wrt);
}

namespace detail {

/// Tape for the result of an op, or null when no input is recorded.
/// Mixing tapes in one op is a usage bug.
template <typename T>
Tape<T>* result_tape(std::initializer_list<const Tensor<T>*> inputs) {
  Tape<T>* tape = nullptr;
  for (const auto* t : inputs) {
    if (!t->recorded()) continue;
    if (tape && tape != t->tape()) fail("op: inputs recorded on different tapes");
    tape = t->tape();
  }
  return tape;
}

}  // namespace detail

}  // namespace advo
