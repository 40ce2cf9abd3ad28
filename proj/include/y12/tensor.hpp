#pragma once

// Dense N-d tensor (N,C,H,W row-major for feature maps) plus the reverse-mode
// tape. Tensors are value types sharing immutable storage; ops produce fresh
// tensors and, under an active Tape::Scope, record backward closures.

#include <functional>
#include <memory>
#include <type_traits>
#include <unordered_map>
#include <utility>

#include "y12/common.hpp"

namespace y12 {

template <typename T>
class Tape;

template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>, "Tensor supports fp32/fp64 only");

 public:
  Tensor() : shape_{0}, data_(std::make_shared<std::vector<T>>()) {}

  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<T>>(y12::numel(shape_), fill)) {
    set_requires_grad(requires_grad);
  }

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<T>>(std::move(values))) {
    if (data_->size() != y12::numel(shape_))
      throw ShapeError("tensor: " + std::to_string(data_->size()) +
                       " values do not fill shape " + shape_str(shape_));
    set_requires_grad(requires_grad);
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return Tensor(std::move(shape), T(0), requires_grad);
  }
  // View over existing storage (no copy); caller guarantees the element count.
  static Tensor sharing(Shape shape, std::shared_ptr<std::vector<T>> storage) {
    if (!storage || storage->size() != y12::numel(shape))
      throw ShapeError("sharing: storage does not fill shape " + shape_str(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(storage);
    return t;
  }
  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    return Tensor(std::move(shape), value, requires_grad);
  }
  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const { return data_->size(); }

  const std::vector<T>& values() const { return *data_; }
  const T* data() const { return data_->data(); }

  // Mutable access to the shared storage. Reserved for explicit exclusive
  // steps (optimizer updates, running-stat refresh); anything recorded on a
  // tape must not be mutated.
  std::vector<T>& values_mut() { return *data_; }

  const std::shared_ptr<std::vector<T>>& storage() const { return data_; }

  T operator[](std::size_t flat) const { return (*data_)[flat]; }

  T at(std::size_t i) const { return (*data_)[check_index({i})]; }
  T at(std::size_t i, std::size_t j) const { return (*data_)[check_index({i, j})]; }
  T at(std::size_t i, std::size_t j, std::size_t k) const {
    return (*data_)[check_index({i, j, k})];
  }
  T at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return (*data_)[check_index({i, j, k, l})];
  }

  T item() const {
    if (numel() != 1)
      throw UsageError("item(): tensor has " + std::to_string(numel()) + " elements");
    return (*data_)[0];
  }

  bool requires_grad() const { return requires_grad_; }

  Tensor& set_requires_grad(bool rg) {
    requires_grad_ = rg;
    if (rg && !grad_) grad_ = std::make_shared<std::vector<T>>(numel(), T(0));
    return *this;
  }

  // Accumulated gradient of this leaf; null until requires_grad is set.
  const std::vector<T>* grad() const { return grad_ ? grad_.get() : nullptr; }
  const std::shared_ptr<std::vector<T>>& grad_storage() const { return grad_; }

  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), T(0));
  }

  Tensor detach() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = data_;
    return t;
  }

  // Copy with its own storage (used before in-place perturbation in tests).
  Tensor clone() const {
    Tensor t(shape_, *data_);
    return t;
  }

  void backward() const;
  void backward(const Tensor& seed) const;

  // Autograd wiring; set by ops and the tape, not by user code.
  Tape<T>* tape() const { return tape_; }
  int node() const { return node_; }
  void bind_autograd(Tape<T>* tape, int node) const {
    tape_ = tape;
    node_ = node;
    requires_grad_ = true;
  }

 private:
  std::size_t check_index(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != shape_.size())
      throw ShapeError("at(): " + std::to_string(idx.size()) + " indices for rank " +
                       std::to_string(shape_.size()));
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t i : idx) {
      if (i >= shape_[axis])
        throw ShapeError("at(): index " + std::to_string(i) + " out of range on axis " +
                         std::to_string(axis) + " with extent " + std::to_string(shape_[axis]));
      flat = flat * shape_[axis] + i;
      ++axis;
    }
    return flat;
  }

  Shape shape_;
  std::shared_ptr<std::vector<T>> data_;
  mutable bool requires_grad_ = false;
  mutable std::shared_ptr<std::vector<T>> grad_;
  mutable Tape<T>* tape_ = nullptr;
  mutable int node_ = -1;
};

// Recorded computation: a linear list of entries in execution order, so every
// entry's inputs precede it and one reverse sweep visits each entry once.
template <typename T>
class Tape {
 public:
  using Grad = std::vector<T>;
  using BackwardFn = std::function<void(Tape&, const Grad&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape*& active_slot() {
    thread_local Tape* active = nullptr;
    return active;
  }
  static Tape* active() { return active_slot(); }

  // Activates a tape for the current thread for the scope's lifetime.
  class Scope {
   public:
    explicit Scope(Tape& tape) : prev_(active_slot()) { active_slot() = &tape; }
    ~Scope() { active_slot() = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  // Maps a tensor to its node on this tape, registering it as a leaf when it
  // requires grad but has not been seen yet. Returns -1 for constants.
  int ensure_node(const Tensor<T>& t) {
    if (t.tape() == this && t.node() >= 0) return t.node();
    if (t.tape() != nullptr && t.tape() != this && t.node() >= 0)
      throw UsageError("op input belongs to a different tape");
    if (!t.requires_grad()) return -1;
    const void* key = t.grad_storage().get();
    if (auto it = leaf_ids_.find(key); it != leaf_ids_.end()) {
      t.bind_autograd(this, it->second);
      return it->second;
    }
    Node node;
    node.numel = t.numel();
    node.leaf_grad = t.grad_storage();
    nodes_.push_back(std::move(node));
    const int id = static_cast<int>(nodes_.size()) - 1;
    leaf_ids_.emplace(key, id);
    t.bind_autograd(this, id);
    return id;
  }

  // Records an op result; the backward closure receives this tape and the
  // output gradient and accumulates into the input buffers.
  void record(const Tensor<T>& out, std::vector<int> inputs, BackwardFn fn) {
    if (consumed_) throw UsageError("tape already consumed by backward");
    Node node;
    node.inputs = std::move(inputs);
    node.backward = std::move(fn);
    node.numel = out.numel();
    nodes_.push_back(std::move(node));
    out.bind_autograd(this, static_cast<int>(nodes_.size()) - 1);
  }

  // Gradient accumulation buffer for a node, allocated on first touch.
  Grad& grad_buf(int id) {
    auto& g = grads_[static_cast<std::size_t>(id)];
    if (g.empty()) g.assign(nodes_[static_cast<std::size_t>(id)].numel, T(0));
    return g;
  }

  void accumulate(int id, const T* g, std::size_t n) {
    if (id < 0) return;
    auto& buf = grad_buf(id);
    if (buf.size() != n)
      throw ShapeError("gradient accumulate: size mismatch at node " + std::to_string(id));
    for (std::size_t i = 0; i < n; ++i) buf[i] += g[i];
  }

  // Reverse sweep from `node`, seeded with `seed`. Visits each recorded
  // entry at most once and flushes leaf gradients into their tensors.
  void run_backward(int node, Grad seed) {
    if (consumed_) throw UsageError("tape already consumed by backward");
    if (node < 0 || node >= static_cast<int>(nodes_.size()))
      throw UsageError("backward: node not on this tape");
    grads_.assign(nodes_.size(), Grad{});
    if (seed.size() != nodes_[static_cast<std::size_t>(node)].numel)
      throw ShapeError("backward: seed gradient shape mismatch");
    grads_[static_cast<std::size_t>(node)] = std::move(seed);
    for (int id = node; id >= 0; --id) {
      auto& g = grads_[static_cast<std::size_t>(id)];
      if (g.empty()) continue;
      auto& entry = nodes_[static_cast<std::size_t>(id)];
      if (entry.backward) {
        entry.backward(*this, g);
      } else if (entry.leaf_grad) {
        auto& dst = *entry.leaf_grad;
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
      }
      g.clear();
      g.shrink_to_fit();
    }
    consumed_ = true;
  }

 private:
  struct Node {
    std::vector<int> inputs;
    BackwardFn backward;  // empty for leaves
    std::size_t numel = 0;
    std::shared_ptr<std::vector<T>> leaf_grad;  // leaves only
  };

  std::vector<Node> nodes_;
  std::vector<Grad> grads_;
  std::unordered_map<const void*, int> leaf_ids_;
  bool consumed_ = false;
};

template <typename T>
void Tensor<T>::backward() const {
  if (tape_ == nullptr || node_ < 0) throw UsageError("backward: tensor is not on any tape");
  if (numel() != 1)
    throw UsageError("backward: output is not scalar; supply a seed gradient");
  tape_->run_backward(node_, std::vector<T>{T(1)});
}

template <typename T>
void Tensor<T>::backward(const Tensor<T>& seed) const {
  if (tape_ == nullptr || node_ < 0) throw UsageError("backward: tensor is not on any tape");
  if (seed.shape() != shape_)
    throw ShapeError("backward: seed shape " + shape_str(seed.shape()) +
                     " does not match output shape " + shape_str(shape_));
  tape_->run_backward(node_, seed.values());
}

// Seeded tensor fills.
template <typename T>
Tensor<T> rand_uniform(Shape shape, SplitMix64& rng, T lo = T(-1), T hi = T(1),
                       bool requires_grad = false) {
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return Tensor<T>(std::move(shape), std::move(v), requires_grad);
}

template <typename T>
Tensor<T> rand_normal(Shape shape, SplitMix64& rng, T sigma = T(1),
                      bool requires_grad = false) {
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.normal() * sigma);
  return Tensor<T>(std::move(shape), std::move(v), requires_grad);
}

template <typename T>
Tensor<T> trunc_normal(Shape shape, SplitMix64& rng, T sigma,
                       bool requires_grad = false) {
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.trunc_normal(sigma));
  return Tensor<T>(std::move(shape), std::move(v), requires_grad);
}

}  // namespace y12
