#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "h2sr/tensor.hpp"

namespace h2sr {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
/// owning tape is alive.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Gradients produced by Tape::backward, indexed by node.
class GradientMap {
 public:
  bool has(const Var& v) const { return v.id() < grads_.size() && grads_[v.id()].defined(); }
  /// Gradient of the root with respect to v; zeros when v did not influence the root.
  Tensor operator[](const Var& v) const;

 private:
  friend class Tape;
  std::vector<Tensor> grads_;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so the node
/// list is already topologically sorted and backward() is a single reverse
/// sweep. A tape is single-owner; independent tapes may be used from
/// different threads.
class Tape {
 public:
  /// Receives the gradient of the node's output and writes input gradients
  /// into `grad_in`. Entries for inputs that do not require gradients are
  /// undefined tensors and must be skipped.
  using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor> grad_in)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf whose gradient is tracked iff value.requires_grad().
  Var leaf(Tensor value);
  /// Leaf whose gradient is always tracked.
  Var param(Tensor value);
  Var constant(Tensor value);

  /// Appends an operation node. `fn` is dropped when no input needs a gradient.
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn fn);

  const Tensor& value(const Var& v) const;
  bool requires_grad(const Var& v) const;
  std::size_t size() const { return nodes_.size(); }

  /// Gradients of the scalar `root` with respect to every node that requires them.
  GradientMap backward(const Var& root) const;

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  void check_owned(const Var& v) const;

  std::vector<Node> nodes_;
};

}  // namespace h2sr
