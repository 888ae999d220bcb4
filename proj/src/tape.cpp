#include "h2sr/tape.hpp"

#include "h2sr/errors.hpp"

namespace h2sr {

const Tensor& Var::value() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return tape_->value(*this);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(*this); }

Tensor GradientMap::operator[](const Var& v) const {
  if (has(v)) return grads_[v.id()];
  return Tensor::zeros(v.shape());
}

Var Tape::leaf(Tensor value) {
  const bool rg = value.requires_grad();
  nodes_.push_back(Node{std::move(value), {}, nullptr, rg});
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Tensor value) {
  value.set_requires_grad(true);
  return leaf(std::move(value));
}

Var Tape::constant(Tensor value) {
  value.set_requires_grad(false);
  return leaf(std::move(value));
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn fn) {
  Node node;
  node.value = std::move(value);
  node.value.set_requires_grad(false);
  node.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    check_owned(in);
    node.inputs.push_back(in.id());
    node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(const Var& v) const {
  check_owned(v);
  return nodes_[v.id()].value;
}

bool Tape::requires_grad(const Var& v) const {
  check_owned(v);
  return nodes_[v.id()].requires_grad;
}

void Tape::check_owned(const Var& v) const {
  if (v.tape() != this || v.id() >= nodes_.size()) {
    throw ContractError("Var does not belong to this tape");
  }
}

GradientMap Tape::backward(const Var& root) const {
  check_owned(root);
  const Tensor& out = nodes_[root.id()].value;
  if (out.size() != 1) {
    throw ContractError("backward() needs a scalar root, got shape " + to_string(out.shape()));
  }
  GradientMap result;
  result.grads_.resize(root.id() + 1);
  if (!nodes_[root.id()].requires_grad) return result;
  result.grads_[root.id()] = Tensor::filled(out.shape(), 1.0);

  std::vector<Tensor> grad_in;
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    Tensor& g = result.grads_[id];
    if (!g.defined() || !node.backward) continue;
    grad_in.clear();
    grad_in.reserve(node.inputs.size());
    for (auto in : node.inputs) {
      if (nodes_[in].requires_grad) {
        grad_in.push_back(Tensor::zeros(nodes_[in].value.shape()));
      } else {
        grad_in.emplace_back();
      }
    }
    node.backward(g, grad_in);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      if (!grad_in[k].defined()) continue;
      Tensor& dst = result.grads_[node.inputs[k]];
      if (dst.defined()) {
        dst += grad_in[k];
      } else {
        dst = std::move(grad_in[k]);
      }
    }
    // Intermediate gradients are no longer needed once propagated.
    if (!nodes_[id].inputs.empty()) g = Tensor();
  }
  return result;
}

}  // namespace h2sr
