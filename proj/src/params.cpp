#include "h2sr/params.hpp"

#include <cmath>

#include "h2sr/errors.hpp"
#include "h2sr/ops.hpp"

namespace h2sr {

Tensor& ParameterStore::add(const std::string& name, Tensor value) {
  if (!value.all_finite()) throw NumericError("parameter " + name + " has non-finite entries");
  auto [it, inserted] = values_.insert_or_assign(name, std::move(value));
  (void)inserted;
  return it->second;
}

Tensor& ParameterStore::at(const std::string& name) {
  auto it = values_.find(name);
  if (it == values_.end()) throw LookupError("unknown parameter " + name);
  return it->second;
}

const Tensor& ParameterStore::at(const std::string& name) const {
  auto it = values_.find(name);
  if (it == values_.end()) throw LookupError("unknown parameter " + name);
  return it->second;
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  for (const auto& [name, value] : values_) out.push_back(name);
  return out;
}

Tensor symmetric_uniform(std::size_t rows, std::size_t cols, std::size_t fan, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = dist(rng);
  return Tensor::matrix(rows, cols, std::move(v));
}

VarMap::VarMap(Tape& tape, const ParameterStore& store,
               const std::function<bool(const std::string&)>& trainable)
    : tape_(&tape) {
  for (const auto& [name, value] : store.all()) {
    const bool track = !trainable || trainable(name);
    vars_.emplace(name, track ? tape.param(value) : tape.constant(value));
  }
}

const Var& VarMap::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw LookupError("parameter " + name + " is not bound");
  return it->second;
}

Var VarMap::squared_norm() const {
  if (tape_ == nullptr) throw ContractError("squared_norm on an empty VarMap");
  Var total = tape_->constant(Tensor::scalar(0.0));
  for (const auto& [name, v] : vars_) {
    if (v.requires_grad()) total = ops::add(total, ops::sum(ops::square(v)));
  }
  return total;
}

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + name + "' (expected sgd or adam)");
}

const char* to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adam"; }

Optimizer::Optimizer(OptimizerKind kind, double learning_rate) : kind_(kind), lr_(learning_rate) {
  if (!(learning_rate > 0)) throw ConfigError("learning rate must be positive");
}

void Optimizer::step(ParameterStore& store, const VarMap& vars, const GradientMap& grads) {
  ++t_;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (const auto& [name, var] : vars.all()) {
    if (!var.requires_grad() || !grads.has(var)) continue;
    const Tensor g = grads[var];
    if (!g.all_finite()) throw NumericError("non-finite gradient for " + name);
    auto w = store.at(name).mutable_data();
    if (kind_ == OptimizerKind::sgd) {
      for (std::size_t k = 0; k < w.size(); ++k) w[k] -= lr_ * g[k];
      continue;
    }
    auto& mo = moments_[name];
    if (mo.m.size() != w.size()) {
      mo.m.assign(w.size(), 0.0);
      mo.v.assign(w.size(), 0.0);
    }
    for (std::size_t k = 0; k < w.size(); ++k) {
      mo.m[k] = b1 * mo.m[k] + (1 - b1) * g[k];
      mo.v[k] = b2 * mo.v[k] + (1 - b2) * g[k] * g[k];
      w[k] -= lr_ * (mo.m[k] / c1) / (std::sqrt(mo.v[k] / c2) + eps);
    }
  }
}

}  // namespace h2sr
