#pragma once

#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "h2sr/tape.hpp"

namespace h2sr {

/// Named trainable matrices, iterated in name order so every traversal
/// (initialisation, optimisation, serialisation) is deterministic.
class ParameterStore {
 public:
  Tensor& add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return values_.count(name) != 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  std::vector<std::string> names() const;
  const std::map<std::string, Tensor>& all() const { return values_; }
  std::size_t size() const { return values_.size(); }

 private:
  std::map<std::string, Tensor> values_;
};

/// Uniform(−1/√fan, 1/√fan) matrix.
Tensor symmetric_uniform(std::size_t rows, std::size_t cols, std::size_t fan, std::mt19937_64& rng);

/// Parameters placed on a tape for one step.
class VarMap {
 public:
  VarMap() = default;
  /// Every parameter accepted by `trainable` becomes a gradient-tracked leaf,
  /// the rest become constants.
  VarMap(Tape& tape, const ParameterStore& store,
         const std::function<bool(const std::string&)>& trainable = {});

  const Var& operator[](const std::string& name) const;
  bool contains(const std::string& name) const { return vars_.count(name) != 0; }
  const std::map<std::string, Var>& all() const { return vars_; }
  /// Σ‖θ‖² over the gradient-tracked parameters, as a scalar Var.
  Var squared_norm() const;

 private:
  Tape* tape_ = nullptr;
  std::map<std::string, Var> vars_;
};

enum class OptimizerKind { sgd, adam };

OptimizerKind parse_optimizer(const std::string& name);
const char* to_string(OptimizerKind kind);

/// Plain SGD or Adam (β₁ = 0.9, β₂ = 0.999, ε = 1e-8) over a ParameterStore.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate);
  /// Applies the gradients of every tracked Var in `vars` to `store`.
  void step(ParameterStore& store, const VarMap& vars, const GradientMap& grads);
  double learning_rate() const { return lr_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  OptimizerKind kind_;
  double lr_;
  std::size_t t_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace h2sr
