#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "h2sr/tape.hpp"
#include "h2sr/tensor.hpp"

namespace h2sr::ops {

enum class OpKind {
  add, sub, mul, div,                           // binary, broadcasting
  relu, sigmoid, exp, log, cosh, sinh, arcosh,  // unary
  neg, sqrt, square, softplus,
};

bool is_binary(OpKind kind);

/// Numpy-style broadcast of two shapes; throws DimensionError when incompatible.
Shape broadcast_shape(const Shape& a, const Shape& b);

/// Value-level evaluation (no tape).
Tensor elementwise(OpKind kind, const Tensor& a, const Tensor* b = nullptr);
/// Recorded evaluation with gradient rule.
Var elementwise(OpKind kind, const Var& a, std::optional<Var> b = std::nullopt);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var cosh(const Var& a);
Var sinh(const Var& a);
Var arcosh(const Var& a);
Var neg(const Var& a);
Var sqrt(const Var& a);
Var square(const Var& a);
/// ln(1 + e^x), evaluated stably; -ln sigmoid(x) == softplus(-x).
Var softplus(const Var& a);

Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);

Tensor matmul(const Tensor& a, const Tensor& b);
Var matmul(const Var& a, const Var& b);
/// a · bᵀ without materialising the transpose.
Var matmul_nt(const Var& a, const Var& b);
Var transpose(const Var& a);

/// Softmax over the last axis with the maximum subtracted first.
Tensor softmax(const Tensor& scores);
Var softmax(const Var& scores);

/// log Σ exp over each segment [offsets[s], offsets[s+1]) of a vector.
Var logsumexp_segments(const Var& v, std::span<const std::size_t> offsets);

Var sum(const Var& a);
Var mean(const Var& a);
/// Row sums of an n×m matrix as an n×1 column.
Var sum_cols(const Var& a);

Var gather_rows(const Var& a, std::span<const std::uint32_t> index);
/// Copy of `base` with rows `index[k]` replaced by row k of `rows`.
Var scatter_rows(const Var& base, std::span<const std::uint32_t> index, const Var& rows);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(const Var& a, const Var& b);
Var slice_cols(const Var& a, std::size_t begin, std::size_t end);
Var reshape(const Var& a, Shape shape);

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-8);

/// Inverted dropout; identity when p == 0.
Var dropout(const Var& x, double p, std::mt19937_64& rng);

/// Mean of rows inside each segment [offsets[s], offsets[s+1]).
Var segment_mean_rows(const Var& x, std::span<const std::size_t> offsets);

/// Multi-head scaled dot-product attention applied independently to each row
/// segment of q/k/v (each N×d, d divisible by heads). With `causal` a row only
/// attends to rows at or before it within its segment.
Var segment_attention(const Var& q, const Var& k, const Var& v,
                      std::span<const std::size_t> offsets, std::size_t heads, bool causal);

/// Central-difference estimate (f(x+h·eᵢ) − f(x−h·eᵢ)) / 2h for every coordinate.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double h = 1e-5);

/// Norm-wise relative error ‖a−b‖₂ / max(‖a‖₂, ‖b‖₂, floor) used by gradient checks.
/// The floor turns the comparison absolute when both gradients vanish.
double relative_error(const Tensor& a, const Tensor& b, double floor = 1e-8);

}  // namespace h2sr::ops
