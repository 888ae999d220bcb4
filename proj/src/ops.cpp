#include "h2sr/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "h2sr/errors.hpp"

namespace h2sr::ops {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

CMap as_matrix(const Tensor& t) { return CMap(t.data().data(), t.rows(), t.cols()); }
MMap as_matrix(Tensor& t) { return MMap(t.mutable_data().data(), t.rows(), t.cols()); }

Tape& tape_of(const Var& a) {
  if (!a.valid()) throw ContractError("operation on an unbound Var");
  return *a.tape();
}

void require_rank2(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(what) + " expects a matrix, got " + to_string(t.shape()));
  }
}

// Strides of an operand expressed in the broadcast output index space.
struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
  std::size_t size = 0;
};

std::vector<std::size_t> aligned_strides(const Shape& s, const Shape& out) {
  const std::size_t rank = out.size();
  std::vector<std::size_t> strides(rank, 0);
  std::size_t stride = 1;
  for (std::size_t k = 0; k < s.size(); ++k) {
    const std::size_t src = s.size() - 1 - k;
    const std::size_t dst = rank - 1 - k;
    strides[dst] = s[src] == 1 ? 0 : stride;
    stride *= s[src];
  }
  return strides;
}

Broadcast make_broadcast(const Shape& a, const Shape& b) {
  Broadcast bc;
  bc.out = broadcast_shape(a, b);
  bc.stride_a = aligned_strides(a, bc.out);
  bc.stride_b = aligned_strides(b, bc.out);
  bc.size = shape_size(bc.out);
  return bc;
}

template <class F>
void for_each_broadcast(const Broadcast& bc, F&& f) {
  const std::size_t rank = bc.out.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < bc.size; ++i) {
    f(i, ia, ib);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      ia += bc.stride_a[d];
      ib += bc.stride_b[d];
      if (idx[d] < bc.out[d]) break;
      ia -= bc.stride_a[d] * bc.out[d];
      ib -= bc.stride_b[d] * bc.out[d];
      idx[d] = 0;
    }
  }
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

const char* name_of(OpKind kind) {
  switch (kind) {
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::div: return "div";
    case OpKind::relu: return "relu";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::exp: return "exp";
    case OpKind::log: return "log";
    case OpKind::cosh: return "cosh";
    case OpKind::sinh: return "sinh";
    case OpKind::arcosh: return "arcosh";
    case OpKind::neg: return "neg";
    case OpKind::sqrt: return "sqrt";
    case OpKind::square: return "square";
    case OpKind::softplus: return "softplus";
  }
  return "?";
}

double unary_value(OpKind kind, double x) {
  switch (kind) {
    case OpKind::relu: return x > 0 ? x : 0.0;
    case OpKind::sigmoid: return stable_sigmoid(x);
    case OpKind::exp: return std::exp(x);
    case OpKind::log:
      if (!(x > 0)) throw DomainError("log of non-positive value " + std::to_string(x));
      return std::log(x);
    case OpKind::cosh: return std::cosh(x);
    case OpKind::sinh: return std::sinh(x);
    case OpKind::arcosh:
      if (!(x >= 1.0)) throw DomainError("arcosh argument below 1: " + std::to_string(x));
      return std::acosh(x);
    case OpKind::neg: return -x;
    case OpKind::sqrt:
      if (!(x >= 0)) throw DomainError("sqrt of negative value " + std::to_string(x));
      return std::sqrt(x);
    case OpKind::square: return x * x;
    case OpKind::softplus: return stable_softplus(x);
    default: break;
  }
  throw ContractError(std::string("not a unary op: ") + name_of(kind));
}

// d(out)/d(in) given input x and output y.
double unary_derivative(OpKind kind, double x, double y) {
  switch (kind) {
    case OpKind::relu: return x > 0 ? 1.0 : 0.0;
    case OpKind::sigmoid: return y * (1.0 - y);
    case OpKind::exp: return y;
    case OpKind::log: return 1.0 / x;
    case OpKind::cosh: return std::sinh(x);
    case OpKind::sinh: return std::cosh(x);
    case OpKind::arcosh: return 1.0 / std::sqrt((x - 1.0) * (x + 1.0));
    case OpKind::neg: return -1.0;
    case OpKind::sqrt: return 0.5 / y;
    case OpKind::square: return 2.0 * x;
    case OpKind::softplus: return stable_sigmoid(x);
    default: break;
  }
  return 0.0;
}

double binary_value(OpKind kind, double a, double b) {
  switch (kind) {
    case OpKind::add: return a + b;
    case OpKind::sub: return a - b;
    case OpKind::mul: return a * b;
    case OpKind::div: return a / b;
    default: break;
  }
  throw ContractError(std::string("not a binary op: ") + name_of(kind));
}

void check_segments(std::span<const std::size_t> offsets, std::size_t n, const char* what) {
  if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != n) {
    throw DimensionError(std::string(what) + ": segment offsets must span [0, " +
                         std::to_string(n) + "]");
  }
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    if (offsets[s + 1] <= offsets[s]) {
      throw DimensionError(std::string(what) + ": empty or decreasing segment");
    }
  }
}

}  // namespace

bool is_binary(OpKind kind) {
  return kind == OpKind::add || kind == OpKind::sub || kind == OpKind::mul || kind == OpKind::div;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t k = 0; k < rank; ++k) {
    const std::size_t ea = k < a.size() ? a[a.size() - 1 - k] : 1;
    const std::size_t eb = k < b.size() ? b[b.size() - 1 - k] : 1;
    if (ea != eb && ea != 1 && eb != 1) {
      throw DimensionError("shapes " + to_string(a) + " and " + to_string(b) +
                           " are not broadcast-compatible");
    }
    out[rank - 1 - k] = std::max(ea, eb);
  }
  return out;
}

Tensor elementwise(OpKind kind, const Tensor& a, const Tensor* b) {
  if (is_binary(kind)) {
    if (!b) throw ContractError(std::string(name_of(kind)) + " needs two operands");
    if (same_shape(a, *b)) {
      std::vector<double> out(a.size());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = binary_value(kind, a[i], (*b)[i]);
      return Tensor(a.shape(), std::move(out));
    }
    const Broadcast bc = make_broadcast(a.shape(), b->shape());
    std::vector<double> out(bc.size);
    for_each_broadcast(bc, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      out[i] = binary_value(kind, a[ia], (*b)[ib]);
    });
    return Tensor(bc.out, std::move(out));
  }
  if (b) throw ContractError(std::string(name_of(kind)) + " takes a single operand");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = unary_value(kind, a[i]);
  return Tensor(a.shape(), std::move(out));
}

Var elementwise(OpKind kind, const Var& a, std::optional<Var> b) {
  Tape& tape = tape_of(a);
  if (is_binary(kind)) {
    if (!b) throw ContractError(std::string(name_of(kind)) + " needs two operands");
    const Tensor& av = a.value();
    const Tensor& bv = b->value();
    Tensor out = elementwise(kind, av, &bv);
    auto fn = [kind, a, bb = *b](const Tensor& g, std::span<Tensor> gin) {
      const Tensor& x = a.value();
      const Tensor& y = bb.value();
      Tensor* ga = gin[0].defined() ? &gin[0] : nullptr;
      Tensor* gb = gin[1].defined() ? &gin[1] : nullptr;
      auto apply = [&](std::size_t i, std::size_t ia, std::size_t ib) {
        const double gi = g[i];
        switch (kind) {
          case OpKind::add:
            if (ga) (*ga)[ia] += gi;
            if (gb) (*gb)[ib] += gi;
            break;
          case OpKind::sub:
            if (ga) (*ga)[ia] += gi;
            if (gb) (*gb)[ib] -= gi;
            break;
          case OpKind::mul:
            if (ga) (*ga)[ia] += gi * y[ib];
            if (gb) (*gb)[ib] += gi * x[ia];
            break;
          case OpKind::div:
            if (ga) (*ga)[ia] += gi / y[ib];
            if (gb) (*gb)[ib] -= gi * x[ia] / (y[ib] * y[ib]);
            break;
          default: break;
        }
      };
      if (same_shape(x, y)) {
        for (std::size_t i = 0; i < g.size(); ++i) apply(i, i, i);
      } else {
        for_each_broadcast(make_broadcast(x.shape(), y.shape()), apply);
      }
    };
    return tape.record(std::move(out), {a, *b}, fn);
  }
  if (b) throw ContractError(std::string(name_of(kind)) + " takes a single operand");
  Tensor out = elementwise(kind, a.value(), nullptr);
  auto fn = [kind, a](const Tensor& g, std::span<Tensor> gin) {
    const Tensor& x = a.value();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = unary_value(kind, x[i]);
      gin[0][i] += g[i] * unary_derivative(kind, x[i], y);
    }
  };
  return tape.record(std::move(out), {a}, fn);
}

Var add(const Var& a, const Var& b) { return elementwise(OpKind::add, a, b); }
Var sub(const Var& a, const Var& b) { return elementwise(OpKind::sub, a, b); }
Var mul(const Var& a, const Var& b) { return elementwise(OpKind::mul, a, b); }
Var div(const Var& a, const Var& b) { return elementwise(OpKind::div, a, b); }
Var relu(const Var& a) { return elementwise(OpKind::relu, a); }
Var sigmoid(const Var& a) { return elementwise(OpKind::sigmoid, a); }
Var exp(const Var& a) { return elementwise(OpKind::exp, a); }
Var log(const Var& a) { return elementwise(OpKind::log, a); }
Var cosh(const Var& a) { return elementwise(OpKind::cosh, a); }
Var sinh(const Var& a) { return elementwise(OpKind::sinh, a); }
Var arcosh(const Var& a) { return elementwise(OpKind::arcosh, a); }
Var neg(const Var& a) { return elementwise(OpKind::neg, a); }
Var sqrt(const Var& a) { return elementwise(OpKind::sqrt, a); }
Var square(const Var& a) { return elementwise(OpKind::square, a); }
Var softplus(const Var& a) { return elementwise(OpKind::softplus, a); }

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& v : out.mutable_data()) v *= s;
  return tape_of(a).record(std::move(out), {a}, [s](const Tensor& g, std::span<Tensor> gin) {
    for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += s * g[i];
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& v : out.mutable_data()) v += s;
  return tape_of(a).record(std::move(out), {a}, [](const Tensor& g, std::span<Tensor> gin) {
    gin[0] += g;
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul inner dimensions differ: " + to_string(a.shape()) + " · " +
                         to_string(b.shape()));
  }
  Tensor out = Tensor::zeros({a.rows(), b.cols()});
  as_matrix(out).noalias() = as_matrix(a) * as_matrix(b);
  return out;
}

Var matmul(const Var& a, const Var& b) {
  Tensor out = matmul(a.value(), b.value());
  return tape_of(a).record(std::move(out), {a, b}, [a, b](const Tensor& g, std::span<Tensor> gin) {
    if (gin[0].defined()) as_matrix(gin[0]).noalias() += as_matrix(g) * as_matrix(b.value()).transpose();
    if (gin[1].defined()) as_matrix(gin[1]).noalias() += as_matrix(a.value()).transpose() * as_matrix(g);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank2(av, "matmul_nt");
  require_rank2(bv, "matmul_nt");
  if (av.cols() != bv.cols()) {
    throw DimensionError("matmul_nt inner dimensions differ: " + to_string(av.shape()) + " · " +
                         to_string(bv.shape()) + "ᵀ");
  }
  Tensor out = Tensor::zeros({av.rows(), bv.rows()});
  as_matrix(out).noalias() = as_matrix(av) * as_matrix(bv).transpose();
  return tape_of(a).record(std::move(out), {a, b}, [a, b](const Tensor& g, std::span<Tensor> gin) {
    if (gin[0].defined()) as_matrix(gin[0]).noalias() += as_matrix(g) * as_matrix(b.value());
    if (gin[1].defined()) as_matrix(gin[1]).noalias() += as_matrix(g).transpose() * as_matrix(a.value());
  });
}

Var transpose(const Var& a) {
  const Tensor& av = a.value();
  require_rank2(av, "transpose");
  Tensor out = Tensor::zeros({av.cols(), av.rows()});
  as_matrix(out) = as_matrix(av).transpose();
  return tape_of(a).record(std::move(out), {a}, [](const Tensor& g, std::span<Tensor> gin) {
    as_matrix(gin[0]) += as_matrix(g).transpose();
  });
}

Tensor softmax(const Tensor& scores) {
  const std::size_t width = scores.shape().back();
  const std::size_t groups = scores.size() / width;
  std::vector<double> out(scores.size());
  for (std::size_t r = 0; r < groups; ++r) {
    const double* s = scores.data().data() + r * width;
    double* o = out.data() + r * width;
    const double m = *std::max_element(s, s + width);
    double total = 0.0;
    for (std::size_t j = 0; j < width; ++j) total += (o[j] = std::exp(s[j] - m));
    for (std::size_t j = 0; j < width; ++j) o[j] /= total;
  }
  return Tensor(scores.shape(), std::move(out));
}

Var softmax(const Var& scores) {
  Tensor out = softmax(scores.value());
  Tensor probs = out;
  return tape_of(scores).record(std::move(out), {scores},
                                [probs](const Tensor& g, std::span<Tensor> gin) {
    const std::size_t width = probs.shape().back();
    const std::size_t groups = probs.size() / width;
    for (std::size_t r = 0; r < groups; ++r) {
      const std::size_t base = r * width;
      double dot = 0.0;
      for (std::size_t j = 0; j < width; ++j) dot += g[base + j] * probs[base + j];
      for (std::size_t j = 0; j < width; ++j) {
        gin[0][base + j] += probs[base + j] * (g[base + j] - dot);
      }
    }
  });
}

Var logsumexp_segments(const Var& v, std::span<const std::size_t> offsets_in) {
  const Tensor& x = v.value();
  check_segments(offsets_in, x.size(), "logsumexp_segments");
  std::vector<std::size_t> offsets(offsets_in.begin(), offsets_in.end());
  const std::size_t segs = offsets.size() - 1;
  std::vector<double> out(segs);
  for (std::size_t s = 0; s < segs; ++s) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t i = offsets[s]; i < offsets[s + 1]; ++i) m = std::max(m, x[i]);
    double total = 0.0;
    for (std::size_t i = offsets[s]; i < offsets[s + 1]; ++i) total += std::exp(x[i] - m);
    out[s] = m + std::log(total);
  }
  Tensor result({segs}, out);
  return tape_of(v).record(std::move(result), {v},
                           [v, offsets, out](const Tensor& g, std::span<Tensor> gin) {
    const Tensor& xv = v.value();
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
      for (std::size_t i = offsets[s]; i < offsets[s + 1]; ++i) {
        gin[0][i] += g[s] * std::exp(xv[i] - out[s]);
      }
    }
  });
}

Var sum(const Var& a) {
  double total = 0.0;
  for (double x : a.value().data()) total += x;
  return tape_of(a).record(Tensor::scalar(total), {a}, [](const Tensor& g, std::span<Tensor> gin) {
    for (auto& x : gin[0].mutable_data()) x += g[0];
  });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var sum_cols(const Var& a) {
  const Tensor& x = a.value();
  require_rank2(x, "sum_cols");
  Tensor out = Tensor::zeros({x.rows(), 1});
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double total = 0.0;
    for (double v : x.row(r)) total += v;
    out[r] = total;
  }
  return tape_of(a).record(std::move(out), {a}, [](const Tensor& g, std::span<Tensor> gin) {
    Tensor& gx = gin[0];
    for (std::size_t r = 0; r < gx.rows(); ++r) {
      for (auto& v : gx.row(r)) v += g[r];
    }
  });
}

Var gather_rows(const Var& a, std::span<const std::uint32_t> index_in) {
  const Tensor& x = a.value();
  const std::size_t n = x.shape()[0];
  const std::size_t width = x.size() / n;
  if (index_in.empty()) throw DimensionError("gather_rows with an empty index");
  std::vector<std::uint32_t> index(index_in.begin(), index_in.end());
  Shape shape = x.shape();
  shape[0] = index.size();
  std::vector<double> out(index.size() * width);
  for (std::size_t k = 0; k < index.size(); ++k) {
    if (index[k] >= n) {
      throw LookupError("gather_rows index " + std::to_string(index[k]) + " out of range " +
                        std::to_string(n));
    }
    std::copy_n(x.data().data() + index[k] * width, width, out.data() + k * width);
  }
  return tape_of(a).record(Tensor(shape, std::move(out)), {a},
                           [index, width](const Tensor& g, std::span<Tensor> gin) {
    double* dst = gin[0].mutable_data().data();
    const double* src = g.data().data();
    for (std::size_t k = 0; k < index.size(); ++k) {
      double* row = dst + index[k] * width;
      for (std::size_t j = 0; j < width; ++j) row[j] += src[k * width + j];
    }
  });
}

Var scatter_rows(const Var& base, std::span<const std::uint32_t> index_in, const Var& rows) {
  const Tensor& b = base.value();
  const Tensor& r = rows.value();
  const std::size_t n = b.shape()[0];
  const std::size_t width = b.size() / n;
  if (r.shape()[0] != index_in.size() || r.size() != index_in.size() * width) {
    throw DimensionError("scatter_rows: " + to_string(r.shape()) + " rows do not fit index of " +
                         std::to_string(index_in.size()) + " into " + to_string(b.shape()));
  }
  std::vector<std::uint32_t> index(index_in.begin(), index_in.end());
  std::vector<char> seen(n, 0);
  Tensor out = b;
  for (std::size_t k = 0; k < index.size(); ++k) {
    if (index[k] >= n) throw LookupError("scatter_rows index out of range");
    if (seen[index[k]]) throw ContractError("scatter_rows index contains duplicates");
    seen[index[k]] = 1;
    std::copy_n(r.data().data() + k * width, width, out.mutable_data().data() + index[k] * width);
  }
  return tape_of(base).record(std::move(out), {base, rows},
                              [index, width](const Tensor& g, std::span<Tensor> gin) {
    if (gin[0].defined()) {
      gin[0] += g;
      for (auto i : index) std::fill_n(gin[0].mutable_data().data() + i * width, width, 0.0);
    }
    if (gin[1].defined()) {
      for (std::size_t k = 0; k < index.size(); ++k) {
        const double* src = g.data().data() + index[k] * width;
        double* dst = gin[1].mutable_data().data() + k * width;
        for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
      }
    }
  });
}

Var concat_rows(std::span<const Var> parts_in) {
  if (parts_in.empty()) throw DimensionError("concat_rows of nothing");
  std::vector<Var> parts(parts_in.begin(), parts_in.end());
  const Tensor& first = parts[0].value();
  Shape tail(first.shape().begin() + 1, first.shape().end());
  std::size_t total_rows = 0;
  std::vector<double> out;
  for (const auto& p : parts) {
    const Tensor& t = p.value();
    if (Shape(t.shape().begin() + 1, t.shape().end()) != tail) {
      throw DimensionError("concat_rows trailing shapes differ");
    }
    total_rows += t.shape()[0];
    out.insert(out.end(), t.data().begin(), t.data().end());
  }
  Shape shape = first.shape();
  shape[0] = total_rows;
  return tape_of(parts[0]).record(Tensor(shape, std::move(out)), parts,
                                  [parts](const Tensor& g, std::span<Tensor> gin) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const std::size_t n = parts[k].value().size();
      if (gin[k].defined()) {
        double* dst = gin[k].mutable_data().data();
        for (std::size_t j = 0; j < n; ++j) dst[j] += g[offset + j];
      }
      offset += n;
    }
  });
}

Var concat_cols(const Var& a, const Var& b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_rank2(x, "concat_cols");
  require_rank2(y, "concat_cols");
  if (x.rows() != y.rows()) throw DimensionError("concat_cols row counts differ");
  const std::size_t ca = x.cols(), cb = y.cols();
  Tensor out = Tensor::zeros({x.rows(), ca + cb});
  for (std::size_t r = 0; r < x.rows(); ++r) {
    std::copy_n(x.row(r).data(), ca, out.row(r).data());
    std::copy_n(y.row(r).data(), cb, out.row(r).data() + ca);
  }
  return tape_of(a).record(std::move(out), {a, b}, [ca, cb](const Tensor& g, std::span<Tensor> gin) {
    for (std::size_t r = 0; r < g.rows(); ++r) {
      auto src = g.row(r);
      if (gin[0].defined()) {
        for (std::size_t j = 0; j < ca; ++j) gin[0].at(r, j) += src[j];
      }
      if (gin[1].defined()) {
        for (std::size_t j = 0; j < cb; ++j) gin[1].at(r, j) += src[ca + j];
      }
    }
  });
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
  const Tensor& x = a.value();
  require_rank2(x, "slice_cols");
  if (begin >= end || end > x.cols()) throw DimensionError("slice_cols range out of bounds");
  const std::size_t w = end - begin;
  Tensor out = Tensor::zeros({x.rows(), w});
  for (std::size_t r = 0; r < x.rows(); ++r) std::copy_n(x.row(r).data() + begin, w, out.row(r).data());
  return tape_of(a).record(std::move(out), {a}, [begin, w](const Tensor& g, std::span<Tensor> gin) {
    for (std::size_t r = 0; r < g.rows(); ++r) {
      for (std::size_t j = 0; j < w; ++j) gin[0].at(r, begin + j) += g.at(r, j);
    }
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return tape_of(a).record(std::move(out), {a}, [](const Tensor& g, std::span<Tensor> gin) {
    for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
  });
}

Var layer_norm_rows(const Var& xv, const Var& gamma, const Var& beta, double eps) {
  const Tensor& x = xv.value();
  require_rank2(x, "layer_norm_rows");
  const std::size_t n = x.rows(), d = x.cols();
  if (gamma.value().size() != d || beta.value().size() != d) {
    throw DimensionError("layer_norm_rows: gain/bias width must equal " + std::to_string(d));
  }
  auto xhat = std::make_shared<Tensor>(Tensor::zeros({n, d}));
  auto inv_std = std::make_shared<std::vector<double>>(n);
  Tensor out = Tensor::zeros({n, d});
  const Tensor& gm = gamma.value();
  const Tensor& bt = beta.value();
  for (std::size_t r = 0; r < n; ++r) {
    auto row = x.row(r);
    double mu = 0.0;
    for (double v : row) mu += v;
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (double v : row) var += (v - mu) * (v - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * is;
      xhat->at(r, j) = h;
      out.at(r, j) = gm[j] * h + bt[j];
    }
  }
  return tape_of(xv).record(std::move(out), {xv, gamma, beta},
                            [xhat, inv_std, gamma](const Tensor& g, std::span<Tensor> gin) {
    const std::size_t n = g.rows(), d = g.cols();
    const Tensor& gm = gamma.value();
    std::vector<double> dh(d);
    for (std::size_t r = 0; r < n; ++r) {
      double mean_dh = 0.0, mean_dh_h = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        dh[j] = g.at(r, j) * gm[j];
        mean_dh += dh[j];
        mean_dh_h += dh[j] * xhat->at(r, j);
        if (gin[1].defined()) gin[1][j] += g.at(r, j) * xhat->at(r, j);
        if (gin[2].defined()) gin[2][j] += g.at(r, j);
      }
      mean_dh /= static_cast<double>(d);
      mean_dh_h /= static_cast<double>(d);
      if (gin[0].defined()) {
        for (std::size_t j = 0; j < d; ++j) {
          gin[0].at(r, j) += (*inv_std)[r] * (dh[j] - mean_dh - xhat->at(r, j) * mean_dh_h);
        }
      }
    }
  });
}

Var dropout(const Var& x, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw ConfigError("dropout probability must be below 1");
  const Tensor& v = x.value();
  auto mask = std::make_shared<std::vector<double>>(v.size());
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double keep_scale = 1.0 / (1.0 - p);
  Tensor out = v;
  for (std::size_t i = 0; i < v.size(); ++i) {
    (*mask)[i] = unif(rng) >= p ? keep_scale : 0.0;
    out[i] *= (*mask)[i];
  }
  return tape_of(x).record(std::move(out), {x}, [mask](const Tensor& g, std::span<Tensor> gin) {
    for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * (*mask)[i];
  });
}

Var segment_mean_rows(const Var& xv, std::span<const std::size_t> offsets_in) {
  const Tensor& x = xv.value();
  require_rank2(x, "segment_mean_rows");
  check_segments(offsets_in, x.rows(), "segment_mean_rows");
  std::vector<std::size_t> offsets(offsets_in.begin(), offsets_in.end());
  const std::size_t segs = offsets.size() - 1, d = x.cols();
  Tensor out = Tensor::zeros({segs, d});
  for (std::size_t s = 0; s < segs; ++s) {
    const double inv = 1.0 / static_cast<double>(offsets[s + 1] - offsets[s]);
    for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r) {
      for (std::size_t j = 0; j < d; ++j) out.at(s, j) += x.at(r, j) * inv;
    }
  }
  return tape_of(xv).record(std::move(out), {xv}, [offsets](const Tensor& g, std::span<Tensor> gin) {
    const std::size_t d = g.cols();
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
      const double inv = 1.0 / static_cast<double>(offsets[s + 1] - offsets[s]);
      for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r) {
        for (std::size_t j = 0; j < d; ++j) gin[0].at(r, j) += g.at(s, j) * inv;
      }
    }
  });
}

Var segment_attention(const Var& q, const Var& k, const Var& v,
                      std::span<const std::size_t> offsets_in, std::size_t heads, bool causal) {
  const Tensor& Q = q.value();
  const Tensor& K = k.value();
  const Tensor& V = v.value();
  require_rank2(Q, "segment_attention");
  if (!same_shape(Q, K) || !same_shape(Q, V)) {
    throw DimensionError("segment_attention: q, k, v shapes differ");
  }
  const std::size_t n = Q.rows(), d = Q.cols();
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("segment_attention: width " + std::to_string(d) +
                         " not divisible by heads " + std::to_string(heads));
  }
  check_segments(offsets_in, n, "segment_attention");
  std::vector<std::size_t> offsets(offsets_in.begin(), offsets_in.end());
  const std::size_t dk = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));

  // probs[s][h] is the L×L attention matrix of segment s, head h.
  auto probs = std::make_shared<std::vector<std::vector<double>>>();
  Tensor out = Tensor::zeros({n, d});
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    const std::size_t a = offsets[s], L = offsets[s + 1] - a;
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t c0 = h * dk;
      std::vector<double> P(L * L, 0.0);
      for (std::size_t i = 0; i < L; ++i) {
        const std::size_t jmax = causal ? i + 1 : L;
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < jmax; ++j) {
          double dot = 0.0;
          for (std::size_t c = 0; c < dk; ++c) dot += Q.at(a + i, c0 + c) * K.at(a + j, c0 + c);
          P[i * L + j] = dot * inv_sqrt;
          m = std::max(m, P[i * L + j]);
        }
        double total = 0.0;
        for (std::size_t j = 0; j < jmax; ++j) total += (P[i * L + j] = std::exp(P[i * L + j] - m));
        for (std::size_t j = 0; j < jmax; ++j) P[i * L + j] /= total;
        for (std::size_t j = 0; j < jmax; ++j) {
          const double p = P[i * L + j];
          for (std::size_t c = 0; c < dk; ++c) out.at(a + i, c0 + c) += p * V.at(a + j, c0 + c);
        }
      }
      probs->push_back(std::move(P));
    }
  }
  return tape_of(q).record(
      std::move(out), {q, k, v},
      [q, k, v, offsets, heads, dk, inv_sqrt, causal, probs](const Tensor& g, std::span<Tensor> gin) {
        const Tensor& Q = q.value();
        const Tensor& K = k.value();
        const Tensor& V = v.value();
        std::size_t block = 0;
        std::vector<double> dP, dS;
        for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
          const std::size_t a = offsets[s], L = offsets[s + 1] - a;
          for (std::size_t h = 0; h < heads; ++h, ++block) {
            const std::size_t c0 = h * dk;
            const auto& P = (*probs)[block];
            dP.assign(L * L, 0.0);
            dS.assign(L * L, 0.0);
            for (std::size_t i = 0; i < L; ++i) {
              const std::size_t jmax = causal ? i + 1 : L;
              double rowdot = 0.0;
              for (std::size_t j = 0; j < jmax; ++j) {
                double acc = 0.0;
                for (std::size_t c = 0; c < dk; ++c) acc += g.at(a + i, c0 + c) * V.at(a + j, c0 + c);
                dP[i * L + j] = acc;
                rowdot += acc * P[i * L + j];
                if (gin[2].defined()) {
                  const double p = P[i * L + j];
                  for (std::size_t c = 0; c < dk; ++c) gin[2].at(a + j, c0 + c) += p * g.at(a + i, c0 + c);
                }
              }
              for (std::size_t j = 0; j < jmax; ++j) {
                dS[i * L + j] = P[i * L + j] * (dP[i * L + j] - rowdot) * inv_sqrt;
              }
              for (std::size_t j = 0; j < jmax; ++j) {
                const double ds = dS[i * L + j];
                if (ds == 0.0) continue;
                for (std::size_t c = 0; c < dk; ++c) {
                  if (gin[0].defined()) gin[0].at(a + i, c0 + c) += ds * K.at(a + j, c0 + c);
                  if (gin[1].defined()) gin[1].at(a + j, c0 + c) += ds * Q.at(a + i, c0 + c);
                }
              }
            }
          }
        }
      });
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  if (!(h > 0)) throw ContractError("finite-difference step must be positive");
  Tensor grad = Tensor::zeros(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(probe);
    probe[i] = orig - h;
    const double fm = f(probe);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("finite_diff_grad: non-finite function value at coordinate " +
                         std::to_string(i));
    }
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

double relative_error(const Tensor& a, const Tensor& b, double floor) {
  if (!same_shape(a, b)) throw DimensionError("relative_error shape mismatch");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

}  // namespace h2sr::ops
