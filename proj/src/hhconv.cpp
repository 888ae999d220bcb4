#include "h2sr/hhconv.hpp"

#include <algorithm>
#include <cmath>

#include "h2sr/errors.hpp"
#include "h2sr/ops.hpp"

namespace h2sr::hhconv {
namespace {

using manifold::log_scale;
using manifold::log_scale_derivative;
using manifold::minkowski_inner;
using manifold::sinhc;
using manifold::sinhc_slope;

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t k = 0; k < n; ++k) s += a[k] * b[k];
  return s;
}

double lorentz(const double* a, const double* b, std::size_t n) { return dot(a, b, n) - 2.0 * a[0] * b[0]; }

std::string field_name(const std::string& prefix, std::size_t layer, const char* field) {
  return prefix + ".l" + std::to_string(layer) + "." + field;
}

// Shared scorer inputs of the fused aggregation ops.
struct Scorer {
  const Tensor& left;
  const Tensor& right;
  const Tensor& bias;
  const Tensor& out;
  double out_bias;
  std::size_t hidden;

  // Writes softmax weights over node i's neighbourhood into w[begin, end).
  void weights(const GraphBatch& g, std::size_t i, double* w) const {
    const std::uint32_t begin = g.offsets[i], end = g.offsets[i + 1];
    const double* li = left.data().data() + i * hidden;
    double top = -INFINITY;
    for (std::uint32_t k = begin; k < end; ++k) {
      const double* rj = right.data().data() + std::size_t{g.neighbors[k]} * hidden;
      const double* b = bias.data().data();
      const double* o = out.data().data();
      double s = out_bias;
      for (std::size_t h = 0; h < hidden; ++h) s += o[h] * std::max(0.0, li[h] + rj[h] + b[h]);
      w[k - begin] = s;
      top = std::max(top, s);
    }
    double total = 0.0;
    for (std::uint32_t k = begin; k < end; ++k) total += (w[k - begin] = std::exp(w[k - begin] - top));
    for (std::uint32_t k = begin; k < end; ++k) w[k - begin] /= total;
  }
};

struct ScorerGrads {
  Tensor* left;
  Tensor* right;
  Tensor* bias;
  Tensor* out;
  Tensor* out_bias;
};

ScorerGrads scorer_grads(std::span<Tensor> gin) {
  auto ptr = [&](std::size_t k) { return gin[k].defined() ? &gin[k] : nullptr; };
  return {ptr(1), ptr(2), ptr(3), ptr(4), ptr(5)};
}

// Backpropagates dL/dM over node i's neighbourhood through softmax and scorer.
void scorer_backward(const Scorer& sc, const GraphBatch& g, std::size_t i, const double* weights,
                     const double* grad_weights, const ScorerGrads& out) {
  const std::uint32_t begin = g.offsets[i], end = g.offsets[i + 1];
  double mean = 0.0;
  for (std::uint32_t k = begin; k < end; ++k) mean += weights[k - begin] * grad_weights[k - begin];
  const double* li = sc.left.data().data() + i * sc.hidden;
  const double* b = sc.bias.data().data();
  const double* o = sc.out.data().data();
  double* g_out = out.out ? out.out->mutable_data().data() : nullptr;
  double* g_left = out.left ? out.left->mutable_data().data() + i * sc.hidden : nullptr;
  double* g_bias = out.bias ? out.bias->mutable_data().data() : nullptr;
  for (std::uint32_t k = begin; k < end; ++k) {
    const double gs = weights[k - begin] * (grad_weights[k - begin] - mean);
    if (gs == 0.0) continue;
    const std::size_t j = g.neighbors[k];
    const double* rj = sc.right.data().data() + j * sc.hidden;
    double* g_right = out.right ? out.right->mutable_data().data() + j * sc.hidden : nullptr;
    if (out.out_bias) (*out.out_bias)[0] += gs;
    if (g_out && g_left && g_right && g_bias) {
      for (std::size_t h = 0; h < sc.hidden; ++h) {
        const double t = li[h] + rj[h] + b[h];
        const bool on = t > 0;
        const double gh = on ? gs * o[h] : 0.0;
        g_out[h] += on ? gs * t : 0.0;
        g_left[h] += gh;
        g_right[h] += gh;
        g_bias[h] += gh;
      }
      continue;
    }
    for (std::size_t h = 0; h < sc.hidden; ++h) {
      const double t = li[h] + rj[h] + b[h];
      if (t <= 0) continue;
      const double gh = gs * o[h];
      if (g_out) g_out[h] += gs * t;
      if (g_left) g_left[h] += gh;
      if (g_right) g_right[h] += gh;
      if (g_bias) g_bias[h] += gh;
    }
  }
}

void check_scorer_shapes(const Tensor& x, const Tensor& left, const Tensor& right, const Tensor& bias,
                         const Tensor& out, const Tensor& out_bias, const GraphBatch& g) {
  const std::size_t n = x.rows(), h = left.cols();
  if (x.rank() != 2 || left.rank() != 2 || right.rank() != 2 || left.rows() != n || right.rows() != n ||
      right.cols() != h || bias.size() != h || out.size() != h || out_bias.size() != 1) {
    throw DimensionError("attention_aggregate: inconsistent operand shapes");
  }
  if (g.size() != n || g.offsets.size() != n + 1) {
    throw DimensionError("attention_aggregate: graph has " + std::to_string(g.size()) + " nodes, features have " +
                         std::to_string(n) + " rows");
  }
}

}  // namespace

void HHConvConfig::validate() const {
  if (layers == 0) throw ConfigError("hhconv needs at least one layer");
  if (!(curvature > 0) || !std::isfinite(curvature)) throw ConfigError("curvature c must be positive");
}

LayerParams LayerParams::init(std::size_t d, std::mt19937_64& rng) {
  LayerParams p;
  p.weight = symmetric_uniform(d, d, d, rng);
  p.bias = Tensor::zeros({1, d});
  p.att_left = symmetric_uniform(d, d, 2 * d, rng);
  p.att_right = symmetric_uniform(d, d, 2 * d, rng);
  p.att_bias = Tensor::zeros({1, d});
  p.att_out = symmetric_uniform(1, d, d, rng);
  p.att_out_bias = Tensor::zeros({1, 1});
  return p;
}

LayerParams LayerParams::identity(std::size_t d) {
  LayerParams p;
  p.weight = Tensor::identity(d);
  p.bias = Tensor::zeros({1, d});
  p.att_left = Tensor::zeros({d, d});
  p.att_right = Tensor::zeros({d, d});
  p.att_bias = Tensor::zeros({1, d});
  p.att_out = Tensor::zeros({1, d});
  p.att_out_bias = Tensor::zeros({1, 1});
  return p;
}

void store_layer(ParameterStore& store, const std::string& prefix, std::size_t layer, const LayerParams& p) {
  store.add(field_name(prefix, layer, "weight"), p.weight);
  store.add(field_name(prefix, layer, "bias"), p.bias);
  store.add(field_name(prefix, layer, "att_left"), p.att_left);
  store.add(field_name(prefix, layer, "att_right"), p.att_right);
  store.add(field_name(prefix, layer, "att_bias"), p.att_bias);
  store.add(field_name(prefix, layer, "att_out"), p.att_out);
  store.add(field_name(prefix, layer, "att_out_bias"), p.att_out_bias);
}

void register_params(ParameterStore& store, const std::string& prefix, std::size_t d, std::size_t layers,
                     std::mt19937_64& rng) {
  for (std::size_t l = 0; l < layers; ++l) store_layer(store, prefix, l, LayerParams::init(d, rng));
}

LayerParams load_layer(const ParameterStore& store, const std::string& prefix, std::size_t layer) {
  return {store.at(field_name(prefix, layer, "weight")),   store.at(field_name(prefix, layer, "bias")),
          store.at(field_name(prefix, layer, "att_left")), store.at(field_name(prefix, layer, "att_right")),
          store.at(field_name(prefix, layer, "att_bias")), store.at(field_name(prefix, layer, "att_out")),
          store.at(field_name(prefix, layer, "att_out_bias"))};
}

LayerVars bind_layer(const VarMap& vars, const std::string& prefix, std::size_t layer) {
  return {vars[field_name(prefix, layer, "weight")],   vars[field_name(prefix, layer, "bias")],
          vars[field_name(prefix, layer, "att_left")], vars[field_name(prefix, layer, "att_right")],
          vars[field_name(prefix, layer, "att_bias")], vars[field_name(prefix, layer, "att_out")],
          vars[field_name(prefix, layer, "att_out_bias")]};
}

std::vector<LayerVars> bind_layers(const VarMap& vars, const std::string& prefix, std::size_t layers) {
  std::vector<LayerVars> out;
  for (std::size_t l = 0; l < layers; ++l) out.push_back(bind_layer(vars, prefix, l));
  return out;
}

// ---------------------------------------------------------------------------
// Point-level stages.

std::vector<HyperboloidPoint> lift_features(const Hyperboloid& h, const Tensor& table) {
  if (table.rank() != 2 || table.cols() != h.dim()) throw DimensionError("lift_features: table width must equal d");
  std::vector<HyperboloidPoint> out;
  out.reserve(table.rows());
  for (std::size_t r = 0; r < table.rows(); ++r) {
    for (double v : table.row(r)) {
      if (!std::isfinite(v)) throw NumericError("lift_features: row " + std::to_string(r) + " is not finite");
    }
    out.push_back(h.lift(table.row(r)));
  }
  return out;
}

HyperboloidPoint hyperbolic_linear(const Hyperboloid& h, const HyperboloidPoint& p, const LayerParams& params) {
  const std::vector<double> t = h.log_origin(p);
  const std::size_t d = h.dim();
  std::vector<double> z(d);
  for (std::size_t r = 0; r < d; ++r) {
    double s = params.bias[r];
    for (std::size_t c = 0; c < d; ++c) s += params.weight.at(r, c) * t[c];
    z[r] = s;
  }
  return h.lift(z);
}

std::vector<double> attention_weights(const Hyperboloid& h, const HyperboloidPoint& center,
                                      std::span<const HyperboloidPoint> neighbors, const LayerParams& params) {
  if (neighbors.empty()) return {};
  const std::size_t d = h.dim();
  const std::vector<double> zi = h.log_origin(center);
  std::vector<double> scores;
  for (const auto& nb : neighbors) {
    const std::vector<double> zj = h.log_origin(nb);
    double s = params.att_out_bias[0];
    for (std::size_t r = 0; r < d; ++r) {
      double hidden = params.att_bias[r];
      for (std::size_t c = 0; c < d; ++c) hidden += params.att_left.at(r, c) * zi[c] + params.att_right.at(r, c) * zj[c];
      s += params.att_out[r] * std::max(0.0, hidden);
    }
    scores.push_back(s);
  }
  const Tensor w = ops::softmax(Tensor::vector(scores));
  return w.values();
}

HyperboloidPoint aggregate(const Hyperboloid& h, const HyperboloidPoint& center,
                           std::span<const HyperboloidPoint> neighbors, std::span<const double> weights) {
  if (neighbors.size() != weights.size()) throw DimensionError("aggregate: one weight per neighbour required");
  if (neighbors.empty()) return center;
  manifold::TangentVector sum{center, std::vector<double>(h.dim() + 1, 0.0)};
  for (std::size_t k = 0; k < neighbors.size(); ++k) {
    const auto t = h.log_at(center, neighbors[k]);
    for (std::size_t m = 0; m <= h.dim(); ++m) sum.coords[m] += weights[k] * t.coords[m];
  }
  return h.exp_at(center, sum);
}

HyperboloidPoint hyperbolic_activation(const Hyperboloid& h, const HyperboloidPoint& y) {
  std::vector<double> t = h.log_origin(y);
  for (auto& v : t) v = std::max(0.0, v);
  return h.lift(t);
}

ReferenceResult reference_forward(const Hypergraph& hg, const Tensor& table, const HHConvConfig& cfg,
                                  std::span<const LayerParams> params) {
  cfg.validate();
  if (params.size() != cfg.layers) throw ConfigError("reference_forward: one parameter set per layer required");
  const Hyperboloid h(table.cols(), cfg.curvature);
  const auto& nodes = hg.nodes();
  for (ItemId i : nodes) {
    if (i >= table.rows()) throw LookupError("item " + std::to_string(i) + " has no input row");
  }
  std::vector<std::vector<std::size_t>> nbr(nodes.size());
  for (std::size_t p = 0; p < nodes.size(); ++p) {
    for (ItemId j : hg.extended_neighborhood(nodes[p])) nbr[p].push_back(hg.node_position(j));
  }

  ReferenceResult result{table, {}};
  std::vector<HyperboloidPoint> current;
  for (ItemId i : nodes) current.push_back(h.lift(table.row(i)));
  for (const auto& lp : params) {
    LayerState state;
    for (const auto& p : current) state.transformed.push_back(hyperbolic_linear(h, p, lp));
    for (std::size_t p = 0; p < nodes.size(); ++p) {
      std::vector<HyperboloidPoint> around;
      for (std::size_t q : nbr[p]) around.push_back(state.transformed[q]);
      const auto w = attention_weights(h, state.transformed[p], around, lp);
      state.aggregated.push_back(aggregate(h, state.transformed[p], around, w));
    }
    for (const auto& y : state.aggregated) state.activated.push_back(hyperbolic_activation(h, y));
    current = state.activated;
    result.layers.push_back(std::move(state));
  }
  for (std::size_t p = 0; p < nodes.size(); ++p) {
    const auto out = h.log_origin(current[p]);
    std::copy(out.begin(), out.end(), result.output.row(nodes[p]).begin());
  }
  return result;
}

// ---------------------------------------------------------------------------
// Batched implementation.

void GraphBatch::append(const NeighborhoodIndex& idx, std::uint32_t source_base, std::uint32_t target_base) {
  const auto base = static_cast<std::uint32_t>(source_rows.size());
  for (ItemId i : idx.nodes) {
    source_rows.push_back(source_base + i);
    target_rows.push_back(target_base + i);
  }
  for (std::size_t p = 0; p < idx.size(); ++p) {
    for (auto k = idx.offsets[p]; k < idx.offsets[p + 1]; ++k) neighbors.push_back(base + idx.neighbors[k]);
    offsets.push_back(static_cast<std::uint32_t>(neighbors.size()));
  }
}

void GraphBatch::append(const NeighborhoodIndex& idx, std::span<const std::uint32_t> sources,
                        std::span<const std::uint32_t> targets) {
  if (sources.size() != idx.size() || targets.size() != idx.size()) {
    throw DimensionError("GraphBatch::append: one source and target row per node");
  }
  const auto base = static_cast<std::uint32_t>(source_rows.size());
  source_rows.insert(source_rows.end(), sources.begin(), sources.end());
  target_rows.insert(target_rows.end(), targets.begin(), targets.end());
  for (std::size_t p = 0; p < idx.size(); ++p) {
    for (auto k = idx.offsets[p]; k < idx.offsets[p + 1]; ++k) neighbors.push_back(base + idx.neighbors[k]);
    offsets.push_back(static_cast<std::uint32_t>(neighbors.size()));
  }
}

Var attention_aggregate(const Var& points, const Var& left, const Var& right, const Var& att_bias,
                        const Var& att_out, const Var& att_out_bias, std::shared_ptr<const GraphBatch> graph,
                        double c) {
  const Tensor& X = points.value();
  check_scorer_shapes(X, left.value(), right.value(), att_bias.value(), att_out.value(), att_out_bias.value(),
                      *graph);
  const std::size_t n = X.rows(), D = X.cols();
  const Scorer sc{left.value(), right.value(), att_bias.value(), att_out.value(), att_out_bias.value()[0],
                  left.value().cols()};
  const GraphBatch& g = *graph;

  // Per-pair softmax weights, clamped −⟨xᵢ,xⱼ⟩/c and log-map scales; per-row tangent sums.
  auto weights = std::make_shared<std::vector<double>>(g.pair_count());
  auto alphas = std::make_shared<std::vector<double>>(g.pair_count());
  auto scales = std::make_shared<std::vector<double>>(g.pair_count());
  auto tangents = std::make_shared<Tensor>(Tensor::zeros({n, D}));
  Tensor Y = Tensor::zeros({n, D});

  const double* xd = X.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t begin = g.offsets[i], end = g.offsets[i + 1];
    const double* xi = xd + i * D;
    double* yi = Y.mutable_data().data() + i * D;
    if (begin == end) {
      std::copy(xi, xi + D, yi);
      continue;
    }
    double* w = weights->data() + begin;
    sc.weights(g, i, w);
    double* v = tangents->mutable_data().data() + i * D;
    double beta = 0.0;
    for (std::uint32_t k = begin; k < end; ++k) {
      const double* xj = xd + std::size_t{g.neighbors[k]} * D;
      const double a = std::max(1.0, -lorentz(xi, xj, D) / c);
      (*alphas)[k] = a;
      (*scales)[k] = log_scale(a);
      const double coef = w[k - begin] * (*scales)[k];
      beta += coef * a;
      for (std::size_t m = 0; m < D; ++m) v[m] += coef * xj[m];
    }
    for (std::size_t m = 0; m < D; ++m) v[m] -= beta * xi[m];
    const double s = std::sqrt(std::max(0.0, lorentz(v, v, D)) / c);
    const double ch = std::cosh(s), sh = sinhc(s);
    double sq = c;
    for (std::size_t m = 1; m < D; ++m) {
      yi[m] = ch * xi[m] + sh * v[m];
      sq += yi[m] * yi[m];
    }
    yi[0] = std::sqrt(sq);
  }

  auto out_value = std::make_shared<Tensor>(Y);
  return points.tape()->record(
      std::move(Y), {points, left, right, att_bias, att_out, att_out_bias},
      [points, left, right, att_bias, att_out, att_out_bias, graph, weights, alphas, scales, tangents, out_value, c](
          const Tensor& G, std::span<Tensor> gin) {
        const Tensor& X = points.value();
        const std::size_t n = X.rows(), D = X.cols();
        const GraphBatch& g = *graph;
        const Scorer sc{left.value(), right.value(), att_bias.value(), att_out.value(), att_out_bias.value()[0],
                        left.value().cols()};
        const ScorerGrads sg = scorer_grads(gin);
        Tensor* gx = gin[0].defined() ? &gin[0] : nullptr;
        const double* xd = X.data().data();
        std::vector<double> gy(D), gv(D), gm;

        for (std::size_t i = 0; i < n; ++i) {
          const std::uint32_t begin = g.offsets[i], end = g.offsets[i + 1];
          const double* gi = G.data().data() + i * D;
          if (begin == end) {
            if (gx) {
              for (std::size_t m = 0; m < D; ++m) gx->mutable_data()[i * D + m] += gi[m];
            }
            continue;
          }
          const double* xi = xd + i * D;
          const double* v = tangents->data().data() + i * D;
          const double* yi = out_value->data().data() + i * D;
          // The time coordinate was recomputed from the spatial ones.
          gy[0] = 0.0;
          for (std::size_t m = 1; m < D; ++m) gy[m] = gi[m] + gi[0] * yi[m] / yi[0];

          const double s = std::sqrt(std::max(0.0, lorentz(v, v, D)) / c);
          const double ch = std::cosh(s), sh = sinhc(s);
          const double k = (dot(xi, gy.data(), D) * sh + dot(v, gy.data(), D) * sinhc_slope(s)) / c;
          for (std::size_t m = 0; m < D; ++m) gv[m] = sh * gy[m] + k * (m == 0 ? -v[m] : v[m]);

          const double* w = weights->data() + begin;
          gm.assign(end - begin, 0.0);
          const double xi_gv = dot(xi, gv.data(), D);
          double beta = 0.0;
          double* gxi = gx ? gx->mutable_data().data() + i * D : nullptr;
          for (std::uint32_t p = begin; p < end; ++p) {
            const std::size_t j = g.neighbors[p];
            const double* xj = xd + j * D;
            const double a = (*alphas)[p];
            const double f = (*scales)[p];
            const double coef = w[p - begin] * f;
            beta += coef * a;
            const double ga = dot(xj, gv.data(), D) - a * xi_gv;
            gm[p - begin] = f * ga;
            if (!gxi) continue;
            double* gxj = gx->mutable_data().data() + j * D;
            for (std::size_t m = 0; m < D; ++m) gxj[m] += coef * gv[m];
            if (a > 1.0) {
              const double galpha = -coef * xi_gv + w[p - begin] * log_scale_derivative(a) * ga;
              const double scale = -galpha / c;
              gxi[0] -= scale * xj[0];
              gxj[0] -= scale * xi[0];
              for (std::size_t m = 1; m < D; ++m) {
                gxi[m] += scale * xj[m];
                gxj[m] += scale * xi[m];
              }
            }
          }
          if (gxi) {
            for (std::size_t m = 0; m < D; ++m) gxi[m] += ch * gy[m] - beta * gv[m];
          }
          scorer_backward(sc, g, i, w, gm.data(), sg);
        }
      });
}

Var attention_aggregate_euclidean(const Var& features, const Var& left, const Var& right, const Var& att_bias,
                                  const Var& att_out, const Var& att_out_bias,
                                  std::shared_ptr<const GraphBatch> graph) {
  const Tensor& X = features.value();
  check_scorer_shapes(X, left.value(), right.value(), att_bias.value(), att_out.value(), att_out_bias.value(),
                      *graph);
  const std::size_t n = X.rows(), D = X.cols();
  const Scorer sc{left.value(), right.value(), att_bias.value(), att_out.value(), att_out_bias.value()[0],
                  left.value().cols()};
  const GraphBatch& g = *graph;
  auto weights = std::make_shared<std::vector<double>>(g.pair_count());
  Tensor Y = X;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t begin = g.offsets[i], end = g.offsets[i + 1];
    if (begin == end) continue;
    double* w = weights->data() + begin;
    sc.weights(g, i, w);
    const double* xi = X.data().data() + i * D;
    double* yi = Y.mutable_data().data() + i * D;
    for (std::uint32_t k = begin; k < end; ++k) {
      const double* xj = X.data().data() + std::size_t{g.neighbors[k]} * D;
      for (std::size_t m = 0; m < D; ++m) yi[m] += w[k - begin] * (xj[m] - xi[m]);
    }
  }
  return features.tape()->record(
      std::move(Y), {features, left, right, att_bias, att_out, att_out_bias},
      [features, left, right, att_bias, att_out, att_out_bias, graph, weights](const Tensor& G,
                                                                               std::span<Tensor> gin) {
        const Tensor& X = features.value();
        const std::size_t n = X.rows(), D = X.cols();
        const GraphBatch& g = *graph;
        const Scorer sc{left.value(), right.value(), att_bias.value(), att_out.value(), att_out_bias.value()[0],
                        left.value().cols()};
        const ScorerGrads sg = scorer_grads(gin);
        Tensor* gx = gin[0].defined() ? &gin[0] : nullptr;
        std::vector<double> gm;
        for (std::size_t i = 0; i < n; ++i) {
          const std::uint32_t begin = g.offsets[i], end = g.offsets[i + 1];
          const double* gi = G.data().data() + i * D;
          const double* xi = X.data().data() + i * D;
          double* gxi = gx ? gx->mutable_data().data() + i * D : nullptr;
          if (gxi) {
            for (std::size_t m = 0; m < D; ++m) gxi[m] += gi[m];
          }
          if (begin == end) continue;
          const double* w = weights->data() + begin;
          gm.assign(end - begin, 0.0);
          for (std::uint32_t k = begin; k < end; ++k) {
            const std::size_t j = g.neighbors[k];
            const double* xj = X.data().data() + j * D;
            double s = 0.0;
            for (std::size_t m = 0; m < D; ++m) s += (xj[m] - xi[m]) * gi[m];
            gm[k - begin] = s;
            if (!gxi) continue;
            double* gxj = gx->mutable_data().data() + j * D;
            for (std::size_t m = 0; m < D; ++m) {
              gxj[m] += w[k - begin] * gi[m];
              gxi[m] -= w[k - begin] * gi[m];
            }
          }
          scorer_backward(sc, g, i, w, gm.data(), sg);
        }
      });
}

Var forward_rows(const Var& rows, std::shared_ptr<const GraphBatch> graph, std::span<const LayerVars> layers,
                 const HHConvConfig& cfg) {
  cfg.validate();
  if (layers.size() != cfg.layers) throw ConfigError("hhconv: expected " + std::to_string(cfg.layers) + " layers");
  Var t = rows;
  for (const auto& l : layers) {
    const Var z = ops::add(ops::matmul_nt(t, l.weight), l.bias);
    const Var left = ops::matmul_nt(z, l.att_left);
    const Var right = ops::matmul_nt(z, l.att_right);
    if (cfg.euclidean) {
      t = ops::relu(attention_aggregate_euclidean(z, left, right, l.att_bias, l.att_out, l.att_out_bias, graph));
    } else {
      const Var x = manifold::lift_rows(z, cfg.curvature);
      const Var y = attention_aggregate(x, left, right, l.att_bias, l.att_out, l.att_out_bias, graph, cfg.curvature);
      t = ops::relu(manifold::log_origin_rows(y, cfg.curvature));
    }
  }
  return t;
}

Var forward_batch(const Var& input, const Var& base, std::shared_ptr<const GraphBatch> graph,
                  std::span<const LayerVars> layers, const HHConvConfig& cfg) {
  if (graph->size() == 0) return base;
  for (std::uint32_t r : graph->source_rows) {
    if (r >= input.value().rows()) throw LookupError("hhconv: node reads missing input row " + std::to_string(r));
  }
  const Var rows = ops::gather_rows(input, graph->source_rows);
  const Var out = forward_rows(rows, graph, layers, cfg);
  return ops::scatter_rows(base, graph->target_rows, out);
}

Var forward(const Hypergraph& hg, const Var& table, std::span<const LayerVars> layers, const HHConvConfig& cfg) {
  std::string missing;
  for (ItemId i : hg.nodes()) {
    if (i >= table.value().rows()) missing += (missing.empty() ? "" : ", ") + std::to_string(i);
  }
  if (!missing.empty()) throw LookupError("hhconv: no input rows for items " + missing);
  auto graph = std::make_shared<GraphBatch>();
  graph->append(build_neighborhood_index(hg), 0, 0);
  return forward_batch(table, table, graph, layers, cfg);
}

}  // namespace h2sr::hhconv
