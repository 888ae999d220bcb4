#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "h2sr/hypergraph.hpp"
#include "h2sr/manifold.hpp"
#include "h2sr/params.hpp"

namespace h2sr::hhconv {

struct HHConvConfig {
  std::size_t layers = 2;
  double curvature = 1.0;
  /// Epochs during which convolution parameters are updated; frozen afterwards.
  std::size_t epochs = 300;
  /// Replaces every lift/log with the identity (Euclidean message passing).
  bool euclidean = false;

  void validate() const;
};

/// One layer: linear map z = W·t + b, then attention scores
/// w₂·relu(A·zᵢ + B·zⱼ + b₁) + b₂ over each extended neighbourhood.
struct LayerParams {
  Tensor weight;        // d×d
  Tensor bias;          // 1×d
  Tensor att_left;      // d×d, applied to the centre node
  Tensor att_right;     // d×d, applied to the neighbour
  Tensor att_bias;      // 1×d
  Tensor att_out;       // 1×d
  Tensor att_out_bias;  // 1×1

  static LayerParams init(std::size_t d, std::mt19937_64& rng);
  /// W = I, zero bias, zero scorer (uniform attention).
  static LayerParams identity(std::size_t d);
};

/// Adds `layers` layers under "<prefix>.l<k>.<field>" to the store.
void register_params(ParameterStore& store, const std::string& prefix, std::size_t d,
                     std::size_t layers, std::mt19937_64& rng);
void store_layer(ParameterStore& store, const std::string& prefix, std::size_t layer,
                 const LayerParams& p);
LayerParams load_layer(const ParameterStore& store, const std::string& prefix, std::size_t layer);

struct LayerVars {
  Var weight, bias, att_left, att_right, att_bias, att_out, att_out_bias;
};
LayerVars bind_layer(const VarMap& vars, const std::string& prefix, std::size_t layer);
std::vector<LayerVars> bind_layers(const VarMap& vars, const std::string& prefix, std::size_t layers);

// ---------------------------------------------------------------------------
// Point-level stages. These validate their inputs and are the reference the
// batched tape implementation is checked against.

using manifold::Hyperboloid;
using manifold::HyperboloidPoint;

/// Lifts every row of an n×d table.
std::vector<HyperboloidPoint> lift_features(const Hyperboloid& h, const Tensor& table);
/// lift(W·log_origin(p) + b).
HyperboloidPoint hyperbolic_linear(const Hyperboloid& h, const HyperboloidPoint& p, const LayerParams& params);
/// Softmax over the neighbours of the scorer applied to (log_origin(xᵢ), log_origin(xⱼ)).
std::vector<double> attention_weights(const Hyperboloid& h, const HyperboloidPoint& center,
                                      std::span<const HyperboloidPoint> neighbors,
                                      const LayerParams& params);
/// exp_{xᵢ}(Σⱼ Mᵢⱼ·log_{xᵢ}(xⱼ)); xᵢ when there are no neighbours.
HyperboloidPoint aggregate(const Hyperboloid& h, const HyperboloidPoint& center,
                           std::span<const HyperboloidPoint> neighbors, std::span<const double> weights);
/// lift(relu(log_origin(y))).
HyperboloidPoint hyperbolic_activation(const Hyperboloid& h, const HyperboloidPoint& y);

/// Points after each stage of one layer, in hypergraph node order.
struct LayerState {
  std::vector<HyperboloidPoint> transformed;
  std::vector<HyperboloidPoint> aggregated;
  std::vector<HyperboloidPoint> activated;
};

struct ReferenceResult {
  Tensor output;  // same shape as the input table
  std::vector<LayerState> layers;
};

/// Unbatched forward over one hypergraph; rows of items outside the graph are
/// copied through. Hyperbolic mode only.
ReferenceResult reference_forward(const Hypergraph& hg, const Tensor& table, const HHConvConfig& cfg,
                                  std::span<const LayerParams> params);

// ---------------------------------------------------------------------------
// Batched, differentiable implementation.

/// Disjoint union of hypergraphs. Node k reads input row `source_rows[k]` and
/// its result is written to output row `target_rows[k]`; neighbourhoods are CSR
/// lists of node indices.
struct GraphBatch {
  std::vector<std::uint32_t> source_rows;
  std::vector<std::uint32_t> target_rows;
  std::vector<std::uint32_t> offsets{0};
  std::vector<std::uint32_t> neighbors;

  std::size_t size() const { return source_rows.size(); }
  std::size_t pair_count() const { return neighbors.size(); }
  /// Appends `idx`; node item i reads row source_base + i and writes row target_base + i.
  void append(const NeighborhoodIndex& idx, std::uint32_t source_base, std::uint32_t target_base);
  /// Appends `idx` with explicit per-node input and output rows.
  void append(const NeighborhoodIndex& idx, std::span<const std::uint32_t> sources,
              std::span<const std::uint32_t> targets);
};

/// Fused attention-weighted aggregation on the hyperboloid. `points` is n×(d+1),
/// `left`/`right` are the n×d scorer projections of the origin tangents.
/// Returns n×(d+1) aggregated points.
Var attention_aggregate(const Var& points, const Var& left, const Var& right, const Var& att_bias,
                        const Var& att_out, const Var& att_out_bias,
                        std::shared_ptr<const GraphBatch> graph, double c);
/// Euclidean counterpart on n×d features: yᵢ = xᵢ + Σⱼ Mᵢⱼ(xⱼ − xᵢ).
Var attention_aggregate_euclidean(const Var& features, const Var& left, const Var& right,
                                  const Var& att_bias, const Var& att_out, const Var& att_out_bias,
                                  std::shared_ptr<const GraphBatch> graph);

/// Runs all layers on the n×d rows gathered for the batch nodes and returns the
/// n×d Euclidean outputs (log_origin of the final points).
Var forward_rows(const Var& rows, std::shared_ptr<const GraphBatch> graph, std::span<const LayerVars> layers,
                 const HHConvConfig& cfg);

/// Output table of `rows_out` rows: `base` (rows_out×d) with every batch node's
/// target row replaced by its convolution result computed from `input`.
Var forward_batch(const Var& input, const Var& base, std::shared_ptr<const GraphBatch> graph,
                  std::span<const LayerVars> layers, const HHConvConfig& cfg);

/// Single hypergraph over an n_items×d table; items outside the graph pass through.
Var forward(const Hypergraph& hg, const Var& table, std::span<const LayerVars> layers, const HHConvConfig& cfg);

}  // namespace h2sr::hhconv
