#pragma once

#include <random>
#include <span>
#include <string>

#include "h2sr/params.hpp"

namespace h2sr {

struct TransformerConfig {
  std::size_t dim = 100;
  std::size_t heads = 2;
  std::size_t blocks = 1;
  std::size_t max_len = 50;
  double dropout = 0.5;

  void validate() const;
};

/// Pre-norm Transformer encoder: learned positions, then per block
/// self-attention and a ReLU feed-forward layer, each as a residual branch,
/// then a final layer norm. Parameters live under "<prefix>.".
void register_transformer(ParameterStore& store, const std::string& prefix, const TransformerConfig& cfg,
                          std::mt19937_64& rng);

/// Encodes row segments of `tokens` (N×d) independently. `positions[r]` is
/// row r's index inside its segment (< max_len). Dropout is applied only when
/// `rng` is non-null.
Var transformer_forward(const VarMap& vars, const std::string& prefix, const TransformerConfig& cfg,
                        const Var& tokens, std::span<const std::size_t> offsets,
                        std::span<const std::uint32_t> positions, bool causal, std::mt19937_64* rng);

}  // namespace h2sr
