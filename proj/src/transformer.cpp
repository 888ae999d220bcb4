#include "h2sr/transformer.hpp"

#include "h2sr/errors.hpp"
#include "h2sr/ops.hpp"

namespace h2sr {

void TransformerConfig::validate() const {
  if (dim == 0 || heads == 0 || dim % heads != 0) {
    throw ConfigError("transformer: dim " + std::to_string(dim) + " must be a positive multiple of heads " +
                      std::to_string(heads));
  }
  if (blocks == 0) throw ConfigError("transformer: at least one block is required");
  if (max_len == 0) throw ConfigError("transformer: max sequence length must be positive");
  if (!(dropout >= 0 && dropout < 1)) throw ConfigError("transformer: dropout must lie in [0, 1)");
}

void register_transformer(ParameterStore& store, const std::string& prefix, const TransformerConfig& cfg,
                          std::mt19937_64& rng) {
  cfg.validate();
  const std::size_t d = cfg.dim;
  store.add(prefix + ".position", symmetric_uniform(cfg.max_len, d, d, rng));
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    const std::string p = prefix + ".b" + std::to_string(b) + ".";
    for (const char* w : {"query", "key", "value", "attn_out", "ff_in", "ff_out"}) {
      store.add(p + w, symmetric_uniform(d, d, d, rng));
    }
    store.add(p + "ff_in_bias", Tensor::zeros({1, d}));
    store.add(p + "ff_out_bias", Tensor::zeros({1, d}));
    store.add(p + "norm1_gain", Tensor::filled({1, d}, 1.0));
    store.add(p + "norm1_bias", Tensor::zeros({1, d}));
    store.add(p + "norm2_gain", Tensor::filled({1, d}, 1.0));
    store.add(p + "norm2_bias", Tensor::zeros({1, d}));
  }
  store.add(prefix + ".final_gain", Tensor::filled({1, cfg.dim}, 1.0));
  store.add(prefix + ".final_bias", Tensor::zeros({1, cfg.dim}));
}

Var transformer_forward(const VarMap& vars, const std::string& prefix, const TransformerConfig& cfg,
                        const Var& tokens, std::span<const std::size_t> offsets,
                        std::span<const std::uint32_t> positions, bool causal, std::mt19937_64* rng) {
  if (positions.size() != tokens.value().rows()) throw DimensionError("transformer: one position per token row");
  for (auto p : positions) {
    if (p >= cfg.max_len) throw ContractError("transformer: position beyond the maximum sequence length");
  }
  auto drop = [&](const Var& v) { return rng != nullptr ? ops::dropout(v, cfg.dropout, *rng) : v; };
  Var h = drop(ops::add(tokens, ops::gather_rows(vars[prefix + ".position"], positions)));
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    const std::string p = prefix + ".b" + std::to_string(b) + ".";
    const Var a = ops::layer_norm_rows(h, vars[p + "norm1_gain"], vars[p + "norm1_bias"]);
    const Var attn = ops::segment_attention(ops::matmul_nt(a, vars[p + "query"]), ops::matmul_nt(a, vars[p + "key"]),
                                            ops::matmul_nt(a, vars[p + "value"]), offsets, cfg.heads, causal);
    h = ops::add(h, drop(ops::matmul_nt(attn, vars[p + "attn_out"])));
    const Var f = ops::layer_norm_rows(h, vars[p + "norm2_gain"], vars[p + "norm2_bias"]);
    const Var inner = ops::relu(ops::add(ops::matmul_nt(f, vars[p + "ff_in"]), vars[p + "ff_in_bias"]));
    h = ops::add(h, drop(ops::add(ops::matmul_nt(inner, vars[p + "ff_out"]), vars[p + "ff_out_bias"])));
  }
  return ops::layer_norm_rows(h, vars[prefix + ".final_gain"], vars[prefix + ".final_bias"]);
}

}  // namespace h2sr
