#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "h2sr/interactions.hpp"
#include "h2sr/params.hpp"

namespace h2sr {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout (little-endian): "H2SR", u32 version, u64 vocabulary hash,
/// u32 matrix count, per matrix {u32 name length, name bytes, u64 rows,
/// u64 cols}, then every payload as row-major f32 in header order. The JSON
/// sidecar at "<path>.json" carries vocabularies, config and seed.
struct Checkpoint {
  std::uint64_t vocabulary_hash = 0;
  std::map<std::string, Tensor> matrices;  // values rounded to single precision
  std::vector<std::string> user_names;
  std::vector<std::string> item_names;
  std::string config_json = "{}";
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::string kind;  // "pretrain" or "model"
};

std::filesystem::path sidecar_path(const std::filesystem::path& path);

/// Writes both files atomically. Throws NumericError for non-finite matrices.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

/// Validates the header and exact payload length before returning anything.
/// When `expected_vocabulary` is non-zero a different stored hash is refused.
Checkpoint load_checkpoint(const std::filesystem::path& path, std::uint64_t expected_vocabulary = 0);

/// Rounds every entry to the nearest float, as a save/load round trip would.
Tensor to_single_precision(const Tensor& t);

/// FNV-1a over a byte string.
std::uint64_t fnv1a(const std::string& bytes);

}  // namespace h2sr
