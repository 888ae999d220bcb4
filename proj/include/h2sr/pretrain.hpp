#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "h2sr/hypergraph.hpp"
#include "h2sr/params.hpp"
#include "h2sr/transformer.hpp"

namespace h2sr::pretrain {

using Sequence = std::vector<std::uint32_t>;

struct ContrastiveConfig {
  double temperature = 0.5;
  std::size_t negatives = 8;
  /// Weights of the masked-item, masked-subsequence and hyperedge tasks.
  std::array<double, 3> weights{0.1, 1.0, 1.0};

  void validate() const;
};

/// Non-empty subset of the three self-supervised tasks, written as letters
/// M (masked items), S (masked subsequence) and H (hyperedge overlap).
struct TaskSet {
  bool items = true;
  bool subsequence = true;
  bool hyperedges = true;

  /// Parses "M,S,H"-style lists; throws ConfigError on unknown or empty lists.
  static TaskSet parse(const std::string& text);
  std::string to_string() const;
  bool empty() const { return !items && !subsequence && !hyperedges; }
  /// Every non-empty subset of this set, in a fixed order.
  std::vector<TaskSet> subsets() const;
};

struct PretrainConfig {
  ContrastiveConfig contrastive;
  TransformerConfig encoder{100, 2, 2, 50, 0.5};
  TaskSet tasks;
  std::size_t epochs = 100;
  std::size_t batch = 64;
  double lr = 0.001;
  OptimizerKind optimizer = OptimizerKind::sgd;
  /// Hyperedge pairs drawn per epoch; 0 means one per user.
  std::size_t pairs_per_epoch = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// The reserved mask token for a vocabulary of `n_items` items.
inline std::uint32_t mask_token(std::size_t n_items) { return static_cast<std::uint32_t>(n_items); }

/// Two copies of `seq` with distinct positions `a` and `b` masked.
std::pair<Sequence, Sequence> mask_views_at(const Sequence& seq, std::uint32_t mask, std::size_t a, std::size_t b);
/// Copy of `seq` with positions start and start+1 masked.
Sequence mask_window_at(const Sequence& seq, std::uint32_t mask, std::size_t start);

/// Random distinct positions; nullopt (skip the sample) below two items.
std::optional<std::pair<Sequence, Sequence>> mask_random_views(const Sequence& seq, std::uint32_t mask,
                                                               std::mt19937_64& rng);
/// Uniform window start; nullopt below three items.
std::optional<Sequence> mask_subsequence(const Sequence& seq, std::uint32_t mask, std::mt19937_64& rng);

/// Hyperedges of every bucket with their overlap structure.
class HyperedgePairs {
 public:
  explicit HyperedgePairs(const std::map<CalendarIndex, Hypergraph>& buckets);

  /// Items of each hyperedge in first-interaction order.
  const std::vector<Sequence>& edges() const { return edges_; }
  std::size_t bucket_of(std::size_t edge) const { return bucket_[edge]; }
  /// Unordered same-bucket pairs sharing an item, each stored once as (low, high).
  const std::vector<std::pair<std::size_t, std::size_t>>& positives() const { return positives_; }
  bool is_positive(std::size_t a, std::size_t b) const;

  /// `count` same-bucket hyperedges disjoint from `anchor` (drawn with
  /// replacement), or cross-bucket hyperedges when the bucket has none.
  std::vector<std::size_t> sample_negatives(std::size_t anchor, std::size_t count, std::mt19937_64& rng) const;

 private:
  std::vector<Sequence> edges_;
  std::vector<std::size_t> bucket_;
  std::vector<std::size_t> bucket_begin_;  // edges of bucket b are [begin[b], begin[b+1])
  std::vector<std::vector<std::size_t>> overlapping_;
  std::vector<std::pair<std::size_t, std::size_t>> positives_;
};

/// Row-wise cosine similarity of two n×d matrices as an n×1 column. Throws
/// NumericError when a row has zero norm.
Var cosine_rows(const Var& a, const Var& b);

/// Mean over anchors of −log softmax of the positive among its candidates.
/// Segment s of `candidates` is rows [offsets[s], offsets[s+1]) with the
/// positive first; similarities are cosine over temperature.
Var contrastive_loss_batch(const Var& anchors, const Var& candidates, std::span<const std::size_t> offsets,
                           double temperature);
/// Single anchor (1×d) with its positive (1×d) and k×d negatives (k may be 0).
Var contrastive_loss(const Var& anchor, const Var& positive, const std::optional<Var>& negatives, double temperature);

/// Mean-pooled encoder output for each sequence (truncated to the latest
/// max_len tokens). Empty sequences are a ContractError.
Var encode(const VarMap& vars, const PretrainConfig& cfg, std::span<const Sequence> seqs, std::mt19937_64* rng);

/// Registers "pretrain.items" ((n_items + 1)×d, last row the mask token) and the encoder.
void register_encoder(ParameterStore& store, const PretrainConfig& cfg, std::size_t n_items, std::mt19937_64& rng);

struct PretrainResult {
  Tensor table;  // n_items×d
  std::vector<double> epoch_loss;
  std::vector<std::array<double, 3>> task_loss;  // per-epoch task means, 0 when a task had no samples
};

/// Trains the encoder on `log` (typically the training split) and returns the
/// learned item table.
PretrainResult run_pretrain(const InteractionLog& log, const PretrainConfig& cfg);

}  // namespace h2sr::pretrain
