#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "h2sr/eval.hpp"
#include "h2sr/hhconv.hpp"
#include "h2sr/params.hpp"
#include "h2sr/transformer.hpp"

namespace h2sr::seqrec {

enum class Variant { base, init, fuse };
Variant parse_variant(const std::string& name);
const char* to_string(Variant v);

/// Order in which the coarse scales gate the monthly table: year then quarter
/// (default) or quarter then year.
enum class HieOrder { year_quarter, quarter_year };
HieOrder parse_hie_order(const std::string& name);
const char* to_string(HieOrder order);

struct Ablations {
  bool no_groups = false;
  bool no_hierarchy = false;
  bool euclidean = false;
  HieOrder order = HieOrder::year_quarter;

  /// "full", "no-groups", "no-hierarchy", "euclidean", "quarter-year" or a "+"-joined combination.
  std::string label() const;
};

struct SeqRecConfig {
  std::size_t dim = 100;
  hhconv::HHConvConfig hhconv;
  TransformerConfig transformer{100, 2, 1, 50, 0.5};
  std::size_t epochs = 30;
  std::size_t batch = 512;
  double lr = 0.001;
  double alpha = 1e-4;
  OptimizerKind optimizer = OptimizerKind::adam;
  Variant variant = Variant::base;
  Ablations ablations;
  std::size_t group_cap = kGroupCap;
  /// Probability that another user may join a group hypergraph during training.
  double group_sampling = 1.0;
  /// One group hypergraph per batch and month instead of per user and month.
  bool batch_groups = false;
  /// Keep the parameters of the epoch with the best validation NDCG@10.
  bool select_best_epoch = false;
  std::uint64_t seed = 0;

  /// Checks ranges and that the transformer width equals dim.
  void validate() const;
};

// ---------------------------------------------------------------------------
// Building blocks.

/// ReLU(context·Wᵀ + b) ⊙ target, row-wise on n×d operands (W d×d, b 1×d).
Var mix_gate(const Var& context, const Var& target, const Var& weight, const Var& bias);

struct MixVars {
  Var inner_weight, inner_bias;  // first gate, applied to the month table
  Var outer_weight, outer_bias;  // second gate, applied to the inner result
};

/// Row-aligned month/quarter/year tables combined into the hierarchical table.
/// Year-quarter order: outer(quarter, inner(year, month)); quarter-year order
/// feeds quarter to the inner gate and year to the outer one. With
/// `no_hierarchy` the month table is returned.
Var build_multiscale(const Var& month, const Var& quarter, const Var& year, const MixVars& mix,
                     const Ablations& ablations);

/// Two-layer scorer on [user ‖ item]: ReLU(·W₁ᵀ + b₁)·w₂ᵀ + b₂, an n×1 column.
/// With an rng the hidden layer is dropped out at rate `dropout`.
Var score(const Var& users, const Var& items, const Var& hidden, const Var& hidden_bias, const Var& out,
          const Var& out_bias, double dropout = 0.0, std::mt19937_64* rng = nullptr);

/// mean(−ln σ(pos − neg)) + α·squared_norm. `pos` and `neg` have equal shapes.
Var bpr_loss(const Var& pos, const Var& neg, double alpha, const Var& squared_norm);

// ---------------------------------------------------------------------------
// Calendar layout.

/// Contiguous months spanning a log, with their quarters and years.
class Timeline {
 public:
  explicit Timeline(const InteractionLog& log);

  std::size_t months() const { return months_.size(); }
  std::size_t quarters() const { return quarters_.size(); }
  std::size_t years() const { return years_.size(); }
  const CalendarIndex& month(std::size_t m) const { return months_[m]; }
  /// Throws LookupError outside the span.
  std::size_t month_of(std::int64_t timestamp) const;
  std::size_t month_index(const CalendarIndex& month) const;
  std::size_t quarter_index(const CalendarIndex& quarter) const;
  std::size_t year_index(const CalendarIndex& year) const;
  std::size_t quarter_of(std::size_t month) const { return quarter_of_[month]; }
  std::size_t year_of(std::size_t month) const { return year_of_[month]; }

 private:
  std::vector<CalendarIndex> months_, quarters_, years_;
  std::vector<std::size_t> quarter_of_, year_of_;
};

/// An item row requested for a user at a month.
struct RowRequest {
  UserId user = 0;
  std::uint32_t month = 0;
  ItemId item = 0;
};

/// One training sequence: the user's latest training interactions, inputs at
/// positions 0..n−2 predicting positions 1..n−1, with one negative per target.
/// Target k+1 is scored with the tables of the month before its own month, so
/// the user's hyperedge containing the target never feeds its candidate rows.
struct Example {
  UserId user = 0;
  std::vector<ItemId> items;
  std::vector<std::uint32_t> months;
  std::vector<std::uint32_t> candidate_months;  // items.size() − 1 entries
  std::vector<ItemId> negatives;                // items.size() − 1 entries
};

/// Group hypergraphs used for one forward pass.
class GroupSource {
 public:
  /// Identifier of the group instance for (user, month) and its neighbourhood
  /// index, or nullptr when that user has no hyperedge in the month.
  virtual std::pair<std::size_t, const NeighborhoodIndex*> group(UserId user, std::uint32_t month) = 0;
  virtual ~GroupSource() = default;
};

class Recommender {
 public:
  /// `full` defines vocabularies and the calendar span; hypergraphs are built
  /// from the training part of `split` only. `pretrained` (n_items×dim) is
  /// required by the init and fuse variants.
  Recommender(SeqRecConfig cfg, const InteractionLog& full, const eval::SplitLog& split,
              std::optional<Tensor> pretrained = std::nullopt);

  const SeqRecConfig& config() const { return cfg_; }
  const Timeline& timeline() const { return timeline_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  /// Replaces the parameters, e.g. from a checkpoint; names and shapes must match.
  void load_params(const ParameterStore& store);

  /// Stacked hierarchical tables: row m·n_items + i is item i in month m.
  Var hierarchical_table(const VarMap& vars) const;
  /// Group-enhanced (and, for fuse, pretrained-gated) rows for each request.
  Var item_rows(const VarMap& vars, const Var& table, std::span<const RowRequest> requests,
                GroupSource& groups) const;

  /// Training examples for every user with at least two training interactions;
  /// negatives drawn uniformly from items outside the user's training history.
  std::vector<Example> make_examples(std::mt19937_64& rng) const;
  /// Mean BPR loss of the batch plus α‖θ‖² over tracked parameters. Dropout
  /// is applied only when `rng` is non-null.
  Var batch_loss(const VarMap& vars, std::span<const Example> batch, GroupSource& groups,
                 std::mt19937_64* rng) const;
  /// Group source for (user, month) pairs built from the training hypergraphs.
  std::unique_ptr<GroupSource> user_groups() const;

  struct Progress {
    std::size_t epoch;
    double loss;
  };
  struct TrainResult {
    std::vector<double> loss_trace;  // epoch-averaged training objective
    std::size_t best_epoch = 0;      // 1-based; the last epoch unless selection is on
  };
  TrainResult train(const std::function<void(const Progress&)>& on_epoch = {});

  /// Scores candidates with the current parameters, without dropout.
  eval::Scorer scorer() const;
  eval::MetricsReport evaluate(const eval::EvalConfig& cfg, eval::Target target = eval::Target::test) const;

 private:
  void init_params();
  bool trainable(const std::string& name, std::size_t epoch) const;

  SeqRecConfig cfg_;
  const InteractionLog* full_;
  const eval::SplitLog* split_;
  InteractionLog train_log_;
  Timeline timeline_;
  std::optional<Tensor> pretrained_;
  ParameterStore params_;
  std::vector<std::uint32_t> quarter_rows_, year_rows_;  // per stacked month row
  std::shared_ptr<const hhconv::GraphBatch> month_graph_, quarter_graph_, year_graph_;
  std::vector<Hypergraph> month_hypergraphs_;  // training hypergraph of each timeline month
  mutable std::vector<std::unique_ptr<NeighborhoodIndex>> group_cache_;
  mutable std::vector<bool> group_cached_;
  std::vector<std::vector<bool>> seen_;  // training items per user
  friend class CachedUserGroups;
};

}  // namespace h2sr::seqrec
