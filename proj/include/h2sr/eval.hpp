#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "h2sr/interactions.hpp"

namespace h2sr::eval {

struct EvalConfig {
  std::vector<std::size_t> ks{1, 5, 10, 20};
  std::vector<std::size_t> negatives{100};
  std::uint64_t seed = 0;

  /// K ascending and positive, NEG ≥ max K.
  void validate() const;
};

enum class Target { validation, test };

struct UserSplit {
  UserId user = 0;
  std::vector<Interaction> train;
  Interaction validation;
  Interaction test;

  /// Interactions visible when predicting `target`: train, plus the validation
  /// record when predicting the test record.
  std::vector<Interaction> history(Target target) const;
  const Interaction& held_out(Target target) const {
    return target == Target::test ? test : validation;
  }
};

struct SplitLog {
  std::vector<UserSplit> users;
  std::vector<UserId> excluded;  // fewer than 3 interactions
  std::size_t n_users = 0;
  std::size_t n_items = 0;

  /// The training interactions as a log sharing the original vocabularies.
  InteractionLog train_log(const InteractionLog& full) const;
};

/// Last interaction → test, second to last → validation, the rest → train.
/// Users with fewer than 3 interactions are excluded with a warning on stderr.
SplitLog split_leave_last_two(const InteractionLog& log);

/// `count` distinct items the user never interacted with, uniform without
/// replacement. Throws EvalError when fewer candidates exist.
std::vector<ItemId> sample_negatives(const InteractionLog& log, UserId user, std::size_t count,
                                     std::mt19937_64& rng);

/// 1 + #{negatives ≥ target}. Throws EvalError on non-finite scores.
std::size_t rank_target(double target, std::span<const double> negatives);
/// Same rank by fully sorting the candidates (target placed after equal scores).
std::size_t rank_by_sorting(double target, std::span<const double> negatives);

struct HitNdcg {
  double hit = 0;
  double ndcg = 0;
};
/// Per K: HR = [rank ≤ K], NDCG = [rank ≤ K] / log₂(rank + 1).
std::vector<HitNdcg> metrics_at_k(std::size_t rank, std::span<const std::size_t> ks);

struct MetricRow {
  std::string metric;  // "HR" or "NDCG"
  std::size_t k = 0;
  std::size_t negatives = 0;
  double value = 0;
  std::size_t n_users = 0;
};

struct MetricsReport {
  std::vector<MetricRow> rows;

  /// Throws LookupError when the row is absent.
  double value(const std::string& metric, std::size_t k, std::size_t negatives) const;
  /// "metric\tK\tNEG\tvalue\tn_users" header plus one line per row.
  std::string to_tsv() const;
};

/// One candidate list to score: the held-out item first, then the negatives.
struct Query {
  UserId user = 0;
  Target target = Target::test;
  std::vector<ItemId> candidates;
};

/// Scores for each query's candidates, in candidate order.
using Scorer = std::function<std::vector<std::vector<double>>(std::span<const Query>)>;

/// Ranks every split user's held-out item against sampled negatives for each
/// NEG in the config. Negative samples depend only on (seed, user, NEG).
MetricsReport evaluate(const SplitLog& split, const InteractionLog& full, const Scorer& scorer,
                       const EvalConfig& cfg, Target target = Target::test, std::size_t batch_users = 64);

}  // namespace h2sr::eval
