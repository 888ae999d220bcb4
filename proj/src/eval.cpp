#include "h2sr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>

#include "h2sr/errors.hpp"

namespace h2sr::eval {

void EvalConfig::validate() const {
  if (ks.empty()) throw ConfigError("eval: K list is empty");
  if (ks.front() == 0 || !std::is_sorted(ks.begin(), ks.end()) ||
      std::adjacent_find(ks.begin(), ks.end()) != ks.end()) {
    throw ConfigError("eval: K values must be positive and strictly ascending");
  }
  if (negatives.empty()) throw ConfigError("eval: NEG list is empty");
  for (std::size_t n : negatives) {
    if (n < ks.back()) throw ConfigError("eval: NEG " + std::to_string(n) + " is below the largest K");
  }
}

std::vector<Interaction> UserSplit::history(Target target) const {
  std::vector<Interaction> h = train;
  if (target == Target::test) h.push_back(validation);
  return h;
}

InteractionLog SplitLog::train_log(const InteractionLog& full) const {
  std::vector<Interaction> records;
  for (const auto& u : users) records.insert(records.end(), u.train.begin(), u.train.end());
  return InteractionLog(std::move(records), full.n_users(), full.n_items(), full.user_names(), full.item_names());
}

SplitLog split_leave_last_two(const InteractionLog& log) {
  SplitLog split;
  split.n_users = log.n_users();
  split.n_items = log.n_items();
  for (UserId u = 0; u < log.n_users(); ++u) {
    const auto recs = log.user_records(u);
    if (recs.size() < 3) {
      split.excluded.push_back(u);
      continue;
    }
    UserSplit s;
    s.user = u;
    s.train.assign(recs.begin(), recs.end() - 2);
    s.validation = recs[recs.size() - 2];
    s.test = recs.back();
    split.users.push_back(std::move(s));
  }
  if (!split.excluded.empty()) {
    std::cerr << "warning: " << split.excluded.size() << " users with fewer than 3 interactions excluded from the split\n";
  }
  return split;
}

std::vector<ItemId> sample_negatives(const InteractionLog& log, UserId user, std::size_t count,
                                     std::mt19937_64& rng) {
  std::vector<bool> seen(log.n_items(), false);
  for (const auto& r : log.user_records(user)) seen[r.item] = true;
  std::vector<ItemId> pool;
  for (ItemId i = 0; i < log.n_items(); ++i) {
    if (!seen[i]) pool.push_back(i);
  }
  if (pool.size() < count) {
    throw EvalError("user " + log.user_names()[user] + " has only " + std::to_string(pool.size()) +
                    " unseen items, " + std::to_string(count) + " negatives requested");
  }
  // Partial Fisher–Yates: the first `count` slots become a uniform sample.
  for (std::size_t k = 0; k < count; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
    std::swap(pool[k], pool[pick(rng)]);
  }
  pool.resize(count);
  return pool;
}

namespace {
void check_finite(double target, std::span<const double> negatives) {
  if (!std::isfinite(target)) throw EvalError("non-finite target score");
  for (double s : negatives) {
    if (!std::isfinite(s)) throw EvalError("non-finite negative score");
  }
}
}  // namespace

std::size_t rank_target(double target, std::span<const double> negatives) {
  check_finite(target, negatives);
  std::size_t rank = 1;
  for (double s : negatives) rank += s >= target ? 1 : 0;
  return rank;
}

std::size_t rank_by_sorting(double target, std::span<const double> negatives) {
  check_finite(target, negatives);
  // (score, is_target); descending score, target last among equals.
  std::vector<std::pair<double, bool>> all;
  all.emplace_back(target, true);
  for (double s : negatives) all.emplace_back(s, false);
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return !a.second && b.second;
  });
  const auto it = std::find_if(all.begin(), all.end(), [](const auto& e) { return e.second; });
  return static_cast<std::size_t>(it - all.begin()) + 1;
}

std::vector<HitNdcg> metrics_at_k(std::size_t rank, std::span<const std::size_t> ks) {
  if (rank == 0) throw ContractError("rank must be at least 1");
  std::vector<HitNdcg> out;
  for (std::size_t k : ks) {
    if (rank <= k) {
      out.push_back({1.0, 1.0 / std::log2(static_cast<double>(rank) + 1.0)});
    } else {
      out.push_back({0.0, 0.0});
    }
  }
  return out;
}

double MetricsReport::value(const std::string& metric, std::size_t k, std::size_t negatives) const {
  for (const auto& r : rows) {
    if (r.metric == metric && r.k == k && r.negatives == negatives) return r.value;
  }
  throw LookupError("report has no " + metric + "@" + std::to_string(k) + " for NEG=" + std::to_string(negatives));
}

std::string MetricsReport::to_tsv() const {
  std::string out = "metric\tK\tNEG\tvalue\tn_users\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.6f", r.value);
    out += r.metric + "\t" + std::to_string(r.k) + "\t" + std::to_string(r.negatives) + "\t" + buf + "\t" +
           std::to_string(r.n_users) + "\n";
  }
  return out;
}

MetricsReport evaluate(const SplitLog& split, const InteractionLog& full, const Scorer& scorer,
                       const EvalConfig& cfg, Target target, std::size_t batch_users) {
  cfg.validate();
  if (split.users.empty()) throw EvalError("no users to evaluate");
  MetricsReport report;
  for (std::size_t neg : cfg.negatives) {
    std::vector<double> hit(cfg.ks.size(), 0.0), ndcg(cfg.ks.size(), 0.0);
    for (std::size_t begin = 0; begin < split.users.size(); begin += batch_users) {
      const std::size_t end = std::min(split.users.size(), begin + batch_users);
      std::vector<Query> queries;
      for (std::size_t k = begin; k < end; ++k) {
        const UserSplit& u = split.users[k];
        std::seed_seq seq{cfg.seed, static_cast<std::uint64_t>(u.user), static_cast<std::uint64_t>(neg),
                          static_cast<std::uint64_t>(target == Target::test)};
        std::mt19937_64 rng(seq);
        Query q{u.user, target, {u.held_out(target).item}};
        const auto negs = sample_negatives(full, u.user, neg, rng);
        q.candidates.insert(q.candidates.end(), negs.begin(), negs.end());
        queries.push_back(std::move(q));
      }
      const auto scores = scorer(queries);
      if (scores.size() != queries.size()) throw EvalError("scorer returned the wrong number of score lists");
      for (std::size_t q = 0; q < queries.size(); ++q) {
        if (scores[q].size() != queries[q].candidates.size()) throw EvalError("scorer returned a short score list");
        const std::size_t rank = rank_target(scores[q][0], std::span<const double>(scores[q]).subspan(1));
        const auto m = metrics_at_k(rank, cfg.ks);
        for (std::size_t k = 0; k < m.size(); ++k) {
          hit[k] += m[k].hit;
          ndcg[k] += m[k].ndcg;
        }
      }
    }
    const double n = static_cast<double>(split.users.size());
    for (std::size_t k = 0; k < cfg.ks.size(); ++k) {
      report.rows.push_back({"HR", cfg.ks[k], neg, hit[k] / n, split.users.size()});
    }
    for (std::size_t k = 0; k < cfg.ks.size(); ++k) {
      report.rows.push_back({"NDCG", cfg.ks[k], neg, ndcg[k] / n, split.users.size()});
    }
  }
  return report;
}

}  // namespace h2sr::eval
