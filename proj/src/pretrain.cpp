#include "h2sr/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

#include "h2sr/errors.hpp"
#include "h2sr/ops.hpp"

namespace h2sr::pretrain {

void ContrastiveConfig::validate() const {
  if (!(temperature > 0)) throw ConfigError("contrastive temperature must be positive");
  for (double w : weights) {
    if (!(w >= 0)) throw ConfigError("task weights must be non-negative");
  }
}

TaskSet TaskSet::parse(const std::string& text) {
  TaskSet t{false, false, false};
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto comma = text.find(',', pos);
    const std::string tok = text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    if (tok == "M") {
      t.items = true;
    } else if (tok == "S") {
      t.subsequence = true;
    } else if (tok == "H") {
      t.hyperedges = true;
    } else {
      throw ConfigError("unknown pre-training task '" + tok + "' (expected M, S or H)");
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (t.empty()) throw ConfigError("task list is empty");
  return t;
}

std::string TaskSet::to_string() const {
  std::string s;
  auto add = [&s](bool on, const char* name) {
    if (!on) return;
    if (!s.empty()) s += ',';
    s += name;
  };
  add(items, "M");
  add(subsequence, "S");
  add(hyperedges, "H");
  return s;
}

std::vector<TaskSet> TaskSet::subsets() const {
  std::vector<TaskSet> out;
  for (int mask = 7; mask >= 1; --mask) {
    const TaskSet t{(mask & 4) != 0 && items, (mask & 2) != 0 && subsequence, (mask & 1) != 0 && hyperedges};
    const bool proper = ((mask & 4) == 0 || items) && ((mask & 2) == 0 || subsequence) && ((mask & 1) == 0 || hyperedges);
    if (proper && !t.empty()) out.push_back(t);
  }
  return out;
}

void PretrainConfig::validate() const {
  contrastive.validate();
  encoder.validate();
  if (tasks.empty()) throw ConfigError("pre-training needs at least one task");
  if (epochs == 0) throw ConfigError("pre-training epochs must be positive");
  if (batch < 2) throw ConfigError("pre-training batch must hold at least two sequences");
  if (!(lr > 0)) throw ConfigError("pre-training learning rate must be positive");
}

std::pair<Sequence, Sequence> mask_views_at(const Sequence& seq, std::uint32_t mask, std::size_t a, std::size_t b) {
  if (a == b || a >= seq.size() || b >= seq.size()) throw ContractError("mask positions must be distinct and in range");
  std::pair<Sequence, Sequence> out{seq, seq};
  out.first[a] = mask;
  out.second[b] = mask;
  return out;
}

Sequence mask_window_at(const Sequence& seq, std::uint32_t mask, std::size_t start) {
  if (start + 2 > seq.size()) throw ContractError("masked window runs past the sequence end");
  Sequence out = seq;
  out[start] = mask;
  out[start + 1] = mask;
  return out;
}

std::optional<std::pair<Sequence, Sequence>> mask_random_views(const Sequence& seq, std::uint32_t mask,
                                                               std::mt19937_64& rng) {
  if (seq.size() < 2) return std::nullopt;
  std::uniform_int_distribution<std::size_t> first(0, seq.size() - 1), other(0, seq.size() - 2);
  const std::size_t a = first(rng);
  std::size_t b = other(rng);
  if (b >= a) ++b;
  return mask_views_at(seq, mask, a, b);
}

std::optional<Sequence> mask_subsequence(const Sequence& seq, std::uint32_t mask, std::mt19937_64& rng) {
  if (seq.size() < 3) return std::nullopt;
  std::uniform_int_distribution<std::size_t> start(0, seq.size() - 2);
  return mask_window_at(seq, mask, start(rng));
}

HyperedgePairs::HyperedgePairs(const std::map<CalendarIndex, Hypergraph>& buckets) {
  std::size_t b = 0;
  for (const auto& [when, hg] : buckets) {
    bucket_begin_.push_back(edges_.size());
    const std::size_t base = edges_.size();
    for (const auto& e : hg.hyperedges()) {
      edges_.emplace_back(e.items.begin(), e.items.end());
      bucket_.push_back(b);
    }
    overlapping_.resize(edges_.size());
    for (std::size_t k = 0; k < hg.hyperedges().size(); ++k) {
      std::vector<std::size_t> hits;
      for (ItemId item : hg.hyperedges()[k].items) {
        for (auto e : hg.incident_edges(item)) {
          if (e != k) hits.push_back(base + e);
        }
      }
      std::sort(hits.begin(), hits.end());
      hits.erase(std::unique(hits.begin(), hits.end()), hits.end());
      for (auto h : hits) {
        if (h > base + k) positives_.emplace_back(base + k, h);
      }
      overlapping_[base + k] = std::move(hits);
    }
    ++b;
  }
  bucket_begin_.push_back(edges_.size());
}

bool HyperedgePairs::is_positive(std::size_t a, std::size_t b) const {
  if (a >= edges_.size() || b >= edges_.size()) throw LookupError("hyperedge index out of range");
  return std::binary_search(overlapping_[a].begin(), overlapping_[a].end(), b);
}

std::vector<std::size_t> HyperedgePairs::sample_negatives(std::size_t anchor, std::size_t count,
                                                          std::mt19937_64& rng) const {
  if (anchor >= edges_.size()) throw LookupError("hyperedge index out of range");
  std::vector<std::size_t> pool;
  const std::size_t b = bucket_[anchor];
  for (std::size_t e = bucket_begin_[b]; e < bucket_begin_[b + 1]; ++e) {
    if (e != anchor && !std::binary_search(overlapping_[anchor].begin(), overlapping_[anchor].end(), e)) {
      pool.push_back(e);
    }
  }
  if (pool.empty()) {
    for (std::size_t e = 0; e < edges_.size(); ++e) {
      if (bucket_[e] != b) pool.push_back(e);
    }
  }
  std::vector<std::size_t> out;
  if (pool.empty()) return out;
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  for (std::size_t k = 0; k < count; ++k) out.push_back(pool[pick(rng)]);
  return out;
}

Var cosine_rows(const Var& a, const Var& b) {
  for (const Var* v : {&a, &b}) {
    const Tensor& t = v->value();
    for (std::size_t r = 0; r < t.rows(); ++r) {
      double n = 0;
      for (double x : t.row(r)) n += x * x;
      if (n == 0.0) throw NumericError("cosine similarity of a zero vector");
    }
  }
  if (!same_shape(a.value(), b.value())) throw DimensionError("cosine_rows: shapes differ");
  const Var dot = ops::sum_cols(ops::mul(a, b));
  const Var norms = ops::sqrt(ops::mul(ops::sum_cols(ops::square(a)), ops::sum_cols(ops::square(b))));
  return ops::div(dot, norms);
}

Var contrastive_loss_batch(const Var& anchors, const Var& candidates, std::span<const std::size_t> offsets,
                           double temperature) {
  if (!(temperature > 0)) throw ConfigError("contrastive temperature must be positive");
  const std::size_t n = anchors.value().rows();
  if (offsets.size() != n + 1 || offsets.front() != 0 || offsets.back() != candidates.value().rows()) {
    throw DimensionError("contrastive_loss_batch: offsets do not cover the candidates");
  }
  std::vector<std::uint32_t> owner, first;
  for (std::size_t s = 0; s < n; ++s) {
    if (offsets[s + 1] <= offsets[s]) throw ContractError("every anchor needs a positive candidate");
    first.push_back(static_cast<std::uint32_t>(offsets[s]));
    for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r) owner.push_back(static_cast<std::uint32_t>(s));
  }
  const Var logits = ops::scale(cosine_rows(ops::gather_rows(anchors, owner), candidates), 1.0 / temperature);
  const Var lse = ops::logsumexp_segments(logits, offsets);
  const Var pos = ops::reshape(ops::gather_rows(logits, first), {n});
  return ops::mean(ops::sub(lse, pos));
}

Var contrastive_loss(const Var& anchor, const Var& positive, const std::optional<Var>& negatives, double temperature) {
  std::vector<Var> parts{positive};
  if (negatives) parts.push_back(*negatives);
  const Var cands = ops::concat_rows(parts);
  const std::size_t offsets[2] = {0, cands.value().rows()};
  return contrastive_loss_batch(anchor, cands, offsets, temperature);
}

void register_encoder(ParameterStore& store, const PretrainConfig& cfg, std::size_t n_items, std::mt19937_64& rng) {
  store.add("pretrain.items", symmetric_uniform(n_items + 1, cfg.encoder.dim, cfg.encoder.dim, rng));
  register_transformer(store, "pretrain.encoder", cfg.encoder, rng);
}

Var encode(const VarMap& vars, const PretrainConfig& cfg, std::span<const Sequence> seqs, std::mt19937_64* rng) {
  std::vector<std::uint32_t> tokens, positions;
  std::vector<std::size_t> offsets{0};
  for (const auto& s : seqs) {
    if (s.empty()) throw ContractError("cannot encode an empty sequence");
    const std::size_t skip = s.size() > cfg.encoder.max_len ? s.size() - cfg.encoder.max_len : 0;
    for (std::size_t k = skip; k < s.size(); ++k) {
      tokens.push_back(s[k]);
      positions.push_back(static_cast<std::uint32_t>(k - skip));
    }
    offsets.push_back(tokens.size());
  }
  const Var x = ops::gather_rows(vars["pretrain.items"], tokens);
  const Var h = transformer_forward(vars, "pretrain.encoder", cfg.encoder, x, offsets, positions, false, rng);
  return ops::segment_mean_rows(h, offsets);
}

namespace {

/// In-batch candidates: anchor b's positive is row b, its negatives the next
/// rows cyclically.
std::vector<std::size_t> in_batch_candidates(std::size_t n, std::size_t negatives, std::vector<std::uint32_t>& rows) {
  const std::size_t k = std::min(negatives, n - 1);
  std::vector<std::size_t> offsets{0};
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t j = 0; j <= k; ++j) rows.push_back(static_cast<std::uint32_t>((b + j) % n));
    offsets.push_back(rows.size());
  }
  return offsets;
}

Var in_batch_loss(const Var& anchors, const Var& positives, const ContrastiveConfig& cc) {
  std::vector<std::uint32_t> rows;
  const auto offsets = in_batch_candidates(anchors.value().rows(), cc.negatives, rows);
  return contrastive_loss_batch(anchors, ops::gather_rows(positives, rows), offsets, cc.temperature);
}

}  // namespace

PretrainResult run_pretrain(const InteractionLog& log, const PretrainConfig& cfg) {
  cfg.validate();
  const std::uint32_t mask = mask_token(log.n_items());
  std::mt19937_64 rng(cfg.seed);
  ParameterStore store;
  register_encoder(store, cfg, log.n_items(), rng);
  Optimizer opt(cfg.optimizer, cfg.lr);

  std::vector<Sequence> sequences;
  for (UserId u = 0; u < log.n_users(); ++u) {
    Sequence s;
    for (const auto& r : log.user_records(u)) s.push_back(r.item);
    if (!s.empty()) sequences.push_back(std::move(s));
  }
  const HyperedgePairs pairs(build_calendar_hypergraphs(log, Granularity::month));
  const std::size_t pair_budget = cfg.pairs_per_epoch != 0 ? cfg.pairs_per_epoch : sequences.size();

  const auto& w = cfg.contrastive.weights;
  const std::array<bool, 3> on{cfg.tasks.items && w[0] > 0, cfg.tasks.subsequence && w[1] > 0,
                               cfg.tasks.hyperedges && w[2] > 0};
  const char* names[3] = {"masked-item", "masked-subsequence", "hyperedge"};
  {
    std::array<bool, 3> any{false, false, false};
    for (const auto& s : sequences) {
      any[0] = any[0] || s.size() >= 2;
      any[1] = any[1] || s.size() >= 3;
    }
    any[2] = !pairs.positives().empty();
    for (int t = 0; t < 3; ++t) {
      if (on[t] && !any[t]) std::cerr << "warning: no eligible samples for the " << names[t] << " task\n";
    }
  }

  PretrainResult result;
  std::vector<std::size_t> order(sequences.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::pair<std::size_t, std::size_t>> epoch_pairs;
    if (on[2] && !pairs.positives().empty()) {
      std::uniform_int_distribution<std::size_t> pick(0, pairs.positives().size() - 1);
      std::bernoulli_distribution flip(0.5);
      for (std::size_t k = 0; k < pair_budget; ++k) {
        auto p = pairs.positives()[pick(rng)];
        if (flip(rng)) std::swap(p.first, p.second);
        epoch_pairs.push_back(p);
      }
    }
    const std::size_t steps = std::max<std::size_t>(1, (order.size() + cfg.batch - 1) / cfg.batch);
    std::array<double, 3> total{0, 0, 0};
    std::array<std::size_t, 3> count{0, 0, 0};
    for (std::size_t step = 0; step < steps; ++step) {
      Tape tape;
      const VarMap vars(tape, store);
      std::vector<Var> terms;
      auto add_term = [&](int t, const Var& mean_loss, std::size_t n) {
        total[t] += mean_loss.value().item() * static_cast<double>(n);
        count[t] += n;
        terms.push_back(ops::scale(mean_loss, w[t]));
      };
      const std::size_t begin = step * cfg.batch, end = std::min(order.size(), begin + cfg.batch);
      if (on[0]) {
        std::vector<Sequence> a, b;
        for (std::size_t k = begin; k < end; ++k) {
          if (auto v = mask_random_views(sequences[order[k]], mask, rng)) {
            a.push_back(std::move(v->first));
            b.push_back(std::move(v->second));
          }
        }
        if (a.size() >= 2) {
          a.insert(a.end(), b.begin(), b.end());
          const Var enc = encode(vars, cfg, a, &rng);
          const std::size_t n = b.size();
          std::vector<std::uint32_t> first(n), second(n);
          for (std::size_t k = 0; k < n; ++k) {
            first[k] = static_cast<std::uint32_t>(k);
            second[k] = static_cast<std::uint32_t>(n + k);
          }
          add_term(0, in_batch_loss(ops::gather_rows(enc, first), ops::gather_rows(enc, second), cfg.contrastive), n);
        }
      }
      if (on[1]) {
        std::vector<Sequence> seqs, full;
        for (std::size_t k = begin; k < end; ++k) {
          if (auto m = mask_subsequence(sequences[order[k]], mask, rng)) {
            seqs.push_back(std::move(*m));
            full.push_back(sequences[order[k]]);
          }
        }
        if (seqs.size() >= 2) {
          const std::size_t n = seqs.size();
          seqs.insert(seqs.end(), full.begin(), full.end());
          const Var enc = encode(vars, cfg, seqs, &rng);
          std::vector<std::uint32_t> first(n), second(n);
          for (std::size_t k = 0; k < n; ++k) {
            first[k] = static_cast<std::uint32_t>(k);
            second[k] = static_cast<std::uint32_t>(n + k);
          }
          add_term(1, in_batch_loss(ops::gather_rows(enc, first), ops::gather_rows(enc, second), cfg.contrastive), n);
        }
      }
      if (on[2] && !epoch_pairs.empty()) {
        const std::size_t pb = epoch_pairs.size() * begin / order.size();
        const std::size_t pe = epoch_pairs.size() * end / order.size();
        if (pe > pb) {
          std::vector<Sequence> anchors, cands;
          std::vector<std::size_t> offsets{0};
          for (std::size_t k = pb; k < pe; ++k) {
            const auto [a, p] = epoch_pairs[k];
            anchors.push_back(pairs.edges()[a]);
            cands.push_back(pairs.edges()[p]);
            for (auto n : pairs.sample_negatives(a, cfg.contrastive.negatives, rng)) cands.push_back(pairs.edges()[n]);
            offsets.push_back(cands.size());
          }
          const std::size_t n = anchors.size();
          anchors.insert(anchors.end(), cands.begin(), cands.end());
          const Var enc = encode(vars, cfg, anchors, &rng);
          std::vector<std::uint32_t> first(n), rest(cands.size());
          for (std::size_t k = 0; k < n; ++k) first[k] = static_cast<std::uint32_t>(k);
          for (std::size_t k = 0; k < rest.size(); ++k) rest[k] = static_cast<std::uint32_t>(n + k);
          add_term(2,
                   contrastive_loss_batch(ops::gather_rows(enc, first), ops::gather_rows(enc, rest), offsets,
                                          cfg.contrastive.temperature),
                   n);
        }
      }
      if (terms.empty()) continue;
      Var loss = terms[0];
      for (std::size_t k = 1; k < terms.size(); ++k) loss = ops::add(loss, terms[k]);
      opt.step(store, vars, tape.backward(loss));
    }
    std::array<double, 3> means{0, 0, 0};
    double epoch_loss = 0;
    for (int t = 0; t < 3; ++t) {
      means[t] = count[t] > 0 ? total[t] / static_cast<double>(count[t]) : 0.0;
      epoch_loss += w[t] * means[t];
    }
    result.task_loss.push_back(means);
    result.epoch_loss.push_back(epoch_loss);
  }

  const Tensor& items = store.at("pretrain.items");
  std::vector<double> rows(items.data().begin(), items.data().begin() + log.n_items() * cfg.encoder.dim);
  result.table = Tensor::matrix(log.n_items(), cfg.encoder.dim, std::move(rows));
  return result;
}

}  // namespace h2sr::pretrain
