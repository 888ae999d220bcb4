#include "h2sr/seqrec.hpp"

#include <algorithm>
#include <map>
#include <unordered_map>

#include "h2sr/errors.hpp"
#include "h2sr/ops.hpp"

namespace h2sr::seqrec {

Variant parse_variant(const std::string& name) {
  if (name == "base") return Variant::base;
  if (name == "init") return Variant::init;
  if (name == "fuse") return Variant::fuse;
  throw ConfigError("unknown variant '" + name + "' (expected base, init or fuse)");
}

const char* to_string(Variant v) {
  switch (v) {
    case Variant::base: return "base";
    case Variant::init: return "init";
    case Variant::fuse: return "fuse";
  }
  return "?";
}

HieOrder parse_hie_order(const std::string& name) {
  if (name == "year-quarter") return HieOrder::year_quarter;
  if (name == "quarter-year") return HieOrder::quarter_year;
  throw ConfigError("unknown hierarchy order '" + name + "' (expected year-quarter or quarter-year)");
}

const char* to_string(HieOrder order) {
  return order == HieOrder::year_quarter ? "year-quarter" : "quarter-year";
}

std::string Ablations::label() const {
  std::string s;
  auto add = [&s](bool on, const char* name) {
    if (!on) return;
    if (!s.empty()) s += '+';
    s += name;
  };
  add(no_groups, "no-groups");
  add(no_hierarchy, "no-hierarchy");
  add(euclidean, "euclidean");
  add(order == HieOrder::quarter_year, "quarter-year");
  return s.empty() ? "full" : s;
}

void SeqRecConfig::validate() const {
  if (dim == 0) throw ConfigError("dim must be positive");
  if (transformer.dim != dim) throw ConfigError("transformer width must equal dim");
  hhconv.validate();
  transformer.validate();
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (batch == 0) throw ConfigError("batch must be positive");
  if (!(lr > 0)) throw ConfigError("learning rate must be positive");
  if (!(alpha >= 0)) throw ConfigError("alpha must be non-negative");
  if (!(group_sampling > 0 && group_sampling <= 1)) throw ConfigError("group sampling rate must lie in (0, 1]");
}

// ---------------------------------------------------------------------------

Var mix_gate(const Var& context, const Var& target, const Var& weight, const Var& bias) {
  const Tensor& c = context.value();
  const Tensor& t = target.value();
  const Tensor& w = weight.value();
  if (c.rank() != 2 || !same_shape(c, t)) {
    throw DimensionError("mix_gate: context " + h2sr::to_string(c.shape()) + " and target " + h2sr::to_string(t.shape()) +
                         " must be equal n×d matrices");
  }
  const std::size_t d = c.cols();
  if (w.rank() != 2 || w.rows() != d || w.cols() != d || bias.value().size() != d) {
    throw DimensionError("mix_gate: gate must be " + std::to_string(d) + "×" + std::to_string(d) + " plus a bias");
  }
  return ops::mul(ops::relu(ops::add(ops::matmul_nt(context, weight), bias)), target);
}

Var build_multiscale(const Var& month, const Var& quarter, const Var& year, const MixVars& mix,
                     const Ablations& ablations) {
  if (ablations.no_hierarchy) return month;
  const bool year_first = ablations.order == HieOrder::year_quarter;
  const Var mixed = mix_gate(year_first ? year : quarter, month, mix.inner_weight, mix.inner_bias);
  return mix_gate(year_first ? quarter : year, mixed, mix.outer_weight, mix.outer_bias);
}

Var score(const Var& users, const Var& items, const Var& hidden, const Var& hidden_bias, const Var& out,
          const Var& out_bias, double dropout, std::mt19937_64* rng) {
  if (!same_shape(users.value(), items.value())) throw DimensionError("score: user and item rows differ in shape");
  Var h = ops::relu(ops::add(ops::matmul_nt(ops::concat_cols(users, items), hidden), hidden_bias));
  if (rng != nullptr && dropout > 0) h = ops::dropout(h, dropout, *rng);
  return ops::add(ops::matmul_nt(h, out), out_bias);
}

Var bpr_loss(const Var& pos, const Var& neg, double alpha, const Var& squared_norm) {
  if (!same_shape(pos.value(), neg.value())) throw DimensionError("bpr_loss: score shapes differ");
  const Var ranking = ops::mean(ops::softplus(ops::sub(neg, pos)));
  if (alpha == 0.0) return ranking;
  return ops::add(ranking, ops::scale(squared_norm, alpha));
}

// ---------------------------------------------------------------------------

Timeline::Timeline(const InteractionLog& log) {
  if (log.empty()) throw ConfigError("cannot build a calendar for an empty log");
  std::int64_t lo = log.records().front().timestamp, hi = lo;
  for (const auto& r : log.records()) {
    lo = std::min(lo, r.timestamp);
    hi = std::max(hi, r.timestamp);
  }
  const CalendarIndex first = calendar_bucket(lo, Granularity::month);
  const CalendarIndex last = calendar_bucket(hi, Granularity::month);
  for (int k = first.year * 12 + first.subdivision - 1; k <= last.year * 12 + last.subdivision - 1; ++k) {
    const CalendarIndex m{Granularity::month, k / 12, k % 12 + 1};
    const CalendarIndex q = coarsen(m, Granularity::quarter);
    const CalendarIndex y = coarsen(m, Granularity::year);
    if (quarters_.empty() || quarters_.back() != q) quarters_.push_back(q);
    if (years_.empty() || years_.back() != y) years_.push_back(y);
    months_.push_back(m);
    quarter_of_.push_back(quarters_.size() - 1);
    year_of_.push_back(years_.size() - 1);
  }
}

namespace {
std::size_t find_bucket(const std::vector<CalendarIndex>& list, const CalendarIndex& b) {
  const auto it = std::lower_bound(list.begin(), list.end(), b);
  if (it == list.end() || *it != b) throw LookupError("no " + std::string(to_string(b.granularity)) + " " + b.label() + " in the timeline");
  return static_cast<std::size_t>(it - list.begin());
}
}  // namespace

std::size_t Timeline::month_of(std::int64_t timestamp) const {
  return month_index(calendar_bucket(timestamp, Granularity::month));
}
std::size_t Timeline::month_index(const CalendarIndex& m) const { return find_bucket(months_, m); }
std::size_t Timeline::quarter_index(const CalendarIndex& q) const { return find_bucket(quarters_, q); }
std::size_t Timeline::year_index(const CalendarIndex& y) const { return find_bucket(years_, y); }

// ---------------------------------------------------------------------------
// Group sources.

class CachedUserGroups : public GroupSource {
 public:
  explicit CachedUserGroups(const Recommender& r) : r_(r) {}
  std::pair<std::size_t, const NeighborhoodIndex*> group(UserId user, std::uint32_t month) override {
    const std::size_t key = static_cast<std::size_t>(user) * r_.timeline_.months() + month;
    if (!r_.group_cached_[key]) {
      const Hypergraph g = build_user_group_hypergraph(r_.month_hypergraphs_[month], user, r_.cfg_.group_cap);
      if (!g.empty()) r_.group_cache_[key] = std::make_unique<NeighborhoodIndex>(build_neighborhood_index(g));
      r_.group_cached_[key] = true;
    }
    return {key, r_.group_cache_[key].get()};
  }

 private:
  const Recommender& r_;
};

namespace {

/// Per-step groups whose other members are each admitted with a fixed probability.
class SampledUserGroups : public GroupSource {
 public:
  SampledUserGroups(const std::vector<Hypergraph>& months, std::size_t cap, std::vector<bool> eligible)
      : months_(months), cap_(cap), eligible_(std::move(eligible)) {}
  std::pair<std::size_t, const NeighborhoodIndex*> group(UserId user, std::uint32_t month) override {
    const std::size_t key = static_cast<std::size_t>(user) * months_.size() + month;
    auto it = cache_.find(key);
    if (it == cache_.end()) {
      std::unique_ptr<bool[]> flags(new bool[eligible_.size()]);
      for (std::size_t k = 0; k < eligible_.size(); ++k) flags[k] = eligible_[k];
      const Hypergraph g = build_user_group_hypergraph(months_[month], user, cap_,
                                                       std::span<const bool>(flags.get(), eligible_.size()));
      std::unique_ptr<NeighborhoodIndex> idx;
      if (!g.empty()) idx = std::make_unique<NeighborhoodIndex>(build_neighborhood_index(g));
      it = cache_.emplace(key, std::move(idx)).first;
    }
    return {key, it->second.get()};
  }

 private:
  const std::vector<Hypergraph>& months_;
  std::size_t cap_;
  std::vector<bool> eligible_;
  std::unordered_map<std::size_t, std::unique_ptr<NeighborhoodIndex>> cache_;
};

/// One group per month made of the hyperedges of every user in the batch.
class BatchGroups : public GroupSource {
 public:
  BatchGroups(const std::vector<Hypergraph>& months, std::span<const UserId> users)
      : months_(months), users_(users.begin(), users.end()) {
    std::sort(users_.begin(), users_.end());
  }
  std::pair<std::size_t, const NeighborhoodIndex*> group(UserId user, std::uint32_t month) override {
    auto it = cache_.find(month);
    if (it == cache_.end()) {
      std::vector<Hyperedge> edges;
      for (const auto& e : months_[month].hyperedges()) {
        if (std::binary_search(users_.begin(), users_.end(), e.owner)) edges.push_back(e);
      }
      std::unique_ptr<NeighborhoodIndex> idx;
      if (!edges.empty()) idx = std::make_unique<NeighborhoodIndex>(build_neighborhood_index(Hypergraph(std::move(edges))));
      it = cache_.emplace(month, std::move(idx)).first;
    }
    // Users without a hyperedge that month keep their own path.
    const auto& edges = months_[month].hyperedges();
    const bool active = std::any_of(edges.begin(), edges.end(), [user](const Hyperedge& e) { return e.owner == user; });
    return {month, active ? it->second.get() : nullptr};
  }

 private:
  const std::vector<Hypergraph>& months_;
  std::vector<UserId> users_;
  std::unordered_map<std::size_t, std::unique_ptr<NeighborhoodIndex>> cache_;
};

std::vector<std::uint32_t> iota_rows(std::size_t begin, std::size_t count) {
  std::vector<std::uint32_t> v(count);
  for (std::size_t k = 0; k < count; ++k) v[k] = static_cast<std::uint32_t>(begin + k);
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------

Recommender::Recommender(SeqRecConfig cfg, const InteractionLog& full, const eval::SplitLog& split,
                         std::optional<Tensor> pretrained)
    : cfg_(std::move(cfg)), full_(&full), split_(&split), train_log_(split.train_log(full)), timeline_(full),
      pretrained_(std::move(pretrained)) {
  cfg_.hhconv.euclidean = cfg_.ablations.euclidean;
  cfg_.validate();
  if (train_log_.empty()) throw ConfigError("the training split is empty");
  if (cfg_.variant != Variant::base) {
    if (!pretrained_) {
      throw ConfigError(std::string("variant ") + to_string(cfg_.variant) + " needs a pre-trained item table");
    }
    if (pretrained_->rank() != 2 || pretrained_->rows() != full.n_items() || pretrained_->cols() != cfg_.dim) {
      throw ConfigError("pre-trained table is " + h2sr::to_string(pretrained_->shape()) + ", expected " +
                        std::to_string(full.n_items()) + "×" + std::to_string(cfg_.dim));
    }
  }

  const std::size_t n = full.n_items(), months = timeline_.months();
  month_hypergraphs_.resize(months);
  for (auto& [when, hg] : build_calendar_hypergraphs(train_log_, Granularity::month)) {
    month_hypergraphs_[timeline_.month_index(when)] = std::move(hg);
  }
  auto graph_for = [&](Granularity g, auto index_of) {
    auto batch = std::make_shared<hhconv::GraphBatch>();
    for (const auto& [when, hg] : build_calendar_hypergraphs(train_log_, g)) {
      batch->append(build_neighborhood_index(hg), 0, static_cast<std::uint32_t>(index_of(when) * n));
    }
    return std::shared_ptr<const hhconv::GraphBatch>(std::move(batch));
  };
  month_graph_ = graph_for(Granularity::month, [&](const CalendarIndex& c) { return timeline_.month_index(c); });
  quarter_graph_ = graph_for(Granularity::quarter, [&](const CalendarIndex& c) { return timeline_.quarter_index(c); });
  year_graph_ = graph_for(Granularity::year, [&](const CalendarIndex& c) { return timeline_.year_index(c); });
  for (std::size_t m = 0; m < months; ++m) {
    for (std::size_t i = 0; i < n; ++i) {
      quarter_rows_.push_back(static_cast<std::uint32_t>(timeline_.quarter_of(m) * n + i));
      year_rows_.push_back(static_cast<std::uint32_t>(timeline_.year_of(m) * n + i));
    }
  }
  group_cache_.resize(full.n_users() * months);
  group_cached_.assign(full.n_users() * months, false);
  seen_.assign(full.n_users(), std::vector<bool>(n, false));
  for (const auto& r : train_log_.records()) seen_[r.user][r.item] = true;
  init_params();
}

void Recommender::init_params() {
  std::mt19937_64 rng(cfg_.seed);
  const std::size_t d = cfg_.dim, n = full_->n_items();
  Tensor items = symmetric_uniform(n, d, d, rng);
  if (cfg_.variant == Variant::init) items = *pretrained_;
  params_.add("items", std::move(items));
  for (const char* scale : {"month", "quarter", "year", "group"}) {
    hhconv::register_params(params_, std::string("hhconv.") + scale, d, cfg_.hhconv.layers, rng);
  }
  for (const char* gate : {"inner", "outer", "group", "pretrained"}) {
    if (std::string(gate) == "pretrained" && cfg_.variant != Variant::fuse) continue;
    params_.add(std::string("mix.") + gate + ".weight", symmetric_uniform(d, d, d, rng));
    params_.add(std::string("mix.") + gate + ".bias", Tensor::filled({1, d}, 1.0));
  }
  register_transformer(params_, "transformer", cfg_.transformer, rng);
  params_.add("scorer.hidden", symmetric_uniform(d, 2 * d, 2 * d, rng));
  params_.add("scorer.hidden_bias", Tensor::zeros({1, d}));
  params_.add("scorer.out", symmetric_uniform(1, d, d, rng));
  params_.add("scorer.out_bias", Tensor::zeros({1, 1}));
}

void Recommender::load_params(const ParameterStore& store) {
  for (const auto& [name, value] : params_.all()) {
    if (!store.contains(name)) throw FormatError("checkpoint lacks parameter " + name);
    if (!same_shape(store.at(name), value)) throw FormatError("checkpoint parameter " + name + " has the wrong shape");
  }
  for (const auto& [name, value] : store.all()) {
    if (!params_.contains(name)) throw FormatError("checkpoint has unexpected parameter " + name);
  }
  params_ = store;
}

bool Recommender::trainable(const std::string& name, std::size_t epoch) const {
  return !(name.rfind("hhconv.", 0) == 0 && epoch >= cfg_.hhconv.epochs);
}

Var Recommender::hierarchical_table(const VarMap& vars) const {
  const std::size_t n = full_->n_items(), L = cfg_.hhconv.layers;
  const Var& items = vars["items"];
  auto scale_table = [&](std::size_t count, const std::shared_ptr<const hhconv::GraphBatch>& graph, const char* name) {
    std::vector<std::uint32_t> tile(count * n);
    for (std::size_t k = 0; k < tile.size(); ++k) tile[k] = static_cast<std::uint32_t>(k % n);
    const auto layers = hhconv::bind_layers(vars, std::string("hhconv.") + name, L);
    return hhconv::forward_batch(items, ops::gather_rows(items, tile), graph, layers, cfg_.hhconv);
  };
  const Var month = scale_table(timeline_.months(), month_graph_, "month");
  if (cfg_.ablations.no_hierarchy) return month;
  const Var quarter = ops::gather_rows(scale_table(timeline_.quarters(), quarter_graph_, "quarter"), quarter_rows_);
  const Var year = ops::gather_rows(scale_table(timeline_.years(), year_graph_, "year"), year_rows_);
  const MixVars mix{vars["mix.inner.weight"], vars["mix.inner.bias"], vars["mix.outer.weight"],
                    vars["mix.outer.bias"]};
  return build_multiscale(month, quarter, year, mix, cfg_.ablations);
}

Var Recommender::item_rows(const VarMap& vars, const Var& table, std::span<const RowRequest> requests,
                           GroupSource& groups) const {
  const std::size_t n = full_->n_items();
  if (requests.empty()) throw ContractError("item_rows: no rows requested");
  std::vector<std::uint32_t> table_rows(requests.size());
  for (std::size_t r = 0; r < requests.size(); ++r) {
    if (requests[r].month >= timeline_.months() || requests[r].item >= n) {
      throw LookupError("item_rows: request outside the timeline or vocabulary");
    }
    table_rows[r] = static_cast<std::uint32_t>(requests[r].month * n + requests[r].item);
  }
  Var out = ops::gather_rows(table, table_rows);

  if (!cfg_.ablations.no_groups) {
    // Rows of the group-convolved table, one per (group instance, item).
    std::map<std::pair<std::size_t, ItemId>, std::uint32_t> row_of;
    std::vector<std::uint32_t> sources;
    auto row_for = [&](std::size_t key, std::uint32_t month, ItemId item) {
      auto [it, inserted] = row_of.try_emplace({key, item}, static_cast<std::uint32_t>(sources.size()));
      if (inserted) sources.push_back(static_cast<std::uint32_t>(month * n + item));
      return it->second;
    };
    auto batch = std::make_shared<hhconv::GraphBatch>();
    std::map<std::size_t, bool> appended;
    std::vector<std::uint32_t> gated_requests, gated_rows;
    for (std::size_t r = 0; r < requests.size(); ++r) {
      const auto [key, idx] = groups.group(requests[r].user, requests[r].month);
      if (idx == nullptr || idx->size() == 0) continue;
      if (!appended[key]) {
        appended[key] = true;
        std::vector<std::uint32_t> node_sources, node_targets;
        for (ItemId item : idx->nodes) {
          node_targets.push_back(row_for(key, requests[r].month, item));
          node_sources.push_back(static_cast<std::uint32_t>(requests[r].month * n + item));
        }
        batch->append(*idx, node_sources, node_targets);
      }
      gated_requests.push_back(static_cast<std::uint32_t>(r));
      gated_rows.push_back(row_for(key, requests[r].month, requests[r].item));
    }
    if (!gated_requests.empty()) {
      const auto layers = hhconv::bind_layers(vars, "hhconv.group", cfg_.hhconv.layers);
      const Var group_table =
          hhconv::forward_batch(table, ops::gather_rows(table, sources), batch, layers, cfg_.hhconv);
      std::vector<std::uint32_t> hie_rows;
      for (auto r : gated_requests) hie_rows.push_back(table_rows[r]);
      const Var gated = mix_gate(ops::gather_rows(group_table, gated_rows), ops::gather_rows(table, hie_rows),
                                 vars["mix.group.weight"], vars["mix.group.bias"]);
      out = ops::scatter_rows(out, gated_requests, gated);
    }
  }

  if (cfg_.variant == Variant::fuse) {
    std::vector<std::uint32_t> items(requests.size());
    for (std::size_t r = 0; r < requests.size(); ++r) items[r] = requests[r].item;
    const Var pre = ops::gather_rows(table.tape()->constant(*pretrained_), items);
    out = mix_gate(pre, out, vars["mix.pretrained.weight"], vars["mix.pretrained.bias"]);
  }
  return out;
}

std::vector<Example> Recommender::make_examples(std::mt19937_64& rng) const {
  const std::size_t n = full_->n_items(), window = cfg_.transformer.max_len + 1;
  std::uniform_int_distribution<ItemId> any(0, static_cast<ItemId>(n - 1));
  std::vector<Example> out;
  for (const auto& u : split_->users) {
    if (u.train.size() < 2) continue;
    const auto& seen = seen_[u.user];
    if (std::count(seen.begin(), seen.end(), true) == static_cast<std::ptrdiff_t>(n)) {
      throw ConfigError("user " + full_->user_names()[u.user] + " has interacted with every item");
    }
    Example e;
    e.user = u.user;
    const std::size_t skip = u.train.size() > window ? u.train.size() - window : 0;
    for (std::size_t k = skip; k < u.train.size(); ++k) {
      e.items.push_back(u.train[k].item);
      e.months.push_back(static_cast<std::uint32_t>(timeline_.month_of(u.train[k].timestamp)));
    }
    for (std::size_t k = 1; k < e.items.size(); ++k) {
      e.candidate_months.push_back(e.months[k] == 0 ? 0U : e.months[k] - 1);
      ItemId j;
      do j = any(rng);
      while (seen[j]);
      e.negatives.push_back(j);
    }
    out.push_back(std::move(e));
  }
  return out;
}

Var Recommender::batch_loss(const VarMap& vars, std::span<const Example> batch, GroupSource& groups,
                            std::mt19937_64* rng) const {
  std::vector<RowRequest> tokens, positives, negatives;
  std::vector<std::size_t> offsets{0};
  std::vector<std::uint32_t> positions;
  for (const auto& e : batch) {
    if (e.items.size() < 2 || e.negatives.size() + 1 != e.items.size() || e.months.size() != e.items.size() ||
        e.candidate_months.size() != e.negatives.size()) {
      throw ContractError("malformed training example");
    }
    for (std::size_t k = 0; k + 1 < e.items.size(); ++k) {
      tokens.push_back({e.user, e.months[k], e.items[k]});
      positives.push_back({e.user, e.candidate_months[k], e.items[k + 1]});
      negatives.push_back({e.user, e.candidate_months[k], e.negatives[k]});
      positions.push_back(static_cast<std::uint32_t>(k));
    }
    offsets.push_back(tokens.size());
  }
  const std::size_t t = tokens.size();
  std::vector<RowRequest> requests = tokens;
  requests.insert(requests.end(), positives.begin(), positives.end());
  requests.insert(requests.end(), negatives.begin(), negatives.end());
  const Var rows = item_rows(vars, hierarchical_table(vars), requests, groups);
  const Var h = transformer_forward(vars, "transformer", cfg_.transformer, ops::gather_rows(rows, iota_rows(0, t)),
                                    offsets, positions, true, rng);
  auto rate = [&](std::size_t begin) {
    return score(h, ops::gather_rows(rows, iota_rows(begin, t)), vars["scorer.hidden"], vars["scorer.hidden_bias"],
                 vars["scorer.out"], vars["scorer.out_bias"], cfg_.transformer.dropout, rng);
  };
  return bpr_loss(rate(t), rate(2 * t), cfg_.alpha, vars.squared_norm());
}

std::unique_ptr<GroupSource> Recommender::user_groups() const { return std::make_unique<CachedUserGroups>(*this); }

Recommender::TrainResult Recommender::train(const std::function<void(const Progress&)>& on_epoch) {
  std::seed_seq seq{cfg_.seed, std::uint64_t{0x7472616e}};
  std::mt19937_64 rng(seq);
  Optimizer opt(cfg_.optimizer, cfg_.lr);
  TrainResult result;
  double best = -1.0;
  ParameterStore best_params;
  for (std::size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
    std::vector<Example> examples = make_examples(rng);
    if (examples.empty()) throw ConfigError("no user has two training interactions");
    std::shuffle(examples.begin(), examples.end(), rng);
    double total = 0;
    std::size_t targets = 0;
    for (std::size_t begin = 0; begin < examples.size();) {
      std::size_t end = begin, count = 0;
      while (end < examples.size() && (end == begin || count + examples[end].negatives.size() <= cfg_.batch)) {
        count += examples[end].negatives.size();
        ++end;
      }
      const std::span<const Example> batch(examples.data() + begin, end - begin);
      std::unique_ptr<GroupSource> groups;
      if (cfg_.batch_groups) {
        std::vector<UserId> users;
        for (const auto& e : batch) users.push_back(e.user);
        groups = std::make_unique<BatchGroups>(month_hypergraphs_, users);
      } else if (cfg_.group_sampling < 1.0) {
        std::bernoulli_distribution admit(cfg_.group_sampling);
        std::vector<bool> eligible(full_->n_users());
        for (std::size_t u = 0; u < eligible.size(); ++u) eligible[u] = admit(rng);
        groups = std::make_unique<SampledUserGroups>(month_hypergraphs_, cfg_.group_cap, std::move(eligible));
      } else {
        groups = user_groups();
      }
      Tape tape;
      const VarMap vars(tape, params_, [&](const std::string& name) { return trainable(name, epoch); });
      const Var loss = batch_loss(vars, batch, *groups, &rng);
      if (!loss.value().all_finite()) throw NumericError("training loss became non-finite in epoch " + std::to_string(epoch + 1));
      opt.step(params_, vars, tape.backward(loss));
      total += loss.value().item() * static_cast<double>(count);
      targets += count;
      begin = end;
    }
    result.loss_trace.push_back(total / static_cast<double>(targets));
    if (!cfg_.select_best_epoch) {
      result.best_epoch = epoch + 1;
    } else {
      const eval::EvalConfig ec{{10}, {100}, cfg_.seed};
      const double ndcg = evaluate(ec, eval::Target::validation).value("NDCG", 10, 100);
      if (ndcg > best) {
        best = ndcg;
        best_params = params_;
        result.best_epoch = epoch + 1;
      }
    }
    if (on_epoch) on_epoch({epoch + 1, result.loss_trace.back()});
  }
  if (cfg_.select_best_epoch) params_ = best_params;
  return result;
}

eval::Scorer Recommender::scorer() const {
  // The hierarchical table does not depend on the query, so compute it once.
  auto table = std::make_shared<Tensor>([this] {
    Tape tape;
    const VarMap vars(tape, params_, [](const std::string&) { return false; });
    return hierarchical_table(vars).value();
  }());
  std::unordered_map<UserId, std::size_t> index;
  for (std::size_t k = 0; k < split_->users.size(); ++k) index[split_->users[k].user] = k;
  return [this, table, index](std::span<const eval::Query> queries) {
    Tape tape;
    const VarMap vars(tape, params_, [](const std::string&) { return false; });
    std::vector<RowRequest> requests;
    std::vector<std::size_t> offsets{0};
    std::vector<std::uint32_t> positions, last;
    std::vector<UserId> users;
    for (const auto& q : queries) {
      const auto it = index.find(q.user);
      if (it == index.end()) throw EvalError("user " + full_->user_names()[q.user] + " is not in the split");
      const auto& u = split_->users[it->second];
      const auto history = u.history(q.target);
      const std::size_t skip = history.size() > cfg_.transformer.max_len ? history.size() - cfg_.transformer.max_len : 0;
      for (std::size_t k = skip; k < history.size(); ++k) {
        const auto month = static_cast<std::uint32_t>(timeline_.month_of(history[k].timestamp));
        requests.push_back({q.user, month, history[k].item});
        positions.push_back(static_cast<std::uint32_t>(k - skip));
      }
      offsets.push_back(requests.size());
      last.push_back(static_cast<std::uint32_t>(requests.size() - 1));
      users.push_back(q.user);
    }
    const std::size_t t = requests.size();
    std::vector<std::uint32_t> owner;
    for (std::size_t q = 0; q < queries.size(); ++q) {
      const auto& u = split_->users[index.at(queries[q].user)];
      const auto month = static_cast<std::uint32_t>(timeline_.month_of(u.train.back().timestamp));
      for (ItemId c : queries[q].candidates) {
        requests.push_back({queries[q].user, month, c});
        owner.push_back(last[q]);
      }
    }
    std::unique_ptr<GroupSource> groups;
    if (cfg_.batch_groups) {
      groups = std::make_unique<BatchGroups>(month_hypergraphs_, users);
    } else {
      groups = user_groups();
    }
    const Var rows = item_rows(vars, tape.constant(*table), requests, *groups);
    const Var h = transformer_forward(vars, "transformer", cfg_.transformer, ops::gather_rows(rows, iota_rows(0, t)),
                                      offsets, positions, true, nullptr);
    const Var s = score(ops::gather_rows(h, owner), ops::gather_rows(rows, iota_rows(t, requests.size() - t)),
                        vars["scorer.hidden"], vars["scorer.hidden_bias"], vars["scorer.out"],
                        vars["scorer.out_bias"]);
    std::vector<std::vector<double>> out;
    std::size_t k = 0;
    for (const auto& q : queries) {
      out.emplace_back(s.value().data().begin() + k, s.value().data().begin() + k + q.candidates.size());
      k += q.candidates.size();
    }
    return out;
  };
}

eval::MetricsReport Recommender::evaluate(const eval::EvalConfig& cfg, eval::Target target) const {
  return eval::evaluate(*split_, *full_, scorer(), cfg, target);
}

}  // namespace h2sr::seqrec
