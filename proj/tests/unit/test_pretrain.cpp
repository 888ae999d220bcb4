#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "grad_check.hpp"
#include "h2sr/dataset.hpp"
#include "h2sr/errors.hpp"
#include "h2sr/ops.hpp"
#include "h2sr/pretrain.hpp"
#include "h2sr/transformer.hpp"

using namespace h2sr;
using namespace h2sr::pretrain;
using h2sr::testing::gradient_error;
using h2sr::testing::random_tensor;
using h2sr::testing::weighted_sum;

namespace {

constexpr std::uint32_t M = 99;

Tensor row(std::initializer_list<double> v) { return Tensor::matrix(1, v.size(), std::vector<double>(v)); }

PretrainConfig small_config(std::size_t epochs) {
  PretrainConfig cfg;
  cfg.encoder = TransformerConfig{16, 2, 2, 20, 0.1};
  cfg.epochs = epochs;
  cfg.batch = 32;
  cfg.lr = 0.01;
  cfg.optimizer = OptimizerKind::adam;
  cfg.seed = 5;
  return cfg;
}

InteractionLog small_synthetic() {
  SyntheticSpec spec;
  spec.n_users = 60;
  spec.n_items = 80;
  spec.months = 12;
  spec.n_groups = 2;
  spec.season_pool_size = 20;
  return synthesize(spec);
}

}  // namespace

TEST_CASE("masked views differ in exactly one position each") {
  const Sequence s{1, 2, 3};
  const auto [a, b] = mask_views_at(s, M, 0, 2);
  CHECK(a == Sequence{M, 2, 3});
  CHECK(b == Sequence{1, 2, M});
  CHECK_THROWS_AS(mask_views_at(s, M, 1, 1), ContractError);
  CHECK_THROWS_AS(mask_views_at(s, M, 0, 3), ContractError);

  std::mt19937_64 rng(1);
  CHECK_FALSE(mask_random_views(Sequence{4}, M, rng).has_value());
  const auto pair = *mask_random_views(Sequence{4, 5}, M, rng);
  CHECK(std::set<Sequence>{pair.first, pair.second} == std::set<Sequence>{{M, 5}, {4, M}});
  for (int t = 0; t < 200; ++t) {
    const Sequence seq{1, 2, 3, 4, 5, 6};
    const auto v = *mask_random_views(seq, M, rng);
    REQUIRE(v.first.size() == seq.size());
    std::size_t pa = 0, pb = 0, ca = 0, cb = 0;
    for (std::size_t k = 0; k < seq.size(); ++k) {
      if (v.first[k] == M) ++ca, pa = k;
      if (v.second[k] == M) ++cb, pb = k;
    }
    CHECK(ca == 1);
    CHECK(cb == 1);
    CHECK(pa != pb);
  }
}

TEST_CASE("masked subsequence covers one window of two") {
  CHECK(mask_window_at(Sequence{1, 2, 3, 4}, M, 1) == Sequence{1, M, M, 4});
  CHECK_THROWS_AS(mask_window_at(Sequence{1, 2, 3}, M, 2), ContractError);
  std::mt19937_64 rng(2);
  CHECK_FALSE(mask_subsequence(Sequence{1, 2}, M, rng).has_value());
  std::set<std::size_t> starts;
  for (int t = 0; t < 100; ++t) {
    const Sequence out = *mask_subsequence(Sequence{1, 2, 3}, M, rng);
    REQUIRE(out.size() == 3);
    starts.insert(out[0] == M ? 0 : 1);
    CHECK(std::count(out.begin(), out.end(), M) == 2);
  }
  CHECK(starts == std::set<std::size_t>{0, 1});
}

TEST_CASE("hyperedge pairs follow the overlap rule") {
  std::map<CalendarIndex, Hypergraph> buckets;
  buckets[{Granularity::month, 2018, 1}] = Hypergraph({{0, {1, 2}}, {1, {2, 3}}, {2, {3, 4}}, {3, {7, 8}}});
  buckets[{Granularity::month, 2018, 2}] = Hypergraph({{0, {1, 2}}});
  const HyperedgePairs p(buckets);
  CHECK(p.edges().size() == 5);
  CHECK(p.positives().size() == 2);  // (0,1), (1,2); the single-edge bucket adds none
  CHECK(p.is_positive(0, 1));
  CHECK(p.is_positive(1, 0));
  CHECK_FALSE(p.is_positive(0, 2));
  CHECK_FALSE(p.is_positive(0, 4));  // same items, other bucket
  std::mt19937_64 rng(3);
  for (auto n : p.sample_negatives(0, 20, rng)) {
    CHECK(p.bucket_of(n) == p.bucket_of(0));
    CHECK_FALSE(p.is_positive(0, n));
    CHECK(n != 0);
  }
  for (auto n : p.sample_negatives(4, 5, rng)) CHECK(p.bucket_of(n) == 0);  // cross-bucket fallback
}

TEST_CASE("contrastive loss hand cases") {
  Tape t;
  const Var a = t.constant(row({1, 0}));
  const Var p = t.constant(row({2, 0}));
  const Var n = t.constant(row({0, 3}));
  // scalar_oracle.py: contrastive_one_negative = 0.313261687518.
  CHECK(contrastive_loss(a, p, n, 1.0).value().item() == doctest::Approx(0.313261687518).epsilon(1e-9));
  CHECK(contrastive_loss(a, p, std::nullopt, 1.0).value().item() == 0.0);
  const Var same = t.constant(Tensor::matrix({{1, 1}, {1, 1}, {1, 1}}));
  CHECK(contrastive_loss(a, t.constant(row({1, 1})), same, 0.3).value().item() ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK_THROWS_AS(contrastive_loss(a, t.constant(row({0, 0})), n, 1.0), NumericError);
  CHECK_THROWS_AS(contrastive_loss(a, p, n, 0.0), ConfigError);
}

TEST_CASE("contrastive loss is positive and decreasing in the positive similarity") {
  Tape t;
  const Var a = t.constant(row({1, 0}));
  const Var negs = t.constant(Tensor::matrix({{0.3, 1}, {-1, 0.2}}));
  double last = INFINITY;
  for (double angle = 3.0; angle >= 0.0; angle -= 0.25) {
    const double loss =
        contrastive_loss(a, t.constant(row({std::cos(angle), std::sin(angle)})), negs, 0.5).value().item();
    CHECK(loss > 0);
    CHECK(loss < last);
    last = loss;
  }
}

TEST_CASE("contrastive loss gradient") {
  std::mt19937_64 rng(4);
  const std::size_t offsets[3] = {0, 3, 5};
  CHECK(gradient_error([&](Tape&, const std::vector<Var>& in) {
          return contrastive_loss_batch(in[0], in[1], offsets, 0.5);
        }, {random_tensor({2, 4}, rng), random_tensor({5, 4}, rng)}) < 1e-4);
  CHECK(gradient_error([&](Tape&, const std::vector<Var>& in) {
          return ops::sum(cosine_rows(in[0], in[1]));
        }, {random_tensor({3, 5}, rng), random_tensor({3, 5}, rng)}) < 1e-4);
}

TEST_CASE("cosine similarity range") {
  std::mt19937_64 rng(6);
  Tape t;
  const Tensor x = random_tensor({20, 6}, rng);
  const Var self = cosine_rows(t.constant(x), t.constant(x));
  for (double v : self.value().data()) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
  const Var other = cosine_rows(t.constant(x), t.constant(random_tensor({20, 6}, rng)));
  for (double v : other.value().data()) CHECK(std::abs(v) <= 1.0 + 1e-12);
}

TEST_CASE("task sets") {
  CHECK(TaskSet::parse("M,S,H").subsets().size() == 7);
  CHECK(TaskSet::parse("M,H").subsets().size() == 3);
  CHECK(TaskSet::parse("H,M").to_string() == "M,H");
  CHECK_THROWS_AS(TaskSet::parse(""), ConfigError);
  CHECK_THROWS_AS(TaskSet::parse("M,X"), ConfigError);
}

TEST_CASE("transformer is causal and segments are independent") {
  const TransformerConfig cfg{8, 2, 2, 10, 0.0};
  ParameterStore store;
  std::mt19937_64 rng(7);
  register_transformer(store, "enc", cfg, rng);
  Tape t;
  const VarMap vars(t, store);
  Tensor tokens = random_tensor({7, 8}, rng);
  const std::vector<std::size_t> offsets{0, 4, 7};
  const std::vector<std::uint32_t> pos{0, 1, 2, 3, 0, 1, 2};
  const Tensor base = transformer_forward(vars, "enc", cfg, t.constant(tokens), offsets, pos, true, nullptr).value();
  CHECK(base.rows() == 7);
  CHECK(base.cols() == 8);

  Tensor changed = tokens;
  for (std::size_t j = 0; j < 8; ++j) changed.at(3, j) += 1.0;  // last token of segment 0
  const Tensor after = transformer_forward(vars, "enc", cfg, t.constant(changed), offsets, pos, true, nullptr).value();
  for (std::size_t r = 0; r < 7; ++r) {
    for (std::size_t j = 0; j < 8; ++j) {
      if (r == 3) continue;
      CHECK(after.at(r, j) == base.at(r, j));
    }
  }
  const Tensor bidir = transformer_forward(vars, "enc", cfg, t.constant(changed), offsets, pos, false, nullptr).value();
  CHECK(bidir.at(0, 0) != base.at(0, 0));
  CHECK(bidir.at(4, 0) == transformer_forward(vars, "enc", cfg, t.constant(tokens), offsets, pos, false, nullptr)
                              .value()
                              .at(4, 0));
}

TEST_CASE("transformer gradient and dropout") {
  const TransformerConfig cfg{6, 2, 1, 8, 0.0};
  ParameterStore store;
  std::mt19937_64 rng(8);
  register_transformer(store, "enc", cfg, rng);
  const std::vector<std::size_t> offsets{0, 3, 5};
  const std::vector<std::uint32_t> pos{0, 1, 2, 0, 1};
  CHECK(gradient_error([&](Tape& t, const std::vector<Var>& in) {
          const VarMap vars(t, store);
          return weighted_sum(t, transformer_forward(vars, "enc", cfg, in[0], offsets, pos, true, nullptr));
        }, {random_tensor({5, 6}, rng)}) < 1e-4);

  TransformerConfig drop = cfg;
  drop.dropout = 0.5;
  Tape t;
  const VarMap vars(t, store);
  const Var x = t.constant(random_tensor({5, 6}, rng));
  std::mt19937_64 r1(1), r2(1);
  const Tensor a = transformer_forward(vars, "enc", drop, x, offsets, pos, true, &r1).value();
  const Tensor b = transformer_forward(vars, "enc", drop, x, offsets, pos, true, &r2).value();
  CHECK(a.values() == b.values());
  const Tensor off = transformer_forward(vars, "enc", drop, x, offsets, pos, true, nullptr).value();
  CHECK(off.values() != a.values());
}

TEST_CASE("encoder pooling and shapes") {
  PretrainConfig cfg = small_config(1);
  cfg.encoder.dropout = 0.0;
  ParameterStore store;
  std::mt19937_64 rng(9);
  register_encoder(store, cfg, 30, rng);
  CHECK(store.at("pretrain.items").rows() == 31);
  Tape t;
  const VarMap vars(t, store);
  std::vector<Sequence> seqs{{3}, {1, 2, 3}, Sequence(45, 4)};
  const Var out = encode(vars, cfg, seqs, nullptr);
  CHECK(out.value().rows() == 3);
  CHECK(out.value().cols() == 16);
  const Var again = encode(vars, cfg, seqs, nullptr);
  CHECK(out.value().values() == again.value().values());
  std::vector<Sequence> empty{{}};
  CHECK_THROWS_AS(encode(vars, cfg, empty, nullptr), ContractError);
}

TEST_CASE("pre-training lowers the loss and is deterministic") {
  const InteractionLog log = small_synthetic();
  const PretrainConfig cfg = small_config(50);
  const PretrainResult a = run_pretrain(log, cfg);
  REQUIRE(a.epoch_loss.size() == 50);
  CHECK(a.epoch_loss.back() < a.epoch_loss.front());
  for (std::size_t e = 0; e < a.epoch_loss.size(); ++e) {
    const auto& t = a.task_loss[e];
    CHECK(a.epoch_loss[e] == doctest::Approx(0.1 * t[0] + t[1] + t[2]).epsilon(1e-12));
  }
  CHECK(a.table.rows() == log.n_items());
  CHECK(a.table.cols() == 16);

  PretrainConfig short_cfg = small_config(2);
  const PretrainResult b = run_pretrain(log, short_cfg), c = run_pretrain(log, short_cfg);
  CHECK(b.table.values() == c.table.values());

  short_cfg.tasks = TaskSet::parse("H");
  const PretrainResult h = run_pretrain(log, short_cfg);
  CHECK(h.task_loss[0][0] == 0.0);
  CHECK(h.task_loss[0][1] == 0.0);
  CHECK(h.task_loss[0][2] > 0.0);
}
