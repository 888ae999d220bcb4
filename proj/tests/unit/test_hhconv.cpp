#include <cmath>
#include <numeric>

#include "doctest.h"
#include "grad_check.hpp"
#include "h2sr/errors.hpp"
#include "h2sr/hhconv.hpp"

using namespace h2sr;
using namespace h2sr::hhconv;
using h2sr::testing::gradient_error;
using h2sr::testing::random_tensor;
using h2sr::testing::weighted_sum;

namespace {

LayerParams first_layer() {
  LayerParams p;
  p.weight = Tensor::matrix({{0.9, 0.2}, {-0.3, 1.1}});
  p.bias = Tensor::matrix({{0.1, 0.2}});
  p.att_left = Tensor::matrix({{0.5, -0.4}, {0.3, 0.2}});
  p.att_right = Tensor::matrix({{-0.2, 0.6}, {0.7, 0.1}});
  p.att_bias = Tensor::matrix({{0.05, -0.1}});
  p.att_out = Tensor::matrix({{0.8, -0.5}});
  p.att_out_bias = Tensor::matrix({{0.3}});
  return p;
}

LayerParams second_layer() {
  LayerParams p;
  p.weight = Tensor::matrix({{1.2, -0.1}, {0.4, 0.7}});
  p.bias = Tensor::matrix({{0.0, 0.15}});
  p.att_left = Tensor::matrix({{0.1, 0.2}, {-0.6, 0.4}});
  p.att_right = Tensor::matrix({{0.3, -0.3}, {0.2, 0.5}});
  p.att_bias = Tensor::matrix({{0.0, 0.2}});
  p.att_out = Tensor::matrix({{-0.4, 0.9}});
  p.att_out_bias = Tensor::matrix({{-0.1}});
  return p;
}

const Tensor kFour = Tensor::matrix({{0.4, -0.3}, {-0.2, 0.5}, {0.7, 0.1}, {0.3, 0.6}});

/// Tape forward of a single hypergraph with the given per-layer parameters.
Tensor tape_forward(const Hypergraph& hg, const Tensor& table, const std::vector<LayerParams>& layers,
                    HHConvConfig cfg = {}) {
  cfg.layers = layers.size();
  ParameterStore store;
  for (std::size_t l = 0; l < layers.size(); ++l) store_layer(store, "g", l, layers[l]);
  Tape tape;
  const VarMap vars(tape, store);
  return forward(hg, tape.constant(table), bind_layers(vars, "g", layers.size()), cfg).value();
}

std::vector<LayerParams> random_layers(std::size_t d, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<LayerParams> out;
  for (std::size_t l = 0; l < n; ++l) {
    LayerParams p = LayerParams::init(d, rng);
    p.bias = random_tensor({1, d}, rng, -0.3, 0.3);
    p.att_bias = random_tensor({1, d}, rng, -0.3, 0.3);
    p.att_out = random_tensor({1, d}, rng, -1.5, 1.5);
    out.push_back(std::move(p));
  }
  return out;
}

// Six nodes: {0,1,2}, {2,3}, {4}, {5,1}.
Hypergraph six_nodes() { return Hypergraph({{0, {0, 1, 2}}, {1, {2, 3}}, {2, {4}}, {3, {5, 1}}}); }

}  // namespace

TEST_CASE("lift_features") {
  const Hyperboloid h(2);
  const auto pts = lift_features(h, Tensor::matrix({{0, 0}, {3, 4}}));
  CHECK(pts[0].coords == std::vector<double>{1, 0, 0});
  CHECK(std::abs(pts[1].coords[0] - 74.209949) < 1e-5);
  CHECK(std::abs(pts[1].coords[1] - 44.521926) < 1e-5);
  CHECK(std::abs(pts[1].coords[2] - 59.362569) < 1e-5);
  for (const auto& p : pts) CHECK(h.membership_error(p) < 1e-9);
  CHECK_THROWS_WITH_AS(lift_features(h, Tensor::matrix({{0, 0}, {NAN, 1}})), doctest::Contains("row 1"), NumericError);
}

TEST_CASE("hyperbolic_linear") {
  const Hyperboloid h(2);
  const auto p = h.lift(std::vector<double>{0.3, -0.7});
  const auto same = hyperbolic_linear(h, p, LayerParams::identity(2));
  for (std::size_t m = 0; m < 3; ++m) CHECK(std::abs(same.coords[m] - p.coords[m]) < 1e-9);

  LayerParams zero = LayerParams::identity(2);
  zero.weight = Tensor::zeros({2, 2});
  CHECK(hyperbolic_linear(h, p, zero).coords == h.origin().coords);

  LayerParams shift = LayerParams::identity(2);
  shift.bias = Tensor::matrix({{1, 0}});
  const auto b = hyperbolic_linear(h, h.origin(), shift);
  const auto expect = h.lift(std::vector<double>{1, 0});
  for (std::size_t m = 0; m < 3; ++m) CHECK(b.coords[m] == doctest::Approx(expect.coords[m]));

  CHECK_THROWS_AS(hyperbolic_linear(h, HyperboloidPoint{{3, 0, 0}}, shift), GeometryError);
}

TEST_CASE("attention_weights") {
  const Hyperboloid h(2);
  const auto c = h.lift(std::vector<double>{0.1, 0.2});
  const std::vector<HyperboloidPoint> two{h.lift(std::vector<double>{0.5, 0.5}), h.lift(std::vector<double>{0.5, 0.5})};
  const auto w = attention_weights(h, c, two, first_layer());
  CHECK(w[0] == doctest::Approx(0.5));
  CHECK(w[1] == doctest::Approx(0.5));
  CHECK(attention_weights(h, c, std::span(two).first(1), first_layer()) == std::vector<double>{1.0});
  const std::vector<HyperboloidPoint> three{h.lift(std::vector<double>{0.5, 0.5}), h.lift(std::vector<double>{-1, 0}),
                                            h.origin()};
  for (double x : attention_weights(h, c, three, LayerParams::identity(2))) CHECK(x == doctest::Approx(1.0 / 3.0));
  CHECK(attention_weights(h, c, {}, first_layer()).empty());
}

TEST_CASE("aggregate") {
  const Hyperboloid h(2);
  const auto x = h.lift(std::vector<double>{0.1, 0.2});
  const auto y = h.lift(std::vector<double>{-0.6, 0.9});
  CHECK(aggregate(h, x, {}, {}).coords == x.coords);
  const std::vector<HyperboloidPoint> one{y};
  const std::vector<double> w1{1.0};
  const auto moved = aggregate(h, x, one, w1);
  for (std::size_t m = 0; m < 3; ++m) CHECK(std::abs(moved.coords[m] - y.coords[m]) < 1e-8);
  const std::vector<HyperboloidPoint> same{x, x};
  const std::vector<double> w2{0.5, 0.5};
  const auto stay = aggregate(h, x, same, w2);
  for (std::size_t m = 0; m < 3; ++m) CHECK(std::abs(stay.coords[m] - x.coords[m]) < 1e-9);
}

TEST_CASE("hyperbolic_activation") {
  const Hyperboloid h(2);
  const auto pos = h.lift(std::vector<double>{0.4, 1.3});
  const auto kept = hyperbolic_activation(h, pos);
  for (std::size_t m = 0; m < 3; ++m) CHECK(std::abs(kept.coords[m] - pos.coords[m]) < 1e-9);
  CHECK(hyperbolic_activation(h, h.lift(std::vector<double>{-0.4, -1.3})).coords == h.origin().coords);
  const auto mixed = hyperbolic_activation(h, h.lift(std::vector<double>{-1, 2}));
  const auto expect = h.lift(std::vector<double>{0, 2});
  for (std::size_t m = 0; m < 3; ++m) CHECK(mixed.coords[m] == doctest::Approx(expect.coords[m]).epsilon(1e-12));
}

TEST_CASE("hand-computed forward passes") {
  // Expected rows come from tests/oracles/hhconv_oracle.py (40-digit arithmetic).
  const Hypergraph pair({{0, {0, 1}}});
  const Tensor two = Tensor::matrix({{0.4, -0.3}, {-0.2, 0.5}});
  const std::vector<LayerParams> both{first_layer(), second_layer()};
  const Tensor expected_pair = Tensor::matrix({{0.48, 0.31}, {0.0, 0.725}});
  CHECK(max_abs_diff(tape_forward(pair, two, both), expected_pair) < 1e-6);
  CHECK(max_abs_diff(reference_forward(pair, two, {2, 1.0}, both).output, expected_pair) < 1e-6);

  const Hypergraph chain({{0, {0, 1, 2}}, {1, {2, 3}}});
  const Tensor expected_four = Tensor::matrix({{0.33841925745484038, 0.63776347423334786},
                                               {0.54089581197900693, 0.20736052228653535},
                                               {0.21846053899360184, 0.54711484454593836},
                                               {0.25249408526568344, 0.28097729529875557}});
  const std::vector<LayerParams> one{first_layer()};
  CHECK(max_abs_diff(tape_forward(chain, kFour, one), expected_four) < 1e-6);
  CHECK(max_abs_diff(reference_forward(chain, kFour, {1, 1.0}, one).output, expected_four) < 1e-6);

  const Hypergraph split({{0, {0, 1}}, {1, {2, 3}}});
  const Tensor expected_split = Tensor::matrix({{0.48, 0.31}, {0, 0.725}, {0.89, 0.52}, {0.511, 0.885}});
  CHECK(max_abs_diff(tape_forward(split, kFour, both), expected_split) < 1e-6);
}

TEST_CASE("membership after every stage") {
  const Hypergraph hg = six_nodes();
  std::mt19937_64 rng(31);
  const Tensor table = random_tensor({6, 3}, rng, -1.0, 1.0);
  const auto layers = random_layers(3, 2, 32);
  const auto res = reference_forward(hg, table, {2, 1.0}, layers);
  const Hyperboloid h(3);
  for (const auto& st : res.layers) {
    for (const auto* stage : {&st.transformed, &st.aggregated, &st.activated}) {
      for (const auto& p : *stage) CHECK(h.membership_error(p) < 1e-9);
    }
  }
}

TEST_CASE("tape forward agrees with the reference on random graphs") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(seed);
    const double c = seed % 2 ? 1.0 : 0.5;
    std::vector<Hyperedge> edges;
    std::uniform_int_distribution<ItemId> item(0, 9);
    for (UserId u = 0; u < 5; ++u) {
      std::vector<ItemId> e;
      for (int k = 0; k < 3; ++k) {
        const ItemId i = item(rng);
        if (std::find(e.begin(), e.end(), i) == e.end()) e.push_back(i);
      }
      edges.push_back({u, e});
    }
    const Hypergraph hg(edges);
    const Tensor table = random_tensor({12, 4}, rng, -1.0, 1.0);
    const auto layers = random_layers(4, 2, seed + 100);
    HHConvConfig cfg{2, c};
    const auto ref = reference_forward(hg, table, cfg, layers);
    CHECK(max_abs_diff(tape_forward(hg, table, layers, cfg), ref.output) < 1e-9);
  }
}

TEST_CASE("attention weights sum to one over every neighbourhood") {
  const Hyperboloid h(3);
  std::mt19937_64 rng(41);
  const auto lp = random_layers(3, 1, 42)[0];
  for (int trial = 0; trial < 20; ++trial) {
    const auto c = h.lift(random_tensor({3}, rng).data());
    std::vector<HyperboloidPoint> nb;
    for (int k = 0; k < 1 + trial % 6; ++k) nb.push_back(h.lift(random_tensor({3}, rng).data()));
    const auto w = attention_weights(h, c, nb, lp);
    CHECK(std::abs(std::accumulate(w.begin(), w.end(), 0.0) - 1.0) < 1e-12);
    for (double x : w) CHECK(x > 0);
  }
}

TEST_CASE("isolated nodes and empty graphs") {
  const Tensor table = Tensor::matrix({{0.5, -0.2}, {1.5, 0.25}});
  const Hypergraph lonely(std::vector<Hyperedge>{Hyperedge{0, {0}}});
  const Tensor out = tape_forward(lonely, table, {LayerParams::identity(2)});
  CHECK(std::abs(out.at(0, 0) - 0.5) < 1e-9);
  CHECK(out.at(0, 1) == 0.0);
  CHECK(out.at(1, 0) == 1.5);  // not a node: copied through

  const Tensor nonneg = Tensor::matrix({{0.5, 0.2}, {1.5, 0.25}});
  CHECK(max_abs_diff(tape_forward(Hypergraph{}, nonneg, {LayerParams::identity(2)}), nonneg) < 1e-9);

  Tape tape;
  const Hypergraph far({{0, {0, 7}}});
  ParameterStore store;
  store_layer(store, "g", 0, LayerParams::identity(2));
  const VarMap vars(tape, store);
  CHECK_THROWS_WITH_AS(forward(far, tape.constant(table), bind_layers(vars, "g", 1), {1, 1.0}),
                       doctest::Contains("7"), LookupError);
}

TEST_CASE("relabelling items permutes the output rows") {
  std::mt19937_64 rng(51);
  const Tensor table = random_tensor({6, 3}, rng, -1.0, 1.0);
  const auto layers = random_layers(3, 2, 52);
  const std::vector<ItemId> perm{3, 5, 0, 1, 4, 2};
  std::vector<Hyperedge> edges = six_nodes().hyperedges(), moved;
  for (auto e : edges) {
    for (auto& i : e.items) i = perm[i];
    moved.push_back(e);
  }
  Tensor permuted = Tensor::zeros({6, 3});
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t m = 0; m < 3; ++m) permuted.at(perm[i], m) = table.at(i, m);
  }
  const Tensor a = tape_forward(six_nodes(), table, layers);
  const Tensor b = tape_forward(Hypergraph(moved), permuted, layers);
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t m = 0; m < 3; ++m) CHECK(std::abs(a.at(i, m) - b.at(perm[i], m)) < 1e-12);
  }
}

TEST_CASE("full forward gradients match finite differences") {
  for (bool euclidean : {false, true}) {
    for (double c : {1.0, 0.6}) {
      std::mt19937_64 rng(61);
      const Tensor table = random_tensor({6, 3}, rng, -1.0, 1.0);
      const auto layers = random_layers(3, 2, 62);
      std::vector<Tensor> inputs{table};
      for (const auto& l : layers) {
        for (const Tensor* t : {&l.weight, &l.bias, &l.att_left, &l.att_right, &l.att_bias, &l.att_out,
                                &l.att_out_bias}) {
          inputs.push_back(*t);
        }
      }
      const Hypergraph hg = six_nodes();
      auto graph = [&](Tape& t, const std::vector<Var>& in) {
        std::vector<LayerVars> lv;
        for (std::size_t l = 0; l < 2; ++l) {
          const std::size_t o = 1 + 7 * l;
          lv.push_back({in[o], in[o + 1], in[o + 2], in[o + 3], in[o + 4], in[o + 5], in[o + 6]});
        }
        HHConvConfig cfg{2, c};
        cfg.euclidean = euclidean;
        return weighted_sum(t, forward(hg, in[0], lv, cfg));
      };
      CHECK_MESSAGE(gradient_error(graph, inputs) < 1e-4, "euclidean=", euclidean, " c=", c);
    }
  }
}

TEST_CASE("fused aggregation gradient on points far from the origin") {
  std::mt19937_64 rng(71);
  const Hypergraph hg = six_nodes();
  auto batch = std::make_shared<GraphBatch>();
  batch->append(build_neighborhood_index(hg), 0, 0);
  const Tensor z = random_tensor({6, 3}, rng, -2.5, 2.5);
  const Tensor left = random_tensor({6, 3}, rng), right = random_tensor({6, 3}, rng);
  const Tensor ab = random_tensor({1, 3}, rng), ao = random_tensor({1, 3}, rng), aob = random_tensor({1, 1}, rng);
  // The output bias shifts every score of a row equally, so its gradient is
  // exactly zero; with coordinates near 1e3 the central-difference noise on it
  // exceeds any meaningful floor, so it is checked on the tape instead.
  auto graph = [&](Tape& t, const std::vector<Var>& in) {
    const Var x = manifold::lift_rows(in[0], 1.0);
    return weighted_sum(t, attention_aggregate(x, in[1], in[2], in[3], in[4], t.constant(aob), batch, 1.0));
  };
  CHECK(gradient_error(graph, {z, left, right, ab, ao}) < 1e-4);

  Tape tape;
  const Var bias = tape.param(aob);
  const Var x = manifold::lift_rows(tape.constant(z), 1.0);
  const Var out = attention_aggregate(x, tape.constant(left), tape.constant(right), tape.constant(ab),
                                      tape.constant(ao), bias, batch, 1.0);
  CHECK(std::abs(tape.backward(weighted_sum(tape, out))[bias][0]) < 1e-12);
}
