#pragma once

#include <random>
#include <string>

#include "grad_check.hpp"
#include "h2sr/ops.hpp"
#include "h2sr/seqrec.hpp"

namespace h2sr::testing {

inline std::int64_t day(int month, int d) {
  return month_start({Granularity::month, 2018, month}) + (d - 1) * 86400LL;
}

/// Five users, eight items, six months; users overlap in most months.
inline InteractionLog tiny_log() {
  std::vector<Interaction> rec;
  const int plan[5][7][2] = {
      {{0, 1}, {1, 1}, {2, 2}, {3, 3}, {4, 4}, {5, 5}, {6, 6}},
      {{1, 1}, {2, 1}, {3, 2}, {4, 3}, {5, 4}, {0, 5}, {7, 6}},
      {{0, 1}, {2, 2}, {4, 2}, {6, 3}, {1, 4}, {3, 5}, {5, 6}},
      {{7, 1}, {6, 2}, {5, 3}, {4, 4}, {3, 4}, {2, 5}, {1, 6}},
      {{3, 1}, {5, 2}, {7, 3}, {1, 3}, {0, 5}, {2, 6}, {4, 6}},
  };
  for (UserId u = 0; u < 5; ++u) {
    for (int k = 0; k < 7; ++k) {
      rec.push_back({u, static_cast<ItemId>(plan[u][k][0]), day(plan[u][k][1], 3 + 2 * k + static_cast<int>(u))});
    }
  }
  return InteractionLog(std::move(rec), 5, 8);
}

inline seqrec::SeqRecConfig tiny_config() {
  seqrec::SeqRecConfig cfg;
  cfg.dim = 4;
  cfg.transformer = TransformerConfig{4, 2, 1, 10, 0.0};
  cfg.epochs = 3;
  cfg.batch = 2;
  cfg.lr = 0.01;
  cfg.alpha = 1e-3;
  cfg.seed = 3;
  return cfg;
}

struct GradientReport {
  double worst = 0.0;
  std::string worst_param;
};

/// Largest relative error between backward() and central differences over
/// every trainable entry of the recommender's parameters.
inline GradientReport batch_loss_gradient_error(seqrec::Recommender& rec) {
  std::mt19937_64 rng(1);
  // Zero-initialised biases put ReLU inputs exactly on the kink; jitter every
  // parameter so the check runs at a generic point.
  ParameterStore jittered = rec.params();
  std::uniform_real_distribution<double> jitter(-0.05, 0.05);
  for (const auto& name : jittered.names()) {
    for (auto& x : jittered.at(name).mutable_data()) x += jitter(rng);
  }
  rec.load_params(jittered);
  const std::vector<seqrec::Example> examples = rec.make_examples(rng);
  auto loss_of = [&](const ParameterStore& store, GradientMap* grads, VarMap* keep, Tape& tape) {
    *keep = VarMap(tape, store);
    auto groups = rec.user_groups();
    const Var loss = rec.batch_loss(*keep, examples, *groups, nullptr);
    if (grads) *grads = tape.backward(loss);
    return loss.value().item();
  };
  Tape tape;
  VarMap vars;
  GradientMap grads;
  ParameterStore store = rec.params();
  loss_of(store, &grads, &vars, tape);

  GradientReport report;
  for (const auto& [name, var] : vars.all()) {
    const Tensor& analytic = grads[var];
    auto f = [&](const Tensor& x) {
      ParameterStore s = store;
      s.at(name) = x;
      Tape t;
      VarMap v;
      return loss_of(s, nullptr, &v, t);
    };
    const Tensor numeric = ops::finite_diff_grad(f, store.at(name), 1e-5);
    const double err = ops::relative_error(analytic, numeric, h2sr::testing::kGradientFloor);
    if (err > report.worst) report = {err, name};
  }
  return report;
}

}  // namespace h2sr::testing
