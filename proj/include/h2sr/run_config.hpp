#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "h2sr/dataset.hpp"
#include "h2sr/eval.hpp"
#include "h2sr/pretrain.hpp"
#include "h2sr/seqrec.hpp"

namespace h2sr {

/// Every knob of every command, with kebab-case keys shared by the JSON form
/// and the command-line flags.
struct RunConfig {
  // Recommender.
  std::size_t dim = 100;
  std::size_t layers = 2;
  double curvature = 1.0;
  std::size_t hhconv_epochs = 300;
  std::size_t heads = 2;
  std::size_t blocks = 1;
  std::size_t max_seq = 50;
  double dropout = 0.5;
  std::size_t batch = 512;
  double lr = 0.001;
  double alpha = 1e-4;
  std::string optimizer = "adam";
  std::size_t epochs = 30;
  std::string variant = "base";
  bool no_groups = false;
  bool no_hierarchy = false;
  bool euclidean = false;
  std::string hie_order = "year-quarter";
  std::size_t group_cap = kGroupCap;
  double group_sampling = 1.0;
  bool batch_groups = false;
  bool select_best_epoch = false;

  // Pre-training.
  double tau = 0.5;
  std::size_t pretrain_negatives = 8;
  std::string tasks = "M,S,H";
  std::size_t pretrain_epochs = 100;
  std::size_t pretrain_blocks = 2;
  std::size_t pretrain_batch = 64;
  double pretrain_lr = 0.001;
  std::string pretrain_optimizer = "sgd";
  std::size_t pretrain_pairs = 0;

  // Evaluation.
  std::vector<std::size_t> ks{1, 5, 10, 20};
  std::vector<std::size_t> neg{100};

  // Data.
  std::size_t min_interactions = 5;
  std::size_t synth_users = 500;
  std::size_t synth_items = 300;
  std::size_t synth_months = 24;
  std::size_t synth_groups = 5;
  std::size_t synth_pool = 75;
  double synth_in_pool = 0.9;
  double synth_rate = 1.0;
  std::int64_t synth_start = 1514764800;

  std::uint64_t seed = 0;

  /// Field keys in declaration order, and whether each is a boolean switch.
  struct Key {
    std::string name;
    bool is_switch;
  };
  static std::vector<Key> keys();

  /// Pretty JSON with every field.
  std::string to_json() const;
  /// Overrides the fields present in a JSON object. Unknown keys and wrongly
  /// typed values are ConfigErrors.
  void merge_json(const std::string& text);
  /// Sets one field from its command-line text; lists are comma-separated.
  void set(const std::string& key, const std::string& value);
  /// FNV-1a of the compact JSON form.
  std::uint64_t hash() const;

  /// Builds and validates every derived config.
  void validate() const;

  seqrec::SeqRecConfig seqrec() const;
  pretrain::PretrainConfig pretrain() const;
  eval::EvalConfig evaluation() const;
  SyntheticSpec synthetic() const;
};

}  // namespace h2sr
