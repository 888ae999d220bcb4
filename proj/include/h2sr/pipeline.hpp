#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "h2sr/checkpoint.hpp"
#include "h2sr/dataset.hpp"
#include "h2sr/eval.hpp"
#include "h2sr/pretrain.hpp"
#include "h2sr/run_config.hpp"
#include "h2sr/seqrec.hpp"

namespace h2sr {

/// Receives one human-readable progress line at a time.
using ProgressLog = std::function<void(const std::string&)>;

struct Dataset {
  InteractionLog log;
  eval::SplitLog split;
  IngestStats stats;
};

Dataset make_dataset(InteractionLog log);
Dataset load_dataset(const std::filesystem::path& path, std::size_t min_interactions);

struct PretrainRun {
  pretrain::PretrainResult result;
  Checkpoint checkpoint;  // kind "pretrain", one matrix "items"
};

/// Pre-trains on the training split of `data`.
PretrainRun pretrain_items(const RunConfig& cfg, const Dataset& data, const ProgressLog& log = {});

/// The item table stored in a pretrain checkpoint; refuses other vocabularies
/// and widths.
Tensor pretrained_items(const Checkpoint& ckpt, const InteractionLog& log, std::size_t dim);

struct TrainRun {
  std::unique_ptr<seqrec::Recommender> model;  // refers to `data`
  seqrec::Recommender::TrainResult result;
  Checkpoint checkpoint;  // kind "model"
};

/// Trains the configured recommender. init and fuse need `pretrained`.
TrainRun train_model(const RunConfig& cfg, const Dataset& data, std::optional<Tensor> pretrained,
                     const ProgressLog& log = {});

/// Rebuilds a recommender from a model checkpoint written by train_model.
struct RestoredModel {
  RunConfig config;
  std::unique_ptr<seqrec::Recommender> model;
};
RestoredModel restore_model(const Checkpoint& ckpt, const Dataset& data);

/// "epoch<TAB>loss" lines, epochs counted from 1.
std::string loss_trace_tsv(std::span<const double> losses);

/// Report rows plus the target and the resolved config.
std::string report_json(const eval::MetricsReport& report, const RunConfig& cfg, eval::Target target);

struct AblationRow {
  std::string grid;     // "module" or "tasks"
  std::string setting;  // ablation label or task list
  double final_loss = 0;
  eval::MetricsReport report;
};

/// Module grid (full, no-groups, no-hierarchy, euclidean, quarter-year) with
/// the configured variant, then one fuse model (init when the configured
/// variant is init) per non-empty subset of the configured tasks.
std::vector<AblationRow> run_ablation(const RunConfig& cfg, const Dataset& data, const ProgressLog& log = {});

/// One line per row: grid, setting, final loss, then every metric column.
std::string ablation_tsv(std::span<const AblationRow> rows);

}  // namespace h2sr
