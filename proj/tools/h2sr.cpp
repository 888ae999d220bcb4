#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "h2sr/checkpoint.hpp"
#include "h2sr/dataset.hpp"
#include "h2sr/errors.hpp"
#include "h2sr/pipeline.hpp"
#include "h2sr/run_config.hpp"

namespace fs = std::filesystem;
using namespace h2sr;

namespace {

/// Config flags of one subcommand; only flags given on the command line
/// override the defaults and the --config file.
struct ConfigFlags {
  std::string config_path;
  std::map<std::string, std::string> values;
  std::map<std::string, bool> switches;
  std::map<std::string, CLI::Option*> options;

  void attach(CLI::App& cmd) {
    cmd.add_option("--config", config_path, "JSON file with config overrides")->check(CLI::ExistingFile);
    for (const auto& key : RunConfig::keys()) {
      const std::string flag = "--" + key.name;
      if (key.is_switch) {
        options[key.name] = cmd.add_flag(flag, switches[key.name], "config switch " + key.name);
      } else {
        options[key.name] = cmd.add_option(flag, values[key.name], "config value " + key.name);
      }
    }
  }

  RunConfig resolve() const {
    RunConfig cfg;
    if (!config_path.empty()) cfg.merge_json(read_file(config_path));
    for (const auto& [name, opt] : options) {
      if (opt->count() == 0) continue;
      cfg.set(name, switches.count(name) ? "true" : values.at(name));
    }
    cfg.validate();
    std::cerr << "resolved config:\n" << cfg.to_json() << "\n";
    return cfg;
  }
};

void progress(const std::string& line) { std::cerr << line << "\n"; }

std::optional<Tensor> load_pretrained(const std::string& path, const RunConfig& cfg, const Dataset& data) {
  if (path.empty()) return std::nullopt;
  return pretrained_items(load_checkpoint(path, data.log.vocabulary_hash()), data.log, cfg.dim);
}

eval::Target parse_target(const std::string& name) {
  if (name == "test") return eval::Target::test;
  if (name == "validation") return eval::Target::validation;
  throw ConfigError("unknown target '" + name + "' (expected test or validation)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical hyperbolic hypergraph sequential recommender"};
  app.require_subcommand(1);

  std::string data, out, pretrained, checkpoint, loss_trace, report, report_json_path, target = "test";

  ConfigFlags synth_flags, ingest_flags, pretrain_flags, train_flags, eval_flags, ablate_flags;

  auto* synth = app.add_subcommand("synth", "generate a synthetic interaction log");
  synth_flags.attach(*synth);
  synth->add_option("--out", out, "output TSV")->required();

  auto* ingest_cmd = app.add_subcommand("ingest", "filter and canonicalise an interaction log");
  ingest_flags.attach(*ingest_cmd);
  ingest_cmd->add_option("--data", data, "input TSV")->required()->check(CLI::ExistingFile);
  ingest_cmd->add_option("--out", out, "canonical TSV")->required();

  auto* pretrain_cmd = app.add_subcommand("pretrain", "self-supervised pre-training of the item table");
  pretrain_flags.attach(*pretrain_cmd);
  pretrain_cmd->add_option("--data", data, "interaction TSV")->required()->check(CLI::ExistingFile);
  pretrain_cmd->add_option("--out", out, "pretrain checkpoint")->required();
  pretrain_cmd->add_option("--loss-trace", loss_trace, "epoch<TAB>loss file");

  auto* train = app.add_subcommand("train", "train the recommender");
  train_flags.attach(*train);
  train->add_option("--data", data, "interaction TSV")->required()->check(CLI::ExistingFile);
  train->add_option("--out", out, "model checkpoint")->required();
  train->add_option("--pretrained", pretrained, "pretrain checkpoint (init and fuse variants)")
      ->check(CLI::ExistingFile);
  train->add_option("--loss-trace", loss_trace, "epoch<TAB>loss file (default <out>.loss.tsv)");

  auto* eval_cmd = app.add_subcommand("eval", "rank held-out items against sampled negatives");
  eval_flags.attach(*eval_cmd);
  eval_cmd->add_option("--data", data, "interaction TSV")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--checkpoint", checkpoint, "model checkpoint (untrained model when omitted)")
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--pretrained", pretrained, "pretrain checkpoint for an untrained init/fuse model")
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--target", target, "test or validation");
  eval_cmd->add_option("--report", report, "also write the TSV report here");
  eval_cmd->add_option("--report-json", report_json_path, "machine-readable report");

  auto* ablate = app.add_subcommand("ablate", "module and pre-training task ablation grids");
  ablate_flags.attach(*ablate);
  ablate->add_option("--data", data, "interaction TSV")->required()->check(CLI::ExistingFile);
  ablate->add_option("--report", report, "also write the TSV report here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*synth) {
      const RunConfig cfg = synth_flags.resolve();
      const InteractionLog log = synthesize(cfg.synthetic());
      write_log(out, log);
      std::cout << "users\t" << log.n_users() << "\nitems\t" << log.n_items() << "\nrecords\t" << log.size() << "\n";
    } else if (*ingest_cmd) {
      const RunConfig cfg = ingest_flags.resolve();
      IngestStats stats;
      const InteractionLog log = ingest(data, cfg.min_interactions, &stats);
      write_log(out, log);
      std::cout << "lines\t" << stats.lines << "\nkept_users\t" << stats.kept_users << "\ndropped_users\t"
                << stats.dropped_users << "\nitems\t" << stats.kept_items << "\nrecords\t" << stats.kept_records
                << "\n";
    } else if (*pretrain_cmd) {
      const RunConfig cfg = pretrain_flags.resolve();
      const Dataset ds = load_dataset(data, cfg.min_interactions);
      const PretrainRun run = pretrain_items(cfg, ds, progress);
      save_checkpoint(out, run.checkpoint);
      if (!loss_trace.empty()) atomic_write(loss_trace, loss_trace_tsv(run.result.epoch_loss));
    } else if (*train) {
      const RunConfig cfg = train_flags.resolve();
      const Dataset ds = load_dataset(data, cfg.min_interactions);
      const TrainRun run = train_model(cfg, ds, load_pretrained(pretrained, cfg, ds), progress);
      save_checkpoint(out, run.checkpoint);
      atomic_write(loss_trace.empty() ? out + ".loss.tsv" : loss_trace, loss_trace_tsv(run.result.loss_trace));
    } else if (*eval_cmd) {
      RunConfig cfg = eval_flags.resolve();
      const eval::Target which = parse_target(target);
      const Dataset ds = load_dataset(data, cfg.min_interactions);
      eval::MetricsReport rep;
      if (!checkpoint.empty()) {
        const RestoredModel restored = restore_model(load_checkpoint(checkpoint, ds.log.vocabulary_hash()), ds);
        rep = restored.model->evaluate(cfg.evaluation(), which);
      } else {
        const seqrec::Recommender model(cfg.seqrec(), ds.log, ds.split, load_pretrained(pretrained, cfg, ds));
        rep = model.evaluate(cfg.evaluation(), which);
      }
      const std::string tsv = rep.to_tsv();
      std::cout << tsv;
      if (!report.empty()) atomic_write(report, tsv);
      if (!report_json_path.empty()) atomic_write(report_json_path, report_json(rep, cfg, which));
    } else if (*ablate) {
      const RunConfig cfg = ablate_flags.resolve();
      const Dataset ds = load_dataset(data, cfg.min_interactions);
      const auto rows = run_ablation(cfg, ds, progress);
      const std::string tsv = ablation_tsv(rows);
      std::cout << tsv;
      if (!report.empty()) atomic_write(report, tsv);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
