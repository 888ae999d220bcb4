#include "h2sr/pipeline.hpp"

#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "h2sr/errors.hpp"

namespace h2sr {
namespace {

using json = nlohmann::ordered_json;

void say(const ProgressLog& log, const std::string& line) {
  if (log) log(line);
}

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

Checkpoint checkpoint_for(const RunConfig& cfg, const InteractionLog& log, const char* kind) {
  Checkpoint c;
  c.vocabulary_hash = log.vocabulary_hash();
  c.user_names = log.user_names();
  c.item_names = log.item_names();
  c.config_json = cfg.to_json();
  c.config_hash = cfg.hash();
  c.seed = cfg.seed;
  c.kind = kind;
  return c;
}

constexpr const char* kPretrainedMatrix = "pretrained.items";

}  // namespace

Dataset make_dataset(InteractionLog log) {
  Dataset d;
  d.split = eval::split_leave_last_two(log);
  d.log = std::move(log);
  d.stats.kept_users = d.log.n_users();
  d.stats.kept_items = d.log.n_items();
  d.stats.kept_records = d.log.size();
  return d;
}

Dataset load_dataset(const std::filesystem::path& path, std::size_t min_interactions) {
  IngestStats stats;
  Dataset d = make_dataset(ingest(path, min_interactions, &stats));
  d.stats = stats;
  return d;
}

PretrainRun pretrain_items(const RunConfig& cfg, const Dataset& data, const ProgressLog& log) {
  pretrain::PretrainConfig pc = cfg.pretrain();
  PretrainRun run;
  run.result = pretrain::run_pretrain(data.split.train_log(data.log), pc);
  for (std::size_t e = 0; e < run.result.epoch_loss.size(); ++e) {
    const auto& t = run.result.task_loss[e];
    say(log, "pretrain epoch " + std::to_string(e + 1) + " loss " + fixed(run.result.epoch_loss[e]) + " (M " +
                 fixed(t[0]) + ", S " + fixed(t[1]) + ", H " + fixed(t[2]) + ")");
  }
  run.checkpoint = checkpoint_for(cfg, data.log, "pretrain");
  run.checkpoint.matrices.emplace("items", to_single_precision(run.result.table));
  return run;
}

Tensor pretrained_items(const Checkpoint& ckpt, const InteractionLog& log, std::size_t dim) {
  if (ckpt.kind != "pretrain") throw ConfigError("expected a pretrain checkpoint, got kind '" + ckpt.kind + "'");
  if (ckpt.vocabulary_hash != log.vocabulary_hash()) {
    throw FormatError("pretrain checkpoint was written for a different item/user vocabulary");
  }
  auto it = ckpt.matrices.find("items");
  if (it == ckpt.matrices.end()) throw FormatError("pretrain checkpoint has no 'items' matrix");
  const Tensor& t = it->second;
  if (t.rows() != log.n_items() || t.cols() != dim) {
    throw ConfigError("pretrained table is " + to_string(t.shape()) + ", expected " +
                      std::to_string(log.n_items()) + "×" + std::to_string(dim));
  }
  return t;
}

TrainRun train_model(const RunConfig& cfg, const Dataset& data, std::optional<Tensor> pretrained,
                     const ProgressLog& log) {
  const seqrec::SeqRecConfig sc = cfg.seqrec();
  if (sc.variant == seqrec::Variant::base) pretrained.reset();
  TrainRun run;
  run.model = std::make_unique<seqrec::Recommender>(sc, data.log, data.split, pretrained);
  run.result = run.model->train([&](const seqrec::Recommender::Progress& p) {
    say(log, "epoch " + std::to_string(p.epoch) + " loss " + fixed(p.loss));
  });
  run.checkpoint = checkpoint_for(cfg, data.log, "model");
  for (const auto& [name, value] : run.model->params().all()) {
    run.checkpoint.matrices.emplace(name, to_single_precision(value));
  }
  if (pretrained) run.checkpoint.matrices.emplace(kPretrainedMatrix, to_single_precision(*pretrained));
  return run;
}

RestoredModel restore_model(const Checkpoint& ckpt, const Dataset& data) {
  if (ckpt.kind != "model") throw ConfigError("expected a model checkpoint, got kind '" + ckpt.kind + "'");
  if (ckpt.vocabulary_hash != data.log.vocabulary_hash()) {
    throw FormatError("model checkpoint was written for a different item/user vocabulary");
  }
  RestoredModel out;
  out.config.merge_json(ckpt.config_json);
  out.config.validate();
  std::optional<Tensor> pretrained;
  ParameterStore store;
  for (const auto& [name, value] : ckpt.matrices) {
    if (name == kPretrainedMatrix) pretrained = value;
    else store.add(name, value);
  }
  out.model = std::make_unique<seqrec::Recommender>(out.config.seqrec(), data.log, data.split, pretrained);
  out.model->load_params(store);
  return out;
}

std::string loss_trace_tsv(std::span<const double> losses) {
  std::string out;
  for (std::size_t e = 0; e < losses.size(); ++e) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%zu\t%.9g\n", e + 1, losses[e]);
    out += buf;
  }
  return out;
}

std::string report_json(const eval::MetricsReport& report, const RunConfig& cfg, eval::Target target) {
  json j;
  j["target"] = target == eval::Target::test ? "test" : "validation";
  j["rows"] = json::array();
  for (const auto& r : report.rows) {
    j["rows"].push_back({{"metric", r.metric}, {"K", r.k}, {"NEG", r.negatives}, {"value", r.value},
                         {"n_users", r.n_users}});
  }
  j["config"] = json::parse(cfg.to_json());
  return j.dump(2) + "\n";
}

std::vector<AblationRow> run_ablation(const RunConfig& cfg, const Dataset& data, const ProgressLog& log) {
  cfg.validate();
  const eval::EvalConfig ec = cfg.evaluation();
  std::vector<AblationRow> rows;
  auto run_one = [&](const std::string& grid, const RunConfig& c, std::optional<Tensor> pretrained) {
    const std::string setting = grid == "module" ? c.seqrec().ablations.label() : c.tasks;
    say(log, "ablate " + grid + " " + setting);
    TrainRun run = train_model(c, data, std::move(pretrained));
    AblationRow row{grid, setting, run.result.loss_trace.back(), run.model->evaluate(ec)};
    say(log, "ablate " + grid + " " + setting + " done, final loss " + fixed(row.final_loss));
    rows.push_back(std::move(row));
  };

  std::optional<Tensor> pretrained;
  if (cfg.seqrec().variant != seqrec::Variant::base) pretrained = pretrain_items(cfg, data).checkpoint.matrices.at("items");
  const std::vector<std::function<void(RunConfig&)>> modules{
      [](RunConfig&) {},
      [](RunConfig& c) { c.no_groups = true; },
      [](RunConfig& c) { c.no_hierarchy = true; },
      [](RunConfig& c) { c.euclidean = true; },
      [](RunConfig& c) { c.hie_order = "quarter-year"; },
  };
  for (const auto& apply : modules) {
    RunConfig c = cfg;
    apply(c);
    run_one("module", c, pretrained);
  }

  for (const auto& subset : pretrain::TaskSet::parse(cfg.tasks).subsets()) {
    RunConfig c = cfg;
    c.tasks = subset.to_string();
    c.variant = cfg.variant == "init" ? "init" : "fuse";
    run_one("tasks", c, pretrain_items(c, data).checkpoint.matrices.at("items"));
  }
  return rows;
}

std::string ablation_tsv(std::span<const AblationRow> rows) {
  std::ostringstream out;
  out << "grid\tsetting\tfinal_loss";
  if (!rows.empty()) {
    for (const auto& r : rows.front().report.rows) out << '\t' << r.metric << '@' << r.k << "/NEG" << r.negatives;
  }
  out << '\n';
  for (const auto& row : rows) {
    out << row.grid << '\t' << row.setting << '\t' << fixed(row.final_loss);
    for (const auto& r : row.report.rows) out << '\t' << fixed(r.value);
    out << '\n';
  }
  return out.str();
}

}  // namespace h2sr
