#include "h2sr/run_config.hpp"

#include <charconv>
#include <sstream>

#include <json.hpp>

#include "h2sr/checkpoint.hpp"
#include "h2sr/errors.hpp"

namespace h2sr {
namespace {

using json = nlohmann::ordered_json;

template <class Config, class Visitor>
void visit_fields(Config& c, Visitor&& f) {
  f("dim", c.dim);
  f("layers", c.layers);
  f("curvature", c.curvature);
  f("hhconv-epochs", c.hhconv_epochs);
  f("heads", c.heads);
  f("blocks", c.blocks);
  f("max-seq", c.max_seq);
  f("dropout", c.dropout);
  f("batch", c.batch);
  f("lr", c.lr);
  f("alpha", c.alpha);
  f("optimizer", c.optimizer);
  f("epochs", c.epochs);
  f("variant", c.variant);
  f("no-groups", c.no_groups);
  f("no-hierarchy", c.no_hierarchy);
  f("euclidean", c.euclidean);
  f("hie-order", c.hie_order);
  f("group-cap", c.group_cap);
  f("group-sampling", c.group_sampling);
  f("batch-groups", c.batch_groups);
  f("select-best-epoch", c.select_best_epoch);
  f("tau", c.tau);
  f("pretrain-negatives", c.pretrain_negatives);
  f("tasks", c.tasks);
  f("pretrain-epochs", c.pretrain_epochs);
  f("pretrain-blocks", c.pretrain_blocks);
  f("pretrain-batch", c.pretrain_batch);
  f("pretrain-lr", c.pretrain_lr);
  f("pretrain-optimizer", c.pretrain_optimizer);
  f("pretrain-pairs", c.pretrain_pairs);
  f("ks", c.ks);
  f("neg", c.neg);
  f("min-interactions", c.min_interactions);
  f("synth-users", c.synth_users);
  f("synth-items", c.synth_items);
  f("synth-months", c.synth_months);
  f("synth-groups", c.synth_groups);
  f("synth-pool", c.synth_pool);
  f("synth-in-pool", c.synth_in_pool);
  f("synth-rate", c.synth_rate);
  f("synth-start", c.synth_start);
  f("seed", c.seed);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw ConfigError("invalid value '" + text + "' for " + key);
  }
  return value;
}

template <class T>
void parse_into(const std::string& key, const std::string& text, T& field) {
  if constexpr (std::is_same_v<T, std::string>) {
    field = text;
  } else if constexpr (std::is_same_v<T, bool>) {
    if (text == "true" || text == "1") field = true;
    else if (text == "false" || text == "0") field = false;
    else throw ConfigError("invalid value '" + text + "' for " + key + " (expected true or false)");
  } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
    std::vector<std::size_t> out;
    std::stringstream in(text);
    std::string part;
    while (std::getline(in, part, ',')) out.push_back(parse_number<std::size_t>(key, part));
    if (out.empty()) throw ConfigError("empty list for " + key);
    field = std::move(out);
  } else {
    field = parse_number<T>(key, text);
  }
}

}  // namespace

std::vector<RunConfig::Key> RunConfig::keys() {
  std::vector<Key> out;
  RunConfig c;
  visit_fields(c, [&](const char* name, auto& field) {
    out.push_back({name, std::is_same_v<std::decay_t<decltype(field)>, bool>});
  });
  return out;
}

std::string RunConfig::to_json() const {
  json j;
  visit_fields(*this, [&](const char* name, const auto& field) { j[name] = field; });
  return j.dump(2);
}

void RunConfig::merge_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  std::size_t used = 0;
  visit_fields(*this, [&](const char* name, auto& field) {
    auto it = j.find(name);
    if (it == j.end()) return;
    ++used;
    using T = std::decay_t<decltype(field)>;
    const bool ok = std::is_same_v<T, bool>                       ? it->is_boolean()
                    : std::is_same_v<T, std::string>              ? it->is_string()
                    : std::is_same_v<T, std::vector<std::size_t>> ? it->is_array()
                    : std::is_floating_point_v<T>                 ? it->is_number()
                    : std::is_unsigned_v<T>                       ? it->is_number_unsigned()
                                                                  : it->is_number_integer();
    if (!ok) throw ConfigError(std::string("config key ") + name + " has the wrong type");
    try {
      it->get_to(field);
    } catch (const json::exception&) {
      throw ConfigError(std::string("config key ") + name + " has the wrong type");
    }
  });
  if (used != j.size()) {
    for (const auto& [key, value] : j.items()) {
      bool known = false;
      for (const auto& k : keys()) known = known || k.name == key;
      if (!known) throw ConfigError("unknown config key " + key);
    }
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  bool found = false;
  visit_fields(*this, [&](const char* name, auto& field) {
    if (key != name) return;
    found = true;
    parse_into(key, value, field);
  });
  if (!found) throw ConfigError("unknown config key " + key);
}

std::uint64_t RunConfig::hash() const {
  json j;
  visit_fields(*this, [&](const char* name, const auto& field) { j[name] = field; });
  return fnv1a(j.dump());
}

void RunConfig::validate() const {
  seqrec().validate();
  pretrain().validate();
  evaluation().validate();
  synthetic().validate();
  if (min_interactions < 3) throw ConfigError("min-interactions must be at least 3 for the leave-last-two split");
}

seqrec::SeqRecConfig RunConfig::seqrec() const {
  seqrec::SeqRecConfig c;
  c.dim = dim;
  c.hhconv.layers = layers;
  c.hhconv.curvature = curvature;
  c.hhconv.epochs = hhconv_epochs;
  c.hhconv.euclidean = euclidean;
  c.transformer = TransformerConfig{dim, heads, blocks, max_seq, dropout};
  c.epochs = epochs;
  c.batch = batch;
  c.lr = lr;
  c.alpha = alpha;
  c.optimizer = parse_optimizer(optimizer);
  c.variant = seqrec::parse_variant(variant);
  c.ablations.no_groups = no_groups;
  c.ablations.no_hierarchy = no_hierarchy;
  c.ablations.euclidean = euclidean;
  c.ablations.order = seqrec::parse_hie_order(hie_order);
  c.group_cap = group_cap;
  c.group_sampling = group_sampling;
  c.batch_groups = batch_groups;
  c.select_best_epoch = select_best_epoch;
  c.seed = seed;
  return c;
}

pretrain::PretrainConfig RunConfig::pretrain() const {
  pretrain::PretrainConfig c;
  c.contrastive.temperature = tau;
  c.contrastive.negatives = pretrain_negatives;
  c.encoder = TransformerConfig{dim, heads, pretrain_blocks, max_seq, dropout};
  c.tasks = pretrain::TaskSet::parse(tasks);
  c.epochs = pretrain_epochs;
  c.batch = pretrain_batch;
  c.lr = pretrain_lr;
  c.optimizer = parse_optimizer(pretrain_optimizer);
  c.pairs_per_epoch = pretrain_pairs;
  c.seed = seed;
  return c;
}

eval::EvalConfig RunConfig::evaluation() const {
  eval::EvalConfig c;
  c.ks = ks;
  c.negatives = neg;
  c.seed = seed;
  return c;
}

SyntheticSpec RunConfig::synthetic() const {
  SyntheticSpec s;
  s.n_users = synth_users;
  s.n_items = synth_items;
  s.months = synth_months;
  s.n_groups = synth_groups;
  s.season_pool_size = synth_pool;
  s.in_pool = synth_in_pool;
  s.rate = synth_rate;
  s.start = synth_start;
  s.seed = seed;
  return s;
}

}  // namespace h2sr
