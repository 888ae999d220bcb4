#include "h2sr/dataset.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <tuple>
#include <unistd.h>

#include "h2sr/errors.hpp"

namespace h2sr {

namespace fs = std::filesystem;

void atomic_write(const fs::path& path, const std::string& contents) {
  const fs::path tmp = path.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw ConfigError("failed writing " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw ConfigError("cannot move output into place at " + path.string());
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

bool all_digits(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) { return c >= '0' && c <= '9'; });
}

/// Numeric names sort numerically and before all other names.
bool name_less(const std::string& a, const std::string& b) {
  const bool da = all_digits(a), db = all_digits(b);
  if (da != db) return da;
  if (da) {
    auto strip = [](const std::string& s) {
      const auto k = s.find_first_not_of('0');
      return k == std::string::npos ? std::string("0") : s.substr(k);
    };
    const std::string sa = strip(a), sb = strip(b);
    if (sa.size() != sb.size()) return sa.size() < sb.size();
    if (sa != sb) return sa < sb;
  }
  return a < b;
}

struct RawRecord {
  std::string user, item;
  std::int64_t timestamp;
};

}  // namespace

InteractionLog parse_log(std::istream& in, std::size_t min_interactions, IngestStats* stats) {
  std::vector<RawRecord> raw;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos) {
      throw ParseError("line " + std::to_string(line_no) + ": expected 3 tab-separated fields");
    }
    RawRecord r{line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1), 0};
    if (r.user.empty() || r.item.empty()) {
      throw ParseError("line " + std::to_string(line_no) + ": empty user or item id");
    }
    const char* first = line.data() + t2 + 1;
    const char* last = line.data() + line.size();
    const auto [ptr, ec] = std::from_chars(first, last, r.timestamp);
    if (ec != std::errc() || ptr != last || first == last) {
      throw ParseError("line " + std::to_string(line_no) + ": bad timestamp '" + std::string(first, last) + "'");
    }
    raw.push_back(std::move(r));
  }

  // Iterative user filter; item presence is recomputed from the survivors.
  std::size_t dropped = 0;
  for (;;) {
    std::map<std::string, std::size_t> counts;
    for (const auto& r : raw) ++counts[r.user];
    const std::size_t before = raw.size();
    std::erase_if(raw, [&](const RawRecord& r) { return counts[r.user] < min_interactions; });
    for (const auto& [u, n] : counts) dropped += n < min_interactions ? 1 : 0;
    if (raw.size() == before) break;
  }
  if (raw.empty()) throw ConfigError("no users with at least " + std::to_string(min_interactions) + " interactions");

  std::vector<std::string> users, items;
  for (const auto& r : raw) {
    users.push_back(r.user);
    items.push_back(r.item);
  }
  for (auto* names : {&users, &items}) {
    std::sort(names->begin(), names->end(), name_less);
    names->erase(std::unique(names->begin(), names->end()), names->end());
  }
  auto id_of = [](const std::vector<std::string>& names, const std::string& s) {
    return static_cast<std::uint32_t>(std::lower_bound(names.begin(), names.end(), s, name_less) - names.begin());
  };
  std::vector<Interaction> records;
  records.reserve(raw.size());
  for (const auto& r : raw) records.push_back({id_of(users, r.user), id_of(items, r.item), r.timestamp});
  std::sort(records.begin(), records.end(), [](const Interaction& a, const Interaction& b) {
    return std::tie(a.user, a.timestamp, a.item) < std::tie(b.user, b.timestamp, b.item);
  });
  if (stats != nullptr) {
    *stats = IngestStats{line_no, users.size(), dropped, items.size(), records.size()};
  }
  const std::size_t nu = users.size(), ni = items.size();
  return InteractionLog(std::move(records), nu, ni, std::move(users), std::move(items));
}

InteractionLog ingest(const fs::path& path, std::size_t min_interactions, IngestStats* stats) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset " + path.string());
  return parse_log(in, min_interactions, stats);
}

std::string format_log(const InteractionLog& log) {
  std::string out;
  for (const auto& r : log.records()) {
    out += log.user_names()[r.user];
    out += '\t';
    out += log.item_names()[r.item];
    out += '\t';
    out += std::to_string(r.timestamp);
    out += '\n';
  }
  return out;
}

void write_log(const fs::path& path, const InteractionLog& log) { atomic_write(path, format_log(log)); }

void SyntheticSpec::validate() const {
  if (n_users == 0 || n_items == 0 || months == 0) throw ConfigError("synth: users, items and months must be positive");
  if (n_groups == 0) throw ConfigError("synth: at least one group is required");
  if (4 * season_pool_size > n_items) {
    throw ConfigError("synth: four seasonal pools of " + std::to_string(season_pool_size) + " exceed " +
                      std::to_string(n_items) + " items");
  }
  if (season_pool_size < n_groups) {
    throw ConfigError("synth: seasonal pools of " + std::to_string(season_pool_size) +
                      " items leave some group-season pools empty");
  }
  if (!(in_pool >= 0 && in_pool <= 1)) throw ConfigError("synth: in-pool probability must lie in [0, 1]");
  if (!(rate > 0)) throw ConfigError("synth: rate must be positive");
}

InteractionLog synthesize(const SyntheticSpec& spec, SyntheticTruth* truth) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);

  std::vector<std::uint32_t> order(spec.n_items);
  for (std::uint32_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);

  SyntheticTruth t;
  t.item_season.assign(spec.n_items, -1);
  t.item_group.assign(spec.n_items, 0);
  // pools[g][s]: items of group g in season s
  std::vector<std::array<std::vector<ItemId>, 4>> pools(spec.n_groups);
  for (std::size_t k = 0; k < order.size(); ++k) {
    const ItemId item = order[k];
    if (k < 4 * spec.season_pool_size) {
      const auto season = static_cast<int>(k % 4);
      const std::size_t group = (k / 4) % spec.n_groups;
      t.item_season[item] = season;
      t.item_group[item] = group;
      pools[group][season].push_back(item);
    } else {
      t.item_group[item] = k % spec.n_groups;
    }
  }
  std::uniform_int_distribution<std::size_t> pick_group(0, spec.n_groups - 1);
  t.user_group.resize(spec.n_users);
  for (auto& g : t.user_group) g = pick_group(rng);

  std::poisson_distribution<int> count(spec.rate);
  std::bernoulli_distribution from_pool(spec.in_pool);
  std::uniform_int_distribution<ItemId> any_item(0, static_cast<ItemId>(spec.n_items - 1));
  std::vector<Interaction> records;
  const CalendarIndex first = calendar_bucket(spec.start, Granularity::month);
  for (UserId u = 0; u < spec.n_users; ++u) {
    for (std::size_t m = 0; m < spec.months; ++m) {
      const int absolute = first.year * 12 + (first.subdivision - 1) + static_cast<int>(m);
      const CalendarIndex month{Granularity::month, absolute / 12, absolute % 12 + 1};
      const std::int64_t begin = month_start(month);
      const CalendarIndex next{Granularity::month, (absolute + 1) / 12, (absolute + 1) % 12 + 1};
      std::uniform_int_distribution<std::int64_t> when(begin, month_start(next) - 1);
      const auto& pool = pools[t.user_group[u]][(month.subdivision - 1) / 3];
      std::uniform_int_distribution<std::size_t> in_pool(0, pool.size() - 1);
      for (int k = count(rng); k > 0; --k) {
        const ItemId item = from_pool(rng) ? pool[in_pool(rng)] : any_item(rng);
        records.push_back({u, item, when(rng)});
      }
    }
  }
  if (truth != nullptr) *truth = std::move(t);
  return InteractionLog(std::move(records), spec.n_users, spec.n_items);
}

}  // namespace h2sr
