#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "h2sr/interactions.hpp"

namespace h2sr {

/// Writes `contents` to a temporary sibling and renames it over `path`.
void atomic_write(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

struct IngestStats {
  std::size_t lines = 0;
  std::size_t kept_users = 0;
  std::size_t dropped_users = 0;
  std::size_t kept_items = 0;
  std::size_t kept_records = 0;
};

/// Parses "user<TAB>item<TAB>unix_timestamp" lines (blank lines ignored), drops
/// users with fewer than `min_interactions` records until stable and densifies
/// ids in name order (numeric names numerically). Records are ordered by
/// (user, timestamp, item) so the result does not depend on line order.
InteractionLog parse_log(std::istream& in, std::size_t min_interactions = 5, IngestStats* stats = nullptr);
InteractionLog ingest(const std::filesystem::path& path, std::size_t min_interactions = 5,
                      IngestStats* stats = nullptr);

/// Canonical TSV form: one "user<TAB>item<TAB>timestamp" line per record in log order.
std::string format_log(const InteractionLog& log);
void write_log(const std::filesystem::path& path, const InteractionLog& log);

/// Planted-structure generator. The first 4·season_pool_size items of a seeded
/// permutation form four seasonal pools; seasonal item k of that ordering
/// belongs to season k mod 4 and group (k / 4) mod n_groups. Each user joins
/// one group; in every month the user makes Poisson(rate) purchases, each drawn
/// from (own group ∩ the quarter's season) with probability `in_pool`, else
/// uniformly from the catalogue.
struct SyntheticSpec {
  std::size_t n_users = 500;
  std::size_t n_items = 300;
  std::size_t months = 24;
  std::size_t n_groups = 5;
  std::size_t season_pool_size = 75;
  double in_pool = 0.9;
  double rate = 1.0;
  std::int64_t start = 1514764800;  // 2018-01-01T00:00:00Z
  std::uint64_t seed = 7;

  /// Throws ConfigError for empty catalogues, impossible pools or bad probabilities.
  void validate() const;
};

struct SyntheticTruth {
  std::vector<std::size_t> user_group;
  std::vector<int> item_season;  // −1 outside every seasonal pool
  std::vector<std::size_t> item_group;
};

/// Generates a dense log; user and item names are decimal ids.
InteractionLog synthesize(const SyntheticSpec& spec, SyntheticTruth* truth = nullptr);

}  // namespace h2sr
