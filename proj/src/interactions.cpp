#include "h2sr/interactions.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <numeric>

#include "h2sr/errors.hpp"

namespace h2sr {

InteractionLog::InteractionLog(std::vector<Interaction> records, std::size_t n_users,
                               std::size_t n_items, std::vector<std::string> user_names,
                               std::vector<std::string> item_names)
    : n_users_(n_users), n_items_(n_items),
      user_names_(std::move(user_names)), item_names_(std::move(item_names)) {
  for (const auto& r : records) {
    if (r.user >= n_users || r.item >= n_items) {
      throw ContractError("interaction ids must be dense: user " + std::to_string(r.user) +
                          ", item " + std::to_string(r.item));
    }
  }
  if (user_names_.empty()) {
    user_names_.resize(n_users);
    for (std::size_t u = 0; u < n_users; ++u) user_names_[u] = std::to_string(u);
  }
  if (item_names_.empty()) {
    item_names_.resize(n_items);
    for (std::size_t i = 0; i < n_items; ++i) item_names_[i] = std::to_string(i);
  }
  if (user_names_.size() != n_users || item_names_.size() != n_items) {
    throw ContractError("vocabulary sizes do not match id ranges");
  }
  std::stable_sort(records.begin(), records.end(), [](const Interaction& a, const Interaction& b) {
    if (a.user != b.user) return a.user < b.user;
    return a.timestamp < b.timestamp;
  });
  records_ = std::move(records);
  user_offsets_.assign(n_users + 1, 0);
  for (const auto& r : records_) ++user_offsets_[r.user + 1];
  std::partial_sum(user_offsets_.begin(), user_offsets_.end(), user_offsets_.begin());
}

std::span<const Interaction> InteractionLog::user_records(UserId u) const {
  if (u >= n_users_) throw LookupError("unknown user id " + std::to_string(u));
  return std::span<const Interaction>(records_).subspan(user_offsets_[u],
                                                        user_offsets_[u + 1] - user_offsets_[u]);
}

std::uint64_t InteractionLog::vocabulary_hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const std::string& s) {
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 1099511628211ULL;
    }
    h ^= 0xff;
    h *= 1099511628211ULL;
  };
  for (const auto& s : user_names_) mix(s);
  mix("|items|");
  for (const auto& s : item_names_) mix(s);
  return h;
}

const char* to_string(Granularity g) {
  switch (g) {
    case Granularity::month: return "month";
    case Granularity::quarter: return "quarter";
    case Granularity::year: return "year";
  }
  return "?";
}

std::string CalendarIndex::label() const {
  char buf[32];
  switch (granularity) {
    case Granularity::month: std::snprintf(buf, sizeof buf, "%04d-%02d", year, subdivision); break;
    case Granularity::quarter: std::snprintf(buf, sizeof buf, "%04d-Q%d", year, subdivision); break;
    case Granularity::year: std::snprintf(buf, sizeof buf, "%04d", year); break;
  }
  return buf;
}

CalendarIndex calendar_bucket(std::int64_t timestamp, Granularity g) {
  using namespace std::chrono;
  const sys_seconds t{seconds{timestamp}};
  const year_month_day ymd{floor<days>(t)};
  const CalendarIndex month{Granularity::month, static_cast<int>(ymd.year()),
                            static_cast<int>(static_cast<unsigned>(ymd.month()))};
  return coarsen(month, g);
}

CalendarIndex coarsen(const CalendarIndex& bucket, Granularity g) {
  if (bucket.granularity == g) return bucket;
  if (bucket.granularity != Granularity::month && g == Granularity::month) {
    throw ContractError("cannot refine a " + std::string(to_string(bucket.granularity)) +
                        " bucket to months");
  }
  if (g == Granularity::year) return {Granularity::year, bucket.year, 1};
  if (bucket.granularity == Granularity::year) {
    throw ContractError("cannot refine a year bucket to quarters");
  }
  return {Granularity::quarter, bucket.year, (bucket.subdivision + 2) / 3};
}

std::int64_t month_start(const CalendarIndex& month) {
  using namespace std::chrono;
  if (month.granularity != Granularity::month) throw ContractError("month_start needs a month bucket");
  const sys_days d{year{month.year} / static_cast<unsigned>(month.subdivision) / 1};
  return duration_cast<seconds>(d.time_since_epoch()).count();
}

}  // namespace h2sr
