#pragma once

#include <compare>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace h2sr {

using UserId = std::uint32_t;
using ItemId = std::uint32_t;

struct Interaction {
  UserId user = 0;
  ItemId item = 0;
  std::int64_t timestamp = 0;  // UTC seconds

  bool operator==(const Interaction&) const = default;
};

/// Interaction records with dense user/item ids, grouped by user and ordered
/// chronologically inside each user (ties keep their input order).
class InteractionLog {
 public:
  InteractionLog() = default;
  /// Names default to the decimal id when empty.
  InteractionLog(std::vector<Interaction> records, std::size_t n_users, std::size_t n_items,
                 std::vector<std::string> user_names = {},
                 std::vector<std::string> item_names = {});

  const std::vector<Interaction>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  std::size_t n_users() const { return n_users_; }
  std::size_t n_items() const { return n_items_; }

  std::span<const Interaction> user_records(UserId u) const;

  const std::vector<std::string>& user_names() const { return user_names_; }
  const std::vector<std::string>& item_names() const { return item_names_; }

  /// FNV-1a hash over the ordered user and item vocabularies.
  std::uint64_t vocabulary_hash() const;

 private:
  std::vector<Interaction> records_;
  std::vector<std::size_t> user_offsets_;
  std::size_t n_users_ = 0;
  std::size_t n_items_ = 0;
  std::vector<std::string> user_names_;
  std::vector<std::string> item_names_;
};

enum class Granularity { month, quarter, year };

const char* to_string(Granularity g);

/// Calendar bucket: (year, month 1–12), (year, quarter 1–4) or (year, 1).
struct CalendarIndex {
  Granularity granularity = Granularity::month;
  int year = 1970;
  int subdivision = 1;

  auto operator<=>(const CalendarIndex&) const = default;
  std::string label() const;
};

/// Proleptic-Gregorian UTC bucket containing `timestamp`.
CalendarIndex calendar_bucket(std::int64_t timestamp, Granularity g);
/// Coarser bucket containing `bucket` (e.g. month 2018-05 → quarter 2018-Q2).
CalendarIndex coarsen(const CalendarIndex& bucket, Granularity g);
/// UTC seconds at the start of a month bucket.
std::int64_t month_start(const CalendarIndex& month);

}  // namespace h2sr
