#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "h2sr/interactions.hpp"

namespace h2sr {

struct Hyperedge {
  UserId owner = 0;
  std::vector<ItemId> items;  // distinct, in first-interaction order
};

/// Immutable hypergraph over item nodes. Node ids are kept sorted; incidence
/// lists each node's hyperedge indices in ascending order.
class Hypergraph {
 public:
  Hypergraph() = default;
  explicit Hypergraph(std::vector<Hyperedge> edges);

  const std::vector<ItemId>& nodes() const { return nodes_; }
  const std::vector<Hyperedge>& hyperedges() const { return edges_; }
  bool empty() const { return edges_.empty(); }
  bool contains(ItemId item) const;
  /// Position of `item` in nodes(); throws LookupError when absent.
  std::size_t node_position(ItemId item) const;

  std::span<const std::uint32_t> incident_edges(ItemId item) const;

  /// Items sharing at least one hyperedge with `item`, sorted, excluding `item`.
  std::vector<ItemId> neighbors(ItemId item) const;
  /// Neighbors of `item` together with the neighbors of each of them, sorted,
  /// excluding `item`.
  std::vector<ItemId> extended_neighborhood(ItemId item) const;

  /// Recomputes incidence from the hyperedges and compares with the stored index.
  bool incidence_consistent() const;

 private:
  std::vector<Hyperedge> edges_;
  std::vector<ItemId> nodes_;
  std::vector<std::uint32_t> incidence_offsets_;
  std::vector<std::uint32_t> incidence_;
};

/// One hypergraph per calendar bucket, one hyperedge per active user.
std::map<CalendarIndex, Hypergraph> build_calendar_hypergraphs(const InteractionLog& log,
                                                               Granularity granularity);

/// Most overlapping users kept in a group hypergraph.
inline constexpr std::size_t kGroupCap = 20;

/// Group hypergraph of `user` inside a month hypergraph: the user's own hyperedge
/// first, then up to `cap` overlapping users by descending overlap and ascending
/// id. `eligible`, when non-empty, restricts which other users may join.
/// Returns an empty hypergraph when the user has no hyperedge.
Hypergraph build_user_group_hypergraph(const Hypergraph& month_graph, UserId user,
                                       std::size_t cap = kGroupCap,
                                       std::span<const bool> eligible = {});
Hypergraph build_user_group_hypergraph(const InteractionLog& log, UserId user,
                                       const CalendarIndex& month,
                                       std::size_t cap = kGroupCap);

struct DegreeStats {
  std::map<ItemId, std::size_t> node_degree;
  std::map<std::size_t, std::size_t> degree_histogram;  // degree → node count
  std::map<std::size_t, std::size_t> size_histogram;    // hyperedge size → edge count
};

DegreeStats degree_stats(const Hypergraph& hg);

/// Extended neighbourhoods of every node in CSR form over node positions.
struct NeighborhoodIndex {
  std::vector<ItemId> nodes;
  std::vector<std::uint32_t> offsets;    // nodes.size() + 1 entries
  std::vector<std::uint32_t> neighbors;  // positions into `nodes`

  std::size_t size() const { return nodes.size(); }
  std::size_t pair_count() const { return neighbors.size(); }
};

NeighborhoodIndex build_neighborhood_index(const Hypergraph& hg);

}  // namespace h2sr
