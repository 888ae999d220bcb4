#include "h2sr/hypergraph.hpp"

#include <algorithm>
#include <numeric>
#include <string>
#include <unordered_map>

#include "h2sr/errors.hpp"

namespace h2sr {
namespace {

void build_incidence(const std::vector<Hyperedge>& edges, const std::vector<ItemId>& nodes,
                     std::vector<std::uint32_t>& offsets, std::vector<std::uint32_t>& incidence) {
  offsets.assign(nodes.size() + 1, 0);
  auto pos = [&nodes](ItemId i) {
    return static_cast<std::size_t>(std::lower_bound(nodes.begin(), nodes.end(), i) - nodes.begin());
  };
  for (const auto& e : edges) {
    for (ItemId i : e.items) ++offsets[pos(i) + 1];
  }
  std::partial_sum(offsets.begin(), offsets.end(), offsets.begin());
  incidence.assign(offsets.back(), 0);
  std::vector<std::uint32_t> fill(offsets.begin(), offsets.end() - 1);
  for (std::uint32_t e = 0; e < edges.size(); ++e) {
    for (ItemId i : edges[e].items) incidence[fill[pos(i)]++] = e;
  }
}

// Positions (into hg.nodes()) of the extended neighbourhood of the node at
// position p. `edge_mark` and `node_mark` are scratch stamps sized to the graph.
void extended_positions(const Hypergraph& hg, std::size_t p, std::vector<std::uint32_t>& edge_mark,
                        std::vector<std::uint32_t>& node_mark, std::uint32_t stamp,
                        std::vector<std::uint32_t>& out) {
  const auto& edges = hg.hyperedges();
  const auto& nodes = hg.nodes();
  out.clear();
  const ItemId self = nodes[p];
  std::vector<ItemId> first_ring;
  for (std::uint32_t e : hg.incident_edges(self)) {
    for (ItemId j : edges[e].items) {
      const std::size_t q = hg.node_position(j);
      if (node_mark[q] != stamp) {
        node_mark[q] = stamp;
        first_ring.push_back(j);
      }
    }
  }
  std::vector<std::uint32_t> second_edges;
  for (ItemId j : first_ring) {
    for (std::uint32_t e : hg.incident_edges(j)) {
      if (edge_mark[e] != stamp) {
        edge_mark[e] = stamp;
        second_edges.push_back(e);
      }
    }
  }
  for (std::uint32_t e : second_edges) {
    for (ItemId k : edges[e].items) node_mark[hg.node_position(k)] = stamp;
  }
  for (std::size_t q = 0; q < nodes.size(); ++q) {
    if (q != p && node_mark[q] == stamp) out.push_back(static_cast<std::uint32_t>(q));
  }
}

}  // namespace

Hypergraph::Hypergraph(std::vector<Hyperedge> edges) : edges_(std::move(edges)) {
  for (const auto& e : edges_) {
    if (e.items.empty()) throw ContractError("hyperedge of user " + std::to_string(e.owner) + " is empty");
    std::vector<ItemId> sorted = e.items;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw ContractError("hyperedge of user " + std::to_string(e.owner) + " repeats an item");
    }
    nodes_.insert(nodes_.end(), sorted.begin(), sorted.end());
  }
  std::sort(nodes_.begin(), nodes_.end());
  nodes_.erase(std::unique(nodes_.begin(), nodes_.end()), nodes_.end());
  build_incidence(edges_, nodes_, incidence_offsets_, incidence_);
}

bool Hypergraph::contains(ItemId item) const {
  return std::binary_search(nodes_.begin(), nodes_.end(), item);
}

std::size_t Hypergraph::node_position(ItemId item) const {
  auto it = std::lower_bound(nodes_.begin(), nodes_.end(), item);
  if (it == nodes_.end() || *it != item) {
    throw LookupError("item " + std::to_string(item) + " is not a node of the hypergraph");
  }
  return static_cast<std::size_t>(it - nodes_.begin());
}

std::span<const std::uint32_t> Hypergraph::incident_edges(ItemId item) const {
  const std::size_t p = node_position(item);
  return std::span<const std::uint32_t>(incidence_).subspan(
      incidence_offsets_[p], incidence_offsets_[p + 1] - incidence_offsets_[p]);
}

std::vector<ItemId> Hypergraph::neighbors(ItemId item) const {
  std::vector<ItemId> out;
  for (std::uint32_t e : incident_edges(item)) {
    for (ItemId j : edges_[e].items) {
      if (j != item) out.push_back(j);
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<ItemId> Hypergraph::extended_neighborhood(ItemId item) const {
  const std::size_t p = node_position(item);
  std::vector<std::uint32_t> edge_mark(edges_.size(), 0), node_mark(nodes_.size(), 0), pos;
  extended_positions(*this, p, edge_mark, node_mark, 1, pos);
  std::vector<ItemId> out;
  out.reserve(pos.size());
  for (std::uint32_t q : pos) out.push_back(nodes_[q]);
  return out;
}

bool Hypergraph::incidence_consistent() const {
  for (const auto& e : edges_) {
    for (ItemId i : e.items) {
      if (!contains(i)) return false;
    }
  }
  std::vector<std::uint32_t> offsets, incidence;
  build_incidence(edges_, nodes_, offsets, incidence);
  return offsets == incidence_offsets_ && incidence == incidence_;
}

std::map<CalendarIndex, Hypergraph> build_calendar_hypergraphs(const InteractionLog& log,
                                                               Granularity granularity) {
  std::map<CalendarIndex, std::vector<Hyperedge>> buckets;
  for (UserId u = 0; u < log.n_users(); ++u) {
    // Records are chronological per user, so buckets appear in order and each
    // user's current hyperedge is always the last one in its bucket.
    std::map<CalendarIndex, std::vector<ItemId>> mine;
    for (const auto& r : log.user_records(u)) {
      auto& items = mine[calendar_bucket(r.timestamp, granularity)];
      if (std::find(items.begin(), items.end(), r.item) == items.end()) items.push_back(r.item);
    }
    for (auto& [bucket, items] : mine) buckets[bucket].push_back(Hyperedge{u, std::move(items)});
  }
  std::map<CalendarIndex, Hypergraph> out;
  for (auto& [bucket, edges] : buckets) out.emplace(bucket, Hypergraph(std::move(edges)));
  return out;
}

Hypergraph build_user_group_hypergraph(const Hypergraph& month_graph, UserId user, std::size_t cap,
                                       std::span<const bool> eligible) {
  const auto& edges = month_graph.hyperedges();
  auto own = std::find_if(edges.begin(), edges.end(), [user](const Hyperedge& e) { return e.owner == user; });
  if (own == edges.end()) return Hypergraph{};

  std::unordered_map<std::uint32_t, std::size_t> overlap;
  for (ItemId i : own->items) {
    for (std::uint32_t e : month_graph.incident_edges(i)) {
      const UserId owner = edges[e].owner;
      if (owner == user) continue;
      if (!eligible.empty() && (owner >= eligible.size() || !eligible[owner])) continue;
      ++overlap[e];
    }
  }
  std::vector<std::pair<std::uint32_t, std::size_t>> ranked(overlap.begin(), overlap.end());
  std::sort(ranked.begin(), ranked.end(), [&edges](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return edges[a.first].owner < edges[b.first].owner;
  });
  if (ranked.size() > cap) ranked.resize(cap);

  std::vector<Hyperedge> group{*own};
  for (const auto& [e, count] : ranked) group.push_back(edges[e]);
  return Hypergraph(std::move(group));
}

Hypergraph build_user_group_hypergraph(const InteractionLog& log, UserId user,
                                       const CalendarIndex& month, std::size_t cap) {
  if (month.granularity != Granularity::month) throw ContractError("group hypergraphs need a month bucket");
  std::vector<Hyperedge> edges;
  for (UserId u = 0; u < log.n_users(); ++u) {
    std::vector<ItemId> items;
    for (const auto& r : log.user_records(u)) {
      if (calendar_bucket(r.timestamp, Granularity::month) != month) continue;
      if (std::find(items.begin(), items.end(), r.item) == items.end()) items.push_back(r.item);
    }
    if (!items.empty()) edges.push_back(Hyperedge{u, std::move(items)});
  }
  return build_user_group_hypergraph(Hypergraph(std::move(edges)), user, cap);
}

DegreeStats degree_stats(const Hypergraph& hg) {
  DegreeStats s;
  for (ItemId i : hg.nodes()) {
    const std::size_t d = hg.incident_edges(i).size();
    s.node_degree[i] = d;
    ++s.degree_histogram[d];
  }
  for (const auto& e : hg.hyperedges()) ++s.size_histogram[e.items.size()];
  return s;
}

NeighborhoodIndex build_neighborhood_index(const Hypergraph& hg) {
  NeighborhoodIndex idx;
  idx.nodes = hg.nodes();
  idx.offsets.assign(1, 0);
  std::vector<std::uint32_t> edge_mark(hg.hyperedges().size(), 0), node_mark(idx.nodes.size(), 0), pos;
  for (std::size_t p = 0; p < idx.nodes.size(); ++p) {
    extended_positions(hg, p, edge_mark, node_mark, static_cast<std::uint32_t>(p + 1), pos);
    idx.neighbors.insert(idx.neighbors.end(), pos.begin(), pos.end());
    idx.offsets.push_back(static_cast<std::uint32_t>(idx.neighbors.size()));
  }
  return idx;
}

}  // namespace h2sr
