#pragma once

// Aggregation trees toward the sink and their per-round traffic/energy.
//
// Traffic rule per uplink of node i, with s(i) the number of samples in the
// subtree rooted at i and k the budget of i's tree:
//   NON_AGG   s(i) raw items
//   PLAIN_CS  k coded items
//   HYBRID_CS min(s(i), k): raw forwarding until k items meet, then coding.

#include "deca/errors.hpp"
#include "deca/network.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <queue>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace deca::routing {

using network::NetworkGraph;

enum class Scheme { NonAggregation, PlainCs, HybridCs };

inline std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::NonAggregation: return "NON_AGG";
    case Scheme::PlainCs: return "PLAIN_CS";
    case Scheme::HybridCs: return "HYBRID_CS";
  }
  return "?";
}

inline Scheme scheme_from_string(const std::string& s) {
  if (s == "NON_AGG") return Scheme::NonAggregation;
  if (s == "PLAIN_CS") return Scheme::PlainCs;
  if (s == "HYBRID_CS") return Scheme::HybridCs;
  throw std::invalid_argument("unknown aggregation scheme '" + s + "'");
}

inline constexpr std::ptrdiff_t kNoParent = -1;

/// One aggregation tree. For a single-tree forest the root is the sink
/// itself; in a partitioned forest each root is a one-hop neighbor of the sink.
struct Tree {
  std::size_t root = 0;
  std::vector<std::size_t> members;  // sorted, sink excluded
  std::size_t budget = 0;            // k_i
};

struct AggregationForest {
  Scheme scheme = Scheme::NonAggregation;
  std::size_t sink = 0;
  std::vector<std::ptrdiff_t> parent;  // kNoParent at the sink
  std::vector<Tree> trees;

  std::size_t size() const { return parent.size(); }

  /// Tree index of every node; the sink maps to trees.size().
  std::vector<std::size_t> tree_index() const {
    std::vector<std::size_t> out(size(), trees.size());
    for (std::size_t t = 0; t < trees.size(); ++t)
      for (auto m : trees[t].members) out.at(m) = t;
    return out;
  }
};

struct TrafficReport {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> per_link_items;  // (child, parent)
  std::size_t total_items = 0;
  double total_energy = 0.0;

  std::size_t items(std::size_t child, std::size_t parent) const { return per_link_items.at({child, parent}); }
};

struct ShortestPaths {
  std::vector<double> dist;
  std::vector<std::ptrdiff_t> parent;
};

/// Multi-source Dijkstra under link costs. Among equal-cost predecessors the
/// lowest id wins.
inline ShortestPaths dijkstra(const NetworkGraph& g, const std::vector<std::size_t>& sources) {
  const std::size_t n = g.size();
  ShortestPaths sp{std::vector<double>(n, std::numeric_limits<double>::infinity()),
                   std::vector<std::ptrdiff_t>(n, kNoParent)};
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  for (auto s : sources) {
    sp.dist.at(s) = 0.0;
    heap.push({0.0, s});
  }
  std::vector<char> done(n, 0);
  while (!heap.empty()) {
    const auto [d, u] = heap.top();
    heap.pop();
    if (done[u]) continue;
    done[u] = 1;
    for (const auto& nb : g.neighbors(u)) {
      const double nd = d + nb.cost;
      const auto v = nb.node;
      if (done[v]) continue;
      if (nd < sp.dist[v] || (nd == sp.dist[v] && static_cast<std::ptrdiff_t>(u) < sp.parent[v])) {
        sp.dist[v] = nd;
        sp.parent[v] = static_cast<std::ptrdiff_t>(u);
        heap.push({nd, v});
      }
    }
  }
  return sp;
}

namespace detail {

inline void require_node(const NetworkGraph& g, std::size_t node, const char* what) {
  if (node >= g.size()) throw std::invalid_argument(std::string(what) + ": node id out of range");
}

inline std::vector<std::size_t> all_but(std::size_t n, std::size_t excluded) {
  std::vector<std::size_t> out;
  out.reserve(n ? n - 1 : 0);
  for (std::size_t i = 0; i < n; ++i)
    if (i != excluded) out.push_back(i);
  return out;
}

inline AggregationForest single_tree(Scheme scheme, std::size_t sink, std::vector<std::ptrdiff_t> parent,
                                     std::size_t budget) {
  AggregationForest f;
  f.scheme = scheme;
  f.sink = sink;
  f.trees.push_back({sink, all_but(parent.size(), sink), budget});
  f.parent = std::move(parent);
  return f;
}

}  // namespace detail

/// Children lists plus a parent-before-child ordering; throws if the parent
/// array is not a tree rooted at the sink.
struct TreeOrder {
  std::vector<std::vector<std::size_t>> children;
  std::vector<std::size_t> top_down;
};

inline TreeOrder tree_order(const AggregationForest& f) {
  const std::size_t n = f.size();
  if (f.sink >= n) throw std::invalid_argument("forest: sink out of range");
  TreeOrder o{std::vector<std::vector<std::size_t>>(n), {}};
  for (std::size_t i = 0; i < n; ++i) {
    if (i == f.sink) {
      if (f.parent[i] != kNoParent) throw std::invalid_argument("forest: sink has a parent");
      continue;
    }
    const auto p = f.parent[i];
    if (p < 0 || static_cast<std::size_t>(p) >= n) throw std::invalid_argument("forest: dangling parent");
    o.children[static_cast<std::size_t>(p)].push_back(i);
  }
  o.top_down.reserve(n);
  o.top_down.push_back(f.sink);
  for (std::size_t head = 0; head < o.top_down.size(); ++head)
    for (auto c : o.children[o.top_down[head]]) o.top_down.push_back(c);
  if (o.top_down.size() != n) throw std::invalid_argument("forest: parent array contains a cycle");
  return o;
}

/// Number of samples in each node's subtree (the node itself included).
inline std::vector<std::size_t> subtree_sizes(const AggregationForest& f) {
  const auto order = tree_order(f);
  std::vector<std::size_t> size(f.size(), 1);
  for (auto it = order.top_down.rbegin(); it != order.top_down.rend(); ++it)
    if (*it != f.sink) size[static_cast<std::size_t>(f.parent[*it])] += size[*it];
  return size;
}

/// Shortest-path tree rooted at the sink (NON_AGG).
inline AggregationForest build_spt(const NetworkGraph& g, std::size_t sink) {
  detail::require_node(g, sink, "build_spt");
  auto sp = dijkstra(g, {sink});
  for (double d : sp.dist)
    if (!std::isfinite(d)) throw connectivity_error(g.component_count());
  return detail::single_tree(Scheme::NonAggregation, sink, std::move(sp.parent), 0);
}

/// Same topology, every link coding k items.
inline AggregationForest as_plain_cs(AggregationForest f, std::size_t k) {
  f.scheme = Scheme::PlainCs;
  for (auto& t : f.trees) t.budget = k;
  return f;
}

namespace detail {

/// Greedy core growth. A connected core containing the sink sends k coded
/// items per link; every other node forwards raw samples along its cheapest
/// path into the core. The estimated per-round energy of a core C is
///   k * (sum of core attachment link costs) + sum_{i not in C} dist(i, C),
/// and each step adds the core neighbor with the largest decrease of that
/// estimate (lowest id on ties) until no neighbor decreases it.
inline std::vector<std::ptrdiff_t> greedy_core_parents(const NetworkGraph& g, std::size_t sink, std::size_t k) {
  const std::size_t n = g.size();

  constexpr double inf = std::numeric_limits<double>::infinity();
  const double kd = static_cast<double>(k);
  std::vector<char> core(n, 0);
  std::vector<std::ptrdiff_t> parent(n, kNoParent);
  std::vector<double> to_core = dijkstra(g, {sink}).dist;  // dist(i, C)
  for (double d : to_core)
    if (!std::isfinite(d)) throw connectivity_error(g.component_count());

  std::vector<double> attach_cost(n, inf);
  std::vector<std::ptrdiff_t> attach_to(n, kNoParent);
  auto admit = [&](std::size_t x) {
    core[x] = 1;
    for (const auto& nb : g.neighbors(x)) {
      if (core[nb.node]) continue;
      if (nb.cost < attach_cost[nb.node] ||
          (nb.cost == attach_cost[nb.node] && static_cast<std::ptrdiff_t>(x) < attach_to[nb.node])) {
        attach_cost[nb.node] = nb.cost;
        attach_to[nb.node] = static_cast<std::ptrdiff_t>(x);
      }
    }
  };

  // Dijkstra from j restricted to nodes it would bring strictly closer to
  // the core; anything reached through a pruned node cannot improve either.
  using Item = std::pair<double, std::size_t>;
  std::vector<double> scratch(n, inf);
  std::vector<std::size_t> touched;
  auto explore = [&](std::size_t j, const std::function<void(std::size_t, double)>& visit) {
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    scratch[j] = 0.0;
    touched.push_back(j);
    heap.push({0.0, j});
    while (!heap.empty()) {
      const auto [d, u] = heap.top();
      heap.pop();
      if (d > scratch[u]) continue;
      visit(u, d);
      for (const auto& nb : g.neighbors(u)) {
        const double nd = d + nb.cost;
        if (nd >= to_core[nb.node] || nd >= scratch[nb.node]) continue;
        if (scratch[nb.node] == inf) touched.push_back(nb.node);
        scratch[nb.node] = nd;
        heap.push({nd, nb.node});
      }
    }
    for (auto t : touched) scratch[t] = inf;
    touched.clear();
  };

  admit(sink);
  while (true) {
    double best_gain = 1e-9;
    std::ptrdiff_t best = kNoParent;
    for (std::size_t j = 0; j < n; ++j) {
      if (core[j] || attach_to[j] == kNoParent) continue;
      double gain = -kd * attach_cost[j];
      explore(j, [&](std::size_t i, double d) { gain += to_core[i] - d; });
      if (gain > best_gain) {
        best_gain = gain;
        best = static_cast<std::ptrdiff_t>(j);
      }
    }
    if (best == kNoParent) break;
    const auto b = static_cast<std::size_t>(best);
    parent[b] = attach_to[b];
    explore(b, [&](std::size_t i, double d) { to_core[i] = d; });
    admit(b);
  }

  std::vector<std::size_t> core_nodes;
  for (std::size_t i = 0; i < n; ++i)
    if (core[i]) core_nodes.push_back(i);
  const auto raw = dijkstra(g, core_nodes);
  for (std::size_t i = 0; i < n; ++i)
    if (!core[i]) parent[i] = raw.parent[i];
  return parent;
}

inline double hybrid_energy(const NetworkGraph& g, std::size_t sink, std::size_t k,
                            const std::vector<std::ptrdiff_t>& parent, const std::vector<std::size_t>& size) {
  double e = 0.0;
  for (std::size_t i = 0; i < parent.size(); ++i)
    if (i != sink) e += static_cast<double>(std::min(size[i], k)) * g.cost(i, static_cast<std::size_t>(parent[i]));
  return e;
}

/// Local search under the exact hybrid cost: repeatedly hands a node, with
/// its whole subtree, to the neighbor that lowers the per-round energy most,
/// until no such move exists. Returns the final energy.
inline double refine_hybrid_parents(const NetworkGraph& g, std::size_t sink, std::size_t k,
                                    std::vector<std::ptrdiff_t>& parent) {
  AggregationForest view;
  view.sink = sink;
  view.parent = parent;
  std::vector<std::size_t> size = subtree_sizes(view);
  const std::size_t n = parent.size();
  auto load = [k](std::size_t s) { return static_cast<double>(std::min(s, k)); };
  auto up = [&](std::size_t a) { return static_cast<std::size_t>(parent[a]); };
  std::vector<char> on_old_path(n, 0);

  bool improved = true;
  while (improved) {
    improved = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (i == sink) continue;
      const std::size_t p = up(i);
      const std::size_t si = size[i];
      double removal = 0.0;
      for (std::size_t a = p;; a = up(a)) {
        on_old_path[a] = 1;
        if (a == sink) break;
        if (size[a] - si < k) removal += g.cost(a, up(a)) * (load(size[a] - si) - load(size[a]));
      }
      const double own = load(si);
      double best = -1e-9;
      std::size_t best_q = p;
      for (const auto& nb : g.neighbors(i)) {
        const std::size_t q = nb.node;
        if (q == p) continue;
        double addition = 0.0;
        bool descendant = false;
        for (std::size_t a = q; a != sink; a = up(a)) {
          if (a == i) {
            descendant = true;
            break;
          }
          const std::size_t before = on_old_path[a] ? size[a] - si : size[a];
          if (before < k) addition += g.cost(a, up(a)) * (load(before + si) - load(before));
        }
        if (descendant) continue;
        const double delta = removal + addition + own * (nb.cost - g.cost(i, p));
        if (delta < best) {
          best = delta;
          best_q = q;
        }
      }
      for (std::size_t a = p;; a = up(a)) {
        on_old_path[a] = 0;
        if (a == sink) break;
      }
      if (best_q == p) continue;
      for (std::size_t a = p;; a = up(a)) {
        size[a] -= si;
        if (a == sink) break;
      }
      parent[i] = static_cast<std::ptrdiff_t>(best_q);
      for (std::size_t a = best_q;; a = up(a)) {
        size[a] += si;
        if (a == sink) break;
      }
      improved = true;
    }
  }
  return hybrid_energy(g, sink, k, parent, size);
}

}  // namespace detail

/// Hybrid-CS tree: the greedy core tree and the shortest-path tree are both
/// refined by local search under the exact per-link rule min(s(i), k); the
/// cheaper result wins (the greedy one on ties).
inline AggregationForest build_hybrid_tree(const NetworkGraph& g, std::size_t sink, std::size_t k) {
  detail::require_node(g, sink, "build_hybrid_tree");
  const std::size_t n = g.size();
  if (k < 1 || k > n) throw std::invalid_argument("build_hybrid_tree: k must lie in [1, n]");
  auto greedy = detail::greedy_core_parents(g, sink, k);
  auto spt = build_spt(g, sink).parent;
  const double e_greedy = detail::refine_hybrid_parents(g, sink, k, greedy);
  const double e_spt = detail::refine_hybrid_parents(g, sink, k, spt);
  return detail::single_tree(Scheme::HybridCs, sink, e_spt < e_greedy ? std::move(spt) : std::move(greedy), k);
}

namespace detail {

/// Sink neighbors closest in bearing to num_trees evenly spaced directions.
inline std::vector<std::size_t> spread_roots(const NetworkGraph& g, std::size_t sink, std::size_t num_trees) {
  const auto& nbs = g.neighbors(sink);
  std::vector<char> used(nbs.size(), 0);
  std::vector<std::size_t> roots;
  const auto& c = g.position(sink);
  for (std::size_t t = 0; t < num_trees; ++t) {
    const double target = 2.0 * std::numbers::pi * static_cast<double>(t) / static_cast<double>(num_trees);
    double best = std::numeric_limits<double>::infinity();
    std::size_t pick = nbs.size();
    for (std::size_t q = 0; q < nbs.size(); ++q) {
      if (used[q]) continue;
      const auto& p = g.position(nbs[q].node);
      double diff = std::abs(std::atan2(p.y() - c.y(), p.x() - c.x()) + std::numbers::pi - target);
      diff = std::min(diff, 2.0 * std::numbers::pi - diff);
      if (diff < best) {
        best = diff;
        pick = q;
      }
    }
    used[pick] = 1;
    roots.push_back(nbs[pick].node);
  }
  return roots;
}

/// Moves boundary nodes from larger regions into adjacent regions at least
/// two nodes smaller, as long as the donor stays connected to its root.
/// Every move lowers the sum of squared sizes, so this terminates.
inline std::vector<std::vector<std::size_t>> balance_regions(const NetworkGraph& g,
                                                             const std::vector<std::size_t>& roots,
                                                             std::vector<std::size_t> owner,
                                                             std::vector<std::vector<std::size_t>> regions) {
  const std::size_t n = g.size();
  const std::size_t t_count = roots.size();
  std::vector<std::size_t> size(t_count);
  for (std::size_t t = 0; t < t_count; ++t) size[t] = regions[t].size();

  std::vector<char> seen(n, 0);
  std::vector<std::size_t> stack;
  auto connected_without = [&](std::size_t t, std::size_t removed) {
    std::fill(seen.begin(), seen.end(), 0);
    seen[removed] = 1;
    seen[roots[t]] = 1;
    stack.assign(1, roots[t]);
    std::size_t reached = 1;
    while (!stack.empty()) {
      const auto u = stack.back();
      stack.pop_back();
      for (const auto& nb : g.neighbors(u))
        if (!seen[nb.node] && owner[nb.node] == t) {
          seen[nb.node] = 1;
          ++reached;
          stack.push_back(nb.node);
        }
    }
    return reached + 1 == size[t];
  };

  struct Candidate {
    std::size_t gap, contacts, node, target;
  };
  while (true) {
    std::vector<std::size_t> donors(t_count);
    std::iota(donors.begin(), donors.end(), std::size_t{0});
    std::stable_sort(donors.begin(), donors.end(), [&](auto a, auto b) { return size[a] > size[b]; });
    bool moved = false;
    for (auto donor : donors) {
      std::vector<Candidate> cands;
      for (std::size_t v = 0; v < n; ++v) {
        if (owner[v] != donor || v == roots[donor]) continue;
        std::vector<std::size_t> contacts(t_count, 0);
        for (const auto& nb : g.neighbors(v))
          if (owner[nb.node] < t_count && owner[nb.node] != donor) ++contacts[owner[nb.node]];
        for (std::size_t r = 0; r < t_count; ++r)
          if (contacts[r] && size[r] + 1 < size[donor]) cands.push_back({size[donor] - size[r], contacts[r], v, r});
      }
      std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
        if (a.gap != b.gap) return a.gap > b.gap;
        if (a.contacts != b.contacts) return a.contacts > b.contacts;
        if (a.node != b.node) return a.node < b.node;
        return a.target < b.target;
      });
      for (const auto& c : cands) {
        if (!connected_without(donor, c.node)) continue;
        owner[c.node] = c.target;
        --size[donor];
        ++size[c.target];
        moved = true;
        break;
      }
      if (moved) break;
    }
    if (!moved) break;
  }

  for (auto& r : regions) r.clear();
  for (std::size_t v = 0; v < n; ++v)
    if (owner[v] < t_count) regions[owner[v]].push_back(v);
  return regions;
}

/// Grows one region per root with Dijkstra, always extending the currently
/// smallest region, then balances sizes. The sink is never claimed.
inline std::vector<std::vector<std::size_t>> grow_regions(const NetworkGraph& g, std::size_t sink,
                                                          const std::vector<std::size_t>& roots) {
  const std::size_t n = g.size();
  const std::size_t t_count = roots.size();
  using Item = std::pair<double, std::size_t>;
  using Heap = std::priority_queue<Item, std::vector<Item>, std::greater<>>;
  constexpr std::size_t unclaimed = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> owner(n, unclaimed);
  owner[sink] = t_count;
  std::vector<Heap> frontier(t_count);
  std::vector<std::vector<std::size_t>> regions(t_count);
  std::size_t remaining = n - 1;

  auto claim = [&](std::size_t t, std::size_t v, double d) {
    owner[v] = t;
    regions[t].push_back(v);
    --remaining;
    for (const auto& nb : g.neighbors(v))
      if (owner[nb.node] == unclaimed) frontier[t].push({d + nb.cost, nb.node});
  };
  for (std::size_t t = 0; t < t_count; ++t) claim(t, roots[t], 0.0);

  while (remaining > 0) {
    std::size_t pick = t_count;
    for (std::size_t t = 0; t < t_count; ++t) {
      while (!frontier[t].empty() && owner[frontier[t].top().second] != unclaimed) frontier[t].pop();
      if (frontier[t].empty()) continue;
      if (pick == t_count || regions[t].size() < regions[pick].size()) pick = t;
    }
    if (pick == t_count)
      throw std::invalid_argument("partition_forest: some nodes reach the sink only through unused sink neighbors");
    const auto [d, v] = frontier[pick].top();
    frontier[pick].pop();
    claim(pick, v, d);
  }
  return balance_regions(g, roots, owner, std::move(regions));
}

}  // namespace detail

/// Splits the network into num_trees node-disjoint hybrid-CS trees, each
/// hanging off a distinct sink neighbor, with budgets[i] measurements in
/// tree i. num_trees == 1 is the plain single hybrid tree.
inline AggregationForest partition_forest(const NetworkGraph& g, std::size_t sink, std::size_t num_trees,
                                          const std::vector<std::size_t>& budgets) {
  detail::require_node(g, sink, "partition_forest");
  if (num_trees < 1) throw std::invalid_argument("partition_forest: need at least one tree");
  if (budgets.size() != num_trees) throw std::invalid_argument("partition_forest: one budget per tree required");
  if (num_trees == 1) return build_hybrid_tree(g, sink, budgets[0]);
  if (g.neighbors(sink).size() < num_trees)
    throw std::invalid_argument("partition_forest: sink has fewer neighbors than requested trees");
  if (!g.connected()) throw connectivity_error(g.component_count());

  const auto roots = detail::spread_roots(g, sink, num_trees);
  const auto regions = detail::grow_regions(g, sink, roots);

  AggregationForest forest;
  forest.scheme = Scheme::HybridCs;
  forest.sink = sink;
  forest.parent.assign(g.size(), kNoParent);
  for (std::size_t t = 0; t < num_trees; ++t) {
    const auto& members = regions[t];
    if (budgets[t] < 1 || budgets[t] > members.size() + 1)
      throw std::invalid_argument("partition_forest: budget outside [1, tree size]");
    // Local graph: id 0 is the sink, linked to this tree's root only.
    std::vector<std::size_t> global{sink};
    global.insert(global.end(), members.begin(), members.end());
    std::vector<std::ptrdiff_t> local(g.size(), kNoParent);
    for (std::size_t i = 0; i < global.size(); ++i) local[global[i]] = static_cast<std::ptrdiff_t>(i);
    std::vector<network::Point> pos;
    for (auto v : global) pos.push_back(g.position(v));
    std::vector<std::pair<std::size_t, std::size_t>> links{{0, static_cast<std::size_t>(local[roots[t]])}};
    for (auto v : members)
      for (const auto& nb : g.neighbors(v))
        if (nb.node != sink && v < nb.node && local[nb.node] != kNoParent)
          links.emplace_back(static_cast<std::size_t>(local[v]), static_cast<std::size_t>(local[nb.node]));
    const NetworkGraph sub(std::move(pos), links);
    const auto tree = build_hybrid_tree(sub, 0, budgets[t]);
    for (std::size_t i = 1; i < global.size(); ++i)
      forest.parent[global[i]] = static_cast<std::ptrdiff_t>(global[static_cast<std::size_t>(tree.parent[i])]);
    forest.trees.push_back({roots[t], members, budgets[t]});
  }
  return forest;
}

/// Per-link items for one round and the resulting energy.
inline TrafficReport account_traffic(const AggregationForest& f, const NetworkGraph& g) {
  if (f.size() != g.size()) throw std::invalid_argument("account_traffic: forest and graph sizes differ");
  const auto sizes = subtree_sizes(f);
  const auto tree_of = f.tree_index();
  TrafficReport report;
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (i == f.sink) continue;
    if (tree_of[i] == f.trees.size()) throw std::invalid_argument("account_traffic: node outside every tree");
    const std::size_t k = f.trees[tree_of[i]].budget;
    std::size_t items = 0;
    switch (f.scheme) {
      case Scheme::NonAggregation: items = sizes[i]; break;
      case Scheme::PlainCs: items = k; break;
      case Scheme::HybridCs: items = std::min(sizes[i], k); break;
    }
    const auto p = static_cast<std::size_t>(f.parent[i]);
    report.per_link_items[{i, p}] = items;
    report.total_items += items;
    report.total_energy += static_cast<double>(items) * g.cost(i, p);
  }
  return report;
}

// Forest JSON: {"scheme":..,"sink":..,"parent":[..],
//               "trees":[{"id":..,"root":..,"k":..,"members":[..]}]}

inline nlohmann::json to_json(const AggregationForest& f) {
  nlohmann::json trees = nlohmann::json::array();
  for (std::size_t t = 0; t < f.trees.size(); ++t)
    trees.push_back({{"id", t}, {"root", f.trees[t].root}, {"k", f.trees[t].budget}, {"members", f.trees[t].members}});
  return {{"scheme", to_string(f.scheme)}, {"sink", f.sink}, {"parent", f.parent}, {"trees", trees}};
}

inline AggregationForest forest_from_json(const nlohmann::json& j) {
  try {
    AggregationForest f;
    f.scheme = scheme_from_string(j.at("scheme").get<std::string>());
    f.sink = j.at("sink").get<std::size_t>();
    f.parent = j.at("parent").get<std::vector<std::ptrdiff_t>>();
    for (const auto& t : j.at("trees"))
      f.trees.push_back({t.at("root").get<std::size_t>(), t.at("members").get<std::vector<std::size_t>>(),
                         t.at("k").get<std::size_t>()});
    subtree_sizes(f);  // validates the parent array
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("forest json: ") + e.what());
  }
}

inline void save_forest(const std::string& path, const AggregationForest& f) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write " + path);
  out << to_json(f).dump() << '\n';
}

}  // namespace deca::routing
