#pragma once

// Random sensor deployment over an a x b cell grid and the unit-disk
// communication graph built on top of it.

#include "deca/errors.hpp"

#include <json.hpp>

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace deca::network {

using Point = Eigen::Vector2d;

/// Default unit-disk radius, in cell units.
inline constexpr double kDefaultCommRadius = 5.0;

struct Cell {
  int row = 0;
  int col = 0;
  auto operator<=>(const Cell&) const = default;
};

struct GridDims {
  int rows = 0;
  int cols = 0;
  bool operator==(const GridDims&) const = default;
  std::size_t cell_count() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

inline Point cell_point(const Cell& c) { return {static_cast<double>(c.row), static_cast<double>(c.col)}; }

/// Sensor placement. Node i sits in cells[i]; at most one node per cell.
struct Deployment {
  GridDims grid;
  std::vector<Cell> cells;
  std::size_t sink = 0;
  double rho = 0.0;
  std::uint64_t seed = 0;

  std::size_t size() const { return cells.size(); }
  Point position(std::size_t i) const { return cell_point(cells.at(i)); }

  std::vector<Point> positions() const {
    std::vector<Point> out;
    out.reserve(cells.size());
    for (const auto& c : cells) out.push_back(cell_point(c));
    return out;
  }
};

namespace detail {

inline std::size_t nearest_to_center(const GridDims& grid, const std::vector<Cell>& cells) {
  const double cr = 0.5 * (grid.rows - 1);
  const double cc = 0.5 * (grid.cols - 1);
  std::size_t best = 0;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const double dr = cells[i].row - cr;
    const double dc = cells[i].col - cc;
    const double d2 = dr * dr + dc * dc;
    if (d2 < best_d2) {
      best_d2 = d2;
      best = i;
    }
  }
  return best;
}

}  // namespace detail

/// Builds a deployment from explicit cells. Nodes keep the given order; the
/// sink is the node closest to the grid center (lowest id on ties).
inline Deployment deployment_from_cells(GridDims grid, std::vector<Cell> cells, double rho = 0.0,
                                        std::uint64_t seed = 0) {
  if (grid.rows < 1 || grid.cols < 1) throw std::invalid_argument("deployment: empty grid");
  if (cells.empty()) throw std::invalid_argument("deployment: no nodes");
  std::set<Cell> seen;
  for (const auto& c : cells) {
    if (c.row < 0 || c.col < 0 || c.row >= grid.rows || c.col >= grid.cols)
      throw std::invalid_argument("deployment: cell outside grid");
    if (!seen.insert(c).second) throw std::invalid_argument("deployment: two nodes share a cell");
  }
  Deployment d;
  d.grid = grid;
  d.sink = detail::nearest_to_center(grid, cells);
  d.cells = std::move(cells);
  d.rho = rho > 0.0 ? rho : static_cast<double>(d.cells.size()) / static_cast<double>(grid.cell_count());
  d.seed = seed;
  return d;
}

/// Places exactly round(rho * a * b) nodes in distinct cells drawn uniformly
/// without replacement. Node ids follow row-major cell order.
inline Deployment deploy(GridDims grid, double rho, std::uint64_t seed) {
  if (!(rho > 0.0 && rho <= 1.0)) throw std::invalid_argument("deploy: rho must lie in (0, 1]");
  if (grid.rows < 1 || grid.cols < 1) throw std::invalid_argument("deploy: empty grid");
  const std::size_t total = grid.cell_count();
  const auto n = static_cast<std::size_t>(std::llround(rho * static_cast<double>(total)));
  if (n == 0) throw std::invalid_argument("deploy: rho too small for a single node");

  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates: the first n slots end up as a uniform sample.
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, total - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(n);
  std::sort(idx.begin(), idx.end());

  std::vector<Cell> cells;
  cells.reserve(n);
  for (auto k : idx)
    cells.push_back({static_cast<int>(k / static_cast<std::size_t>(grid.cols)),
                     static_cast<int>(k % static_cast<std::size_t>(grid.cols))});
  return deployment_from_cells(grid, std::move(cells), rho, seed);
}

struct Neighbor {
  std::size_t node;
  double cost;
};

struct Edge {
  std::size_t a;
  std::size_t b;
  double cost;
};

inline double distance(const Point& p, const Point& q) {
  const double dx = p.x() - q.x();
  const double dy = p.y() - q.y();
  return std::sqrt(dx * dx + dy * dy);
}

/// Energy per data item across a link: cube of the Euclidean distance.
inline double link_cost(const Point& p, const Point& q) {
  const double d = distance(p, q);
  return d * d * d;
}

/// Undirected communication graph with cubic-distance link costs.
/// Adjacency lists are sorted by neighbor id.
class NetworkGraph {
 public:
  NetworkGraph() = default;

  NetworkGraph(std::vector<Point> positions, const std::vector<std::pair<std::size_t, std::size_t>>& links)
      : positions_(std::move(positions)), adjacency_(positions_.size()) {
    std::set<std::pair<std::size_t, std::size_t>> unique;
    for (auto [i, j] : links) {
      if (i >= positions_.size() || j >= positions_.size())
        throw std::invalid_argument("graph: edge endpoint out of range");
      if (i == j) throw std::invalid_argument("graph: self loop");
      unique.insert(std::minmax(i, j));
    }
    for (auto [i, j] : unique) {
      const double c = link_cost(positions_[i], positions_[j]);
      edges_.push_back({i, j, c});
      adjacency_[i].push_back({j, c});
      adjacency_[j].push_back({i, c});
    }
    for (auto& list : adjacency_)
      std::sort(list.begin(), list.end(), [](const Neighbor& x, const Neighbor& y) { return x.node < y.node; });
  }

  std::size_t size() const { return positions_.size(); }
  const std::vector<Point>& positions() const { return positions_; }
  const Point& position(std::size_t i) const { return positions_.at(i); }
  const std::vector<Edge>& edges() const { return edges_; }
  const std::vector<Neighbor>& neighbors(std::size_t i) const { return adjacency_.at(i); }

  bool has_edge(std::size_t i, std::size_t j) const {
    const auto& list = adjacency_.at(i);
    return std::binary_search(list.begin(), list.end(), Neighbor{j, 0.0},
                              [](const Neighbor& x, const Neighbor& y) { return x.node < y.node; });
  }

  /// Cost of an existing link; throws if (i, j) is not an edge.
  double cost(std::size_t i, std::size_t j) const {
    const auto& list = adjacency_.at(i);
    auto it = std::lower_bound(list.begin(), list.end(), j,
                               [](const Neighbor& x, std::size_t id) { return x.node < id; });
    if (it == list.end() || it->node != j) throw std::invalid_argument("graph: no such link");
    return it->cost;
  }

  std::size_t component_count() const {
    std::vector<char> seen(size(), 0);
    std::size_t components = 0;
    std::vector<std::size_t> stack;
    for (std::size_t s = 0; s < size(); ++s) {
      if (seen[s]) continue;
      ++components;
      seen[s] = 1;
      stack.push_back(s);
      while (!stack.empty()) {
        const auto u = stack.back();
        stack.pop_back();
        for (const auto& nb : adjacency_[u])
          if (!seen[nb.node]) {
            seen[nb.node] = 1;
            stack.push_back(nb.node);
          }
      }
    }
    return components;
  }

  bool connected() const { return component_count() <= 1; }

 private:
  std::vector<Point> positions_;
  std::vector<std::vector<Neighbor>> adjacency_;
  std::vector<Edge> edges_;
};

/// Unit-disk graph: link iff distance <= radius. Throws connectivity_error
/// rather than enlarging the radius.
inline NetworkGraph build_graph(const std::vector<Point>& positions, double radius) {
  if (!(radius > 0.0)) throw std::invalid_argument("build_graph: radius must be positive");
  std::vector<std::pair<std::size_t, std::size_t>> links;
  const double r2 = radius * radius;
  for (std::size_t i = 0; i < positions.size(); ++i)
    for (std::size_t j = i + 1; j < positions.size(); ++j) {
      const double dx = positions[i].x() - positions[j].x();
      const double dy = positions[i].y() - positions[j].y();
      if (dx * dx + dy * dy <= r2) links.emplace_back(i, j);
    }
  NetworkGraph g(positions, links);
  if (const auto parts = g.component_count(); parts > 1) throw connectivity_error(parts);
  return g;
}

inline NetworkGraph build_graph(const Deployment& deployment, double radius = kDefaultCommRadius) {
  return build_graph(deployment.positions(), radius);
}

// Deployment JSON: {"grid":[a,b],"rho":..,"seed":..,"sink":..,"cells":[[r,c],...]}

inline nlohmann::json to_json(const Deployment& d) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : d.cells) cells.push_back({c.row, c.col});
  return {{"grid", {d.grid.rows, d.grid.cols}}, {"rho", d.rho}, {"seed", d.seed}, {"sink", d.sink}, {"cells", cells}};
}

inline Deployment deployment_from_json(const nlohmann::json& j) {
  try {
    GridDims grid{j.at("grid").at(0).get<int>(), j.at("grid").at(1).get<int>()};
    std::vector<Cell> cells;
    for (const auto& c : j.at("cells")) cells.push_back({c.at(0).get<int>(), c.at(1).get<int>()});
    Deployment d = deployment_from_cells(grid, std::move(cells), j.value("rho", 0.0), j.value("seed", std::uint64_t{0}));
    if (j.contains("sink")) {
      const auto sink = j.at("sink").get<std::size_t>();
      if (sink >= d.size()) throw std::invalid_argument("deployment: sink id out of range");
      d.sink = sink;
    }
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("deployment json: ") + e.what());
  }
}

inline void save_deployment(const std::string& path, const Deployment& d) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write " + path);
  out << to_json(d).dump() << '\n';
  if (!out) throw io_error("write failed: " + path);
}

inline Deployment load_deployment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot read " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
  return deployment_from_json(j);
}

}  // namespace deca::network
