#pragma once

// Physical fields on the cell grid: synthetic generators, CSV ingestion and
// sampling at node locations.

#include "deca/errors.hpp"
#include "deca/linalg.hpp"
#include "deca/network.hpp"

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace deca::field {

using linalg::Matrix;
using linalg::Vector;

/// a x b grid of values for one round. Values are finite and cell-constant.
class FieldGrid {
 public:
  explicit FieldGrid(Matrix values, std::size_t round_index = 0)
      : values_(std::move(values)), round_(round_index) {
    if (values_.size() == 0) throw std::invalid_argument("FieldGrid: empty grid");
    if (!values_.allFinite()) throw std::invalid_argument("FieldGrid: non-finite value");
  }

  Eigen::Index rows() const { return values_.rows(); }
  Eigen::Index cols() const { return values_.cols(); }
  std::size_t round_index() const { return round_; }
  const Matrix& values() const { return values_; }
  double operator()(Eigen::Index r, Eigen::Index c) const { return values_(r, c); }
  network::GridDims dims() const { return {static_cast<int>(rows()), static_cast<int>(cols())}; }

 private:
  Matrix values_;
  std::size_t round_;
};

/// Readings u^r_i for a set of nodes over a set of rounds. values(r, i)
/// belongs to rounds[r] and node_ids[i].
struct ReadingSeries {
  std::vector<std::int64_t> node_ids;
  std::vector<std::int64_t> rounds;
  Matrix values;
};

/// The three-Gaussian peaks surface on [-3, 3]^2.
inline double peaks(double x, double y) {
  return 3.0 * (1.0 - x) * (1.0 - x) * std::exp(-x * x - (y + 1.0) * (y + 1.0)) -
         10.0 * (x / 5.0 - x * x * x - std::pow(y, 5)) * std::exp(-x * x - y * y) -
         std::exp(-(x + 1.0) * (x + 1.0) - y * y) / 3.0;
}

/// Peaks evaluated at cell centers; x runs along columns, y along rows.
inline FieldGrid generate_peaks_field(int rows, int cols) {
  if (rows < 2 || cols < 2) throw std::invalid_argument("peaks field needs at least 2x2 cells");
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    const double y = -3.0 + 6.0 * (r + 0.5) / rows;
    for (int c = 0; c < cols; ++c) m(r, c) = peaks(-3.0 + 6.0 * (c + 0.5) / cols, y);
  }
  return FieldGrid(std::move(m));
}

namespace detail {

inline Vector gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(4.0 * sigma));
  Vector k(2 * radius + 1);
  for (int i = -radius; i <= radius; ++i) k(i + radius) = std::exp(-0.5 * (i * i) / (sigma * sigma));
  return k / k.sum();
}

}  // namespace detail

/// White noise blurred by a separable Gaussian of standard deviation
/// correlation_length (kernel cut at 4 lengths), then shifted and scaled to
/// zero mean and unit standard deviation. Noise is drawn on a padded grid so
/// the border is not attenuated.
inline FieldGrid generate_smooth_random_field(int rows, int cols, double correlation_length, std::uint64_t seed) {
  if (rows < 2 || cols < 2) throw std::invalid_argument("smooth random field needs at least 2x2 cells");
  if (!(correlation_length > 0.0)) throw std::invalid_argument("correlation_length must be positive");
  const Vector kernel = detail::gaussian_kernel(correlation_length);
  const int radius = static_cast<int>(kernel.size() / 2);
  const int pr = rows + 2 * radius;
  const int pc = cols + 2 * radius;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix noise(pr, pc);
  for (int c = 0; c < pc; ++c)
    for (int r = 0; r < pr; ++r) noise(r, c) = normal(rng);

  Matrix along_rows(pr, cols);  // blur across columns
  for (int c = 0; c < cols; ++c) along_rows.col(c) = noise.middleCols(c, kernel.size()) * kernel;
  Matrix out(rows, cols);
  for (int r = 0; r < rows; ++r) out.row(r) = kernel.transpose() * along_rows.middleRows(r, kernel.size());

  out.array() -= out.mean();
  const double sd = std::sqrt(out.squaredNorm() / static_cast<double>(out.size()));
  if (sd > 0.0) out /= sd;
  return FieldGrid(std::move(out));
}

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename T>
T parse_number(std::string_view cell, std::size_t line) {
  T value{};
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  const auto* end = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(cell.data(), end, value);
  if (ec != std::errc() || ptr != end || cell.empty())
    throw parse_error(line, "not a number: '" + std::string(cell) + "'");
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(value)) throw parse_error(line, "non-finite value");
  }
  return value;
}

}  // namespace detail

/// Field CSV: one line per grid row, comma separated; lines starting with
/// '#' are comments. Values are written with 17 significant digits so a
/// save/load cycle is exact.
inline void save_field_csv(const std::string& path, const FieldGrid& f) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write " + path);
  out << "# rows=" << f.rows() << " cols=" << f.cols() << " round=" << f.round_index() << '\n';
  for (Eigen::Index r = 0; r < f.rows(); ++r) {
    for (Eigen::Index c = 0; c < f.cols(); ++c) {
      if (c) out << ',';
      out << detail::format_double(f(r, c));
    }
    out << '\n';
  }
  if (!out) throw io_error("write failed: " + path);
}

inline FieldGrid parse_field_csv(std::istream& in) {
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto text = detail::trim(line);
    if (text.empty() || text.front() == '#') continue;
    std::vector<double> row;
    for (auto cell : detail::split(text)) row.push_back(detail::parse_number<double>(cell, lineno));
    if (!rows.empty() && row.size() != rows.front().size())
      throw parse_error(lineno, "expected " + std::to_string(rows.front().size()) + " columns, got " +
                                    std::to_string(row.size()));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw parse_error(lineno, "no data rows");
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(r, c) = rows[r][c];
  return FieldGrid(std::move(m));
}

inline FieldGrid load_field_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot read " + path);
  return parse_field_csv(in);
}

/// Readings CSV: header "round,node_id,value", one row per reading.
inline void save_readings_csv(const std::string& path, const ReadingSeries& s) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write " + path);
  out << "round,node_id,value\n";
  for (std::size_t r = 0; r < s.rounds.size(); ++r)
    for (std::size_t i = 0; i < s.node_ids.size(); ++i)
      out << s.rounds[r] << ',' << s.node_ids[i] << ',' << detail::format_double(s.values(r, i)) << '\n';
  if (!out) throw io_error("write failed: " + path);
}

inline ReadingSeries parse_readings_csv(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  std::map<std::pair<std::int64_t, std::int64_t>, double> table;
  std::set<std::int64_t> rounds, nodes;
  while (std::getline(in, line)) {
    ++lineno;
    const auto text = detail::trim(line);
    if (text.empty() || text.front() == '#') continue;
    const auto cells = detail::split(text);
    if (!header) {
      if (cells.size() != 3 || cells[0] != "round" || cells[1] != "node_id" || cells[2] != "value")
        throw parse_error(lineno, "expected header 'round,node_id,value'");
      header = true;
      continue;
    }
    if (cells.size() != 3) throw parse_error(lineno, "expected 3 columns, got " + std::to_string(cells.size()));
    const auto round = detail::parse_number<std::int64_t>(cells[0], lineno);
    const auto node = detail::parse_number<std::int64_t>(cells[1], lineno);
    const auto value = detail::parse_number<double>(cells[2], lineno);
    if (!table.emplace(std::make_pair(round, node), value).second)
      throw parse_error(lineno, "duplicate reading for round " + std::to_string(round) + ", node " +
                                    std::to_string(node));
    rounds.insert(round);
    nodes.insert(node);
  }
  if (!header) throw parse_error(lineno, "missing header");
  if (table.size() != rounds.size() * nodes.size())
    throw parse_error(lineno, "incomplete readings: every node needs one value per round");
  ReadingSeries s;
  s.rounds.assign(rounds.begin(), rounds.end());
  s.node_ids.assign(nodes.begin(), nodes.end());
  s.values.resize(static_cast<Eigen::Index>(s.rounds.size()), static_cast<Eigen::Index>(s.node_ids.size()));
  for (std::size_t r = 0; r < s.rounds.size(); ++r)
    for (std::size_t i = 0; i < s.node_ids.size(); ++i) s.values(r, i) = table.at({s.rounds[r], s.node_ids[i]});
  return s;
}

inline ReadingSeries load_readings_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot read " + path);
  return parse_readings_csv(in);
}

/// u_i = F at node i's cell, in node-id order.
inline Vector sample_field(const FieldGrid& f, const network::Deployment& d) {
  Vector u(static_cast<Eigen::Index>(d.size()));
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& c = d.cells[i];
    if (c.row < 0 || c.col < 0 || c.row >= f.rows() || c.col >= f.cols())
      throw std::invalid_argument("sample_field: node " + std::to_string(i) + " lies outside the grid");
    u(static_cast<Eigen::Index>(i)) = f(c.row, c.col);
  }
  return u;
}

}  // namespace deca::field
