#pragma once

// End-to-end scenarios: deploy, route, encode per tree, recover per node
// (level one), complete the field (level two) and account energy, over a
// grid of deployment and coding seeds.

#include "deca/cs_recovery.hpp"
#include "deca/diffusion_wavelets.hpp"
#include "deca/errors.hpp"
#include "deca/field.hpp"
#include "deca/linalg.hpp"
#include "deca/matrix_completion.hpp"
#include "deca/network.hpp"
#include "deca/routing.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

namespace deca::experiments {

using linalg::Matrix;
using linalg::Vector;

enum class FieldSource { Peaks, SmoothRandom, Csv };
enum class RecoveryMode { Joint, Independent };  // JR / IR
enum class DeltaRule { Residual, Measured, Fixed };

struct FieldConfig {
  FieldSource source = FieldSource::Peaks;
  double correlation_length = 10.0;  // smooth-random
  std::uint64_t seed = 1;            // smooth-random
  double temporal_step = 0.1;        // smooth-random, radians per round
  std::string path;                  // csv
};

struct ScenarioConfig {
  std::string scenario_id = "scenario";
  FieldConfig field;
  network::GridDims grid{100, 100};
  std::vector<double> rho{0.18};
  double comm_radius = network::kDefaultCommRadius;
  std::size_t rounds = 1;

  routing::Scheme scheme = routing::Scheme::HybridCs;
  std::size_t trees = 1;
  std::vector<std::size_t> k;           // reference budgets swept over
  double k_fraction = 0.0;              // used when k is empty: k = round(k_fraction * n)
  double budget_divisor = 0.0;          // k_i = round(k / divisor); 0 means the tree count
  std::vector<std::size_t> k_per_tree;  // explicit k_i, overrides k
  RecoveryMode recovery = RecoveryMode::Joint;
  bool spatiotemporal = false;

  wavelets::BasisParams basis;
  bool operator_fallback = true;  // LAMBDA_OVER_2 when I - Lambda has a negative eigenvalue
  double temporal_rate = 0.5;

  cs::EntryKind sensing = cs::EntryKind::Gaussian;
  double eta = 0.01;
  cs::SolverOptions l1;
  DeltaRule delta_rule = DeltaRule::Residual;
  double delta_scale = 1.0;
  double delta = 0.0;  // DeltaRule::Fixed
  mc::CompletionOptions completion;
  bool direct_baseline = false;  // also complete from the true samples
  double direct_relative_delta = 1e-6;
  bool full_grid_reference = false;

  std::size_t deployments = 10;
  std::size_t codings = 10;
  std::uint64_t base_seed = 1;
  std::string basis_cache_dir;
};

struct TrialRecord {
  std::string scenario_id;
  std::uint64_t deploy_seed = 0;
  std::uint64_t code_seed = 0;
  double rho = 0.0;
  std::string scheme;
  std::size_t trees = 0;
  std::size_t k_total = 0;  // coded items per round arriving at the sink
  std::size_t nodes = 0;
  double eps_vec = std::numeric_limits<double>::quiet_NaN();
  double eps_mat = std::numeric_limits<double>::quiet_NaN();
  double eps_mat_direct = std::numeric_limits<double>::quiet_NaN();
  double energy = std::numeric_limits<double>::quiet_NaN();
  double energy_baseline = std::numeric_limits<double>::quiet_NaN();
  double mu = std::numeric_limits<double>::quiet_NaN();
  double wall_ms = 0.0;
  double level1_residual = 0.0;   // max over rounds of ||Phi Psi w_hat - v||
  double delta = 0.0;             // max over rounds of the completion constraint
  double spectral_error = 0.0;    // max over rounds of ||X_hat - F||_2
  double bound_ratio = 0.0;       // max over rounds of ||X_hat - F||_2 / bound(||u_hat - u||_2)
  bool level1_converged = true;
  bool level2_converged = true;
  std::string operator_used;
  std::string error;

  bool ok() const { return error.empty(); }
};

// ---------------------------------------------------------------- config

inline std::string to_string(FieldSource s) {
  switch (s) {
    case FieldSource::Peaks: return "peaks";
    case FieldSource::SmoothRandom: return "smooth-random";
    case FieldSource::Csv: return "csv";
  }
  return "?";
}

inline std::string to_string(RecoveryMode m) { return m == RecoveryMode::Joint ? "JR" : "IR"; }

inline std::string to_string(DeltaRule r) {
  switch (r) {
    case DeltaRule::Residual: return "residual";
    case DeltaRule::Measured: return "measured";
    case DeltaRule::Fixed: return "fixed";
  }
  return "?";
}

namespace detail {

inline FieldSource field_source_from_string(const std::string& s) {
  if (s == "peaks") return FieldSource::Peaks;
  if (s == "smooth-random") return FieldSource::SmoothRandom;
  if (s == "csv") return FieldSource::Csv;
  throw std::invalid_argument("config: unknown field source '" + s + "'");
}

inline RecoveryMode recovery_from_string(const std::string& s) {
  if (s == "JR") return RecoveryMode::Joint;
  if (s == "IR") return RecoveryMode::Independent;
  throw std::invalid_argument("config: recovery must be JR or IR, got '" + s + "'");
}

inline DeltaRule delta_rule_from_string(const std::string& s) {
  if (s == "residual") return DeltaRule::Residual;
  if (s == "measured") return DeltaRule::Measured;
  if (s == "fixed") return DeltaRule::Fixed;
  throw std::invalid_argument("config: unknown delta rule '" + s + "'");
}

template <typename T>
std::vector<T> scalar_or_list(const nlohmann::json& j) {
  if (j.is_array()) return j.get<std::vector<T>>();
  return {j.get<T>()};
}

}  // namespace detail

/// Checks ranges and cross-field consistency; referenced files must exist.
inline void validate(const ScenarioConfig& c) {
  auto fail = [](const std::string& what) { throw std::invalid_argument("config: " + what); };
  if (c.scenario_id.empty() || c.scenario_id.find_first_of(",\n\"") != std::string::npos)
    fail("scenario_id must be non-empty without commas, quotes or newlines");
  if (c.field.source == FieldSource::Csv) {
    if (!std::filesystem::is_regular_file(c.field.path)) throw io_error("config: field file not found: " + c.field.path);
  } else if (c.grid.rows < 1 || c.grid.cols < 1) {
    fail("grid dimensions must be positive");
  }
  if (c.field.source == FieldSource::SmoothRandom && !(c.field.correlation_length > 0.0))
    fail("correlation_length must be positive");
  if (c.rho.empty()) fail("rho is empty");
  for (double r : c.rho)
    if (!(r > 0.0 && r <= 1.0)) fail("rho must lie in (0, 1]");
  if (!(c.comm_radius > 0.0)) fail("comm_radius must be positive");
  if (c.rounds < 1) fail("rounds must be at least 1");
  if (c.spatiotemporal && c.rounds < 2) fail("spatio-temporal recovery needs at least 2 rounds");
  if (c.trees < 1) fail("trees must be at least 1");
  if (c.scheme != routing::Scheme::HybridCs && c.trees != 1) fail("only HYBRID_CS supports several trees");
  if (c.scheme != routing::Scheme::NonAggregation) {
    if (!c.k_per_tree.empty()) {
      if (c.k_per_tree.size() != c.trees) fail("k_per_tree needs one budget per tree");
      for (auto k : c.k_per_tree)
        if (k < 1) fail("budgets must be positive");
    } else if (c.k.empty()) {
      if (!(c.k_fraction > 0.0 && c.k_fraction <= 1.0)) fail("set k, k_per_tree or k_fraction in (0, 1]");
    } else {
      for (auto k : c.k)
        if (k < 1) fail("budgets must be positive");
    }
    if (c.budget_divisor < 0.0) fail("budget_divisor must be non-negative");
  }
  if (!(c.basis.laplacian.alpha < 0.0)) fail("alpha must be negative");
  if (!(c.basis.laplacian.beta >= 0.0)) fail("beta must be non-negative");
  if (c.basis.gamma < 1) fail("gamma must be at least 1");
  if (!(c.basis.threshold > 0.0 && c.basis.threshold < 1.0)) fail("threshold must lie in (0, 1)");
  if (!(c.temporal_rate >= 0.0)) fail("temporal_rate must be non-negative");
  if (!(c.eta >= 0.0)) fail("eta must be non-negative");
  if (!(c.delta_scale >= 0.0) || !(c.delta >= 0.0)) fail("delta settings must be non-negative");
  if (!(c.direct_relative_delta >= 0.0)) fail("direct_relative_delta must be non-negative");
  if (c.l1.max_iterations < 1 || c.completion.max_iterations < 1) fail("iteration caps must be positive");
  if (c.deployments < 1 || c.codings < 1) fail("trials need at least one deployment and one coding");
}

/// JSON layout (all keys optional except where a value is needed):
/// {"scenario_id", "field": {"source", "correlation_length", "seed",
///  "temporal_step", "path"}, "grid": [a, b], "rho": x | [..], "comm_radius",
///  "rounds", "aggregation": {"scheme", "trees", "k": k | [..], "k_fraction",
///  "budget_divisor", "k_per_tree": [..], "recovery": "JR"|"IR",
///  "spatiotemporal"}, "basis": {"alpha", "beta", "operator",
///  "operator_fallback", "gamma", "threshold", "temporal_rate"},
///  "solver": {"sensing", "eta", "l1_max_iterations", "delta_rule",
///  "delta_scale", "delta", "mc_max_iterations", "direct_baseline",
///  "direct_relative_delta"}, "trials": {"deployments", "codings",
///  "base_seed"}, "full_grid_reference", "basis_cache_dir"}
/// Relative csv paths resolve against base_dir.
inline ScenarioConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  ScenarioConfig c;
  try {
    c.scenario_id = j.value("scenario_id", c.scenario_id);
    if (j.contains("field")) {
      const auto& f = j.at("field");
      c.field.source = detail::field_source_from_string(f.value("source", std::string("peaks")));
      c.field.correlation_length = f.value("correlation_length", c.field.correlation_length);
      c.field.seed = f.value("seed", c.field.seed);
      c.field.temporal_step = f.value("temporal_step", c.field.temporal_step);
      if (f.contains("path")) {
        std::filesystem::path p = f.at("path").get<std::string>();
        if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
        c.field.path = p.string();
      }
    }
    if (j.contains("grid")) c.grid = {j.at("grid").at(0).get<int>(), j.at("grid").at(1).get<int>()};
    if (j.contains("rho")) c.rho = detail::scalar_or_list<double>(j.at("rho"));
    c.comm_radius = j.value("comm_radius", c.comm_radius);
    c.rounds = j.value("rounds", c.rounds);
    if (j.contains("aggregation")) {
      const auto& a = j.at("aggregation");
      c.scheme = routing::scheme_from_string(a.value("scheme", routing::to_string(c.scheme)));
      c.trees = a.value("trees", c.trees);
      if (a.contains("k")) c.k = detail::scalar_or_list<std::size_t>(a.at("k"));
      c.k_fraction = a.value("k_fraction", c.k_fraction);
      c.budget_divisor = a.value("budget_divisor", c.budget_divisor);
      if (a.contains("k_per_tree")) c.k_per_tree = a.at("k_per_tree").get<std::vector<std::size_t>>();
      c.recovery = detail::recovery_from_string(a.value("recovery", to_string(c.recovery)));
      c.spatiotemporal = a.value("spatiotemporal", c.spatiotemporal);
    }
    if (j.contains("basis")) {
      const auto& b = j.at("basis");
      c.basis.laplacian.alpha = b.value("alpha", c.basis.laplacian.alpha);
      c.basis.laplacian.beta = b.value("beta", c.basis.laplacian.beta);
      c.basis.laplacian.kind =
          wavelets::operator_kind_from_string(b.value("operator", wavelets::to_string(c.basis.laplacian.kind)));
      c.operator_fallback = b.value("operator_fallback", c.operator_fallback);
      c.basis.gamma = b.value("gamma", c.basis.gamma);
      c.basis.threshold = b.value("threshold", c.basis.threshold);
      c.temporal_rate = b.value("temporal_rate", c.temporal_rate);
    }
    if (j.contains("solver")) {
      const auto& s = j.at("solver");
      c.sensing = cs::entry_kind_from_string(s.value("sensing", cs::to_string(c.sensing)));
      c.eta = s.value("eta", c.eta);
      c.l1.max_iterations = s.value("l1_max_iterations", c.l1.max_iterations);
      c.delta_rule = detail::delta_rule_from_string(s.value("delta_rule", to_string(c.delta_rule)));
      c.delta_scale = s.value("delta_scale", c.delta_scale);
      c.delta = s.value("delta", c.delta);
      c.completion.max_iterations = s.value("mc_max_iterations", c.completion.max_iterations);
      c.direct_baseline = s.value("direct_baseline", c.direct_baseline);
      c.direct_relative_delta = s.value("direct_relative_delta", c.direct_relative_delta);
    }
    if (j.contains("trials")) {
      const auto& t = j.at("trials");
      c.deployments = t.value("deployments", c.deployments);
      c.codings = t.value("codings", c.codings);
      c.base_seed = t.value("base_seed", c.base_seed);
    }
    c.full_grid_reference = j.value("full_grid_reference", c.full_grid_reference);
    c.basis_cache_dir = j.value("basis_cache_dir", c.basis_cache_dir);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  validate(c);
  return c;
}

inline ScenarioConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot read " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
  return config_from_json(j, std::filesystem::path(path).parent_path());
}

// ---------------------------------------------------------------- fields

/// Smoothly rotating mixture of two independent smooth fields:
/// F_r = cos(step r) A + sin(step r) B.
inline std::vector<field::FieldGrid> rotating_field_series(int rows, int cols, double correlation_length,
                                                           std::uint64_t seed, std::size_t rounds, double step) {
  const Matrix a = field::generate_smooth_random_field(rows, cols, correlation_length, seed).values();
  const Matrix b = field::generate_smooth_random_field(rows, cols, correlation_length, seed + 1).values();
  std::vector<field::FieldGrid> out;
  for (std::size_t r = 0; r < rounds; ++r) {
    const double t = step * static_cast<double>(r);
    out.emplace_back(std::cos(t) * a + std::sin(t) * b, r);
  }
  return out;
}

inline std::vector<field::FieldGrid> scenario_fields(const ScenarioConfig& c) {
  switch (c.field.source) {
    case FieldSource::Peaks:
      return std::vector<field::FieldGrid>(c.rounds, field::generate_peaks_field(c.grid.rows, c.grid.cols));
    case FieldSource::SmoothRandom:
      if (c.rounds == 1)
        return {field::generate_smooth_random_field(c.grid.rows, c.grid.cols, c.field.correlation_length,
                                                    c.field.seed)};
      return rotating_field_series(c.grid.rows, c.grid.cols, c.field.correlation_length, c.field.seed, c.rounds,
                                   c.field.temporal_step);
    case FieldSource::Csv:
      return std::vector<field::FieldGrid>(c.rounds, field::load_field_csv(c.field.path));
  }
  throw std::invalid_argument("unknown field source");
}

// ---------------------------------------------------------------- trials

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a * 0x9E3779B97F4A7C15ull + b + 0x632BE59BD9B4E019ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Basis over the given node positions, repeated over `rounds` coupled
/// copies when rounds > 1. Falls back to LAMBDA_OVER_2 (same eigenvectors)
/// when the configured operator has a negative eigenvalue.
inline wavelets::DiffusionBasis scenario_basis(const std::vector<network::Point>& positions, std::size_t rounds,
                                               const ScenarioConfig& c, std::string& operator_used) {
  auto build = [&](wavelets::OperatorKind kind) {
    auto params = c.basis;
    params.laplacian.kind = kind;
    operator_used = wavelets::to_string(kind);
    if (rounds > 1) return wavelets::spatiotemporal_basis(positions, {rounds, c.temporal_rate}, params);
    return wavelets::spatial_basis(positions, params);
  };
  try {
    return build(c.basis.laplacian.kind);
  } catch (const spectrum_error&) {
    if (!c.operator_fallback || c.basis.laplacian.kind == wavelets::OperatorKind::HalfLaplacian) throw;
    return build(wavelets::OperatorKind::HalfLaplacian);
  }
}

inline wavelets::DiffusionBasis cached_basis(const std::vector<network::Point>& positions, std::size_t rounds,
                                             const ScenarioConfig& c, double rho, std::uint64_t deploy_seed,
                                             std::string& operator_used) {
  if (c.basis_cache_dir.empty()) return scenario_basis(positions, rounds, c, operator_used);
  const auto& lap = c.basis.laplacian;
  const std::size_t dim = positions.size() * rounds;
  char tag[96];
  std::snprintf(tag, sizeof tag, "%dx%d_rho%.6g_r%zu_t%.6g_", c.grid.rows, c.grid.cols, rho, rounds,
                rounds > 1 ? c.temporal_rate : 0.0);
  std::vector<wavelets::OperatorKind> kinds{lap.kind};
  if (c.operator_fallback && lap.kind != wavelets::OperatorKind::HalfLaplacian)
    kinds.push_back(wavelets::OperatorKind::HalfLaplacian);
  auto key_for = [&](wavelets::OperatorKind kind) {
    return wavelets::BasisCacheKey{dim, c.basis.gamma, c.basis.threshold, lap.alpha, lap.beta, kind};
  };
  auto path_for = [&](wavelets::OperatorKind kind) {
    return (std::filesystem::path(c.basis_cache_dir) /
            (std::string(tag) + wavelets::basis_cache_name(deploy_seed, key_for(kind))))
        .string();
  };
  for (auto kind : kinds)
    if (auto b = wavelets::load_basis(path_for(kind), key_for(kind))) {
      operator_used = wavelets::to_string(kind);
      return std::move(*b);
    }
  auto b = scenario_basis(positions, rounds, c, operator_used);
  std::filesystem::create_directories(c.basis_cache_dir);
  wavelets::save_basis(path_for(wavelets::operator_kind_from_string(operator_used)), b,
                       key_for(wavelets::operator_kind_from_string(operator_used)));
  return b;
}

/// Per-tree budgets for reference budget k.
inline std::vector<std::size_t> tree_budgets(const ScenarioConfig& c, std::size_t k) {
  if (!c.k_per_tree.empty()) return c.k_per_tree;
  const double divisor = c.budget_divisor > 0.0 ? c.budget_divisor : static_cast<double>(c.trees);
  const auto ki = static_cast<std::size_t>(std::max<long long>(1, std::llround(static_cast<double>(k) / divisor)));
  return std::vector<std::size_t>(c.trees, ki);
}

/// Tree node groups with the sink placed at the front of group 0.
inline std::vector<std::vector<std::size_t>> tree_groups(const routing::AggregationForest& f) {
  std::vector<std::vector<std::size_t>> groups;
  for (const auto& t : f.trees) groups.push_back(t.members);
  groups.at(0).insert(groups[0].begin(), f.sink);
  return groups;
}

/// One level-one problem: the measurement blocks of the listed (round, tree)
/// pairs against a basis over nodes x rounds (basis index ri * |nodes| + j).
struct RecoveryUnit {
  std::vector<std::size_t> rounds;
  std::vector<std::size_t> nodes;
  std::vector<std::size_t> trees;
  const wavelets::DiffusionBasis* basis = nullptr;
};

struct DeploymentState {
  network::Deployment deployment;
  network::NetworkGraph graph;
  Matrix samples;  // n x rounds
  wavelets::DiffusionBasis whole;
  std::string operator_used;
  double baseline_energy = 0.0;
};

struct LevelOne {
  Matrix u_hat;                    // n x rounds
  std::vector<double> residual;    // per round
  bool converged = true;
};

inline LevelOne recover_level_one(const ScenarioConfig& c, const DeploymentState& s,
                                  const routing::AggregationForest& forest,
                                  const std::vector<std::vector<std::size_t>>& groups,
                                  const std::vector<RecoveryUnit>& units, std::uint64_t phi_seed) {
  const std::size_t rounds = c.rounds;
  const std::size_t n = s.deployment.size();
  LevelOne out;
  out.u_hat = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(rounds));
  std::vector<double> res_sq(rounds, 0.0);

  // One sensing block per (round, tree), shared by every recovery mode.
  std::vector<Matrix> phi(rounds * groups.size());
  std::size_t b = 0;
  for (std::size_t r = 0; r < rounds; ++r)
    for (std::size_t t = 0; t < groups.size(); ++t, ++b)
      phi[b] = cs::make_sensing_matrix(forest.trees[t].budget, groups[t].size(), c.sensing, mix_seed(phi_seed, b))
                   .dense();

  for (const auto& unit : units) {
    const std::size_t nu = unit.nodes.size();
    std::vector<std::size_t> local(n, n);
    for (std::size_t j = 0; j < nu; ++j) local[unit.nodes[j]] = j;
    std::vector<cs::BlockShape> shapes;
    std::vector<std::size_t> order;  // basis index measured by each column
    std::vector<std::pair<std::size_t, std::size_t>> block_ids;
    for (std::size_t ri = 0; ri < unit.rounds.size(); ++ri)
      for (auto t : unit.trees) {
        shapes.push_back({forest.trees[t].budget, groups[t].size()});
        block_ids.emplace_back(unit.rounds[ri], t);
        for (auto node : groups[t]) order.push_back(ri * nu + local[node]);
      }
    std::size_t rows = 0, cols = 0;
    for (const auto& sh : shapes) {
      rows += sh.rows;
      cols += sh.cols;
    }
    Matrix dense = Matrix::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    Vector u_cols(static_cast<Eigen::Index>(cols));
    Eigen::Index r0 = 0, c0 = 0;
    for (std::size_t k = 0; k < block_ids.size(); ++k) {
      const auto [r, t] = block_ids[k];
      const Matrix& blk = phi[r * groups.size() + t];
      dense.block(r0, c0, blk.rows(), blk.cols()) = blk;
      for (std::size_t j = 0; j < groups[t].size(); ++j)
        u_cols(c0 + static_cast<Eigen::Index>(j)) =
            s.samples(static_cast<Eigen::Index>(groups[t][j]), static_cast<Eigen::Index>(r));
      r0 += blk.rows();
      c0 += blk.cols();
    }
    const Vector v = dense * u_cols;  // the coded items reaching the sink
    const cs::SensingMatrix sensing(dense);
    const auto rec = cs::recover_joint(v, sensing, unit.basis->basis, order, cs::default_epsilon(v, c.eta), c.l1);
    out.converged = out.converged && rec.converged;

    Vector u_hat_cols(static_cast<Eigen::Index>(cols));
    for (std::size_t col = 0; col < order.size(); ++col)
      u_hat_cols(static_cast<Eigen::Index>(col)) = rec.u_hat(static_cast<Eigen::Index>(order[col]));
    const Vector res = dense * u_hat_cols - v;
    r0 = 0;
    for (std::size_t k = 0; k < block_ids.size(); ++k) {
      const auto rows_k = static_cast<Eigen::Index>(shapes[k].rows);
      res_sq[block_ids[k].first] += res.segment(r0, rows_k).squaredNorm();
      r0 += rows_k;
    }
    for (std::size_t ri = 0; ri < unit.rounds.size(); ++ri)
      for (std::size_t j = 0; j < nu; ++j)
        out.u_hat(static_cast<Eigen::Index>(unit.nodes[j]), static_cast<Eigen::Index>(unit.rounds[ri])) =
            rec.u_hat(static_cast<Eigen::Index>(ri * nu + j));
  }
  for (double x : res_sq) out.residual.push_back(std::sqrt(x));
  return out;
}

inline TrialRecord base_record(const ScenarioConfig& c, std::uint64_t deploy_seed, std::uint64_t code_seed,
                               double rho) {
  TrialRecord rec;
  rec.scenario_id = c.scenario_id;
  rec.deploy_seed = deploy_seed;
  rec.code_seed = code_seed;
  rec.rho = rho;
  rec.scheme = routing::to_string(c.scheme);
  rec.trees = c.trees;
  return rec;
}

inline void level_two(const ScenarioConfig& c, const DeploymentState& s, const std::vector<field::FieldGrid>& fields,
                      const Matrix& u_hat, const std::vector<double>& residual, TrialRecord& rec) {
  const double a = static_cast<double>(fields[0].rows());
  const double b = static_cast<double>(fields[0].cols());
  const double n = static_cast<double>(s.deployment.size());
  double eps_sum = 0.0, direct_sum = 0.0;
  rec.level2_converged = true;
  for (std::size_t r = 0; r < c.rounds; ++r) {
    const auto col = static_cast<Eigen::Index>(r);
    const double measured = (u_hat.col(col) - s.samples.col(col)).norm();
    double delta = 0.0;
    switch (c.delta_rule) {
      case DeltaRule::Residual: delta = c.delta_scale * residual[r]; break;
      case DeltaRule::Measured: delta = measured; break;
      case DeltaRule::Fixed: delta = c.delta; break;
    }
    const auto done = mc::complete(mc::observations_from(s.deployment, u_hat.col(col)), delta, c.completion);
    rec.level2_converged = rec.level2_converged && done.converged;
    const Matrix& f = fields[r].values();
    eps_sum += mc::field_error(done.x_hat, f);
    const double spectral = linalg::spectral_norm(done.x_hat - f);
    const double bound = mc::completion_error_bound(a, b, n, measured);
    rec.delta = std::max(rec.delta, delta);
    rec.spectral_error = std::max(rec.spectral_error, spectral);
    rec.bound_ratio = std::max(rec.bound_ratio, bound > 0.0 ? spectral / bound
                                                            : (spectral > 0.0 ? std::numeric_limits<double>::infinity()
                                                                              : 0.0));
    if (c.direct_baseline) {
      const Vector truth = s.samples.col(col);
      const auto direct =
          mc::complete(mc::observations_from(s.deployment, truth), c.direct_relative_delta * truth.norm(), c.completion);
      direct_sum += mc::field_error(direct.x_hat, f);
    }
  }
  rec.eps_mat = eps_sum / static_cast<double>(c.rounds);
  if (c.direct_baseline) rec.eps_mat_direct = direct_sum / static_cast<double>(c.rounds);
}

inline double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

}  // namespace detail

/// Runs every (rho, k, deployment seed, coding seed) combination. Deployment
/// seeds are base_seed + d, coding seeds base_seed + c. Failures inside a
/// trial are recorded in TrialRecord::error and the sweep continues.
inline std::vector<TrialRecord> run_scenario(const ScenarioConfig& config,
                                             const std::function<void(const TrialRecord&)>& on_record = {}) {
  validate(config);
  const auto fields = scenario_fields(config);
  ScenarioConfig c = config;
  c.grid = fields[0].dims();
  std::vector<TrialRecord> out;
  auto emit = [&](TrialRecord rec) {
    if (on_record) on_record(rec);
    out.push_back(std::move(rec));
  };

  for (double rho : c.rho) {
    for (std::size_t d = 0; d < c.deployments; ++d) {
      const std::uint64_t deploy_seed = c.base_seed + d;
      detail::DeploymentState s;
      std::vector<std::size_t> ks;
      std::string setup_error;
      try {
        s.deployment = network::deploy(c.grid, rho, deploy_seed);
        s.graph = network::build_graph(s.deployment, c.comm_radius);
        const std::size_t n = s.deployment.size();
        s.samples.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(c.rounds));
        for (std::size_t r = 0; r < c.rounds; ++r)
          s.samples.col(static_cast<Eigen::Index>(r)) = field::sample_field(fields[r], s.deployment);
        s.baseline_energy = routing::account_traffic(routing::build_spt(s.graph, s.deployment.sink), s.graph)
                                .total_energy *
                            static_cast<double>(c.rounds);
        if (c.scheme != routing::Scheme::NonAggregation) {
          const auto positions = s.deployment.positions();
          s.whole = detail::cached_basis(positions, c.spatiotemporal ? c.rounds : 1, c, rho, deploy_seed,
                                         s.operator_used);
        }
      } catch (const std::exception& e) {
        setup_error = e.what();
      }
      if (c.scheme == routing::Scheme::NonAggregation)
        ks = {0};
      else if (!c.k_per_tree.empty())
        ks = {0};
      else if (!c.k.empty())
        ks = c.k;
      else
        ks = {static_cast<std::size_t>(
            std::max<long long>(1, std::llround(c.k_fraction * static_cast<double>(s.deployment.size()))))};

      for (std::size_t k : ks) {
        routing::AggregationForest forest;
        std::vector<std::vector<std::size_t>> groups;
        std::map<std::vector<std::size_t>, wavelets::DiffusionBasis> tree_bases;
        std::vector<detail::RecoveryUnit> units;
        double energy = 0.0, mu = 1.0;
        std::size_t k_total = 0;
        std::string cell_error = setup_error;
        if (cell_error.empty()) {
          try {
            const std::size_t sink = s.deployment.sink;
            if (c.scheme == routing::Scheme::NonAggregation) {
              forest = routing::build_spt(s.graph, sink);
            } else if (c.scheme == routing::Scheme::PlainCs) {
              forest = routing::as_plain_cs(routing::build_spt(s.graph, sink), detail::tree_budgets(c, k)[0]);
            } else {
              const auto budgets = detail::tree_budgets(c, k);
              forest = routing::partition_forest(s.graph, sink, c.trees, budgets);
            }
            energy = routing::account_traffic(forest, s.graph).total_energy * static_cast<double>(c.rounds);
            if (c.scheme != routing::Scheme::NonAggregation) {
              groups = detail::tree_groups(forest);
              for (std::size_t t = 0; t < groups.size(); ++t) {
                if (forest.trees[t].budget > groups[t].size())
                  throw std::invalid_argument("budget exceeds the node count of tree " + std::to_string(t));
                k_total += forest.trees[t].budget;
              }
              mu = cs::compute_energy_overlap([&] {
                if (!c.spatiotemporal) return groups;
                std::vector<std::vector<std::size_t>> stacked(groups.size());
                for (std::size_t t = 0; t < groups.size(); ++t)
                  for (std::size_t r = 0; r < c.rounds; ++r)
                    for (auto node : groups[t]) stacked[t].push_back(r * s.deployment.size() + node);
                return stacked;
              }(), s.whole.basis);

              std::vector<std::size_t> all_nodes(s.deployment.size());
              std::iota(all_nodes.begin(), all_nodes.end(), std::size_t{0});
              std::vector<std::size_t> all_trees(groups.size());
              std::iota(all_trees.begin(), all_trees.end(), std::size_t{0});
              std::vector<std::vector<std::size_t>> round_sets;
              if (c.spatiotemporal) {
                round_sets.emplace_back(c.rounds);
                std::iota(round_sets[0].begin(), round_sets[0].end(), std::size_t{0});
              } else {
                for (std::size_t r = 0; r < c.rounds; ++r) round_sets.push_back({r});
              }
              const std::size_t basis_rounds = c.spatiotemporal ? c.rounds : 1;
              for (const auto& rs : round_sets) {
                if (c.recovery == RecoveryMode::Joint || groups.size() == 1) {
                  units.push_back({rs, all_nodes, all_trees, &s.whole});
                  continue;
                }
                for (std::size_t t = 0; t < groups.size(); ++t) {
                  auto nodes = groups[t];
                  std::sort(nodes.begin(), nodes.end());
                  auto it = tree_bases.find(nodes);
                  if (it == tree_bases.end()) {
                    std::vector<network::Point> pos;
                    for (auto node : nodes) pos.push_back(s.graph.position(node));
                    std::string used;
                    it = tree_bases.emplace(nodes, detail::scenario_basis(pos, basis_rounds, c, used)).first;
                  }
                  units.push_back({rs, nodes, {t}, &it->second});
                }
              }
            }
          } catch (const std::exception& e) {
            cell_error = e.what();
          }
        }

        for (std::size_t ci = 0; ci < c.codings; ++ci) {
          const std::uint64_t code_seed = c.base_seed + ci;
          auto rec = detail::base_record(c, deploy_seed, code_seed, rho);
          rec.nodes = s.deployment.size();
          rec.k_total = k_total;
          rec.operator_used = s.operator_used;
          if (!cell_error.empty()) {
            rec.error = cell_error;
            emit(std::move(rec));
            continue;
          }
          const auto start = std::chrono::steady_clock::now();
          try {
            rec.energy = energy;
            rec.energy_baseline = s.baseline_energy;
            rec.mu = mu;
            Matrix u_hat = s.samples;
            std::vector<double> residual(c.rounds, 0.0);
            if (c.scheme != routing::Scheme::NonAggregation) {
              auto l1 = detail::recover_level_one(c, s, forest, groups, units, detail::mix_seed(deploy_seed, code_seed));
              u_hat = std::move(l1.u_hat);
              residual = std::move(l1.residual);
              rec.level1_converged = l1.converged;
            }
            rec.level1_residual = *std::max_element(residual.begin(), residual.end());
            rec.eps_vec = (u_hat - s.samples).norm() / s.samples.norm();
            detail::level_two(c, s, fields, u_hat, residual, rec);
          } catch (const std::exception& e) {
            rec.error = e.what();
          }
          rec.wall_ms = detail::elapsed_ms(start);
          emit(std::move(rec));
        }
      }
    }
  }

  if (c.full_grid_reference) {
    auto rec = detail::base_record(c, 0, 0, 1.0);
    rec.scenario_id += "/full-grid";
    rec.scheme = routing::to_string(routing::Scheme::NonAggregation);
    rec.trees = 1;
    const auto start = std::chrono::steady_clock::now();
    try {
      std::vector<network::Cell> cells;
      for (int row = 0; row < c.grid.rows; ++row)
        for (int col = 0; col < c.grid.cols; ++col) cells.push_back({row, col});
      const auto d = network::deployment_from_cells(c.grid, std::move(cells), 1.0, 0);
      const auto g = network::build_graph(d, c.comm_radius);
      rec.nodes = d.size();
      rec.energy = routing::account_traffic(routing::build_spt(g, d.sink), g).total_energy *
                   static_cast<double>(c.rounds);
      rec.energy_baseline = rec.energy;
      rec.eps_vec = 0.0;
      rec.eps_mat = 0.0;
      rec.mu = 1.0;
    } catch (const std::exception& e) {
      rec.error = e.what();
    }
    rec.wall_ms = detail::elapsed_ms(start);
    emit(std::move(rec));
  }
  return out;
}

// ---------------------------------------------------------------- results

/// Mean and sample standard deviation over the successful trials of one
/// (scenario, rho, scheme, trees, k_total) cell.
struct CellSummary {
  std::string scenario_id;
  double rho = 0.0;
  std::string scheme;
  std::size_t trees = 0;
  std::size_t k_total = 0;
  std::size_t trials = 0;
  std::size_t failures = 0;
  std::map<std::string, std::pair<double, double>> stats;  // column -> (mean, std)

  double mean(const std::string& column) const { return stats.at(column).first; }
  double stddev(const std::string& column) const { return stats.at(column).second; }
};

inline const std::vector<std::string>& summary_columns() {
  static const std::vector<std::string> cols{"eps_vec", "eps_mat", "energy", "energy_baseline", "mu", "wall_ms",
                                             "eps_mat_direct", "energy_ratio"};
  return cols;
}

namespace detail {

inline auto cell_key(const TrialRecord& r) { return std::tie(r.scenario_id, r.rho, r.scheme, r.trees, r.k_total); }

inline double column_value(const TrialRecord& r, const std::string& col) {
  if (col == "eps_vec") return r.eps_vec;
  if (col == "eps_mat") return r.eps_mat;
  if (col == "energy") return r.energy;
  if (col == "energy_baseline") return r.energy_baseline;
  if (col == "mu") return r.mu;
  if (col == "wall_ms") return r.wall_ms;
  if (col == "eps_mat_direct") return r.eps_mat_direct;
  if (col == "energy_ratio") return r.energy / r.energy_baseline;
  throw std::invalid_argument("unknown column " + col);
}

inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace detail

inline std::vector<TrialRecord> sorted_records(std::vector<TrialRecord> records) {
  std::stable_sort(records.begin(), records.end(), [](const TrialRecord& a, const TrialRecord& b) {
    return std::tie(a.scenario_id, a.rho, a.scheme, a.trees, a.k_total, a.deploy_seed, a.code_seed) <
           std::tie(b.scenario_id, b.rho, b.scheme, b.trees, b.k_total, b.deploy_seed, b.code_seed);
  });
  return records;
}

inline std::vector<CellSummary> summarize(const std::vector<TrialRecord>& records) {
  std::vector<CellSummary> out;
  const auto sorted = sorted_records(records);
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && detail::cell_key(sorted[j]) == detail::cell_key(sorted[i])) ++j;
    CellSummary s;
    s.scenario_id = sorted[i].scenario_id;
    s.rho = sorted[i].rho;
    s.scheme = sorted[i].scheme;
    s.trees = sorted[i].trees;
    s.k_total = sorted[i].k_total;
    for (const auto& col : summary_columns()) {
      std::vector<double> xs;
      for (std::size_t t = i; t < j; ++t)
        if (sorted[t].ok()) xs.push_back(detail::column_value(sorted[t], col));
      double mean = std::numeric_limits<double>::quiet_NaN(), sd = mean;
      if (!xs.empty()) {
        mean = 0.0;
        for (double x : xs) mean += x;
        mean /= static_cast<double>(xs.size());
        double ss = 0.0;
        for (double x : xs) ss += (x - mean) * (x - mean);
        sd = xs.size() > 1 ? std::sqrt(ss / static_cast<double>(xs.size() - 1)) : 0.0;
      }
      s.stats[col] = {mean, sd};
    }
    for (std::size_t t = i; t < j; ++t) (sorted[t].ok() ? s.trials : s.failures) += 1;
    out.push_back(std::move(s));
    i = j;
  }
  return out;
}

inline const char* kResultsHeader =
    "scenario_id,deploy_seed,code_seed,rho,scheme,trees,k_total,eps_vec,eps_mat,energy,energy_baseline,mu,wall_ms";

/// One row per trial, then per cell a "mean" and a "std" row (deploy_seed
/// column) over the successful trials. Rows are sorted, so the output only
/// depends on the set of records.
inline std::string format_results_csv(const std::vector<TrialRecord>& records) {
  using detail::format_number;
  std::string out = std::string(kResultsHeader) + "\n";
  auto prefix = [](const std::string& id, const std::string& deploy, const std::string& code, double rho,
                   const std::string& scheme, std::size_t trees, std::size_t k) {
    return id + "," + deploy + "," + code + "," + format_number(rho) + "," + scheme + "," + std::to_string(trees) +
           "," + std::to_string(k);
  };
  for (const auto& r : sorted_records(records))
    out += prefix(r.scenario_id, std::to_string(r.deploy_seed), std::to_string(r.code_seed), r.rho, r.scheme, r.trees,
                  r.k_total) +
           "," + format_number(r.eps_vec) + "," + format_number(r.eps_mat) + "," + format_number(r.energy) + "," +
           format_number(r.energy_baseline) + "," + format_number(r.mu) + "," + format_number(r.wall_ms) + "\n";
  for (const auto& s : summarize(records))
    for (int which = 0; which < 2; ++which) {
      auto pick = [&](const char* col) {
        const auto& st = s.stats.at(col);
        return format_number(which == 0 ? st.first : st.second);
      };
      out += prefix(s.scenario_id, which == 0 ? "mean" : "std", "", s.rho, s.scheme, s.trees, s.k_total) + "," +
             pick("eps_vec") + "," + pick("eps_mat") + "," + pick("energy") + "," + pick("energy_baseline") + "," +
             pick("mu") + "," + pick("wall_ms") + "\n";
    }
  return out;
}

inline void emit_results_csv(const std::vector<TrialRecord>& records, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write " + path);
  out << format_results_csv(records);
  if (!out) throw io_error("write failed: " + path);
}

}  // namespace deca::experiments
