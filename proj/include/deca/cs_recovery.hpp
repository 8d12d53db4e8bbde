#pragma once

// Compressed-sensing coding and first-level recovery.
//
// Recovery solves  min ||w||_1  s.t.  ||Phi Psi w - v||_2 <= epsilon  by
// accelerated proximal gradient (soft thresholding, step 1/L with
// L = ||Phi Psi||_2^2, gradient-based momentum restart) on
//   lambda ||w||_1 + 1/2 ||Phi Psi w - v||_2^2,
// shrinking lambda geometrically until the residual drops below epsilon and
// then refining lambda so the residual sits on the constraint boundary.

#include "deca/errors.hpp"
#include "deca/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace deca::cs {

using linalg::Matrix;
using linalg::Vector;

enum class EntryKind { Gaussian, Bernoulli };

inline std::string to_string(EntryKind k) { return k == EntryKind::Gaussian ? "GAUSSIAN" : "BERNOULLI"; }

inline EntryKind entry_kind_from_string(const std::string& s) {
  if (s == "GAUSSIAN") return EntryKind::Gaussian;
  if (s == "BERNOULLI") return EntryKind::Bernoulli;
  throw std::invalid_argument("unknown sensing entry kind '" + s + "'");
}

struct BlockShape {
  std::size_t rows = 0;  // k_i
  std::size_t cols = 0;  // n_i
};

/// k x n sensing matrix, either dense or block diagonal. Entries are
/// N(0, 1/k_b) or +-1/sqrt(k_b) with k_b the row count of the entry's block.
class SensingMatrix {
 public:
  /// Wraps an explicit matrix as a single dense block.
  explicit SensingMatrix(Matrix m) : matrix_(std::move(m)) {
    if (!matrix_.allFinite()) throw std::invalid_argument("sensing matrix: non-finite entry");
    blocks_.push_back({static_cast<std::size_t>(matrix_.rows()), static_cast<std::size_t>(matrix_.cols())});
  }

  SensingMatrix(std::vector<BlockShape> blocks, EntryKind kind, std::uint64_t seed)
      : blocks_(std::move(blocks)), kind_(kind), seed_(seed) {
    if (blocks_.empty()) throw std::invalid_argument("sensing matrix: no blocks");
    std::size_t k = 0, n = 0;
    for (const auto& b : blocks_) {
      if (b.rows < 1 || b.cols < 1) throw std::invalid_argument("sensing matrix: empty block");
      if (b.rows > b.cols) throw std::invalid_argument("sensing matrix: more measurements than coordinates");
      k += b.rows;
      n += b.cols;
    }
    matrix_ = Matrix::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
    std::mt19937_64 rng(seed);
    Eigen::Index r0 = 0, c0 = 0;
    for (const auto& b : blocks_) {
      const double scale = 1.0 / std::sqrt(static_cast<double>(b.rows));
      std::normal_distribution<double> normal(0.0, scale);
      std::bernoulli_distribution coin(0.5);
      for (std::size_t c = 0; c < b.cols; ++c)
        for (std::size_t r = 0; r < b.rows; ++r)
          matrix_(r0 + static_cast<Eigen::Index>(r), c0 + static_cast<Eigen::Index>(c)) =
              kind == EntryKind::Gaussian ? normal(rng) : (coin(rng) ? scale : -scale);
      r0 += static_cast<Eigen::Index>(b.rows);
      c0 += static_cast<Eigen::Index>(b.cols);
    }
  }

  std::size_t k() const { return static_cast<std::size_t>(matrix_.rows()); }
  std::size_t n() const { return static_cast<std::size_t>(matrix_.cols()); }
  bool block_diagonal() const { return blocks_.size() > 1; }
  const std::vector<BlockShape>& blocks() const { return blocks_; }
  EntryKind entry_kind() const { return kind_; }
  std::uint64_t seed() const { return seed_; }
  /// The assembled k x n matrix (zeros off the blocks).
  const Matrix& dense() const { return matrix_; }

  Matrix block(std::size_t i) const {
    Eigen::Index r0 = 0, c0 = 0;
    for (std::size_t b = 0; b < i; ++b) {
      r0 += static_cast<Eigen::Index>(blocks_.at(b).rows);
      c0 += static_cast<Eigen::Index>(blocks_.at(b).cols);
    }
    const auto& s = blocks_.at(i);
    return matrix_.block(r0, c0, static_cast<Eigen::Index>(s.rows), static_cast<Eigen::Index>(s.cols));
  }

 private:
  Matrix matrix_;
  std::vector<BlockShape> blocks_;
  EntryKind kind_ = EntryKind::Gaussian;
  std::uint64_t seed_ = 0;
};

inline SensingMatrix make_sensing_matrix(std::size_t k, std::size_t n, EntryKind kind, std::uint64_t seed) {
  if (k > n) throw std::invalid_argument("make_sensing_matrix: k > n");
  return SensingMatrix({{k, n}}, kind, seed);
}

inline SensingMatrix make_block_sensing_matrix(std::vector<BlockShape> blocks, EntryKind kind, std::uint64_t seed) {
  return SensingMatrix(std::move(blocks), kind, seed);
}

/// v = Phi u. Block-diagonal matrices encode each block on its own slice of
/// u, which is what per-tree in-network aggregation produces.
inline Vector encode(const SensingMatrix& phi, const Vector& u) {
  if (static_cast<std::size_t>(u.size()) != phi.n()) throw std::invalid_argument("encode: dimension mismatch");
  if (!phi.block_diagonal()) return phi.dense() * u;
  Vector v(static_cast<Eigen::Index>(phi.k()));
  Eigen::Index r0 = 0, c0 = 0;
  for (std::size_t i = 0; i < phi.blocks().size(); ++i) {
    const auto& s = phi.blocks()[i];
    const auto rows = static_cast<Eigen::Index>(s.rows);
    const auto cols = static_cast<Eigen::Index>(s.cols);
    v.segment(r0, rows) = phi.dense().block(r0, c0, rows, cols) * u.segment(c0, cols);
    r0 += rows;
    c0 += cols;
  }
  return v;
}

struct SolverOptions {
  std::size_t max_iterations = 10000;
  double tolerance = 1e-8;        // optimality violation / lambda ending the final stage
  double stage_tolerance = 1e-3;  // same, for intermediate lambda stages
  double continuation = 0.5;      // lambda multiplier between stages
  double residual_slack = 1e-3;   // the final residual lands in [(1 - slack) eps, eps]
};

/// Default epsilon: a fixed fraction of the measurement norm.
inline double default_epsilon(const Vector& v, double eta = 0.01) { return eta * v.norm(); }

struct L1Solution {
  Vector w;
  double residual = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  double lambda = 0.0;
};

namespace detail {

inline void soft_threshold(Vector& x, double t) {
  x = x.array().sign() * (x.array().abs() - t).max(0.0);
}

/// Largest violation of 0 in grad + lambda * d||w||_1.
inline double l1_optimality_violation(const Vector& w, const Vector& grad, double lambda) {
  double viol = 0.0;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    const double g = grad(i);
    viol = std::max(viol, w(i) > 0.0   ? std::abs(g + lambda)
                          : w(i) < 0.0 ? std::abs(g - lambda)
                                       : std::max(std::abs(g) - lambda, 0.0));
  }
  return viol;
}

}  // namespace detail

/// min ||w||_1 s.t. ||A w - v||_2 <= epsilon. epsilon is floored at
/// 1e-12 ||v|| so that epsilon = 0 terminates.
inline L1Solution solve_l1_ball(const Matrix& a, const Vector& v, double epsilon, const SolverOptions& opts = {}) {
  if (a.rows() != v.size()) throw std::invalid_argument("solve_l1_ball: dimension mismatch");
  if (!a.allFinite() || !v.allFinite()) throw std::invalid_argument("solve_l1_ball: non-finite input");
  if (!(epsilon >= 0.0)) throw std::invalid_argument("solve_l1_ball: epsilon must be non-negative");
  if (!(opts.continuation > 0.0 && opts.continuation < 1.0))
    throw std::invalid_argument("solve_l1_ball: continuation factor must lie in (0, 1)");

  L1Solution out;
  out.w = Vector::Zero(a.cols());
  const double target = std::max(epsilon, 1e-12 * v.norm());
  out.residual = v.norm();
  if (out.residual <= target) {
    out.converged = true;
    return out;
  }
  const double norm_a = linalg::spectral_norm(a);
  if (norm_a == 0.0) return out;
  const double step = 1.0 / (norm_a * norm_a);
  const double grad_scale = (a.transpose() * v).cwiseAbs().maxCoeff();

  // Iterate state: w, A w and the gradient A^T (A w - v).
  Vector w = Vector::Zero(a.cols());
  Vector aw = Vector::Zero(a.rows());
  Vector grad = -(a.transpose() * v);
  double lambda = grad_scale;

  // Accelerated proximal gradient with restart on lambda ||w||_1 + 1/2 ||A w - v||^2.
  auto run_stage = [&](double tol) {
    Vector y = w, ay = aw, gy = grad;
    double t = 1.0;
    const double floor = 1e-14 * grad_scale;
    while (out.iterations < opts.max_iterations) {
      Vector w_next = y - step * gy;
      detail::soft_threshold(w_next, step * lambda);
      Vector aw_next = a * w_next;
      Vector grad_next = a.transpose() * (aw_next - v);
      ++out.iterations;
      const Vector dw = w_next - w;
      double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      if ((y - w_next).dot(dw) > 0.0) {  // momentum is pointing uphill
        t = 1.0;
        t_next = 1.0;
      }
      const double beta = (t - 1.0) / t_next;
      y = w_next + beta * dw;
      ay = aw_next + beta * (aw_next - aw);
      gy = grad_next + beta * (grad_next - grad);
      w.swap(w_next);
      aw.swap(aw_next);
      grad.swap(grad_next);
      t = t_next;
      if (detail::l1_optimality_violation(w, grad, lambda) <= std::max(tol * lambda, floor)) return true;
    }
    return false;
  };

  // Shrink lambda until the residual fits, then bisect (in log scale)
  // between the last infeasible and first feasible lambda so that the
  // residual sits just inside the ball, where the penalized and
  // constrained problems share a minimizer.
  double lambda_hi = lambda;  // residual above target
  bool bracketed = false;
  Vector best_w;
  double best_residual = 0.0, best_lambda = 0.0;
  while (out.iterations < opts.max_iterations) {
    const bool stage_ok = run_stage(bracketed ? opts.tolerance : opts.stage_tolerance);
    const double residual = (aw - v).norm();
    if (residual <= target) {
      if (!bracketed) {
        bracketed = true;
        if (!run_stage(opts.tolerance)) break;
        continue;  // re-evaluate the residual at full accuracy
      }
      best_w = w;
      best_residual = residual;
      best_lambda = lambda;
      if (stage_ok && (residual >= (1.0 - opts.residual_slack) * target || lambda_hi / lambda < 1.0 + 1e-9)) {
        out.converged = true;
        break;
      }
      const double lo = lambda;
      lambda = std::sqrt(lo * lambda_hi);
      if (lambda <= lo || lambda >= lambda_hi) {
        out.converged = stage_ok;
        break;
      }
    } else if (!bracketed) {
      lambda_hi = lambda;
      lambda *= opts.continuation;
    } else {
      lambda_hi = lambda;
      if (best_w.size() == 0) {
        lambda *= opts.continuation;  // the feasible point seen earlier was not fully converged
      } else {
        lambda = std::sqrt(best_lambda * lambda_hi);
        if (lambda <= best_lambda || lambda >= lambda_hi) {
          out.converged = true;
          break;
        }
      }
    }
  }
  if (best_w.size() != 0) {
    out.w = std::move(best_w);
    out.residual = best_residual;
    out.lambda = best_lambda;
  } else {
    out.w = std::move(w);
    out.residual = (a * out.w - v).norm();
    out.lambda = lambda;
    out.converged = false;
  }
  out.residual = (a * out.w - v).norm();
  out.converged = out.converged && out.residual <= target;
  return out;
}

struct RecoveryResult {
  Vector w_hat;
  Vector u_hat;  // basis * w_hat
  double residual_l2 = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

namespace detail {

inline RecoveryResult finish(L1Solution sol, const Matrix& psi) {
  RecoveryResult r;
  r.u_hat = psi * sol.w;
  r.w_hat = std::move(sol.w);
  r.residual_l2 = sol.residual;
  r.iterations = sol.iterations;
  r.converged = sol.converged;
  return r;
}

}  // namespace detail

/// u_hat = Psi w_hat with w_hat the l1-minimal coefficients consistent with v.
inline RecoveryResult recover(const Vector& v, const Matrix& phi, const Matrix& psi, double epsilon,
                              const SolverOptions& opts = {}) {
  if (phi.cols() != psi.rows() || psi.rows() != psi.cols()) throw std::invalid_argument("recover: dimension mismatch");
  if (!phi.allFinite() || !psi.allFinite()) throw std::invalid_argument("recover: non-finite input");
  return detail::finish(solve_l1_ball(phi * psi, v, epsilon, opts), psi);
}

inline RecoveryResult recover(const Vector& v, const SensingMatrix& phi, const Matrix& psi, double epsilon,
                              const SolverOptions& opts = {}) {
  return recover(v, phi.dense(), psi, epsilon, opts);
}

/// Joint recovery with a block-diagonal Phi over the whole-network basis.
/// Column c of Phi measures node order[c]; u_hat comes back in node order.
inline RecoveryResult recover_joint(const Vector& v, const SensingMatrix& phi, const Matrix& psi,
                                    std::span<const std::size_t> order, double epsilon,
                                    const SolverOptions& opts = {}) {
  const std::size_t n = static_cast<std::size_t>(psi.rows());
  if (order.size() != n || phi.n() != n) throw std::invalid_argument("recover_joint: ordering does not match Phi/Psi");
  std::vector<char> seen(n, 0);
  for (auto i : order) {
    if (i >= n || seen[i]) throw std::invalid_argument("recover_joint: ordering is not a permutation");
    seen[i] = 1;
  }
  Matrix psi_rows(psi.rows(), psi.cols());
  for (std::size_t c = 0; c < n; ++c) psi_rows.row(static_cast<Eigen::Index>(c)) = psi.row(static_cast<Eigen::Index>(order[c]));
  if (!psi.allFinite()) throw std::invalid_argument("recover_joint: non-finite basis");
  return detail::finish(solve_l1_ball(phi.dense() * psi_rows, v, epsilon, opts), psi);
}

/// mu = max over (cluster t, column j) of sum_{i in t} psi_ij^2.
inline double compute_energy_overlap(const std::vector<std::vector<std::size_t>>& partition, const Matrix& psi) {
  const auto n = static_cast<std::size_t>(psi.rows());
  std::vector<char> seen(n, 0);
  std::size_t covered = 0;
  for (const auto& cluster : partition)
    for (auto i : cluster) {
      if (i >= n || seen[i]) throw std::invalid_argument("energy overlap: partition is not a cover of the nodes");
      seen[i] = 1;
      ++covered;
    }
  if (covered != n) throw std::invalid_argument("energy overlap: partition is not a cover of the nodes");
  double mu = 0.0;
  for (const auto& cluster : partition) {
    Vector mass = Vector::Zero(psi.cols());
    for (auto i : cluster) mass += psi.row(static_cast<Eigen::Index>(i)).cwiseAbs2().transpose();
    mu = std::max(mu, mass.maxCoeff());
  }
  return mu;
}

/// Measurement dump: "tree_id,row_index,value" per coded item.
inline void save_measurements_csv(const std::string& path, const Vector& v, const std::vector<BlockShape>& blocks) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write " + path);
  out << "tree_id,row_index,value\n";
  Eigen::Index pos = 0;
  char buf[32];
  for (std::size_t t = 0; t < blocks.size(); ++t)
    for (std::size_t r = 0; r < blocks[t].rows; ++r, ++pos) {
      std::snprintf(buf, sizeof buf, "%.17g", v(pos));
      out << t << ',' << r << ',' << buf << '\n';
    }
  if (!out) throw io_error("write failed: " + path);
}

}  // namespace deca::cs
