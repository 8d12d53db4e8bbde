#pragma once

// Second-level recovery: the full field from the per-node estimates at the
// covered cells, by nuclear-norm minimization under an l2 data constraint.

#include "deca/errors.hpp"
#include "deca/linalg.hpp"
#include "deca/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace deca::mc {

using linalg::Matrix;
using linalg::Vector;

struct Observation {
  std::size_t row = 0;
  std::size_t col = 0;
  double value = 0.0;
};

struct ObservationSet {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<Observation> entries;

  void validate() const {
    if (rows < 1 || cols < 1) throw std::invalid_argument("observations: empty grid");
    if (entries.empty()) throw std::invalid_argument("observations: no entries");
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (const auto& e : entries) {
      if (e.row >= rows || e.col >= cols) throw std::invalid_argument("observations: entry outside the grid");
      if (!std::isfinite(e.value)) throw std::invalid_argument("observations: non-finite value");
      if (!seen.emplace(e.row, e.col).second) throw std::invalid_argument("observations: repeated position");
    }
  }
};

/// One observation per node: the node's cell carries values(i).
inline ObservationSet observations_from(const network::Deployment& d, const Vector& values) {
  if (static_cast<std::size_t>(values.size()) != d.size())
    throw std::invalid_argument("observations_from: one value per node required");
  ObservationSet obs{static_cast<std::size_t>(d.grid.rows), static_cast<std::size_t>(d.grid.cols), {}};
  obs.entries.reserve(d.size());
  for (std::size_t i = 0; i < d.size(); ++i)
    obs.entries.push_back({static_cast<std::size_t>(d.cells[i].row), static_cast<std::size_t>(d.cells[i].col),
                           values(static_cast<Eigen::Index>(i))});
  return obs;
}

struct CompletionOptions {
  std::size_t max_iterations = 5000;
  double tolerance = 1e-8;        // relative change of X (or proximal step / mu) ending the final stage
  double stage_tolerance = 1e-3;  // proximal step / mu ending intermediate shrinkage stages
  double continuation = 0.25;     // shrinkage multiplier between stages
  double residual_slack = 1e-3;   // the final residual lands in [(1 - slack) delta, delta]
};

struct CompletionResult {
  Matrix x_hat;
  Vector singular_values;  // non-increasing
  std::size_t numerical_rank = 0;
  double data_residual = 0.0;  // ||u_hat - P_Pi(X_hat)||_2
  std::size_t iterations = 0;
  bool converged = false;
};

namespace detail {

inline Matrix shrink_singular_values(const Matrix& g, double mu) {
  auto svd = linalg::thin_svd(g);
  Eigen::Index keep = 0;
  while (keep < svd.s.size() && svd.s(keep) > mu) ++keep;
  if (keep == 0) return Matrix::Zero(g.rows(), g.cols());
  const Vector s = svd.s.head(keep).array() - mu;
  return svd.u.leftCols(keep) * s.asDiagonal() * svd.v.leftCols(keep).transpose();
}

}  // namespace detail

/// min ||X||_* s.t. ||u_hat - P_Pi(X)||_2 <= delta, by accelerated singular
/// value soft-thresholding (step 1, momentum restart) on
/// mu ||X||_* + 1/2 ||P_Pi(X) - b||^2, with mu shrunk geometrically until the
/// residual meets delta and then refined so the residual sits on the
/// constraint boundary. delta is floored at 1e-12 ||b|| so that delta = 0
/// terminates.
inline CompletionResult complete(const ObservationSet& obs, double delta, const CompletionOptions& opts = {}) {
  if (!(delta >= 0.0)) throw std::invalid_argument("complete: delta must be non-negative");
  if (!(opts.continuation > 0.0 && opts.continuation < 1.0))
    throw std::invalid_argument("complete: continuation factor must lie in (0, 1)");
  obs.validate();
  const auto rows = static_cast<Eigen::Index>(obs.rows);
  const auto cols = static_cast<Eigen::Index>(obs.cols);
  Matrix mask = Matrix::Zero(rows, cols);
  Matrix b = Matrix::Zero(rows, cols);
  for (const auto& e : obs.entries) {
    mask(static_cast<Eigen::Index>(e.row), static_cast<Eigen::Index>(e.col)) = 1.0;
    b(static_cast<Eigen::Index>(e.row), static_cast<Eigen::Index>(e.col)) = e.value;
  }
  const double b_norm = b.norm();
  const double target = std::max(delta, 1e-12 * b_norm);

  CompletionResult out;
  out.x_hat = Matrix::Zero(rows, cols);
  auto residual = [&](const Matrix& m) { return (mask.cwiseProduct(m) - b).norm(); };
  out.data_residual = b_norm;

  if (b_norm <= target) {
    out.converged = true;
  } else {
    const double sigma_b = linalg::spectral_norm(b);
    double mu = sigma_b;
    Matrix x = Matrix::Zero(rows, cols);
    auto run_stage = [&](double tol) {
      Matrix y = x, x_next;
      double t = 1.0;
      const double floor = 1e-14 * sigma_b;
      while (out.iterations < opts.max_iterations) {
        x_next = detail::shrink_singular_values(y - mask.cwiseProduct(y - b), mu);
        ++out.iterations;
        const double step_norm = (y - x_next).norm();
        const Matrix dx = x_next - x;
        const double change = dx.norm() / std::max(x_next.norm(), 1e-300);
        double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        if ((y - x_next).cwiseProduct(dx).sum() > 0.0) {
          t = 1.0;
          t_next = 1.0;
        }
        y = x_next + ((t - 1.0) / t_next) * dx;
        x.swap(x_next);
        t = t_next;
        if (step_norm <= std::max(tol * mu, floor)) return true;
        if (tol <= opts.tolerance && change < opts.tolerance) return true;
      }
      return false;
    };

    double mu_hi = mu;  // residual above target
    bool bracketed = false;
    Matrix best;
    double best_mu = 0.0;
    while (out.iterations < opts.max_iterations) {
      const bool stage_ok = run_stage(bracketed ? opts.tolerance : opts.stage_tolerance);
      const double res = residual(x);
      if (res <= target) {
        if (!bracketed) {
          bracketed = true;
          if (!run_stage(opts.tolerance)) break;
          continue;
        }
        best = x;
        best_mu = mu;
        if (stage_ok && (res >= (1.0 - opts.residual_slack) * target || mu_hi / mu < 1.0 + 1e-9)) {
          out.converged = true;
          break;
        }
        const double lo = mu;
        mu = std::sqrt(lo * mu_hi);
        if (mu <= lo || mu >= mu_hi) {
          out.converged = stage_ok;
          break;
        }
      } else {
        mu_hi = mu;
        if (!bracketed || best.size() == 0) {
          mu *= opts.continuation;
        } else {
          mu = std::sqrt(best_mu * mu_hi);
          if (mu <= best_mu || mu >= mu_hi) {
            out.converged = true;
            break;
          }
        }
      }
    }
    if (best.size() != 0) {
      out.x_hat = std::move(best);
    } else {
      out.x_hat = std::move(x);
      out.converged = false;
    }
    out.data_residual = residual(out.x_hat);
    out.converged = out.converged && out.data_residual <= target;
  }
  out.singular_values = linalg::singular_values(out.x_hat);
  const double cutoff = out.singular_values.size() ? 1e-6 * out.singular_values(0) : 0.0;
  out.numerical_rank = static_cast<std::size_t>((out.singular_values.array() > cutoff).count());
  if (out.singular_values.size() && out.singular_values(0) == 0.0) out.numerical_rank = 0;
  return out;
}

/// Error bound on ||X_hat - F||_2 for n observed cells out of a x b.
inline double completion_error_bound(double a, double b, double n, double delta) {
  if (!(a > 0 && b > 0 && n > 0) || delta < 0) throw std::invalid_argument("completion_error_bound: bad arguments");
  return (4.0 * std::sqrt((2.0 * a * b + n) * std::min(a, b) / n) + 2.0) * delta;
}

/// ||F - X_hat||_2 / ||F||_2 with the spectral norm.
inline double field_error(const Matrix& x_hat, const Matrix& reference) {
  if (x_hat.rows() != reference.rows() || x_hat.cols() != reference.cols())
    throw std::invalid_argument("field_error: dimension mismatch");
  const double ref = linalg::spectral_norm(reference);
  if (ref == 0.0) throw std::invalid_argument("field_error: zero reference");
  return linalg::spectral_norm(reference - x_hat) / ref;
}

inline double field_error_frobenius(const Matrix& x_hat, const Matrix& reference) {
  if (x_hat.rows() != reference.rows() || x_hat.cols() != reference.cols())
    throw std::invalid_argument("field_error: dimension mismatch");
  const double ref = reference.norm();
  if (ref == 0.0) throw std::invalid_argument("field_error: zero reference");
  return (reference - x_hat).norm() / ref;
}

/// ||u - u_hat||_2 / ||u||_2.
inline double vector_error(const Vector& u_hat, const Vector& reference) {
  if (u_hat.size() != reference.size()) throw std::invalid_argument("vector_error: dimension mismatch");
  const double ref = reference.norm();
  if (ref == 0.0) throw std::invalid_argument("vector_error: zero reference");
  return (reference - u_hat).norm() / ref;
}

/// "index,sigma" per singular value.
inline void save_singular_values_csv(const std::string& path, const Vector& sigma) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write " + path);
  out << "index,sigma\n";
  char buf[32];
  for (Eigen::Index i = 0; i < sigma.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", sigma(i));
    out << i << ',' << buf << '\n';
  }
  if (!out) throw io_error("write failed: " + path);
}

}  // namespace deca::mc
