#pragma once

// Diffusion-wavelet bases on distance-weighted correlation graphs.
//
// Pipeline: positions -> adjacency Omega (d^alpha off the diagonal, beta on
// it) -> normalized Laplacian -> diffusion operator O with spectrum in
// [0, 1] -> multiscale orthonormal basis. Level j keeps the eigenvectors of
// O whose eigenvalue^(2^j) is still above the threshold (the scaling space
// U_j); the ones dropped between levels j-1 and j span the wavelet space V_j.

#include "deca/errors.hpp"
#include "deca/linalg.hpp"
#include "deca/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace deca::wavelets {

using linalg::Matrix;
using linalg::Vector;
using network::Point;

enum class OperatorKind { IdentityMinusLaplacian, HalfLaplacian };

inline std::string to_string(OperatorKind k) {
  return k == OperatorKind::IdentityMinusLaplacian ? "I_MINUS_LAMBDA" : "LAMBDA_OVER_2";
}

inline OperatorKind operator_kind_from_string(const std::string& s) {
  if (s == "I_MINUS_LAMBDA") return OperatorKind::IdentityMinusLaplacian;
  if (s == "LAMBDA_OVER_2") return OperatorKind::HalfLaplacian;
  throw std::invalid_argument("unknown operator kind '" + s + "'");
}

struct LaplacianSpec {
  double alpha = -1.0;  // distance exponent, < 0
  double beta = 1.0;    // self weight, >= 0
  OperatorKind kind = OperatorKind::IdentityMinusLaplacian;

  void validate() const {
    if (!(alpha < 0.0)) throw std::invalid_argument("LaplacianSpec: alpha must be negative");
    if (!(beta >= 0.0)) throw std::invalid_argument("LaplacianSpec: beta must be non-negative");
  }
};

/// Omega_ij = d(i,j)^alpha for every pair i != j, Omega_ii = beta.
inline Matrix build_adjacency(std::span<const Point> positions, const LaplacianSpec& spec) {
  spec.validate();
  const auto n = static_cast<Eigen::Index>(positions.size());
  Matrix omega(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    omega(i, i) = spec.beta;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double d = network::distance(positions[i], positions[j]);
      if (d <= 0.0) throw std::invalid_argument("build_adjacency: coincident nodes");
      omega(i, j) = omega(j, i) = std::pow(d, spec.alpha);
    }
  }
  return omega;
}

/// Lambda = I - D^{-1/2} Omega D^{-1/2} with deg(i) = sum_p Omega_ip, the
/// self weight included, so Lambda_ii = 1 - Omega_ii / deg(i).
inline Matrix build_normalized_laplacian(const Matrix& omega) {
  if (omega.rows() != omega.cols()) throw std::invalid_argument("laplacian: adjacency is not square");
  if (!omega.allFinite()) throw std::invalid_argument("laplacian: non-finite weight");
  if ((omega.array() < 0.0).any()) throw std::invalid_argument("laplacian: negative weight");
  const double scale = std::max(1.0, omega.cwiseAbs().maxCoeff());
  if ((omega - omega.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw std::invalid_argument("laplacian: adjacency is not symmetric");
  const Vector deg = omega.rowwise().sum();
  if ((deg.array() <= 0.0).any()) throw std::invalid_argument("laplacian: zero degree");
  const Vector inv_sqrt = deg.array().rsqrt();
  Matrix lap = -(inv_sqrt.asDiagonal() * omega * inv_sqrt.asDiagonal());
  lap.diagonal().array() += 1.0;
  return 0.5 * (lap + lap.transpose());
}

inline constexpr double kSpectrumTolerance = 1e-10;

/// O = I - Lambda or Lambda / 2. The first needs sigma_max(Lambda) <= 1;
/// otherwise spectrum_error is raised and the caller should raise beta or
/// switch to Lambda / 2.
inline Matrix build_operator(const Matrix& laplacian, OperatorKind kind) {
  if (laplacian.rows() != laplacian.cols()) throw std::invalid_argument("operator: Laplacian is not square");
  const auto n = laplacian.rows();
  if (kind == OperatorKind::HalfLaplacian) return 0.5 * laplacian;
  Matrix op = Matrix::Identity(n, n) - laplacian;
  // O + tol*I is positive definite iff sigma_max(Lambda) < 1 + tol.
  Matrix shifted = op;
  shifted.diagonal().array() += kSpectrumTolerance;
  Eigen::LLT<Matrix> llt(shifted);
  if (llt.info() != Eigen::Success)
    throw spectrum_error("I - Lambda has negative eigenvalues (sigma_max(Lambda) > 1); raise beta or use Lambda/2");
  return op;
}

/// Orthonormal multiscale basis. Columns are grouped [V_1 .. V_gamma, U_gamma];
/// within a group they are ordered by decreasing operator eigenvalue.
struct DiffusionBasis {
  Matrix basis;                       // N x N
  Vector eigenvalues;                 // operator eigenvalue of each column
  std::vector<std::size_t> offsets;   // gamma + 2 entries: V_1 starts at offsets[0], U_gamma at offsets[gamma]
  int gamma = 0;
  double threshold = 0.0;

  std::size_t dimension() const { return static_cast<std::size_t>(basis.rows()); }
  /// Columns of V_j, j in [1, gamma].
  std::size_t wavelet_count(int j) const { return offsets.at(j) - offsets.at(j - 1); }
  std::size_t scaling_count() const { return offsets.at(gamma + 1) - offsets.at(gamma); }
};

/// dim U_j: eigenvalues of O whose 2^j-th power reaches the threshold.
inline std::size_t scaling_dimension(const Vector& op_eigenvalues, int level, double threshold) {
  const double power = std::ldexp(1.0, level);
  std::size_t count = 0;
  for (Eigen::Index i = 0; i < op_eigenvalues.size(); ++i)
    if (std::pow(std::abs(op_eigenvalues(i)), power) >= threshold) ++count;
  return count;
}

inline DiffusionBasis build_basis(const Matrix& op, int gamma, double threshold) {
  if (op.rows() != op.cols()) throw std::invalid_argument("build_basis: operator is not square");
  if (gamma < 1) throw std::invalid_argument("build_basis: gamma must be >= 1");
  if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("build_basis: threshold must lie in (0, 1)");
  const auto n = op.rows();
  const auto eig = linalg::symmetric_eigen(0.5 * (op + op.transpose()));

  // Level at which each eigenvector leaves the scaling space; gamma + 1 means
  // it survives into U_gamma.
  std::vector<int> level(static_cast<std::size_t>(n), gamma + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double lam = std::min(1.0, std::abs(eig.values(i)));
    for (int j = 1; j <= gamma; ++j)
      if (std::pow(lam, std::ldexp(1.0, j)) < threshold) {
        level[static_cast<std::size_t>(i)] = j;
        break;
      }
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    const auto la = level[static_cast<std::size_t>(a)];
    const auto lb = level[static_cast<std::size_t>(b)];
    if (la != lb) return la < lb;
    return eig.values(a) > eig.values(b);
  });

  DiffusionBasis out;
  out.gamma = gamma;
  out.threshold = threshold;
  out.basis.resize(n, n);
  out.eigenvalues.resize(n);
  out.offsets.assign(static_cast<std::size_t>(gamma) + 2, 0);
  for (Eigen::Index c = 0; c < n; ++c) {
    out.basis.col(c) = eig.vectors.col(order[static_cast<std::size_t>(c)]);
    out.eigenvalues(c) = eig.values(order[static_cast<std::size_t>(c)]);
  }
  // offsets[j-1] is where V_j starts, offsets[gamma] where U_gamma starts.
  std::size_t acc = 0;
  for (int j = 1; j <= gamma + 1; ++j) {
    out.offsets[static_cast<std::size_t>(j - 1)] = acc;
    acc += static_cast<std::size_t>(std::count(level.begin(), level.end(), j));
  }
  out.offsets[static_cast<std::size_t>(gamma) + 1] = acc;
  return out;
}

/// Coupling between copies of the graph in different rounds:
/// g(x) = exp(rate * (x + 1)). rate = 0 gives unit coupling.
struct TemporalCoupling {
  std::size_t rounds = 2;
  double rate = 0.5;

  double g(std::size_t gap) const { return std::exp(rate * (static_cast<double>(gap) + 1.0)); }
};

/// n|R| x n|R| adjacency: Omega on diagonal blocks, Omega * diag(g(|r1-r2|))
/// off the diagonal, symmetrized.
inline Matrix build_spatiotemporal_adjacency(const Matrix& omega, const TemporalCoupling& coupling) {
  if (coupling.rounds < 2) throw std::invalid_argument("spatio-temporal adjacency needs at least 2 rounds");
  if (!(coupling.rate >= 0.0)) throw std::invalid_argument("temporal coupling must be non-decreasing");
  const auto n = omega.rows();
  const auto rounds = static_cast<Eigen::Index>(coupling.rounds);
  Matrix big(n * rounds, n * rounds);
  for (Eigen::Index r1 = 0; r1 < rounds; ++r1)
    for (Eigen::Index r2 = 0; r2 < rounds; ++r2) {
      if (r1 == r2) {
        big.block(r1 * n, r2 * n, n, n) = omega;
      } else {
        const double w = coupling.g(static_cast<std::size_t>(std::abs(r1 - r2)));
        big.block(r1 * n, r2 * n, n, n) = omega * Vector::Constant(n, w).asDiagonal();
      }
    }
  return 0.5 * (big + big.transpose());
}

struct BasisParams {
  LaplacianSpec laplacian;
  int gamma = 4;
  double threshold = 1e-3;
};

inline DiffusionBasis spatial_basis(std::span<const Point> positions, const BasisParams& p) {
  const Matrix lap = build_normalized_laplacian(build_adjacency(positions, p.laplacian));
  return build_basis(build_operator(lap, p.laplacian.kind), p.gamma, p.threshold);
}

/// Basis over node-major-within-round stacking: entry r*n + i is node i in round r.
inline DiffusionBasis spatiotemporal_basis(std::span<const Point> positions, const TemporalCoupling& coupling,
                                           const BasisParams& p) {
  const Matrix big = build_spatiotemporal_adjacency(build_adjacency(positions, p.laplacian), coupling);
  return build_basis(build_operator(build_normalized_laplacian(big), p.laplacian.kind), p.gamma, p.threshold);
}

// Basis cache: binary dump with a header so a stale file is never reused
// for different parameters. Layout (little endian, native doubles):
//   char[8] "DECABAS1" | u64 N | i32 gamma | f64 threshold | f64 alpha |
//   f64 beta | i32 kind | u64 offsets[gamma+2] | f64 eigenvalues[N] |
//   f64 basis[N*N] column-major

struct BasisCacheKey {
  std::size_t dimension = 0;
  int gamma = 0;
  double threshold = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  OperatorKind kind = OperatorKind::IdentityMinusLaplacian;
};

namespace detail {
inline constexpr char kBasisMagic[8] = {'D', 'E', 'C', 'A', 'B', 'A', 'S', '1'};

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
bool get(std::istream& in, T& v) {
  return static_cast<bool>(in.read(reinterpret_cast<char*>(&v), sizeof(T)));
}
}  // namespace detail

inline std::string basis_cache_name(std::uint64_t deployment_seed, const BasisCacheKey& key) {
  return "basis_" + std::to_string(deployment_seed) + "_" + std::to_string(key.dimension) + "_" +
         to_string(key.kind) + ".bin";
}

inline void save_basis(const std::string& path, const DiffusionBasis& b, const BasisCacheKey& key) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write " + path);
  out.write(detail::kBasisMagic, sizeof detail::kBasisMagic);
  detail::put(out, static_cast<std::uint64_t>(b.dimension()));
  detail::put(out, static_cast<std::int32_t>(b.gamma));
  detail::put(out, b.threshold);
  detail::put(out, key.alpha);
  detail::put(out, key.beta);
  detail::put(out, static_cast<std::int32_t>(key.kind));
  for (auto o : b.offsets) detail::put(out, static_cast<std::uint64_t>(o));
  out.write(reinterpret_cast<const char*>(b.eigenvalues.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(b.eigenvalues.size())));
  out.write(reinterpret_cast<const char*>(b.basis.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(b.basis.size())));
  if (!out) throw io_error("write failed: " + path);
}

/// Returns nothing if the file is missing, truncated or was built with
/// different parameters.
inline std::optional<DiffusionBasis> load_basis(const std::string& path, const BasisCacheKey& key) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, detail::kBasisMagic, sizeof magic) != 0) return std::nullopt;
  std::uint64_t n = 0;
  std::int32_t gamma = 0, kind = 0;
  double threshold = 0, alpha = 0, beta = 0;
  if (!detail::get(in, n) || !detail::get(in, gamma) || !detail::get(in, threshold) || !detail::get(in, alpha) ||
      !detail::get(in, beta) || !detail::get(in, kind))
    return std::nullopt;
  if (n != key.dimension || gamma != key.gamma || threshold != key.threshold || alpha != key.alpha ||
      beta != key.beta || kind != static_cast<std::int32_t>(key.kind))
    return std::nullopt;
  DiffusionBasis b;
  b.gamma = gamma;
  b.threshold = threshold;
  b.offsets.resize(static_cast<std::size_t>(gamma) + 2);
  for (auto& o : b.offsets) {
    std::uint64_t v = 0;
    if (!detail::get(in, v)) return std::nullopt;
    o = static_cast<std::size_t>(v);
  }
  const auto dim = static_cast<Eigen::Index>(n);
  b.eigenvalues.resize(dim);
  b.basis.resize(dim, dim);
  if (!in.read(reinterpret_cast<char*>(b.eigenvalues.data()), static_cast<std::streamsize>(sizeof(double) * n)))
    return std::nullopt;
  if (!in.read(reinterpret_cast<char*>(b.basis.data()), static_cast<std::streamsize>(sizeof(double) * n * n)))
    return std::nullopt;
  return b;
}

}  // namespace deca::wavelets
