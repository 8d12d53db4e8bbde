#pragma once

// Dense linear-algebra helpers. Symmetric eigendecomposition and SVD go
// through LAPACK's divide-and-conquer drivers when the linked LAPACK passes
// a one-time self-check, and through Eigen otherwise.

#include <Eigen/Dense>
#include <lapacke.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace deca::linalg {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct SymmetricEigen {
  Vector values;   // ascending
  Matrix vectors;  // column i pairs with values(i)
};

struct Svd {
  Matrix u;  // rows x r
  Vector s;  // r, non-increasing
  Matrix v;  // cols x r
};

namespace detail {

inline bool lapack_eigen(const Matrix& a, SymmetricEigen& out) {
  const auto n = static_cast<lapack_int>(a.rows());
  out.values.resize(a.rows());
  out.vectors = a;
  return LAPACKE_dsyevd(LAPACK_COL_MAJOR, 'V', 'L', n, out.vectors.data(), n, out.values.data()) == 0;
}

inline bool lapack_svd(const Matrix& a, Svd& out) {
  const auto m = static_cast<lapack_int>(a.rows());
  const auto n = static_cast<lapack_int>(a.cols());
  const lapack_int r = std::min(m, n);
  out.u.resize(m, r);
  out.s.resize(r);
  Matrix work = a;
  Matrix vt(r, n);
  if (LAPACKE_dgesdd(LAPACK_COL_MAJOR, 'S', m, n, work.data(), m, out.s.data(), out.u.data(), m, vt.data(), r) != 0)
    return false;
  out.v = vt.transpose();
  return true;
}

inline Matrix self_check_matrix(Eigen::Index rows, Eigen::Index cols) {
  // Deterministic entries in [-1, 1) from a 64-bit LCG.
  std::uint64_t state = 0x9E3779B97F4A7C15ull;
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) {
      state = state * 6364136223846793005ull + 1442695040888963407ull;
      m(i, j) = static_cast<double>(state >> 11) * 0x1.0p-52 - 1.0;
    }
  return m;
}

/// Some optimized BLAS kernels return garbage on CPUs they misdetect; the
/// blocked code paths only kick in above ~100 rows, so check at 256.
inline bool lapack_self_check() {
  const Matrix g = self_check_matrix(256, 256);
  const Matrix sym = g + g.transpose();
  SymmetricEigen e;
  if (!lapack_eigen(sym, e)) return false;
  const double scale = sym.norm();
  if ((sym * e.vectors - e.vectors * e.values.asDiagonal()).norm() > 1e-10 * scale) return false;
  if ((e.vectors.transpose() * e.vectors - Matrix::Identity(256, 256)).norm() > 1e-10) return false;

  const Matrix rect = g.leftCols(200);
  Svd s;
  if (!lapack_svd(rect, s)) return false;
  return (rect - s.u * s.s.asDiagonal() * s.v.transpose()).norm() <= 1e-10 * rect.norm();
}

}  // namespace detail

/// True when LAPACK is used; false when every call goes through Eigen.
inline bool lapack_enabled() {
  static const bool ok = detail::lapack_self_check();
  return ok;
}

inline SymmetricEigen symmetric_eigen(const Matrix& a) {
  if (a.rows() != a.cols()) throw std::invalid_argument("symmetric_eigen: matrix is not square");
  SymmetricEigen out;
  if (a.rows() == 0) return out;
  if (lapack_enabled() && detail::lapack_eigen(a, out)) return out;
  Eigen::SelfAdjointEigenSolver<Matrix> solver(a);
  if (solver.info() != Eigen::Success) throw std::runtime_error("symmetric_eigen: no convergence");
  out.values = solver.eigenvalues();
  out.vectors = solver.eigenvectors();
  return out;
}

inline Svd thin_svd(const Matrix& a) {
  Svd out;
  if (std::min(a.rows(), a.cols()) == 0) {
    out.u.resize(a.rows(), 0);
    out.v.resize(a.cols(), 0);
    return out;
  }
  if (lapack_enabled() && detail::lapack_svd(a, out)) return out;
  Eigen::BDCSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  out.u = svd.matrixU();
  out.s = svd.singularValues();
  out.v = svd.matrixV();
  return out;
}

inline Vector singular_values(const Matrix& a) {
  const auto m = static_cast<lapack_int>(a.rows());
  const auto n = static_cast<lapack_int>(a.cols());
  const lapack_int r = std::min(m, n);
  Vector s(r);
  if (r == 0) return s;
  if (lapack_enabled()) {
    Matrix work = a;
    if (LAPACKE_dgesdd(LAPACK_COL_MAJOR, 'N', m, n, work.data(), m, s.data(), nullptr, 1, nullptr, 1) == 0) return s;
  }
  return Eigen::BDCSVD<Matrix>(a).singularValues();
}

inline double spectral_norm(const Matrix& a) {
  const Vector s = singular_values(a);
  return s.size() == 0 ? 0.0 : s(0);
}

inline bool all_finite(const Matrix& a) { return a.allFinite(); }

}  // namespace deca::linalg
