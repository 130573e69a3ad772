#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "aploc/errors.hpp"

namespace aploc {

// Dense column-major 64-bit matrices/vectors throughout (Eigen defaults).
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct Covariance {
  Matrix C;  // symmetric M x M
  int dim() const { return static_cast<int>(C.rows()); }
};

// Orthogonal projector onto some column span.
struct Projector {
  Matrix P;  // symmetric idempotent M x M
  int basisRank = 0;
  int dim() const { return static_cast<int>(P.rows()); }
};

// Top-Q eigenpairs of a covariance matrix.
struct SubspaceDecomp {
  Matrix Us;       // M x Q, orthonormal columns
  Vector lambdas;  // Q, descending, nonnegative up to roundoff
  Vector u1() const { return Us.col(0); }
  int rank() const { return static_cast<int>(Us.cols()); }
};

// C = Y Y^T, symmetrized.
inline Covariance covariance(const Matrix& Y) {
  if (Y.rows() < 1 || Y.cols() < 1 || !Y.allFinite())
    throw InvalidData("covariance: input matrix must be non-empty and finite");
  Matrix C = Y * Y.transpose();
  C = 0.5 * (C + C.transpose()).eval();
  return Covariance{std::move(C)};
}

// Fix eigenvector signs so the largest-magnitude entry is positive.
inline void fixSign(Eigen::Ref<Vector> v) {
  int imax = 0;
  double best = 0.0;
  for (int i = 0; i < v.size(); ++i) {
    if (std::abs(v[i]) > best) {
      best = std::abs(v[i]);
      imax = i;
    }
  }
  if (v[imax] < 0.0) v = -v;
}

// Orthogonal projector onto span(A) via rank-revealing QR; rank-deficient A
// (e.g. duplicated topographies during an AP sweep) degrades gracefully to
// the projector of the span.
inline Projector projector(const Matrix& A) {
  const int m = static_cast<int>(A.rows());
  if (A.cols() == 0) return Projector{Matrix::Zero(m, m), 0};
  if (!A.allFinite()) throw InvalidData("projector: non-finite basis matrix");
  Eigen::ColPivHouseholderQR<Matrix> qr(A);
  qr.setThreshold(1e-10);
  const int rank = static_cast<int>(qr.rank());
  if (rank == 0) return Projector{Matrix::Zero(m, m), 0};
  Matrix Q1 = qr.householderQ() * Matrix::Identity(m, rank);
  Matrix P = Q1 * Q1.transpose();
  P = 0.5 * (P + P.transpose()).eval();
  return Projector{std::move(P), rank};
}

inline Projector complement(const Projector& p) {
  const int m = p.dim();
  return Projector{Matrix::Identity(m, m) - p.P, m - p.basisRank};
}

// Top-Q symmetric eigendecomposition of C, eigenvalues descending,
// deterministic signs.
inline SubspaceDecomp signalSubspace(const Covariance& cov, int Q) {
  const int m = cov.dim();
  if (Q < 1 || Q > m)
    throw InvalidData("signalSubspace: Q must be in [1, M]");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov.C);
  if (eig.info() != Eigen::Success)
    throw NumericalError("signalSubspace: eigensolver failed");
  SubspaceDecomp d;
  d.Us.resize(m, Q);
  d.lambdas.resize(Q);
  for (int k = 0; k < Q; ++k) {
    // Eigen sorts ascending; take from the top.
    d.Us.col(k) = eig.eigenvectors().col(m - 1 - k);
    d.lambdas[k] = eig.eigenvalues()[m - 1 - k];
    fixSign(d.Us.col(k));
  }
  return d;
}

struct PencilResult {
  double lambda = 0.0;
  Vec3 v = Vec3::Zero();
};

// Maximum generalized eigenpair of the symmetric pencil (F, G) with G PSD.
// G may be singular (a spherical conductor silences the radial moment axis);
// the pencil is deflated to the numerical range of G.
inline PencilResult maxGeneralizedEig(const Mat3& F, const Mat3& G) {
  Eigen::SelfAdjointEigenSolver<Mat3> eg(G);
  if (eg.info() != Eigen::Success)
    throw NumericalError("maxGeneralizedEig: eigensolver failed on G");
  const double gmax = eg.eigenvalues().maxCoeff();
  if (!(gmax > 0.0))
    throw SingularPencil("maxGeneralizedEig: G is numerically zero");
  const double tol = 1e-10 * gmax;
  int rank = 0;
  for (int i = 0; i < 3; ++i)
    if (eg.eigenvalues()[i] > tol) ++rank;
  if (rank == 0)
    throw SingularPencil("maxGeneralizedEig: G is numerically zero");
  // Whitening basis W spans range(G): W^T G W = I.
  Eigen::Matrix<double, 3, Eigen::Dynamic> W(3, rank);
  int j = 0;
  for (int i = 0; i < 3; ++i) {
    if (eg.eigenvalues()[i] > tol) {
      W.col(j) = eg.eigenvectors().col(i) / std::sqrt(eg.eigenvalues()[i]);
      ++j;
    }
  }
  Matrix Fr = W.transpose() * F * W;
  Fr = 0.5 * (Fr + Fr.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Matrix> ef(Fr);
  if (ef.info() != Eigen::Success)
    throw NumericalError("maxGeneralizedEig: eigensolver failed on pencil");
  PencilResult r;
  r.lambda = ef.eigenvalues()[rank - 1];
  Vector y = ef.eigenvectors().col(rank - 1);
  Vec3 v = W * y;
  const double n = v.norm();
  if (!(n > 0.0))
    throw NumericalError("maxGeneralizedEig: degenerate eigenvector");
  v /= n;
  fixSign(v);
  r.v = v;
  return r;
}

}  // namespace aploc
