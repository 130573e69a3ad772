#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <vector>

#include "aploc/errors.hpp"
#include "aploc/forward.hpp"
#include "aploc/linalg.hpp"
#include "aploc/rng.hpp"

namespace aploc {

// rho = a.b / (|a| |b|).
inline double correlation(const Vector& a, const Vector& b) {
  const double na = a.norm(), nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0))
    throw InvalidData("correlation: zero waveform vector");
  return a.dot(b) / (na * nb);
}

struct WaveformSet {
  Matrix S;           // Q x N, unit-norm rows
  double targetCorrelation = 0.0;
  int sampleCount() const { return static_cast<int>(S.cols()); }
  int sourceCount() const { return static_cast<int>(S.rows()); }
};

// Q unit-norm sinusoid-mixture rows whose pairwise correlations are all
// exactly rho: raw rows are orthonormalized, then recombined through the
// Cholesky factor of the equicorrelation matrix. rho = 1 returns Q copies of
// one row.
inline WaveformSet makeWaveforms(int Q, int N, double rho, std::uint64_t seed) {
  if (Q < 1) throw InvalidData("makeWaveforms: Q must be >= 1");
  if (rho < 0.0 || rho > 1.0)
    throw InvalidData("makeWaveforms: rho must be in [0, 1]");
  // rho = 1 needs only a rank-1 waveform matrix, so any N >= 1 works there
  if (N < (rho == 1.0 ? 1 : Q))
    throw DegenerateWaveforms("makeWaveforms: need N >= Q samples");
  Rng rng = Rng::stream(seed, Rng::kWaveforms);
  // Each raw row mixes Q random sinusoids, frequencies in [1, 8] cycles per
  // record, random phases.
  const int rows = rho == 1.0 ? 1 : Q;
  Matrix raw(rows, N);
  for (int i = 0; i < rows; ++i) {
    raw.row(i).setZero();
    for (int k = 0; k < Q; ++k) {
      const double f = rng.uniform(1.0, 8.0);
      const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
      for (int t = 0; t < N; ++t)
        raw(i, t) += std::sin(2.0 * std::numbers::pi * f * t / N + phi);
    }
  }
  // Orthonormal rows E via QR of raw^T.
  Eigen::ColPivHouseholderQR<Matrix> qr(raw.transpose());
  qr.setThreshold(1e-10);
  if (qr.rank() < rows)
    throw DegenerateWaveforms("makeWaveforms: sinusoid rows are rank-deficient");
  Matrix E = (qr.householderQ() * Matrix::Identity(N, rows)).transpose();
  WaveformSet w;
  w.targetCorrelation = rho;
  if (rho == 1.0) {
    w.S = E.row(0).replicate(Q, 1);
    return w;
  }
  // Equicorrelation matrix R = (1-rho) I + rho 11^T, S = chol(R) E.
  Matrix R = Matrix::Constant(Q, Q, rho);
  R.diagonal().setOnes();
  Eigen::LLT<Matrix> llt(R);
  if (llt.info() != Eigen::Success)
    throw NumericalError("makeWaveforms: equicorrelation Cholesky failed");
  w.S = Matrix(llt.matrixL()) * E;
  return w;
}

struct Dataset {
  Matrix Y;                      // M x N
  std::vector<Dipole> truth;
  std::optional<double> snrDb;   // empty = noiseless
  std::uint64_t noiseSeed = 0;
};

// Y = A S + N from an explicit mixing matrix of topographies, with white
// Gaussian noise scaled so that the realized Frobenius-norm SNR matches
// snrDb exactly; snrDb empty means noiseless.
inline Dataset synthesizeFromMixing(const Matrix& A,
                                    const std::vector<Dipole>& sources,
                                    const WaveformSet& waveforms,
                                    std::optional<double> snrDb,
                                    std::uint64_t seed) {
  const int q = static_cast<int>(sources.size());
  if (q != waveforms.sourceCount() || A.cols() != q)
    throw InvalidData("synthesize: dipole count != waveform rows");
  const int m = static_cast<int>(A.rows());
  const int n = waveforms.sampleCount();
  Matrix Y0 = A * waveforms.S;
  const double signalNorm = Y0.norm();
  if (!(signalNorm > 0.0))
    throw SilentSources("synthesize: all sources are externally silent");
  Dataset d;
  d.truth = sources;
  for (int i = 0; i < q; ++i)
    d.truth[i].amplitudes = waveforms.S.row(i).transpose();
  d.noiseSeed = seed;
  d.snrDb = snrDb;
  if (!snrDb) {
    d.Y = std::move(Y0);
    return d;
  }
  Rng rng = Rng::stream(seed, Rng::kNoise);
  Matrix noise(m, n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < m; ++i) noise(i, j) = rng.normal();
  const double wanted = signalNorm * std::pow(10.0, -(*snrDb) / 20.0);
  const double rawNorm = noise.norm();
  if (!(rawNorm > 0.0)) throw NumericalError("synthesize: degenerate noise draw");
  d.Y = Y0 + (wanted / rawNorm) * noise;
  return d;
}

// Same, building the mixing matrix through the analytic sphere model.
inline Dataset synthesize(const std::vector<Dipole>& sources,
                          const WaveformSet& waveforms,
                          const SensorArray& sensors, const Vec3& sphereCenter,
                          std::optional<double> snrDb, std::uint64_t seed) {
  Matrix A(sensors.count(), static_cast<int>(sources.size()));
  for (std::size_t i = 0; i < sources.size(); ++i) {
    const Matrix L = sphereLeadField(sources[i].position, sensors, sphereCenter);
    A.col(static_cast<int>(i)) = topography(L, sources[i].orientation);
  }
  return synthesizeFromMixing(A, sources, waveforms, snrDb, seed);
}

// S_hat = (A^T A [+ delta I])^{-1} A^T Y. Ridge (delta = 1e-4 tr(A^T A)) is
// off by default; without it a rank-deficient A is an error.
inline Matrix estimateTimecourses(const Matrix& Y, const Matrix& A,
                                  bool ridge = false) {
  if (A.rows() != Y.rows())
    throw InvalidData("estimateTimecourses: dimension mismatch");
  Matrix gram = A.transpose() * A;
  if (ridge) {
    gram.diagonal().array() += 1e-4 * gram.trace();
  } else {
    Eigen::ColPivHouseholderQR<Matrix> qr(A);
    qr.setThreshold(1e-10);
    if (qr.rank() < A.cols())
      throw SingularSystem("estimateTimecourses: rank-deficient topographies");
  }
  Eigen::LDLT<Matrix> ldlt(gram);
  if (ldlt.info() != Eigen::Success)
    throw SingularSystem("estimateTimecourses: normal equations not solvable");
  return ldlt.solve(A.transpose() * Y);
}

// Convenience overload: build A from fitted dipoles via the sphere model.
inline Matrix estimateTimecourses(const Matrix& Y,
                                  const std::vector<Dipole>& fitted,
                                  const SensorArray& sensors,
                                  const Vec3& sphereCenter,
                                  bool ridge = false) {
  Matrix A(sensors.count(), static_cast<int>(fitted.size()));
  for (std::size_t i = 0; i < fitted.size(); ++i) {
    const Matrix L = sphereLeadField(fitted[i].position, sensors, sphereCenter);
    A.col(static_cast<int>(i)) = topography(L, fitted[i].orientation);
  }
  return estimateTimecourses(Y, A, ridge);
}

}  // namespace aploc
