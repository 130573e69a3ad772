#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "aploc/errors.hpp"
#include "aploc/forward.hpp"
#include "aploc/linalg.hpp"

namespace aploc {

enum class Method {
  ApLs,
  ApMusic,
  ApWMusic,
  ApSync,
  Music,
  RapMusic,
  RapBeamformer,
};

enum class OrientationMode { Fixed, Free };

enum class Convergence { SamePoint, MaxDisplacement };

struct SolverConfig {
  int Q = 1;
  int maxSweeps = 20;
  Convergence convergence = Convergence::SamePoint;
  double displacementEps = 0.0;  // meters, MaxDisplacement mode
  // Multistart: seed the first source from this many top single-source scan
  // peaks and keep the run with the best final objective. 1 reproduces the
  // plain sequential initialization; larger values escape the local optima
  // that coordinate ascent can hit on rank-deficient (synchronous) data.
  int initCandidates = 1;
};

struct LocalizationResult {
  std::vector<int> indices;
  std::vector<Vec3> positions;
  std::vector<Vec3> orientations;
  std::vector<double> objectiveTrace;  // tr(Pi_A K) after every single-source update
  std::vector<double> peakValues;      // last localizer value per source
  std::vector<int> initialIndices;
  std::vector<std::vector<int>> sweepHistory;  // [0] = after initialization
  int sweeps = 0;
  bool converged = false;
  bool nonConverged() const { return !converged; }
  bool lowConfidence = false;
  bool duplicateSources = false;
};

// Result of the single-pass scanners (MUSIC, RAP-MUSIC, RAP-beamformer).
struct ScanResult {
  std::vector<int> indices;
  std::vector<Vec3> positions;
  std::vector<Vec3> orientations;
  std::vector<double> values;
  bool padded = false;        // classicMusic found fewer than Q local maxima
  bool lowConfidence = false; // near-constant localizer
};

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Global argmax with lowest-index tie-breaking.
inline std::pair<int, double> scanArgmax(const std::vector<double>& values) {
  int best = -1;
  double bestVal = kNegInf;
  for (int g = 0; g < static_cast<int>(values.size()); ++g) {
    if (std::isfinite(values[g]) && values[g] > bestVal) {
      bestVal = values[g];
      best = g;
    }
  }
  if (best < 0) throw SilentSources("scanArgmax: no finite localizer value");
  return {best, bestVal};
}

namespace detail {

// Stacked M x 3G gain matrix; column block g is L(p_g).
inline Matrix stackGain(const SourceSpace& space) {
  const int m = static_cast<int>(space.gain[0].rows());
  Matrix L(m, 3 * space.size());
  for (int g = 0; g < space.size(); ++g) L.middleCols(3 * g, 3) = space.gain[g];
  return L;
}

// Per-source fixed-orientation topography matrix; column g is L(p_g) q.
inline Matrix topoMatrix(const SourceSpace& space, const Vec3& q) {
  const int m = static_cast<int>(space.gain[0].rows());
  Matrix T(m, space.size());
  for (int g = 0; g < space.size(); ++g) T.col(g) = space.gain[g] * q;
  return T;
}

// Fixed-orientation localizer l^T P K P l / l^T P l over all grid points
// (P = identity when proj is null). Points whose topography is annihilated
// by the projection are skipped (-inf).
inline std::vector<double> scanFixed(const Matrix& K, const Matrix* proj,
                                     const Matrix& T) {
  const int g = static_cast<int>(T.cols());
  Matrix QT = proj ? Matrix(*proj * T) : T;
  Matrix KQT = K * QT;
  std::vector<double> values(g, kNegInf);
  for (int i = 0; i < g; ++i) {
    const double l2 = T.col(i).squaredNorm();
    const double den = T.col(i).dot(QT.col(i));
    if (!(l2 > 0.0) || den < 1e-14 * l2) continue;
    values[i] = QT.col(i).dot(KQT.col(i)) / den;
  }
  return values;
}

// Free-orientation localizer: largest generalized eigenvalue of the 3x3
// pencil (L^T P K P L, L^T P P L) at every grid point.
inline std::vector<double> scanFree(const Matrix& K, const Matrix* proj,
                                    const Matrix& Lall) {
  const int g = static_cast<int>(Lall.cols()) / 3;
  Matrix QL = proj ? Matrix(*proj * Lall) : Lall;
  Matrix KQL = K * QL;
  std::vector<double> values(g, kNegInf);
  for (int i = 0; i < g; ++i) {
    const auto B = QL.middleCols(3 * i, 3);
    Mat3 F = B.transpose() * KQL.middleCols(3 * i, 3);
    Mat3 G = B.transpose() * B;
    F = 0.5 * (F + F.transpose()).eval();
    try {
      values[i] = maxGeneralizedEig(F, G).lambda;
    } catch (const SingularPencil&) {
      // topography annihilated at this point
    }
  }
  return values;
}

// Orientation estimate at one grid point for the free case.
inline Vec3 freeOrientationAt(const Matrix& K, const Matrix* proj,
                              const Matrix& Lg) {
  const Matrix B = proj ? Matrix(*proj * Lg) : Lg;
  Mat3 F = B.transpose() * K * B;
  Mat3 G = B.transpose() * B;
  F = 0.5 * (F + F.transpose()).eval();
  return maxGeneralizedEig(F, G).v;
}

inline double traceObjective(const Matrix& A, const Matrix& K) {
  const Projector pr = projector(A);
  if (pr.basisRank == 0) return 0.0;
  return (pr.P * K).trace();
}

// Shared Alternating Projection engine. K is the localizer numerator kernel:
// C for the LS solution, Us Us^T for AP-MUSIC, Us Ls Us^T for AP-wMUSIC,
// u1 u1^T for the synchronous variant. allowSweeps=false stops after the
// initialization pass (RAP-style single pass).
inline LocalizationResult apEngine(const Matrix& K, const SourceSpace& space,
                                   const SolverConfig& cfg, OrientationMode mode,
                                   const std::vector<Vec3>& fixedOrients,
                                   bool allowSweeps = true,
                                   const std::vector<Vec3>* orientationField =
                                       nullptr) {
  if (!space.hasGain())
    throw InvalidData("apEngine: source space has no gain table");
  const int G = space.size();
  const int m = static_cast<int>(space.gain[0].rows());
  if (cfg.Q < 1 || cfg.Q >= m)
    throw ConfigError("apEngine: require 1 <= Q < M");
  if (cfg.maxSweeps < 1) throw ConfigError("apEngine: maxSweeps must be >= 1");
  if (cfg.initCandidates < 1)
    throw ConfigError("apEngine: initCandidates must be >= 1");
  if (G < cfg.Q) throw InsufficientGrid("apEngine: grid smaller than Q");
  if (mode == OrientationMode::Fixed && orientationField == nullptr &&
      static_cast<int>(fixedOrients.size()) != cfg.Q)
    throw ConfigError("apEngine: fixed mode needs Q orientations");
  if (orientationField != nullptr &&
      static_cast<int>(orientationField->size()) != G)
    throw ConfigError("apEngine: orientation field needs one vector per point");

  const int Q = cfg.Q;
  Matrix Lall;
  std::vector<Matrix> T;  // fixed mode: per-source topography matrices
  if (mode == OrientationMode::Free) {
    Lall = stackGain(space);
  } else if (orientationField != nullptr) {
    // one topography per grid point, shared by every source slot
    Matrix Tf(m, G);
    for (int g = 0; g < G; ++g)
      Tf.col(g) = space.gain[g] * (*orientationField)[g];
    T.assign(Q, Tf);
  } else {
    T.reserve(Q);
    for (int q = 0; q < Q; ++q) T.push_back(topoMatrix(space, fixedOrients[q]));
  }

  // One full AP run (sequential init, sweeps, orientation polish) with the
  // first source forced to grid index firstIdx.
  auto runFrom = [&](int firstIdx, double firstVal) {
    LocalizationResult res;
    res.indices.assign(Q, -1);
    res.orientations.assign(Q, Vec3::Zero());
    res.peakValues.assign(Q, kNegInf);
    std::vector<Vector> topo(Q);

    auto scan = [&](const Matrix* proj, int q) {
      return mode == OrientationMode::Free ? scanFree(K, proj, Lall)
                                           : scanFixed(K, proj, T[q]);
    };
    auto updateSource = [&](int q, int g, const Matrix* proj) {
      res.indices[q] = g;
      if (mode == OrientationMode::Free) {
        res.orientations[q] = freeOrientationAt(K, proj, space.gain[g]);
      } else if (orientationField != nullptr) {
        res.orientations[q] = (*orientationField)[g];
      } else {
        res.orientations[q] = fixedOrients[q];
      }
      topo[q] = space.gain[g] * res.orientations[q];
    };
    auto recordObjective = [&]() {
      Matrix A(m, 0);
      for (int i = 0; i < Q; ++i) {
        if (res.indices[i] < 0) continue;
        A.conservativeResize(m, A.cols() + 1);
        A.col(A.cols() - 1) = topo[i];
      }
      res.objectiveTrace.push_back(traceObjective(A, K));
    };
    auto othersMatrix = [&](int skip) {
      Matrix A(m, 0);
      for (int i = 0; i < Q; ++i) {
        if (i == skip || res.indices[i] < 0) continue;
        A.conservativeResize(m, A.cols() + 1);
        A.col(A.cols() - 1) = topo[i];
      }
      return A;
    };

    // Initialization: single-source solution, then add one source at a time,
    // projecting out the ones already placed.
    for (int q = 0; q < Q; ++q) {
      std::optional<Matrix> proj;
      if (q > 0) proj = complement(projector(othersMatrix(q))).P;
      const Matrix* p = proj ? &*proj : nullptr;
      if (q == 0) {
        updateSource(0, firstIdx, nullptr);
        res.peakValues[0] = firstVal;
      } else {
        auto [g, val] = scanArgmax(scan(p, q));
        updateSource(q, g, p);
        res.peakValues[q] = val;
      }
      recordObjective();
    }
    res.initialIndices = res.indices;
    res.sweepHistory.push_back(res.indices);

    if (allowSweeps) {
      for (int j = 1; j <= cfg.maxSweeps; ++j) {
        bool changed = false;
        double maxDisp = 0.0;
        for (int q = 0; q < Q; ++q) {
          Matrix proj = complement(projector(othersMatrix(q))).P;
          auto [g, val] = scanArgmax(scan(&proj, q));
          if (g != res.indices[q]) {
            changed = true;
            maxDisp = std::max(
                maxDisp, (space.points[g] - space.points[res.indices[q]]).norm());
          }
          updateSource(q, g, &proj);
          res.peakValues[q] = val;
          recordObjective();
        }
        res.sweeps = j;
        res.sweepHistory.push_back(res.indices);
        const bool done = cfg.convergence == Convergence::SamePoint
                              ? !changed
                              : maxDisp < cfg.displacementEps;
        if (done) {
          res.converged = true;
          break;
        }
      }
    } else {
      res.converged = true;
    }

    // Index convergence can leave the free orientations short of their joint
    // optimum; polish them at the final points until the objective stalls.
    if (allowSweeps && mode == OrientationMode::Free && Q > 1) {
      for (int it = 0; it < 100; ++it) {
        for (int q = 0; q < Q; ++q) {
          const Matrix proj = complement(projector(othersMatrix(q))).P;
          updateSource(q, res.indices[q], &proj);
        }
        recordObjective();
        const std::size_t n = res.objectiveTrace.size();
        const double prev = res.objectiveTrace[n - 2];
        const double cur = res.objectiveTrace[n - 1];
        if (cur - prev <= 1e-12 * std::abs(cur)) break;
      }
    }

    res.positions.resize(Q);
    for (int q = 0; q < Q; ++q) res.positions[q] = space.points[res.indices[q]];
    std::vector<int> sorted = res.indices;
    std::sort(sorted.begin(), sorted.end());
    res.duplicateSources =
        std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end();
    return res;
  };

  // First-source candidates: top initCandidates peaks of the unprojected
  // single-source scan (value descending, index ascending on ties).
  const std::vector<double> firstScan =
      mode == OrientationMode::Free ? scanFree(K, nullptr, Lall)
                                    : scanFixed(K, nullptr, T[0]);
  std::vector<int> order;
  for (int g = 0; g < G; ++g)
    if (std::isfinite(firstScan[g])) order.push_back(g);
  if (order.empty()) throw SilentSources("apEngine: no finite localizer value");
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return firstScan[a] > firstScan[b];
  });
  const int starts = std::min<int>(cfg.initCandidates, static_cast<int>(order.size()));

  LocalizationResult best = runFrom(order[0], firstScan[order[0]]);
  for (int s = 1; s < starts; ++s) {
    LocalizationResult r = runFrom(order[s], firstScan[order[s]]);
    if (r.objectiveTrace.back() > best.objectiveTrace.back()) best = std::move(r);
  }
  return best;
}

}  // namespace detail

// AP least-squares solution for fixed-oriented dipoles.
inline LocalizationResult apLocalizeFixed(const Covariance& cov,
                                          const SourceSpace& space,
                                          const std::vector<Vec3>& orientations,
                                          const SolverConfig& cfg) {
  return detail::apEngine(cov.C, space, cfg, OrientationMode::Fixed,
                          orientations);
}

// AP least-squares with a known orientation per grid point (e.g. cortical
// normals): one topography per point, source slots interchangeable.
inline LocalizationResult apLocalizeFixedField(
    const Covariance& cov, const SourceSpace& space,
    const std::vector<Vec3>& orientationField, const SolverConfig& cfg) {
  return detail::apEngine(cov.C, space, cfg, OrientationMode::Fixed, {}, true,
                          &orientationField);
}

// AP least-squares solution for freely-oriented dipoles (3x3 pencil per point).
inline LocalizationResult apLocalizeFree(const Covariance& cov,
                                         const SourceSpace& space,
                                         const SolverConfig& cfg) {
  return detail::apEngine(cov.C, space, cfg, OrientationMode::Free, {});
}

// AP-MUSIC: the covariance is replaced by Us Us^T.
inline LocalizationResult apMusic(const SubspaceDecomp& sub,
                                  const SourceSpace& space,
                                  const SolverConfig& cfg,
                                  OrientationMode mode = OrientationMode::Free,
                                  const std::vector<Vec3>& orientations = {}) {
  const Matrix K = sub.Us * sub.Us.transpose();
  return detail::apEngine(K, space, cfg, mode, orientations);
}

// AP-wMUSIC: eigenvalue-weighted subspace kernel Us Ls Us^T.
inline LocalizationResult apWMusic(const SubspaceDecomp& sub,
                                   const SourceSpace& space,
                                   const SolverConfig& cfg,
                                   OrientationMode mode = OrientationMode::Free,
                                   const std::vector<Vec3>& orientations = {}) {
  const Matrix K = sub.Us * sub.lambdas.asDiagonal() * sub.Us.transpose();
  return detail::apEngine(K, space, cfg, mode, orientations);
}

// Synchronous variant: rank-1 kernel u1 u1^T.
inline LocalizationResult apSync(const Vector& u1, const SourceSpace& space,
                                 const SolverConfig& cfg,
                                 OrientationMode mode = OrientationMode::Free,
                                 const std::vector<Vec3>& orientations = {}) {
  const Matrix K = u1 * u1.transpose();
  return detail::apEngine(K, space, cfg, mode, orientations);
}

// Classic MUSIC: pseudo-spectrum over the whole grid, then the Q largest
// strict local maxima (6-neighborhood). Pads with the next-highest
// non-adjacent points when fewer than Q maxima exist.
inline ScanResult classicMusic(const SubspaceDecomp& sub,
                               const SourceSpace& space, int Q,
                               OrientationMode mode = OrientationMode::Free,
                               const std::vector<Vec3>& orientations = {}) {
  if (!space.hasGain())
    throw InvalidData("classicMusic: source space has no gain table");
  if (!space.hasNeighbors())
    throw InvalidData("classicMusic: grid adjacency required");
  const Matrix K = sub.Us * sub.Us.transpose();
  std::vector<double> values;
  if (mode == OrientationMode::Free) {
    values = detail::scanFree(K, nullptr, detail::stackGain(space));
  } else {
    if (orientations.size() != 1)
      throw ConfigError("classicMusic: fixed mode takes one shared orientation");
    values = detail::scanFixed(K, nullptr, detail::topoMatrix(space, orientations[0]));
  }
  std::vector<int> maxima;
  for (int g = 0; g < space.size(); ++g) {
    if (!std::isfinite(values[g])) continue;
    bool isMax = true;
    for (int nb : space.neighbors[g]) {
      if (nb >= 0 && std::isfinite(values[nb]) && values[nb] >= values[g]) {
        isMax = false;
        break;
      }
    }
    if (isMax) maxima.push_back(g);
  }
  std::stable_sort(maxima.begin(), maxima.end(),
                   [&](int a, int b) { return values[a] > values[b]; });
  ScanResult res;
  for (int g : maxima) {
    if (static_cast<int>(res.indices.size()) == Q) break;
    res.indices.push_back(g);
  }
  if (static_cast<int>(res.indices.size()) < Q) {
    res.padded = true;
    std::vector<int> order(space.size());
    for (int g = 0; g < space.size(); ++g) order[g] = g;
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return values[a] > values[b]; });
    for (int g : order) {
      if (static_cast<int>(res.indices.size()) == Q) break;
      if (!std::isfinite(values[g])) break;
      bool taken = false;
      for (int s : res.indices) {
        if (s == g) taken = true;
        for (int nb : space.neighbors[s])
          if (nb == g) taken = true;
      }
      if (!taken) res.indices.push_back(g);
    }
  }
  if (static_cast<int>(res.indices.size()) < Q)
    throw SilentSources("classicMusic: not enough usable grid points");
  for (int g : res.indices) {
    res.positions.push_back(space.points[g]);
    res.values.push_back(values[g]);
    if (mode == OrientationMode::Free)
      res.orientations.push_back(detail::freeOrientationAt(K, nullptr, space.gain[g]));
    else
      res.orientations.push_back(orientations[0]);
  }
  return res;
}

// RAP-MUSIC baseline: the initialization pass of AP-MUSIC (projecting out
// previously found topographies), with no convergence sweeps.
inline ScanResult rapMusic(const SubspaceDecomp& sub, const SourceSpace& space,
                           int Q, OrientationMode mode = OrientationMode::Free,
                           const std::vector<Vec3>& orientations = {}) {
  const Matrix K = sub.Us * sub.Us.transpose();
  SolverConfig cfg;
  cfg.Q = Q;
  LocalizationResult r =
      detail::apEngine(K, space, cfg, mode, orientations, /*allowSweeps=*/false);
  ScanResult res;
  res.indices = r.indices;
  res.positions = r.positions;
  res.orientations = r.orientations;
  res.values = r.peakValues;
  return res;
}

// RAP beamformer baseline: l^T P l / l^T (P C P)^+ l, single pass.
inline ScanResult rapBeamformer(const Covariance& cov, const SourceSpace& space,
                                int Q,
                                OrientationMode mode = OrientationMode::Fixed,
                                const std::vector<Vec3>& orientations = {}) {
  if (!space.hasGain())
    throw InvalidData("rapBeamformer: source space has no gain table");
  const int m = cov.dim();
  const int G = space.size();
  if (Q < 1 || Q >= m) throw ConfigError("rapBeamformer: require 1 <= Q < M");
  if (G < Q) throw InsufficientGrid("rapBeamformer: grid smaller than Q");
  if (mode == OrientationMode::Fixed &&
      static_cast<int>(orientations.size()) != Q)
    throw ConfigError("rapBeamformer: fixed mode needs Q orientations");
  Matrix Lall;
  if (mode == OrientationMode::Free) Lall = detail::stackGain(space);

  ScanResult res;
  Matrix prevTopos(m, 0);
  for (int q = 0; q < Q; ++q) {
    const Matrix P = complement(projector(prevTopos)).P;
    Matrix S = P * cov.C * P;
    S = 0.5 * (S + S.transpose()).eval();
    // Pseudo-inverse on the numerical range of P C P.
    Eigen::SelfAdjointEigenSolver<Matrix> eig(S);
    if (eig.info() != Eigen::Success)
      throw NumericalError("rapBeamformer: eigensolver failed");
    const double lmax = eig.eigenvalues().maxCoeff();
    Matrix W = Matrix::Zero(m, m);
    for (int i = 0; i < m; ++i)
      if (eig.eigenvalues()[i] > 1e-10 * std::max(lmax, 0.0) &&
          eig.eigenvalues()[i] > 0.0)
        W += eig.eigenvectors().col(i) * eig.eigenvectors().col(i).transpose() /
             eig.eigenvalues()[i];

    std::vector<double> values(G, kNegInf);
    std::vector<Vec3> orient(G, Vec3::Zero());
    if (mode == OrientationMode::Fixed) {
      const Matrix T = detail::topoMatrix(space, orientations[q]);
      const Matrix PT = P * T;
      const Matrix WT = W * T;
      for (int g = 0; g < G; ++g) {
        const double l2 = T.col(g).squaredNorm();
        if (!(l2 > 0.0)) continue;
        const double num = T.col(g).dot(PT.col(g));
        const double den = T.col(g).dot(WT.col(g));
        if (num < 1e-14 * l2) continue;
        values[g] = den > 0.0 ? num / den
                              : std::numeric_limits<double>::infinity();
      }
    } else {
      const Matrix PL = P * Lall;
      const Matrix WL = W * Lall;
      for (int g = 0; g < G; ++g) {
        const auto B = PL.middleCols(3 * g, 3);
        const auto Lg = Lall.middleCols(3 * g, 3);
        Mat3 F = B.transpose() * B;
        Mat3 Gm = Lg.transpose() * WL.middleCols(3 * g, 3);
        Gm = 0.5 * (Gm + Gm.transpose()).eval();
        try {
          const auto pr = maxGeneralizedEig(F, Gm);
          values[g] = pr.lambda;
          orient[g] = pr.v;
        } catch (const SingularPencil&) {
        }
      }
    }
    // Tie-break lowest index; +inf values (noiseless data) compare equal.
    int best = -1;
    double bestVal = kNegInf;
    for (int g = 0; g < G; ++g) {
      if (values[g] > bestVal) {
        bestVal = values[g];
        best = g;
      }
    }
    if (best < 0) throw SilentSources("rapBeamformer: no usable grid point");
    if (q == 0) {
      double lo = std::numeric_limits<double>::infinity(), hi = kNegInf;
      for (double v : values)
        if (std::isfinite(v)) {
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
      if (std::isfinite(hi) && hi - lo <= 1e-9 * std::max(std::abs(hi), 1.0))
        res.lowConfidence = true;
    }
    res.indices.push_back(best);
    res.positions.push_back(space.points[best]);
    res.values.push_back(bestVal);
    Vec3 ori = mode == OrientationMode::Fixed ? orientations[q] : orient[best];
    res.orientations.push_back(ori);
    prevTopos.conservativeResize(m, q + 1);
    prevTopos.col(q) = space.gain[best] * ori;
  }
  return res;
}

}  // namespace aploc
