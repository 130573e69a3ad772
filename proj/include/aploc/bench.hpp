#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "aploc/assign.hpp"
#include "aploc/errors.hpp"
#include "aploc/forward.hpp"
#include "aploc/io.hpp"
#include "aploc/localize.hpp"
#include "aploc/rng.hpp"
#include "aploc/signal.hpp"

namespace aploc {

inline std::string methodName(Method m) {
  switch (m) {
    case Method::ApLs: return "ap";
    case Method::ApMusic: return "ap-music";
    case Method::ApWMusic: return "ap-wmusic";
    case Method::ApSync: return "ap-sync";
    case Method::Music: return "music";
    case Method::RapMusic: return "rap-music";
    case Method::RapBeamformer: return "rap-beamformer";
  }
  return "?";
}

inline std::optional<Method> methodFromName(const std::string& s) {
  for (Method m : {Method::ApLs, Method::ApMusic, Method::ApWMusic,
                   Method::ApSync, Method::Music, Method::RapMusic,
                   Method::RapBeamformer})
    if (methodName(m) == s) return m;
  return std::nullopt;
}

struct GeometryConfig {
  int sensorCount = 102;
  double sensorRadius = 0.12;    // meters
  double capFraction = 0.6;
  double gridRadius = 0.0645;    // meters
  double gridResolution = 0.007; // meters; desk-scale default (~3300 points)
  Vec3 center = Vec3::Zero();
  std::string gainFile;          // overrides the synthetic sphere setup
};

struct ExperimentPlan {
  std::vector<Method> methods{Method::ApLs};
  std::vector<double> snrGridDb{0.0};
  std::vector<double> rhoGrid{0.5};
  std::vector<int> QGrid{2};
  int trials = 100;              // 500 matches the full protocol
  int N = 50;
  std::uint64_t masterSeed = 1;
  GeometryConfig geometry;
  std::optional<int> subspaceTruncation;
  OrientationMode orientationMode = OrientationMode::Free;
  double minSeparation = 0.025;  // meters
  bool noiseless = false;
  int maxSweeps = 20;
};

struct TrialRecord {
  Method method = Method::ApLs;
  double snrDb = 0.0;
  double rho = 0.0;
  int Q = 0;
  int trialIndex = 0;
  std::vector<double> perSourceErrorsMm;
  double meanErrorMm = 0.0;
  double firstSweepErrorMm = 0.0;  // error of the initialization estimate
  int sweeps = 0;
  bool converged = false;
  bool failed = false;
  std::string error;
  double wallTimeS = 0.0;
};

struct CellSummary {
  Method method;
  double snrDb;
  double rho;
  int Q;
  int trials;
  double meanErrMm;
  double medianErrMm;
  double meanSweeps;
  double convergedFrac;
};

struct BenchResult {
  std::vector<TrialRecord> records;
  std::vector<CellSummary> table;
};

namespace detail {

inline double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Random tangential unit orientation at p (w.r.t. the sphere center); the
// radial component is silent in the sphere model.
inline Vec3 randomTangential(const Vec3& p, const Vec3& center, Rng& rng) {
  const Vec3 radial = (p - center).normalized();
  for (;;) {
    Vec3 v(rng.normal(), rng.normal(), rng.normal());
    Vec3 t = v - v.dot(radial) * radial;
    if (t.norm() > 1e-6) return t.normalized();
  }
}

// Q distinct grid points with pairwise separation >= minSep. Points whose
// gain is negligible (e.g. the sphere center, which is magnetically silent)
// are never selected: such a source is unlocalizable by construction.
inline std::vector<int> placeSources(const SourceSpace& space, int Q,
                                     double minSep, Rng& rng) {
  double maxGain = 0.0;
  for (const Matrix& gm : space.gain) maxGain = std::max(maxGain, gm.norm());
  if (maxGain <= 0.0)
    throw SilentSources("placeSources: every grid point is silent");
  for (int attempt = 0; attempt < 10000; ++attempt) {
    std::vector<int> idx;
    for (int draw = 0; draw < 100 && static_cast<int>(idx.size()) < Q; ++draw) {
      const int g = static_cast<int>(rng.below(space.size()));
      if (space.gain[g].norm() < 0.01 * maxGain) continue;
      bool ok = true;
      for (int other : idx)
        if ((space.points[g] - space.points[other]).norm() < minSep) ok = false;
      if (ok) idx.push_back(g);
      else break;
    }
    if (static_cast<int>(idx.size()) == Q) return idx;
  }
  throw ConfigError("placeSources: separation constraint unsatisfiable");
}

struct TrialData {
  Matrix Y;
  std::vector<Vec3> truePositions;
  std::vector<Vec3> trueOrientations;
};

}  // namespace detail

// Build (or load) the source space used by a plan.
inline SourceSpace planSourceSpace(const GeometryConfig& geo,
                                   SensorArray* sensorsOut = nullptr) {
  SensorArray sensors = fibonacciCapArray(geo.sensorCount, geo.sensorRadius,
                                          geo.capFraction, geo.center);
  if (sensorsOut) *sensorsOut = sensors;
  if (!geo.gainFile.empty()) return loadGainTable(geo.gainFile);
  SourceSpace grid = buildSphericalGrid(geo.gridRadius, geo.gridResolution,
                                        geo.center);
  return precomputeGain(std::move(grid), sensors, geo.center);
}

// Run the Monte-Carlo plan. Trials are independent work items; per-trial
// seeds depend only on (masterSeed, cell, trial), so the record stream is
// identical for any thread count.
inline BenchResult runPlan(const ExperimentPlan& plan, int threads = 1,
                           const SourceSpace* prebuilt = nullptr) {
  if (plan.trials < 1) throw ConfigError("runPlan: trials must be >= 1");
  for (double r : plan.rhoGrid)
    if (r < 0.0 || r > 1.0) throw ConfigError("runPlan: rho outside [0, 1]");
  SourceSpace space = prebuilt ? *prebuilt : planSourceSpace(plan.geometry);

  struct Cell {
    double snrDb;
    double rho;
    int Q;
    std::uint64_t key;
  };
  std::vector<Cell> cells;
  for (std::size_t si = 0; si < plan.snrGridDb.size(); ++si)
    for (std::size_t ri = 0; ri < plan.rhoGrid.size(); ++ri)
      for (std::size_t qi = 0; qi < plan.QGrid.size(); ++qi)
        cells.push_back({plan.snrGridDb[si], plan.rhoGrid[ri], plan.QGrid[qi],
                         Rng::derive({plan.masterSeed, si, ri, qi})});

  const int nMethods = static_cast<int>(plan.methods.size());
  const int nItems = static_cast<int>(cells.size()) * plan.trials;
  BenchResult result;
  result.records.resize(static_cast<std::size_t>(nItems) * nMethods);

  auto runItem = [&](int item) {
    const Cell& cell = cells[item / plan.trials];
    const int trial = item % plan.trials;

    // All methods see the same dataset for this trial.
    detail::TrialData data;
    std::vector<TrialRecord*> recs(nMethods);
    for (int mi = 0; mi < nMethods; ++mi) {
      TrialRecord& r =
          result.records[static_cast<std::size_t>(item) * nMethods + mi];
      r.method = plan.methods[mi];
      r.snrDb = cell.snrDb;
      r.rho = cell.rho;
      r.Q = cell.Q;
      r.trialIndex = trial;
      recs[mi] = &r;
    }
    try {
      Rng place = Rng::stream(cell.key, Rng::kPlacement, trial);
      const std::vector<int> idx =
          detail::placeSources(space, cell.Q, plan.minSeparation, place);
      std::vector<Dipole> dipoles(cell.Q);
      Matrix A(space.gain[0].rows(), cell.Q);
      for (int q = 0; q < cell.Q; ++q) {
        dipoles[q].position = space.points[idx[q]];
        dipoles[q].orientation = detail::randomTangential(
            space.points[idx[q]], plan.geometry.center, place);
        A.col(q) = space.gain[idx[q]] * dipoles[q].orientation;
      }
      const WaveformSet waves =
          makeWaveforms(cell.Q, plan.N, cell.rho,
                        Rng::derive({cell.key, Rng::kWaveforms, (std::uint64_t)trial}));
      std::optional<double> snr;
      if (!plan.noiseless) snr = cell.snrDb;
      const Dataset ds = synthesizeFromMixing(
          A, dipoles, waves, snr,
          Rng::derive({cell.key, Rng::kNoise, (std::uint64_t)trial}));
      data.Y = ds.Y;
      for (const Dipole& d : dipoles) {
        data.truePositions.push_back(d.position);
        data.trueOrientations.push_back(d.orientation);
      }
    } catch (const Error& e) {
      for (int mi = 0; mi < nMethods; ++mi) {
        recs[mi]->failed = true;
        recs[mi]->error = e.what();
      }
      return;
    }

    const Covariance cov = covariance(data.Y);
    const int truncation = plan.subspaceTruncation.value_or(cell.Q);
    SubspaceDecomp sub = signalSubspace(cov, std::min(truncation, cov.dim()));

    for (int mi = 0; mi < nMethods; ++mi) {
      TrialRecord& r = *recs[mi];
      const auto t0 = std::chrono::steady_clock::now();
      try {
        SolverConfig cfg;
        cfg.Q = cell.Q;
        cfg.maxSweeps = plan.maxSweeps;
        const OrientationMode mode = plan.orientationMode;
        const std::vector<Vec3>& ori = data.trueOrientations;
        std::vector<Vec3> est;
        std::vector<int> firstIdx;
        switch (r.method) {
          case Method::ApLs: {
            LocalizationResult lr =
                mode == OrientationMode::Fixed
                    ? apLocalizeFixed(cov, space, ori, cfg)
                    : apLocalizeFree(cov, space, cfg);
            est = lr.positions;
            r.sweeps = lr.sweeps;
            r.converged = lr.converged;
            firstIdx = lr.initialIndices;
            break;
          }
          case Method::ApMusic:
          case Method::ApWMusic:
          case Method::ApSync: {
            LocalizationResult lr;
            if (r.method == Method::ApMusic)
              lr = apMusic(sub, space, cfg, mode, ori);
            else if (r.method == Method::ApWMusic)
              lr = apWMusic(sub, space, cfg, mode, ori);
            else
              lr = apSync(sub.u1(), space, cfg, mode, ori);
            est = lr.positions;
            r.sweeps = lr.sweeps;
            r.converged = lr.converged;
            firstIdx = lr.initialIndices;
            break;
          }
          case Method::Music: {
            ScanResult sr =
                mode == OrientationMode::Fixed
                    ? classicMusic(sub, space, cell.Q, mode, {ori[0]})
                    : classicMusic(sub, space, cell.Q, mode);
            est = sr.positions;
            r.converged = true;
            break;
          }
          case Method::RapMusic: {
            ScanResult sr = rapMusic(sub, space, cell.Q, mode, ori);
            est = sr.positions;
            r.converged = true;
            break;
          }
          case Method::RapBeamformer: {
            ScanResult sr = rapBeamformer(cov, space, cell.Q, mode, ori);
            est = sr.positions;
            r.converged = true;
            break;
          }
        }
        const SourceMatch match = matchSources(est, data.truePositions);
        for (double d : match.distances)
          r.perSourceErrorsMm.push_back(d * 1000.0);
        r.meanErrorMm = match.total / cell.Q * 1000.0;
        if (!firstIdx.empty()) {
          std::vector<Vec3> first;
          for (int g : firstIdx) first.push_back(space.points[g]);
          r.firstSweepErrorMm =
              matchSources(first, data.truePositions).total / cell.Q * 1000.0;
        }
      } catch (const Error& e) {
        r.failed = true;
        r.error = e.what();
      }
      r.wallTimeS = std::chrono::duration<double>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
    }
  };

  if (threads <= 1) {
    for (int i = 0; i < nItems; ++i) runItem(i);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&]() {
        for (;;) {
          const int i = next.fetch_add(1);
          if (i >= nItems) break;
          runItem(i);
        }
      });
    for (auto& th : pool) th.join();
  }

  // Deterministic fold in (cell, method) order.
  for (const Cell& cell : cells) {
    for (int mi = 0; mi < nMethods; ++mi) {
      std::vector<double> errs, sweeps;
      int ok = 0, total = 0;
      for (const TrialRecord& r : result.records) {
        if (r.method != plan.methods[mi] || r.snrDb != cell.snrDb ||
            r.rho != cell.rho || r.Q != cell.Q)
          continue;
        ++total;
        if (r.failed) continue;
        ++ok;
        errs.push_back(r.meanErrorMm);
        sweeps.push_back(static_cast<double>(r.sweeps));
      }
      CellSummary s{plan.methods[mi], cell.snrDb, cell.rho, cell.Q, total,
                    0.0, 0.0, 0.0, 0.0};
      if (!errs.empty()) {
        double sum = 0.0, sw = 0.0;
        int conv = 0;
        for (const TrialRecord& r : result.records) {
          if (r.method != plan.methods[mi] || r.snrDb != cell.snrDb ||
              r.rho != cell.rho || r.Q != cell.Q || r.failed)
            continue;
          sum += r.meanErrorMm;
          sw += r.sweeps;
          conv += r.converged ? 1 : 0;
        }
        s.meanErrMm = sum / ok;
        s.medianErrMm = detail::median(errs);
        s.meanSweeps = sw / ok;
        s.convergedFrac = static_cast<double>(conv) / ok;
      }
      result.table.push_back(s);
    }
  }
  return result;
}

// CSV with the stable column order used everywhere.
inline std::string tableCsv(const std::vector<CellSummary>& table) {
  std::ostringstream os;
  os << "method,snrDb,rho,Q,trials,meanErr,medianErr,meanSweeps,convergedFrac\n";
  os << std::setprecision(17);
  for (const CellSummary& s : table)
    os << methodName(s.method) << ',' << s.snrDb << ',' << s.rho << ',' << s.Q
       << ',' << s.trials << ',' << s.meanErrMm << ',' << s.medianErrMm << ','
       << s.meanSweeps << ',' << s.convergedFrac << '\n';
  return os.str();
}

inline void exportCsv(const std::vector<CellSummary>& table,
                      const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("exportCsv: cannot open " + path);
  os << tableCsv(table);
  if (!os) throw FormatError("exportCsv: write failed for " + path);
}

}  // namespace aploc
