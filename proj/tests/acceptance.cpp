// End-to-end acceptance checks. Run as: acceptance <path-to-cli-binary>
// Prints one PASS/FAIL line per criterion; exit code 0 iff all pass.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <unistd.h>
#include <vector>

#include "aploc/bench.hpp"
#include "aploc/forward.hpp"
#include "aploc/localize.hpp"
#include "aploc/plan.hpp"
#include "aploc/rng.hpp"
#include "aploc/signal.hpp"

using namespace aploc;

namespace {

int gFailures = 0;

void report(int num, bool pass, const std::string& detail) {
  std::cout << "criterion " << num << ": " << (pass ? "PASS" : "FAIL");
  if (!detail.empty()) std::cout << "  (" << detail << ")";
  std::cout << std::endl;
  if (!pass) ++gFailures;
}

struct SmallSetup {
  SensorArray sensors;
  SourceSpace space;
};

SmallSetup smallSetup() {
  SmallSetup s;
  s.sensors = fibonacciCapArray(32);
  s.space = precomputeGain(buildSphericalGrid(0.06, 0.018), s.sensors);
  return s;
}

// Criterion-1 geometry: full-sphere 32-sensor array for good conditioning.
SmallSetup oracleSetup() {
  SmallSetup s;
  s.sensors = fibonacciCapArray(32, 0.12, 1.0);
  s.space = precomputeGain(buildSphericalGrid(0.06, 0.018), s.sensors);
  return s;
}

Vec3 tangentialAt(const Vec3& p, const Vec3& seed) {
  const Vec3 radial = p.normalized();
  return (seed - seed.dot(radial) * radial).normalized();
}

std::vector<int> pickSources(const SourceSpace& space, int q, double minSep,
                             Rng& rng) {
  std::vector<int> idx;
  while (static_cast<int>(idx.size()) < q) {
    const int g = static_cast<int>(rng.below(space.size()));
    if (space.points[g].norm() < 0.015) continue;
    bool ok = true;
    for (int other : idx)
      if ((space.points[g] - space.points[other]).norm() < minSep) ok = false;
    if (ok) idx.push_back(g);
  }
  return idx;
}

struct PairCase {
  std::vector<int> trueIdx;
  std::vector<Vec3> orientations;
  Matrix Y;
};

PairCase makePair(const SmallSetup& s, double rho, int n,
                  std::optional<double> snrDb, std::uint64_t seed) {
  Rng rng(seed);
  PairCase d;
  d.trueIdx = pickSources(s.space, 2, 0.03, rng);
  std::vector<Dipole> dipoles(2);
  for (int i = 0; i < 2; ++i) {
    dipoles[i].position = s.space.points[d.trueIdx[i]];
    Vec3 seedDir(rng.normal(), rng.normal(), rng.normal());
    dipoles[i].orientation = tangentialAt(dipoles[i].position, seedDir);
    d.orientations.push_back(dipoles[i].orientation);
  }
  WaveformSet w = makeWaveforms(2, n, rho, seed);
  d.Y = synthesize(dipoles, w, s.sensors, Vec3::Zero(), snrDb, seed + 1).Y;
  return d;
}

bool monotone(const std::vector<double>& trace) {
  for (std::size_t i = 1; i < trace.size(); ++i)
    if (trace[i] < trace[i - 1] - 1e-9 * std::max(1.0, std::abs(trace[i])))
      return false;
  return true;
}

double medianOf(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int benchThreads() {
  const unsigned hw = std::thread::hardware_concurrency();
  return static_cast<int>(std::min(hw ? hw : 1u, 8u));
}

std::string readFile(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

// Criterion-1 configuration: random tangential orientation field over the
// grid, two well-separated non-deep sources whose orientations come from the
// field, multistart AP.
struct FieldCase {
  std::vector<Vec3> field;
  std::vector<int> trueIdx;
  Matrix Y;
};

std::vector<Vec3> makeField(const SourceSpace& space, std::uint64_t seed) {
  std::vector<Vec3> field(space.size());
  for (int g = 0; g < space.size(); ++g) {
    Rng fr(Rng::derive({seed, 77, static_cast<std::uint64_t>(g)}));
    const Vec3 p = space.points[g];
    field[g] = p.norm() < 1e-12
                   ? Vec3(1, 0, 0)
                   : tangentialAt(p, Vec3(fr.normal(), fr.normal(), fr.normal()));
  }
  return field;
}

FieldCase makeFieldCase(const SmallSetup& s, double rho, int n,
                        std::optional<double> snrDb, std::uint64_t seed) {
  FieldCase d;
  d.field = makeField(s.space, seed);
  Rng rng(seed);
  while (static_cast<int>(d.trueIdx.size()) < 2) {
    const int g = static_cast<int>(rng.below(s.space.size()));
    if (s.space.points[g].norm() < 0.03) continue;
    bool ok = true;
    for (int other : d.trueIdx)
      if ((s.space.points[g] - s.space.points[other]).norm() < 0.05) ok = false;
    if (ok) d.trueIdx.push_back(g);
  }
  std::vector<Dipole> dipoles(2);
  for (int i = 0; i < 2; ++i) {
    dipoles[i].position = s.space.points[d.trueIdx[i]];
    dipoles[i].orientation = d.field[d.trueIdx[i]];
  }
  WaveformSet w = makeWaveforms(2, n, rho, seed);
  d.Y = synthesize(dipoles, w, s.sensors, Vec3::Zero(), snrDb, seed + 1).Y;
  return d;
}

// Exhaustive unordered two-point maximum over per-point topographies.
std::pair<std::set<int>, double> exhaustiveFieldPair(
    const SourceSpace& space, const std::vector<Vec3>& field, const Matrix& C) {
  const int m = static_cast<int>(space.gain[0].rows());
  Matrix T(m, space.size());
  for (int g = 0; g < space.size(); ++g) T.col(g) = space.gain[g] * field[g];
  double best = -1.0;
  std::set<int> bestPair;
  Matrix A(m, 2);
  for (int a = 0; a < space.size(); ++a) {
    A.col(0) = T.col(a);
    if (A.col(0).norm() < 1e-14) continue;
    for (int b = a + 1; b < space.size(); ++b) {
      A.col(1) = T.col(b);
      if (A.col(1).norm() < 1e-14) continue;
      const double val = (projector(A).P * C).trace();
      if (val > best) {
        best = val;
        bestPair = {a, b};
      }
    }
  }
  return {bestPair, best};
}

// 1 + 2: oracle equivalence on >= 50 noiseless configs, monotone traces
// everywhere (plus 100 noisy runs for criterion 2).
static void criteria1and2() {
  const auto t0 = std::chrono::steady_clock::now();
  SmallSetup s = oracleSetup();
  const double rhos[3] = {0.0, 0.5, 1.0};
  int oracleOk = 0, positionsOk = 0, monoOk = 0;
  const int configs = 54;
  SolverConfig cfg;
  cfg.Q = 2;
  cfg.initCandidates = 20;
  for (int c = 0; c < configs; ++c) {
    FieldCase d = makeFieldCase(s, rhos[c % 3], 20, std::nullopt, 9000 + c);
    Covariance C = covariance(d.Y);
    LocalizationResult r = apLocalizeFixedField(C, s.space, d.field, cfg);
    auto [bestPair, bestVal] = exhaustiveFieldPair(s.space, d.field, C.C);
    if (std::abs(r.objectiveTrace.back() - bestVal) <= 1e-9 * bestVal)
      ++oracleOk;
    if (std::set<int>(r.indices.begin(), r.indices.end()) == bestPair)
      ++positionsOk;
    if (monotone(r.objectiveTrace)) ++monoOk;
  }
  int noisyMonoOk = 0;
  for (int c = 0; c < 100; ++c) {
    FieldCase d = makeFieldCase(s, rhos[c % 3], 20, 0.0, 20000 + c);
    LocalizationResult r =
        apLocalizeFixedField(covariance(d.Y), s.space, d.field, cfg);
    if (monotone(r.objectiveTrace)) ++noisyMonoOk;
  }
  const double secs = std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - t0).count();
  std::ostringstream d1;
  d1 << oracleOk << "/" << configs << " objective matches, " << positionsOk
     << "/" << configs << " exact positions, " << secs << " s";
  report(1, oracleOk == configs && positionsOk == configs && secs < 60.0,
         d1.str());
  std::ostringstream d2;
  d2 << monoOk << "/" << configs << " noiseless + " << noisyMonoOk
     << "/100 noisy traces monotone";
  report(2, monoOk == configs && noisyMonoOk == 100, d2.str());
}

// 3: single-sample synchronous operation, exact noiseless recovery.
static void criterion3() {
  SmallSetup s = oracleSetup();
  bool ok = true;
  std::string detail = "all variants ran on N=1 rho=1; recovery matched oracle";
  try {
    for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
      FieldCase d = makeFieldCase(s, 1.0, 1, std::nullopt, 40000 + seed);
      Covariance C = covariance(d.Y);
      SubspaceDecomp sub = signalSubspace(C, 1);
      SolverConfig cfg;
      cfg.Q = 2;
      cfg.initCandidates = 20;
      LocalizationResult ls = apLocalizeFixedField(C, s.space, d.field, cfg);
      // per-slot fixed orientations: the subspace variants must also run
      std::vector<Vec3> slotOrients = {d.field[d.trueIdx[0]],
                                       d.field[d.trueIdx[1]]};
      apMusic(sub, s.space, cfg, OrientationMode::Fixed, slotOrients);
      apWMusic(sub, s.space, cfg, OrientationMode::Fixed, slotOrients);
      apSync(sub.u1(), s.space, cfg, OrientationMode::Fixed, slotOrients);
      auto [bestPair, bestVal] = exhaustiveFieldPair(s.space, d.field, C.C);
      std::set<int> got(ls.indices.begin(), ls.indices.end());
      if (got != bestPair ||
          std::abs(ls.objectiveTrace.back() - bestVal) > 1e-9 * bestVal) {
        ok = false;
        detail = "noiseless N=1 recovery not exact";
      }
    }
  } catch (const std::exception& e) {
    ok = false;
    detail = std::string("threw: ") + e.what();
  }
  report(3, ok, detail);
}

// 4: rank-1 truncation makes apMusic and apWMusic identical.
static void criterion4() {
  SmallSetup s = smallSetup();
  int same = 0;
  const int trials = 50;
  for (int t = 0; t < trials; ++t) {
    PairCase d = makePair(s, 1.0, 25, 5.0, 50000 + t);
    SubspaceDecomp sub = signalSubspace(covariance(d.Y), 1);
    SolverConfig cfg;
    cfg.Q = 2;
    LocalizationResult a =
        apMusic(sub, s.space, cfg, OrientationMode::Fixed, d.orientations);
    LocalizationResult b =
        apWMusic(sub, s.space, cfg, OrientationMode::Fixed, d.orientations);
    if (a.indices == b.indices) ++same;
  }
  std::ostringstream d;
  d << same << "/" << trials << " identical position-for-position";
  report(4, same == trials, d.str());
}

// 5 + 9: SNR trend on the desk grid; mean sweep count stays small.
static void criteria5and9() {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentPlan plan;
  plan.methods = {Method::ApLs, Method::Music};
  plan.snrGridDb = {-10.0, -5.0, 0.0, 5.0, 10.0};
  plan.rhoGrid = {0.5};
  plan.QGrid = {2};
  plan.trials = 100;
  plan.masterSeed = 61;
  BenchResult r = runPlan(plan, benchThreads());
  std::vector<double> apMedian(5), musicMedian(5), apSweeps(5);
  for (const CellSummary& c : r.table) {
    for (int i = 0; i < 5; ++i) {
      if (c.snrDb != plan.snrGridDb[i]) continue;
      if (c.method == Method::ApLs) {
        apMedian[i] = c.medianErrMm;
        apSweeps[i] = c.meanSweeps;
      } else {
        musicMedian[i] = c.medianErrMm;
      }
    }
  }
  bool trend = true;
  for (int i = 1; i < 5; ++i)
    if (apMedian[i] > apMedian[i - 1]) trend = false;
  const bool beatsMusic =
      apMedian[0] <= musicMedian[0] && apMedian[1] <= musicMedian[1];
  const double secs = std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - t0).count();
  std::ostringstream d5;
  d5 << "ap medians mm:";
  for (double v : apMedian) d5 << " " << v;
  d5 << ", music at -10/-5: " << musicMedian[0] << " " << musicMedian[1]
     << ", " << secs << " s";
  report(5, trend && beatsMusic && secs < 600.0, d5.str());

  double meanSweeps = 0.0;
  for (double v : apSweeps) meanSweeps += v / 5.0;
  std::ostringstream d9;
  d9 << "mean sweeps " << meanSweeps;
  report(9, meanSweeps <= 6.0, d9.str());
}

// 6: correlation robustness at 0 dB across the rho grid.
static void criterion6() {
  ExperimentPlan plan;
  plan.methods = {Method::ApLs};
  plan.snrGridDb = {0.0};
  plan.rhoGrid = {0.0, 0.25, 0.5, 0.75, 1.0};
  plan.QGrid = {2};
  plan.trials = 100;
  plan.masterSeed = 62;
  BenchResult r = runPlan(plan, benchThreads());
  double lo = 1e18, hi = -1e18;
  for (const CellSummary& c : r.table) {
    lo = std::min(lo, c.medianErrMm);
    hi = std::max(hi, c.medianErrMm);
  }
  const double spreadMm = hi - lo;
  const double limitMm = 2.0 * plan.geometry.gridResolution * 1000.0;
  std::ostringstream d;
  d << "median spread " << spreadMm << " mm, limit " << limitMm << " mm";
  report(6, spreadMm < limitMm, d.str());
}

// 7: realized correlation and Frobenius SNR exact to 1e-10.
static void criterion7() {
  SmallSetup s = smallSetup();
  int ok = 0;
  const int seeds = 100;
  for (int t = 0; t < seeds; ++t) {
    Rng rng(70000 + t);
    const double rho = 0.25 * static_cast<double>(rng.below(5));
    const int q = 2 + static_cast<int>(rng.below(2));
    WaveformSet w = makeWaveforms(q, 40, rho, 70000 + t);
    bool good = true;
    for (int i = 0; i < q && good; ++i)
      for (int k = i + 1; k < q && good; ++k) {
        Vector a = w.S.row(i), b = w.S.row(k);
        if (std::abs(correlation(a, b) - rho) > 1e-10) good = false;
      }
    std::vector<int> idx = pickSources(s.space, q, 0.03, rng);
    std::vector<Dipole> dip(q);
    Matrix A(32, q);
    for (int i = 0; i < q; ++i) {
      dip[i].position = s.space.points[idx[i]];
      dip[i].orientation =
          tangentialAt(dip[i].position, Vec3(rng.normal(), rng.normal(), rng.normal()));
      A.col(i) = s.space.gain[idx[i]] * dip[i].orientation;
    }
    const double snrDb = -10.0 + 2.5 * static_cast<double>(rng.below(9));
    Dataset d = synthesizeFromMixing(A, dip, w, snrDb, 70500 + t);
    const Matrix Y0 = A * w.S;
    const Matrix noise = d.Y - Y0;
    const double realized = 20.0 * std::log10(Y0.norm() / noise.norm());
    if (std::abs(realized - snrDb) > 1e-10 * std::max(1.0, std::abs(snrDb)))
      good = false;
    if (good) ++ok;
  }
  std::ostringstream d;
  d << ok << "/" << seeds << " seeds exact";
  report(7, ok == seeds, d.str());
}

// 8: numerics suite over 1000 randomized cases.
static void criterion8() {
  const auto t0 = std::chrono::steady_clock::now();
  SensorArray sensors = fibonacciCapArray(32);
  int ok = 0;
  const int cases = 1000;
  for (int t = 0; t < cases; ++t) {
    Rng rng(80000 + t);
    bool good = true;

    const int m = 8 + static_cast<int>(rng.below(25));
    const int k = 1 + static_cast<int>(rng.below(5));
    Matrix A(m, k);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < k; ++j) A(i, j) = rng.normal();
    const Matrix P = projector(A).P;
    if ((P * P - P).norm() > 1e-10) good = false;
    if ((P - P.transpose()).norm() > 1e-10) good = false;

    // projection decomposition: Pi_[B a] = Pi_B + Pi_{(I - Pi_B) a}
    if (k >= 2) {
      const Matrix B = A.leftCols(k - 1);
      const Vector a = A.col(k - 1);
      const Matrix Pb = projector(B).P;
      const Vector qa = a - Pb * a;
      if (qa.norm() > 1e-8) {
        const Matrix Pqa = projector(Matrix(qa)).P;
        if ((P - Pb - Pqa).norm() > 1e-9) good = false;
      }
    }

    Matrix R(3, 3), S(3, 3);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        R(i, j) = rng.normal();
        S(i, j) = rng.normal();
      }
    const Mat3 F = (R.transpose() * R).eval();
    const Mat3 G = (S.transpose() * S + 0.05 * Mat3::Identity()).eval();
    PencilResult pr = maxGeneralizedEig(F, G);
    const double resid = (F * pr.v - pr.lambda * (G * pr.v)).norm() /
                         std::max(1.0, F.norm());
    if (resid > 1e-8) good = false;

    Vec3 p(rng.normal(), rng.normal(), rng.normal());
    p = (0.02 + 0.04 * rng.uniform()) * p.normalized();
    const Vec3 tang = tangentialAt(p, Vec3(rng.normal(), rng.normal(), rng.normal()));
    const Matrix L = sphereLeadField(p, sensors, Vec3::Zero());
    const double radialNorm = topography(L, Vec3(p.normalized())).norm();
    const double tangNorm = topography(L, tang).norm();
    if (radialNorm > 1e-12 * tangNorm) good = false;

    if (good) ++ok;
  }
  const double secs = std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - t0).count();
  std::ostringstream d;
  d << ok << "/" << cases << " cases, " << secs << " s";
  report(8, ok == cases && secs < 30.0, d.str());
}

// 10: CLI bench output byte-identical across runs and thread counts.
static void criterion10(const std::string& cli) {
  if (cli.empty()) {
    report(10, false, "no CLI binary path given on the command line");
    return;
  }
  const std::string dir = "/tmp/aploc_accept_" + std::to_string(::getpid());
  if (std::system(("rm -rf " + dir + " && mkdir -p " + dir).c_str()) != 0) {
    report(10, false, "could not create scratch directory");
    return;
  }
  {
    std::ofstream plan(dir + "/plan.json");
    plan << R"({"methods":["ap","music"],"snrGridDb":[0,10],"rhoGrid":[0.5],
"QGrid":[2],"trials":6,"N":25,"masterSeed":5,"minSeparationMm":30,
"geometry":{"sensorCount":32,"gridRadiusMm":60,"gridResolutionMm":18}})";
  }
  auto run = [&](const std::string& out, int threads) {
    std::ostringstream cmd;
    cmd << cli << " bench --plan " << dir << "/plan.json --out " << dir << "/"
        << out << " --threads " << threads << " >/dev/null 2>&1";
    return std::system(cmd.str().c_str()) == 0;
  };
  bool ok = run("a", 1) && run("b", 1) && run("c", 8);
  std::string detail = "CLI bench invocation failed";
  if (ok) {
    const std::string a = readFile(dir + "/a/results.csv");
    const std::string b = readFile(dir + "/b/results.csv");
    const std::string c = readFile(dir + "/c/results.csv");
    ok = !a.empty() && a == b && a == c;
    detail = ok ? "CSV byte-identical across reruns and 1 vs 8 threads"
                : "CSV outputs differ";
  }
  (void)std::system(("rm -rf " + dir).c_str());
  report(10, ok, detail);
}

// 11: error at convergence improves on the initialization-pass error.
static void criterion11() {
  ExperimentPlan plan;
  plan.methods = {Method::ApLs};
  plan.snrGridDb = {0.0};
  plan.rhoGrid = {1.0};
  plan.QGrid = {2};
  plan.trials = 100;
  plan.masterSeed = 63;
  BenchResult r = runPlan(plan, benchThreads());
  std::vector<double> finalErr, initErr;
  int strictlyBetter = 0;
  for (const TrialRecord& t : r.records) {
    if (t.failed) continue;
    finalErr.push_back(t.meanErrorMm);
    initErr.push_back(t.firstSweepErrorMm);
    if (t.meanErrorMm < t.firstSweepErrorMm - 1e-12) ++strictlyBetter;
  }
  const double mFinal = medianOf(finalErr);
  const double mInit = medianOf(initErr);
  std::ostringstream d;
  d << "median init " << mInit << " mm -> final " << mFinal << " mm, "
    << strictlyBetter << "/" << finalErr.size() << " strictly improved";
  report(11,
         finalErr.size() == 100 && mFinal <= mInit &&
             strictlyBetter * 10 >= 3 * static_cast<int>(finalErr.size()),
         d.str());
}

int main(int argc, char** argv) {
  const std::string cli = argc > 1 ? argv[1] : "";
  criteria1and2();
  criterion3();
  criterion4();
  criteria5and9();
  criterion6();
  criterion7();
  criterion8();
  criterion10(cli);
  criterion11();
  std::cout << (gFailures == 0 ? "all criteria passed"
                               : std::to_string(gFailures) + " criteria failed")
            << std::endl;
  return gFailures == 0 ? 0 : 1;
}
