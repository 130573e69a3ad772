// Command-line front end: gain-table generation, dataset simulation,
// single-dataset localization, and Monte-Carlo benchmarks.
//
// Machine-readable output goes to stdout; logs go to stderr.
// Exit codes: 0 success, 2 configuration/geometry error, 3 I/O error.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "aploc/bench.hpp"
#include "aploc/forward.hpp"
#include "aploc/io.hpp"
#include "aploc/localize.hpp"
#include "aploc/plan.hpp"
#include "aploc/rng.hpp"
#include "aploc/signal.hpp"
#include "aploc/svg.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;

std::uint64_t defaultSeed() {
  if (const char* env = std::getenv("AP_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      std::cerr << "warning: ignoring unparsable AP_SEED\n";
    }
  }
  return 1;
}

aploc::SensorArray loadSensors(const std::string& spec) {
  // Presets: "fib102" (default) or "fib<N>"; otherwise a text file with one
  // sensor per line: px py pz ox oy oz (meters, unit orientation).
  if (spec.rfind("fib", 0) == 0) {
    const int m = spec.size() > 3 ? std::stoi(spec.substr(3)) : 102;
    return aploc::fibonacciCapArray(m);
  }
  std::ifstream is(spec);
  if (!is) throw aploc::FormatError("cannot open sensor file " + spec);
  aploc::SensorArray arr;
  double px, py, pz, ox, oy, oz;
  while (is >> px >> py >> pz >> ox >> oy >> oz) {
    arr.positions.emplace_back(px, py, pz);
    aploc::Vec3 o(ox, oy, oz);
    if (o.norm() < 1e-12)
      throw aploc::FormatError("zero sensor orientation in " + spec);
    arr.orientations.push_back(o.normalized());
  }
  if (arr.count() < 4)
    throw aploc::InvalidGeometry("sensor file has fewer than 4 sensors");
  return arr;
}

int cmdGenGain(const std::string& sensors, double radiusMm, double resolutionMm,
               const std::string& out) {
  aploc::SensorArray arr;
  aploc::SourceSpace space;
  try {
    arr = loadSensors(sensors);
    space = aploc::buildSphericalGrid(radiusMm / 1000.0, resolutionMm / 1000.0);
    space = aploc::precomputeGain(std::move(space), arr);
  } catch (const aploc::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  try {
    aploc::saveGainTable(space, out);
  } catch (const aploc::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  std::cout << space.size() << "\n";
  std::cerr << "wrote " << out << " (" << arr.count() << " sensors, "
            << space.size() << " grid points)\n";
  return 0;
}

int cmdSimulate(const std::string& gainPath, int q, double rho,
                std::optional<double> snrDb, int n, std::uint64_t seed,
                double minSepMm, const std::string& out) {
  try {
    const aploc::SourceSpace space = aploc::loadGainTable(gainPath);
    aploc::Rng place = aploc::Rng::stream(seed, aploc::Rng::kPlacement);
    const std::vector<int> idx = aploc::detail::placeSources(
        space, q, minSepMm / 1000.0, place);
    std::vector<aploc::Dipole> dipoles(q);
    aploc::Matrix A(space.gain[0].rows(), q);
    for (int i = 0; i < q; ++i) {
      dipoles[i].position = space.points[idx[i]];
      dipoles[i].orientation = aploc::detail::randomTangential(
          space.points[idx[i]], aploc::Vec3::Zero(), place);
      A.col(i) = space.gain[idx[i]] * dipoles[i].orientation;
    }
    const aploc::WaveformSet waves = aploc::makeWaveforms(q, n, rho, seed);
    const aploc::Dataset ds =
        aploc::synthesizeFromMixing(A, dipoles, waves, snrDb, seed);
    aploc::saveDataset(ds.Y, ds.truth, out);
    json info;
    info["samples"] = n;
    info["sources"] = q;
    if (snrDb) {
      const aploc::Matrix noise = ds.Y - A * waves.S;
      info["realizedSnrRatio"] = (A * waves.S).norm() / noise.norm();
      info["snrDb"] = *snrDb;
    } else {
      info["noiseless"] = true;
    }
    json corr = json::array();
    for (int i = 0; i < q; ++i)
      for (int j = i + 1; j < q; ++j)
        corr.push_back(aploc::correlation(waves.S.row(i).transpose(),
                                          waves.S.row(j).transpose()));
    info["pairwiseCorrelations"] = corr;
    std::cout << info.dump(2) << "\n";
    std::cerr << "wrote " << out << "\n";
    return 0;
  } catch (const aploc::FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const aploc::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}

int cmdLocalize(const std::string& gainPath, const std::string& dataPath,
                const std::string& method, int qArg,
                const std::string& orientation, int maxSweeps,
                const std::string& out) {
  const auto m = aploc::methodFromName(method);
  if (!m) {
    std::cerr << "error: unknown method '" << method
              << "'; available: ap, ap-music, ap-wmusic, ap-sync, music, "
                 "rap-music, rap-beamformer\n";
    return kExitConfig;
  }
  try {
    const aploc::SourceSpace space = aploc::loadGainTable(gainPath);
    const aploc::DatasetFile data = aploc::loadDataset(dataPath);
    const int q = qArg > 0 ? qArg : static_cast<int>(data.truth.size());
    if (q < 1) {
      std::cerr << "error: --q required (dataset has no truth block)\n";
      return kExitConfig;
    }
    const aploc::OrientationMode mode = orientation == "fixed"
                                            ? aploc::OrientationMode::Fixed
                                            : aploc::OrientationMode::Free;
    std::vector<aploc::Vec3> orients;
    if (mode == aploc::OrientationMode::Fixed) {
      if (static_cast<int>(data.truth.size()) < q) {
        std::cerr << "error: fixed orientation mode needs a truth block\n";
        return kExitConfig;
      }
      for (int i = 0; i < q; ++i) orients.push_back(data.truth[i].orientation);
    }
    const aploc::Covariance cov = aploc::covariance(data.Y);
    const aploc::SubspaceDecomp sub =
        aploc::signalSubspace(cov, std::min(q, cov.dim()));
    aploc::SolverConfig cfg;
    cfg.Q = q;
    cfg.maxSweeps = maxSweeps;

    json res;
    res["method"] = method;
    auto emitIterative = [&](const aploc::LocalizationResult& lr) {
      res["sweeps"] = lr.sweeps;
      res["converged"] = lr.converged;
      res["objectiveTrace"] = lr.objectiveTrace;
      json pos = json::array(), ori = json::array();
      for (int i = 0; i < q; ++i) {
        pos.push_back({lr.positions[i][0] * 1000.0, lr.positions[i][1] * 1000.0,
                       lr.positions[i][2] * 1000.0});
        ori.push_back({lr.orientations[i][0], lr.orientations[i][1],
                       lr.orientations[i][2]});
      }
      res["positionsMm"] = pos;
      res["orientations"] = ori;
    };
    auto emitScan = [&](const aploc::ScanResult& sr) {
      res["sweeps"] = 0;
      res["converged"] = true;
      json pos = json::array(), ori = json::array();
      for (int i = 0; i < q; ++i) {
        pos.push_back({sr.positions[i][0] * 1000.0, sr.positions[i][1] * 1000.0,
                       sr.positions[i][2] * 1000.0});
        ori.push_back({sr.orientations[i][0], sr.orientations[i][1],
                       sr.orientations[i][2]});
      }
      res["positionsMm"] = pos;
      res["orientations"] = ori;
      res["localizerValues"] = sr.values;
      if (sr.lowConfidence) res["lowConfidence"] = true;
      if (sr.padded) res["padded"] = true;
    };

    switch (*m) {
      case aploc::Method::ApLs:
        emitIterative(mode == aploc::OrientationMode::Fixed
                          ? aploc::apLocalizeFixed(cov, space, orients, cfg)
                          : aploc::apLocalizeFree(cov, space, cfg));
        break;
      case aploc::Method::ApMusic:
        emitIterative(aploc::apMusic(sub, space, cfg, mode, orients));
        break;
      case aploc::Method::ApWMusic:
        emitIterative(aploc::apWMusic(sub, space, cfg, mode, orients));
        break;
      case aploc::Method::ApSync:
        emitIterative(aploc::apSync(sub.u1(), space, cfg, mode, orients));
        break;
      case aploc::Method::Music:
        emitScan(mode == aploc::OrientationMode::Fixed
                     ? aploc::classicMusic(sub, space, q, mode, {orients[0]})
                     : aploc::classicMusic(sub, space, q, mode));
        break;
      case aploc::Method::RapMusic:
        emitScan(aploc::rapMusic(sub, space, q, mode, orients));
        break;
      case aploc::Method::RapBeamformer:
        if (data.Y.cols() == 1)
          std::cerr << "warning: rap-beamformer on a single sample is "
                       "degraded (rank-1 covariance)\n";
        emitScan(aploc::rapBeamformer(cov, space, q, mode, orients));
        break;
    }

    if (!data.truth.empty() &&
        static_cast<int>(data.truth.size()) == q) {
      std::vector<aploc::Vec3> est, truth;
      for (const auto& p : res["positionsMm"])
        est.emplace_back(p[0].get<double>() / 1000.0, p[1].get<double>() / 1000.0,
                         p[2].get<double>() / 1000.0);
      for (const auto& d : data.truth) truth.push_back(d.position);
      const aploc::SourceMatch match = aploc::matchSources(est, truth);
      json errs = json::array();
      for (double d : match.distances) errs.push_back(d * 1000.0);
      res["errorsMm"] = errs;
      res["meanErrorMm"] = match.total / q * 1000.0;
    }

    std::cout << res.dump(2) << "\n";
    if (!out.empty()) {
      std::ofstream os(out);
      if (!os) {
        std::cerr << "error: cannot open " << out << "\n";
        return kExitIo;
      }
      os << res.dump(2) << "\n";
    }
    return 0;
  } catch (const aploc::FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const aploc::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}

int cmdBench(const std::string& planPath, const std::string& outDir,
             int threads, std::optional<std::uint64_t> seedOverride) {
  aploc::ExperimentPlan plan;
  try {
    plan = aploc::loadPlan(planPath);
  } catch (const aploc::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const aploc::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  // Seed precedence: --seed flag > AP_SEED env > plan file.
  if (seedOverride) {
    plan.masterSeed = *seedOverride;
  } else if (const char* env = std::getenv("AP_SEED")) {
    try {
      plan.masterSeed = std::stoull(env);
    } catch (const std::exception&) {
      std::cerr << "warning: ignoring unparsable AP_SEED\n";
    }
  }
  try {
    fs::create_directories(outDir);
    std::cerr << "running plan " << planPath << " with " << threads
              << " thread(s), seed " << plan.masterSeed << "\n";
    const aploc::BenchResult result = aploc::runPlan(plan, threads);
    aploc::exportCsv(result.table, (fs::path(outDir) / "results.csv").string());
    aploc::exportJson(result.table, (fs::path(outDir) / "results.json").string());

    // One chart per swept variable with more than one value.
    auto seriesFor = [&](auto xOf, auto cellFilter) {
      std::map<std::string, aploc::ChartSeries> byMethod;
      for (const aploc::CellSummary& s : result.table) {
        if (!cellFilter(s)) continue;
        auto& ser = byMethod[aploc::methodName(s.method)];
        ser.label = aploc::methodName(s.method);
        ser.points.emplace_back(xOf(s), s.medianErrMm);
      }
      std::vector<aploc::ChartSeries> out;
      for (auto& [name, ser] : byMethod) out.push_back(ser);
      return out;
    };
    if (plan.snrGridDb.size() > 1) {
      const double rho0 = plan.rhoGrid.front();
      const int q0 = plan.QGrid.front();
      aploc::writeLineChart(
          (fs::path(outDir) / "error_vs_snr.svg").string(),
          "Median localization error vs SNR", "SNR (dB)",
          "Localization error (mm)",
          seriesFor([](const aploc::CellSummary& s) { return s.snrDb; },
                    [&](const aploc::CellSummary& s) {
                      return s.rho == rho0 && s.Q == q0;
                    }));
    }
    if (plan.rhoGrid.size() > 1) {
      const double snr0 = plan.snrGridDb.front();
      const int q0 = plan.QGrid.front();
      aploc::writeLineChart(
          (fs::path(outDir) / "error_vs_rho.svg").string(),
          "Median localization error vs correlation", "Correlation (rho)",
          "Localization error (mm)",
          seriesFor([](const aploc::CellSummary& s) { return s.rho; },
                    [&](const aploc::CellSummary& s) {
                      return s.snrDb == snr0 && s.Q == q0;
                    }));
    }
    std::cout << aploc::tableCsv(result.table);
    std::cerr << "wrote results to " << outDir << "\n";
    return 0;
  } catch (const aploc::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const aploc::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dipole source localization by alternating projection"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-gain", "Build a spherical grid gain table");
  std::string genSensors = "fib102", genOut;
  double genRadius = 64.5, genResolution = 2.5;
  gen->add_option("--sensors", genSensors, "Sensor preset (fib<N>) or file");
  gen->add_option("--radius", genRadius, "Grid sphere radius (mm)");
  gen->add_option("--resolution", genResolution, "Grid spacing (mm)");
  gen->add_option("--out", genOut, "Output gain-table path")->required();

  auto* sim = app.add_subcommand("simulate", "Synthesize a correlated-source dataset");
  std::string simGain, simOut;
  int simQ = 2, simN = 50;
  double simRho = 0.5, simSnr = 0.0, simMinSep = 25.0;
  bool simNoiseless = false;
  std::uint64_t simSeed = defaultSeed();
  sim->add_option("--gain", simGain, "Gain-table path")->required();
  sim->add_option("--q", simQ, "Number of sources");
  sim->add_option("--rho", simRho, "Pairwise correlation in [0,1]");
  sim->add_option("--snr", simSnr, "Frobenius SNR (dB)");
  sim->add_flag("--noiseless", simNoiseless, "No noise (ignores --snr)");
  sim->add_option("--n", simN, "Samples");
  sim->add_option("--seed", simSeed, "RNG seed");
  sim->add_option("--min-sep-mm", simMinSep, "Minimum source separation (mm)");
  sim->add_option("--out", simOut, "Output dataset path")->required();

  auto* loc = app.add_subcommand("localize", "Localize sources in a dataset");
  std::string locGain, locData, locMethod = "ap", locOrient = "free", locOut;
  int locQ = 0, locSweeps = 20;
  loc->add_option("--gain", locGain, "Gain-table path")->required();
  loc->add_option("--data", locData, "Dataset path")->required();
  loc->add_option("--method", locMethod,
                  "ap | ap-music | ap-wmusic | ap-sync | music | rap-music | rap-beamformer");
  loc->add_option("--q", locQ, "Number of sources (default: truth block)");
  loc->add_option("--orientation", locOrient, "fixed | free")
      ->check(CLI::IsMember({"fixed", "free"}));
  loc->add_option("--max-sweeps", locSweeps, "AP sweep cap");
  loc->add_option("--out", locOut, "Write result JSON here too");

  auto* bench = app.add_subcommand("bench", "Run a Monte-Carlo benchmark plan");
  std::string benchPlan, benchOut = "bench-out";
  int benchThreads = 1;
  std::optional<std::uint64_t> benchSeed;
  bench->add_option("--plan", benchPlan, "Plan JSON path")->required();
  bench->add_option("--out", benchOut, "Output directory");
  bench->add_option("--threads", benchThreads, "Worker threads");
  bench->add_option("--seed", [&benchSeed](const std::vector<std::string>& v) {
    benchSeed = std::stoull(v[0]);
    return true;
  }, "Override master seed");

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed()) return cmdGenGain(genSensors, genRadius, genResolution, genOut);
  if (sim->parsed())
    return cmdSimulate(simGain, simQ, simRho,
                       simNoiseless ? std::nullopt : std::optional<double>(simSnr),
                       simN, simSeed, simMinSep, simOut);
  if (loc->parsed())
    return cmdLocalize(locGain, locData, locMethod, locQ, locOrient, locSweeps, locOut);
  if (bench->parsed()) return cmdBench(benchPlan, benchOut, benchThreads, benchSeed);
  return kExitConfig;
}
