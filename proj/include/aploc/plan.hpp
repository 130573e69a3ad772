#pragma once

#include <json.hpp>
#include <fstream>
#include <set>
#include <string>

#include "aploc/bench.hpp"
#include "aploc/errors.hpp"

namespace aploc {

// JSON plan / result serialization. The plan schema mirrors ExperimentPlan
// field for field; unknown keys are rejected.

inline nlohmann::json tableJson(const std::vector<CellSummary>& table) {
  nlohmann::json rows = nlohmann::json::array();
  for (const CellSummary& s : table) {
    rows.push_back({{"method", methodName(s.method)},
                    {"snrDb", s.snrDb},
                    {"rho", s.rho},
                    {"Q", s.Q},
                    {"trials", s.trials},
                    {"meanErr", s.meanErrMm},
                    {"medianErr", s.medianErrMm},
                    {"meanSweeps", s.meanSweeps},
                    {"convergedFrac", s.convergedFrac}});
  }
  return rows;
}

inline std::vector<CellSummary> tableFromJson(const nlohmann::json& rows) {
  std::vector<CellSummary> table;
  for (const auto& r : rows) {
    auto m = methodFromName(r.at("method").get<std::string>());
    if (!m) throw FormatError("tableFromJson: unknown method");
    table.push_back({*m, r.at("snrDb").get<double>(), r.at("rho").get<double>(),
                     r.at("Q").get<int>(), r.at("trials").get<int>(),
                     r.at("meanErr").get<double>(),
                     r.at("medianErr").get<double>(),
                     r.at("meanSweeps").get<double>(),
                     r.at("convergedFrac").get<double>()});
  }
  return table;
}

inline void exportJson(const std::vector<CellSummary>& table,
                       const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("exportJson: cannot open " + path);
  os << tableJson(table).dump(2) << "\n";
  if (!os) throw FormatError("exportJson: write failed for " + path);
}

inline ExperimentPlan planFromJson(const nlohmann::json& j) {
  static const std::set<std::string> known = {
      "methods", "snrGridDb", "rhoGrid", "QGrid", "trials", "N",
      "masterSeed", "geometry", "subspaceTruncation", "orientationMode",
      "minSeparationMm", "noiseless", "maxSweeps"};
  static const std::set<std::string> knownGeo = {
      "sensorCount", "sensorRadiusMm", "capFraction", "gridRadiusMm",
      "gridResolutionMm", "center", "gainFile"};
  std::string bad;
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) bad += (bad.empty() ? "" : ", ") + it.key();
  if (j.contains("geometry"))
    for (auto it = j["geometry"].begin(); it != j["geometry"].end(); ++it)
      if (!knownGeo.count(it.key()))
        bad += (bad.empty() ? "" : ", ") + ("geometry." + it.key());
  if (!bad.empty()) throw ConfigError("plan: unknown keys: " + bad);

  ExperimentPlan plan;
  if (j.contains("methods")) {
    plan.methods.clear();
    for (const auto& name : j["methods"]) {
      auto m = methodFromName(name.get<std::string>());
      if (!m)
        throw ConfigError("plan: unknown method '" + name.get<std::string>() + "'");
      plan.methods.push_back(*m);
    }
  }
  if (j.contains("snrGridDb"))
    plan.snrGridDb = j["snrGridDb"].get<std::vector<double>>();
  if (j.contains("rhoGrid")) plan.rhoGrid = j["rhoGrid"].get<std::vector<double>>();
  if (j.contains("QGrid")) plan.QGrid = j["QGrid"].get<std::vector<int>>();
  if (j.contains("trials")) plan.trials = j["trials"].get<int>();
  if (j.contains("N")) plan.N = j["N"].get<int>();
  if (j.contains("masterSeed"))
    plan.masterSeed = j["masterSeed"].get<std::uint64_t>();
  if (j.contains("subspaceTruncation"))
    plan.subspaceTruncation = j["subspaceTruncation"].get<int>();
  if (j.contains("orientationMode")) {
    const std::string s = j["orientationMode"].get<std::string>();
    if (s == "fixed") plan.orientationMode = OrientationMode::Fixed;
    else if (s == "free") plan.orientationMode = OrientationMode::Free;
    else throw ConfigError("plan: orientationMode must be 'fixed' or 'free'");
  }
  if (j.contains("minSeparationMm"))
    plan.minSeparation = j["minSeparationMm"].get<double>() / 1000.0;
  if (j.contains("noiseless")) plan.noiseless = j["noiseless"].get<bool>();
  if (j.contains("maxSweeps")) plan.maxSweeps = j["maxSweeps"].get<int>();
  if (j.contains("geometry")) {
    const auto& g = j["geometry"];
    if (g.contains("sensorCount"))
      plan.geometry.sensorCount = g["sensorCount"].get<int>();
    if (g.contains("sensorRadiusMm"))
      plan.geometry.sensorRadius = g["sensorRadiusMm"].get<double>() / 1000.0;
    if (g.contains("capFraction"))
      plan.geometry.capFraction = g["capFraction"].get<double>();
    if (g.contains("gridRadiusMm"))
      plan.geometry.gridRadius = g["gridRadiusMm"].get<double>() / 1000.0;
    if (g.contains("gridResolutionMm"))
      plan.geometry.gridResolution = g["gridResolutionMm"].get<double>() / 1000.0;
    if (g.contains("center")) {
      const auto c = g["center"].get<std::vector<double>>();
      if (c.size() != 3) throw ConfigError("plan: geometry.center needs 3 values");
      plan.geometry.center = Vec3(c[0], c[1], c[2]);
    }
    if (g.contains("gainFile"))
      plan.geometry.gainFile = g["gainFile"].get<std::string>();
  }
  return plan;
}

inline ExperimentPlan loadPlan(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("loadPlan: cannot open " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("loadPlan: ") + e.what());
  }
  return planFromJson(j);
}

}  // namespace aploc
