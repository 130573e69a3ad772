#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "aploc/errors.hpp"
#include "aploc/forward.hpp"

namespace aploc {

// Binary container formats. Headers are a single ASCII line; payloads are
// little-endian float64. This code assumes a little-endian host.
//
//   APGAIN v1 M=<int> G=<int>\n
//     G records: x y z, then M*3 gain entries column by column (moment axes).
//
//   APDATA v1 M=<int> N=<int>\n
//     Y entries column by column, then optionally
//     TRUTH Q=<int>\n followed by Q records:
//     position (3), orientation (3), one flag byte (0 = fixed, 1 = free).

namespace detail {

inline void writeF64(std::ostream& os, const double* p, std::size_t n) {
  os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * 8));
}

inline void readF64(std::istream& is, double* p, std::size_t n,
                    const std::string& what) {
  is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * 8));
  if (static_cast<std::size_t>(is.gcount()) != n * 8)
    throw FormatError(what + ": truncated at byte offset " +
                      std::to_string(static_cast<long long>(is.tellg())));
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(p[i]))
      throw FormatError(what + ": non-finite value near byte offset " +
                        std::to_string(static_cast<long long>(is.tellg())));
}

inline long long parseHeaderInt(const std::string& line, const std::string& key,
                                const std::string& what) {
  const auto pos = line.find(key + "=");
  if (pos == std::string::npos)
    throw FormatError(what + ": missing " + key + " in header");
  try {
    return std::stoll(line.substr(pos + key.size() + 1));
  } catch (const std::exception&) {
    throw FormatError(what + ": bad " + key + " in header");
  }
}

}  // namespace detail

inline void saveGainTable(const SourceSpace& space, const std::string& path) {
  if (!space.hasGain() ||
      space.gain.size() != static_cast<std::size_t>(space.size()))
    throw InvalidData("saveGainTable: source space has no gain table");
  const int m = static_cast<int>(space.gain[0].rows());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("saveGainTable: cannot open " + path);
  os << "APGAIN v1 M=" << m << " G=" << space.size() << "\n";
  for (int g = 0; g < space.size(); ++g) {
    if (space.gain[g].rows() != m || space.gain[g].cols() != 3)
      throw InvalidData("saveGainTable: inconsistent gain block " +
                        std::to_string(g));
    detail::writeF64(os, space.points[g].data(), 3);
    detail::writeF64(os, space.gain[g].data(), 3 * static_cast<std::size_t>(m));
  }
  if (!os) throw FormatError("saveGainTable: write failed for " + path);
}

inline SourceSpace loadGainTable(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("loadGainTable: cannot open " + path);
  std::string header;
  std::getline(is, header);
  if (header.rfind("APGAIN v1 ", 0) != 0)
    throw FormatError("loadGainTable: bad magic at byte offset 0");
  const long long m = detail::parseHeaderInt(header, "M", "loadGainTable");
  const long long g = detail::parseHeaderInt(header, "G", "loadGainTable");
  if (m < 1 || g < 2)
    throw FormatError("loadGainTable: invalid dimensions M=" +
                      std::to_string(m) + " G=" + std::to_string(g));
  SourceSpace space;
  space.points.resize(g);
  space.gain.resize(g);
  for (long long i = 0; i < g; ++i) {
    detail::readF64(is, space.points[i].data(), 3, "loadGainTable");
    space.gain[i].resize(m, 3);
    detail::readF64(is, space.gain[i].data(), 3 * static_cast<std::size_t>(m),
                    "loadGainTable");
  }
  char extra;
  if (is.read(&extra, 1))
    throw FormatError("loadGainTable: trailing bytes at offset " +
                      std::to_string(static_cast<long long>(is.tellg()) - 1));
  return space;
}

struct DatasetFile {
  Matrix Y;
  std::vector<Dipole> truth;  // positions/orientations only
};

inline void saveDataset(const Matrix& Y, const std::vector<Dipole>& truth,
                        const std::string& path) {
  if (Y.rows() < 1 || Y.cols() < 1 || !Y.allFinite())
    throw InvalidData("saveDataset: bad measurement matrix");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("saveDataset: cannot open " + path);
  os << "APDATA v1 M=" << Y.rows() << " N=" << Y.cols() << "\n";
  detail::writeF64(os, Y.data(), static_cast<std::size_t>(Y.size()));
  if (!truth.empty()) {
    os << "TRUTH Q=" << truth.size() << "\n";
    for (const Dipole& d : truth) {
      detail::writeF64(os, d.position.data(), 3);
      detail::writeF64(os, d.orientation.data(), 3);
      const char flag = d.fixedOrientation ? 0 : 1;
      os.write(&flag, 1);
    }
  }
  if (!os) throw FormatError("saveDataset: write failed for " + path);
}

inline DatasetFile loadDataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("loadDataset: cannot open " + path);
  std::string header;
  std::getline(is, header);
  if (header.rfind("APDATA v1 ", 0) != 0)
    throw FormatError("loadDataset: bad magic at byte offset 0");
  const long long m = detail::parseHeaderInt(header, "M", "loadDataset");
  const long long n = detail::parseHeaderInt(header, "N", "loadDataset");
  if (m < 1 || n < 1)
    throw FormatError("loadDataset: invalid dimensions");
  DatasetFile f;
  f.Y.resize(m, n);
  detail::readF64(is, f.Y.data(), static_cast<std::size_t>(m * n), "loadDataset");
  std::string truthHeader;
  if (std::getline(is, truthHeader)) {
    if (truthHeader.empty()) return f;
    if (truthHeader.rfind("TRUTH ", 0) != 0)
      throw FormatError("loadDataset: unexpected trailing block");
    const long long q = detail::parseHeaderInt(truthHeader, "Q", "loadDataset");
    if (q < 1) throw FormatError("loadDataset: invalid truth count");
    f.truth.resize(q);
    for (long long i = 0; i < q; ++i) {
      detail::readF64(is, f.truth[i].position.data(), 3, "loadDataset");
      detail::readF64(is, f.truth[i].orientation.data(), 3, "loadDataset");
      char flag;
      if (!is.read(&flag, 1))
        throw FormatError("loadDataset: truncated truth record " +
                          std::to_string(i));
      f.truth[i].fixedOrientation = (flag == 0);
    }
  }
  return f;
}

}  // namespace aploc
