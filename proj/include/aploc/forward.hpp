#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <vector>

#include "aploc/errors.hpp"
#include "aploc/linalg.hpp"

namespace aploc {

// mu0 / 4pi, SI units.
inline constexpr double kMu0Over4Pi = 1e-7;

struct SensorArray {
  std::vector<Vec3> positions;     // meters, head frame
  std::vector<Vec3> orientations;  // unit sensing directions
  int count() const { return static_cast<int>(positions.size()); }
};

struct Dipole {
  Vec3 position = Vec3::Zero();     // meters
  Vec3 orientation = Vec3::UnitZ(); // unit moment direction
  Vector amplitudes;                // optional N-sample time course (A*m)
  bool fixedOrientation = true;
};

// Candidate source locations with (optionally) precomputed M x 3 gain blocks
// and lattice adjacency for local-maxima detection.
struct SourceSpace {
  std::vector<Vec3> points;
  std::vector<Matrix> gain;                    // empty until precomputed/loaded
  std::vector<std::array<int, 6>> neighbors;   // -1 = no neighbor; may be empty
  int size() const { return static_cast<int>(points.size()); }
  bool hasGain() const { return !gain.empty(); }
  bool hasNeighbors() const { return !neighbors.empty(); }
};

// Field of a current dipole inside a spherically symmetric conductor at an
// exterior point, per the closed-form solution for the magnetic field of a
// dipole in a conducting sphere. Positions are relative to the sphere center.
inline Vec3 sphereDipoleField(const Vec3& r0, const Vec3& q, const Vec3& r) {
  const Vec3 a = r - r0;
  const double an = a.norm();
  const double rn = r.norm();
  const double F = an * (rn * an + rn * rn - r0.dot(r));
  if (!(std::abs(F) > 0.0))
    throw InvalidGeometry("sphereDipoleField: field point coincides with source or center");
  const double adotr = a.dot(r);
  const Vec3 gradF = (an * an / rn + adotr / an + 2.0 * an + 2.0 * rn) * r -
                     (an + 2.0 * rn + adotr / an) * r0;
  const Vec3 qxr0 = q.cross(r0);
  return kMu0Over4Pi / (F * F) * (F * qxr0 - qxr0.dot(r) * gradF);
}

// M x 3 lead field of a dipole at p: column j is the projected sensor readings
// of a unit dipole along axis j. Radial moments are silent by construction.
inline Matrix sphereLeadField(const Vec3& p, const SensorArray& sensors,
                              const Vec3& sphereCenter) {
  const int m = sensors.count();
  if (m < 1) throw InvalidGeometry("sphereLeadField: empty sensor array");
  const Vec3 r0 = p - sphereCenter;
  Matrix L(m, 3);
  for (int i = 0; i < m; ++i) {
    const Vec3 r = sensors.positions[i] - sphereCenter;
    if (r.norm() < 1e-9)
      throw InvalidGeometry("sphereLeadField: sensor at conductor center");
    if (r0.norm() >= r.norm())
      throw InvalidGeometry("sphereLeadField: source not inside sensor radius");
    for (int j = 0; j < 3; ++j) {
      const Vec3 b = sphereDipoleField(r0, Vec3::Unit(j), r);
      L(i, j) = b.dot(sensors.orientations[i]);
    }
  }
  return L;
}

// l(p) = L(p) q.
inline Vector topography(const Matrix& L, const Vec3& q) { return L * q; }

// Axis-aligned lattice clipped to the closed ball, ordered lexicographically
// by (z, y, x). Adjacency is the 6-neighborhood along the axes.
inline SourceSpace buildSphericalGrid(double radius, double resolution,
                                      const Vec3& center = Vec3::Zero()) {
  if (!(resolution > 0.0) || !(resolution <= radius) || !(radius > 0.0))
    throw InvalidGeometry("buildSphericalGrid: need 0 < resolution <= radius");
  const int n = static_cast<int>(std::floor(radius / resolution + 1e-12));
  const double r2 = radius * radius * (1.0 + 1e-12);
  SourceSpace space;
  std::map<std::array<int, 3>, int> lattice;
  for (int iz = -n; iz <= n; ++iz)
    for (int iy = -n; iy <= n; ++iy)
      for (int ix = -n; ix <= n; ++ix) {
        const Vec3 off(ix * resolution, iy * resolution, iz * resolution);
        if (off.squaredNorm() <= r2) {
          lattice[{iz, iy, ix}] = space.size();
          space.points.push_back(center + off);
        }
      }
  if (space.size() < 2)
    throw DegenerateGrid("buildSphericalGrid: fewer than 2 points");
  space.neighbors.assign(space.size(), {-1, -1, -1, -1, -1, -1});
  for (const auto& [key, idx] : lattice) {
    const auto [iz, iy, ix] = key;
    const std::array<std::array<int, 3>, 6> steps{{{iz, iy, ix - 1},
                                                   {iz, iy, ix + 1},
                                                   {iz, iy - 1, ix},
                                                   {iz, iy + 1, ix},
                                                   {iz - 1, iy, ix},
                                                   {iz + 1, iy, ix}}};
    for (int s = 0; s < 6; ++s) {
      auto it = lattice.find(steps[s]);
      if (it != lattice.end()) space.neighbors[idx][s] = it->second;
    }
  }
  return space;
}

// Fill in the gain table of a grid with the analytic sphere model.
inline SourceSpace precomputeGain(SourceSpace space, const SensorArray& sensors,
                                  const Vec3& sphereCenter = Vec3::Zero()) {
  space.gain.resize(space.size());
  for (int g = 0; g < space.size(); ++g) {
    try {
      space.gain[g] = sphereLeadField(space.points[g], sensors, sphereCenter);
    } catch (const InvalidGeometry& e) {
      throw InvalidGeometry("precomputeGain: point " + std::to_string(g) +
                            ": " + e.what());
    }
  }
  return space;
}

// Point magnetometers on the upper cap of a sphere following a Fibonacci
// spiral, radially oriented. Approximates a whole-head magnetometer layout
// without vendor geometry files.
inline SensorArray fibonacciCapArray(int m = 102, double radius = 0.12,
                                     double capFraction = 0.6,
                                     const Vec3& center = Vec3::Zero()) {
  if (m < 4) throw InvalidGeometry("fibonacciCapArray: need at least 4 sensors");
  SensorArray arr;
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < m; ++i) {
    // z spans the upper capFraction of the sphere.
    const double z = 1.0 - capFraction * (i + 0.5) / m * 2.0;
    const double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden * i;
    Vec3 u(rho * std::cos(phi), rho * std::sin(phi), z);
    arr.positions.push_back(center + radius * u);
    arr.orientations.push_back(u);
  }
  return arr;
}

}  // namespace aploc
