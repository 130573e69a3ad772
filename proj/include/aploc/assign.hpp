#pragma once

#include <algorithm>
#include <limits>
#include <numeric>
#include <vector>

#include "aploc/errors.hpp"
#include "aploc/linalg.hpp"

namespace aploc {

// Minimum-cost perfect matching on a square cost matrix (Jonker-Volgenant
// style shortest augmenting path, O(n^3)). Returns rowMatch[i] = column
// assigned to row i.
inline std::vector<int> solveAssignment(const Matrix& cost) {
  const int n = static_cast<int>(cost.rows());
  if (cost.cols() != n) throw InvalidData("solveAssignment: square matrix required");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, false);
    do {
      used[j0] = true;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> rowMatch(n, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] > 0) rowMatch[p[j] - 1] = j - 1;
  return rowMatch;
}

struct SourceMatch {
  std::vector<int> pairing;       // pairing[i] = truth index for estimate i
  std::vector<double> distances;  // per estimate, meters
  double total = 0.0;
};

// Minimum-total-distance matching of estimated to true positions.
// Brute force over permutations up to Q = 6, assignment solver above that.
inline SourceMatch matchSources(const std::vector<Vec3>& estimated,
                                const std::vector<Vec3>& truth) {
  const int q = static_cast<int>(estimated.size());
  if (static_cast<int>(truth.size()) != q)
    throw InvalidData("matchSources: count mismatch");
  SourceMatch m;
  if (q == 0) return m;
  Matrix cost(q, q);
  for (int i = 0; i < q; ++i)
    for (int j = 0; j < q; ++j) cost(i, j) = (estimated[i] - truth[j]).norm();
  if (q <= 6) {
    std::vector<int> perm(q), best(q);
    std::iota(perm.begin(), perm.end(), 0);
    double bestTotal = std::numeric_limits<double>::infinity();
    do {
      double t = 0.0;
      for (int i = 0; i < q; ++i) t += cost(i, perm[i]);
      if (t < bestTotal) {
        bestTotal = t;
        best = perm;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
    m.pairing = best;
  } else {
    m.pairing = solveAssignment(cost);
  }
  m.distances.resize(q);
  for (int i = 0; i < q; ++i) {
    m.distances[i] = cost(i, m.pairing[i]);
    m.total += m.distances[i];
  }
  return m;
}

}  // namespace aploc
