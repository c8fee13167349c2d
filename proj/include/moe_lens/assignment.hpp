#pragma once

// Dense linear assignment by shortest augmenting paths with dual potentials
// (the Jonker-Volgenant augmentation scheme without its auction-style
// initialization). O(n^3), exact for finite real costs.

#include <cmath>
#include <limits>
#include <vector>

#include "moe_lens/error.hpp"
#include "moe_lens/linalg.hpp"

namespace moe_lens {

/// Returns perm with perm[row] = assigned column, optimizing the total
/// score sum_i score(i, perm[i]). When several assignments are optimal and
/// the path search meets equal reduced costs, the lowest column wins, so a
/// constant matrix yields the identity.
inline std::vector<std::size_t> solve_assignment(const Matrix& score, bool maximize = true) {
  if (score.rows() != score.cols())
    throw Error("assignment needs a square matrix, got " + std::to_string(score.rows()) + "x" +
                std::to_string(score.cols()));
  const std::size_t n = score.rows();
  for (double v : score.data())
    if (!std::isfinite(v)) throw Error("assignment matrix has non-finite entries");
  if (n == 0) return {};

  auto cost = [&](std::size_t i, std::size_t j) { return maximize ? -score(i, j) : score(i, j); };
  constexpr double kInf = std::numeric_limits<double>::infinity();
  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

  // 1-based internally; column 0 is the virtual root of each augmenting tree.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> row_of(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    row_of[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = row_of[j0];
      double delta = kInf;
      std::size_t j1 = kNone;
      for (std::size_t j = 1; j <= n; ++j) {
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
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[row_of[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (row_of[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      row_of[j0] = row_of[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<std::size_t> perm(n);
  for (std::size_t j = 1; j <= n; ++j) perm[row_of[j] - 1] = j - 1;
  return perm;
}

inline double assignment_total(const Matrix& score, std::span<const std::size_t> perm) {
  double total = 0.0;
  for (std::size_t i = 0; i < perm.size(); ++i) total += score(i, perm[i]);
  return total;
}

}  // namespace moe_lens
