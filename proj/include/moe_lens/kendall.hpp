#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "moe_lens/error.hpp"

namespace moe_lens {

namespace detail {

// Counts inversions of v while merge-sorting it in place.
inline std::uint64_t count_inversions(std::vector<std::size_t>& v, std::vector<std::size_t>& buf,
                                      std::size_t lo, std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::uint64_t inv = count_inversions(v, buf, lo, mid) + count_inversions(v, buf, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      inv += mid - i;
      buf[k++] = v[j++];
    } else {
      buf[k++] = v[i++];
    }
  }
  while (i < mid) buf[k++] = v[i++];
  while (j < hi) buf[k++] = v[j++];
  std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
            v.begin() + static_cast<std::ptrdiff_t>(lo));
  return inv;
}

}  // namespace detail

/// Kendall's tau-a between two orderings of the same distinct values,
/// (concordant - discordant) / (n(n-1)/2). O(n log n).
inline double kendall_tau(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  if (a.size() != b.size()) throw Error("kendall tau: length mismatch");
  const std::size_t n = a.size();
  if (n < 2) throw Error("kendall tau: need at least 2 elements");
  {
    std::vector<std::size_t> sa(a.begin(), a.end()), sb(b.begin(), b.end());
    std::ranges::sort(sa);
    std::ranges::sort(sb);
    if (std::adjacent_find(sa.begin(), sa.end()) != sa.end() || sa != sb)
      throw Error("kendall tau: inputs are not permutations of the same set");
  }
  // Order positions by a, then count inversions of b along that order.
  std::vector<std::size_t> pos(n);
  std::iota(pos.begin(), pos.end(), std::size_t{0});
  std::ranges::sort(pos, {}, [&](std::size_t i) { return a[i]; });
  std::vector<std::size_t> seq(n), buf(n);
  for (std::size_t i = 0; i < n; ++i) seq[i] = b[pos[i]];
  const auto discordant = static_cast<double>(detail::count_inversions(seq, buf, 0, n));
  const double pairs = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
  return (pairs - 2.0 * discordant) / pairs;
}

/// Tau of a permutation against the identity ordering.
inline double kendall_tau_vs_identity(std::span<const std::size_t> perm) {
  std::vector<std::size_t> id(perm.size());
  std::iota(id.begin(), id.end(), std::size_t{0});
  return kendall_tau(perm, id);
}

}  // namespace moe_lens
