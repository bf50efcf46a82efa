#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <span>
#include <vector>

#include "bcla/error.hpp"

namespace bcla {

struct RankSumResult {
  double p_value = 1.0;  // two-sided
  double rank_sum = 0.0;  // sum of mid-ranks of the first sample
  bool exact = false;
  bool degenerate = false;  // every value identical across both samples
};

inline constexpr std::size_t kExactRankSumLimit = 8;

namespace detail {

// Twice the mid-rank of every pooled value (always an integer), first sample
// first.
inline std::vector<std::int64_t> doubled_midranks(std::span<const double> a, std::span<const double> b,
                                                  std::vector<std::size_t>* tie_sizes = nullptr) {
  const std::size_t n = a.size() + b.size();
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return pooled[x] < pooled[y]; });
  std::vector<std::int64_t> ranks(n);
  for (std::size_t s = 0; s < n;) {
    std::size_t e = s;
    while (e + 1 < n && pooled[order[e + 1]] == pooled[order[s]]) ++e;
    // positions s..e hold ranks s+1..e+1; doubled mid-rank = (s+1) + (e+1)
    const auto r2 = static_cast<std::int64_t>(s + e + 2);
    for (std::size_t k = s; k <= e; ++k) ranks[order[k]] = r2;
    if (tie_sizes) tie_sizes->push_back(e - s + 1);
    s = e + 1;
  }
  return ranks;
}

}  // namespace detail

// Two-sided Wilcoxon rank-sum test with mid-ranks for ties. When the smaller
// sample has at most 8 values the null distribution of the rank sum is
// counted exactly (tie-aware); otherwise the tie-corrected normal
// approximation with continuity correction is used.
inline RankSumResult wilcoxon_rank_sum(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw InputError("wilcoxon_rank_sum: both samples must be non-empty");
  for (double x : a)
    if (std::isnan(x)) throw InputError("wilcoxon_rank_sum: NaN in sample");
  for (double x : b)
    if (std::isnan(x)) throw InputError("wilcoxon_rank_sum: NaN in sample");

  RankSumResult res;
  std::vector<std::size_t> ties;
  const auto r2 = detail::doubled_midranks(a, b, &ties);
  const std::size_t na = a.size(), nb = b.size(), n = na + nb;
  std::int64_t w2 = 0;
  for (std::size_t k = 0; k < na; ++k) w2 += r2[k];
  res.rank_sum = static_cast<double>(w2) / 2.0;
  if (ties.size() == 1) {
    res.degenerate = true;
    res.p_value = 1.0;
    return res;
  }

  if (std::min(na, nb) <= kExactRankSumLimit) {
    // Count subsets of the smaller size by doubled rank sum.
    const bool first = na <= nb;
    const std::size_t m = first ? na : nb;
    const std::int64_t obs = first ? w2 : static_cast<std::int64_t>(n) * static_cast<std::int64_t>(n + 1) - w2;
    const std::int64_t centre = static_cast<std::int64_t>(m) * static_cast<std::int64_t>(n + 1);
    const std::int64_t dev = std::abs(obs - centre);
    std::int64_t max_sum = 0;
    {
      auto sorted = r2;
      std::sort(sorted.rbegin(), sorted.rend());
      for (std::size_t k = 0; k < m; ++k) max_sum += sorted[k];
    }
    const auto width = static_cast<std::size_t>(max_sum + 1);
    std::vector<double> count((m + 1) * width, 0.0);
    count[0] = 1.0;
    for (std::size_t item = 0; item < n; ++item) {
      const auto r = static_cast<std::size_t>(r2[item]);
      for (std::size_t k = std::min(m, item + 1); k >= 1; --k) {
        double* dst = &count[k * width];
        const double* src = &count[(k - 1) * width];
        for (std::size_t s = width; s-- > r;) dst[s] += src[s - r];
      }
    }
    double total = 0.0, extreme = 0.0;
    for (std::size_t s = 0; s < width; ++s) {
      const double c = count[m * width + s];
      if (c == 0.0) continue;
      total += c;
      if (std::abs(static_cast<std::int64_t>(s) - centre) >= dev) extreme += c;
    }
    res.exact = true;
    res.p_value = std::min(1.0, extreme / total);
    return res;
  }

  const double dn = static_cast<double>(n), dna = static_cast<double>(na), dnb = static_cast<double>(nb);
  double tie_term = 0.0;
  for (std::size_t t : ties) {
    const double dt = static_cast<double>(t);
    tie_term += dt * dt * dt - dt;
  }
  const double var = dna * dnb / 12.0 * ((dn + 1.0) - tie_term / (dn * (dn - 1.0)));
  const double expected = dna * (dn + 1.0) / 2.0;
  const double diff = std::max(0.0, std::abs(res.rank_sum - expected) - 0.5);
  res.p_value = std::min(1.0, std::erfc(diff / std::sqrt(var) / std::numbers::sqrt2));
  return res;
}

}  // namespace bcla
