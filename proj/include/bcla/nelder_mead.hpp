#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>

namespace bcla {

template <std::size_t D>
struct SimplexResult {
  std::array<double, D> x{};
  double value = std::numeric_limits<double>::infinity();
  std::size_t evaluations = 0;
  bool converged = false;
};

// Derivative-free minimization (Nelder-Mead with standard coefficients).
// The objective may return +inf to reject a point; the simplex then contracts
// away from it.
template <std::size_t D, class F>
SimplexResult<D> nelder_mead(F&& f, const std::array<double, D>& start,
                             const std::array<double, D>& step, double ftol = 1e-10,
                             double xtol = 1e-10, std::size_t max_evals = 20000) {
  constexpr double kReflect = 1.0, kExpand = 2.0, kContract = 0.5, kShrink = 0.5;
  std::array<std::array<double, D>, D + 1> pts{};
  std::array<double, D + 1> vals{};
  SimplexResult<D> res;

  auto eval = [&](const std::array<double, D>& x) {
    ++res.evaluations;
    const double v = f(x);
    return std::isnan(v) ? std::numeric_limits<double>::infinity() : v;
  };

  pts[0] = start;
  for (std::size_t k = 0; k < D; ++k) {
    pts[k + 1] = start;
    pts[k + 1][k] += step[k];
  }
  for (std::size_t k = 0; k <= D; ++k) vals[k] = eval(pts[k]);

  std::array<std::size_t, D + 1> order{};
  while (res.evaluations < max_evals) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
    const std::size_t best = order[0], worst = order[D], second = order[D - 1];

    double size = 0.0;
    for (std::size_t k = 1; k <= D; ++k)
      for (std::size_t c = 0; c < D; ++c)
        size = std::max(size, std::abs(pts[order[k]][c] - pts[best][c]));
    if (std::isfinite(vals[worst]) &&
        std::abs(vals[worst] - vals[best]) <= ftol * (1.0 + std::abs(vals[best])) && size <= xtol) {
      res.converged = true;
      break;
    }

    std::array<double, D> centroid{};
    for (std::size_t k = 0; k < D; ++k)
      for (std::size_t c = 0; c < D; ++c) centroid[c] += pts[order[k]][c] / static_cast<double>(D);

    auto along = [&](double t) {
      std::array<double, D> x{};
      for (std::size_t c = 0; c < D; ++c) x[c] = centroid[c] + t * (pts[worst][c] - centroid[c]);
      return x;
    };

    const auto xr = along(-kReflect);
    const double fr = eval(xr);
    if (fr < vals[best]) {
      const auto xe = along(-kExpand);
      const double fe = eval(xe);
      if (fe < fr) {
        pts[worst] = xe;
        vals[worst] = fe;
      } else {
        pts[worst] = xr;
        vals[worst] = fr;
      }
      continue;
    }
    if (fr < vals[second]) {
      pts[worst] = xr;
      vals[worst] = fr;
      continue;
    }
    const bool outside = fr < vals[worst];
    const auto xc = along(outside ? -kContract : kContract);
    const double fc = eval(xc);
    if (fc < (outside ? fr : vals[worst])) {
      pts[worst] = xc;
      vals[worst] = fc;
      continue;
    }
    for (std::size_t k = 1; k <= D; ++k) {
      auto& p = pts[order[k]];
      for (std::size_t c = 0; c < D; ++c) p[c] = pts[best][c] + kShrink * (p[c] - pts[best][c]);
      vals[order[k]] = eval(p);
    }
  }

  const auto it = std::min_element(vals.begin(), vals.end());
  res.value = *it;
  res.x = pts[static_cast<std::size_t>(it - vals.begin())];
  return res;
}

}  // namespace bcla
