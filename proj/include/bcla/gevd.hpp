#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iostream>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "bcla/error.hpp"
#include "bcla/nelder_mead.hpp"
#include "bcla/rng.hpp"
#include "bcla/stats.hpp"

namespace bcla {

// Generalized extreme value distribution with shape k, scale vartheta and
// location mu; CDF exp(-[1 + k (x - mu) / vartheta]^(-1/k)). k > 0 is the
// heavy-tailed (Frechet) branch.
struct GevdParams {
  double k = 0.0;
  double vartheta = 1.0;
  double mu = 0.0;
};

// Upper bound imposed on every annotator precision during EM.
struct PrecisionCap {
  double lambda_max = std::numeric_limits<double>::infinity();
  GevdParams params{};
  std::size_t n_blocks = 0;
  std::size_t block_size = 0;
  // Set when the MLE failed and the empirical 99th percentile was used.
  bool from_empirical = false;

  static PrecisionCap unbounded() { return {}; }
  static PrecisionCap fixed(double lambda_max) {
    PrecisionCap c;
    c.lambda_max = lambda_max;
    return c;
  }
};

inline constexpr double kGumbelShape = 1e-8;

inline double gevd_log_pdf(const GevdParams& p, double x) {
  const double s = (x - p.mu) / p.vartheta;
  if (std::abs(p.k) < kGumbelShape) return -std::log(p.vartheta) - s - std::exp(-s);
  const double t = 1.0 + p.k * s;
  if (!(t > 0.0)) return -std::numeric_limits<double>::infinity();
  const double lt = std::log(t);
  return -std::log(p.vartheta) - (1.0 + 1.0 / p.k) * lt - std::exp(-lt / p.k);
}

inline double gevd_cdf(const GevdParams& p, double x) {
  const double s = (x - p.mu) / p.vartheta;
  if (std::abs(p.k) < kGumbelShape) return std::exp(-std::exp(-s));
  const double t = 1.0 + p.k * s;
  if (!(t > 0.0)) return p.k > 0.0 ? 0.0 : 1.0;
  return std::exp(-std::pow(t, -1.0 / p.k));
}

inline double gevd_quantile(const GevdParams& p, double prob) {
  if (!(prob > 0.0 && prob < 1.0)) throw InputError("gevd_quantile: probability must lie in (0, 1)");
  const double y = -std::log(prob);
  if (std::abs(p.k) < kGumbelShape) return p.mu - p.vartheta * std::log(y);
  return p.mu + p.vartheta / p.k * (std::pow(y, -p.k) - 1.0);
}

inline double gevd_log_likelihood(const GevdParams& p, std::span<const double> xs) {
  if (!(p.vartheta > 0.0)) return -std::numeric_limits<double>::infinity();
  double ll = 0.0;
  for (double x : xs) {
    const double l = gevd_log_pdf(p, x);
    if (!std::isfinite(l)) return -std::numeric_limits<double>::infinity();
    ll += l;
  }
  return ll;
}

// Each output is the maximum of `block_size` independent Gamma(k, theta)
// draws.
inline std::vector<double> sample_block_maxima(double k_lambda, double vartheta_lambda,
                                               std::size_t block_size, std::size_t n_blocks,
                                               std::uint64_t seed) {
  if (!(k_lambda > 0.0) || !(vartheta_lambda > 0.0))
    throw InputError("sample_block_maxima: Gamma shape and scale must be positive");
  if (block_size < 1) throw InputError("sample_block_maxima: block_size must be >= 1");
  if (n_blocks < 100) throw InputError("sample_block_maxima: n_blocks must be >= 100");
  Engine eng = make_engine(seed);
  std::vector<double> out(n_blocks);
  for (auto& m : out) {
    m = 0.0;
    for (std::size_t b = 0; b < block_size; ++b) m = std::max(m, draw_gamma(eng, k_lambda, vartheta_lambda));
  }
  return out;
}

// Method of L-moments starting point (Hosking, Wallis and Wood 1985).
inline GevdParams gevd_lmoments(std::span<const double> xs) {
  std::vector<double> v(xs.begin(), xs.end());
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  double b0 = 0.0, b1 = 0.0, b2 = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double r = static_cast<double>(i);
    b0 += v[i];
    b1 += v[i] * r / (n - 1.0);
    b2 += v[i] * r * (r - 1.0) / ((n - 1.0) * (n - 2.0));
  }
  b0 /= n;
  b1 /= n;
  b2 /= n;
  const double l1 = b0, l2 = 2.0 * b1 - b0, l3 = 6.0 * b2 - 6.0 * b1 + b0;
  const double t3 = l3 / l2;
  const double c = 2.0 / (3.0 + t3) - std::numbers::ln2 / std::log(3.0);
  // Hosking's shape has the opposite sign to ours.
  const double kh = 7.8590 * c + 2.9554 * c * c;
  GevdParams p;
  if (std::abs(kh) < 1e-6) {
    p.k = 0.0;
    p.vartheta = l2 / std::numbers::ln2;
    p.mu = l1 - std::numbers::egamma * p.vartheta;
  } else {
    const double g = std::tgamma(1.0 + kh);
    p.k = -kh;
    p.vartheta = l2 * kh / ((1.0 - std::pow(2.0, -kh)) * g);
    p.mu = l1 - p.vartheta * (1.0 - g) / kh;
  }
  return p;
}

// Maximum-likelihood fit. The search runs on standardized data from an
// L-moments start, a Gumbel moment start and five random perturbations;
// the best finite optimum wins. Shape is confined to (-1, 1), where the MLE
// is regular.
inline GevdParams fit_gevd(std::span<const double> maxima) {
  if (maxima.size() < 100) throw InputError("fit_gevd: need at least 100 samples");
  for (double x : maxima)
    if (!std::isfinite(x) || !(x > 0.0)) throw InputError("fit_gevd: samples must be finite and positive");
  const double m = stats::mean(maxima);
  const double s = stats::sd(maxima);
  if (!(s > 0.0) || s < 1e-12 * std::abs(m)) throw InputError("fit_gevd: degenerate (constant) sample");

  std::vector<double> z(maxima.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = (maxima[i] - m) / s;

  auto to_params = [](const std::array<double, 3>& x) { return GevdParams{x[0], std::exp(x[1]), x[2]}; };
  auto objective = [&](const std::array<double, 3>& x) {
    if (!(std::abs(x[0]) < 1.0) || !(std::abs(x[1]) < 50.0)) return std::numeric_limits<double>::infinity();
    return -gevd_log_likelihood(to_params(x), z);
  };

  std::vector<std::array<double, 3>> starts;
  const GevdParams lm = gevd_lmoments(z);
  if (std::isfinite(lm.k) && lm.vartheta > 0.0) starts.push_back({lm.k, std::log(lm.vartheta), lm.mu});
  const double gumbel_scale = std::sqrt(6.0) / std::numbers::pi;
  starts.push_back({0.0, std::log(gumbel_scale), -std::numbers::egamma * gumbel_scale});
  Engine eng = make_engine(0x67657664ULL);
  const auto base = starts.front();
  for (int r = 0; r < 5; ++r)
    starts.push_back({std::clamp(base[0] + 0.4 * (draw_uniform(eng) - 0.5), -0.9, 0.9),
                      base[1] + 0.6 * (draw_uniform(eng) - 0.5),
                      base[2] + (draw_uniform(eng) - 0.5) * std::exp(base[1])});

  SimplexResult<3> best;
  for (const auto& start : starts) {
    if (!std::isfinite(objective(start))) continue;
    auto r = nelder_mead<3>(objective, start, {0.05, 0.1, 0.1});
    // Restarting from the optimum guards against a collapsed simplex.
    r = nelder_mead<3>(objective, r.x, {0.01, 0.02, 0.02});
    if (std::isfinite(r.value) && r.value < best.value) best = r;
  }
  if (!std::isfinite(best.value)) throw NumericalError("fit_gevd: optimizer failed from every start");

  GevdParams p = to_params(best.x);
  p.vartheta *= s;
  p.mu = p.mu * s + m;
  if (std::abs(p.k) < kGumbelShape) p.k = 0.0;
  return p;
}

// Caps precision at the 99th percentile of the GEVD fitted to block maxima of
// the precision prior. Falls back to the empirical percentile of the maxima
// (with a warning on stderr) when the fit fails.
inline PrecisionCap precision_upper_bound(double k_lambda, double vartheta_lambda, std::size_t block_size,
                                          std::uint64_t seed, std::size_t n_blocks = 10000,
                                          double prob = 0.99) {
  const auto maxima = sample_block_maxima(k_lambda, vartheta_lambda, block_size, n_blocks, seed);
  PrecisionCap cap;
  cap.n_blocks = n_blocks;
  cap.block_size = block_size;
  try {
    cap.params = fit_gevd(maxima);
    cap.lambda_max = gevd_quantile(cap.params, prob);
  } catch (const NumericalError& e) {
    std::clog << "warning: " << e.what() << "; using the empirical percentile of block maxima\n";
    cap.lambda_max = stats::quantile(maxima, prob);
    cap.from_empirical = true;
  }
  if (!(cap.lambda_max > 0.0) || !std::isfinite(cap.lambda_max))
    throw NumericalError("precision_upper_bound: non-positive bound");
  return cap;
}

}  // namespace bcla
