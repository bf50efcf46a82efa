#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "bcla/data.hpp"
#include "bcla/error.hpp"
#include "bcla/model.hpp"
#include "bcla/parallel.hpp"
#include "bcla/rng.hpp"
#include "bcla/stats.hpp"
#include "bcla/wilcoxon.hpp"

namespace bcla {

struct MetricSample {
  double rmse = 0.0;
  double mae = 0.0;
  std::size_t n_records_used = 0;
};

namespace detail {

// Differences estimate - reference over pairs where both are finite.
inline std::vector<double> residuals(std::span<const double> est, std::span<const double> ref) {
  if (est.size() != ref.size()) throw InputError("estimates and reference differ in length");
  std::vector<double> r;
  r.reserve(est.size());
  for (std::size_t i = 0; i < est.size(); ++i)
    if (std::isfinite(est[i]) && std::isfinite(ref[i])) r.push_back(est[i] - ref[i]);
  if (r.empty()) throw InputError("estimates and reference have no overlapping records");
  return r;
}

inline MetricSample metrics_of(std::span<const double> resid) {
  double ss = 0.0, sa = 0.0;
  for (double e : resid) {
    ss += e * e;
    sa += std::abs(e);
  }
  const double n = static_cast<double>(resid.size());
  return {std::sqrt(ss / n), sa / n, resid.size()};
}

}  // namespace detail

inline MetricSample metrics(std::span<const double> estimates, std::span<const double> reference) {
  return detail::metrics_of(detail::residuals(estimates, reference));
}

inline double rmse(std::span<const double> estimates, std::span<const double> reference) {
  return metrics(estimates, reference).rmse;
}

inline double mae(std::span<const double> estimates, std::span<const double> reference) {
  return metrics(estimates, reference).mae;
}

struct BootstrapReport {
  std::string method;
  std::vector<MetricSample> samples;
  double mean_rmse = 0.0, sd_rmse = 0.0;
  double mean_mae = 0.0, sd_mae = 0.0;

  std::vector<double> rmse_values() const {
    std::vector<double> v;
    for (const auto& s : samples) v.push_back(s.rmse);
    return v;
  }
  std::vector<double> mae_values() const {
    std::vector<double> v;
    for (const auto& s : samples) v.push_back(s.mae);
    return v;
  }

  void summarize() {
    const auto r = rmse_values(), m = mae_values();
    mean_rmse = stats::mean(r);
    sd_rmse = stats::sd(r);
    mean_mae = stats::mean(m);
    sd_mae = stats::sd(m);
  }
};

// Resamples the per-record residuals of one inference run. Replicate k draws
// from stream (seed, k), so methods evaluated with the same seed on the same
// records see the same resampled records.
inline BootstrapReport bootstrap_metrics(std::span<const double> estimates, std::span<const double> reference,
                                         std::size_t n_boot, std::uint64_t seed, std::string method = {}) {
  if (n_boot < 2) throw InputError("bootstrap: n_boot must be >= 2");
  const auto resid = detail::residuals(estimates, reference);
  BootstrapReport rep{std::move(method), std::vector<MetricSample>(n_boot)};
  std::vector<double> draw(resid.size());
  for (std::size_t k = 0; k < n_boot; ++k) {
    Engine eng = make_engine(seed, k);
    for (auto& d : draw) d = resid[draw_index(eng, resid.size())];
    rep.samples[k] = detail::metrics_of(draw);
  }
  rep.summarize();
  return rep;
}

// Estimates for every record of the given table (NaN where none).
using MethodRunner = std::function<std::vector<double>(const AnnotationTable&, const FeatureTable&)>;

struct NamedRunner {
  std::string name;
  MethodRunner run;
};

// Re-runs inference on every replicate of records drawn with replacement.
inline BootstrapReport bootstrap_refit(const AnnotationTable& data, const FeatureTable& feats,
                                       std::span<const double> reference, const MethodRunner& runner,
                                       std::size_t n_boot, std::uint64_t seed, std::string method = {},
                                       std::size_t threads = 1) {
  if (n_boot < 2) throw InputError("bootstrap: n_boot must be >= 2");
  if (reference.size() != data.n_records()) throw InputError("bootstrap: reference must have one value per record");
  BootstrapReport rep{std::move(method), std::vector<MetricSample>(n_boot)};
  parallel_for(n_boot, threads, [&](std::size_t k) {
    Engine eng = make_engine(seed, k);
    std::vector<std::size_t> rows(data.n_records());
    for (auto& r : rows) r = draw_index(eng, data.n_records());
    const auto sub = data.select_records(rows);
    const auto sub_feats = feats.select_rows(rows);
    std::vector<double> ref;
    for (std::size_t r : rows) ref.push_back(reference[r]);
    rep.samples[k] = metrics(runner(sub, sub_feats), ref);
  });
  rep.summarize();
  return rep;
}

struct PairwiseTests {
  std::vector<std::string> methods;
  std::vector<std::vector<double>> p_rmse;
  std::vector<std::vector<double>> p_mae;
  std::vector<std::vector<bool>> degenerate;
};

inline PairwiseTests pairwise_tests(std::span<const BootstrapReport> reports) {
  PairwiseTests t;
  const std::size_t m = reports.size();
  t.p_rmse.assign(m, std::vector<double>(m, 1.0));
  t.p_mae.assign(m, std::vector<double>(m, 1.0));
  t.degenerate.assign(m, std::vector<bool>(m, true));
  for (const auto& r : reports) t.methods.push_back(r.method);
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = a + 1; b < m; ++b) {
      const auto pr = wilcoxon_rank_sum(reports[a].rmse_values(), reports[b].rmse_values());
      const auto pm = wilcoxon_rank_sum(reports[a].mae_values(), reports[b].mae_values());
      t.p_rmse[a][b] = t.p_rmse[b][a] = pr.p_value;
      t.p_mae[a][b] = t.p_mae[b][a] = pm.p_value;
      t.degenerate[a][b] = t.degenerate[b][a] = pr.degenerate;
    }
  }
  return t;
}

struct SweepCurve {
  std::string method;
  std::vector<std::size_t> annotator_counts;
  std::vector<double> mean_rmse;
  std::vector<double> sd_rmse;
  std::size_t n_repetitions = 0;
  std::vector<std::vector<double>> rmse;  // [count index][repetition]
};

inline constexpr std::size_t kSweepRedrawLimit = 100;

// For each subset size, draws `n_reps` annotator subsets without replacement
// and runs every method on the restricted table (records left unannotated
// are dropped). Subsets are sorted, so the full-size subset reproduces the
// full-data run exactly.
inline std::vector<SweepCurve> annotator_sweep(const AnnotationTable& data, const FeatureTable& feats,
                                               std::span<const double> reference,
                                               std::span<const NamedRunner> methods,
                                               std::span<const std::size_t> sizes, std::size_t n_reps,
                                               std::uint64_t seed, std::size_t threads = 1) {
  const std::size_t r = data.n_annotators();
  if (r < 3) throw InputError("annotator sweep needs at least 3 annotators");
  if (n_reps < 1) throw InputError("annotator sweep needs at least one repetition");
  if (reference.size() != data.n_records()) throw InputError("sweep: reference must have one value per record");
  for (std::size_t k = 0; k < sizes.size(); ++k)
    if (sizes[k] < 3 || sizes[k] > r || (k > 0 && sizes[k] <= sizes[k - 1]))
      throw InputError("sweep sizes must be strictly increasing within [3, R]");

  std::vector<SweepCurve> curves(methods.size());
  for (std::size_t m = 0; m < methods.size(); ++m) {
    curves[m].method = methods[m].name;
    curves[m].annotator_counts.assign(sizes.begin(), sizes.end());
    curves[m].n_repetitions = n_reps;
    curves[m].rmse.assign(sizes.size(), std::vector<double>(n_reps, 0.0));
  }

  parallel_for(sizes.size() * n_reps, threads, [&](std::size_t task) {
    const std::size_t si = task / n_reps, rep = task % n_reps;
    Engine eng = make_engine(seed, task);
    for (std::size_t attempt = 0;; ++attempt) {
      if (attempt == kSweepRedrawLimit)
        throw NumericalError("sweep: no usable records after " + std::to_string(kSweepRedrawLimit) + " redraws");
      std::vector<std::size_t> cols(r);
      std::iota(cols.begin(), cols.end(), std::size_t{0});
      for (std::size_t k = 0; k < sizes[si]; ++k) std::swap(cols[k], cols[k + draw_index(eng, r - k)]);
      cols.resize(sizes[si]);
      std::sort(cols.begin(), cols.end());
      auto [sub, kept] = data.select_annotators(cols);
      std::vector<double> ref;
      for (std::size_t i : kept) ref.push_back(reference[i]);
      bool usable = false;
      for (double v : ref) usable = usable || std::isfinite(v);
      if (!usable) continue;
      const auto sub_feats = feats.select_rows(kept);
      for (std::size_t m = 0; m < methods.size(); ++m)
        curves[m].rmse[si][rep] = rmse(methods[m].run(sub, sub_feats), ref);
      break;
    }
  });

  for (auto& c : curves) {
    for (const auto& reps : c.rmse) {
      c.mean_rmse.push_back(stats::mean(reps));
      c.sd_rmse.push_back(stats::sd(reps));
    }
  }
  return curves;
}

struct RecoveryReport {
  std::vector<double> phi_true, phi_hat, sigma_true, sigma_hat;
  double correlation_phi = 0.0;
  double correlation_sigma = 0.0;
  // mean(sigma_hat - sigma_true); positive means over-estimated noise
  double mean_sigma_excess = 0.0;
};

inline RecoveryReport recovery_report(std::span<const double> phi_hat, std::span<const double> sigma_hat,
                                      std::span<const double> phi_true, std::span<const double> sigma_true) {
  if (phi_hat.size() != phi_true.size() || sigma_hat.size() != sigma_true.size() ||
      phi_hat.size() != sigma_hat.size())
    throw InputError("recovery_report: annotator counts differ");
  RecoveryReport r{{phi_true.begin(), phi_true.end()},
                   {phi_hat.begin(), phi_hat.end()},
                   {sigma_true.begin(), sigma_true.end()},
                   {sigma_hat.begin(), sigma_hat.end()}};
  r.correlation_phi = stats::pearson(phi_hat, phi_true);
  r.correlation_sigma = stats::pearson(sigma_hat, sigma_true);
  double ex = 0.0;
  for (std::size_t j = 0; j < sigma_hat.size(); ++j) ex += sigma_hat[j] - sigma_true[j];
  r.mean_sigma_excess = ex / static_cast<double>(sigma_hat.size());
  return r;
}

inline RecoveryReport recovery_report(const ModelState& state, const SimulationTruth& truth) {
  const Eigen::VectorXd sigma = state.sigma();
  return recovery_report(std::span<const double>(state.phi.data(), static_cast<std::size_t>(state.phi.size())),
                         std::span<const double>(sigma.data(), static_cast<std::size_t>(sigma.size())),
                         truth.phi_true, truth.sigma_true);
}

}  // namespace bcla
