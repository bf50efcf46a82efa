#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "bcla/data.hpp"
#include "bcla/error.hpp"
#include "bcla/model.hpp"
#include "bcla/stats.hpp"

namespace bcla {

enum class Method { mean, median, em_r, bcla, best_annotator };

inline std::string_view method_name(Method m) {
  switch (m) {
    case Method::mean: return "mean";
    case Method::median: return "median";
    case Method::em_r: return "em_r";
    case Method::bcla: return "bcla";
    case Method::best_annotator: return "best_annotator";
  }
  return "?";
}

inline std::optional<Method> parse_method(std::string_view s) {
  for (Method m : {Method::mean, Method::median, Method::em_r, Method::bcla, Method::best_annotator})
    if (method_name(m) == s) return m;
  return std::nullopt;
}

struct BestAnnotatorChoice {
  std::size_t annotator = 0;
  std::string annotator_id;
  double bias = 0.0;         // mean(y - reference) over its records
  double residual_sd = 0.0;  // after removing `bias`
  std::vector<double> corrected;  // labels minus bias; NaN where not annotated
};

// Which labels the best-annotator diagnostic reports as its estimate. The
// annotator is always *selected* by bias-corrected residual variance.
enum class BestAnnotatorLabels { raw, corrected };

// Per-record estimates of one aggregation method. NaN marks a record the
// method has no estimate for (only best_annotator produces these).
struct BaselineEstimate {
  Method method = Method::mean;
  std::vector<double> z_hat;
  std::optional<Eigen::VectorXd> sigma;        // em_r
  std::optional<BestAnnotatorChoice> best;     // best_annotator
  bool supervised = false;
};

inline BaselineEstimate aggregate_mean(const AnnotationTable& data) {
  BaselineEstimate e;
  e.z_hat.resize(data.n_records());
  for (std::size_t i = 0; i < data.n_records(); ++i) {
    const auto obs = data.record_obs(i);
    double s = 0.0;
    for (const auto& o : obs) s += o.value;
    e.z_hat[i] = s / static_cast<double>(obs.size());
  }
  return e;
}

inline BaselineEstimate aggregate_median(const AnnotationTable& data) {
  BaselineEstimate e;
  e.method = Method::median;
  e.z_hat.resize(data.n_records());
  std::vector<double> buf;
  for (std::size_t i = 0; i < data.n_records(); ++i) {
    buf.clear();
    for (const auto& o : data.record_obs(i)) buf.push_back(o.value);
    e.z_hat[i] = stats::median(buf);
  }
  return e;
}

struct EmControls {
  std::size_t max_iterations = 5000;
  double convergence_tol = 1e-6;
  PrecisionCap cap = PrecisionCap::unbounded();

  static EmControls from(const Hyperparameters& hp) { return {hp.max_iterations, hp.convergence_tol, hp.cap}; }
};

// The bias-free, maximum-likelihood reduction of the BCLA objective: flat
// priors on lambda and b, biases pinned at zero, same precision cap.
inline Hyperparameters em_r_hyperparameters(const EmControls& c) {
  Hyperparameters hp;
  hp.b = GammaPrior::flat();
  hp.lambda = GammaPrior::flat();
  hp.alpha = GammaPrior::flat();
  hp.mu_phi = 0.0;
  hp.max_iterations = c.max_iterations;
  hp.convergence_tol = c.convergence_tol;
  hp.cap = c.cap;
  return hp;
}

inline EmResult run_em_r(const AnnotationTable& data, const FeatureTable& feats, const EmControls& c) {
  return run_em(data, feats, em_r_hyperparameters(c), BiasModel::none);
}

inline BaselineEstimate aggregate_em_r(const AnnotationTable& data, const FeatureTable& feats, const EmControls& c) {
  const auto res = run_em_r(data, feats, c);
  BaselineEstimate e;
  e.method = Method::em_r;
  e.z_hat.assign(res.state.z.data(), res.state.z.data() + res.state.z.size());
  e.sigma = res.state.sigma();
  return e;
}

// Supervised diagnostic: picks the annotator with the smallest residual
// variance against the reference after removing its mean offset. Annotators
// with fewer than two referenced records are not eligible unless none are.
inline BaselineEstimate best_annotator(const AnnotationTable& data, std::span<const double> reference,
                                       BestAnnotatorLabels labels = BestAnnotatorLabels::raw) {
  if (reference.size() != data.n_records())
    throw InputError("best_annotator: reference must have one value per record");
  struct Fit {
    double bias, var;
    std::size_t n;
  };
  std::vector<Fit> fits;
  for (std::size_t j = 0; j < data.n_annotators(); ++j) {
    double s = 0.0, ss = 0.0;
    std::size_t n = 0;
    for (const auto& o : data.annotator_obs(j)) {
      const double ref = reference[o.record];
      if (!std::isfinite(ref)) continue;
      s += o.value - ref;
      ++n;
    }
    const double bias = n ? s / static_cast<double>(n) : 0.0;
    for (const auto& o : data.annotator_obs(j)) {
      const double ref = reference[o.record];
      if (!std::isfinite(ref)) continue;
      const double e = o.value - ref - bias;
      ss += e * e;
    }
    fits.push_back({bias, n ? ss / static_cast<double>(n) : std::numeric_limits<double>::infinity(), n});
  }
  std::size_t min_n = 2;
  bool any = false;
  for (const auto& f : fits) any = any || f.n >= min_n;
  if (!any) min_n = 1;
  std::optional<std::size_t> pick;
  for (std::size_t j = 0; j < fits.size(); ++j)
    if (fits[j].n >= min_n && (!pick || fits[j].var < fits[*pick].var)) pick = j;
  if (!pick) throw InputError("best_annotator: reference overlaps no annotations");

  BestAnnotatorChoice c;
  c.annotator = *pick;
  c.annotator_id = data.annotator_ids()[*pick];
  c.bias = fits[*pick].bias;
  c.residual_sd = std::sqrt(fits[*pick].var);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  c.corrected.assign(data.n_records(), nan);
  BaselineEstimate e;
  e.method = Method::best_annotator;
  e.z_hat.assign(data.n_records(), nan);
  for (const auto& o : data.annotator_obs(*pick)) {
    c.corrected[o.record] = o.value - c.bias;
    e.z_hat[o.record] = labels == BestAnnotatorLabels::raw ? o.value : o.value - c.bias;
  }
  e.best = std::move(c);
  e.supervised = true;
  return e;
}

}  // namespace bcla
