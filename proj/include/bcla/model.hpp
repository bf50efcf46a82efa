#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bcla/data.hpp"
#include "bcla/error.hpp"
#include "bcla/gevd.hpp"
#include "bcla/stats.hpp"

namespace bcla {

// Gamma(shape, scale) prior on a precision. An infinite scale marks a flat
// (improper) prior: its log density reduces to (shape - 1) log x, which
// vanishes for shape 1.
struct GammaPrior {
  double shape = 1.0;
  double scale = std::numeric_limits<double>::infinity();

  static GammaPrior flat() { return {}; }
  bool is_flat() const { return std::isinf(scale); }
  double mean() const { return shape * scale; }
  // 2 / scale, the pseudo sum of squares the prior adds to a precision update.
  double rate_term() const { return is_flat() ? 0.0 : 2.0 / scale; }

  double log_density(double x) const {
    const double body = (shape - 1.0) * std::log(x);
    if (is_flat()) return body;
    return body - std::lgamma(shape) - shape * std::log(scale) - x / scale;
  }
};

struct Hyperparameters {
  GammaPrior b{3.0, 0.0002};
  double mu_phi = 10.0;
  GammaPrior alpha{3.0, 0.0005};
  GammaPrior lambda{4.0, 0.003};
  std::size_t max_iterations = 5000;
  // Threshold on max |delta| / (1 + |value|) over all parameters.
  double convergence_tol = 1e-6;
  PrecisionCap cap = PrecisionCap::unbounded();

  // Values used for the QT interval divisions.
  static Hyperparameters real_data() { return {}; }
  // Same as real_data() except the precision prior scale.
  static Hyperparameters simulation() {
    Hyperparameters hp;
    hp.lambda.scale = 0.0003;
    return hp;
  }

  void validate() const {
    for (const GammaPrior* g : {&b, &alpha, &lambda})
      if (!(g->shape > 0.0) || !(g->scale > 0.0))
        throw InputError("hyperparameters: Gamma shapes and scales must be positive");
    if (!std::isfinite(mu_phi)) throw InputError("hyperparameters: mu_phi must be finite");
    if (max_iterations < 1) throw InputError("hyperparameters: max_iterations must be >= 1");
    if (!(convergence_tol > 0.0)) throw InputError("hyperparameters: convergence_tol must be positive");
    if (!(cap.lambda_max > 0.0)) throw InputError("hyperparameters: precision cap must be positive");
  }
};

// `none` fixes every bias at zero and drops the bias prior; this is the
// bias-free model used by the EM-R baseline.
enum class BiasModel { estimated, none };

struct ModelState {
  Eigen::VectorXd z;       // per-record truth (ms)
  Eigen::VectorXd w;       // regression weights
  Eigen::VectorXd phi;     // per-annotator bias (ms)
  Eigen::VectorXd lambda;  // per-annotator precision (ms^-2)
  double alpha_phi = 1.0;  // precision of the bias distribution
  double b = 1.0;          // precision of the truth distribution

  Eigen::VectorXd sigma() const { return lambda.cwiseSqrt().cwiseInverse(); }
};

struct EmTrace {
  double initial_log_posterior = 0.0;
  std::vector<double> log_posterior;
  std::vector<double> max_rel_change;
  std::vector<std::size_t> clamp_events;
  std::size_t iterations_run = 0;
  bool converged = false;

  std::size_t total_clamp_events() const {
    std::size_t n = 0;
    for (auto c : clamp_events) n += c;
    return n;
  }
};

struct EmResult {
  ModelState state;
  EmTrace trace;
};

// Rank-revealing QR of the design matrix, factored once and reused by every
// regression update.
class LeastSquares {
 public:
  explicit LeastSquares(const FeatureTable& feats) : qr_(feats.design()) {
    const auto p = feats.design().cols();
    if (feats.design().rows() < p || qr_.rank() < p) {
      const auto names = feats.design_names();
      std::string cols;
      const auto& perm = qr_.colsPermutation().indices();
      for (Eigen::Index k = std::min<Eigen::Index>(qr_.rank(), p); k < p; ++k)
        cols += (cols.empty() ? "" : ", ") + names[static_cast<std::size_t>(perm[k])];
      if (cols.empty()) cols = "(fewer records than columns)";
      throw InputError("rank-deficient design matrix; dependent columns: " + cols);
    }
  }

  Eigen::VectorXd solve(const Eigen::VectorXd& z) const { return qr_.solve(z); }

 private:
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_;
};

// E-step: precision-weighted combination of bias-corrected labels and the
// regression prediction, over observed annotators only.
inline Eigen::VectorXd update_z(const ModelState& s, const AnnotationTable& data, const FeatureTable& feats) {
  const Eigen::VectorXd a = feats.design() * s.w;
  Eigen::VectorXd z(static_cast<Eigen::Index>(data.n_records()));
  for (std::size_t i = 0; i < data.n_records(); ++i) {
    double num = a[static_cast<Eigen::Index>(i)] * s.b;
    double den = s.b;
    for (const auto& o : data.record_obs(i)) {
      const double l = s.lambda[o.annotator];
      num += (o.value - s.phi[o.annotator]) * l;
      den += l;
    }
    z[static_cast<Eigen::Index>(i)] = num / den;
  }
  return z;
}

inline Eigen::VectorXd update_w(const Eigen::VectorXd& z, const FeatureTable& feats) {
  return LeastSquares(feats).solve(z);
}

inline Eigen::VectorXd update_phi(const ModelState& s, const AnnotationTable& data, const Hyperparameters& hp) {
  Eigen::VectorXd phi(static_cast<Eigen::Index>(data.n_annotators()));
  for (std::size_t j = 0; j < data.n_annotators(); ++j) {
    const auto obs = data.annotator_obs(j);
    double resid = 0.0;
    for (const auto& o : obs) resid += o.value - s.z[o.record];
    const double ratio = s.alpha_phi / s.lambda[static_cast<Eigen::Index>(j)];
    phi[static_cast<Eigen::Index>(j)] = (resid + hp.mu_phi * ratio) / (static_cast<double>(obs.size()) + ratio);
  }
  return phi;
}

inline double update_alpha_phi(const ModelState& s, const Hyperparameters& hp) {
  const double dof = static_cast<double>(s.phi.size()) + 2.0 * (hp.alpha.shape - 1.0);
  if (!(dof > 0.0)) throw InputError("update_alpha_phi: R + 2(k_alpha - 1) must be positive");
  const double ss = (s.phi.array() - hp.mu_phi).square().sum() + hp.alpha.rate_term();
  if (!(ss > 0.0)) throw NumericalError("update_alpha_phi: bias precision diverged (zero spread)");
  return dof / ss;
}

inline double update_b(const ModelState& s, const FeatureTable& feats, const Hyperparameters& hp) {
  const double dof = static_cast<double>(s.z.size()) + 2.0 * (hp.b.shape - 1.0);
  if (!(dof > 0.0)) throw InputError("update_b: N + 2(k_b - 1) must be positive");
  const double ss = (s.z - feats.design() * s.w).squaredNorm() + hp.b.rate_term();
  if (!(ss > 0.0)) throw NumericalError("update_b: truth precision diverged (zero regression residual)");
  return dof / ss;
}

struct LambdaUpdate {
  Eigen::VectorXd lambda;
  std::size_t clamp_events = 0;
};

inline LambdaUpdate update_lambda(const ModelState& s, const AnnotationTable& data, const Hyperparameters& hp) {
  LambdaUpdate out;
  out.lambda.resize(static_cast<Eigen::Index>(data.n_annotators()));
  for (std::size_t j = 0; j < data.n_annotators(); ++j) {
    const auto obs = data.annotator_obs(j);
    const double dof = static_cast<double>(obs.size()) + 2.0 * (hp.lambda.shape - 1.0);
    if (!(dof > 0.0))
      throw InputError("update_lambda: N_j + 2(k_lambda - 1) must be positive for annotator '" +
                       data.annotator_ids()[j] + "'");
    const double phi = s.phi[static_cast<Eigen::Index>(j)];
    double ss = hp.lambda.rate_term();
    for (const auto& o : obs) {
      const double r = o.value - phi - s.z[o.record];
      ss += r * r;
    }
    double l = ss > 0.0 ? dof / ss : std::numeric_limits<double>::infinity();
    if (l > hp.cap.lambda_max) {
      l = hp.cap.lambda_max;
      ++out.clamp_events;
    }
    if (!std::isfinite(l)) throw NumericalError("update_lambda: precision diverged with no cap in force");
    out.lambda[static_cast<Eigen::Index>(j)] = l;
  }
  return out;
}

// MAP objective: Gaussian label likelihood over observed cells, bias and truth
// priors, and Gamma hyperpriors on every precision (the lambda prior summed
// over annotators).
inline double log_posterior(const ModelState& s, const AnnotationTable& data, const FeatureTable& feats,
                            const Hyperparameters& hp, BiasModel bias = BiasModel::estimated) {
  constexpr double kLog2Pi = 1.8378770664093454835606594728112;
  double lp = 0.0;
  for (const auto& o : data.observations()) {
    const double l = s.lambda[o.annotator];
    const double r = o.value - s.phi[o.annotator] - s.z[o.record];
    lp -= 0.5 * (kLog2Pi - std::log(l) + r * r * l);
  }
  if (bias == BiasModel::estimated) {
    const double la = std::log(s.alpha_phi);
    for (Eigen::Index j = 0; j < s.phi.size(); ++j) {
      const double d = s.phi[j] - hp.mu_phi;
      lp -= 0.5 * (kLog2Pi - la + d * d * s.alpha_phi);
    }
    lp += hp.alpha.log_density(s.alpha_phi);
  }
  const Eigen::VectorXd resid = s.z - feats.design() * s.w;
  lp -= 0.5 * (static_cast<double>(s.z.size()) * (kLog2Pi - std::log(s.b)) + resid.squaredNorm() * s.b);
  for (Eigen::Index j = 0; j < s.lambda.size(); ++j) lp += hp.lambda.log_density(s.lambda[j]);
  lp += hp.b.log_density(s.b);
  return lp;
}

// Starting point: per-record median, mean residual per annotator, prior
// means for the precisions (empirical precisions where a prior is flat).
inline ModelState initialize(const AnnotationTable& data, const FeatureTable& feats, const Hyperparameters& hp,
                             BiasModel bias = BiasModel::estimated) {
  if (feats.n_records() != data.n_records())
    throw InputError("feature table has " + std::to_string(feats.n_records()) + " rows, annotation table has " +
                     std::to_string(data.n_records()) + " records");
  const auto n = static_cast<Eigen::Index>(data.n_records());
  const auto r = static_cast<Eigen::Index>(data.n_annotators());
  ModelState s;
  s.z.resize(n);
  std::vector<double> buf;
  for (std::size_t i = 0; i < data.n_records(); ++i) {
    buf.clear();
    for (const auto& o : data.record_obs(i)) buf.push_back(o.value);
    s.z[static_cast<Eigen::Index>(i)] = stats::median(buf);
  }

  s.phi = Eigen::VectorXd::Zero(r);
  if (bias == BiasModel::estimated) {
    for (std::size_t j = 0; j < data.n_annotators(); ++j) {
      const auto obs = data.annotator_obs(j);
      double sum = 0.0;
      for (const auto& o : obs) sum += o.value - s.z[o.record];
      s.phi[static_cast<Eigen::Index>(j)] = sum / static_cast<double>(obs.size());
    }
  }

  const double cap = hp.cap.lambda_max;
  s.lambda.resize(r);
  for (std::size_t j = 0; j < data.n_annotators(); ++j) {
    double l = hp.lambda.mean();
    if (hp.lambda.is_flat()) {
      const auto obs = data.annotator_obs(j);
      double ss = 0.0;
      for (const auto& o : obs) {
        const double e = o.value - s.phi[static_cast<Eigen::Index>(j)] - s.z[o.record];
        ss += e * e;
      }
      l = ss > 0.0 ? static_cast<double>(obs.size()) / ss : (std::isfinite(cap) ? cap : 1.0);
    }
    s.lambda[static_cast<Eigen::Index>(j)] = std::min(l, cap);
  }

  if (!hp.alpha.is_flat()) {
    s.alpha_phi = hp.alpha.mean();
  } else {
    const double ss = (s.phi.array() - hp.mu_phi).square().sum();
    s.alpha_phi = ss > 0.0 ? static_cast<double>(r) / ss : 1.0;
  }

  s.w = update_w(s.z, feats);
  if (!hp.b.is_flat()) {
    s.b = hp.b.mean();
  } else {
    const double ss = (s.z - feats.design() * s.w).squaredNorm();
    s.b = ss > 0.0 ? static_cast<double>(n) / ss : 1.0;
  }
  return s;
}

namespace detail {

inline double max_rel_change(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  double m = 0.0;
  for (Eigen::Index k = 0; k < a.size(); ++k) m = std::max(m, std::abs(b[k] - a[k]) / (1.0 + std::abs(a[k])));
  return m;
}

inline double max_rel_change(const ModelState& a, const ModelState& b) {
  double m = std::max({max_rel_change(a.z, b.z), max_rel_change(a.w, b.w), max_rel_change(a.phi, b.phi),
                       max_rel_change(a.lambda, b.lambda)});
  m = std::max(m, std::abs(b.alpha_phi - a.alpha_phi) / (1.0 + std::abs(a.alpha_phi)));
  return std::max(m, std::abs(b.b - a.b) / (1.0 + std::abs(a.b)));
}

}  // namespace detail

// MAP-EM. Each sweep is the E-step followed by the M-step updates in the
// order w, phi, alpha_phi, b, lambda; stops once the largest relative change
// falls below hp.convergence_tol or after hp.max_iterations sweeps.
// Running out of iterations is reported in the trace, not thrown.
inline EmResult run_em(const AnnotationTable& data, const FeatureTable& feats, const Hyperparameters& hp,
                       BiasModel bias = BiasModel::estimated) {
  hp.validate();
  EmResult res;
  res.state = initialize(data, feats, hp, bias);
  const LeastSquares regression(feats);
  ModelState& s = res.state;
  EmTrace& trace = res.trace;
  trace.initial_log_posterior = log_posterior(s, data, feats, hp, bias);
  trace.log_posterior.reserve(hp.max_iterations);
  trace.max_rel_change.reserve(hp.max_iterations);
  trace.clamp_events.reserve(hp.max_iterations);

  for (std::size_t it = 0; it < hp.max_iterations; ++it) {
    const ModelState prev = s;
    s.z = update_z(s, data, feats);
    s.w = regression.solve(s.z);
    if (bias == BiasModel::estimated) {
      s.phi = update_phi(s, data, hp);
      s.alpha_phi = update_alpha_phi(s, hp);
    }
    s.b = update_b(s, feats, hp);
    auto lu = update_lambda(s, data, hp);
    s.lambda = std::move(lu.lambda);

    const double lp = log_posterior(s, data, feats, hp, bias);
    if (!std::isfinite(lp)) throw NumericalError("run_em: log posterior became non-finite at iteration " + std::to_string(it + 1));
    const double change = detail::max_rel_change(prev, s);
    trace.log_posterior.push_back(lp);
    trace.max_rel_change.push_back(change);
    trace.clamp_events.push_back(lu.clamp_events);
    trace.iterations_run = it + 1;
    if (change < hp.convergence_tol) {
      trace.converged = true;
      break;
    }
  }
  return res;
}

}  // namespace bcla
