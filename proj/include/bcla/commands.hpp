#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bcla/baselines.hpp"
#include "bcla/config.hpp"
#include "bcla/data.hpp"
#include "bcla/evaluation.hpp"
#include "bcla/gevd.hpp"
#include "bcla/io.hpp"
#include "bcla/model.hpp"

namespace bcla {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace detail {

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory '" + dir.string() + "'");
}

inline void write_text(const fs::path& path, const std::string& text) {
  auto out = csv::open_out(path);
  out << text;
  csv::finish(out, path);
}

inline ordered_json settings_json(const RunConfig& c) {
  ordered_json j = ordered_json::object();
  for (const auto& [k, v] : to_settings(c)) j[k] = v;
  return j;
}

inline ordered_json cap_json(const PrecisionCap& cap) {
  return {{"lambda_max", cap.lambda_max},
          {"gevd_shape", cap.params.k},
          {"gevd_scale", cap.params.vartheta},
          {"gevd_location", cap.params.mu},
          {"block_size", cap.block_size},
          {"n_blocks", cap.n_blocks},
          {"empirical_fallback", cap.from_empirical}};
}

// run_manifest.json keeps one section per command run in the directory. The
// "config" object of the latest run is loadable with --config.
inline void write_manifest(const RunConfig& c, const std::string& command, ordered_json details) {
  const fs::path path = c.out / "run_manifest.json";
  ordered_json m = ordered_json::object();
  if (fs::exists(path)) {
    std::ifstream in(path);
    m = ordered_json::parse(in, nullptr, false);
    if (m.is_discarded() || !m.is_object()) m = ordered_json::object();
  }
  m["tool"] = "bcla";
  m["version"] = kVersion;
  m["config"] = settings_json(c);
  details["config"] = settings_json(c);
  m["runs"][command] = std::move(details);
  write_text(path, m.dump(2) + "\n");
}

inline FeatureTable features_for(const RunConfig& c, const AnnotationTable& data) {
  if (c.features) return load_features(*c.features, data.record_ids(), c.intercept);
  if (!c.intercept) throw InputError("no features given and intercept disabled: empty design matrix");
  return FeatureTable::intercept_only(data.n_records());
}

inline PrecisionCap cap_for(const RunConfig& c, std::size_t n_annotators) {
  return precision_upper_bound(c.hp.lambda.shape, c.hp.lambda.scale, c.gevd_block_size.value_or(n_annotators),
                               c.seed, c.gevd_blocks);
}

inline std::vector<double> to_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

inline void write_estimates(std::ostream& out, const AnnotationTable& data, const std::vector<double>& z,
                            const std::string* method) {
  if (!method) out << "record_id,z_hat_ms\n";
  for (std::size_t i = 0; i < data.n_records(); ++i) {
    if (!std::isfinite(z[i])) continue;
    if (method) out << *method << ',';
    out << data.record_ids()[i] << ',' << csv::format_double(z[i]) << '\n';
  }
}

inline void write_annotators(const fs::path& path, const AnnotationTable& data, const ModelState& s) {
  std::ostringstream out;
  out << "annotator_id,phi_ms,sigma_ms,precision,n_annotations\n";
  const auto sigma = s.sigma();
  for (std::size_t j = 0; j < data.n_annotators(); ++j) {
    const auto k = static_cast<Eigen::Index>(j);
    out << data.annotator_ids()[j] << ',' << csv::format_double(s.phi[k]) << ',' << csv::format_double(sigma[k])
        << ',' << csv::format_double(s.lambda[k]) << ',' << data.annotator_obs(j).size() << '\n';
  }
  write_text(path, out.str());
}

inline void write_trace(const fs::path& path, const EmTrace& t) {
  std::ostringstream out;
  out << "iteration,log_posterior,max_rel_change,clamp_events\n";
  for (std::size_t k = 0; k < t.iterations_run; ++k)
    out << k + 1 << ',' << csv::format_double(t.log_posterior[k]) << ',' << csv::format_double(t.max_rel_change[k])
        << ',' << t.clamp_events[k] << '\n';
  write_text(path, out.str());
}

inline std::vector<double> reference_for(const RunConfig& c, const AnnotationTable& data) {
  const auto path = c.reference_path();
  if (!fs::exists(path)) throw InputError("reference file '" + path.string() + "' not found");
  return load_record_values(path, data.record_ids());
}

struct MethodRun {
  std::vector<double> z;
  std::optional<EmResult> em;
  std::optional<BestAnnotatorChoice> best;
};

inline MethodRun run_method(Method m, const AnnotationTable& data, const FeatureTable& feats, const Hyperparameters& hp,
                            const std::vector<double>* reference, BestAnnotatorLabels labels) {
  MethodRun r;
  switch (m) {
    case Method::mean: r.z = aggregate_mean(data).z_hat; break;
    case Method::median: r.z = aggregate_median(data).z_hat; break;
    case Method::em_r:
      r.em = run_em_r(data, feats, EmControls::from(hp));
      r.z = to_vector(r.em->state.z);
      break;
    case Method::bcla:
      r.em = run_em(data, feats, hp);
      r.z = to_vector(r.em->state.z);
      break;
    case Method::best_annotator: {
      if (!reference) throw InputError("best_annotator needs a reference (supervised diagnostic)");
      auto e = best_annotator(data, *reference, labels);
      r.z = std::move(e.z_hat);
      r.best = std::move(e.best);
      break;
    }
  }
  return r;
}

// Runner for re-fitting a method on resampled or restricted tables. The
// precision cap is recomputed for each annotator count encountered.
inline MethodRunner make_runner(Method m, const RunConfig& c, std::shared_ptr<std::map<std::size_t, PrecisionCap>> caps) {
  return [m, c, caps](const AnnotationTable& d, const FeatureTable& f) {
    Hyperparameters hp = c.hp;
    if (m == Method::em_r || m == Method::bcla) hp.cap = caps->at(d.n_annotators());
    return run_method(m, d, f, hp, nullptr, c.best_labels).z;
  };
}

}  // namespace detail

inline void cmd_simulate(const RunConfig& c, std::ostream& log) {
  detail::ensure_dir(c.out);
  const auto params = simulation_params(c);
  const auto sim = simulate(params, c.seed);
  save_annotations(sim.table, c.out / "annotations.csv");
  save_truth(sim.table, sim.truth, c.out / "truth.csv", c.out / "annotators_truth.csv");
  detail::write_manifest(c, "simulate",
                         {{"records", sim.table.n_records()},
                          {"annotators", sim.table.n_annotators()},
                          {"annotations", sim.table.n_observed()},
                          {"outputs", {"annotations.csv", "truth.csv", "annotators_truth.csv"}}});
  log << "simulated " << sim.table.n_records() << " records x " << sim.table.n_annotators() << " annotators, "
      << sim.table.n_observed() << " annotations -> " << c.out.string() << '\n';
}

inline void cmd_aggregate(const RunConfig& c, std::ostream& log) {
  c.hp.validate();
  detail::ensure_dir(c.out);
  const auto data = load_annotations(c.annotations_path());
  const auto feats = detail::features_for(c, data);
  Hyperparameters hp = c.hp;
  hp.cap = detail::cap_for(c, data.n_annotators());
  log << "precision cap " << hp.cap.lambda_max << " ms^-2 (GEVD over " << hp.cap.n_blocks << " blocks of "
      << hp.cap.block_size << ")\n";

  std::optional<std::vector<double>> reference;
  for (Method m : c.methods)
    if (m == Method::best_annotator) reference = detail::reference_for(c, data);

  std::ostringstream combined;
  combined << "method,record_id,z_hat_ms\n";
  ordered_json methods = ordered_json::object();
  std::vector<std::string> outputs{"estimates.csv"};
  for (Method m : c.methods) {
    const std::string name(method_name(m));
    auto run = detail::run_method(m, data, feats, hp, reference ? &*reference : nullptr, c.best_labels);
    std::ostringstream single;
    detail::write_estimates(single, data, run.z, nullptr);
    detail::write_text(c.out / ("estimates_" + name + ".csv"), single.str());
    outputs.push_back("estimates_" + name + ".csv");
    detail::write_estimates(combined, data, run.z, &name);
    ordered_json info = {{"supervised", m == Method::best_annotator}};
    if (run.em) {
      const std::string suffix = m == Method::bcla ? "" : "_" + name;
      detail::write_annotators(c.out / ("annotators" + suffix + ".csv"), data, run.em->state);
      detail::write_trace(c.out / ("trace" + suffix + ".csv"), run.em->trace);
      outputs.push_back("annotators" + suffix + ".csv");
      outputs.push_back("trace" + suffix + ".csv");
      info["iterations"] = run.em->trace.iterations_run;
      info["converged"] = run.em->trace.converged;
      info["clamp_events"] = run.em->trace.total_clamp_events();
      info["final_log_posterior"] = run.em->trace.log_posterior.empty() ? run.em->trace.initial_log_posterior
                                                                        : run.em->trace.log_posterior.back();
      if (m == Method::bcla) {
        info["alpha_phi"] = run.em->state.alpha_phi;
        info["b"] = run.em->state.b;
        info["w"] = detail::to_vector(run.em->state.w);
      } else {
        info["priors"] = "flat (maximum likelihood), biases fixed at 0";
      }
      log << name << ": " << run.em->trace.iterations_run << " iterations"
          << (run.em->trace.converged ? " (converged)" : " (iteration limit)") << '\n';
    }
    if (run.best) {
      info["annotator_id"] = run.best->annotator_id;
      info["bias_ms"] = run.best->bias;
      info["residual_sd_ms"] = run.best->residual_sd;
      info["labels"] = c.best_labels == BestAnnotatorLabels::raw ? "raw" : "bias-corrected";
    }
    methods[name] = std::move(info);
  }
  detail::write_text(c.out / "estimates.csv", combined.str());
  detail::write_manifest(c, "aggregate",
                         {{"records", data.n_records()},
                          {"annotators", data.n_annotators()},
                          {"annotations", data.n_observed()},
                          {"precision_cap", detail::cap_json(hp.cap)},
                          {"methods", std::move(methods)},
                          {"outputs", outputs}});
  log << "wrote estimates for " << c.methods.size() << " method(s), " << data.n_records() << " records -> "
      << c.out.string() << '\n';
}

namespace detail {

struct LongEstimates {
  std::vector<std::string> methods;
  std::vector<std::string> record_ids;  // first appearance
  std::map<std::string, std::vector<double>> values;
};

inline LongEstimates load_long_estimates(const fs::path& path, const std::vector<std::string>* record_order) {
  const auto t = load_csv(path, "method,record_id,z_hat_ms");
  LongEstimates e;
  std::map<std::string, std::size_t> index;
  if (record_order) {
    e.record_ids = *record_order;
    for (std::size_t i = 0; i < e.record_ids.size(); ++i) index.emplace(e.record_ids[i], i);
  } else {
    for (const auto& row : t.rows)
      if (index.emplace(row[1], e.record_ids.size()).second) e.record_ids.push_back(row[1]);
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& row : t.rows) {
    auto [it, fresh] = e.values.try_emplace(row[0], std::vector<double>(e.record_ids.size(), nan));
    if (fresh) e.methods.push_back(row[0]);
    const auto r = index.find(row[1]);
    if (r == index.end()) throw InputError(path.string() + ": unknown record '" + row[1] + "'");
    it->second[r->second] = csv::require_finite(row[2], path.string(), 0);
  }
  return e;
}

inline ordered_json matrix_json(const std::vector<std::string>& names, const std::vector<std::vector<double>>& m) {
  ordered_json j = ordered_json::object();
  for (std::size_t a = 0; a < names.size(); ++a) {
    ordered_json row = ordered_json::object();
    for (std::size_t b = 0; b < names.size(); ++b) row[names[b]] = m[a][b];
    j[names[a]] = std::move(row);
  }
  return j;
}

inline std::optional<RecoveryReport> recovery_from_files(const fs::path& annotators_csv, const fs::path& truth_csv) {
  if (!fs::exists(annotators_csv) || !fs::exists(truth_csv)) return std::nullopt;
  const auto est = load_csv(annotators_csv, "annotator_id,phi_ms,sigma_ms");
  std::vector<std::string> ids;
  std::vector<double> phi, sigma;
  for (const auto& row : est.rows) {
    ids.push_back(row[0]);
    phi.push_back(csv::require_finite(row[1], annotators_csv.string(), 0));
    sigma.push_back(csv::require_finite(row[2], annotators_csv.string(), 0));
  }
  const auto truth = load_annotator_truth(truth_csv, ids);
  auto rep = recovery_report(phi, sigma, truth.phi, truth.sigma);
  return rep;
}

inline void write_recovery(const fs::path& path, const fs::path& annotators_csv, const RecoveryReport& r) {
  const auto est = load_csv(annotators_csv, "annotator_id");
  std::ostringstream out;
  out << "annotator_id,phi_true,phi_hat,sigma_true,sigma_hat\n";
  for (std::size_t j = 0; j < r.phi_hat.size(); ++j)
    out << est.rows[j][0] << ',' << csv::format_double(r.phi_true[j]) << ',' << csv::format_double(r.phi_hat[j])
        << ',' << csv::format_double(r.sigma_true[j]) << ',' << csv::format_double(r.sigma_hat[j]) << '\n';
  write_text(path, out.str());
}

}  // namespace detail

inline void cmd_evaluate(const RunConfig& c, std::ostream& log) {
  detail::ensure_dir(c.out);
  std::optional<AnnotationTable> data;
  if (fs::exists(c.annotations_path())) data = load_annotations(c.annotations_path());
  const auto est = detail::load_long_estimates(c.out / "estimates.csv", data ? &data->record_ids() : nullptr);
  const auto ref_path = c.reference_path();
  if (!fs::exists(ref_path)) throw InputError("reference file '" + ref_path.string() + "' not found");
  const auto reference = load_record_values(ref_path, est.record_ids);

  std::vector<std::string> names = est.methods;
  std::map<std::string, std::vector<double>> values = est.values;
  std::optional<BestAnnotatorChoice> best;
  if (data && !values.count("best_annotator")) {
    auto e = best_annotator(*data, reference, c.best_labels);
    names.push_back("best_annotator");
    values["best_annotator"] = std::move(e.z_hat);
    best = std::move(e.best);
  }

  std::optional<FeatureTable> feats;
  auto caps = std::make_shared<std::map<std::size_t, PrecisionCap>>();
  if (c.refit) {
    if (!data) throw InputError("--refit needs the annotation file");
    feats = detail::features_for(c, *data);
    // Resampling can drop annotators, so every count up to R may occur.
    for (std::size_t r = 1; r <= data->n_annotators(); ++r) (*caps)[r] = detail::cap_for(c, r);
  }

  std::vector<BootstrapReport> reports;
  ordered_json methods = ordered_json::object();
  for (const auto& name : names) {
    const auto& z = values.at(name);
    const auto full = metrics(z, reference);
    BootstrapReport rep;
    const auto m = parse_method(name);
    if (c.refit && m && *m != Method::best_annotator)
      rep = bootstrap_refit(*data, *feats, reference, detail::make_runner(*m, c, caps), c.n_boot, c.seed, name, c.threads);
    else
      rep = bootstrap_metrics(z, reference, c.n_boot, c.seed, name);
    methods[name] = {{"mean_rmse", rep.mean_rmse},
                     {"sd_rmse", rep.sd_rmse},
                     {"mean_mae", rep.mean_mae},
                     {"sd_mae", rep.sd_mae},
                     {"full_rmse", full.rmse},
                     {"full_mae", full.mae},
                     {"n_records", full.n_records_used},
                     {"n_boot", c.n_boot},
                     {"supervised", name == "best_annotator"}};
    if (name == "em_r") methods[name]["priors"] = "flat (maximum likelihood)";
    if (name == "best_annotator" && best) {
      methods[name]["annotator_id"] = best->annotator_id;
      methods[name]["bias_ms"] = best->bias;
      methods[name]["labels"] = c.best_labels == BestAnnotatorLabels::raw ? "raw" : "bias-corrected";
    }
    log << name << ": RMSE " << rep.mean_rmse << " +/- " << rep.sd_rmse << " ms, MAE " << rep.mean_mae << " +/- "
        << rep.sd_mae << " ms\n";
    reports.push_back(std::move(rep));
  }
  const auto tests = pairwise_tests(reports);
  ordered_json degenerate = ordered_json::array();
  for (std::size_t a = 0; a < names.size(); ++a)
    for (std::size_t b = a + 1; b < names.size(); ++b)
      if (tests.degenerate[a][b]) degenerate.push_back({names[a], names[b]});

  ordered_json metrics_json = {{"bootstrap", c.refit ? "refit" : "residual"},
                               {"n_boot", c.n_boot},
                               {"seed", c.seed},
                               {"methods", std::move(methods)},
                               {"pvalues_rmse", detail::matrix_json(names, tests.p_rmse)},
                               {"pvalues_mae", detail::matrix_json(names, tests.p_mae)},
                               {"degenerate_pairs", std::move(degenerate)}};

  std::vector<std::string> outputs{"metrics.json"};
  ordered_json recovery = ordered_json::object();
  for (const std::string suffix : {"", "_em_r"}) {
    const auto ann = c.out / ("annotators" + suffix + ".csv");
    if (auto rep = detail::recovery_from_files(ann, c.annotators_truth_path())) {
      const std::string file = "recovery" + suffix + ".csv";
      detail::write_recovery(c.out / file, ann, *rep);
      outputs.push_back(file);
      recovery[suffix.empty() ? "bcla" : "em_r"] = {{"correlation_phi", rep->correlation_phi},
                                                     {"correlation_sigma", rep->correlation_sigma},
                                                     {"mean_sigma_excess_ms", rep->mean_sigma_excess}};
    }
  }
  if (!recovery.empty()) metrics_json["recovery"] = std::move(recovery);
  detail::write_text(c.out / "metrics.json", metrics_json.dump(2) + "\n");
  detail::write_manifest(c, "evaluate", {{"outputs", outputs}});
}

inline void cmd_sweep(const RunConfig& c, std::ostream& log) {
  detail::ensure_dir(c.out);
  const auto data = load_annotations(c.annotations_path());
  const auto feats = detail::features_for(c, data);
  const auto reference = detail::reference_for(c, data);
  const std::size_t r = data.n_annotators();
  const std::size_t hi = std::min(c.sweep_max.value_or(r), r);
  if (r < 3 || c.sweep_min < 3 || c.sweep_min > hi) throw InputError("sweep needs 3 <= sweep_min <= sweep_max <= R");
  std::vector<std::size_t> sizes;
  for (std::size_t s = c.sweep_min; s <= hi; ++s) sizes.push_back(s);

  auto caps = std::make_shared<std::map<std::size_t, PrecisionCap>>();
  for (std::size_t s : sizes) (*caps)[s] = detail::cap_for(c, s);
  std::vector<NamedRunner> runners;
  for (Method m : c.methods) {
    if (m == Method::best_annotator) continue;
    runners.push_back({std::string(method_name(m)), detail::make_runner(m, c, caps)});
  }
  const auto curves = annotator_sweep(data, feats, reference, runners, sizes, c.sweep_reps, c.seed, c.threads);

  std::ostringstream rows, summary;
  rows << "method,size,rep,rmse\n";
  summary << "method,size,mean_rmse,sd_rmse,n_reps\n";
  for (const auto& curve : curves) {
    for (std::size_t k = 0; k < curve.annotator_counts.size(); ++k) {
      for (std::size_t rep = 0; rep < curve.n_repetitions; ++rep)
        rows << curve.method << ',' << curve.annotator_counts[k] << ',' << rep + 1 << ','
             << csv::format_double(curve.rmse[k][rep]) << '\n';
      summary << curve.method << ',' << curve.annotator_counts[k] << ',' << csv::format_double(curve.mean_rmse[k])
              << ',' << csv::format_double(curve.sd_rmse[k]) << ',' << curve.n_repetitions << '\n';
    }
    log << curve.method << ": RMSE " << curve.mean_rmse.front() << " ms at " << curve.annotator_counts.front()
        << " annotators, " << curve.mean_rmse.back() << " ms at " << curve.annotator_counts.back() << '\n';
  }
  detail::write_text(c.out / "sweep.csv", rows.str());
  detail::write_text(c.out / "sweep_summary.csv", summary.str());
  detail::write_manifest(c, "sweep", {{"sizes", sizes}, {"outputs", {"sweep.csv", "sweep_summary.csv"}}});
}

}  // namespace bcla
