#pragma once

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "bcla/baselines.hpp"
#include "bcla/data.hpp"
#include "bcla/error.hpp"
#include "bcla/io.hpp"
#include "bcla/model.hpp"

namespace bcla {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr std::uint64_t kDefaultSeed = 88;

enum class Profile { sim, real };

using Setting = std::pair<std::string, std::string>;

// Everything a command needs, resolved from profile defaults, an optional
// config file and command-line overrides (applied in that order).
struct RunConfig {
  std::filesystem::path out = "bcla_out";
  std::optional<std::filesystem::path> annotations, features, reference, truth, annotators_truth;
  std::uint64_t seed = kDefaultSeed;
  std::vector<Method> methods{Method::mean, Method::median, Method::em_r, Method::bcla};
  Profile profile = Profile::sim;
  SimulationParams sim;
  Hyperparameters hp = Hyperparameters::simulation();
  bool intercept = true;
  std::size_t n_boot = 100;
  std::size_t sweep_reps = 100;
  std::size_t sweep_min = 3;
  std::optional<std::size_t> sweep_max;
  bool refit = false;
  std::size_t gevd_blocks = 10000;
  std::optional<std::size_t> gevd_block_size;  // defaults to the annotator count
  std::size_t threads = 1;
  BestAnnotatorLabels best_labels = BestAnnotatorLabels::raw;

  std::filesystem::path annotations_path() const { return annotations.value_or(out / "annotations.csv"); }
  std::filesystem::path truth_path() const { return truth.value_or(out / "truth.csv"); }
  std::filesystem::path annotators_truth_path() const {
    return annotators_truth.value_or(out / "annotators_truth.csv");
  }
  // Reference labels for evaluation: an explicit reference, else the
  // simulator's truth file.
  std::filesystem::path reference_path() const { return reference.value_or(truth_path()); }
};

inline void apply_profile(RunConfig& c, Profile p) {
  c.profile = p;
  c.hp = p == Profile::sim ? Hyperparameters::simulation() : Hyperparameters::real_data();
}

namespace detail {

inline std::string lower(std::string s) {
  for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return s;
}

inline double to_double(const std::string& key, const std::string& v) {
  const auto d = csv::parse_double(csv::trim(v));
  if (!d || !std::isfinite(*d)) throw InputError("config '" + key + "': expected a number, got '" + v + "'");
  return *d;
}

inline std::uint64_t to_uint(const std::string& key, const std::string& v) {
  const auto t = std::string(csv::trim(v));
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
  if (t.empty() || ec != std::errc() || p != t.data() + t.size())
    throw InputError("config '" + key + "': expected a non-negative integer, got '" + v + "'");
  return out;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  const auto t = lower(std::string(csv::trim(v)));
  if (t == "1" || t == "true" || t == "yes" || t == "on") return true;
  if (t == "0" || t == "false" || t == "no" || t == "off") return false;
  throw InputError("config '" + key + "': expected a boolean, got '" + v + "'");
}

inline std::vector<Method> to_methods(const std::string& v) {
  std::vector<Method> out;
  for (const auto& name : csv::split(v)) {
    if (name.empty()) continue;
    const auto m = parse_method(name);
    if (!m) throw InputError("unknown method '" + name + "' (expected mean, median, em_r, bcla, best_annotator)");
    out.push_back(*m);
  }
  if (out.empty()) throw InputError("method list is empty");
  return out;
}

inline std::string join_methods(const std::vector<Method>& ms) {
  std::string s;
  for (auto m : ms) s += (s.empty() ? "" : ",") + std::string(method_name(m));
  return s;
}

}  // namespace detail

inline Profile parse_profile(const std::string& v) {
  const auto t = detail::lower(std::string(csv::trim(v)));
  if (t == "sim") return Profile::sim;
  if (t == "real") return Profile::real;
  throw InputError("unknown profile '" + v + "' (expected sim or real)");
}

inline void apply_setting(RunConfig& c, const std::string& key, const std::string& value) {
  using namespace detail;
  const std::string v(csv::trim(value));
  auto opt_path = [&](std::optional<std::filesystem::path>& p) {
    if (v.empty()) p.reset(); else p = v;
  };
  if (key == "profile") apply_profile(c, parse_profile(v));
  else if (key == "out") c.out = v;
  else if (key == "annotations") opt_path(c.annotations);
  else if (key == "features") opt_path(c.features);
  else if (key == "reference") opt_path(c.reference);
  else if (key == "truth") opt_path(c.truth);
  else if (key == "annotators_truth") opt_path(c.annotators_truth);
  else if (key == "seed") c.seed = to_uint(key, v);
  else if (key == "methods" || key == "method") c.methods = to_methods(v);
  else if (key == "records") c.sim.n_records = to_uint(key, v);
  else if (key == "annotators") c.sim.n_annotators = to_uint(key, v);
  else if (key == "density") c.sim.density = to_double(key, v);
  else if (key == "bias_mean") c.sim.bias_mean = to_double(key, v);
  else if (key == "bias_sd") c.sim.bias_sd = to_double(key, v);
  else if (key == "truth_mean") c.sim.truth_mean = to_double(key, v);
  else if (key == "truth_sd") c.sim.truth_sd = to_double(key, v);
  else if (key == "k_b") c.hp.b.shape = to_double(key, v);
  else if (key == "theta_b") c.hp.b.scale = to_double(key, v);
  else if (key == "mu_phi") c.hp.mu_phi = to_double(key, v);
  else if (key == "k_alpha") c.hp.alpha.shape = to_double(key, v);
  else if (key == "theta_alpha") c.hp.alpha.scale = to_double(key, v);
  else if (key == "k_lambda") c.hp.lambda.shape = to_double(key, v);
  else if (key == "theta_lambda") c.hp.lambda.scale = to_double(key, v);
  else if (key == "max_iterations") c.hp.max_iterations = to_uint(key, v);
  else if (key == "convergence_tol") c.hp.convergence_tol = to_double(key, v);
  else if (key == "intercept") c.intercept = to_bool(key, v);
  else if (key == "n_boot") c.n_boot = to_uint(key, v);
  else if (key == "sweep_reps") c.sweep_reps = to_uint(key, v);
  else if (key == "sweep_min") c.sweep_min = to_uint(key, v);
  else if (key == "sweep_max") { if (v.empty()) c.sweep_max.reset(); else c.sweep_max = to_uint(key, v); }
  else if (key == "refit") c.refit = to_bool(key, v);
  else if (key == "gevd_blocks") c.gevd_blocks = to_uint(key, v);
  else if (key == "gevd_block_size") { if (v.empty()) c.gevd_block_size.reset(); else c.gevd_block_size = to_uint(key, v); }
  else if (key == "threads") c.threads = to_uint(key, v);
  else if (key == "best_annotator_labels") {
    const auto t = lower(v);
    if (t == "raw") c.best_labels = BestAnnotatorLabels::raw;
    else if (t == "corrected") c.best_labels = BestAnnotatorLabels::corrected;
    else throw InputError("best_annotator_labels must be raw or corrected");
  } else {
    throw InputError("unknown config key '" + key + "'");
  }
}

// Profile first, so explicit keys override its defaults regardless of order.
inline RunConfig resolve_config(const std::vector<Setting>& settings) {
  RunConfig c;
  for (const auto& [k, v] : settings)
    if (k == "profile") apply_setting(c, k, v);
  for (const auto& [k, v] : settings)
    if (k != "profile") apply_setting(c, k, v);
  return c;
}

// Flat `key = value` lines; `#` starts a comment. A JSON run manifest is also
// accepted: the config recorded for `command` is read back if that command
// ran, else the config of the latest run.
inline std::vector<Setting> parse_config_text(const std::string& text, const std::string& source,
                                              const std::string& command = "") {
  std::vector<Setting> out;
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    const auto j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded()) throw InputError(source + ": invalid JSON");
    const nlohmann::json* cfg = &j;
    if (j.contains("config")) cfg = &j["config"];
    if (!command.empty() && j.contains("runs") && j["runs"].contains(command) &&
        j["runs"][command].contains("config"))
      cfg = &j["runs"][command]["config"];
    if (!cfg->is_object()) throw InputError(source + ": config must be a JSON object");
    for (auto it = cfg->begin(); it != cfg->end(); ++it)
      out.emplace_back(it.key(), it->is_string() ? it->get<std::string>() : it->dump());
    return out;
  }
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto t = csv::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos)
      throw InputError(source + ":" + std::to_string(line_no) + ": expected key = value");
    out.emplace_back(std::string(csv::trim(t.substr(0, eq))), std::string(csv::trim(t.substr(eq + 1))));
  }
  return out;
}

inline std::vector<Setting> load_config_file(const std::filesystem::path& path, const std::string& command = "") {
  auto in = csv::open_in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string(), command);
}

// Fully resolved settings, readable back through resolve_config.
inline std::vector<Setting> to_settings(const RunConfig& c) {
  using csv::format_double;
  auto opt = [](const std::optional<std::filesystem::path>& p) { return p ? p->generic_string() : std::string(); };
  return {
      {"profile", c.profile == Profile::sim ? "sim" : "real"},
      {"out", c.out.generic_string()},
      {"annotations", opt(c.annotations)},
      {"features", opt(c.features)},
      {"reference", opt(c.reference)},
      {"truth", opt(c.truth)},
      {"annotators_truth", opt(c.annotators_truth)},
      {"seed", std::to_string(c.seed)},
      {"methods", detail::join_methods(c.methods)},
      {"records", std::to_string(c.sim.n_records)},
      {"annotators", std::to_string(c.sim.n_annotators)},
      {"density", format_double(c.sim.density)},
      {"bias_mean", format_double(c.sim.bias_mean)},
      {"bias_sd", format_double(c.sim.bias_sd)},
      {"truth_mean", format_double(c.sim.truth_mean)},
      {"truth_sd", format_double(c.sim.truth_sd)},
      {"k_b", format_double(c.hp.b.shape)},
      {"theta_b", format_double(c.hp.b.scale)},
      {"mu_phi", format_double(c.hp.mu_phi)},
      {"k_alpha", format_double(c.hp.alpha.shape)},
      {"theta_alpha", format_double(c.hp.alpha.scale)},
      {"k_lambda", format_double(c.hp.lambda.shape)},
      {"theta_lambda", format_double(c.hp.lambda.scale)},
      {"max_iterations", std::to_string(c.hp.max_iterations)},
      {"convergence_tol", format_double(c.hp.convergence_tol)},
      {"intercept", c.intercept ? "true" : "false"},
      {"n_boot", std::to_string(c.n_boot)},
      {"sweep_reps", std::to_string(c.sweep_reps)},
      {"sweep_min", std::to_string(c.sweep_min)},
      {"sweep_max", c.sweep_max ? std::to_string(*c.sweep_max) : std::string()},
      {"refit", c.refit ? "true" : "false"},
      {"gevd_blocks", std::to_string(c.gevd_blocks)},
      {"gevd_block_size", c.gevd_block_size ? std::to_string(*c.gevd_block_size) : std::string()},
      {"threads", std::to_string(c.threads)},
      {"best_annotator_labels", c.best_labels == BestAnnotatorLabels::raw ? "raw" : "corrected"},
  };
}

// The simulator draws precisions from the profile's precision prior.
inline SimulationParams simulation_params(const RunConfig& c) {
  SimulationParams p = c.sim;
  p.lambda_shape = c.hp.lambda.shape;
  p.lambda_scale = c.hp.lambda.scale;
  return p;
}

}  // namespace bcla
