// bcla: simulate, aggregate, evaluate and sweep from the command line.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bcla/commands.hpp"

namespace {

enum ExitCode { kOk = 0, kBadInput = 2, kNumerical = 3, kIo = 4 };

struct Flags {
  std::string config;
  std::vector<bcla::Setting> overrides;
};

// Adds `--name` writing into the override list under `key`.
void add_setting(CLI::App& app, Flags& flags, const std::string& name, const std::string& key,
                 const std::string& help) {
  app.add_option_function<std::string>(
      name, [&flags, key](const std::string& v) { flags.overrides.emplace_back(key, v); }, help);
}

void add_common(CLI::App& app, Flags& flags) {
  app.add_option("--config", flags.config, "key = value config file or a run_manifest.json");
  add_setting(app, flags, "--seed", "seed", "random seed");
  add_setting(app, flags, "--out", "out", "output directory");
  add_setting(app, flags, "--profile", "profile", "hyperparameter profile: sim or real");
  app.add_option_function<std::vector<std::string>>(
      "--set",
      [&flags](const std::vector<std::string>& kvs) {
        for (const auto& kv : kvs) {
          const auto eq = kv.find('=');
          if (eq == std::string::npos) throw CLI::ValidationError("--set", "expected key=value, got '" + kv + "'");
          flags.overrides.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
        }
      },
      "override any config key (repeatable), e.g. --set theta_lambda=0.003");
  add_setting(app, flags, "--threads", "threads", "worker threads");
}

void add_inputs(CLI::App& app, Flags& flags) {
  add_setting(app, flags, "--annotations", "annotations", "annotations CSV (default OUT/annotations.csv)");
  add_setting(app, flags, "--features", "features", "per-record features CSV");
  add_setting(app, flags, "--method", "methods", "comma list of mean,median,em_r,bcla,best_annotator");
  add_setting(app, flags, "--reference", "reference", "reference labels CSV (record_id,value)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bias-corrected label aggregation for continuous annotations"};
  app.set_version_flag("--version", std::string(bcla::kVersion));
  app.require_subcommand(1);
  Flags flags;

  auto* sim = app.add_subcommand("simulate", "generate a synthetic annotation study");
  add_common(*sim, flags);
  add_setting(*sim, flags, "--records", "records", "number of records");
  add_setting(*sim, flags, "--annotators", "annotators", "number of annotators");
  add_setting(*sim, flags, "--density", "density", "fraction of record/annotator pairs observed");

  auto* agg = app.add_subcommand("aggregate", "estimate ground truth from annotations");
  add_common(*agg, flags);
  add_inputs(*agg, flags);
  add_setting(*agg, flags, "--max-iterations", "max_iterations", "EM iteration limit");

  auto* eval = app.add_subcommand("evaluate", "bootstrap metrics and pairwise tests against a reference");
  add_common(*eval, flags);
  add_setting(*eval, flags, "--annotations", "annotations", "annotations CSV (enables best_annotator and --refit)");
  add_setting(*eval, flags, "--features", "features", "per-record features CSV");
  add_setting(*eval, flags, "--reference", "reference", "reference labels CSV (default OUT/truth.csv)");
  add_setting(*eval, flags, "--truth", "truth", "simulation truth CSV");
  add_setting(*eval, flags, "--annotators-truth", "annotators_truth", "per-annotator truth CSV");
  add_setting(*eval, flags, "--n-boot", "n_boot", "bootstrap replicates");
  add_setting(*eval, flags, "--method", "methods", "methods re-run under --refit");
  eval->add_flag_function(
      "--refit", [&flags](std::int64_t) { flags.overrides.emplace_back("refit", "true"); },
      "re-run inference on every bootstrap replicate");

  auto* sweep = app.add_subcommand("sweep", "RMSE as a function of the number of annotators");
  add_common(*sweep, flags);
  add_inputs(*sweep, flags);
  add_setting(*sweep, flags, "--reps", "sweep_reps", "subsets per size");
  add_setting(*sweep, flags, "--min-size", "sweep_min", "smallest subset size (>= 3)");
  add_setting(*sweep, flags, "--max-size", "sweep_max", "largest subset size (default R)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kBadInput;
  }

  try {
    const auto* cmd = app.get_subcommands().front();
    std::vector<bcla::Setting> settings;
    if (!flags.config.empty()) settings = bcla::load_config_file(flags.config, cmd->get_name());
    settings.insert(settings.end(), flags.overrides.begin(), flags.overrides.end());
    const auto config = bcla::resolve_config(settings);
    if (sim->parsed()) bcla::cmd_simulate(config, std::cout);
    else if (agg->parsed()) bcla::cmd_aggregate(config, std::cout);
    else if (eval->parsed()) bcla::cmd_evaluate(config, std::cout);
    else bcla::cmd_sweep(config, std::cout);
  } catch (const bcla::IoError& e) {
    std::cerr << "bcla: I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const bcla::InputError& e) {
    std::cerr << "bcla: bad input: " << e.what() << '\n';
    return kBadInput;
  } catch (const bcla::NumericalError& e) {
    std::cerr << "bcla: numerical failure: " << e.what() << '\n';
    return kNumerical;
  }
  return kOk;
}
