#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "bcla/commands.hpp"

using namespace bcla;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path_ = fs::temp_directory_path() / (std::string("bcla_") + info->test_suite_name() + "_" + info->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t data_rows(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) ++n;
  return n - 1;
}

RunConfig config(const fs::path& out, std::vector<Setting> extra = {}) {
  extra.emplace_back("out", out.string());
  return resolve_config(extra);
}

}  // namespace

TEST(Simulate, DefaultsWriteFullStudy) {
  TempDir dir;
  std::ostringstream log;
  cmd_simulate(config(dir.path()), log);
  EXPECT_EQ(data_rows(dir.path() / "annotations.csv"), 10960u);
  EXPECT_EQ(data_rows(dir.path() / "truth.csv"), 548u);
  EXPECT_EQ(data_rows(dir.path() / "annotators_truth.csv"), 20u);
  EXPECT_NE(log.str().find("10960"), std::string::npos);
}

TEST(Simulate, SmallStudyAndByteIdenticalRerun) {
  TempDir dir;
  std::ostringstream log;
  const auto c = config(dir.path() / "a", {{"records", "10"}, {"annotators", "3"}});
  cmd_simulate(c, log);
  EXPECT_EQ(data_rows(dir.path() / "a" / "annotations.csv"), 30u);
  auto c2 = c;
  c2.out = dir.path() / "b";
  cmd_simulate(c2, log);
  for (const char* f : {"annotations.csv", "truth.csv", "annotators_truth.csv"})
    EXPECT_EQ(slurp(dir.path() / "a" / f), slurp(dir.path() / "b" / f)) << f;
}

TEST(Aggregate, WritesEveryMethodAndMonotoneTrace) {
  TempDir dir;
  std::ostringstream log;
  const auto c = config(dir.path(), {{"records", "150"}});
  cmd_simulate(c, log);
  cmd_aggregate(c, log);
  for (const char* m : {"mean", "median", "em_r", "bcla"})
    EXPECT_EQ(data_rows(dir.path() / (std::string("estimates_") + m + ".csv")), 150u) << m;
  EXPECT_EQ(data_rows(dir.path() / "estimates.csv"), 4u * 150u);
  EXPECT_EQ(data_rows(dir.path() / "annotators.csv"), 20u);

  const auto trace = load_csv(dir.path() / "trace.csv", "iteration,log_posterior,max_rel_change,clamp_events");
  ASSERT_GT(trace.rows.size(), 1u);
  for (std::size_t k = 1; k < trace.rows.size(); ++k) {
    if (trace.rows[k][3] != "0") continue;
    const double prev = std::stod(trace.rows[k - 1][1]), cur = std::stod(trace.rows[k][1]);
    EXPECT_GE(cur - prev, -1e-9 * std::abs(prev)) << "iteration " << k + 1;
  }
}

TEST(Aggregate, SingleMethodCoversAllRecords) {
  TempDir dir;
  std::ostringstream log;
  const auto c = config(dir.path(), {{"methods", "bcla"}});
  cmd_simulate(c, log);
  cmd_aggregate(c, log);
  EXPECT_EQ(data_rows(dir.path() / "estimates_bcla.csv"), 548u);
  EXPECT_FALSE(fs::exists(dir.path() / "estimates_mean.csv"));
}

TEST(Aggregate, BadAnnotationsAreInputErrors) {
  TempDir dir;
  std::ofstream(dir.path() / "annotations.csv") << "record_id,annotator_id,value_ms\nr1,a1,x\n";
  std::ostringstream log;
  EXPECT_THROW(cmd_aggregate(config(dir.path()), log), InputError);
  EXPECT_THROW(cmd_aggregate(config(dir.path() / "missing"), log), IoError);
}

TEST(Evaluate, SimulatedStudyOrderingAndOutputs) {
  TempDir dir;
  std::ostringstream log;
  const auto c = config(dir.path(), {{"n_boot", "30"}});
  cmd_simulate(c, log);
  cmd_aggregate(c, log);
  cmd_evaluate(c, log);
  std::ifstream in(dir.path() / "metrics.json");
  const auto j = nlohmann::json::parse(in);
  auto r = [&](const char* m) { return j["methods"][m]["mean_rmse"].get<double>(); };
  EXPECT_LT(r("bcla"), r("mean"));
  EXPECT_LT(r("bcla"), r("median"));
  EXPECT_LT(r("bcla"), r("em_r"));
  EXPECT_TRUE(j["methods"]["best_annotator"]["supervised"].get<bool>());
  const auto& p = j["pvalues_rmse"];
  for (const auto& [a, row] : p.items())
    for (const auto& [b, v] : row.items()) EXPECT_EQ(v.get<double>(), p[b][a].get<double>());
  EXPECT_GT(j["recovery"]["bcla"]["correlation_phi"].get<double>(), 0.95);
  EXPECT_EQ(data_rows(dir.path() / "recovery.csv"), 20u);
  EXPECT_TRUE(fs::exists(dir.path() / "recovery_em_r.csv"));
}

TEST(Evaluate, ReferenceEqualToEstimatesIsDegenerate) {
  TempDir dir;
  std::ostringstream log;
  const auto c = config(dir.path(), {{"records", "40"}, {"annotators", "1"}, {"methods", "mean,median"}, {"n_boot", "20"}});
  cmd_simulate(c, log);
  cmd_aggregate(c, log);
  auto e = c;
  e.reference = dir.path() / "estimates_mean.csv";
  e.annotations = dir.path() / "not_here.csv";
  cmd_evaluate(e, log);
  std::ifstream in(dir.path() / "metrics.json");
  const auto j = nlohmann::json::parse(in);
  for (const char* m : {"mean", "median"}) {
    EXPECT_EQ(j["methods"][m]["mean_rmse"].get<double>(), 0.0);
    EXPECT_EQ(j["methods"][m]["mean_mae"].get<double>(), 0.0);
  }
  ASSERT_EQ(j["degenerate_pairs"].size(), 1u);
  EXPECT_EQ(j["pvalues_rmse"]["mean"]["median"].get<double>(), 1.0);
}

TEST(Evaluate, MissingReferenceIsInputError) {
  TempDir dir;
  std::ostringstream log;
  const auto c = config(dir.path(), {{"records", "20"}, {"methods", "mean"}});
  cmd_simulate(c, log);
  cmd_aggregate(c, log);
  fs::remove(dir.path() / "truth.csv");
  EXPECT_THROW(cmd_evaluate(c, log), InputError);
}

TEST(Evaluate, RefitRerunsInference) {
  TempDir dir;
  std::ostringstream log;
  const auto c = config(dir.path(), {{"records", "60"}, {"annotators", "5"}, {"n_boot", "5"}, {"refit", "true"}});
  cmd_simulate(c, log);
  cmd_aggregate(c, log);
  cmd_evaluate(c, log);
  std::ifstream in(dir.path() / "metrics.json");
  const auto j = nlohmann::json::parse(in);
  EXPECT_EQ(j["bootstrap"], "refit");
  EXPECT_GT(j["methods"]["bcla"]["mean_rmse"].get<double>(), 0.0);
}

TEST(Manifest, RerunFromManifestIsByteIdentical) {
  TempDir dir;
  std::ostringstream log;
  const auto c = config(dir.path() / "first", {{"records", "80"}, {"seed", "17"}, {"profile", "real"}});
  cmd_simulate(c, log);
  cmd_aggregate(c, log);
  auto settings = load_config_file(dir.path() / "first" / "run_manifest.json");
  settings.emplace_back("out", (dir.path() / "second").string());
  const auto again = resolve_config(settings);
  EXPECT_EQ(again.seed, 17u);
  EXPECT_EQ(again.hp.lambda.scale, 0.003);
  cmd_simulate(again, log);
  cmd_aggregate(again, log);
  for (const char* f : {"annotations.csv", "estimates.csv", "annotators.csv", "trace.csv", "trace_em_r.csv"})
    EXPECT_EQ(slurp(dir.path() / "first" / f), slurp(dir.path() / "second" / f)) << f;
  std::ifstream in(dir.path() / "first" / "run_manifest.json");
  const auto j = nlohmann::json::parse(in);
  EXPECT_EQ(j["version"], kVersion);
  EXPECT_TRUE(j["runs"].contains("simulate"));
  EXPECT_TRUE(j["runs"].contains("aggregate"));
}

TEST(Sweep, ShapeAndDeterminism) {
  TempDir dir;
  std::ostringstream log;
  const auto c = config(dir.path(), {{"records", "60"}, {"annotators", "6"}, {"sweep_reps", "3"}, {"methods", "mean,median,bcla"}});
  cmd_simulate(c, log);
  cmd_sweep(c, log);
  EXPECT_EQ(data_rows(dir.path() / "sweep_summary.csv"), 3u * 4u);
  EXPECT_EQ(data_rows(dir.path() / "sweep.csv"), 3u * 4u * 3u);
  const auto first = slurp(dir.path() / "sweep.csv");
  auto threaded = c;
  threaded.threads = 2;
  cmd_sweep(threaded, log);
  EXPECT_EQ(slurp(dir.path() / "sweep.csv"), first);
}

TEST(Sweep, TooFewAnnotators) {
  TempDir dir;
  std::ostringstream log;
  const auto c = config(dir.path(), {{"records", "20"}, {"annotators", "2"}});
  cmd_simulate(c, log);
  EXPECT_THROW(cmd_sweep(c, log), InputError);
}
