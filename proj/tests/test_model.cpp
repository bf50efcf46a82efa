#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "bcla/model.hpp"
#include "oracles.hpp"

using namespace bcla;

namespace {

AnnotationTable dense(const std::vector<std::vector<double>>& rows) {
  const std::size_t n = rows.size(), r = rows.front().size();
  std::vector<std::string> rec, ann;
  for (std::size_t i = 0; i < n; ++i) rec.push_back("r" + std::to_string(i + 1));
  for (std::size_t j = 0; j < r; ++j) ann.push_back("a" + std::to_string(j + 1));
  std::vector<double> values;
  std::vector<unsigned char> mask;
  for (const auto& row : rows)
    for (double v : row) {
      values.push_back(std::isnan(v) ? 0.0 : v);
      mask.push_back(std::isnan(v) ? 0 : 1);
    }
  return AnnotationTable(rec, ann, values, mask);
}

ModelState state_for(const AnnotationTable& d, std::size_t width) {
  ModelState s;
  s.z = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d.n_records()));
  s.w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(width));
  s.phi = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d.n_annotators()));
  s.lambda = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(d.n_annotators()));
  return s;
}

Hyperparameters flat_hp() {
  Hyperparameters hp;
  hp.b = {1.0, 1e12};
  hp.alpha = {1.0, 1e12};
  hp.lambda = {1.0, 1e12};
  hp.mu_phi = 0.0;
  return hp;
}

}  // namespace

TEST(UpdateZ, SingleSourceLimit) {
  const auto d = dense({{10.0}});
  auto s = state_for(d, 1);
  s.b = 1e-12;
  EXPECT_NEAR(update_z(s, d, FeatureTable::intercept_only(1))[0], 10.0, 1e-9);
}

TEST(UpdateZ, AveragesEqualPrecisions) {
  const auto d = dense({{10.0, 20.0}});
  auto s = state_for(d, 1);
  s.b = 1e-12;
  EXPECT_NEAR(update_z(s, d, FeatureTable::intercept_only(1))[0], 15.0, 1e-9);
}

TEST(UpdateZ, BlendsRegressionPrediction) {
  const auto d = dense({{10.0}});
  auto s = state_for(d, 1);
  s.phi[0] = 2.0;
  s.w[0] = 20.0;
  s.b = 1.0;
  EXPECT_DOUBLE_EQ(update_z(s, d, FeatureTable::intercept_only(1))[0], 14.0);
}

TEST(UpdateZ, IgnoresMissingCells) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const auto d = dense({{10.0, nan}, {20.0, 30.0}});
  auto s = state_for(d, 1);
  s.b = 1e-12;
  const auto z = update_z(s, d, FeatureTable::intercept_only(2));
  EXPECT_NEAR(z[0], 10.0, 1e-9);
  EXPECT_NEAR(z[1], 25.0, 1e-9);
}

TEST(UpdateW, InterceptOnlyGivesMean) {
  const auto w = update_w(Eigen::Vector3d(1, 2, 3), FeatureTable::intercept_only(3));
  ASSERT_EQ(w.size(), 1);
  EXPECT_NEAR(w[0], 2.0, 1e-12);
}

TEST(UpdateW, ZeroTarget) {
  EXPECT_EQ(update_w(Eigen::Vector3d::Zero(), FeatureTable::intercept_only(3))[0], 0.0);
}

TEST(UpdateW, ExactFitWithoutIntercept) {
  Eigen::MatrixXd x(2, 1);
  x << 1, 2;
  const auto w = update_w(Eigen::Vector2d(2, 4), FeatureTable(x, false));
  EXPECT_NEAR(w[0], 2.0, 1e-12);
}

TEST(UpdateW, RankDeficientDesignNamesColumns) {
  Eigen::MatrixXd x(3, 2);
  x << 1, 2, 2, 4, 3, 6;
  try {
    LeastSquares ls(FeatureTable(x, false, {"qrs", "qrs_twice"}));
    FAIL() << "expected InputError";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("qrs"), std::string::npos);
  }
}

TEST(UpdatePhi, PriorFreeMeanResidual) {
  const auto d = dense({{1.0}, {1.0}});
  auto s = state_for(d, 1);
  s.alpha_phi = 1e-12;
  auto hp = flat_hp();
  EXPECT_NEAR(update_phi(s, d, hp)[0], 1.0, 1e-9);
}

TEST(UpdatePhi, ShrinksTowardPriorMean) {
  const auto d = dense({{0.0}});
  auto s = state_for(d, 1);
  s.alpha_phi = 1.0;
  auto hp = flat_hp();
  hp.mu_phi = 10.0;
  EXPECT_DOUBLE_EQ(update_phi(s, d, hp)[0], 5.0);
}

TEST(UpdatePhi, FixedPointAtZero) {
  const auto d = dense({{0.0, 0.0}, {0.0, 0.0}});
  auto s = state_for(d, 1);
  s.alpha_phi = 3.0;
  const auto phi = update_phi(s, d, flat_hp());
  EXPECT_EQ(phi[0], 0.0);
  EXPECT_EQ(phi[1], 0.0);
}

TEST(UpdateAlphaPhi, PriorFree) {
  ModelState s;
  s.phi = Eigen::Vector2d(1, -1);
  auto hp = flat_hp();
  EXPECT_NEAR(update_alpha_phi(s, hp), 1.0, 1e-9);
}

TEST(UpdateAlphaPhi, PriorOnly) {
  ModelState s;
  s.phi = Eigen::Vector2d(0, 0);
  auto hp = flat_hp();
  hp.alpha = {2.0, 1.0};
  EXPECT_DOUBLE_EQ(update_alpha_phi(s, hp), 2.0);
}

TEST(UpdateAlphaPhi, QuadraticScaling) {
  ModelState s;
  s.phi = Eigen::Vector3d(3, -1, 7);
  auto hp = flat_hp();
  hp.mu_phi = 1.0;
  const double a1 = update_alpha_phi(s, hp);
  s.phi = (s.phi.array() - 1.0) * 2.0 + 1.0;
  EXPECT_NEAR(update_alpha_phi(s, hp), a1 / 4.0, 1e-9 * a1);
}

TEST(UpdateB, PriorFree) {
  ModelState s;
  s.z = Eigen::Vector2d(1, 1);
  s.w = Eigen::VectorXd::Zero(1);
  EXPECT_NEAR(update_b(s, FeatureTable::intercept_only(2), flat_hp()), 1.0, 1e-9);
}

TEST(UpdateB, PriorOnly) {
  ModelState s;
  s.z = Eigen::Vector2d(3, 3);
  s.w = Eigen::VectorXd::Constant(1, 3.0);
  auto hp = flat_hp();
  hp.b = {2.0, 1.0};
  EXPECT_DOUBLE_EQ(update_b(s, FeatureTable::intercept_only(2), hp), 2.0);
}

TEST(UpdateB, ShiftAbsorbedByIntercept) {
  ModelState s;
  s.z = Eigen::Vector4d(380, 410, 395, 430);
  const auto feats = FeatureTable::intercept_only(4);
  s.w = update_w(s.z, feats);
  const auto hp = Hyperparameters::real_data();
  const double b1 = update_b(s, feats, hp);
  s.z.array() += 123.0;
  s.w = update_w(s.z, feats);
  EXPECT_NEAR(update_b(s, feats, hp), b1, 1e-12 * b1);
}

TEST(UpdateLambda, PriorFree) {
  const auto d = dense({{1.0}, {1.0}});
  auto s = state_for(d, 1);
  EXPECT_NEAR(update_lambda(s, d, flat_hp()).lambda[0], 1.0, 1e-9);
}

TEST(UpdateLambda, PriorOnlyAndClamp) {
  const auto d = dense({{0.0}, {0.0}});
  auto s = state_for(d, 1);
  auto hp = flat_hp();
  hp.lambda = {2.0, 1.0};
  auto u = update_lambda(s, d, hp);
  EXPECT_DOUBLE_EQ(u.lambda[0], 2.0);
  EXPECT_EQ(u.clamp_events, 0u);
  hp.cap = PrecisionCap::fixed(1.5);
  u = update_lambda(s, d, hp);
  EXPECT_EQ(u.lambda[0], 1.5);
  EXPECT_EQ(u.clamp_events, 1u);
}

TEST(UpdateLambda, ExplodingPrecisionReturnsCapExactly) {
  const auto d = dense({{0.0}, {0.0}});
  auto s = state_for(d, 1);
  auto hp = flat_hp();
  hp.lambda = {1.0, 1e300};
  hp.cap = PrecisionCap::fixed(0.04);
  EXPECT_EQ(update_lambda(s, d, hp).lambda[0], 0.04);
}

TEST(UpdateLambda, UncappedDivergenceIsNumericalError) {
  const auto d = dense({{0.0}, {0.0}});
  auto s = state_for(d, 1);
  auto hp = Hyperparameters::real_data();
  hp.lambda = GammaPrior::flat();
  EXPECT_THROW(update_lambda(s, d, hp), NumericalError);
}

TEST(LogPosterior, MatchesTermByTermOracle) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const auto d = dense({{402.0, 417.5}, {388.0, nan}});
  const auto feats = FeatureTable::intercept_only(2);
  ModelState s;
  s.z = Eigen::Vector2d(398.0, 391.0);
  s.w = Eigen::VectorXd::Constant(1, 395.0);
  s.phi = Eigen::Vector2d(3.0, 12.0);
  s.lambda = Eigen::Vector2d(0.004, 0.0011);
  s.alpha_phi = 0.0016;
  s.b = 0.0007;
  const auto hp = Hyperparameters::real_data();
  const auto expected = oracle::log_posterior(oracle::Params::from(s), d, feats.design(), hp);
  EXPECT_NEAR(log_posterior(s, d, feats, hp), static_cast<double>(expected), 1e-9 * std::abs(expected));
}

TEST(LogPosterior, UpdateLambdaIsCoordinateOptimal) {
  auto t = oracle::make_toy(7);
  const double before = log_posterior(t.state, t.data, t.feats, t.hp);
  auto s = t.state;
  s.lambda = update_lambda(s, t.data, t.hp).lambda;
  EXPECT_GE(log_posterior(s, t.data, t.feats, t.hp), before);
}

// Each update sets the finite-difference partial of the independently coded
// log posterior to zero, relative to the summed magnitudes of the summands'
// partials.
class GradientZero : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(GradientZero, EveryUpdateIsStationary) {
  auto t = oracle::make_toy(GetParam());
  auto& s = t.state;
  const auto& X = t.feats.design();
  auto expect_zero = [&](const char* what, const std::function<oracle::Real&(oracle::Params&)>& coord) {
    const auto g = oracle::partial(oracle::Params::from(s), coord, t.data, X, t.hp);
    EXPECT_LT(g.relative(), 1e-6L) << what << " partial " << static_cast<double>(g.value) << " scale "
                                   << static_cast<double>(g.scale);
  };

  s.z = update_z(s, t.data, t.feats);
  for (Eigen::Index i = 0; i < s.z.size(); ++i) expect_zero("z", [i](oracle::Params& p) -> oracle::Real& { return p.z[i]; });
  s.w = update_w(s.z, t.feats);
  for (std::size_t c = 0; c < 2; ++c) expect_zero("w", [c](oracle::Params& p) -> oracle::Real& { return p.w[c]; });
  s.phi = update_phi(s, t.data, t.hp);
  for (std::size_t j = 0; j < t.data.n_annotators(); ++j)
    expect_zero("phi", [j](oracle::Params& p) -> oracle::Real& { return p.phi[j]; });
  s.alpha_phi = update_alpha_phi(s, t.hp);
  expect_zero("alpha_phi", [](oracle::Params& p) -> oracle::Real& { return p.alpha; });
  s.b = update_b(s, t.feats, t.hp);
  expect_zero("b", [](oracle::Params& p) -> oracle::Real& { return p.b; });
  const auto lu = update_lambda(s, t.data, t.hp);
  ASSERT_EQ(lu.clamp_events, 0u);
  s.lambda = lu.lambda;
  for (std::size_t j = 0; j < t.data.n_annotators(); ++j)
    expect_zero("lambda", [j](oracle::Params& p) -> oracle::Real& { return p.lambda[j]; });
}

INSTANTIATE_TEST_SUITE_P(ToyInstances, GradientZero, ::testing::Range<std::uint64_t>(1, 11));

TEST(GradientZero, DetectsAWrongUpdate) {
  // The oracle must be sensitive: a 1% error in phi breaks stationarity.
  auto t = oracle::make_toy(3);
  t.state.phi = update_phi(t.state, t.data, t.hp) * 1.01;
  const auto g = oracle::partial(oracle::Params::from(t.state), [](oracle::Params& p) -> oracle::Real& { return p.phi[0]; },
                                 t.data, t.feats.design(), t.hp);
  EXPECT_GT(g.relative(), 1e-4L);
}

TEST(Initialize, MedianMeanResidualAndPriorMean) {
  const auto d = dense({{390.0, 400.0, 420.0}, {500.0, 510.0, 507.0}});
  const auto hp = Hyperparameters::real_data();
  const auto s = initialize(d, FeatureTable::intercept_only(2), hp);
  EXPECT_EQ(s.z[0], 400.0);
  EXPECT_EQ(s.z[1], 507.0);
  EXPECT_DOUBLE_EQ(s.phi[1], (0.0 + 3.0) / 2.0);
  for (Eigen::Index j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(s.lambda[j], 0.012);
}

TEST(Initialize, ConstantOffsetAnnotator) {
  const auto d = dense({{400.0, 407.0, 398.0}, {420.0, 427.0, 415.0}, {380.0, 387.0, 385.0}});
  const auto s = initialize(d, FeatureTable::intercept_only(3), Hyperparameters::real_data());
  EXPECT_EQ(s.z[0], 400.0);
  EXPECT_EQ(s.z[1], 420.0);
  EXPECT_EQ(s.z[2], 385.0);
  EXPECT_DOUBLE_EQ(s.phi[0], (0.0 + 0.0 - 5.0) / 3.0);
  EXPECT_DOUBLE_EQ(s.phi[1], (7.0 + 7.0 + 2.0) / 3.0);
}

TEST(Initialize, LambdaStartsBelowCap) {
  auto hp = Hyperparameters::real_data();
  hp.cap = PrecisionCap::fixed(0.005);
  const auto s = initialize(dense({{1.0, 2.0}}), FeatureTable::intercept_only(1), hp);
  EXPECT_EQ(s.lambda.maxCoeff(), 0.005);
}

namespace {

Simulation small_sim(std::uint64_t seed, std::size_t n = 60, std::size_t r = 6, double density = 1.0) {
  SimulationParams p;
  p.n_records = n;
  p.n_annotators = r;
  p.density = density;
  return simulate(p, seed);
}

}  // namespace

TEST(RunEm, MonotoneOnClampFreeIterationsAndCapRespected) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto sim = small_sim(seed, 40, 5, 0.8);
    auto hp = Hyperparameters::simulation();
    hp.cap = PrecisionCap::fixed(0.003);
    const auto res = run_em(sim.table, sim.features, hp);
    double prev = res.trace.initial_log_posterior;
    for (std::size_t k = 0; k < res.trace.iterations_run; ++k) {
      const double lp = res.trace.log_posterior[k];
      if (res.trace.clamp_events[k] == 0) {
        EXPECT_GE(lp - prev, -1e-9 * std::abs(prev)) << "iteration " << k + 1;
      }
      prev = lp;
    }
    EXPECT_LE(res.state.lambda.maxCoeff(), 0.003);
  }
}

TEST(RunEm, ConvexCombinationOfSources) {
  const auto sim = small_sim(11, 30, 4, 0.7);
  const auto hp = Hyperparameters::simulation();
  auto res = run_em(sim.table, sim.features, hp);
  // One more E-step from the final state: each z_i lies in the hull of its
  // bias-corrected labels and the regression prediction.
  const auto& s = res.state;
  const auto z = update_z(s, sim.table, sim.features);
  const Eigen::VectorXd pred = sim.features.design() * s.w;
  for (std::size_t i = 0; i < sim.table.n_records(); ++i) {
    double lo = pred[static_cast<Eigen::Index>(i)], hi = lo;
    for (const auto& o : sim.table.record_obs(i)) {
      lo = std::min(lo, o.value - s.phi[o.annotator]);
      hi = std::max(hi, o.value - s.phi[o.annotator]);
    }
    EXPECT_GE(z[static_cast<Eigen::Index>(i)], lo - 1e-9);
    EXPECT_LE(z[static_cast<Eigen::Index>(i)], hi + 1e-9);
  }
}

TEST(RunEm, BitIdenticalReruns) {
  const auto sim = small_sim(5);
  const auto hp = Hyperparameters::simulation();
  const auto a = run_em(sim.table, sim.features, hp);
  const auto b = run_em(sim.table, sim.features, hp);
  EXPECT_TRUE(a.state.z == b.state.z);
  EXPECT_TRUE(a.state.phi == b.state.phi);
  EXPECT_TRUE(a.state.lambda == b.state.lambda);
  EXPECT_EQ(a.trace.log_posterior, b.trace.log_posterior);
}

TEST(RunEm, PermutingAnnotatorsPermutesParameters) {
  const auto sim = small_sim(8, 50, 5);
  const auto& t = sim.table;
  const std::vector<std::size_t> perm{3, 0, 4, 2, 1};
  std::vector<std::string> ann;
  std::vector<double> values;
  std::vector<unsigned char> mask;
  for (std::size_t j : perm) ann.push_back(t.annotator_ids()[j]);
  for (std::size_t i = 0; i < t.n_records(); ++i)
    for (std::size_t j : perm) {
      values.push_back(t.value(i, j));
      mask.push_back(t.observed(i, j));
    }
  const AnnotationTable permuted(t.record_ids(), ann, values, mask);
  const auto hp = Hyperparameters::simulation();
  const auto a = run_em(t, sim.features, hp);
  const auto b = run_em(permuted, sim.features, hp);
  // Sums over annotators run in a different order, so agreement is to rounding.
  EXPECT_LT((a.state.z - b.state.z).cwiseAbs().maxCoeff(), 1e-6);
  for (std::size_t k = 0; k < perm.size(); ++k) {
    const auto bk = static_cast<Eigen::Index>(k), ak = static_cast<Eigen::Index>(perm[k]);
    EXPECT_NEAR(b.state.phi[bk], a.state.phi[ak], 1e-6);
    EXPECT_NEAR(b.state.lambda[bk], a.state.lambda[ak], 1e-9 * a.state.lambda[ak] + 1e-12);
  }
}

TEST(RunEm, ShiftOfAllLabelsMovesTruthOnly) {
  const auto sim = small_sim(9, 40, 4);
  const auto& t = sim.table;
  std::vector<double> values;
  std::vector<unsigned char> mask;
  for (std::size_t i = 0; i < t.n_records(); ++i)
    for (std::size_t j = 0; j < t.n_annotators(); ++j) {
      values.push_back(t.value(i, j) + 50.0);
      mask.push_back(t.observed(i, j));
    }
  const AnnotationTable shifted(t.record_ids(), t.annotator_ids(), values, mask);
  const auto hp = Hyperparameters::simulation();
  const auto s0 = initialize(t, sim.features, hp);
  const auto s1 = initialize(shifted, sim.features, hp);
  // One sweep from shifted starting points: z and w move by the shift, the
  // residual-driven quantities do not.
  auto sweep = [&](ModelState s, const AnnotationTable& d) {
    s.z = update_z(s, d, sim.features);
    s.w = update_w(s.z, sim.features);
    s.phi = update_phi(s, d, hp);
    s.alpha_phi = update_alpha_phi(s, hp);
    s.b = update_b(s, sim.features, hp);
    s.lambda = update_lambda(s, d, hp).lambda;
    return s;
  };
  const auto a = sweep(s0, t), b = sweep(s1, shifted);
  EXPECT_LT(((b.z.array() - 50.0) - a.z.array()).abs().maxCoeff(), 1e-9);
  EXPECT_LT((b.phi - a.phi).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_NEAR(b.b, a.b, 1e-9 * a.b);
  EXPECT_LT(((b.lambda - a.lambda).array() / a.lambda.array()).abs().maxCoeff(), 1e-9);
}

TEST(RunEm, SingleAnnotatorReproducesLabels) {
  const auto d = dense({{401.0}, {377.0}, {455.0}, {402.5}});
  Hyperparameters hp;
  hp.mu_phi = 0.0;
  hp.alpha = {1.0, 1e12};
  hp.b = {1.0, 1e-10};  // b pinned near zero by a tiny prior scale
  hp.cap = PrecisionCap::fixed(1.0);
  // Seed the bias at zero by running with the bias model switched off.
  const auto res = run_em(d, FeatureTable::intercept_only(4), hp, BiasModel::none);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(res.state.z[static_cast<Eigen::Index>(i)], d.value(i, 0), 1e-6);
}

TEST(RunEm, ReportsNonConvergenceWithoutThrowing) {
  const auto sim = small_sim(3);
  auto hp = Hyperparameters::simulation();
  hp.max_iterations = 3;
  const auto res = run_em(sim.table, sim.features, hp);
  EXPECT_EQ(res.trace.iterations_run, 3u);
  EXPECT_FALSE(res.trace.converged);
}

TEST(RunEm, RecoversSimulatedBiases) {
  const auto sim = small_sim(21, 300, 8);
  auto hp = Hyperparameters::simulation();
  hp.cap = precision_upper_bound(hp.lambda.shape, hp.lambda.scale, 8, 21);
  const auto res = run_em(sim.table, sim.features, hp);
  EXPECT_TRUE(res.trace.converged);
  const std::vector<double> phi(res.state.phi.data(), res.state.phi.data() + res.state.phi.size());
  EXPECT_GT(stats::pearson(phi, sim.truth.phi_true), 0.95);
}
