#include <gtest/gtest.h>

#include "fid/active.hpp"
#include "fid/diagnosability.hpp"
#include "oracles.hpp"

using namespace fid;

namespace {

Scenario example1(double noise_std = -1.0) {
  ScenarioConfig cfg{.scenario = "example1"};
  if (noise_std > 0) cfg.params = {{"process_std", noise_std}, {"measurement_std", noise_std}};
  return build_scenario(cfg);
}

Vec v2(double a, double b) { return (Vec(2) << a, b).finished(); }

}  // namespace

TEST(EstimateLambda, Example1RestrictedControlsAreFundamentallyLimited) {
  const Scenario sc = example1(1e-4);
  Rng rng(1);
  const auto r = estimate_lambda(sc, 0, fixed_control_source({v2(1.0, 0.0)}), 10, 50, 50, rng);
  EXPECT_LE(r.lambda_min, 1e-6);
  EXPECT_TRUE(is_fundamentally_limited(r));
  EXPECT_EQ(r.lambda_per_k.size(), 42u);
  EXPECT_EQ(r.diverged_steps, 0);
}

TEST(EstimateLambda, IdenticalCopiesGiveExactZero) {
  const Scenario base = build_scenario(ScenarioConfig{.scenario = "two_tank"});
  Scenario sc = base;
  sc.hypotheses = HypothesisSet({base.hypotheses[2], base.hypotheses[2].with_label("copy")}, HypothesisSet::Check::none);
  Rng rng(2);
  const auto r = estimate_lambda(sc, 0, nominal_control_source(), 5, 40, 30, rng);
  EXPECT_EQ(r.lambda_min, 0.0);
  EXPECT_EQ(r.stderr_min, 0.0);
  for (double l : r.lambda_per_k) EXPECT_EQ(l, 0.0);
}

TEST(EstimateLambda, Example1AxisTwoInputMatchesKalmanRecursion) {
  const Scenario sc = example1();
  const int N = 5, K = 30;
  Rng rng(3);
  const auto r = estimate_lambda(sc, 0, fixed_control_source({v2(0.0, 1.0)}), N, K, 10, rng);
  EXPECT_GT(r.lambda_min, 0.0);
  EXPECT_FALSE(is_fundamentally_limited(r));

  // The gap between the two filters' predictions does not depend on the measurements
  // for this linear pair, so a single oracle pass fixes every trial's value.
  const Mat I = Mat::Identity(2, 2);
  const Mat Bm = (Mat(2, 2) << 1.0, 0.0, 0.0, 0.5).finished();
  const Mat Q = sc.hypotheses[0].process_cov();
  const Mat R = sc.hypotheses[0].measurement_cov();
  oracle::Kalman h{I, I, I, Q, R, sc.x0_mean, sc.x0_cov, {}, {}};
  oracle::Kalman m{I, Bm, I, Q, R, sc.x0_mean, sc.x0_cov, {}, {}};
  const Vec u = v2(0.0, 1.0);
  std::vector<double> sep;
  for (int k = 0; k <= K; ++k) {
    Vec gap = Vec::Zero(2);
    if (k > 0) gap = (h.x + u) - (m.x + Bm * u);
    h.step(k == 0 ? nullptr : &u, Vec::Zero(2));
    m.step(k == 0 ? nullptr : &u, Vec::Zero(2));
    sep.push_back(gap.dot(m.S.inverse() * gap));
  }
  double best = kInf;
  for (int k = N - 1; k <= K; ++k) {
    double acc = 0.0;
    for (int i = k - N + 1; i <= k; ++i) acc += sep[static_cast<std::size_t>(i)];
    const double lk = acc / N;
    EXPECT_NEAR(r.lambda_per_k[static_cast<std::size_t>(k - N + 1)], lk, 1e-9 * std::max(1.0, lk));
    best = std::min(best, lk);
  }
  EXPECT_NEAR(r.lambda_min, best, 1e-9 * std::max(1.0, best));
  EXPECT_EQ(r.argmin_k, N - 1);
}

TEST(EstimateLambda, MinimumBoundsEveryStepAndIsNonNegative) {
  const Scenario sc = build_scenario(ScenarioConfig{.scenario = "two_tank"});
  Rng rng(4);
  const auto r = estimate_lambda(sc, 1, nominal_control_source(), 5, 60, 40, rng);
  for (double l : r.lambda_per_k) {
    EXPECT_GE(l, 0.0);
    EXPECT_LE(r.lambda_min, l);
  }
  EXPECT_EQ(r.bottleneck_pair.first, 1u);
  EXPECT_NE(r.bottleneck_pair.second, 1u);
}

TEST(EstimateLambda, PermutationInvariantInCompetitors) {
  const Scenario sc = build_scenario(ScenarioConfig{.scenario = "two_tank"});
  Scenario permuted = sc;
  permuted.hypotheses = HypothesisSet({sc.hypotheses[0], sc.hypotheses[3], sc.hypotheses[1], sc.hypotheses[2]});
  Rng a(5), b(5);
  const auto ra = estimate_lambda(sc, 0, nominal_control_source(), 5, 50, 30, a);
  const auto rb = estimate_lambda(permuted, 0, nominal_control_source(), 5, 50, 30, b);
  EXPECT_EQ(ra.lambda_min, rb.lambda_min);
  EXPECT_EQ(ra.lambda_per_k, rb.lambda_per_k);
  EXPECT_EQ(sc.hypotheses[ra.bottleneck_pair.second].label(), permuted.hypotheses[rb.bottleneck_pair.second].label());
}

TEST(EstimateLambda, SeparationIsQuadraticInGap) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 200; ++i) {
    const Mat S = oracle::random_spd(3, rng);
    const Vec gap = oracle::random_vec(3, rng);
    const double c = 0.1 + 0.05 * i;
    EXPECT_NEAR(separation_term(c * gap, S), c * c * separation_term(gap, S), 1e-10 * c * c * separation_term(gap, S));
    EXPECT_GE(separation_term(gap, S), 0.0);
  }
}

TEST(EstimateLambda, DivergedContributionsAreCountedSeparately) {
  const Scenario sc = build_scenario(ScenarioConfig{.scenario = "custom"});
  FilterOptions tight;
  tight.limits.stat_mean_cap = 50.0;
  Rng rng(7);
  const auto r = estimate_lambda(sc, 0, nominal_control_source(), 5, 40, 10, rng, tight);
  EXPECT_GT(r.diverged_steps, 0);
  for (double l : r.lambda_per_k) EXPECT_FALSE(std::isnan(l));
}

TEST(EstimateLambda, ActiveControlRemovesExample1Limit) {
  const Scenario sc = example1();
  Rng rng(8);
  const auto r = estimate_lambda(sc, 0, active_control_source(ActiveOptions{}), 10, 40, 20, rng);
  EXPECT_GT(r.lambda_min, 0.0);
  EXPECT_FALSE(is_fundamentally_limited(r));
}

TEST(EstimateLambda, ArgumentErrors) {
  const Scenario sc = example1();
  Rng rng(9);
  EXPECT_THROW(estimate_lambda(sc, 5, nominal_control_source(), 5, 20, 10, rng), ConfigError);
  EXPECT_THROW(estimate_lambda(sc, 0, nominal_control_source(), 5, 20, 0, rng), ConfigError);
  EXPECT_THROW(estimate_lambda(sc, 0, nominal_control_source(), 10, 5, 10, rng), ConfigError);
}

TEST(EstimateLambdaBar, MatchedTruthStaysNearMeasurementDimension) {
  const Scenario sc = build_scenario(ScenarioConfig{.scenario = "custom"});
  std::vector<double> values;
  for (int N : {5, 10, 25}) {
    Rng rng(10);
    const auto r = estimate_lambda_bar(sc, sc.hypotheses[0], nominal_control_source(), N, 150, 200, rng);
    values.push_back(r.lambda_min);
    EXPECT_NEAR(r.lambda_min, static_cast<double>(sc.hypotheses.ny()), 0.25);
    EXPECT_EQ(r.bottleneck_pair.second, 0u);
  }
  EXPECT_LT(values.back(), values.front() + 0.25);
}

TEST(EstimateLambdaBar, UnmodeledTankFaultGrowsWithWindow) {
  const Scenario sc = build_scenario(ScenarioConfig{.scenario = "two_tank"});
  const SystemModel& truth = sc.unmodeled[0];
  int grew = 0, total = 0;
  for (int batch = 0; batch < 20; ++batch) {
    for (int N : {5, 10, 25}) {
      Rng a(derive_seed(11, batch)), b(derive_seed(11, batch));
      const auto rn = estimate_lambda_bar(sc, truth, nominal_control_source(), N, 100, 20, a);
      const auto r2n = estimate_lambda_bar(sc, truth, nominal_control_source(), 2 * N, 100, 20, b);
      grew += r2n.lambda_min > rn.lambda_min;
      ++total;
    }
  }
  EXPECT_GE(grew, static_cast<int>(0.95 * total));
}

TEST(FundamentalLimit, Tolerances) {
  DiagnosabilityReport r;
  r.lambda_min = 5.0;
  r.stderr_min = 1.0;
  EXPECT_FALSE(is_fundamentally_limited(r));
  EXPECT_TRUE(is_fundamentally_limited(r, kInf));
  r.stderr_min = 2.0;
  EXPECT_TRUE(is_fundamentally_limited(r));
}

TEST(FundamentalLimit, SeparatedGainsAreNotLimited) {
  const Scenario sc = build_scenario(ScenarioConfig{.scenario = "custom"});
  Rng rng(13);
  const auto r = estimate_lambda(sc, 0, nominal_control_source(), 5, 60, 50, rng);
  EXPECT_FALSE(is_fundamentally_limited(r));
}

TEST(DiagnosabilityReport, JsonShape) {
  const Scenario sc = example1();
  Rng rng(14);
  const auto j = to_json(estimate_lambda(sc, 0, nominal_control_source(), 5, 20, 5, rng));
  for (const char* key : {"lambda_per_k", "lambda_min", "bottleneck_pair", "stderr", "diverged_steps"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
}
