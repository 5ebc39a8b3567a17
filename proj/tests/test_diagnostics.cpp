#include <cmath>
#include <random>

#include "doctest.h"
#include "glab/diagnostics.hpp"
#include "test_util.hpp"

using namespace glab;
using namespace glab::testing;

TEST_CASE("SDS loss normalization identity") {
  const auto schedule = default_schedule();
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto model = random_mixture(rng, 2, 3, 0.2);
    const int t = std::uniform_int_distribution<int>(1, 1000)(rng);
    const Vec x = random_vec(rng, 2);
    const Vec eps = random_vec(rng, 2);
    const Condition cond = ClassCondition{trial % 3};
    const NoiseLevel level = NoiseLevel::at(schedule, t);
    const Vec x_t = level.signal() * x + level.noise() * eps;
    const double rhs = (x - posterior_mean_direct(model, level, x_t, cond)).squaredNorm();
    const double lhs = normalized_sds_loss(model, schedule, x, cond, t, eps);
    REQUIRE(std::abs(lhs - rhs) <= 1e-10 * std::max(1.0, rhs));
  }
}

TEST_CASE("SDS loss limits") {
  const auto schedule = default_schedule();
  std::mt19937_64 rng(42);
  SUBCASE("sharp prior at the mode") {
    const auto sharp = GaussianMixture<double>::ring(8, 1.0, 1e-6);
    const Vec eps = random_vec(rng, 2);
    const double near = sds_loss(sharp, schedule, sharp.mean(2), ClassCondition{2}, 1, eps);
    CHECK(near < 1e-6);
  }
  SUBCASE("fixed point") {
    const auto model = GaussianMixture<double>::default_ring();
    const Vec x_t = random_vec(rng, 2);
    const NoiseLevel level = NoiseLevel::at(schedule, 300);
    const Vec eps = noise_prediction(model, level, x_t, ClassCondition{4});
    const Vec x = tweedie<double>(x_t, eps, level);
    CHECK(sds_loss(model, schedule, x, ClassCondition{4}, 300, eps) <= 1e-24);
  }
  const auto model = GaussianMixture<double>::default_ring();
  CHECK_THROWS_AS(sds_loss(model, schedule, Vec(Vec::Zero(2)), NullCondition{}, 0, Vec(Vec::Zero(2))), IndexError);
  CHECK_THROWS_AS(sds_loss(model, schedule, Vec(Vec::Zero(2)), NullCondition{}, 1001, Vec(Vec::Zero(2))), IndexError);
}

TEST_CASE("loss traces") {
  const auto schedule = default_schedule();
  const auto model = GaussianMixture<double>::default_ring();
  const auto grid = uniform_grid(schedule, 50, GridDirection::kSampling);
  const Condition cond = ClassCondition{5};

  const auto a = track_loss(sample(model, schedule, grid, Cfg{0.0}, cond, SolverSpec{}, 3), model, schedule, cond);
  const auto b = track_loss(sample(model, schedule, grid, CfgPP{0.0}, cond, SolverSpec{}, 3), model, schedule, cond);
  CHECK(a.loss == b.loss);
  CHECK(a.loss.size() == 50);

  const auto traj = sample(model, schedule, grid, CfgPP{0.6}, cond, SolverSpec{}, 4);
  const auto trace = track_loss(traj, model, schedule, cond);
  for (std::size_t i = 0; i < trace.loss.size(); ++i) {
    const auto& rec = traj.records[i];
    CHECK(trace.t[i] == rec.t);
    CHECK(trace.loss[i] >= 0.0);
    const double direct = (rec.xhat_cond - rec.xhat_null).squaredNorm();
    CHECK(trace.loss[i] == doctest::Approx(direct).epsilon(1e-9));
  }

  const auto single = single_gaussian(2, 0.3, 0.2);
  const auto st = track_loss(sample(single, schedule, grid, Uncond{}, NullCondition{}, SolverSpec{}, 5), single,
                             schedule, NullCondition{});
  for (std::size_t i = 40; i + 1 < st.loss.size(); ++i) {
    CHECK(std::isfinite(st.loss[i]));
    CHECK(st.loss[i + 1] <= st.loss[i]);
  }
}

TEST_CASE("drift decomposition identities") {
  const auto schedule = default_schedule();
  const auto model = GaussianMixture<double>::default_ring();
  const auto grid = uniform_grid(schedule, 50, GridDirection::kSampling);
  const Condition cond = ClassCondition{6};

  for (GuidanceMode mode : {GuidanceMode{Cfg{7.5}}, GuidanceMode{CfgPP{0.6}}, GuidanceMode{Uncond{}},
                            GuidanceMode{scheduled_cfg_for(0.8, schedule, grid)}, GuidanceMode{CfgPP{1.3}}}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto traj = sample(model, schedule, grid, mode, cond, SolverSpec{}, seed);
      const auto recs = drift_decomposition(traj, model, schedule, cond, mode);
      REQUIRE(recs.size() == 50);
      for (const auto& r : recs) REQUIRE(r.relative_residual <= 1e-9);
    }
  }

  SUBCASE("lambda = 0 has no conditional shift") {
    const auto traj = sample(model, schedule, grid, CfgPP{0.0}, cond, SolverSpec{}, 1);
    for (const auto& r : drift_decomposition(traj, model, schedule, cond, CfgPP{0.0})) {
      CHECK(r.cond_shift.norm() == 0.0);
    }
  }
  SUBCASE("oscillation witness") {
    const auto cfg = drift_decomposition(sample(model, schedule, grid, Cfg{7.5}, cond, SolverSpec{}, 2), model,
                                         schedule, cond, Cfg{7.5});
    int flips = 0;
    for (std::size_t i = 1; i < cfg.size(); ++i) {
      for (int j = 0; j < 2; ++j) flips += cfg[i].cond_shift[j] * cfg[i - 1].cond_shift[j] < 0.0;
    }
    MESSAGE("CFG conditional-shift sign flips: " << flips);
    CHECK(flips >= 1);
    const auto pp = drift_decomposition(sample(model, schedule, grid, CfgPP{0.6}, cond, SolverSpec{}, 2), model,
                                        schedule, cond, CfgPP{0.6});
    for (const auto& r : pp) CHECK(r.cond_shift.dot(r.delta) >= 0.0);
  }
  SUBCASE("mismatches") {
    const auto traj = sample(model, schedule, grid, Cfg{7.5}, cond, SolverSpec{}, 0);
    CHECK_THROWS_AS(drift_decomposition(traj, model, schedule, cond, CfgPP{0.6}), ParameterError);
    CHECK_THROWS_AS(drift_decomposition(traj, model, schedule, ClassCondition{1}, Cfg{7.5}), ParameterError);
    SolverSpec euler;
    euler.kind = SolverKind::kEuler;
    const auto et = sample(model, schedule, grid, Cfg{7.5}, cond, euler, 0);
    CHECK_THROWS_AS(drift_decomposition(et, model, schedule, cond, Cfg{7.5}), ParameterError);
  }
}

TEST_CASE("manifold proxy and mode coverage") {
  const auto model = GaussianMixture<double>::default_ring();
  CHECK(manifold_proxy(model.mean(3), model) == 0.0);
  const Vec u = Vec{{0.6, 0.8}};
  CHECK(manifold_proxy(Vec(model.mean(3) + 0.1 * u), model) == doctest::Approx(1.0).epsilon(1e-12));

  const auto collapsed = mode_coverage(std::vector<Vec>(20, model.mean(0)), model);
  CHECK(collapsed.entropy == 0.0);
  CHECK(collapsed.frequencies[0] == 1.0);
  std::vector<Vec> spread;
  for (int k = 0; k < 8; ++k) spread.push_back(model.mean(k));
  CHECK(mode_coverage(spread, model).entropy == doctest::Approx(std::log(8.0)).epsilon(1e-14));
  CHECK_THROWS_AS(mode_coverage({}, model), ParameterError);

  const auto schedule = default_schedule();
  const auto grid = uniform_grid(schedule, 50, GridDirection::kSampling);
  std::vector<Vec> samples;
  for (std::uint64_t seed = 0; seed < 2000; ++seed) {
    samples.push_back(sample(model, schedule, grid, Uncond{}, NullCondition{}, SolverSpec{}, seed).final_state());
  }
  CHECK(std::abs(mode_coverage(samples, model).entropy - entropy(model.weights())) <= 0.05);
}

TEST_CASE("directional report") {
  const auto row = paired_summary({3.0, 4.0, 5.0}, {1.0, 1.0, 1.0});
  CHECK(row.diff_mean == doctest::Approx(3.0));
  CHECK(row.ci_low < 3.0);
  CHECK(row.ci_high > 3.0);
  CHECK(row.direction_holds);
  CHECK_THROWS_AS(paired_summary({1.0}, {}), ParameterError);

  const auto schedule = default_schedule();
  const auto model = GaussianMixture<double>::default_ring();
  DirectionalOptions opt;
  opt.seeds = 10;
  opt.bootstrap = 50;
  const auto a = directional_report(model, schedule, opt);
  const auto b = directional_report(model, schedule, opt);
  REQUIRE(a.size() == 3);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].metric == b[i].metric);
    CHECK(a[i].diff_mean == b[i].diff_mean);
    CHECK(a[i].ci_low == b[i].ci_low);
    CHECK(a[i].ci_low <= a[i].ci_high);
  }
}
