#include <cmath>
#include <random>

#include "doctest.h"
#include "glab/guidance.hpp"
#include "glab/solvers.hpp"
#include "test_util.hpp"

using namespace glab;
using namespace glab::testing;

TEST_CASE("combine_eps endpoints and linearity") {
  std::mt19937_64 rng(1);
  const Vec a = random_vec(rng, 4);
  const Vec b = random_vec(rng, 4);
  CHECK((combine_eps(a, b, 1.0).array() == b.array()).all());
  CHECK((combine_eps(a, b, 0.0).array() == a.array()).all());
  CHECK((combine_eps(Vec::Zero(4), b, 7.5) - 7.5 * b).norm() == 0.0);
  CHECK_THROWS_AS(combine_eps(a, Vec::Zero(3), 2.0), ParameterError);
}

TEST_CASE("combine_eps of identical arguments is the argument") {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 100; ++i) {
    const Vec a = random_vec(rng, 3);
    const double s = std::uniform_real_distribution<double>(-5.0, 20.0)(rng);
    REQUIRE((combine_eps(a, a, s).array() == a.array()).all());
  }
}

TEST_CASE("guided Tweedie interpolates the two denoised estimates") {
  const auto schedule = default_schedule();
  const auto model = GaussianMixture<double>::default_ring();
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const int t = std::uniform_int_distribution<int>(1, 1000)(rng);
    const Vec x = random_vec(rng, 2);
    const Vec e0 = eps_pred(model, schedule, x, t, NullCondition{}).eps;
    const Vec ec = eps_pred(model, schedule, x, t, ClassCondition{trial % 8}).eps;
    const Vec x0 = posterior_mean(model, schedule, x, t, NullCondition{});
    const Vec xc = posterior_mean(model, schedule, x, t, ClassCondition{trial % 8});
    CHECK((guided_tweedie(x, e0, ec, 0.0, schedule, t) - x0).norm() == 0.0);
    CHECK((guided_tweedie(x, e0, ec, 1.0, schedule, t) - xc).norm() == 0.0);
    for (double lambda : {0.2, 0.6, 1.0}) {
      const Vec lhs = guided_tweedie(x, e0, ec, lambda, schedule, t);
      const Vec rhs = (1.0 - lambda) * x0 + lambda * xc;
      REQUIRE(rel_err(lhs, rhs) <= 1e-12);
    }
  }
  CHECK_THROWS_AS(guided_tweedie(Vec(Vec::Zero(2)), Vec(Vec::Zero(2)), Vec(Vec::Zero(2)), 0.5, NoiseLevel{0.0}),
                  SingularityError);
}

TEST_CASE("equivalent omega on a hand-built two-step schedule") {
  // alpha_bar: 1 -> 0.64 -> 0.25
  const NoiseSchedule schedule(ScheduleKind::kVpLinear, 2, {}, {1.0, 0.64, 0.25});
  const TimestepGrid grid{{2, 1, 0}, GridDirection::kSampling};
  const auto eq = equivalent_omega_schedule(1.0, schedule, grid);
  REQUIRE(eq.omega_t.size() == 2);
  // gamma = 0.8 sqrt(0.75) / 0.5, xi = 0.6 - gamma; high-precision reference values
  CHECK(eq.gamma_t[0] == doctest::Approx(1.3856406460551018).epsilon(1e-14));
  CHECK(eq.xi_t[0] == doctest::Approx(-0.78564064605510183).epsilon(1e-14));
  CHECK(eq.omega_t[0] == doctest::Approx(1.7637079407904238).epsilon(1e-14));
  // last step lands on alpha_bar = 1: xi = -gamma, omega = lambda
  CHECK(eq.xi_t[1] == doctest::Approx(-eq.gamma_t[1]).epsilon(1e-15));
  CHECK(eq.omega_t[1] == doctest::Approx(1.0).epsilon(1e-15));

  // one DDIM step each way from the same point
  const auto model = GaussianMixture<double>::default_ring();
  std::mt19937_64 rng(4);
  for (double lambda : {0.3, 1.0}) {
    const auto eq_l = equivalent_omega_schedule(lambda, schedule, grid);
    for (int trial = 0; trial < 20; ++trial) {
      const Vec x = random_vec(rng, 2);
      const auto ev = evaluate(model, NoiseLevel::at(schedule, 2), x, ClassCondition{1});
      const Vec via_cfgpp = ddim_step(ev, {StepGuidance::Role::kCfgPP, lambda}, schedule, 2, 1);
      const Vec via_cfg = ddim_step(ev, {StepGuidance::Role::kCfg, eq_l.omega_t[0]}, schedule, 2, 1);
      REQUIRE(rel_err(via_cfg, via_cfgpp) <= 1e-12);
    }
  }
}

TEST_CASE("equivalent omega edge cases") {
  const auto schedule = default_schedule();
  const auto grid = uniform_grid(schedule, 50, GridDirection::kSampling);
  const auto zero = equivalent_omega_schedule(0.0, schedule, grid);
  for (double w : zero.omega_t) CHECK(w == 0.0);
  const auto eq = equivalent_omega_schedule(0.6, schedule, grid);
  for (std::size_t i = 0; i < eq.xi_t.size(); ++i) {
    CHECK(eq.xi_t[i] < 0.0);
    CHECK(eq.omega_t[i] > 0.0);
  }
  CHECK(eq.omega_t.back() == doctest::Approx(0.6).epsilon(1e-14));

  CHECK_THROWS_AS(equivalent_omega_schedule(0.6, schedule, grid.reversed()), ParameterError);
  const TimestepGrid repeated{{500, 500, 0}, GridDirection::kSampling};
  try {
    equivalent_omega_schedule(0.6, schedule, repeated);
    FAIL("expected a degenerate step");
  } catch (const DegenerateStepError& e) {
    CHECK(e.step() == 0);
  }
}

TEST_CASE("scheduled CFG reproduces CFG++ over a 50-step trajectory") {
  const auto schedule = default_schedule();
  const auto model = GaussianMixture<double>::default_ring();
  const auto grid = uniform_grid(schedule, 50, GridDirection::kSampling);
  for (double lambda : {0.2, 0.4, 0.6, 0.8, 1.0}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto a = sample(model, schedule, grid, CfgPP{lambda}, ClassCondition{2}, SolverSpec{}, seed);
      const auto b = sample(model, schedule, grid, scheduled_cfg_for(lambda, schedule, grid),
                            ClassCondition{2}, SolverSpec{}, seed);
      for (std::size_t i = 0; i < a.records.size(); ++i) {
        REQUIRE(rel_err(b.records[i].x, a.records[i].x) <= 1e-9);
      }
    }
  }
}

TEST_CASE("guidance parsing and validation") {
  CHECK(std::get<Cfg>(parse_guidance("cfg:7.5")).omega == 7.5);
  CHECK(std::get<CfgPP>(parse_guidance("cfgpp:0.6")).lambda == 0.6);
  CHECK(std::holds_alternative<Uncond>(parse_guidance("uncond")));
  CHECK(to_string(parse_guidance("cfgpp:0.6")) == "cfgpp:0.6");
  CHECK_THROWS_AS(parse_guidance("cfg"), ParameterError);
  CHECK_THROWS_AS(parse_guidance("pcg:1"), ParameterError);
  CHECK_THROWS_AS(parse_guidance("cfg:-1"), ParameterError);
  CHECK_THROWS_AS(parse_guidance("cfgpp:2.5"), ParameterError);
  CHECK(validate_guidance(CfgPP{0.8}).empty());
  CHECK(validate_guidance(CfgPP{1.4}).size() == 1);
  CHECK_THROWS_AS(guidance_at_step(ScheduledCfg{{1.0, 2.0}}, 2), ParameterError);
  CHECK(guidance_at_step(ScheduledCfg{{1.0, 2.0}}, 1).scale == 2.0);
}

TEST_CASE("matched scale metadata") {
  CHECK(kMatchedScales.size() == 5);
  CHECK(kMatchedScales[2].lambda == 0.6);
  CHECK(kMatchedScales[2].omega == 7.5);
  CHECK(kMatchedScales[4].omega == 12.5);
}
