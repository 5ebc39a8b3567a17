#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "glab/inverse_problems.hpp"
#include "test_util.hpp"

using namespace glab;
using namespace glab::testing;

namespace {

using Role = StepGuidance::Role;

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Vec prior_draw(const GaussianMixture<double>& model, const Condition& cond, std::uint64_t seed) {
  Engine e = make_engine({seed, 0, kPriorSampleStep});
  return sample_prior(model, cond, e);
}

Measurement exact(const LinearOperator& op, const Vec& y) {
  Measurement m;
  m.op = op;
  m.y = y;
  return m;
}

}  // namespace

TEST_CASE("linear operators") {
  std::mt19937_64 rng(31);
  const auto mask = LinearOperator::mask({true, false, true});
  CHECK(mask.output_dim() == 2);
  const Vec x = random_vec(rng, 3);
  CHECK((mask.apply(x) - mask.dense() * x).norm() == 0.0);
  const Vec r = random_vec(rng, 2);
  CHECK((mask.adjoint(r) - mask.dense().transpose() * r).norm() == 0.0);

  Mat a(2, 3);
  a << 1, 2, 0, 0, 1, -1;
  const auto op = LinearOperator::matrix(a);
  CHECK(op.apply(x).dot(r) == doctest::Approx(x.dot(op.adjoint(r))).epsilon(1e-14));
  Mat rank1(2, 3);
  rank1 << 1, 2, 3, 2, 4, 6;
  CHECK_THROWS_AS(LinearOperator::matrix(rank1), ParameterError);
  CHECK_THROWS_AS(LinearOperator::matrix(Mat::Ones(3, 2)), ParameterError);
  CHECK_THROWS_AS(LinearOperator::mask({false, false}), ParameterError);
  CHECK_THROWS_AS(mask.apply(Vec::Zero(2)), ParameterError);
  Measurement bad = exact(mask, Vec::Zero(3));
  CHECK_THROWS_AS(bad.validate(), ParameterError);
}

TEST_CASE("data gradient matches finite differences") {
  std::mt19937_64 rng(32);
  Mat a(2, 3);
  a << 0.5, -1.0, 2.0, 1.5, 0.3, -0.7;
  const auto m = exact(LinearOperator::matrix(a), random_vec(rng, 2));
  auto loss = [&](const Vec& x) { return (m.y - m.op.apply(x)).squaredNorm(); };
  for (int trial = 0; trial < 50; ++trial) {
    const Vec x = random_vec(rng, 3);
    const Vec g = data_gradient(m, x);
    Vec fd(3);
    const double h = 1e-6;
    for (int i = 0; i < 3; ++i) {
      Vec p = x, q = x;
      p[i] += h;
      q[i] -= h;
      fd[i] = (loss(p) - loss(q)) / (2 * h);
    }
    REQUIRE((g - fd).norm() / std::max(1.0, g.norm()) <= 1e-6);
  }
}

TEST_CASE("guided Tweedie Jacobian matches finite differences") {
  const auto schedule = default_schedule();
  const auto model = GaussianMixture<double>::default_ring();
  std::mt19937_64 rng(33);
  for (int trial = 0; trial < 100; ++trial) {
    const int t = std::uniform_int_distribution<int>(1, 1000)(rng);
    const NoiseLevel level = NoiseLevel::at(schedule, t);
    const Vec x = random_vec(rng, 2);
    const Condition cond = ClassCondition{trial % 8};
    const StepGuidance g{trial % 2 ? Role::kCfgPP : Role::kCfg, trial % 2 ? 0.7 : 3.0};
    const Mat J = guided_jacobian(model, evaluate(model, level, x, cond), cond, g);
    const Vec v = random_vec(rng, 2);
    auto xhat = [&](const Vec& y) { return guided_terms(evaluate(model, level, y, cond), g).denoised; };
    const double h = 1e-5;
    const Vec fd = (xhat(Vec(x + h * v)) - xhat(Vec(x - h * v))) / (2 * h);
    // J is symmetric so J^T v is the directional derivative
    REQUIRE((J.transpose() * v - fd).norm() / std::max(1.0, fd.norm()) <= 1e-5);
  }
}

TEST_CASE("data-consistency steps reduce to guided DDIM") {
  const auto schedule = default_schedule();
  const auto model = GaussianMixture<double>::default_ring();
  std::mt19937_64 rng(34);
  const auto id = LinearOperator::identity(2);
  for (int trial = 0; trial < 30; ++trial) {
    const int t = std::uniform_int_distribution<int>(2, 1000)(rng);
    const int t_prev = std::uniform_int_distribution<int>(0, t - 1)(rng);
    const Vec x = random_vec(rng, 2);
    const Condition cond = ClassCondition{trial % 8};
    const auto ev = evaluate(model, NoiseLevel::at(schedule, t), x, cond);
    const Vec plain = ddim_step(ev, {Role::kUncond, 0.0}, schedule, t, t_prev);

    // y = xhat_null: zero gradient
    DisParams p;
    p.gamma = 0.37;
    const auto m = exact(id, guided_terms(ev, {Role::kUncond, 0.0}).xhat_null);
    CHECK(rel_err(dds_step(x, model, schedule, t, t_prev, m, p, cond), plain) <= 1e-14);
    CHECK(rel_err(dps_step(x, model, schedule, t, t_prev, m, p, cond), plain) <= 1e-14);

    // gamma = 0 is plain guided sampling
    for (GuidanceMode mode : {GuidanceMode{Cfg{4.0}}, GuidanceMode{CfgPP{0.6}}}) {
      DisParams z;
      z.gamma = 0.0;
      z.guidance = mode;
      const Vec y = random_vec(rng, 2);
      const Vec guided = ddim_step(ev, guidance_at_step(mode, 0), schedule, t, t_prev);
      CHECK(rel_err(dds_step(x, model, schedule, t, t_prev, exact(id, y), z, cond), guided) <= 1e-14);
    }

    // DDS towards xhat_c with gamma = lambda / 2 is the CFG++ step
    const double lambda = 0.8;
    DisParams half;
    half.gamma = lambda / 2;
    const auto mc = exact(id, guided_terms(ev, {Role::kCfgPP, 1.0}).xhat_cond);
    const Vec cfgpp = ddim_step(ev, {Role::kCfgPP, lambda}, schedule, t, t_prev);
    CHECK(rel_err(dds_step(x, model, schedule, t, t_prev, mc, half, cond), cfgpp) <= 1e-12);
  }
}

TEST_CASE("single Gaussian: DPS is DDS with a rescaled step") {
  const auto schedule = default_schedule();
  const double s = 0.4;
  const auto model = single_gaussian(3, 0.2, s);
  std::mt19937_64 rng(35);
  const auto m = exact(LinearOperator::mask({true, true, false}), random_vec(rng, 2));
  for (int trial = 0; trial < 30; ++trial) {
    const int t = std::uniform_int_distribution<int>(2, 1000)(rng);
    const int t_prev = t - 1;
    const double a = schedule.alpha_bar(t);
    const double c = std::sqrt(a) * s * s / (a * s * s + 1 - a);
    const Vec x = random_vec(rng, 3);
    DisParams dps;
    dps.gamma = 0.3;
    DisParams dds;
    dds.gamma = 0.3 * c;
    const Vec lhs = dps_step(x, model, schedule, t, t_prev, m, dps, NullCondition{});
    const Vec rhs = dds_step(x, model, schedule, t, t_prev, m, dds, NullCondition{});
    REQUIRE(rel_err(lhs, rhs) <= 1e-10);
  }
}

TEST_CASE("exact posterior oracle") {
  SUBCASE("single Gaussian conjugacy") {
    const auto model = single_gaussian(2, 0.5, 0.3);
    Measurement m = exact(LinearOperator::identity(2), Vec(Vec::Constant(2, 1.0)));
    m.noise_std = 0.2;
    const auto post = exact_posterior(model, m);
    const double prec = 1 / 0.09 + 1 / 0.04;
    CHECK(post.mean[0] == doctest::Approx((0.5 / 0.09 + 1.0 / 0.04) / prec).epsilon(1e-13));
    CHECK(post.covariance(0, 0) == doctest::Approx(1 / prec).epsilon(1e-13));
  }
  SUBCASE("ring against grid quadrature") {
    const auto model = GaussianMixture<double>::default_ring();
    Measurement m = exact(LinearOperator::identity(2), Vec(Vec{{0.6, 0.5}}));
    m.noise_std = 0.15;
    const auto post = exact_posterior(model, m);
    // brute force p(x) p(y | x) on a fine grid
    const int n = 801;
    const double lo = -1.6, hi = 1.6, dx = (hi - lo) / (n - 1);
    double z = 0;
    Vec mean = Vec::Zero(2);
    double var0 = 0;
    const double s2 = 0.01;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        const Vec x{{lo + i * dx, lo + j * dx}};
        double prior = 0;
        for (int k = 0; k < 8; ++k) prior += 0.125 * std::exp(-0.5 * (x - model.mean(k)).squaredNorm() / s2);
        const double lik = std::exp(-0.5 * (m.y - x).squaredNorm() / (0.15 * 0.15));
        z += prior * lik;
        mean += prior * lik * x;
        var0 += prior * lik * x[0] * x[0];
      }
    }
    mean /= z;
    CHECK((mean - post.mean).norm() <= 1e-8);
    CHECK(var0 / z - mean[0] * mean[0] == doctest::Approx(post.covariance(0, 0)).epsilon(1e-6));
  }
}

TEST_CASE("solve_inverse") {
  const auto schedule = default_schedule();
  const auto model = GaussianMixture<double>::default_ring();
  const auto grid = uniform_grid(schedule, 100, GridDirection::kSampling);

  SUBCASE("identity operator recovers the truth") {
    int ok = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const Vec truth = prior_draw(model, NullCondition{}, seed);
      const auto m = exact(LinearOperator::identity(2), truth);
      const auto rep = solve_inverse(model, schedule, grid, m, DisParams{}, NullCondition{}, seed, truth);
      ok += *rep.error_to_truth < 1e-2;
      CHECK(rep.trajectory.records.size() == 101);
      CHECK(median({rep.residuals.end() - 10, rep.residuals.end()}) <=
            median({rep.residuals.begin(), rep.residuals.begin() + 10}));
    }
    CHECK(ok >= 19);
  }
  SUBCASE("noisy residual floor and determinism") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const Vec truth = prior_draw(model, NullCondition{}, seed);
      Engine e = make_engine({seed, 0, 7});
      const auto m = measure(LinearOperator::mask({true, false}), truth, 0.05, e);
      for (auto mode : {DisMode::kDds, DisMode::kDps}) {
        DisParams p;
        p.mode = mode;
        p.guidance = CfgPP{0.6};
        if (mode == DisMode::kDps) {
          p.shape = GammaShape::kRamp;
          p.gamma = 0.5;
        }
        const auto a = solve_inverse(model, schedule, grid, m, p, ClassCondition{1}, seed);
        const auto b = solve_inverse(model, schedule, grid, m, p, ClassCondition{1}, seed);
        CHECK((a.trajectory.final_state().array() == b.trajectory.final_state().array()).all());
        if (mode == DisMode::kDds) CHECK(a.final_residual <= std::max(0.05 * 1.5, 1e-3));
      }
    }
  }
  SUBCASE("masked coordinate lands near the Bayes posterior") {
    int ok = 0;
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
      const Vec truth = prior_draw(model, NullCondition{}, seed);
      const auto m = exact(LinearOperator::mask({true, false}), Vec(Vec::Constant(1, truth[0])));
      const auto rep = solve_inverse(model, schedule, grid, m, DisParams{}, NullCondition{}, seed);
      const auto post = exact_posterior(model, m);
      const double hidden = rep.trajectory.final_state()[1];
      ok += std::abs(hidden - post.mean[1]) <= 3.0 * std::sqrt(post.covariance(1, 1));
    }
    CHECK(ok >= 38);
  }
  SUBCASE("class guidance helps the hidden coordinate on average") {
    double err_cfgpp = 0, err_uncond = 0;
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
      const int k = static_cast<int>(seed % 8);
      const Vec truth = prior_draw(model, ClassCondition{k}, seed);
      const auto m = exact(LinearOperator::mask({true, false}), Vec(Vec::Constant(1, truth[0])));
      DisParams pp;
      pp.guidance = CfgPP{1.0};
      err_cfgpp += *solve_inverse(model, schedule, grid, m, pp, ClassCondition{k}, seed, truth).error_to_truth;
      err_uncond += *solve_inverse(model, schedule, grid, m, DisParams{}, ClassCondition{k}, seed, truth).error_to_truth;
    }
    MESSAGE("mean error cfg++ " << err_cfgpp / 40 << " uncond " << err_uncond / 40);
    CHECK(err_cfgpp <= err_uncond);
  }
  SUBCASE("errors") {
    DisParams neg;
    neg.gamma = -1.0;
    const auto m = exact(LinearOperator::identity(2), Vec(Vec::Zero(2)));
    CHECK_THROWS_AS(solve_inverse(model, schedule, grid, m, neg, NullCondition{}, 0), ParameterError);
    const auto wrong = exact(LinearOperator::identity(3), Vec(Vec::Zero(3)));
    CHECK_THROWS_AS(solve_inverse(model, schedule, grid, wrong, DisParams{}, NullCondition{}, 0), ParameterError);
    DisParams short_list;
    short_list.gamma_per_step = {0.5};
    CHECK_THROWS_AS(solve_inverse(model, schedule, grid, m, short_list, NullCondition{}, 0), StepError);
    CHECK(parse_dis_mode("dps") == DisMode::kDps);
    CHECK_THROWS_AS(parse_gamma_shape("cubic"), ParameterError);
  }
}
