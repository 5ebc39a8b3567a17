#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "glab/score_model.hpp"
#include "test_util.hpp"

using namespace glab;
using namespace glab::testing;

namespace {

const NoiseSchedule& schedule() {
  static const NoiseSchedule s = default_schedule();
  return s;
}

Condition random_condition(std::mt19937_64& rng, int K) {
  std::uniform_int_distribution<int> pick(0, 2);
  switch (pick(rng)) {
    case 0:
      return NullCondition{};
    case 1:
      return ClassCondition{std::uniform_int_distribution<int>(0, K - 1)(rng)};
    default: {
      SubsetCondition subset{std::vector<bool>(static_cast<std::size_t>(K))};
      std::bernoulli_distribution coin(0.5);
      for (int k = 0; k < K; ++k) subset.mask[static_cast<std::size_t>(k)] = coin(rng);
      subset.mask[0] = true;
      return subset;
    }
  }
}

}  // namespace

TEST_CASE("standard normal prior: eps is sqrt(1 - a) x") {
  const auto model = single_gaussian(3, 0.0, 1.0);
  std::mt19937_64 rng(1);
  for (int t : {0, 1, 250, 999, 1000}) {
    const Vec x = random_vec(rng, 3);
    const Vec eps = eps_pred(model, schedule(), x, t, NullCondition{}).eps;
    const Vec expected = std::sqrt(1.0 - schedule().alpha_bar(t)) * x;
    CHECK(rel_err(eps, expected) < 1e-14);
    CHECK(rel_err(eps, finite_diff_eps(model, schedule(), x, t, NullCondition{}, 1e-5)) < 1e-7);
  }
}

TEST_CASE("symmetric pair predicts zero noise at the origin") {
  Mat means(2, 2);
  means << 0.7, -0.7, -0.3, 0.3;
  const GaussianMixture<double> model(means, 0.2, Vec::Constant(2, 0.5));
  for (int t : {1, 100, 900}) {
    CHECK(eps_pred(model, schedule(), Vec::Zero(2), t, NullCondition{}).eps.norm() < 1e-15);
    CHECK(posterior_mean(model, schedule(), Vec::Zero(2), t, NullCondition{}).norm() < 1e-15);
  }
}

TEST_CASE("analytic eps agrees with central differences on a random 2-D model") {
  std::mt19937_64 rng(7);
  const auto model = random_mixture(rng, 2, 5, 0.3);
  for (int trial = 0; trial < 200; ++trial) {
    const int t = std::uniform_int_distribution<int>(1, 1000)(rng);
    const Vec x = random_vec(rng, 2, 1.5);
    const Vec analytic = eps_pred(model, schedule(), x, t, ClassCondition{3}).eps;
    const Vec oracle = finite_diff_eps(model, schedule(), x, t, ClassCondition{3}, 1e-5);
    REQUIRE((analytic - oracle).norm() <= 1e-5 * std::max(analytic.norm(), 1e-3));
  }
}

TEST_CASE("posterior mean: Tweedie route equals the responsibility route") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const int dim = 1 + trial % 4;
    const auto model = random_mixture(rng, dim, 1 + trial % 6, 0.05 + 0.1 * (trial % 5));
    const int t = std::uniform_int_distribution<int>(0, 1000)(rng);
    const Vec x = random_vec(rng, dim, 1.2);
    const Condition cond = random_condition(rng, static_cast<int>(model.components()));
    const Vec via_eps = posterior_mean(model, schedule(), x, t, cond);
    const Vec direct = posterior_mean_direct(model, NoiseLevel::at(schedule(), t), x, cond);
    REQUIRE(rel_err(via_eps, direct) <= 1e-9);
  }
}

TEST_CASE("posterior mean at t = 0 is the identity") {
  std::mt19937_64 rng(3);
  const auto model = random_mixture(rng, 2, 4, 0.1);
  const Vec x = random_vec(rng, 2);
  const Vec out = posterior_mean(model, schedule(), x, 0, NullCondition{});
  CHECK((out.array() == x.array()).all());
}

TEST_CASE("single Gaussian posterior mean is the conjugate affine shrinkage") {
  const double mu = 0.4;
  const double s = 0.3;
  const auto model = single_gaussian(2, mu, s);
  std::mt19937_64 rng(5);
  for (int t : {1, 37, 500, 1000}) {
    const double a = schedule().alpha_bar(t);
    const Vec x = random_vec(rng, 2);
    // E[x0 | x] = (s^2 sqrt(a) x + (1 - a) mu) / (a s^2 + 1 - a)
    const Vec expected = (s * s * std::sqrt(a) * x + (1.0 - a) * Vec::Constant(2, mu)) /
                         (a * s * s + 1.0 - a);
    CHECK(rel_err(posterior_mean(model, schedule(), x, t, NullCondition{}), expected) < 1e-12);
  }
}

TEST_CASE("log density") {
  SUBCASE("standard normal at the origin") {
    const auto model = single_gaussian(1, 0.0, 1.0);
    const double expected = -0.5 * std::log(2.0 * std::numbers::pi);
    CHECK(log_density(model, schedule(), Vec::Zero(1), 300, NullCondition{}) ==
          doctest::Approx(expected).epsilon(1e-14));
  }
  SUBCASE("duplicated component is the same density") {
    Mat two(2, 2);
    two << 0.5, 0.5, -1.0, -1.0;
    const GaussianMixture<double> doubled(two, 0.2, Vec::Constant(2, 0.5));
    const GaussianMixture<double> single(two.leftCols(1), 0.2, Vec::Ones(1));
    const Vec x = Vec::Constant(2, 0.3);
    CHECK(log_density(doubled, schedule(), x, 40, NullCondition{}) ==
          doctest::Approx(log_density(single, schedule(), x, 40, NullCondition{})).epsilon(1e-14));
  }
  SUBCASE("matches naive density summation") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 100; ++trial) {
      const auto model = random_mixture(rng, 3, 4, 0.5);
      const int t = std::uniform_int_distribution<int>(0, 1000)(rng);
      const double a = schedule().alpha_bar(t);
      const double var = a * 0.25 + 1.0 - a;
      const Vec x = random_vec(rng, 3);
      double naive = 0.0;
      for (int k = 0; k < 4; ++k) {
        const double sq = (x - std::sqrt(a) * model.mean(k)).squaredNorm();
        naive += model.weights()[k] * std::pow(2.0 * std::numbers::pi * var, -1.5) *
                 std::exp(-sq / (2.0 * var));
      }
      REQUIRE(std::exp(log_density(model, schedule(), x, t, NullCondition{})) ==
              doctest::Approx(naive).epsilon(1e-12));
    }
  }
}

TEST_CASE("Null and Subset(all) are bit-identical") {
  std::mt19937_64 rng(9);
  const auto model = random_mixture(rng, 2, 6, 0.2);
  const SubsetCondition all{std::vector<bool>(6, true)};
  for (int trial = 0; trial < 50; ++trial) {
    const Vec x = random_vec(rng, 2);
    const int t = std::uniform_int_distribution<int>(0, 1000)(rng);
    const Vec a = eps_pred(model, schedule(), x, t, NullCondition{}).eps;
    const Vec b = eps_pred(model, schedule(), x, t, all).eps;
    REQUIRE((a.array() == b.array()).all());
  }
}

TEST_CASE("far-field responsibilities collapse onto the nearest component") {
  const auto model = GaussianMixture<double>::default_ring();
  const Vec far = Vec::Constant(2, 1e4);
  const auto terms = marginal_terms(model, NoiseLevel::at(schedule(), 0), far, NullCondition{});
  CHECK(terms.responsibilities.maxCoeff() == 1.0);
  CHECK(terms.responsibilities.sum() == doctest::Approx(1.0));
  Eigen::Index best = 0;
  terms.responsibilities.maxCoeff(&best);
  CHECK(best == nearest_component(model, far));
  CHECK(eps_pred(model, schedule(), far, 0, NullCondition{}).eps.allFinite());
  CHECK(std::isfinite(log_density(model, schedule(), far, 0, NullCondition{})));
}

TEST_CASE("posterior-mean Jacobian matches finite differences") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const auto model = random_mixture(rng, 3, 4, 0.4);
    const NoiseLevel level{std::uniform_real_distribution<double>(0.05, 0.95)(rng)};
    const Vec x = random_vec(rng, 3);
    const Vec v = random_vec(rng, 3);
    const Mat jac = posterior_mean_jacobian(model, level, x, NullCondition{});
    const double h = 1e-5;
    const Vec fd = (posterior_mean_direct(model, level, Vec(x + h * v), NullCondition{}) -
                    posterior_mean_direct(model, level, Vec(x - h * v), NullCondition{})) /
                   (2 * h);
    REQUIRE((jac.transpose() * v - fd).norm() <= 1e-5 * std::max(1.0, fd.norm()));
    REQUIRE((jac - jac.transpose()).norm() < 1e-14);
  }
}

TEST_CASE("prior sampling") {
  const auto ring = GaussianMixture<double>::default_ring();
  SUBCASE("vanishing spread returns the component mean") {
    const auto tight = GaussianMixture<double>::ring(8, 1.0, 1e-12);
    Engine engine = make_engine({4, 0, 0});
    for (int i = 0; i < 20; ++i) {
      const Vec x = sample_prior(tight, ClassCondition{5}, engine);
      CHECK((x - tight.mean(5)).norm() < 1e-9);
    }
  }
  SUBCASE("class condition always draws its component") {
    Engine engine = make_engine({8, 0, 0});
    for (int i = 0; i < 200; ++i) {
      CHECK(nearest_component(ring, sample_prior(ring, ClassCondition{2}, engine)) == 2);
    }
  }
  SUBCASE("component frequencies follow the weights") {
    Mat means(1, 3);
    means << -3.0, 0.0, 3.0;
    Vec w(3);
    w << 0.2, 0.5, 0.3;
    const GaussianMixture<double> model(means, 0.1, w);
    Engine engine = make_engine({99, 0, 0});
    Vec counts = Vec::Zero(3);
    const int n = 100000;
    for (int i = 0; i < n; ++i) counts[nearest_component(model, sample_prior(model, NullCondition{}, engine))] += 1;
    for (int k = 0; k < 3; ++k) CHECK(std::abs(counts[k] / n - w[k]) <= 0.02);
  }
}

TEST_CASE("score model errors") {
  const auto ring = GaussianMixture<double>::default_ring();
  const auto& sch = schedule();
  CHECK_THROWS_AS(eps_pred(ring, sch, Vec::Zero(2), 10, SubsetCondition{std::vector<bool>(8, false)}),
                  ParameterError);
  CHECK_THROWS_AS(eps_pred(ring, sch, Vec::Zero(2), 10, ClassCondition{8}), ParameterError);
  CHECK_THROWS_AS(eps_pred(ring, sch, Vec::Zero(3), 10, NullCondition{}), ParameterError);
  CHECK_THROWS_AS(eps_pred(ring, sch, Vec::Zero(2), 1001, NullCondition{}), IndexError);
  Vec bad = Vec::Zero(2);
  bad[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(eps_pred(ring, sch, bad, 10, NullCondition{}), ParameterError);
  CHECK_THROWS_AS(finite_diff_eps(ring, sch, Vec::Zero(2), 10, NullCondition{}, 0.0), ParameterError);
  CHECK_THROWS_AS(GaussianMixture<double>(Mat::Zero(2, 2), 0.1, Vec::Constant(2, 0.4)), ParameterError);
  CHECK_THROWS_AS(GaussianMixture<double>(Mat::Zero(2, 2), 0.0, Vec::Constant(2, 0.5)), ParameterError);
  CHECK_THROWS_AS(tweedie<double>(Vec::Zero(2), Vec::Zero(2), NoiseLevel{0.0}), SingularityError);
}

TEST_CASE("condition text round trip") {
  for (const std::string text : {"null", "class:3", "subset:10110"}) {
    CHECK(to_string(parse_condition(text)) == text);
  }
  CHECK_THROWS_AS(parse_condition("klass:3"), ParameterError);
  CHECK_THROWS_AS(parse_condition("subset:12"), ParameterError);
}

TEST_CASE("extended precision instantiation agrees with double") {
  using LD = long double;
  const auto ring_ld = GaussianMixture<LD>::default_ring();
  const auto ring = GaussianMixture<double>::default_ring();
  const Vec x = Vec::Constant(2, 0.3);
  const Vector<LD> x_ld = x.cast<LD>();
  const NoiseLevel level = NoiseLevel::at(schedule(), 420);
  const Vector<LD> eps_ld = noise_prediction(ring_ld, level, x_ld, ClassCondition{1});
  const Vec eps = noise_prediction(ring, level, x, ClassCondition{1});
  CHECK(rel_err(eps_ld.cast<double>().eval(), eps) < 1e-13);
}
