#pragma once

#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Core>

#include "glab/score_model.hpp"

namespace glab::testing {

using Vec = Vector<double>;
using Mat = Matrix<double>;

inline double rel_err(const Vec& a, const Vec& b) {
  return (a - b).norm() / std::max(1.0, b.norm());
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

// Random mixture in R^dim with K components, weights drawn then normalised.
inline GaussianMixture<double> random_mixture(std::mt19937_64& rng, int dim, int K, double s) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.2, 1.0);
  Mat means(dim, K);
  for (int k = 0; k < K; ++k)
    for (int i = 0; i < dim; ++i) means(i, k) = normal(rng);
  Vec w(K);
  for (int k = 0; k < K; ++k) w[k] = unif(rng);
  w /= w.sum();
  // re-normalise once more so the sum is within an ulp of 1
  w /= w.sum();
  return GaussianMixture<double>(means, s, w);
}

inline Vec random_vec(std::mt19937_64& rng, int dim, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Vec v(dim);
  for (int i = 0; i < dim; ++i) v[i] = normal(rng);
  return v;
}

inline GaussianMixture<double> single_gaussian(int dim, double mean, double s) {
  return GaussianMixture<double>(Mat::Constant(dim, 1, mean), s, Vec::Ones(1));
}

}  // namespace glab::testing
