#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "glab/errors.hpp"
#include "glab/rng.hpp"
#include "glab/schedule.hpp"

namespace glab {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Noise level of a VP marginal, identified by alpha_bar in (0, 1].
///
/// Step functions work on continuous levels so that midpoint evaluations of
/// the exponential integrators need not land on a schedule index.
struct NoiseLevel {
  double alpha_bar = 1.0;

  static NoiseLevel at(const NoiseSchedule& schedule, int t) {
    return NoiseLevel{schedule.alpha_bar(t)};
  }
  static NoiseLevel from_sigma(double sigma) {
    return NoiseLevel{alpha_bar_from_sigma(sigma)};
  }
  double sigma() const { return sigma_from_alpha_bar(alpha_bar); }
  double signal() const { return std::sqrt(alpha_bar); }
  double noise() const { return std::sqrt(1.0 - alpha_bar); }
};

struct NullCondition {
  bool operator==(const NullCondition&) const = default;
};
struct ClassCondition {
  int k = 0;
  bool operator==(const ClassCondition&) const = default;
};
struct SubsetCondition {
  std::vector<bool> mask;
  bool operator==(const SubsetCondition&) const = default;
};

// Conditioning signal c; NullCondition plays the role of the empty prompt.
using Condition = std::variant<NullCondition, ClassCondition, SubsetCondition>;

std::string to_string(const Condition& cond);
Condition parse_condition(const std::string& text);

/// Isotropic Gaussian mixture prior sum_k w_k N(mu_k, s^2 I) on R^d.
///
/// Under VP noising x_t = sqrt(a) x_0 + sqrt(1 - a) n each component stays
/// Gaussian, N(sqrt(a) mu_k, (a s^2 + 1 - a) I), so every score, posterior
/// mean and Jacobian below is closed form.
template <typename Scalar = double>
class GaussianMixture {
 public:
  GaussianMixture(Matrix<Scalar> means, Scalar component_std, Vector<Scalar> weights)
      : means_(std::move(means)), std_(component_std), weights_(std::move(weights)) {
    using std::abs;
    if (means_.cols() < 1 || means_.rows() < 1) {
      throw ParameterError("mixture needs at least one component of positive dimension");
    }
    if (weights_.size() != means_.cols()) {
      throw ParameterError("one weight per component required");
    }
    if (!(std_ > Scalar(0))) throw ParameterError("component_std must be positive");
    if ((weights_.array() <= Scalar(0)).any()) {
      throw ParameterError("weights must be positive");
    }
    if (abs(weights_.sum() - Scalar(1)) > Scalar(1e-12)) {
      throw ParameterError("weights must sum to 1");
    }
    if (!means_.allFinite()) throw ParameterError("means must be finite");
  }

  // K means equally spaced on a circle in R^2, uniform weights.
  static GaussianMixture ring(int components, Scalar radius, Scalar component_std) {
    if (components < 1) throw ParameterError("ring needs at least one component");
    Matrix<Scalar> means(2, components);
    for (int k = 0; k < components; ++k) {
      const Scalar angle = Scalar(2) * Scalar(std::numbers::pi) * Scalar(k) / Scalar(components);
      using std::cos;
      using std::sin;
      means(0, k) = radius * cos(angle);
      means(1, k) = radius * sin(angle);
    }
    return GaussianMixture(std::move(means), component_std,
                           Vector<Scalar>::Constant(components, Scalar(1) / Scalar(components)));
  }

  // The default toy prior: 8 modes on the unit circle, s = 0.1.
  static GaussianMixture default_ring() { return ring(8, Scalar(1), Scalar(0.1)); }

  Eigen::Index dim() const { return means_.rows(); }
  Eigen::Index components() const { return means_.cols(); }
  const Matrix<Scalar>& means() const { return means_; }
  auto mean(Eigen::Index k) const { return means_.col(k); }
  Scalar component_std() const { return std_; }
  const Vector<Scalar>& weights() const { return weights_; }

 private:
  Matrix<Scalar> means_;  // d x K
  Scalar std_;
  Vector<Scalar> weights_;
};

// Components selected by a condition; throws on an invalid or empty selection.
inline std::vector<bool> component_mask(const Condition& cond, Eigen::Index components) {
  std::vector<bool> mask(static_cast<std::size_t>(components), false);
  if (std::holds_alternative<NullCondition>(cond)) {
    std::fill(mask.begin(), mask.end(), true);
  } else if (const auto* c = std::get_if<ClassCondition>(&cond)) {
    if (c->k < 0 || c->k >= components) {
      throw ParameterError("class index " + std::to_string(c->k) + " outside [0, " +
                           std::to_string(components) + ")");
    }
    mask[static_cast<std::size_t>(c->k)] = true;
  } else {
    const auto& subset = std::get<SubsetCondition>(cond).mask;
    if (static_cast<Eigen::Index>(subset.size()) != components) {
      throw ParameterError("subset mask length must equal the number of components");
    }
    if (std::none_of(subset.begin(), subset.end(), [](bool b) { return b; })) {
      throw ParameterError("subset condition selects no component");
    }
    mask = subset;
  }
  return mask;
}

/// Per-point quantities of the noisy marginal restricted to a condition.
template <typename Scalar>
struct MarginalTerms {
  Vector<Scalar> responsibilities;  // zero on unselected components
  Vector<Scalar> mean_of_means;     // sum_k r_k mu_k
  Scalar log_density = Scalar(0);
  Scalar variance = Scalar(1);      // a s^2 + 1 - a
};

template <typename Scalar, typename Derived>
MarginalTerms<Scalar> marginal_terms(const GaussianMixture<Scalar>& model, NoiseLevel level,
                                     const Eigen::MatrixBase<Derived>& x, const Condition& cond) {
  using std::exp;
  using std::log;
  using std::sqrt;
  if (x.size() != model.dim()) throw ParameterError("state dimension does not match model");
  if (!x.allFinite()) throw ParameterError("state must be finite");
  if (!(level.alpha_bar > 0.0) || level.alpha_bar > 1.0) {
    throw SingularityError("alpha_bar must lie in (0, 1]");
  }
  const auto mask = component_mask(cond, model.components());
  const Scalar a = static_cast<Scalar>(level.alpha_bar);
  const Scalar s2 = model.component_std() * model.component_std();
  const Scalar var = a * s2 + (Scalar(1) - a);
  const Scalar signal = sqrt(a);
  const Eigen::Index K = model.components();

  Scalar selected_weight(0);
  for (Eigen::Index k = 0; k < K; ++k) {
    if (mask[static_cast<std::size_t>(k)]) selected_weight += model.weights()[k];
  }
  const Scalar log_norm = log(selected_weight);

  // Per-component log densities, max-shifted before exponentiation; far from
  // all modes this degrades to one-hot responsibilities on the nearest one.
  Vector<Scalar> log_comp = Vector<Scalar>::Constant(K, -std::numeric_limits<Scalar>::infinity());
  Scalar max_log = -std::numeric_limits<Scalar>::infinity();
  const Scalar log_gauss_const =
      Scalar(-0.5) * Scalar(model.dim()) * log(Scalar(2) * Scalar(std::numbers::pi) * var);
  for (Eigen::Index k = 0; k < K; ++k) {
    if (!mask[static_cast<std::size_t>(k)]) continue;
    const Scalar sq = (x - signal * model.mean(k)).squaredNorm();
    log_comp[k] = log(model.weights()[k]) - log_norm + log_gauss_const - sq / (Scalar(2) * var);
    max_log = std::max(max_log, log_comp[k]);
  }
  MarginalTerms<Scalar> out;
  out.variance = var;
  out.responsibilities = Vector<Scalar>::Zero(K);
  Scalar total(0);
  for (Eigen::Index k = 0; k < K; ++k) {
    if (!mask[static_cast<std::size_t>(k)]) continue;
    out.responsibilities[k] = exp(log_comp[k] - max_log);
    total += out.responsibilities[k];
  }
  out.responsibilities /= total;
  out.log_density = max_log + log(total);
  out.mean_of_means = model.means() * out.responsibilities;
  return out;
}

/// Noise prediction eps = -sqrt(1 - a) grad log p_a(x | cond) at a continuous level.
template <typename Scalar, typename Derived>
Vector<Scalar> noise_prediction(const GaussianMixture<Scalar>& model, NoiseLevel level,
                                const Eigen::MatrixBase<Derived>& x, const Condition& cond) {
  const auto terms = marginal_terms(model, level, x, cond);
  const Scalar a = static_cast<Scalar>(level.alpha_bar);
  using std::sqrt;
  // grad log p = -(x - sqrt(a) mean_of_means) / var
  return (sqrt(Scalar(1) - a) / terms.variance) * (x - sqrt(a) * terms.mean_of_means);
}

template <typename Scalar>
struct EpsPrediction {
  Vector<Scalar> eps;
  int t = 0;
  Condition condition;
};

template <typename Scalar, typename Derived>
EpsPrediction<Scalar> eps_pred(const GaussianMixture<Scalar>& model, const NoiseSchedule& schedule,
                               const Eigen::MatrixBase<Derived>& x, int t, const Condition& cond) {
  return EpsPrediction<Scalar>{noise_prediction(model, NoiseLevel::at(schedule, t), x, cond), t,
                               cond};
}

/// Tweedie denoising (x - sqrt(1 - a) eps) / sqrt(a).
template <typename Scalar, typename DerivedX, typename DerivedE>
Vector<Scalar> tweedie(const Eigen::MatrixBase<DerivedX>& x, const Eigen::MatrixBase<DerivedE>& eps,
                       NoiseLevel level) {
  if (!(level.alpha_bar > 0.0)) throw SingularityError("Tweedie estimate needs alpha_bar > 0");
  const Scalar noise = static_cast<Scalar>(level.noise());
  const Scalar signal = static_cast<Scalar>(level.signal());
  return (x - noise * eps) / signal;
}

template <typename Scalar, typename Derived>
Vector<Scalar> posterior_mean(const GaussianMixture<Scalar>& model, const NoiseSchedule& schedule,
                              const Eigen::MatrixBase<Derived>& x, int t, const Condition& cond) {
  const NoiseLevel level = NoiseLevel::at(schedule, t);
  return tweedie<Scalar>(x, noise_prediction(model, level, x, cond), level);
}

// E[x_0 | x_t, cond] assembled from responsibilities and per-component
// conjugate posterior means mu_k + (s^2 sqrt(a) / var)(x - sqrt(a) mu_k).
template <typename Scalar, typename Derived>
Vector<Scalar> posterior_mean_direct(const GaussianMixture<Scalar>& model, NoiseLevel level,
                                     const Eigen::MatrixBase<Derived>& x, const Condition& cond) {
  const auto terms = marginal_terms(model, level, x, cond);
  using std::sqrt;
  const Scalar a = static_cast<Scalar>(level.alpha_bar);
  const Scalar s2 = model.component_std() * model.component_std();
  const Scalar gain = s2 * sqrt(a) / terms.variance;
  Vector<Scalar> out = Vector<Scalar>::Zero(model.dim());
  for (Eigen::Index k = 0; k < model.components(); ++k) {
    const Scalar r = terms.responsibilities[k];
    if (r == Scalar(0)) continue;
    out += r * (model.mean(k) + gain * (x - sqrt(a) * model.mean(k)));
  }
  return out;
}

/// Jacobian of the posterior mean with respect to x_t (symmetric):
/// (sqrt(a) s^2 / var) I + ((1 - a) sqrt(a) / var^2) Cov_r(mu).
template <typename Scalar, typename Derived>
Matrix<Scalar> posterior_mean_jacobian(const GaussianMixture<Scalar>& model, NoiseLevel level,
                                       const Eigen::MatrixBase<Derived>& x, const Condition& cond) {
  const auto terms = marginal_terms(model, level, x, cond);
  using std::sqrt;
  const Scalar a = static_cast<Scalar>(level.alpha_bar);
  const Scalar s2 = model.component_std() * model.component_std();
  const Scalar var = terms.variance;
  const Eigen::Index d = model.dim();
  Matrix<Scalar> cov = Matrix<Scalar>::Zero(d, d);
  for (Eigen::Index k = 0; k < model.components(); ++k) {
    const Scalar r = terms.responsibilities[k];
    if (r == Scalar(0)) continue;
    const Vector<Scalar> centered = model.mean(k) - terms.mean_of_means;
    cov.noalias() += r * centered * centered.transpose();
  }
  Matrix<Scalar> jac = ((sqrt(a) * s2) / var) * Matrix<Scalar>::Identity(d, d);
  jac += ((Scalar(1) - a) * sqrt(a) / (var * var)) * cov;
  return jac;
}

template <typename Scalar, typename Derived>
Scalar log_density(const GaussianMixture<Scalar>& model, const NoiseSchedule& schedule,
                   const Eigen::MatrixBase<Derived>& x, int t, const Condition& cond) {
  return marginal_terms(model, NoiseLevel::at(schedule, t), x, cond).log_density;
}

template <typename Scalar, typename Derived>
Scalar log_density(const GaussianMixture<Scalar>& model, NoiseLevel level,
                   const Eigen::MatrixBase<Derived>& x, const Condition& cond) {
  return marginal_terms(model, level, x, cond).log_density;
}

// Central-difference estimate of eps; independent of the closed-form score.
template <typename Scalar, typename Derived>
Vector<Scalar> finite_diff_eps(const GaussianMixture<Scalar>& model, const NoiseSchedule& schedule,
                               const Eigen::MatrixBase<Derived>& x, int t, const Condition& cond,
                               Scalar h) {
  if (!(h > Scalar(0))) throw ParameterError("finite-difference step must be positive");
  const NoiseLevel level = NoiseLevel::at(schedule, t);
  Vector<Scalar> probe = x;
  Vector<Scalar> grad(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const Scalar up = log_density(model, level, probe, cond);
    probe[i] = x[i] - h;
    const Scalar down = log_density(model, level, probe, cond);
    probe[i] = x[i];
    grad[i] = (up - down) / (Scalar(2) * h);
  }
  using std::sqrt;
  return -sqrt(Scalar(1) - static_cast<Scalar>(level.alpha_bar)) * grad;
}

template <typename Scalar>
Vector<Scalar> sample_prior(const GaussianMixture<Scalar>& model, const Condition& cond,
                            Engine& engine) {
  const auto mask = component_mask(cond, model.components());
  std::vector<double> weights(static_cast<std::size_t>(model.components()));
  for (Eigen::Index k = 0; k < model.components(); ++k) {
    weights[static_cast<std::size_t>(k)] =
        mask[static_cast<std::size_t>(k)] ? static_cast<double>(model.weights()[k]) : 0.0;
  }
  std::discrete_distribution<Eigen::Index> pick(weights.begin(), weights.end());
  const Eigen::Index k = pick(engine);
  return model.mean(k) + model.component_std() * standard_normal<Scalar>(engine, model.dim());
}

template <typename Scalar, typename Derived>
Eigen::Index nearest_component(const GaussianMixture<Scalar>& model,
                               const Eigen::MatrixBase<Derived>& x) {
  Eigen::Index best = 0;
  (model.means().colwise() - x).colwise().squaredNorm().minCoeff(&best);
  return best;
}

}  // namespace glab
