#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "glab/errors.hpp"
#include "glab/guidance.hpp"
#include "glab/schedule.hpp"
#include "glab/score_model.hpp"
#include "glab/solvers.hpp"

namespace glab {

/// One DDIM inversion step from ev.level up to next (ᾱ decreasing).
/// CFG:   x' = sqrt(a') xhat^omega + sqrt(1 - a') eps^omega
/// CFG++: x' = sqrt(a') xhat_null  + sqrt(1 - a') eps^lambda
// The CFG++ Tweedie line uses eps_null as listed in the inversion algorithm,
// even though the inversion formula names the same quantity xhat^lambda.
// With eps_null it is the exact inverse of the CFG++ sampling step whenever
// eps(x_t) = eps(x_next); the xhat^lambda reading is not.
template <typename Scalar>
Vector<Scalar> ddim_invert_step(const Evaluation<Scalar>& ev, StepGuidance guidance, NoiseLevel next) {
  if (!(next.alpha_bar <= ev.level.alpha_bar)) {
    throw ParameterError("inversion step must move to higher noise");
  }
  const auto terms = guided_terms(ev, guidance);
  return static_cast<Scalar>(next.signal()) * terms.renoise_xhat +
         static_cast<Scalar>(next.noise()) * terms.guided_eps;
}

inline void check_inversion_grid(const TimestepGrid& grid) {
  if (grid.direction != GridDirection::kInversion || grid.nfe() < 1 || grid.indices.front() != 0) {
    throw ParameterError("inversion needs an ascending grid starting at t = 0");
  }
}

template <typename Scalar>
struct InversionPath {
  std::vector<Evaluation<Scalar>> evaluations;  // nfe + 1 points, t = 0 first
  std::vector<int> t;
  const Vector<Scalar>& latent() const { return evaluations.back().x; }
};

// Inversion step i mirrors sampling step nfe - 1 - i, so time-varying scales
// line up with the sampler that will regenerate the input.
inline StepGuidance inversion_guidance(const GuidanceMode& mode, std::size_t step, std::size_t nfe) {
  return guidance_at_step(mode, nfe - 1 - step);
}

/// Full inversion keeping every evaluation, including the one at x_T.
template <typename Scalar>
InversionPath<Scalar> invert_path(const Vector<Scalar>& x0, const GaussianMixture<Scalar>& model,
                                  const NoiseSchedule& schedule, const TimestepGrid& grid_up,
                                  const GuidanceMode& guidance, const Condition& cond) {
  check_inversion_grid(grid_up);
  validate_guidance(guidance);
  if (x0.size() != model.dim() || !x0.allFinite()) throw ParameterError("x0 must be finite with model dimension");
  const auto steps = static_cast<std::size_t>(grid_up.nfe());
  InversionPath<Scalar> path;
  path.evaluations.reserve(steps + 1);
  Vector<Scalar> x = x0;
  for (std::size_t i = 0; i <= steps; ++i) {
    const int t = grid_up.indices[i];
    const NoiseLevel level = NoiseLevel::at(schedule, t);
    path.evaluations.push_back(evaluate(model, level, x, cond));
    path.t.push_back(t);
    if (i == steps) break;
    try {
      const NoiseLevel next = NoiseLevel::at(schedule, grid_up.indices[i + 1]);
      if (next.alpha_bar <= 0.0) throw SingularityError("alpha_bar = 0 on the inversion grid");
      x = ddim_invert_step(path.evaluations.back(), inversion_guidance(guidance, i, steps), next);
      if (!x.allFinite()) throw InvariantError("non-finite inverted state");
    } catch (const StepError&) {
      throw;
    } catch (const std::exception& e) {
      throw StepError(e.what(), i);
    }
  }
  return path;
}

template <typename Scalar>
Vector<Scalar> ddim_invert(const Vector<Scalar>& x0, const GaussianMixture<Scalar>& model,
                           const NoiseSchedule& schedule, const TimestepGrid& grid_up,
                           const GuidanceMode& guidance, const Condition& cond) {
  return invert_path(x0, model, schedule, grid_up, guidance, cond).latent();
}

template <typename Scalar>
struct InversionReport {
  Vector<Scalar> x0;
  Vector<Scalar> xT;
  Vector<Scalar> x0_rec;
  double l2_error = 0.0;
  double db = 0.0;
  // ||eps_used(x_next) - eps_used(x_t)||: eps^omega for CFG, eps_null for
  // uncond, lambda * conditional-shift difference for CFG++.
  std::vector<double> per_step_residuals;
  // ||delta_eps_c(x_next) - delta_eps_c(x_t)|| with delta_eps_c = eps_c - eps_null.
  std::vector<double> shift_differences;
  GuidanceMode guidance;
  int nfe = 0;
};

// Peak-to-peak range of the prior used for the dB figure.
template <typename Scalar>
double prior_range(const GaussianMixture<Scalar>& model) {
  double radius = 0.0;
  for (Eigen::Index k = 0; k < model.components(); ++k) {
    radius = std::max(radius, static_cast<double>(model.mean(k).norm()));
  }
  return 2.0 * (radius + 3.0 * static_cast<double>(model.component_std()));
}

template <typename Scalar>
InversionReport<Scalar> roundtrip(const Vector<Scalar>& x0, const GaussianMixture<Scalar>& model,
                                  const NoiseSchedule& schedule, int nfe, const GuidanceMode& guidance,
                                  const Condition& cond) {
  const auto grid_up = uniform_grid(schedule, nfe, GridDirection::kInversion);
  const auto path = invert_path(x0, model, schedule, grid_up, guidance, cond);
  const auto traj =
      sample(model, schedule, grid_up.reversed(), guidance, cond, SolverSpec{}, 0, path.latent());

  InversionReport<Scalar> rep;
  rep.x0 = x0;
  rep.xT = path.latent();
  rep.x0_rec = traj.final_state();
  rep.l2_error = static_cast<double>((rep.x0 - rep.x0_rec).norm());
  const double rmse = rep.l2_error / std::sqrt(static_cast<double>(x0.size()));
  rep.db = rmse > 0.0 ? 20.0 * std::log10(prior_range(model) / rmse) : std::numeric_limits<double>::infinity();
  rep.guidance = guidance;
  rep.nfe = nfe;

  const auto steps = static_cast<std::size_t>(nfe);
  for (std::size_t i = 0; i < steps; ++i) {
    const auto& a = path.evaluations[i];
    const auto& b = path.evaluations[i + 1];
    const Vector<Scalar> shift = (b.eps_cond - b.eps_null) - (a.eps_cond - a.eps_null);
    const double shift_norm = static_cast<double>(shift.norm());
    rep.shift_differences.push_back(shift_norm);
    const StepGuidance g = inversion_guidance(guidance, i, steps);
    const auto s = static_cast<Scalar>(g.scale);
    switch (g.role) {
      case StepGuidance::Role::kUncond:
        rep.per_step_residuals.push_back(static_cast<double>((b.eps_null - a.eps_null).norm()));
        break;
      case StepGuidance::Role::kCfg:
        rep.per_step_residuals.push_back(
            static_cast<double>((combine_eps(b.eps_null, b.eps_cond, s) - combine_eps(a.eps_null, a.eps_cond, s)).norm()));
        break;
      case StepGuidance::Role::kCfgPP:
        rep.per_step_residuals.push_back(g.scale * shift_norm);
        break;
    }
  }
  return rep;
}

template <typename Scalar>
struct EditResult {
  Vector<Scalar> xT;
  Vector<Scalar> x0_edited;
};

/// Invert under cond_src, regenerate under cond_tgt with the same guidance.
template <typename Scalar>
EditResult<Scalar> edit(const Vector<Scalar>& x0, const GaussianMixture<Scalar>& model,
                        const NoiseSchedule& schedule, int nfe, const GuidanceMode& guidance,
                        const Condition& cond_src, const Condition& cond_tgt) {
  if (to_string(cond_src) == to_string(cond_tgt)) {
    throw ParameterError("edit needs different source and target conditions");
  }
  const auto grid_up = uniform_grid(schedule, nfe, GridDirection::kInversion);
  EditResult<Scalar> out;
  out.xT = ddim_invert(x0, model, schedule, grid_up, guidance, cond_src);
  out.x0_edited =
      sample(model, schedule, grid_up.reversed(), guidance, cond_tgt, SolverSpec{}, 0, out.xT).final_state();
  return out;
}

}  // namespace glab
