#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <variant>
#include <vector>

#include "glab/errors.hpp"
#include "glab/schedule.hpp"
#include "glab/score_model.hpp"

namespace glab {

struct Uncond {
  bool operator==(const Uncond&) const = default;
};
// Classifier-free guidance: the extrapolated noise estimate is used for both
// denoising and renoising.
struct Cfg {
  double omega = 0.0;
  bool operator==(const Cfg&) const = default;
};
// Manifold-constrained guidance: lambda-interpolated denoising, unconditional
// renoising.
struct CfgPP {
  double lambda = 0.0;
  bool operator==(const CfgPP&) const = default;
};
// Cfg with a per-step scale; omega_t[i] applies to the i-th solver step.
struct ScheduledCfg {
  std::vector<double> omega_t;
  bool operator==(const ScheduledCfg&) const = default;
};

using GuidanceMode = std::variant<Uncond, Cfg, CfgPP, ScheduledCfg>;

std::string to_string(const GuidanceMode& mode);

// Parses "uncond", "cfg:<omega>" or "cfgpp:<lambda>". Scheduled modes are
// built from a grid with equivalent_omega_schedule().
GuidanceMode parse_guidance(const std::string& text);

// Rejects out-of-range scales; returns warnings for tolerated extrapolation
// (CfgPP lambda in (1, 2]).
std::vector<std::string> validate_guidance(const GuidanceMode& mode);

// Matched (lambda, omega) pairs that produced the closest images at 50-step
// DDIM on a latent text-to-image model. Specific to that model; kept as
// experiment metadata only.
struct MatchedScale {
  double lambda;
  double omega;
};
inline constexpr std::array<MatchedScale, 5> kMatchedScales{{
    {0.2, 2.0},
    {0.4, 5.0},
    {0.6, 7.5},
    {0.8, 9.0},
    {1.0, 12.5},
}};

/// eps_null + scale (eps_cond - eps_null). Exact at scale 0 and scale 1.
template <typename DerivedN, typename DerivedC>
Vector<typename DerivedN::Scalar> combine_eps(const Eigen::MatrixBase<DerivedN>& eps_null,
                                              const Eigen::MatrixBase<DerivedC>& eps_cond,
                                              typename DerivedN::Scalar scale) {
  using Scalar = typename DerivedN::Scalar;
  if (eps_null.size() != eps_cond.size()) {
    throw ParameterError("combine_eps: dimension mismatch");
  }
  if (scale == Scalar(1)) return eps_cond;
  return eps_null + scale * (eps_cond - eps_null);
}

template <typename Scalar>
Vector<Scalar> guided_tweedie(const Vector<Scalar>& x, const Vector<Scalar>& eps_null,
                              const Vector<Scalar>& eps_cond, Scalar scale, NoiseLevel level) {
  return tweedie<Scalar>(x, combine_eps(eps_null, eps_cond, scale), level);
}

template <typename Scalar>
Vector<Scalar> guided_tweedie(const Vector<Scalar>& x, const Vector<Scalar>& eps_null,
                              const Vector<Scalar>& eps_cond, Scalar scale,
                              const NoiseSchedule& schedule, int t) {
  return guided_tweedie(x, eps_null, eps_cond, scale, NoiseLevel::at(schedule, t));
}

/// How a single solver step uses the two noise predictions.
struct StepGuidance {
  enum class Role { kUncond, kCfg, kCfgPP };
  Role role = Role::kUncond;
  double scale = 0.0;
};

StepGuidance guidance_at_step(const GuidanceMode& mode, std::size_t step);

/// Model outputs at one evaluation point.
template <typename Scalar>
struct Evaluation {
  NoiseLevel level;
  Vector<Scalar> x;
  Vector<Scalar> eps_null;
  Vector<Scalar> eps_cond;
};

template <typename Scalar>
Evaluation<Scalar> evaluate(const GaussianMixture<Scalar>& model, NoiseLevel level,
                            const Vector<Scalar>& x, const Condition& cond) {
  return Evaluation<Scalar>{level, x, noise_prediction(model, level, x, NullCondition{}),
                            noise_prediction(model, level, x, cond)};
}

/// The pieces of a guided step: the leading denoised estimate and the
/// estimates every renoising / history term is built from.
template <typename Scalar>
struct GuidedTerms {
  Vector<Scalar> xhat_null;
  Vector<Scalar> xhat_cond;
  Vector<Scalar> guided_eps;    // eps^omega or eps^lambda
  Vector<Scalar> denoised;      // leading term: xhat^omega / xhat^lambda / xhat_null
  Vector<Scalar> renoise_eps;   // eps^omega for CFG, eps_null for CFG++ and uncond
  Vector<Scalar> renoise_xhat;  // Tweedie estimate matching renoise_eps
};

template <typename Scalar>
GuidedTerms<Scalar> guided_terms(const Evaluation<Scalar>& ev, StepGuidance guidance) {
  GuidedTerms<Scalar> out;
  out.xhat_null = tweedie<Scalar>(ev.x, ev.eps_null, ev.level);
  out.xhat_cond = tweedie<Scalar>(ev.x, ev.eps_cond, ev.level);
  const Scalar scale =
      guidance.role == StepGuidance::Role::kUncond ? Scalar(0) : static_cast<Scalar>(guidance.scale);
  out.guided_eps = combine_eps(ev.eps_null, ev.eps_cond, scale);
  out.denoised = tweedie<Scalar>(ev.x, out.guided_eps, ev.level);
  if (guidance.role == StepGuidance::Role::kCfg) {
    out.renoise_eps = out.guided_eps;
    out.renoise_xhat = out.denoised;
  } else {
    out.renoise_eps = ev.eps_null;
    out.renoise_xhat = out.xhat_null;
  }
  return out;
}

struct ScheduleEquivalence {
  std::vector<double> gamma_t;
  std::vector<double> xi_t;
  std::vector<double> omega_t;
};

// Per-step CFG scale omega_t = -lambda gamma_t / xi_t under which a DDIM-CFG
// step reproduces the DDIM-CFG++(lambda) step, for each consecutive pair
// (t, t_prev) of a sampling grid.
ScheduleEquivalence equivalent_omega_schedule(double lambda, const NoiseSchedule& schedule,
                                              const TimestepGrid& grid);

inline ScheduledCfg scheduled_cfg_for(double lambda, const NoiseSchedule& schedule,
                                      const TimestepGrid& grid) {
  return ScheduledCfg{equivalent_omega_schedule(lambda, schedule, grid).omega_t};
}

}  // namespace glab
