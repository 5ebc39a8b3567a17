#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <type_traits>
#include <string>
#include <string_view>
#include <vector>

#include "glab/errors.hpp"
#include "glab/guidance.hpp"
#include "glab/rng.hpp"
#include "glab/schedule.hpp"
#include "glab/score_model.hpp"

namespace glab {

enum class SolverKind { kDdim, kEuler, kEulerAncestral, kDpmpp2m, kDpmpp2s };

// Noise injected by the ancestral Euler step: the current level sigma_t
// ("paper") or the variance-consistent sqrt(sigma_prev^2 - sigma_down^2).
enum class AncestralNoise { kPaper, kSigmaUp };

std::string_view to_string(SolverKind kind);
SolverKind parse_solver_kind(std::string_view text);
std::string_view to_string(AncestralNoise noise);
AncestralNoise parse_ancestral_noise(std::string_view text);

struct SolverSpec {
  SolverKind kind = SolverKind::kDdim;
  AncestralNoise ancestral_noise = AncestralNoise::kPaper;
  // Position of the 2S intermediate point on the half-log-SNR axis, in (0, 1).
  double midpoint_ratio = 0.5;

  bool deterministic() const { return kind != SolverKind::kEulerAncestral; }
};

template <typename Scalar>
struct StepRecord {
  int t = 0;
  double alpha_bar = 1.0;
  Vector<Scalar> x;
  Vector<Scalar> eps_null;
  Vector<Scalar> eps_cond;
  Vector<Scalar> xhat_null;
  Vector<Scalar> xhat_cond;
  Vector<Scalar> xhat_guided;
  double scale = 0.0;  // guidance scale in force at this step (0 for uncond)
};

template <typename Scalar>
struct Trajectory {
  std::vector<StepRecord<Scalar>> records;  // t = T first, t = 0 last
  GuidanceMode guidance;
  SolverSpec solver;
  Condition condition;
  std::uint64_t seed = 0;

  const Vector<Scalar>& final_state() const { return records.back().x; }
};

namespace detail {

inline void check_descending(const NoiseSchedule& schedule, int t, int t_prev) {
  if (!(t > t_prev) || t_prev < 0 || t > schedule.train_steps()) {
    throw ParameterError("step requires T >= t > t_prev >= 0; got t = " + std::to_string(t) +
                         ", t_prev = " + std::to_string(t_prev));
  }
}

inline void check_level(const NoiseLevel& level, const NoiseSchedule& schedule, int t) {
  if (level.alpha_bar != schedule.alpha_bar(t)) {
    throw ParameterError("evaluation was not taken at timestep " + std::to_string(t));
  }
}

}  // namespace detail

// ---------------------------------------------------------------- DDIM

/// x_prev = sqrt(a_prev) xhat_guided + sqrt(1 - a_prev) eps_renoise.
template <typename Scalar>
Vector<Scalar> ddim_step(const Evaluation<Scalar>& ev, StepGuidance guidance, NoiseLevel prev) {
  const auto terms = guided_terms(ev, guidance);
  return static_cast<Scalar>(prev.signal()) * terms.denoised +
         static_cast<Scalar>(prev.noise()) * terms.renoise_eps;
}

template <typename Scalar>
Vector<Scalar> ddim_step(const Evaluation<Scalar>& ev, StepGuidance guidance,
                         const NoiseSchedule& schedule, int t, int t_prev) {
  detail::check_descending(schedule, t, t_prev);
  detail::check_level(ev.level, schedule, t);
  return ddim_step(ev, guidance, NoiseLevel::at(schedule, t_prev));
}

// ---------------------------------------------------------------- Euler

/// Euler on the VE state z = x / sqrt(a):
/// z_prev = denoised + sigma_prev (z - renoise_xhat) / sigma.
template <typename Scalar>
Vector<Scalar> euler_step(const Evaluation<Scalar>& ev, StepGuidance guidance, NoiseLevel prev) {
  const double sigma = ev.level.sigma();
  const double sigma_prev = prev.sigma();
  if (sigma == 0.0) throw SingularityError("Euler step from sigma = 0");
  const auto terms = guided_terms(ev, guidance);
  const Vector<Scalar> z = ev.x / static_cast<Scalar>(ev.level.signal());
  const Vector<Scalar> z_prev =
      terms.denoised + static_cast<Scalar>(sigma_prev / sigma) * (z - terms.renoise_xhat);
  return static_cast<Scalar>(prev.signal()) * z_prev;
}

template <typename Scalar>
Vector<Scalar> euler_step(const Evaluation<Scalar>& ev, StepGuidance guidance,
                          const NoiseSchedule& schedule, int t, int t_prev) {
  if (t_prev > t || t_prev < 0) {
    throw ParameterError("Euler step requires t >= t_prev >= 0");
  }
  detail::check_level(ev.level, schedule, t);
  return euler_step(ev, guidance, NoiseLevel::at(schedule, t_prev));
}

// ---------------------------------------------------------------- Euler ancestral

/// Ancestral Euler: a deterministic Euler move down to sigma_down followed by
/// fresh noise. sigma_down <= sigma_prev < sigma.
template <typename Scalar>
Vector<Scalar> euler_ancestral_step(const Evaluation<Scalar>& ev, StepGuidance guidance,
                                    double sigma_down, NoiseLevel prev, AncestralNoise policy,
                                    const Vector<Scalar>& noise) {
  const double sigma = ev.level.sigma();
  const double sigma_prev = prev.sigma();
  if (sigma == 0.0) throw SingularityError("ancestral step from sigma = 0");
  if (!(sigma_prev < sigma) || !(sigma_down >= 0.0) || sigma_down > sigma_prev) {
    throw ParameterError("ancestral step requires 0 <= sigma_down <= sigma_prev < sigma");
  }
  if (noise.size() != ev.x.size()) throw ParameterError("noise dimension mismatch");
  const auto terms = guided_terms(ev, guidance);
  const Vector<Scalar> z = ev.x / static_cast<Scalar>(ev.level.signal());
  Vector<Scalar> z_prev =
      terms.denoised + static_cast<Scalar>(sigma_down / sigma) * (z - terms.renoise_xhat);
  // The terminal step (sigma_prev == 0) never receives noise.
  if (sigma_prev > 0.0) {
    const double noise_std = policy == AncestralNoise::kPaper
                                 ? sigma
                                 : std::sqrt(sigma_prev * sigma_prev - sigma_down * sigma_down);
    z_prev += static_cast<Scalar>(noise_std) * noise;
  }
  return static_cast<Scalar>(prev.signal()) * z_prev;
}

template <typename Scalar>
Vector<Scalar> euler_ancestral_step(const Evaluation<Scalar>& ev, StepGuidance guidance,
                                    double sigma_down, NoiseLevel prev, AncestralNoise policy,
                                    Engine* engine) {
  if (engine == nullptr) throw ParameterError("ancestral step needs a random stream");
  const Vector<Scalar> noise = standard_normal<Scalar>(*engine, ev.x.size());
  return euler_ancestral_step(ev, guidance, sigma_down, prev, policy, noise);
}

// Index form: t > t_prev >= t_down, all schedule timesteps.
template <typename Scalar>
Vector<Scalar> euler_ancestral_step(const Evaluation<Scalar>& ev, StepGuidance guidance,
                                    const NoiseSchedule& schedule, int t, int t_down, int t_prev,
                                    AncestralNoise policy, Engine* engine) {
  detail::check_descending(schedule, t, t_prev);
  detail::check_level(ev.level, schedule, t);
  if (t_down > t_prev || t_down < 0) throw ParameterError("ancestral step needs t_prev >= t_down >= 0");
  return euler_ancestral_step(ev, guidance, schedule.sigma(t_down),
                              NoiseLevel::at(schedule, t_prev), policy, engine);
}

// k-diffusion placement of the intermediate level: sigma_prev^2 / sigma.
inline double ancestral_sigma_down(double sigma, double sigma_prev) {
  return sigma_prev * sigma_prev / sigma;
}

// ---------------------------------------------------------------- DPM-Solver++

// Solver time is -log(sigma), so sigma = exp(-time) and h = log(sigma / sigma_prev).
inline double log_snr_step(double sigma, double sigma_prev) {
  if (!(sigma > 0.0)) throw SingularityError("exponential integrator step from sigma = 0");
  if (sigma_prev > sigma) {
    throw ParameterError("solver times must be monotone (sigma_prev > sigma)");
  }
  if (sigma_prev == 0.0) return std::numeric_limits<double>::infinity();
  return std::log(sigma / sigma_prev);
}

template <typename Scalar>
struct DpmSolverState {
  std::optional<Vector<Scalar>> previous_denoised;  // history term of the previous point
  double previous_h = 0.0;
  // Last 2S intermediate point and ratio (diagnostic).
  std::optional<Vector<Scalar>> midpoint;
  double h = 0.0;
  double r = 0.0;
};

/// DPM-Solver++(2M) on the VE state. The guided estimate enters only as the
/// leading denoised term; history and renoising use renoise_xhat (the
/// unconditional estimate under CFG++, the guided one under CFG).
template <typename Scalar>
Vector<Scalar> dpmpp2m_step(DpmSolverState<Scalar>& state, const Evaluation<Scalar>& ev,
                            StepGuidance guidance, NoiseLevel prev) {
  const double sigma = ev.level.sigma();
  const double sigma_prev = prev.sigma();
  const double h = log_snr_step(sigma, sigma_prev);
  const auto terms = guided_terms(ev, guidance);
  const Vector<Scalar> z = ev.x / static_cast<Scalar>(ev.level.signal());
  Vector<Scalar> z_prev;
  if (std::isinf(h)) {
    z_prev = terms.denoised;
  } else {
    const Scalar decay = static_cast<Scalar>(std::exp(-h));
    z_prev = terms.denoised - decay * terms.renoise_xhat + decay * z;
    if (state.previous_denoised && h > 0.0 && state.previous_h > 0.0) {
      const double r = state.previous_h / h;
      const Scalar coeff = static_cast<Scalar>(-std::expm1(-h) / (2.0 * r));
      z_prev += coeff * (terms.renoise_xhat - *state.previous_denoised);
      state.r = r;
    }
  }
  state.previous_denoised = terms.renoise_xhat;
  state.previous_h = h;
  state.h = h;
  return static_cast<Scalar>(prev.signal()) * z_prev;
}

template <typename Scalar>
using Evaluator = std::function<Evaluation<Scalar>(NoiseLevel, const Vector<Scalar>&)>;

template <typename Scalar>
Evaluator<Scalar> make_evaluator(const GaussianMixture<Scalar>& model, const Condition& cond) {
  return [&model, cond](NoiseLevel level, const Vector<Scalar>& x) {
    return evaluate(model, level, x, cond);
  };
}

/// DPM-Solver++(2S) with the intermediate point at ratio r of the step on the
/// half-log-SNR axis. The conditional estimate appears only through the
/// guided denoised value at the intermediate point.
template <typename Scalar>
Vector<Scalar> dpmpp2s_step(const Evaluation<Scalar>& ev, StepGuidance guidance, NoiseLevel prev,
                            double r, const Evaluator<Scalar>& evaluator,
                            DpmSolverState<Scalar>* state = nullptr) {
  if (!(r > 0.0 && r < 1.0)) throw ParameterError("2S ratio r must lie in (0, 1)");
  const double sigma = ev.level.sigma();
  const double sigma_prev = prev.sigma();
  const double h = log_snr_step(sigma, sigma_prev);
  const auto terms = guided_terms(ev, guidance);
  const Vector<Scalar> z = ev.x / static_cast<Scalar>(ev.level.signal());
  if (std::isinf(h)) {
    return static_cast<Scalar>(prev.signal()) * terms.denoised;
  }
  if (h == 0.0) {
    return static_cast<Scalar>(prev.signal()) * (z + terms.denoised - terms.renoise_xhat);
  }
  const Scalar mid_decay = static_cast<Scalar>(std::exp(-r * h));
  const Vector<Scalar> u = mid_decay * z + (Scalar(1) - mid_decay) * terms.renoise_xhat;
  const NoiseLevel mid_level = NoiseLevel::from_sigma(sigma * std::exp(-r * h));
  const Vector<Scalar> u_vp = static_cast<Scalar>(mid_level.signal()) * u;
  const auto mid_terms = guided_terms(evaluator(mid_level, u_vp), guidance);

  const Scalar decay = static_cast<Scalar>(std::exp(-h));
  const Scalar coeff = static_cast<Scalar>(-std::expm1(-h) / (2.0 * r));
  const Vector<Scalar> z_prev = terms.renoise_xhat - decay * terms.renoise_xhat +
                                coeff * (mid_terms.denoised - terms.renoise_xhat) + decay * z;
  if (state != nullptr) {
    state->midpoint = u;
    state->h = h;
    state->r = r;
  }
  return static_cast<Scalar>(prev.signal()) * z_prev;
}

// Index form: r = (s_mid - t) / (t_prev - t) on the solver time axis.
template <typename Scalar>
Vector<Scalar> dpmpp2s_step(const Evaluation<Scalar>& ev, StepGuidance guidance,
                            const NoiseSchedule& schedule, int t, double s_mid_time, int t_prev,
                            const Evaluator<Scalar>& evaluator) {
  detail::check_descending(schedule, t, t_prev);
  detail::check_level(ev.level, schedule, t);
  const double t_time = schedule.half_log_snr(t);
  const double prev_time = schedule.half_log_snr(t_prev);
  const double r = (s_mid_time - t_time) / (prev_time - t_time);
  return dpmpp2s_step(ev, guidance, NoiseLevel::at(schedule, t_prev), r, evaluator);
}

// ---------------------------------------------------------------- full loop

template <typename Scalar>
StepRecord<Scalar> make_record(int t, const Evaluation<Scalar>& ev, StepGuidance guidance) {
  auto terms = guided_terms(ev, guidance);
  StepRecord<Scalar> rec;
  rec.t = t;
  rec.alpha_bar = ev.level.alpha_bar;
  rec.x = ev.x;
  rec.eps_null = ev.eps_null;
  rec.eps_cond = ev.eps_cond;
  rec.xhat_null = std::move(terms.xhat_null);
  rec.xhat_cond = std::move(terms.xhat_cond);
  rec.xhat_guided = std::move(terms.denoised);
  rec.scale = guidance.role == StepGuidance::Role::kUncond ? 0.0 : guidance.scale;
  return rec;
}

struct SampleOptions {
  std::uint64_t run = 0;  // run index within a sweep; part of the noise key
};

/// Reverse sampling over a descending grid. x_T ~ N(0, I) from the seed when
/// not supplied. Two model evaluations per grid point (null and conditional).
template <typename Scalar>
Trajectory<Scalar> sample(const GaussianMixture<Scalar>& model, const NoiseSchedule& schedule,
                          const TimestepGrid& grid, const GuidanceMode& guidance,
                          const Condition& cond, const SolverSpec& solver, std::uint64_t seed,
                          std::optional<std::type_identity_t<Vector<Scalar>>> x_T = std::nullopt,
                          SampleOptions options = {}) {
  if (grid.direction != GridDirection::kSampling || grid.nfe() < 1 ||
      grid.indices.back() != 0) {
    throw ParameterError("sample needs a descending grid ending at t = 0");
  }
  validate_guidance(guidance);
  component_mask(cond, model.components());

  Trajectory<Scalar> traj;
  traj.guidance = guidance;
  traj.solver = solver;
  traj.condition = cond;
  traj.seed = seed;
  traj.records.reserve(grid.indices.size());

  Vector<Scalar> x;
  if (x_T) {
    if (x_T->size() != model.dim()) throw ParameterError("x_T dimension mismatch");
    x = *x_T;
  } else {
    Engine init = make_engine({seed, options.run, kInitialNoiseStep});
    x = standard_normal<Scalar>(init, model.dim());
  }

  const auto evaluator = make_evaluator(model, cond);
  DpmSolverState<Scalar> dpm;
  const auto steps = static_cast<std::size_t>(grid.nfe());
  for (std::size_t i = 0; i < steps; ++i) {
    const int t = grid.indices[i];
    const int t_prev = grid.indices[i + 1];
    try {
      const NoiseLevel level = NoiseLevel::at(schedule, t);
      const NoiseLevel prev = NoiseLevel::at(schedule, t_prev);
      const StepGuidance g = guidance_at_step(guidance, i);
      const Evaluation<Scalar> ev = evaluator(level, x);
      traj.records.push_back(make_record(t, ev, g));
      switch (solver.kind) {
        case SolverKind::kDdim:
          x = ddim_step(ev, g, prev);
          break;
        case SolverKind::kEuler:
          x = euler_step(ev, g, prev);
          break;
        case SolverKind::kEulerAncestral: {
          Engine engine = make_engine({seed, options.run, i});
          const double sigma_down = ancestral_sigma_down(level.sigma(), prev.sigma());
          x = euler_ancestral_step(ev, g, sigma_down, prev, solver.ancestral_noise, &engine);
          break;
        }
        case SolverKind::kDpmpp2m:
          x = dpmpp2m_step(dpm, ev, g, prev);
          break;
        case SolverKind::kDpmpp2s:
          x = dpmpp2s_step(ev, g, prev, solver.midpoint_ratio, evaluator, &dpm);
          break;
      }
      if (!x.allFinite()) throw InvariantError("non-finite state");
    } catch (const StepError&) {
      throw;
    } catch (const std::exception& e) {
      throw StepError(e.what(), i);
    }
  }
  const StepGuidance last = guidance_at_step(guidance, steps - 1);
  traj.records.push_back(make_record(0, evaluator(NoiseLevel::at(schedule, 0), x), last));
  return traj;
}

}  // namespace glab
