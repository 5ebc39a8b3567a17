#include "glab/schedule.hpp"

#include <algorithm>
#include <limits>
#include <numbers>

#include "glab/errors.hpp"

namespace glab {

std::string_view to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::kVpLinear:
      return "vp-linear";
    case ScheduleKind::kVpCosine:
      return "vp-cosine";
  }
  return "unknown";
}

ScheduleKind parse_schedule_kind(std::string_view text) {
  if (text == "vp-linear") return ScheduleKind::kVpLinear;
  if (text == "vp-cosine") return ScheduleKind::kVpCosine;
  throw ParameterError("unknown schedule kind '" + std::string(text) + "'");
}

NoiseSchedule::NoiseSchedule(ScheduleKind kind, int train_steps,
                             ScheduleParams params,
                             std::vector<double> alpha_bar)
    : kind_(kind),
      train_steps_(train_steps),
      params_(params),
      alpha_bar_(std::move(alpha_bar)) {
  if (train_steps_ < 1 ||
      alpha_bar_.size() != static_cast<std::size_t>(train_steps_) + 1) {
    throw ParameterError("alpha_bar must hold T + 1 values");
  }
  if (alpha_bar_.front() != 1.0) {
    throw ParameterError("alpha_bar(0) must equal 1");
  }
  for (int t = 1; t <= train_steps_; ++t) {
    if (!(alpha_bar_[t] > 0.0) || !(alpha_bar_[t] < alpha_bar_[t - 1])) {
      throw ParameterError("alpha_bar must be positive and strictly decreasing (t = " +
                           std::to_string(t) + ")");
    }
  }
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > train_steps_) {
    throw IndexError("timestep " + std::to_string(t) + " outside [0, " +
                     std::to_string(train_steps_) + "]");
  }
  return alpha_bar_[static_cast<std::size_t>(t)];
}

double NoiseSchedule::sigma(int t) const {
  return sigma_from_alpha_bar(alpha_bar(t));
}

double NoiseSchedule::half_log_snr(int t) const {
  const double s = sigma(t);
  if (s == 0.0) return std::numeric_limits<double>::infinity();
  return -std::log(s);
}

namespace {

std::vector<double> linear_alpha_bar(int steps, ScheduleParams params) {
  std::vector<double> alpha_bar(static_cast<std::size_t>(steps) + 1);
  alpha_bar[0] = 1.0;
  double prod = 1.0;
  for (int s = 1; s <= steps; ++s) {
    // betas linearly spaced over [beta_min, beta_max]; a single step takes beta_min.
    const double frac = steps == 1 ? 0.0 : static_cast<double>(s - 1) / (steps - 1);
    const double beta = params.beta_min + frac * (params.beta_max - params.beta_min);
    prod *= 1.0 - beta;
    alpha_bar[static_cast<std::size_t>(s)] = prod;
  }
  return alpha_bar;
}

// Squared-cosine schedule, mapped affinely onto [floor, 1] so alpha_bar(T)
// equals the floor while staying strictly decreasing.
std::vector<double> cosine_alpha_bar(int steps) {
  const auto f = [steps](int t) {
    const double u = (static_cast<double>(t) / steps + kCosineOffset) /
                     (1.0 + kCosineOffset) * std::numbers::pi / 2.0;
    const double c = std::cos(u);
    return c * c;
  };
  const double f0 = f(0);
  std::vector<double> alpha_bar(static_cast<std::size_t>(steps) + 1);
  alpha_bar[0] = 1.0;
  for (int t = 1; t <= steps; ++t) {
    const double raw = std::clamp(f(t) / f0, 0.0, 1.0);
    alpha_bar[static_cast<std::size_t>(t)] =
        kCosineAlphaBarFloor + (1.0 - kCosineAlphaBarFloor) * raw;
  }
  return alpha_bar;
}

}  // namespace

NoiseSchedule build_schedule(ScheduleKind kind, int train_steps,
                             ScheduleParams params) {
  if (train_steps < 1) {
    throw ParameterError("train_steps must be >= 1");
  }
  if (kind == ScheduleKind::kVpLinear) {
    if (!(params.beta_min > 0.0) || !(params.beta_max < 1.0) ||
        params.beta_min > params.beta_max) {
      throw ParameterError("vp-linear requires 0 < beta_min <= beta_max < 1");
    }
    return NoiseSchedule(kind, train_steps, params,
                         linear_alpha_bar(train_steps, params));
  }
  return NoiseSchedule(kind, train_steps, params, cosine_alpha_bar(train_steps));
}

NoiseSchedule default_schedule() {
  return build_schedule(ScheduleKind::kVpLinear, 1000, ScheduleParams{});
}

double sigma_ve(const NoiseSchedule& schedule, int t) {
  return schedule.sigma(t);
}

TimestepGrid TimestepGrid::reversed() const {
  TimestepGrid out;
  out.indices.assign(indices.rbegin(), indices.rend());
  out.direction = direction == GridDirection::kSampling ? GridDirection::kInversion
                                                        : GridDirection::kSampling;
  return out;
}

TimestepGrid uniform_grid(const NoiseSchedule& schedule, int nfe,
                          GridDirection direction) {
  const int T = schedule.train_steps();
  if (nfe < 1 || nfe > T) {
    throw ParameterError("nfe must lie in [1, T]; got " + std::to_string(nfe));
  }
  TimestepGrid grid;
  grid.direction = direction;
  grid.indices.reserve(static_cast<std::size_t>(nfe) + 1);
  for (long i = 0; i <= nfe; ++i) {
    // round(i * T / nfe) in integer arithmetic; distinct since T / nfe >= 1.
    grid.indices.push_back(static_cast<int>((2 * i * T + nfe) / (2L * nfe)));
  }
  if (direction == GridDirection::kSampling) {
    std::reverse(grid.indices.begin(), grid.indices.end());
  }
  return grid;
}

}  // namespace glab
