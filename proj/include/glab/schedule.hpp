#pragma once

#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace glab {

enum class ScheduleKind { kVpLinear, kVpCosine };

std::string_view to_string(ScheduleKind kind);
ScheduleKind parse_schedule_kind(std::string_view text);

struct ScheduleParams {
  double beta_min = 1e-4;
  double beta_max = 0.02;
};

// Discrete variance-preserving noise schedule. alpha_bar(t) for t = 0..T with
// alpha_bar(0) == 1 and strictly decreasing in t. Immutable once built.
class NoiseSchedule {
 public:
  NoiseSchedule(ScheduleKind kind, int train_steps, ScheduleParams params,
                std::vector<double> alpha_bar);

  ScheduleKind kind() const { return kind_; }
  int train_steps() const { return train_steps_; }
  const ScheduleParams& params() const { return params_; }

  double alpha_bar(int t) const;
  std::span<const double> alpha_bars() const { return alpha_bar_; }

  // Variance-exploding noise level sqrt(1 - a) / sqrt(a).
  double sigma(int t) const;

  // Solver time for the exponential integrators: -log(sigma_t), so that
  // sigma = exp(-time). +inf at t = 0.
  double half_log_snr(int t) const;

 private:
  ScheduleKind kind_;
  int train_steps_;
  ScheduleParams params_;
  std::vector<double> alpha_bar_;
};

// Lowest alpha_bar the cosine schedule is allowed to reach at t = T.
inline constexpr double kCosineAlphaBarFloor = 1e-5;
inline constexpr double kCosineOffset = 0.008;

NoiseSchedule build_schedule(ScheduleKind kind, int train_steps,
                             ScheduleParams params = {});

// Default vp-linear, T = 1000, beta in [1e-4, 0.02].
NoiseSchedule default_schedule();

double sigma_ve(const NoiseSchedule& schedule, int t);

inline double sigma_from_alpha_bar(double alpha_bar) {
  return std::sqrt(1.0 - alpha_bar) / std::sqrt(alpha_bar);
}

inline double alpha_bar_from_sigma(double sigma) {
  return 1.0 / (1.0 + sigma * sigma);
}

enum class GridDirection { kSampling, kInversion };

// Strictly monotone timestep indices. Sampling grids run T -> 0, inversion
// grids run 0 -> T; nfe() is the number of solver applications.
struct TimestepGrid {
  std::vector<int> indices;
  GridDirection direction = GridDirection::kSampling;

  int nfe() const { return static_cast<int>(indices.size()) - 1; }
  TimestepGrid reversed() const;
};

TimestepGrid uniform_grid(const NoiseSchedule& schedule, int nfe,
                          GridDirection direction);

}  // namespace glab
