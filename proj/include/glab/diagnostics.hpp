#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "glab/guidance.hpp"
#include "glab/schedule.hpp"
#include "glab/score_model.hpp"
#include "glab/solvers.hpp"

namespace glab {

/// ||eps_c(sqrt(a) x + sqrt(1 - a) eps) - eps||^2.
double sds_loss(const GaussianMixture<double>& model, const NoiseSchedule& schedule, const Vector<double>& x,
                const Condition& cond, int t, const Vector<double>& eps);

// (1 - a) / a * sds_loss, equal to ||x - xhat_c(x_t)||^2.
double normalized_sds_loss(const GaussianMixture<double>& model, const NoiseSchedule& schedule,
                           const Vector<double>& x, const Condition& cond, int t, const Vector<double>& eps);

struct LossTrace {
  std::vector<int> t;
  std::vector<double> loss;
};

/// Normalized SDS loss along a trajectory, anchored at x = xhat_null(x_t) with
/// eps = eps_null(x_t) so the noised point is x_t itself; the value is then
/// ||xhat_c(x_t) - xhat_null(x_t)||^2. Records at t = 0 are skipped.
LossTrace track_loss(const Trajectory<double>& traj, const GaussianMixture<double>& model,
                     const NoiseSchedule& schedule, const Condition& cond);

struct DriftRecord {
  int t = 0;                     // the later (less noisy) point of the pair
  Vector<double> d_xhat_direct;  // xhat_g(x_t) - xhat_g(x_{t+1})
  Vector<double> uncond_shift;   // sigma_t (eps_null(x_{t+1}) - eps_null(x_t))
  Vector<double> cond_shift;     // CFG: w' D_t - w (sigma_t / sigma_{t+1}) D_{t+1}; CFG++: l' D_t
  Vector<double> delta;          // D_t = xhat_c(x_t) - xhat_null(x_t)
  double residual_norm = 0.0;
  double relative_residual = 0.0;  // residual / (1 + ||d_xhat_direct||)
};

/// Exact posterior-mean drift identity for consecutive DDIM records.
/// Throws ParameterError if the trajectory is not a DDIM trajectory produced
/// under `mode` and `cond`.
std::vector<DriftRecord> drift_decomposition(const Trajectory<double>& traj, const GaussianMixture<double>& model,
                                             const NoiseSchedule& schedule, const Condition& cond,
                                             const GuidanceMode& mode);

/// min_k ||x - mu_k|| / s.
double manifold_proxy(const Vector<double>& x, const GaussianMixture<double>& model);

struct ModeCoverage {
  std::vector<double> frequencies;
  double entropy = 0.0;  // nats
};

ModeCoverage mode_coverage(const std::vector<Vector<double>>& samples, const GaussianMixture<double>& model);

double entropy(const Vector<double>& probabilities);

struct DirectionalRow {
  std::string metric;
  std::string cfg_label;
  std::string cfgpp_label;
  double cfg_mean = 0.0;
  double cfgpp_mean = 0.0;
  double diff_mean = 0.0;  // positive when CFG is worse
  double ci_low = 0.0;     // 95% interval of diff_mean
  double ci_high = 0.0;
  std::size_t n = 0;
  bool direction_holds = false;  // diff_mean > 0 (CFG worse)
};

struct DirectionalOptions {
  int nfe = 50;
  std::size_t seeds = 100;
  double loss_omega = 7.5;
  double loss_lambda = 0.6;
  double proxy_omega = 12.5;
  double proxy_lambda = 1.0;
  double coverage_omega = 7.5;
  double coverage_lambda = 0.6;
  std::size_t bootstrap = 500;
};

/// CFG-vs-CFG++ rows: early-phase loss (cfg - cfg++), manifold proxy
/// (cfg - cfg++) and mode-coverage entropy (cfg++ - cfg, bootstrap interval).
std::vector<DirectionalRow> directional_report(const GaussianMixture<double>& model, const NoiseSchedule& schedule,
                                               const DirectionalOptions& options = {});

// Mean and 95% normal interval of paired differences.
DirectionalRow paired_summary(const std::vector<double>& cfg, const std::vector<double>& cfgpp);

}  // namespace glab
