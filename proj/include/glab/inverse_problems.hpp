#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "glab/guidance.hpp"
#include "glab/schedule.hpp"
#include "glab/score_model.hpp"
#include "glab/solvers.hpp"

namespace glab {

enum class OperatorKind { kIdentity, kMask, kMatrix };

std::string_view to_string(OperatorKind kind);

/// y = A x. Mask keeps the coordinates flagged true, in order.
class LinearOperator {
 public:
  static LinearOperator identity(Eigen::Index dim);
  static LinearOperator mask(std::vector<bool> keep);
  // m x d with m <= d and full row rank
  static LinearOperator matrix(Matrix<double> a);

  OperatorKind kind() const { return kind_; }
  Eigen::Index input_dim() const { return input_dim_; }
  Eigen::Index output_dim() const { return dense_.rows(); }
  const std::vector<bool>& mask_bits() const { return mask_; }
  const Matrix<double>& dense() const { return dense_; }

  Vector<double> apply(const Vector<double>& x) const;
  Vector<double> adjoint(const Vector<double>& r) const;

 private:
  LinearOperator(OperatorKind kind, Eigen::Index input_dim, std::vector<bool> mask, Matrix<double> dense);

  OperatorKind kind_;
  Eigen::Index input_dim_;
  std::vector<bool> mask_;
  Matrix<double> dense_;
};

struct Measurement {
  Vector<double> y;
  double noise_std = 0.0;
  LinearOperator op = LinearOperator::identity(1);

  void validate() const;
};

/// y = A x_true + noise_std * n, n drawn from the given stream.
Measurement measure(const LinearOperator& op, const Vector<double>& x_true, double noise_std, Engine& engine);

enum class DisMode { kDps, kDds };
enum class GammaShape { kConstant, kRamp };

std::string_view to_string(DisMode mode);
DisMode parse_dis_mode(std::string_view text);
std::string_view to_string(GammaShape shape);
GammaShape parse_gamma_shape(std::string_view text);

struct DisParams {
  double gamma = 0.5;  // 0.5 is an exact projection for identity and mask operators
  GammaShape shape = GammaShape::kConstant;
  std::vector<double> gamma_per_step;  // overrides gamma / shape when non-empty
  DisMode mode = DisMode::kDds;
  GuidanceMode guidance = Uncond{};

  void validate() const;
  // kRamp scales by (1 - alpha_bar_t)
  double gamma_at(std::size_t step, double alpha_bar) const;
};

/// grad of ||y - A xhat||^2 with respect to xhat.
Vector<double> data_gradient(const Measurement& m, const Vector<double>& xhat);

// Guided posterior-mean Jacobian d xhat_g / d x_t = (1 - s) J_null + s J_cond.
Matrix<double> guided_jacobian(const GaussianMixture<double>& model, const Evaluation<double>& ev, const Condition& cond,
                    StepGuidance g);

/// One data-consistent DDIM step:
/// x_prev = sqrt(a_prev) (xhat_g - gamma grad) + sqrt(1 - a_prev) eps_renoise,
/// grad = 2 A^T (A xhat_g - y) (DDS) or J^T of it (DPS).
Vector<double> dis_step(const Evaluation<double>& ev, const GaussianMixture<double>& model, const Condition& cond,
             StepGuidance g, double gamma, DisMode mode, NoiseLevel prev, const Measurement& m);

Vector<double> dps_step(const Vector<double>& x_t, const GaussianMixture<double>& model, const NoiseSchedule& schedule, int t, int t_prev,
             const Measurement& m, const DisParams& params, const Condition& cond, std::size_t step = 0);
Vector<double> dds_step(const Vector<double>& x_t, const GaussianMixture<double>& model, const NoiseSchedule& schedule, int t, int t_prev,
             const Measurement& m, const DisParams& params, const Condition& cond, std::size_t step = 0);

struct InverseReport {
  Trajectory<double> trajectory;
  std::vector<double> residuals;  // ||y - A xhat_g(x_t)|| per step
  double final_residual = 0.0;    // ||y - A x_0||
  std::optional<double> error_to_truth;
};

InverseReport solve_inverse(const GaussianMixture<double>& model, const NoiseSchedule& schedule,
                            const TimestepGrid& grid, const Measurement& m, const DisParams& params,
                            const Condition& cond, std::uint64_t seed,
                            const std::optional<Vector<double>>& x_true = std::nullopt, std::uint64_t run = 0);

/// Exact posterior of x given y under the mixture prior (restricted to cond)
/// and the linear-Gaussian likelihood.
struct GaussianPosterior {
  Vector<double> mean;
  Matrix<double> covariance;
  Vector<double> weights;  // per-component posterior weights
};

GaussianPosterior exact_posterior(const GaussianMixture<double>& model, const Measurement& m,
                                  const Condition& cond = NullCondition{});

}  // namespace glab
