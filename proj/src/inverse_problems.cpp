#include "glab/inverse_problems.hpp"

#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/LU>

namespace glab {

namespace {

using Vec = Vector<double>;
using Mat = Matrix<double>;

}  // namespace

std::string_view to_string(OperatorKind kind) {
  switch (kind) {
    case OperatorKind::kIdentity:
      return "identity";
    case OperatorKind::kMask:
      return "mask";
    case OperatorKind::kMatrix:
      return "matrix";
  }
  return "unknown";
}

LinearOperator::LinearOperator(OperatorKind kind, Eigen::Index input_dim, std::vector<bool> mask, Mat dense)
    : kind_(kind), input_dim_(input_dim), mask_(std::move(mask)), dense_(std::move(dense)) {}

LinearOperator LinearOperator::identity(Eigen::Index dim) {
  if (dim < 1) throw ParameterError("identity operator needs dim >= 1");
  return LinearOperator(OperatorKind::kIdentity, dim, std::vector<bool>(static_cast<std::size_t>(dim), true),
                        Mat::Identity(dim, dim));
}

LinearOperator LinearOperator::mask(std::vector<bool> keep) {
  Eigen::Index m = 0;
  for (bool b : keep) m += b ? 1 : 0;
  if (m == 0) throw ParameterError("mask operator must keep at least one coordinate");
  const auto d = static_cast<Eigen::Index>(keep.size());
  Mat dense = Mat::Zero(m, d);
  Eigen::Index row = 0;
  for (Eigen::Index j = 0; j < d; ++j) {
    if (keep[static_cast<std::size_t>(j)]) dense(row++, j) = 1.0;
  }
  return LinearOperator(OperatorKind::kMask, d, std::move(keep), std::move(dense));
}

LinearOperator LinearOperator::matrix(Mat a) {
  if (a.rows() < 1 || a.rows() > a.cols()) throw ParameterError("matrix operator needs 1 <= m <= d");
  if (!a.allFinite()) throw ParameterError("matrix operator has non-finite entries");
  Eigen::FullPivLU<Mat> lu(a);
  if (lu.rank() != a.rows()) {
    throw ParameterError("matrix operator is not full row rank (rank " + std::to_string(lu.rank()) + " < " +
                         std::to_string(a.rows()) + ")");
  }
  const auto d = a.cols();
  return LinearOperator(OperatorKind::kMatrix, d, {}, std::move(a));
}

Vec LinearOperator::apply(const Vec& x) const {
  if (x.size() != input_dim_) throw ParameterError("operator input dimension mismatch");
  if (kind_ == OperatorKind::kIdentity) return x;
  if (kind_ == OperatorKind::kMask) {
    Vec y(output_dim());
    Eigen::Index row = 0;
    for (Eigen::Index j = 0; j < input_dim_; ++j) {
      if (mask_[static_cast<std::size_t>(j)]) y[row++] = x[j];
    }
    return y;
  }
  return dense_ * x;
}

Vec LinearOperator::adjoint(const Vec& r) const {
  if (r.size() != output_dim()) throw ParameterError("operator output dimension mismatch");
  if (kind_ == OperatorKind::kIdentity) return r;
  if (kind_ == OperatorKind::kMask) {
    Vec x = Vec::Zero(input_dim_);
    Eigen::Index row = 0;
    for (Eigen::Index j = 0; j < input_dim_; ++j) {
      if (mask_[static_cast<std::size_t>(j)]) x[j] = r[row++];
    }
    return x;
  }
  return dense_.transpose() * r;
}

void Measurement::validate() const {
  if (y.size() != op.output_dim()) {
    throw ParameterError("measurement has " + std::to_string(y.size()) + " entries, operator produces " +
                         std::to_string(op.output_dim()));
  }
  if (!y.allFinite()) throw ParameterError("measurement is not finite");
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) throw ParameterError("noise_std must be finite and >= 0");
}

Measurement measure(const LinearOperator& op, const Vec& x_true, double noise_std, Engine& engine) {
  Measurement m;
  m.op = op;
  m.noise_std = noise_std;
  m.y = op.apply(x_true);
  if (noise_std > 0.0) m.y += noise_std * standard_normal<double>(engine, m.y.size());
  m.validate();
  return m;
}

std::string_view to_string(DisMode mode) { return mode == DisMode::kDps ? "dps" : "dds"; }

DisMode parse_dis_mode(std::string_view text) {
  if (text == "dps") return DisMode::kDps;
  if (text == "dds") return DisMode::kDds;
  throw ParameterError("inverse-problem mode must be 'dps' or 'dds'");
}

std::string_view to_string(GammaShape shape) { return shape == GammaShape::kConstant ? "constant" : "ramp"; }

GammaShape parse_gamma_shape(std::string_view text) {
  if (text == "constant") return GammaShape::kConstant;
  if (text == "ramp") return GammaShape::kRamp;
  throw ParameterError("gamma shape must be 'constant' or 'ramp'");
}

void DisParams::validate() const {
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ParameterError("gamma must be finite and >= 0");
  for (double g : gamma_per_step) {
    if (!(g >= 0.0) || !std::isfinite(g)) throw ParameterError("per-step gamma must be finite and >= 0");
  }
  validate_guidance(guidance);
}

double DisParams::gamma_at(std::size_t step, double alpha_bar) const {
  if (!gamma_per_step.empty()) {
    if (step >= gamma_per_step.size()) {
      throw ParameterError("no gamma for step " + std::to_string(step));
    }
    return gamma_per_step[step];
  }
  return shape == GammaShape::kConstant ? gamma : gamma * (1.0 - alpha_bar);
}

Vec data_gradient(const Measurement& m, const Vec& xhat) { return 2.0 * m.op.adjoint(m.op.apply(xhat) - m.y); }

Mat guided_jacobian(const GaussianMixture<double>& model, const Evaluation<double>& ev, const Condition& cond,
                    StepGuidance g) {
  const double s = g.role == StepGuidance::Role::kUncond ? 0.0 : g.scale;
  if (s == 0.0) return posterior_mean_jacobian(model, ev.level, ev.x, NullCondition{});
  const Mat jc = posterior_mean_jacobian(model, ev.level, ev.x, cond);
  if (s == 1.0) return jc;
  const Mat jn = posterior_mean_jacobian(model, ev.level, ev.x, NullCondition{});
  return jn + s * (jc - jn);
}

Vec dis_step(const Evaluation<double>& ev, const GaussianMixture<double>& model, const Condition& cond,
             StepGuidance g, double gamma, DisMode mode, NoiseLevel prev, const Measurement& m) {
  if (!(gamma >= 0.0)) throw ParameterError("gamma must be >= 0");
  const auto terms = guided_terms(ev, g);
  Vec grad = data_gradient(m, terms.denoised);
  if (mode == DisMode::kDps) grad = guided_jacobian(model, ev, cond, g).transpose() * grad;
  return prev.signal() * (terms.denoised - gamma * grad) + prev.noise() * terms.renoise_eps;
}

namespace {

Vec indexed_step(DisMode mode, const Vec& x_t, const GaussianMixture<double>& model, const NoiseSchedule& schedule,
                 int t, int t_prev, const Measurement& m, const DisParams& params, const Condition& cond,
                 std::size_t step) {
  detail::check_descending(schedule, t, t_prev);
  m.validate();
  params.validate();
  const NoiseLevel level = NoiseLevel::at(schedule, t);
  const auto ev = evaluate(model, level, x_t, cond);
  return dis_step(ev, model, cond, guidance_at_step(params.guidance, step), params.gamma_at(step, level.alpha_bar),
                  mode, NoiseLevel::at(schedule, t_prev), m);
}

}  // namespace

Vec dps_step(const Vec& x_t, const GaussianMixture<double>& model, const NoiseSchedule& schedule, int t, int t_prev,
             const Measurement& m, const DisParams& params, const Condition& cond, std::size_t step) {
  return indexed_step(DisMode::kDps, x_t, model, schedule, t, t_prev, m, params, cond, step);
}

Vec dds_step(const Vec& x_t, const GaussianMixture<double>& model, const NoiseSchedule& schedule, int t, int t_prev,
             const Measurement& m, const DisParams& params, const Condition& cond, std::size_t step) {
  return indexed_step(DisMode::kDds, x_t, model, schedule, t, t_prev, m, params, cond, step);
}

InverseReport solve_inverse(const GaussianMixture<double>& model, const NoiseSchedule& schedule,
                            const TimestepGrid& grid, const Measurement& m, const DisParams& params,
                            const Condition& cond, std::uint64_t seed, const std::optional<Vec>& x_true,
                            std::uint64_t run) {
  if (grid.direction != GridDirection::kSampling || grid.nfe() < 1 || grid.indices.back() != 0) {
    throw ParameterError("solve_inverse needs a descending grid ending at t = 0");
  }
  m.validate();
  params.validate();
  if (m.op.input_dim() != model.dim()) throw ParameterError("operator input dimension differs from the model");
  component_mask(cond, model.components());
  if (x_true && x_true->size() != model.dim()) throw ParameterError("x_true dimension mismatch");

  InverseReport rep;
  auto& traj = rep.trajectory;
  traj.guidance = params.guidance;
  traj.condition = cond;
  traj.seed = seed;

  Engine init = make_engine({seed, run, kInitialNoiseStep});
  Vec x = standard_normal<double>(init, model.dim());
  const auto steps = static_cast<std::size_t>(grid.nfe());
  for (std::size_t i = 0; i < steps; ++i) {
    const int t = grid.indices[i];
    try {
      const NoiseLevel level = NoiseLevel::at(schedule, t);
      const StepGuidance g = guidance_at_step(params.guidance, i);
      const auto ev = evaluate(model, level, x, cond);
      traj.records.push_back(make_record(t, ev, g));
      rep.residuals.push_back((m.y - m.op.apply(traj.records.back().xhat_guided)).norm());
      x = dis_step(ev, model, cond, g, params.gamma_at(i, level.alpha_bar), params.mode,
                   NoiseLevel::at(schedule, grid.indices[i + 1]), m);
      if (!x.allFinite()) throw InvariantError("non-finite state");
    } catch (const std::exception& e) {
      throw StepError(e.what(), i);
    }
  }
  traj.records.push_back(
      make_record(0, evaluate(model, NoiseLevel::at(schedule, 0), x, cond), guidance_at_step(params.guidance, steps - 1)));
  rep.final_residual = (m.y - m.op.apply(x)).norm();
  if (x_true) rep.error_to_truth = (x - *x_true).norm();
  return rep;
}

GaussianPosterior exact_posterior(const GaussianMixture<double>& model, const Measurement& m, const Condition& cond) {
  m.validate();
  if (m.op.input_dim() != model.dim()) throw ParameterError("operator input dimension differs from the model");
  const auto mask = component_mask(cond, model.components());
  const Mat& a = m.op.dense();
  const double s2 = model.component_std() * model.component_std();
  const Eigen::Index d = model.dim();
  const Eigen::Index K = model.components();

  // y | k ~ N(A mu_k, S), S = s^2 A A^T + noise^2 I, shared by all components
  const Mat S = s2 * a * a.transpose() + m.noise_std * m.noise_std * Mat::Identity(a.rows(), a.rows());
  const Eigen::LLT<Mat> llt(S);
  if (llt.info() != Eigen::Success) throw SingularityError("measurement covariance is singular");
  const Mat gain = s2 * a.transpose() * llt.solve(Mat::Identity(a.rows(), a.rows()));

  Vec log_w = Vec::Constant(K, -std::numeric_limits<double>::infinity());
  Mat means(d, K);
  for (Eigen::Index k = 0; k < K; ++k) {
    const Vec r = m.y - a * model.mean(k);
    means.col(k) = model.mean(k) + gain * r;
    if (mask[static_cast<std::size_t>(k)]) {
      log_w[k] = std::log(model.weights()[k]) - 0.5 * r.dot(llt.solve(r));
    }
  }
  const double top = log_w.maxCoeff();
  Vec w = (log_w.array() - top).exp();
  w /= w.sum();

  GaussianPosterior out;
  out.weights = w;
  out.mean = means * w;
  out.covariance = s2 * Mat::Identity(d, d) - gain * a * s2;
  for (Eigen::Index k = 0; k < K; ++k) {
    if (w[k] == 0.0) continue;
    const Vec dev = means.col(k) - out.mean;
    out.covariance += w[k] * dev * dev.transpose();
  }
  return out;
}

}  // namespace glab
