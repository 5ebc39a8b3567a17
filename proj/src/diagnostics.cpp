#include "glab/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace glab {

namespace {

using Vec = Vector<double>;

void check_sds_time(const NoiseSchedule& schedule, int t) {
  if (t < 1 || t > schedule.train_steps()) {
    throw IndexError("sds loss needs t in [1, " + std::to_string(schedule.train_steps()) + "], got " +
                     std::to_string(t));
  }
}

}  // namespace

double sds_loss(const GaussianMixture<double>& model, const NoiseSchedule& schedule, const Vec& x,
                const Condition& cond, int t, const Vec& eps) {
  check_sds_time(schedule, t);
  if (x.size() != model.dim() || eps.size() != model.dim()) throw ParameterError("sds loss dimension mismatch");
  const NoiseLevel level = NoiseLevel::at(schedule, t);
  const Vec x_t = level.signal() * x + level.noise() * eps;
  return (noise_prediction(model, level, x_t, cond) - eps).squaredNorm();
}

double normalized_sds_loss(const GaussianMixture<double>& model, const NoiseSchedule& schedule, const Vec& x,
                           const Condition& cond, int t, const Vec& eps) {
  const double a = schedule.alpha_bar(t);
  return (1.0 - a) / a * sds_loss(model, schedule, x, cond, t, eps);
}

LossTrace track_loss(const Trajectory<double>& traj, const GaussianMixture<double>& model,
                     const NoiseSchedule& schedule, const Condition& cond) {
  LossTrace trace;
  for (const auto& rec : traj.records) {
    if (rec.t == 0) continue;
    const NoiseLevel level = NoiseLevel::at(schedule, rec.t);
    const Vec eps = noise_prediction(model, level, rec.x, NullCondition{});
    const Vec anchor = tweedie<double>(rec.x, eps, level);
    trace.t.push_back(rec.t);
    trace.loss.push_back(normalized_sds_loss(model, schedule, anchor, cond, rec.t, eps));
  }
  return trace;
}

std::vector<DriftRecord> drift_decomposition(const Trajectory<double>& traj, const GaussianMixture<double>& model,
                                             const NoiseSchedule& schedule, const Condition& cond,
                                             const GuidanceMode& mode) {
  if (to_string(traj.guidance) != to_string(mode)) {
    throw ParameterError("trajectory was sampled under " + to_string(traj.guidance) + ", not " + to_string(mode));
  }
  if (traj.solver.kind != SolverKind::kDdim) throw ParameterError("drift decomposition needs a DDIM trajectory");
  if (to_string(traj.condition) != to_string(cond)) throw ParameterError("trajectory condition differs");
  const bool cfg_form = std::holds_alternative<Cfg>(mode) || std::holds_alternative<ScheduledCfg>(mode);

  struct Point {
    Vec eps_null;
    Vec delta;
    Vec xhat_guided;
    double sigma;
    double scale;
  };
  std::vector<Point> pts;
  pts.reserve(traj.records.size());
  for (std::size_t i = 0; i < traj.records.size(); ++i) {
    const auto& rec = traj.records[i];
    if (rec.alpha_bar != schedule.alpha_bar(rec.t)) throw ParameterError("record does not match the schedule");
    const NoiseLevel level{rec.alpha_bar};
    const auto ev = evaluate(model, level, rec.x, cond);
    const double scale = std::holds_alternative<Uncond>(mode) ? 0.0 : rec.scale;
    const auto terms = guided_terms(ev, {cfg_form ? StepGuidance::Role::kCfg : StepGuidance::Role::kCfgPP, scale});
    pts.push_back({ev.eps_null, terms.xhat_cond - terms.xhat_null, terms.denoised, level.sigma(), scale});
  }

  std::vector<DriftRecord> out;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const Point& hi = pts[i];      // x_{t+1}
    const Point& lo = pts[i + 1];  // x_t
    DriftRecord r;
    r.t = traj.records[i + 1].t;
    r.d_xhat_direct = lo.xhat_guided - hi.xhat_guided;
    r.uncond_shift = lo.sigma * (hi.eps_null - lo.eps_null);
    r.cond_shift = lo.scale * lo.delta;
    if (cfg_form) r.cond_shift -= hi.scale * (lo.sigma / hi.sigma) * hi.delta;
    r.delta = lo.delta;
    r.residual_norm = (r.d_xhat_direct - r.uncond_shift - r.cond_shift).norm();
    r.relative_residual = r.residual_norm / (1.0 + r.d_xhat_direct.norm());
    out.push_back(std::move(r));
  }
  return out;
}

double manifold_proxy(const Vec& x, const GaussianMixture<double>& model) {
  if (x.size() != model.dim()) throw ParameterError("manifold proxy dimension mismatch");
  return (model.means().colwise() - x).colwise().norm().minCoeff() / model.component_std();
}

double entropy(const Vec& p) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
  }
  return h;
}

ModeCoverage mode_coverage(const std::vector<Vec>& samples, const GaussianMixture<double>& model) {
  if (samples.empty()) throw ParameterError("mode coverage needs at least one sample");
  Vec counts = Vec::Zero(model.components());
  for (const auto& x : samples) counts[nearest_component(model, x)] += 1.0;
  counts /= static_cast<double>(samples.size());
  ModeCoverage out;
  out.frequencies.assign(counts.data(), counts.data() + counts.size());
  out.entropy = entropy(counts);
  return out;
}

DirectionalRow paired_summary(const std::vector<double>& cfg, const std::vector<double>& cfgpp) {
  if (cfg.size() != cfgpp.size() || cfg.empty()) throw ParameterError("paired summary needs equal, non-empty sets");
  const double n = static_cast<double>(cfg.size());
  DirectionalRow row;
  row.n = cfg.size();
  row.cfg_mean = std::accumulate(cfg.begin(), cfg.end(), 0.0) / n;
  row.cfgpp_mean = std::accumulate(cfgpp.begin(), cfgpp.end(), 0.0) / n;
  std::vector<double> diff(cfg.size());
  for (std::size_t i = 0; i < cfg.size(); ++i) diff[i] = cfg[i] - cfgpp[i];
  row.diff_mean = std::accumulate(diff.begin(), diff.end(), 0.0) / n;
  double ss = 0.0;
  for (double d : diff) ss += (d - row.diff_mean) * (d - row.diff_mean);
  const double se = cfg.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
  row.ci_low = row.diff_mean - 1.96 * se;
  row.ci_high = row.diff_mean + 1.96 * se;
  row.direction_holds = row.diff_mean > 0.0;
  return row;
}

std::vector<DirectionalRow> directional_report(const GaussianMixture<double>& model, const NoiseSchedule& schedule,
                                               const DirectionalOptions& opt) {
  if (opt.seeds < 2) throw ParameterError("directional report needs at least 2 seeds");
  const auto grid = uniform_grid(schedule, opt.nfe, GridDirection::kSampling);
  const auto K = static_cast<std::uint64_t>(model.components());
  const std::size_t early = std::max<std::size_t>(1, static_cast<std::size_t>(opt.nfe) / 5);
  std::vector<DirectionalRow> rows;

  {
    std::vector<double> a, b;
    for (std::uint64_t seed = 0; seed < opt.seeds; ++seed) {
      const Condition cond = ClassCondition{static_cast<int>(seed % K)};
      for (auto [mode, out] : {std::pair<GuidanceMode, std::vector<double>*>{Cfg{opt.loss_omega}, &a},
                               std::pair<GuidanceMode, std::vector<double>*>{CfgPP{opt.loss_lambda}, &b}}) {
        const auto trace = track_loss(sample(model, schedule, grid, mode, cond, SolverSpec{}, seed), model, schedule, cond);
        out->push_back(std::accumulate(trace.loss.begin(), trace.loss.begin() + early, 0.0) / early);
      }
    }
    auto row = paired_summary(a, b);
    row.metric = "sds_loss_early_phase";
    row.cfg_label = to_string(GuidanceMode{Cfg{opt.loss_omega}});
    row.cfgpp_label = to_string(GuidanceMode{CfgPP{opt.loss_lambda}});
    rows.push_back(row);
  }
  {
    std::vector<double> a, b;
    for (std::uint64_t seed = 0; seed < opt.seeds; ++seed) {
      const Condition cond = ClassCondition{static_cast<int>(seed % K)};
      for (auto [mode, out] : {std::pair<GuidanceMode, std::vector<double>*>{Cfg{opt.proxy_omega}, &a},
                               std::pair<GuidanceMode, std::vector<double>*>{CfgPP{opt.proxy_lambda}, &b}}) {
        const auto traj = sample(model, schedule, grid, mode, cond, SolverSpec{}, seed);
        double sum = 0.0;
        for (const auto& rec : traj.records) sum += manifold_proxy(rec.xhat_guided, model);
        out->push_back(sum / static_cast<double>(traj.records.size()));
      }
    }
    auto row = paired_summary(a, b);
    row.metric = "manifold_proxy_mean";
    row.cfg_label = to_string(GuidanceMode{Cfg{opt.proxy_omega}});
    row.cfgpp_label = to_string(GuidanceMode{CfgPP{opt.proxy_lambda}});
    rows.push_back(row);
  }
  {
    // half of the components allowed; collapse shows up as lower entropy
    std::vector<bool> half(static_cast<std::size_t>(K), false);
    for (std::size_t k = 0; k < half.size() / 2; ++k) half[k] = true;
    const Condition cond = SubsetCondition{half};
    std::vector<Vec> sa, sb;
    for (std::uint64_t seed = 0; seed < opt.seeds; ++seed) {
      sa.push_back(sample(model, schedule, grid, Cfg{opt.coverage_omega}, cond, SolverSpec{}, seed).final_state());
      sb.push_back(sample(model, schedule, grid, CfgPP{opt.coverage_lambda}, cond, SolverSpec{}, seed).final_state());
    }
    // bootstrap the entropy gap over paired seeds
    Engine engine = make_engine({0, 0, 0x5eedb007ull});
    std::uniform_int_distribution<std::size_t> pick(0, opt.seeds - 1);
    std::vector<double> gaps;
    for (std::size_t r = 0; r < opt.bootstrap; ++r) {
      std::vector<Vec> ra, rb;
      for (std::size_t i = 0; i < opt.seeds; ++i) {
        const std::size_t j = pick(engine);
        ra.push_back(sa[j]);
        rb.push_back(sb[j]);
      }
      gaps.push_back(mode_coverage(rb, model).entropy - mode_coverage(ra, model).entropy);
    }
    std::sort(gaps.begin(), gaps.end());
    DirectionalRow row;
    row.metric = "mode_entropy_gap";
    row.cfg_label = to_string(GuidanceMode{Cfg{opt.coverage_omega}});
    row.cfgpp_label = to_string(GuidanceMode{CfgPP{opt.coverage_lambda}});
    row.n = opt.seeds;
    row.cfg_mean = mode_coverage(sa, model).entropy;
    row.cfgpp_mean = mode_coverage(sb, model).entropy;
    row.diff_mean = row.cfgpp_mean - row.cfg_mean;
    row.ci_low = gaps[static_cast<std::size_t>(0.025 * static_cast<double>(gaps.size()))];
    row.ci_high = gaps[std::min(gaps.size() - 1, static_cast<std::size_t>(0.975 * static_cast<double>(gaps.size())))];
    row.direction_holds = row.diff_mean > 0.0;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace glab
