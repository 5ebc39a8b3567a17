#include "glab/harness/run.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <numeric>
#include <set>

#include "json.hpp"

#include "glab/diagnostics.hpp"
#include "glab/errors.hpp"
#include "glab/harness/csv.hpp"
#include "glab/harness/svg.hpp"
#include "glab/inverse_problems.hpp"
#include "glab/inversion.hpp"
#include "glab/rng.hpp"
#include "glab/text.hpp"

namespace glab::harness {

namespace {

using Vec = Vector<double>;
using Clock = std::chrono::steady_clock;

constexpr double kDriftTolerance = 1e-9;

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::vector<std::string> coord_names(const std::string& prefix, Eigen::Index d) {
  std::vector<std::string> out;
  for (Eigen::Index i = 0; i < d; ++i) out.push_back(prefix + "_" + std::to_string(i));
  return out;
}

void append_header(std::vector<std::string>& h, const std::vector<std::string>& more) {
  h.insert(h.end(), more.begin(), more.end());
}

void append_vec(std::vector<Cell>& row, const Vec& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) row.emplace_back(v[i]);
}

Cell int_cell(std::uint64_t v) { return Cell{static_cast<std::int64_t>(v)}; }

double guidance_scale(const GuidanceMode& mode) {
  if (const auto* g = std::get_if<Cfg>(&mode)) return g->omega;
  if (const auto* g = std::get_if<CfgPP>(&mode)) return g->lambda;
  return 0.0;
}

std::string guidance_family(const GuidanceMode& mode) {
  if (std::holds_alternative<Cfg>(mode)) return "cfg";
  if (std::holds_alternative<CfgPP>(mode)) return "cfgpp";
  if (std::holds_alternative<ScheduledCfg>(mode)) return "scheduled";
  return "uncond";
}

bool in_condition(const GaussianMixture<double>& model, const Condition& cond, const Vec& x) {
  return component_mask(cond, model.components())[static_cast<std::size_t>(nearest_component(model, x))];
}

Vec prior_draw(const GaussianMixture<double>& model, const Condition& cond, std::uint64_t seed) {
  Engine engine = make_engine({seed, 0, kPriorSampleStep});
  return sample_prior(model, cond, engine);
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

class Outputs {
 public:
  Outputs(std::filesystem::path dir, bool svg) : dir_(std::move(dir)), svg_(svg) {}

  void write(const std::string& name, const std::string& content) {
    write_file_atomic(dir_ / name, content);
    files_.push_back({name, content.size()});
  }
  void chart(const std::string& name, const LineChart& chart) {
    if (svg_) write(name, chart.render());
  }
  const std::filesystem::path& dir() const { return dir_; }
  std::vector<FileEntry> files() const { return files_; }

 private:
  std::filesystem::path dir_;
  bool svg_;
  std::vector<FileEntry> files_;
};

struct Context {
  const ExperimentConfig& config;
  NoiseSchedule schedule;
  GaussianMixture<double> model;
  Outputs& out;
  RunManifest& manifest;
};

// Runs one task per seed, timing each.
template <typename Fn>
void per_seed(Context& ctx, Fn&& fn) {
  const auto& seeds = ctx.config.seeds;
  std::vector<RunTiming> timing(seeds.size());
  parallel_for(seeds.size(), [&](std::size_t i) {
    const auto start = Clock::now();
    fn(i, seeds[i]);
    timing[i] = {i, seeds[i], seconds_since(start)};
  });
  ctx.manifest.runs = std::move(timing);
}

// true when the drift identity holds everywhere
bool run_sample(Context& ctx) {
  const auto& c = ctx.config;
  const auto grid = uniform_grid(ctx.schedule, c.nfe, GridDirection::kSampling);
  std::vector<Trajectory<double>> trajs(c.seeds.size());
  std::vector<LossTrace> losses(c.seeds.size());
  const bool drift = c.solver.kind == SolverKind::kDdim;
  std::vector<std::vector<DriftRecord>> drifts(c.seeds.size());
  per_seed(ctx, [&](std::size_t i, std::uint64_t seed) {
    trajs[i] = sample(ctx.model, ctx.schedule, grid, c.guidance, c.condition, c.solver, seed);
    losses[i] = track_loss(trajs[i], ctx.model, ctx.schedule, c.condition);
    if (drift) drifts[i] = drift_decomposition(trajs[i], ctx.model, ctx.schedule, c.condition, c.guidance);
  });

  const auto d = ctx.model.dim();
  std::vector<std::string> th{"run_id", "seed", "step", "t", "alpha_bar"};
  append_header(th, coord_names("x", d));
  append_header(th, coord_names("xhat", d));
  append_header(th, {"loss_sds", "manifold_proxy"});
  CsvTable traj_csv(th);
  std::vector<std::string> sh{"run_id", "seed"};
  append_header(sh, coord_names("x", d));
  append_header(sh, {"nearest_component", "manifold_proxy", "in_condition"});
  CsvTable samples_csv(sh);
  LineChart chart{"guided SDS loss, " + to_string(c.guidance), "step", "normalized loss", true, {}};

  std::size_t hits = 0;
  std::vector<double> proxies;
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const auto& traj = trajs[i];
    Series series{"seed " + std::to_string(c.seeds[i]), {}, {}};
    std::size_t li = 0;
    for (std::size_t s = 0; s < traj.records.size(); ++s) {
      const auto& rec = traj.records[s];
      double loss = std::nan("");
      if (li < losses[i].t.size() && losses[i].t[li] == rec.t && rec.t != 0) loss = losses[i].loss[li++];
      std::vector<Cell> row{int_cell(i), int_cell(c.seeds[i]), int_cell(s), int_cell(static_cast<std::uint64_t>(rec.t)),
                            rec.alpha_bar};
      append_vec(row, rec.x);
      append_vec(row, rec.xhat_guided);
      row.emplace_back(loss);
      row.emplace_back(manifold_proxy(rec.xhat_guided, ctx.model));
      traj_csv.add_row(std::move(row));
      if (std::isfinite(loss)) {
        series.x.push_back(static_cast<double>(s));
        series.y.push_back(loss);
      }
    }
    if (chart.series.size() < 8) chart.series.push_back(std::move(series));

    const Vec& x = traj.final_state();
    const bool hit = in_condition(ctx.model, c.condition, x);
    hits += hit;
    proxies.push_back(manifold_proxy(x, ctx.model));
    std::vector<Cell> row{int_cell(i), int_cell(c.seeds[i])};
    append_vec(row, x);
    row.emplace_back(static_cast<std::int64_t>(nearest_component(ctx.model, x)));
    row.emplace_back(proxies.back());
    row.emplace_back(hit);
    samples_csv.add_row(std::move(row));
  }
  ctx.out.write("trajectories.csv", traj_csv.str());
  ctx.out.write("samples.csv", samples_csv.str());
  ctx.out.chart("loss.svg", chart);

  // DDIM only: exact drift identity, a hard invariant
  std::string violation;
  if (drift) {
    CsvTable drift_csv({"run_id", "seed", "step", "t", "d_xhat_norm", "uncond_shift_norm", "cond_shift_norm",
                        "relative_residual"});
    LineChart dchart{"conditional drift norm, " + to_string(c.guidance), "step", "||cond shift||", true, {}};
    for (std::size_t i = 0; i < drifts.size(); ++i) {
      Series series{"seed " + std::to_string(c.seeds[i]), {}, {}};
      for (std::size_t s = 0; s < drifts[i].size(); ++s) {
        const auto& r = drifts[i][s];
        drift_csv.add_row({int_cell(i), int_cell(c.seeds[i]), int_cell(s + 1),
                           int_cell(static_cast<std::uint64_t>(r.t)), r.d_xhat_direct.norm(), r.uncond_shift.norm(),
                           r.cond_shift.norm(), r.relative_residual});
        series.x.push_back(static_cast<double>(s + 1));
        series.y.push_back(r.cond_shift.norm());
        if (violation.empty() && !(r.relative_residual <= kDriftTolerance)) {
          violation = "drift identity residual " + format_g17(r.relative_residual) + " > " +
                      format_shortest(kDriftTolerance) + " at run " + std::to_string(i) + " (seed " +
                      std::to_string(c.seeds[i]) + "), step " + std::to_string(s + 1);
        }
      }
      if (dchart.series.size() < 8) dchart.series.push_back(std::move(series));
    }
    ctx.out.write("drift.csv", drift_csv.str());
    ctx.out.chart("drift.svg", dchart);
  }
  ctx.manifest.summary.push_back("samples: " + std::to_string(trajs.size()) + ", in-condition fraction " +
                                 format_shortest(static_cast<double>(hits) / static_cast<double>(trajs.size())) +
                                 ", mean final manifold proxy " + format_g17(mean_of(proxies)));
  if (!violation.empty()) {
    ctx.manifest.summary.push_back(violation);
    return false;
  }
  return true;
}

void run_invert(Context& ctx) {
  const auto& c = ctx.config;
  const auto grid_up = uniform_grid(ctx.schedule, c.nfe, GridDirection::kInversion);
  std::vector<Vec> x0s(c.seeds.size());
  std::vector<InversionPath<double>> paths(c.seeds.size());
  per_seed(ctx, [&](std::size_t i, std::uint64_t seed) {
    x0s[i] = prior_draw(ctx.model, c.condition, seed);
    paths[i] = invert_path(x0s[i], ctx.model, ctx.schedule, grid_up, c.guidance, c.condition);
  });
  const auto d = ctx.model.dim();
  std::vector<std::string> lh{"run_id", "seed"};
  append_header(lh, coord_names("x0", d));
  append_header(lh, coord_names("xT", d));
  lh.push_back("xT_norm");
  CsvTable latents(lh);
  std::vector<std::string> ph{"run_id", "seed", "step", "t"};
  append_header(ph, coord_names("x", d));
  CsvTable path_csv(ph);
  LineChart chart{"inversion path norm, " + to_string(c.guidance), "step", "||x_t||", false, {}};
  std::vector<double> norms;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    std::vector<Cell> row{int_cell(i), int_cell(c.seeds[i])};
    append_vec(row, x0s[i]);
    append_vec(row, paths[i].latent());
    norms.push_back(paths[i].latent().norm());
    row.emplace_back(norms.back());
    latents.add_row(std::move(row));
    Series series{"seed " + std::to_string(c.seeds[i]), {}, {}};
    for (std::size_t s = 0; s < paths[i].evaluations.size(); ++s) {
      std::vector<Cell> prow{int_cell(i), int_cell(c.seeds[i]), int_cell(s),
                             int_cell(static_cast<std::uint64_t>(paths[i].t[s]))};
      append_vec(prow, paths[i].evaluations[s].x);
      path_csv.add_row(std::move(prow));
      series.x.push_back(static_cast<double>(s));
      series.y.push_back(paths[i].evaluations[s].x.norm());
    }
    if (chart.series.size() < 8) chart.series.push_back(std::move(series));
  }
  ctx.out.write("latents.csv", latents.str());
  ctx.out.write("inversion_paths.csv", path_csv.str());
  ctx.out.chart("inversion.svg", chart);
  ctx.manifest.summary.push_back("latents: " + std::to_string(paths.size()) + ", mean ||x_T|| " +
                                 format_g17(mean_of(norms)));
}

void run_roundtrip(Context& ctx) {
  const auto& c = ctx.config;
  std::vector<InversionReport<double>> reps(c.seeds.size());
  per_seed(ctx, [&](std::size_t i, std::uint64_t seed) {
    reps[i] = roundtrip(prior_draw(ctx.model, c.condition, seed), ctx.model, ctx.schedule, c.nfe, c.guidance,
                        c.condition);
  });
  CsvTable summary({"run_id", "mode", "scale", "nfe", "seed", "l2_error", "db"});
  CsvTable residuals({"run_id", "seed", "step", "residual", "shift_difference"});
  LineChart chart{"inversion residual per step, " + to_string(c.guidance), "step", "residual", true, {}};
  std::vector<double> errors;
  for (std::size_t i = 0; i < reps.size(); ++i) {
    const auto& r = reps[i];
    errors.push_back(r.l2_error);
    summary.add_row({int_cell(i), guidance_family(c.guidance), guidance_scale(c.guidance),
                     int_cell(static_cast<std::uint64_t>(c.nfe)), int_cell(c.seeds[i]), r.l2_error, r.db});
    Series series{"seed " + std::to_string(c.seeds[i]), {}, {}};
    for (std::size_t s = 0; s < r.per_step_residuals.size(); ++s) {
      residuals.add_row({int_cell(i), int_cell(c.seeds[i]), int_cell(s), r.per_step_residuals[s],
                         r.shift_differences[s]});
      series.x.push_back(static_cast<double>(s));
      series.y.push_back(r.per_step_residuals[s]);
    }
    if (chart.series.size() < 8) chart.series.push_back(std::move(series));
  }
  ctx.out.write("roundtrip.csv", summary.str());
  ctx.out.write("residuals.csv", residuals.str());
  ctx.out.chart("residuals.svg", chart);
  ctx.manifest.summary.push_back("roundtrip: " + std::to_string(reps.size()) + " runs, mean l2 error " +
                                 format_g17(mean_of(errors)));
}

void run_edit(Context& ctx) {
  const auto& c = ctx.config;
  std::vector<Vec> x0s(c.seeds.size());
  std::vector<EditResult<double>> edits(c.seeds.size());
  per_seed(ctx, [&](std::size_t i, std::uint64_t seed) {
    x0s[i] = prior_draw(ctx.model, c.condition, seed);
    edits[i] = edit(x0s[i], ctx.model, ctx.schedule, c.nfe, c.guidance, c.condition, c.edit_target);
  });
  const auto d = ctx.model.dim();
  std::vector<std::string> h{"run_id", "seed", "source", "target"};
  append_header(h, coord_names("x0", d));
  append_header(h, coord_names("xT", d));
  append_header(h, coord_names("edited", d));
  append_header(h, {"source_component", "edited_component", "hit"});
  CsvTable table(h);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < edits.size(); ++i) {
    const bool hit = in_condition(ctx.model, c.edit_target, edits[i].x0_edited);
    hits += hit;
    std::vector<Cell> row{int_cell(i), int_cell(c.seeds[i]), to_string(c.condition), to_string(c.edit_target)};
    append_vec(row, x0s[i]);
    append_vec(row, edits[i].xT);
    append_vec(row, edits[i].x0_edited);
    row.emplace_back(static_cast<std::int64_t>(nearest_component(ctx.model, x0s[i])));
    row.emplace_back(static_cast<std::int64_t>(nearest_component(ctx.model, edits[i].x0_edited)));
    row.emplace_back(hit);
    table.add_row(std::move(row));
  }
  ctx.out.write("edits.csv", table.str());
  ctx.manifest.summary.push_back("edits: " + std::to_string(hits) + "/" + std::to_string(edits.size()) +
                                 " land in " + to_string(c.edit_target));
}

// true when every row passes
bool run_equiv_check(Context& ctx) {
  const auto& c = ctx.config;
  std::vector<double> lambdas = c.sweep_lambdas;
  std::vector<int> nfes = c.sweep_nfes;
  if (const auto* g = std::get_if<CfgPP>(&c.guidance)) {
    lambdas = {g->lambda};
    nfes = {c.nfe};
  }
  struct Task {
    double lambda;
    int nfe;
    std::size_t run;
  };
  std::vector<Task> tasks;
  for (double l : lambdas) {
    for (int n : nfes) {
      for (std::size_t r = 0; r < c.seeds.size(); ++r) tasks.push_back({l, n, r});
    }
  }
  std::vector<double> dev(tasks.size());
  std::vector<std::size_t> worst_step(tasks.size(), 0);
  std::vector<double> wall(tasks.size());
  parallel_for(tasks.size(), [&](std::size_t i) {
    const auto start = Clock::now();
    const auto& task = tasks[i];
    const auto grid = uniform_grid(ctx.schedule, task.nfe, GridDirection::kSampling);
    const std::uint64_t seed = c.seeds[task.run];
    const auto a = sample(ctx.model, ctx.schedule, grid, CfgPP{task.lambda}, c.condition, SolverSpec{}, seed);
    const auto b = sample(ctx.model, ctx.schedule, grid, scheduled_cfg_for(task.lambda, ctx.schedule, grid),
                          c.condition, SolverSpec{}, seed);
    double worst = 0.0;
    for (std::size_t s = 0; s < a.records.size(); ++s) {
      const Vec& xa = a.records[s].x;
      const Vec& xb = b.records[s].x;
      const double r = (xb - xa).norm() / std::max(1.0, xa.norm());
      if (r > worst) worst = r, worst_step[i] = s;
    }
    dev[i] = worst;
    wall[i] = seconds_since(start);
  });
  for (std::size_t r = 0; r < c.seeds.size(); ++r) {
    double total = 0.0;
    for (std::size_t i = 0; i < tasks.size(); ++i) total += tasks[i].run == r ? wall[i] : 0.0;
    ctx.manifest.runs.push_back({r, c.seeds[r], total});
  }

  CsvTable table({"lambda", "nfe", "seeds", "max_rel_dev", "pass"});
  LineChart chart{"CFG++ vs scheduled CFG", "lambda", "max relative deviation", true, {}};
  bool all = true;
  double overall = 0.0;
  for (int n : nfes) {
    Series series{"nfe " + std::to_string(n), {}, {}};
    for (double l : lambdas) {
      double worst = 0.0;
      for (std::size_t i = 0; i < tasks.size(); ++i) {
        if (tasks[i].lambda == l && tasks[i].nfe == n) worst = std::max(worst, dev[i]);
      }
      const bool pass = worst <= c.equiv_tolerance;
      all = all && pass;
      overall = std::max(overall, worst);
      table.add_row({l, int_cell(static_cast<std::uint64_t>(n)), int_cell(c.seeds.size()), worst, pass});
      series.x.push_back(l);
      series.y.push_back(std::max(worst, 1e-18));
    }
    chart.series.push_back(std::move(series));
  }
  ctx.out.write("equivalence.csv", table.str());
  ctx.out.chart("equivalence.svg", chart);
  std::string where;
  if (!all) {
    const auto it = std::max_element(dev.begin(), dev.end());
    const auto i = static_cast<std::size_t>(it - dev.begin());
    where = " (worst: lambda " + format_shortest(tasks[i].lambda) + ", nfe " + std::to_string(tasks[i].nfe) +
            ", seed " + std::to_string(c.seeds[tasks[i].run]) + ", step " + std::to_string(worst_step[i]) + ")";
  }
  ctx.manifest.summary.push_back("max_rel_dev = " + format_g17(overall) + (all ? " <= " : " > ") +
                                 format_shortest(c.equiv_tolerance) + ", " + (all ? "PASS" : "FAIL") + where);
  return all;
}

void run_inverse_problem(Context& ctx) {
  const auto& c = ctx.config;
  const auto grid = uniform_grid(ctx.schedule, c.nfe, GridDirection::kSampling);
  const LinearOperator op = c.inverse.build_operator(ctx.model.dim());
  std::vector<Vec> truths(c.seeds.size());
  std::vector<InverseReport> reps(c.seeds.size());
  per_seed(ctx, [&](std::size_t i, std::uint64_t seed) {
    truths[i] = prior_draw(ctx.model, c.condition, seed);
    Engine noise = make_engine({seed, 0, kMeasurementNoiseStep});
    const Measurement m = measure(op, truths[i], c.inverse.noise_std, noise);
    reps[i] = solve_inverse(ctx.model, ctx.schedule, grid, m, c.inverse.params, c.condition, seed, truths[i]);
  });
  const auto d = ctx.model.dim();
  std::vector<std::string> h{"run_id", "seed", "operator", "mode", "gamma"};
  append_header(h, coord_names("x_true", d));
  append_header(h, coord_names("x_hat", d));
  append_header(h, {"final_residual", "error_to_truth"});
  CsvTable table(h);
  CsvTable trace({"run_id", "seed", "step", "t", "residual"});
  LineChart chart{"measurement residual, " + std::string(to_string(c.inverse.params.mode)), "step",
                  "||y - A xhat||", true, {}};
  std::vector<double> errs;
  for (std::size_t i = 0; i < reps.size(); ++i) {
    const auto& r = reps[i];
    std::vector<Cell> row{int_cell(i), int_cell(c.seeds[i]), c.inverse.op,
                          std::string(to_string(c.inverse.params.mode)), c.inverse.params.gamma};
    append_vec(row, truths[i]);
    append_vec(row, r.trajectory.final_state());
    row.emplace_back(r.final_residual);
    row.emplace_back(r.error_to_truth.value_or(std::nan("")));
    errs.push_back(r.error_to_truth.value_or(0.0));
    table.add_row(std::move(row));
    Series series{"seed " + std::to_string(c.seeds[i]), {}, {}};
    for (std::size_t s = 0; s < r.residuals.size(); ++s) {
      trace.add_row({int_cell(i), int_cell(c.seeds[i]), int_cell(s),
                     int_cell(static_cast<std::uint64_t>(r.trajectory.records[s].t)), r.residuals[s]});
      series.x.push_back(static_cast<double>(s));
      series.y.push_back(r.residuals[s]);
    }
    if (chart.series.size() < 8) chart.series.push_back(std::move(series));
  }
  ctx.out.write("inverse.csv", table.str());
  ctx.out.write("inverse_residuals.csv", trace.str());
  ctx.out.chart("inverse.svg", chart);
  ctx.manifest.summary.push_back("inverse problems: " + std::to_string(reps.size()) + ", mean error to truth " +
                                 format_g17(mean_of(errs)));
}

void run_sweep(Context& ctx) {
  const auto& c = ctx.config;
  struct Task {
    GuidanceMode mode;
    int nfe;
    std::size_t run;
  };
  std::vector<GuidanceMode> modes;
  for (double w : c.sweep_omegas) modes.push_back(Cfg{w});
  for (double l : c.sweep_lambdas) modes.push_back(CfgPP{l});
  std::vector<Task> tasks;
  for (const auto& m : modes) {
    for (int n : c.sweep_nfes) {
      for (std::size_t r = 0; r < c.seeds.size(); ++r) tasks.push_back({m, n, r});
    }
  }
  struct Row {
    double l2 = 0.0, db = 0.0, proxy = 0.0;
    bool hit = false;
  };
  std::vector<Row> rows(tasks.size());
  std::vector<double> wall(tasks.size());
  parallel_for(tasks.size(), [&](std::size_t i) {
    const auto start = Clock::now();
    const auto& task = tasks[i];
    const std::uint64_t seed = c.seeds[task.run];
    const auto rep = roundtrip(prior_draw(ctx.model, c.condition, seed), ctx.model, ctx.schedule, task.nfe,
                               task.mode, c.condition);
    const auto grid = uniform_grid(ctx.schedule, task.nfe, GridDirection::kSampling);
    const Vec x = sample(ctx.model, ctx.schedule, grid, task.mode, c.condition, c.solver, seed).final_state();
    rows[i] = {rep.l2_error, rep.db, manifold_proxy(x, ctx.model), in_condition(ctx.model, c.condition, x)};
    wall[i] = seconds_since(start);
  });
  for (std::size_t r = 0; r < c.seeds.size(); ++r) {
    double total = 0.0;
    for (std::size_t i = 0; i < tasks.size(); ++i) total += tasks[i].run == r ? wall[i] : 0.0;
    ctx.manifest.runs.push_back({r, c.seeds[r], total});
  }

  CsvTable table({"mode", "scale", "nfe", "seed", "l2_error", "db", "sample_manifold_proxy", "sample_in_condition"});
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto& t = tasks[i];
    table.add_row({guidance_family(t.mode), guidance_scale(t.mode), int_cell(static_cast<std::uint64_t>(t.nfe)),
                   int_cell(c.seeds[t.run]), rows[i].l2, rows[i].db, rows[i].proxy, rows[i].hit});
  }
  CsvTable means({"mode", "scale", "nfe", "mean_l2_error", "mean_db", "mean_manifold_proxy", "in_condition_rate"});
  LineChart chart{"roundtrip error vs guidance scale", "scale", "mean l2 error", true, {}};
  for (const std::string family : {"cfg", "cfgpp"}) {
    for (int n : c.sweep_nfes) {
      Series series{family + " nfe " + std::to_string(n), {}, {}};
      for (const auto& m : modes) {
        if (guidance_family(m) != family) continue;
        std::vector<double> l2, db, proxy;
        double hit = 0.0;
        for (std::size_t i = 0; i < tasks.size(); ++i) {
          if (tasks[i].nfe != n || to_string(tasks[i].mode) != to_string(m)) continue;
          l2.push_back(rows[i].l2);
          db.push_back(rows[i].db);
          proxy.push_back(rows[i].proxy);
          hit += rows[i].hit;
        }
        means.add_row({family, guidance_scale(m), int_cell(static_cast<std::uint64_t>(n)), mean_of(l2), mean_of(db),
                       mean_of(proxy), hit / static_cast<double>(l2.size())});
        series.x.push_back(guidance_scale(m));
        series.y.push_back(mean_of(l2));
      }
      if (!series.x.empty()) chart.series.push_back(std::move(series));
    }
  }
  if (c.sweep_nfes.size() > 1) {
    LineChart by_nfe{"roundtrip error vs nfe", "nfe", "mean l2 error", true, {}};
    for (const auto& m : modes) {
      Series series{to_string(m), {}, {}};
      for (int n : c.sweep_nfes) {
        std::vector<double> l2;
        for (std::size_t i = 0; i < tasks.size(); ++i) {
          if (tasks[i].nfe == n && to_string(tasks[i].mode) == to_string(m)) l2.push_back(rows[i].l2);
        }
        series.x.push_back(n);
        series.y.push_back(mean_of(l2));
      }
      by_nfe.series.push_back(std::move(series));
    }
    ctx.out.chart("error_vs_nfe.svg", by_nfe);
  }
  ctx.out.write("sweep.csv", table.str());
  ctx.out.write("sweep_summary.csv", means.str());
  ctx.out.chart("sweep.svg", chart);
  ctx.manifest.summary.push_back("sweep: " + std::to_string(tasks.size()) + " runs");
}

void run_report(Context& ctx) {
  const auto& c = ctx.config;
  DirectionalOptions opt;
  opt.nfe = c.nfe;
  opt.seeds = c.report_seeds;
  const auto start = Clock::now();
  const auto rows = directional_report(ctx.model, ctx.schedule, opt);
  ctx.manifest.runs.push_back({0, 0, seconds_since(start)});
  CsvTable table({"metric", "cfg", "cfgpp", "cfg_mean", "cfgpp_mean", "diff_mean", "ci_low", "ci_high", "n",
                  "direction_holds"});
  for (const auto& r : rows) {
    table.add_row({r.metric, r.cfg_label, r.cfgpp_label, r.cfg_mean, r.cfgpp_mean, r.diff_mean, r.ci_low, r.ci_high,
                   int_cell(r.n), r.direction_holds});
    ctx.manifest.summary.push_back(r.metric + ": diff " + format_g17(r.diff_mean) + " [" + format_g17(r.ci_low) +
                                   ", " + format_g17(r.ci_high) + "] " +
                                   (r.direction_holds ? "CFG worse" : "CFG not worse"));
  }
  ctx.out.write("directional.csv", table.str());
}

}  // namespace

std::size_t thread_count(std::size_t tasks) {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("GLAB_THREADS"); env && *env) {
    long long cap = 0;
    try {
      cap = parse_int(env);
    } catch (const std::exception&) {
      throw ConfigError("GLAB_THREADS must be a positive integer, got '" + std::string(env) + "'");
    }
    if (cap < 1) throw ConfigError("GLAB_THREADS must be a positive integer, got '" + std::string(env) + "'");
    n = std::min(n, static_cast<std::size_t>(cap));
  }
  return std::max<std::size_t>(1, std::min(n, tasks));
}

std::string RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["experiment"] = experiment;
  j["config_hash"] = config_hash;
  j["version"] = version;
  j["started_utc"] = started_utc;
  j["finished_utc"] = finished_utc;
  j["wall_seconds"] = wall_seconds;
  j["threads"] = threads;
  j["status"] = status;
  j["runs"] = nlohmann::ordered_json::array();
  for (const auto& r : runs) {
    j["runs"].push_back({{"run_id", r.run_id}, {"seed", r.seed}, {"wall_seconds", r.wall_seconds}});
  }
  j["files"] = nlohmann::ordered_json::array();
  for (const auto& f : files) j["files"].push_back({{"name", f.name}, {"bytes", f.bytes}});
  j["summary"] = summary;
  return j.dump(2) + "\n";
}

RunManifest run_experiment(const ExperimentConfig& config) {
  const auto start = Clock::now();
  RunManifest manifest;
  manifest.experiment = to_string(config.experiment);
  manifest.config_hash = config_hash(config);
  manifest.started_utc = utc_now();
  manifest.threads = thread_count(std::numeric_limits<std::size_t>::max());

  Outputs out(config.output_dir, config.svg);
  out.write("config.cfg", serialize_config(config));
  Context ctx{config, config.build_schedule(), config.model.build(), out, manifest};
  bool ok = true;
  switch (config.experiment) {
    case ExperimentKind::kSample: ok = run_sample(ctx); break;
    case ExperimentKind::kInvert: run_invert(ctx); break;
    case ExperimentKind::kRoundtrip: run_roundtrip(ctx); break;
    case ExperimentKind::kEdit: run_edit(ctx); break;
    case ExperimentKind::kEquivCheck: ok = run_equiv_check(ctx); break;
    case ExperimentKind::kInverseProblem: run_inverse_problem(ctx); break;
    case ExperimentKind::kSweep: run_sweep(ctx); break;
    case ExperimentKind::kReport: run_report(ctx); break;
  }
  if (!ok) manifest.status = "invariant-failure";
  manifest.files = out.files();
  manifest.finished_utc = utc_now();
  manifest.wall_seconds = seconds_since(start);
  write_file_atomic(out.dir() / "manifest.json", manifest.to_json());
  if (!ok) throw InvariantError(manifest.summary.back());
  return manifest;
}

}  // namespace glab::harness
