#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "glab/guidance.hpp"
#include "glab/inverse_problems.hpp"
#include "glab/schedule.hpp"
#include "glab/score_model.hpp"
#include "glab/solvers.hpp"

namespace glab::harness {

// Exit code 2. line() is 0 for errors not tied to a line.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& what, int line = 0)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

enum class ExperimentKind { kSample, kInvert, kRoundtrip, kEdit, kEquivCheck, kInverseProblem, kSweep, kReport };

std::string to_string(ExperimentKind kind);
ExperimentKind parse_experiment_kind(const std::string& text);

struct ModelSpec {
  std::string preset = "ring";  // ring | custom
  int components = 8;
  double radius = 1.0;
  double component_std = 0.1;
  // custom: one row per component, comma-separated coordinates
  std::vector<std::vector<double>> means;
  std::vector<double> weights;  // empty = uniform

  GaussianMixture<double> build() const;
};

struct InverseSpec {
  std::string op = "identity";  // identity | mask:1010 | matrix:a,b;c,d
  double noise_std = 0.0;
  DisParams params;

  LinearOperator build_operator(Eigen::Index dim) const;
};

struct ExperimentConfig {
  ExperimentKind experiment = ExperimentKind::kSample;
  ScheduleKind schedule_kind = ScheduleKind::kVpLinear;
  int train_steps = 1000;
  ScheduleParams schedule_params;
  ModelSpec model;
  int nfe = 50;
  SolverSpec solver;
  GuidanceMode guidance = CfgPP{0.6};
  Condition condition = ClassCondition{0};
  Condition edit_target = ClassCondition{1};
  std::vector<std::uint64_t> seeds{0};
  std::string output_dir = "out";
  bool svg = true;
  InverseSpec inverse;
  std::vector<double> sweep_lambdas{0.2, 0.4, 0.6, 0.8, 1.0};
  std::vector<double> sweep_omegas{2.0, 5.0, 7.5, 9.0, 12.5};
  std::vector<int> sweep_nfes{50};
  double equiv_tolerance = 1e-9;
  std::size_t report_seeds = 100;

  NoiseSchedule build_schedule() const;
};

/// Flat "dotted.key = value" text; '#' starts a comment.
ExperimentConfig parse_config(const std::string& text);
/// JSON mirror: nested objects flatten to dotted keys.
ExperimentConfig parse_config_json(const std::string& text);
/// Dispatches on content: a leading '{' means JSON.
ExperimentConfig parse_config_any(const std::string& text);
ExperimentConfig load_config(const std::string& path);

/// Sets one dotted key; throws ConfigError naming the key.
void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value, int line = 0);

/// Canonical text: every key, fixed order, shortest round-trip numbers.
std::string serialize_config(const ExperimentConfig& config);
/// FNV-1a 64 over the canonical text minus output.dir, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

// Every accepted key in canonical order.
const std::vector<std::string>& config_keys();

std::vector<std::uint64_t> parse_seed_list(const std::string& text);

}  // namespace glab::harness
