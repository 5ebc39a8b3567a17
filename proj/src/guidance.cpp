#include "glab/guidance.hpp"

#include <cmath>

#include "glab/text.hpp"

namespace glab {

std::string to_string(const GuidanceMode& mode) {
  struct Visitor {
    std::string operator()(const Uncond&) const { return "uncond"; }
    std::string operator()(const Cfg& g) const { return "cfg:" + format_shortest(g.omega); }
    std::string operator()(const CfgPP& g) const { return "cfgpp:" + format_shortest(g.lambda); }
    std::string operator()(const ScheduledCfg& g) const {
      return "scheduled[" + std::to_string(g.omega_t.size()) + " steps]";
    }
  };
  return std::visit(Visitor{}, mode);
}

GuidanceMode parse_guidance(const std::string& text) {
  const std::string trimmed = trim(text);
  if (trimmed == "uncond") return Uncond{};
  const auto colon = trimmed.find(':');
  if (colon == std::string::npos) {
    throw ParameterError("guidance must be 'uncond', 'cfg:<omega>' or 'cfgpp:<lambda>'; got '" +
                         trimmed + "'");
  }
  const std::string kind = trimmed.substr(0, colon);
  const double scale = parse_double(trimmed.substr(colon + 1));
  GuidanceMode mode;
  if (kind == "cfg") {
    mode = Cfg{scale};
  } else if (kind == "cfgpp") {
    mode = CfgPP{scale};
  } else {
    throw ParameterError("unknown guidance kind '" + kind + "'");
  }
  validate_guidance(mode);
  return mode;
}

std::vector<std::string> validate_guidance(const GuidanceMode& mode) {
  std::vector<std::string> warnings;
  if (const auto* g = std::get_if<Cfg>(&mode)) {
    if (!std::isfinite(g->omega) || g->omega < 0.0) {
      throw ParameterError("cfg scale omega must be finite and >= 0");
    }
  } else if (const auto* g = std::get_if<CfgPP>(&mode)) {
    if (!std::isfinite(g->lambda) || g->lambda < 0.0 || g->lambda > 2.0) {
      throw ParameterError("cfgpp scale lambda must lie in [0, 2]");
    }
    if (g->lambda > 1.0) {
      warnings.push_back("cfgpp lambda = " + format_shortest(g->lambda) +
                         " > 1 extrapolates beyond the conditional estimate");
    }
  } else if (const auto* g = std::get_if<ScheduledCfg>(&mode)) {
    for (double w : g->omega_t) {
      if (!std::isfinite(w)) throw ParameterError("scheduled omega_t must be finite");
    }
  }
  return warnings;
}

StepGuidance guidance_at_step(const GuidanceMode& mode, std::size_t step) {
  struct Visitor {
    std::size_t step;
    StepGuidance operator()(const Uncond&) const { return {StepGuidance::Role::kUncond, 0.0}; }
    StepGuidance operator()(const Cfg& g) const { return {StepGuidance::Role::kCfg, g.omega}; }
    StepGuidance operator()(const CfgPP& g) const {
      return {StepGuidance::Role::kCfgPP, g.lambda};
    }
    StepGuidance operator()(const ScheduledCfg& g) const {
      if (step >= g.omega_t.size()) {
        throw ParameterError("scheduled guidance has " + std::to_string(g.omega_t.size()) +
                             " steps; step " + std::to_string(step) + " requested");
      }
      return {StepGuidance::Role::kCfg, g.omega_t[step]};
    }
  };
  return std::visit(Visitor{step}, mode);
}

ScheduleEquivalence equivalent_omega_schedule(double lambda, const NoiseSchedule& schedule,
                                              const TimestepGrid& grid) {
  if (grid.direction != GridDirection::kSampling) {
    throw ParameterError("equivalent_omega_schedule needs a sampling grid");
  }
  ScheduleEquivalence out;
  const auto steps = static_cast<std::size_t>(grid.nfe());
  out.gamma_t.reserve(steps);
  out.xi_t.reserve(steps);
  out.omega_t.reserve(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const double a_t = schedule.alpha_bar(grid.indices[i]);
    const double a_prev = schedule.alpha_bar(grid.indices[i + 1]);
    const double gamma = std::sqrt(a_prev) * std::sqrt(1.0 - a_t) / std::sqrt(a_t);
    const double xi = std::sqrt(1.0 - a_prev) - gamma;
    if (std::abs(xi) < 1e-14) {
      throw DegenerateStepError("xi_t vanishes at step " + std::to_string(i), i);
    }
    // xi_t < 0 whenever the step lowers the noise level, which every
    // sampling step does; a positive value would flip the guidance sign.
    if (xi > 0.0) {
      throw InvariantError("xi_t > 0 at step " + std::to_string(i) +
                           "; equivalent omega would be negative");
    }
    out.gamma_t.push_back(gamma);
    out.xi_t.push_back(xi);
    out.omega_t.push_back(-lambda * gamma / xi);
  }
  return out;
}

}  // namespace glab
