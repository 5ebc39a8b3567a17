#include "glab/solvers.hpp"

namespace glab {

std::string_view to_string(SolverKind kind) {
  switch (kind) {
    case SolverKind::kDdim:
      return "ddim";
    case SolverKind::kEuler:
      return "euler";
    case SolverKind::kEulerAncestral:
      return "euler-ancestral";
    case SolverKind::kDpmpp2m:
      return "dpmpp-2m";
    case SolverKind::kDpmpp2s:
      return "dpmpp-2s";
  }
  return "unknown";
}

SolverKind parse_solver_kind(std::string_view text) {
  for (auto kind : {SolverKind::kDdim, SolverKind::kEuler, SolverKind::kEulerAncestral,
                    SolverKind::kDpmpp2m, SolverKind::kDpmpp2s}) {
    if (to_string(kind) == text) return kind;
  }
  throw ParameterError("unknown solver kind '" + std::string(text) + "'");
}

std::string_view to_string(AncestralNoise noise) {
  return noise == AncestralNoise::kPaper ? "paper" : "sigma_up";
}

AncestralNoise parse_ancestral_noise(std::string_view text) {
  if (text == "paper") return AncestralNoise::kPaper;
  if (text == "sigma_up") return AncestralNoise::kSigmaUp;
  throw ParameterError("ancestral noise must be 'paper' or 'sigma_up'");
}

}  // namespace glab
