#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "glab/errors.hpp"
#include "glab/harness/config.hpp"
#include "glab/harness/run.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kInvariantFailure = 3;
constexpr int kIoError = 4;

}  // namespace

int main(int argc, char** argv) {
  using namespace glab;
  using namespace glab::harness;

  CLI::App app{"guidance lab: CFG and CFG++ experiments on an analytic Gaussian-mixture score"};
  app.set_version_flag("--version", std::string(kVersion));
  std::string experiment;
  std::string config_path;
  std::optional<std::string> solver, guidance, out_dir, ancestral_noise, seeds;
  std::optional<int> nfe;
  std::optional<std::uint64_t> seed;
  app.add_option("experiment", experiment,
                 "sample | invert | roundtrip | edit | equiv-check | inverse-problem | sweep | report")
      ->required();
  app.add_option("--config", config_path, "dotted key = value file, or its JSON mirror");
  app.add_option("--solver", solver, "ddim | euler | euler-ancestral | dpmpp-2m | dpmpp-2s");
  app.add_option("--guidance", guidance, "uncond | cfg:<omega> | cfgpp:<lambda>");
  app.add_option("--nfe", nfe, "number of solver steps");
  app.add_option("--seed", seed, "single seed, replaces the seed list");
  app.add_option("--seeds", seeds, "seed list: 0,1,2 or 0..99");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--ancestral-noise", ancestral_noise, "paper | sigma_up");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    ExperimentConfig config = config_path.empty() ? parse_config("") : load_config(config_path);
    set_config_value(config, "experiment", experiment);
    if (solver) set_config_value(config, "solver.kind", *solver);
    if (guidance) set_config_value(config, "guidance", *guidance);
    if (nfe) set_config_value(config, "grid.nfe", std::to_string(*nfe));
    if (seeds) set_config_value(config, "seeds", *seeds);
    if (seed) set_config_value(config, "seeds", std::to_string(*seed));
    if (out_dir) set_config_value(config, "output.dir", *out_dir);
    if (ancestral_noise) set_config_value(config, "solver.ancestral_noise", *ancestral_noise);
    // overrides can break cross-key constraints, so re-parse the canonical text
    config = parse_config(serialize_config(config));
    for (const auto& w : validate_guidance(config.guidance)) std::cerr << "warning: " << w << "\n";

    const RunManifest manifest = run_experiment(config);
    for (const auto& line : manifest.summary) std::cout << line << "\n";
    std::cout << "wrote " << manifest.files.size() << " files to " << config.output_dir << " (config "
              << manifest.config_hash << ")\n";
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const ParameterError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const InvariantError& e) {
    std::cerr << "invariant failure: " << e.what() << "\n";
    return kInvariantFailure;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIoError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvariantFailure;
  }
}
