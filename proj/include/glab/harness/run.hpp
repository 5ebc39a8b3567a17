#pragma once

#include <cstdint>
#include <exception>
#include <filesystem>
#include <string>
#include <thread>
#include <vector>

#include "glab/harness/config.hpp"

namespace glab::harness {

inline constexpr const char* kVersion = "1.0.0";

// GLAB_THREADS caps the worker count; never more workers than tasks.
std::size_t thread_count(std::size_t tasks);

// Runs fn(i) for i in [0, n). Results must be stored by index by the caller.
// The exception of the lowest failing index is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers = thread_count(n);
  std::vector<std::exception_ptr> errors(n);
  auto body = [&](std::size_t w) {
    for (std::size_t i = w; i < n; i += workers) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    body(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(body, w);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

struct FileEntry {
  std::string name;
  std::uintmax_t bytes = 0;
};

struct RunTiming {
  std::size_t run_id = 0;
  std::uint64_t seed = 0;
  double wall_seconds = 0.0;
};

struct RunManifest {
  std::string experiment;
  std::string config_hash;
  std::string version = kVersion;
  std::string started_utc;
  std::string finished_utc;
  double wall_seconds = 0.0;
  std::size_t threads = 1;
  std::string status = "ok";  // ok | invariant-failure
  std::vector<RunTiming> runs;
  std::vector<FileEntry> files;
  std::vector<std::string> summary;

  std::string to_json() const;
};

// Writes every output plus manifest.json under config.output_dir.
// Throws InvariantError (after the outputs are written) when an invariant
// check fails, IoError on filesystem failures.
RunManifest run_experiment(const ExperimentConfig& config);

}  // namespace glab::harness
