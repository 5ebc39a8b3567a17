#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Core>

namespace glab {

// Random streams are keyed by (master seed, run index, step index) rather
// than drawn sequentially from one engine, so a run's noise does not depend
// on how runs are scheduled across threads.
struct StreamKey {
  std::uint64_t seed = 0;
  std::uint64_t run = 0;
  std::uint64_t step = 0;
};

using Engine = std::mt19937_64;

inline Engine make_engine(StreamKey key) {
  const auto lo = [](std::uint64_t v) { return static_cast<std::uint32_t>(v); };
  const auto hi = [](std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); };
  std::seed_seq seq{lo(key.seed), hi(key.seed), lo(key.run),
                    hi(key.run),  lo(key.step), hi(key.step)};
  return Engine(seq);
}

// Step indices reserved for non-step draws within a run.
inline constexpr std::uint64_t kInitialNoiseStep = ~std::uint64_t{0};
inline constexpr std::uint64_t kPriorSampleStep = ~std::uint64_t{0} - 1;
inline constexpr std::uint64_t kMeasurementNoiseStep = ~std::uint64_t{0} - 2;

template <typename Scalar = double>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> standard_normal(Engine& engine, Eigen::Index dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out(dim);
  for (Eigen::Index i = 0; i < dim; ++i) out[i] = static_cast<Scalar>(normal(engine));
  return out;
}

}  // namespace glab
