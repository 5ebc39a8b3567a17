#pragma once

#include <stdexcept>
#include <string>

namespace glab {

// Invalid argument or configuration value passed to a library routine.
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// A quantity that must be divided by vanished (alpha_bar == 0, sigma == 0).
class SingularityError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// A guidance-equivalence step where xi_t is numerically zero.
class DegenerateStepError : public std::domain_error {
 public:
  DegenerateStepError(const std::string& what, std::size_t step)
      : std::domain_error(what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

// Error raised inside a sampling loop, annotated with the failing step.
class StepError : public std::runtime_error {
 public:
  StepError(const std::string& what, std::size_t step)
      : std::runtime_error("step " + std::to_string(step) + ": " + what),
        step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

// A hard numerical invariant did not hold (harness exit code 3).
class InvariantError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace glab
