#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gca/tape.hpp"

namespace gca {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias correction. Moments are bound positionally to the parameter
// list seen on the first step; later steps must pass the same list.
class AdamState {
 public:
  explicit AdamState(AdamOptions options = {}) : options_(options) {}

  void step(std::span<Parameter* const> params, double lr);

  std::uint64_t step_count() const noexcept { return steps_; }
  const AdamOptions& options() const noexcept { return options_; }
  const std::vector<Tensor>& first_moments() const noexcept { return m_; }
  const std::vector<Tensor>& second_moments() const noexcept { return v_; }

 private:
  AdamOptions options_;
  std::uint64_t steps_ = 0;
  std::vector<std::string> names_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

struct GradientCheckEntry {
  std::string name;
  double relative_error = 0.0;
  bool passed = true;
};

struct GradientCheckReport {
  std::vector<GradientCheckEntry> entries;
  double max_relative_error = 0.0;
  bool passed = true;

  std::vector<std::string> failures() const;
};

using LossBuilder = std::function<Var(Tape&)>;

// Compares reverse-mode gradients of `forward` against central differences
// for every trainable parameter in `params`. Per parameter, the error is
// max_i |a_i - n_i| / (max_i (|a_i| + |n_i|) + 1e-12).
GradientCheckReport gradient_check(const LossBuilder& forward, std::span<Parameter* const> params,
                                   double tolerance, double step = 1e-6);

}  // namespace gca
