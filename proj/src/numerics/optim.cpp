#include "gca/optim.hpp"

#include <algorithm>
#include <cmath>

#include "gca/errors.hpp"

namespace gca {

void AdamState::step(std::span<Parameter* const> params, double lr) {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be positive, got " + std::to_string(lr));
  if (m_.empty()) {
    for (const Parameter* p : params) {
      names_.push_back(p->name);
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  } else if (params.size() != m_.size()) {
    throw UsageError("Adam step called with " + std::to_string(params.size()) + " parameters, state holds " +
                     std::to_string(m_.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k]->name != names_[k] || !params[k]->value.same_shape(m_[k])) {
      throw UsageError("Adam state does not match parameter '" + params[k]->name + "'");
    }
  }

  ++steps_;
  const auto& [b1, b2, eps] = options_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(b1, t);
  const double c2 = 1.0 - std::pow(b2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    if (!p.trainable) continue;
    if (!p.grad.same_shape(p.value)) throw UsageError("parameter '" + p.name + "' has no gradient");
    Tensor& m = m_[k];
    Tensor& v = v_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p.value[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

std::vector<std::string> GradientCheckReport::failures() const {
  std::vector<std::string> out;
  for (const auto& e : entries)
    if (!e.passed) out.push_back(e.name);
  return out;
}

GradientCheckReport gradient_check(const LossBuilder& forward, std::span<Parameter* const> params,
                                   double tolerance, double step) {
  zero_grads(params);
  {
    Tape tape;
    tape.backward(forward(tape));
  }
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (const Parameter* p : params) analytic.push_back(p->grad);

  auto loss_at = [&]() {
    Tape tape;
    return forward(tape).value()[0];
  };

  GradientCheckReport report;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    if (!p.trainable) continue;
    double max_diff = 0.0;
    double max_scale = 0.0;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double saved = p.value[i];
      p.value[i] = saved + step;
      const double up = loss_at();
      p.value[i] = saved - step;
      const double down = loss_at();
      p.value[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[k][i];
      max_diff = std::max(max_diff, std::abs(a - numeric));
      max_scale = std::max(max_scale, std::abs(a) + std::abs(numeric));
    }
    GradientCheckEntry entry{p.name, max_diff / (max_scale + 1e-12), true};
    entry.passed = entry.relative_error < tolerance;
    report.max_relative_error = std::max(report.max_relative_error, entry.relative_error);
    report.passed = report.passed && entry.passed;
    report.entries.push_back(std::move(entry));
  }
  for (std::size_t k = 0; k < params.size(); ++k) params[k]->grad = analytic[k];
  return report;
}

}  // namespace gca
