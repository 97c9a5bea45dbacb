#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "crt/tensor.hpp"

namespace crt::ad {

template <class T>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
};

struct AdamStepResult {
  bool applied = true;
  std::string reason;
};

/// Bias-corrected Adam update using each parameter's accumulated gradient
/// multiplied by `grad_scale` (1/accumulation-steps for accumulated gradients).
/// A parameter without a gradient buffer is treated as having zero gradient.
/// Any non-finite gradient skips the whole step and leaves state untouched.
template <class T>
AdamStepResult adam_step(std::span<Tensor<T>> params, AdamState<T>& state, double lr, double grad_scale = 1.0) {
  if (!(lr > 0)) throw std::invalid_argument("adam_step: learning rate must be positive");
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.numel(), T(0));
      state.second_moment.emplace_back(p.numel(), T(0));
    }
  }
  if (state.first_moment.size() != params.size()) throw std::invalid_argument("adam_step: state does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.first_moment[i].size() != params[i].numel()) {
      throw std::invalid_argument("adam_step: moment buffer " + std::to_string(i) + " does not match its parameter");
    }
    for (std::size_t j = 0; j < params[i].grad().size(); ++j) {
      if (!std::isfinite(params[i].grad()[j])) {
        return {false, "non-finite gradient in parameter " + std::to_string(i) + " at element " + std::to_string(j)};
      }
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    auto values = params[i].mutable_data();
    const auto grad = params[i].grad();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const T g = grad.empty() ? T(0) : static_cast<T>(grad[j] * grad_scale);
      m[j] = b1 * m[j] + (T(1) - b1) * g;
      v[j] = b2 * v[j] + (T(1) - b2) * g * g;
      const double m_hat = static_cast<double>(m[j]) / c1;
      const double v_hat = static_cast<double>(v[j]) / c2;
      values[j] = static_cast<T>(static_cast<double>(values[j]) - lr * m_hat / (std::sqrt(v_hat) + state.eps));
    }
  }
  return {};
}

}  // namespace crt::ad
