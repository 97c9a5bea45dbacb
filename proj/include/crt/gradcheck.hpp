#pragma once

// Finite-difference verification of reverse-mode gradients (double precision).

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "crt/rng.hpp"
#include "crt/tensor.hpp"

namespace crt::ad {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::string worst_name;
  bool finite = true;
  std::size_t checked = 0;
  std::string message;

  bool passed(double tolerance) const { return finite && max_rel_error < tolerance; }
};

namespace detail {

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

inline void validate_eps(double eps) {
  if (!(eps >= 1e-6 && eps <= 1e-2)) throw std::invalid_argument("grad_check: eps must lie in [1e-6, 1e-2]");
}

inline void record(GradCheckResult& r, double analytic, double numeric, std::size_t index, const std::string& name) {
  ++r.checked;
  if (!std::isfinite(analytic) || !std::isfinite(numeric)) {
    if (r.finite) {
      r.finite = false;
      r.worst_index = index;
      r.worst_name = name;
      r.message = "non-finite gradient at " + (name.empty() ? std::string("index ") : name + "[") +
                  std::to_string(index) + (name.empty() ? "" : "]");
    }
    return;
  }
  const double e = relative_error(analytic, numeric);
  if (e > r.max_rel_error && r.finite) {
    r.max_rel_error = e;
    r.worst_index = index;
    r.worst_name = name;
  }
}

}  // namespace detail

/// Compares the reverse-mode gradient of a scalar function at `point` with
/// central differences (f(x+eps e_i) - f(x-eps e_i)) / 2eps for every component.
inline GradCheckResult grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                                  const Tensor<double>& point, double eps = 1e-6) {
  detail::validate_eps(eps);
  Tensor<double> x(point.shape(), std::vector<double>(point.data().begin(), point.data().end()), true);
  backward(f(x));
  std::vector<double> analytic(x.numel(), 0.0);
  if (x.has_grad()) analytic.assign(x.grad().begin(), x.grad().end());

  GradCheckResult result;
  NoGradGuard no_grad;
  std::vector<double> probe(point.data().begin(), point.data().end());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double fp = f(Tensor<double>(point.shape(), probe)).item();
    probe[i] = orig - eps;
    const double fm = f(Tensor<double>(point.shape(), probe)).item();
    probe[i] = orig;
    detail::record(result, analytic[i], (fp - fm) / (2 * eps), i, "");
  }
  return result;
}

struct NamedTensor {
  std::string name;
  Tensor<double> tensor;
};

/// Same check against a set of leaf tensors captured by `f`. Perturbs the leaves
/// in place (restoring them afterwards); at most `samples_per_tensor` components
/// per tensor are probed, chosen by a seeded stream.
inline GradCheckResult grad_check_leaves(const std::function<Tensor<double>()>& f, std::vector<NamedTensor> leaves,
                                         double eps, std::size_t samples_per_tensor, std::uint64_t seed = 0) {
  detail::validate_eps(eps);
  for (auto& l : leaves) {
    l.tensor.zero_grad();
    l.tensor.set_requires_grad(true);
  }
  backward(f());

  GradCheckResult result;
  NoGradGuard no_grad;
  CounterRng rng(seed);
  for (auto& l : leaves) {
    const std::vector<double> analytic =
        l.tensor.has_grad() ? std::vector<double>(l.tensor.grad().begin(), l.tensor.grad().end())
                            : std::vector<double>(l.tensor.numel(), 0.0);
    const std::size_t n = l.tensor.numel();
    std::vector<std::size_t> indices;
    if (n <= samples_per_tensor) {
      for (std::size_t i = 0; i < n; ++i) indices.push_back(i);
    } else {
      for (std::size_t s = 0; s < samples_per_tensor; ++s) indices.push_back(rng.below(n));
    }
    auto values = l.tensor.mutable_data();
    for (std::size_t i : indices) {
      const double orig = values[i];
      values[i] = orig + eps;
      const double fp = f().item();
      values[i] = orig - eps;
      const double fm = f().item();
      values[i] = orig;
      detail::record(result, analytic[i], (fp - fm) / (2 * eps), i, l.name);
    }
    l.tensor.zero_grad();
  }
  return result;
}

}  // namespace crt::ad
