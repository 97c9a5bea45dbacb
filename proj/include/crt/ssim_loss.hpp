#pragma once

// Differentiable twin of crt::ssim built from autodiff ops, used as a training loss.

#include "crt/metrics.hpp"
#include "crt/ops.hpp"

namespace crt {

/// Mean SSIM of two [..., H, W] tensors (e.g. [B, 3, H, W]) over all valid
/// window positions and all leading planes.
template <class T>
ad::Tensor<T> ssim_index(const ad::Tensor<T>& x, const ad::Tensor<T>& y, const SsimParams& p = {}) {
  using namespace ad;
  if (x.shape() != y.shape()) throw std::invalid_argument("ssim_index: shape mismatch " + to_string(x.shape()) + " vs " + to_string(y.shape()));
  p.validate();
  const auto w2 = p.window_2d();
  const std::vector<T> kernel(w2.begin(), w2.end());
  const std::size_t K = p.window;
  auto filter = [&](const Tensor<T>& t) { return correlate2d(t, kernel, K, K); };

  const auto mu_x = filter(x);
  const auto mu_y = filter(y);
  const auto mu_xx = mul(mu_x, mu_x);
  const auto mu_yy = mul(mu_y, mu_y);
  const auto mu_xy = mul(mu_x, mu_y);
  const auto var_x = sub(filter(mul(x, x)), mu_xx);
  const auto var_y = sub(filter(mul(y, y)), mu_yy);
  const auto cov = sub(filter(mul(x, y)), mu_xy);

  const T c1 = static_cast<T>(p.c1()), c2 = static_cast<T>(p.c2());
  const auto num = mul(add_scalar(scale(mu_xy, T(2)), c1), add_scalar(scale(cov, T(2)), c2));
  const auto den = mul(add_scalar(add(mu_xx, mu_yy), c1), add_scalar(add(var_x, var_y), c2));
  return mean(div(num, den));
}

/// 1 - SSIM(x, y).
template <class T>
ad::Tensor<T> ssim_loss(const ad::Tensor<T>& x, const ad::Tensor<T>& y, const SsimParams& p = {}) {
  return ad::add_scalar(ad::neg(ssim_index(x, y, p)), T(1));
}

}  // namespace crt
