#pragma once

// The finite-difference suites behind `crt gradcheck`: every autodiff op, the
// differentiable SSIM, the RoPE/LSA building blocks, and both adversarial
// losses through the toy model. All in double precision.

#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "crt/gradcheck.hpp"
#include "crt/losses.hpp"
#include "crt/model.hpp"
#include "crt/ops.hpp"
#include "crt/ssim_loss.hpp"

namespace crt {

struct GradCheckCase {
  std::string suite;
  std::string name;
  double tolerance = 0;
  ad::GradCheckResult result;

  bool passed() const { return result.passed(tolerance); }
};

inline constexpr double kOpGradTolerance = 1e-4;
inline constexpr double kModelGradTolerance = 1e-3;

namespace suite_detail {

inline ad::Tensor<double> uniform_tensor(ad::Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  CounterRng rng(seed, 0x6C);
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return ad::Tensor<double>(std::move(shape), std::move(v));
}

// Reduces any output to a scalar with fixed pseudo-random weights so every
// output element's gradient is exercised.
inline ad::Tensor<double> weighted_sum(const ad::Tensor<double>& y, std::uint64_t seed) {
  return ad::sum(ad::mul(y, uniform_tensor(y.shape(), seed, -1.0, 1.0)));
}

}  // namespace suite_detail

/// Runs all suites; writes one line per case to `out` when given.
inline std::vector<GradCheckCase> run_gradcheck_suites(std::ostream* out = nullptr) {
  using namespace ad;
  using TD = Tensor<double>;
  using suite_detail::uniform_tensor;
  std::vector<GradCheckCase> cases;
  auto report = [&](GradCheckCase c) {
    if (out) {
      *out << (c.passed() ? "ok   " : "FAIL ") << c.suite << "/" << c.name << " max_rel_error=" << c.result.max_rel_error
           << " (tol " << c.tolerance << ", " << c.result.checked << " probes)";
      if (!c.result.message.empty()) *out << " " << c.result.message;
      *out << "\n";
    }
    cases.push_back(std::move(c));
  };
  auto op = [&](const std::string& name, const std::function<TD(const TD&)>& f, const TD& point) {
    report({"ops", name, kOpGradTolerance,
            grad_check([&](const TD& x) { return suite_detail::weighted_sum(f(x), 999); }, point, 1e-6)});
  };

  const TD a = uniform_tensor({2, 3, 4}, 11), other = uniform_tensor({2, 3, 4}, 12);
  const TD row = uniform_tensor({4}, 13), col = uniform_tensor({3, 1}, 14);
  const TD positive = uniform_tensor({2, 3, 4}, 15, 0.5, 2.0);
  op("add", [&](const TD& x) { return add(x, other); }, a);
  op("add broadcast", [&](const TD& x) { return add(other, x); }, col);
  op("sub", [&](const TD& x) { return sub(other, x); }, a);
  op("mul", [&](const TD& x) { return mul(x, other); }, a);
  op("mul broadcast", [&](const TD& x) { return mul(other, x); }, row);
  op("div numerator", [&](const TD& x) { return div(x, positive); }, a);
  op("div denominator", [&](const TD& x) { return div(other, x); }, positive);
  op("scale", [](const TD& x) { return scale(x, 2.5); }, a);
  op("neg", [](const TD& x) { return neg(x); }, a);
  op("add_scalar", [](const TD& x) { return add_scalar(x, 0.7); }, a);
  op("exp", [](const TD& x) { return exp(x); }, a);
  op("log", [](const TD& x) { return log(x); }, positive);
  op("sigmoid", [](const TD& x) { return sigmoid(x); }, a);
  op("log_sigmoid", [](const TD& x) { return log_sigmoid(scale(x, 8.0)); }, a);
  op("gelu", [](const TD& x) { return gelu(x); }, a);
  op("abs", [](const TD& x) { return abs(x); }, positive);
  op("matmul", [](const TD& x) { return matmul(x, uniform_tensor({4, 5}, 16)); }, a);
  op("matmul rhs broadcast", [](const TD& w) { return matmul(uniform_tensor({2, 2, 3, 4}, 19), w); },
     uniform_tensor({4, 2}, 20));
  op("transpose", [](const TD& x) { return transpose(x, 0, 2); }, a);
  op("permute", [](const TD& x) { return permute(x, {1, 2, 0}); }, a);
  op("reshape", [](const TD& x) { return reshape(x, {6, 4}); }, a);
  op("concat", [&](const TD& x) { return concat<double>({x, other, x}, 1); }, a);
  op("slice", [](const TD& x) { return slice(x, 2, 1, 3); }, a);
  op("sum", [](const TD& x) { return sum(x); }, a);
  op("mean axis", [](const TD& x) { return mean(x, 1, true); }, a);
  op("softmax", [](const TD& x) { return softmax(x); }, a);
  op("layer_norm", [&](const TD& x) { return layer_norm(x, row, uniform_tensor({4}, 21)); }, a);
  op("layer_norm scale", [&](const TD& g) { return layer_norm(a, g, uniform_tensor({4}, 21)); }, row);
  const TD kernel = uniform_tensor({3, 2}, 22);
  op("correlate2d",
     [&](const TD& x) { return correlate2d(x, std::vector<double>(kernel.data().begin(), kernel.data().end()), 3, 2); },
     uniform_tensor({2, 5, 6}, 23));

  // Attention building blocks.
  const auto [cos_t, sin_t] = rope_tables<double>(grid_positions(2, 3), 8);
  op("rope_rotate", [&](const TD& x) { return rope_rotate(x, cos_t, sin_t); }, uniform_tensor({1, 2, 6, 8}, 30));
  const TD keys = uniform_tensor({1, 2, 6, 8}, 31), tau = uniform_tensor({2}, 32, 0.5, 2.0);
  op("lsa_weights", [&](const TD& q) { return lsa_weights(q, keys, tau); }, uniform_tensor({1, 2, 6, 8}, 33));

  // SSIM loss: finite differences at 1e-4 (roundoff dominates at smaller steps).
  {
    const TD target = uniform_tensor({1, 3, 16, 16}, 40, 0.0, 1.0);
    report({"ssim", "ssim_loss", kModelGradTolerance,
            grad_check([&](const TD& x) { return ssim_loss(target, x); }, uniform_tensor({1, 3, 16, 16}, 41, 0.0, 1.0),
                       1e-4)});
  }

  // Both losses through the toy model, weights scaled up so every path matters.
  const auto c = ModelConfig::toy();
  auto make_params = [&](std::uint64_t seed) {
    auto ps = init_params<double>(c, seed);
    for (auto& [name, t] : ps.tensors)
      if (name.ends_with(".weight"))
        for (auto& v : t.mutable_data()) v *= 5.0;
    return ps;
  };
  {
    auto ps = make_params(21);
    ps.set_requires_grad("disc.", false);
    const TD x = uniform_tensor({1, 3, 32, 32}, 50, 0.0, 1.0), clean = uniform_tensor({1, 3, 32, 32}, 51, 0.0, 1.0);
    std::vector<NamedTensor> leaves;
    for (const auto& [name, t] : ps.tensors)
      if (name.starts_with("gen.")) leaves.push_back({name, t});
    const LossWeights w{10.0, 1.0, 0.5};
    report({"losses", "generator (L1 + SSIM + adversarial)", kModelGradTolerance,
            grad_check_leaves([&] { return generator_loss(c, ps, generator_forward(c, ps, x), clean, w).total; },
                              leaves, 1e-3, 3, 52)});
  }
  {
    auto ps = make_params(31);
    const TD clean = uniform_tensor({2, 3, 32, 32}, 60, 0.0, 1.0), fake = uniform_tensor({2, 3, 32, 32}, 61, 0.0, 1.0);
    std::vector<NamedTensor> leaves;
    for (const auto& [name, t] : ps.tensors)
      if (name.starts_with("disc.")) leaves.push_back({name, t});
    report({"losses", "discriminator (binary cross-entropy)", kModelGradTolerance,
            grad_check_leaves([&] { return discriminator_loss(c, ps, clean, fake); }, leaves, 1e-5, 3, 62)});
  }
  return cases;
}

}  // namespace crt
