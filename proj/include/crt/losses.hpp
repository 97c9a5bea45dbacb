#pragma once

// Composite generator objective (L1 + SSIM + adversarial) and the
// discriminator's binary cross-entropy. Discriminator outputs enter as logits
// so log D and log(1 - D) stay finite when D saturates.

#include <cmath>
#include <sstream>
#include <string>

#include "crt/error.hpp"
#include "crt/model.hpp"
#include "crt/ssim_loss.hpp"

namespace crt {

struct LossWeights {
  double l1 = 10.0;
  double ssim = 1.0;
  double adv = 0.05;

  void validate() const {
    if (!(l1 >= 0 && ssim >= 0 && adv >= 0)) throw UsageError("loss weights must be >= 0");
  }
};

enum class AdversarialMode {
  non_saturating,  // G minimizes -log D(G(x'))
  minimax,         // G minimizes log(1 - D(G(x')))
};

template <class T>
struct GeneratorLoss {
  ad::Tensor<T> total;
  double l1 = 0;
  double ssim = 0;  // 1 - SSIM
  double adv = 0;
  double total_value = 0;

  std::string breakdown() const {
    std::ostringstream os;
    os << "l1=" << l1 << " ssim=" << ssim << " adv=" << adv << " total=" << total_value;
    return os.str();
  }
};

/// Loss from already computed tensors: restored and clean images [B, 3, H, W]
/// and the discriminator logits on the restored images [B].
template <class T>
GeneratorLoss<T> composite_generator_loss(const ad::Tensor<T>& restored, const ad::Tensor<T>& clean,
                                          const ad::Tensor<T>& fake_logits, const LossWeights& w,
                                          AdversarialMode mode = AdversarialMode::non_saturating) {
  w.validate();
  using namespace ad;
  const auto l1 = mean(abs(sub(clean, restored)));
  const auto structural = ssim_loss(clean, restored);
  const auto adv = mode == AdversarialMode::non_saturating ? neg(mean(log_sigmoid(fake_logits)))
                                                           : mean(log_sigmoid(neg(fake_logits)));
  const auto total = add(add(scale(l1, static_cast<T>(w.l1)), scale(structural, static_cast<T>(w.ssim))),
                         scale(adv, static_cast<T>(w.adv)));
  GeneratorLoss<T> out{total, static_cast<double>(l1.item()), static_cast<double>(structural.item()),
                       static_cast<double>(adv.item()), static_cast<double>(total.item())};
  if (!std::isfinite(out.total_value) || !std::isfinite(out.l1) || !std::isfinite(out.ssim) || !std::isfinite(out.adv)) {
    throw NumericalError("non-finite generator loss: " + out.breakdown());
  }
  return out;
}

/// -[log D(x) + log(1 - D(x_hat))] averaged over the batch.
template <class T>
ad::Tensor<T> composite_discriminator_loss(const ad::Tensor<T>& real_logits, const ad::Tensor<T>& fake_logits) {
  using namespace ad;
  const auto loss = neg(add(mean(log_sigmoid(real_logits)), mean(log_sigmoid(neg(fake_logits)))));
  if (!std::isfinite(static_cast<double>(loss.item()))) {
    throw NumericalError("non-finite discriminator loss " + std::to_string(static_cast<double>(loss.item())));
  }
  return loss;
}

/// Runs D on the restored images and evaluates the generator objective.
template <class T>
GeneratorLoss<T> generator_loss(const ModelConfig& c, const ParameterSet<T>& ps, const ad::Tensor<T>& restored,
                                const ad::Tensor<T>& clean, const LossWeights& w,
                                AdversarialMode mode = AdversarialMode::non_saturating) {
  return composite_generator_loss(restored, clean, discriminator_logits(c, ps, restored), w, mode);
}

/// Discriminator loss on clean images and restored images; the restored
/// tensor is detached so no gradient reaches the generator.
template <class T>
ad::Tensor<T> discriminator_loss(const ModelConfig& c, const ParameterSet<T>& ps, const ad::Tensor<T>& clean,
                                 const ad::Tensor<T>& restored) {
  return composite_discriminator_loss(discriminator_logits(c, ps, clean), discriminator_logits(c, ps, restored.detach()));
}

}  // namespace crt
