#include "splq/loss.hpp"

#include "splq/error.hpp"
#include "splq/image_metrics.hpp"

#include <cmath>

namespace splq {

ReconLoss recon_loss(const Image &rendered, const Image &target, double w_ssim) {
  if (!rendered.same_shape(target)) throw ContractError("recon_loss: image shapes differ");
  if (!(w_ssim >= 0.0 && w_ssim <= 1.0)) throw ArgumentError("recon_loss: w_ssim outside [0, 1]");
  ReconLoss out;
  out.grad = Image(rendered.width, rendered.height);
  const double n = static_cast<double>(rendered.data.size());
  const double l1_weight = (1.0 - w_ssim) / n;
  double l1 = 0.0;
  for (std::size_t i = 0; i < rendered.data.size(); ++i) {
    const double d = rendered.data[i] - target.data[i];
    l1 += std::abs(d);
    out.grad.data[i] = d > 0.0 ? l1_weight : (d < 0.0 ? -l1_weight : 0.0);
  }
  out.value = (1.0 - w_ssim) * l1 / n;
  if (w_ssim > 0.0) {
    const SsimGradient s = ssim_with_gradient(rendered, target);
    out.value += w_ssim * 0.5 * (1.0 - s.value);
    for (std::size_t i = 0; i < out.grad.data.size(); ++i) out.grad.data[i] -= 0.5 * w_ssim * s.grad.data[i];
  }
  return out;
}

} // namespace splq
