#pragma once

#include "splq/scene.hpp"

namespace splq {

struct ReconLoss {
  double value = 0.0;
  /// d loss / d rendered pixel.
  Image grad;
};

/// (1 - w_ssim) * mean |rendered - target| + w_ssim * (1 - SSIM) / 2.
/// Throws ContractError on shape mismatch.
ReconLoss recon_loss(const Image &rendered, const Image &target, double w_ssim);

} // namespace splq
