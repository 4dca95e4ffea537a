#pragma once

#include "splq/scene.hpp"

namespace splq {

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

/// 10 log10(1 / MSE) with peak 1.0; identical images give kPsnrClamp.
inline constexpr double kPsnrClamp = 99.0;
double psnr(const Image &a, const Image &b);

/// Mean SSIM over all fully-contained Gaussian windows, computed on luminance
/// (channel mean). Throws ArgumentError when min(H, W) < window, ContractError
/// on shape mismatch.
double ssim(const Image &a, const Image &b, const SsimOptions &options = {});

struct SsimGradient {
  double value = 0.0;
  /// d ssim / d a, per channel.
  Image grad;
};
SsimGradient ssim_with_gradient(const Image &a, const Image &b, const SsimOptions &options = {});

} // namespace splq
