#pragma once

#include "splq/deformation.hpp"
#include "splq/rasterizer.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace splq {

inline constexpr double kDefaultGradThreshold = 1e-9;

/// Supervision of primitive k in frame n.
///   hidden:    center outside the camera frustum.
///   defective: center inside the frustum but the frame-accumulated gradient
///              norm w.r.t. the projected mean is <= threshold.
struct SupervisionState {
  std::size_t frame = 0;
  std::size_t primitive = 0;
  bool hidden = false;
  bool defective = false;
  double grad_norm = 0.0;

  bool well_supervised() const { return !hidden && !defective; }
  bool operator==(const SupervisionState &other) const = default;
};

/// Pure classification of one render. Throws ContractError when stats and
/// projections disagree in length.
std::vector<SupervisionState> classify(const RenderStats &stats,
                                       std::span<const ProjectedGaussian> projected,
                                       double threshold = kDefaultGradThreshold,
                                       std::size_t frame = 0);

struct SupervisionOptions {
  RasterConfig raster;
  double w_ssim = 0.2;
  double threshold = kDefaultGradThreshold;
};

/// Render, photometric loss and its backward pass for one frame.
struct FrameSupervision {
  double loss = 0.0;
  RenderedImage image;
  BackwardResult backward;
  std::vector<SupervisionState> states;
};

/// `state` is the deformed cloud at the frame's timestamp.
FrameSupervision supervise_frame(const GaussianCloud &state, const Dataset &dataset, std::size_t frame,
                                 const SupervisionOptions &options);

struct SupervisionTable {
  std::uint64_t iteration = 0;
  std::map<std::size_t, std::vector<SupervisionState>> frames;

  const SupervisionState &at(std::size_t frame, std::size_t primitive) const;
  /// One line per (n, k): "n,k,hidden,defective,grad_norm" with a header row.
  std::string to_csv() const;
};

/// Throws ArgumentError for an empty or out-of-range frame subset.
SupervisionTable supervision_table(const Model &model, const Dataset &dataset,
                                   std::span<const std::size_t> frames,
                                   const SupervisionOptions &options, std::uint64_t iteration = 0);

} // namespace splq
