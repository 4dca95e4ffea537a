#pragma once

#include "splq/scene.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace splq {

/// Numerical knobs of the splatting pipeline. The defaults are the training
/// values; gradient checks disable the piecewise-constant cut-offs.
struct RasterConfig {
  int tile_size = 16;
  /// Added to the diagonal of every 2D covariance (pixels^2).
  double blur = 0.3;
  double alpha_cap = 0.99;
  /// A splat whose alpha at a pixel is below this is skipped there.
  double alpha_skip = 1.0 / 255.0;
  /// Compositing stops once transmittance falls below this.
  double transmittance_min = 1e-4;
  /// Footprint of a splat: pixels within this many standard deviations
  /// (Mahalanobis distance). Also sets the binning radius.
  double cutoff_sigma = 3.0;

  /// No alpha skip, no early exit, unbounded footprint.
  static RasterConfig smooth();
  bool operator==(const RasterConfig &other) const = default;
};

struct ProjectedGaussian {
  Vec2 mean2d = Vec2::Zero();
  Mat2 cov2d = Mat2::Identity();
  double depth = 0.0;
  double alpha_base = 0.0;
  Vec3 color = Vec3::Zero();
  double radius = 0.0;
  bool in_frustum = false;

  // Cached for the backward pass.
  Vec3 cam = Vec3::Zero();
  Mat2 conic = Mat2::Identity();
  Mat3 sigma3d = Mat3::Identity();
};

struct RenderedImage {
  Image pixels;
  /// H x W final transmittance, row-major.
  std::vector<double> transmittance;
};

struct RenderStats {
  std::vector<std::uint8_t> visible;
  std::vector<double> grad_norm_mean2d;
  std::vector<std::uint32_t> pixels_touched;
};

/// Everything the backward pass needs from a forward call.
struct ForwardState {
  CameraModel camera;
  Pose pose;
  RasterConfig config;
  Vec3 background = Vec3::Zero();
  std::vector<ProjectedGaussian> projected;
  /// In-frustum primitive indices, front to back (depth, then index).
  std::vector<std::uint32_t> order;
  int tiles_x = 0;
  int tiles_y = 0;
  /// Tile t owns tile_entries[tile_offsets[t], tile_offsets[t+1]), in sorted order.
  std::vector<std::uint32_t> tile_offsets;
  std::vector<std::uint32_t> tile_entries;
  /// Per pixel: one past the last tile entry examined before early exit.
  std::vector<std::uint32_t> pixel_end;
  std::vector<double> final_transmittance;
  std::vector<std::uint32_t> pixels_touched;
};

struct ForwardResult {
  RenderedImage image;
  ForwardState state;
};

struct BackwardResult {
  /// d loss / d (14 parameters) per primitive, layout as ParamVector.
  ParamVector grad;
  std::vector<Vec2> grad_mean2d;
  RenderStats stats;
};

/// Center-only frustum predicate: near <= z <= far and the projected center
/// lies in [0, W) x [0, H).
bool frustum_test(const Vec3 &mu, const Pose &pose, const CameraModel &camera);

/// Projects every primitive. Primitives failing frustum_test are returned with
/// in_frustum = false and take no further part in rendering.
/// Throws RenderError naming the first primitive with a non-finite parameter.
std::vector<ProjectedGaussian> project(const GaussianCloud &state, const CameraModel &camera,
                                       const Pose &pose, const RasterConfig &config = {});

/// Front-to-back alpha compositing over 16x16 tiles.
ForwardResult rasterize_forward(std::vector<ProjectedGaussian> projected, const CameraModel &camera,
                                const Pose &pose, const Vec3 &background,
                                const RasterConfig &config = {});

/// Reverse-mode gradients of a scalar loss w.r.t. every primitive parameter of
/// `state`, given d loss / d pixel. Throws ContractError when the image shape or
/// the primitive count does not match the forward call.
BackwardResult rasterize_backward(const Image &d_pixels, const ForwardState &saved,
                                  const GaussianCloud &state);

/// project + rasterize_forward.
ForwardResult render(const GaussianCloud &state, const CameraModel &camera, const Pose &pose,
                     const Vec3 &background, const RasterConfig &config = {});

} // namespace splq
