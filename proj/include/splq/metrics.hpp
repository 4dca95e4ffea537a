#pragma once

#include "splq/deformation.hpp"
#include "splq/image_metrics.hpp"
#include "splq/rasterizer.hpp"
#include "splq/scenegen.hpp"

#include <span>
#include <string>
#include <vector>

namespace splq {

/// Renders every pose at one instant from a single deformation pass.
std::vector<Image> freeze_frames(const Model &model, const CameraModel &camera, std::span<const Pose> poses,
                                 const Vec3 &background, double t, const RasterConfig &raster = {});

/// Mean over the grid of |theta_k(t) - theta_k(t_med)|_1, where t_med is the
/// lower median of the sorted grid. Throws ArgumentError for fewer than 2 points.
double drift(const Model &model, std::size_t k, std::span<const double> grid);
/// drift for every primitive, one deformation per grid point.
std::vector<double> drift_all(const Model &model, std::span<const double> grid);
/// Same statistic from already deformed states, one per grid point.
std::vector<double> drift_from_states(std::span<const GaussianCloud> states, std::span<const double> grid);

struct Aggregate {
  double mean = 0.0;
  double bottom75 = 0.0;
  double bottom50 = 0.0;
  double bottom25 = 0.0;
  double worst = 0.0;

  /// Bottom-p means average the lowest ceil(p n) values.
  static Aggregate of(std::span<const double> values);
  bool operator==(const Aggregate &other) const = default;
};

struct FreezeScore {
  std::size_t freeze_index = 0;
  double t = 0.0;
  std::size_t pose = 0;
  double psnr = 0.0;
  double ssim = 0.0;
  bool operator==(const FreezeScore &other) const = default;
};

struct EvalReport {
  std::vector<FreezeScore> scores;
  Aggregate psnr;
  Aggregate ssim;
  /// Per-primitive drift over the freeze timestamps.
  std::vector<double> drift;

  std::string to_table() const;
  /// One JSON object per scored frame, then one summary line.
  std::string to_jsonl() const;
  bool operator==(const EvalReport &other) const = default;
};

/// Freeze timestamps: every stride-th training timestamp starting at the first.
std::vector<double> freeze_timestamps(const Dataset &dataset, std::size_t stride);

/// Scores freeze renders of every pose at each strided timestamp against the
/// true static renders. Deforms exactly once per freeze timestamp. Throws
/// ArgumentError when truth is null ("GT required") or stride is 0.
EvalReport evaluate_freeze(const Model &model, const Dataset &dataset, const GroundTruth *truth,
                           std::size_t stride = 8, const RasterConfig &raster = {});

} // namespace splq
