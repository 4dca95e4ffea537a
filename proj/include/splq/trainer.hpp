#pragma once

#include "splq/anchoring.hpp"
#include "splq/deformation.hpp"
#include "splq/optimizer.hpp"
#include "splq/rasterizer.hpp"

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace splq {

struct DensifyConfig {
  bool enabled = true;
  std::uint64_t from_iter = 200;
  std::uint64_t until_iter = 1500;
  std::uint64_t interval = 100;
  /// Mean frame-accumulated 2D-mean gradient norm above which a primitive grows.
  double grad_threshold = 1e-4;
  /// Primitives with max scale <= this fraction of the scene extent are cloned, larger ones split.
  double small_scale_fraction = 0.01;
  double prune_opacity = 0.005;
  double split_scale_divisor = 1.6;
  std::size_t max_primitives = 1000;
};

struct TrainConfig {
  std::uint64_t total_iters = 3000;
  std::uint64_t seed = 0;
  /// Position rate decays exponentially from lr.position to this, both times the scene extent.
  double position_lr_final = 1.6e-6;
  LearningRates lr;
  AdamHyper adam;
  double w_ssim = 0.2;
  double grad_threshold = 1e-9;
  RasterConfig raster;
  DensifyConfig densify;
  AnchorConfig anchor;
  bool no_hidden = false;
  bool no_defective = false;
  bool no_confidence = false;
  /// Keep every AnchorEvent in TrainResult::events.
  bool record_events = false;

  /// Default desk-scale configuration: anchoring from total/3, L1 from 2 total/3,
  /// densification during the first half.
  static TrainConfig desk_scale(std::uint64_t total_iters = 3000);
  /// Anchor settings after applying the ablation switches.
  AnchorConfig effective_anchor() const;
  /// Throws ConfigError on inconsistent settings.
  void validate() const;
};

/// One line of the metrics log.
struct IterationRecord {
  std::uint64_t iter = 0;
  double recon = 0.0;
  double hidden = 0.0;
  double defective = 0.0;
  double total = 0.0;
  std::size_t primitives = 0;
  std::size_t hidden_count = 0;
  std::size_t defective_count = 0;
  std::size_t frame = 0;
  std::size_t anchor_events = 0;
};

struct TrainResult {
  Model model;
  std::vector<IterationRecord> log;
  std::vector<AnchorEvent> events;
  std::uint64_t anchor_steps = 0;
  std::uint64_t hidden_events = 0;
  std::uint64_t defective_events = 0;
};

/// Per-primitive running sums for densification.
struct DensifyStats {
  std::vector<double> grad_sum;
  std::vector<std::uint32_t> count;

  explicit DensifyStats(std::size_t size = 0) : grad_sum(size, 0.0), count(size, 0) {}
  void accumulate(const RenderStats &stats);
};

struct DensifyOutcome {
  std::size_t cloned = 0;
  std::size_t split = 0;
  std::size_t pruned = 0;
};

/// Clone small high-gradient primitives, split large ones into two with
/// scales divided by split_scale_divisor, prune near-transparent ones. The
/// optimizer rows of surviving primitives are carried over; new rows start at zero.
DensifyOutcome densify_and_prune(Model &model, OptimizerState &optimizer, const DensifyStats &stats,
                                 const DensifyConfig &config, double scene_extent, std::mt19937_64 &rng);

using ProgressCallback = std::function<void(const IterationRecord &)>;

/// Throws NumericError (with the iteration's loss components) when the objective
/// or a gradient becomes non-finite.
TrainResult train(const Dataset &dataset, const GaussianCloud &init, const TrainConfig &config,
                  const ProgressCallback &progress = {});

std::string to_json_line(const IterationRecord &record);
std::string to_json_line(const AnchorEvent &event);

} // namespace splq
