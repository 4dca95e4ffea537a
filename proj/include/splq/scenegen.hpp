#pragma once

#include "splq/rasterizer.hpp"
#include "splq/scene.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace splq {

/// A roughly human-shaped ellipsoid cluster of primitives.
struct SubjectSpec {
  Vec3 center = Vec3::Zero();
  Vec3 radii = Vec3(0.2, 0.4, 0.2);
  int count = 150;
  Vec3 color = Vec3(0.8, 0.4, 0.3);
};

/// Static background: a back wall, a floor and an optional opaque pillar.
struct BackgroundSpec {
  int wall_columns = 12;
  int wall_rows = 8;
  double wall_z = 3.0;
  double wall_half_width = 2.5;
  double wall_half_height = 1.5;
  int floor_columns = 8;
  int floor_rows = 15;
  double floor_y = 1.0;
  double floor_half_width = 1.5;
  double floor_z_min = -4.0;
  double floor_z_max = 3.0;
  /// Pillar primitives are stacked in `pillar_layers` slabs along z.
  int pillar_count = 60;
  int pillar_layers = 3;
  Vec3 pillar_center = Vec3(0.3, 0.0, -3.0);
  double pillar_half_width = 0.12;
  double pillar_half_height = 1.0;
};

struct SceneSpec {
  std::uint64_t seed = 0;
  std::vector<SubjectSpec> subjects;
  BackgroundSpec background;
  /// Micro-motion amplitude (world units) and frequency (cycles per unit time).
  double jitter_amplitude = 0.0;
  double jitter_frequency = 1.0;
  /// Camera looks along +z and moves from z = -dolly_distance to z = 0.
  double dolly_distance = 4.0;
  double sway = 0.1;
  int frames = 48;
  int width = 160;
  int height = 90;
  double focal = 110.0;
  double near = 0.2;
  double far = 20.0;
  Vec3 background_color = Vec3(0.05, 0.05, 0.08);
  double init_sigma_position = 0.02;
  double init_sigma_color = 0.05;

  /// Two subjects x 150 + 300 background primitives, 48 frames at 160x90,
  /// jitter amplitude 0.02 of the scene extent.
  static SceneSpec standard(std::uint64_t seed = 0);
  /// Throws ConfigError on invalid values.
  void validate() const;
  CameraModel camera() const;
  Pose pose_at(double t) const;
};

/// The true scene: canonical cloud plus per-primitive micro-motion.
struct GroundTruth {
  GaussianCloud canonical;
  /// Unit jitter direction and phase per primitive; zero direction for static ones.
  std::vector<Vec3> directions;
  std::vector<double> phases;
  double amplitude = 0.0;
  double frequency = 1.0;
  /// Primitive indices belonging to each subject.
  std::vector<std::vector<std::size_t>> subjects;
  CameraModel camera;
  std::vector<Pose> poses;
  Vec3 background = Vec3::Zero();
  RasterConfig raster;

  /// True primitive states at time t.
  GaussianCloud state(double t) const;
  Image render(double t, std::size_t pose) const;
  /// All poses at one instant.
  std::vector<Image> render_all(double t) const;
  std::vector<std::size_t> subject_primitives() const;
  bool operator==(const GroundTruth &other) const = default;
};

struct GeneratedScene {
  Dataset dataset;
  GroundTruth truth;
  /// Noisy copy of the true canonical cloud used to start training, standing
  /// in for a structure-from-motion point cloud.
  GaussianCloud initial;
};

/// Frames are rendered from the true state at each timestamp and quantized to
/// 8 bits. Throws ConfigError when some subject is never in view.
GeneratedScene generate(const SceneSpec &spec);

/// Copy of `truth` with Gaussian noise on positions and colors (colors clamped
/// to [0, 1]). Throws ArgumentError on negative sigmas.
GaussianCloud init_cloud_from_gt(const GaussianCloud &truth, double sigma_position, double sigma_color,
                                 std::uint64_t seed);

/// 1.1 times the largest distance of a camera center from their centroid.
double camera_extent(std::span<const Pose> poses);

} // namespace splq
