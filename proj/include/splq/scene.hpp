#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace splq {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

/// Per-primitive parameter layout inside a ParamVector:
///   [ mu_x mu_y mu_z | q_w q_x q_y q_z | s_0 s_1 s_2 | o | r g b ]
/// mu: world position, q: rotation quaternion (scalar first), s: log of the
/// per-axis standard deviation, o: opacity logit, rgb: degree-0 color.
namespace layout {
inline constexpr std::size_t kStride = 14;
inline constexpr std::size_t kPosition = 0;
inline constexpr std::size_t kRotation = 3;
inline constexpr std::size_t kLogScale = 7;
inline constexpr std::size_t kOpacity = 10;
inline constexpr std::size_t kColor = 11;
} // namespace layout

using ParamVector = std::vector<double>;

/// Canonical primitive set, structure-of-arrays.
struct GaussianCloud {
  std::vector<Vec3> positions;
  std::vector<Vec4> rotations; // (w, x, y, z)
  std::vector<Vec3> log_scales;
  std::vector<double> opacity_logits;
  std::vector<Vec3> colors;

  std::size_t size() const { return positions.size(); }
  void resize(std::size_t count);
  void push_back(const Vec3 &position, const Vec4 &rotation, const Vec3 &log_scale,
                 double opacity_logit, const Vec3 &color);
  /// Throws ContractError if the arrays disagree in length or K == 0.
  void validate() const;
  void normalize_rotations();
  bool operator==(const GaussianCloud &other) const = default;
};

struct CameraModel {
  double fx = 100.0;
  double fy = 100.0;
  double cx = 50.0;
  double cy = 50.0;
  int width = 100;
  int height = 100;
  double near = 0.1;
  double far = 100.0;

  /// Throws ConfigError unless 0 < near < far, W, H >= 8 and fx, fy > 0.
  void validate() const;
  bool operator==(const CameraModel &other) const = default;
};

/// World-to-camera transform: x_cam = rotation * x_world + translation.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose looking_from(const Vec3 &camera_center, const Mat3 &rotation = Mat3::Identity());
  Vec3 center() const { return -rotation.transpose() * translation; }
  bool operator==(const Pose &other) const = default;
};

/// H x W x 3 image, row-major, channels interleaved, values nominally in [0,1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, double fill = 0.0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

  double &at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  double at(int x, int y, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  bool same_shape(const Image &other) const {
    return width == other.width && height == other.height;
  }
  bool operator==(const Image &other) const = default;
};

struct FrameRecord {
  Image image;
  Pose pose;
  double timestamp = 0.0;
  std::size_t index = 0;
  bool operator==(const FrameRecord &other) const = default;
};

struct Dataset {
  std::vector<FrameRecord> frames;
  CameraModel camera;
  double scene_extent = 1.0;
  Vec3 background = Vec3::Zero();

  std::size_t size() const { return frames.size(); }
  std::vector<double> timestamps() const;
  /// Throws ConfigError when N < 4, timestamps are not strictly increasing from
  /// 0 to 1, or a pose rotation is not orthonormal.
  void validate() const;
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// Rotation matrix of q / |q|.
Mat3 rotation_from_quaternion(const Vec4 &q);

/// R(q) diag(exp(2 s)) R(q)^T with q renormalized first.
Mat3 covariance_from_factors(const Vec4 &q, const Vec3 &log_scale);

/// Writes the 14 scalars of primitive k into out. Throws ArgumentError when k >= K.
void pack_params(const GaussianCloud &cloud, std::size_t k, std::span<double, layout::kStride> out);
std::array<double, layout::kStride> pack_params(const GaussianCloud &cloud, std::size_t k);
void unpack_params(std::span<const double, layout::kStride> slice, GaussianCloud &cloud, std::size_t k);

ParamVector pack_cloud(const GaussianCloud &cloud);
/// Throws ContractError unless params.size() is a positive multiple of 14.
GaussianCloud unpack_cloud(std::span<const double> params);

/// t_n = n / (N - 1) over the rank of each index. Throws ConfigError for fewer
/// than two indices, ArgumentError for unsorted or duplicate indices.
std::vector<double> normalize_timestamps(std::span<const std::int64_t> raw_indices);

/// Radius of the bounding sphere (centered at the centroid) of the positions.
double bounding_radius(const GaussianCloud &cloud);

} // namespace splq
