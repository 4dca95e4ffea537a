#include "splq/scene.hpp"

#include "splq/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace splq {

void GaussianCloud::resize(std::size_t count) {
  positions.resize(count, Vec3::Zero());
  rotations.resize(count, Vec4(1.0, 0.0, 0.0, 0.0));
  log_scales.resize(count, Vec3::Zero());
  opacity_logits.resize(count, 0.0);
  colors.resize(count, Vec3::Constant(0.5));
}

void GaussianCloud::push_back(const Vec3 &position, const Vec4 &rotation, const Vec3 &log_scale,
                              double opacity_logit, const Vec3 &color) {
  positions.push_back(position);
  rotations.push_back(rotation);
  log_scales.push_back(log_scale);
  opacity_logits.push_back(opacity_logit);
  colors.push_back(color);
}

void GaussianCloud::validate() const {
  const std::size_t k = positions.size();
  if (k == 0) throw ContractError("GaussianCloud: empty cloud");
  if (rotations.size() != k || log_scales.size() != k || opacity_logits.size() != k ||
      colors.size() != k)
    throw ContractError("GaussianCloud: attribute arrays differ in length");
}

void GaussianCloud::normalize_rotations() {
  for (auto &q : rotations) {
    const double n = q.norm();
    if (n > 0.0) q /= n;
    else q = Vec4(1.0, 0.0, 0.0, 0.0);
  }
}

void CameraModel::validate() const {
  if (!(fx > 0.0 && fy > 0.0)) throw ConfigError("camera: focal lengths must be positive");
  if (width < 8 || height < 8) throw ConfigError("camera: image must be at least 8x8");
  if (!(near > 0.0 && near < far)) throw ConfigError("camera: require 0 < near < far");
}

Pose Pose::looking_from(const Vec3 &camera_center, const Mat3 &rotation) {
  Pose pose;
  pose.rotation = rotation;
  pose.translation = -rotation * camera_center;
  return pose;
}

std::vector<double> Dataset::timestamps() const {
  std::vector<double> out;
  out.reserve(frames.size());
  for (const auto &f : frames) out.push_back(f.timestamp);
  return out;
}

void Dataset::validate() const {
  camera.validate();
  if (frames.size() < 4) throw ConfigError("dataset: need at least 4 frames");
  if (frames.front().timestamp != 0.0 || frames.back().timestamp != 1.0)
    throw ConfigError("dataset: timestamps must span [0, 1]");
  for (std::size_t n = 0; n < frames.size(); ++n) {
    const auto &f = frames[n];
    if (n > 0 && !(f.timestamp > frames[n - 1].timestamp))
      throw ConfigError("dataset: timestamps must be strictly increasing");
    const Mat3 gram = f.pose.rotation.transpose() * f.pose.rotation;
    if ((gram - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6)
      throw ConfigError("dataset: frame " + std::to_string(n) + " rotation is not orthonormal");
  }
}

Mat3 rotation_from_quaternion(const Vec4 &q_raw) {
  const Vec4 q = q_raw / q_raw.norm();
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

Mat3 covariance_from_factors(const Vec4 &q, const Vec3 &log_scale) {
  const Mat3 r = rotation_from_quaternion(q);
  const Vec3 var = (2.0 * log_scale).array().exp();
  Mat3 cov = r * var.asDiagonal() * r.transpose();
  // Exact symmetry regardless of rounding in the product.
  return 0.5 * (cov + cov.transpose());
}

void pack_params(const GaussianCloud &cloud, std::size_t k, std::span<double, layout::kStride> out) {
  if (k >= cloud.size())
    throw ArgumentError("pack_params: index " + std::to_string(k) + " out of range");
  const auto &p = cloud.positions[k];
  const auto &q = cloud.rotations[k];
  const auto &s = cloud.log_scales[k];
  const auto &c = cloud.colors[k];
  out[0] = p.x(); out[1] = p.y(); out[2] = p.z();
  out[3] = q[0]; out[4] = q[1]; out[5] = q[2]; out[6] = q[3];
  out[7] = s.x(); out[8] = s.y(); out[9] = s.z();
  out[10] = cloud.opacity_logits[k];
  out[11] = c.x(); out[12] = c.y(); out[13] = c.z();
}

std::array<double, layout::kStride> pack_params(const GaussianCloud &cloud, std::size_t k) {
  std::array<double, layout::kStride> out{};
  pack_params(cloud, k, std::span<double, layout::kStride>(out));
  return out;
}

void unpack_params(std::span<const double, layout::kStride> v, GaussianCloud &cloud, std::size_t k) {
  if (k >= cloud.size())
    throw ArgumentError("unpack_params: index " + std::to_string(k) + " out of range");
  cloud.positions[k] = Vec3(v[0], v[1], v[2]);
  cloud.rotations[k] = Vec4(v[3], v[4], v[5], v[6]);
  cloud.log_scales[k] = Vec3(v[7], v[8], v[9]);
  cloud.opacity_logits[k] = v[10];
  cloud.colors[k] = Vec3(v[11], v[12], v[13]);
}

ParamVector pack_cloud(const GaussianCloud &cloud) {
  ParamVector out(cloud.size() * layout::kStride);
  for (std::size_t k = 0; k < cloud.size(); ++k)
    pack_params(cloud, k, std::span<double, layout::kStride>(out.data() + k * layout::kStride, layout::kStride));
  return out;
}

GaussianCloud unpack_cloud(std::span<const double> params) {
  if (params.empty() || params.size() % layout::kStride != 0)
    throw ContractError("unpack_cloud: length is not a positive multiple of 14");
  GaussianCloud cloud;
  cloud.resize(params.size() / layout::kStride);
  for (std::size_t k = 0; k < cloud.size(); ++k)
    unpack_params(params.subspan(k * layout::kStride).first<layout::kStride>(), cloud, k);
  return cloud;
}

std::vector<double> normalize_timestamps(std::span<const std::int64_t> raw) {
  if (raw.size() < 2) throw ConfigError("normalize_timestamps: need at least two frames");
  for (std::size_t i = 1; i < raw.size(); ++i)
    if (raw[i] <= raw[i - 1])
      throw ArgumentError("normalize_timestamps: indices must be strictly ascending");
  const double last = static_cast<double>(raw.size() - 1);
  std::vector<double> out(raw.size());
  for (std::size_t n = 0; n < raw.size(); ++n) out[n] = static_cast<double>(n) / last;
  return out;
}

double bounding_radius(const GaussianCloud &cloud) {
  if (cloud.size() == 0) return 0.0;
  Vec3 centroid = Vec3::Zero();
  for (const auto &p : cloud.positions) centroid += p;
  centroid /= static_cast<double>(cloud.size());
  double r = 0.0;
  for (const auto &p : cloud.positions) r = std::max(r, (p - centroid).norm());
  return r;
}

} // namespace splq
