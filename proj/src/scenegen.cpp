#include "splq/scenegen.hpp"

#include "splq/error.hpp"

#include <tbb/parallel_for.h>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace splq {

namespace {

Vec4 random_rotation(std::mt19937_64 &rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec4 q(n(rng), n(rng), n(rng), n(rng));
  return q / q.norm();
}

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

void add_subject(const SubjectSpec &s, std::mt19937_64 &rng, GroundTruth &gt) {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 dir(n(rng), 0.3 * n(rng), n(rng));
  dir.normalize();
  const double phase0 = 2.0 * std::numbers::pi * (0.5 + 0.5 * unit(rng));

  std::vector<std::size_t> members;
  while (static_cast<int>(members.size()) < s.count) {
    const Vec3 p(unit(rng), unit(rng), unit(rng));
    if (p.squaredNorm() > 1.0) continue;
    const Vec3 pos = s.center + s.radii.cwiseProduct(p);
    const Vec3 log_scale = Vec3::Constant(std::log(0.055)) + 0.2 * Vec3(unit(rng), unit(rng), unit(rng));
    const Vec3 color = (s.color + 0.15 * Vec3(unit(rng), unit(rng), unit(rng))).cwiseMax(0.0).cwiseMin(1.0);
    members.push_back(gt.canonical.size());
    gt.canonical.push_back(pos, random_rotation(rng), log_scale, 3.0, color);
    gt.directions.push_back(dir);
    // Phase varies smoothly with height, like a body swaying from the feet.
    gt.phases.push_back(phase0 + 2.0 * (pos.y() - s.center.y()));
  }
  gt.subjects.push_back(std::move(members));
}

void add_static(GroundTruth &gt, const Vec3 &pos, const Vec3 &log_scale, double opacity_logit, const Vec3 &color) {
  gt.canonical.push_back(pos, Vec4(1, 0, 0, 0), log_scale, opacity_logit, color);
  gt.directions.push_back(Vec3::Zero());
  gt.phases.push_back(0.0);
}

void add_background(const BackgroundSpec &b, std::mt19937_64 &rng, GroundTruth &gt) {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const Vec3 wall_a(0.75, 0.7, 0.55), wall_b(0.45, 0.5, 0.6);
  const double wall_dx = 2.0 * b.wall_half_width / b.wall_columns;
  const double wall_dy = 2.0 * b.wall_half_height / b.wall_rows;
  for (int r = 0; r < b.wall_rows; ++r)
    for (int c = 0; c < b.wall_columns; ++c) {
      const Vec3 pos(-b.wall_half_width + (c + 0.5) * wall_dx, -b.wall_half_height + (r + 0.5) * wall_dy, b.wall_z);
      const Vec3 base = (r + c) % 2 ? wall_a : wall_b;
      const Vec3 color = (base + 0.05 * Vec3(unit(rng), unit(rng), unit(rng))).cwiseMax(0.0).cwiseMin(1.0);
      add_static(gt, pos, Vec3(std::log(0.6 * wall_dx), std::log(0.6 * wall_dy), std::log(0.02)), 4.0, color);
    }

  const Vec3 floor_a(0.35, 0.3, 0.25), floor_b(0.6, 0.55, 0.45);
  const double floor_dx = 2.0 * b.floor_half_width / b.floor_columns;
  const double floor_dz = (b.floor_z_max - b.floor_z_min) / b.floor_rows;
  for (int r = 0; r < b.floor_rows; ++r)
    for (int c = 0; c < b.floor_columns; ++c) {
      const Vec3 pos(-b.floor_half_width + (c + 0.5) * floor_dx, b.floor_y, b.floor_z_min + (r + 0.5) * floor_dz);
      const Vec3 base = (r + c) % 2 ? floor_a : floor_b;
      const Vec3 color = (base + 0.05 * Vec3(unit(rng), unit(rng), unit(rng))).cwiseMax(0.0).cwiseMin(1.0);
      add_static(gt, pos, Vec3(std::log(0.6 * floor_dx), std::log(0.02), std::log(0.6 * floor_dz)), 4.0, color);
    }

  const int per_layer = b.pillar_layers > 0 ? b.pillar_count / b.pillar_layers : 0;
  for (int layer = 0; layer < b.pillar_layers; ++layer)
    for (int i = 0; i < per_layer; ++i) {
      const double y = -b.pillar_half_height + (i + 0.5) * 2.0 * b.pillar_half_height / per_layer;
      const Vec3 pos = b.pillar_center + Vec3(0.5 * b.pillar_half_width * unit(rng), y, 0.05 * (layer - 1));
      const Vec3 color = (Vec3(0.3, 0.32, 0.3) + 0.04 * Vec3(unit(rng), unit(rng), unit(rng))).cwiseMax(0.0);
      add_static(gt, pos, Vec3(std::log(b.pillar_half_width), std::log(0.08), std::log(0.03)), 5.0, color);
    }
}

} // namespace

SceneSpec SceneSpec::standard(std::uint64_t seed) {
  SceneSpec spec;
  spec.seed = seed;
  spec.subjects.push_back(SubjectSpec{Vec3(-0.5, 0.2, -2.2), Vec3(0.2, 0.45, 0.2), 150, Vec3(0.85, 0.35, 0.25)});
  spec.subjects.push_back(SubjectSpec{Vec3(0.75, 0.2, -1.0), Vec3(0.2, 0.45, 0.2), 150, Vec3(0.25, 0.45, 0.85)});
  spec.background.pillar_center = Vec3(0.55, 0.0, -1.8);
  spec.background.pillar_half_width = 0.2;
  std::vector<Pose> poses;
  for (int n = 0; n < spec.frames; ++n) poses.push_back(spec.pose_at(static_cast<double>(n) / (spec.frames - 1)));
  spec.jitter_amplitude = 0.02 * camera_extent(poses);
  return spec;
}

void SceneSpec::validate() const {
  if (!(jitter_amplitude >= 0.0)) throw ConfigError("scene spec: jitter amplitude must be >= 0");
  if (!(jitter_frequency >= 0.0)) throw ConfigError("scene spec: jitter frequency must be >= 0");
  if (frames < 4) throw ConfigError("scene spec: need at least 4 frames");
  if (!(dolly_distance > 0.0)) throw ConfigError("scene spec: dolly distance must be positive");
  for (const auto &s : subjects)
    if (s.count < 1 || !(s.radii.minCoeff() > 0.0)) throw ConfigError("scene spec: invalid subject");
  camera().validate();
}

CameraModel SceneSpec::camera() const {
  CameraModel cam;
  cam.fx = cam.fy = focal;
  cam.width = width;
  cam.height = height;
  cam.cx = 0.5 * width;
  cam.cy = 0.5 * height;
  cam.near = near;
  cam.far = far;
  return cam;
}

Pose SceneSpec::pose_at(double t) const {
  return Pose::looking_from(Vec3(sway * std::sin(std::numbers::pi * t), 0.0, -dolly_distance * (1.0 - t)));
}

GaussianCloud GroundTruth::state(double t) const {
  GaussianCloud out = canonical;
  for (std::size_t k = 0; k < out.size(); ++k)
    out.positions[k] +=
        amplitude * std::sin(2.0 * std::numbers::pi * frequency * t + phases[k]) * directions[k];
  return out;
}

Image GroundTruth::render(double t, std::size_t pose) const {
  if (pose >= poses.size()) throw ArgumentError("GroundTruth::render: pose index out of range");
  return splq::render(state(t), camera, poses[pose], background, raster).image.pixels;
}

std::vector<Image> GroundTruth::render_all(double t) const {
  const GaussianCloud s = state(t);
  std::vector<Image> out(poses.size());
  tbb::parallel_for(std::size_t{0}, poses.size(), [&](std::size_t n) {
    out[n] = splq::render(s, camera, poses[n], background, raster).image.pixels;
  });
  return out;
}

std::vector<std::size_t> GroundTruth::subject_primitives() const {
  std::vector<std::size_t> out;
  for (const auto &s : subjects) out.insert(out.end(), s.begin(), s.end());
  return out;
}

GeneratedScene generate(const SceneSpec &spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  GeneratedScene out;
  GroundTruth &gt = out.truth;
  gt.amplitude = spec.jitter_amplitude;
  gt.frequency = spec.jitter_frequency;
  gt.camera = spec.camera();
  gt.background = spec.background_color;
  for (const auto &s : spec.subjects) add_subject(s, rng, gt);
  add_background(spec.background, rng, gt);
  gt.canonical.validate();

  Dataset &ds = out.dataset;
  ds.camera = gt.camera;
  ds.background = gt.background;
  ds.frames.resize(spec.frames);
  for (int n = 0; n < spec.frames; ++n) {
    const double t = static_cast<double>(n) / (spec.frames - 1);
    gt.poses.push_back(spec.pose_at(t));
    ds.frames[n].pose = gt.poses.back();
    ds.frames[n].timestamp = t;
    ds.frames[n].index = n;
  }
  ds.scene_extent = camera_extent(gt.poses);

  for (std::size_t s = 0; s < spec.subjects.size(); ++s) {
    const bool seen = std::any_of(gt.poses.begin(), gt.poses.end(), [&](const Pose &p) {
      return frustum_test(spec.subjects[s].center, p, gt.camera);
    });
    if (!seen) throw ConfigError("generate: subject " + std::to_string(s) + " is never in view");
  }

  tbb::parallel_for(0, spec.frames, [&](int n) {
    Image img = gt.render(ds.frames[n].timestamp, n);
    for (double &v : img.data) v = quantize(v);
    ds.frames[n].image = std::move(img);
  });
  out.initial = init_cloud_from_gt(gt.canonical, spec.init_sigma_position, spec.init_sigma_color,
                                   spec.seed ^ 0x2545f4914f6cdd1dULL);
  return out;
}

GaussianCloud init_cloud_from_gt(const GaussianCloud &truth, double sigma_position, double sigma_color,
                                 std::uint64_t seed) {
  if (!(sigma_position >= 0.0 && sigma_color >= 0.0)) throw ArgumentError("init_cloud_from_gt: sigma must be >= 0");
  GaussianCloud out = truth;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  for (std::size_t k = 0; k < out.size(); ++k) {
    if (sigma_position > 0.0) out.positions[k] += sigma_position * Vec3(n(rng), n(rng), n(rng));
    if (sigma_color > 0.0)
      out.colors[k] = (out.colors[k] + sigma_color * Vec3(n(rng), n(rng), n(rng))).cwiseMax(0.0).cwiseMin(1.0);
  }
  return out;
}

double camera_extent(std::span<const Pose> poses) {
  if (poses.empty()) return 1.0;
  Vec3 mean = Vec3::Zero();
  for (const auto &p : poses) mean += p.center();
  mean /= static_cast<double>(poses.size());
  double r = 0.0;
  for (const auto &p : poses) r = std::max(r, (p.center() - mean).norm());
  return 1.1 * r;
}

} // namespace splq
