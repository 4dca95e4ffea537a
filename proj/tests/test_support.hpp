#pragma once

#include "splq/rasterizer.hpp"
#include "splq/scene.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

namespace splq::testing {

inline CameraModel small_camera(int w = 24, int h = 24, double f = 20.0) {
  CameraModel c;
  c.width = w;
  c.height = h;
  c.fx = c.fy = f;
  c.cx = 0.5 * w;
  c.cy = 0.5 * h;
  c.near = 0.1;
  c.far = 50.0;
  return c;
}

inline Vec4 random_quaternion(std::mt19937_64 &rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec4 q(n(rng), n(rng), n(rng), n(rng));
  return q / q.norm();
}

/// K primitives roughly in front of an identity camera at depths 2..5.
inline GaussianCloud random_cloud(std::mt19937_64 &rng, std::size_t count, double spread = 0.5,
                                  double log_scale_mean = -1.8) {
  std::uniform_real_distribution<double> u(-1.0, 1.0), depth(2.0, 5.0), unit(0.0, 1.0);
  GaussianCloud c;
  for (std::size_t k = 0; k < count; ++k) {
    const double z = depth(rng);
    c.push_back(Vec3(spread * u(rng) * z * 0.5, spread * u(rng) * z * 0.5, z), random_quaternion(rng),
                Vec3::Constant(log_scale_mean) + 0.3 * Vec3(u(rng), u(rng), u(rng)), 2.0 * u(rng) + 0.5,
                Vec3(unit(rng), unit(rng), unit(rng)));
  }
  return c;
}

/// Appends a stack of near-opaque screens in front of part of the view and
/// two splats too faint to pass the alpha skip, so that some primitives end up
/// with no photometric gradient.
inline void add_occluders(GaussianCloud &c, std::mt19937_64 &rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double x = 0.3 * u(rng), y = 0.3 * u(rng);
  for (int layer = 0; layer < 4; ++layer)
    c.push_back(Vec3(x, y, 1.2 + 0.05 * layer), Vec4(1, 0, 0, 0), Vec3(std::log(0.35), std::log(0.35), std::log(0.02)),
                8.0, Vec3(0.5, 0.5, 0.5));
  for (int k = 0; k < 2; ++k)
    c.push_back(Vec3(0.2 * u(rng), 0.2 * u(rng), 3.0), Vec4(1, 0, 0, 0), Vec3::Constant(-2.0), -7.0, Vec3(1, 1, 1));
}

inline Image random_image(std::mt19937_64 &rng, int w, int h) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(w, h);
  for (double &v : img.data) v = u(rng);
  return img;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(1e-8, std::abs(a) + std::abs(b)); }

/// Central difference of f with respect to x[i], restoring x[i] afterwards.
template <class F>
double central_difference(std::vector<double> &x, std::size_t i, double h, F &&f) {
  const double keep = x[i];
  x[i] = keep + h;
  const double up = f();
  x[i] = keep - h;
  const double down = f();
  x[i] = keep;
  return (up - down) / (2.0 * h);
}

/// Straight-line pinhole frustum check written independently of the renderer.
inline bool oracle_in_frustum(const Vec3 &world, const Pose &pose, const CameraModel &cam) {
  const double x = pose.rotation.row(0).dot(world) + pose.translation[0];
  const double y = pose.rotation.row(1).dot(world) + pose.translation[1];
  const double z = pose.rotation.row(2).dot(world) + pose.translation[2];
  if (!(z >= cam.near && z <= cam.far)) return false;
  const double u = cam.cx + cam.fx * x / z;
  const double v = cam.cy + cam.fy * y / z;
  return u >= 0.0 && u < cam.width && v >= 0.0 && v < cam.height;
}

/// Per-pixel brute-force compositing with no tiling: every in-frustum splat is
/// tested at every pixel in global depth order. Also returns d loss / d mean2d
/// per splat for a given d loss / d pixel, derived from the closed-form
/// compositing sum.
struct OracleRender {
  Image image;
  std::vector<Vec2> grad_mean2d;
  std::vector<int> touched;
};

inline OracleRender oracle_render(const std::vector<ProjectedGaussian> &proj, const CameraModel &cam,
                                  const Vec3 &bg, const RasterConfig &cfg, const Image *d_pixels = nullptr) {
  const std::size_t n = proj.size();
  std::vector<std::size_t> order;
  for (std::size_t k = 0; k < n; ++k)
    if (proj[k].in_frustum) order.push_back(k);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return proj[a].depth < proj[b].depth; });

  OracleRender out{Image(cam.width, cam.height), std::vector<Vec2>(n, Vec2::Zero()), std::vector<int>(n, 0)};
  const double max_mahal = cfg.cutoff_sigma * cfg.cutoff_sigma;
  struct Hit {
    std::size_t k;
    double alpha, trans;
    bool capped;
    Vec2 d;
  };
  for (int py = 0; py < cam.height; ++py) {
    for (int px = 0; px < cam.width; ++px) {
      std::vector<Hit> hits;
      double trans = 1.0;
      Vec3 color = Vec3::Zero();
      for (std::size_t k : order) {
        const Vec2 d = Vec2(px, py) - proj[k].mean2d;
        const Mat2 inv = proj[k].cov2d.inverse();
        const double m = d.dot(inv * d);
        if (m > max_mahal) continue;
        const double raw = proj[k].alpha_base * std::exp(-0.5 * m);
        if (raw < cfg.alpha_skip) continue;
        const double a = std::min(cfg.alpha_cap, raw);
        hits.push_back({k, a, trans, raw > cfg.alpha_cap, d});
        color += a * trans * proj[k].color;
        trans *= 1.0 - a;
        ++out.touched[k];
        if (trans < cfg.transmittance_min) break;
      }
      const Vec3 c = color + trans * bg;
      for (int ch = 0; ch < 3; ++ch) out.image.at(px, py, ch) = c[ch];
      if (!d_pixels) continue;
      const Vec3 g(d_pixels->at(px, py, 0), d_pixels->at(px, py, 1), d_pixels->at(px, py, 2));
      // Color composited behind hit i: everything after it plus the background.
      Vec3 behind = trans * bg;
      for (std::size_t i = hits.size(); i-- > 0;) {
        const Hit &h = hits[i];
        const Vec3 dc_dalpha = h.trans * proj[h.k].color - behind / (1.0 - h.alpha);
        behind += h.alpha * h.trans * proj[h.k].color;
        if (h.capped) continue;
        const Mat2 inv = proj[h.k].cov2d.inverse();
        out.grad_mean2d[h.k] += g.dot(dc_dalpha) * h.alpha * (inv * h.d);
      }
    }
  }
  return out;
}

} // namespace splq::testing
