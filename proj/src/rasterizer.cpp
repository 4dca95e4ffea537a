#include "splq/rasterizer.hpp"

#include "splq/error.hpp"

#include <oneapi/tbb/blocked_range.h>
#include <oneapi/tbb/parallel_for.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace splq {

namespace {

// Hot-loop view of one projected splat.
struct Splat {
  double mx, my;
  double ca, cb, cc; // conic [[ca, cb], [cb, cc]]
  double alpha_base;
  double r, g, b;
};

inline bool finite3(const Vec3 &v) { return v.allFinite(); }

// Alpha of splat s at pixel (px, py) under the compositing rules, or a negative
// value when the splat is skipped there. gauss receives exp(power).
inline double splat_alpha(const Splat &s, double px, double py, double min_power,
                          const RasterConfig &cfg, double &gauss, double &dx, double &dy) {
  dx = px - s.mx;
  dy = py - s.my;
  const double power = -0.5 * (s.ca * dx * dx + 2.0 * s.cb * dx * dy + s.cc * dy * dy);
  if (power < min_power || power > 0.0) return -1.0;
  gauss = std::exp(power);
  const double alpha = s.alpha_base * gauss;
  if (alpha < cfg.alpha_skip) return -1.0;
  return alpha;
}

std::vector<Splat> make_splats(const std::vector<ProjectedGaussian> &projected) {
  std::vector<Splat> out(projected.size());
  for (std::size_t i = 0; i < projected.size(); ++i) {
    const auto &p = projected[i];
    out[i] = Splat{p.mean2d.x(), p.mean2d.y(), p.conic(0, 0), p.conic(0, 1), p.conic(1, 1),
                   p.alpha_base, p.color.x(), p.color.y(), p.color.z()};
  }
  return out;
}

double min_power_for(const RasterConfig &cfg) {
  if (!std::isfinite(cfg.cutoff_sigma)) return -std::numeric_limits<double>::infinity();
  return -0.5 * cfg.cutoff_sigma * cfg.cutoff_sigma;
}

// d R(q_hat) / d q_hat contracted with dL/dR.
Vec4 rotation_vjp(const Vec4 &q, const Mat3 &g) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Vec4 out;
  out[0] = 2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
  out[1] = 2.0 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2) +
                  z * g(2, 0) + w * g(2, 1) - 2.0 * x * g(2, 2));
  out[2] = 2.0 * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) -
                  w * g(2, 0) + z * g(2, 1) - 2.0 * y * g(2, 2));
  out[3] = 2.0 * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) -
                  2.0 * z * g(1, 1) + y * g(1, 2) + x * g(2, 0) + y * g(2, 1));
  return out;
}

} // namespace

RasterConfig RasterConfig::smooth() {
  RasterConfig cfg;
  cfg.alpha_skip = 0.0;
  cfg.transmittance_min = 0.0;
  cfg.cutoff_sigma = std::numeric_limits<double>::infinity();
  return cfg;
}

bool frustum_test(const Vec3 &mu, const Pose &pose, const CameraModel &camera) {
  const Vec3 c = pose.rotation * mu + pose.translation;
  if (!(c.z() >= camera.near && c.z() <= camera.far)) return false;
  const double u = camera.cx + camera.fx * c.x() / c.z();
  const double v = camera.cy + camera.fy * c.y() / c.z();
  return u >= 0.0 && u < camera.width && v >= 0.0 && v < camera.height;
}

std::vector<ProjectedGaussian> project(const GaussianCloud &state, const CameraModel &camera,
                                       const Pose &pose, const RasterConfig &config) {
  state.validate();
  const std::size_t count = state.size();
  std::vector<ProjectedGaussian> out(count);
  const Mat3 &w = pose.rotation;
  for (std::size_t k = 0; k < count; ++k) {
    if (!finite3(state.positions[k]) || !state.rotations[k].allFinite() ||
        !finite3(state.log_scales[k]) || !std::isfinite(state.opacity_logits[k]) ||
        !finite3(state.colors[k]) || state.rotations[k].norm() == 0.0)
      throw RenderError("project: non-finite primitive parameters", k);

    ProjectedGaussian &p = out[k];
    p.cam = w * state.positions[k] + pose.translation;
    p.depth = p.cam.z();
    p.alpha_base = sigmoid(state.opacity_logits[k]);
    p.color = state.colors[k];
    p.in_frustum = frustum_test(state.positions[k], pose, camera);
    if (!p.in_frustum) continue;

    const double x = p.cam.x(), y = p.cam.y(), z = p.cam.z();
    p.mean2d = Vec2(camera.cx + camera.fx * x / z, camera.cy + camera.fy * y / z);
    Eigen::Matrix<double, 2, 3> jac;
    jac << camera.fx / z, 0.0, -camera.fx * x / (z * z), 0.0, camera.fy / z, -camera.fy * y / (z * z);
    p.sigma3d = covariance_from_factors(state.rotations[k], state.log_scales[k]);
    const Eigen::Matrix<double, 2, 3> t = jac * w;
    Mat2 cov = t * p.sigma3d * t.transpose();
    cov(0, 1) = cov(1, 0) = 0.5 * (cov(0, 1) + cov(1, 0));
    cov(0, 0) += config.blur;
    cov(1, 1) += config.blur;
    p.cov2d = cov;
    const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(1, 0);
    p.conic << cov(1, 1) / det, -cov(0, 1) / det, -cov(1, 0) / det, cov(0, 0) / det;
    const double mid = 0.5 * (cov(0, 0) + cov(1, 1));
    const double lambda_max = mid + std::sqrt(std::max(0.0, mid * mid - det));
    p.radius = 3.0 * std::sqrt(lambda_max);
  }
  return out;
}

ForwardResult rasterize_forward(std::vector<ProjectedGaussian> projected, const CameraModel &camera,
                                const Pose &pose, const Vec3 &background,
                                const RasterConfig &config) {
  camera.validate();
  ForwardResult result;
  ForwardState &st = result.state;
  st.camera = camera;
  st.pose = pose;
  st.config = config;
  st.background = background;

  for (std::size_t k = 0; k < projected.size(); ++k) {
    const auto &p = projected[k];
    if (!p.in_frustum) continue;
    if (!p.mean2d.allFinite() || !p.cov2d.allFinite() || !p.conic.allFinite() ||
        !std::isfinite(p.depth) || !std::isfinite(p.alpha_base) || !p.color.allFinite())
      throw RenderError("rasterize_forward: non-finite splat", k);
    st.order.push_back(static_cast<std::uint32_t>(k));
  }
  std::sort(st.order.begin(), st.order.end(), [&](std::uint32_t a, std::uint32_t b) {
    if (projected[a].depth != projected[b].depth) return projected[a].depth < projected[b].depth;
    return a < b;
  });

  const int width = camera.width, height = camera.height, ts = config.tile_size;
  st.tiles_x = (width + ts - 1) / ts;
  st.tiles_y = (height + ts - 1) / ts;
  const int tile_count = st.tiles_x * st.tiles_y;

  // Bin in sorted order so each tile list is already front to back.
  std::vector<std::vector<std::uint32_t>> bins(tile_count);
  const double bin_scale = config.cutoff_sigma / 3.0;
  for (std::uint32_t k : st.order) {
    const auto &p = projected[k];
    const double r = p.radius * bin_scale;
    int x0 = 0, x1 = st.tiles_x - 1, y0 = 0, y1 = st.tiles_y - 1;
    if (std::isfinite(r)) {
      x0 = std::max(0, static_cast<int>(std::floor((p.mean2d.x() - r) / ts)));
      x1 = std::min(st.tiles_x - 1, static_cast<int>(std::floor((p.mean2d.x() + r) / ts)));
      y0 = std::max(0, static_cast<int>(std::floor((p.mean2d.y() - r) / ts)));
      y1 = std::min(st.tiles_y - 1, static_cast<int>(std::floor((p.mean2d.y() + r) / ts)));
    }
    for (int ty = y0; ty <= y1; ++ty)
      for (int tx = x0; tx <= x1; ++tx) bins[ty * st.tiles_x + tx].push_back(k);
  }
  st.tile_offsets.assign(tile_count + 1, 0);
  for (int t = 0; t < tile_count; ++t)
    st.tile_offsets[t + 1] = st.tile_offsets[t] + static_cast<std::uint32_t>(bins[t].size());
  st.tile_entries.reserve(st.tile_offsets.back());
  for (const auto &bin : bins) st.tile_entries.insert(st.tile_entries.end(), bin.begin(), bin.end());

  const std::vector<Splat> splats = make_splats(projected);
  const double min_power = min_power_for(config);
  const std::size_t pixels = static_cast<std::size_t>(width) * height;
  result.image.pixels = Image(width, height);
  result.image.transmittance.assign(pixels, 1.0);
  st.pixel_end.assign(pixels, 0);
  std::vector<std::vector<std::uint32_t>> tile_touch(tile_count);

  tbb::parallel_for(tbb::blocked_range<int>(0, tile_count, 1), [&](const tbb::blocked_range<int> &range) {
    for (int t = range.begin(); t != range.end(); ++t) {
      const int tx = t % st.tiles_x, ty = t / st.tiles_x;
      const std::uint32_t begin = st.tile_offsets[t], end = st.tile_offsets[t + 1];
      auto &touch = tile_touch[t];
      touch.assign(end - begin, 0);
      for (int py = ty * ts; py < std::min(height, (ty + 1) * ts); ++py) {
        for (int px = tx * ts; px < std::min(width, (tx + 1) * ts); ++px) {
          double trans = 1.0, cr = 0.0, cg = 0.0, cb = 0.0;
          std::uint32_t e = begin;
          for (; e < end; ++e) {
            const Splat &s = splats[st.tile_entries[e]];
            double gauss, dx, dy;
            double alpha = splat_alpha(s, px, py, min_power, config, gauss, dx, dy);
            if (alpha < 0.0) continue;
            alpha = std::min(config.alpha_cap, alpha);
            const double w = alpha * trans;
            cr += s.r * w;
            cg += s.g * w;
            cb += s.b * w;
            trans *= (1.0 - alpha);
            ++touch[e - begin];
            if (trans < config.transmittance_min) {
              ++e;
              break;
            }
          }
          const std::size_t pix = static_cast<std::size_t>(py) * width + px;
          st.pixel_end[pix] = e;
          result.image.transmittance[pix] = trans;
          double *out = &result.image.pixels.data[pix * 3];
          out[0] = cr + trans * background.x();
          out[1] = cg + trans * background.y();
          out[2] = cb + trans * background.z();
        }
      }
    }
  });

  st.pixels_touched.assign(projected.size(), 0);
  for (int t = 0; t < tile_count; ++t)
    for (std::uint32_t e = st.tile_offsets[t]; e < st.tile_offsets[t + 1]; ++e)
      st.pixels_touched[st.tile_entries[e]] += tile_touch[t][e - st.tile_offsets[t]];
  st.final_transmittance = result.image.transmittance;
  st.projected = std::move(projected);
  return result;
}

BackwardResult rasterize_backward(const Image &d_pixels, const ForwardState &st,
                                  const GaussianCloud &state) {
  const CameraModel &camera = st.camera;
  if (d_pixels.width != camera.width || d_pixels.height != camera.height)
    throw ContractError("rasterize_backward: gradient image shape differs from forward call");
  if (state.size() != st.projected.size())
    throw ContractError("rasterize_backward: primitive count differs from forward call");

  const std::size_t count = state.size();
  const int width = camera.width, height = camera.height, ts = st.config.tile_size;
  const int tile_count = st.tiles_x * st.tiles_y;
  const RasterConfig &config = st.config;
  const std::vector<Splat> splats = make_splats(st.projected);
  const double min_power = min_power_for(config);
  const Vec3 &bg = st.background;

  // Per tile entry: d mean (2), d conic full-matrix entries (00, 01, 11), d alpha_base, d color (3).
  constexpr int kSlots = 9;
  std::vector<std::vector<double>> partial(tile_count);

  tbb::parallel_for(tbb::blocked_range<int>(0, tile_count, 1), [&](const tbb::blocked_range<int> &range) {
    for (int t = range.begin(); t != range.end(); ++t) {
      const int tx = t % st.tiles_x, ty = t / st.tiles_x;
      const std::uint32_t begin = st.tile_offsets[t];
      auto &buf = partial[t];
      buf.assign(static_cast<std::size_t>(st.tile_offsets[t + 1] - begin) * kSlots, 0.0);
      for (int py = ty * ts; py < std::min(height, (ty + 1) * ts); ++py) {
        for (int px = tx * ts; px < std::min(width, (tx + 1) * ts); ++px) {
          const std::size_t pix = static_cast<std::size_t>(py) * width + px;
          const double gr = d_pixels.data[pix * 3], gg = d_pixels.data[pix * 3 + 1],
                       gb = d_pixels.data[pix * 3 + 2];
          if (gr == 0.0 && gg == 0.0 && gb == 0.0) continue;
          double trans = st.final_transmittance[pix];
          // Color composited behind the current splat, background included.
          double br = trans * bg.x(), bgg = trans * bg.y(), bb = trans * bg.z();
          for (std::uint32_t e = st.pixel_end[pix]; e-- > begin;) {
            const Splat &s = splats[st.tile_entries[e]];
            double gauss, dx, dy;
            const double raw = splat_alpha(s, px, py, min_power, config, gauss, dx, dy);
            if (raw < 0.0) continue;
            const bool capped = raw > config.alpha_cap;
            const double alpha = capped ? config.alpha_cap : raw;
            const double one_minus = 1.0 - alpha;
            const double t_before = trans / one_minus;
            double *slot = &buf[static_cast<std::size_t>(e - begin) * kSlots];
            const double w = alpha * t_before;
            slot[6] += gr * w;
            slot[7] += gg * w;
            slot[8] += gb * w;
            const double d_alpha =
                t_before * (gr * s.r + gg * s.g + gb * s.b) - (gr * br + gg * bgg + gb * bb) / one_minus;
            br += s.r * w;
            bgg += s.g * w;
            bb += s.b * w;
            trans = t_before;
            if (capped) continue;
            slot[5] += d_alpha * gauss;
            const double d_power = d_alpha * s.alpha_base * gauss;
            // power = -1/2 d^T C d, d = pixel - mean.
            slot[0] += d_power * (s.ca * dx + s.cb * dy);
            slot[1] += d_power * (s.cb * dx + s.cc * dy);
            slot[2] += -0.5 * d_power * dx * dx;
            slot[3] += -0.5 * d_power * dx * dy;
            slot[4] += -0.5 * d_power * dy * dy;
          }
        }
      }
    }
  });

  std::vector<std::array<double, kSlots>> acc(count, std::array<double, kSlots>{});
  for (int t = 0; t < tile_count; ++t) {
    const std::uint32_t begin = st.tile_offsets[t];
    for (std::uint32_t e = begin; e < st.tile_offsets[t + 1]; ++e) {
      auto &a = acc[st.tile_entries[e]];
      const double *slot = &partial[t][static_cast<std::size_t>(e - begin) * kSlots];
      for (int i = 0; i < kSlots; ++i) a[i] += slot[i];
    }
  }

  BackwardResult out;
  out.grad.assign(count * layout::kStride, 0.0);
  out.grad_mean2d.assign(count, Vec2::Zero());
  out.stats.visible.assign(count, 0);
  out.stats.grad_norm_mean2d.assign(count, 0.0);
  out.stats.pixels_touched = st.pixels_touched;

  const Mat3 &w = st.pose.rotation;
  const double fx = camera.fx, fy = camera.fy;
  tbb::parallel_for(std::size_t{0}, count, [&](std::size_t k) {
    const ProjectedGaussian &p = st.projected[k];
    if (!p.in_frustum) return;
    out.stats.visible[k] = st.pixels_touched[k] > 0 ? 1 : 0;
    const auto &a = acc[k];
    const Vec2 d_mean(a[0], a[1]);
    out.grad_mean2d[k] = d_mean;
    out.stats.grad_norm_mean2d[k] = d_mean.norm();

    double *g = &out.grad[k * layout::kStride];
    g[layout::kColor + 0] = a[6];
    g[layout::kColor + 1] = a[7];
    g[layout::kColor + 2] = a[8];
    g[layout::kOpacity] = a[5] * p.alpha_base * (1.0 - p.alpha_base);

    Mat2 g_conic;
    g_conic << a[2], a[3], a[3], a[4];
    const Mat2 g_cov = -p.conic * g_conic * p.conic;

    const double x = p.cam.x(), y = p.cam.y(), z = p.cam.z();
    const double iz = 1.0 / z, iz2 = iz * iz, iz3 = iz2 * iz;
    Eigen::Matrix<double, 2, 3> jac;
    jac << fx * iz, 0.0, -fx * x * iz2, 0.0, fy * iz, -fy * y * iz2;
    const Eigen::Matrix<double, 2, 3> t = jac * w;
    const Mat3 g_sigma = t.transpose() * g_cov * t;
    const Eigen::Matrix<double, 2, 3> g_t = 2.0 * g_cov * t * p.sigma3d;
    const Eigen::Matrix<double, 2, 3> g_j = g_t * w.transpose();

    Vec3 g_cam;
    g_cam.x() = d_mean.x() * fx * iz + g_j(0, 2) * (-fx * iz2);
    g_cam.y() = d_mean.y() * fy * iz + g_j(1, 2) * (-fy * iz2);
    g_cam.z() = d_mean.x() * (-fx * x * iz2) + d_mean.y() * (-fy * y * iz2) + g_j(0, 0) * (-fx * iz2) +
                g_j(0, 2) * (2.0 * fx * x * iz3) + g_j(1, 1) * (-fy * iz2) + g_j(1, 2) * (2.0 * fy * y * iz3);
    const Vec3 g_mu = w.transpose() * g_cam;
    g[0] = g_mu.x();
    g[1] = g_mu.y();
    g[2] = g_mu.z();

    // Sigma = M M^T with M = R(q_hat) diag(exp(s)).
    const Vec4 &q = state.rotations[k];
    const double qn = q.norm();
    const Vec4 q_hat = q / qn;
    const Mat3 rot = rotation_from_quaternion(q_hat);
    const Vec3 scale = state.log_scales[k].array().exp();
    const Mat3 m = rot * scale.asDiagonal();
    const Mat3 g_m = 2.0 * g_sigma * m;
    const Mat3 g_rot = g_m * scale.asDiagonal();
    for (int i = 0; i < 3; ++i) g[layout::kLogScale + i] = g_m.col(i).dot(rot.col(i)) * scale[i];
    const Vec4 g_qhat = rotation_vjp(q_hat, g_rot);
    const Vec4 g_q = (g_qhat - q_hat * q_hat.dot(g_qhat)) / qn;
    for (int i = 0; i < 4; ++i) g[layout::kRotation + i] = g_q[i];
  });
  return out;
}

ForwardResult render(const GaussianCloud &state, const CameraModel &camera, const Pose &pose,
                     const Vec3 &background, const RasterConfig &config) {
  return rasterize_forward(project(state, camera, pose, config), camera, pose, background, config);
}

} // namespace splq
