#include "splq/error.hpp"
#include "splq/rasterizer.hpp"
#include "test_support.hpp"

#include <doctest.h>
#include <tbb/global_control.h>

using namespace splq;
using testing::small_camera;

namespace {

CameraModel wide_camera() {
  CameraModel c;
  c.fx = c.fy = 100.0;
  c.cx = c.cy = 50.0;
  c.width = c.height = 200;
  c.near = 0.1;
  c.far = 100.0;
  return c;
}

GaussianCloud single(const Vec3 &pos, double log_scale, double opacity_logit, const Vec3 &color) {
  GaussianCloud c;
  c.push_back(pos, Vec4(1, 0, 0, 0), Vec3::Constant(log_scale), opacity_logit, color);
  return c;
}

// Mean over pixels of w . pixel: a loss with O(1) magnitude and known pixel gradient.
struct LinearLoss {
  Image weights;
  double operator()(const Image &img) const {
    double s = 0.0;
    for (std::size_t i = 0; i < img.data.size(); ++i) s += weights.data[i] * img.data[i];
    return s / static_cast<double>(img.pixel_count());
  }
  Image grad() const {
    Image g = weights;
    for (double &v : g.data) v /= static_cast<double>(weights.pixel_count());
    return g;
  }
};

} // namespace

TEST_CASE("projection of points on and off the principal axis") {
  const CameraModel cam = wide_camera();
  const Pose pose;
  auto p = project(single(Vec3(0, 0, 2), -2, 0, Vec3::Zero()), cam, pose);
  CHECK(p[0].in_frustum);
  CHECK(p[0].mean2d.isApprox(Vec2(50, 50)));
  p = project(single(Vec3(1, 0, 2), -2, 0, Vec3::Zero()), cam, pose);
  CHECK(p[0].mean2d.isApprox(Vec2(100, 50)));
  CHECK(p[0].depth == 2.0);
  p = project(single(Vec3(0, 0, -1), -2, 0, Vec3::Zero()), cam, pose);
  CHECK_FALSE(p[0].in_frustum);
}

TEST_CASE("projected covariance carries the blur floor and a 3 sigma radius") {
  const CameraModel cam = wide_camera();
  RasterConfig cfg;
  const auto p = project(single(Vec3(0, 0, 2), std::log(0.01), 0, Vec3::Zero()), cam, Pose(), cfg);
  // sigma_px = f * s / z = 0.5 px, variance 0.25 plus the floor.
  CHECK(p[0].cov2d(0, 0) == doctest::Approx(0.25 + cfg.blur));
  CHECK(p[0].cov2d(0, 1) == doctest::Approx(0.0));
  CHECK(p[0].radius == doctest::Approx(3.0 * std::sqrt(0.25 + cfg.blur)));
}

TEST_CASE("frustum test on the center only") {
  const CameraModel cam = small_camera();
  const Pose pose;
  const double mid = 0.5 * (cam.near + cam.far);
  CHECK(frustum_test(Vec3(0, 0, mid), pose, cam));
  CHECK_FALSE(frustum_test(Vec3(0, 0, cam.far + 1), pose, cam));
  // u = cx + fx x / z = W + 10.
  const double z = 3.0;
  const double x = (cam.width + 10 - cam.cx) * z / cam.fx;
  CHECK_FALSE(frustum_test(Vec3(x, 0, z), pose, cam));
  CHECK_FALSE(frustum_test(Vec3(0, 0, cam.near * 0.5), pose, cam));
}

TEST_CASE("single capped splat on a pixel center") {
  const CameraModel cam = small_camera();
  const auto r = render(single(Vec3(0, 0, 3), -2.0, 10.0, Vec3(1, 0, 0)), cam, Pose(), Vec3::Zero());
  CHECK(r.image.pixels.at(12, 12, 0) == doctest::Approx(0.99).epsilon(1e-12));
  CHECK(r.image.pixels.at(12, 12, 1) == 0.0);
  CHECK(r.image.pixels.at(12, 12, 2) == 0.0);
}

TEST_CASE("two half-transparent white splats give 0.75") {
  const CameraModel cam = small_camera();
  GaussianCloud c = single(Vec3(0, 0, 3), -2.0, 0.0, Vec3(1, 1, 1));
  c.push_back(Vec3(0, 0, 4), Vec4(1, 0, 0, 0), Vec3::Constant(-2.0), 0.0, Vec3(1, 1, 1));
  const auto r = render(c, cam, Pose(), Vec3::Zero());
  CHECK(r.image.pixels.at(12, 12, 1) == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(r.image.transmittance[12 * 24 + 12] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("an opaque front splat hides the one behind") {
  const CameraModel cam = small_camera();
  GaussianCloud c = single(Vec3(0, 0, 2), std::log(0.5), 10.0, Vec3(0, 0, 1));
  c.push_back(Vec3(0, 0, 4), Vec4(1, 0, 0, 0), Vec3::Constant(-2.0), 10.0, Vec3(1, 0, 0));
  const auto r = render(c, cam, Pose(), Vec3::Zero());
  CHECK(r.image.pixels.at(12, 12, 0) < 0.01);
}

TEST_CASE("zero upstream gradient gives zero gradients") {
  std::mt19937_64 rng(1);
  const CameraModel cam = small_camera();
  const GaussianCloud c = testing::random_cloud(rng, 8);
  const auto f = render(c, cam, Pose(), Vec3(0.1, 0.2, 0.3));
  const auto b = rasterize_backward(Image(24, 24), f.state, c);
  for (double g : b.grad) CHECK(g == 0.0);
  for (double g : b.stats.grad_norm_mean2d) CHECK(g == 0.0);
}

TEST_CASE("single splat mean gradient matches finite differences") {
  const CameraModel cam = small_camera();
  const RasterConfig cfg = RasterConfig::smooth();
  GaussianCloud c = single(Vec3(0.05, -0.03, 3), std::log(0.15), 0.3, Vec3(0.8, 0.4, 0.2));
  GaussianCloud shifted = c;
  shifted.positions[0] += Vec3(0.1, 0.05, 0);
  const Image target = render(shifted, cam, Pose(), Vec3::Zero(), cfg).image.pixels;
  auto loss = [&](const GaussianCloud &x) {
    const Image img = render(x, cam, Pose(), Vec3::Zero(), cfg).image.pixels;
    double s = 0.0;
    for (std::size_t i = 0; i < img.data.size(); ++i) s += (img.data[i] - target.data[i]) * (img.data[i] - target.data[i]);
    return s / static_cast<double>(img.data.size());
  };
  const auto f = render(c, cam, Pose(), Vec3::Zero(), cfg);
  Image d(24, 24);
  for (std::size_t i = 0; i < d.data.size(); ++i)
    d.data[i] = 2.0 * (f.image.pixels.data[i] - target.data[i]) / static_cast<double>(d.data.size());
  const auto b = rasterize_backward(d, f.state, c);
  for (int axis = 0; axis < 3; ++axis) {
    std::vector<double> x{c.positions[0][axis]};
    const double numeric = testing::central_difference(x, 0, 1e-5, [&] {
      GaussianCloud y = c;
      y.positions[0][axis] = x[0];
      return loss(y);
    });
    CHECK(testing::rel_err(b.grad[axis], numeric) < 1e-4);
  }
}

TEST_CASE("every parameter gradient matches finite differences on random scenes") {
  std::mt19937_64 rng(2024);
  const RasterConfig cfg = RasterConfig::smooth();
  double worst = 0.0;
  for (int scene = 0; scene < 6; ++scene) {
    const int w = 16 + static_cast<int>(rng() % 17), h = 16 + static_cast<int>(rng() % 17);
    const CameraModel cam = small_camera(w, h, 0.9 * std::min(w, h));
    const GaussianCloud c = testing::random_cloud(rng, 1 + rng() % 16);
    const Vec3 bg(0.2, 0.1, 0.3);
    const LinearLoss loss{testing::random_image(rng, w, h)};
    const auto f = render(c, cam, Pose(), bg, cfg);
    const auto b = rasterize_backward(loss.grad(), f.state, c);
    std::vector<double> params = pack_cloud(c);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double numeric = testing::central_difference(params, i, 1e-5, [&] {
        return loss(render(unpack_cloud(params), cam, Pose(), bg, cfg).image.pixels);
      });
      worst = std::max(worst, testing::rel_err(b.grad[i], numeric));
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("out-of-frustum primitives get no gradient and are not visible") {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  std::size_t outside = 0;
  for (int scene = 0; scene < 100; ++scene) {
    const CameraModel cam = small_camera();
    GaussianCloud c = testing::random_cloud(rng, 12, 1.6);
    for (std::size_t k = 0; k < 4; ++k) c.positions[k] = Vec3(u(rng), u(rng), u(rng));
    const auto f = render(c, cam, Pose(), Vec3::Zero());
    const auto b = rasterize_backward(testing::random_image(rng, 24, 24), f.state, c);
    for (std::size_t k = 0; k < c.size(); ++k) {
      if (f.state.projected[k].in_frustum) continue;
      ++outside;
      REQUIRE(b.stats.visible[k] == 0);
      REQUIRE(b.stats.grad_norm_mean2d[k] == 0.0);
      REQUIRE(b.stats.pixels_touched[k] == 0);
      for (std::size_t j = 0; j < layout::kStride; ++j) REQUIRE(b.grad[k * layout::kStride + j] == 0.0);
    }
  }
  CHECK(outside > 100);
}

TEST_CASE("an occluded splat behind saturated layers is in frustum but gets no gradient") {
  const CameraModel cam = small_camera();
  GaussianCloud c;
  for (int layer = 0; layer < 6; ++layer)
    c.push_back(Vec3(0, 0, 2.0 + 0.1 * layer), Vec4(1, 0, 0, 0), Vec3::Constant(std::log(4.0)), 10.0, Vec3(0.2, 0.2, 0.2));
  c.push_back(Vec3(0, 0, 4), Vec4(1, 0, 0, 0), Vec3::Constant(std::log(0.1)), 10.0, Vec3(1, 0, 0));
  const std::size_t back = c.size() - 1;
  const auto f = render(c, cam, Pose(), Vec3::Zero());
  std::mt19937_64 rng(4);
  const Image d = testing::random_image(rng, 24, 24);
  const auto b = rasterize_backward(d, f.state, c);
  CHECK(f.state.projected[back].in_frustum);
  CHECK(b.stats.grad_norm_mean2d[back] == 0.0);
  CHECK(b.stats.visible[back] == 0);
  const auto oracle = testing::oracle_render(f.state.projected, cam, Vec3::Zero(), RasterConfig{}, &d);
  CHECK(oracle.touched[back] == 0);
  CHECK(oracle.grad_mean2d[back].norm() == 0.0);
}

TEST_CASE("forward image and mean gradients agree with the brute-force compositor") {
  std::mt19937_64 rng(99);
  const RasterConfig cfg;
  for (int scene = 0; scene < 20; ++scene) {
    const CameraModel cam = small_camera(40, 36, 30.0);
    const GaussianCloud c = testing::random_cloud(rng, 20, 1.2, -1.5);
    const Image d = testing::random_image(rng, 40, 36);
    const auto f = render(c, cam, Pose(), Vec3(0.1, 0.1, 0.1), cfg);
    const auto b = rasterize_backward(d, f.state, c);
    const auto o = testing::oracle_render(f.state.projected, cam, Vec3(0.1, 0.1, 0.1), cfg, &d);
    for (std::size_t i = 0; i < o.image.data.size(); ++i) REQUIRE(std::abs(o.image.data[i] - f.image.pixels.data[i]) < 1e-12);
    for (std::size_t k = 0; k < c.size(); ++k) {
      REQUIRE(static_cast<int>(b.stats.pixels_touched[k]) == o.touched[k]);
      REQUIRE((b.grad_mean2d[k] - o.grad_mean2d[k]).norm() <= 1e-9 * (1.0 + o.grad_mean2d[k].norm()));
    }
  }
}

TEST_CASE("black background and colors in [0, 1] keep pixels in [0, 1]") {
  std::mt19937_64 rng(8);
  for (int scene = 0; scene < 20; ++scene) {
    const GaussianCloud c = testing::random_cloud(rng, 30, 1.0, -1.0);
    const auto f = render(c, small_camera(), Pose(), Vec3::Zero());
    for (double v : f.image.pixels.data) REQUIRE((v >= 0.0 && v <= 1.0));
    for (double t : f.image.transmittance) REQUIRE((t >= 0.0 && t <= 1.0));
  }
}

TEST_CASE("renders and gradients do not depend on the thread count") {
  std::mt19937_64 rng(5);
  const CameraModel cam = small_camera(64, 48, 50.0);
  const GaussianCloud c = testing::random_cloud(rng, 60, 1.2, -1.5);
  const Image d = testing::random_image(rng, 64, 48);
  auto run = [&](int threads) {
    tbb::global_control limit(tbb::global_control::max_allowed_parallelism, threads);
    const auto f = render(c, cam, Pose(), Vec3(0.1, 0.2, 0.3));
    return std::make_pair(f.image.pixels, rasterize_backward(d, f.state, c).grad);
  };
  const auto one = run(1), four = run(4);
  CHECK(one.first == four.first);
  CHECK(one.second == four.second);
}

TEST_CASE("backward rejects a mismatched forward state") {
  std::mt19937_64 rng(6);
  const GaussianCloud c = testing::random_cloud(rng, 5);
  const auto f = render(c, small_camera(), Pose(), Vec3::Zero());
  CHECK_THROWS_AS(rasterize_backward(Image(24, 24), f.state, testing::random_cloud(rng, 6)), ContractError);
  CHECK_THROWS_AS(rasterize_backward(Image(20, 24), f.state, c), ContractError);
}

TEST_CASE("non-finite parameters name the primitive") {
  std::mt19937_64 rng(7);
  GaussianCloud c = testing::random_cloud(rng, 5);
  c.log_scales[3].x() = std::nan("");
  try {
    render(c, small_camera(), Pose(), Vec3::Zero());
    FAIL("expected RenderError");
  } catch (const RenderError &e) {
    CHECK(e.primitive() == 3);
  }
}
