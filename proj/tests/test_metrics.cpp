#include "splq/error.hpp"
#include "splq/image_metrics.hpp"
#include "splq/loss.hpp"
#include "splq/metrics.hpp"

#include "test_support.hpp"

#include <doctest.h>

using namespace splq;
using namespace splq::testing;

namespace {

// Direct SSIM: every window evaluated independently with an explicit 2D kernel.
double oracle_ssim(const Image &a, const Image &b) {
  const int n = 11;
  double k[n], sum = 0.0;
  for (int i = 0; i < n; ++i) sum += k[i] = std::exp(-0.5 * (i - 5) * (i - 5) / (1.5 * 1.5));
  for (double &v : k) v /= sum;
  auto lum = [](const Image &img, int x, int y) { return (img.at(x, y, 0) + img.at(x, y, 1) + img.at(x, y, 2)) / 3.0; };
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0.0;
  int windows = 0;
  for (int y0 = 0; y0 + n <= a.height; ++y0)
    for (int x0 = 0; x0 + n <= a.width; ++x0) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
          const double w = k[i] * k[j], va = lum(a, x0 + i, y0 + j), vb = lum(b, x0 + i, y0 + j);
          ma += w * va;
          mb += w * vb;
          saa += w * va * va;
          sbb += w * vb * vb;
          sab += w * va * vb;
        }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      total += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++windows;
    }
  return total / windows;
}

SceneSpec small_spec(std::uint64_t seed) {
  SceneSpec s = SceneSpec::standard(seed);
  s.frames = 8;
  s.width = 64;
  s.height = 36;
  s.focal = 44.0;
  return s;
}

} // namespace

TEST_CASE("psnr examples") {
  Image a(4, 4, 0.5), b(4, 4, 0.5);
  CHECK(psnr(a, b) == kPsnrClamp);
  for (double &v : b.data) v = 0.6;
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-12));
  b = a;
  b.data[0] = 1.5;  // one of 48 values off by 1
  CHECK(psnr(a, b) == doctest::Approx(10.0 * std::log10(48.0)).epsilon(1e-12));
  CHECK_THROWS_AS(psnr(a, Image(3, 4)), ContractError);
}

TEST_CASE("ssim matches a direct window oracle") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 4; ++trial) {
    const Image a = random_image(rng, 19, 15);
    Image b = a;
    std::normal_distribution<double> noise(0.0, 0.1 * (trial + 1));
    for (double &v : b.data) v += noise(rng);
    CHECK(ssim(a, b) == doctest::Approx(oracle_ssim(a, b)).epsilon(1e-12));
  }
  const Image same = random_image(rng, 12, 12);
  CHECK(ssim(same, same) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(ssim(Image(10, 20), Image(10, 20)), ArgumentError);
  CHECK_THROWS_AS(ssim(Image(12, 12), Image(13, 12)), ContractError);
}

TEST_CASE("ssim gradient matches central differences") {
  std::mt19937_64 rng(5);
  Image a = random_image(rng, 13, 12);
  const Image b = random_image(rng, 13, 12);
  const SsimGradient g = ssim_with_gradient(a, b);
  CHECK(g.value == doctest::Approx(ssim(a, b)).epsilon(1e-14));
  for (std::size_t i = 0; i < a.data.size(); i += 5) {
    const double fd = central_difference(a.data, i, 1e-4, [&] { return ssim(a, b); });
    CHECK(rel_err(fd, g.grad.data[i]) < 1e-5);
  }
}

TEST_CASE("recon loss examples") {
  Image a(12, 12, 0.5), b(12, 12, 0.5);
  CHECK(recon_loss(a, b, 0.2).value == doctest::Approx(0.0).epsilon(1e-15));
  for (double &v : b.data) v = 0.3;
  // Constant images have zero variance, so SSIM reduces to the luminance term.
  const double c1 = 1e-4;
  const double s = (2 * 0.5 * 0.3 + c1) / (0.25 + 0.09 + c1);
  CHECK(recon_loss(a, b, 0.0).value == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(recon_loss(a, b, 0.2).value == doctest::Approx(0.8 * 0.2 + 0.1 * (1 - s)).epsilon(1e-12));
  CHECK_THROWS_AS(recon_loss(a, Image(11, 12), 0.2), ContractError);
  CHECK_THROWS_AS(recon_loss(a, b, 1.5), ArgumentError);
}

TEST_CASE("recon loss gradient matches central differences") {
  std::mt19937_64 rng(9);
  Image a = random_image(rng, 14, 12);
  const Image b = random_image(rng, 14, 12);
  const ReconLoss r = recon_loss(a, b, 0.2);
  for (std::size_t i = 0; i < a.data.size(); i += 7) {
    const double fd = central_difference(a.data, i, 1e-7, [&] { return recon_loss(a, b, 0.2).value; });
    CHECK(rel_err(fd, r.grad.data[i]) < 1e-5);
  }
}

TEST_CASE("aggregate bottom fractions") {
  const std::vector<double> v{4, 1, 3, 2, 5, 6, 8, 7};
  const Aggregate a = Aggregate::of(v);
  CHECK(a.mean == 4.5);
  CHECK(a.bottom75 == doctest::Approx(3.5));
  CHECK(a.bottom50 == doctest::Approx(2.5));
  CHECK(a.bottom25 == doctest::Approx(1.5));
  CHECK(a.worst == 1.0);
}

TEST_CASE("drift closed form") {
  const std::vector<double> grid{0.0, 0.25, 0.5, 0.75};
  std::vector<GaussianCloud> states;
  for (double t : grid) {
    GaussianCloud c;
    c.push_back(Vec3(t, 0, 1), Vec4(1, 0, 0, 0), Vec3::Zero(), 0.0, Vec3::Zero());
    c.push_back(Vec3(0, 0, 1), Vec4(1, 0, 0, 0), Vec3::Constant(2 * t), 0.0, Vec3::Zero());
    states.push_back(c);
  }
  // Reference is the lower median, t = 0.25.
  const auto d = drift_from_states(states, grid);
  REQUIRE(d.size() == 2);
  CHECK(d[0] == doctest::Approx((0.25 + 0 + 0.25 + 0.5) / 4));
  CHECK(d[1] == doctest::Approx(3 * 2 * (0.25 + 0 + 0.25 + 0.5) / 4));
  CHECK_THROWS_AS(drift_from_states(std::span(states).first(1), std::span(grid).first(1)), ArgumentError);
}

TEST_CASE("drift of an untrained model is zero") {
  std::mt19937_64 rng(2);
  Model m{random_cloud(rng, 5), DeformationNet::initialized(1)};
  const std::vector<double> grid{0.0, 0.3, 0.9};
  for (double d : drift_all(m, grid)) CHECK(d == 0.0);
  CHECK_THROWS_AS(drift(m, 5, grid), ArgumentError);
}

TEST_CASE("evaluate_freeze shape, order and deformation count") {
  const GeneratedScene g = generate(small_spec(4));
  const Model m{g.truth.canonical, DeformationNet::initialized(7)};
  CHECK_THROWS_WITH_AS(evaluate_freeze(m, g.dataset, nullptr), doctest::Contains("GT required"), ArgumentError);
  CHECK_THROWS_AS(evaluate_freeze(m, g.dataset, &g.truth, 0), ArgumentError);

  const std::uint64_t before = deform_invocation_count();
  const EvalReport r = evaluate_freeze(m, g.dataset, &g.truth, 3);
  CHECK(deform_invocation_count() - before == 3);
  REQUIRE(r.scores.size() == 3 * 8);
  for (std::size_t i = 0; i < r.scores.size(); ++i) {
    CHECK(r.scores[i].freeze_index == i / 8);
    CHECK(r.scores[i].pose == i % 8);
    CHECK(r.scores[i].t == g.dataset.frames[3 * (i / 8)].timestamp);
  }
  CHECK(r.drift.size() == m.canonical.size());
  CHECK(r.psnr.worst <= r.psnr.bottom25);
  CHECK(r.psnr.bottom25 <= r.psnr.mean);

  std::size_t lines = 0;
  for (char c : r.to_jsonl()) lines += c == '\n';
  CHECK(lines == r.scores.size() + 1);
  CHECK(r.to_table().find("frames 24") != std::string::npos);
}

TEST_CASE("freeze frames deform once and match per-pose renders") {
  const GeneratedScene g = generate(small_spec(1));
  const Model m{g.truth.canonical, DeformationNet::initialized(3)};
  std::vector<Pose> poses;
  for (const auto &f : g.dataset.frames) poses.push_back(f.pose);
  const std::uint64_t before = deform_invocation_count();
  const auto frames = freeze_frames(m, g.dataset.camera, poses, g.dataset.background, 0.4);
  CHECK(deform_invocation_count() - before == 1);
  REQUIRE(frames.size() == poses.size());
  const GaussianCloud state = deform(m.net, m.canonical, 0.4).state;
  for (std::size_t n = 0; n < poses.size(); ++n)
    CHECK(frames[n] == render(state, g.dataset.camera, poses[n], g.dataset.background).image.pixels);
}
