#include "splq/error.hpp"
#include "splq/optimizer.hpp"
#include "splq/scenegen.hpp"
#include "splq/trainer.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <set>

using namespace splq;
using namespace splq::testing;

namespace {

SceneSpec small_spec(std::uint64_t seed) {
  SceneSpec s = SceneSpec::standard(seed);
  s.frames = 8;
  s.width = 64;
  s.height = 36;
  s.focal = 44.0;
  return s;
}

const GeneratedScene &small_scene() {
  static const GeneratedScene g = generate(small_spec(0));
  return g;
}

TrainConfig short_config(std::uint64_t iters = 120) {
  TrainConfig cfg = TrainConfig::desk_scale(iters);
  cfg.densify.interval = 20;
  return cfg;
}

} // namespace

TEST_CASE("adam first and second step") {
  std::vector<double> p{1.0, -2.0, 0.5};
  const std::vector<double> g1{0.3, -4.0, 0.0}, rates{0.1, 0.01, 1.0};
  AdamState s(3);
  adam_step(p, g1, s, rates);
  // Bias-corrected first step moves each element by its rate times sign(g).
  CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(-1.99).epsilon(1e-12));
  CHECK(p[2] == 0.5);
  CHECK(s.step == 1);

  const std::vector<double> g2{-0.1, -4.0, 0.0};
  adam_step(p, g2, s, rates);
  const double m = 0.9 * 0.1 * 0.3 + 0.1 * -0.1, v = 0.999 * 0.001 * 0.09 + 0.001 * 0.01;
  const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
  CHECK(p[0] == doctest::Approx(0.9 - 0.1 * mh / std::sqrt(vh)).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(-1.98).epsilon(1e-12));
}

TEST_CASE("adam rejects bad input without side effects") {
  std::vector<double> p{1.0, 2.0};
  AdamState s(2);
  const std::vector<double> rates{0.1, 0.1};
  const std::vector<double> bad{0.0, std::nan("")};
  CHECK_THROWS_WITH_AS(adam_step(p, bad, s, rates), doctest::Contains("1"), NumericError);
  CHECK(p == std::vector<double>{1.0, 2.0});
  CHECK(s == AdamState(2));
  CHECK_THROWS_AS(adam_step(p, std::vector<double>{1.0}, s, rates), ContractError);
}

TEST_CASE("optimizer step normalizes rotations and clamps colors") {
  std::mt19937_64 rng(1);
  Model m{random_cloud(rng, 4), DeformationNet::initialized(2)};
  OptimizerState st = make_optimizer_state(m);
  ParamVector g(m.canonical.size() * layout::kStride, 0.0);
  for (std::size_t k = 0; k < 4; ++k) {
    g[k * layout::kStride + layout::kRotation] = 1.0;
    for (int c = 0; c < 3; ++c) g[k * layout::kStride + layout::kColor + c] = k % 2 ? 1.0 : -1.0;
  }
  LearningRates r;
  r.color = 5.0;
  r.rotation = 0.5;
  optimizer_step(m, g, std::vector<double>(m.net.weights.size(), 0.0), st, r);
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(m.canonical.rotations[k].norm() == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(m.canonical.colors[k] == Vec3::Constant(k % 2 ? 0.0 : 1.0));
  }
  std::vector<double> bad_net(m.net.weights.size(), 0.0);
  bad_net[3] = INFINITY;
  const Model before = m;
  CHECK_THROWS_AS(optimizer_step(m, g, bad_net, st, r), NumericError);
  CHECK(m == before);
}

TEST_CASE("densify clones, splits and prunes") {
  Model m;
  m.net = DeformationNet::initialized(0);
  const Vec4 q(1, 0, 0, 0);
  m.canonical.push_back(Vec3(0, 0, 3), q, Vec3::Constant(std::log(0.005)), 1.0, Vec3(1, 0, 0)); // small, grows
  m.canonical.push_back(Vec3(1, 0, 3), q, Vec3::Constant(std::log(0.5)), 1.0, Vec3(0, 1, 0));   // large, grows
  m.canonical.push_back(Vec3(2, 0, 3), q, Vec3::Constant(std::log(0.5)), -8.0, Vec3(0, 0, 1));  // transparent
  m.canonical.push_back(Vec3(3, 0, 3), q, Vec3::Constant(std::log(0.5)), 1.0, Vec3(1, 1, 1));   // quiet
  OptimizerState opt = make_optimizer_state(m);
  for (std::size_t i = 0; i < opt.canonical.m.size(); ++i) opt.canonical.m[i] = static_cast<double>(i);
  DensifyStats stats(4);
  stats.grad_sum = {2e-4, 4e-4, 1.0, 1e-5};
  stats.count = {1, 1, 1, 1};
  std::mt19937_64 rng(0);
  DensifyConfig cfg;
  const DensifyOutcome out = densify_and_prune(m, opt, stats, cfg, 1.0, rng);
  CHECK(out.cloned == 1);
  CHECK(out.split == 1);
  CHECK(out.pruned == 1);
  // kept: 0 (clone source), 3; then the clone of 0 and two halves of 1
  REQUIRE(m.canonical.size() == 5);
  CHECK(m.canonical.positions[0] == Vec3(0, 0, 3));
  CHECK(m.canonical.positions[1] == Vec3(3, 0, 3));
  CHECK(m.canonical.positions[2] == Vec3(0, 0, 3));
  for (std::size_t k : {3u, 4u}) {
    CHECK(m.canonical.log_scales[k][0] == doctest::Approx(std::log(0.5 / 1.6)));
    CHECK(m.canonical.colors[k] == Vec3(0, 1, 0));
  }
  REQUIRE(opt.canonical.m.size() == 5 * layout::kStride);
  CHECK(opt.canonical.m[layout::kStride] == 3.0 * layout::kStride);
  CHECK(opt.canonical.m[2 * layout::kStride] == 0.0);

  // A budget of one extra primitive goes to the highest gradient.
  Model m2;
  m2.net = m.net;
  m2.canonical.push_back(Vec3(0, 0, 3), q, Vec3::Constant(std::log(0.005)), 1.0, Vec3::Zero());
  m2.canonical.push_back(Vec3(1, 0, 3), q, Vec3::Constant(std::log(0.005)), 1.0, Vec3::Zero());
  OptimizerState opt2 = make_optimizer_state(m2);
  DensifyStats s2(2);
  s2.grad_sum = {2e-4, 6e-4};
  s2.count = {1, 2};
  cfg.max_primitives = 3;
  const DensifyOutcome o2 = densify_and_prune(m2, opt2, s2, cfg, 1.0, rng);
  CHECK(o2.cloned == 1);
  CHECK(m2.canonical.positions.back() == Vec3(1, 0, 3));
  CHECK_THROWS_AS(densify_and_prune(m2, opt2, DensifyStats(1), cfg, 1.0, rng), ContractError);
}

TEST_CASE("desk scale schedule and validation") {
  const TrainConfig c = TrainConfig::desk_scale(3000);
  CHECK(c.anchor.start_iter == 1000);
  CHECK(c.anchor.l1_switch_iter == 2000);
  CHECK_NOTHROW(c.validate());
  TrainConfig bad = c;
  bad.total_iters = 1500;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.lr.net = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.w_ssim = 2.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("short training reduces the reconstruction loss") {
  const GeneratedScene &g = small_scene();
  TrainConfig cfg = short_config(160);
  cfg.anchor.lambda_hidden = cfg.anchor.lambda_defective = 0.0;
  const TrainResult r = train(g.dataset, g.initial, cfg);
  REQUIRE(r.log.size() == 160);
  auto mean = [&](std::size_t from, std::size_t to) {
    double s = 0.0;
    for (std::size_t i = from; i < to; ++i) s += r.log[i].recon;
    return s / static_cast<double>(to - from);
  };
  CHECK(mean(120, 160) < 0.8 * mean(0, 40));
  for (const auto &rec : r.log) CHECK(std::isfinite(rec.total));
  CHECK(r.model.canonical.size() <= cfg.densify.max_primitives);
}

TEST_CASE("training is deterministic") {
  const GeneratedScene &g = small_scene();
  const TrainResult a = train(g.dataset, g.initial, short_config());
  const TrainResult b = train(g.dataset, g.initial, short_config());
  CHECK(a.model == b.model);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) CHECK(to_json_line(a.log[i]) == to_json_line(b.log[i]));
  TrainConfig other = short_config();
  other.seed = 1;
  CHECK_FALSE(train(g.dataset, g.initial, other).model == a.model);
}

TEST_CASE("anchor schedule and event direction during training") {
  const GeneratedScene &g = small_scene();
  TrainConfig cfg = short_config();
  cfg.record_events = true;
  const TrainResult r = train(g.dataset, g.initial, cfg);
  REQUIRE(r.events.size() > 0);
  CHECK(r.hidden_events > 0);
  std::set<std::uint64_t> iters;
  for (const auto &e : r.events) {
    CHECK(e.iter >= cfg.anchor.start_iter);
    CHECK(e.iter % cfg.anchor.anchor_every == 0);
    CHECK(e.norm == (e.iter < cfg.anchor.l1_switch_iter ? NormMode::l2 : NormMode::l1));
    if (e.kind == AnchorKind::hidden) CHECK(e.t_ref < e.t);
    else CHECK(e.t_ref > e.t);
    CHECK(e.phi == doctest::Approx(std::exp(-cfg.anchor.tau * std::abs(e.t - e.t_ref))));
    iters.insert(e.iter);
  }
  CHECK(r.anchor_steps == (120 - 40) / 10 + 1);
  for (const auto &rec : r.log)
    if (rec.iter < cfg.anchor.start_iter) {
      CHECK(rec.anchor_events == 0);
      CHECK(rec.hidden == 0.0);
    }
}

TEST_CASE("ablations") {
  const GeneratedScene &g = small_scene();
  TrainConfig off = short_config();
  off.no_hidden = off.no_defective = true;
  TrainConfig zero = short_config();
  zero.anchor.lambda_hidden = zero.anchor.lambda_defective = 0.0;
  const TrainResult a = train(g.dataset, g.initial, off), b = train(g.dataset, g.initial, zero);
  CHECK(a.model == b.model);
  CHECK(a.anchor_steps == 0);

  TrainConfig nh = short_config();
  nh.no_hidden = true;
  nh.record_events = true;
  const TrainResult c = train(g.dataset, g.initial, nh);
  CHECK(c.hidden_events == 0);
  for (const auto &e : c.events) CHECK(e.kind == AnchorKind::defective);

  TrainConfig nc = short_config();
  nc.no_confidence = true;
  nc.record_events = true;
  const TrainResult d = train(g.dataset, g.initial, nc);
  for (const auto &e : d.events) CHECK(e.phi == 1.0);
}

TEST_CASE("json lines") {
  IterationRecord r;
  r.iter = 7;
  r.recon = 0.5;
  const std::string line = to_json_line(r);
  CHECK(line.find("\"iter\":7") != std::string::npos);
  CHECK(line.find("\"L_recon\":0.5") != std::string::npos);
  AnchorEvent e;
  e.kind = AnchorKind::defective;
  CHECK(to_json_line(e).find("\"kind\":\"defective\"") != std::string::npos);
}
