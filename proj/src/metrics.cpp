#include "splq/metrics.hpp"

#include "splq/error.hpp"

#include <nlohmann/json.hpp>
#include <tbb/parallel_for.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace splq {

std::vector<Image> freeze_frames(const Model &model, const CameraModel &camera, std::span<const Pose> poses,
                                 const Vec3 &background, double t, const RasterConfig &raster) {
  const GaussianCloud state = deform(model.net, model.canonical, t).state;
  std::vector<Image> out(poses.size());
  tbb::parallel_for(std::size_t{0}, poses.size(), [&](std::size_t n) {
    out[n] = render(state, camera, poses[n], background, raster).image.pixels;
  });
  return out;
}

namespace {

std::size_t median_index(std::span<const double> grid) {
  std::vector<std::size_t> order(grid.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return grid[a] < grid[b]; });
  return order[(grid.size() - 1) / 2];
}

void require_grid(std::span<const double> grid) {
  if (grid.size() < 2) throw ArgumentError("drift: the timestamp grid needs at least two points");
}

} // namespace

std::vector<double> drift_from_states(std::span<const GaussianCloud> states, std::span<const double> grid) {
  require_grid(grid);
  if (states.size() != grid.size()) throw ContractError("drift_from_states: one state per grid point required");
  const GaussianCloud &ref = states[median_index(grid)];
  std::vector<double> out(ref.size(), 0.0);
  for (const auto &s : states) {
    if (s.size() != ref.size()) throw ContractError("drift_from_states: states disagree in primitive count");
    for (std::size_t k = 0; k < ref.size(); ++k) {
      const auto a = pack_params(s, k), b = pack_params(ref, k);
      for (std::size_t i = 0; i < layout::kStride; ++i) out[k] += std::abs(a[i] - b[i]);
    }
  }
  for (double &d : out) d /= static_cast<double>(grid.size());
  return out;
}

std::vector<double> drift_all(const Model &model, std::span<const double> grid) {
  require_grid(grid);
  std::vector<GaussianCloud> states;
  for (double t : grid) states.push_back(deform(model.net, model.canonical, t).state);
  return drift_from_states(states, grid);
}

double drift(const Model &model, std::size_t k, std::span<const double> grid) {
  if (k >= model.canonical.size()) throw ArgumentError("drift: primitive index out of range");
  return drift_all(model, grid)[k];
}

Aggregate Aggregate::of(std::span<const double> values) {
  Aggregate a;
  if (values.empty()) return a;
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  auto bottom = [&](double p) {
    const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(p * v.size())));
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += v[i];
    return sum / static_cast<double>(n);
  };
  a.mean = bottom(1.0);
  a.bottom75 = bottom(0.75);
  a.bottom50 = bottom(0.5);
  a.bottom25 = bottom(0.25);
  a.worst = v.front();
  return a;
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-6s %10s %10s %10s %10s %10s\n", "metric", "mean", "bottom75", "bottom50",
                "bottom25", "worst");
  os << line;
  auto row = [&](const char *name, const Aggregate &a) {
    std::snprintf(line, sizeof line, "%-6s %10.4f %10.4f %10.4f %10.4f %10.4f\n", name, a.mean, a.bottom75,
                  a.bottom50, a.bottom25, a.worst);
    os << line;
  };
  row("psnr", psnr);
  row("ssim", ssim);
  os << "frames " << scores.size() << "\n";
  return os.str();
}

std::string EvalReport::to_jsonl() const {
  std::ostringstream os;
  for (const auto &s : scores) {
    nlohmann::ordered_json j;
    j["freeze_index"] = s.freeze_index;
    j["t"] = s.t;
    j["pose"] = s.pose;
    j["psnr"] = s.psnr;
    j["ssim"] = s.ssim;
    os << j.dump() << "\n";
  }
  auto agg = [](const Aggregate &a) {
    return nlohmann::ordered_json{{"mean", a.mean},         {"bottom75", a.bottom75}, {"bottom50", a.bottom50},
                                  {"bottom25", a.bottom25}, {"worst", a.worst}};
  };
  double drift_mean = 0.0;
  for (double d : drift) drift_mean += d;
  if (!drift.empty()) drift_mean /= static_cast<double>(drift.size());
  nlohmann::ordered_json summary;
  summary["summary"] = {{"frames", scores.size()}, {"psnr", agg(psnr)}, {"ssim", agg(ssim)}, {"drift_mean", drift_mean}};
  os << summary.dump() << "\n";
  return os.str();
}

std::vector<double> freeze_timestamps(const Dataset &dataset, std::size_t stride) {
  if (stride == 0) throw ArgumentError("freeze_timestamps: stride must be positive");
  std::vector<double> out;
  for (std::size_t n = 0; n < dataset.size(); n += stride) out.push_back(dataset.frames[n].timestamp);
  return out;
}

EvalReport evaluate_freeze(const Model &model, const Dataset &dataset, const GroundTruth *truth, std::size_t stride,
                           const RasterConfig &raster) {
  if (truth == nullptr) throw ArgumentError("evaluate_freeze: GT required");
  const std::vector<double> grid = freeze_timestamps(dataset, stride);
  std::vector<Pose> poses;
  for (const auto &f : dataset.frames) poses.push_back(f.pose);

  EvalReport report;
  std::vector<GaussianCloud> states;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    states.push_back(deform(model.net, model.canonical, grid[i]).state);
    const GaussianCloud &state = states.back();
    const std::vector<Image> gt = truth->render_all(grid[i]);
    std::vector<FreezeScore> scores(poses.size());
    tbb::parallel_for(std::size_t{0}, poses.size(), [&](std::size_t n) {
      const Image img = render(state, dataset.camera, poses[n], dataset.background, raster).image.pixels;
      scores[n] = FreezeScore{i, grid[i], n, splq::psnr(img, gt[n]), splq::ssim(img, gt[n])};
    });
    report.scores.insert(report.scores.end(), scores.begin(), scores.end());
  }
  std::vector<double> p, s;
  for (const auto &sc : report.scores) {
    p.push_back(sc.psnr);
    s.push_back(sc.ssim);
  }
  report.psnr = Aggregate::of(p);
  report.ssim = Aggregate::of(s);
  if (grid.size() >= 2) report.drift = drift_from_states(states, grid);
  return report;
}

} // namespace splq
