#include "splq/supervision.hpp"

#include "splq/error.hpp"
#include "splq/loss.hpp"

#include <cstdio>
#include <string>

namespace splq {

std::vector<SupervisionState> classify(const RenderStats &stats,
                                       std::span<const ProjectedGaussian> projected, double threshold,
                                       std::size_t frame) {
  if (stats.grad_norm_mean2d.size() != projected.size() || stats.visible.size() != projected.size())
    throw ContractError("classify: render stats and projections differ in length");
  std::vector<SupervisionState> out(projected.size());
  for (std::size_t k = 0; k < projected.size(); ++k) {
    auto &s = out[k];
    s.frame = frame;
    s.primitive = k;
    s.grad_norm = stats.grad_norm_mean2d[k];
    s.hidden = !projected[k].in_frustum;
    s.defective = projected[k].in_frustum && s.grad_norm <= threshold;
  }
  return out;
}

FrameSupervision supervise_frame(const GaussianCloud &state, const Dataset &dataset, std::size_t frame,
                                 const SupervisionOptions &options) {
  if (frame >= dataset.size()) throw ArgumentError("supervise_frame: frame index out of range");
  const FrameRecord &rec = dataset.frames[frame];
  ForwardResult fwd = render(state, dataset.camera, rec.pose, dataset.background, options.raster);
  ReconLoss loss = recon_loss(fwd.image.pixels, rec.image, options.w_ssim);
  FrameSupervision out;
  out.loss = loss.value;
  out.backward = rasterize_backward(loss.grad, fwd.state, state);
  out.states = classify(out.backward.stats, fwd.state.projected, options.threshold, frame);
  out.image = std::move(fwd.image);
  return out;
}

const SupervisionState &SupervisionTable::at(std::size_t frame, std::size_t primitive) const {
  const auto it = frames.find(frame);
  if (it == frames.end() || primitive >= it->second.size())
    throw ArgumentError("SupervisionTable: no entry for (" + std::to_string(frame) + ", " +
                        std::to_string(primitive) + ")");
  return it->second[primitive];
}

std::string SupervisionTable::to_csv() const {
  std::string out = "n,k,hidden,defective,grad_norm\n";
  char line[128];
  for (const auto &[n, states] : frames)
    for (const auto &s : states) {
      std::snprintf(line, sizeof line, "%zu,%zu,%d,%d,%.17g\n", n, s.primitive, s.hidden ? 1 : 0,
                    s.defective ? 1 : 0, s.grad_norm);
      out += line;
    }
  return out;
}

SupervisionTable supervision_table(const Model &model, const Dataset &dataset,
                                   std::span<const std::size_t> frames,
                                   const SupervisionOptions &options, std::uint64_t iteration) {
  if (frames.empty()) throw ArgumentError("supervision_table: empty frame subset");
  SupervisionTable table;
  table.iteration = iteration;
  for (std::size_t n : frames) {
    if (n >= dataset.size()) throw ArgumentError("supervision_table: frame index out of range");
    const DeformResult d = deform(model.net, model.canonical, dataset.frames[n].timestamp);
    table.frames[n] = supervise_frame(d.state, dataset, n, options).states;
  }
  return table;
}

} // namespace splq
