#include "splq/trainer.hpp"

#include "splq/error.hpp"
#include "splq/supervision.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace splq {

namespace {

constexpr std::uint64_t kAnchorStream = 0x9e3779b97f4a7c15ULL;
constexpr std::uint64_t kDensifyStream = 0xbf58476d1ce4e5b9ULL;
constexpr std::uint64_t kNetStream = 0x94d049bb133111ebULL;

} // namespace

TrainConfig TrainConfig::desk_scale(std::uint64_t total_iters) {
  TrainConfig cfg;
  cfg.total_iters = total_iters;
  cfg.anchor.start_iter = total_iters / 3;
  cfg.anchor.l1_switch_iter = 2 * total_iters / 3;
  cfg.densify.from_iter = total_iters / 15;
  cfg.densify.until_iter = total_iters / 2;
  return cfg;
}

AnchorConfig TrainConfig::effective_anchor() const {
  AnchorConfig a = anchor;
  if (no_hidden) a.use_hidden = false;
  if (no_defective) a.use_defective = false;
  if (no_confidence) a.use_confidence = false;
  return a;
}

void TrainConfig::validate() const {
  if (total_iters == 0) throw ConfigError("train: total_iters must be positive");
  anchor.validate(total_iters);
  const double rates[] = {lr.position, lr.rotation, lr.log_scale, lr.opacity, lr.color, lr.net, position_lr_final};
  for (double r : rates)
    if (!(r > 0.0)) throw ConfigError("train: learning rates must be positive");
  if (!(w_ssim >= 0.0 && w_ssim <= 1.0)) throw ConfigError("train: w_ssim must lie in [0, 1]");
  if (densify.enabled && (densify.interval == 0 || densify.from_iter > densify.until_iter))
    throw ConfigError("train: invalid densification window");
}

void DensifyStats::accumulate(const RenderStats &stats) {
  for (std::size_t k = 0; k < grad_sum.size(); ++k) {
    if (!stats.visible[k]) continue;
    grad_sum[k] += stats.grad_norm_mean2d[k];
    ++count[k];
  }
}

DensifyOutcome densify_and_prune(Model &model, OptimizerState &optimizer, const DensifyStats &stats,
                                 const DensifyConfig &config, double scene_extent, std::mt19937_64 &rng) {
  GaussianCloud &cloud = model.canonical;
  const std::size_t count = cloud.size();
  if (stats.grad_sum.size() != count) throw ContractError("densify_and_prune: stats do not match the cloud");

  enum class Fate : std::uint8_t { keep, clone, split, prune };
  std::vector<Fate> fate(count, Fate::keep);
  std::vector<std::size_t> growth;
  for (std::size_t k = 0; k < count; ++k) {
    if (sigmoid(cloud.opacity_logits[k]) < config.prune_opacity) {
      fate[k] = Fate::prune;
      continue;
    }
    const double mean = stats.count[k] ? stats.grad_sum[k] / stats.count[k] : 0.0;
    if (mean > config.grad_threshold) growth.push_back(k);
  }
  // Highest gradients first when the primitive budget is tight.
  std::stable_sort(growth.begin(), growth.end(), [&](std::size_t a, std::size_t b) {
    return stats.grad_sum[a] / stats.count[a] > stats.grad_sum[b] / stats.count[b];
  });
  std::size_t projected_size =
      count - static_cast<std::size_t>(std::count(fate.begin(), fate.end(), Fate::prune));
  const double small = config.small_scale_fraction * scene_extent;
  for (std::size_t k : growth) {
    if (projected_size + 1 > config.max_primitives) break;
    const bool is_small = std::exp(cloud.log_scales[k].maxCoeff()) <= small;
    fate[k] = is_small ? Fate::clone : Fate::split;
    ++projected_size;
  }

  GaussianCloud next;
  AdamState next_state;
  DensifyOutcome outcome;
  auto carry = [&](std::size_t k) {
    next.push_back(cloud.positions[k], cloud.rotations[k], cloud.log_scales[k], cloud.opacity_logits[k],
                   cloud.colors[k]);
    const std::size_t base = k * layout::kStride;
    next_state.m.insert(next_state.m.end(), optimizer.canonical.m.begin() + base,
                        optimizer.canonical.m.begin() + base + layout::kStride);
    next_state.v.insert(next_state.v.end(), optimizer.canonical.v.begin() + base,
                        optimizer.canonical.v.begin() + base + layout::kStride);
  };
  auto fresh = [&](const Vec3 &pos, const Vec3 &log_scale, std::size_t k) {
    next.push_back(pos, cloud.rotations[k], log_scale, cloud.opacity_logits[k], cloud.colors[k]);
    next_state.m.insert(next_state.m.end(), layout::kStride, 0.0);
    next_state.v.insert(next_state.v.end(), layout::kStride, 0.0);
  };

  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t k = 0; k < count; ++k)
    if (fate[k] == Fate::keep || fate[k] == Fate::clone) carry(k);
  for (std::size_t k = 0; k < count; ++k) {
    if (fate[k] == Fate::clone) {
      fresh(cloud.positions[k], cloud.log_scales[k], k);
      ++outcome.cloned;
    } else if (fate[k] == Fate::split) {
      const Mat3 rot = rotation_from_quaternion(cloud.rotations[k]);
      const Vec3 scale = cloud.log_scales[k].array().exp();
      const Vec3 shrunk = cloud.log_scales[k].array() - std::log(config.split_scale_divisor);
      for (int copy = 0; copy < 2; ++copy) {
        const Vec3 z(normal(rng), normal(rng), normal(rng));
        fresh(cloud.positions[k] + rot * scale.cwiseProduct(z), shrunk, k);
      }
      ++outcome.split;
    } else if (fate[k] == Fate::prune) {
      ++outcome.pruned;
    }
  }
  if (next.size() == 0) throw NumericError("densify_and_prune: every primitive was pruned");
  next_state.step = optimizer.canonical.step;
  cloud = std::move(next);
  optimizer.canonical = std::move(next_state);
  return outcome;
}

TrainResult train(const Dataset &dataset, const GaussianCloud &init, const TrainConfig &config,
                  const ProgressCallback &progress) {
  dataset.validate();
  init.validate();
  config.validate();

  const AnchorConfig anchor = config.effective_anchor();
  const SupervisionOptions sup{config.raster, config.w_ssim, config.grad_threshold};
  const std::size_t frames = dataset.size();

  TrainResult result;
  Model &model = result.model;
  model.canonical = init;
  model.net = DeformationNet::initialized(config.seed ^ kNetStream);
  OptimizerState opt = make_optimizer_state(model);

  std::mt19937_64 frame_rng(config.seed);
  std::mt19937_64 anchor_rng(config.seed ^ kAnchorStream);
  std::mt19937_64 densify_rng(config.seed ^ kDensifyStream);
  std::uniform_int_distribution<std::size_t> pick_frame(0, frames - 1);
  DensifyStats densify_stats(model.canonical.size());

  const double extent = dataset.scene_extent;
  const double pos_lr0 = config.lr.position * extent, pos_lr1 = config.position_lr_final * extent;

  for (std::uint64_t iter = 1; iter <= config.total_iters; ++iter) {
    IterationRecord rec;
    rec.iter = iter;
    rec.frame = pick_frame(frame_rng);

    const DeformResult deformed = deform(model.net, model.canonical, dataset.frames[rec.frame].timestamp);
    const FrameSupervision fs = supervise_frame(deformed.state, dataset, rec.frame, sup);
    DeformGradients grads = deform_backward(model.net, model.canonical, deformed.cache, fs.backward.grad);
    rec.recon = fs.loss;
    for (const auto &s : fs.states) {
      rec.hidden_count += s.hidden ? 1 : 0;
      rec.defective_count += s.defective ? 1 : 0;
    }
    if (config.densify.enabled) densify_stats.accumulate(fs.backward.stats);

    if (anchor.due_at(iter)) {
      ++result.anchor_steps;
      for (const auto &pair : sample_anchor_pairs(anchor_rng, frames, anchor.pairs_per_step)) {
        AnchorStepResult step = anchoring_step(model, dataset, pair, anchor, sup, iter);
        rec.hidden += step.hidden;
        rec.defective += step.defective;
        for (std::size_t i = 0; i < grads.net.size(); ++i) grads.net[i] += step.grads.net[i];
        for (std::size_t i = 0; i < grads.canonical.size(); ++i) grads.canonical[i] += step.grads.canonical[i];
        rec.anchor_events += step.events.size();
        for (const auto &e : step.events) {
          (e.kind == AnchorKind::hidden ? result.hidden_events : result.defective_events) += 1;
          if (config.record_events) result.events.push_back(e);
        }
      }
    }

    try {
      rec.total = total_objective(rec.recon, rec.hidden, rec.defective, anchor);
      LearningRates rates = config.lr;
      const double progress_frac = static_cast<double>(iter - 1) / static_cast<double>(config.total_iters);
      rates.position = pos_lr0 * std::pow(pos_lr1 / pos_lr0, progress_frac);
      optimizer_step(model, grads.canonical, grads.net, opt, rates, config.adam);
    } catch (const NumericError &e) {
      std::ostringstream msg;
      msg << "train: aborted at iteration " << iter << " (frame " << rec.frame << ", recon " << rec.recon
          << ", hidden " << rec.hidden << ", defective " << rec.defective << ", K " << model.canonical.size()
          << "): " << e.what();
      throw NumericError(msg.str());
    }

    const auto &d = config.densify;
    if (d.enabled && iter >= d.from_iter && iter <= d.until_iter && iter % d.interval == 0) {
      densify_and_prune(model, opt, densify_stats, d, extent, densify_rng);
      densify_stats = DensifyStats(model.canonical.size());
    }

    rec.primitives = model.canonical.size();
    result.log.push_back(rec);
    if (progress) progress(rec);
  }
  return result;
}

std::string to_json_line(const IterationRecord &r) {
  nlohmann::ordered_json j;
  j["iter"] = r.iter;
  j["frame"] = r.frame;
  j["L_recon"] = r.recon;
  j["L_hidden"] = r.hidden;
  j["L_defective"] = r.defective;
  j["L_total"] = r.total;
  j["K"] = r.primitives;
  j["hidden_count"] = r.hidden_count;
  j["defective_count"] = r.defective_count;
  j["anchor_events"] = r.anchor_events;
  return j.dump();
}

std::string to_json_line(const AnchorEvent &e) {
  nlohmann::ordered_json j;
  j["iter"] = e.iter;
  j["k"] = e.primitive;
  j["t"] = e.t;
  j["t_ref"] = e.t_ref;
  j["kind"] = to_string(e.kind);
  j["phi"] = e.phi;
  j["discrepancy"] = e.discrepancy;
  j["norm"] = to_string(e.norm);
  return j.dump();
}

} // namespace splq
