#include "splq/anchoring.hpp"

#include "splq/error.hpp"

#include <cmath>

namespace splq {

const char *to_string(AnchorKind kind) { return kind == AnchorKind::hidden ? "hidden" : "defective"; }
const char *to_string(NormMode mode) { return mode == NormMode::l1 ? "l1" : "l2"; }

void AnchorConfig::validate(std::uint64_t total_iters) const {
  if (!(start_iter < l1_switch_iter && l1_switch_iter <= total_iters))
    throw ConfigError("anchor schedule: require start_iter < l1_switch_iter <= total_iters");
  if (!(lambda_hidden >= 0.0 && lambda_defective >= 0.0)) throw ConfigError("anchor: lambdas must be >= 0");
  if (!(tau > 0.0)) throw ConfigError("anchor: tau must be positive");
  if (pairs_per_step < 1) throw ConfigError("anchor: pairs_per_step must be >= 1");
}

double phi(double t, double t_ref, double tau) { return std::exp(-tau * std::abs(t - t_ref)); }

double discrepancy(std::span<const double> a, std::span<const double> b, NormMode mode) {
  if (a.size() != b.size()) throw ContractError("discrepancy: length mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum += mode == NormMode::l1 ? std::abs(d) : d * d;
  }
  return sum;
}

std::vector<std::pair<std::size_t, std::size_t>> sample_anchor_pairs(std::mt19937_64 &rng,
                                                                     std::size_t frame_count,
                                                                     int pairs_per_step) {
  if (frame_count < 2) throw ConfigError("sample_anchor_pairs: need at least two frames");
  std::uniform_int_distribution<std::size_t> first(0, frame_count - 1), second(0, frame_count - 2);
  std::vector<std::pair<std::size_t, std::size_t>> out;
  out.reserve(pairs_per_step);
  for (int i = 0; i < pairs_per_step; ++i) {
    const std::size_t a = first(rng);
    std::size_t b = second(rng);
    if (b >= a) ++b;
    out.emplace_back(a, b);
  }
  return out;
}

namespace {

// Adds the terms for target slice `target` anchored at `ref`.
void anchor_direction(const TimeSlice &target, const TimeSlice &ref, const AnchorConfig &config,
                      std::uint64_t iter, ParamVector &grad_target, AnchorLosses &out) {
  AnchorKind kind;
  double lambda;
  if (ref.t < target.t) {
    if (!config.hidden_enabled()) return;
    kind = AnchorKind::hidden;
    lambda = config.lambda_hidden;
  } else if (ref.t > target.t) {
    if (!config.defective_enabled()) return;
    kind = AnchorKind::defective;
    lambda = config.lambda_defective;
  } else {
    return;
  }
  const NormMode norm = config.norm_at(iter);
  const double weight = config.use_confidence ? phi(target.t, ref.t, config.tau) : 1.0;
  const auto &sup_t = *target.supervision;
  const auto &sup_r = *ref.supervision;
  for (std::size_t k = 0; k < sup_t.size(); ++k) {
    const bool ill = kind == AnchorKind::hidden ? sup_t[k].hidden : sup_t[k].defective;
    if (!ill || !sup_r[k].well_supervised()) continue;
    const auto theta = pack_params(*target.state, k);
    const auto anchor = pack_params(*ref.state, k);
    const double d = discrepancy(theta, anchor, norm);
    const double term = lambda * weight * d;
    (kind == AnchorKind::hidden ? out.hidden : out.defective) += term;
    double *g = grad_target.data() + k * layout::kStride;
    for (std::size_t i = 0; i < layout::kStride; ++i) {
      const double diff = theta[i] - anchor[i];
      const double dd = norm == NormMode::l2 ? 2.0 * diff : (diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0));
      g[i] += lambda * weight * dd;
    }
    out.events.push_back(AnchorEvent{iter, k, target.t, ref.t, kind, weight, d, norm});
  }
}

} // namespace

AnchorLosses anchor_losses(const TimeSlice &a, const TimeSlice &b, const AnchorConfig &config,
                           std::uint64_t iter) {
  const std::size_t count = a.state->size();
  if (b.state->size() != count || a.supervision->size() != count || b.supervision->size() != count)
    throw ContractError("anchor_losses: slices disagree in primitive count");
  AnchorLosses out;
  out.grad_a.assign(count * layout::kStride, 0.0);
  out.grad_b.assign(count * layout::kStride, 0.0);
  anchor_direction(a, b, config, iter, out.grad_a, out);
  anchor_direction(b, a, config, iter, out.grad_b, out);
  return out;
}

AnchorStepResult anchoring_step(const Model &model, const Dataset &dataset,
                                std::pair<std::size_t, std::size_t> pair, const AnchorConfig &config,
                                const SupervisionOptions &supervision, std::uint64_t iter) {
  const auto [na, nb] = pair;
  if (na >= dataset.size() || nb >= dataset.size()) throw ArgumentError("anchoring_step: frame out of range");
  const double ta = dataset.frames[na].timestamp, tb = dataset.frames[nb].timestamp;
  if (ta == tb) throw ArgumentError("anchoring_step: frames share a timestamp");

  const DeformResult da = deform(model.net, model.canonical, ta);
  const DeformResult db = deform(model.net, model.canonical, tb);
  const auto sa = supervise_frame(da.state, dataset, na, supervision).states;
  const auto sb = supervise_frame(db.state, dataset, nb, supervision).states;

  AnchorLosses losses =
      anchor_losses(TimeSlice{ta, &da.state, &sa}, TimeSlice{tb, &db.state, &sb}, config, iter);
  AnchorStepResult out;
  out.hidden = losses.hidden;
  out.defective = losses.defective;
  out.events = std::move(losses.events);
  out.grads.net.assign(DeformationNet::parameter_count(), 0.0);
  out.grads.canonical.assign(model.canonical.size() * layout::kStride, 0.0);
  if (out.events.empty()) return out;

  const DeformGradients ga = deform_backward(model.net, model.canonical, da.cache, losses.grad_a);
  const DeformGradients gb = deform_backward(model.net, model.canonical, db.cache, losses.grad_b);
  for (std::size_t i = 0; i < out.grads.net.size(); ++i) out.grads.net[i] = ga.net[i] + gb.net[i];
  for (std::size_t i = 0; i < out.grads.canonical.size(); ++i)
    out.grads.canonical[i] = ga.canonical[i] + gb.canonical[i];
  return out;
}

double total_objective(double recon, double hidden_sum, double defective_sum, const AnchorConfig &config) {
  if (!std::isfinite(recon)) throw NumericError("total_objective: reconstruction term is not finite");
  if (!std::isfinite(hidden_sum)) throw NumericError("total_objective: hidden anchoring term is not finite");
  if (!std::isfinite(defective_sum))
    throw NumericError("total_objective: defective anchoring term is not finite");
  double total = recon;
  if (config.hidden_enabled()) total += hidden_sum;
  if (config.defective_enabled()) total += defective_sum;
  return total;
}

} // namespace splq
