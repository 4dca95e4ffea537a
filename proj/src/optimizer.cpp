#include "splq/optimizer.hpp"

#include "splq/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace splq {

void adam_step(std::span<double> params, std::span<const double> grads, AdamState &state,
               std::span<const double> rates, const AdamHyper &hyper) {
  if (grads.size() != params.size() || rates.size() != params.size() || state.m.size() != params.size() ||
      state.v.size() != params.size())
    throw ContractError("adam_step: parameter, gradient, rate and moment shapes differ");
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (!std::isfinite(grads[i]))
      throw NumericError("adam_step: non-finite gradient at index " + std::to_string(i));

  ++state.step;
  const double step = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hyper.beta1, step);
  const double c2 = 1.0 - std::pow(hyper.beta2, step);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
    state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= rates[i] * m_hat / (std::sqrt(v_hat) + hyper.epsilon);
  }
}

OptimizerState make_optimizer_state(const Model &model) {
  return OptimizerState{AdamState(model.canonical.size() * layout::kStride), AdamState(model.net.weights.size())};
}

void optimizer_step(Model &model, std::span<const double> canonical_grad, std::span<const double> net_grad,
                    OptimizerState &state, const LearningRates &rates, const AdamHyper &hyper) {
  const std::size_t count = model.canonical.size();
  ParamVector params = pack_cloud(model.canonical);
  std::vector<double> per_element(params.size());
  for (std::size_t k = 0; k < count; ++k) {
    double *r = per_element.data() + k * layout::kStride;
    std::fill(r + layout::kPosition, r + layout::kRotation, rates.position);
    std::fill(r + layout::kRotation, r + layout::kLogScale, rates.rotation);
    std::fill(r + layout::kLogScale, r + layout::kOpacity, rates.log_scale);
    r[layout::kOpacity] = rates.opacity;
    std::fill(r + layout::kColor, r + layout::kStride, rates.color);
  }
  // Validate both gradients before touching either parameter group.
  for (std::size_t i = 0; i < net_grad.size(); ++i)
    if (!std::isfinite(net_grad[i]))
      throw NumericError("optimizer_step: non-finite deformation-net gradient at index " + std::to_string(i));
  adam_step(params, canonical_grad, state.canonical, per_element, hyper);
  const std::vector<double> net_rates(model.net.weights.size(), rates.net);
  adam_step(model.net.weights, net_grad, state.net, net_rates, hyper);

  model.canonical = unpack_cloud(params);
  for (auto &q : model.canonical.rotations) {
    const double n = q.norm();
    if (std::abs(n - 1.0) > 1e-12) q /= n;
  }
  for (auto &c : model.canonical.colors) c = c.cwiseMax(0.0).cwiseMin(1.0);
}

} // namespace splq
