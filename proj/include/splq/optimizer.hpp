#pragma once

#include "splq/deformation.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace splq {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-15;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  explicit AdamState(std::size_t size = 0) : m(size, 0.0), v(size, 0.0) {}
  bool operator==(const AdamState &other) const = default;
};

/// Bias-corrected adaptive-moment update with a per-element learning rate.
/// Throws ContractError on shape mismatch and NumericError (naming the first
/// offending index) on a non-finite gradient, leaving params and state untouched.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState &state,
               std::span<const double> rates, const AdamHyper &hyper = {});

/// Per-group learning rates; position is already scaled by the scene extent.
struct LearningRates {
  double position = 1.6e-4;
  double rotation = 1e-3;
  double log_scale = 5e-3;
  double opacity = 5e-2;
  double color = 2.5e-3;
  double net = 1e-4;
};

struct OptimizerState {
  AdamState canonical;
  AdamState net;
  bool operator==(const OptimizerState &other) const = default;
};

OptimizerState make_optimizer_state(const Model &model);

/// One update of every model parameter, then quaternion renormalization and
/// clamping of colors to [0, 1].
void optimizer_step(Model &model, std::span<const double> canonical_grad, std::span<const double> net_grad,
                    OptimizerState &state, const LearningRates &rates, const AdamHyper &hyper = {});

} // namespace splq
