#pragma once

#include "splq/deformation.hpp"
#include "splq/supervision.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace splq {

enum class AnchorKind : std::uint8_t { hidden, defective };
enum class NormMode : std::uint8_t { l1, l2 };

const char *to_string(AnchorKind kind);
const char *to_string(NormMode mode);

struct AnchorConfig {
  double lambda_hidden = 10.0;
  double lambda_defective = 10.0;
  /// Confidence decay rate.
  double tau = 5.0;
  std::uint64_t anchor_every = 10;
  int pairs_per_step = 2;
  std::uint64_t start_iter = 1000;
  std::uint64_t l1_switch_iter = 2000;
  /// Ablation switches.
  bool use_hidden = true;
  bool use_defective = true;
  bool use_confidence = true;

  bool hidden_enabled() const { return use_hidden && lambda_hidden != 0.0; }
  bool defective_enabled() const { return use_defective && lambda_defective != 0.0; }
  bool enabled() const { return hidden_enabled() || defective_enabled(); }
  NormMode norm_at(std::uint64_t iter) const { return iter < l1_switch_iter ? NormMode::l2 : NormMode::l1; }
  bool due_at(std::uint64_t iter) const {
    return enabled() && iter >= start_iter && anchor_every > 0 && iter % anchor_every == 0;
  }
  /// Throws ConfigError unless start_iter < l1_switch_iter <= total_iters,
  /// lambdas >= 0 and tau > 0.
  void validate(std::uint64_t total_iters) const;
};

/// One applied consistency term.
struct AnchorEvent {
  std::uint64_t iter = 0;
  std::size_t primitive = 0;
  double t = 0.0;
  double t_ref = 0.0;
  AnchorKind kind = AnchorKind::hidden;
  double phi = 1.0;
  double discrepancy = 0.0;
  NormMode norm = NormMode::l2;
};

/// exp(-tau |t - t_ref|).
double phi(double t, double t_ref, double tau);

/// Sum |a - b| (L1) or sum (a - b)^2 (L2). Throws ContractError on length mismatch.
double discrepancy(std::span<const double> a, std::span<const double> b, NormMode mode);

/// Ordered pairs of distinct, uniformly drawn frame indices. Throws ConfigError when N < 2.
std::vector<std::pair<std::size_t, std::size_t>> sample_anchor_pairs(std::mt19937_64 &rng,
                                                                     std::size_t frame_count,
                                                                     int pairs_per_step);

/// A deformed state together with its supervision at one timestamp.
struct TimeSlice {
  double t = 0.0;
  const GaussianCloud *state = nullptr;
  const std::vector<SupervisionState> *supervision = nullptr;
};

struct AnchorLosses {
  double hidden = 0.0;     // lambda already applied
  double defective = 0.0;  // lambda already applied
  /// d loss / d deformed state at each slice (ParamVector layout). The anchor
  /// side of every term is a constant, so it receives nothing from that term.
  ParamVector grad_a;
  ParamVector grad_b;
  std::vector<AnchorEvent> events;

  double total() const { return hidden + defective; }
};

/// Tries both orderings of (a, b). A primitive hidden at t anchors to a
/// well-supervised past t_ref < t; a primitive defective at t anchors to a
/// well-supervised future t_ref > t. Throws ContractError when the slices
/// disagree in size.
AnchorLosses anchor_losses(const TimeSlice &a, const TimeSlice &b, const AnchorConfig &config,
                           std::uint64_t iter);

struct AnchorStepResult {
  double hidden = 0.0;
  double defective = 0.0;
  DeformGradients grads;
  std::vector<AnchorEvent> events;
  double total() const { return hidden + defective; }
};

/// Deforms at both frame timestamps, classifies each under its own camera and
/// returns the consistency losses with gradients pulled back to the net and the
/// canonical parameters. Throws ArgumentError when the two frames share a timestamp.
AnchorStepResult anchoring_step(const Model &model, const Dataset &dataset,
                                std::pair<std::size_t, std::size_t> pair, const AnchorConfig &config,
                                const SupervisionOptions &supervision, std::uint64_t iter);

/// L_recon + hidden + defective, where the anchor sums already carry their
/// lambdas; a kind with lambda = 0 contributes nothing. Throws NumericError
/// naming the first non-finite term.
double total_objective(double recon, double hidden_sum, double defective_sum, const AnchorConfig &config);

} // namespace splq
