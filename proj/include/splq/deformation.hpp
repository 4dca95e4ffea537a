#pragma once

#include "splq/scene.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <vector>

namespace splq {

/// Frequency encoding: per component [x, sin(2^0 pi x), cos(2^0 pi x), ...,
/// sin(2^(L-1) pi x), cos(2^(L-1) pi x)]. Output length d * (1 + 2L).
/// Throws ArgumentError when L < 1.
std::vector<double> encode(std::span<const double> x, int frequencies);

/// MLP f(mu, t) -> (d_mu, d_q, d_s, d_o).
///
/// Input is encode(mu, 4) ++ encode(t, 6) (40 features), followed by three
/// ReLU layers of 64 units and a linear output of 11 values ordered
/// [d_mu (3), d_q (4), d_s (3), d_o (1)].
///
/// Weight layout in `weights`, layer by layer: W (out x in, row-major) then b.
/// The output layer is zero-initialized, so a fresh net is the identity map.
struct DeformationNet {
  static constexpr int kPositionFrequencies = 4;
  static constexpr int kTimeFrequencies = 6;
  static constexpr int kInputs = 3 * (1 + 2 * kPositionFrequencies) + (1 + 2 * kTimeFrequencies);
  static constexpr int kHidden = 64;
  static constexpr int kHiddenLayers = 3;
  static constexpr int kOutputs = 11;
  static constexpr int kLayers = kHiddenLayers + 1;

  std::vector<double> weights;

  static std::size_t parameter_count();
  static int layer_inputs(int layer);
  static int layer_outputs(int layer);
  /// Offset of W for layer l; its bias follows at weight_offset(l) + out*in.
  static std::size_t weight_offset(int layer);
  static std::size_t bias_offset(int layer);

  /// He-uniform hidden layers, zero output layer.
  static DeformationNet initialized(std::uint64_t seed);

  /// Throws NumericError naming the first layer with a non-finite weight.
  void check_finite() const;
  bool operator==(const DeformationNet &other) const = default;
};

struct Model {
  GaussianCloud canonical;
  DeformationNet net;
  bool operator==(const Model &other) const = default;
};

/// Intermediate activations of one batched forward pass.
struct DeformCache {
  double t = 0.0;
  std::size_t count = 0;
  Eigen::MatrixXd input;                 // kInputs x K
  std::vector<Eigen::MatrixXd> pre;      // pre-activations of hidden layers, kHidden x K
  std::vector<Eigen::MatrixXd> hidden;   // ReLU outputs
};

struct DeformResult {
  /// Deformed parameters. Rotations hold q + d_q before normalization; every
  /// consumer (renderer, covariance) normalizes on use.
  GaussianCloud state;
  DeformCache cache;
};

struct DeformGradients {
  std::vector<double> net;
  ParamVector canonical;
};

/// One batched pass over all primitives at time t. Throws ArgumentError when
/// t is outside [0, 1], NumericError for non-finite weights.
DeformResult deform(const DeformationNet &net, const GaussianCloud &canonical, double t);

/// Reverse mode through deform. d_state uses the ParamVector layout.
/// Throws ContractError when d_state or canonical do not match the cache.
DeformGradients deform_backward(const DeformationNet &net, const GaussianCloud &canonical,
                                const DeformCache &cache, std::span<const double> d_state);

/// Total calls to deform() in this process.
std::uint64_t deform_invocation_count();

} // namespace splq
