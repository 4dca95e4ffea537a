#include "splq/deformation.hpp"

#include "splq/error.hpp"

#include <atomic>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

namespace splq {

namespace {

std::atomic<std::uint64_t> g_deform_calls{0};

using RowMajorMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using RowMajorMapMut = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// Writes encode(x, L) for a scalar into out[0 .. 1+2L).
inline void encode_scalar(double x, int frequencies, double *out) {
  out[0] = x;
  double freq = std::numbers::pi;
  for (int l = 0; l < frequencies; ++l, freq *= 2.0) {
    out[1 + 2 * l] = std::sin(freq * x);
    out[2 + 2 * l] = std::cos(freq * x);
  }
}

// d encode / d x contracted with the upstream gradient g.
inline double encode_scalar_vjp(double x, int frequencies, const double *g) {
  double acc = g[0];
  double freq = std::numbers::pi;
  for (int l = 0; l < frequencies; ++l, freq *= 2.0) {
    acc += g[1 + 2 * l] * freq * std::cos(freq * x);
    acc -= g[2 + 2 * l] * freq * std::sin(freq * x);
  }
  return acc;
}

} // namespace

std::vector<double> encode(std::span<const double> x, int frequencies) {
  if (frequencies < 1) throw ArgumentError("encode: need at least one frequency");
  const std::size_t per = 1 + 2 * static_cast<std::size_t>(frequencies);
  std::vector<double> out(x.size() * per);
  for (std::size_t i = 0; i < x.size(); ++i) encode_scalar(x[i], frequencies, out.data() + i * per);
  return out;
}

int DeformationNet::layer_inputs(int layer) { return layer == 0 ? kInputs : kHidden; }
int DeformationNet::layer_outputs(int layer) { return layer == kLayers - 1 ? kOutputs : kHidden; }

std::size_t DeformationNet::weight_offset(int layer) {
  std::size_t offset = 0;
  for (int l = 0; l < layer; ++l)
    offset += static_cast<std::size_t>(layer_outputs(l)) * (layer_inputs(l) + 1);
  return offset;
}

std::size_t DeformationNet::bias_offset(int layer) {
  return weight_offset(layer) + static_cast<std::size_t>(layer_outputs(layer)) * layer_inputs(layer);
}

std::size_t DeformationNet::parameter_count() { return weight_offset(kLayers); }

DeformationNet DeformationNet::initialized(std::uint64_t seed) {
  DeformationNet net;
  net.weights.assign(parameter_count(), 0.0);
  std::mt19937_64 rng(seed);
  for (int l = 0; l < kLayers - 1; ++l) {
    const double bound = std::sqrt(6.0 / layer_inputs(l));
    std::uniform_real_distribution<double> dist(-bound, bound);
    const std::size_t begin = weight_offset(l), end = bias_offset(l);
    for (std::size_t i = begin; i < end; ++i) net.weights[i] = dist(rng);
  }
  return net;
}

void DeformationNet::check_finite() const {
  if (weights.size() != parameter_count())
    throw ContractError("DeformationNet: weight vector has wrong length");
  for (int l = 0; l < kLayers; ++l)
    for (std::size_t i = weight_offset(l); i < weight_offset(l + 1); ++i)
      if (!std::isfinite(weights[i]))
        throw NumericError("DeformationNet: non-finite weight in layer " + std::to_string(l));
}

DeformResult deform(const DeformationNet &net, const GaussianCloud &canonical, double t) {
  ++g_deform_calls;
  if (!(t >= 0.0 && t <= 1.0)) throw ArgumentError("deform: t must lie in [0, 1]");
  net.check_finite();
  canonical.validate();

  using Net = DeformationNet;
  const auto count = static_cast<Eigen::Index>(canonical.size());
  DeformResult result;
  DeformCache &cache = result.cache;
  cache.t = t;
  cache.count = canonical.size();
  cache.input.resize(Net::kInputs, count);

  constexpr int pos_block = 1 + 2 * Net::kPositionFrequencies;
  double time_features[1 + 2 * Net::kTimeFrequencies];
  encode_scalar(t, Net::kTimeFrequencies, time_features);
  for (Eigen::Index k = 0; k < count; ++k) {
    double *col = cache.input.col(k).data();
    for (int d = 0; d < 3; ++d)
      encode_scalar(canonical.positions[k][d], Net::kPositionFrequencies, col + d * pos_block);
    std::copy(std::begin(time_features), std::end(time_features), col + 3 * pos_block);
  }

  Eigen::MatrixXd activation = cache.input;
  for (int l = 0; l < Net::kLayers; ++l) {
    const RowMajorMap w(net.weights.data() + Net::weight_offset(l), Net::layer_outputs(l), Net::layer_inputs(l));
    const Eigen::Map<const Eigen::VectorXd> b(net.weights.data() + Net::bias_offset(l), Net::layer_outputs(l));
    Eigen::MatrixXd z = w * activation;
    z.colwise() += b;
    if (l == Net::kLayers - 1) {
      activation = std::move(z);
      break;
    }
    cache.pre.push_back(z);
    activation = z.cwiseMax(0.0);
    cache.hidden.push_back(activation);
  }

  GaussianCloud &state = result.state;
  state = canonical;
  for (Eigen::Index k = 0; k < count; ++k) {
    const auto delta = activation.col(k);
    state.positions[k] += delta.segment<3>(0);
    state.rotations[k] += delta.segment<4>(3);
    state.log_scales[k] += delta.segment<3>(7);
    state.opacity_logits[k] += delta[10];
  }
  return result;
}

DeformGradients deform_backward(const DeformationNet &net, const GaussianCloud &canonical,
                                const DeformCache &cache, std::span<const double> d_state) {
  using Net = DeformationNet;
  if (canonical.size() != cache.count || d_state.size() != cache.count * layout::kStride ||
      cache.hidden.size() != Net::kHiddenLayers)
    throw ContractError("deform_backward: gradient does not match the forward pass");

  const auto count = static_cast<Eigen::Index>(cache.count);
  DeformGradients grads;
  grads.net.assign(Net::parameter_count(), 0.0);
  grads.canonical.assign(d_state.begin(), d_state.end());

  // Every deformed quantity is canonical + delta, so d delta = d state.
  Eigen::MatrixXd upstream(Net::kOutputs, count);
  for (Eigen::Index k = 0; k < count; ++k) {
    const double *g = d_state.data() + k * layout::kStride;
    for (int i = 0; i < Net::kOutputs; ++i) upstream(i, k) = g[i];
  }

  for (int l = Net::kLayers - 1; l >= 0; --l) {
    const Eigen::MatrixXd &input = l == 0 ? cache.input : cache.hidden[l - 1];
    const RowMajorMap w(net.weights.data() + Net::weight_offset(l), Net::layer_outputs(l), Net::layer_inputs(l));
    RowMajorMapMut gw(grads.net.data() + Net::weight_offset(l), Net::layer_outputs(l), Net::layer_inputs(l));
    Eigen::Map<Eigen::VectorXd> gb(grads.net.data() + Net::bias_offset(l), Net::layer_outputs(l));
    gw.noalias() = upstream * input.transpose();
    gb = upstream.rowwise().sum();
    Eigen::MatrixXd down = w.transpose() * upstream;
    if (l > 0) down = down.cwiseProduct((cache.pre[l - 1].array() > 0.0).cast<double>().matrix());
    upstream = std::move(down);
  }

  // Position encoding path back to the canonical means.
  constexpr int pos_block = 1 + 2 * Net::kPositionFrequencies;
  for (Eigen::Index k = 0; k < count; ++k) {
    const double *g = upstream.col(k).data();
    for (int d = 0; d < 3; ++d)
      grads.canonical[k * layout::kStride + layout::kPosition + d] +=
          encode_scalar_vjp(canonical.positions[k][d], Net::kPositionFrequencies, g + d * pos_block);
  }
  return grads;
}

std::uint64_t deform_invocation_count() { return g_deform_calls.load(); }

} // namespace splq
