#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ulab/autodiff.hpp"
#include "ulab/error.hpp"
#include "ulab/tensor.hpp"

namespace ulab {

/// Fully connected ReLU network: layer_sizes = {d_in, h_1, ..., h_L, K}.
struct MlpConfig {
  std::vector<std::size_t> layer_sizes;

  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t num_classes() const { return layer_sizes.back(); }
  std::size_t num_layers() const { return layer_sizes.size() - 1; }

  void validate() const {
    if (layer_sizes.size() < 2) throw ConfigError("model: layer_sizes needs at least input and output");
    for (std::size_t s : layer_sizes)
      if (s < 1) throw ConfigError("model: layer sizes must be >= 1");
    if (layer_sizes.back() < 2) throw ConfigError("model: need at least 2 output classes");
  }

  bool operator==(const MlpConfig&) const = default;
};

/// Where one layer's weight matrix and bias live inside a ParamVector.
/// Weights are stored row-major as [fan_in x fan_out], followed by the bias.
struct LayerSlot {
  std::size_t fan_in;
  std::size_t fan_out;
  std::size_t weight_offset;
  std::size_t bias_offset;
};

inline std::vector<LayerSlot> param_layout(const MlpConfig& config) {
  config.validate();
  std::vector<LayerSlot> slots;
  std::size_t offset = 0;
  for (std::size_t l = 0; l < config.num_layers(); ++l) {
    const std::size_t in = config.layer_sizes[l], out = config.layer_sizes[l + 1];
    slots.push_back({in, out, offset, offset + in * out});
    offset += in * out + out;
  }
  return slots;
}

inline std::size_t param_count(const MlpConfig& config) {
  const auto slots = param_layout(config);
  return slots.back().bias_offset + slots.back().fan_out;
}

/// Flat parameter array. Layout is fixed by the MlpConfig (see param_layout).
using ParamVector = std::vector<double>;

struct LayerParams {
  Tensor weight;  // [fan_in x fan_out]
  Tensor bias;    // [fan_out]

  bool operator==(const LayerParams&) const = default;
};

inline void check_param_length(const ParamVector& theta, const MlpConfig& config) {
  const std::size_t expected = param_count(config);
  if (theta.size() != expected) {
    throw ShapeError("model: parameter vector has " + std::to_string(theta.size()) +
                     " entries, config needs " + std::to_string(expected));
  }
}

inline std::vector<LayerParams> unflatten(const ParamVector& theta, const MlpConfig& config) {
  check_param_length(theta, config);
  std::vector<LayerParams> layers;
  for (const auto& s : param_layout(config)) {
    const auto w0 = theta.begin() + static_cast<std::ptrdiff_t>(s.weight_offset);
    const auto b0 = theta.begin() + static_cast<std::ptrdiff_t>(s.bias_offset);
    layers.push_back({Tensor({s.fan_in, s.fan_out}, std::vector<double>(w0, b0)),
                      Tensor({s.fan_out}, std::vector<double>(b0, b0 + static_cast<std::ptrdiff_t>(s.fan_out)))});
  }
  return layers;
}

inline ParamVector flatten(const std::vector<LayerParams>& layers) {
  ParamVector theta;
  for (const auto& l : layers) {
    theta.insert(theta.end(), l.weight.values().begin(), l.weight.values().end());
    theta.insert(theta.end(), l.bias.values().begin(), l.bias.values().end());
  }
  return theta;
}

/// Weights ~ U(-s, s) with s = sqrt(6 / (fan_in + fan_out)); biases 0.
inline ParamVector init_params(const MlpConfig& config, std::uint64_t seed) {
  ParamVector theta(param_count(config), 0.0);
  std::mt19937_64 rng(seed);
  for (const auto& s : param_layout(config)) {
    const double bound = std::sqrt(6.0 / static_cast<double>(s.fan_in + s.fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (std::size_t i = 0; i < s.fan_in * s.fan_out; ++i) theta[s.weight_offset + i] = dist(rng);
  }
  return theta;
}

inline Tensor forward_logits(const ParamVector& theta, const MlpConfig& config, const Tensor& x) {
  if (!x.is_matrix() || x.cols() != config.input_dim()) {
    throw ShapeError("model: input is " + Tensor::shape_string(x.shape()) + ", expected width " +
                     std::to_string(config.input_dim()));
  }
  const auto layers = unflatten(theta, config);
  Tensor h = x;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    h = affine_forward(h, layers[l].weight, layers[l].bias);
    if (l + 1 < layers.size())
      for (double& v : h.values()) v = v > 0.0 ? v : 0.0;
  }
  return h;
}

inline Tensor predict_proba(const ParamVector& theta, const MlpConfig& config, const Tensor& x) {
  return softmax(forward_logits(theta, config, x));
}

/// Records the forward pass on `tape`, binding every layer to its slice of
/// theta. The tape must have been created with param_count(config) slots.
inline Var forward_on_tape(Tape& tape, const ParamVector& theta, const MlpConfig& config,
                           const Tensor& x) {
  if (!x.is_matrix() || x.cols() != config.input_dim()) {
    throw ShapeError("model: input is " + Tensor::shape_string(x.shape()) + ", expected width " +
                     std::to_string(config.input_dim()));
  }
  const auto slots = param_layout(config);
  auto layers = unflatten(theta, config);
  Var h = tape.constant(x);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Var w = tape.parameter(std::move(layers[l].weight), slots[l].weight_offset);
    Var b = tape.parameter(std::move(layers[l].bias), slots[l].bias_offset);
    h = tape.affine(h, w, b);
    if (l + 1 < layers.size()) h = tape.relu(h);
  }
  return h;
}

}  // namespace ulab
