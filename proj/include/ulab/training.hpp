#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ulab/autodiff.hpp"
#include "ulab/data.hpp"
#include "ulab/error.hpp"
#include "ulab/model.hpp"
#include "ulab/seed.hpp"
#include "ulab/tensor.hpp"

namespace ulab {

struct SgdConfig {
  double learning_rate = 0.1;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      throw ConfigError("sgd: learning_rate must be a finite nonnegative number");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("sgd: momentum must lie in [0, 1)");
    if (batch_size < 1) throw ConfigError("sgd: batch_size must be >= 1");
  }
};

/// Baseline recipe at desk scale.
inline SgdConfig baseline_sgd() { return {0.1, 0.9, 64, 100, 0}; }
/// Unlearning recipe: 10 epochs at lr 0.01, other settings inherited.
inline SgdConfig unlearning_sgd() { return {0.01, 0.9, 64, 10, 0}; }

enum class LossVariant { weighted_ce, negative_entropy, cra_composite };

struct LossSpec {
  LossVariant variant = LossVariant::weighted_ce;
  std::vector<double> class_weights;  // empty = all ones
  double alpha = 1.0;                 // retain-term weight (composite only)
};

/// Per-parameter update gate: 1 = salient (updated), 0 = frozen.
struct SaliencyMask {
  std::vector<std::uint8_t> bits;
  double threshold = 0.0;

  std::size_t size() const { return bits.size(); }
  std::size_t count() const {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
  }
  bool operator==(const SaliencyMask&) const = default;
};

// ---------------------------------------------------------------------------
// Loss values

/// -(1/n) sum_i w[y_i] log softmax(logits_i)[y_i], via log-softmax.
inline double weighted_cross_entropy(const Tensor& logits, std::span<const int> labels,
                                     std::span<const double> weights = {}) {
  Tape tape;
  Var z = tape.constant(logits);
  return tape.value(tape.softmax_cross_entropy(z, labels, weights)).item();
}

/// Mean over rows of -sum_c p_c log p_c, with 0 log 0 = 0.
inline double entropy_loss(const Tensor& probs) {
  if (!probs.is_matrix() || probs.rows() == 0) throw ShapeError("entropy: expected non-empty matrix");
  double total = 0.0;
  for (std::size_t i = 0; i < probs.rows(); ++i)
    for (double p : probs.row(i))
      if (p > 0.0) total -= p * std::log(p);
  return total / static_cast<double>(probs.rows());
}

/// Per-sample unweighted cross-entropy -log softmax(logits_i)[y_i].
inline std::vector<double> per_sample_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (labels.size() != logits.rows()) throw ShapeError("cross_entropy: label count mismatch");
  const Tensor lp = log_softmax(logits);
  std::vector<double> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = -lp.at(i, static_cast<std::size_t>(labels[i]));
  return out;
}

// ---------------------------------------------------------------------------
// Loss nodes

inline Var weighted_ce_node(Tape& tape, Var logits, std::span<const int> labels,
                            std::span<const double> weights) {
  return tape.softmax_cross_entropy(logits, labels, weights);
}

/// Mean entropy of softmax(logits) as a tape node (positive; negate to
/// maximize it by descent).
inline Var entropy_node(Tape& tape, Var logits) {
  Var p = tape.softmax(logits);
  Var lp = tape.log_softmax(logits);
  const double n = static_cast<double>(tape.value(logits).rows());
  return tape.scale(tape.sum(tape.mul(p, lp)), -1.0 / n);
}

/// One mini-batch of the composite objective. Any of the three sets may be
/// empty, in which case its term is absent.
struct CompositeBatch {
  Dataset entropy_set;  // pushed toward uniform predictions
  Dataset relabeled;    // unweighted CE on (already relabeled) labels
  Dataset retain;       // weighted CE with retain_weights, scaled by alpha
};

/// Builds -H(entropy_set) + CE(relabeled) + alpha * wCE(retain) on `tape`,
/// each term averaged within its own set.
inline Var composite_node(Tape& tape, const ParamVector& theta, const MlpConfig& config,
                          const CompositeBatch& batch, std::span<const double> retain_weights,
                          double alpha) {
  std::optional<Var> total;
  auto add = [&](Var term) { total = total ? tape.add(*total, term) : term; };
  if (batch.entropy_set.size() > 0) {
    Var z = forward_on_tape(tape, theta, config, batch.entropy_set.features);
    add(tape.scale(entropy_node(tape, z), -1.0));
  }
  if (batch.relabeled.size() > 0) {
    Var z = forward_on_tape(tape, theta, config, batch.relabeled.features);
    add(weighted_ce_node(tape, z, batch.relabeled.labels, {}));
  }
  if (batch.retain.size() > 0) {
    Var z = forward_on_tape(tape, theta, config, batch.retain.features);
    add(tape.scale(weighted_ce_node(tape, z, batch.retain.labels, retain_weights), alpha));
  }
  if (!total) throw DataError("composite loss: all three sets are empty");
  return *total;
}

/// Loss of `spec` (weighted_ce or negative_entropy) on one batch, on `tape`.
inline Var batch_loss_node(Tape& tape, const ParamVector& theta, const MlpConfig& config,
                           const Dataset& batch, const LossSpec& spec) {
  Var z = forward_on_tape(tape, theta, config, batch.features);
  switch (spec.variant) {
    case LossVariant::weighted_ce:
      return weighted_ce_node(tape, z, batch.labels, spec.class_weights);
    case LossVariant::negative_entropy:
      return tape.scale(entropy_node(tape, z), -1.0);
    case LossVariant::cra_composite:
      break;
  }
  throw ConfigError("loss: cra_composite needs partitioned forget sets (use composite_node)");
}

inline std::vector<double> batch_gradient(const ParamVector& theta, const MlpConfig& config,
                                          const Dataset& batch, const LossSpec& spec) {
  Tape tape(theta.size());
  return tape.backward(batch_loss_node(tape, theta, config, batch, spec));
}

// ---------------------------------------------------------------------------
// Optimizer

/// v' = mu v + g; theta' = theta - lr v'. Entries with mask 0 keep both theta
/// and v untouched.
inline void sgd_step(std::span<double> theta, std::span<const double> grad, std::span<double> velocity,
                     const SgdConfig& config, const SaliencyMask* mask = nullptr) {
  if (grad.size() != theta.size() || velocity.size() != theta.size())
    throw ShapeError("sgd: parameter, gradient and velocity lengths differ");
  if (mask && mask->size() != theta.size()) throw ShapeError("sgd: mask length differs from parameters");
  for (std::size_t i = 0; i < theta.size(); ++i) {
    if (mask && mask->bits[i] == 0) continue;
    velocity[i] = config.momentum * velocity[i] + grad[i];
    theta[i] -= config.learning_rate * velocity[i];
  }
}

inline void require_finite(std::span<const double> theta, const char* where) {
  for (std::size_t i = 0; i < theta.size(); ++i)
    if (!std::isfinite(theta[i]))
      throw NumericError(std::string(where) + ": parameter " + std::to_string(i) + " became non-finite");
}

/// Permutation of [0, n) for one epoch; the stream depends only on
/// (seed, epoch, stream) so epochs are independent of batch count.
inline std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::size_t epoch,
                                                  std::uint64_t stream = 0) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(hash64(seed, static_cast<std::uint64_t>(epoch), stream));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

/// Mini-batch SGD with momentum. Each epoch shuffles, then walks sequential
/// batches; the last batch may be short.
inline ParamVector train(const ParamVector& theta0, const MlpConfig& model, const Dataset& data,
                         const SgdConfig& config, const LossSpec& loss,
                         const SaliencyMask* mask = nullptr) {
  config.validate();
  check_param_length(theta0, model);
  if (data.size() == 0) throw DataError("train: empty dataset");
  if (data.dim() != model.input_dim()) throw ShapeError("train: dataset width differs from model input");

  ParamVector theta = theta0;
  std::vector<double> velocity(theta.size(), 0.0);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = epoch_permutation(data.size(), config.seed, epoch);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const Dataset batch = subset(data, std::span(order).subspan(start, end - start));
      const auto grad = batch_gradient(theta, model, batch, loss);
      sgd_step(theta, grad, velocity, config, mask);
    }
  }
  require_finite(theta, "train");
  return theta;
}

}  // namespace ulab
