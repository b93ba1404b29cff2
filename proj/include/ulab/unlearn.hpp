#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ulab/data.hpp"
#include "ulab/error.hpp"
#include "ulab/model.hpp"
#include "ulab/seed.hpp"
#include "ulab/training.hpp"

namespace ulab {

enum class Method { retrain, fine_tune, random_label, salun, salun_cra };

inline constexpr std::string_view method_name(Method m) {
  switch (m) {
    case Method::retrain: return "retrain";
    case Method::fine_tune: return "fine_tune";
    case Method::random_label: return "random_label";
    case Method::salun: return "salun";
    case Method::salun_cra: return "salun_cra";
  }
  return "?";
}

inline std::optional<Method> parse_method(std::string_view name) {
  for (Method m : {Method::retrain, Method::fine_tune, Method::random_label, Method::salun, Method::salun_cra})
    if (method_name(m) == name) return m;
  return std::nullopt;
}

struct UnlearnConfig {
  Method method = Method::salun_cra;
  SgdConfig sgd = unlearning_sgd();           // approximate methods
  SgdConfig retrain_sgd = baseline_sgd();     // retrain reuses the baseline recipe
  double alpha = 1.0;
  int malignant_class = 1;
  std::uint64_t seed = 0;                     // overrides sgd.seed / retrain_sgd.seed

  void validate(int num_classes) const {
    sgd.validate();
    retrain_sgd.validate();
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("unlearn: alpha must be > 0");
    if (malignant_class < 0 || malignant_class >= num_classes)
      throw ConfigError("unlearn: malignant_class " + std::to_string(malignant_class) + " is not a valid class");
  }
};

// ---------------------------------------------------------------------------
// Saliency mask

/// Median with the midpoint convention for even counts.
inline double median(std::vector<double> values) {
  if (values.empty()) throw DataError("median of empty set");
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double hi = values[mid];
  if (values.size() % 2 == 1) return hi;
  const double lo = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return lo + (hi - lo) / 2.0;
}

/// mask_i = 1 iff |g_i| >= median(|g|).
inline SaliencyMask mask_from_gradient(std::span<const double> gradient) {
  std::vector<double> mag(gradient.size());
  std::transform(gradient.begin(), gradient.end(), mag.begin(), [](double g) { return std::abs(g); });
  SaliencyMask mask;
  mask.threshold = median(mag);
  mask.bits.resize(mag.size());
  for (std::size_t i = 0; i < mag.size(); ++i) mask.bits[i] = mag[i] >= mask.threshold ? 1 : 0;
  return mask;
}

/// Full-batch gradient of the unweighted cross-entropy over the forget set,
/// evaluated at theta_o.
inline std::vector<double> forget_loss_gradient(const ParamVector& theta_o, const MlpConfig& model,
                                                const Dataset& forget) {
  if (forget.size() == 0) throw DataError("saliency: forget set is empty");
  return batch_gradient(theta_o, model, forget, LossSpec{LossVariant::weighted_ce, {}, 1.0});
}

inline SaliencyMask compute_saliency_mask(const ParamVector& theta_o, const MlpConfig& model,
                                          const Dataset& forget) {
  return mask_from_gradient(forget_loss_gradient(theta_o, model, forget));
}

// ---------------------------------------------------------------------------
// Relabeling

/// Uniform draw from {0..K-1} \ {y}. For K = 2 this is the deterministic
/// flip and consumes no randomness.
template <typename Rng>
int relabel_random(int y, int num_classes, Rng& rng) {
  if (num_classes < 2) throw ConfigError("relabel: need at least 2 classes");
  if (y < 0 || y >= num_classes) throw DataError("relabel: label out of range");
  if (num_classes == 2) return 1 - y;
  std::uniform_int_distribution<int> dist(0, num_classes - 2);
  const int r = dist(rng);
  return r >= y ? r + 1 : r;
}

/// Copy of `ds` with every label redrawn once by relabel_random.
inline Dataset relabeled(const Dataset& ds, std::uint64_t seed) {
  std::mt19937_64 rng(hash64(seed, "relabel"));
  Dataset out = ds;
  for (int& y : out.labels) y = relabel_random(y, ds.num_classes, rng);
  return out;
}

// ---------------------------------------------------------------------------
// Composite-objective batching

/// Sets fed to the composite objective. entropy_set may be empty (SalUn).
struct CompositeSets {
  Dataset entropy_set;
  Dataset relabeled;
  Dataset retain;
};

/// Steps per epoch: enough batches to cover the largest set.
inline std::size_t composite_steps(const CompositeSets& sets, std::size_t batch_size) {
  const std::size_t largest =
      std::max({sets.entropy_set.size(), sets.relabeled.size(), sets.retain.size()});
  return (largest + batch_size - 1) / batch_size;
}

/// One epoch of aligned batch triples. Each set is shuffled on its own
/// stream and cut into `steps` contiguous chunks whose sizes differ by at
/// most one, so every sample of every set is used exactly once per epoch.
inline std::vector<CompositeBatch> cra_epoch_batches(const CompositeSets& sets, std::size_t batch_size,
                                                     std::uint64_t seed, std::size_t epoch) {
  if (batch_size < 1) throw ConfigError("batching: batch_size must be >= 1");
  const std::size_t steps = composite_steps(sets, batch_size);
  const Dataset* parts[3] = {&sets.entropy_set, &sets.relabeled, &sets.retain};
  std::vector<std::size_t> orders[3];
  for (std::size_t s = 0; s < 3; ++s) orders[s] = epoch_permutation(parts[s]->size(), seed, epoch, s);

  std::vector<CompositeBatch> out(steps);
  for (std::size_t j = 0; j < steps; ++j) {
    Dataset* dest[3] = {&out[j].entropy_set, &out[j].relabeled, &out[j].retain};
    for (std::size_t s = 0; s < 3; ++s) {
      const std::size_t m = parts[s]->size();
      const std::size_t lo = j * m / steps, hi = (j + 1) * m / steps;
      *dest[s] = subset(*parts[s], std::span(orders[s]).subspan(lo, hi - lo));
    }
  }
  return out;
}

/// Masked SGD on the composite objective.
inline ParamVector train_composite(const ParamVector& theta0, const MlpConfig& model, const CompositeSets& sets,
                                   const SgdConfig& config, std::span<const double> retain_weights,
                                   double alpha, const SaliencyMask* mask) {
  config.validate();
  ParamVector theta = theta0;
  std::vector<double> velocity(theta.size(), 0.0);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (const auto& batch : cra_epoch_batches(sets, config.batch_size, config.seed, epoch)) {
      Tape tape(theta.size());
      const auto grad = tape.backward(composite_node(tape, theta, model, batch, retain_weights, alpha));
      sgd_step(theta, grad, velocity, config, mask);
    }
  }
  require_finite(theta, "unlearn");
  return theta;
}

// ---------------------------------------------------------------------------
// Unlearning

struct UnlearnResult {
  ParamVector params;
  std::optional<SaliencyMask> mask;
  double mask_seconds = 0.0;
  double unlearn_seconds = 0.0;
};

/// Sets for SalUn (no entropy term) or SalUn-CRA (malignant forget samples
/// go to the entropy term, the rest are relabeled).
inline CompositeSets composite_sets(const Dataset& forget, const Dataset& retain, const UnlearnConfig& cfg) {
  CompositeSets sets;
  sets.retain = retain;
  if (cfg.method == Method::salun_cra) {
    std::vector<std::size_t> plus, minus;
    for (std::size_t i = 0; i < forget.size(); ++i)
      (forget.labels[i] == cfg.malignant_class ? plus : minus).push_back(i);
    sets.entropy_set = subset(forget, plus);
    sets.relabeled = relabeled(subset(forget, minus), cfg.seed);
  } else {
    sets.entropy_set = subset(forget, std::span<const std::size_t>{});
    sets.relabeled = relabeled(forget, cfg.seed);
  }
  return sets;
}

/// SalUn / SalUn-CRA update under a given mask. Parameters with mask 0 are
/// returned bit-identical to theta_o.
inline ParamVector masked_unlearn(const ParamVector& theta_o, const MlpConfig& model, const Dataset& forget,
                                  const Dataset& retain, const UnlearnConfig& cfg, const SaliencyMask& mask) {
  if (cfg.method != Method::salun && cfg.method != Method::salun_cra)
    throw ConfigError("masked_unlearn: only salun and salun_cra use a saliency mask");
  const auto sets = composite_sets(forget, retain, cfg);
  SgdConfig sgd = cfg.sgd;
  sgd.seed = cfg.seed;
  const auto weights = class_weights(retain);
  return train_composite(theta_o, model, sets, sgd, weights, cfg.alpha, &mask);
}

inline UnlearnResult unlearn_detailed(const ParamVector& theta_o, const MlpConfig& model, const Dataset& forget,
                                      const Dataset& retain, const UnlearnConfig& cfg) {
  using clock = std::chrono::steady_clock;
  auto seconds_since = [](clock::time_point t0) {
    return std::chrono::duration<double>(clock::now() - t0).count();
  };
  cfg.validate(retain.num_classes);
  check_param_length(theta_o, model);
  if (retain.size() == 0) throw DataError("unlearn: retain set is empty");
  const bool needs_forget = cfg.method == Method::random_label || cfg.method == Method::salun ||
                            cfg.method == Method::salun_cra;
  if (needs_forget && forget.size() == 0)
    throw DataError("unlearn: forget set is empty (" + std::string(method_name(cfg.method)) + ")");

  UnlearnResult result;
  auto t0 = clock::now();
  const LossSpec retain_loss{LossVariant::weighted_ce, class_weights(retain), 1.0};
  switch (cfg.method) {
    case Method::retrain: {
      SgdConfig sgd = cfg.retrain_sgd;
      sgd.seed = cfg.seed;
      result.params = train(init_params(model, cfg.seed), model, retain, sgd, retain_loss);
      break;
    }
    case Method::fine_tune: {
      SgdConfig sgd = cfg.sgd;
      sgd.seed = cfg.seed;
      result.params = train(theta_o, model, retain, sgd, retain_loss);
      break;
    }
    case Method::random_label: {
      SgdConfig sgd = cfg.sgd;
      sgd.seed = cfg.seed;
      const Dataset pool = concat(relabeled(forget, cfg.seed), retain);
      result.params = train(theta_o, model, pool, sgd, LossSpec{LossVariant::weighted_ce, class_weights(pool), 1.0});
      break;
    }
    case Method::salun:
    case Method::salun_cra: {
      result.mask = compute_saliency_mask(theta_o, model, forget);
      result.mask_seconds = seconds_since(t0);
      t0 = clock::now();
      result.params = masked_unlearn(theta_o, model, forget, retain, cfg, *result.mask);
      break;
    }
  }
  result.unlearn_seconds = seconds_since(t0);
  return result;
}

/// theta_u = U(theta_o, D_f, D_r) for the method selected in cfg.
inline ParamVector unlearn(const ParamVector& theta_o, const MlpConfig& model, const Dataset& forget,
                           const Dataset& retain, const UnlearnConfig& cfg) {
  return unlearn_detailed(theta_o, model, forget, retain, cfg).params;
}

}  // namespace ulab
