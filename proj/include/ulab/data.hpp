#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ulab/error.hpp"
#include "ulab/tensor.hpp"

namespace ulab {

/// Labeled feature matrix: features is [N x d], labels[i] in [0, num_classes).
struct Dataset {
  Tensor features;
  std::vector<int> labels;
  int num_classes = 0;
  std::vector<std::string> class_names;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }

  void validate() const {
    if (labels.empty()) throw DataError("dataset: no samples");
    if (!features.is_matrix() || features.rows() != labels.size()) {
      throw ShapeError("dataset: " + std::to_string(labels.size()) + " labels for features " +
                       Tensor::shape_string(features.shape()));
    }
    if (num_classes < 1) throw DataError("dataset: class count must be positive");
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] < 0 || labels[i] >= num_classes) {
        throw DataError("dataset: label " + std::to_string(labels[i]) + " at sample " +
                        std::to_string(i) + " outside [0, " + std::to_string(num_classes) + ")");
      }
    }
  }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes), 0);
    for (int y : labels) ++counts[static_cast<std::size_t>(y)];
    return counts;
  }

  bool operator==(const Dataset&) const = default;
};

/// Rows of `ds` at `indices`, in that order. An empty index list yields an
/// empty dataset with the same width.
inline Dataset subset(const Dataset& ds, std::span<const std::size_t> indices) {
  const std::size_t d = ds.dim();
  Dataset out;
  out.num_classes = ds.num_classes;
  out.class_names = ds.class_names;
  std::vector<double> values;
  values.reserve(indices.size() * d);
  for (std::size_t idx : indices) {
    if (idx >= ds.size()) throw ShapeError("subset: index " + std::to_string(idx) + " out of range");
    auto r = ds.features.row(idx);
    values.insert(values.end(), r.begin(), r.end());
    out.labels.push_back(ds.labels[idx]);
  }
  out.features = Tensor({indices.size(), d}, std::move(values));
  return out;
}

/// Rows of a followed by rows of b.
inline Dataset concat(const Dataset& a, const Dataset& b) {
  if (a.dim() != b.dim()) throw ShapeError("concat: feature widths differ");
  Dataset out;
  out.num_classes = std::max(a.num_classes, b.num_classes);
  out.class_names = a.class_names;
  std::vector<double> values = a.features.values();
  values.insert(values.end(), b.features.values().begin(), b.features.values().end());
  out.features = Tensor({a.size() + b.size(), a.dim()}, std::move(values));
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  return out;
}

// ---------------------------------------------------------------------------
// Binarization

/// Maps every original class id to 0 (benign) or 1 (malignant).
struct BinarizationMap {
  std::string name;
  std::vector<int> to_binary;  // indexed by original class id

  void validate() const {
    for (std::size_t c = 0; c < to_binary.size(); ++c) {
      if (to_binary[c] != 0 && to_binary[c] != 1) {
        throw ConfigError("binarization '" + name + "': class " + std::to_string(c) +
                          " maps to " + std::to_string(to_binary[c]) + ", expected 0 or 1");
      }
    }
  }
};

namespace presets {

// DermaMNIST: 0 actinic keratoses, 1 basal cell carcinoma, 2 benign keratosis,
// 3 dermatofibroma, 4 melanoma, 5 melanocytic nevi, 6 vascular lesions.
inline BinarizationMap dermamnist() { return {"dermamnist", {1, 1, 0, 0, 1, 0, 0}}; }

// PathMNIST: 0 adipose, 1 background, 2 debris, 3 lymphocytes, 4 mucus,
// 5 smooth muscle, 6 normal colon mucosa, 7 cancer-associated stroma,
// 8 colorectal adenocarcinoma epithelium.
inline BinarizationMap pathmnist() { return {"pathmnist", {0, 0, 0, 0, 0, 0, 0, 1, 1}}; }

inline BinarizationMap identity_binary() { return {"identity", {0, 1}}; }

inline std::optional<BinarizationMap> by_name(const std::string& name) {
  if (name == "dermamnist") return dermamnist();
  if (name == "pathmnist") return pathmnist();
  if (name == "identity") return identity_binary();
  return std::nullopt;
}

}  // namespace presets

inline Dataset binarize(const Dataset& ds, const BinarizationMap& map) {
  map.validate();
  Dataset out;
  out.features = ds.features;
  out.num_classes = 2;
  out.class_names = {"benign", "malignant"};
  out.labels.reserve(ds.labels.size());
  for (std::size_t i = 0; i < ds.labels.size(); ++i) {
    const int y = ds.labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= map.to_binary.size()) {
      throw DataError("binarize: class " + std::to_string(y) + " (sample " + std::to_string(i) +
                      ") is not covered by map '" + map.name + "'");
    }
    out.labels.push_back(map.to_binary[static_cast<std::size_t>(y)]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Forget / retain split

struct SplitSpec {
  double forget_fraction = 0.2;
  std::uint64_t seed = 0;
};

/// Disjoint, sorted index sets covering [0, N).
struct SplitResult {
  std::vector<std::size_t> forget_indices;
  std::vector<std::size_t> retain_indices;

  bool operator==(const SplitResult&) const = default;
};

/// Per-class forget counts: floor(N_c * f), then the remaining
/// round(N * f) - sum(floors) units go to the classes with the largest
/// fractional remainders (lower class id first on ties).
inline std::vector<std::size_t> proportional_counts(std::span<const std::size_t> class_counts,
                                                    double fraction) {
  const std::size_t total_n = std::accumulate(class_counts.begin(), class_counts.end(), std::size_t{0});
  const auto target = static_cast<std::size_t>(std::llround(static_cast<double>(total_n) * fraction));
  std::vector<std::size_t> take(class_counts.size());
  std::vector<double> remainder(class_counts.size());
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < class_counts.size(); ++c) {
    const double exact = static_cast<double>(class_counts[c]) * fraction;
    take[c] = static_cast<std::size_t>(std::floor(exact));
    remainder[c] = exact - static_cast<double>(take[c]);
    assigned += take[c];
  }
  std::vector<std::size_t> order(class_counts.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t i = 0; assigned < target && i < order.size(); ++i) {
    if (take[order[i]] < class_counts[order[i]]) {
      ++take[order[i]];
      ++assigned;
    }
  }
  return take;
}

/// Class-proportional forget set, drawn uniformly within each class.
inline SplitResult balanced_split(const Dataset& ds, const SplitSpec& spec) {
  if (!(spec.forget_fraction > 0.0 && spec.forget_fraction < 1.0)) {
    throw ConfigError("split: forget_fraction must lie in (0, 1), got " +
                      std::to_string(spec.forget_fraction));
  }
  const auto counts = ds.class_counts();
  for (std::size_t c = 0; c < counts.size(); ++c)
    if (counts[c] == 0) throw DataError("split: class " + std::to_string(c) + " has no samples");

  const auto take = proportional_counts(counts, spec.forget_fraction);
  std::vector<std::vector<std::size_t>> by_class(counts.size());
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);

  std::mt19937_64 rng(spec.seed);
  std::vector<char> forget(ds.size(), 0);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    std::shuffle(by_class[c].begin(), by_class[c].end(), rng);
    for (std::size_t j = 0; j < take[c]; ++j) forget[by_class[c][j]] = 1;
  }
  SplitResult out;
  for (std::size_t i = 0; i < ds.size(); ++i)
    (forget[i] ? out.forget_indices : out.retain_indices).push_back(i);
  return out;
}

// ---------------------------------------------------------------------------
// Class weights

/// w_c = N / (K * N_c).
inline std::vector<double> class_weights(std::span<const int> labels, int num_classes) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes), 0);
  for (int y : labels) {
    if (y < 0 || y >= num_classes) throw DataError("class_weights: label out of range");
    ++counts[static_cast<std::size_t>(y)];
  }
  std::vector<double> w(counts.size());
  const double n = static_cast<double>(labels.size());
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) throw DataError("class_weights: class " + std::to_string(c) + " is empty");
    w[c] = n / (static_cast<double>(num_classes) * static_cast<double>(counts[c]));
  }
  return w;
}

inline std::vector<double> class_weights(const Dataset& ds) {
  return class_weights(ds.labels, ds.num_classes);
}

// ---------------------------------------------------------------------------
// Synthetic data

struct GaussianSpec {
  std::vector<std::size_t> n_per_class;
  std::vector<std::vector<double>> means;  // one mean per class, all the same width
  double scale = 1.0;                      // isotropic standard deviation
  double label_flip_rate = 0.0;            // probability a label is replaced by another class
  std::uint64_t seed = 0;
};

/// Isotropic Gaussian blobs, class by class, with optional symmetric label
/// noise. Class c contributes exactly n_per_class[c] rows (before noise).
inline Dataset synth_gaussians(const GaussianSpec& spec) {
  const std::size_t k = spec.n_per_class.size();
  if (k < 2) throw ConfigError("synthetic: need at least 2 classes");
  if (spec.means.size() != k) throw ConfigError("synthetic: one mean per class required");
  const std::size_t d = spec.means.front().size();
  if (d == 0) throw ConfigError("synthetic: means must have positive width");
  for (const auto& m : spec.means)
    if (m.size() != d) throw ConfigError("synthetic: means have different widths");
  if (!(spec.scale > 0.0)) throw ConfigError("synthetic: scale must be positive");
  if (!(spec.label_flip_rate >= 0.0 && spec.label_flip_rate < 0.5))
    throw ConfigError("synthetic: label_flip_rate must lie in [0, 0.5)");
  for (std::size_t n : spec.n_per_class)
    if (n == 0) throw ConfigError("synthetic: every class needs at least one sample");

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, spec.scale);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> other(0, static_cast<int>(k) - 2);

  Dataset ds;
  ds.num_classes = static_cast<int>(k);
  std::vector<double> values;
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < spec.n_per_class[c]; ++i) {
      for (std::size_t j = 0; j < d; ++j) values.push_back(spec.means[c][j] + noise(rng));
      int y = static_cast<int>(c);
      if (unit(rng) < spec.label_flip_rate) {
        const int r = other(rng);
        y = r >= y ? r + 1 : r;
      }
      ds.labels.push_back(y);
    }
  }
  ds.features = Tensor({ds.labels.size(), d}, std::move(values));
  return ds;
}

}  // namespace ulab
