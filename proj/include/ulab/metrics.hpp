#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ulab/data.hpp"
#include "ulab/error.hpp"
#include "ulab/model.hpp"
#include "ulab/training.hpp"

namespace ulab {

struct ConfusionMatrix {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  bool operator==(const ConfusionMatrix&) const = default;
};

inline ConfusionMatrix confusion_matrix(std::span<const int> predicted, std::span<const int> truth,
                                        int positive_class = 1) {
  if (predicted.size() != truth.size())
    throw ShapeError("confusion: " + std::to_string(predicted.size()) + " predictions for " +
                     std::to_string(truth.size()) + " labels");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (predicted[i] < 0 || predicted[i] > 1 || truth[i] < 0 || truth[i] > 1)
      throw DataError("confusion: labels must be binary (sample " + std::to_string(i) + ")");
    const bool pred_pos = predicted[i] == positive_class;
    const bool true_pos = truth[i] == positive_class;
    if (true_pos) (pred_pos ? cm.tp : cm.fn)++;
    else (pred_pos ? cm.fp : cm.tn)++;
  }
  return cm;
}

/// TN / (TN + FP); NaN when there are no negatives.
inline double specificity(const ConfusionMatrix& cm) {
  const std::size_t neg = cm.tn + cm.fp;
  return neg ? static_cast<double>(cm.tn) / static_cast<double>(neg) : std::numeric_limits<double>::quiet_NaN();
}

/// TP / (TP + FN); NaN when there are no positives.
inline double recall(const ConfusionMatrix& cm) {
  const std::size_t pos = cm.tp + cm.fn;
  return pos ? static_cast<double>(cm.tp) / static_cast<double>(pos) : std::numeric_limits<double>::quiet_NaN();
}

struct BalancedAccuracy {
  double value = 0.0;
  bool single_class = false;  // one class absent; value is the present class's rate
};

inline BalancedAccuracy balanced_accuracy_detail(const ConfusionMatrix& cm) {
  const bool has_neg = cm.tn + cm.fp > 0, has_pos = cm.tp + cm.fn > 0;
  if (!has_neg && !has_pos) throw DataError("balanced accuracy: empty confusion matrix");
  if (!has_neg) return {recall(cm), true};
  if (!has_pos) return {specificity(cm), true};
  return {(specificity(cm) + recall(cm)) / 2.0, false};
}

inline double balanced_accuracy(const ConfusionMatrix& cm) { return balanced_accuracy_detail(cm).value; }

/// Mann-Whitney AUC with midranks: P(s+ > s-) + 0.5 P(s+ == s-).
inline double auc(std::span<const double> scores, std::span<const int> truth, int positive_class = 1) {
  if (scores.size() != truth.size()) throw ShapeError("auc: score/label length mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double rank_sum_pos = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    // ranks i+1 .. j share their average
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t t = i; t < j; ++t) {
      if (truth[order[t]] == positive_class) {
        rank_sum_pos += midrank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw DataError("auc: undefined with a single class present");
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  const double u = rank_sum_pos - np * (np + 1.0) / 2.0;
  return u / (np * nn);
}

// ---------------------------------------------------------------------------
// Clinical risk

struct RiskConfig {
  std::string name;
  double c_fp = 1.0;
  double c_fn = 1.0;

  void validate() const {
    if (!(c_fp >= 0.0) || !(c_fn >= 0.0) || !std::isfinite(c_fp) || !std::isfinite(c_fn))
      throw ConfigError("risk '" + name + "': costs must be finite and nonnegative");
    if (c_fp == 0.0 && c_fn == 0.0) throw ConfigError("risk '" + name + "': costs cannot both be zero");
  }
};

namespace presets {
inline RiskConfig risk_I() { return {"I", 1.0, 1.0}; }
inline RiskConfig risk_II() { return {"II", 1.0, 20.0}; }
}  // namespace presets

/// (c_fp * FP + c_fn * FN) / N
inline double global_risk(const ConfusionMatrix& cm, const RiskConfig& risk, std::size_t n) {
  risk.validate();
  if (n != cm.total())
    throw ShapeError("risk: N=" + std::to_string(n) + " but confusion matrix holds " + std::to_string(cm.total()));
  if (n == 0) throw DataError("risk: no samples");
  return (risk.c_fp * static_cast<double>(cm.fp) + risk.c_fn * static_cast<double>(cm.fn)) / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Model-level evaluation

struct Model {
  const MlpConfig& config;
  const ParamVector& params;
};

inline ConfusionMatrix model_confusion(const Model& m, const Dataset& ds, int positive_class = 1) {
  if (ds.size() == 0) throw DataError("evaluation: empty dataset");
  const auto pred = argmax_rows(predict_proba(m.params, m.config, ds.features));
  return confusion_matrix(pred, ds.labels, positive_class);
}

/// Balanced accuracy of argmax predictions (UBAC / RBAC / TBAC).
inline double set_bac(const Model& m, const Dataset& ds, int positive_class = 1) {
  return balanced_accuracy(model_confusion(m, ds, positive_class));
}

inline std::vector<double> sample_losses(const Model& m, const Dataset& ds) {
  return per_sample_cross_entropy(forward_logits(m.params, m.config, ds.features), ds.labels);
}

struct MiaResult {
  double score = 0.0;              // percent of forget samples called "member"
  double threshold = 0.0;          // loss <= threshold => member
  double calibration_accuracy = 0.0;  // balanced accuracy on members vs non-members
  double false_member_rate = 0.0;  // percent of non-members called "member"
};

/// Loss-threshold attack calibrated on members (loss <= t) vs non-members.
/// Chooses the threshold maximizing balanced accuracy over the two sets
/// (member hit rate and non-member rejection rate weighted equally, so the
/// relative set sizes do not bias the attack), the lowest one on ties;
/// t = -inf (nobody is a member) is also a candidate.
inline MiaResult loss_threshold_attack(std::span<const double> member_losses,
                                       std::span<const double> nonmember_losses,
                                       std::span<const double> target_losses) {
  if (member_losses.empty() || nonmember_losses.empty() || target_losses.empty())
    throw DataError("mia: member, non-member and target sets must be nonempty");
  struct Entry {
    double loss;
    bool member;
  };
  std::vector<Entry> all;
  for (double l : member_losses) all.push_back({l, true});
  for (double l : nonmember_losses) all.push_back({l, false});
  std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.loss < b.loss; });

  // Balanced accuracy scaled by M*N to stay in exact integer arithmetic:
  // hits * N + rejections * M.
  const std::size_t m_total = member_losses.size(), n_total = nonmember_losses.size();
  std::size_t hits = 0, rejections = n_total;
  auto score = [&] { return hits * n_total + rejections * m_total; };
  std::size_t best = score();
  double best_t = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].loss == all[i].loss) {
      if (all[j].member) ++hits;
      else --rejections;
      ++j;
    }
    if (score() > best) {
      best = score();
      best_t = all[i].loss;
    }
    i = j;
  }
  auto member_pct = [&](std::span<const double> losses) {
    const auto k = std::count_if(losses.begin(), losses.end(), [&](double l) { return l <= best_t; });
    return 100.0 * static_cast<double>(k) / static_cast<double>(losses.size());
  };
  MiaResult r;
  r.threshold = best_t;
  r.calibration_accuracy = static_cast<double>(best) / (2.0 * static_cast<double>(m_total * n_total));
  r.score = member_pct(target_losses);
  r.false_member_rate = member_pct(nonmember_losses);
  return r;
}

/// MIA score on the forget set: members = retain, non-members = test.
inline MiaResult mia_score(const Model& m, const Dataset& retain, const Dataset& test, const Dataset& forget) {
  if (retain.size() == 0 || test.size() == 0 || forget.size() == 0)
    throw DataError("mia: retain, test and forget sets must be nonempty");
  const auto member = sample_losses(m, retain);
  const auto nonmember = sample_losses(m, test);
  const auto target = sample_losses(m, forget);
  return loss_threshold_attack(member, nonmember, target);
}

// ---------------------------------------------------------------------------
// Reports

struct RiskValue {
  std::string name;
  double value = 0.0;
};

struct GapReport {
  double ubac = 0.0, rbac = 0.0, tbac = 0.0;
  double mia = 0.0;  // percentage points
  double mean = 0.0; // MIA rescaled to [0,1] before averaging
  // Utility gaps, reported alongside but not part of `mean`.
  double specificity = 0.0, recall = 0.0, bac = 0.0, auc = 0.0;
};

struct MetricsReport {
  double specificity = 0.0;
  double recall = 0.0;
  double bac = 0.0;
  double auc = 0.0;
  double ubac = 0.0;
  double rbac = 0.0;
  double tbac = 0.0;
  double mia = 0.0;  // percent
  std::vector<RiskValue> risks;
  ConfusionMatrix test_confusion;
  bool single_class = false;  // some BAC fell back to a single-class rate
  std::optional<GapReport> gap;
};

struct EvalSets {
  const Dataset& forget;
  const Dataset& retain;
  const Dataset& test;
};

/// Utility and risk on the test set, BAC on all three sets, MIA on forget.
inline MetricsReport evaluate(const Model& m, const EvalSets& sets, std::span<const RiskConfig> risks,
                              int positive_class = 1) {
  MetricsReport r;
  const Tensor probs = predict_proba(m.params, m.config, sets.test.features);
  const auto pred = argmax_rows(probs);
  r.test_confusion = confusion_matrix(pred, sets.test.labels, positive_class);
  r.specificity = specificity(r.test_confusion);
  r.recall = recall(r.test_confusion);
  std::vector<double> scores(probs.rows());
  for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = probs.at(i, static_cast<std::size_t>(positive_class));
  r.auc = auc(scores, sets.test.labels, positive_class);

  auto bac_of = [&](const ConfusionMatrix& cm) {
    const auto b = balanced_accuracy_detail(cm);
    r.single_class = r.single_class || b.single_class;
    return b.value;
  };
  r.bac = bac_of(r.test_confusion);
  r.tbac = r.bac;
  r.ubac = bac_of(model_confusion(m, sets.forget, positive_class));
  r.rbac = bac_of(model_confusion(m, sets.retain, positive_class));
  r.mia = mia_score(m, sets.retain, sets.test, sets.forget).score;
  for (const auto& risk : risks)
    r.risks.push_back({risk.name, global_risk(r.test_confusion, risk, sets.test.size())});
  return r;
}

/// |M_u - M_retrain| per metric; mean over {UBAC, RBAC, TBAC, MIA/100}.
inline GapReport metric_gap(const MetricsReport& unlearned, const MetricsReport& reference) {
  GapReport g;
  g.ubac = std::abs(unlearned.ubac - reference.ubac);
  g.rbac = std::abs(unlearned.rbac - reference.rbac);
  g.tbac = std::abs(unlearned.tbac - reference.tbac);
  g.mia = std::abs(unlearned.mia - reference.mia);
  g.mean = (g.ubac + g.rbac + g.tbac + g.mia / 100.0) / 4.0;
  g.specificity = std::abs(unlearned.specificity - reference.specificity);
  g.recall = std::abs(unlearned.recall - reference.recall);
  g.bac = std::abs(unlearned.bac - reference.bac);
  g.auc = std::abs(unlearned.auc - reference.auc);
  return g;
}

}  // namespace ulab
