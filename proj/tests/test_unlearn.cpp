#include <gtest/gtest.h>

#include <map>
#include <random>

#include "oracles.hpp"
#include "ulab/metrics.hpp"
#include "ulab/unlearn.hpp"

namespace ulab {
namespace {

// ---------------------------------------------------------------------------
// Saliency mask

TEST(Mask, EvenCountMidpoint) {
  const std::vector<double> g = {3, -1, 2, -5};
  const auto m = mask_from_gradient(g);
  EXPECT_DOUBLE_EQ(m.threshold, 2.5);
  EXPECT_EQ(m.bits, (std::vector<std::uint8_t>{1, 0, 0, 1}));
}

TEST(Mask, OddCount) {
  const std::vector<double> g = {4, 1, -9};
  const auto m = mask_from_gradient(g);
  EXPECT_DOUBLE_EQ(m.threshold, 4.0);
  EXPECT_EQ(m.bits, (std::vector<std::uint8_t>{1, 0, 1}));
}

TEST(Mask, TiesAreInclusive) {
  const std::vector<double> g = {2, -2, 2};
  const auto m = mask_from_gradient(g);
  EXPECT_DOUBLE_EQ(m.threshold, 2.0);
  EXPECT_EQ(m.count(), 3u);
  const std::vector<double> zeros(6, 0.0);
  EXPECT_EQ(mask_from_gradient(zeros).count(), 6u);
}

TEST(Mask, EmptyGradientIsError) { EXPECT_THROW(mask_from_gradient(std::vector<double>{}), DataError); }

TEST(Mask, DistinctEvenSelectsHalf) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-10, 10);
  for (std::size_t d = 2; d <= 200; d += 2) {
    std::vector<double> g(d);
    for (double& v : g) v = u(rng);
    EXPECT_EQ(mask_from_gradient(g).count(), d / 2);
  }
}

TEST(Mask, SelectsBetweenOneAndAll) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> small(-2, 2);
  for (std::size_t d = 1; d <= 60; ++d) {
    std::vector<double> g(d);
    for (double& v : g) v = small(rng);
    const auto c = mask_from_gradient(g).count();
    EXPECT_GE(c, 1u);
    EXPECT_LE(c, d);
  }
}

TEST(Mask, ScaleInvariant) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> g(37 + trial);
    for (double& v : g) v = u(rng);
    const auto base = mask_from_gradient(g).bits;
    for (double c : {0.5, 2.0, 1024.0, 1e-3}) {
      std::vector<double> scaled = g;
      for (double& v : scaled) v *= c;
      EXPECT_EQ(mask_from_gradient(scaled).bits, base);
    }
  }
}

TEST(Mask, SaliencyFromForgetSetIsReproducible) {
  const MlpConfig cfg{{2, 5, 2}};
  const Dataset forget = synth_gaussians({{6, 4}, {{0, 0}, {1, 1}}, 1.0, 0.0, 1});
  const ParamVector theta = init_params(cfg, 3);
  const auto a = compute_saliency_mask(theta, cfg, forget);
  EXPECT_EQ(a.bits, compute_saliency_mask(theta, cfg, forget).bits);
  EXPECT_EQ(a.size(), theta.size());
  // full-batch unweighted CE gradient
  const auto g = batch_gradient(theta, cfg, forget, {LossVariant::weighted_ce, {}, 1.0});
  EXPECT_EQ(a.bits, mask_from_gradient(g).bits);
  Dataset empty = subset(forget, std::span<const std::size_t>{});
  EXPECT_THROW(compute_saliency_mask(theta, cfg, empty), DataError);
}

// ---------------------------------------------------------------------------
// Relabeling

TEST(Relabel, BinaryIsDeterministicFlip) {
  std::mt19937_64 rng(0);
  const auto before = rng;
  EXPECT_EQ(relabel_random(1, 2, rng), 0);
  EXPECT_EQ(relabel_random(0, 2, rng), 1);
  EXPECT_EQ(rng, before);
}

TEST(Relabel, NeverReturnsOriginalLabel) {
  for (int k = 2; k <= 6; ++k)
    for (int y = 0; y < k; ++y)
      for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        std::mt19937_64 rng(seed);
        const int r = relabel_random(y, k, rng);
        ASSERT_NE(r, y);
        ASSERT_GE(r, 0);
        ASSERT_LT(r, k);
      }
}

TEST(Relabel, SeededThreeClass) {
  std::mt19937_64 a(77), b(77);
  const int r = relabel_random(2, 3, a);
  EXPECT_TRUE(r == 0 || r == 1);
  EXPECT_EQ(r, relabel_random(2, 3, b));
}

TEST(Relabel, UniformOverWrongLabels) {
  std::mt19937_64 rng(5);
  std::map<int, int> freq;
  for (int i = 0; i < 10000; ++i) freq[relabel_random(1, 4, rng)]++;
  EXPECT_EQ(freq.count(1), 0u);
  for (int c : {0, 2, 3}) EXPECT_NEAR(freq[c] / 10000.0, 1.0 / 3.0, 0.02) << c;
}

TEST(Relabel, Errors) {
  std::mt19937_64 rng(0);
  EXPECT_THROW(relabel_random(0, 1, rng), ConfigError);
  EXPECT_THROW(relabel_random(3, 3, rng), DataError);
}

// ---------------------------------------------------------------------------
// Composite sets and batching

Dataset labeled(std::vector<int> labels, std::size_t d = 2) {
  Dataset ds;
  ds.num_classes = 2;
  std::vector<double> values;
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) values.push_back(static_cast<double>(i) + 0.1 * static_cast<double>(j));
  ds.labels = std::move(labels);
  ds.features = Tensor({ds.labels.size(), d}, std::move(values));
  return ds;
}

TEST(CompositeSets, BinaryRelabelingRules) {
  const Dataset forget = labeled({1, 0, 1, 1, 0});
  const Dataset retain = labeled({0, 1, 0});
  UnlearnConfig cfg;
  cfg.seed = 4;
  cfg.method = Method::salun;
  const auto s = composite_sets(forget, retain, cfg);
  EXPECT_EQ(s.entropy_set.size(), 0u);
  EXPECT_EQ(s.relabeled.labels, (std::vector<int>{0, 1, 0, 0, 1}));
  EXPECT_EQ(relabeled(forget, 4).labels, s.relabeled.labels);  // random_label uses the same draw

  cfg.method = Method::salun_cra;
  const auto c = composite_sets(forget, retain, cfg);
  EXPECT_EQ(c.entropy_set.size(), 3u);
  for (int y : c.entropy_set.labels) EXPECT_EQ(y, 1);  // malignant enters only the entropy term
  EXPECT_EQ(c.relabeled.labels, (std::vector<int>{1, 1}));
  EXPECT_EQ(c.retain, retain);
}

TEST(Batching, OneSampleSets) {
  CompositeSets sets{labeled({1}), labeled({0}), labeled({1})};
  const auto batches = cra_epoch_batches(sets, 4, 1, 0);
  ASSERT_EQ(batches.size(), 1u);
  EXPECT_EQ(batches[0].entropy_set, sets.entropy_set);
  EXPECT_EQ(batches[0].relabeled, sets.relabeled);
  EXPECT_EQ(batches[0].retain, sets.retain);
}

TEST(Batching, EverySampleUsedOncePerEpoch) {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<std::size_t> n(0, 40), bs(1, 9);
  for (int trial = 0; trial < 50; ++trial) {
    CompositeSets sets;
    Dataset* parts[3] = {&sets.entropy_set, &sets.relabeled, &sets.retain};
    for (auto* p : parts) *p = labeled(std::vector<int>(n(rng) + (p == &sets.retain ? 1 : 0), 0), 1);
    const std::size_t b = bs(rng);
    const auto batches = cra_epoch_batches(sets, b, rng(), 3);
    EXPECT_EQ(batches.size(), composite_steps(sets, b));
    for (std::size_t s = 0; s < 3; ++s) {
      std::vector<double> seen;
      for (const auto& batch : batches) {
        const Dataset* got[3] = {&batch.entropy_set, &batch.relabeled, &batch.retain};
        EXPECT_LE(got[s]->size(), b);
        for (double v : got[s]->features.values()) seen.push_back(v);
      }
      std::sort(seen.begin(), seen.end());
      std::vector<double> expect = parts[s]->features.values();
      EXPECT_EQ(seen, expect);
    }
  }
}

TEST(Batching, CompositeLossMatchesTermByTermOracle) {
  const MlpConfig cfg{{2, 4, 2}};
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const ParamVector theta = init_params(cfg, static_cast<std::uint64_t>(trial));
    CompositeBatch b;
    b.entropy_set = synth_gaussians({{3, 2}, {{0, 0}, {1, 1}}, 1.0, 0.0, rng()});
    b.relabeled = synth_gaussians({{2, 4}, {{0, 0}, {1, 1}}, 1.0, 0.0, rng()});
    b.retain = synth_gaussians({{5, 3}, {{0, 0}, {1, 1}}, 1.0, 0.0, rng()});
    const std::vector<double> w = {0.8, 1.333};
    const double alpha = 0.5 + trial * 0.25;
    Tape tape(theta.size());
    const double got = tape.value(composite_node(tape, theta, cfg, b, w, alpha)).item();

    // independent recomputation: probabilities via the long-double softmax
    auto logits = [&](const Dataset& ds) { return forward_logits(theta, cfg, ds.features); };
    auto mean_entropy = [&](const Dataset& ds) {
      const Tensor z = logits(ds);
      long double h = 0;
      for (std::size_t i = 0; i < z.rows(); ++i) {
        const auto p = oracle::softmax_row(std::vector<double>(z.row(i).begin(), z.row(i).end()));
        for (double pc : p) h -= pc * std::log(pc);
      }
      return static_cast<double>(h / z.rows());
    };
    auto ce = [&](const Dataset& ds, const std::vector<double>& weights) {
      const Tensor z = logits(ds);
      long double s = 0;
      for (std::size_t i = 0; i < z.rows(); ++i) {
        const auto p = oracle::softmax_row(std::vector<double>(z.row(i).begin(), z.row(i).end()));
        const int y = ds.labels[i];
        s -= (weights.empty() ? 1.0 : weights[static_cast<std::size_t>(y)]) * std::log(p[static_cast<std::size_t>(y)]);
      }
      return static_cast<double>(s / z.rows());
    };
    const double expect = -mean_entropy(b.entropy_set) + ce(b.relabeled, {}) + alpha * ce(b.retain, w);
    EXPECT_NEAR(got, expect, 1e-12);
  }
}

TEST(Batching, EmptyEntropySetDropsTerm) {
  const MlpConfig cfg{{2, 3, 2}};
  const ParamVector theta = init_params(cfg, 1);
  CompositeBatch with, without;
  without.relabeled = with.relabeled = labeled({1, 0});
  without.retain = with.retain = labeled({0, 1, 1});
  with.entropy_set = subset(with.relabeled, std::span<const std::size_t>{});
  Tape t1(theta.size()), t2(theta.size());
  EXPECT_EQ(t1.value(composite_node(t1, theta, cfg, with, {}, 1.0)).item(),
            t2.value(composite_node(t2, theta, cfg, without, {}, 1.0)).item());
  Tape t3(theta.size());
  EXPECT_THROW(composite_node(t3, theta, cfg, CompositeBatch{}, {}, 1.0), DataError);
}

// ---------------------------------------------------------------------------
// Methods

class UnlearnFixture : public ::testing::Test {
 protected:
  MlpConfig cfg{{4, 8, 2}};
  Dataset train_set = synth_gaussians({{60, 40}, {{0, 0, 0, 0}, {1, 1, 1, 1}}, 1.0, 0.1, 21});
  SplitResult split = balanced_split(train_set, {0.2, 3});
  Dataset forget = subset(train_set, split.forget_indices);
  Dataset retain = subset(train_set, split.retain_indices);
  ParamVector theta_o = train(init_params(cfg, 1), cfg, train_set, {0.1, 0.9, 16, 10, 2},
                              {LossVariant::weighted_ce, class_weights(train_set), 1.0});

  UnlearnConfig config(Method m, std::uint64_t seed = 5) const {
    UnlearnConfig u;
    u.method = m;
    u.seed = seed;
    u.retrain_sgd = {0.1, 0.9, 16, 5, 0};
    u.sgd = {0.01, 0.9, 16, 3, 0};
    return u;
  }
};

TEST_F(UnlearnFixture, RetrainIsDeterministicAndIgnoresThetaO) {
  const auto a = unlearn(theta_o, cfg, forget, retain, config(Method::retrain));
  EXPECT_EQ(a, unlearn(theta_o, cfg, forget, retain, config(Method::retrain)));
  EXPECT_EQ(a, unlearn(init_params(cfg, 99), cfg, forget, retain, config(Method::retrain)));
  EXPECT_NE(a, unlearn(theta_o, cfg, forget, retain, config(Method::retrain, 6)));
}

TEST_F(UnlearnFixture, FineTuneZeroEpochsIsIdentity) {
  auto u = config(Method::fine_tune);
  u.sgd.epochs = 0;
  EXPECT_EQ(unlearn(theta_o, cfg, forget, retain, u), theta_o);
}

TEST_F(UnlearnFixture, FineTuneTrainsOnRetainOnly) {
  const auto u = config(Method::fine_tune);
  SgdConfig sgd = u.sgd;
  sgd.seed = u.seed;
  EXPECT_EQ(unlearn(theta_o, cfg, forget, retain, u),
            train(theta_o, cfg, retain, sgd, {LossVariant::weighted_ce, class_weights(retain), 1.0}));
}

TEST_F(UnlearnFixture, RandomLabelTrainsOnRelabeledUnion) {
  const auto u = config(Method::random_label);
  SgdConfig sgd = u.sgd;
  sgd.seed = u.seed;
  const Dataset pool = concat(relabeled(forget, u.seed), retain);
  EXPECT_EQ(unlearn(theta_o, cfg, forget, retain, u),
            train(theta_o, cfg, pool, sgd, {LossVariant::weighted_ce, class_weights(pool), 1.0}));
}

TEST_F(UnlearnFixture, ForcedZeroMaskIsIdentity) {
  SaliencyMask zero;
  zero.bits.assign(theta_o.size(), 0);
  for (Method m : {Method::salun, Method::salun_cra})
    EXPECT_EQ(masked_unlearn(theta_o, cfg, forget, retain, config(m), zero), theta_o);
}

TEST_F(UnlearnFixture, NonSalientEntriesBitIdentical) {
  for (Method m : {Method::salun, Method::salun_cra}) {
    const auto r = unlearn_detailed(theta_o, cfg, forget, retain, config(m));
    ASSERT_TRUE(r.mask);
    std::size_t moved = 0;
    for (std::size_t i = 0; i < theta_o.size(); ++i) {
      if (r.mask->bits[i]) {
        moved += r.params[i] != theta_o[i];
      } else {
        EXPECT_EQ(std::bit_cast<std::uint64_t>(r.params[i]), std::bit_cast<std::uint64_t>(theta_o[i]));
      }
    }
    EXPECT_GT(moved, 0u);
  }
}

TEST_F(UnlearnFixture, CraWithoutMalignantEqualsSalun) {
  std::vector<std::size_t> benign;
  for (std::size_t i = 0; i < forget.size(); ++i)
    if (forget.labels[i] == 0) benign.push_back(i);
  const Dataset f0 = subset(forget, benign);
  EXPECT_EQ(unlearn(theta_o, cfg, f0, retain, config(Method::salun_cra)),
            unlearn(theta_o, cfg, f0, retain, config(Method::salun)));
}

TEST_F(UnlearnFixture, EmptySetsAreErrors) {
  const Dataset none = subset(forget, std::span<const std::size_t>{});
  for (Method m : {Method::retrain, Method::fine_tune, Method::random_label, Method::salun, Method::salun_cra})
    EXPECT_THROW(unlearn(theta_o, cfg, forget, none, config(m)), DataError) << method_name(m);
  for (Method m : {Method::random_label, Method::salun, Method::salun_cra})
    EXPECT_THROW(unlearn(theta_o, cfg, none, retain, config(m)), DataError) << method_name(m);
  EXPECT_NO_THROW(unlearn(theta_o, cfg, none, retain, config(Method::fine_tune)));
}

TEST_F(UnlearnFixture, InvalidConfig) {
  auto u = config(Method::salun);
  u.alpha = 0.0;
  EXPECT_THROW(unlearn(theta_o, cfg, forget, retain, u), ConfigError);
  u = config(Method::salun_cra);
  u.malignant_class = 2;
  EXPECT_THROW(unlearn(theta_o, cfg, forget, retain, u), ConfigError);
}

TEST(MethodNames, RoundTrip) {
  for (Method m : {Method::retrain, Method::fine_tune, Method::random_label, Method::salun, Method::salun_cra})
    EXPECT_EQ(parse_method(method_name(m)), m);
  EXPECT_FALSE(parse_method("SalUn"));
}

}  // namespace
}  // namespace ulab
