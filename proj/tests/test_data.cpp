#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "ulab/data.hpp"
#include "ulab/io.hpp"
#include "ulab/metrics.hpp"
#include "ulab/training.hpp"

namespace ulab {
namespace {

/// Dataset whose class c holds counts[c] rows; feature = running index.
Dataset histogram_dataset(const std::vector<std::size_t>& counts, std::size_t d = 1) {
  Dataset ds;
  ds.num_classes = static_cast<int>(counts.size());
  std::vector<double> values;
  for (std::size_t c = 0; c < counts.size(); ++c)
    for (std::size_t i = 0; i < counts[c]; ++i) {
      ds.labels.push_back(static_cast<int>(c));
      for (std::size_t j = 0; j < d; ++j) values.push_back(static_cast<double>(ds.labels.size() + j));
    }
  ds.features = Tensor({ds.labels.size(), d}, std::move(values));
  return ds;
}

// ---------------------------------------------------------------------------
// Binarization

TEST(Binarize, ConstantMap) {
  const Dataset ds = histogram_dataset({3, 4, 5});
  const Dataset b = binarize(ds, {"zero", {0, 0, 0}});
  EXPECT_EQ(b.num_classes, 2);
  for (int y : b.labels) EXPECT_EQ(y, 0);
  EXPECT_EQ(b.features, ds.features);
}

// Train-split class histograms of the public MedMNIST v2 releases.
TEST(Binarize, DermaPresetTrainHistogram) {
  const Dataset ds = histogram_dataset({228, 359, 769, 80, 779, 4693, 99});
  const auto counts = binarize(ds, presets::dermamnist()).class_counts();
  EXPECT_EQ(counts[0], 5641u);
  EXPECT_EQ(counts[1], 1366u);
}

TEST(Binarize, PathPresetTrainHistogram) {
  const Dataset ds = histogram_dataset({9366, 9509, 10360, 10401, 8006, 12182, 7886, 9401, 12885});
  const auto counts = binarize(ds, presets::pathmnist()).class_counts();
  EXPECT_EQ(counts[0], 67710u);
  EXPECT_EQ(counts[1], 22286u);
}

TEST(Binarize, IdentityIsIdempotent) {
  const Dataset ds = histogram_dataset({3, 7});
  const Dataset once = binarize(ds, presets::identity_binary());
  EXPECT_EQ(once.labels, ds.labels);
  EXPECT_EQ(binarize(once, presets::identity_binary()).labels, ds.labels);
}

TEST(Binarize, UncoveredClassIsError) {
  EXPECT_THROW(binarize(histogram_dataset({1, 1, 1}), {"short", {0, 1}}), DataError);
}

TEST(Binarize, PresetLookup) {
  EXPECT_TRUE(presets::by_name("dermamnist"));
  EXPECT_TRUE(presets::by_name("pathmnist"));
  EXPECT_FALSE(presets::by_name("nope"));
}

// ---------------------------------------------------------------------------
// Splitting

TEST(Split, ExactProportions) {
  const Dataset ds = histogram_dataset({80, 20});
  const auto s = balanced_split(ds, {0.2, 5});
  EXPECT_EQ(s.forget_indices.size(), 20u);
  std::size_t c0 = 0, c1 = 0;
  for (auto i : s.forget_indices) (ds.labels[i] == 0 ? c0 : c1)++;
  EXPECT_EQ(c0, 16u);
  EXPECT_EQ(c1, 4u);
}

TEST(Split, LargestRemainderHitsGlobalTotal) {
  // 5 + 4 samples at 0.5: floors 2 + 2, remainders .5 / 0 -> class 0 gets 3.
  const std::vector<std::size_t> counts = {5, 4};
  EXPECT_EQ(proportional_counts(counts, 0.5), (std::vector<std::size_t>{3, 2}));
  // 5 + 5 at 0.5: remainders tie, total 5 -> lower class id first.
  const std::vector<std::size_t> tie = {5, 5};
  EXPECT_EQ(proportional_counts(tie, 0.5), (std::vector<std::size_t>{3, 2}));
  const auto s = balanced_split(histogram_dataset({5, 5}), {0.5, 1});
  EXPECT_EQ(s.forget_indices.size(), 5u);
}

TEST(Split, Deterministic) {
  const Dataset ds = histogram_dataset({37, 61});
  EXPECT_EQ(balanced_split(ds, {0.3, 9}), balanced_split(ds, {0.3, 9}));
  EXPECT_NE(balanced_split(ds, {0.3, 9}), balanced_split(ds, {0.3, 10}));
}

TEST(Split, InvalidFractionIsConfigError) {
  const Dataset ds = histogram_dataset({4, 4});
  for (double f : {0.0, 1.0, -0.1, 1.5, std::nan("")}) EXPECT_THROW(balanced_split(ds, {f, 0}), ConfigError);
}

TEST(Split, EmptyClassIsError) {
  EXPECT_THROW(balanced_split(histogram_dataset({4, 0, 4}), {0.5, 0}), DataError);
}

TEST(Split, PartitionAndProportionProperties) {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<std::size_t> count(1, 60);
  std::uniform_int_distribution<int> classes(2, 5);
  std::uniform_real_distribution<double> frac(0.01, 0.99);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<std::size_t> counts(static_cast<std::size_t>(classes(rng)));
    for (auto& c : counts) c = count(rng);
    const Dataset ds = histogram_dataset(counts);
    const double f = frac(rng);
    const auto s = balanced_split(ds, {f, rng()});
    const std::size_t n = ds.size();
    EXPECT_EQ(s.forget_indices.size(), static_cast<std::size_t>(std::llround(static_cast<double>(n) * f)));
    std::vector<int> seen(n, 0);
    for (auto i : s.forget_indices) seen[i]++;
    for (auto i : s.retain_indices) seen[i]++;
    for (int v : seen) EXPECT_EQ(v, 1);
    EXPECT_TRUE(std::is_sorted(s.forget_indices.begin(), s.forget_indices.end()));
    EXPECT_TRUE(std::is_sorted(s.retain_indices.begin(), s.retain_indices.end()));
    std::vector<std::size_t> taken(counts.size(), 0);
    for (auto i : s.forget_indices) taken[static_cast<std::size_t>(ds.labels[i])]++;
    for (std::size_t c = 0; c < counts.size(); ++c) {
      const double fc = static_cast<double>(taken[c]) / static_cast<double>(counts[c]);
      EXPECT_LE(std::abs(fc - f), 1.0 / static_cast<double>(counts[c]) + 1e-12)
          << "class " << c << " of " << counts[c] << " at f=" << f;
    }
  }
}

// ---------------------------------------------------------------------------
// Class weights

TEST(ClassWeights, Imbalanced) {
  const auto w = class_weights(histogram_dataset({80, 20}));
  EXPECT_DOUBLE_EQ(w[0], 0.625);
  EXPECT_DOUBLE_EQ(w[1], 2.5);
}

TEST(ClassWeights, BalancedAreOnes) {
  for (double w : class_weights(histogram_dataset({7, 7, 7}))) EXPECT_DOUBLE_EQ(w, 1.0);
}

TEST(ClassWeights, Properties) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> count(1, 500);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::size_t> counts(3);
    for (auto& c : counts) c = count(rng);
    const auto w = class_weights(histogram_dataset(counts));
    double total = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      EXPECT_GT(w[c], 0.0);
      total += w[c] * static_cast<double>(counts[c]);
      for (std::size_t e = 0; e < 3; ++e) {
        if (counts[c] < counts[e]) {
          EXPECT_GT(w[c], w[e]);
        }
      }
    }
    EXPECT_NEAR(total, static_cast<double>(counts[0] + counts[1] + counts[2]), 1e-9);
  }
}

TEST(ClassWeights, EmptyClassIsError) {
  EXPECT_THROW(class_weights(histogram_dataset({3, 0})), DataError);
}

// ---------------------------------------------------------------------------
// Synthetic generator

TEST(Synthetic, CountsAndDeterminism) {
  const GaussianSpec spec{{30, 50}, {{0, 0, 0}, {1, 1, 1}}, 0.7, 0.0, 12};
  const Dataset a = synth_gaussians(spec), b = synth_gaussians(spec);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.class_counts(), (std::vector<std::size_t>{30, 50}));
  EXPECT_EQ(a.dim(), 3u);
  GaussianSpec other = spec;
  other.seed = 13;
  EXPECT_NE(synth_gaussians(other).features, a.features);
}

TEST(Synthetic, FlipRateIsApproximatelyHonoured) {
  const GaussianSpec spec{{5000, 5000}, {{0.0}, {0.0}}, 1.0, 0.2, 4};
  const Dataset ds = synth_gaussians(spec);
  std::size_t flipped = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) flipped += ds.labels[i] != (i < 5000 ? 0 : 1);
  EXPECT_NEAR(static_cast<double>(flipped) / 10000.0, 0.2, 0.015);
}

TEST(Synthetic, InvalidParameters) {
  EXPECT_THROW(synth_gaussians({{10}, {{0.0}}, 1.0, 0.0, 0}), ConfigError);
  EXPECT_THROW(synth_gaussians({{10, 10}, {{0.0}, {1.0}}, 0.0, 0.0, 0}), ConfigError);
  EXPECT_THROW(synth_gaussians({{10, 10}, {{0.0}, {1.0}}, 1.0, 0.5, 0}), ConfigError);
  EXPECT_THROW(synth_gaussians({{10, 10}, {{0.0}, {1.0, 2.0}}, 1.0, 0.0, 0}), ConfigError);
}

TEST(Synthetic, SeparableBlobsReachPerfectTrainBac) {
  const Dataset ds = synth_gaussians({{60, 60}, {{-3, -3}, {3, 3}}, 0.5, 0.0, 8});
  const MlpConfig cfg{{2, 8, 2}};
  SgdConfig sgd{0.1, 0.9, 16, 30, 1};
  const auto theta = train(init_params(cfg, 2), cfg, ds, sgd, {LossVariant::weighted_ce, class_weights(ds), 1.0});
  EXPECT_EQ(set_bac(Model{cfg, theta}, ds), 1.0);
}

// ---------------------------------------------------------------------------
// CSV

TEST(Csv, SingleRow) {
  const Dataset ds = parse_csv("label,f0,f1\n1,0.5,0.25");
  EXPECT_EQ(ds.size(), 1u);
  EXPECT_EQ(ds.dim(), 2u);
  EXPECT_EQ(ds.labels, std::vector<int>{1});
  EXPECT_EQ(ds.num_classes, 2);
  EXPECT_EQ(ds.features.at(0, 0), 0.5);
  EXPECT_EQ(ds.features.at(0, 1), 0.25);
}

TEST(Csv, ToleratesCrlfAndTrailingNewline) {
  const Dataset ds = parse_csv("label,f0\r\n0,1\r\n2,-3e-2\r\n");
  EXPECT_EQ(ds.labels, (std::vector<int>{0, 2}));
  EXPECT_EQ(ds.num_classes, 3);
  EXPECT_EQ(ds.features.at(1, 0), -3e-2);
}

TEST(Csv, RoundTripIsExact) {
  const Dataset ds = synth_gaussians({{5, 6}, {{0.1, 0.2}, {1, 2}}, 1.3, 0.0, 2});
  EXPECT_EQ(parse_csv(to_csv(ds)), ds);
}

TEST(Csv, ErrorsNameTheLine) {
  auto message = [](const char* text) {
    try {
      parse_csv(text, "x.csv");
    } catch (const ParseError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message("lbl,f0\n0,1").find("x.csv:1"), std::string::npos);
  EXPECT_NE(message("label,f1\n0,1").find("x.csv:1"), std::string::npos);
  EXPECT_NE(message("label,f0\n0,1\n1,2,3").find("x.csv:3"), std::string::npos);
  EXPECT_NE(message("label,f0\n0,1\n-1,2").find("x.csv:3"), std::string::npos);
  EXPECT_NE(message("label,f0\n1.5,1").find("x.csv:2"), std::string::npos);
  EXPECT_NE(message("label,f0\n1,abc").find("x.csv:2"), std::string::npos);
  EXPECT_NE(message("label,f0\n").find("no samples"), std::string::npos);
  EXPECT_NE(message("").find("header"), std::string::npos);
}

// ---------------------------------------------------------------------------
// UDS1 container

TEST(Container, RoundTripIsBitIdentical) {
  Dataset ds = synth_gaussians({{4, 3}, {{0, 0, 0}, {1, 1, 1}}, 1.0, 0.0, 3});
  // features stored as f32; start from f32-representable values so the
  // round trip is exact
  for (double& v : ds.features.values()) v = static_cast<double>(static_cast<float>(v));
  const auto bytes = encode_container(ds);
  EXPECT_EQ(bytes[0], 0x55);
  EXPECT_EQ(bytes[1], 0x44);
  EXPECT_EQ(bytes[2], 0x53);
  EXPECT_EQ(bytes[3], 0x31);
  EXPECT_EQ(decode_container(bytes), ds);
}

TEST(Container, HeaderLayout) {
  Dataset ds;
  ds.num_classes = 2;
  ds.labels = {1};
  ds.features = Tensor({1, 1}, {1.0});
  const auto bytes = encode_container(ds);
  const std::string header = R"({"n":1,"d":1,"k":2})";
  ASSERT_EQ(bytes.size(), 8 + header.size() + 4 + 1);
  EXPECT_EQ(bytes[4], header.size());
  EXPECT_EQ(bytes[5] | bytes[6] | bytes[7], 0);
  EXPECT_EQ(std::string(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(header.size())), header);
  // 1.0f little-endian
  EXPECT_EQ(bytes[8 + header.size() + 3], 0x3F);
  EXPECT_EQ(bytes[8 + header.size() + 2], 0x80);
  EXPECT_EQ(bytes.back(), 1);
}

TEST(Container, TruncationIsParseError) {
  const Dataset ds = synth_gaussians({{4, 3}, {{0, 0}, {1, 1}}, 1.0, 0.0, 3});
  const auto bytes = encode_container(ds);
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{6}, std::size_t{12}, bytes.size() - 1}) {
    std::vector<std::uint8_t> partial(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    EXPECT_THROW(decode_container(partial), ParseError) << "cut at " << cut;
  }
}

TEST(Container, CorruptionIsParseError) {
  const Dataset ds = synth_gaussians({{2, 2}, {{0.0}, {1.0}}, 1.0, 0.0, 3});
  auto bytes = encode_container(ds);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_container(bad_magic), ParseError);
  auto bad_label = bytes;
  bad_label.back() = 7;
  try {
    decode_container(bad_label);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos);
  }
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(decode_container(trailing), ParseError);
}

TEST(Container, FileRoundTripAndDispatch) {
  const auto dir = std::filesystem::temp_directory_path() / "ulab_test_data";
  std::filesystem::create_directories(dir);
  Dataset ds = synth_gaussians({{3, 3}, {{0.0, 1.0}, {1.0, 0.0}}, 1.0, 0.0, 5});
  for (double& v : ds.features.values()) v = static_cast<double>(static_cast<float>(v));
  save_container(ds, (dir / "d.uds").string());
  save_csv(ds, (dir / "d.csv").string());
  EXPECT_EQ(load_dataset((dir / "d.uds").string()), ds);
  EXPECT_EQ(load_dataset((dir / "d.csv").string()), ds);
  EXPECT_THROW(load_dataset((dir / "missing.uds").string()), Error);
}

// ---------------------------------------------------------------------------
// UCK1 checkpoint

TEST(Checkpoint, RoundTripIsBitIdentical) {
  const MlpConfig cfg{{3, 4, 2}};
  ParamVector p = init_params(cfg, 7);
  p[0] = -0.0;
  p[1] = 1e-310;
  const Checkpoint ckpt{cfg, p};
  const auto bytes = encode_checkpoint(ckpt);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "UCK1");
  const auto back = decode_checkpoint(bytes);
  EXPECT_EQ(back.config, cfg);
  ASSERT_EQ(back.params.size(), p.size());
  for (std::size_t i = 0; i < p.size(); ++i)
    EXPECT_EQ(std::bit_cast<std::uint64_t>(back.params[i]), std::bit_cast<std::uint64_t>(p[i]));
}

TEST(Checkpoint, TruncationAndMismatchAreParseErrors) {
  const MlpConfig cfg{{2, 2}};
  const auto bytes = encode_checkpoint({cfg, init_params(cfg, 1)});
  std::vector<std::uint8_t> partial(bytes.begin(), bytes.end() - 1);
  EXPECT_THROW(decode_checkpoint(partial), ParseError);
  EXPECT_THROW(encode_checkpoint({cfg, ParamVector(5)}), ShapeError);
}

}  // namespace
}  // namespace ulab
