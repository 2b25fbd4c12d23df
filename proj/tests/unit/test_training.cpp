#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "fixtures.hpp"
#include "segqc/training.hpp"

using namespace segqc;

namespace {
// Encoded samples whose target is an affine function of the first two
// features; ten volumes, two classes.
std::vector<EncodedSample> toy_samples(std::size_t n, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<EncodedSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    EncodedSample s;
    s.f1.resize(dim);
    for (auto& x : s.f1) x = static_cast<float>(2 * uniform01(rng) - 1);
    s.target = std::clamp(0.5 + 0.3 * s.f1[0] - 0.15 * s.f1[1], 0.0, 1.0);
    s.class_id = 1 + static_cast<ClassId>(i % 2);
    s.volume_id = "v" + std::to_string(i % 10);
    s.sample_id = "s" + std::to_string(i);
    out.push_back(std::move(s));
  }
  return out;
}

TrainConfig small_train_config(std::size_t epochs = 4) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 32;
  c.optimizer.learning_rate = 3e-3;
  c.head = HeadConfig{0, 8, 16, 8};
  return c;
}

TextEmbeddingTable two_class_text() { return toy_text_embeddings({{1, "liver"}, {2, "spleen"}}, 8, 1); }
}  // namespace

TEST(RankLoss, WorkedExamples) {
  EXPECT_NEAR(rank_loss(0.9, 0.5, 0.8, 0.3, 0.1), 0.0, 1e-15);
  EXPECT_NEAR(rank_loss(0.5, 0.9, 0.8, 0.3, 0.1), 0.3, 1e-15);
  for (double hi : {0.1, 0.4, 0.9}) EXPECT_EQ(rank_loss(0.6, 0.6, hi, 0.2, 0.07), 0.07);
}

TEST(RankLoss, ShiftInvariantAndPairOrderSymmetric) {
  Rng rng(1);
  for (int rep = 0; rep < 100; ++rep) {
    const double pi = uniform01(rng), pj = uniform01(rng), ai = uniform01(rng), aj = uniform01(rng);
    const double c = uniform01(rng) - 0.5;
    EXPECT_NEAR(rank_loss(pi, pj, ai, aj, 0.05), rank_loss(pi + c, pj + c, ai, aj, 0.05), 1e-12);
    EXPECT_EQ(rank_loss(pi, pj, ai, aj, 0.05), rank_loss(pj, pi, aj, ai, 0.05));
    EXPECT_GE(rank_loss(pi, pj, ai, aj, 0.05), 0.0);
  }
}

TEST(BatchLoss, PerfectPredictionsWithWideGapsCostNothing) {
  const std::vector<double> t{0.1, 0.5, 0.9, 0.2};
  const std::vector<IndexPair> pairs{{0, 1}, {2, 3}};
  const auto b = batch_loss(t, t, pairs, LossConfig{1.0, 0.05});
  EXPECT_EQ(b.total, 0.0);
  EXPECT_EQ(b.n_pairs, 2u);
}

TEST(BatchLoss, TwoSampleHandComputed) {
  // mse = (0.2^2 + 0.5^2) / 2 = 0.145; hinge = 0.3 * 0.4 + 0.1 = 0.22.
  const std::vector<double> p{0.7, 0.4}, t{0.5, 0.9};
  const std::vector<IndexPair> pairs{{0, 1}};
  const auto b = batch_loss(p, t, pairs, LossConfig{0.5, 0.1});
  EXPECT_NEAR(b.mse, 0.145, 1e-12);
  EXPECT_NEAR(b.rank, 0.22, 1e-12);
  EXPECT_NEAR(b.total, 0.145 + 0.5 * 0.22, 1e-12);
}

TEST(BatchLoss, ZeroLambdaIsExactlyMse) {
  Rng rng(2);
  std::vector<double> p(9), t(9);
  for (int i = 0; i < 9; ++i) {
    p[i] = uniform01(rng);
    t[i] = uniform01(rng);
  }
  const std::vector<IndexPair> pairs{{0, 5}, {1, 2}, {3, 8}, {4, 7}};
  const auto b = batch_loss(p, t, pairs, LossConfig{0.0, 0.05});
  double mse = 0;
  for (int i = 0; i < 9; ++i) mse += (p[i] - t[i]) * (p[i] - t[i]) / 9;
  EXPECT_EQ(b.total, b.mse);
  EXPECT_NEAR(b.mse, mse, 1e-15);
}

TEST(BatchLoss, GradientMatchesCentralDifferences) {
  Rng rng(3);
  for (int rep = 0; rep < 30; ++rep) {
    std::vector<double> p(7), t(7);
    for (int i = 0; i < 7; ++i) {
      p[i] = uniform01(rng);
      t[i] = uniform01(rng);
    }
    const std::vector<IndexPair> pairs{{0, 6}, {1, 3}, {2, 5}};
    const LossConfig cfg{0.8, 0.05};
    bool near_kink = false;
    for (auto [i, j] : pairs) near_kink = near_kink || std::fabs((p[i] - p[j]) * (t[j] - t[i]) + cfg.margin_xi) < 1e-2;
    if (near_kink) continue;
    const auto g = batch_loss_gradient(p, t, pairs, cfg);
    for (int k = 0; k < 7; ++k) {
      auto hi = p, lo = p;
      hi[k] += 1e-6;
      lo[k] -= 1e-6;
      const double fd = (batch_loss(hi, t, pairs, cfg).total - batch_loss(lo, t, pairs, cfg).total) / 2e-6;
      EXPECT_NEAR(g[k], fd, 1e-8);
    }
  }
}

TEST(BatchLoss, RejectsInconsistentPairs) {
  const std::vector<double> p{0.1, 0.2, 0.3};
  EXPECT_THROW(batch_loss(p, p, std::vector<IndexPair>{{0, 3}}, {}), ArgumentError);
  EXPECT_THROW(batch_loss(p, p, std::vector<IndexPair>{{0, 1}, {1, 2}}, {}), ArgumentError);
  EXPECT_THROW(batch_loss(p, std::vector<double>{0.1}, {}, {}), ArgumentError);
  EXPECT_THROW(LossConfig({1.0, 0.0}).validate(), ArgumentError);
}

TEST(AdamW, ZeroGradientWithoutDecayLeavesParameters) {
  std::vector<float> p{0.5f, -1.25f, 3.0f}, g(3, 0.0f);
  const auto before = p;
  AdamW<float> opt(3, AdamWConfig{0.1, 0.0});
  for (int i = 0; i < 5; ++i) opt.step(p, g);
  EXPECT_EQ(p, before);
}

TEST(AdamW, FirstStepMovesBySignedLearningRate) {
  std::vector<double> p{1.0, -2.0}, g{0.3, -4.0};
  AdamW<double> opt(2, AdamWConfig{0.01, 0.5, 0.9, 0.999, 1e-12});
  opt.step(p, g);
  EXPECT_NEAR(p[0], 1.0 * (1 - 0.005) - 0.01, 1e-9);
  EXPECT_NEAR(p[1], -2.0 * (1 - 0.005) + 0.01, 1e-9);
}

TEST(Train, ZeroLearningRateKeepsInitialization) {
  const auto data = toy_samples(200, 12, 4);
  std::vector<EncodedSample> tr(data.begin(), data.begin() + 160), va(data.begin() + 160, data.end());
  auto cfg = small_train_config(2);
  cfg.optimizer.learning_rate = 0;
  const auto r = train(tr, va, two_class_text(), cfg, {});
  HeadConfig hc = cfg.head;
  hc.vision_dim = 12;
  QualityHead<float> init(hc);
  init.initialize(derive_seed(cfg.seed, 0x696e6974ULL));
  EXPECT_EQ(r.head, init);
}

TEST(Train, SeededRunsAreBitIdentical) {
  const auto data = toy_samples(300, 12, 5);
  std::vector<EncodedSample> tr(data.begin(), data.begin() + 240), va(data.begin() + 240, data.end());
  auto cfg = small_train_config(3);
  cfg.seed = 77;
  const auto a = train(tr, va, two_class_text(), cfg, {}), b = train(tr, va, two_class_text(), cfg, {});
  EXPECT_EQ(a.head, b.head);
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t e = 0; e < a.log.size(); ++e) EXPECT_EQ(a.log[e].loss_mse, b.log[e].loss_mse);
}

TEST(Train, LearnsRealizableTaskAndLogsEveryEpoch) {
  const auto data = toy_samples(2000, 12, 6);
  std::vector<EncodedSample> tr(data.begin(), data.begin() + 1600), va(data.begin() + 1600, data.end());
  auto cfg = small_train_config(15);
  const auto r = train(tr, va, two_class_text(), cfg, {});
  EXPECT_EQ(r.log.size(), 15u);
  ASSERT_TRUE(r.best.srocc);
  EXPECT_GE(*r.best.srocc, 0.9);
  EXPECT_LT(r.log.back().loss_mse, r.log.front().loss_mse);
}

TEST(Train, MedianTrainingLossIsNearlyMonotone) {
  const std::size_t epochs = 10;
  std::vector<std::vector<double>> per_epoch(epochs);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto data = toy_samples(800, 12, 100 + seed);
    std::vector<EncodedSample> tr(data.begin(), data.begin() + 640), va(data.begin() + 640, data.end());
    auto cfg = small_train_config(epochs);
    cfg.seed = seed;
    const auto r = train(tr, va, two_class_text(), cfg, {});
    for (std::size_t e = 0; e < epochs; ++e) per_epoch[e].push_back(r.log[e].loss_mse + r.log[e].loss_rank);
  }
  std::vector<double> med;
  for (auto& v : per_epoch) {
    std::sort(v.begin(), v.end());
    med.push_back(v[2]);
  }
  int rises = 0;
  for (std::size_t e = 1; e < epochs; ++e) rises += med[e] > med[e - 1];
  EXPECT_LE(rises, 2);
}

TEST(Train, RejectsMissingEmbeddingAndEmptySplits) {
  const auto data = toy_samples(50, 6, 7);
  std::vector<EncodedSample> tr(data.begin(), data.begin() + 40), va(data.begin() + 40, data.end());
  auto cfg = small_train_config(1);
  EXPECT_THROW(train(tr, va, toy_text_embeddings({{1, "liver"}}, 8), cfg, {}), DataError);
  EXPECT_THROW(train(tr, {}, two_class_text(), cfg, {}), ArgumentError);
  std::vector<EncodedSample> one_volume = tr;
  for (auto& s : one_volume) s.volume_id = "only";
  EXPECT_THROW(validation_volumes(one_volume, 0.2, 0), ArgumentError);
}

TEST(Train, ValidationSplitIsVolumeWise) {
  const auto data = toy_samples(100, 4, 8);
  const auto val = validation_volumes(data, 0.2, 3);
  EXPECT_EQ(val.size(), 2u);
  EXPECT_EQ(val, validation_volumes(data, 0.2, 3));
}

TEST(Conditioning, TablesFollowAblationFlags) {
  const auto text = two_class_text();
  const std::set<ClassId> cls{1, 2};
  EXPECT_EQ(condition_table({true, false, true, false}, text, cls, 8).at(2), text.at(2));
  const auto onehot = condition_table({false, true, true, false}, text, cls, 8);
  EXPECT_EQ(onehot.at(1)[0], 1.0f);
  EXPECT_EQ(onehot.at(2)[1], 1.0f);
  const auto none = condition_table({false, false, true, false}, text, cls, 8);
  EXPECT_EQ(none.at(1), Embedding(8, 0.0f));
}

TEST(Ablation, PresetCardinality) {
  EXPECT_EQ(core_preset().size(), 5u);
  const auto grid = full_ablation_grid();
  EXPECT_EQ(grid.size(), 16u);
  for (std::size_t i = 0; i < grid.size(); ++i)
    for (std::size_t j = i + 1; j < grid.size(); ++j) EXPECT_FALSE(grid[i] == grid[j]);
}

TEST(Ablation, RunsOneRowPerConfiguration) {
  const auto data = toy_samples(200, 6, 9);
  std::vector<EncodedSample> tr(data.begin(), data.begin() + 160), va(data.begin() + 160, data.end());
  const auto preset = core_preset();
  const auto rows = run_ablation(tr, va, two_class_text(), preset, small_train_config(2), {});
  ASSERT_EQ(rows.size(), 5u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].flags, preset[i]);
    EXPECT_GE(rows[i].best_epoch, 1u);
  }
}

TEST(Train, EndToEndFromSlicePairs) {
  std::vector<LabeledVolume> vols;
  for (int k = 0; k < 4; ++k) vols.push_back(fixture::phantom_volume("e" + std::to_string(k), 200 + k));
  SynthesisConfig sc;
  sc.severity_grid = {{DegradationKind::erode, 0}, {DegradationKind::erode, 2}, {DegradationKind::dilate, 2}};
  const auto pairs = synthesize_dataset(std::span<const LabeledVolume>(vols), sc);
  const auto provider = EmbeddingProvider::toy(32, toy_text_embeddings(fixture::organ_classes(), 8));
  auto cfg = small_train_config(2);
  cfg.validation_fraction = 0.25;
  const auto r = train(std::span<const SlicePair>(pairs), provider, cfg, {});
  EXPECT_EQ(r.head.config().vision_dim, 32u);
  EXPECT_EQ(r.head.config().text_dim, 8u);
  EXPECT_EQ(r.conditions.size(), 3u);
}
