#include <gtest/gtest.h>

#include <map>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "segqc/dataset_io.hpp"
#include "segqc/degrade.hpp"
#include "segqc/morphology.hpp"

using namespace segqc;

TEST(Morphology, ErosionAndDilationMatchNeighbourhoodOracle) {
  Rng rng(21);
  for (int rep = 0; rep < 20; ++rep) {
    const auto m2 = fixture::random_mask<2>({13, 11}, 0.6, rng);
    EXPECT_EQ(erode(m2, 1), oracle::erode_once(m2));
    EXPECT_EQ(dilate(m2, 1), oracle::dilate_once(m2));
    const auto m3 = fixture::random_mask<3>({7, 6, 5}, 0.7, rng);
    EXPECT_EQ(erode(m3, 1), oracle::erode_once(m3));
    EXPECT_EQ(dilate(m3, 1), oracle::dilate_once(m3));
    EXPECT_EQ(erode(m3, 2), oracle::erode_once(oracle::erode_once(m3)));
  }
}

TEST(Morphology, ConnectedComponentsUseFaceNeighbours) {
  Mask2 m({5, 5});
  m.at(0, 0) = m.at(1, 0) = 1;  // one component
  m.at(2, 1) = 1;               // diagonal only: separate
  m.at(4, 4) = 1;
  const auto [labels, n] = connected_components(m);
  EXPECT_EQ(n, 3u);
  EXPECT_EQ(labels.at(0, 0), labels.at(1, 0));
  EXPECT_NE(labels.at(1, 0), labels.at(2, 1));
}

TEST(Degrade, ErodeSeverityZeroIsIdentity) {
  const auto m = fixture::box_mask<2>({9, 9}, {2, 2}, {6, 6});
  EXPECT_EQ(apply_degradation(m, {DegradationKind::erode, 0, 1}).mask, m);
  EXPECT_EQ(apply_degradation(m, {DegradationKind::dilate, 0, 1}).mask, m);
}

TEST(Degrade, FiveByFiveSquareErodesToThreeByThree) {
  const auto m = fixture::box_mask<2>({9, 9}, {2, 2}, {6, 6});
  const auto r = apply_degradation(m, {DegradationKind::erode, 1, 0});
  EXPECT_EQ(r.mask, fixture::box_mask<2>({9, 9}, {3, 3}, {5, 5}));
  EXPECT_EQ(count_foreground(r.mask), 9u);
  EXPECT_DOUBLE_EQ(*dsc(r.mask, m), 2.0 * 9 / (9 + 25));
  EXPECT_FALSE(r.erased);
}

TEST(Degrade, ClosingContainsConvexOriginal) {
  Rng rng(30);
  for (int rep = 0; rep < 10; ++rep) {
    const auto m = fixture::ellipsoid_mask({20, 20, 16}, fixture::random_ellipsoid({20, 20, 16}, rng, 2.0, 5.0));
    const auto closed = apply_degradation(apply_degradation(m, {DegradationKind::dilate, 1, 0}).mask,
                                          {DegradationKind::erode, 1, 0})
                            .mask;
    for (std::size_t i = 0; i < m.size(); ++i)
      if (m[i]) {
        ASSERT_TRUE(closed[i]) << i;
      }
  }
}

TEST(Degrade, DscNonIncreasingInSeverityOnConvexMasks) {
  Rng rng(31);
  for (int rep = 0; rep < 20; ++rep) {
    const Mask3::Dims dims{24, 24, 18};
    const auto m = fixture::ellipsoid_mask(dims, fixture::random_ellipsoid(dims, rng, 2.0, 6.0));
    for (auto kind : {DegradationKind::erode, DegradationKind::dilate}) {
      double prev = 1.0;
      for (int s = 0; s <= 6; ++s) {
        const auto r = apply_degradation(m, {kind, static_cast<double>(s), 0});
        if (r.erased) break;
        const double d = *dsc(r.mask, m);
        EXPECT_LE(d, prev) << to_string(kind) << " severity " << s;
        prev = d;
      }
    }
  }
}

TEST(Degrade, ErasureIsFlagged) {
  const auto m = fixture::box_mask<2>({9, 9}, {3, 3}, {4, 4});
  const auto r = apply_degradation(m, {DegradationKind::erode, 1, 0});
  EXPECT_TRUE(r.erased);
  EXPECT_TRUE(is_empty_mask(r.mask));
}

TEST(Degrade, PreconditionsAndRanges) {
  const Mask2 empty({4, 4});
  EXPECT_THROW(apply_degradation(empty, {DegradationKind::erode, 1, 0}), ArgumentError);
  EXPECT_THROW(apply_degradation(empty, {DegradationKind::shift, 1, 0}), ArgumentError);
  EXPECT_THROW(apply_degradation(empty, {DegradationKind::drop_components, 0.5, 0}), ArgumentError);
  EXPECT_NO_THROW(apply_degradation(empty, {DegradationKind::dilate, 1, 0}));
  const auto m = fixture::box_mask<2>({6, 6}, {1, 1}, {3, 3});
  EXPECT_THROW(apply_degradation(m, {DegradationKind::erode, 1.5, 0}), ArgumentError);
  EXPECT_THROW(apply_degradation(m, {DegradationKind::erode, -1, 0}), ArgumentError);
  EXPECT_THROW(apply_degradation(m, {DegradationKind::boundary_noise, 1.2, 0}), ArgumentError);
  EXPECT_THROW(apply_degradation(m, {DegradationKind::checkpoint_schedule, -0.1, 0}), ArgumentError);
}

TEST(Degrade, EveryKindIsDeterministicAndShapePreserving) {
  Rng rng(40);
  const Mask3::Dims dims{16, 14, 10};
  Mask3 m = fixture::ellipsoid_mask(dims, fixture::random_ellipsoid(dims, rng, 2.0, 4.0));
  const auto extra = fixture::ellipsoid_mask(dims, fixture::random_ellipsoid(dims, rng, 1.5, 2.5));
  for (std::size_t i = 0; i < m.size(); ++i) m[i] |= extra[i];
  const std::vector<DegradationSpec> specs{{DegradationKind::erode, 1, 7},          {DegradationKind::dilate, 2, 7},
                                           {DegradationKind::drop_components, 0.5, 7}, {DegradationKind::boundary_noise, 0.3, 7},
                                           {DegradationKind::shift, 2, 7},          {DegradationKind::checkpoint_schedule, 0.6, 7}};
  for (const auto& s : specs) {
    const auto a = apply_degradation(m, s), b = apply_degradation(m, s);
    EXPECT_EQ(a.mask, b.mask) << to_string(s.kind);
    EXPECT_EQ(a.mask.dims(), m.dims());
  }
}

TEST(Degrade, ShiftMovesByExactlySeverityAlongOneAxis) {
  const auto m = fixture::box_mask<3>({12, 12, 12}, {4, 4, 4}, {6, 6, 6});
  const auto r = apply_degradation(m, {DegradationKind::shift, 3, 99}).mask;
  EXPECT_EQ(count_foreground(r), count_foreground(m));
  int moved_axes = 0;
  std::size_t lo_m[3] = {99, 99, 99}, lo_r[3] = {99, 99, 99};
  for (std::size_t i = 0; i < m.size(); ++i) {
    for (std::size_t a = 0; a < 3; ++a) {
      if (m[i]) lo_m[a] = std::min(lo_m[a], m.coords(i)[a]);
      if (r[i]) lo_r[a] = std::min(lo_r[a], r.coords(i)[a]);
    }
  }
  for (std::size_t a = 0; a < 3; ++a) {
    if (lo_m[a] != lo_r[a]) {
      ++moved_axes;
      EXPECT_EQ(std::max(lo_m[a], lo_r[a]) - std::min(lo_m[a], lo_r[a]), 3u);
    }
  }
  EXPECT_EQ(moved_axes, 1);
}

TEST(Degrade, DropComponentsRemovesFractionByCount) {
  Mask2 m({20, 3});
  for (std::size_t x = 0; x < 20; x += 2) m.at(x, 1) = 1;  // ten isolated components
  const auto r = apply_degradation(m, {DegradationKind::drop_components, 0.3, 5}).mask;
  EXPECT_EQ(connected_components(r).second, 7u);
}

TEST(Degrade, CheckpointSeverityDecaysOverEpochs) {
  EXPECT_EQ(checkpoint_severity(10), 1.0);
  EXPECT_EQ(checkpoint_severity(500), 0.0);
  double prev = 2.0;
  for (int e : kCheckpointEpochs) {
    EXPECT_LT(checkpoint_severity(e), prev);
    prev = checkpoint_severity(e);
  }
}

// ---------------------------------------------------------------------------
// Synthesis

namespace {
LabeledVolume two_class_cube() {
  LabeledVolume v;
  v.id = "cube";
  v.image = ImageGrid({16, 16, 16}, 20);
  v.ground_truth = LabelGrid({16, 16, 16});
  v.classes = {{1, "liver"}, {2, "spleen"}, {3, "absent"}};
  const auto a = fixture::ellipsoid_mask({16, 16, 16}, {{7.5, 7.0, 6.0}, {5.0, 4.0, 3.6}});
  const auto b = fixture::box_mask<3>({16, 16, 16}, {1, 12, 9}, {4, 14, 14});
  for (std::size_t i = 0; i < a.size(); ++i) v.ground_truth[i] = a[i] ? 1 : b[i] ? 2 : 0;
  return v;
}
}  // namespace

TEST(Synthesis, PairCountMatchesExhaustiveEnumeration) {
  const auto v = two_class_cube();
  SynthesisConfig cfg;
  cfg.severity_grid = {{DegradationKind::erode, 0}, {DegradationKind::erode, 1}, {DegradationKind::dilate, 1},
                       {DegradationKind::boundary_noise, 0.2}, {DegradationKind::checkpoint_schedule, 0.5}};
  std::size_t present = 0;
  for (ClassId c : {1u, 2u})
    for (std::size_t z = 0; z < 16; ++z) {
      bool any = false;
      for (std::size_t y = 0; y < 16; ++y)
        for (std::size_t x = 0; x < 16; ++x) any = any || v.ground_truth.at(x, y, z) == c;
      present += any;
    }
  ScopedWarningCapture cap;
  const auto pairs = synthesize_dataset(std::span<const LabeledVolume>(&v, 1), cfg);
  EXPECT_EQ(pairs.size(), present * 5);
  ASSERT_EQ(cap.messages().size(), 1u);  // class 3 never appears
  for (const auto& p : pairs) {
    ASSERT_TRUE(p.true_dsc);
    EXPECT_GE(*p.true_dsc, 0.0);
    EXPECT_LE(*p.true_dsc, 1.0);
  }
}

TEST(Synthesis, SeverityZeroGivesPerfectDsc) {
  const auto v = two_class_cube();
  SynthesisConfig cfg;
  cfg.severity_grid = {{DegradationKind::erode, 0}};
  for (const auto& p : synthesize_dataset(std::span<const LabeledVolume>(&v, 1), cfg)) EXPECT_EQ(*p.true_dsc, 1.0);
}

TEST(Synthesis, ErasingSeverityGivesZeroDsc) {
  const auto v = two_class_cube();
  SynthesisConfig cfg;
  cfg.severity_grid = {{DegradationKind::erode, 0}, {DegradationKind::erode, 8}};
  double lo = 1, hi = 0;
  for (const auto& p : synthesize_dataset(std::span<const LabeledVolume>(&v, 1), cfg)) {
    lo = std::min(lo, *p.true_dsc);
    hi = std::max(hi, *p.true_dsc);
  }
  EXPECT_EQ(lo, 0.0);
  EXPECT_EQ(hi, 1.0);
}

TEST(Synthesis, DefaultScheduleSpansQualityRange) {
  std::vector<LabeledVolume> vols;
  for (int k = 0; k < 3; ++k) vols.push_back(fixture::phantom_volume("p" + std::to_string(k), 100 + k));
  SynthesisConfig cfg;
  for (double s : {0.0, 1.0, 2.0, 3.0, 6.0}) cfg.severity_grid.push_back({DegradationKind::erode, s});
  for (int e : kCheckpointEpochs) cfg.severity_grid.push_back({DegradationKind::checkpoint_schedule, checkpoint_severity(e)});
  double lo = 1, hi = 0;
  for (const auto& p : synthesize_dataset(std::span<const LabeledVolume>(vols), cfg)) {
    lo = std::min(lo, *p.true_dsc);
    hi = std::max(hi, *p.true_dsc);
  }
  EXPECT_LE(lo, 0.05);
  EXPECT_EQ(hi, 1.0);
}

TEST(Synthesis, SeededRunsAreIdentical) {
  const auto v = fixture::phantom_volume("det", 7);
  SynthesisConfig cfg;
  cfg.seed = 99;
  cfg.severity_grid = {{DegradationKind::boundary_noise, 0.4}, {DegradationKind::checkpoint_schedule, 0.7}};
  const auto a = synthesize_dataset(std::span<const LabeledVolume>(&v, 1), cfg);
  const auto b = synthesize_dataset(std::span<const LabeledVolume>(&v, 1), cfg);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].mask, b[i].mask);
    EXPECT_EQ(a[i].pixels, b[i].pixels);
    EXPECT_EQ(a[i].true_dsc, b[i].true_dsc);
  }
}

namespace {
std::vector<SlicePair> tagged_pairs(const std::vector<double>& dscs) {
  std::vector<SlicePair> out;
  for (std::size_t i = 0; i < dscs.size(); ++i) {
    SlicePair p;
    p.true_dsc = dscs[i];
    p.slice_index = static_cast<std::int64_t>(i);
    out.push_back(p);
  }
  return out;
}

std::map<std::size_t, std::size_t> bin_counts(const std::vector<SlicePair>& ps, std::size_t bins) {
  std::map<std::size_t, std::size_t> c;
  for (const auto& p : ps) ++c[dsc_bin(*p.true_dsc, bins)];
  return c;
}
}  // namespace

TEST(Resample, UniformInputIsPermuted) {
  std::vector<double> d;
  for (int b = 0; b < 10; ++b)
    for (int k = 0; k < 3; ++k) d.push_back(0.1 * b + 0.02 + 0.02 * k);
  SynthesisConfig cfg;
  cfg.samples_per_bin = 3;
  cfg.seed = 4;
  const auto out = resample_balanced(tagged_pairs(d), cfg);
  std::vector<std::int64_t> idx;
  for (const auto& p : out) idx.push_back(p.slice_index);
  std::sort(idx.begin(), idx.end());
  for (std::size_t i = 0; i < idx.size(); ++i) EXPECT_EQ(idx[i], static_cast<std::int64_t>(i));
  EXPECT_EQ(out.size(), d.size());
}

TEST(Resample, SkewedInputIsFlattened) {
  Rng rng(2);
  std::vector<double> d;
  for (int i = 0; i < 900; ++i) d.push_back(0.9 + 0.1 * uniform01(rng));
  for (int i = 0; i < 100; ++i) d.push_back(0.3 + 0.5 * uniform01(rng));
  SynthesisConfig cfg;
  cfg.samples_per_bin = 40;
  ScopedWarningCapture cap;
  const auto out = resample_balanced(tagged_pairs(d), cfg);
  for (auto [bin, n] : bin_counts(out, 10)) EXPECT_EQ(n, 40u) << bin;
  EXPECT_EQ(cap.messages().size(), 4u);  // bins 0.0-0.3 are empty
}

TEST(Resample, SeededRunsAreIdentical) {
  Rng rng(3);
  std::vector<double> d;
  for (int i = 0; i < 300; ++i) d.push_back(uniform01(rng) * uniform01(rng));
  SynthesisConfig cfg;
  cfg.samples_per_bin = 25;
  cfg.seed = 17;
  const auto a = resample_balanced(tagged_pairs(d), cfg), b = resample_balanced(tagged_pairs(d), cfg);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].slice_index, b[i].slice_index);
}

TEST(Resample, RequiresTrueDsc) {
  std::vector<SlicePair> ps(1);
  EXPECT_THROW(resample_balanced(ps, SynthesisConfig{}), ArgumentError);
  SynthesisConfig bad;
  bad.target_bins = 1;
  EXPECT_THROW(bad.validate(), ArgumentError);
}

TEST(DatasetIo, RoundTripAndByteDeterminism) {
  const auto v = fixture::phantom_volume("io", 12);
  SynthesisConfig cfg;
  cfg.severity_grid = {{DegradationKind::erode, 1}, {DegradationKind::dilate, 1}};
  const auto pairs = synthesize_dataset(std::span<const LabeledVolume>(&v, 1), cfg);
  const auto d1 = fixture::scratch_dir("dataset_a"), d2 = fixture::scratch_dir("dataset_b");
  write_dataset(d1, pairs, {{"seed", 1}});
  write_dataset(d2, pairs, {{"seed", 1}});
  EXPECT_EQ(io::read_bytes(d1 / kRecordsFile), io::read_bytes(d2 / kRecordsFile));
  EXPECT_EQ(io::read_bytes(d1 / kIndexFile), io::read_bytes(d2 / kIndexFile));
  EXPECT_FALSE(std::filesystem::exists(d1 / "records.bin.partial"));

  const auto back = read_dataset(d1);
  ASSERT_EQ(back.size(), pairs.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].pixels, pairs[i].pixels);
    EXPECT_EQ(back[i].mask, pairs[i].mask);
    EXPECT_EQ(back[i].true_dsc, pairs[i].true_dsc);
    EXPECT_EQ(back[i].degradation, pairs[i].degradation);
    EXPECT_EQ(back[i].volume_id, "io");
  }
}

TEST(DatasetIo, TruncatedRecordsAreRejected) {
  const auto v = fixture::phantom_volume("trunc", 13);
  SynthesisConfig cfg;
  cfg.severity_grid = {{DegradationKind::erode, 1}};
  const auto dir = fixture::scratch_dir("dataset_trunc");
  write_dataset(dir, synthesize_dataset(std::span<const LabeledVolume>(&v, 1), cfg));
  auto bytes = io::read_bytes(dir / kRecordsFile);
  bytes.resize(bytes.size() - 1);
  io::write_bytes(dir / kRecordsFile, bytes);
  EXPECT_THROW(read_dataset(dir), DataError);
}
