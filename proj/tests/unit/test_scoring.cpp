#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "segqc/scoring.hpp"
#include "segqc/volume_io.hpp"

using namespace segqc;

namespace {
// Class 1 occupies slices [first, first + count) of the candidate, with a
// gap at `hole` when given.
LabeledVolume slab_volume(std::size_t first, std::size_t count, std::optional<std::size_t> hole = {}) {
  LabeledVolume v;
  v.id = "slab";
  const LabelGrid::Dims dims{16, 16, first + count + 3};
  v.image = ImageGrid(dims, 30);
  v.ground_truth = LabelGrid(dims);
  v.candidate = LabelGrid(dims);
  v.classes = {{1, "liver"}, {2, "spleen"}};
  for (std::size_t z = first; z < first + count; ++z) {
    if (hole && z == *hole) continue;
    for (std::size_t y = 4; y < 12; ++y)
      for (std::size_t x = 3; x < 11; ++x) v.ground_truth.at(x, y, z) = v.candidate->at(x, y, z) = 1;
  }
  return v;
}

double by_index(const SlicePair& s) { return 0.1 + 0.01 * static_cast<double>(s.slice_index); }
}  // namespace

TEST(StratifiedPositions, MatchesClosedFormOracle) {
  for (std::size_t n = 1; n <= 70; ++n)
    for (std::size_t m = 1; m <= 15; ++m) EXPECT_EQ(stratified_positions(n, m), oracle::stratified(n, m)) << n << " " << m;
  EXPECT_EQ(stratified_positions(50, 10), (std::vector<std::size_t>{2, 7, 12, 17, 22, 27, 32, 37, 42, 47}));
  EXPECT_EQ(stratified_positions(4, 1), (std::vector<std::size_t>{1}));
  EXPECT_EQ(stratified_positions(5, 1), (std::vector<std::size_t>{2}));
  EXPECT_EQ(stratified_positions(6, 6), (std::vector<std::size_t>{0, 1, 2, 3, 4, 5}));
  EXPECT_THROW(stratified_positions(5, 0), ArgumentError);
}

TEST(ScoreMask3d, TenSlicesTenSamplesCoversAllInOrder) {
  const auto v = slab_volume(4, 10);
  const auto r = score_mask_3d(v, 1, by_index, 10);
  EXPECT_EQ(r.status, ScoreStatus::ok);
  EXPECT_EQ(r.slice_indices, (std::vector<std::size_t>{4, 5, 6, 7, 8, 9, 10, 11, 12, 13}));
  EXPECT_EQ(r.n_slices_used, r.per_slice_scores.size());
  double mean = 0;
  for (double s : r.per_slice_scores) mean += s / 10;
  EXPECT_NEAR(*r.predicted_dsc, mean, 1e-15);
  EXPECT_EQ(r.aux_input_bytes, 0u);
}

TEST(ScoreMask3d, FiftySlicesUseStratumCentres) {
  const auto v = slab_volume(2, 51, 30);  // 50 slices with class 1
  const auto k = slices_containing(v, 1, LabelSource::candidate);
  ASSERT_EQ(k.size(), 50u);
  const auto r = score_mask_3d(v, 1, by_index, 10);
  std::vector<std::size_t> want;
  for (auto t : oracle::stratified(50, 10)) want.push_back(k[t]);
  EXPECT_EQ(r.slice_indices, want);
  EXPECT_EQ(r.slice_indices.front(), k[2]);
}

TEST(ScoreMask3d, EnoughSlicesEqualsAllSliceScore) {
  const auto v = slab_volume(3, 7);
  const auto all = score_mask_3d(v, 1, by_index, 7);
  for (std::size_t n : {8u, 20u, 1000u}) {
    const auto r = score_mask_3d(v, 1, by_index, n);
    EXPECT_EQ(*r.predicted_dsc, *all.predicted_dsc);
    EXPECT_EQ(r.slice_indices, all.slice_indices);
  }
}

TEST(ScoreMask3d, PreconditionsAndAbsentClass) {
  auto v = slab_volume(2, 5);
  EXPECT_THROW(score_mask_3d(v, 1, by_index, 0), ArgumentError);
  const auto absent = score_mask_3d(v, 2, by_index, 10);
  EXPECT_EQ(absent.status, ScoreStatus::absent_class);
  EXPECT_FALSE(absent.predicted_dsc);
  v.candidate.reset();
  EXPECT_THROW(score_mask_3d(v, 1, by_index, 10), ArgumentError);
}

TEST(ScoreMask3d, SamplesFromCandidateNotGroundTruth) {
  auto v = slab_volume(2, 6);
  for (std::size_t z = 9; z < 11; ++z) v.ground_truth.at(5, 5, z) = 1;
  const auto r = score_mask_3d(v, 1, by_index, 100);
  EXPECT_EQ(r.slice_indices.size(), 6u);
}

TEST(ScoreVolume, ReferenceDscIsTrue3dOverlap) {
  auto v = fixture::phantom_volume("ref", 31);
  v.candidate = fixture::degraded_candidate(
      v, {{DegradationKind::erode, 1, 0}, {DegradationKind::dilate, 1, 0}, {DegradationKind::erode, 0, 0}});
  ScoreOptions opt;
  opt.reference = true;
  const auto recs = score_volume(v, by_index, opt);
  ASSERT_EQ(recs.size(), candidate_classes(v).size());
  for (const auto& r : recs) {
    ASSERT_TRUE(r.reference_dsc);
    EXPECT_EQ(*r.reference_dsc,
              oracle::dsc(class_mask(*v.candidate, r.class_id), class_mask(v.ground_truth, r.class_id)));
    EXPECT_EQ(r.class_name, v.classes.at(r.class_id));
  }
}

namespace {
DatasetManifest write_phantoms(const std::filesystem::path& dir, std::size_t count) {
  DatasetManifest m;
  m.name = "phantoms";
  for (std::size_t k = 0; k < count; ++k) {
    auto v = fixture::phantom_volume("vol" + std::to_string(k), 40 + k);
    v.candidate = fixture::degraded_candidate(v, {{DegradationKind::erode, 1, k},
                                                   {DegradationKind::boundary_noise, 0.2, k},
                                                   {DegradationKind::dilate, 1, k}});
    const auto side = dir / (v.id + ".json");
    write_volume(v, side);
    m.volumes.push_back({side, VolumeFormat::raw_json});
  }
  return m;
}
}  // namespace

TEST(ScoreDataset, OneRecordPerVolumeAndClassInOrder) {
  const auto dir = fixture::scratch_dir("score_dataset");
  const auto m = write_phantoms(dir, 2);
  const auto recs = score_dataset(m, by_index);
  ASSERT_EQ(recs.size(), 6u);
  for (std::size_t i = 1; i < recs.size(); ++i)
    EXPECT_LT(std::tie(recs[i - 1].volume_id, recs[i - 1].class_id), std::tie(recs[i].volume_id, recs[i].class_id));
}

TEST(ScoreDataset, ParallelMatchesSerialAndErrorsAreRecorded) {
  const auto dir = fixture::scratch_dir("score_parallel");
  auto m = write_phantoms(dir, 4);
  m.volumes.push_back({dir / "missing.json", VolumeFormat::raw_json});
  ScoreOptions serial, parallel;
  parallel.jobs = 3;
  const auto a = score_dataset(m, by_index, serial), b = score_dataset(m, by_index, parallel);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].volume_id, b[i].volume_id);
    EXPECT_EQ(a[i].predicted_dsc, b[i].predicted_dsc);
    EXPECT_EQ(a[i].status, b[i].status);
  }
  const auto err = std::find_if(a.begin(), a.end(), [](const ScoreRecord& r) { return r.status == ScoreStatus::error; });
  ASSERT_NE(err, a.end());
  EXPECT_EQ(err->volume_id, "missing");
  EXPECT_EQ(a.size(), 13u);
}

TEST(HeadScorer, RerunsAreBitIdentical) {
  auto v = fixture::phantom_volume("head", 50);
  v.candidate = fixture::degraded_candidate(v, {{DegradationKind::erode, 1, 0}});
  const auto provider = EmbeddingProvider::toy(16, toy_text_embeddings(fixture::organ_classes(), 8));
  QualityHead<float> head(HeadConfig{16, 8, 8, 4});
  head.initialize(2);
  const HeadScorer scorer(head, provider);
  const auto a = score_mask_3d(v, 1, std::cref(scorer)), b = score_mask_3d(v, 1, std::cref(scorer));
  EXPECT_EQ(a.per_slice_scores, b.per_slice_scores);
  for (double s : a.per_slice_scores) {
    EXPECT_GT(s, 0.0);
    EXPECT_LT(s, 1.0);
  }
}
