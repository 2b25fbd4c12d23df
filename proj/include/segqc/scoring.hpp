#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <future>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "segqc/embedding.hpp"
#include "segqc/error.hpp"
#include "segqc/metrics.hpp"
#include "segqc/preprocess.hpp"
#include "segqc/quality_head.hpp"
#include "segqc/training.hpp"
#include "segqc/volume.hpp"
#include "segqc/volume_io.hpp"

namespace segqc {

inline constexpr std::size_t kDefaultScoreSlices = 10;

enum class ScoreStatus { ok, absent_class, error };

inline const char* to_string(ScoreStatus s) {
  switch (s) {
    case ScoreStatus::ok: return "ok";
    case ScoreStatus::absent_class: return "absent_class";
    case ScoreStatus::error: return "error";
  }
  return "?";
}

struct ScoreRecord {
  std::string volume_id;
  ClassId class_id = 0;
  std::string class_name;
  std::optional<double> predicted_dsc;  // mean of per_slice_scores
  std::size_t n_slices_used = 0;
  std::vector<std::size_t> slice_indices;
  std::vector<double> per_slice_scores;
  double wall_time_s = 0.0;
  std::uint64_t aux_input_bytes = 0;  // probability-volume bytes read; always 0 here
  std::optional<double> reference_dsc;  // true 3D DSC against ground truth, when requested
  ScoreStatus status = ScoreStatus::ok;
  std::string error;
};

using SliceScorer = std::function<double(const SlicePair&)>;

// Wraps a trained head: encodes the slice and feeds the class condition.
class HeadScorer {
 public:
  HeadScorer(QualityHead<float> head, const EmbeddingProvider& provider, ConditionTable conditions = {})
      : head_(std::move(head)), provider_(&provider), conditions_(std::move(conditions)) {}

  double operator()(const SlicePair& s) const {
    const auto f1 = provider_->vision(s);
    auto it = conditions_.find(s.class_id);
    const Embedding& phi = it != conditions_.end() ? it->second : provider_->text(s.class_id);
    return forward(head_, std::span<const float>(f1), std::span<const float>(phi));
  }

  const QualityHead<float>& head() const { return head_; }

 private:
  QualityHead<float> head_;
  const EmbeddingProvider* provider_;
  ConditionTable conditions_;
};

// Ranks chosen from `count` ordered candidates: the centre of each of m equal
// strata, (t + 1/2)*count/m - 1/2 rounded half down. Ends of the extent are
// only picked when every rank is.
inline std::vector<std::size_t> stratified_positions(std::size_t count, std::size_t m) {
  if (m == 0) throw ArgumentError("number of slices must be positive");
  m = std::min(m, count);
  std::vector<std::size_t> out;
  const std::size_t den = 2 * m;
  for (std::size_t t = 0; t < m; ++t) {
    const std::size_t num = (2 * t + 1) * count - m;
    const std::size_t q = num / den, r = num % den;
    out.push_back(2 * r > den ? q + 1 : q);
  }
  return out;
}

inline ScoreRecord score_mask_3d(const LabeledVolume& v, ClassId class_id, const SliceScorer& scorer,
                                 std::size_t n_slices = kDefaultScoreSlices, const PreprocessConfig& cfg = {}) {
  if (n_slices == 0) throw ArgumentError("number of slices must be positive");
  if (!v.candidate) throw ArgumentError("volume '" + v.id + "' has no candidate labels to score");
  const auto t0 = std::chrono::steady_clock::now();
  ScoreRecord rec;
  rec.volume_id = v.id;
  rec.class_id = class_id;
  const auto slices = slices_containing(v, class_id, LabelSource::candidate);
  if (slices.empty()) {
    rec.status = ScoreStatus::absent_class;
    rec.error = "class absent from candidate";
  } else {
    double sum = 0;
    for (auto pos : stratified_positions(slices.size(), n_slices)) {
      const auto pair = preprocess_slice(v, v.axial_axis, slices[pos], class_id, LabelSource::candidate, cfg);
      const double s = scorer(pair);
      rec.slice_indices.push_back(slices[pos]);
      rec.per_slice_scores.push_back(s);
      sum += s;
    }
    rec.n_slices_used = rec.per_slice_scores.size();
    rec.predicted_dsc = sum / static_cast<double>(rec.n_slices_used);
  }
  rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

inline std::vector<ClassId> candidate_classes(const LabeledVolume& v) {
  std::set<ClassId> ids;
  for (auto label : v.labels(LabelSource::candidate))
    if (label != 0) ids.insert(label);
  return {ids.begin(), ids.end()};
}

struct ScoreOptions {
  std::size_t n_slices = kDefaultScoreSlices;
  PreprocessConfig preprocess;
  std::size_t jobs = 1;
  bool reference = false;  // also compute the true 3D DSC (needs a full-volume pass)
};

inline std::optional<double> reference_dsc(const LabeledVolume& v, ClassId cls) {
  const auto d = dsc(class_mask(v.labels(LabelSource::candidate), cls), class_mask(v.ground_truth, cls));
  return d ? d : std::optional<double>(0.0);
}

inline std::vector<ScoreRecord> score_volume(const LabeledVolume& v, const SliceScorer& scorer,
                                             const ScoreOptions& opt = {}) {
  std::vector<ScoreRecord> out;
  for (auto cls : candidate_classes(v)) {
    auto r = score_mask_3d(v, cls, scorer, opt.n_slices, opt.preprocess);
    r.class_name = v.classes.count(cls) ? v.classes.at(cls) : placeholder_class_name(cls);
    if (opt.reference) r.reference_dsc = reference_dsc(v, cls);
    out.push_back(std::move(r));
  }
  return out;
}

namespace detail {
inline std::vector<ScoreRecord> score_entry(const ManifestEntry& e, const SliceScorer& scorer,
                                            const ScoreOptions& opt) {
  try {
    auto v = load_volume(e.path, e.format);
    return score_volume(v, scorer, opt);
  } catch (const std::exception& ex) {
    ScoreRecord r;
    r.volume_id = e.path.stem().string();
    r.status = ScoreStatus::error;
    r.error = ex.what();
    return {r};
  }
}
}  // namespace detail

// One record per (volume, candidate class), ordered by (volume_id,
// class_id). Unreadable volumes yield an error record. With jobs > 1,
// volumes are scored concurrently; results are identical to jobs = 1.
inline std::vector<ScoreRecord> score_dataset(const DatasetManifest& manifest, const SliceScorer& scorer,
                                              const ScoreOptions& opt = {}) {
  if (opt.n_slices == 0) throw ArgumentError("number of slices must be positive");
  std::vector<std::vector<ScoreRecord>> per_volume(manifest.volumes.size());
  if (opt.jobs <= 1) {
    for (std::size_t i = 0; i < per_volume.size(); ++i)
      per_volume[i] = detail::score_entry(manifest.volumes[i], scorer, opt);
  } else {
    std::vector<std::future<void>> workers;
    std::atomic<std::size_t> next{0};
    for (std::size_t w = 0; w < opt.jobs; ++w) {
      workers.push_back(std::async(std::launch::async, [&] {
        for (std::size_t i; (i = next++) < per_volume.size();)
          per_volume[i] = detail::score_entry(manifest.volumes[i], scorer, opt);
      }));
    }
    for (auto& f : workers) f.get();
  }
  std::vector<ScoreRecord> out;
  for (auto& recs : per_volume)
    for (auto& r : recs) out.push_back(std::move(r));
  std::stable_sort(out.begin(), out.end(), [](const ScoreRecord& a, const ScoreRecord& b) {
    return std::tie(a.volume_id, a.class_id) < std::tie(b.volume_id, b.class_id);
  });
  return out;
}

}  // namespace segqc
