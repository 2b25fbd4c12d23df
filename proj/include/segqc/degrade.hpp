#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "segqc/error.hpp"
#include "segqc/grid.hpp"
#include "segqc/metrics.hpp"
#include "segqc/morphology.hpp"
#include "segqc/preprocess.hpp"
#include "segqc/random.hpp"
#include "segqc/sample.hpp"
#include "segqc/volume.hpp"

namespace segqc {

// Iteration-count kinds (erode, dilate, shift) accept integers up to this.
inline constexpr double kMaxIterations = 64;

// Checkpoint epochs used to produce the pseudo-label trajectory; earlier
// epochs are denser to balance the quality distribution.
inline constexpr std::array<int, 10> kCheckpointEpochs{10, 20, 30, 40, 50, 100, 200, 300, 400, 500};

// Severity of the checkpoint_schedule corruption for a virtual epoch: 1 at the
// first checkpoint, decaying log-linearly to 0 at the last.
inline double checkpoint_severity(double epoch, double first = kCheckpointEpochs.front(),
                                  double last = kCheckpointEpochs.back()) {
  if (epoch <= first) return 1.0;
  if (epoch >= last) return 0.0;
  return 1.0 - std::log(epoch / first) / std::log(last / first);
}

inline void check_severity(const DegradationSpec& spec) {
  const double s = spec.severity;
  const auto where = "degradation '" + std::string(to_string(spec.kind)) + "': severity " + std::to_string(s);
  switch (spec.kind) {
    case DegradationKind::erode:
    case DegradationKind::dilate:
    case DegradationKind::shift:
      if (!(s >= 0 && s <= kMaxIterations) || s != std::floor(s)) {
        throw ArgumentError(where + " must be an integer in [0, 64]");
      }
      break;
    case DegradationKind::drop_components:
    case DegradationKind::boundary_noise:
    case DegradationKind::checkpoint_schedule:
      if (!(s >= 0 && s <= 1)) throw ArgumentError(where + " must lie in [0, 1]");
      break;
  }
}

template <std::size_t N>
struct DegradeResult {
  Mask<N> mask;
  // The corruption removed every foreground voxel of a non-empty input.
  bool erased = false;
};

namespace detail {

template <std::size_t N>
Mask<N> drop_components(const Mask<N>& m, double fraction, Rng& rng) {
  auto [labels, count] = connected_components(m);
  const auto drop = static_cast<std::uint32_t>(std::floor(fraction * count + 1e-12));
  std::vector<std::uint32_t> ids(count);
  for (std::uint32_t i = 0; i < count; ++i) ids[i] = i + 1;
  shuffle(ids.begin(), ids.end(), rng);
  std::vector<std::uint8_t> dropped(count + 1, 0);
  for (std::uint32_t i = 0; i < drop; ++i) dropped[ids[i]] = 1;
  Mask<N> out(m.dims());
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = m[i] && !dropped[labels[i]];
  return out;
}

template <std::size_t N>
Mask<N> boundary_noise(const Mask<N>& m, double p, Rng& rng) {
  const auto band = boundary_band(m);
  Mask<N> out = m;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (band[i] && uniform01(rng) < p) out[i] = !m[i];
  }
  return out;
}

template <std::size_t N>
Mask<N> shift(const Mask<N>& m, std::size_t by, Rng& rng) {
  const auto axis = static_cast<std::size_t>(uniform_below(rng, N));
  const bool forward = (rng() & 1) != 0;
  Mask<N> out(m.dims());
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!m[i]) continue;
    auto at = m.coords(i);
    if (forward) {
      if (at[axis] + by >= m.dim(axis)) continue;
      at[axis] += by;
    } else {
      if (at[axis] < by) continue;
      at[axis] -= by;
    }
    out(at) = 1;
  }
  return out;
}

}  // namespace detail

template <std::size_t N>
DegradeResult<N> apply_degradation(const Mask<N>& mask, const DegradationSpec& spec) {
  check_severity(spec);
  const bool input_empty = is_empty_mask(mask);
  if (input_empty && (spec.kind == DegradationKind::erode || spec.kind == DegradationKind::shift ||
                      spec.kind == DegradationKind::drop_components)) {
    throw ArgumentError("degradation '" + std::string(to_string(spec.kind)) + "' requires a non-empty mask");
  }
  Rng rng(spec.seed);
  const auto iters = static_cast<std::size_t>(spec.severity);
  DegradeResult<N> r;
  switch (spec.kind) {
    case DegradationKind::erode: r.mask = erode(mask, iters); break;
    case DegradationKind::dilate: r.mask = dilate(mask, iters); break;
    case DegradationKind::drop_components: r.mask = detail::drop_components(mask, spec.severity, rng); break;
    case DegradationKind::boundary_noise: r.mask = detail::boundary_noise(mask, spec.severity, rng); break;
    case DegradationKind::shift: r.mask = detail::shift(mask, iters, rng); break;
    case DegradationKind::checkpoint_schedule: {
      // Earlier virtual checkpoints: more rounds of boundary noise, then a
      // severity-fraction of components dropped.
      const double s = spec.severity;
      Mask<N> m = mask;
      const auto rounds = static_cast<std::size_t>(std::ceil(4.0 * s));
      for (std::size_t k = 0; k < rounds; ++k) m = detail::boundary_noise(m, 0.5 * s, rng);
      if (!is_empty_mask(m)) m = detail::drop_components(m, s, rng);
      r.mask = std::move(m);
      break;
    }
  }
  r.erased = !input_empty && is_empty_mask(r.mask);
  return r;
}

// ---------------------------------------------------------------------------
// Quality-data synthesis

struct SeverityLevel {
  DegradationKind kind = DegradationKind::erode;
  double severity = 0.0;
};

struct SynthesisConfig {
  std::vector<SeverityLevel> severity_grid;
  std::size_t target_bins = 10;
  std::size_t samples_per_bin = 100;
  std::uint64_t seed = 0;
  PreprocessConfig preprocess;

  void validate() const {
    if (target_bins < 2) throw ArgumentError("target_bins must be at least 2");
    if (samples_per_bin < 1) throw ArgumentError("samples_per_bin must be at least 1");
    for (const auto& l : severity_grid) check_severity({l.kind, l.severity, 0});
  }
};

// Seed of one (volume, class, severity) synthesis cell.
inline std::uint64_t cell_seed(std::uint64_t base, const std::string& volume_id, ClassId cls, std::size_t level) {
  return derive_seed(base, hash_string(volume_id), cls, level);
}

// Streams one SlicePair per (volume, class, severity, ground-truth slice
// holding the class), in that nesting order. The candidate is the 3D
// ground-truth class mask degraded once per cell; DSC is computed per slice.
template <typename Sink>
  requires std::invocable<Sink&, SlicePair&&>
void synthesize_dataset(std::span<const LabeledVolume> volumes, const SynthesisConfig& config, Sink&& sink) {
  config.validate();
  std::set<ClassId> registered, present;
  for (const auto& v : volumes) {
    const std::size_t axis = v.axial_axis;
    for (const auto& [cls, name] : v.classes) {
      registered.insert(cls);
      const Mask3 truth = class_mask(v.ground_truth, cls);
      if (is_empty_mask(truth)) continue;
      present.insert(cls);

      std::vector<std::size_t> slices;
      std::vector<Mask2> truth_planes;
      for (std::size_t s = 0; s < truth.dim(axis); ++s) {
        auto plane = extract_plane(truth, axis, s);
        if (is_empty_mask(plane)) continue;
        slices.push_back(s);
        truth_planes.push_back(std::move(plane));
      }
      std::vector<Grid2<std::int16_t>> hu_planes;
      hu_planes.reserve(slices.size());
      for (auto s : slices) hu_planes.push_back(extract_plane(v.image, axis, s));

      for (std::size_t level = 0; level < config.severity_grid.size(); ++level) {
        const DegradationSpec spec{config.severity_grid[level].kind, config.severity_grid[level].severity,
                                   cell_seed(config.seed, v.id, cls, level)};
        const auto degraded = apply_degradation(truth, spec);
        for (std::size_t k = 0; k < slices.size(); ++k) {
          const auto cand = extract_plane(degraded.mask, axis, slices[k]);
          SlicePair p = preprocess_plane(hu_planes[k], cand, config.preprocess);
          p.class_id = cls;
          p.volume_id = v.id;
          p.slice_index = static_cast<std::int64_t>(slices[k]);
          p.true_dsc = dsc(cand, truth_planes[k]);  // truth plane is non-empty
          p.degradation = spec;
          sink(std::move(p));
        }
      }
    }
  }
  for (auto cls : registered) {
    if (!present.count(cls)) warn("class " + std::to_string(cls) + " is empty in every volume, skipped");
  }
}

inline std::vector<SlicePair> synthesize_dataset(std::span<const LabeledVolume> volumes,
                                                 const SynthesisConfig& config) {
  std::vector<SlicePair> out;
  synthesize_dataset(volumes, config, [&](SlicePair&& p) { out.push_back(std::move(p)); });
  return out;
}

inline std::size_t dsc_bin(double dsc, std::size_t bins) {
  return std::min(bins - 1, static_cast<std::size_t>(std::floor(dsc * static_cast<double>(bins))));
}

// Flattens the true-DSC histogram: each non-empty bin is subsampled (or
// topped up with replacement) to exactly samples_per_bin; empty bins stay
// empty. Output order is a seeded shuffle.
template <typename T, typename DscOf>
std::vector<T> resample_balanced(std::vector<T> items, const SynthesisConfig& config, DscOf dsc_of) {
  config.validate();
  std::vector<std::vector<std::size_t>> bins(config.target_bins);
  for (std::size_t i = 0; i < items.size(); ++i) {
    const std::optional<double> d = dsc_of(items[i]);
    if (!d) throw ArgumentError("resample_balanced: every pair must carry a true DSC");
    bins[dsc_bin(*d, config.target_bins)].push_back(i);
  }
  Rng rng(derive_seed(config.seed, 0x7265736dULL));
  std::vector<std::size_t> picked;
  for (std::size_t b = 0; b < bins.size(); ++b) {
    auto& idx = bins[b];
    if (idx.empty()) {
      warn("resample_balanced: DSC bin " + std::to_string(b) + " has no source samples, left empty");
      continue;
    }
    shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t k = 0; k < config.samples_per_bin; ++k) {
      picked.push_back(k < idx.size() ? idx[k] : idx[uniform_below(rng, idx.size())]);
    }
  }
  shuffle(picked.begin(), picked.end(), rng);

  std::vector<std::size_t> uses(items.size(), 0);
  for (auto i : picked) ++uses[i];
  std::vector<T> out;
  out.reserve(picked.size());
  for (auto i : picked) {
    if (--uses[i] == 0) {
      out.push_back(std::move(items[i]));
    } else {
      out.push_back(items[i]);
    }
  }
  return out;
}

inline std::vector<SlicePair> resample_balanced(std::vector<SlicePair> pairs, const SynthesisConfig& config) {
  return resample_balanced(std::move(pairs), config, [](const SlicePair& p) { return p.true_dsc; });
}

}  // namespace segqc
