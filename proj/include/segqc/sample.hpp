#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "segqc/error.hpp"
#include "segqc/grid.hpp"
#include "segqc/volume.hpp"

namespace segqc {

inline constexpr std::size_t kSliceSize = 256;

enum class DegradationKind { erode, dilate, drop_components, boundary_noise, shift, checkpoint_schedule };

inline std::string_view to_string(DegradationKind k) {
  switch (k) {
    case DegradationKind::erode: return "erode";
    case DegradationKind::dilate: return "dilate";
    case DegradationKind::drop_components: return "drop_components";
    case DegradationKind::boundary_noise: return "boundary_noise";
    case DegradationKind::shift: return "shift";
    case DegradationKind::checkpoint_schedule: return "checkpoint_schedule";
  }
  return "?";
}

inline DegradationKind parse_degradation_kind(std::string_view s) {
  for (auto k : {DegradationKind::erode, DegradationKind::dilate, DegradationKind::drop_components,
                 DegradationKind::boundary_noise, DegradationKind::shift,
                 DegradationKind::checkpoint_schedule}) {
    if (to_string(k) == s) return k;
  }
  throw ArgumentError("unknown degradation kind '" + std::string(s) + "'");
}

struct DegradationSpec {
  DegradationKind kind = DegradationKind::erode;
  double severity = 0.0;
  std::uint64_t seed = 0;

  friend bool operator==(const DegradationSpec&, const DegradationSpec&) = default;
};

// One preprocessed 2D training/evaluation unit: normalized image crop and the
// binary mask of one class, both kSliceSize x kSliceSize.
struct SlicePair {
  Grid2<float> pixels;
  Mask2 mask;
  ClassId class_id = 0;
  std::optional<double> true_dsc;
  std::string volume_id;
  std::int64_t slice_index = 0;
  // Set when the class is absent from the source slice.
  bool empty_mask = false;
  std::optional<DegradationSpec> degradation;
};

}  // namespace segqc
