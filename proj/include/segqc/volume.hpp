#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "segqc/error.hpp"
#include "segqc/grid.hpp"

namespace segqc {

using ClassId = std::uint32_t;
using ClassTable = std::map<ClassId, std::string>;

using ImageGrid = Grid3<std::int16_t>;
using LabelGrid = Grid3<std::uint16_t>;

enum class LabelSource { ground_truth, candidate };

// 3D CT image with its reference labels and (optionally) a candidate
// labelling under assessment. Axis 2 is axial unless `axial_axis` says otherwise.
struct LabeledVolume {
  std::string id;
  ImageGrid image;
  LabelGrid ground_truth;
  std::optional<LabelGrid> candidate;
  std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};
  ClassTable classes;
  std::size_t axial_axis = 2;

  const LabelGrid& labels(LabelSource source) const {
    if (source == LabelSource::ground_truth) return ground_truth;
    if (!candidate) throw ArgumentError("volume '" + id + "' has no candidate labels");
    return *candidate;
  }
};

inline std::string placeholder_class_name(ClassId id) { return "class_" + std::to_string(id); }

// Checks shape and spacing invariants and registers unknown label ids under
// a placeholder name (with a warning).
inline void validate(LabeledVolume& v) {
  if (v.image.dims() != v.ground_truth.dims()) {
    throw DataError("volume '" + v.id + "': image and ground-truth dimensions differ");
  }
  if (v.candidate && v.candidate->dims() != v.image.dims()) {
    throw DataError("volume '" + v.id + "': candidate dimensions differ from image");
  }
  for (double s : v.spacing_mm) {
    if (!std::isfinite(s) || s <= 0.0) {
      throw DataError("volume '" + v.id + "': spacing components must be positive and finite");
    }
  }
  if (v.axial_axis > 2) throw DataError("volume '" + v.id + "': axial axis must be 0, 1 or 2");
  auto register_ids = [&](const LabelGrid& g) {
    for (auto label : g) {
      if (label == 0 || v.classes.count(label)) continue;
      warn("volume '" + v.id + "': unknown class id " + std::to_string(label) +
           " registered as '" + placeholder_class_name(label) + "'");
      v.classes.emplace(label, placeholder_class_name(label));
    }
  };
  register_ids(v.ground_truth);
  if (v.candidate) register_ids(*v.candidate);
}

}  // namespace segqc
