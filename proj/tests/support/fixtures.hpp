#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "segqc/degrade.hpp"
#include "segqc/grid.hpp"
#include "segqc/random.hpp"
#include "segqc/volume.hpp"

namespace segqc::fixture {

struct Ellipsoid {
  std::array<double, 3> centre;
  std::array<double, 3> radii;
  bool contains(double x, double y, double z) const {
    const double a = (x - centre[0]) / radii[0], b = (y - centre[1]) / radii[1], c = (z - centre[2]) / radii[2];
    return a * a + b * b + c * c <= 1.0;
  }
};

inline Mask3 ellipsoid_mask(const Mask3::Dims& dims, const Ellipsoid& e) {
  Mask3 m(dims);
  for (std::size_t z = 0; z < dims[2]; ++z)
    for (std::size_t y = 0; y < dims[1]; ++y)
      for (std::size_t x = 0; x < dims[0]; ++x) m.at(x, y, z) = e.contains(x, y, z);
  return m;
}

template <std::size_t N>
Mask<N> box_mask(const typename Mask<N>::Dims& dims, const std::array<std::size_t, N>& lo,
                 const std::array<std::size_t, N>& hi) {
  Mask<N> m(dims);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const auto at = m.coords(i);
    bool in = true;
    for (std::size_t a = 0; a < N; ++a) in = in && at[a] >= lo[a] && at[a] <= hi[a];
    m[i] = in;
  }
  return m;
}

template <std::size_t N>
Mask<N> random_mask(const typename Mask<N>::Dims& dims, double density, Rng& rng) {
  Mask<N> m(dims);
  for (auto& v : m) v = uniform01(rng) < density;
  return m;
}

// Seeded random ellipsoid that fits in the grid with a one-voxel border.
inline Ellipsoid random_ellipsoid(const Mask3::Dims& dims, Rng& rng, double rmin = 2.5, double rmax = 6.0) {
  Ellipsoid e{};
  for (std::size_t a = 0; a < 3; ++a) {
    const double r = std::min(rmin + (rmax - rmin) * uniform01(rng), 0.5 * static_cast<double>(dims[a]) - 1.5);
    e.radii[a] = r;
    const double lo = r + 1.0, hi = static_cast<double>(dims[a]) - 2.0 - r;
    e.centre[a] = lo + (hi - lo) * uniform01(rng);
  }
  return e;
}

inline const ClassTable& organ_classes() {
  static const ClassTable t{{1, "liver"}, {2, "spleen"}, {3, "left kidney"}};
  return t;
}

struct PhantomOptions {
  Mask3::Dims dims{40, 40, 24};
  std::size_t organs = 3;
  double rmin = 3.0, rmax = 7.0;
};

// CT-like phantom: ellipsoidal organs over soft-tissue background with
// seeded noise. Organs are painted in class order, later ones on top.
inline LabeledVolume phantom_volume(const std::string& id, std::uint64_t seed, const PhantomOptions& opt = {}) {
  Rng rng(seed);
  LabeledVolume v;
  v.id = id;
  v.image = ImageGrid(opt.dims);
  v.ground_truth = LabelGrid(opt.dims);
  v.spacing_mm = {0.8, 0.8, 2.0};
  for (std::size_t k = 1; k <= opt.organs; ++k) v.classes[static_cast<ClassId>(k)] = organ_classes().count(k)
                                                                                   ? organ_classes().at(k)
                                                                                   : placeholder_class_name(k);
  for (std::size_t k = 1; k <= opt.organs; ++k) {
    const auto e = random_ellipsoid(opt.dims, rng, opt.rmin, opt.rmax);
    const auto m = ellipsoid_mask(opt.dims, e);
    for (std::size_t i = 0; i < m.size(); ++i)
      if (m[i]) v.ground_truth[i] = static_cast<std::uint16_t>(k);
  }
  for (std::size_t i = 0; i < v.image.size(); ++i) {
    const double base = v.ground_truth[i] ? 40.0 + 30.0 * v.ground_truth[i] : -60.0;
    v.image[i] = static_cast<std::int16_t>(std::lround(base + 25.0 * (uniform01(rng) - 0.5)));
  }
  return v;
}

// Candidate labels: each ground-truth class degraded by its own spec.
inline LabelGrid degraded_candidate(const LabeledVolume& v, const std::vector<DegradationSpec>& per_class) {
  LabelGrid cand(v.ground_truth.dims());
  std::size_t k = 0;
  for (const auto& [cls, name] : v.classes) {
    const auto truth = class_mask(v.ground_truth, cls);
    if (is_empty_mask(truth) || k >= per_class.size()) {
      ++k;
      continue;
    }
    const auto d = apply_degradation(truth, per_class[k++]).mask;
    for (std::size_t i = 0; i < d.size(); ++i)
      if (d[i]) cand[i] = static_cast<std::uint16_t>(cls);
  }
  return cand;
}

struct MaskPairCase {
  Mask3 a, b;
  std::array<double, 3> spacing;
  double tolerance;
};

// 25 mask pairs for the overlap and surface metrics: shifted boxes,
// ellipsoids, sparse random masks, anisotropic spacing, several tolerances.
inline std::vector<MaskPairCase> mask_pair_suite() {
  std::vector<MaskPairCase> out;
  Rng rng(20240611);
  const Mask3::Dims dims{14, 12, 9};
  const std::array<std::array<double, 3>, 3> spacings{{{1, 1, 1}, {0.8, 0.8, 2.5}, {1.5, 0.6, 1.2}}};
  const std::array<double, 5> tolerances{0.0, 0.9, 1.0, 1.7, 3.0};
  for (std::size_t k = 0; k < 25; ++k) {
    MaskPairCase c;
    c.spacing = spacings[k % 3];
    c.tolerance = tolerances[k % 5];
    switch (k % 4) {
      case 0: {
        const std::size_t s = k / 4;
        c.a = box_mask<3>(dims, {2, 2, 1}, {8, 7, 5});
        c.b = box_mask<3>(dims, {2 + s % 4, 3, 1 + s % 3}, {9 + s % 4, 8, 6});
        break;
      }
      case 1:
        c.a = ellipsoid_mask(dims, random_ellipsoid(dims, rng, 2.0, 4.5));
        c.b = ellipsoid_mask(dims, random_ellipsoid(dims, rng, 2.0, 4.5));
        break;
      case 2:
        c.a = random_mask<3>(dims, 0.15, rng);
        c.b = random_mask<3>(dims, 0.25, rng);
        break;
      default: {
        c.a = ellipsoid_mask(dims, random_ellipsoid(dims, rng, 2.5, 5.0));
        c.b = erode(c.a, 1 + k % 2);
        if (is_empty_mask(c.b)) c.b = dilate(c.a, 1);
        break;
      }
    }
    if (is_empty_mask(c.a)) c.a.at(1, 1, 1) = 1;
    if (is_empty_mask(c.b)) c.b.at(2, 2, 2) = 1;
    out.push_back(std::move(c));
  }
  return out;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("segqc_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace segqc::fixture
