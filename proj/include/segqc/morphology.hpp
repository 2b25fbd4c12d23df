#pragma once

#include <cstdint>
#include <queue>
#include <vector>

#include "segqc/grid.hpp"

namespace segqc {

namespace detail {

// 1D min/max filter of width 3 along `axis`; out-of-grid voxels count as
// background.
template <std::size_t N>
Mask<N> filter3(const Mask<N>& in, std::size_t axis, bool erode) {
  Mask<N> out(in.dims());
  std::size_t stride = 1;
  for (std::size_t a = 0; a < axis; ++a) stride *= in.dim(a);
  const std::size_t n = in.dim(axis);
  for (std::size_t i = 0; i < in.size(); ++i) {
    const std::size_t c = (i / stride) % n;
    const std::uint8_t self = in[i] != 0;
    const std::uint8_t lo = c > 0 ? in[i - stride] != 0 : 0;
    const std::uint8_t hi = c + 1 < n ? in[i + stride] != 0 : 0;
    out[i] = erode ? (self & lo & hi) : (self | lo | hi);
  }
  return out;
}

}  // namespace detail

// Binary erosion/dilation with the full 3^N box; the box is separable, so
// each iteration is N one-dimensional passes.
template <std::size_t N>
Mask<N> erode(Mask<N> m, std::size_t iterations = 1) {
  for (std::size_t it = 0; it < iterations; ++it)
    for (std::size_t a = 0; a < N; ++a) m = detail::filter3(m, a, true);
  return m;
}

template <std::size_t N>
Mask<N> dilate(Mask<N> m, std::size_t iterations = 1) {
  for (std::size_t it = 0; it < iterations; ++it)
    for (std::size_t a = 0; a < N; ++a) m = detail::filter3(m, a, false);
  return m;
}

// Face-connected (4 in 2D, 6 in 3D) component labels, 1-based in scan order;
// 0 marks background.
template <std::size_t N>
std::pair<Grid<std::uint32_t, N>, std::uint32_t> connected_components(const Mask<N>& m) {
  Grid<std::uint32_t, N> labels(m.dims(), 0);
  std::uint32_t next = 0;
  std::vector<std::size_t> stack;
  for (std::size_t seed = 0; seed < m.size(); ++seed) {
    if (!m[seed] || labels[seed]) continue;
    ++next;
    labels[seed] = next;
    stack.push_back(seed);
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      const auto at = m.coords(i);
      for (std::size_t a = 0; a < N; ++a) {
        for (int dir : {-1, 1}) {
          if ((dir < 0 && at[a] == 0) || (dir > 0 && at[a] + 1 == m.dim(a))) continue;
          auto nb = at;
          nb[a] = dir < 0 ? nb[a] - 1 : nb[a] + 1;
          const std::size_t j = m.index(nb);
          if (m[j] && !labels[j]) {
            labels[j] = next;
            stack.push_back(j);
          }
        }
      }
    }
  }
  return {std::move(labels), next};
}

// Voxels whose value differs from at least one in-grid face neighbour: the
// inner and outer boundary layers together.
template <std::size_t N>
Mask<N> boundary_band(const Mask<N>& m) {
  Mask<N> out(m.dims());
  for (std::size_t i = 0; i < m.size(); ++i) {
    const auto at = m.coords(i);
    const bool v = m[i] != 0;
    for (std::size_t a = 0; a < N && !out[i]; ++a) {
      if (at[a] > 0) {
        auto nb = at;
        --nb[a];
        if ((m(nb) != 0) != v) out[i] = 1;
      }
      if (at[a] + 1 < m.dim(a)) {
        auto nb = at;
        ++nb[a];
        if ((m(nb) != 0) != v) out[i] = 1;
      }
    }
  }
  return out;
}

}  // namespace segqc
