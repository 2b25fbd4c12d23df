#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "segqc/error.hpp"
#include "segqc/grid.hpp"

namespace segqc {

// ---------------------------------------------------------------------------
// Overlap metrics

// Dice similarity 2|A n B| / (|A| + |B|); absent when both masks are empty.
template <std::size_t N>
std::optional<double> dsc(const Mask<N>& a, const Mask<N>& b) {
  if (a.dims() != b.dims()) throw ArgumentError("dsc: mask shapes differ");
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] != 0, y = b[i] != 0;
    na += x;
    nb += y;
    both += x && y;
  }
  if (na + nb == 0) return std::nullopt;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

// Foreground voxels with at least one face neighbour (4-connectivity in 2D,
// 6 in 3D) that is background or outside the grid.
template <std::size_t N>
Mask<N> boundary(const Mask<N>& m) {
  Mask<N> out(m.dims());
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!m[i]) continue;
    const auto at = m.coords(i);
    bool edge = false;
    for (std::size_t a = 0; a < N && !edge; ++a) {
      if (at[a] == 0 || at[a] + 1 == m.dim(a)) {
        edge = true;
        break;
      }
      auto lo = at, hi = at;
      --lo[a];
      ++hi[a];
      edge = !m(lo) || !m(hi);
    }
    out[i] = edge;
  }
  return out;
}

namespace detail {

// One pass of the Felzenszwalb-Huttenlocher lower-envelope transform over a
// strided line; `f` holds squared distances (infinity for no site).
inline void edt_line(std::vector<double>& f, std::size_t n, std::size_t offset, std::size_t stride, double spacing,
                     std::vector<double>& line, std::vector<double>& out, std::vector<std::size_t>& v,
                     std::vector<double>& z) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  line.resize(n);
  out.resize(n);
  v.resize(n);
  z.resize(n + 1);
  for (std::size_t i = 0; i < n; ++i) line[i] = f[offset + i * stride];

  auto pos = [&](std::size_t q) { return static_cast<double>(q) * spacing; };
  std::size_t k = 0;
  bool any = false;
  for (std::size_t q = 0; q < n; ++q) {
    if (line[q] == inf) continue;
    if (!any) {
      any = true;
      v[0] = q;
      z[0] = -inf;
      z[1] = inf;
      k = 0;
      continue;
    }
    auto intersect = [&](std::size_t p) {
      return ((line[q] + pos(q) * pos(q)) - (line[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
    };
    double s = intersect(v[k]);
    while (s <= z[k]) {  // z[0] is -inf, so k never underflows
      --k;
      s = intersect(v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  if (!any) return;
  std::size_t j = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[j + 1] < pos(q)) ++j;
    const double d = pos(q) - pos(v[j]);
    out[q] = d * d + line[v[j]];
  }
  for (std::size_t i = 0; i < n; ++i) f[offset + i * stride] = out[i];
}

}  // namespace detail

// Exact squared Euclidean distance (in mm) from every voxel to the nearest
// nonzero voxel of `sites`; infinity everywhere when `sites` is empty.
template <std::size_t N>
std::vector<double> squared_distance_transform(const Mask<N>& sites, const std::array<double, N>& spacing) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> f(sites.size());
  for (std::size_t i = 0; i < sites.size(); ++i) f[i] = sites[i] ? 0.0 : inf;
  std::vector<double> line, out, z;
  std::vector<std::size_t> v;
  std::size_t stride = 1;
  for (std::size_t a = 0; a < N; ++a) {
    const std::size_t n = sites.dim(a);
    const std::size_t outer = stride * n;
    for (std::size_t base = 0; base < sites.size(); base += outer) {
      for (std::size_t inner = 0; inner < stride; ++inner) {
        detail::edt_line(f, n, base + inner, stride, spacing[a], line, out, v, z);
      }
    }
    stride *= n;
  }
  return f;
}

// Relative slack on the tolerance comparison so that distances landing
// exactly on the tolerance are not lost to rounding.
inline constexpr double kToleranceSlack = 1e-9;

// Normalized surface distance: boundary voxels of each mask lying within
// `tolerance_mm` of the other mask's boundary, pooled over both boundaries.
template <std::size_t N>
std::optional<double> nsd(const Mask<N>& a, const Mask<N>& b, const std::array<double, N>& spacing,
                          double tolerance_mm) {
  if (a.dims() != b.dims()) throw ArgumentError("nsd: mask shapes differ");
  if (!(tolerance_mm >= 0.0)) throw ArgumentError("nsd: tolerance must be non-negative");
  for (double s : spacing)
    if (!(s > 0.0) || !std::isfinite(s)) throw ArgumentError("nsd: spacing must be positive");
  if (is_empty_mask(a) || is_empty_mask(b)) return std::nullopt;

  const auto ba = boundary(a), bb = boundary(b);
  const auto da = squared_distance_transform(ba, spacing);
  const auto db = squared_distance_transform(bb, spacing);
  const double limit = tolerance_mm * tolerance_mm * (1.0 + kToleranceSlack);
  std::size_t hits = 0, total = 0;
  for (std::size_t i = 0; i < ba.size(); ++i) {
    if (ba[i]) {
      ++total;
      hits += db[i] <= limit;
    }
    if (bb[i]) {
      ++total;
      hits += da[i] <= limit;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

// One voxel-equivalent in mm: the largest spacing component.
template <std::size_t N>
double default_nsd_tolerance(const std::array<double, N>& spacing) {
  return *std::max_element(spacing.begin(), spacing.end());
}

// ---------------------------------------------------------------------------
// Correlation and ranking metrics

struct MetricSample {
  double predicted = 0.0;
  double actual = 0.0;
  std::uint32_t class_id = 0;
  std::string sample_id;
};

// Pearson correlation; absent when either coordinate has zero variance.
inline std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ArgumentError("pearson: length mismatch");
  if (x.size() < 2) return std::nullopt;
  auto constant = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [&](double e) { return e == v[0]; });
  };
  if (constant(x) || constant(y)) return std::nullopt;
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// 1-based ranks, ties sharing their average rank.
inline std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) r[order[t]] = avg;
    i = j + 1;
  }
  return r;
}

inline std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ArgumentError("spearman: length mismatch");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  return pearson(rx, ry);
}

namespace detail {
inline std::pair<std::vector<double>, std::vector<double>> split(std::span<const MetricSample> s) {
  std::vector<double> p, a;
  p.reserve(s.size());
  a.reserve(s.size());
  for (const auto& m : s) {
    p.push_back(m.predicted);
    a.push_back(m.actual);
  }
  return {p, a};
}
}  // namespace detail

inline std::optional<double> lcc(std::span<const MetricSample> samples) {
  const auto [p, a] = detail::split(samples);
  return pearson(p, a);
}

inline std::optional<double> srocc(std::span<const MetricSample> samples) {
  const auto [p, a] = detail::split(samples);
  return spearman(p, a);
}

// Relevance rule for MAP@k: the k samples with the lowest actual DSC (ties
// broken by sample id, then input order). Returns a flag per group member.
inline std::vector<bool> relevant_lowest_actual(std::span<const MetricSample* const> group, std::size_t k) {
  std::vector<std::size_t> order(group.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (group[a]->actual != group[b]->actual) return group[a]->actual < group[b]->actual;
    return group[a]->sample_id < group[b]->sample_id;
  });
  std::vector<bool> rel(group.size(), false);
  for (std::size_t i = 0; i < std::min(k, order.size()); ++i) rel[order[i]] = true;
  return rel;
}

// Average precision at cutoff k for retrieving the worst labels of one group
// by ascending predicted score.
inline double average_precision_at_k(std::span<const MetricSample* const> group, std::size_t k) {
  const auto rel = relevant_lowest_actual(group, k);
  std::vector<std::size_t> order(group.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (group[a]->predicted != group[b]->predicted) return group[a]->predicted < group[b]->predicted;
    return group[a]->sample_id < group[b]->sample_id;
  });
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < std::min(k, order.size()); ++r) {
    if (!rel[order[r]]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(r + 1);
  }
  return sum / static_cast<double>(k);
}

// Mean over classes of AP@k; classes with fewer than k samples are skipped.
inline std::optional<double> map_at_k(std::span<const MetricSample> samples, std::size_t k) {
  if (k == 0) throw ArgumentError("map_at_k: k must be positive");
  std::map<std::uint32_t, std::vector<const MetricSample*>> groups;
  for (const auto& s : samples) groups[s.class_id].push_back(&s);
  double sum = 0.0;
  std::size_t used = 0;
  for (const auto& [cls, members] : groups) {
    if (members.size() < k) {
      warn("map_at_k: class " + std::to_string(cls) + " has " + std::to_string(members.size()) +
           " samples (< k = " + std::to_string(k) + "), skipped");
      continue;
    }
    sum += average_precision_at_k(members, k);
    ++used;
  }
  if (used == 0) return std::nullopt;
  return sum / static_cast<double>(used);
}

struct EvalSummary {
  std::optional<double> lcc, srocc, map5, map10;
  std::size_t n = 0;
};

inline EvalSummary evaluate(std::span<const MetricSample> samples) {
  EvalSummary s;
  s.n = samples.size();
  s.lcc = lcc(samples);
  s.srocc = srocc(samples);
  s.map5 = map_at_k(samples, 5);
  s.map10 = map_at_k(samples, 10);
  return s;
}

}  // namespace segqc
