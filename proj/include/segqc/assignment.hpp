#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <queue>
#include <span>
#include <utility>
#include <vector>

#include "segqc/blossom.hpp"
#include "segqc/error.hpp"

namespace segqc {

// Row-major dense matrix of doubles.
struct Matrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  friend bool operator==(const Matrix&, const Matrix&) = default;
};

struct Assignment {
  std::vector<std::size_t> row_to_col;
  double cost = 0.0;
};

// Dense linear assignment by Jonker-Volgenant: column reduction, reduction
// transfer, two rounds of augmenting row reduction, then shortest augmenting
// paths for the rows still free. Exact minimum-cost permutation.
inline Assignment solve_lap(const Matrix& cost) {
  if (cost.rows != cost.cols) throw ArgumentError("solve_lap: cost matrix must be square");
  for (double c : cost.data)
    if (!std::isfinite(c)) throw ArgumentError("solve_lap: cost entries must be finite");
  const std::size_t n = cost.rows;
  Assignment out;
  if (n == 0) return out;
  if (n == 1) {
    out.row_to_col = {0};
    out.cost = cost(0, 0);
    return out;
  }

  constexpr double big = std::numeric_limits<double>::max();
  constexpr std::ptrdiff_t none = -1;
  std::vector<std::ptrdiff_t> rowsol(n, none), colsol(n, none);
  std::vector<double> v(n);
  std::vector<std::size_t> matches(n, 0), free_rows(n);

  // Column reduction, last column first.
  for (std::size_t jj = n; jj-- > 0;) {
    std::size_t imin = 0;
    double mn = cost(0, jj);
    for (std::size_t i = 1; i < n; ++i) {
      if (cost(i, jj) < mn) {
        mn = cost(i, jj);
        imin = i;
      }
    }
    v[jj] = mn;
    if (++matches[imin] == 1) {
      rowsol[imin] = static_cast<std::ptrdiff_t>(jj);
      colsol[jj] = static_cast<std::ptrdiff_t>(imin);
    } else if (v[jj] < v[static_cast<std::size_t>(rowsol[imin])]) {
      const auto j1 = static_cast<std::size_t>(rowsol[imin]);
      rowsol[imin] = static_cast<std::ptrdiff_t>(jj);
      colsol[jj] = static_cast<std::ptrdiff_t>(imin);
      colsol[j1] = none;
    } else {
      colsol[jj] = none;
    }
  }

  // Reduction transfer from singly-assigned rows.
  std::size_t numfree = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (matches[i] == 0) {
      free_rows[numfree++] = i;
    } else if (matches[i] == 1) {
      const auto j1 = static_cast<std::size_t>(rowsol[i]);
      double mn = big;
      for (std::size_t j = 0; j < n; ++j)
        if (j != j1) mn = std::min(mn, cost(i, j) - v[j]);
      v[j1] -= mn;
    }
  }

  // Augmenting row reduction. Rows still free when the step budget runs out
  // are left to the shortest-path phase.
  for (int round = 0; round < 2; ++round) {
    std::size_t k = 0, steps = 0;
    const std::size_t prvnumfree = numfree;
    numfree = 0;
    while (k < prvnumfree) {
      if (++steps > n * n) {
        while (k < prvnumfree) free_rows[numfree++] = free_rows[k++];
        break;
      }
      const std::size_t i = free_rows[k++];
      double umin = cost(i, 0) - v[0];
      std::size_t j1 = 0, j2 = 0;
      double usubmin = big;
      for (std::size_t j = 1; j < n; ++j) {
        const double h = cost(i, j) - v[j];
        if (h < usubmin) {
          if (h >= umin) {
            usubmin = h;
            j2 = j;
          } else {
            usubmin = umin;
            umin = h;
            j2 = j1;
            j1 = j;
          }
        }
      }
      std::ptrdiff_t i0 = colsol[j1];
      // A reduction lost to rounding counts as a tie.
      const bool strict = umin < usubmin && v[j1] - (usubmin - umin) < v[j1];
      if (strict) {
        v[j1] -= usubmin - umin;
      } else if (i0 != none) {
        j1 = j2;
        i0 = colsol[j2];
      }
      rowsol[i] = static_cast<std::ptrdiff_t>(j1);
      colsol[j1] = static_cast<std::ptrdiff_t>(i);
      if (i0 != none) {
        rowsol[static_cast<std::size_t>(i0)] = none;
        if (strict) {
          free_rows[--k] = static_cast<std::size_t>(i0);
        } else {
          free_rows[numfree++] = static_cast<std::size_t>(i0);
        }
      }
    }
  }

  // Shortest augmenting paths (Dijkstra over reduced costs) for free rows.
  std::vector<double> d(n);
  std::vector<std::size_t> pred(n), collist(n);
  for (std::size_t f = 0; f < numfree; ++f) {
    const std::size_t freerow = free_rows[f];
    for (std::size_t j = 0; j < n; ++j) {
      d[j] = cost(freerow, j) - v[j];
      pred[j] = freerow;
      collist[j] = j;
    }
    std::size_t low = 0, up = 0, last = 0, endofpath = 0;
    double mn = 0;
    bool found = false;
    do {
      if (up == low) {
        // Collect the columns at the current minimum distance.
        last = low;
        mn = d[collist[up++]];
        for (std::size_t k = up; k < n; ++k) {
          const std::size_t j = collist[k];
          const double h = d[j];
          if (h <= mn) {
            if (h < mn) {
              up = low;
              mn = h;
            }
            collist[k] = collist[up];
            collist[up++] = j;
          }
        }
        for (std::size_t k = low; k < up; ++k) {
          if (colsol[collist[k]] == none) {
            endofpath = collist[k];
            found = true;
            break;
          }
        }
      }
      if (!found) {
        const std::size_t j1 = collist[low++];
        const auto i = static_cast<std::size_t>(colsol[j1]);
        const double h = cost(i, j1) - v[j1] - mn;
        for (std::size_t k = up; k < n; ++k) {
          const std::size_t j = collist[k];
          const double v2 = cost(i, j) - v[j] - h;
          if (v2 < d[j]) {
            pred[j] = i;
            if (v2 == mn) {
              if (colsol[j] == none) {
                endofpath = j;
                found = true;
                break;
              }
              collist[k] = collist[up];
              collist[up++] = j;
            }
            d[j] = v2;
          }
        }
      }
    } while (!found);

    // Columns scanned before the final minimum get their prices updated.
    for (std::size_t k = 0; k < last; ++k) {
      const std::size_t j1 = collist[k];
      v[j1] += d[j1] - mn;
    }
    // Flip the alternating path.
    std::size_t i;
    do {
      i = pred[endofpath];
      colsol[endofpath] = static_cast<std::ptrdiff_t>(i);
      const std::size_t j1 = endofpath;
      endofpath = static_cast<std::size_t>(rowsol[i]);
      rowsol[i] = static_cast<std::ptrdiff_t>(j1);
    } while (i != freerow);
  }

  out.row_to_col.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.row_to_col[i] = static_cast<std::size_t>(rowsol[i]);
    out.cost += cost(i, out.row_to_col[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimal pairs over a batch

// Diagonal sentinel of the pairing cost matrix; larger than any -cosine gap.
inline constexpr double kSelfPairSentinel = 1e6;

struct PairingResult {
  Matrix similarity;  // cosine similarities, unit diagonal
  Matrix cost;        // -similarity with the sentinel on the diagonal
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // i < j
  std::optional<std::size_t> dropped;                      // odd batches only
  std::size_t nodes_explored = 0;
  bool proven_optimal = true;  // settled by the assignment search alone
  bool used_blossom = false;

  double total_similarity() const {
    double s = 0;
    for (auto [i, j] : pairs) s += similarity(i, j);
    return s;
  }
};

struct PairingOptions {
  // Assignment subproblems tried before handing over to the blossom solver.
  std::size_t max_nodes = 16;
};

// Similarities are quantized to this many steps per unit for the blossom
// fallback.
inline constexpr double kBlossomScale = 1073741824.0;

namespace detail {

using Edge = std::pair<std::size_t, std::size_t>;

inline std::vector<std::vector<std::size_t>> permutation_cycles(const std::vector<std::size_t>& perm) {
  std::vector<std::vector<std::size_t>> cycles;
  std::vector<bool> seen(perm.size(), false);
  for (std::size_t s = 0; s < perm.size(); ++s) {
    if (seen[s]) continue;
    std::vector<std::size_t> c;
    for (std::size_t i = s; !seen[i]; i = perm[i]) {
      seen[i] = true;
      c.push_back(i);
    }
    cycles.push_back(std::move(c));
  }
  return cycles;
}

// Matching on m (even) vertices with symmetric weights `w` (cost to
// minimize). Each solved subproblem is an assignment whose permutation is a
// cycle cover; even cycles split into two alternating matchings, the
// cheaper costing at most half the cycle, so a cover of even cycles yields
// a matching no worse than its bound. Odd cycles are cut by branching on one
// of their edges (pair forced in / pair forbidden).
class MatchingSearch {
 public:
  MatchingSearch(const Matrix& w, std::size_t max_nodes) : w_(w), m_(w.rows), max_nodes_(max_nodes) {}

  std::vector<Edge> run(std::size_t& nodes, bool& proven) {
    struct Node {
      double bound;
      std::vector<std::size_t> perm;
      std::vector<Edge> forced, forbidden;
      std::size_t order;
    };
    auto worse = [](const Node& a, const Node& b) {
      return a.bound != b.bound ? a.bound > b.bound : a.order > b.order;
    };
    std::priority_queue<Node, std::vector<Node>, decltype(worse)> open(worse);
    std::size_t counter = 0;
    auto push = [&](std::vector<Edge> forced, std::vector<Edge> forbidden) {
      const Matrix c = constrained_cost(forced, forbidden);
      auto lap = solve_lap(c);
      ++nodes;
      if (lap.cost >= kSelfPairSentinel / 2) return;  // infeasible under constraints
      open.push({lap.cost, std::move(lap.row_to_col), std::move(forced), std::move(forbidden), counter++});
    };

    nodes = 0;
    proven = true;
    push({}, {});
    std::vector<Edge> best;
    double best_cost = std::numeric_limits<double>::infinity();
    while (!open.empty()) {
      Node node = open.top();
      open.pop();
      if (node.bound / 2 >= best_cost - 1e-12 * (1 + std::fabs(best_cost))) break;

      const auto cycles = permutation_cycles(node.perm);
      auto [candidate, odd] = repair(cycles);
      const double cc = matching_cost(candidate);
      if (cc < best_cost) {
        best_cost = cc;
        best = std::move(candidate);
      }
      // Every cycle even: the extracted matching meets this (lowest) bound.
      if (!odd || best_cost <= node.bound / 2 + 1e-12 * (1 + std::fabs(best_cost))) break;
      if (nodes + 2 > max_nodes_) {
        proven = false;
        break;
      }
      // Branch on the first edge of the shortest odd cycle.
      const std::vector<std::size_t>* cyc = nullptr;
      for (const auto& c : cycles)
        if (c.size() % 2 == 1 && (!cyc || c.size() < cyc->size())) cyc = &c;
      const Edge e{(*cyc)[0], (*cyc)[1]};
      auto forced = node.forced;
      forced.push_back(e);
      auto forbidden = node.forbidden;
      forbidden.push_back(e);
      push(std::move(forced), node.forbidden);
      push(node.forced, std::move(forbidden));
    }
    return best;
  }

 private:
  Matrix constrained_cost(const std::vector<Edge>& forced, const std::vector<Edge>& forbidden) const {
    Matrix c = w_;
    for (std::size_t i = 0; i < m_; ++i) c(i, i) = kSelfPairSentinel;
    for (auto [a, b] : forbidden) c(a, b) = c(b, a) = kSelfPairSentinel;
    for (auto [a, b] : forced) {
      for (std::size_t k = 0; k < m_; ++k) {
        if (k != b) c(a, k) = c(k, a) = kSelfPairSentinel;
        if (k != a) c(b, k) = c(k, b) = kSelfPairSentinel;
      }
      c(a, b) = w_(a, b);
      c(b, a) = w_(b, a);
    }
    return c;
  }

  double matching_cost(const std::vector<Edge>& mt) const {
    double s = 0;
    for (auto [a, b] : mt) s += w_(a, b);
    return s;
  }

  // Matching from a cycle cover: alternating halves of even cycles, the
  // remaining vertices of odd cycles paired greedily by cheapest edge.
  std::pair<std::vector<Edge>, bool> repair(const std::vector<std::vector<std::size_t>>& cycles) const {
    std::vector<Edge> mt;
    std::vector<std::size_t> rest;
    bool odd = false;
    for (const auto& c : cycles) {
      if (c.size() % 2 == 1) {
        odd = true;
        rest.insert(rest.end(), c.begin(), c.end());
        continue;
      }
      std::vector<Edge> h1, h2;
      for (std::size_t t = 0; t < c.size(); t += 2) {
        h1.emplace_back(c[t], c[t + 1]);
        h2.emplace_back(c[t + 1], c[(t + 2) % c.size()]);
      }
      const auto& pick = matching_cost(h2) < matching_cost(h1) ? h2 : h1;
      mt.insert(mt.end(), pick.begin(), pick.end());
    }
    std::sort(rest.begin(), rest.end());
    std::vector<std::pair<double, Edge>> edges;
    for (std::size_t x = 0; x < rest.size(); ++x)
      for (std::size_t y = x + 1; y < rest.size(); ++y) edges.push_back({w_(rest[x], rest[y]), {rest[x], rest[y]}});
    std::stable_sort(edges.begin(), edges.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<bool> used(m_, false);
    for (const auto& [c, e] : edges) {
      if (used[e.first] || used[e.second]) continue;
      used[e.first] = used[e.second] = true;
      mt.push_back(e);
    }
    return {mt, odd};
  }

  const Matrix& w_;
  std::size_t m_;
  std::size_t max_nodes_;
};

}  // namespace detail

// Pairs batch samples by maximum total cosine similarity: H is the cosine
// matrix, H' = -H + sentinel * I, and the assignment solver on H' drives a
// search for the best perfect matching, finished by a blossom matching when
// the search budget runs out. With odd N, a zero-cost dummy
// vertex absorbs the one sample left out (reported in `dropped`).
template <typename Vec>
PairingResult build_pairs(std::span<const Vec> embeddings, const PairingOptions& options = {}) {
  const std::size_t n = embeddings.size();
  if (n < 2) throw ArgumentError("build_pairs: need at least two embeddings");
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (auto x : embeddings[i]) s += static_cast<double>(x) * static_cast<double>(x);
    if (!(s > 0)) throw ArgumentError("build_pairs: embedding " + std::to_string(i) + " is a zero vector");
    norms[i] = std::sqrt(s);
  }
  const std::size_t dim = std::size(embeddings[0]);
  for (const auto& e : embeddings)
    if (std::size(e) != dim) throw ArgumentError("build_pairs: embedding dimensions differ");

  PairingResult r;
  r.similarity = Matrix(n, n, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double dot = 0;
      for (std::size_t k = 0; k < dim; ++k) {
        dot += static_cast<double>(embeddings[i][k]) * static_cast<double>(embeddings[j][k]);
      }
      r.similarity(i, j) = r.similarity(j, i) = dot / (norms[i] * norms[j]);
    }
  }
  r.cost = Matrix(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) r.cost(i, j) = i == j ? kSelfPairSentinel : -r.similarity(i, j);

  const std::size_t m = n + (n % 2);
  Matrix w(m, m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) w(i, j) = -r.similarity(i, j);

  detail::MatchingSearch search(w, options.max_nodes);
  auto edges = search.run(r.nodes_explored, r.proven_optimal);
  if (!r.proven_optimal) {
    // Heavily tied batches (many equal class vectors) defeat the cycle-cover
    // bound; solve the matching directly.
    std::vector<std::vector<std::int64_t>> q(m, std::vector<std::int64_t>(m, 0));
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j)
        if (i != j) q[i][j] = std::llround(-w(i, j) * kBlossomScale);
    const auto mate = max_weight_perfect_matching(q);
    std::vector<detail::Edge> alt;
    for (std::size_t i = 0; i < m; ++i)
      if (mate[i] > i) alt.emplace_back(i, mate[i]);
    auto cost_of = [&](const std::vector<detail::Edge>& es) {
      double c = 0;
      for (auto [a, b] : es) c += w(a, b);
      return c;
    };
    if (cost_of(alt) <= cost_of(edges)) {
      edges = std::move(alt);
      r.used_blossom = true;
    }
  }
  for (auto [a, b] : edges) {
    if (a > b) std::swap(a, b);
    if (b == n) {  // dummy partner
      r.dropped = a;
      continue;
    }
    r.pairs.emplace_back(a, b);
  }
  std::sort(r.pairs.begin(), r.pairs.end());
  return r;
}

template <typename Vec>
PairingResult build_pairs(const std::vector<Vec>& embeddings, const PairingOptions& options = {}) {
  return build_pairs(std::span<const Vec>(embeddings), options);
}

}  // namespace segqc
