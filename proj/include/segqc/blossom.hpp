#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <queue>
#include <vector>

#include "segqc/error.hpp"

namespace segqc {

namespace detail {

// Maximum-weight matching on a general graph by the primal-dual blossom
// method, O(n^3). Vertices are 1-based internally; weight 0 means no edge.
class WeightedBlossom {
 public:
  explicit WeightedBlossom(const std::vector<std::vector<std::int64_t>>& weight)
      : n_(weight.size()),
        g_(2 * n_ + 1, std::vector<Edge>(2 * n_ + 1)),
        lab_(2 * n_ + 1),
        match_(2 * n_ + 1),
        slack_(2 * n_ + 1),
        st_(2 * n_ + 1),
        pa_(2 * n_ + 1),
        flower_from_(2 * n_ + 1, std::vector<std::size_t>(n_ + 1)),
        s_(2 * n_ + 1),
        vis_(2 * n_ + 1),
        flower_(2 * n_ + 1) {
    for (std::size_t u = 1; u <= n_; ++u)
      for (std::size_t v = 1; v <= n_; ++v) g_[u][v] = {u, v, u == v ? 0 : weight[u - 1][v - 1]};
  }

  // mate[i] for 0-based vertex i, or n when unmatched.
  std::vector<std::size_t> solve() {
    n_x_ = n_;
    for (std::size_t u = 0; u <= n_; ++u) {
      st_[u] = u;
      flower_[u].clear();
    }
    std::int64_t w_max = 0;
    for (std::size_t u = 1; u <= n_; ++u)
      for (std::size_t v = 1; v <= n_; ++v) {
        flower_from_[u][v] = u == v ? u : 0;
        w_max = std::max(w_max, g_[u][v].w);
      }
    for (std::size_t u = 1; u <= n_; ++u) lab_[u] = w_max;
    while (matching()) {
    }
    std::vector<std::size_t> mate(n_, n_);
    for (std::size_t u = 1; u <= n_; ++u)
      if (match_[u]) mate[u - 1] = match_[u] - 1;
    return mate;
  }

 private:
  struct Edge {
    std::size_t u = 0, v = 0;
    std::int64_t w = 0;
  };
  static constexpr std::int64_t kInf = std::numeric_limits<std::int64_t>::max() / 4;

  std::int64_t dist(const Edge& e) const { return lab_[e.u] + lab_[e.v] - e.w * 2; }

  void update_slack(std::size_t u, std::size_t x) {
    if (!slack_[x] || dist(g_[u][x]) < dist(g_[slack_[x]][x])) slack_[x] = u;
  }
  void set_slack(std::size_t x) {
    slack_[x] = 0;
    for (std::size_t u = 1; u <= n_; ++u)
      if (g_[u][x].w > 0 && st_[u] != x && s_[st_[u]] == 0) update_slack(u, x);
  }
  void q_push(std::size_t x) {
    if (x <= n_) {
      q_.push(x);
      return;
    }
    for (auto y : flower_[x]) q_push(y);
  }
  void set_st(std::size_t x, std::size_t b) {
    st_[x] = b;
    if (x > n_)
      for (auto y : flower_[x]) set_st(y, b);
  }
  std::size_t get_pr(std::size_t b, std::size_t xr) {
    auto& f = flower_[b];
    const std::size_t pr = static_cast<std::size_t>(std::find(f.begin(), f.end(), xr) - f.begin());
    if (pr % 2 == 1) {
      std::reverse(f.begin() + 1, f.end());
      return f.size() - pr;
    }
    return pr;
  }
  void set_match(std::size_t u, std::size_t v) {
    match_[u] = g_[u][v].v;
    if (u <= n_) return;
    const Edge e = g_[u][v];
    const std::size_t xr = flower_from_[u][e.u], pr = get_pr(u, xr);
    for (std::size_t i = 0; i < pr; ++i) set_match(flower_[u][i], flower_[u][i ^ 1]);
    set_match(xr, v);
    std::rotate(flower_[u].begin(), flower_[u].begin() + static_cast<std::ptrdiff_t>(pr), flower_[u].end());
  }
  void augment(std::size_t u, std::size_t v) {
    for (;;) {
      const std::size_t xnv = st_[match_[u]];
      set_match(u, v);
      if (!xnv) return;
      set_match(xnv, st_[pa_[xnv]]);
      u = st_[pa_[xnv]];
      v = xnv;
    }
  }
  std::size_t get_lca(std::size_t u, std::size_t v) {
    for (++stamp_; u || v; std::swap(u, v)) {
      if (u == 0) continue;
      if (vis_[u] == stamp_) return u;
      vis_[u] = stamp_;
      u = st_[match_[u]];
      if (u) u = st_[pa_[u]];
    }
    return 0;
  }
  void add_blossom(std::size_t u, std::size_t lca, std::size_t v) {
    std::size_t b = n_ + 1;
    while (b <= n_x_ && st_[b]) ++b;
    if (b > n_x_) ++n_x_;
    lab_[b] = 0;
    s_[b] = 0;
    match_[b] = match_[lca];
    auto& f = flower_[b];
    f.clear();
    f.push_back(lca);
    for (std::size_t x = u, y; x != lca; x = st_[pa_[y]]) {
      f.push_back(x);
      f.push_back(y = st_[match_[x]]);
      q_push(y);
    }
    std::reverse(f.begin() + 1, f.end());
    for (std::size_t x = v, y; x != lca; x = st_[pa_[y]]) {
      f.push_back(x);
      f.push_back(y = st_[match_[x]]);
      q_push(y);
    }
    set_st(b, b);
    for (std::size_t x = 1; x <= n_x_; ++x) g_[b][x].w = g_[x][b].w = 0;
    for (std::size_t x = 1; x <= n_; ++x) flower_from_[b][x] = 0;
    for (auto xs : f) {
      for (std::size_t x = 1; x <= n_x_; ++x) {
        if (g_[b][x].w == 0 || dist(g_[xs][x]) < dist(g_[b][x])) {
          g_[b][x] = g_[xs][x];
          g_[x][b] = g_[x][xs];
        }
      }
      for (std::size_t x = 1; x <= n_; ++x)
        if (flower_from_[xs][x]) flower_from_[b][x] = xs;
    }
    set_slack(b);
  }
  void expand_blossom(std::size_t b) {
    for (auto x : flower_[b]) set_st(x, x);
    const std::size_t xr = flower_from_[b][g_[b][pa_[b]].u], pr = get_pr(b, xr);
    for (std::size_t i = 0; i < pr; i += 2) {
      const std::size_t xs = flower_[b][i], xns = flower_[b][i + 1];
      pa_[xs] = g_[xns][xs].u;
      s_[xs] = 1;
      s_[xns] = 0;
      slack_[xs] = 0;
      set_slack(xns);
      q_push(xns);
    }
    s_[xr] = 1;
    pa_[xr] = pa_[b];
    for (std::size_t i = pr + 1; i < flower_[b].size(); ++i) {
      const std::size_t xs = flower_[b][i];
      s_[xs] = -1;
      set_slack(xs);
    }
    st_[b] = 0;
  }
  bool on_found_edge(const Edge& e) {
    const std::size_t u = st_[e.u], v = st_[e.v];
    if (s_[v] == -1) {
      pa_[v] = e.u;
      s_[v] = 1;
      const std::size_t nu = st_[match_[v]];
      slack_[v] = slack_[nu] = 0;
      s_[nu] = 0;
      q_push(nu);
    } else if (s_[v] == 0) {
      const std::size_t lca = get_lca(u, v);
      if (!lca) {
        augment(u, v);
        augment(v, u);
        return true;
      }
      add_blossom(u, lca, v);
    }
    return false;
  }
  bool matching() {
    std::fill(s_.begin() + 1, s_.begin() + static_cast<std::ptrdiff_t>(n_x_) + 1, -1);
    std::fill(slack_.begin() + 1, slack_.begin() + static_cast<std::ptrdiff_t>(n_x_) + 1, 0);
    q_ = {};
    for (std::size_t x = 1; x <= n_x_; ++x) {
      if (st_[x] == x && !match_[x]) {
        pa_[x] = 0;
        s_[x] = 0;
        q_push(x);
      }
    }
    if (q_.empty()) return false;
    for (;;) {
      while (!q_.empty()) {
        const std::size_t u = q_.front();
        q_.pop();
        if (s_[st_[u]] == 1) continue;
        for (std::size_t v = 1; v <= n_; ++v) {
          if (g_[u][v].w > 0 && st_[u] != st_[v]) {
            if (dist(g_[u][v]) == 0) {
              if (on_found_edge(g_[u][v])) return true;
            } else {
              update_slack(u, st_[v]);
            }
          }
        }
      }
      std::int64_t d = kInf;
      for (std::size_t b = n_ + 1; b <= n_x_; ++b)
        if (st_[b] == b && s_[b] == 1) d = std::min(d, lab_[b] / 2);
      for (std::size_t x = 1; x <= n_x_; ++x) {
        if (st_[x] == x && slack_[x]) {
          if (s_[x] == -1) {
            d = std::min(d, dist(g_[slack_[x]][x]));
          } else if (s_[x] == 0) {
            d = std::min(d, dist(g_[slack_[x]][x]) / 2);
          }
        }
      }
      for (std::size_t u = 1; u <= n_; ++u) {
        if (s_[st_[u]] == 0) {
          if (lab_[u] <= d) return false;
          lab_[u] -= d;
        } else if (s_[st_[u]] == 1) {
          lab_[u] += d;
        }
      }
      for (std::size_t b = n_ + 1; b <= n_x_; ++b) {
        if (st_[b] == b) {
          if (s_[st_[b]] == 0) {
            lab_[b] += d * 2;
          } else if (s_[st_[b]] == 1) {
            lab_[b] -= d * 2;
          }
        }
      }
      q_ = {};
      for (std::size_t x = 1; x <= n_x_; ++x) {
        if (st_[x] == x && slack_[x] && st_[slack_[x]] != x && dist(g_[slack_[x]][x]) == 0) {
          if (on_found_edge(g_[slack_[x]][x])) return true;
        }
      }
      for (std::size_t b = n_ + 1; b <= n_x_; ++b)
        if (st_[b] == b && s_[b] == 1 && lab_[b] == 0) expand_blossom(b);
    }
  }

  std::size_t n_, n_x_ = 0;
  std::vector<std::vector<Edge>> g_;
  std::vector<std::int64_t> lab_;
  std::vector<std::size_t> match_, slack_, st_, pa_;
  std::vector<std::vector<std::size_t>> flower_from_;
  std::vector<int> s_;
  std::vector<std::uint64_t> vis_;
  std::uint64_t stamp_ = 0;
  std::vector<std::vector<std::size_t>> flower_;
  std::queue<std::size_t> q_;
};

}  // namespace detail

// Maximum-weight perfect matching of a complete graph on an even number of
// vertices with integer weights (symmetric; diagonal ignored). Returns the
// partner of every vertex.
inline std::vector<std::size_t> max_weight_perfect_matching(const std::vector<std::vector<std::int64_t>>& weight) {
  const std::size_t n = weight.size();
  if (n % 2) throw ArgumentError("perfect matching needs an even vertex count");
  if (n == 0) return {};
  std::int64_t lo = std::numeric_limits<std::int64_t>::max(), hi = std::numeric_limits<std::int64_t>::min();
  for (std::size_t i = 0; i < n; ++i) {
    if (weight[i].size() != n) throw ArgumentError("weight matrix must be square");
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      lo = std::min(lo, weight[i][j]);
      hi = std::max(hi, weight[i][j]);
    }
  }
  // Shift so every edge is positive and any larger matching outweighs any
  // smaller one; the maximum-weight matching is then perfect.
  const std::int64_t range = hi - lo;
  const std::int64_t shift = 1 - lo + static_cast<std::int64_t>(n) * (range + 1);
  std::vector<std::vector<std::int64_t>> shifted(n, std::vector<std::int64_t>(n, 0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) shifted[i][j] = weight[i][j] + shift;
  auto mate = detail::WeightedBlossom(shifted).solve();
  for (auto m : mate)
    if (m >= n) throw std::logic_error("blossom matching left a vertex unmatched");
  return mate;
}

}  // namespace segqc
