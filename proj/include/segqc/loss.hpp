#pragma once

#include <algorithm>
#include <span>
#include <utility>
#include <vector>

#include "segqc/error.hpp"

namespace segqc {

struct LossConfig {
  double lambda = 1.0;     // ranking-term weight
  double margin_xi = 0.05;  // hinge margin, strictly positive

  void validate() const {
    if (!(lambda >= 0)) throw ArgumentError("loss lambda must be non-negative");
    if (!(margin_xi > 0)) throw ArgumentError("ranking margin must be positive");
  }
};

// Pairwise hinge on a predicted/actual pair: penalizes predicted differences
// whose sign disagrees with the actual difference, up to the margin.
inline double rank_loss(double pred_i, double pred_j, double actual_i, double actual_j, double xi) {
  return std::max(0.0, (pred_i - pred_j) * (actual_j - actual_i) + xi);
}

struct LossBreakdown {
  double total = 0.0;
  double mse = 0.0;   // mean squared error over all N samples
  double rank = 0.0;  // mean hinge over pairs (before lambda)
  std::size_t n_pairs = 0;
};

using IndexPair = std::pair<std::size_t, std::size_t>;

namespace detail {
inline void check_batch(std::span<const double> pred, std::span<const double> target,
                        std::span<const IndexPair> pairs) {
  if (pred.size() != target.size()) throw ArgumentError("batch_loss: predictions and targets differ in length");
  if (pred.empty()) throw ArgumentError("batch_loss: empty batch");
  std::vector<bool> seen(pred.size(), false);
  for (auto [i, j] : pairs) {
    if (i >= pred.size() || j >= pred.size() || i == j) {
      throw ArgumentError("batch_loss: pairing does not match the batch");
    }
    if (seen[i] || seen[j]) throw ArgumentError("batch_loss: index repeated across pairs");
    seen[i] = seen[j] = true;
  }
}
}  // namespace detail

// MSE over all samples plus lambda times the mean pair hinge. Samples outside
// every pair (odd batches) contribute to the MSE only.
inline LossBreakdown batch_loss(std::span<const double> pred, std::span<const double> target,
                                std::span<const IndexPair> pairs, const LossConfig& cfg) {
  cfg.validate();
  detail::check_batch(pred, target, pairs);
  LossBreakdown b;
  for (std::size_t i = 0; i < pred.size(); ++i) b.mse += (pred[i] - target[i]) * (pred[i] - target[i]);
  b.mse /= static_cast<double>(pred.size());
  b.n_pairs = pairs.size();
  if (!pairs.empty()) {
    for (auto [i, j] : pairs) b.rank += rank_loss(pred[i], pred[j], target[i], target[j], cfg.margin_xi);
    b.rank /= static_cast<double>(pairs.size());
  }
  b.total = b.mse + cfg.lambda * b.rank;
  return b;
}

// dL/dpred for batch_loss; the hinge uses the zero subgradient at its kink.
inline std::vector<double> batch_loss_gradient(std::span<const double> pred, std::span<const double> target,
                                               std::span<const IndexPair> pairs, const LossConfig& cfg) {
  detail::check_batch(pred, target, pairs);
  std::vector<double> g(pred.size());
  const double n = static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) g[i] = 2.0 * (pred[i] - target[i]) / n;
  if (!pairs.empty() && cfg.lambda != 0) {
    const double w = cfg.lambda / static_cast<double>(pairs.size());
    for (auto [i, j] : pairs) {
      const double gap = target[j] - target[i];
      if ((pred[i] - pred[j]) * gap + cfg.margin_xi > 0) {
        g[i] += w * gap;
        g[j] -= w * gap;
      }
    }
  }
  return g;
}

}  // namespace segqc
