#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "segqc/binary_io.hpp"
#include "segqc/error.hpp"
#include "segqc/random.hpp"

namespace segqc {

// Per-voxel class probabilities, class-minor: data[voxel * classes + c].
// Class 0 is background.
struct ProbabilityVolume {
  std::array<std::size_t, 3> dims{0, 0, 0};
  std::size_t classes = 0;
  std::vector<float> data;

  std::size_t voxels() const { return dims[0] * dims[1] * dims[2]; }
  std::span<const float> at(std::size_t voxel) const {
    return std::span<const float>(data).subspan(voxel * classes, classes);
  }
};

inline constexpr double kProbabilitySumTolerance = 1e-4;

inline void validate(const ProbabilityVolume& p) {
  if (p.classes < 2) throw DataError("probability volume needs at least two classes");
  if (p.data.size() != p.voxels() * p.classes) throw DataError("probability volume size does not match its shape");
  for (std::size_t v = 0; v < p.voxels(); ++v) {
    double sum = 0;
    for (float x : p.at(v)) {
      if (!(x >= 0)) throw DataError("negative or NaN probability at voxel " + std::to_string(v));
      sum += x;
    }
    if (std::fabs(sum - 1.0) > kProbabilitySumTolerance) {
      throw DataError("probabilities at voxel " + std::to_string(v) + " sum to " + std::to_string(sum));
    }
  }
}

inline bool is_foreground_candidate(std::span<const float> p) {
  for (std::size_t c = 1; c < p.size(); ++c)
    if (p[c] >= p[0]) return true;
  return false;
}

// Mean Shannon entropy (natural log) over voxels where some foreground class
// is at least as likely as background; 0 when there are none.
inline double entropy_score(const ProbabilityVolume& prob) {
  validate(prob);
  double sum = 0;
  std::size_t counted = 0;
  for (std::size_t v = 0; v < prob.voxels(); ++v) {
    const auto p = prob.at(v);
    if (!is_foreground_candidate(p)) continue;
    double h = 0;
    for (float x : p)
      if (x > 0) h -= static_cast<double>(x) * std::log(static_cast<double>(x));
    sum += h;
    ++counted;
  }
  return counted ? sum / static_cast<double>(counted) : 0.0;
}

// Mean over voxels and classes of the across-sample population variance.
inline double mc_variance_score(std::span<const ProbabilityVolume> probs) {
  if (probs.size() < 2) throw ArgumentError("variance score needs at least two probability volumes");
  for (const auto& p : probs) {
    validate(p);
    if (p.dims != probs[0].dims || p.classes != probs[0].classes) {
      throw ArgumentError("probability volumes differ in shape");
    }
  }
  const double k = static_cast<double>(probs.size());
  double total = 0;
  for (std::size_t i = 0; i < probs[0].data.size(); ++i) {
    double mean = 0;
    for (const auto& p : probs) mean += p.data[i];
    mean /= k;
    double var = 0;
    for (const auto& p : probs) var += (p.data[i] - mean) * (p.data[i] - mean);
    total += var / k;
  }
  return total / static_cast<double>(probs[0].data.size());
}

// File layout: JSON header {"dims", "classes", "samples", "dtype": "float32",
// "payload"} next to a raw little-endian payload of `samples` volumes.
struct ProbabilityFile {
  std::vector<ProbabilityVolume> samples;
  std::uint64_t bytes_read = 0;
};

inline void write_probability_volumes(const std::filesystem::path& header, std::span<const ProbabilityVolume> samples) {
  if (samples.empty()) throw ArgumentError("no probability volumes to write");
  std::vector<std::uint8_t> payload;
  for (const auto& p : samples) {
    if (p.dims != samples[0].dims || p.classes != samples[0].classes) throw ArgumentError("samples differ in shape");
    for (float x : p.data) io::append_le(payload, x);
  }
  const auto payload_name = header.stem().string() + ".f32";
  io::write_bytes(header.parent_path() / payload_name, payload);
  nlohmann::json j{{"dims", samples[0].dims},
                   {"classes", samples[0].classes},
                   {"samples", samples.size()},
                   {"dtype", "float32"},
                   {"payload", payload_name}};
  io::write_text(header, j.dump(2) + "\n");
}

inline ProbabilityFile read_probability_volumes(const std::filesystem::path& header) {
  ProbabilityFile out;
  try {
    const auto text = io::read_text(header);
    out.bytes_read += text.size();
    const auto j = nlohmann::json::parse(text);
    if (j.value("dtype", "float32") != "float32") throw DataError("probability payload must be float32");
    const auto dims = j.at("dims").get<std::array<std::size_t, 3>>();
    const auto classes = j.at("classes").get<std::size_t>();
    const auto k = j.value("samples", std::size_t{1});
    const auto payload = io::read_bytes(header.parent_path() / j.at("payload").get<std::string>());
    out.bytes_read += payload.size();
    const std::size_t per = dims[0] * dims[1] * dims[2] * classes;
    if (payload.size() != k * per * sizeof(float)) throw DataError("probability payload size does not match header");
    for (std::size_t s = 0; s < k; ++s) {
      ProbabilityVolume p{dims, classes, std::vector<float>(per)};
      for (std::size_t i = 0; i < per; ++i) p.data[i] = io::load<float>(payload.data() + (s * per + i) * sizeof(float));
      validate(p);
      out.samples.push_back(std::move(p));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("probability header '" + header.string() + "': " + e.what());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Candidate pools and selection

enum class SelectionMethod { predicted, entropy, mc_variance, random };

inline const char* to_string(SelectionMethod m) {
  switch (m) {
    case SelectionMethod::predicted: return "predicted";
    case SelectionMethod::entropy: return "entropy";
    case SelectionMethod::mc_variance: return "mc_variance";
    case SelectionMethod::random: return "random";
  }
  return "?";
}

inline SelectionMethod parse_selection_method(const std::string& s) {
  for (auto m : {SelectionMethod::predicted, SelectionMethod::entropy, SelectionMethod::mc_variance, SelectionMethod::random})
    if (s == to_string(m)) return m;
  throw ArgumentError("unknown selection method '" + s + "'");
}

// predicted scores are estimated quality (higher is better); entropy and
// mc_variance scores are uncertainty (higher is worse).
inline bool higher_is_better(SelectionMethod m) { return m == SelectionMethod::predicted; }

struct PoolRecord {
  std::string volume_id;
  std::map<SelectionMethod, double> scores;  // a missing key marks an absent score
  std::map<std::uint32_t, double> class_scores;
  std::optional<double> true_dsc;
};

struct CandidatePool {
  std::vector<PoolRecord> records;
};

namespace detail {

// Ids ordered best quality first; ties by id.
inline std::vector<const PoolRecord*> quality_order(const CandidatePool& pool, SelectionMethod m, std::uint64_t seed) {
  std::vector<const PoolRecord*> order;
  for (const auto& r : pool.records) order.push_back(&r);
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->volume_id < b->volume_id; });
  if (m == SelectionMethod::random) {
    Rng rng(derive_seed(seed, 0x73656cULL));
    shuffle(order.begin(), order.end(), rng);
    return order;
  }
  for (const auto* r : order) {
    if (!r->scores.count(m)) throw ArgumentError("record '" + r->volume_id + "' has no " + to_string(m) + " score");
  }
  const bool better_high = higher_is_better(m);
  std::stable_sort(order.begin(), order.end(), [&](auto* a, auto* b) {
    const double x = a->scores.at(m), y = b->scores.at(m);
    return better_high ? x > y : x < y;
  });
  return order;
}

inline std::vector<std::string> take(std::vector<const PoolRecord*> order, std::size_t n, bool reverse_scores,
                                     SelectionMethod m) {
  if (n > order.size()) throw ArgumentError("budget exceeds pool size");
  if (reverse_scores && m != SelectionMethod::random) {
    // Worst first, keeping the id tiebreak ascending within equal scores.
    std::stable_sort(order.begin(), order.end(), [&](auto* a, auto* b) {
      const double x = a->scores.at(m), y = b->scores.at(m);
      return higher_is_better(m) ? x < y : x > y;
    });
  }
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(order[i]->volume_id);
  return out;
}

inline std::vector<const PoolRecord*> id_sorted(const CandidatePool& pool) {
  std::vector<const PoolRecord*> order;
  for (const auto& r : pool.records) order.push_back(&r);
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->volume_id < b->volume_id; });
  return order;
}

}  // namespace detail

// The n cases predicted worst (for correction).
inline std::vector<std::string> select_active(const CandidatePool& pool, SelectionMethod m, std::size_t n,
                                              std::uint64_t seed = 0) {
  if (m == SelectionMethod::random) return detail::take(detail::quality_order(pool, m, seed), n, false, m);
  for (const auto& r : pool.records)
    if (!r.scores.count(m)) throw ArgumentError("record '" + r.volume_id + "' has no " + to_string(m) + " score");
  return detail::take(detail::id_sorted(pool), n, true, m);
}

// The n cases predicted best (pseudo-label admission).
inline std::vector<std::string> select_semisup(const CandidatePool& pool, SelectionMethod m, std::size_t n,
                                               std::uint64_t seed = 0) {
  return detail::take(detail::quality_order(pool, m, seed), n, false, m);
}

// ---------------------------------------------------------------------------
// Selection-quality proxy

struct MethodBenefit {
  SelectionMethod method = SelectionMethod::random;
  double admitted_mean_dsc = 0.0;       // semi-supervised: mean true DSC of admitted labels
  double admitted_se = 0.0;             // standard error over trials
  double deficit_captured = 0.0;        // active: sum of (1 - DSC) over selected cases
  double deficit_se = 0.0;
  double admitted_gain_vs_random = 0.0;  // paired mean difference
  double admitted_gain_se = 0.0;
};

struct BenefitSummary {
  std::size_t trials = 0;
  std::size_t budget = 0;
  std::size_t subsample = 0;
  double pool_mean_dsc = 0.0;
  std::vector<MethodBenefit> methods;
};

namespace detail {
inline std::pair<double, double> mean_and_se(std::span<const double> x) {
  double m = 0;
  for (double v : x) m += v;
  m /= static_cast<double>(x.size());
  if (x.size() < 2) return {m, 0.0};
  double ss = 0;
  for (double v : x) ss += (v - m) * (v - m);
  return {m, std::sqrt(ss / static_cast<double>(x.size() - 1) / static_cast<double>(x.size()))};
}
}  // namespace detail

// Each trial draws a seeded subsample of the pool (the whole pool when
// subsample is 0), then every method selects `budget` cases from it. The
// random method reshuffles per trial.
inline BenefitSummary simulate_selection_benefit(const CandidatePool& pool, std::span<const SelectionMethod> methods,
                                                 std::size_t budget, std::size_t trials, std::uint64_t seed,
                                                 std::size_t subsample = 0) {
  if (trials == 0) throw ArgumentError("trials must be positive");
  for (const auto& r : pool.records)
    if (!r.true_dsc) throw ArgumentError("record '" + r.volume_id + "' has no true DSC");
  const std::size_t m = subsample ? subsample : pool.records.size();
  if (m > pool.records.size() || budget > m) throw ArgumentError("budget/subsample exceed pool size");

  BenefitSummary out;
  out.trials = trials;
  out.budget = budget;
  out.subsample = m;
  for (const auto& r : pool.records) out.pool_mean_dsc += *r.true_dsc;
  out.pool_mean_dsc /= static_cast<double>(pool.records.size());

  std::map<std::string, double> truth;
  for (const auto& r : pool.records) truth[r.volume_id] = *r.true_dsc;
  std::vector<std::vector<double>> admitted(methods.size()), deficit(methods.size());
  std::vector<double> random_admitted(trials);

  std::vector<std::size_t> idx(pool.records.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t t = 0; t < trials; ++t) {
    CandidatePool sub;
    Rng rng(derive_seed(seed, 0x747269616cULL, t));
    if (m < pool.records.size()) shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t i = 0; i < m; ++i) sub.records.push_back(pool.records[idx[i]]);
    const std::uint64_t trial_seed = derive_seed(seed, t);
    auto mean_truth = [&](const std::vector<std::string>& ids) {
      double s = 0;
      for (const auto& id : ids) s += truth.at(id);
      return ids.empty() ? 0.0 : s / static_cast<double>(ids.size());
    };
    auto deficit_of = [&](const std::vector<std::string>& ids) {
      double s = 0;
      for (const auto& id : ids) s += 1.0 - truth.at(id);
      return s;
    };
    random_admitted[t] = mean_truth(select_semisup(sub, SelectionMethod::random, budget, trial_seed));
    for (std::size_t k = 0; k < methods.size(); ++k) {
      admitted[k].push_back(mean_truth(select_semisup(sub, methods[k], budget, trial_seed)));
      deficit[k].push_back(deficit_of(select_active(sub, methods[k], budget, trial_seed)));
    }
  }
  for (std::size_t k = 0; k < methods.size(); ++k) {
    MethodBenefit b;
    b.method = methods[k];
    std::tie(b.admitted_mean_dsc, b.admitted_se) = detail::mean_and_se(admitted[k]);
    std::tie(b.deficit_captured, b.deficit_se) = detail::mean_and_se(deficit[k]);
    std::vector<double> diff(trials);
    for (std::size_t t = 0; t < trials; ++t) diff[t] = admitted[k][t] - random_admitted[t];
    std::tie(b.admitted_gain_vs_random, b.admitted_gain_se) = detail::mean_and_se(diff);
    out.methods.push_back(b);
  }
  return out;
}

}  // namespace segqc
