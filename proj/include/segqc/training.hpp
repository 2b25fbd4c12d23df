#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "segqc/assignment.hpp"
#include "segqc/degrade.hpp"
#include "segqc/embedding.hpp"
#include "segqc/error.hpp"
#include "segqc/loss.hpp"
#include "segqc/metrics.hpp"
#include "segqc/optimizer.hpp"
#include "segqc/quality_head.hpp"
#include "segqc/random.hpp"
#include "segqc/sample.hpp"

namespace segqc {

struct AblationFlags {
  bool use_text_condition = true;
  bool use_onehot_condition = false;  // ignored when text conditioning is on
  bool use_rank_loss = true;
  bool use_resample = false;

  std::string label() const {
    std::string s = use_text_condition ? "text" : use_onehot_condition ? "onehot" : "none";
    s += use_rank_loss ? "+rank" : "";
    s += use_resample ? "+resample" : "";
    return s;
  }
  friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 128;
  AdamWConfig optimizer{};
  std::uint64_t seed = 0;
  AblationFlags flags{};
  HeadConfig head{};
  double validation_fraction = 0.2;
  std::size_t resample_bins = 10;
  std::size_t resample_per_bin = 0;  // 0: keep the training-set size

  void validate() const {
    if (epochs == 0 || batch_size == 0) throw ArgumentError("epochs and batch size must be positive");
    if (!(optimizer.learning_rate >= 0)) throw ArgumentError("learning rate must be non-negative");
    if (!(validation_fraction > 0 && validation_fraction < 1)) throw ArgumentError("validation fraction in (0, 1)");
  }
};

// A slice pair after the frozen vision encoder.
struct EncodedSample {
  Embedding f1;
  ClassId class_id = 0;
  double target = 0.0;
  std::string volume_id;
  std::string sample_id;
};

inline std::string sample_id_of(const SlicePair& p) {
  std::string id = p.volume_id + "#" + std::to_string(p.slice_index) + "#" + std::to_string(p.class_id);
  if (p.degradation) id += "#" + std::string(to_string(p.degradation->kind)) + ":" + std::to_string(p.degradation->severity);
  return id;
}

inline EncodedSample encode_sample(const SlicePair& p, const EmbeddingProvider& provider) {
  if (!p.true_dsc) throw ArgumentError("slice pair " + sample_id_of(p) + " has no true DSC");
  return {provider.vision(p), p.class_id, *p.true_dsc, p.volume_id, sample_id_of(p)};
}

inline std::vector<EncodedSample> encode_dataset(std::span<const SlicePair> pairs, const EmbeddingProvider& provider) {
  std::vector<EncodedSample> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(encode_sample(p, provider));
  return out;
}

// Volume-wise split: a seeded shuffle of the distinct volume ids, the first
// `fraction` of them (at least one) held out.
inline std::set<std::string> validation_volumes(std::span<const EncodedSample> data, double fraction,
                                                std::uint64_t seed) {
  std::set<std::string> ids;
  for (const auto& s : data) ids.insert(s.volume_id);
  std::vector<std::string> order(ids.begin(), ids.end());
  if (order.size() < 2) throw ArgumentError("volume-wise split needs at least two volumes; validation would be empty");
  Rng rng(derive_seed(seed, 0x76616cULL));
  shuffle(order.begin(), order.end(), rng);
  const auto n_val = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(fraction * static_cast<double>(order.size()))), 1, order.size() - 1);
  return {order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val)};
}

using ConditionTable = std::map<ClassId, Embedding>;

namespace detail {
inline ClassTable anonymous_classes(const std::set<ClassId>& ids) {
  ClassTable t;
  for (auto c : ids) t[c] = placeholder_class_name(c);
  return t;
}
}  // namespace detail

// Class vectors fed to the head as phi under the given ablation flags.
inline ConditionTable condition_table(const AblationFlags& flags, const TextEmbeddingTable& text,
                                      const std::set<ClassId>& classes, std::size_t text_dim) {
  ConditionTable t;
  if (flags.use_text_condition) {
    for (auto c : classes) {
      auto it = text.find(c);
      if (it == text.end()) throw DataError("no text embedding for class " + std::to_string(c));
      if (it->second.size() != text_dim) throw DataError("text embedding dimension mismatch");
      t[c] = it->second;
    }
  } else if (flags.use_onehot_condition) {
    t = onehot_embeddings(detail::anonymous_classes(classes), text_dim);
  } else {
    for (auto c : classes) t[c] = Embedding(text_dim, 0.0f);
  }
  return t;
}

// Vectors used to pair samples for the ranking term: the class text
// embeddings when available, one-hot codes otherwise.
inline ConditionTable pairing_table(const TextEmbeddingTable& text, const std::set<ClassId>& classes) {
  bool have_text = true;
  for (auto c : classes) have_text = have_text && text.count(c);
  if (have_text) {
    ConditionTable t;
    for (auto c : classes) t[c] = text.at(c);
    return t;
  }
  return onehot_embeddings(detail::anonymous_classes(classes), std::max<std::size_t>(classes.size(), 1));
}

template <typename T>
std::vector<double> predict(const QualityHead<T>& head, std::span<const EncodedSample> data,
                            const ConditionTable& cond) {
  std::vector<double> out(data.size());
  HeadTrace<T> tr;
  for (std::size_t i = 0; i < data.size(); ++i) {
    out[i] = forward(head, std::span<const float>(data[i].f1), std::span<const float>(cond.at(data[i].class_id)), tr);
  }
  return out;
}

inline std::vector<MetricSample> metric_samples(std::span<const EncodedSample> data, std::span<const double> pred) {
  std::vector<MetricSample> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) out[i] = {pred[i], data[i].target, data[i].class_id, data[i].sample_id};
  return out;
}

struct EpochLog {
  std::size_t epoch = 0;
  double loss_mse = 0.0;
  double loss_rank = 0.0;
  EvalSummary validation;
};

struct TrainResult {
  QualityHead<float> head;
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  EvalSummary best;
  ConditionTable conditions;
};

inline std::set<ClassId> classes_of(std::span<const EncodedSample> a, std::span<const EncodedSample> b = {}) {
  std::set<ClassId> c;
  for (const auto& s : a) c.insert(s.class_id);
  for (const auto& s : b) c.insert(s.class_id);
  return c;
}

// Single-threaded deterministic reference trainer. Returns the checkpoint
// with the best validation SROCC.
inline TrainResult train(std::vector<EncodedSample> train_set, std::span<const EncodedSample> val_set,
                         const TextEmbeddingTable& text, const TrainConfig& config, const LossConfig& loss) {
  config.validate();
  loss.validate();
  if (train_set.empty()) throw ArgumentError("training set is empty");
  if (val_set.empty()) throw ArgumentError("validation split is empty");
  HeadConfig hc = config.head;
  hc.vision_dim = train_set.front().f1.size();
  for (const auto& s : train_set)
    if (s.f1.size() != hc.vision_dim) throw DataError("vision embeddings differ in dimension");

  if (config.flags.use_resample) {
    SynthesisConfig rc;
    rc.target_bins = config.resample_bins;
    rc.samples_per_bin = config.resample_per_bin
                             ? config.resample_per_bin
                             : std::max<std::size_t>(1, (train_set.size() + rc.target_bins - 1) / rc.target_bins);
    rc.seed = derive_seed(config.seed, 0x72736dULL);
    train_set = resample_balanced(std::move(train_set), rc,
                                  [](const EncodedSample& s) { return std::optional<double>(s.target); });
  }

  const auto classes = classes_of(train_set, val_set);
  TrainResult result{QualityHead<float>(hc), {}, 0, {}, condition_table(config.flags, text, classes, hc.text_dim)};
  const ConditionTable pairing = pairing_table(text, classes);

  QualityHead<float> head(hc);
  head.initialize(derive_seed(config.seed, 0x696e6974ULL));
  AdamW<float> opt(head.parameters().size(), config.optimizer);
  std::vector<float> grad(head.parameters().size());
  double best_srocc = -2.0;

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<HeadSample<float>> batch;
  std::vector<std::span<const float>> pair_vecs;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng rng(derive_seed(config.seed, 0x65706f6368ULL, epoch));
    shuffle(order.begin(), order.end(), rng);
    double mse_sum = 0, rank_sum = 0;
    std::size_t rank_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      batch.clear();
      pair_vecs.clear();
      for (std::size_t k = start; k < end; ++k) {
        const auto& s = train_set[order[k]];
        batch.push_back({s.f1, result.conditions.at(s.class_id), s.target});
        pair_vecs.push_back(pairing.at(s.class_id));
      }
      std::vector<IndexPair> pairs;
      if (config.flags.use_rank_loss && batch.size() >= 2) pairs = build_pairs(std::span<const std::span<const float>>(pair_vecs)).pairs;
      std::fill(grad.begin(), grad.end(), 0.0f);
      const auto lb = forward_backward(head, std::span<const HeadSample<float>>(batch), pairs,
                                       config.flags.use_rank_loss ? loss : LossConfig{0.0, loss.margin_xi}, std::span(grad));
      opt.step(head.parameters(), grad);
      mse_sum += lb.mse * static_cast<double>(batch.size());
      if (lb.n_pairs) {
        rank_sum += lb.rank;
        ++rank_batches;
      }
    }
    EpochLog row;
    row.epoch = epoch + 1;
    row.loss_mse = mse_sum / static_cast<double>(train_set.size());
    row.loss_rank = rank_batches ? rank_sum / static_cast<double>(rank_batches) : 0.0;
    const auto pred = predict(head, val_set, result.conditions);
    const auto ms = metric_samples(val_set, pred);
    {
      ScopedWarningCapture quiet;  // small validation groups are expected
      row.validation = evaluate(ms);
    }
    const double s = row.validation.srocc.value_or(-2.0);
    if (s > best_srocc || result.log.empty()) {
      best_srocc = s;
      result.head = head;
      result.best_epoch = row.epoch;
      result.best = row.validation;
    }
    result.log.push_back(row);
  }
  return result;
}

// Encodes slice pairs, splits them volume-wise and trains.
inline TrainResult train(std::span<const SlicePair> dataset, const EmbeddingProvider& provider,
                         const TrainConfig& config, const LossConfig& loss) {
  if (dataset.empty()) throw ArgumentError("dataset is empty");
  auto encoded = encode_dataset(dataset, provider);
  const auto val_ids = validation_volumes(encoded, config.validation_fraction, config.seed);
  std::vector<EncodedSample> tr, va;
  for (auto& s : encoded) (val_ids.count(s.volume_id) ? va : tr).push_back(std::move(s));
  TrainConfig cfg = config;
  cfg.head.text_dim = provider.text_dim() ? provider.text_dim() : cfg.head.text_dim;
  return train(std::move(tr), va, provider.text_table(), cfg, loss);
}

// ---------------------------------------------------------------------------
// Ablation harness

// Five-row grid: conditioning, ranking term and
// resampling switched on in turn.
inline std::vector<AblationFlags> core_preset() {
  return {
      {false, false, false, false},
      {true, false, false, false},
      {false, false, true, false},
      {true, false, true, false},
      {true, false, true, true},
  };
}

inline std::vector<AblationFlags> full_ablation_grid() {
  std::vector<AblationFlags> g;
  for (int m = 0; m < 16; ++m) g.push_back({(m & 1) != 0, (m & 2) != 0, (m & 4) != 0, (m & 8) != 0});
  return g;
}

struct AblationRow {
  AblationFlags flags;
  EvalSummary metrics;
  std::size_t best_epoch = 0;
};

// Trains every configuration with the same seed and budget.
inline std::vector<AblationRow> run_ablation(std::span<const EncodedSample> train_set,
                                             std::span<const EncodedSample> val_set, const TextEmbeddingTable& text,
                                             std::span<const AblationFlags> grid, TrainConfig config,
                                             const LossConfig& loss) {
  std::vector<AblationRow> rows;
  for (const auto& flags : grid) {
    config.flags = flags;
    auto r = train(std::vector<EncodedSample>(train_set.begin(), train_set.end()), val_set, text, config, loss);
    rows.push_back({flags, r.best, r.best_epoch});
  }
  return rows;
}

}  // namespace segqc
