#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "segqc/binary_io.hpp"
#include "segqc/error.hpp"
#include "segqc/random.hpp"
#include "segqc/sample.hpp"
#include "segqc/volume.hpp"

namespace segqc {

using Embedding = std::vector<float>;

inline double l2_norm(std::span<const float> v) {
  double s = 0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

inline Embedding normalized(std::span<const float> v) {
  const double n = l2_norm(v);
  if (!(n > 0)) throw DataError("cannot normalize a zero vector");
  Embedding out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] / n);
  return out;
}

// ---------------------------------------------------------------------------
// Toy vision encoder

// Per-cell statistics on a kToyGrid x kToyGrid partition of the 2-channel
// (image, mask) input:
//   0 mean intensity
//   1 mask area fraction
//   2 mask boundary length: 4-adjacent pixel pairs (right/down neighbour
//     inside the image) whose mask values differ, per cell pixel
//   3 mean intensity inside the mask (0 when the cell has no mask pixel)
//   4 intensity variance inside the mask (population; 0 likewise)
inline constexpr std::size_t kToyGrid = 8;
inline constexpr std::size_t kToyStats = 5;
inline constexpr std::size_t kToyFeatures = kToyGrid * kToyGrid * kToyStats;

inline std::vector<double> toy_features(const SlicePair& s) {
  const std::size_t w = s.pixels.dim(0), h = s.pixels.dim(1);
  if (s.mask.dims() != s.pixels.dims() || w % kToyGrid || h % kToyGrid) {
    throw ArgumentError("toy encoder: pixels and mask must share a shape divisible by 8");
  }
  const std::size_t cw = w / kToyGrid, ch = h / kToyGrid;
  std::vector<double> sum(kToyGrid * kToyGrid, 0), area(sum), edges(sum), msum(sum), msq(sum);
  for (std::size_t y = 0; y < h; ++y) {
    const std::size_t cy = y / ch;
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t c = cy * kToyGrid + x / cw;
      const double v = s.pixels.at(x, y);
      const bool m = s.mask.at(x, y) != 0;
      sum[c] += v;
      if (m) {
        area[c] += 1;
        msum[c] += v;
        msq[c] += v * v;
      }
      if (x + 1 < w && (s.mask.at(x + 1, y) != 0) != m) edges[c] += 1;
      if (y + 1 < h && (s.mask.at(x, y + 1) != 0) != m) edges[c] += 1;
    }
  }
  const double npix = static_cast<double>(cw * ch);
  std::vector<double> f(kToyFeatures);
  for (std::size_t c = 0; c < kToyGrid * kToyGrid; ++c) {
    double* o = &f[c * kToyStats];
    o[0] = sum[c] / npix;
    o[1] = area[c] / npix;
    o[2] = edges[c] / npix;
    if (area[c] > 0) {
      const double mean = msum[c] / area[c];
      o[3] = mean;
      o[4] = std::max(0.0, msq[c] / area[c] - mean * mean);
    } else {
      o[3] = o[4] = 0.0;
    }
  }
  return f;
}

// Fixed seeded random projection of the toy features with unit-norm rows.
class ToyEncoder {
 public:
  explicit ToyEncoder(std::size_t dim = 512, std::uint64_t seed = 0x70e7c0deULL) : dim_(dim), seed_(seed) {
    if (dim == 0) throw ArgumentError("toy encoder dimension must be positive");
    Rng rng(seed);
    projection_.resize(dim * kToyFeatures);
    for (std::size_t r = 0; r < dim; ++r) {
      double n2 = 0;
      for (std::size_t k = 0; k < kToyFeatures; ++k) {
        const double v = 2.0 * uniform01(rng) - 1.0;
        projection_[r * kToyFeatures + k] = v;
        n2 += v * v;
      }
      const double n = std::sqrt(n2);
      for (std::size_t k = 0; k < kToyFeatures; ++k) projection_[r * kToyFeatures + k] /= n;
    }
  }

  std::size_t dim() const { return dim_; }
  std::uint64_t seed() const { return seed_; }
  std::span<const double> projection() const { return projection_; }

  Embedding project(std::span<const double> features) const {
    Embedding out(dim_);
    for (std::size_t r = 0; r < dim_; ++r) {
      const double* row = &projection_[r * kToyFeatures];
      double acc = 0;
      for (std::size_t k = 0; k < kToyFeatures; ++k) acc += row[k] * features[k];
      out[r] = static_cast<float>(acc);
    }
    return out;
  }

  Embedding encode(const SlicePair& s) const { return project(toy_features(s)); }

 private:
  std::size_t dim_;
  std::uint64_t seed_;
  std::vector<double> projection_;  // dim x kToyFeatures, row-major
};

// ---------------------------------------------------------------------------
// Embedding files: a JSON manifest plus a little-endian f32 payload.
//   {"dim": d, "payload": "<file>", "classes": [{"id", "name", "offset", "dim"}]}
// `offset` is the byte offset of the class vector inside the payload.

using TextEmbeddingTable = std::map<ClassId, Embedding>;

inline void write_text_embeddings(const std::filesystem::path& manifest, const TextEmbeddingTable& table,
                                  const ClassTable& names) {
  if (table.empty()) throw ArgumentError("no embeddings to write");
  const std::size_t dim = table.begin()->second.size();
  const std::string payload = manifest.stem().string() + ".f32";
  std::vector<std::uint8_t> bytes;
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& [id, vec] : table) {
    if (vec.size() != dim) throw ArgumentError("text embeddings must share one dimension");
    auto it = names.find(id);
    classes.push_back({{"id", id},
                       {"name", it != names.end() ? it->second : placeholder_class_name(id)},
                       {"offset", bytes.size()},
                       {"dim", dim}});
    for (float v : vec) io::append_le(bytes, v);
  }
  io::write_bytes(manifest.parent_path() / payload, bytes);
  io::write_text(manifest, nlohmann::json{{"dim", dim}, {"payload", payload}, {"classes", classes}}.dump(2) + "\n");
}

// Loads and L2-normalizes class text embeddings. Every class in `required`
// must be present.
inline TextEmbeddingTable load_text_embeddings(const std::filesystem::path& manifest, std::size_t expected_dim,
                                               const ClassTable& required = {}) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text(manifest));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("embedding manifest '" + manifest.string() + "': " + e.what());
  }
  TextEmbeddingTable table;
  try {
    const auto payload = io::read_bytes(manifest.parent_path() / j.at("payload").get<std::string>());
    for (const auto& c : j.at("classes")) {
      const auto id = c.at("id").get<ClassId>();
      const auto dim = c.value("dim", j.value("dim", std::size_t{0}));
      if (dim != expected_dim) {
        throw DataError("class " + std::to_string(id) + " embedding has dimension " + std::to_string(dim) +
                        ", expected " + std::to_string(expected_dim));
      }
      const auto offset = c.at("offset").get<std::size_t>();
      if (offset + dim * sizeof(float) > payload.size()) {
        throw DataError("class " + std::to_string(id) + " embedding runs past the payload end");
      }
      std::vector<float> v(dim);
      for (std::size_t k = 0; k < dim; ++k) v[k] = io::load<float>(payload.data() + offset + k * sizeof(float));
      table[id] = normalized(v);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("embedding manifest '" + manifest.string() + "': " + e.what());
  }
  for (const auto& [id, name] : required) {
    if (!table.count(id)) throw DataError("no text embedding for class " + std::to_string(id) + " ('" + name + "')");
  }
  return table;
}

// Deterministic stand-in for encoded class prompts: one seeded random unit
// vector per class name.
inline TextEmbeddingTable toy_text_embeddings(const ClassTable& classes, std::size_t dim, std::uint64_t seed = 0) {
  TextEmbeddingTable t;
  for (const auto& [id, name] : classes) {
    Rng rng(derive_seed(seed, hash_string(name)));
    std::vector<float> v(dim);
    for (auto& x : v) x = static_cast<float>(2.0 * uniform01(rng) - 1.0);
    t[id] = normalized(v);
  }
  return t;
}

// One-hot class codes zero-padded to `dim` (ablation stand-in for text).
inline TextEmbeddingTable onehot_embeddings(const ClassTable& classes, std::size_t dim) {
  if (classes.size() > dim) throw ArgumentError("more classes than one-hot dimensions");
  TextEmbeddingTable t;
  std::size_t k = 0;
  for (const auto& [id, name] : classes) {
    Embedding v(dim, 0.0f);
    v[k++] = 1.0f;
    t[id] = std::move(v);
  }
  return t;
}

// ---------------------------------------------------------------------------
// Providers

inline std::string vision_key(const std::string& volume_id, std::int64_t slice_index, ClassId cls) {
  return volume_id + "#" + std::to_string(slice_index) + "#" + std::to_string(cls);
}

enum class ProviderKind { precomputed_file, toy_encoder };

// Supplies frozen vision embeddings (f1) and class text embeddings (phi).
class EmbeddingProvider {
 public:
  static EmbeddingProvider toy(std::size_t vision_dim, TextEmbeddingTable text, std::uint64_t seed = 0x70e7c0deULL) {
    EmbeddingProvider p;
    p.kind_ = ProviderKind::toy_encoder;
    p.toy_.emplace(vision_dim, seed);
    p.vision_dim_ = vision_dim;
    p.set_text(std::move(text));
    return p;
  }

  // Vision embeddings keyed by (volume_id, slice_index, class_id), in the
  // same manifest + payload layout as text embeddings but with "records"
  // entries {"volume_id", "slice_index", "class_id", "offset"}.
  static EmbeddingProvider precomputed(const std::filesystem::path& manifest, TextEmbeddingTable text) {
    EmbeddingProvider p;
    p.kind_ = ProviderKind::precomputed_file;
    try {
      const auto j = nlohmann::json::parse(io::read_text(manifest));
      p.vision_dim_ = j.at("dim").get<std::size_t>();
      const auto payload = io::read_bytes(manifest.parent_path() / j.at("payload").get<std::string>());
      for (const auto& r : j.at("records")) {
        const auto offset = r.at("offset").get<std::size_t>();
        if (offset + p.vision_dim_ * sizeof(float) > payload.size()) throw DataError("vision record past payload end");
        Embedding v(p.vision_dim_);
        for (std::size_t k = 0; k < v.size(); ++k) v[k] = io::load<float>(payload.data() + offset + k * sizeof(float));
        p.precomputed_[vision_key(r.at("volume_id").get<std::string>(), r.at("slice_index").get<std::int64_t>(),
                                  r.at("class_id").get<ClassId>())] = std::move(v);
      }
    } catch (const nlohmann::json::exception& e) {
      throw DataError("vision embedding manifest '" + manifest.string() + "': " + e.what());
    }
    p.set_text(std::move(text));
    return p;
  }

  ProviderKind kind() const { return kind_; }
  std::size_t vision_dim() const { return vision_dim_; }
  std::size_t text_dim() const { return text_dim_; }
  const TextEmbeddingTable& text_table() const { return text_; }
  const ToyEncoder* toy_encoder() const { return toy_ ? &*toy_ : nullptr; }

  Embedding vision(const SlicePair& s) const {
    if (toy_) return toy_->encode(s);
    auto it = precomputed_.find(vision_key(s.volume_id, s.slice_index, s.class_id));
    if (it == precomputed_.end()) {
      throw DataError("no precomputed vision embedding for " + vision_key(s.volume_id, s.slice_index, s.class_id));
    }
    return it->second;
  }

  const Embedding& text(ClassId cls) const {
    auto it = text_.find(cls);
    if (it == text_.end()) throw DataError("no text embedding for class " + std::to_string(cls));
    return it->second;
  }

 private:
  void set_text(TextEmbeddingTable t) {
    text_ = std::move(t);
    text_dim_ = text_.empty() ? 0 : text_.begin()->second.size();
    for (const auto& [id, v] : text_)
      if (v.size() != text_dim_) throw DataError("text embeddings must share one dimension");
  }

  ProviderKind kind_ = ProviderKind::toy_encoder;
  std::size_t vision_dim_ = 0;
  std::size_t text_dim_ = 0;
  std::optional<ToyEncoder> toy_;
  std::unordered_map<std::string, Embedding> precomputed_;
  TextEmbeddingTable text_;
};

}  // namespace segqc
