#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

#include "segqc/binary_io.hpp"
#include "segqc/error.hpp"
#include "segqc/loss.hpp"
#include "segqc/random.hpp"

namespace segqc {

enum class GateActivation { sigmoid, identity, softplus };

inline std::string to_string(GateActivation g) {
  switch (g) {
    case GateActivation::sigmoid: return "sigmoid";
    case GateActivation::identity: return "identity";
    case GateActivation::softplus: return "softplus";
  }
  return "?";
}

inline GateActivation parse_gate_activation(const std::string& s) {
  if (s == "sigmoid") return GateActivation::sigmoid;
  if (s == "identity") return GateActivation::identity;
  if (s == "softplus") return GateActivation::softplus;
  throw ArgumentError("unknown gate activation '" + s + "'");
}

struct HeadConfig {
  std::size_t vision_dim = 512;
  std::size_t text_dim = 512;
  std::size_t attention_hidden = 256;
  std::size_t hidden_dim = 128;
  GateActivation gate = GateActivation::sigmoid;

  std::size_t input_dim() const { return vision_dim + text_dim; }
  std::size_t gate_dim() const { return vision_dim + hidden_dim; }
  friend bool operator==(const HeadConfig&, const HeadConfig&) = default;
};

// Offsets of each parameter block inside the flat parameter vector.
struct HeadLayout {
  std::size_t wa1, ba1, wa2, ba2, w1, b1, w2, b2, total;
  friend bool operator==(const HeadLayout&, const HeadLayout&) = default;

  explicit HeadLayout(const HeadConfig& c) {
    std::size_t o = 0;
    auto take = [&](std::size_t n) {
      const std::size_t at = o;
      o += n;
      return at;
    };
    wa1 = take(c.attention_hidden * c.input_dim());
    ba1 = take(c.attention_hidden);
    wa2 = take(c.gate_dim() * c.attention_hidden);
    ba2 = take(c.gate_dim());
    w1 = take(c.hidden_dim * c.vision_dim);
    b1 = take(c.hidden_dim);
    w2 = take(c.hidden_dim);
    b2 = take(1);
    total = o;
  }
};

// Class-conditional gated regression head:
//   [w1, w2] = gate(Wa2 relu(Wa1 [f1; phi] + ba1) + ba2)
//   h = sigmoid(g2(w2 * relu(g1(w1 * f1))))
// with * elementwise, g1: R^dv -> R^dh and g2: R^dh -> R affine.
// Parameters live in one flat vector (row-major weight blocks).
template <typename T>
class QualityHead {
 public:
  using scalar_type = T;

  explicit QualityHead(HeadConfig cfg = {}) : cfg_(cfg), layout_(cfg), params_(layout_.total, T{0}) {
    if (!cfg.vision_dim || !cfg.text_dim || !cfg.attention_hidden || !cfg.hidden_dim) {
      throw ArgumentError("head dimensions must be positive");
    }
  }

  static std::size_t parameter_count(const HeadConfig& cfg) { return HeadLayout(cfg).total; }

  // Weights uniform in +-1/sqrt(fan_in), biases zero.
  void initialize(std::uint64_t seed) {
    Rng rng(seed);
    std::fill(params_.begin(), params_.end(), T{0});
    auto fill = [&](std::span<T> w, std::size_t fan_in) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (auto& x : w) x = static_cast<T>((2.0 * uniform01(rng) - 1.0) * bound);
    };
    fill(attention_w1(), cfg_.input_dim());
    fill(attention_w2(), cfg_.attention_hidden);
    fill(g1_weight(), cfg_.vision_dim);
    fill(g2_weight(), cfg_.hidden_dim);
  }

  const HeadConfig& config() const { return cfg_; }
  const HeadLayout& layout() const { return layout_; }
  std::span<T> parameters() { return params_; }
  std::span<const T> parameters() const { return params_; }

  std::span<T> attention_w1() { return block(layout_.wa1, layout_.ba1); }
  std::span<T> attention_b1() { return block(layout_.ba1, layout_.wa2); }
  std::span<T> attention_w2() { return block(layout_.wa2, layout_.ba2); }
  std::span<T> attention_b2() { return block(layout_.ba2, layout_.w1); }
  std::span<T> g1_weight() { return block(layout_.w1, layout_.b1); }
  std::span<T> g1_bias() { return block(layout_.b1, layout_.w2); }
  std::span<T> g2_weight() { return block(layout_.w2, layout_.b2); }
  T& g2_bias() { return params_[layout_.b2]; }

  template <typename U>
  QualityHead<U> cast() const {
    QualityHead<U> h(cfg_);
    auto dst = h.parameters();
    for (std::size_t i = 0; i < params_.size(); ++i) dst[i] = static_cast<U>(params_[i]);
    return h;
  }

  friend bool operator==(const QualityHead&, const QualityHead&) = default;

 private:
  std::span<T> block(std::size_t from, std::size_t to) { return std::span<T>(params_).subspan(from, to - from); }

  HeadConfig cfg_;
  HeadLayout layout_;
  std::vector<T> params_;
};

// Logits are clamped to this magnitude so the output stays strictly inside
// (0, 1) in floating point.
inline constexpr double kLogitClamp = 30.0;

namespace detail {

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Eight interleaved partial sums; a fixed order keeps results reproducible.
template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  T acc[8] = {};
  std::size_t k = 0;
  for (; k + 8 <= n; k += 8)
    for (std::size_t l = 0; l < 8; ++l) acc[l] += a[k + l] * b[k + l];
  T s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
  for (; k < n; ++k) s += a[k] * b[k];
  return s;
}

template <typename T>
T gate_value(GateActivation g, T x) {
  switch (g) {
    case GateActivation::sigmoid: return static_cast<T>(sigmoid(x));
    case GateActivation::identity: return x;
    case GateActivation::softplus: return static_cast<T>(x > 30 ? x : std::log1p(std::exp(static_cast<double>(x))));
  }
  return x;
}

template <typename T>
T gate_derivative(GateActivation g, T x, T value) {
  switch (g) {
    case GateActivation::sigmoid: return value * (T{1} - value);
    case GateActivation::identity: return T{1};
    case GateActivation::softplus: return static_cast<T>(sigmoid(x));
  }
  return T{1};
}

}  // namespace detail

// Intermediate activations of one forward pass, kept for backpropagation.
template <typename T>
struct HeadTrace {
  std::vector<T> z, pre_a, a, pre_g, gates, u, pre1, v, s;
  double logit = 0.0;
  double output = 0.0;
  bool clamped = false;
};

template <typename T, typename In>
double forward(const QualityHead<T>& head, std::span<const In> f1, std::span<const In> phi, HeadTrace<T>& tr) {
  const auto& c = head.config();
  if (f1.size() != c.vision_dim || phi.size() != c.text_dim) {
    throw ArgumentError("forward: expected f1 of " + std::to_string(c.vision_dim) + " and phi of " +
                        std::to_string(c.text_dim) + " dimensions, got " + std::to_string(f1.size()) + " and " +
                        std::to_string(phi.size()));
  }
  const auto& L = head.layout();
  const T* p = head.parameters().data();
  const std::size_t din = c.input_dim(), nh = c.attention_hidden, ng = c.gate_dim(), dv = c.vision_dim,
                    dh = c.hidden_dim;

  tr.z.resize(din);
  for (std::size_t k = 0; k < dv; ++k) tr.z[k] = static_cast<T>(f1[k]);
  for (std::size_t k = 0; k < c.text_dim; ++k) tr.z[dv + k] = static_cast<T>(phi[k]);

  tr.pre_a.resize(nh);
  tr.a.resize(nh);
  for (std::size_t r = 0; r < nh; ++r) {
    const T* row = p + L.wa1 + r * din;
    const T acc = p[L.ba1 + r] + detail::dot(row, tr.z.data(), din);
    tr.pre_a[r] = acc;
    tr.a[r] = acc > T{0} ? acc : T{0};
  }
  tr.pre_g.resize(ng);
  tr.gates.resize(ng);
  for (std::size_t r = 0; r < ng; ++r) {
    const T* row = p + L.wa2 + r * nh;
    const T acc = p[L.ba2 + r] + detail::dot(row, tr.a.data(), nh);
    tr.pre_g[r] = acc;
    tr.gates[r] = detail::gate_value(c.gate, acc);
  }
  tr.u.resize(dv);
  for (std::size_t k = 0; k < dv; ++k) tr.u[k] = tr.gates[k] * tr.z[k];
  tr.pre1.resize(dh);
  tr.v.resize(dh);
  tr.s.resize(dh);
  double y = static_cast<double>(p[L.b2]);
  for (std::size_t r = 0; r < dh; ++r) {
    const T* row = p + L.w1 + r * dv;
    const T acc = p[L.b1 + r] + detail::dot(row, tr.u.data(), dv);
    tr.pre1[r] = acc;
    tr.v[r] = acc > T{0} ? acc : T{0};
    tr.s[r] = tr.gates[dv + r] * tr.v[r];
    y += static_cast<double>(p[L.w2 + r] * tr.s[r]);
  }
  tr.clamped = std::fabs(y) > kLogitClamp;
  tr.logit = std::clamp(y, -kLogitClamp, kLogitClamp);
  tr.output = detail::sigmoid(tr.logit);
  return tr.output;
}

template <typename T, typename In>
double forward(const QualityHead<T>& head, std::span<const In> f1, std::span<const In> phi) {
  HeadTrace<T> tr;
  return forward(head, f1, phi, tr);
}

template <typename T>
double forward(const QualityHead<T>& head, const std::vector<float>& f1, const std::vector<float>& phi) {
  return forward(head, std::span<const float>(f1), std::span<const float>(phi));
}

// Adds d(output)/d(params) * upstream into `grad`.
template <typename T>
void backward(const QualityHead<T>& head, const HeadTrace<T>& tr, double upstream, std::span<T> grad,
              std::vector<T>& scratch) {
  if (tr.clamped) return;
  const auto& c = head.config();
  const auto& L = head.layout();
  const T* p = head.parameters().data();
  T* g = grad.data();
  const std::size_t din = c.input_dim(), nh = c.attention_hidden, ng = c.gate_dim(), dv = c.vision_dim,
                    dh = c.hidden_dim;

  const T dy = static_cast<T>(upstream * tr.output * (1.0 - tr.output));
  g[L.b2] += dy;
  scratch.assign(ng + dv + nh, T{0});
  T* dgate = scratch.data();  // d/d(gates), then d/d(pre_g)
  T* du = dgate + ng;
  T* da = du + dv;
  for (std::size_t r = 0; r < dh; ++r) {
    g[L.w2 + r] += dy * tr.s[r];
    const T ds = dy * p[L.w2 + r];
    dgate[dv + r] = ds * tr.v[r];
    const T dpre = tr.pre1[r] > T{0} ? ds * tr.gates[dv + r] : T{0};
    if (dpre == T{0}) continue;
    g[L.b1 + r] += dpre;
    T* gw = g + L.w1 + r * dv;
    const T* w = p + L.w1 + r * dv;
    for (std::size_t k = 0; k < dv; ++k) {
      gw[k] += dpre * tr.u[k];
      du[k] += dpre * w[k];
    }
  }
  for (std::size_t k = 0; k < dv; ++k) dgate[k] = du[k] * tr.z[k];
  for (std::size_t r = 0; r < ng; ++r) dgate[r] *= detail::gate_derivative(c.gate, tr.pre_g[r], tr.gates[r]);
  for (std::size_t r = 0; r < ng; ++r) {
    const T d = dgate[r];
    if (d == T{0}) continue;
    g[L.ba2 + r] += d;
    T* gw = g + L.wa2 + r * nh;
    const T* w = p + L.wa2 + r * nh;
    for (std::size_t k = 0; k < nh; ++k) {
      gw[k] += d * tr.a[k];
      da[k] += d * w[k];
    }
  }
  for (std::size_t r = 0; r < nh; ++r) {
    if (!(tr.pre_a[r] > T{0})) continue;
    const T d = da[r];
    g[L.ba1 + r] += d;
    T* gw = g + L.wa1 + r * din;
    for (std::size_t k = 0; k < din; ++k) gw[k] += d * tr.z[k];
  }
}

template <typename In>
struct HeadSample {
  std::span<const In> f1;
  std::span<const In> phi;
  double target = 0.0;
};

// Full compositional loss of one batch and its gradient with respect to every
// head parameter (accumulated into `grad`, which the caller zeroes). Inputs
// are frozen and receive no gradient.
template <typename T, typename In>
LossBreakdown forward_backward(const QualityHead<T>& head, std::span<const HeadSample<In>> batch,
                               std::span<const IndexPair> pairs, const LossConfig& cfg, std::span<T> grad,
                               std::vector<double>* predictions_out = nullptr) {
  if (batch.empty()) throw ArgumentError("forward_backward: empty batch");
  if (grad.size() != head.parameters().size()) throw ArgumentError("forward_backward: gradient buffer size mismatch");
  std::vector<HeadTrace<T>> traces(batch.size());
  std::vector<double> pred(batch.size()), target(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (!(batch[i].target >= 0 && batch[i].target <= 1)) throw ArgumentError("targets must lie in [0, 1]");
    pred[i] = forward(head, batch[i].f1, batch[i].phi, traces[i]);
    target[i] = batch[i].target;
  }
  const auto loss = batch_loss(pred, target, pairs, cfg);
  const auto dpred = batch_loss_gradient(pred, target, pairs, cfg);
  std::vector<T> scratch;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (dpred[i] != 0.0) backward(head, traces[i], dpred[i], grad, scratch);
  }
  if (predictions_out) *predictions_out = std::move(pred);
  return loss;
}

// ---------------------------------------------------------------------------
// Checkpoints: "SQHD", u32 version, u32 JSON length, JSON (head config plus
// caller metadata), u64 parameter count, f32 parameters; little-endian.

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline nlohmann::json head_config_json(const HeadConfig& c) {
  return {{"vision_dim", c.vision_dim},
          {"text_dim", c.text_dim},
          {"attention_hidden", c.attention_hidden},
          {"hidden_dim", c.hidden_dim},
          {"gate", to_string(c.gate)}};
}

inline HeadConfig head_config_from_json(const nlohmann::json& j) {
  HeadConfig c;
  c.vision_dim = j.at("vision_dim").get<std::size_t>();
  c.text_dim = j.at("text_dim").get<std::size_t>();
  c.attention_hidden = j.at("attention_hidden").get<std::size_t>();
  c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  c.gate = parse_gate_activation(j.value("gate", std::string("sigmoid")));
  return c;
}

inline std::vector<std::uint8_t> encode_checkpoint(const QualityHead<float>& head,
                                                   const nlohmann::json& metadata = nlohmann::json::object()) {
  nlohmann::json j = {{"head", head_config_json(head.config())}, {"metadata", metadata}};
  const std::string text = j.dump();
  std::vector<std::uint8_t> out{'S', 'Q', 'H', 'D'};
  io::append_le(out, kCheckpointVersion);
  io::append_le(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  io::append_le(out, static_cast<std::uint64_t>(head.parameters().size()));
  for (float v : head.parameters()) io::append_le(out, v);
  return out;
}

struct LoadedCheckpoint {
  QualityHead<float> head;
  nlohmann::json metadata;
};

inline LoadedCheckpoint decode_checkpoint(std::span<const std::uint8_t> b) {
  if (b.size() < 12 || std::memcmp(b.data(), "SQHD", 4) != 0) throw DataError("not a head checkpoint");
  const auto version = io::load<std::uint32_t>(b.data() + 4);
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  const auto len = io::load<std::uint32_t>(b.data() + 8);
  if (b.size() < 12 + len + 8) throw DataError("truncated checkpoint");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(std::string(b.begin() + 12, b.begin() + 12 + len));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint header: ") + e.what());
  }
  QualityHead<float> head(head_config_from_json(j.at("head")));
  const auto count = io::load<std::uint64_t>(b.data() + 12 + len);
  if (count != head.parameters().size() || b.size() != 12 + len + 8 + count * 4) {
    throw DataError("checkpoint parameter payload does not match its configuration");
  }
  const std::uint8_t* p = b.data() + 12 + len + 8;
  for (std::size_t i = 0; i < count; ++i) head.parameters()[i] = io::load<float>(p + 4 * i);
  return {std::move(head), j.value("metadata", nlohmann::json::object())};
}

inline void save_checkpoint(const std::filesystem::path& path, const QualityHead<float>& head,
                            const nlohmann::json& metadata = nlohmann::json::object()) {
  io::write_bytes(path, encode_checkpoint(head, metadata));
}

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = io::read_bytes(path);
  return decode_checkpoint(bytes);
}

}  // namespace segqc
