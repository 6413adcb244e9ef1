#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "gvq/core/error.hpp"
#include "gvq/core/rng.hpp"
#include "gvq/core/tape.hpp"

namespace gvq {

enum class MethodKind {
  kNoComm,
  kFullComm,
  kRandomGate,
  kAttentionComm,
  kIbContinuous,
  kScheduled,
  kGvq,
};

struct BaselineVariant {
  MethodKind kind = MethodKind::kGvq;
  double rate = 0.5;  // random_gate send probability
  int k = 3;          // scheduled period

  void validate() const {
    if (rate < 0.0 || rate > 1.0) throw ConfigError("baseline: rate must be in [0,1]");
    if (kind == MethodKind::kScheduled && (k < 2 || k > 5))
      throw ConfigError("baseline: schedule period must be in {2..5}");
  }
};

inline const char* method_name(MethodKind k) {
  switch (k) {
    case MethodKind::kNoComm: return "no_comm";
    case MethodKind::kFullComm: return "full_comm";
    case MethodKind::kRandomGate: return "random_gate";
    case MethodKind::kAttentionComm: return "attention_comm";
    case MethodKind::kIbContinuous: return "info_bottleneck_continuous";
    case MethodKind::kScheduled: return "scheduled";
    case MethodKind::kGvq: return "gvq";
  }
  throw ContractError("method_name: bad kind");
}

inline MethodKind method_from_name(const std::string& s) {
  if (s == "no_comm") return MethodKind::kNoComm;
  if (s == "full_comm") return MethodKind::kFullComm;
  if (s == "random_gate") return MethodKind::kRandomGate;
  if (s == "attention_comm") return MethodKind::kAttentionComm;
  if (s == "info_bottleneck_continuous") return MethodKind::kIbContinuous;
  if (s == "scheduled") return MethodKind::kScheduled;
  if (s == "gvq") return MethodKind::kGvq;
  throw ConfigError("unknown method: " + s);
}

// What the training loop needs to know about a method: how the gate is
// driven, what travels on the wire, which loss terms are live, and the bit
// price of one message.
struct MethodStack {
  BaselineVariant variant;
  bool learned_gate = false;      // gate MLP decides sends
  bool uses_vq = false;           // token payload, EMA codebook
  bool continuous_latent = false; // payload is the raw latent vector
  bool payload_is_obs = false;    // payload is the sender's observation
  bool stochastic_encoder = false;
  bool ib_active = false;
  bool gate_loss_active = false;
  bool constraint_active = false;
  bool attention_pool = false;    // receiver aggregates with attention
  double message_bits = 0.0;
  int payload_dim = 0;            // wire vector dimension (pool input)

  bool sends_anything() const { return variant.kind != MethodKind::kNoComm; }
  bool has_encoder() const { return uses_vq || continuous_latent; }
};

// Configure a method stack from primitive sizes: codebook K, latent width,
// observation width, and the fixed bit price of a full-observation payload.
inline MethodStack build_baseline(const BaselineVariant& variant, int codebook_K, int latent_dim,
                                  int obs_dim, double obs_payload_bits) {
  variant.validate();
  if (codebook_K < 2 || latent_dim < 1 || obs_dim < 1)
    throw ConfigError("build_baseline: bad sizes");
  MethodStack s;
  s.variant = variant;
  double token_bits = std::log2(static_cast<double>(codebook_K));
  double float_payload_bits = 32.0 * latent_dim;
  switch (variant.kind) {
    case MethodKind::kNoComm:
      s.payload_dim = latent_dim;  // decoder sees a zero pool
      s.message_bits = 0.0;
      break;
    case MethodKind::kFullComm:
      s.payload_is_obs = true;
      s.payload_dim = obs_dim;
      s.message_bits = obs_payload_bits;
      break;
    case MethodKind::kRandomGate:
      s.uses_vq = true;
      s.payload_dim = latent_dim;
      s.message_bits = token_bits;
      break;
    case MethodKind::kAttentionComm:
      s.continuous_latent = true;
      s.attention_pool = true;
      s.payload_dim = latent_dim;
      s.message_bits = float_payload_bits;
      break;
    case MethodKind::kIbContinuous:
      s.continuous_latent = true;
      s.stochastic_encoder = true;
      s.ib_active = true;
      s.payload_dim = latent_dim;
      s.message_bits = float_payload_bits;
      break;
    case MethodKind::kScheduled:
      s.uses_vq = true;
      s.payload_dim = latent_dim;
      s.message_bits = token_bits;
      break;
    case MethodKind::kGvq:
      s.learned_gate = true;
      s.uses_vq = true;
      s.stochastic_encoder = true;
      s.ib_active = true;
      s.gate_loss_active = true;
      s.constraint_active = true;
      s.payload_dim = latent_dim;
      s.message_bits = token_bits;
      break;
  }
  return s;
}

// Send decision for the fixed-policy variants. Learned gates never land here.
inline bool baseline_gate(const BaselineVariant& variant, int t, RngStream& rng) {
  switch (variant.kind) {
    case MethodKind::kNoComm: return false;
    case MethodKind::kFullComm: return true;
    case MethodKind::kRandomGate: return rng.bernoulli(variant.rate);
    case MethodKind::kScheduled: return t % variant.k == 0;
    default:
      throw ContractError("baseline_gate: variant has a learned or always-on gate");
  }
}

struct AttentionResult {
  std::vector<double> out;
  std::vector<double> weights;
};

// Scaled dot-product pooling: softmax(q . k_j / sqrt(dim)) over senders,
// then the weighted sum of values. Empty input pools to a zero vector.
inline AttentionResult attention_aggregate(const std::vector<double>& query,
                                           const std::vector<std::vector<double>>& keys,
                                           const std::vector<std::vector<double>>& values,
                                           int value_dim) {
  if (keys.size() != values.size()) throw ContractError("attention: keys/values misaligned");
  AttentionResult r;
  r.out.assign(value_dim, 0.0);
  if (keys.empty()) return r;
  double scale = 1.0 / std::sqrt(static_cast<double>(query.size()));
  std::vector<double> scores(keys.size());
  double mx = 0.0;
  for (std::size_t j = 0; j < keys.size(); ++j) {
    if (keys[j].size() != query.size()) throw ContractError("attention: key dim mismatch");
    if (static_cast<int>(values[j].size()) != value_dim)
      throw ContractError("attention: value dim mismatch");
    double dot = 0.0;
    for (std::size_t i = 0; i < query.size(); ++i) dot += query[i] * keys[j][i];
    scores[j] = dot * scale;
    mx = j == 0 ? scores[j] : std::max(mx, scores[j]);
  }
  double z = 0.0;
  for (double s : scores) z += std::exp(s - mx);
  r.weights.resize(keys.size());
  for (std::size_t j = 0; j < keys.size(); ++j) {
    r.weights[j] = std::exp(scores[j] - mx) / z;
    for (int i = 0; i < value_dim; ++i) r.out[i] += r.weights[j] * values[j][i];
  }
  return r;
}

// Tape twin of attention_aggregate for the batch rebuild. Keys, values and
// the query are all tape nodes, so gradients reach the sender latents and
// the receiver's query projection. Returns the pooled vector node.
inline Var attention_aggregate(GradTape& t, Var query, const std::vector<Var>& keys,
                               const std::vector<Var>& values, int value_dim) {
  if (keys.size() != values.size()) throw ContractError("attention: keys/values misaligned");
  if (keys.empty()) return t.leaf(std::vector<double>(value_dim, 0.0));
  double scale = 1.0 / std::sqrt(static_cast<double>(t.value(query).size()));
  std::vector<Var> scores(keys.size());
  for (std::size_t j = 0; j < keys.size(); ++j) scores[j] = t.scale(t.dot(query, keys[j]), scale);
  Var weights = t.exp_op(t.log_softmax(t.concat(scores)));
  Var out = t.scale_by(values[0], t.pick(weights, 0));
  for (std::size_t j = 1; j < keys.size(); ++j)
    out = t.add(out, t.scale_by(values[j], t.pick(weights, static_cast<int>(j))));
  return out;
}

}  // namespace gvq
