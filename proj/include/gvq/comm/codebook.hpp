#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "gvq/core/error.hpp"
#include "gvq/core/rng.hpp"
#include "gvq/core/tape.hpp"

namespace gvq {

// Shared quantization codebook, learned by exponential moving averages
// rather than gradients.
struct Codebook {
  int K = 16;
  int d = 64;
  double gamma = 0.99;
  std::vector<double> vectors;  // K x d row-major
  std::vector<double> usage;    // per-code EMA of assignment counts

  static Codebook init(int K, int d, double gamma, RngStream& rng) {
    if (K < 2) throw ConfigError("codebook: K must be at least 2");
    if (d < 1) throw ConfigError("codebook: d must be positive");
    if (gamma <= 0.0 || gamma >= 1.0) throw ConfigError("codebook: gamma must be in (0,1)");
    Codebook cb;
    cb.K = K;
    cb.d = d;
    cb.gamma = gamma;
    cb.vectors.resize(static_cast<std::size_t>(K) * d);
    for (double& v : cb.vectors) v = rng.normal(0.0, 0.1);
    cb.usage.assign(K, 1.0);
    return cb;
  }

  const double* row(int k) const { return vectors.data() + static_cast<std::size_t>(k) * d; }
  double* row(int k) { return vectors.data() + static_cast<std::size_t>(k) * d; }

  std::vector<double> code(int k) const {
    if (k < 0 || k >= K) throw ContractError("codebook: index out of range");
    return std::vector<double>(row(k), row(k) + d);
  }

  void validate() const {
    if (K < 2) throw ConfigError("codebook: K must be at least 2");
    if (static_cast<int>(vectors.size()) != K * d || static_cast<int>(usage.size()) != K)
      throw ConfigError("codebook: inconsistent sizes");
    for (double v : vectors)
      if (!std::isfinite(v)) throw ConfigError("codebook: non-finite vector entry");
    for (double u : usage)
      if (!(u >= 0.0)) throw ConfigError("codebook: negative usage");
  }

  nlohmann::json to_json() const {
    return {{"K", K}, {"d", d}, {"gamma", gamma}, {"vectors", vectors}, {"usage", usage}};
  }

  static Codebook from_json(const nlohmann::json& j) {
    Codebook cb;
    cb.K = j.at("K").get<int>();
    cb.d = j.at("d").get<int>();
    cb.gamma = j.at("gamma").get<double>();
    cb.vectors = j.at("vectors").get<std::vector<double>>();
    cb.usage = j.at("usage").get<std::vector<double>>();
    cb.validate();
    return cb;
  }
};

// Each message costs log2(K) bits on the wire: 4 bits for the default K=16.
inline double message_bits(const Codebook& cb) { return std::log2(static_cast<double>(cb.K)); }

struct QuantizeResult {
  int index = 0;
  std::vector<double> quantized;
};

// Nearest code by Euclidean distance; exact ties go to the lowest index.
inline QuantizeResult quantize_nearest(const Codebook& cb, const std::vector<double>& z) {
  if (cb.K < 1 || cb.vectors.empty()) throw ConfigError("quantize: empty codebook");
  if (static_cast<int>(z.size()) != cb.d) throw ContractError("quantize: latent dim mismatch");
  int best = 0;
  double best_sq = 0.0;
  for (int k = 0; k < cb.K; ++k) {
    const double* c = cb.row(k);
    double sq = 0.0;
    for (int i = 0; i < cb.d; ++i) {
      double diff = z[i] - c[i];
      sq += diff * diff;
    }
    if (k == 0 || sq < best_sq) {
      best = k;
      best_sq = sq;
    }
  }
  QuantizeResult r;
  r.index = best;
  r.quantized = cb.code(best);
  return r;
}

// Tape node for the quantizer: forward emits the selected code, backward
// passes the incoming gradient to z unchanged (straight-through). The code
// itself receives no gradient; the codebook learns by EMA only.
inline Var quantize_st(GradTape& t, const Codebook& cb, Var z, int* index_out = nullptr,
                       Var* code_out = nullptr) {
  QuantizeResult r = quantize_nearest(cb, t.value(z));
  if (index_out) *index_out = r.index;
  Var code = t.leaf(r.quantized);
  if (code_out) *code_out = code;
  return t.straight_through(code, z);
}

// EMA update over one batch of assignments. Counts and vector sums are
// accumulated per code, then both EMAs advance; the freshly updated usage is
// the denominator for the vector pull. Codes whose usage falls below the
// dead threshold are reseeded from the batch (deterministically keyed by the
// code index, so training stays replayable).
constexpr double kDeadCodeThreshold = 0.01;

inline Codebook codebook_ema_update(const Codebook& cb, const std::vector<std::vector<double>>& batch_z,
                                     const std::vector<int>& batch_assignments) {
  if (batch_z.size() != batch_assignments.size())
    throw ContractError("codebook_ema_update: batch size mismatch");
  Codebook out = cb;
  std::vector<double> count(cb.K, 0.0);
  std::vector<double> sum(static_cast<std::size_t>(cb.K) * cb.d, 0.0);
  for (std::size_t i = 0; i < batch_z.size(); ++i) {
    int k = batch_assignments[i];
    if (k < 0 || k >= cb.K) throw ContractError("codebook_ema_update: assignment out of range");
    if (static_cast<int>(batch_z[i].size()) != cb.d)
      throw ContractError("codebook_ema_update: latent dim mismatch");
    count[k] += 1.0;
    double* s = sum.data() + static_cast<std::size_t>(k) * cb.d;
    for (int j = 0; j < cb.d; ++j) s[j] += batch_z[i][j];
  }
  for (int k = 0; k < cb.K; ++k) {
    out.usage[k] = cb.gamma * cb.usage[k] + (1.0 - cb.gamma) * count[k];
    const double* s = sum.data() + static_cast<std::size_t>(k) * cb.d;
    double* c = out.row(k);
    const double* prev = cb.row(k);
    for (int j = 0; j < cb.d; ++j) {
      double pull = out.usage[k] > 0.0 ? s[j] / out.usage[k] : 0.0;
      c[j] = cb.gamma * prev[j] + (1.0 - cb.gamma) * pull;
    }
  }
  if (!batch_z.empty()) {
    for (int k = 0; k < cb.K; ++k) {
      if (out.usage[k] >= kDeadCodeThreshold) continue;
      const auto& z = batch_z[(static_cast<std::size_t>(k) * 2654435761ull) % batch_z.size()];
      double* c = out.row(k);
      for (int j = 0; j < cb.d; ++j) c[j] = z[j];
      out.usage[k] = 1.0;
    }
  }
  return out;
}

// Usage-distribution health: entropy in bits of the normalized usage and the
// fraction of codes with under a tenth of uniform share.
struct CodebookHealth {
  double usage_entropy_bits = 0.0;
  double dead_fraction = 0.0;
  std::vector<double> shares;  // normalized usage histogram, zeros when unused
};

inline CodebookHealth codebook_health(const std::vector<double>& usage) {
  if (usage.empty()) throw ContractError("codebook_health: empty usage");
  double total = 0.0;
  for (double u : usage) {
    if (u < 0.0) throw ContractError("codebook_health: negative usage");
    total += u;
  }
  CodebookHealth h;
  h.shares.reserve(usage.size());
  int dead = 0;
  double uniform_share = 1.0 / static_cast<double>(usage.size());
  for (double u : usage) {
    double p = total > 0.0 ? u / total : 0.0;
    h.shares.push_back(p);
    if (p > 0.0) h.usage_entropy_bits -= p * std::log2(p);
    if (p < uniform_share / 10.0) ++dead;
  }
  h.dead_fraction = static_cast<double>(dead) / static_cast<double>(usage.size());
  return h;
}

}  // namespace gvq
