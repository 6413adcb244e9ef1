#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "gvq/core/error.hpp"
#include "gvq/core/tensor.hpp"

namespace gvq {

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::int64_t step = 0;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
};

// One bias-corrected Adam update over the full parameter set. Every
// parameter must have a gradient entry (zero tensors are fine); a missing or
// stray entry is a caller bug. The step counter advances once per call, not
// per tensor.
inline void adam_step(ParamSet& params, const std::map<std::string, Tensor>& grads,
                      AdamState& state, const AdamConfig& cfg) {
  for (const auto& [name, g] : grads)
    if (params.find(name) == params.end())
      throw ContractError("adam_step: gradient for unknown parameter " + name);
  state.step += 1;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (auto& [name, p] : params) {
    auto gi = grads.find(name);
    if (gi == grads.end()) throw ContractError("adam_step: missing gradient for " + name);
    const Tensor& g = gi->second;
    if (g.numel() != p.numel()) throw ContractError("adam_step: gradient shape mismatch for " + name);
    Tensor& m = state.m.try_emplace(name, Tensor::zeros(p.shape)).first->second;
    Tensor& v = state.v.try_emplace(name, Tensor::zeros(p.shape)).first->second;
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * g.data[i];
      v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * g.data[i] * g.data[i];
      double mhat = m.data[i] / bc1;
      double vhat = v.data[i] / bc2;
      p.data[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

// Global-norm gradient clipping; returns the pre-clip norm.
inline double clip_gradients(std::map<std::string, Tensor>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads)
    for (double x : g.data) sq += x * x;
  double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    double s = max_norm / norm;
    for (auto& [name, g] : grads)
      for (double& x : g.data) x *= s;
  }
  return norm;
}

}  // namespace gvq
