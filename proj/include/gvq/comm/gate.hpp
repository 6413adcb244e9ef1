#pragma once

#include <vector>

#include "gvq/comm/context.hpp"
#include "gvq/core/mlp.hpp"
#include "gvq/core/rng.hpp"

namespace gvq {

enum class GateMode { kTrain, kEval };

// Gate head: a small MLP with a sigmoid output reading (observation
// features, policy hidden activations, comm context).
struct GateHead {
  MlpSpec spec;
  std::string prefix = "gate";
  double tau_gate = 0.5;
  // Output-layer bias at init. Positive values open the gate early: the gate
  // only receives policy gradient through messages that were actually sent,
  // so a gate that closes before the decoder is useful can never recover.
  double init_bias = 0.0;

  static GateHead make(int obs_dim, int hidden_dim, int context_dim, int gate_hidden,
                       double tau_gate, double init_bias) {
    GateHead g;
    g.spec = MlpSpec::hidden(obs_dim + hidden_dim + context_dim, {gate_hidden, gate_hidden}, 1,
                             Activation::kRelu, Activation::kSigmoid);
    g.tau_gate = tau_gate;
    g.init_bias = init_bias;
    return g;
  }
};

struct GateOutput {
  double logit = 0.0;
  double probability = 0.0;    // sigmoid(logit)
  double relaxed_sample = 0.0; // train: relaxed binary sample; eval: probability
  bool hard_decision = false;
  double g0 = 0.0, g1 = 0.0;   // gumbel noise pair recorded for replay (train mode)
};

inline std::vector<double> gate_input(const std::vector<double>& obs_features,
                                      const std::vector<double>& hidden,
                                      const CommContext& context) {
  std::vector<double> in = obs_features;
  in.insert(in.end(), hidden.begin(), hidden.end());
  auto ctx = context.features();
  in.insert(in.end(), ctx.begin(), ctx.end());
  return in;
}

// Relaxed binary sample sigma((logit + g1 - g0)/tau); equals the two-class
// softmax over (logit + g1, g0) evaluated on the send class.
inline double gumbel_binary_sample(double logit, double temperature, double g0, double g1) {
  if (temperature <= 0.0) throw ContractError("gumbel_binary_sample: temperature must be positive");
  return GradTape::sigmoid_val((logit + g1 - g0) / temperature);
}

// Whether to send this step. Train mode draws one gumbel pair and thresholds
// the relaxed sample (gradients later flow through the replayed relaxed
// path); eval mode thresholds the probability and consumes no randomness.
// A tie at exactly tau_gate means silence.
inline GateOutput gate_decision(const ParamSet& params, const GateHead& head,
                                const std::vector<double>& obs_features,
                                const std::vector<double>& hidden, const CommContext& context,
                                double temperature, GateMode mode, RngStream* rng) {
  std::vector<double> in = gate_input(obs_features, hidden, context);
  if (static_cast<int>(in.size()) != head.spec.input_dim())
    throw ConfigError("gate_decision: input dim " + std::to_string(in.size()) +
                      " does not match configured " + std::to_string(head.spec.input_dim()));
  auto fwd = mlp_forward(params, head.spec, head.prefix, in);
  GateOutput out;
  out.logit = fwd.out_preact[0];
  out.probability = fwd.out[0];
  if (mode == GateMode::kTrain) {
    if (!rng) throw ContractError("gate_decision: train mode needs an rng");
    if (temperature <= 0.0) throw ContractError("gate_decision: temperature must be positive");
    out.g0 = rng->gumbel();
    out.g1 = rng->gumbel();
    out.relaxed_sample = gumbel_binary_sample(out.logit, temperature, out.g0, out.g1);
    out.hard_decision = out.relaxed_sample > head.tau_gate;
  } else {
    out.relaxed_sample = out.probability;
    out.hard_decision = out.probability > head.tau_gate;
  }
  return out;
}

}  // namespace gvq
