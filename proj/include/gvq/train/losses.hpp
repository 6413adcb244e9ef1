#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "gvq/core/error.hpp"
#include "gvq/core/tape.hpp"

namespace gvq {

// Weights of the composite training objective. lambda_* scale whole loss
// terms; beta_vq, beta_ib and alpha_gate live inside their terms, so the
// gate contribution to the total is lambda_gate * alpha_gate * sum(p).
struct LossWeights {
  double lambda_vq = 1.0;
  double lambda_ib = 0.01;
  double lambda_gate = 0.001;
  double beta_vq = 0.25;
  double beta_ib = 0.01;
  double alpha_gate = 0.001;
  double lambda_c = 0.01;

  void validate() const {
    const double vals[] = {lambda_vq, lambda_ib, lambda_gate, beta_vq,
                           beta_ib,   alpha_gate, lambda_c};
    for (double v : vals)
      if (!(v >= 0.0) || !std::isfinite(v))
        throw ConfigError("loss weights must be finite and non-negative");
  }
};

enum class ConstraintMode { kSoft, kPrimalDual };

inline const char* constraint_mode_name(ConstraintMode m) {
  return m == ConstraintMode::kSoft ? "soft" : "primal_dual";
}

inline ConstraintMode constraint_mode_from_name(const std::string& s) {
  if (s == "soft") return ConstraintMode::kSoft;
  if (s == "primal_dual") return ConstraintMode::kPrimalDual;
  throw ConfigError("unknown constraint mode: " + s);
}

// Budget bookkeeping for the bandwidth constraint. cost_ema tracks expected
// episode cost; the first observed episode initializes it directly so the
// multiplier reacts to real costs instead of a zero prior.
constexpr double kCostEmaDecay = 0.95;

struct ConstraintState {
  ConstraintMode mode = ConstraintMode::kSoft;
  double budget = 800.0;  // bits per episode
  double dual = 0.0;      // multiplier, kept >= 0 by projection
  double dual_lr = 0.001;
  double cost_ema = 0.0;
  bool cost_seen = false;

  void validate() const {
    if (!(budget > 0.0)) throw ConfigError("constraint: budget must be positive");
    if (!(dual >= 0.0)) throw ConfigError("constraint: dual must be non-negative");
    if (!(dual_lr >= 0.0)) throw ConfigError("constraint: dual_lr must be non-negative");
  }
};

// One dual ascent step on the multiplier after an episode's cost lands.
inline ConstraintState dual_update(ConstraintState state, double observed_cost) {
  if (state.mode != ConstraintMode::kPrimalDual)
    throw ContractError("dual_update: constraint mode is not primal_dual");
  if (!std::isfinite(observed_cost) || observed_cost < 0.0)
    throw ContractError("dual_update: bad observed cost");
  if (state.cost_seen) {
    state.cost_ema = kCostEmaDecay * state.cost_ema + (1.0 - kCostEmaDecay) * observed_cost;
  } else {
    state.cost_ema = observed_cost;
    state.cost_seen = true;
  }
  state.dual = std::max(0.0, state.dual + state.dual_lr * (state.cost_ema - state.budget));
  return state;
}

// --- scalar loss terms -----------------------------------------------------

inline double vq_loss_value(const std::vector<double>& z, const std::vector<double>& q,
                            double beta_vq) {
  if (z.size() != q.size()) throw ContractError("vq_loss: dimension mismatch");
  double sq = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    double diff = z[i] - q[i];
    sq += diff * diff;
  }
  return sq + beta_vq * sq;
}

inline double kl_std_normal_value(const std::vector<double>& mean,
                                  const std::vector<double>& log_variance) {
  if (mean.size() != log_variance.size()) throw ContractError("kl: dimension mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < mean.size(); ++i)
    acc += mean[i] * mean[i] + std::exp(log_variance[i]) - 1.0 - log_variance[i];
  return 0.5 * acc;
}

inline double ib_loss_value(const std::vector<double>& mean,
                            const std::vector<double>& log_variance, double reward_prediction,
                            double actual_reward, double beta) {
  double err = reward_prediction - actual_reward;
  return beta * kl_std_normal_value(mean, log_variance) + 0.5 * err * err;
}

inline double gate_loss_value(const std::vector<double>& probabilities, double alpha) {
  double s = 0.0;
  for (double p : probabilities) {
    if (p < 0.0 || p > 1.0) throw ContractError("gate_loss: probability outside [0,1]");
    s += p;
  }
  return alpha * s;
}

inline double constraint_penalty_value(double expected_cost, double budget, double lambda_c) {
  if (!(budget > 0.0)) throw ContractError("constraint_penalty: budget must be positive");
  double over = std::max(0.0, expected_cost - budget);
  return lambda_c * over * over;
}

inline double total_loss_value(double rl, double vq, double ib, double gate, double constraint,
                               const LossWeights& w) {
  const struct {
    const char* name;
    double v;
  } parts[] = {{"rl", rl}, {"vq", vq}, {"ib", ib}, {"gate", gate}, {"constraint", constraint}};
  for (const auto& p : parts)
    if (!std::isfinite(p.v))
      throw TrainingAbort(std::string("total_loss: non-finite ") + p.name +
                          " component: " + std::to_string(p.v));
  return rl + w.lambda_vq * vq + w.lambda_ib * ib + w.lambda_gate * gate + constraint;
}

// --- tape builders ----------------------------------------------------------

// ||z - sg[q]||^2 + beta_vq ||sg[z] - q||^2. The first term reaches only the
// encoder path, the second only the code leaf.
inline Var vq_loss(GradTape& t, Var z, Var code, double beta_vq) {
  Var commit = t.sum(t.square(t.sub(z, t.stop_grad(code))));
  Var pull = t.sum(t.square(t.sub(t.stop_grad(z), code)));
  return t.add(commit, t.scale(pull, beta_vq));
}

// beta * KL(q(z|s) || N(0,I)) + 0.5 (r_hat - r)^2 with r_hat a scalar node.
inline Var ib_loss(GradTape& t, Var mean, Var log_variance, Var reward_prediction,
                   double actual_reward, double beta) {
  Var kl = t.kl_std_normal(mean, log_variance);
  Var err = t.sum(t.square(t.add_scalar(reward_prediction, -actual_reward)));
  return t.add(t.scale(kl, beta), t.scale(err, 0.5));
}

inline Var gate_loss(GradTape& t, const std::vector<Var>& probabilities, double alpha) {
  if (probabilities.empty()) return t.scalar(0.0);
  Var acc = probabilities[0];
  for (std::size_t i = 1; i < probabilities.size(); ++i) acc = t.add(acc, probabilities[i]);
  return t.scale(t.sum(acc), alpha);
}

inline Var constraint_penalty(GradTape& t, Var expected_cost, double budget, double lambda_c) {
  if (!(budget > 0.0)) throw ContractError("constraint_penalty: budget must be positive");
  Var over = t.hinge(t.add_scalar(expected_cost, -budget));
  return t.scale(t.sum(t.square(over)), lambda_c);
}

// Lagrangian term dual * (E[C] - B) with the multiplier held constant.
inline Var dual_penalty(GradTape& t, Var expected_cost, double budget, double dual) {
  return t.scale(t.sum(t.add_scalar(expected_cost, -budget)), dual);
}

inline Var total_loss(GradTape& t, Var rl, Var vq, Var ib, Var gate, Var constraint,
                      const LossWeights& w) {
  // Value-side check reuses the scalar path, including its abort diagnostics.
  total_loss_value(t.value(rl)[0], t.value(vq)[0], t.value(ib)[0], t.value(gate)[0],
                   t.value(constraint)[0], w);
  Var acc = t.add(rl, t.scale(vq, w.lambda_vq));
  acc = t.add(acc, t.scale(ib, w.lambda_ib));
  acc = t.add(acc, t.scale(gate, w.lambda_gate));
  return t.add(acc, constraint);
}

// Exponential interpolation between temperature endpoints.
inline double temperature_schedule(int episode, int total, double tau_start = 1.0,
                                   double tau_end = 0.1) {
  if (episode < 0 || total < 0 || episode > total)
    throw ContractError("temperature_schedule: episode outside [0, total]");
  if (!(tau_start > 0.0) || !(tau_end > 0.0))
    throw ContractError("temperature_schedule: endpoints must be positive");
  if (total == 0) return tau_start;
  double frac = static_cast<double>(episode) / static_cast<double>(total);
  return tau_start * std::pow(tau_end / tau_start, frac);
}

}  // namespace gvq
