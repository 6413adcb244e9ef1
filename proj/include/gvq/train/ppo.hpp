#pragma once

#include <cmath>
#include <vector>

#include "gvq/core/error.hpp"

namespace gvq {

// One agent-step of experience. Everything the batch rebuild needs is stored
// as plain values: inputs, sampled noise, and cross-references to the sender
// transitions whose messages arrived this step. Hidden activations are
// recorded as constants, so the rebuild never backpropagates across steps
// except along the message path.
struct Transition {
  std::vector<double> obs;
  std::vector<double> hidden_prev;
  std::vector<double> context;  // gate context features at decision time

  int action = 0;
  double old_logp = 0.0;
  double value = 0.0;
  double reward = 0.0;  // team reward observed at this step

  bool sent = false;
  bool gate_hard = false;
  double gate_prob = 0.0;
  double gate_relaxed = 0.0;
  double g0 = 0.0, g1 = 0.0;  // gumbel pair replayed in the rebuild
  double temperature = 1.0;
  std::vector<double> z;    // rollout latent (also feeds the codebook EMA)
  std::vector<double> eps;  // gaussian noise replayed in the rebuild
  int token = -1;

  std::vector<int> delivered_from;  // episode-local indices of sender transitions

  int agent = 0;
  int step = 0;

  double advantage = 0.0;
  double ret = 0.0;
};

struct EpisodeTrajectory {
  std::vector<Transition> steps;  // (step, agent) order; senders precede receivers
  double bits = 0.0;
  double episode_return = 0.0;
  bool success = false;
  int env_steps = 0;
};

struct TrajectoryBatch {
  std::vector<EpisodeTrajectory> episodes;

  int transitions() const {
    int n = 0;
    for (const auto& e : episodes) n += static_cast<int>(e.steps.size());
    return n;
  }

  void clear() { episodes.clear(); }
};

// Generalized advantage estimation per agent stream. Every stream bootstraps
// zero at its end: episodes terminate at the horizon or earlier, and an
// agent that dies mid-episode simply has a shorter stream.
inline void compute_gae(TrajectoryBatch& batch, double discount, double gae_lambda,
                        int num_agents) {
  for (auto& ep : batch.episodes) {
    for (int a = 0; a < num_agents; ++a) {
      double next_value = 0.0;
      double adv = 0.0;
      for (int i = static_cast<int>(ep.steps.size()) - 1; i >= 0; --i) {
        Transition& tr = ep.steps[i];
        if (tr.agent != a) continue;
        if (!std::isfinite(tr.reward))
          throw TrainingAbort("compute_gae: non-finite reward in batch");
        double delta = tr.reward + discount * next_value - tr.value;
        adv = delta + discount * gae_lambda * adv;
        tr.advantage = adv;
        tr.ret = adv + tr.value;
        next_value = tr.value;
      }
    }
  }
}

// Batch-level advantage normalization (population std). A degenerate batch
// normalizes to zeros rather than blowing up.
inline void normalize_advantages(TrajectoryBatch& batch) {
  double sum = 0.0;
  int n = 0;
  for (auto& ep : batch.episodes)
    for (auto& tr : ep.steps) {
      sum += tr.advantage;
      ++n;
    }
  if (n == 0) return;
  double mean = sum / n;
  double var = 0.0;
  for (auto& ep : batch.episodes)
    for (auto& tr : ep.steps) {
      double d = tr.advantage - mean;
      var += d * d;
    }
  double sd = std::sqrt(var / n);
  for (auto& ep : batch.episodes)
    for (auto& tr : ep.steps) {
      tr.advantage = (tr.advantage - mean) / (sd + 1e-8);
      if (std::isnan(tr.advantage)) throw TrainingAbort("NaN in advantages");
    }
}

// Component values of the most recent optimizer step, reported per batch.
struct PpoDiagnostics {
  double rl = 0.0;
  double vq = 0.0;
  double ib = 0.0;
  double gate = 0.0;
  double constraint = 0.0;
  double total = 0.0;
  double entropy = 0.0;
  double grad_norm = 0.0;  // pre-clip global norm of the last epoch
  int epochs = 0;
};

}  // namespace gvq
