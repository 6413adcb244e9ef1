#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <vector>

#include "gvq/core/error.hpp"

namespace gvq {

constexpr double kHistoryDecay = 0.9;
constexpr double kEfficacyDecay = 0.95;
constexpr int kBandwidthWindow = 10;  // steps

// Per-agent gate context: what the agent knows about recent traffic and the
// team's remaining work when deciding whether to talk.
struct CommContext {
  std::vector<double> history_block;   // decayed sum of received token embeddings
  double bandwidth_utilization = 0.0;  // recent bits used / budget, clamped to [0,1]
  double coordination_need = 0.0;      // fraction of targets not yet extracted
  double temporal_efficacy = 0.0;      // EMA of reward change after own sends

  std::vector<double> features() const {
    std::vector<double> f = history_block;
    f.push_back(bandwidth_utilization);
    f.push_back(coordination_need);
    f.push_back(temporal_efficacy);
    return f;
  }

  static int feature_dim(int embed_dim) { return embed_dim + 3; }
};

struct AgedEmbedding {
  std::vector<double> embedding;
  int age = 0;  // steps since receipt, 0 = this step
};

inline CommContext build_context(const std::vector<AgedEmbedding>& received, int embed_dim,
                                 double bits_used_window, double budget,
                                 double targets_remaining_fraction, double efficacy_ema) {
  if (budget <= 0.0) throw ContractError("build_context: budget must be positive");
  CommContext ctx;
  ctx.history_block.assign(embed_dim, 0.0);
  for (const auto& r : received) {
    if (static_cast<int>(r.embedding.size()) != embed_dim)
      throw ContractError("build_context: embedding dim mismatch");
    double w = std::pow(kHistoryDecay, r.age);
    for (int i = 0; i < embed_dim; ++i) ctx.history_block[i] += w * r.embedding[i];
  }
  ctx.bandwidth_utilization = std::clamp(bits_used_window / budget, 0.0, 1.0);
  ctx.coordination_need = targets_remaining_fraction;
  ctx.temporal_efficacy = efficacy_ema;
  return ctx;
}

// Incremental form of build_context used inside rollouts: decaying the
// running history once per step and adding this step's receipts equals the
// explicit age-weighted sum.
class ContextTracker {
 public:
  explicit ContextTracker(int embed_dim) : history_(embed_dim, 0.0) {}

  void begin_step() {
    for (double& h : history_) h *= kHistoryDecay;
    while (static_cast<int>(bits_window_.size()) >= kBandwidthWindow) bits_window_.pop_front();
  }

  void add_received(const std::vector<double>& embedding) {
    if (embedding.size() != history_.size())
      throw ContractError("ContextTracker: embedding dim mismatch");
    for (std::size_t i = 0; i < history_.size(); ++i) history_[i] += embedding[i];
  }

  // Bits this agent spent this step; call once per step.
  void add_bits(double bits) { bits_window_.push_back(bits); }

  // Reward delta observed on the step after one of this agent's sends.
  void update_efficacy(double reward_delta) {
    efficacy_ = kEfficacyDecay * efficacy_ + (1.0 - kEfficacyDecay) * reward_delta;
  }

  CommContext context(double budget, double targets_remaining_fraction) const {
    CommContext ctx;
    ctx.history_block = history_;
    double bits = 0.0;
    for (double b : bits_window_) bits += b;
    ctx.bandwidth_utilization = std::clamp(bits / budget, 0.0, 1.0);
    ctx.coordination_need = targets_remaining_fraction;
    ctx.temporal_efficacy = efficacy_;
    return ctx;
  }

  double efficacy() const { return efficacy_; }

 private:
  std::vector<double> history_;
  std::deque<double> bits_window_;
  double efficacy_ = 0.0;
};

}  // namespace gvq
