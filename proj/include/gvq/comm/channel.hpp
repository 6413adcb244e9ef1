#pragma once

#include <string>
#include <vector>

#include "gvq/comm/decoder.hpp"
#include "gvq/core/error.hpp"
#include "gvq/core/rng.hpp"

namespace gvq {

struct ChannelModel {
  enum class Kind { kPerfect, kIidLoss, kGilbertElliott, kFixedDelay };
  Kind kind = Kind::kPerfect;
  double loss_rate = 0.0;  // iid_loss
  double p_good_to_bad = 0.1;
  double p_bad_to_good = 0.3;
  double loss_in_bad = 0.5;
  int delay_steps = 1;  // fixed_delay; 0 and 1 both mean next-step arrival

  void validate() const {
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob(loss_rate) || !prob(p_good_to_bad) || !prob(p_bad_to_good) || !prob(loss_in_bad))
      throw ConfigError("channel: probabilities must lie in [0,1]");
    if (delay_steps < 0) throw ConfigError("channel: delay must be non-negative");
  }

  static ChannelModel perfect() { return ChannelModel{}; }
  static ChannelModel iid_loss(double rate) {
    ChannelModel m;
    m.kind = Kind::kIidLoss;
    m.loss_rate = rate;
    return m;
  }
  static ChannelModel gilbert_elliott(double p_gb, double p_bg, double loss_bad) {
    ChannelModel m;
    m.kind = Kind::kGilbertElliott;
    m.p_good_to_bad = p_gb;
    m.p_bad_to_good = p_bg;
    m.loss_in_bad = loss_bad;
    return m;
  }
  static ChannelModel fixed_delay(int steps) {
    ChannelModel m;
    m.kind = Kind::kFixedDelay;
    m.delay_steps = steps;
    return m;
  }
};

// One transmission = one (token, recipient) pair. Broadcast fan-out happens
// before the channel; loss is sampled per transmission.
struct Transmission {
  MessageToken token;
  int recipient = -1;
};

struct ChannelState {
  bool bad = false;  // Gilbert-Elliott chain state
};

struct ChannelResult {
  std::vector<Transmission> delivered;
  std::vector<Transmission> still_pending;  // fixed_delay tokens not yet due
};

// Resolves pending transmissions at the start of `current_step`. The
// Gilbert-Elliott chain advances exactly once per call (one call per step),
// consuming one draw whether or not traffic exists; loss draws happen only
// in the bad state. Delivered is always a subset of pending.
inline ChannelResult channel_apply(const std::vector<Transmission>& pending,
                                   const ChannelModel& model, ChannelState& state,
                                   RngStream& rng, int current_step) {
  model.validate();
  ChannelResult out;
  switch (model.kind) {
    case ChannelModel::Kind::kPerfect:
      out.delivered = pending;
      return out;
    case ChannelModel::Kind::kIidLoss:
      for (const auto& tr : pending)
        if (!rng.bernoulli(model.loss_rate)) out.delivered.push_back(tr);
      return out;
    case ChannelModel::Kind::kGilbertElliott: {
      double flip = state.bad ? model.p_bad_to_good : model.p_good_to_bad;
      if (rng.bernoulli(flip)) state.bad = !state.bad;
      for (const auto& tr : pending) {
        if (state.bad && rng.bernoulli(model.loss_in_bad)) continue;
        out.delivered.push_back(tr);
      }
      return out;
    }
    case ChannelModel::Kind::kFixedDelay: {
      int lag = std::max(1, model.delay_steps);
      for (const auto& tr : pending) {
        if (tr.token.send_step + lag <= current_step)
          out.delivered.push_back(tr);
        else
          out.still_pending.push_back(tr);
      }
      return out;
    }
  }
  throw ContractError("channel_apply: bad kind");
}

// Per-agent queue of delivered tokens awaiting pickup at step start.
class Mailbox {
 public:
  explicit Mailbox(int num_agents) : boxes_(num_agents) {}

  void put(const Transmission& tr, int deliver_step) {
    if (tr.recipient < 0 || tr.recipient >= static_cast<int>(boxes_.size()))
      throw ContractError("mailbox: bad recipient");
    boxes_[tr.recipient].push_back({tr.token, deliver_step});
  }

  // Tokens visible to `agent` at the start of `current_step`.
  std::vector<MessageToken> take(int agent, int current_step) {
    if (agent < 0 || agent >= static_cast<int>(boxes_.size()))
      throw ContractError("mailbox: bad agent");
    std::vector<MessageToken> out;
    for (const auto& [tok, step] : boxes_[agent]) {
      if (step > current_step) throw ContractError("mailbox: token from the future");
      out.push_back(tok);
    }
    boxes_[agent].clear();
    return out;
  }

 private:
  std::vector<std::vector<std::pair<MessageToken, int>>> boxes_;
};

inline std::string channel_kind_name(ChannelModel::Kind k) {
  switch (k) {
    case ChannelModel::Kind::kPerfect: return "perfect";
    case ChannelModel::Kind::kIidLoss: return "iid_loss";
    case ChannelModel::Kind::kGilbertElliott: return "gilbert_elliott";
    case ChannelModel::Kind::kFixedDelay: return "fixed_delay";
  }
  throw ContractError("channel_kind_name: bad kind");
}

inline ChannelModel::Kind channel_kind_from_name(const std::string& s) {
  if (s == "perfect") return ChannelModel::Kind::kPerfect;
  if (s == "iid_loss") return ChannelModel::Kind::kIidLoss;
  if (s == "gilbert_elliott") return ChannelModel::Kind::kGilbertElliott;
  if (s == "fixed_delay") return ChannelModel::Kind::kFixedDelay;
  throw ConfigError("channel: unknown kind '" + s + "'");
}

}  // namespace gvq
