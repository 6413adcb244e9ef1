#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "gvq/baselines/variants.hpp"
#include "gvq/comm/channel.hpp"
#include "gvq/comm/codebook.hpp"
#include "gvq/comm/context.hpp"
#include "gvq/comm/decoder.hpp"
#include "gvq/comm/encoder.hpp"
#include "gvq/comm/gate.hpp"
#include "gvq/core/adam.hpp"
#include "gvq/core/checkpoint.hpp"
#include "gvq/core/mlp.hpp"
#include "gvq/core/rng.hpp"
#include "gvq/env/gridworld.hpp"
#include "gvq/env/trace.hpp"
#include "gvq/train/losses.hpp"
#include "gvq/train/ppo.hpp"

namespace gvq {

struct TrainConfig {
  EnvConfig env;
  LossWeights weights;
  ConstraintState constraint;
  BaselineVariant method;
  ChannelModel channel;  // applies to both training rollouts and evaluation

  double discount = 0.99;
  double gae_lambda = 0.95;
  double clip_eps = 0.2;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  int ppo_epochs = 4;
  int batch_size = 512;  // transitions per optimizer batch
  AdamConfig optim;
  double grad_clip_norm = 5.0;

  int total_episodes = 2000;
  double tau_start = 1.0;
  double tau_end = 0.1;
  double tau_gate = 0.5;
  double gate_init_bias = 2.0;  // warm-open gate at init, see GateHead

  int codebook_K = 16;
  int latent_dim = 64;
  double codebook_gamma = 0.99;
  int msg_embed_dim = 64;
  int policy_hidden = 256;
  int encoder_hidden = 128;
  int gate_hidden = 64;
  int decoder_hidden = 128;

  double full_comm_payload_bits = 107.0;  // 25 cells x 3 bits + 4 features x 8 bits

  // Gate-context component switches: message history, bandwidth utilization,
  // coordination need, temporal efficacy. A false entry zeroes that block of
  // the gate input, for component-contribution studies.
  std::array<bool, 4> context_mask{true, true, true, true};

  int eval_episodes = 50;
  int checkpoint_every = 0;  // episodes between checkpoints; 0 = final only
  int trace_every = 0;       // episodes between trace dumps; 0 = none
  int early_stop_patience = 0;  // stagnant episodes before stopping; 0 = off

  std::uint64_t seed = 1;
  std::string out_dir;  // empty = no files written

  void validate() const {
    env.validate();
    weights.validate();
    constraint.validate();
    method.validate();
    channel.validate();
    if (!(discount > 0.0 && discount < 1.0)) throw ConfigError("train: discount must be in (0,1)");
    if (gae_lambda < 0.0 || gae_lambda > 1.0) throw ConfigError("train: gae_lambda must be in [0,1]");
    if (!(clip_eps > 0.0)) throw ConfigError("train: clip_eps must be positive");
    if (ppo_epochs < 1) throw ConfigError("train: ppo_epochs must be at least 1");
    if (batch_size < 1) throw ConfigError("train: batch_size must be at least 1");
    if (total_episodes < 0) throw ConfigError("train: total_episodes must be non-negative");
    if (!(tau_start > 0.0) || !(tau_end > 0.0)) throw ConfigError("train: temperatures must be positive");
    if (!std::isfinite(gate_init_bias)) throw ConfigError("train: gate_init_bias must be finite");
    if (codebook_K < 2) throw ConfigError("train: codebook_K must be at least 2");
    if (latent_dim < 1 || msg_embed_dim < 1) throw ConfigError("train: latent dims must be positive");
    if (policy_hidden < 1 || encoder_hidden < 1 || gate_hidden < 1 || decoder_hidden < 1)
      throw ConfigError("train: hidden widths must be positive");
    if (!(codebook_gamma > 0.0 && codebook_gamma < 1.0))
      throw ConfigError("train: codebook_gamma must be in (0,1)");
    if (!(full_comm_payload_bits > 0.0))
      throw ConfigError("train: full_comm_payload_bits must be positive");
    if (eval_episodes < 0 || checkpoint_every < 0 || trace_every < 0 || early_stop_patience < 0)
      throw ConfigError("train: cadence fields must be non-negative");
  }
};

// Specs of every network in one method stack, derived from the config once.
struct NetBundle {
  MlpSpec policy;
  MlpSpec value;
  MlpSpec reward;  // linear head on z for the bottleneck's reward prediction
  MlpSpec attn_query;
  EncoderHead encoder;
  GateHead gate;
  DecoderHead decoder;
  int obs_dim = kObsFeatures;
  int policy_hidden_dim = 0;
  int context_dim = 0;
};

inline NetBundle build_nets(const TrainConfig& cfg, const MethodStack& stack) {
  NetBundle n;
  n.obs_dim = kObsFeatures;
  n.policy_hidden_dim = cfg.policy_hidden;
  int policy_in = n.obs_dim + cfg.msg_embed_dim;
  n.policy = MlpSpec::hidden(policy_in, {cfg.policy_hidden, cfg.policy_hidden, cfg.policy_hidden},
                             kNumActions, Activation::kRelu, Activation::kIdentity);
  n.value = MlpSpec::hidden(policy_in, {cfg.policy_hidden, cfg.policy_hidden, cfg.policy_hidden}, 1,
                            Activation::kRelu, Activation::kIdentity);
  n.decoder = DecoderHead::make(stack.payload_dim, cfg.decoder_hidden, cfg.msg_embed_dim);
  if (stack.has_encoder())
    n.encoder = EncoderHead::make(n.obs_dim, n.policy_hidden_dim, cfg.encoder_hidden,
                                  cfg.latent_dim);
  if (stack.learned_gate) {
    n.context_dim = CommContext::feature_dim(stack.payload_dim);
    n.gate = GateHead::make(n.obs_dim, n.policy_hidden_dim, n.context_dim, cfg.gate_hidden,
                            cfg.tau_gate, cfg.gate_init_bias);
  }
  if (stack.ib_active)
    n.reward = MlpSpec::hidden(cfg.latent_dim, {}, 1, Activation::kRelu, Activation::kIdentity);
  if (stack.attention_pool)
    n.attn_query = MlpSpec::hidden(n.obs_dim, {}, cfg.latent_dim, Activation::kRelu,
                                   Activation::kIdentity);
  return n;
}

// One shared parameter set drives every agent. Init order is fixed so a seed
// fully determines the weights.
inline ParamSet init_params(const NetBundle& nets, const MethodStack& stack, RngStream& rng) {
  ParamSet p;
  mlp_init(p, nets.policy, "policy", rng);
  mlp_init(p, nets.value, "value", rng);
  mlp_init(p, nets.decoder.spec, "decoder", rng);
  if (stack.has_encoder()) mlp_init(p, nets.encoder.spec, "encoder", rng);
  if (stack.learned_gate) {
    mlp_init(p, nets.gate.spec, "gate", rng);
    int last = nets.gate.spec.layer_count() - 1;
    p[mlp_b_name(nets.gate.prefix, last)].data[0] = nets.gate.init_bias;
  }
  if (stack.ib_active) mlp_init(p, nets.reward, "reward", rng);
  if (stack.attention_pool) mlp_init(p, nets.attn_query, "attnq", rng);
  return p;
}

namespace detail {

inline std::vector<double> stable_log_softmax(const std::vector<double>& logits) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double lse = 0.0;
  for (double v : logits) lse += std::exp(v - mx);
  lse = mx + std::log(lse);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

inline int sample_categorical(const std::vector<double>& log_probs, RngStream& rng) {
  double u = rng.uniform();
  double cum = 0.0;
  for (std::size_t i = 0; i < log_probs.size(); ++i) {
    cum += std::exp(log_probs[i]);
    if (u <= cum) return static_cast<int>(i);
  }
  return static_cast<int>(log_probs.size()) - 1;
}

// Payload vector a receiver sees for a delivered message, looked up from the
// sender's transition record.
inline std::vector<double> payload_of(const Transition& sender, const MethodStack& stack,
                                      const Codebook& cb) {
  if (stack.payload_is_obs) return sender.obs;
  if (stack.uses_vq) return cb.code(sender.token);
  return sender.z;
}

}  // namespace detail

// Rolls one episode with the current parameters. Actions are always sampled
// from the policy distribution (the policy is stochastic; its success rate is
// the quantity we measure). eval_mode switches the gate to a deterministic
// probability threshold and the encoder to its mean, so evaluation randomness
// comes only from action sampling, stochastic baselines, and the channel.
inline EpisodeTrajectory rollout_episode(const ParamSet& params, const Codebook& cb,
                                         const TrainConfig& cfg, const MethodStack& stack,
                                         const NetBundle& nets, std::uint64_t env_seed, double tau,
                                         bool eval_mode, RngStream& act_rng, RngStream& ch_rng,
                                         const ChannelModel& channel, TraceWriter* trace,
                                         int episode_index) {
  EnvConfig env_cfg = cfg.env;
  env_cfg.seed = env_seed;
  EnvState env = env_reset(env_cfg);
  const int N = env_cfg.num_agents;

  std::vector<std::vector<double>> h_prev(N, std::vector<double>(nets.policy_hidden_dim, 0.0));
  std::vector<ContextTracker> trackers;
  trackers.reserve(N);
  for (int i = 0; i < N; ++i) trackers.emplace_back(stack.payload_dim);
  ChannelState ch_state;
  std::vector<Transmission> pending;
  std::map<std::pair<int, int>, int> sent_idx;  // (agent, step) -> transition index

  EpisodeTrajectory ep;
  std::vector<int> prev_senders;
  double prev_team_reward = 0.0;
  bool have_prev = false;

  if (trace) trace->begin_episode(episode_index, env_seed);

  while (!env.done) {
    const int t = env.step;
    ChannelResult cr = channel_apply(pending, channel, ch_state, ch_rng, t);
    pending = std::move(cr.still_pending);

    std::vector<std::vector<MessageToken>> inbox_tokens(N);
    std::vector<std::vector<int>> inbox_refs(N);
    for (const Transmission& tx : cr.delivered) {
      if (tx.recipient < 0 || tx.recipient >= N) throw ContractError("rollout: bad recipient");
      if (!env.agents[tx.recipient].alive()) continue;
      auto it = sent_idx.find({tx.token.sender, tx.token.send_step});
      if (it == sent_idx.end()) throw ContractError("rollout: delivery without sender record");
      inbox_tokens[tx.recipient].push_back(tx.token);
      inbox_refs[tx.recipient].push_back(it->second);
    }

    int remaining = 0;
    for (const auto& tg : env.targets)
      if (!tg.extracted) ++remaining;
    double frac_remaining =
        static_cast<double>(remaining) / static_cast<double>(env.targets.size());

    std::vector<AgentAction> actions(N);
    std::vector<bool> comm(N, false);
    std::vector<int> trace_tokens(N, -1);
    std::vector<Transition> step_transitions;
    std::vector<std::vector<double>> new_hidden(N);
    std::vector<int> senders_this_step;
    double step_bits = 0.0;

    for (int i = 0; i < N; ++i) {
      if (!env.agents[i].alive()) {
        actions[i] = AgentAction{MoveAction::kStay, false};
        continue;
      }
      ContextTracker& tk = trackers[i];
      tk.begin_step();
      std::vector<std::vector<double>> payloads;
      payloads.reserve(inbox_refs[i].size());
      for (int ref : inbox_refs[i]) {
        payloads.push_back(detail::payload_of(ep.steps[ref], stack, cb));
        tk.add_received(payloads.back());
      }
      CommContext ctx = tk.context(cfg.constraint.budget, frac_remaining);
      if (!cfg.context_mask[0])
        std::fill(ctx.history_block.begin(), ctx.history_block.end(), 0.0);
      if (!cfg.context_mask[1]) ctx.bandwidth_utilization = 0.0;
      if (!cfg.context_mask[2]) ctx.coordination_need = 0.0;
      if (!cfg.context_mask[3]) ctx.temporal_efficacy = 0.0;

      std::vector<double> obs = obs_features(env_observe(env, i));
      std::vector<double> embed;
      if (!stack.sends_anything()) {
        embed = decode_payloads(params, nets.decoder, {});
      } else if (stack.attention_pool) {
        std::vector<double> query = mlp_forward(params, nets.attn_query, "attnq", obs).out;
        AttentionResult att = attention_aggregate(query, payloads, payloads, stack.payload_dim);
        auto in = decoder_input_from_pool(att.out, static_cast<double>(payloads.size()));
        embed = mlp_forward(params, nets.decoder.spec, nets.decoder.prefix, in).out;
      } else if (stack.uses_vq) {
        embed = decode_messages(params, nets.decoder, inbox_tokens[i], cb);
      } else {
        embed = decode_payloads(params, nets.decoder, payloads);
      }

      std::vector<double> policy_in = obs;
      policy_in.insert(policy_in.end(), embed.begin(), embed.end());
      MlpValueOut pf = mlp_forward(params, nets.policy, "policy", policy_in);
      MlpValueOut vf = mlp_forward(params, nets.value, "value", policy_in);
      std::vector<double> ls = detail::stable_log_softmax(pf.out);
      int a = detail::sample_categorical(ls, act_rng);
      actions[i] = action_from_id(a);
      new_hidden[i] = pf.last_hidden;

      Transition tr;
      tr.obs = std::move(obs);
      tr.hidden_prev = h_prev[i];
      tr.action = a;
      tr.old_logp = ls[a];
      tr.value = vf.out[0];
      tr.agent = i;
      tr.step = t;
      tr.temperature = tau;
      tr.delivered_from = inbox_refs[i];
      tr.context = ctx.features();

      bool send = false;
      if (stack.sends_anything()) {
        switch (stack.variant.kind) {
          case MethodKind::kGvq: {
            GateOutput go =
                gate_decision(params, nets.gate, tr.obs, h_prev[i], ctx, tau,
                              eval_mode ? GateMode::kEval : GateMode::kTrain,
                              eval_mode ? nullptr : &act_rng);
            tr.gate_prob = go.probability;
            tr.gate_relaxed = go.relaxed_sample;
            tr.gate_hard = go.hard_decision;
            tr.g0 = go.g0;
            tr.g1 = go.g1;
            send = go.hard_decision;
            break;
          }
          case MethodKind::kFullComm:
          case MethodKind::kRandomGate:
          case MethodKind::kScheduled:
            send = baseline_gate(stack.variant, t, act_rng);
            break;
          case MethodKind::kAttentionComm:
          case MethodKind::kIbContinuous:
            send = true;
            break;
          default:
            send = false;
        }
      }
      if (send) {
        if (!stack.payload_is_obs) {
          bool stochastic = stack.stochastic_encoder && !eval_mode;
          EncodeResult er = encode_observation(params, nets.encoder, tr.obs, h_prev[i],
                                               stochastic, stochastic ? &act_rng : nullptr);
          tr.z = std::move(er.z);
          tr.eps = std::move(er.eps);
          if (stack.uses_vq) tr.token = quantize_nearest(cb, tr.z).index;
        }
        tr.sent = true;
        comm[i] = true;
        ep.bits += stack.message_bits;
        step_bits += stack.message_bits;
        tk.add_bits(stack.message_bits);
        senders_this_step.push_back(i);
        trace_tokens[i] = tr.token;
      } else {
        tk.add_bits(0.0);
      }
      step_transitions.push_back(std::move(tr));
    }

    StepResult sr = env_step(env, actions, comm);
    double team_reward = sr.team_reward;

    for (Transition& tr : step_transitions) {
      tr.reward = team_reward;
      int idx = static_cast<int>(ep.steps.size());
      if (tr.sent) {
        sent_idx[{tr.agent, t}] = idx;
        for (int j = 0; j < N; ++j)
          if (j != tr.agent && env.agents[j].alive())
            pending.push_back(Transmission{MessageToken{tr.agent, std::max(tr.token, 0), t}, j});
      }
      ep.steps.push_back(std::move(tr));
    }

    if (have_prev)
      for (int i : prev_senders) trackers[i].update_efficacy(team_reward - prev_team_reward);
    prev_senders = senders_this_step;
    prev_team_reward = team_reward;
    have_prev = true;

    for (int i = 0; i < N; ++i)
      if (!new_hidden[i].empty()) h_prev[i] = std::move(new_hidden[i]);

    ep.episode_return += team_reward;
    if (trace) {
      std::vector<int> ids(N);
      std::vector<double> rewards(N);
      for (int i = 0; i < N; ++i) {
        ids[i] = action_id(actions[i]);
        rewards[i] = sr.agents[i].reward;
      }
      trace->step(t, state_hash(env), ids, comm, trace_tokens, rewards, team_reward, step_bits,
                  sr);
    }
  }

  ep.success = episode_success(env);
  ep.env_steps = env.step;
  if (trace) trace->end_episode(episode_index, ep.success, ep.bits, ep.episode_return, ep.env_steps);
  return ep;
}

namespace detail {

inline Var mean_of(GradTape& t, const std::vector<Var>& terms) {
  if (terms.empty()) return t.scalar(0.0);
  Var acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = t.add(acc, terms[i]);
  return t.scale(acc, 1.0 / static_cast<double>(terms.size()));
}

}  // namespace detail

// One optimizer batch: GAE once, then ppo_epochs rebuilds of the full batch
// graph, each followed by a clipped Adam step. The codebook EMA advances once
// per batch from the rollout latents. Gradients reach the gate through
// replayed relaxed samples and the encoder through the straight-through
// quantizer; hidden states stay constant, so the message links are the only
// cross-step edges.
inline PpoDiagnostics ppo_update(TrajectoryBatch& batch, ParamSet& params, AdamState& adam,
                                 Codebook& cb, const ConstraintState& cs,
                                 const TrainConfig& cfg, const MethodStack& stack,
                                 const NetBundle& nets) {
  PpoDiagnostics diag;
  if (batch.episodes.empty()) return diag;
  compute_gae(batch, cfg.discount, cfg.gae_lambda, cfg.env.num_agents);
  normalize_advantages(batch);
  const LossWeights& w = cfg.weights;
  const int n_tr = batch.transitions();
  const int n_ep = static_cast<int>(batch.episodes.size());

  for (int epoch = 0; epoch < cfg.ppo_epochs; ++epoch) {
    GradTape t;
    std::vector<Var> surr, verr, ent, vq_terms, ib_terms, gate_probs;
    surr.reserve(n_tr);
    verr.reserve(n_tr);
    ent.reserve(n_tr);

    for (const EpisodeTrajectory& e : batch.episodes) {
      std::vector<Var> sent_payload(e.steps.size());
      std::vector<Var> gate_st(e.steps.size());
      for (std::size_t i = 0; i < e.steps.size(); ++i) {
        const Transition& tr = e.steps[i];
        Var obs_leaf = t.leaf(tr.obs);

        // Two views of the inbox. The live view routes through the gate's
        // straight-through multiplier and feeds only the clipped surrogate,
        // so the gate is graded purely by the task objective. The aux view
        // bypasses the gate edge (delivered messages always have hard = 1,
        // so both views are forward-identical) and feeds the value error and
        // entropy bonus: those gradients train the decoder and message
        // content, but through the gate they are pathological. The value
        // error dwarfs the surrogate early and a critic prefers low-variance
        // inputs, and the entropy bonus punishes informative messages (they
        // sharpen the recipient's action distribution); either one slams
        // every gate shut for good.
        std::vector<Var> payloads, payloads_aux;
        payloads.reserve(tr.delivered_from.size());
        payloads_aux.reserve(tr.delivered_from.size());
        for (int ref : tr.delivered_from) {
          Var p = stack.payload_is_obs ? t.leaf(e.steps[ref].obs) : sent_payload[ref];
          if (!p.valid()) throw ContractError("ppo_update: unresolved sender payload");
          payloads_aux.push_back(p);
          if (stack.learned_gate) p = t.scale_by(p, gate_st[ref]);
          payloads.push_back(p);
        }
        auto build_embed = [&](const std::vector<Var>& pay) {
          double count = static_cast<double>(pay.size());
          if (stack.attention_pool) {
            Var q = mlp_forward(t, params, nets.attn_query, "attnq", obs_leaf).out;
            Var pool = attention_aggregate(t, q, pay, pay, stack.payload_dim);
            Var in = t.concat({pool, t.scalar(count)});
            return mlp_forward(t, params, nets.decoder.spec, nets.decoder.prefix, in).out;
          }
          Var pool;
          if (pay.empty()) {
            pool = t.leaf(std::vector<double>(stack.payload_dim, 0.0));
          } else {
            pool = pay[0];
            for (std::size_t j = 1; j < pay.size(); ++j) pool = t.add(pool, pay[j]);
            pool = t.scale(pool, 1.0 / count);
          }
          Var in = t.concat({pool, t.scalar(count)});
          return mlp_forward(t, params, nets.decoder.spec, nets.decoder.prefix, in).out;
        };
        Var embed = build_embed(payloads);
        Var pin = t.concat({obs_leaf, embed});
        Var logits = mlp_forward(t, params, nets.policy, "policy", pin).out;
        Var ls = t.log_softmax(logits);
        Var logp = t.pick(ls, tr.action);
        Var ratio = t.exp_op(t.add_scalar(logp, -tr.old_logp));
        Var s1 = t.scale(ratio, tr.advantage);
        Var s2 = t.scale(t.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps), tr.advantage);
        surr.push_back(t.minimum(s1, s2));
        Var pin_aux = pin;
        Var ls_aux = ls;
        if (stack.learned_gate && !tr.delivered_from.empty()) {
          pin_aux = t.concat({obs_leaf, build_embed(payloads_aux)});
          ls_aux = t.log_softmax(mlp_forward(t, params, nets.policy, "policy", pin_aux).out);
        }
        Var v = mlp_forward(t, params, nets.value, "value", pin_aux).out;
        verr.push_back(t.sum(t.square(t.add_scalar(v, -tr.ret))));
        ent.push_back(t.scale(t.sum(t.mul(t.exp_op(ls_aux), ls_aux)), -1.0));

        Var hid_leaf;
        if (tr.sent && stack.has_encoder()) {
          hid_leaf = t.leaf(tr.hidden_prev);
          Var ein = t.concat({obs_leaf, hid_leaf});
          MlpTapeOut ef = mlp_forward(t, params, nets.encoder.spec, nets.encoder.prefix, ein);
          int d = nets.encoder.latent_dim;
          Var mean = t.slice(ef.out, 0, d);
          Var logvar = t.slice(ef.out, d, d);
          Var z = (stack.stochastic_encoder && !tr.eps.empty())
                      ? t.gaussian_reparam(mean, logvar, tr.eps)
                      : mean;
          if (stack.uses_vq) {
            Var code;
            Var q = quantize_st(t, cb, z, nullptr, &code);
            sent_payload[i] = q;
            vq_terms.push_back(vq_loss(t, z, code, w.beta_vq));
          } else {
            sent_payload[i] = z;
          }
          if (stack.ib_active) {
            Var rp = mlp_forward(t, params, nets.reward, "reward", z).out;
            ib_terms.push_back(ib_loss(t, mean, logvar, rp, tr.reward, w.beta_ib));
          }
        }
        if (stack.learned_gate) {
          if (!hid_leaf.valid()) hid_leaf = t.leaf(tr.hidden_prev);
          Var gin = t.concat({obs_leaf, hid_leaf, t.leaf(tr.context)});
          MlpTapeOut gf = mlp_forward(t, params, nets.gate.spec, nets.gate.prefix, gin);
          Var relaxed = t.gumbel_binary(gf.out_preact, tr.temperature, tr.g0, tr.g1);
          gate_st[i] = t.straight_through(t.scalar(tr.gate_hard ? 1.0 : 0.0), relaxed);
          gate_probs.push_back(gf.out);
        }
      }
    }

    Var rl = t.add(t.scale(detail::mean_of(t, surr), -1.0),
                   t.scale(detail::mean_of(t, verr), cfg.value_coef));
    Var mean_entropy = detail::mean_of(t, ent);
    rl = t.add(rl, t.scale(mean_entropy, -cfg.entropy_coef));
    Var vq_c = detail::mean_of(t, vq_terms);
    Var ib_c = detail::mean_of(t, ib_terms);
    Var gate_c = t.scalar(0.0);
    Var cons = t.scalar(0.0);
    if (stack.learned_gate && !gate_probs.empty()) {
      Var sp = gate_probs[0];
      for (std::size_t j = 1; j < gate_probs.size(); ++j) sp = t.add(sp, gate_probs[j]);
      gate_c = t.scale(sp, w.alpha_gate / static_cast<double>(n_tr));
      if (stack.constraint_active) {
        Var expected_cost = t.scale(sp, stack.message_bits / static_cast<double>(n_ep));
        cons = cs.mode == ConstraintMode::kSoft
                   ? constraint_penalty(t, expected_cost, cs.budget, w.lambda_c)
                   : dual_penalty(t, expected_cost, cs.budget, cs.dual);
      }
    }
    Var total = total_loss(t, rl, vq_c, ib_c, gate_c, cons, w);

    diag.rl = t.value(rl)[0];
    diag.vq = t.value(vq_c)[0];
    diag.ib = t.value(ib_c)[0];
    diag.gate = t.value(gate_c)[0];
    diag.constraint = t.value(cons)[0];
    diag.total = t.value(total)[0];
    diag.entropy = t.value(mean_entropy)[0];

    auto grads = backprop_gradients(t, total, params);
    // A batch may leave some heads off the graph (no sends: encoder, reward
    // predictor; no deliveries: attention query). Those get zero gradients.
    for (const auto& [name, p] : params) grads.try_emplace(name, Tensor::zeros(p.shape));
    diag.grad_norm = clip_gradients(grads, cfg.grad_clip_norm);
    adam_step(params, grads, adam, cfg.optim);
    assert_all_finite(params, "ppo_update");
    ++diag.epochs;
  }

  if (stack.uses_vq) {
    std::vector<std::vector<double>> zs;
    std::vector<int> assignments;
    for (const auto& e : batch.episodes)
      for (const auto& tr : e.steps)
        if (tr.sent && tr.token >= 0) {
          zs.push_back(tr.z);
          assignments.push_back(tr.token);
        }
    cb = codebook_ema_update(cb, zs, assignments);
  }
  return diag;
}

struct EpisodeMetrics {
  int episode = 0;
  bool success = false;
  double bits = 0.0;
  double episode_return = 0.0;
  double rl = 0.0;
  double vq = 0.0;
  double ib = 0.0;
  double gate = 0.0;
  double constraint = 0.0;
  double total = 0.0;
  double lambda = 0.0;
  double temperature = 1.0;
};

struct EvalSummary {
  double success_rate = 0.0;
  double mean_bits = 0.0;
  double mean_return = 0.0;
  double violation = 0.0;  // mean over episodes of max(0, bits - budget) / budget
  int episodes = 0;
};

struct RunResult {
  ParamSet params;
  Codebook codebook;
  std::vector<EpisodeMetrics> series;
  EvalSummary eval;
  ConstraintState constraint;
  double wall_seconds = 0.0;
};

// Seed-tag offsets for the independent RNG streams of one run. Environment
// seeds use the bare episode index so every method sees the same worlds at
// the same trial index.
namespace seedtag {
constexpr std::uint64_t kInit = 0x496e697455ull;
constexpr std::uint64_t kCodebook = 0x436f6465ull;
constexpr std::uint64_t kAction = 0xAC7100000000ull;
constexpr std::uint64_t kChannel = 0xC4A200000000ull;
constexpr std::uint64_t kEvalEnv = 0xE7A1000000ull;
}  // namespace seedtag

inline EvalSummary evaluate_policy(const ParamSet& params, const Codebook& cb,
                                   const TrainConfig& cfg, const MethodStack& stack,
                                   const NetBundle& nets, const ChannelModel& channel,
                                   int episodes) {
  EvalSummary s;
  s.episodes = episodes;
  for (int i = 0; i < episodes; ++i) {
    RngStream act(derive_seed(cfg.seed, seedtag::kAction + 0x800000000ull + i));
    RngStream ch(derive_seed(cfg.seed, seedtag::kChannel + 0x800000000ull + i));
    std::uint64_t env_seed = derive_seed(cfg.seed, seedtag::kEvalEnv + i);
    EpisodeTrajectory ep = rollout_episode(params, cb, cfg, stack, nets, env_seed, cfg.tau_end,
                                           true, act, ch, channel, nullptr, i);
    s.success_rate += ep.success ? 1.0 : 0.0;
    s.mean_bits += ep.bits;
    s.mean_return += ep.episode_return;
    s.violation += std::max(0.0, ep.bits - cfg.constraint.budget) / cfg.constraint.budget;
  }
  if (episodes > 0) {
    s.success_rate /= episodes;
    s.mean_bits /= episodes;
    s.mean_return /= episodes;
    s.violation /= episodes;
  }
  return s;
}

namespace detail {

inline void write_metrics_csv(const std::filesystem::path& path,
                              const std::vector<EpisodeMetrics>& series) {
  std::ofstream f(path);
  if (!f) throw ConfigError("train: cannot open " + path.string());
  f << "episode,success,bits,return,rl_loss,vq_loss,ib_loss,gate_loss,constraint_loss,"
       "total_loss,lambda,temperature\n";
  char buf[512];
  for (const auto& m : series) {
    std::snprintf(buf, sizeof buf,
                  "%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  m.episode, m.success ? 1 : 0, m.bits, m.episode_return, m.rl, m.vq, m.ib,
                  m.gate, m.constraint, m.total, m.lambda, m.temperature);
    f << buf;
  }
}

inline nlohmann::json run_extra_json(const Codebook& cb, const ConstraintState& cs, int episode) {
  return {{"codebook", cb.to_json()},
          {"constraint",
           {{"mode", constraint_mode_name(cs.mode)},
            {"budget", cs.budget},
            {"dual", cs.dual},
            {"dual_lr", cs.dual_lr},
            {"cost_ema", cs.cost_ema},
            {"cost_seen", cs.cost_seen}}},
          {"episode", episode}};
}

}  // namespace detail

// Full training run: deterministic given the config, including every RNG
// stream, batch boundary, and file it writes.
inline RunResult train_run(const TrainConfig& cfg) {
  cfg.validate();
  auto t0 = std::chrono::steady_clock::now();
  MethodStack stack = build_baseline(cfg.method, cfg.codebook_K, cfg.latent_dim, kObsFeatures,
                                     cfg.full_comm_payload_bits);
  NetBundle nets = build_nets(cfg, stack);
  RngStream init_rng(derive_seed(cfg.seed, seedtag::kInit));
  ParamSet params = init_params(nets, stack, init_rng);
  RngStream cb_rng(derive_seed(cfg.seed, seedtag::kCodebook));
  Codebook cb = Codebook::init(cfg.codebook_K, cfg.latent_dim, cfg.codebook_gamma, cb_rng);
  AdamState adam;
  ConstraintState cs = cfg.constraint;

  const bool writing = !cfg.out_dir.empty();
  std::filesystem::path root(cfg.out_dir);
  if (writing) {
    std::filesystem::create_directories(root / "checkpoints");
    if (cfg.trace_every > 0) std::filesystem::create_directories(root / "traces");
  }

  RunResult out;
  out.series.reserve(cfg.total_episodes);
  TrajectoryBatch batch;
  PpoDiagnostics last;
  double best_return = 0.0;
  bool have_best = false;
  int stagnant = 0;

  for (int ep = 0; ep < cfg.total_episodes; ++ep) {
    double tau = temperature_schedule(ep, cfg.total_episodes, cfg.tau_start, cfg.tau_end);
    RngStream act_rng(derive_seed(cfg.seed, seedtag::kAction + ep));
    RngStream ch_rng(derive_seed(cfg.seed, seedtag::kChannel + ep));
    std::uint64_t env_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(ep));

    std::unique_ptr<TraceWriter> trace;
    if (writing && cfg.trace_every > 0 && ep % cfg.trace_every == 0) {
      char name[64];
      std::snprintf(name, sizeof name, "episode_%06d.jsonl", ep);
      trace = std::make_unique<TraceWriter>(root / "traces" / name);
    }

    EpisodeTrajectory traj = rollout_episode(params, cb, cfg, stack, nets, env_seed, tau, false,
                                             act_rng, ch_rng, cfg.channel, trace.get(), ep);

    if (cs.mode == ConstraintMode::kPrimalDual && stack.constraint_active)
      cs = dual_update(cs, traj.bits);

    EpisodeMetrics m;
    m.episode = ep;
    m.success = traj.success;
    m.bits = traj.bits;
    m.episode_return = traj.episode_return;
    m.lambda = cs.dual;
    m.temperature = tau;

    batch.episodes.push_back(std::move(traj));
    if (batch.transitions() >= cfg.batch_size) {
      last = ppo_update(batch, params, adam, cb, cs, cfg, stack, nets);
      batch.clear();
    }
    m.rl = last.rl;
    m.vq = last.vq;
    m.ib = last.ib;
    m.gate = last.gate;
    m.constraint = last.constraint;
    m.total = last.total;
    out.series.push_back(m);

    if (writing && cfg.checkpoint_every > 0 && (ep + 1) % cfg.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof name, "episode_%06d.json", ep + 1);
      Checkpoint ck{params, adam, detail::run_extra_json(cb, cs, ep + 1)};
      save_checkpoint(root / "checkpoints" / name, ck);
    }

    if (cfg.early_stop_patience > 0) {
      if (!have_best || m.episode_return > best_return) {
        best_return = m.episode_return;
        have_best = true;
        stagnant = 0;
      } else if (++stagnant >= cfg.early_stop_patience) {
        break;
      }
    }
  }

  if (!batch.episodes.empty()) {
    last = ppo_update(batch, params, adam, cb, cs, cfg, stack, nets);
    batch.clear();
    if (!out.series.empty()) {
      EpisodeMetrics& m = out.series.back();
      m.rl = last.rl;
      m.vq = last.vq;
      m.ib = last.ib;
      m.gate = last.gate;
      m.constraint = last.constraint;
      m.total = last.total;
    }
  }

  out.eval = evaluate_policy(params, cb, cfg, stack, nets, cfg.channel, cfg.eval_episodes);
  out.params = std::move(params);
  out.codebook = cb;
  out.constraint = cs;

  if (writing) {
    detail::write_metrics_csv(root / "metrics.csv", out.series);
    Checkpoint ck{out.params, adam,
                  detail::run_extra_json(cb, cs, static_cast<int>(out.series.size()))};
    save_checkpoint(root / "checkpoints" / "final.json", ck);
  }

  out.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

// Convenience wrapper: derive the full method stack from a run config.
inline MethodStack build_baseline(const BaselineVariant& variant, const TrainConfig& cfg) {
  return build_baseline(variant, cfg.codebook_K, cfg.latent_dim, kObsFeatures,
                        cfg.full_comm_payload_bits);
}

}  // namespace gvq
