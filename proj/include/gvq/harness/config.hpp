#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gvq/train/trainer.hpp"

namespace gvq {

// A full experiment: the base run configuration plus the grid to explore.
// Axis vectors left empty are not swept.
struct ExperimentSpec {
  TrainConfig train;
  std::vector<BaselineVariant> methods;
  std::vector<std::uint64_t> seeds;

  std::vector<double> budgets;        // bits per episode, 200..3000
  std::vector<int> codebook_sizes;    // each in {8, 16, 32}
  std::vector<double> thresholds;     // gate threshold, each in {0.3, 0.5, 0.7, 0.9}
  std::vector<int> agent_counts;      // each in {2, 4, 6, 8}
  std::vector<ChannelModel> channels;
  bool penalty_grid = false;          // 2x2 over {env comm cost} x {gate sparsity loss}
  std::vector<std::array<bool, 4>> context_masks;

  std::string output_root = "runs";
  double bandwidth_max = 3000.0;
  int bootstrap_iterations = 1000;

  bool has_sweep_axis() const {
    return !budgets.empty() || !codebook_sizes.empty() || !thresholds.empty() ||
           !agent_counts.empty() || !channels.empty() || penalty_grid || !context_masks.empty();
  }

  void validate() const {
    train.validate();
    if (methods.empty()) throw ConfigError("spec: methods must be nonempty");
    for (const auto& m : methods) m.validate();
    if (seeds.empty()) throw ConfigError("spec: seeds must be nonempty");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
      throw ConfigError("spec: seeds must be distinct");
    for (double b : budgets)
      if (b < 200.0 || b > 3000.0)
        throw ConfigError("spec: sweep budgets must lie in [200, 3000]");
    for (int k : codebook_sizes)
      if (k != 8 && k != 16 && k != 32)
        throw ConfigError("spec: sweep codebook sizes must be one of {8, 16, 32}");
    for (double t : thresholds)
      if (t != 0.3 && t != 0.5 && t != 0.7 && t != 0.9)
        throw ConfigError("spec: sweep thresholds must be one of {0.3, 0.5, 0.7, 0.9}");
    for (int n : agent_counts)
      if (n != 2 && n != 4 && n != 6 && n != 8)
        throw ConfigError("spec: sweep agent counts must be one of {2, 4, 6, 8}");
    for (const auto& c : channels) c.validate();
    if (output_root.empty()) throw ConfigError("spec: output_root must be nonempty");
    if (!(bandwidth_max > 0.0)) throw ConfigError("spec: bandwidth_max must be positive");
    if (bootstrap_iterations < 1)
      throw ConfigError("spec: bootstrap_iterations must be positive");
  }
};

namespace cfgjson {

using nlohmann::json;

inline void check_keys(const json& j, const std::string& path,
                       std::initializer_list<const char*> allowed) {
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items())
    if (!ok.count(key))
      throw ConfigError("config: unknown key '" + key + "' in " + path);
}

inline const json& need_object(const json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError("config: " + path + " must be an object");
  return j;
}

template <typename T>
void read_field(const json& j, const std::string& path, const char* key, T& into) {
  if (!j.contains(key)) return;
  try {
    into = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: bad value for " + path + "." + key);
  }
}

inline void parse_env(const json& j, const std::string& path, EnvConfig& e) {
  need_object(j, path);
  check_keys(j, path,
             {"grid_size", "num_agents", "num_targets", "obstacle_density", "obstacle_period",
              "horizon", "alpha_comm", "alpha_move", "reward_discover", "reward_extract",
              "reward_coord", "energy_budget", "sequential_target_fraction"});
  read_field(j, path, "grid_size", e.grid_size);
  read_field(j, path, "num_agents", e.num_agents);
  read_field(j, path, "num_targets", e.num_targets);
  read_field(j, path, "obstacle_density", e.obstacle_density);
  read_field(j, path, "obstacle_period", e.obstacle_period);
  read_field(j, path, "horizon", e.horizon);
  read_field(j, path, "alpha_comm", e.alpha_comm);
  read_field(j, path, "alpha_move", e.alpha_move);
  read_field(j, path, "reward_discover", e.reward_discover);
  read_field(j, path, "reward_extract", e.reward_extract);
  read_field(j, path, "reward_coord", e.reward_coord);
  read_field(j, path, "energy_budget", e.energy_budget);
  read_field(j, path, "sequential_target_fraction", e.sequential_target_fraction);
}

inline json env_to_json(const EnvConfig& e) {
  return {{"grid_size", e.grid_size},
          {"num_agents", e.num_agents},
          {"num_targets", e.num_targets},
          {"obstacle_density", e.obstacle_density},
          {"obstacle_period", e.obstacle_period},
          {"horizon", e.horizon},
          {"alpha_comm", e.alpha_comm},
          {"alpha_move", e.alpha_move},
          {"reward_discover", e.reward_discover},
          {"reward_extract", e.reward_extract},
          {"reward_coord", e.reward_coord},
          {"energy_budget", e.energy_budget},
          {"sequential_target_fraction", e.sequential_target_fraction}};
}

inline void parse_weights(const json& j, const std::string& path, LossWeights& w) {
  need_object(j, path);
  check_keys(j, path, {"lambda_vq", "lambda_ib", "lambda_gate", "beta_vq", "beta_ib",
                       "alpha_gate", "lambda_c"});
  read_field(j, path, "lambda_vq", w.lambda_vq);
  read_field(j, path, "lambda_ib", w.lambda_ib);
  read_field(j, path, "lambda_gate", w.lambda_gate);
  read_field(j, path, "beta_vq", w.beta_vq);
  read_field(j, path, "beta_ib", w.beta_ib);
  read_field(j, path, "alpha_gate", w.alpha_gate);
  read_field(j, path, "lambda_c", w.lambda_c);
}

inline json weights_to_json(const LossWeights& w) {
  return {{"lambda_vq", w.lambda_vq},   {"lambda_ib", w.lambda_ib},
          {"lambda_gate", w.lambda_gate}, {"beta_vq", w.beta_vq},
          {"beta_ib", w.beta_ib},       {"alpha_gate", w.alpha_gate},
          {"lambda_c", w.lambda_c}};
}

inline void parse_constraint(const json& j, const std::string& path, ConstraintState& c) {
  need_object(j, path);
  check_keys(j, path, {"mode", "budget", "dual_lr"});
  if (j.contains("mode")) {
    std::string m;
    read_field(j, path, "mode", m);
    c.mode = constraint_mode_from_name(m);
  }
  read_field(j, path, "budget", c.budget);
  read_field(j, path, "dual_lr", c.dual_lr);
}

inline json constraint_to_json(const ConstraintState& c) {
  return {{"mode", constraint_mode_name(c.mode)},
          {"budget", c.budget},
          {"dual_lr", c.dual_lr}};
}

inline void parse_channel(const json& j, const std::string& path, ChannelModel& c) {
  need_object(j, path);
  check_keys(j, path, {"kind", "loss_rate", "p_good_to_bad", "p_bad_to_good", "loss_in_bad",
                       "delay_steps"});
  if (j.contains("kind")) {
    std::string k;
    read_field(j, path, "kind", k);
    c.kind = channel_kind_from_name(k);
  }
  read_field(j, path, "loss_rate", c.loss_rate);
  read_field(j, path, "p_good_to_bad", c.p_good_to_bad);
  read_field(j, path, "p_bad_to_good", c.p_bad_to_good);
  read_field(j, path, "loss_in_bad", c.loss_in_bad);
  read_field(j, path, "delay_steps", c.delay_steps);
}

inline json channel_to_json(const ChannelModel& c) {
  return {{"kind", channel_kind_name(c.kind)},
          {"loss_rate", c.loss_rate},
          {"p_good_to_bad", c.p_good_to_bad},
          {"p_bad_to_good", c.p_bad_to_good},
          {"loss_in_bad", c.loss_in_bad},
          {"delay_steps", c.delay_steps}};
}

inline void parse_optim(const json& j, const std::string& path, AdamConfig& a) {
  need_object(j, path);
  check_keys(j, path, {"lr", "beta1", "beta2", "eps"});
  read_field(j, path, "lr", a.lr);
  read_field(j, path, "beta1", a.beta1);
  read_field(j, path, "beta2", a.beta2);
  read_field(j, path, "eps", a.eps);
}

inline json optim_to_json(const AdamConfig& a) {
  return {{"lr", a.lr}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}};
}

inline void parse_train(const json& j, const std::string& path, TrainConfig& t) {
  need_object(j, path);
  check_keys(j, path,
             {"env", "weights", "constraint", "channel", "optim", "discount", "gae_lambda",
              "clip_eps", "value_coef", "entropy_coef", "ppo_epochs", "batch_size",
              "grad_clip_norm", "total_episodes", "tau_start", "tau_end", "tau_gate",
              "gate_init_bias", "codebook_K", "latent_dim", "codebook_gamma", "msg_embed_dim", "policy_hidden",
              "encoder_hidden", "gate_hidden", "decoder_hidden", "full_comm_payload_bits",
              "context_mask", "eval_episodes", "checkpoint_every", "trace_every",
              "early_stop_patience", "seed"});
  if (j.contains("env")) parse_env(j.at("env"), path + ".env", t.env);
  if (j.contains("weights")) parse_weights(j.at("weights"), path + ".weights", t.weights);
  if (j.contains("constraint"))
    parse_constraint(j.at("constraint"), path + ".constraint", t.constraint);
  if (j.contains("channel")) parse_channel(j.at("channel"), path + ".channel", t.channel);
  if (j.contains("optim")) parse_optim(j.at("optim"), path + ".optim", t.optim);
  read_field(j, path, "discount", t.discount);
  read_field(j, path, "gae_lambda", t.gae_lambda);
  read_field(j, path, "clip_eps", t.clip_eps);
  read_field(j, path, "value_coef", t.value_coef);
  read_field(j, path, "entropy_coef", t.entropy_coef);
  read_field(j, path, "ppo_epochs", t.ppo_epochs);
  read_field(j, path, "batch_size", t.batch_size);
  read_field(j, path, "grad_clip_norm", t.grad_clip_norm);
  read_field(j, path, "total_episodes", t.total_episodes);
  read_field(j, path, "tau_start", t.tau_start);
  read_field(j, path, "tau_end", t.tau_end);
  read_field(j, path, "tau_gate", t.tau_gate);
  read_field(j, path, "gate_init_bias", t.gate_init_bias);
  read_field(j, path, "codebook_K", t.codebook_K);
  read_field(j, path, "latent_dim", t.latent_dim);
  read_field(j, path, "codebook_gamma", t.codebook_gamma);
  read_field(j, path, "msg_embed_dim", t.msg_embed_dim);
  read_field(j, path, "policy_hidden", t.policy_hidden);
  read_field(j, path, "encoder_hidden", t.encoder_hidden);
  read_field(j, path, "gate_hidden", t.gate_hidden);
  read_field(j, path, "decoder_hidden", t.decoder_hidden);
  read_field(j, path, "full_comm_payload_bits", t.full_comm_payload_bits);
  if (j.contains("context_mask")) {
    const json& m = j.at("context_mask");
    if (!m.is_array() || m.size() != 4)
      throw ConfigError("config: " + path + ".context_mask must be 4 booleans");
    for (int i = 0; i < 4; ++i) {
      if (!m[i].is_boolean())
        throw ConfigError("config: " + path + ".context_mask must be 4 booleans");
      t.context_mask[i] = m[i].get<bool>();
    }
  }
  read_field(j, path, "eval_episodes", t.eval_episodes);
  read_field(j, path, "checkpoint_every", t.checkpoint_every);
  read_field(j, path, "trace_every", t.trace_every);
  read_field(j, path, "early_stop_patience", t.early_stop_patience);
  read_field(j, path, "seed", t.seed);
}

inline json train_to_json(const TrainConfig& t) {
  return {{"env", env_to_json(t.env)},
          {"weights", weights_to_json(t.weights)},
          {"constraint", constraint_to_json(t.constraint)},
          {"channel", channel_to_json(t.channel)},
          {"optim", optim_to_json(t.optim)},
          {"discount", t.discount},
          {"gae_lambda", t.gae_lambda},
          {"clip_eps", t.clip_eps},
          {"value_coef", t.value_coef},
          {"entropy_coef", t.entropy_coef},
          {"ppo_epochs", t.ppo_epochs},
          {"batch_size", t.batch_size},
          {"grad_clip_norm", t.grad_clip_norm},
          {"total_episodes", t.total_episodes},
          {"tau_start", t.tau_start},
          {"tau_end", t.tau_end},
          {"tau_gate", t.tau_gate},
          {"gate_init_bias", t.gate_init_bias},
          {"codebook_K", t.codebook_K},
          {"latent_dim", t.latent_dim},
          {"codebook_gamma", t.codebook_gamma},
          {"msg_embed_dim", t.msg_embed_dim},
          {"policy_hidden", t.policy_hidden},
          {"encoder_hidden", t.encoder_hidden},
          {"gate_hidden", t.gate_hidden},
          {"decoder_hidden", t.decoder_hidden},
          {"full_comm_payload_bits", t.full_comm_payload_bits},
          {"context_mask", t.context_mask},
          {"eval_episodes", t.eval_episodes},
          {"checkpoint_every", t.checkpoint_every},
          {"trace_every", t.trace_every},
          {"early_stop_patience", t.early_stop_patience},
          {"seed", t.seed}};
}

inline BaselineVariant parse_method(const json& j, const std::string& path) {
  BaselineVariant v;
  if (j.is_string()) {
    v.kind = method_from_name(j.get<std::string>());
    return v;
  }
  need_object(j, path);
  check_keys(j, path, {"name", "rate", "k"});
  if (!j.contains("name")) throw ConfigError("config: " + path + " needs a method name");
  std::string name;
  read_field(j, path, "name", name);
  v.kind = method_from_name(name);
  read_field(j, path, "rate", v.rate);
  read_field(j, path, "k", v.k);
  return v;
}

inline json method_to_json(const BaselineVariant& v) {
  json j{{"name", method_name(v.kind)}};
  if (v.kind == MethodKind::kRandomGate) j["rate"] = v.rate;
  if (v.kind == MethodKind::kScheduled) j["k"] = v.k;
  return j;
}

inline ExperimentSpec parse_spec(const json& j) {
  ExperimentSpec s;
  // The full baseline ladder, cheapest first, closing with the gated method.
  s.methods = {{MethodKind::kNoComm},  {MethodKind::kFullComm},
               {MethodKind::kRandomGate}, {MethodKind::kScheduled},
               {MethodKind::kAttentionComm}, {MethodKind::kIbContinuous},
               {MethodKind::kGvq}};
  s.seeds = {1, 2, 3, 4, 5, 6, 7, 8};

  need_object(j, "$");
  check_keys(j, "$", {"train", "methods", "seeds", "sweep", "output_root", "bandwidth_max",
                      "bootstrap_iterations"});
  if (j.contains("train")) parse_train(j.at("train"), "train", s.train);
  if (j.contains("methods")) {
    const json& ms = j.at("methods");
    if (!ms.is_array()) throw ConfigError("config: methods must be an array");
    s.methods.clear();
    for (std::size_t i = 0; i < ms.size(); ++i)
      s.methods.push_back(parse_method(ms[i], "methods[" + std::to_string(i) + "]"));
  }
  if (j.contains("seeds")) {
    try {
      s.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    } catch (const json::exception&) {
      throw ConfigError("config: seeds must be an array of non-negative integers");
    }
  }
  if (j.contains("sweep")) {
    const json& sw = need_object(j.at("sweep"), "sweep");
    check_keys(sw, "sweep",
               {"budgets", "codebook_sizes", "thresholds", "agent_counts", "channels",
                "penalty_grid", "context_masks"});
    read_field(sw, "sweep", "budgets", s.budgets);
    read_field(sw, "sweep", "codebook_sizes", s.codebook_sizes);
    read_field(sw, "sweep", "thresholds", s.thresholds);
    read_field(sw, "sweep", "agent_counts", s.agent_counts);
    if (sw.contains("channels")) {
      const json& cs = sw.at("channels");
      if (!cs.is_array()) throw ConfigError("config: sweep.channels must be an array");
      for (std::size_t i = 0; i < cs.size(); ++i) {
        ChannelModel c;
        parse_channel(cs[i], "sweep.channels[" + std::to_string(i) + "]", c);
        s.channels.push_back(c);
      }
    }
    read_field(sw, "sweep", "penalty_grid", s.penalty_grid);
    if (sw.contains("context_masks")) {
      const json& cm = sw.at("context_masks");
      if (!cm.is_array()) throw ConfigError("config: sweep.context_masks must be an array");
      for (const auto& row : cm) {
        if (!row.is_array() || row.size() != 4)
          throw ConfigError("config: each sweep.context_masks entry must be 4 booleans");
        std::array<bool, 4> mask{};
        for (int i = 0; i < 4; ++i) {
          if (!row[i].is_boolean())
            throw ConfigError("config: each sweep.context_masks entry must be 4 booleans");
          mask[i] = row[i].get<bool>();
        }
        s.context_masks.push_back(mask);
      }
    }
  }
  read_field(j, "$", "output_root", s.output_root);
  read_field(j, "$", "bandwidth_max", s.bandwidth_max);
  read_field(j, "$", "bootstrap_iterations", s.bootstrap_iterations);
  s.validate();
  return s;
}

inline json spec_to_json(const ExperimentSpec& s) {
  json methods = json::array();
  for (const auto& m : s.methods) methods.push_back(method_to_json(m));
  json channels = json::array();
  for (const auto& c : s.channels) channels.push_back(channel_to_json(c));
  json masks = json::array();
  for (const auto& m : s.context_masks) masks.push_back(m);
  return {{"train", train_to_json(s.train)},
          {"methods", methods},
          {"seeds", s.seeds},
          {"sweep",
           {{"budgets", s.budgets},
            {"codebook_sizes", s.codebook_sizes},
            {"thresholds", s.thresholds},
            {"agent_counts", s.agent_counts},
            {"channels", channels},
            {"penalty_grid", s.penalty_grid},
            {"context_masks", masks}}},
          {"output_root", s.output_root},
          {"bandwidth_max", s.bandwidth_max},
          {"bootstrap_iterations", s.bootstrap_iterations}};
}

}  // namespace cfgjson

// Parses an experiment file. A blank file yields the full default spec.
// Parse errors carry the line number; unknown keys carry their object path.
inline ExperimentSpec load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open " + path.string());
  std::stringstream buf;
  buf << f.rdbuf();
  std::string text = buf.str();

  bool blank = true;
  for (char c : text)
    if (!std::isspace(static_cast<unsigned char>(c))) {
      blank = false;
      break;
    }
  nlohmann::json j = nlohmann::json::object();
  if (!blank) {
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      std::size_t line = 1;
      for (std::size_t i = 0; i < std::min<std::size_t>(e.byte, text.size()); ++i)
        if (text[i] == '\n') ++line;
      throw ConfigError("config: parse error in " + path.string() + " at line " +
                        std::to_string(line) + ": " + e.what());
    }
  }
  return cfgjson::parse_spec(j);
}

inline std::string serialize_spec(const ExperimentSpec& s) {
  return cfgjson::spec_to_json(s).dump(2) + "\n";
}

}  // namespace gvq
