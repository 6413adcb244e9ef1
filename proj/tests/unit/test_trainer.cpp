#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "gvq/train/trainer.hpp"

using namespace gvq;

namespace {

// A configuration small enough that a full run takes well under a second but
// still exercises every moving part: two agents, short horizon, one optimizer
// batch per episode.
TrainConfig small_cfg(MethodKind kind) {
  TrainConfig cfg;
  cfg.env.grid_size = 8;
  cfg.env.num_agents = 2;
  cfg.env.num_targets = 2;
  cfg.env.horizon = 12;
  cfg.env.obstacle_density = 0.1;
  cfg.method.kind = kind;
  cfg.total_episodes = 4;
  cfg.batch_size = 24;
  cfg.ppo_epochs = 2;
  cfg.eval_episodes = 3;
  cfg.policy_hidden = 12;
  cfg.encoder_hidden = 10;
  cfg.gate_hidden = 8;
  cfg.decoder_hidden = 10;
  cfg.latent_dim = 4;
  cfg.msg_embed_dim = 6;
  cfg.codebook_K = 4;
  cfg.constraint.budget = 50.0;
  cfg.seed = 7;
  return cfg;
}

bool params_equal(const ParamSet& a, const ParamSet& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, ta] : a) {
    auto it = b.find(name);
    if (it == b.end()) return false;
    if (ta.data != it->second.data) return false;
  }
  return true;
}

// Replays the exact initialization path of train_run.
ParamSet fresh_init(const TrainConfig& cfg, MethodStack& stack_out, NetBundle& nets_out) {
  stack_out = build_baseline(cfg.method, cfg);
  nets_out = build_nets(cfg, stack_out);
  RngStream rng(derive_seed(cfg.seed, seedtag::kInit));
  return init_params(nets_out, stack_out, rng);
}

Transition make_transition(int agent, int step, double reward, double value) {
  Transition tr;
  tr.obs.assign(kObsFeatures, 0.0);
  tr.hidden_prev.assign(12, 0.0);
  tr.agent = agent;
  tr.step = step;
  tr.reward = reward;
  tr.value = value;
  tr.action = (agent + step) % kNumActions;
  tr.old_logp = -1.5;
  return tr;
}

}  // namespace

TEST_CASE("zero-episode run returns the untouched initialization") {
  TrainConfig cfg = small_cfg(MethodKind::kGvq);
  cfg.total_episodes = 0;
  RunResult r = train_run(cfg);

  CHECK(r.series.empty());
  CHECK(r.eval.episodes == cfg.eval_episodes);

  MethodStack stack;
  NetBundle nets;
  ParamSet expect = fresh_init(cfg, stack, nets);
  CHECK(params_equal(r.params, expect));

  RngStream cb_rng(derive_seed(cfg.seed, seedtag::kCodebook));
  Codebook cb = Codebook::init(cfg.codebook_K, cfg.latent_dim, cfg.codebook_gamma, cb_rng);
  CHECK(r.codebook.vectors == cb.vectors);
  CHECK(r.codebook.usage == cb.usage);
}

TEST_CASE("training is bitwise deterministic for a fixed seed") {
  TrainConfig cfg = small_cfg(MethodKind::kGvq);
  RunResult a = train_run(cfg);
  RunResult b = train_run(cfg);

  REQUIRE(a.series.size() == b.series.size());
  for (std::size_t i = 0; i < a.series.size(); ++i) {
    CHECK(a.series[i].success == b.series[i].success);
    CHECK(a.series[i].bits == b.series[i].bits);
    CHECK(a.series[i].episode_return == b.series[i].episode_return);
    CHECK(a.series[i].rl == b.series[i].rl);
    CHECK(a.series[i].vq == b.series[i].vq);
    CHECK(a.series[i].ib == b.series[i].ib);
    CHECK(a.series[i].gate == b.series[i].gate);
    CHECK(a.series[i].constraint == b.series[i].constraint);
    CHECK(a.series[i].total == b.series[i].total);
    CHECK(a.series[i].lambda == b.series[i].lambda);
  }
  CHECK(a.eval.success_rate == b.eval.success_rate);
  CHECK(a.eval.mean_bits == b.eval.mean_bits);
  CHECK(a.eval.mean_return == b.eval.mean_return);
  CHECK(params_equal(a.params, b.params));
  CHECK(a.codebook.vectors == b.codebook.vectors);
  CHECK(a.constraint.dual == b.constraint.dual);
}

TEST_CASE("no-communication runs move zero bits and build no comm heads") {
  TrainConfig cfg = small_cfg(MethodKind::kNoComm);
  RunResult r = train_run(cfg);

  REQUIRE(r.series.size() == 4);
  for (const auto& m : r.series) CHECK(m.bits == 0.0);
  CHECK(r.eval.mean_bits == 0.0);
  CHECK(r.eval.violation == 0.0);
  CHECK(r.eval.success_rate >= 0.0);
  CHECK(r.eval.success_rate <= 1.0);
  for (const auto& [name, t] : r.params) {
    CHECK(name.rfind("gate", 0) != 0);
    CHECK(name.rfind("encoder", 0) != 0);
  }
}

TEST_CASE("full-communication rollouts charge the payload price every agent step") {
  TrainConfig cfg = small_cfg(MethodKind::kFullComm);
  MethodStack stack;
  NetBundle nets;
  ParamSet params = fresh_init(cfg, stack, nets);
  RngStream cb_rng(derive_seed(cfg.seed, seedtag::kCodebook));
  Codebook cb = Codebook::init(cfg.codebook_K, cfg.latent_dim, cfg.codebook_gamma, cb_rng);
  RngStream act(1), ch(2);
  EpisodeTrajectory ep = rollout_episode(params, cb, cfg, stack, nets, 11, 1.0, false, act, ch,
                                         cfg.channel, nullptr, 0);

  REQUIRE(!ep.steps.empty());
  int sends = 0;
  for (const auto& tr : ep.steps) {
    CHECK(tr.sent);
    if (tr.sent) ++sends;
  }
  CHECK(ep.bits == Catch::Approx(107.0 * sends));
}

TEST_CASE("scheduled gating sends on the fixed cadence only") {
  TrainConfig cfg = small_cfg(MethodKind::kScheduled);
  cfg.method.k = 3;
  MethodStack stack;
  NetBundle nets;
  ParamSet params = fresh_init(cfg, stack, nets);
  RngStream cb_rng(derive_seed(cfg.seed, seedtag::kCodebook));
  Codebook cb = Codebook::init(cfg.codebook_K, cfg.latent_dim, cfg.codebook_gamma, cb_rng);
  RngStream act(1), ch(2);
  EpisodeTrajectory ep = rollout_episode(params, cb, cfg, stack, nets, 11, 1.0, false, act, ch,
                                         cfg.channel, nullptr, 0);

  int sends = 0;
  for (const auto& tr : ep.steps) {
    CHECK(tr.sent == (tr.step % 3 == 0));
    if (tr.sent) ++sends;
  }
  // K = 4 codes cost two bits per message.
  CHECK(ep.bits == Catch::Approx(2.0 * sends));
}

TEST_CASE("learned-gate rollouts record everything the rebuild replays") {
  TrainConfig cfg = small_cfg(MethodKind::kGvq);
  MethodStack stack;
  NetBundle nets;
  ParamSet params = fresh_init(cfg, stack, nets);
  RngStream cb_rng(derive_seed(cfg.seed, seedtag::kCodebook));
  Codebook cb = Codebook::init(cfg.codebook_K, cfg.latent_dim, cfg.codebook_gamma, cb_rng);
  RngStream act(1), ch(2);
  EpisodeTrajectory ep = rollout_episode(params, cb, cfg, stack, nets, 11, 0.7, false, act, ch,
                                         cfg.channel, nullptr, 0);

  REQUIRE(!ep.steps.empty());
  for (std::size_t i = 0; i < ep.steps.size(); ++i) {
    const Transition& tr = ep.steps[i];
    CHECK(tr.obs.size() == static_cast<std::size_t>(kObsFeatures));
    CHECK(tr.hidden_prev.size() == static_cast<std::size_t>(cfg.policy_hidden));
    CHECK(tr.gate_prob >= 0.0);
    CHECK(tr.gate_prob <= 1.0);
    CHECK(tr.temperature == 0.7);
    if (tr.sent) {
      CHECK(tr.z.size() == static_cast<std::size_t>(cfg.latent_dim));
      CHECK(tr.eps.size() == static_cast<std::size_t>(cfg.latent_dim));
      CHECK(tr.token >= 0);
      CHECK(tr.token < cfg.codebook_K);
    } else {
      CHECK(tr.token == -1);
    }
    for (int ref : tr.delivered_from) {
      REQUIRE(ref >= 0);
      REQUIRE(ref < static_cast<int>(i));
      CHECK(ep.steps[ref].sent);
      CHECK(ep.steps[ref].step < tr.step);  // messages arrive the next step
    }
  }
}

TEST_CASE("advantage estimation matches a hand-worked single stream") {
  TrajectoryBatch batch;
  EpisodeTrajectory ep;
  ep.steps.push_back(make_transition(0, 0, 1.0, 0.5));
  ep.steps.push_back(make_transition(0, 1, 1.0, 0.25));
  ep.steps.push_back(make_transition(0, 2, 1.0, 0.0));
  batch.episodes.push_back(ep);

  compute_gae(batch, 0.5, 0.5, 1);
  const auto& s = batch.episodes[0].steps;
  CHECK(s[0].advantage == Catch::Approx(0.875).margin(1e-12));
  CHECK(s[1].advantage == Catch::Approx(1.0).margin(1e-12));
  CHECK(s[2].advantage == Catch::Approx(1.0).margin(1e-12));
  CHECK(s[0].ret == Catch::Approx(1.375).margin(1e-12));
  CHECK(s[1].ret == Catch::Approx(1.25).margin(1e-12));
  CHECK(s[2].ret == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("advantage streams do not mix across agents") {
  TrajectoryBatch batch;
  EpisodeTrajectory ep;
  ep.steps.push_back(make_transition(0, 0, 1.0, 0.0));
  ep.steps.push_back(make_transition(1, 0, 0.0, 0.0));
  ep.steps.push_back(make_transition(0, 1, 0.0, 0.0));
  ep.steps.push_back(make_transition(1, 1, 2.0, 0.0));
  batch.episodes.push_back(ep);

  compute_gae(batch, 1.0, 1.0, 2);
  const auto& s = batch.episodes[0].steps;
  CHECK(s[0].advantage == Catch::Approx(1.0).margin(1e-12));
  CHECK(s[1].advantage == Catch::Approx(2.0).margin(1e-12));
  CHECK(s[2].advantage == Catch::Approx(0.0).margin(1e-12));
  CHECK(s[3].advantage == Catch::Approx(2.0).margin(1e-12));
}

TEST_CASE("advantage normalization uses population statistics") {
  TrajectoryBatch batch;
  EpisodeTrajectory ep;
  for (int i = 0; i < 4; ++i) {
    Transition tr = make_transition(0, i, 0.0, 0.0);
    tr.advantage = 1.0 + i;
    ep.steps.push_back(tr);
  }
  batch.episodes.push_back(ep);
  normalize_advantages(batch);

  double sd = std::sqrt(1.25);
  for (int i = 0; i < 4; ++i) {
    double want = (1.0 + i - 2.5) / (sd + 1e-8);
    CHECK(batch.episodes[0].steps[i].advantage == Catch::Approx(want).margin(1e-12));
  }
}

TEST_CASE("a constant-advantage batch normalizes to zeros") {
  TrajectoryBatch batch;
  EpisodeTrajectory ep;
  for (int i = 0; i < 3; ++i) {
    Transition tr = make_transition(0, i, 0.0, 0.0);
    tr.advantage = 4.2;
    ep.steps.push_back(tr);
  }
  batch.episodes.push_back(ep);
  normalize_advantages(batch);
  for (const auto& tr : batch.episodes[0].steps) CHECK(tr.advantage == 0.0);
}

TEST_CASE("non-finite rewards and advantages abort training") {
  TrajectoryBatch batch;
  EpisodeTrajectory ep;
  ep.steps.push_back(make_transition(0, 0, std::nan(""), 0.0));
  batch.episodes.push_back(ep);
  CHECK_THROWS_AS(compute_gae(batch, 0.99, 0.95, 1), TrainingAbort);

  TrajectoryBatch batch2;
  EpisodeTrajectory ep2;
  Transition tr = make_transition(0, 0, 0.0, 0.0);
  tr.advantage = std::nan("");
  ep2.steps.push_back(tr);
  batch2.episodes.push_back(ep2);
  CHECK_THROWS_WITH(normalize_advantages(batch2), Catch::Matchers::ContainsSubstring("NaN"));
}

TEST_CASE("zero advantages with zero auxiliary coefficients are a fixed point") {
  TrainConfig cfg = small_cfg(MethodKind::kNoComm);
  cfg.value_coef = 0.0;
  cfg.entropy_coef = 0.0;
  cfg.ppo_epochs = 3;

  MethodStack stack;
  NetBundle nets;
  ParamSet params = fresh_init(cfg, stack, nets);
  ParamSet before = params;
  RngStream cb_rng(derive_seed(cfg.seed, seedtag::kCodebook));
  Codebook cb = Codebook::init(cfg.codebook_K, cfg.latent_dim, cfg.codebook_gamma, cb_rng);
  AdamState adam;

  TrajectoryBatch batch;
  EpisodeTrajectory ep;
  for (int s = 0; s < 2; ++s)
    for (int a = 0; a < 2; ++a) ep.steps.push_back(make_transition(a, s, 0.0, 0.0));
  batch.episodes.push_back(ep);

  PpoDiagnostics d = ppo_update(batch, params, adam, cb, cfg.constraint, cfg, stack, nets);
  CHECK(d.epochs == 3);
  CHECK(d.rl == 0.0);
  CHECK(d.total == 0.0);
  CHECK(d.grad_norm == 0.0);
  CHECK(params_equal(params, before));
}

TEST_CASE("the surrogate takes the clipped branch and kills its gradient") {
  std::vector<double> logits{0.2, -0.1, 0.4};
  const int a = 2;
  double mx = 0.4;
  double lse = mx + std::log(std::exp(0.2 - mx) + std::exp(-0.1 - mx) + std::exp(0.4 - mx));
  double ls_a = logits[a] - lse;

  SECTION("ratio above the band with positive advantage") {
    GradTape t;
    Var lg = t.param("logits", Tensor(logits, {3}));
    Var ls = t.log_softmax(lg);
    Var ratio = t.exp_op(t.add_scalar(t.pick(ls, a), -(ls_a - std::log(1.5))));
    Var s1 = t.scale(ratio, 1.0);
    Var s2 = t.scale(t.clip(ratio, 0.8, 1.2), 1.0);
    Var surr = t.minimum(s1, s2);
    CHECK(t.value(surr)[0] == Catch::Approx(1.2).margin(1e-12));
    t.backward(t.scale(surr, -1.0));
    auto g = t.gradients()["logits"];
    for (int j = 0; j < 3; ++j) CHECK(g[j] == 0.0);
  }

  SECTION("ratio below the band with negative advantage") {
    GradTape t;
    Var lg = t.param("logits", Tensor(logits, {3}));
    Var ls = t.log_softmax(lg);
    Var ratio = t.exp_op(t.add_scalar(t.pick(ls, a), -(ls_a - std::log(0.5))));
    Var s1 = t.scale(ratio, -1.0);
    Var s2 = t.scale(t.clip(ratio, 0.8, 1.2), -1.0);
    Var surr = t.minimum(s1, s2);
    CHECK(t.value(surr)[0] == Catch::Approx(-0.8).margin(1e-12));
    t.backward(t.scale(surr, -1.0));
    auto g = t.gradients()["logits"];
    for (int j = 0; j < 3; ++j) CHECK(g[j] == 0.0);
  }

  SECTION("in-band ratio matches the hand gradient") {
    const double A = 0.7;
    GradTape t;
    Var lg = t.param("logits", Tensor(logits, {3}));
    Var ls = t.log_softmax(lg);
    Var ratio = t.exp_op(t.add_scalar(t.pick(ls, a), -(ls_a - std::log(1.1))));
    Var s1 = t.scale(ratio, A);
    Var s2 = t.scale(t.clip(ratio, 0.8, 1.2), A);
    Var surr = t.minimum(s1, s2);
    t.backward(t.scale(surr, -1.0));
    auto g = t.gradients()["logits"];

    double r = 1.1;
    for (int j = 0; j < 3; ++j) {
      double p_j = std::exp(logits[j] - lse);
      double want = -A * r * ((j == a ? 1.0 : 0.0) - p_j);
      CHECK(g[j] == Catch::Approx(want).margin(1e-10));
    }
  }
}

TEST_CASE("gate and encoder move during training and the codebook tracks usage") {
  TrainConfig cfg = small_cfg(MethodKind::kGvq);
  MethodStack stack;
  NetBundle nets;
  ParamSet init = fresh_init(cfg, stack, nets);
  RunResult r = train_run(cfg);

  auto moved = [&](const std::string& prefix) {
    for (const auto& [name, t] : r.params) {
      if (name.rfind(prefix, 0) != 0) continue;
      const Tensor& t0 = init.at(name);
      if (t.data != t0.data) return true;
    }
    return false;
  };
  CHECK(moved("policy"));
  CHECK(moved("gate"));
  CHECK(moved("encoder"));
  CHECK(moved("decoder"));

  // Every optimizer batch decays the usage EMA; 1.0 can only survive if no
  // update ever ran.
  bool usage_touched = false;
  for (double u : r.codebook.usage) usage_touched |= (u != 1.0);
  CHECK(usage_touched);
}

TEST_CASE("the dual variable ratchets up while cost exceeds the budget") {
  TrainConfig cfg = small_cfg(MethodKind::kGvq);
  cfg.constraint.mode = ConstraintMode::kPrimalDual;
  cfg.constraint.budget = 1.0;  // far below what even a sparse gate moves
  cfg.constraint.dual_lr = 0.01;
  RunResult r = train_run(cfg);

  REQUIRE(r.series.size() == 4);
  double prev = 0.0;
  for (const auto& m : r.series) {
    CHECK(m.lambda >= prev);
    prev = m.lambda;
  }
  CHECK(r.constraint.dual > 0.0);
  CHECK(r.constraint.cost_seen);
}

TEST_CASE("temperature anneals along the configured schedule") {
  TrainConfig cfg = small_cfg(MethodKind::kGvq);
  RunResult r = train_run(cfg);
  REQUIRE(r.series.size() == 4);
  for (int i = 0; i < 4; ++i) {
    double want = temperature_schedule(i, 4, cfg.tau_start, cfg.tau_end);
    CHECK(r.series[i].temperature == Catch::Approx(want).margin(1e-15));
  }
  CHECK(r.series[0].temperature == Catch::Approx(1.0));
  CHECK(r.series[3].temperature < r.series[0].temperature);
}

TEST_CASE("optimizer batches fire on the configured cadence") {
  TrainConfig cfg = small_cfg(MethodKind::kNoComm);
  cfg.batch_size = 48;  // two full episodes
  cfg.total_episodes = 3;
  RunResult r = train_run(cfg);

  REQUIRE(r.series.size() == 3);
  // No update can have run after the first episode alone.
  CHECK(r.series[0].total == 0.0);
  // The second episode crosses the threshold; the tail flush patches the last.
  CHECK(r.series[1].total != 0.0);
  CHECK(r.series[2].total != 0.0);
}

TEST_CASE("early stopping cuts the run short once returns stagnate") {
  TrainConfig cfg = small_cfg(MethodKind::kNoComm);
  cfg.total_episodes = 30;
  cfg.early_stop_patience = 1;
  RunResult r = train_run(cfg);
  CHECK(r.series.size() >= 1);
  CHECK(r.series.size() < 30);
}

TEST_CASE("evaluation is deterministic given the seed") {
  TrainConfig cfg = small_cfg(MethodKind::kGvq);
  MethodStack stack;
  NetBundle nets;
  ParamSet params = fresh_init(cfg, stack, nets);
  RngStream cb_rng(derive_seed(cfg.seed, seedtag::kCodebook));
  Codebook cb = Codebook::init(cfg.codebook_K, cfg.latent_dim, cfg.codebook_gamma, cb_rng);

  EvalSummary a = evaluate_policy(params, cb, cfg, stack, nets, cfg.channel, 3);
  EvalSummary b = evaluate_policy(params, cb, cfg, stack, nets, cfg.channel, 3);
  CHECK(a.episodes == 3);
  CHECK(a.success_rate == b.success_rate);
  CHECK(a.mean_bits == b.mean_bits);
  CHECK(a.mean_return == b.mean_return);
  CHECK(a.violation == b.violation);
  CHECK(std::isfinite(a.mean_return));
  CHECK(a.violation >= 0.0);
}

TEST_CASE("training under a lossy channel stays deterministic") {
  TrainConfig cfg = small_cfg(MethodKind::kGvq);
  cfg.channel.kind = ChannelModel::Kind::kIidLoss;
  cfg.channel.loss_rate = 0.4;
  cfg.total_episodes = 2;
  RunResult a = train_run(cfg);
  RunResult b = train_run(cfg);
  REQUIRE(a.series.size() == b.series.size());
  for (std::size_t i = 0; i < a.series.size(); ++i) {
    CHECK(a.series[i].bits == b.series[i].bits);
    CHECK(a.series[i].total == b.series[i].total);
  }
  CHECK(params_equal(a.params, b.params));
}

TEST_CASE("run artifacts land in the output directory") {
  namespace fs = std::filesystem;
  fs::path root = fs::temp_directory_path() / "gvq_trainer_test_out";
  fs::remove_all(root);

  TrainConfig cfg = small_cfg(MethodKind::kGvq);
  cfg.out_dir = root.string();
  cfg.checkpoint_every = 2;
  cfg.trace_every = 2;
  RunResult r = train_run(cfg);

  CHECK(fs::exists(root / "metrics.csv"));
  CHECK(fs::exists(root / "checkpoints" / "episode_000002.json"));
  CHECK(fs::exists(root / "checkpoints" / "episode_000004.json"));
  CHECK(fs::exists(root / "checkpoints" / "final.json"));
  CHECK(fs::exists(root / "traces" / "episode_000000.jsonl"));
  CHECK(fs::exists(root / "traces" / "episode_000002.jsonl"));

  std::ifstream csv(root / "metrics.csv");
  std::string line;
  REQUIRE(std::getline(csv, line));
  CHECK(line ==
        "episode,success,bits,return,rl_loss,vq_loss,ib_loss,gate_loss,constraint_loss,"
        "total_loss,lambda,temperature");
  int rows = 0;
  while (std::getline(csv, line))
    if (!line.empty()) ++rows;
  CHECK(rows == static_cast<int>(r.series.size()));

  Checkpoint ck = load_checkpoint(root / "checkpoints" / "final.json");
  CHECK(params_equal(ck.params, r.params));
  CHECK(ck.extra.contains("codebook"));
  CHECK(ck.extra.contains("constraint"));
  CHECK(ck.extra["episode"].get<int>() == static_cast<int>(r.series.size()));

  fs::remove_all(root);
}

TEST_CASE("network shapes follow the config") {
  TrainConfig cfg = small_cfg(MethodKind::kGvq);
  MethodStack stack = build_baseline(cfg.method, cfg);
  NetBundle nets = build_nets(cfg, stack);
  CHECK(nets.policy.widths.front() == kObsFeatures + cfg.msg_embed_dim);
  CHECK(nets.policy.widths.back() == kNumActions);
  CHECK(nets.value.widths.back() == 1);
  CHECK(nets.policy.widths.size() == 5);  // three hidden layers
  CHECK(nets.decoder.spec.widths.front() == stack.payload_dim + 1);
  CHECK(nets.decoder.spec.widths.back() == cfg.msg_embed_dim);
}
