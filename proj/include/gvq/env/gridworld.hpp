#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

#include "gvq/core/error.hpp"
#include "gvq/core/rng.hpp"

namespace gvq {

// Foraging gridworld: agents explore under partial observability, discover
// targets, and extract them. A configurable fraction of targets needs a
// second agent's extraction attempt shortly after the first agent's visit,
// which is what makes communication pay.
struct EnvConfig {
  int grid_size = 20;
  int num_agents = 4;
  int num_targets = 4;
  double obstacle_density = 0.15;
  int obstacle_period = 5;  // steps between obstacle moves
  int horizon = 100;
  double alpha_comm = 0.1;   // per-message cost
  double alpha_move = 0.01;  // per-cell move cost
  double reward_discover = 5.0;
  double reward_extract = 10.0;
  double reward_coord = 2.0;
  // <= 0 means auto: enough for a full horizon of moving and talking, twice
  // over, so energy shapes behavior without usually binding.
  double energy_budget = -1.0;
  double sequential_target_fraction = 0.25;
  std::uint64_t seed = 0;

  double effective_energy_budget() const {
    return energy_budget > 0.0 ? energy_budget
                               : 2.0 * horizon * (alpha_move + alpha_comm);
  }

  void validate() const {
    if (grid_size < 5) throw ConfigError("env: grid_size must be at least 5");
    if (num_agents < 1) throw ConfigError("env: need at least one agent");
    if (num_targets < 1) throw ConfigError("env: need at least one target");
    if (obstacle_density < 0.0 || obstacle_density >= 1.0)
      throw ConfigError("env: obstacle_density must be in [0,1)");
    if (obstacle_period < 1) throw ConfigError("env: obstacle_period must be positive");
    if (horizon < 1) throw ConfigError("env: horizon must be positive");
    if (alpha_comm < 0.0 || alpha_move < 0.0) throw ConfigError("env: costs must be non-negative");
    if (sequential_target_fraction < 0.0 || sequential_target_fraction > 1.0)
      throw ConfigError("env: sequential_target_fraction must be in [0,1]");
    long long cells = static_cast<long long>(grid_size) * grid_size;
    long long obstacles = std::llround(obstacle_density * static_cast<double>(cells));
    if (num_agents + num_targets + obstacles > cells)
      throw ConfigError("env: grid too small for agents, targets, and obstacles");
  }
};

enum class MoveAction { kStay = 0, kUp = 1, kDown = 2, kLeft = 3, kRight = 4 };

struct AgentAction {
  MoveAction move = MoveAction::kStay;
  bool attempt_extract = false;
};

// Flat action ids 0..9 = (move, extract) pairs, used by the policy head.
constexpr int kNumActions = 10;
inline int action_id(AgentAction a) {
  return static_cast<int>(a.move) * 2 + (a.attempt_extract ? 1 : 0);
}
inline AgentAction action_from_id(int id) {
  if (id < 0 || id >= kNumActions) throw ContractError("action_from_id: out of range");
  return AgentAction{static_cast<MoveAction>(id / 2), (id % 2) != 0};
}

struct AgentState {
  int row = 0;
  int col = 0;
  double energy = 0.0;
  int heading = 0;  // last successful move direction, kStay if none yet
  bool alive() const { return energy > 0.0; }
};

struct TargetState {
  int row = 0;
  int col = 0;
  bool discovered = false;
  bool extracted = false;
  bool sequential = false;
  int unlocked_by = -1;
  int unlock_step = -1;
};

// Steps an unlock stays valid for the partner's extraction attempt.
constexpr int kUnlockWindow = 10;

struct EnvState {
  EnvConfig config;
  int step = 0;
  std::vector<AgentState> agents;
  std::vector<TargetState> targets;
  std::vector<std::pair<int, int>> obstacles;
  RngStream obstacle_rng{0};
  bool done = false;
};

struct AgentEvents {
  std::vector<int> discovered;  // target indices this agent discovered
  std::vector<int> extracted;
  bool collided = false;
  bool moved = false;
  bool communicated = false;
  bool extract_failed = false;
  bool coordinated = false;
  double reward = 0.0;
};

struct StepResult {
  double team_reward = 0.0;
  std::vector<AgentEvents> agents;
  bool done = false;
};

namespace detail {

inline bool in_grid(const EnvConfig& c, int r, int col) {
  return r >= 0 && r < c.grid_size && col >= 0 && col < c.grid_size;
}

inline bool agent_at(const EnvState& s, int r, int c, int skip = -1) {
  for (int i = 0; i < static_cast<int>(s.agents.size()); ++i)
    if (i != skip && s.agents[i].row == r && s.agents[i].col == c) return true;
  return false;
}

inline bool obstacle_at(const EnvState& s, int r, int c, int skip = -1) {
  for (int i = 0; i < static_cast<int>(s.obstacles.size()); ++i)
    if (i != skip && s.obstacles[i].first == r && s.obstacles[i].second == c) return true;
  return false;
}

inline int target_at(const EnvState& s, int r, int c) {
  for (int i = 0; i < static_cast<int>(s.targets.size()); ++i)
    if (s.targets[i].row == r && s.targets[i].col == c) return i;
  return -1;
}

inline void move_delta(MoveAction m, int& dr, int& dc) {
  switch (m) {
    case MoveAction::kStay: dr = 0; dc = 0; return;
    case MoveAction::kUp: dr = -1; dc = 0; return;
    case MoveAction::kDown: dr = 1; dc = 0; return;
    case MoveAction::kLeft: dr = 0; dc = -1; return;
    case MoveAction::kRight: dr = 0; dc = 1; return;
  }
  throw ContractError("move_delta: bad move");
}

}  // namespace detail

inline int obstacle_count(const EnvConfig& c) {
  return static_cast<int>(
      std::llround(c.obstacle_density * static_cast<double>(c.grid_size) * c.grid_size));
}

// Deterministic initial layout from config.seed: agents seeded at grid
// corners first, then targets and exactly round(density * cells) obstacles
// on distinct free cells.
inline EnvState env_reset(const EnvConfig& config) {
  config.validate();
  EnvState s;
  s.config = config;
  RngStream rng(derive_seed(config.seed, 0x9e77ull));
  s.obstacle_rng = rng.split(0xb5ull);

  const int G = config.grid_size;
  std::vector<std::pair<int, int>> free_cells;
  free_cells.reserve(static_cast<std::size_t>(G) * G);
  for (int r = 0; r < G; ++r)
    for (int c = 0; c < G; ++c) free_cells.emplace_back(r, c);
  auto take_cell = [&](std::pair<int, int> cell) {
    for (std::size_t i = 0; i < free_cells.size(); ++i)
      if (free_cells[i] == cell) {
        free_cells[i] = free_cells.back();
        free_cells.pop_back();
        return;
      }
    throw ContractError("env_reset: cell taken twice");
  };
  auto take_random = [&]() {
    if (free_cells.empty()) throw ConfigError("env: no free cells left during placement");
    std::size_t i = static_cast<std::size_t>(rng.uniform_int(static_cast<int>(free_cells.size())));
    auto cell = free_cells[i];
    free_cells[i] = free_cells.back();
    free_cells.pop_back();
    return cell;
  };

  const std::array<std::pair<int, int>, 4> corners = {
      {{0, 0}, {G - 1, G - 1}, {0, G - 1}, {G - 1, 0}}};
  double budget = config.effective_energy_budget();
  for (int i = 0; i < config.num_agents; ++i) {
    std::pair<int, int> cell = i < 4 ? corners[i] : take_random();
    if (i < 4) take_cell(cell);
    AgentState a;
    a.row = cell.first;
    a.col = cell.second;
    a.energy = budget;
    s.agents.push_back(a);
  }

  int num_sequential = static_cast<int>(
      std::llround(config.sequential_target_fraction * config.num_targets));
  for (int i = 0; i < config.num_targets; ++i) {
    auto cell = take_random();
    TargetState t;
    t.row = cell.first;
    t.col = cell.second;
    t.sequential = i < num_sequential;
    s.targets.push_back(t);
  }

  int obstacles = obstacle_count(config);
  for (int i = 0; i < obstacles; ++i) s.obstacles.push_back(take_random());
  return s;
}

// Each obstacle proposes one random cardinal step; proposals into occupied or
// out-of-grid cells are rejected. Obstacle count is conserved by
// construction. Consumes exactly one draw per obstacle regardless of
// acceptance, so replay stays aligned.
inline void obstacle_update(EnvState& s, RngStream& rng) {
  static const int dr[4] = {-1, 1, 0, 0};
  static const int dc[4] = {0, 0, -1, 1};
  for (std::size_t i = 0; i < s.obstacles.size(); ++i) {
    int d = rng.uniform_int(4);
    int nr = s.obstacles[i].first + dr[d];
    int nc = s.obstacles[i].second + dc[d];
    if (!detail::in_grid(s.config, nr, nc)) continue;
    if (detail::agent_at(s, nr, nc)) continue;
    if (detail::target_at(s, nr, nc) >= 0) continue;
    if (detail::obstacle_at(s, nr, nc, static_cast<int>(i))) continue;
    s.obstacles[i] = {nr, nc};
  }
}

enum class Cell : int {
  kEmpty = 0,
  kWall = 1,
  kObstacle = 2,
  kAgent = 3,
  kTarget = 4,
  kTargetExtracted = 5,
};
constexpr int kNumCellCodes = 6;
constexpr int kWindowRadius = 2;
constexpr int kWindowCells = 25;
constexpr int kSelfFeatures = 4;
constexpr int kObsFeatures = kWindowCells * kNumCellCodes + kSelfFeatures;

struct Observation {
  std::array<int, kWindowCells> window{};  // row-major cell codes
  std::array<double, kSelfFeatures> self{};
};

// 5x5 window centered on the agent plus normalized self features. Agents
// occlude targets in a shared cell; cells beyond the grid read as wall.
inline Observation env_observe(const EnvState& s, int agent) {
  if (agent < 0 || agent >= static_cast<int>(s.agents.size()))
    throw ContractError("env_observe: bad agent index");
  const AgentState& a = s.agents[agent];
  Observation o;
  int k = 0;
  for (int dr = -kWindowRadius; dr <= kWindowRadius; ++dr) {
    for (int dc = -kWindowRadius; dc <= kWindowRadius; ++dc, ++k) {
      int r = a.row + dr, c = a.col + dc;
      Cell cell = Cell::kEmpty;
      if (!detail::in_grid(s.config, r, c)) {
        cell = Cell::kWall;
      } else if (detail::agent_at(s, r, c)) {
        cell = Cell::kAgent;
      } else {
        int t = detail::target_at(s, r, c);
        if (t >= 0)
          cell = s.targets[t].extracted ? Cell::kTargetExtracted : Cell::kTarget;
        else if (detail::obstacle_at(s, r, c))
          cell = Cell::kObstacle;
      }
      o.window[k] = static_cast<int>(cell);
    }
  }
  double denom = s.config.grid_size > 1 ? s.config.grid_size - 1.0 : 1.0;
  o.self[0] = a.row / denom;
  o.self[1] = a.col / denom;
  o.self[2] = a.energy / s.config.effective_energy_budget();
  o.self[3] = static_cast<double>(s.step) / s.config.horizon;
  return o;
}

inline std::vector<double> obs_features(const Observation& o) {
  std::vector<double> f(kObsFeatures, 0.0);
  for (int i = 0; i < kWindowCells; ++i) f[i * kNumCellCodes + o.window[i]] = 1.0;
  for (int i = 0; i < kSelfFeatures; ++i) f[kWindowCells * kNumCellCodes + i] = o.self[i];
  return f;
}

inline bool windows_overlap(const AgentState& a, const AgentState& b) {
  return std::abs(a.row - b.row) <= 2 * kWindowRadius &&
         std::abs(a.col - b.col) <= 2 * kWindowRadius;
}

// Advances one step: moves resolve in agent-id order (blocked moves cost
// nothing and set the collision flag), then message costs, discovery,
// visit-unlocks, and extraction attempts. Team reward is the sum of
// per-agent rewards.
inline StepResult env_step(EnvState& s, const std::vector<AgentAction>& actions,
                           const std::vector<bool>& comm_flags) {
  const EnvConfig& cfg = s.config;
  const int N = static_cast<int>(s.agents.size());
  if (s.done) throw ContractError("env_step: episode already done");
  if (static_cast<int>(actions.size()) != N || static_cast<int>(comm_flags.size()) != N)
    throw ContractError("env_step: need exactly one action and comm flag per agent");
  for (int i = 0; i < N; ++i) {
    if (!s.agents[i].alive() &&
        (actions[i].move != MoveAction::kStay || actions[i].attempt_extract || comm_flags[i]))
      throw ContractError("env_step: action or message for a depleted agent");
  }

  StepResult out;
  out.agents.resize(N);

  // Moves, id order: later agents see earlier agents' new positions.
  for (int i = 0; i < N; ++i) {
    AgentState& a = s.agents[i];
    if (actions[i].move == MoveAction::kStay) continue;
    int dr, dc;
    detail::move_delta(actions[i].move, dr, dc);
    int nr = a.row + dr, nc = a.col + dc;
    bool blocked = !detail::in_grid(cfg, nr, nc) || detail::obstacle_at(s, nr, nc) ||
                   detail::agent_at(s, nr, nc, i);
    if (blocked) {
      out.agents[i].collided = true;
      continue;
    }
    a.row = nr;
    a.col = nc;
    a.heading = static_cast<int>(actions[i].move);
    a.energy = std::max(0.0, a.energy - cfg.alpha_move);
    out.agents[i].moved = true;
    out.agents[i].reward -= cfg.alpha_move;
  }

  // Message costs land on the sender whether or not delivery succeeds.
  for (int i = 0; i < N; ++i) {
    if (!comm_flags[i]) continue;
    out.agents[i].communicated = true;
    out.agents[i].reward -= cfg.alpha_comm;
    s.agents[i].energy = std::max(0.0, s.agents[i].energy - cfg.alpha_comm);
  }

  // Discovery: any undiscovered target inside an agent's window. Discovering
  // while no other agent's window overlaps the discoverer's earns the
  // coordination bonus (agents that spread out cover more ground).
  for (int i = 0; i < N; ++i) {
    const AgentState& a = s.agents[i];
    for (int t = 0; t < static_cast<int>(s.targets.size()); ++t) {
      TargetState& tg = s.targets[t];
      if (tg.discovered || tg.extracted) continue;
      if (std::abs(tg.row - a.row) > kWindowRadius || std::abs(tg.col - a.col) > kWindowRadius)
        continue;
      tg.discovered = true;
      out.agents[i].discovered.push_back(t);
      out.agents[i].reward += cfg.reward_discover;
      bool overlapped = false;
      for (int j = 0; j < N && !overlapped; ++j)
        if (j != i && windows_overlap(a, s.agents[j])) overlapped = true;
      if (!overlapped) {
        out.agents[i].reward += cfg.reward_coord;
        out.agents[i].coordinated = true;
      }
    }
  }

  // Visit-unlocks for sequential targets. Standing on the cell (re)arms the
  // unlock whenever no unexpired unlock exists.
  for (int i = 0; i < N; ++i) {
    int t = detail::target_at(s, s.agents[i].row, s.agents[i].col);
    if (t < 0) continue;
    TargetState& tg = s.targets[t];
    if (!tg.sequential || tg.extracted) continue;
    bool armed = tg.unlocked_by >= 0 && s.step - tg.unlock_step <= kUnlockWindow;
    if (!armed) {
      tg.unlocked_by = i;
      tg.unlock_step = s.step;
    }
  }

  // Extraction attempts.
  for (int i = 0; i < N; ++i) {
    if (!actions[i].attempt_extract) continue;
    int t = detail::target_at(s, s.agents[i].row, s.agents[i].col);
    if (t < 0 || s.targets[t].extracted) {
      out.agents[i].extract_failed = true;
      continue;
    }
    TargetState& tg = s.targets[t];
    bool ok;
    if (!tg.sequential) {
      ok = true;
    } else {
      ok = tg.unlocked_by >= 0 && tg.unlocked_by != i &&
           s.step - tg.unlock_step <= kUnlockWindow;
    }
    if (ok) {
      tg.extracted = true;
      out.agents[i].extracted.push_back(t);
      out.agents[i].reward += cfg.reward_extract;
    } else {
      out.agents[i].extract_failed = true;
    }
  }

  if ((s.step + 1) % cfg.obstacle_period == 0) obstacle_update(s, s.obstacle_rng);

  s.step += 1;
  for (int i = 0; i < N; ++i) out.team_reward += out.agents[i].reward;

  bool all_extracted = true;
  for (const auto& tg : s.targets) all_extracted &= tg.extracted;
  bool all_dead = true;
  for (const auto& a : s.agents) all_dead &= !a.alive();
  s.done = all_extracted || s.step >= cfg.horizon || all_dead;
  out.done = s.done;
  return out;
}

inline bool episode_success(const EnvState& s) {
  for (const auto& tg : s.targets)
    if (!tg.extracted) return false;
  return true;
}

// FNV-1a over a canonical byte serialization of the dynamic state. Used by
// traces to pin replays.
inline std::uint64_t state_hash(const EnvState& s) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xff;
      h *= 1099511628211ull;
    }
  };
  auto mix_double = [&](double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, sizeof(v));
    mix(v);
  };
  mix(static_cast<std::uint64_t>(s.step));
  for (const auto& a : s.agents) {
    mix(static_cast<std::uint64_t>(a.row));
    mix(static_cast<std::uint64_t>(a.col));
    mix(static_cast<std::uint64_t>(a.heading));
    mix_double(a.energy);
  }
  for (const auto& t : s.targets) {
    mix(static_cast<std::uint64_t>(t.row));
    mix(static_cast<std::uint64_t>(t.col));
    mix(static_cast<std::uint64_t>((t.discovered ? 1 : 0) | (t.extracted ? 2 : 0) |
                                   (t.sequential ? 4 : 0)));
    mix(static_cast<std::uint64_t>(t.unlocked_by));
    mix(static_cast<std::uint64_t>(t.unlock_step));
  }
  for (const auto& o : s.obstacles) {
    mix(static_cast<std::uint64_t>(o.first));
    mix(static_cast<std::uint64_t>(o.second));
  }
  return h;
}

}  // namespace gvq
