#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gvq/core/error.hpp"
#include "gvq/env/gridworld.hpp"

namespace gvq {

// One line per step plus a begin/end record per episode. Every report number
// must be recomputable from these files alone, so the step records carry the
// full event set and the exact bits charged.
class TraceWriter {
 public:
  explicit TraceWriter(const std::filesystem::path& path) : f_(path) {
    if (!f_) throw ConfigError("trace: cannot open " + path.string() + " for writing");
  }

  void begin_episode(int episode, std::uint64_t env_seed) {
    nlohmann::json j{{"record", "episode_begin"}, {"episode", episode}, {"env_seed", env_seed}};
    line(j);
  }

  void step(int t, std::uint64_t hash, const std::vector<int>& action_ids,
            const std::vector<bool>& comm, const std::vector<int>& tokens,
            const std::vector<double>& rewards, double team_reward, double bits,
            const StepResult& result) {
    nlohmann::json events = nlohmann::json::object();
    nlohmann::json discovered = nlohmann::json::array();
    nlohmann::json extracted = nlohmann::json::array();
    nlohmann::json collided = nlohmann::json::array();
    nlohmann::json failed = nlohmann::json::array();
    for (int i = 0; i < static_cast<int>(result.agents.size()); ++i) {
      for (int t2 : result.agents[i].discovered) discovered.push_back({i, t2});
      for (int t2 : result.agents[i].extracted) extracted.push_back({i, t2});
      if (result.agents[i].collided) collided.push_back(i);
      if (result.agents[i].extract_failed) failed.push_back(i);
    }
    events["discovered"] = discovered;
    events["extracted"] = extracted;
    events["collided"] = collided;
    events["extract_failed"] = failed;
    nlohmann::json j{{"record", "step"},
                     {"t", t},
                     {"hash", hash},
                     {"actions", action_ids},
                     {"comm", std::vector<int>(comm.begin(), comm.end())},
                     {"tokens", tokens},
                     {"rewards", rewards},
                     {"team_reward", team_reward},
                     {"bits", bits},
                     {"events", events}};
    line(j);
  }

  void end_episode(int episode, bool success, double total_bits, double episode_return,
                   int steps) {
    nlohmann::json j{{"record", "episode_end"}, {"episode", episode},     {"success", success},
                     {"bits", total_bits},      {"return", episode_return}, {"steps", steps}};
    line(j);
  }

 private:
  void line(const nlohmann::json& j) {
    f_ << j.dump() << '\n';
    if (!f_) throw ConfigError("trace: write failed");
  }
  std::ofstream f_;
};

struct EpisodeSummary {
  int episode = 0;
  bool success = false;
  double bits = 0.0;
  double episode_return = 0.0;
  int steps = 0;
  // Token usage histogram over all sent messages in the episode.
  std::vector<long long> token_counts;
};

// Parses a trace file back into per-episode summaries. Malformed lines are
// config errors: a trace that cannot be re-read would silently break the
// reporting pipeline.
inline std::vector<EpisodeSummary> read_trace(const std::filesystem::path& path,
                                              int codebook_size = 0) {
  std::ifstream f(path);
  if (!f) throw ConfigError("trace: cannot open " + path.string());
  std::vector<EpisodeSummary> out;
  EpisodeSummary cur;
  bool open = false;
  std::string linebuf;
  int lineno = 0;
  while (std::getline(f, linebuf)) {
    ++lineno;
    if (linebuf.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(linebuf);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("trace: parse error at " + path.string() + ":" +
                        std::to_string(lineno) + ": " + e.what());
    }
    std::string rec = j.value("record", "");
    if (rec == "episode_begin") {
      cur = EpisodeSummary{};
      cur.episode = j.at("episode").get<int>();
      cur.token_counts.assign(std::max(codebook_size, 0), 0);
      open = true;
    } else if (rec == "step") {
      if (!open) throw ConfigError("trace: step record outside an episode at line " +
                                   std::to_string(lineno));
      for (int tok : j.at("tokens").get<std::vector<int>>()) {
        if (tok < 0) continue;
        if (tok >= static_cast<int>(cur.token_counts.size()))
          cur.token_counts.resize(tok + 1, 0);
        cur.token_counts[tok] += 1;
      }
    } else if (rec == "episode_end") {
      if (!open) throw ConfigError("trace: episode_end without begin at line " +
                                   std::to_string(lineno));
      cur.success = j.at("success").get<bool>();
      cur.bits = j.at("bits").get<double>();
      cur.episode_return = j.at("return").get<double>();
      cur.steps = j.at("steps").get<int>();
      out.push_back(cur);
      open = false;
    } else {
      throw ConfigError("trace: unknown record type at line " + std::to_string(lineno));
    }
  }
  return out;
}

}  // namespace gvq
