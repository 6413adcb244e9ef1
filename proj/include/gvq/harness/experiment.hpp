#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "gvq/analysis/stats.hpp"
#include "gvq/comm/codebook.hpp"
#include "gvq/harness/config.hpp"

namespace gvq {

inline std::string fmt_num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

// Report CSVs keep enough digits to be re-checked against the raw files.
inline std::string fmt_stat(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

// Directory names double as method identifiers in every report, so
// parameterized variants encode their parameter.
inline std::string method_label(const BaselineVariant& v) {
  std::string s = method_name(v.kind);
  if (v.kind == MethodKind::kScheduled) s += "_k" + std::to_string(v.k);
  if (v.kind == MethodKind::kRandomGate && v.rate != 0.5) s += "_r" + fmt_num(v.rate);
  return s;
}

inline std::string channel_axis_value(const ChannelModel& c) {
  switch (c.kind) {
    case ChannelModel::Kind::kPerfect: return "perfect";
    case ChannelModel::Kind::kIidLoss: return "iid_loss" + fmt_num(c.loss_rate);
    case ChannelModel::Kind::kGilbertElliott:
      return "gilbert_elliott" + fmt_num(c.loss_in_bad);
    case ChannelModel::Kind::kFixedDelay:
      return "fixed_delay" + std::to_string(c.delay_steps);
  }
  throw ContractError("channel_axis_value: bad kind");
}

// One grid cell of a sweep. Unset fields inherit the base run config.
struct SweepPoint {
  std::string tag = "base";
  std::vector<std::pair<std::string, std::string>> axes;

  std::optional<double> budget;
  std::optional<int> codebook_K;
  std::optional<double> tau_gate;
  std::optional<int> num_agents;
  std::optional<ChannelModel> channel;
  std::optional<std::pair<bool, bool>> penalties;  // (env comm cost, gate loss)
  std::optional<std::array<bool, 4>> context_mask;

  void apply(TrainConfig& cfg) const {
    if (budget) cfg.constraint.budget = *budget;
    if (codebook_K) cfg.codebook_K = *codebook_K;
    if (tau_gate) cfg.tau_gate = *tau_gate;
    if (num_agents) cfg.env.num_agents = *num_agents;
    if (channel) cfg.channel = *channel;
    if (penalties) {
      if (!penalties->first) cfg.env.alpha_comm = 0.0;
      if (!penalties->second) cfg.weights.lambda_gate = 0.0;
    }
    if (context_mask) cfg.context_mask = *context_mask;
  }
};

inline std::vector<SweepPoint> enumerate_points(const ExperimentSpec& spec) {
  std::vector<SweepPoint> pts{SweepPoint{}};
  auto grow = [&pts](std::size_t n, auto&& fill) {
    std::vector<SweepPoint> out;
    out.reserve(pts.size() * n);
    for (const auto& base : pts)
      for (std::size_t i = 0; i < n; ++i) {
        SweepPoint q = base;
        fill(q, i);
        out.push_back(std::move(q));
      }
    pts = std::move(out);
  };
  auto stamp = [](SweepPoint& q, const std::string& axis, const std::string& value,
                  const std::string& piece) {
    q.axes.emplace_back(axis, value);
    q.tag = (q.tag == "base") ? piece : q.tag + "_" + piece;
  };

  if (!spec.budgets.empty())
    grow(spec.budgets.size(), [&](SweepPoint& q, std::size_t i) {
      q.budget = spec.budgets[i];
      stamp(q, "budget", fmt_num(spec.budgets[i]), "budget" + fmt_num(spec.budgets[i]));
    });
  if (!spec.codebook_sizes.empty())
    grow(spec.codebook_sizes.size(), [&](SweepPoint& q, std::size_t i) {
      q.codebook_K = spec.codebook_sizes[i];
      std::string v = std::to_string(spec.codebook_sizes[i]);
      stamp(q, "codebook_K", v, "K" + v);
    });
  if (!spec.thresholds.empty())
    grow(spec.thresholds.size(), [&](SweepPoint& q, std::size_t i) {
      q.tau_gate = spec.thresholds[i];
      stamp(q, "tau_gate", fmt_num(spec.thresholds[i]), "tau" + fmt_num(spec.thresholds[i]));
    });
  if (!spec.agent_counts.empty())
    grow(spec.agent_counts.size(), [&](SweepPoint& q, std::size_t i) {
      q.num_agents = spec.agent_counts[i];
      std::string v = std::to_string(spec.agent_counts[i]);
      stamp(q, "agents", v, "agents" + v);
    });
  if (!spec.channels.empty())
    grow(spec.channels.size(), [&](SweepPoint& q, std::size_t i) {
      q.channel = spec.channels[i];
      std::string v = channel_axis_value(spec.channels[i]);
      stamp(q, "channel", v, "ch_" + v);
    });
  if (spec.penalty_grid) {
    static constexpr std::pair<bool, bool> kGrid[4] = {
        {false, false}, {true, false}, {false, true}, {true, true}};
    static constexpr const char* kNames[4] = {"none", "env_cost", "gate_loss", "both"};
    grow(4, [&](SweepPoint& q, std::size_t i) {
      q.penalties = kGrid[i];
      stamp(q, "penalties", kNames[i], std::string("pen_") + kNames[i]);
    });
  }
  if (!spec.context_masks.empty())
    grow(spec.context_masks.size(), [&](SweepPoint& q, std::size_t i) {
      q.context_mask = spec.context_masks[i];
      std::string v;
      for (bool b : spec.context_masks[i]) v += b ? '1' : '0';
      stamp(q, "context", v, "ctx" + v);
    });

  std::set<std::string> tags;
  for (const auto& p : pts)
    if (!tags.insert(p.tag).second)
      throw ConfigError("sweep: duplicate grid cell '" + p.tag + "'");
  return pts;
}

struct PlannedRun {
  SweepPoint point;
  BaselineVariant method;
  std::uint64_t seed = 1;
};

inline std::vector<PlannedRun> plan_runs(const ExperimentSpec& spec) {
  std::set<std::string> labels;
  for (const auto& m : spec.methods)
    if (!labels.insert(method_label(m)).second)
      throw ConfigError("methods: duplicate label '" + method_label(m) + "'");
  std::vector<PlannedRun> runs;
  for (const auto& point : enumerate_points(spec))
    for (const auto& method : spec.methods)
      for (std::uint64_t seed : spec.seeds) runs.push_back({point, method, seed});
  return runs;
}

inline std::filesystem::path run_dir(const ExperimentSpec& spec, const PlannedRun& r) {
  return std::filesystem::path(spec.output_root) / r.point.tag / method_label(r.method) /
         ("seed_" + std::to_string(r.seed));
}

namespace detail {

inline void write_text_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw ConfigError("cannot write " + p.string());
  f << text;
  if (!f.good()) throw ConfigError("short write to " + p.string());
}

inline nlohmann::json read_json_file(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw ConfigError("cannot open " + p.string());
  try {
    nlohmann::json j;
    f >> j;
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad JSON in " + p.string() + ": " + std::string(e.what()));
  }
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline double sample_sd(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  double m = 0.0;
  for (double x : xs) m += x;
  m /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

inline double mean_val(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double m = 0.0;
  for (double x : xs) m += x;
  return m / static_cast<double>(xs.size());
}

}  // namespace detail

// Runs one training job into its run directory: config snapshot first, then
// the training artifacts, eval.json, and the _COMPLETE marker last so a
// crash never leaves a directory that looks finished.
inline EvalSummary execute_run(const ExperimentSpec& spec, const PlannedRun& r) {
  namespace fs = std::filesystem;
  fs::path dir = run_dir(spec, r);
  std::error_code ec;
  fs::remove_all(dir, ec);
  fs::create_directories(dir);

  TrainConfig cfg = spec.train;
  r.point.apply(cfg);
  cfg.method = r.method;
  cfg.seed = r.seed;
  cfg.out_dir = dir.string();

  try {
    nlohmann::json axes = nlohmann::json::object();
    for (const auto& [k, v] : r.point.axes) axes[k] = v;
    nlohmann::json snap{{"point", r.point.tag},
                        {"axes", axes},
                        {"method", cfgjson::method_to_json(r.method)},
                        {"seed", r.seed},
                        {"train", cfgjson::train_to_json(cfg)}};
    detail::write_text_file(dir / "config.json", snap.dump(2) + "\n");

    RunResult res = train_run(cfg);

    nlohmann::json ev{{"success_rate", res.eval.success_rate},
                      {"mean_bits", res.eval.mean_bits},
                      {"mean_return", res.eval.mean_return},
                      {"violation", res.eval.violation},
                      {"episodes", res.eval.episodes},
                      {"train_episodes", static_cast<int>(res.series.size())}};
    detail::write_text_file(dir / "eval.json", ev.dump(2) + "\n");
    detail::write_text_file(dir / "_COMPLETE", "ok\n");
    return res.eval;
  } catch (const std::exception& e) {
    nlohmann::json fail{{"message", e.what()}};
    std::error_code ignore;
    fs::create_directories(dir, ignore);
    std::ofstream f(dir / "_FAILED", std::ios::binary | std::ios::trunc);
    if (f) f << fail.dump(2) << "\n";
    throw;
  }
}

// --method accepts either a configured method's label or a bare method name.
inline BaselineVariant resolve_method(const ExperimentSpec& spec, const std::string& arg) {
  for (const auto& m : spec.methods)
    if (method_label(m) == arg || arg == method_name(m.kind)) return m;
  BaselineVariant v;
  v.kind = method_from_name(arg);
  return v;
}

inline EvalSummary cmd_train(const ExperimentSpec& spec, const std::string& method_arg,
                             std::uint64_t seed, bool force = false) {
  PlannedRun r{SweepPoint{}, resolve_method(spec, method_arg), seed};
  std::filesystem::path dir = run_dir(spec, r);
  if (!force && std::filesystem::exists(dir / "_COMPLETE"))
    throw ConfigError("train: " + dir.string() + " is already complete; pass --force to redo");
  return execute_run(spec, r);
}

struct SweepReport {
  int completed = 0;
  int skipped = 0;
  std::vector<std::pair<std::string, std::string>> failures;  // run dir, reason
};

namespace detail {

inline void write_sweep_results(const ExperimentSpec& spec,
                                const std::vector<PlannedRun>& runs) {
  namespace fs = std::filesystem;
  std::string csv =
      "point,method,seed,success_rate,bits_per_episode,mean_return,violation,eval_episodes\n";
  int rows = 0;
  for (const auto& r : runs) {
    fs::path dir = run_dir(spec, r);
    if (!fs::exists(dir / "_COMPLETE") || !fs::exists(dir / "eval.json")) continue;
    nlohmann::json ev = read_json_file(dir / "eval.json");
    csv += r.point.tag + "," + method_label(r.method) + "," + std::to_string(r.seed) + "," +
           fmt_stat(ev.at("success_rate").get<double>()) + "," +
           fmt_stat(ev.at("mean_bits").get<double>()) + "," +
           fmt_stat(ev.at("mean_return").get<double>()) + "," +
           fmt_stat(ev.at("violation").get<double>()) + "," +
           std::to_string(ev.at("episodes").get<int>()) + "\n";
    ++rows;
  }
  if (rows > 0) write_text_file(fs::path(spec.output_root) / "sweep_results.csv", csv);
}

}  // namespace detail

// Runs the whole grid. Failures are recorded and the rest of the grid still
// runs; --resume skips finished cells, --force redoes them.
inline SweepReport cmd_sweep(const ExperimentSpec& spec, int jobs = 1, bool resume = false,
                             bool force = false) {
  namespace fs = std::filesystem;
  std::vector<PlannedRun> runs = plan_runs(spec);
  SweepReport rep;
  std::mutex mu;
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= runs.size()) return;
      const PlannedRun& r = runs[i];
      fs::path dir = run_dir(spec, r);
      bool done = fs::exists(dir / "_COMPLETE");
      if (done && resume) {
        std::lock_guard<std::mutex> lk(mu);
        ++rep.skipped;
        continue;
      }
      if (done && !force) {
        std::lock_guard<std::mutex> lk(mu);
        rep.failures.emplace_back(dir.string(),
                                  "already complete (use --resume to skip or --force to redo)");
        continue;
      }
      try {
        execute_run(spec, r);
        std::lock_guard<std::mutex> lk(mu);
        ++rep.completed;
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lk(mu);
        rep.failures.emplace_back(dir.string(), e.what());
      }
    }
  };

  int nw = std::max(1, jobs);
  if (nw == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(nw));
    for (int i = 0; i < nw; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  detail::write_sweep_results(spec, runs);
  return rep;
}

// ---------------------------------------------------------------------------
// Report generation. Everything below reads only what the runs persisted, so
// reports can be rebuilt any time without the original process.

struct RunRecord {
  std::filesystem::path dir;
  std::string point;
  std::string method;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> axes;
  double success_rate = 0.0;
  double mean_bits = 0.0;
  double mean_return = 0.0;
  double violation = 0.0;
  int episodes = 0;
  double budget = 0.0;
  bool uses_vq = false;
};

inline std::vector<RunRecord> load_run_records(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::exists(root)) throw ConfigError("report: no such directory: " + root.string());
  std::vector<RunRecord> recs;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file() || entry.path().filename() != "_COMPLETE") continue;
    fs::path dir = entry.path().parent_path();
    try {
      nlohmann::json cfg = detail::read_json_file(dir / "config.json");
      nlohmann::json ev = detail::read_json_file(dir / "eval.json");
      RunRecord r;
      r.dir = dir;
      r.point = cfg.at("point").get<std::string>();
      r.seed = cfg.at("seed").get<std::uint64_t>();
      for (const auto& [k, v] : cfg.at("axes").items()) r.axes[k] = v.get<std::string>();
      BaselineVariant v = cfgjson::parse_method(cfg.at("method"), "method");
      r.method = method_label(v);
      r.uses_vq = v.kind == MethodKind::kGvq || v.kind == MethodKind::kRandomGate ||
                  v.kind == MethodKind::kScheduled;
      r.budget = cfg.at("train").at("constraint").at("budget").get<double>();
      r.success_rate = ev.at("success_rate").get<double>();
      r.mean_bits = ev.at("mean_bits").get<double>();
      r.mean_return = ev.at("mean_return").get<double>();
      r.violation = ev.at("violation").get<double>();
      r.episodes = ev.at("episodes").get<int>();
      recs.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("report: malformed run files in " + dir.string() + ": " +
                        std::string(e.what()));
    }
  }
  std::sort(recs.begin(), recs.end(), [](const RunRecord& a, const RunRecord& b) {
    if (a.point != b.point) return a.point < b.point;
    if (a.method != b.method) return a.method < b.method;
    return a.seed < b.seed;
  });
  return recs;
}

struct ReportResult {
  std::filesystem::path out_dir;
  int runs = 0;
  std::vector<std::string> files;
  std::vector<std::string> gaps;
};

namespace detail {

struct Group {
  std::vector<double> succ, bits, ret, viol;
  double budget = 0.0;
  std::map<std::string, std::string> axes;
};

inline std::string schema_text() {
  return R"(# Report files

All CSVs are regenerated from the persisted run directories only; rerunning
the report on the same runs reproduces them byte for byte. Cells that cannot
be computed (too few seeds, missing baseline) hold `--` and the reason is
listed under `gaps` in `index.json`.

## main_results.csv
One row per (point, method). `point` is the sweep grid cell (`base` when no
axis is swept).

- `seeds`: number of completed seeds aggregated.
- `success_mean`, `success_sd`: sample mean and n-1 standard deviation of the
  per-seed evaluation success rates.
- `success_ci_lo`, `success_ci_hi`: 95% percentile bootstrap interval for the
  mean success rate (1000 resamples, deterministic seeding per row).
- `bits_mean`, `bits_sd`: per-episode transmitted-bits statistics.
- `return_mean`: mean evaluation return.
- `violation_mean`: mean of max(0, bits - budget) / budget.
- `auc`: normalized area under the method's bandwidth/success step envelope
  over [0, 3000] bits, computed across that method's grid points from their
  mean operating points. Repeated on each row of the method.
- `p_vs_no_comm`, `cohens_d_vs_no_comm`: Welch two-sided p-value and effect
  size of per-seed success rates against `no_comm` at the same point.

## pareto_frontier.csv
Per point: the methods whose (bits, success) mean operating point is not
dominated (another method with bits no higher and success no lower, strictly
better in one).

## sweep_results.csv (written next to the runs by the sweep command)
One row per completed run: raw per-seed evaluation numbers.

## codebook_health.csv
One row per completed run of a token-based method: usage entropy (bits) and
dead-code fraction of the final quantizer, from `checkpoints/final.json`.

## constraint_report.csv
Per (point, method): configured bit budget and mean budget violation.

## channel_robustness.csv
Only for runs from a channel sweep: success under each channel plus
`retention_pct`, success as a percentage of the same method's success on the
perfect channel at the otherwise-identical grid cell.

## bandwidth_reduction.csv
Per point: mean bits of the gated method next to the always-send references
(`full_comm` and `info_bottleneck_continuous`) and the percentage cut against
each. The cut depends on which reference is chosen, so both are reported.

## Run directories
Each run directory holds `config.json` (the exact resolved configuration),
`metrics.csv` (per-episode training series: episode, success, bits, return,
loss components, multiplier, temperature), `eval.json` (post-training evaluation
summary), `checkpoints/final.json`, and `_COMPLETE` (written last).
)";
}

}  // namespace detail

// Builds every report file from the run directories under `root`.
inline ReportResult cmd_report(const std::filesystem::path& root,
                               std::filesystem::path out = {},
                               double bandwidth_max = 3000.0,
                               int bootstrap_iterations = 1000) {
  namespace fs = std::filesystem;
  std::vector<RunRecord> recs = load_run_records(root);
  if (recs.empty()) throw ConfigError("report: no completed runs under " + root.string());
  if (out.empty()) out = root / "report";
  fs::create_directories(out);

  ReportResult result;
  result.out_dir = out;
  result.runs = static_cast<int>(recs.size());

  std::map<std::string, std::map<std::string, detail::Group>> by_point;
  std::set<std::string> methods_seen;
  for (const auto& r : recs) {
    detail::Group& g = by_point[r.point][r.method];
    g.succ.push_back(r.success_rate);
    g.bits.push_back(r.mean_bits);
    g.ret.push_back(r.mean_return);
    g.viol.push_back(r.violation);
    g.budget = r.budget;
    g.axes = r.axes;
    methods_seen.insert(r.method);
  }

  // Per-method operating points across the grid, for the area metric.
  std::map<std::string, std::vector<ParetoPoint>> method_points;
  for (const auto& [point, groups] : by_point)
    for (const auto& [method, g] : groups)
      method_points[method].push_back(
          {detail::mean_val(g.bits), detail::mean_val(g.succ), point});
  std::map<std::string, double> method_auc;
  std::set<std::string> auc_missing;
  for (const auto& [method, pts] : method_points) {
    std::vector<ParetoPoint> in_range;
    for (const auto& p : pts)
      if (p.bandwidth <= bandwidth_max) in_range.push_back(p);
    if (in_range.empty()) {
      auc_missing.insert(method);
      result.gaps.push_back("auc omitted for " + method +
                            ": every operating point is beyond bandwidth_max");
      continue;
    }
    method_auc[method] = pareto_auc(pareto_frontier(in_range), bandwidth_max);
  }

  // main_results.csv
  {
    std::string csv =
        "point,method,seeds,success_mean,success_sd,success_ci_lo,success_ci_hi,"
        "bits_mean,bits_sd,return_mean,violation_mean,auc,p_vs_no_comm,cohens_d_vs_no_comm\n";
    for (const auto& [point, groups] : by_point) {
      const detail::Group* nocomm = nullptr;
      auto nc = groups.find("no_comm");
      if (nc != groups.end()) nocomm = &nc->second;
      for (const auto& [method, g] : groups) {
        RngStream rng(detail::fnv1a("ci|" + point + "|" + method));
        CIResult ci = bootstrap_ci(g.succ, bootstrap_iterations, 0.95, rng);
        std::string p = "--", d = "--";
        if (method != "no_comm") {
          if (nocomm == nullptr) {
            result.gaps.push_back("p-value omitted at " + point + "/" + method +
                                  ": no no_comm runs at this point");
          } else if (g.succ.size() < 2 || nocomm->succ.size() < 2) {
            result.gaps.push_back("p-value omitted at " + point + "/" + method +
                                  ": needs at least two seeds per group");
          } else {
            try {
              WelchResult w = welch_t_test(g.succ, nocomm->succ);
              p = fmt_stat(w.p);
              d = fmt_stat(w.cohens_d);
            } catch (const ContractError&) {
              result.gaps.push_back("p-value omitted at " + point + "/" + method +
                                    ": zero variance in both groups with unequal means");
            }
          }
        }
        std::string auc = auc_missing.count(method) ? "--" : fmt_stat(method_auc.at(method));
        csv += point + "," + method + "," + std::to_string(g.succ.size()) + "," +
               fmt_stat(detail::mean_val(g.succ)) + "," + fmt_stat(detail::sample_sd(g.succ)) +
               "," + fmt_stat(ci.lower) + "," + fmt_stat(ci.upper) + "," +
               fmt_stat(detail::mean_val(g.bits)) + "," + fmt_stat(detail::sample_sd(g.bits)) +
               "," + fmt_stat(detail::mean_val(g.ret)) + "," +
               fmt_stat(detail::mean_val(g.viol)) + "," + auc + "," + p + "," + d + "\n";
      }
    }
    detail::write_text_file(out / "main_results.csv", csv);
    result.files.push_back("main_results.csv");
  }

  // pareto_frontier.csv
  {
    std::string csv = "point,bandwidth_bits,success_rate,method\n";
    for (const auto& [point, groups] : by_point) {
      std::vector<ParetoPoint> pts;
      for (const auto& [method, g] : groups)
        pts.push_back({detail::mean_val(g.bits), detail::mean_val(g.succ), method});
      for (const auto& p : pareto_frontier(pts))
        csv += point + "," + fmt_stat(p.bandwidth) + "," + fmt_stat(p.success) + "," +
               p.method + "\n";
    }
    detail::write_text_file(out / "pareto_frontier.csv", csv);
    result.files.push_back("pareto_frontier.csv");
  }

  // codebook_health.csv
  {
    std::string csv = "point,method,seed,usage_entropy_bits,dead_fraction\n";
    bool any = false;
    for (const auto& r : recs) {
      if (!r.uses_vq) continue;
      fs::path final_ck = r.dir / "checkpoints" / "final.json";
      if (!fs::exists(final_ck)) {
        result.gaps.push_back("codebook row omitted for " + r.dir.string() +
                              ": missing checkpoints/final.json");
        continue;
      }
      nlohmann::json ck = detail::read_json_file(final_ck);
      std::vector<double> usage =
          ck.at("extra").at("codebook").at("usage").get<std::vector<double>>();
      CodebookHealth h = codebook_health(usage);
      csv += r.point + "," + r.method + "," + std::to_string(r.seed) + "," +
             fmt_stat(h.usage_entropy_bits) + "," + fmt_stat(h.dead_fraction) + "\n";
      any = true;
    }
    if (any) {
      detail::write_text_file(out / "codebook_health.csv", csv);
      result.files.push_back("codebook_health.csv");
    }
  }

  // constraint_report.csv
  {
    std::string csv = "point,method,budget_bits,violation_mean\n";
    for (const auto& [point, groups] : by_point)
      for (const auto& [method, g] : groups)
        csv += point + "," + method + "," + fmt_stat(g.budget) + "," +
               fmt_stat(detail::mean_val(g.viol)) + "\n";
    detail::write_text_file(out / "constraint_report.csv", csv);
    result.files.push_back("constraint_report.csv");
  }

  // channel_robustness.csv: needs a channel axis in the grid.
  {
    // (method, other axes) -> channel value -> (point, mean success)
    std::map<std::string, std::map<std::string, std::pair<std::string, double>>> cells;
    for (const auto& [point, groups] : by_point)
      for (const auto& [method, g] : groups) {
        auto ch = g.axes.find("channel");
        if (ch == g.axes.end()) continue;
        std::string key = method + "|";
        for (const auto& [k, v] : g.axes)
          if (k != "channel") key += k + "=" + v + ";";
        cells[key][ch->second] = {point, detail::mean_val(g.succ)};
      }
    if (!cells.empty()) {
      std::string csv = "point,method,channel,success_mean,retention_pct\n";
      for (const auto& [key, per_channel] : cells) {
        std::string method = key.substr(0, key.find('|'));
        const std::pair<std::string, double>* perfect = nullptr;
        auto pf = per_channel.find("perfect");
        if (pf != per_channel.end()) perfect = &pf->second;
        for (const auto& [channel, cell] : per_channel) {
          std::string retention = "--";
          if (channel == "perfect") {
            retention = "100";
          } else if (perfect == nullptr) {
            result.gaps.push_back("retention omitted at " + cell.first + "/" + method +
                                  ": no perfect-channel run at the matching cell");
          } else if (perfect->second > 0.0) {
            retention = fmt_stat(100.0 * cell.second / perfect->second);
          } else {
            result.gaps.push_back("retention omitted at " + cell.first + "/" + method +
                                  ": perfect-channel success is zero");
          }
          csv += cell.first + "," + method + "," + channel + "," + fmt_stat(cell.second) +
                 "," + retention + "\n";
        }
      }
      detail::write_text_file(out / "channel_robustness.csv", csv);
      result.files.push_back("channel_robustness.csv");
    }
  }

  // bandwidth_reduction.csv: gated method against both always-send references.
  {
    std::string csv =
        "point,gvq_bits_mean,full_comm_bits_mean,continuous_latent_bits_mean,"
        "cut_vs_full_comm_pct,cut_vs_continuous_pct,note\n";
    bool any = false;
    for (const auto& [point, groups] : by_point) {
      auto gv = groups.find("gvq");
      if (gv == groups.end()) continue;
      double g = detail::mean_val(gv->second.bits);
      auto cut = [&](const char* name) -> std::pair<std::string, std::string> {
        auto it = groups.find(name);
        if (it == groups.end()) return {"--", "--"};
        double b = detail::mean_val(it->second.bits);
        if (b <= 0.0) return {fmt_stat(b), "--"};
        return {fmt_stat(b), fmt_stat(100.0 * (1.0 - g / b))};
      };
      auto [fc_bits, fc_cut] = cut("full_comm");
      auto [ib_bits, ib_cut] = cut("info_bottleneck_continuous");
      csv += point + "," + fmt_stat(g) + "," + fc_bits + "," + ib_bits + "," + fc_cut + "," +
             ib_cut + ",cut depends on the reference method; both reported\n";
      any = true;
    }
    if (any) {
      detail::write_text_file(out / "bandwidth_reduction.csv", csv);
      result.files.push_back("bandwidth_reduction.csv");
    }
  }

  detail::write_text_file(out / "schema.md", detail::schema_text());
  result.files.push_back("schema.md");

  {
    nlohmann::json points = nlohmann::json::array();
    for (const auto& [point, _] : by_point) points.push_back(point);
    nlohmann::json idx{{"runs", result.runs},
                       {"points", points},
                       {"methods", std::vector<std::string>(methods_seen.begin(),
                                                            methods_seen.end())},
                       {"files", result.files},
                       {"gaps", result.gaps}};
    detail::write_text_file(out / "index.json", idx.dump(2) + "\n");
    result.files.push_back("index.json");
  }

  return result;
}

}  // namespace gvq
