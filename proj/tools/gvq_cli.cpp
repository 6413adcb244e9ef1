#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>

#include "CLI11.hpp"
#include "gvq/harness/experiment.hpp"

namespace {

// Output root precedence: --root flag, then GVQ_OUTPUT_ROOT, then the config.
gvq::ExperimentSpec load_spec(const std::string& config, const std::string& root_flag) {
  gvq::ExperimentSpec spec = gvq::load_config(config);
  if (const char* env_root = std::getenv("GVQ_OUTPUT_ROOT"); env_root && *env_root)
    spec.output_root = env_root;
  if (!root_flag.empty()) spec.output_root = root_flag;
  spec.validate();
  return spec;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bandwidth-constrained multi-agent communication experiments"};
  app.require_subcommand(1);

  std::string config, method, root, out;
  std::uint64_t seed = 1;
  int jobs = 1;
  bool force = false, resume = false;

  CLI::App* train = app.add_subcommand("train", "train one method on one seed");
  train->add_option("--config", config, "experiment JSON file")->required();
  train->add_option("--method", method, "method name or configured label")->required();
  train->add_option("--seed", seed, "run seed")->required();
  train->add_option("--root", root, "override the output root directory");
  train->add_flag("--force", force, "redo a completed run");

  CLI::App* sweep = app.add_subcommand("sweep", "run the whole grid from the config");
  sweep->add_option("--config", config, "experiment JSON file")->required();
  sweep->add_option("--jobs", jobs, "parallel workers")->check(CLI::PositiveNumber);
  sweep->add_option("--root", root, "override the output root directory");
  sweep->add_flag("--resume", resume, "skip grid cells that are already complete");
  sweep->add_flag("--force", force, "redo completed grid cells");

  CLI::App* report = app.add_subcommand("report", "aggregate completed runs into CSV reports");
  report->add_option("--root", root, "directory holding the runs")->required();
  report->add_option("--out", out, "report directory (default: <root>/report)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      gvq::ExperimentSpec spec = load_spec(config, root);
      gvq::EvalSummary ev = gvq::cmd_train(spec, method, seed, force);
      std::printf("done: success_rate=%.4f bits_per_episode=%.2f return=%.3f violation=%.4f\n",
                  ev.success_rate, ev.mean_bits, ev.mean_return, ev.violation);
    } else if (sweep->parsed()) {
      gvq::ExperimentSpec spec = load_spec(config, root);
      gvq::SweepReport rep = gvq::cmd_sweep(spec, jobs, resume, force);
      std::printf("sweep: %d completed, %d skipped, %zu failed\n", rep.completed, rep.skipped,
                  rep.failures.size());
      for (const auto& [dir, reason] : rep.failures)
        std::fprintf(stderr, "failed: %s: %s\n", dir.c_str(), reason.c_str());
      if (!rep.failures.empty()) return 1;
    } else if (report->parsed()) {
      gvq::ReportResult res = gvq::cmd_report(root, std::filesystem::path(out));
      std::printf("report: %d runs -> %s\n", res.runs, res.out_dir.string().c_str());
      for (const std::string& f : res.files) std::printf("  %s\n", f.c_str());
      for (const std::string& g : res.gaps) std::fprintf(stderr, "gap: %s\n", g.c_str());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
