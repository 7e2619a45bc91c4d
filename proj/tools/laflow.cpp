// Command-line front end for the training and evaluation pipeline.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "laflow/harness.hpp"

namespace fs = std::filesystem;
using namespace laflow;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string root = "runs";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config_path, "JSON run configuration");
  cmd->add_option("-s,--set", c.overrides, "Override a config entry, e.g. --set flow.widths=[128,128]");
  cmd->add_option("-o,--out", c.root, "Root directory for run outputs");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : load_config(c.config_path);
  cfg.finalize();
  for (const auto& o : c.overrides) apply_override(cfg, o);
  return cfg;
}

fs::path prepare(const Common& c, const RunConfig& cfg) {
  const fs::path dir = run_directory(c.root, cfg);
  fs::create_directories(dir);
  std::ofstream(dir / "config.json") << cfg.to_json().dump(2) << '\n';
  return dir;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"latent action flow policies on a planar arm"};
  app.require_subcommand(1);

  Common gen_opts, latent_opts, flow_opts, eval_opts, pipe_opts;
  auto* gen = app.add_subcommand("gen-demos", "Roll out the scripted expert and write demonstrations");
  add_common(gen, gen_opts);
  auto* latent = app.add_subcommand("train-latent", "Stage 1: train the latent action encoder/decoder");
  add_common(latent, latent_opts);
  auto* flow = app.add_subcommand("train-flow", "Stage 2: train the flow (latent or raw actions)");
  add_common(flow, flow_opts);
  auto* eval = app.add_subcommand("eval", "Evaluate a trained run");
  add_common(eval, eval_opts);
  auto* pipeline = app.add_subcommand("pipeline", "gen-demos, training and eval in one go");
  add_common(pipeline, pipe_opts);

  std::vector<std::string> report_runs;
  std::string report_out = "report", reference = "raw-flow";
  auto* report = app.add_subcommand("report", "Compare evaluated runs");
  report->add_option("runs", report_runs, "Run directories")->required()->expected(2, -1);
  report->add_option("-o,--out", report_out, "Output directory");
  report->add_option("--reference", reference, "Policy the deltas are taken against");

  std::string traj_csv;
  double dt = 0.05, cutoff = 0.0, jref = 1.0;
  int skip_cols = 0;
  auto* metrics = app.add_subcommand("metrics", "Smoothness of a trajectory CSV (rows are time steps)");
  metrics->add_option("csv", traj_csv, "Trajectory file")->required();
  metrics->add_option("--dt", dt, "Seconds per step");
  metrics->add_option("--cutoff", cutoff, "Cutoff frequency in Hz (default: quarter Nyquist)");
  metrics->add_option("--jerk-reference", jref, "Jerk normalization scale");
  metrics->add_option("--skip-columns", skip_cols, "Leading columns to ignore, e.g. a step index");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const RunConfig cfg = resolve(gen_opts);
      const fs::path dir = prepare(gen_opts, cfg);
      const DemoSet set = generate_demos(cfg, &std::cerr);
      for (std::size_t i = 0; i < set.demos.size(); ++i) write_demo(dir / "demos", static_cast<int>(i), set.demos[i], cfg);
      std::cout << dir.string() << '\n';
    } else if (*latent) {
      const RunConfig cfg = resolve(latent_opts);
      const fs::path dir = prepare(latent_opts, cfg);
      const LatentStageResult r = train_latent(cfg, load_demos(dir / "demos"), dir, &std::cerr);
      std::cout << r.checkpoint.string() << '\n';
    } else if (*flow) {
      const RunConfig cfg = resolve(flow_opts);
      const fs::path dir = prepare(flow_opts, cfg);
      const FlowStageResult r = train_flow(cfg, load_demos(dir / "demos"), dir, &std::cerr);
      std::cout << r.checkpoint.string() << '\n';
    } else if (*eval) {
      const RunConfig cfg = resolve(eval_opts);
      const fs::path dir = run_directory(eval_opts.root, cfg);
      Policy policy(dir);
      write_eval(evaluate(policy, &std::cerr), dir);
      std::cout << (dir / "eval").string() << '\n';
    } else if (*pipeline) {
      std::cout << run_pipeline(resolve(pipe_opts), pipe_opts.root, &std::cerr).string() << '\n';
    } else if (*report) {
      std::vector<fs::path> runs(report_runs.begin(), report_runs.end());
      write_report(build_report(runs, reference), report_out);
      std::ifstream md(fs::path(report_out) / "report.md");
      std::cout << md.rdbuf();
    } else if (*metrics) {
      Matrix traj = read_trajectory_csv(traj_csv);
      if (skip_cols >= traj.cols()) throw std::invalid_argument("no columns left after --skip-columns");
      traj = traj.rightCols(traj.cols() - skip_cols).eval();
      const SmoothnessReport r = s_smooth(traj, dt, cutoff > 0.0 ? cutoff : default_cutoff(dt), jref);
      nlohmann::ordered_json j{{"s_jerk", r.s_jerk}, {"s_freq", r.s_freq},   {"s_smooth", r.s_smooth},
                               {"alpha", r.alpha},   {"beta", r.beta},       {"cutoff_hz", r.cutoff},
                               {"dt", r.dt},         {"jerk_reference", r.jerk_reference}};
      std::cout << j.dump(2) << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
