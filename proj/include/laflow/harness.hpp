#pragma once
// End-to-end pipeline: demonstrations, window datasets, the two training
// stages, receding-horizon evaluation and comparison reports.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "laflow/checkpoint.hpp"
#include "laflow/flow.hpp"
#include "laflow/geometry.hpp"
#include "laflow/latent_action.hpp"
#include "laflow/metrics.hpp"
#include "laflow/normalize.hpp"
#include "laflow/simenv.hpp"

namespace laflow {

enum class PolicyKind { LatentFlow, RawFlow };
std::string policy_name(PolicyKind kind);
PolicyKind parse_policy(const std::string& name);

struct RunConfig {
  std::string task = "reach";
  PolicyKind policy = PolicyKind::LatentFlow;
  std::uint64_t seed = 0;
  int demos = 30;
  double noise_level = 0.0;
  int epochs = 150;  // both stages
  int batch_size = 96;
  double learning_rate = 1e-4;
  double weight_decay = 1e-4;
  double ema_decay = 0.95;
  double grad_clip = 1.0;
  int obs_history = 2;
  int prediction_horizon = 4;  // executed steps per cycle, equal to the chunk length
  int generation_horizon = 16; // steps generated per cycle
  int window_stride = 1;       // demo steps between consecutive training windows
  double lambda_kl = 1e-3;
  double kl_warmup = 0.1;      // fraction of epochs
  double lambda_smooth = 1e-2;
  double validation_fraction = 0.1;
  int raw_cloud_points = 1024;
  LatentConfig latent;
  FlowConfig flow;
  GeometryConfig geometry;
  std::vector<std::uint64_t> eval_seeds{0, 1, 2};
  int eval_trials = 20;
  int latency_warmup = 10;
  int latency_calls = 100;

  nlohmann::ordered_json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  // Sorted-key compact JSON; the hash input.
  std::string canonical() const;
  std::string hash() const;
  TaskKind task_kind() const { return parse_task(task); }
  Index chunks() const { return generation_horizon / prediction_horizon; }
  // Fills derived sizes (state and conditioning widths) and checks consistency.
  void finalize();
};

RunConfig load_config(const std::filesystem::path& path);
// "a.b=value" with value parsed as JSON when possible, else taken as a string.
void apply_override(RunConfig& cfg, const std::string& assignment);

std::filesystem::path run_directory(const std::filesystem::path& root, const RunConfig& cfg);

// ---------------------------------------------------------------------------
// Demonstrations

struct DemoSet {
  std::vector<Demonstration> demos;
  std::vector<std::uint64_t> scene_seeds;
  int rejected = 0;
};

DemoSet generate_demos(const RunConfig& cfg, std::ostream* log = nullptr);

// Binary container (arrays + scene JSON) and a CSV twin, both versioned.
void write_demo(const std::filesystem::path& dir, int index, const Demonstration& demo, const RunConfig& cfg);
Demonstration read_demo(const std::filesystem::path& file);
DemoSet load_demos(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Datasets

struct Normalizers {
  RangeStats actions;
  RangeStats observations;
};

Normalizers fit_normalizers(const std::vector<Demonstration>& demos);

struct WindowDataset {
  Matrix observations;  // N x (history * obs_dim), normalized
  Matrix actions;       // N x (H * d_a), normalized, time-major
  Matrix contexts;      // N x (K * d_v), context at each chunk start
  std::vector<Index> scene;  // row -> index into scenes
  std::vector<Neighborhoods> scenes;
  std::vector<int> demo;
  Index size() const { return observations.rows(); }
};

// Window at demo step t: observations t-1..t, actions t..t+H-1 padded with
// the hold action (zero joint rates, last gripper command). Scene clouds come
// from the demonstration's recorded sensor clouds.
WindowDataset build_windows(const std::vector<Demonstration>& demos, const std::vector<int>& use, const Normalizers& norm,
                            const RunConfig& cfg);

VaeBatch make_vae_batch(const WindowDataset& data, const std::vector<Index>& rows, const RunConfig& cfg);

Eigen::VectorXd frame_observation(const Frame& frame);

double expert_jerk_reference(const std::vector<Demonstration>& demos, double dt);

// ---------------------------------------------------------------------------
// Training

// The last round(fraction * n) demos, at least one when n >= 2, are held out.
struct DemoSplit {
  std::vector<int> train;
  std::vector<int> validation;
};
DemoSplit split_demos(int n, double fraction);

// Mean squared chunk reconstruction error with posterior means.
double reconstruction_mse(LatentActionModel& model, const WindowDataset& data, const RunConfig& cfg);

struct LatentStageResult {
  std::filesystem::path checkpoint;
  std::vector<std::array<double, 5>> curve;  // recon, kl, smooth, total, validation recon
  double initial_recon = 0.0;
  double final_recon = 0.0;
  std::uint64_t encoder_hash = 0;
  std::uint64_t decoder_hash = 0;
};

LatentStageResult train_latent(const RunConfig& cfg, const DemoSet& demos, const std::filesystem::path& dir,
                               std::ostream* log = nullptr);

struct FlowStageResult {
  std::filesystem::path checkpoint;
  std::vector<std::array<double, 3>> curve;  // flow matching, consistency, total
  int freeze_checks = 0;
};

// Latent-flow runs need the stage-1 checkpoint in `dir`.
FlowStageResult train_flow(const RunConfig& cfg, const DemoSet& demos, const std::filesystem::path& dir,
                           std::ostream* log = nullptr);

// ---------------------------------------------------------------------------
// Policy and evaluation

class Policy {
 public:
  explicit Policy(const std::filesystem::path& dir);

  const RunConfig& config() const { return cfg_; }
  PolicyKind kind() const { return cfg_.policy; }

  // One control cycle: returns the next c actions in environment units.
  Matrix act(const Environment& env, Rng& noise, Rng& render);
  // Observation history (oldest row first) and a raw sensor cloud to actions.
  // Cloud preprocessing is part of inference; rendering is not.
  Matrix infer(const Matrix& history, const PointCloud& cloud, const Eigen::VectorXd& context, Rng& noise);
  Matrix history(const Environment& env) const;

  std::uint64_t flow_evaluations() const { return net_.evaluations(); }
  std::uint64_t decoder_evaluations() const { return decodes_; }
  double jerk_reference() const { return jerk_reference_; }
  VelocityNet& velocity() { return net_; }
  SceneEncoder& scene_encoder() { return scene_; }

 private:
  RunConfig cfg_;
  Normalizers norm_;
  LatentActionModel latent_;
  VelocityNet net_;
  SceneEncoder scene_;
  double jerk_reference_ = 1.0;
  std::uint64_t decodes_ = 0;
};

// Shorter rollouts (early crash or instant success) are left out of the
// smoothness means; their smoothness cells in eval.csv are empty.
constexpr Index kMinScoredSteps = 8;

struct TrialRecord {
  std::uint64_t seed = 0;
  int trial = 0;
  bool success = false;
  int steps = 0;
  bool scored = false;
  SmoothnessReport smoothness;
  double latency_p50_ms = 0.0;
  double latency_p95_ms = 0.0;
  Matrix actions;  // executed, environment units
  std::vector<Frame> frames;
};

struct EvalResult {
  std::string task;
  PolicyKind policy = PolicyKind::LatentFlow;
  std::vector<TrialRecord> trials;
  EvalSummary summary;
  LatencyStats latency;          // controlled measurement on a fixed observation
  double flow_evals_per_cycle = 0.0;
  double decodes_per_cycle = 0.0;
  double expert_success_rate = 0.0;  // scripted expert on the same scenes
  int scored_trials = 0;
  double mean_s_smooth = 0.0;  // over scored trials
  double mean_s_jerk = 0.0;
  double mean_s_freq = 0.0;
};

TaskScene evaluation_scene(const RunConfig& cfg, std::uint64_t seed, int trial);
EvalResult evaluate(Policy& policy, std::ostream* log = nullptr);
// eval.csv, summary.json and per-trial trajectories under dir/eval.
void write_eval(const EvalResult& result, const std::filesystem::path& dir);

// Header of eval.csv.
extern const char* const kEvalHeader;

// ---------------------------------------------------------------------------
// Reports

struct ReportRow {
  std::string task;
  std::string policy;
  double success_mean = 0.0;
  double success_std = 0.0;
  double latency_p50_ms = 0.0;
  double s_smooth = 0.0;
  double s_jerk = 0.0;
  double s_freq = 0.0;
  double delta_success_points = 0.0;
  double delta_time_ms = 0.0;
  double smoothness_reduction_pct = 0.0;
};

extern const char* const kReportHeader;
constexpr int kReportVersion = 1;

// Reads dir/eval/summary.json from each run; deltas are against `reference`.
std::vector<ReportRow> build_report(const std::vector<std::filesystem::path>& runs, const std::string& reference);
void write_report(const std::vector<ReportRow>& rows, const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// Whole pipeline for one config; returns the run directory.
std::filesystem::path run_pipeline(const RunConfig& cfg, const std::filesystem::path& root, std::ostream* log = nullptr);

}  // namespace laflow
