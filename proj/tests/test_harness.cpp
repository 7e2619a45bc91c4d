#include <fstream>
#include <iterator>
#include <numeric>

#include "doctest.h"
#include "laflow/harness.hpp"
#include "support.hpp"

using namespace laflow;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_config(PolicyKind policy = PolicyKind::LatentFlow) {
  RunConfig cfg;
  cfg.policy = policy;
  cfg.demos = 4;
  cfg.epochs = 3;
  cfg.batch_size = 32;
  cfg.raw_cloud_points = 256;
  cfg.geometry.cloud_points = 64;
  cfg.geometry.centers = 8;
  cfg.geometry.neighbors = 8;
  cfg.geometry.local_width = 8;
  cfg.geometry.center_width = 8;
  cfg.geometry.film_hidden = 8;
  cfg.latent.latent_dim = 4;
  cfg.latent.hidden_dim = 8;
  cfg.latent.embed_dim = 8;
  cfg.latent.conv_channels = 4;
  cfg.latent.context_hidden = 8;
  cfg.latent.decoder_widths = {16, 16};
  cfg.flow.widths = {16, 16};
  cfg.flow.time_dim = 8;
  cfg.eval_seeds = {0};
  cfg.eval_trials = 2;
  cfg.finalize();
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

EvalResult synthetic_eval(const std::string& task, PolicyKind policy, double s_smooth, double latency) {
  EvalResult r;
  r.task = task;
  r.policy = policy;
  for (int i = 0; i < 3; ++i) {
    TrialRecord t;
    t.seed = 0;
    t.trial = i;
    t.success = i != 1;
    t.steps = 20;
    t.smoothness.s_smooth = s_smooth;
    t.actions = Matrix::Zero(2, kActionDim);
    t.frames.resize(3);
    r.trials.push_back(t);
  }
  r.summary = aggregate_eval({{true, false, true}});
  r.latency.p50_ms = latency;
  r.mean_s_smooth = s_smooth;
  return r;
}

}  // namespace

TEST_CASE("config: hash is stable and sensitive") {
  const RunConfig a = tiny_config();
  const RunConfig b = RunConfig::from_json(nlohmann::json::parse(a.to_json().dump()));
  CHECK(a.hash() == b.hash());
  CHECK(a.canonical() == b.canonical());
  CHECK(a.hash().size() == 16);
  RunConfig c = a;
  c.seed = 1;
  CHECK(c.hash() != a.hash());
  CHECK(run_directory("runs", a) == fs::path("runs") / ("run-" + a.hash()));
}

TEST_CASE("config: overrides parse JSON values and reject unknown keys") {
  RunConfig cfg = tiny_config();
  apply_override(cfg, "task=pick-place");
  apply_override(cfg, "flow.widths=[8,8]");
  apply_override(cfg, "noise_level=0.1");
  apply_override(cfg, "policy=raw-flow");
  CHECK(cfg.task == "pick-place");
  CHECK(cfg.flow.widths == std::vector<Index>{8, 8});
  CHECK(cfg.noise_level == 0.1);
  CHECK(cfg.policy == PolicyKind::RawFlow);
  CHECK(cfg.flow.state_dim == cfg.generation_horizon * kActionDim);
  CHECK_THROWS(apply_override(cfg, "no_such_knob=1"));
  CHECK_THROWS(apply_override(cfg, "missing-equals"));
  CHECK_THROWS(apply_override(cfg, "generation_horizon=15"));

  nlohmann::json j = tiny_config().to_json();
  j["bogus"] = 1;
  CHECK_THROWS(RunConfig::from_json(j));
}

TEST_CASE("config: file load") {
  test::TempDir dir("cfg");
  const auto file = dir.path() / "c.json";
  {
    std::ofstream out(file);
    out << R"({"task": "obstacle-reach", "demos": 7})";
  }
  const RunConfig cfg = load_config(file);
  CHECK(cfg.task == "obstacle-reach");
  CHECK(cfg.demos == 7);
  CHECK(cfg.epochs == RunConfig{}.epochs);
}

TEST_CASE("demos: all succeed, noise propagates, files are byte-identical across runs") {
  RunConfig cfg = tiny_config();
  const DemoSet a = generate_demos(cfg);
  const DemoSet b = generate_demos(cfg);
  REQUIRE(a.demos.size() == 4);
  for (const auto& d : a.demos) {
    CHECK(d.success);
    CHECK(success_check(d.scene, d.frames));
    CHECK(d.clouds.size() == 1);  // reach never grasps
  }
  test::TempDir d1("demo-a"), d2("demo-b");
  for (int i = 0; i < 4; ++i) {
    write_demo(d1.path(), i, a.demos[static_cast<std::size_t>(i)], cfg);
    write_demo(d2.path(), i, b.demos[static_cast<std::size_t>(i)], cfg);
  }
  int files = 0;
  for (const auto& entry : fs::directory_iterator(d1.path())) {
    ++files;
    CHECK(slurp(entry.path()) == slurp(d2.path() / entry.path().filename()));
  }
  CHECK(files >= 4);

  const DemoSet loaded = load_demos(d1.path());
  REQUIRE(loaded.demos.size() == 4);
  CHECK(loaded.demos[2].actions == a.demos[2].actions);
  CHECK(loaded.demos[2].observations == a.demos[2].observations);
  CHECK(loaded.demos[2].clouds[0] == a.demos[2].clouds[0]);
  CHECK(loaded.demos[2].scene.goal == a.demos[2].scene.goal);

  RunConfig noisy = cfg;
  noisy.noise_level = 0.1;
  const DemoSet n = generate_demos(noisy);
  CHECK(n.demos[0].noise_level == 0.1);
  CHECK(n.demos[0].actions != a.demos[0].actions);
}

TEST_CASE("windows: shapes, normalization and hold padding") {
  const RunConfig cfg = tiny_config();
  const DemoSet set = generate_demos(cfg);
  const Normalizers norm = fit_normalizers(set.demos);
  const WindowDataset w = build_windows(set.demos, {0, 1}, norm, cfg);
  const Index H = cfg.generation_horizon;
  CHECK(w.observations.cols() == cfg.obs_history * kObservationDim);
  CHECK(w.actions.cols() == H * kActionDim);
  CHECK(w.contexts.cols() == cfg.chunks() * kContextDim);
  CHECK(w.size() == set.demos[0].actions.rows() + set.demos[1].actions.rows());
  CHECK(w.scenes.size() >= 2);
  CHECK((w.actions.array().abs() <= 1.0 + 1e-12).all());

  // Last window of demo 0 starts at its final action; the rest is the hold action.
  const Index last = set.demos[0].actions.rows() - 1;
  const Matrix row = w.actions.row(last);
  Eigen::RowVectorXd hold = set.demos[0].actions.row(last);
  hold.head(3).setZero();
  const Eigen::RowVectorXd hold_n = normalize(hold, norm.actions);
  for (Index s = 1; s < H; ++s) CHECK((row.middleCols(s * kActionDim, kActionDim) - hold_n).cwiseAbs().maxCoeff() < 1e-12);

  const VaeBatch batch = make_vae_batch(w, {0, 3, 5}, cfg);
  CHECK(static_cast<Index>(batch.chunks.size()) == cfg.chunks());
  CHECK(batch.chunks[1].cols() == cfg.prediction_horizon * kActionDim);
  CHECK(batch.chunks[1].row(1) == w.actions.row(3).middleCols(cfg.prediction_horizon * kActionDim, cfg.prediction_horizon * kActionDim));
}

TEST_CASE("split: held-out tail") {
  const DemoSplit s = split_demos(30, 0.1);
  CHECK(s.train.size() == 27);
  CHECK(s.validation == std::vector<int>{27, 28, 29});
  CHECK(split_demos(4, 0.1).validation.size() == 1);
}

TEST_CASE("training stages: reload, freeze hashes and one-step policy counters") {
  test::TempDir dir("stages");
  const RunConfig cfg = tiny_config();
  const DemoSet set = generate_demos(cfg);
  const LatentStageResult lat = train_latent(cfg, set, dir.path());
  CHECK(fs::exists(dir.path() / "latent.ckpt"));
  CHECK(fs::exists(dir.path() / "latent_loss.csv"));
  CHECK(lat.curve.size() == 3);

  // Reloaded weights reproduce the final validation loss exactly.
  const Checkpoint ck = load_checkpoint(dir.path() / "latent.ckpt");
  Rng init(0);
  LatentActionModel model(cfg.latent, init);
  ck.get_params("latent.", model.params());
  const Normalizers norm = fit_normalizers(set.demos);
  const DemoSplit split = split_demos(cfg.demos, cfg.validation_fraction);
  const WindowDataset val = build_windows(set.demos, split.validation, norm, cfg);
  CHECK(reconstruction_mse(model, val, cfg) == lat.curve.back()[4]);
  CHECK(parameter_hash(model.encoder_params()) == lat.encoder_hash);

  const std::string before = slurp(dir.path() / "latent.ckpt");
  const FlowStageResult flow = train_flow(cfg, set, dir.path());
  CHECK(flow.freeze_checks == cfg.epochs);
  CHECK(slurp(dir.path() / "latent.ckpt") == before);
  CHECK(fs::exists(dir.path() / "flow_loss.csv"));

  Policy policy(dir.path());
  const TaskScene scene = evaluation_scene(cfg, 0, 0);
  Environment env(scene);
  Rng noise(1), render(2);
  const Matrix actions = policy.act(env, noise, render);
  CHECK(actions.rows() == cfg.prediction_horizon);
  CHECK(actions.cols() == kActionDim);
  CHECK(policy.flow_evaluations() == 1);
  CHECK(policy.decoder_evaluations() == 1);
  policy.act(env, noise, render);
  CHECK(policy.flow_evaluations() == 2);
  CHECK(policy.decoder_evaluations() == 2);
}

TEST_CASE("training stages: tampered frozen weights abort stage two") {
  test::TempDir dir("tamper");
  const RunConfig cfg = tiny_config();
  const DemoSet set = generate_demos(cfg);
  train_latent(cfg, set, dir.path());
  Checkpoint ck = load_checkpoint(dir.path() / "latent.ckpt");
  for (auto& [name, arr] : ck.arrays) {
    if (name.rfind("latent.encoder", 0) == 0) {
      arr.values[0] += 1e-3;
      break;
    }
  }
  save_checkpoint(dir.path() / "latent.ckpt", ck);
  CHECK_THROWS(train_flow(cfg, set, dir.path()));
}

TEST_CASE("evaluation: row count, determinism and expert reference") {
  test::TempDir dir("eval");
  RunConfig cfg = tiny_config(PolicyKind::RawFlow);
  cfg.eval_seeds = {0, 1};
  cfg.finalize();
  const DemoSet set = generate_demos(cfg);
  train_flow(cfg, set, dir.path());
  Policy p1(dir.path()), p2(dir.path());
  const EvalResult a = evaluate(p1);
  const EvalResult b = evaluate(p2);
  CHECK(a.trials.size() == 4);
  REQUIRE(b.trials.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(a.trials[i].success == b.trials[i].success);
    CHECK(a.trials[i].actions == b.trials[i].actions);
  }
  CHECK(a.flow_evals_per_cycle == 1.0);
  CHECK(a.decodes_per_cycle == 0.0);
  CHECK(a.expert_success_rate >= 75.0);
  CHECK(a.latency.calls == static_cast<std::size_t>(cfg.latency_calls));
  int scored = 0;
  double smooth = 0.0;
  for (const auto& t : a.trials) {
    CHECK(t.scored == (t.steps >= kMinScoredSteps));
    if (t.scored) {
      ++scored;
      smooth += t.smoothness.s_smooth;
    }
  }
  CHECK(a.scored_trials == scored);
  if (scored > 0) CHECK(a.mean_s_smooth == doctest::Approx(smooth / scored).epsilon(1e-12));

  write_eval(a, dir.path());
  const std::string csv = slurp(dir.path() / "eval" / "eval.csv");
  CHECK(csv.rfind(std::string(kEvalHeader) + "\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 4);
  CHECK(fs::exists(dir.path() / "eval" / "trajectories" / "seed1_trial01.csv"));
}

TEST_CASE("report: zero deltas for identical inputs, reference column, task mismatch") {
  test::TempDir dir("report");
  const fs::path latent = dir.path() / "latent", raw = dir.path() / "raw", other = dir.path() / "other";
  write_eval(synthetic_eval("reach", PolicyKind::LatentFlow, 0.3, 2.0), latent);
  write_eval(synthetic_eval("reach", PolicyKind::RawFlow, 0.3, 2.0), raw);
  auto rows = build_report({latent, raw}, "raw-flow");
  REQUIRE(rows.size() == 2);
  for (const auto& r : rows) {
    CHECK(r.delta_success_points == 0.0);
    CHECK(r.delta_time_ms == 0.0);
    CHECK(r.smoothness_reduction_pct == 0.0);
  }

  write_eval(synthetic_eval("reach", PolicyKind::LatentFlow, 0.1, 3.0), latent);
  rows = build_report({latent, raw}, "raw-flow");
  const auto& lf = rows[0].policy == "latent-flow" ? rows[0] : rows[1];
  CHECK(lf.delta_time_ms == doctest::Approx(1.0));
  CHECK(lf.smoothness_reduction_pct == doctest::Approx(100.0 * (1.0 - 0.1 / 0.3)));

  write_eval(synthetic_eval("pick-place", PolicyKind::LatentFlow, 0.1, 3.0), other);
  CHECK_THROWS(build_report({latent, raw, other}, "raw-flow"));
  CHECK_THROWS(build_report({latent}, "raw-flow"));
  CHECK_THROWS(build_report({latent, other}, "raw-flow"));

  const fs::path out = dir.path() / "out";
  write_report(rows, out);
  const std::string csv = slurp(out / "report.csv");
  CHECK(csv.rfind(std::string(kReportHeader) + "\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  const auto j = nlohmann::json::parse(slurp(out / "report.json"));
  CHECK(j.at("schema") == "laflow-report");
  CHECK(j.at("version") == kReportVersion);
  for (const char* f : {"report.md", "plot_smoothness.csv", "plot_success.csv", "plot_latency.csv"}) CHECK(fs::exists(out / f));
}

TEST_CASE("latent stage: smoothness regularizer makes consecutive means closer") {
  auto mean_step = [](double lambda_smooth) {
    test::TempDir dir("coherence");
    RunConfig cfg = tiny_config();
    cfg.epochs = 20;
    cfg.lambda_smooth = lambda_smooth;
    const DemoSet set = generate_demos(cfg);
    train_latent(cfg, set, dir.path());
    Rng init(0);
    LatentActionModel model(cfg.latent, init);
    load_checkpoint(dir.path() / "latent.ckpt").get_params("latent.", model.params());
    std::vector<int> all(static_cast<std::size_t>(cfg.demos));
    std::iota(all.begin(), all.end(), 0);
    const WindowDataset w = build_windows(set.demos, all, fit_normalizers(set.demos), cfg);
    std::vector<Index> rows(static_cast<std::size_t>(w.size()));
    std::iota(rows.begin(), rows.end(), Index{0});
    const Matrix mu = model.encode_means(make_vae_batch(w, rows, cfg).chunks);
    const Index dz = cfg.latent.latent_dim;
    double total = 0.0;
    for (Index k = 0; k + 1 < cfg.chunks(); ++k)
      total += (mu.middleCols((k + 1) * dz, dz) - mu.middleCols(k * dz, dz)).rowwise().norm().sum();
    return total / static_cast<double>(mu.rows() * (cfg.chunks() - 1));
  };
  const double with = mean_step(1e-2);
  const double without = mean_step(0.0);
  MESSAGE("mean latent step with ", with, ", without ", without);
  CHECK(with < without);
}
