#include "laflow/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "laflow/optim.hpp"

namespace laflow {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

std::string policy_name(PolicyKind kind) { return kind == PolicyKind::LatentFlow ? "latent-flow" : "raw-flow"; }

PolicyKind parse_policy(const std::string& name) {
  if (name == "latent-flow") return PolicyKind::LatentFlow;
  if (name == "raw-flow") return PolicyKind::RawFlow;
  throw std::invalid_argument("unknown policy kind: " + name);
}

// ---------------------------------------------------------------------------
// Config

namespace {

ojson widths_json(const std::vector<Index>& w) {
  ojson a = ojson::array();
  for (Index x : w) a.push_back(x);
  return a;
}

std::vector<Index> widths_from(const json& j) {
  std::vector<Index> w;
  for (const auto& x : j) w.push_back(x.get<Index>());
  return w;
}

template <class T>
void read_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void put_u64(Checkpoint& ck, const std::string& name, std::uint64_t v) {
  Matrix m(1, 2);
  m << static_cast<double>(v >> 32), static_cast<double>(v & 0xffffffffULL);
  ck.put(name, m);
}

std::uint64_t get_u64(const Checkpoint& ck, const std::string& name) {
  const Matrix m = ck.get(name);
  return (static_cast<std::uint64_t>(m(0, 0)) << 32) | static_cast<std::uint64_t>(m(0, 1));
}

void put_stats(Checkpoint& ck, const std::string& prefix, const RangeStats& s) {
  ck.put(prefix + ".min", s.min);
  ck.put(prefix + ".max", s.max);
}

RangeStats get_stats(const Checkpoint& ck, const std::string& prefix) {
  RangeStats s;
  s.min = ck.get(prefix + ".min").row(0);
  s.max = ck.get(prefix + ".max").row(0);
  return s;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::trunc);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + p.string());
}

void say(std::ostream* log, const std::string& msg) {
  if (log != nullptr) *log << msg << '\n' << std::flush;
}

std::vector<std::vector<Index>> shuffled_batches(Index n, int batch, Rng& rng) {
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<Index>> out;
  for (std::size_t i = 0; i < perm.size(); i += static_cast<std::size_t>(batch))
    out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(i),
                     perm.begin() + static_cast<std::ptrdiff_t>(std::min(perm.size(), i + static_cast<std::size_t>(batch))));
  return out;
}

Matrix take_rows(const Matrix& m, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
  return out;
}

}  // namespace

ojson RunConfig::to_json() const {
  ojson j;
  j["task"] = task;
  j["policy"] = policy_name(policy);
  j["seed"] = seed;
  j["demos"] = demos;
  j["noise_level"] = noise_level;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["learning_rate"] = learning_rate;
  j["weight_decay"] = weight_decay;
  j["ema_decay"] = ema_decay;
  j["grad_clip"] = grad_clip;
  j["obs_history"] = obs_history;
  j["prediction_horizon"] = prediction_horizon;
  j["generation_horizon"] = generation_horizon;
  j["window_stride"] = window_stride;
  j["lambda_kl"] = lambda_kl;
  j["kl_warmup"] = kl_warmup;
  j["lambda_smooth"] = lambda_smooth;
  j["validation_fraction"] = validation_fraction;
  j["raw_cloud_points"] = raw_cloud_points;
  j["latent"] = {{"latent_dim", latent.latent_dim},       {"hidden_dim", latent.hidden_dim},
                 {"embed_dim", latent.embed_dim},         {"conv_channels", latent.conv_channels},
                 {"context_hidden", latent.context_hidden}, {"decoder_widths", widths_json(latent.decoder_widths)},
                 {"logvar_min", latent.logvar_min},       {"logvar_max", latent.logvar_max}};
  j["flow"] = {{"time_dim", flow.time_dim},
               {"widths", widths_json(flow.widths)},
               {"lambda_consistency", flow.lambda_consistency},
               {"consistency_delta", flow.consistency_delta},
               {"generation_time", flow.generation_time}};
  j["geometry"] = {{"cloud_points", geometry.cloud_points}, {"centers", geometry.centers},
                   {"neighbors", geometry.neighbors},       {"local_width", geometry.local_width},
                   {"center_width", geometry.center_width}, {"film_hidden", geometry.film_hidden},
                   {"fps_start", geometry.fps_start}};
  j["eval_seeds"] = eval_seeds;
  j["eval_trials"] = eval_trials;
  j["latency_warmup"] = latency_warmup;
  j["latency_calls"] = latency_calls;
  return j;
}

RunConfig RunConfig::from_json(const json& j) {
  static const std::set<std::string> known{
      "task", "policy", "seed", "demos", "noise_level", "epochs", "batch_size", "learning_rate", "weight_decay",
      "ema_decay", "grad_clip", "obs_history", "prediction_horizon", "generation_horizon", "window_stride",
      "lambda_kl", "kl_warmup", "lambda_smooth", "validation_fraction", "raw_cloud_points", "latent", "flow",
      "geometry", "eval_seeds", "eval_trials", "latency_warmup", "latency_calls"};
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw std::invalid_argument("unknown config key: " + key);
  RunConfig c;
  read_if(j, "task", c.task);
  if (j.contains("policy")) c.policy = parse_policy(j.at("policy").get<std::string>());
  read_if(j, "seed", c.seed);
  read_if(j, "demos", c.demos);
  read_if(j, "noise_level", c.noise_level);
  read_if(j, "epochs", c.epochs);
  read_if(j, "batch_size", c.batch_size);
  read_if(j, "learning_rate", c.learning_rate);
  read_if(j, "weight_decay", c.weight_decay);
  read_if(j, "ema_decay", c.ema_decay);
  read_if(j, "grad_clip", c.grad_clip);
  read_if(j, "obs_history", c.obs_history);
  read_if(j, "prediction_horizon", c.prediction_horizon);
  read_if(j, "generation_horizon", c.generation_horizon);
  read_if(j, "window_stride", c.window_stride);
  read_if(j, "lambda_kl", c.lambda_kl);
  read_if(j, "kl_warmup", c.kl_warmup);
  read_if(j, "lambda_smooth", c.lambda_smooth);
  read_if(j, "validation_fraction", c.validation_fraction);
  read_if(j, "raw_cloud_points", c.raw_cloud_points);
  if (j.contains("latent")) {
    const auto& l = j.at("latent");
    read_if(l, "latent_dim", c.latent.latent_dim);
    read_if(l, "hidden_dim", c.latent.hidden_dim);
    read_if(l, "embed_dim", c.latent.embed_dim);
    read_if(l, "conv_channels", c.latent.conv_channels);
    read_if(l, "context_hidden", c.latent.context_hidden);
    if (l.contains("decoder_widths")) c.latent.decoder_widths = widths_from(l.at("decoder_widths"));
    read_if(l, "logvar_min", c.latent.logvar_min);
    read_if(l, "logvar_max", c.latent.logvar_max);
  }
  if (j.contains("flow")) {
    const auto& f = j.at("flow");
    read_if(f, "time_dim", c.flow.time_dim);
    if (f.contains("widths")) c.flow.widths = widths_from(f.at("widths"));
    read_if(f, "lambda_consistency", c.flow.lambda_consistency);
    read_if(f, "consistency_delta", c.flow.consistency_delta);
    read_if(f, "generation_time", c.flow.generation_time);
  }
  if (j.contains("geometry")) {
    const auto& g = j.at("geometry");
    read_if(g, "cloud_points", c.geometry.cloud_points);
    read_if(g, "centers", c.geometry.centers);
    read_if(g, "neighbors", c.geometry.neighbors);
    read_if(g, "local_width", c.geometry.local_width);
    read_if(g, "center_width", c.geometry.center_width);
    read_if(g, "film_hidden", c.geometry.film_hidden);
    read_if(g, "fps_start", c.geometry.fps_start);
  }
  if (j.contains("eval_seeds")) c.eval_seeds = j.at("eval_seeds").get<std::vector<std::uint64_t>>();
  read_if(j, "eval_trials", c.eval_trials);
  read_if(j, "latency_warmup", c.latency_warmup);
  read_if(j, "latency_calls", c.latency_calls);
  c.finalize();
  return c;
}

void RunConfig::finalize() {
  (void)task_kind();
  if (prediction_horizon < 1 || generation_horizon % prediction_horizon != 0)
    throw std::invalid_argument("config: generation_horizon must be a positive multiple of prediction_horizon");
  if (obs_history < 1) throw std::invalid_argument("config: obs_history must be at least 1");
  if (demos < 1 || epochs < 1 || batch_size < 1 || window_stride < 1 || eval_trials < 1 || eval_seeds.empty())
    throw std::invalid_argument("config: counts must be positive");
  if (latency_warmup < 10 || latency_calls < 100)
    throw std::invalid_argument("config: latency needs >= 10 warmup and >= 100 timed calls");
  latent.chunk = prediction_horizon;
  latent.action_dim = kActionDim;
  latent.context_dim = kContextDim;
  flow.state_dim = policy == PolicyKind::LatentFlow ? chunks() * latent.latent_dim
                                                    : static_cast<Index>(generation_horizon) * kActionDim;
  flow.cond_dim = static_cast<Index>(obs_history) * kObservationDim;
}

std::string RunConfig::canonical() const { return json(to_json()).dump(); }

std::string RunConfig::hash() const { return config_hash(canonical()); }

RunConfig load_config(const fs::path& path) { return RunConfig::from_json(json::parse(read_text(path))); }

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw std::invalid_argument("override must look like key=value: " + assignment);
  std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json j = cfg.to_json();
  std::replace(key.begin(), key.end(), '.', '/');
  const json::json_pointer ptr("/" + key);
  if (!j.contains(ptr)) throw std::invalid_argument("unknown config key: " + assignment.substr(0, eq));
  j[ptr] = value;
  cfg = RunConfig::from_json(j);
}

fs::path run_directory(const fs::path& root, const RunConfig& cfg) { return root / ("run-" + cfg.hash()); }

// ---------------------------------------------------------------------------
// Demonstrations

namespace {

void attach_clouds(Demonstration& d, const RunConfig& cfg) {
  d.clouds.clear();
  const bool grasps = std::any_of(d.frames.begin(), d.frames.end(), [](const Frame& f) { return f.held; });
  for (int phase = 0; phase < (grasps ? 2 : 1); ++phase) {
    Rng rng = make_stream(cfg.seed, "demo-cloud", d.scene.seed * 2 + static_cast<std::uint64_t>(phase));
    const bool visible = d.scene.kind == TaskKind::PickPlace && phase == 0;
    d.clouds.push_back(render_point_cloud(d.scene, visible ? &d.scene.object : nullptr, cfg.raw_cloud_points, rng));
  }
}

}  // namespace

DemoSet generate_demos(const RunConfig& cfg, std::ostream* log) {
  constexpr int kAttempts = 20;
  DemoSet set;
  const TaskKind kind = cfg.task_kind();
  for (int i = 0; i < cfg.demos; ++i) {
    bool done = false;
    for (int attempt = 0; attempt < kAttempts && !done; ++attempt) {
      const std::uint64_t scene_seed = static_cast<std::uint64_t>(i) * 1000 + static_cast<std::uint64_t>(attempt);
      Rng scene_rng = make_stream(cfg.seed, "demo-scene", scene_seed);
      TaskScene scene = sample_scene(kind, scene_rng);
      scene.seed = scene_seed;
      Rng noise = make_stream(cfg.seed, "demo-noise", scene_seed);
      Demonstration d = scripted_expert(scene, cfg.noise_level, noise);
      if (!d.success) {
        ++set.rejected;
        say(log, "demo " + std::to_string(i) + ": expert failed on scene " + std::to_string(scene_seed) + ", resampling");
        continue;
      }
      attach_clouds(d, cfg);
      set.demos.push_back(std::move(d));
      set.scene_seeds.push_back(scene_seed);
      done = true;
    }
    if (!done) throw std::runtime_error("gen-demos: no feasible scene for demo " + std::to_string(i));
  }
  const double rate = static_cast<double>(set.rejected) / static_cast<double>(set.rejected + cfg.demos);
  if (rate > 0.1) {
    std::ostringstream os;
    os << "gen-demos: expert failed on " << set.rejected << " of " << set.rejected + cfg.demos
       << " sampled scenes (> 10%); task " << cfg.task << ", noise " << cfg.noise_level;
    throw std::runtime_error(os.str());
  }
  return set;
}

namespace {

constexpr int kFrameCols = 10;  // q1..q3, ee_x, ee_y, gripper, obj_x, obj_y, held, collision

Matrix frames_matrix(const std::vector<Frame>& frames) {
  Matrix m(static_cast<Index>(frames.size()), kFrameCols);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const Frame& f = frames[i];
    m.row(static_cast<Index>(i)) << f.arm.q.transpose(), f.arm.ee.transpose(), f.arm.gripper_closed ? 1.0 : 0.0,
        f.object.transpose(), f.held ? 1.0 : 0.0, f.collision ? 1.0 : 0.0;
  }
  return m;
}

std::vector<Frame> frames_from(const Matrix& m) {
  std::vector<Frame> frames;
  for (Index i = 0; i < m.rows(); ++i) {
    Frame f;
    f.arm.q = m.row(i).segment<3>(0).transpose();
    f.arm.ee = m.row(i).segment<2>(3).transpose();
    f.arm.gripper_closed = m(i, 5) > 0.5;
    f.object = m.row(i).segment<2>(6).transpose();
    f.held = m(i, 8) > 0.5;
    f.collision = m(i, 9) > 0.5;
    frames.push_back(f);
  }
  return frames;
}

}  // namespace

void write_demo(const fs::path& dir, int index, const Demonstration& demo, const RunConfig& cfg) {
  fs::create_directories(dir);
  char stem[32];
  std::snprintf(stem, sizeof stem, "demo_%03d", index);
  Checkpoint ck;
  ck.config_json = scene_to_json(demo.scene);
  ck.config_hash = config_hash(ck.config_json);
  ck.put("actions", demo.actions);
  ck.put("observations", demo.observations);
  ck.put("contexts", demo.contexts);
  ck.put("frames", frames_matrix(demo.frames));
  ck.put_scalar("noise_level", demo.noise_level);
  ck.put_scalar("success", demo.success ? 1.0 : 0.0);
  ck.put_scalar("dt", ArmConfig{}.dt);
  for (std::size_t i = 0; i < demo.clouds.size(); ++i) {
    ck.put("cloud." + std::to_string(i), demo.clouds[i]);
    std::ofstream os(dir / (std::string(stem) + "_cloud" + std::to_string(i) + ".txt"));
    write_point_cloud(os, demo.clouds[i]);
  }
  save_checkpoint(dir / (std::string(stem) + ".lfd"), ck);
  write_text(dir / (std::string("scene_") + (stem + 5) + ".json"), ck.config_json + "\n");

  std::ostringstream os;
  os << "# laflow-demo v1\n";
  os << "# task=" << cfg.task << " seed=" << demo.scene.seed << " dt=" << fmt_g(ArmConfig{}.dt)
     << " H=" << demo.actions.rows() << " d_a=" << kActionDim << " noise=" << fmt_g(demo.noise_level) << '\n';
  os << "step,a1,a2,a3,a4,v1,v2,v3,v4,v5\n";
  os << std::setprecision(17);
  for (Index t = 0; t < demo.actions.rows(); ++t) {
    os << t;
    for (Index k = 0; k < kActionDim; ++k) os << ',' << demo.actions(t, k);
    for (Index k = 0; k < kContextDim; ++k) os << ',' << demo.contexts(t, k);
    os << '\n';
  }
  write_text(dir / (std::string(stem) + ".csv"), os.str());
}

Demonstration read_demo(const fs::path& file) {
  const Checkpoint ck = load_checkpoint(file);
  Demonstration d;
  d.scene = scene_from_json(ck.config_json);
  d.actions = ck.get("actions");
  d.observations = ck.get("observations");
  d.contexts = ck.get("contexts");
  d.frames = frames_from(ck.get("frames"));
  d.noise_level = ck.get_scalar("noise_level");
  d.success = ck.get_scalar("success") > 0.5;
  for (int i = 0; ck.has("cloud." + std::to_string(i)); ++i) d.clouds.push_back(ck.get("cloud." + std::to_string(i)));
  return d;
}

DemoSet load_demos(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".lfd") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no demonstrations in " + dir.string());
  DemoSet set;
  for (const auto& f : files) {
    set.demos.push_back(read_demo(f));
    set.scene_seeds.push_back(set.demos.back().scene.seed);
  }
  return set;
}

// ---------------------------------------------------------------------------
// Datasets

Normalizers fit_normalizers(const std::vector<Demonstration>& demos) {
  Index na = 0, no = 0;
  for (const auto& d : demos) {
    na += d.actions.rows();
    no += d.observations.rows();
  }
  Matrix a(na, kActionDim), o(no, kObservationDim);
  Index ra = 0, ro = 0;
  for (const auto& d : demos) {
    a.middleRows(ra, d.actions.rows()) = d.actions;
    o.middleRows(ro, d.observations.rows()) = d.observations;
    ra += d.actions.rows();
    ro += d.observations.rows();
  }
  return {RangeStats::fit(a), RangeStats::fit(o)};
}

Eigen::VectorXd frame_observation(const Frame& f) {
  Eigen::VectorXd o(kObservationDim);
  o << f.arm.q, f.arm.ee, f.arm.gripper_closed ? 1.0 : -1.0;
  return o;
}

WindowDataset build_windows(const std::vector<Demonstration>& demos, const std::vector<int>& use, const Normalizers& norm,
                            const RunConfig& cfg) {
  const Index H = cfg.generation_horizon, c = cfg.prediction_horizon, K = cfg.chunks(), hist = cfg.obs_history;
  std::vector<Eigen::RowVectorXd> obs_rows, act_rows, ctx_rows;
  WindowDataset data;
  std::map<std::pair<int, int>, Index> scene_ids;
  for (int d : use) {
    const Demonstration& demo = demos[static_cast<std::size_t>(d)];
    const Index T = demo.actions.rows();
    const Matrix obs = normalize(demo.observations, norm.observations);
    Matrix hold = Matrix::Zero(1, kActionDim);
    hold(0, 3) = demo.actions(T - 1, 3);
    const Matrix hold_n = normalize(hold, norm.actions);
    const Matrix act = normalize(demo.actions, norm.actions);
    for (Index t = 0; t < T; t += cfg.window_stride) {
      Eigen::RowVectorXd o(hist * kObservationDim);
      for (Index h = 0; h < hist; ++h) o.segment(h * kObservationDim, kObservationDim) = obs.row(std::max<Index>(0, t - (hist - 1 - h)));
      Eigen::RowVectorXd a(H * kActionDim);
      for (Index s = 0; s < H; ++s) a.segment(s * kActionDim, kActionDim) = t + s < T ? act.row(t + s) : hold_n.row(0);
      Eigen::RowVectorXd v(K * kContextDim);
      for (Index k = 0; k < K; ++k) v.segment(k * kContextDim, kContextDim) = demo.contexts.row(std::min(t + k * c, T));
      const Frame& f = demo.frames[static_cast<std::size_t>(t)];
      const std::size_t phase = f.held ? 1 : 0;
      if (phase >= demo.clouds.size()) throw std::runtime_error("build_windows: demonstration lacks its scene cloud");
      const auto key = std::make_pair(d, static_cast<int>(phase));
      auto it = scene_ids.find(key);
      if (it == scene_ids.end()) {
        data.scenes.push_back(preprocess_cloud(demo.clouds[phase], workspace_box(), cfg.geometry));
        it = scene_ids.emplace(key, static_cast<Index>(data.scenes.size()) - 1).first;
      }
      data.scene.push_back(it->second);
      data.demo.push_back(d);
      obs_rows.push_back(o);
      act_rows.push_back(a);
      ctx_rows.push_back(v);
    }
  }
  const auto stack = [](const std::vector<Eigen::RowVectorXd>& rows) {
    Matrix m(static_cast<Index>(rows.size()), rows.empty() ? 0 : rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Index>(i)) = rows[i];
    return m;
  };
  data.observations = stack(obs_rows);
  data.actions = stack(act_rows);
  data.contexts = stack(ctx_rows);
  return data;
}

VaeBatch make_vae_batch(const WindowDataset& data, const std::vector<Index>& rows, const RunConfig& cfg) {
  VaeBatch b;
  const Index width = cfg.prediction_horizon * kActionDim;
  const Matrix a = take_rows(data.actions, rows);
  const Matrix v = take_rows(data.contexts, rows);
  for (Index k = 0; k < cfg.chunks(); ++k) {
    b.chunks.push_back(a.middleCols(k * width, width));
    b.contexts.push_back(v.middleCols(k * kContextDim, kContextDim));
  }
  return b;
}

double expert_jerk_reference(const std::vector<Demonstration>& demos, double dt) {
  std::vector<double> values;
  for (const auto& d : demos)
    if (d.actions.rows() >= 4) values.push_back(s_jerk(d.actions.leftCols(3), dt));
  if (values.empty()) throw std::runtime_error("no demonstration long enough for a jerk reference");
  const double m = median(values);
  return m > 0.0 ? m : 1.0;
}

// ---------------------------------------------------------------------------
// Training

DemoSplit split_demos(int n, double fraction) {
  DemoSplit s;
  int n_val = static_cast<int>(std::lround(fraction * n));
  if (n >= 2) n_val = std::clamp(n_val, 1, n - 1);
  else n_val = 0;
  for (int i = 0; i < n; ++i) (i < n - n_val ? s.train : s.validation).push_back(i);
  return s;
}

double reconstruction_mse(LatentActionModel& model, const WindowDataset& data, const RunConfig& cfg) {
  if (data.size() == 0) return 0.0;
  Rng unused = make_stream(0, "unused");
  double total = 0.0;
  Index seen = 0;
  for (Index start = 0; start < data.size(); start += 512) {
    std::vector<Index> rows;
    for (Index i = start; i < std::min(data.size(), start + 512); ++i) rows.push_back(i);
    Tape tape;
    const VaeLoss l = model.loss(tape, make_vae_batch(data, rows, cfg), 0.0, 0.0, SampleMode::Eval, unused);
    total += l.recon * static_cast<double>(rows.size());
    seen += static_cast<Index>(rows.size());
  }
  return total / static_cast<double>(seen);
}

namespace {

// Swaps EMA weights in for the duration of `fn`.
template <class Fn>
auto with_ema(Ema& ema, const ParamList& params, Fn&& fn) {
  std::vector<Matrix> saved;
  for (auto* p : params) saved.push_back(p->value);
  ema.copy_to(params);
  auto result = fn();
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = saved[i];
  return result;
}

Checkpoint base_checkpoint(const RunConfig& cfg) {
  Checkpoint ck;
  ck.config_json = cfg.canonical();
  ck.config_hash = cfg.hash();
  return ck;
}

}  // namespace

LatentStageResult train_latent(const RunConfig& cfg, const DemoSet& demos, const fs::path& dir, std::ostream* log) {
  if (cfg.policy != PolicyKind::LatentFlow) throw std::invalid_argument("train-latent: policy kind is not latent-flow");
  const Normalizers norm = fit_normalizers(demos.demos);
  for (const auto& w : norm.actions.warnings) say(log, "action normalization: " + w);
  for (const auto& w : norm.observations.warnings) say(log, "observation normalization: " + w);
  const DemoSplit split = split_demos(static_cast<int>(demos.demos.size()), cfg.validation_fraction);
  const WindowDataset train = build_windows(demos.demos, split.train, norm, cfg);
  const WindowDataset val = build_windows(demos.demos, split.validation, norm, cfg);

  Rng init = make_stream(cfg.seed, "latent-init");
  LatentActionModel model(cfg.latent, init);
  ParamList params = model.params();
  AdamWConfig opt_cfg;
  opt_cfg.learning_rate = cfg.learning_rate;
  opt_cfg.weight_decay = cfg.weight_decay;
  AdamW opt(params, opt_cfg);
  Ema ema(params, cfg.ema_decay);
  Rng shuffle = make_stream(cfg.seed, "latent-shuffle");
  Rng sampling = make_stream(cfg.seed, "latent-sampling");

  LatentStageResult result;
  result.checkpoint = dir / "latent.ckpt";
  result.initial_recon = reconstruction_mse(model, train, cfg);
  const double jerk_ref = expert_jerk_reference(demos.demos, ArmConfig{}.dt);
  const int warm = std::max(1, static_cast<int>(std::ceil(cfg.kl_warmup * cfg.epochs)));

  auto save = [&](const ParamList& ps) {
    Checkpoint ck = base_checkpoint(cfg);
    ck.put_params("latent.", ps);
    put_stats(ck, "norm.actions", norm.actions);
    put_stats(ck, "norm.observations", norm.observations);
    ck.put_scalar("jerk_reference", jerk_ref);
    put_u64(ck, "hash.encoder", parameter_hash(model.encoder_params()));
    put_u64(ck, "hash.decoder", parameter_hash(model.decoder_params()));
    save_checkpoint(result.checkpoint, ck);
  };

  std::ostringstream csv;
  csv << "epoch,recon,kl,smooth,total,val_recon\n";
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lambda_kl = cfg.lambda_kl * std::min(1.0, static_cast<double>(epoch + 1) / warm);
    std::array<double, 5> acc{0, 0, 0, 0, 0};
    for (const auto& rows : shuffled_batches(train.size(), cfg.batch_size, shuffle)) {
      zero_grad(params);
      Tape tape;
      VaeLoss l;
      try {
        l = model.loss(tape, make_vae_batch(train, rows, cfg), lambda_kl, cfg.lambda_smooth, SampleMode::Train, sampling);
      } catch (const std::domain_error&) {
        ema.copy_to(params);
        save(params);
        throw std::runtime_error("train-latent: non-finite loss at epoch " + std::to_string(epoch + 1) +
                                 "; last good weights saved");
      }
      tape.backward(l.total);
      clip_grad_norm(params, cfg.grad_clip);
      opt.step();
      ema.update(params);
      const double w = static_cast<double>(rows.size()) / static_cast<double>(train.size());
      acc[0] += w * l.recon;
      acc[1] += w * l.kl;
      acc[2] += w * l.smooth;
      acc[3] += w * l.total.scalar();
    }
    acc[4] = with_ema(ema, params, [&] { return reconstruction_mse(model, val, cfg); });
    result.curve.push_back(acc);
    csv << epoch + 1 << ',' << fmt_g(acc[0]) << ',' << fmt_g(acc[1]) << ',' << fmt_g(acc[2]) << ',' << fmt_g(acc[3])
        << ',' << fmt_g(acc[4]) << '\n';
    if ((epoch + 1) % 25 == 0 || epoch == 0)
      say(log, "latent epoch " + std::to_string(epoch + 1) + " recon " + fmt_g(acc[0]) + " val " + fmt_g(acc[4]));
  }
  ema.copy_to(params);
  result.final_recon = reconstruction_mse(model, train, cfg);
  result.encoder_hash = parameter_hash(model.encoder_params());
  result.decoder_hash = parameter_hash(model.decoder_params());
  save(params);
  write_text(dir / "latent_loss.csv", csv.str());
  return result;
}

FlowStageResult train_flow(const RunConfig& cfg, const DemoSet& demos, const fs::path& dir, std::ostream* log) {
  const Normalizers norm = fit_normalizers(demos.demos);
  std::vector<int> all(demos.demos.size());
  std::iota(all.begin(), all.end(), 0);
  const WindowDataset data = build_windows(demos.demos, all, norm, cfg);
  const double jerk_ref = expert_jerk_reference(demos.demos, ArmConfig{}.dt);

  LatentActionModel latent;
  std::uint64_t enc_hash = 0, dec_hash = 0;
  Matrix targets;
  if (cfg.policy == PolicyKind::LatentFlow) {
    const Checkpoint stage1 = load_checkpoint(dir / "latent.ckpt", cfg.hash());
    Rng init = make_stream(cfg.seed, "latent-init");
    latent = LatentActionModel(cfg.latent, init);
    stage1.get_params("latent.", latent.params());
    enc_hash = get_u64(stage1, "hash.encoder");
    dec_hash = get_u64(stage1, "hash.decoder");
    if (parameter_hash(latent.encoder_params()) != enc_hash || parameter_hash(latent.decoder_params()) != dec_hash)
      throw std::runtime_error("train-flow: stage-1 weights do not match their recorded hashes");
    targets.resize(data.size(), cfg.flow.state_dim);
    for (Index start = 0; start < data.size(); start += 512) {
      std::vector<Index> rows;
      for (Index i = start; i < std::min(data.size(), start + 512); ++i) rows.push_back(i);
      targets.middleRows(start, static_cast<Index>(rows.size())) =
          latent.encode_means(make_vae_batch(data, rows, cfg).chunks);
    }
  } else {
    targets = data.actions;
  }

  Rng flow_init = make_stream(cfg.seed, "flow-init");
  Rng scene_init = make_stream(cfg.seed, "scene-init");
  VelocityNet net(cfg.flow, flow_init);
  SceneEncoder scene(cfg.geometry, cfg.flow.widths, scene_init);
  ParamList params;
  net.collect(params);
  scene.collect(params);
  AdamWConfig opt_cfg;
  opt_cfg.learning_rate = cfg.learning_rate;
  opt_cfg.weight_decay = cfg.weight_decay;
  AdamW opt(params, opt_cfg);
  Ema ema(params, cfg.ema_decay);
  Rng shuffle = make_stream(cfg.seed, "flow-shuffle");
  Rng noise = make_stream(cfg.seed, "flow-noise");

  FlowStageResult result;
  result.checkpoint = dir / "flow.ckpt";
  std::ostringstream csv;
  csv << "epoch,flow_matching,consistency,total\n";
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::array<double, 3> acc{0, 0, 0};
    for (const auto& rows : shuffled_batches(data.size(), cfg.batch_size, shuffle)) {
      std::vector<const Neighborhoods*> distinct;
      std::map<Index, Index> slot;
      std::vector<Index> gather;
      for (Index r : rows) {
        auto it = slot.find(data.scene[static_cast<std::size_t>(r)]);
        if (it == slot.end()) {
          it = slot.emplace(data.scene[static_cast<std::size_t>(r)], static_cast<Index>(distinct.size())).first;
          distinct.push_back(&data.scenes[static_cast<std::size_t>(data.scene[static_cast<std::size_t>(r)])]);
        }
        gather.push_back(it->second);
      }
      zero_grad(params);
      Tape tape;
      const SceneFilm film = SceneEncoder::gather(scene(tape, distinct), gather);
      CfmLoss l;
      try {
        l = cfm_loss(tape, net, take_rows(targets, rows), tape.constant(take_rows(data.observations, rows)), &film, noise);
      } catch (const std::domain_error&) {
        throw std::runtime_error("train-flow: non-finite loss at epoch " + std::to_string(epoch + 1));
      }
      tape.backward(l.total);
      clip_grad_norm(params, cfg.grad_clip);
      opt.step();
      ema.update(params);
      const double w = static_cast<double>(rows.size()) / static_cast<double>(data.size());
      acc[0] += w * l.flow_matching;
      acc[1] += w * l.consistency;
      acc[2] += w * l.total.scalar();
    }
    if (cfg.policy == PolicyKind::LatentFlow) {
      if (parameter_hash(latent.encoder_params()) != enc_hash || parameter_hash(latent.decoder_params()) != dec_hash)
        throw std::logic_error("train-flow: frozen stage-1 weights changed during stage 2");
      ++result.freeze_checks;
    }
    result.curve.push_back(acc);
    csv << epoch + 1 << ',' << fmt_g(acc[0]) << ',' << fmt_g(acc[1]) << ',' << fmt_g(acc[2]) << '\n';
    if ((epoch + 1) % 25 == 0 || epoch == 0)
      say(log, policy_name(cfg.policy) + " epoch " + std::to_string(epoch + 1) + " fm " + fmt_g(acc[0]) + " cons " +
                   fmt_g(acc[1]));
  }
  ema.copy_to(params);

  Checkpoint ck = base_checkpoint(cfg);
  ParamList flow_params;
  net.collect(flow_params);
  ParamList scene_params;
  scene.collect(scene_params);
  ck.put_params("flow.", flow_params);
  ck.put_params("scene.", scene_params);
  if (cfg.policy == PolicyKind::LatentFlow) {
    ck.put_params("latent.", latent.params());
    put_u64(ck, "hash.encoder", enc_hash);
    put_u64(ck, "hash.decoder", dec_hash);
  }
  put_stats(ck, "norm.actions", norm.actions);
  put_stats(ck, "norm.observations", norm.observations);
  ck.put_scalar("jerk_reference", jerk_ref);
  save_checkpoint(result.checkpoint, ck);
  write_text(dir / "flow_loss.csv", csv.str());
  return result;
}

// ---------------------------------------------------------------------------
// Policy

Policy::Policy(const fs::path& dir) {
  Checkpoint ck = load_checkpoint(dir / "flow.ckpt");
  cfg_ = RunConfig::from_json(json::parse(ck.config_json));
  if (cfg_.hash() != ck.config_hash) throw std::runtime_error("policy: config does not reproduce its hash");
  norm_.actions = get_stats(ck, "norm.actions");
  norm_.observations = get_stats(ck, "norm.observations");
  jerk_reference_ = ck.get_scalar("jerk_reference");
  Rng dummy = make_stream(0, "load");
  net_ = VelocityNet(cfg_.flow, dummy);
  scene_ = SceneEncoder(cfg_.geometry, cfg_.flow.widths, dummy);
  ParamList fp, sp;
  net_.collect(fp);
  scene_.collect(sp);
  ck.get_params("flow.", fp);
  ck.get_params("scene.", sp);
  if (cfg_.policy == PolicyKind::LatentFlow) {
    latent_ = LatentActionModel(cfg_.latent, dummy);
    ck.get_params("latent.", latent_.params());
    if (parameter_hash(latent_.encoder_params()) != get_u64(ck, "hash.encoder") ||
        parameter_hash(latent_.decoder_params()) != get_u64(ck, "hash.decoder"))
      throw std::runtime_error("policy: latent weights differ from the stage-1 hashes");
  }
}

Matrix Policy::history(const Environment& env) const {
  const auto& frames = env.frames();
  const Index n = static_cast<Index>(frames.size());
  Matrix h(cfg_.obs_history, kObservationDim);
  for (Index i = 0; i < cfg_.obs_history; ++i)
    h.row(i) = frame_observation(frames[static_cast<std::size_t>(std::max<Index>(0, n - cfg_.obs_history + i))]).transpose();
  return h;
}

Matrix Policy::infer(const Matrix& history, const PointCloud& cloud, const Eigen::VectorXd& context, Rng& noise) {
  const Neighborhoods nb = preprocess_cloud(cloud, workspace_box(), cfg_.geometry);
  const Matrix hist = normalize(history, norm_.observations);
  Matrix cond(1, hist.size());
  for (Index i = 0; i < hist.rows(); ++i) cond.block(0, i * kObservationDim, 1, kObservationDim) = hist.row(i);
  const Matrix base = standard_normal(1, cfg_.flow.state_dim, noise);
  Tape tape;
  const SceneFilm film = scene_(tape, {&nb});
  const Matrix out = generate_one_step(tape, net_, base, tape.constant(cond), &film).value();
  const Index c = cfg_.prediction_horizon;
  Matrix chunk_row;
  if (cfg_.policy == PolicyKind::LatentFlow) {
    chunk_row = latent_.decode(out.leftCols(cfg_.latent.latent_dim), context.transpose());
    ++decodes_;
  } else {
    chunk_row = out.leftCols(c * kActionDim);
  }
  const Matrix chunk = unflatten_chunk(chunk_row, c, kActionDim);
  return clamp_unit(denormalize(clamp_unit(chunk), norm_.actions));
}

Matrix Policy::act(const Environment& env, Rng& noise, Rng& render) {
  const PointCloud cloud = render_point_cloud(env, cfg_.raw_cloud_points, render);
  return infer(history(env), cloud, env.context(), noise);
}

// ---------------------------------------------------------------------------
// Evaluation

const char* const kEvalHeader =
    "task,policy,seed,trial,success,steps,s_jerk,s_freq,s_smooth,latency_p50_ms,latency_p95_ms";

TaskScene evaluation_scene(const RunConfig& cfg, std::uint64_t seed, int trial) {
  Rng rng = make_stream(seed, "eval-scene", static_cast<std::uint64_t>(trial));
  TaskScene s = sample_scene(cfg.task_kind(), rng);
  s.seed = seed * 100000 + static_cast<std::uint64_t>(trial);
  return s;
}

EvalResult evaluate(Policy& policy, std::ostream* log) {
  const RunConfig& cfg = policy.config();
  const double dt = ArmConfig{}.dt;
  const double cutoff = default_cutoff(dt);
  EvalResult res;
  res.task = cfg.task;
  res.policy = cfg.policy;
  std::vector<std::vector<bool>> outcomes;
  std::uint64_t cycles = 0;
  const std::uint64_t flow0 = policy.flow_evaluations();
  const std::uint64_t dec0 = policy.decoder_evaluations();
  int expert_ok = 0;
  for (std::uint64_t seed : cfg.eval_seeds) {
    outcomes.emplace_back();
    for (int trial = 0; trial < cfg.eval_trials; ++trial) {
      const TaskScene scene = evaluation_scene(cfg, seed, trial);
      {
        Rng unused = make_stream(seed, "expert-noise", static_cast<std::uint64_t>(trial));
        expert_ok += scripted_expert(scene, 0.0, unused).success ? 1 : 0;
      }
      Rng noise = make_stream(seed, "policy-noise", static_cast<std::uint64_t>(trial));
      Rng render = make_stream(seed, "eval-render", static_cast<std::uint64_t>(trial));
      Environment env(scene);
      std::vector<double> timings;
      std::vector<Eigen::RowVectorXd> executed;
      TrialRecord rec;
      rec.seed = seed;
      rec.trial = trial;
      try {
        auto finished = [&] {
          const bool crashed = scene.kind == TaskKind::ObstacleReach &&
                               std::any_of(env.frames().begin(), env.frames().end(), [](const Frame& f) { return f.collision; });
          return env.solved() || env.out_of_time() || crashed;
        };
        while (!finished()) {
          const PointCloud cloud = render_point_cloud(env, cfg.raw_cloud_points, render);
          const Matrix hist = policy.history(env);
          const Eigen::VectorXd ctx = env.context();
          const auto start = std::chrono::steady_clock::now();
          const Matrix chunk = policy.infer(hist, cloud, ctx, noise);
          timings.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count());
          ++cycles;
          for (Index r = 0; r < chunk.rows() && !finished(); ++r) {
            env.step(chunk.row(r).transpose());
            executed.push_back(chunk.row(r));
          }
        }
        rec.success = success_check(scene, env.frames());
      } catch (const std::exception& e) {
        rec.success = false;
        say(log, "trial " + std::to_string(seed) + "/" + std::to_string(trial) + " failed: " + e.what());
      }
      rec.steps = static_cast<int>(executed.size());
      rec.actions.resize(static_cast<Index>(executed.size()), kActionDim);
      for (std::size_t i = 0; i < executed.size(); ++i) rec.actions.row(static_cast<Index>(i)) = executed[i];
      rec.frames = env.frames();
      rec.scored = rec.actions.rows() >= kMinScoredSteps;
      if (rec.scored) {
        rec.smoothness = s_smooth(rec.actions.leftCols(3), dt, cutoff, policy.jerk_reference());
      } else {
        rec.smoothness.dt = dt;
        rec.smoothness.cutoff = cutoff;
        rec.smoothness.jerk_reference = policy.jerk_reference();
      }
      if (!timings.empty()) {
        const LatencyStats ls = summarize_latency(timings);
        rec.latency_p50_ms = ls.p50_ms;
        rec.latency_p95_ms = ls.p95_ms;
      }
      outcomes.back().push_back(rec.success);
      res.trials.push_back(std::move(rec));
    }
  }
  res.summary = aggregate_eval(outcomes);
  res.flow_evals_per_cycle = static_cast<double>(policy.flow_evaluations() - flow0) / static_cast<double>(cycles);
  res.decodes_per_cycle = static_cast<double>(policy.decoder_evaluations() - dec0) / static_cast<double>(cycles);
  res.expert_success_rate = 100.0 * expert_ok / static_cast<double>(res.trials.size());
  // Rollouts that end before the spectrum is defined carry no smoothness
  // signal; counting them as zero would reward early crashes.
  for (const auto& t : res.trials) res.scored_trials += t.scored ? 1 : 0;
  for (const auto& t : res.trials) {
    if (!t.scored) continue;
    res.mean_s_smooth += t.smoothness.s_smooth / res.scored_trials;
    res.mean_s_jerk += t.smoothness.s_jerk / res.scored_trials;
    res.mean_s_freq += t.smoothness.s_freq / res.scored_trials;
  }

  // Controlled latency on the first evaluation scene's initial observation.
  const TaskScene scene = evaluation_scene(cfg, cfg.eval_seeds.front(), 0);
  Environment env(scene);
  Rng render = make_stream(cfg.eval_seeds.front(), "latency-render");
  const PointCloud cloud = render_point_cloud(env, cfg.raw_cloud_points, render);
  const Matrix hist = policy.history(env);
  const Eigen::VectorXd ctx = env.context();
  Rng noise = make_stream(cfg.eval_seeds.front(), "latency-noise");
  res.latency = measure_response_time([&] { policy.infer(hist, cloud, ctx, noise); },
                                      static_cast<std::size_t>(cfg.latency_warmup),
                                      static_cast<std::size_t>(cfg.latency_calls));
  say(log, cfg.task + " " + policy_name(cfg.policy) + ": success " + fmt(res.summary.mean_rate) + " +- " +
               fmt(res.summary.std_rate) + ", s_smooth " + fmt(res.mean_s_smooth) + ", p50 " + fmt(res.latency.p50_ms) +
               " ms");
  return res;
}

void write_eval(const EvalResult& r, const fs::path& dir) {
  const fs::path out = dir / "eval";
  fs::create_directories(out / "trajectories");
  std::ostringstream csv;
  csv << kEvalHeader << '\n';
  for (const auto& t : r.trials) {
    csv << r.task << ',' << policy_name(r.policy) << ',' << t.seed << ',' << t.trial << ',' << (t.success ? 1 : 0) << ','
        << t.steps << ',';
    if (t.scored)
      csv << fmt_g(t.smoothness.s_jerk) << ',' << fmt_g(t.smoothness.s_freq) << ',' << fmt_g(t.smoothness.s_smooth);
    else
      csv << ",,";
    csv << ',' << fmt(t.latency_p50_ms) << ',' << fmt(t.latency_p95_ms) << '\n';
    std::ostringstream traj;
    traj << "step,a1,a2,a3,a4,q1,q2,q3,ee_x,ee_y\n" << std::setprecision(12);
    for (Index s = 0; s < t.actions.rows(); ++s) {
      const Frame& f = t.frames[static_cast<std::size_t>(s + 1)];
      traj << s;
      for (Index k = 0; k < kActionDim; ++k) traj << ',' << t.actions(s, k);
      traj << ',' << f.arm.q(0) << ',' << f.arm.q(1) << ',' << f.arm.q(2) << ',' << f.arm.ee(0) << ',' << f.arm.ee(1)
           << '\n';
    }
    char name[64];
    std::snprintf(name, sizeof name, "seed%llu_trial%02d.csv", static_cast<unsigned long long>(t.seed), t.trial);
    write_text(out / "trajectories" / name, traj.str());
  }
  write_text(out / "eval.csv", csv.str());

  ojson s;
  s["schema"] = "laflow-eval";
  s["version"] = 1;
  s["task"] = r.task;
  s["policy"] = policy_name(r.policy);
  s["seeds"] = r.summary.successes.size();
  s["success_per_seed"] = r.summary.successes;
  s["trials_per_seed"] = r.summary.trials;
  s["success_mean"] = r.summary.mean_rate;
  s["success_std"] = r.summary.std_rate;
  s["single_seed"] = r.summary.single_seed;
  s["expert_success_rate"] = r.expert_success_rate;
  s["flow_evals_per_cycle"] = r.flow_evals_per_cycle;
  s["decodes_per_cycle"] = r.decodes_per_cycle;
  s["smoothness_scored_trials"] = r.scored_trials;
  s["s_smooth_mean"] = r.mean_s_smooth;
  s["s_jerk_mean"] = r.mean_s_jerk;
  s["s_freq_mean"] = r.mean_s_freq;
  const SmoothnessReport& ref = r.trials.front().smoothness;
  s["smoothness"] = {{"alpha", ref.alpha}, {"beta", ref.beta}, {"cutoff_hz", ref.cutoff}, {"dt", ref.dt},
                     {"jerk_reference", ref.jerk_reference}};
  s["latency"] = {{"p50_ms", r.latency.p50_ms}, {"p95_ms", r.latency.p95_ms}, {"mean_ms", r.latency.mean_ms},
                  {"calls", r.latency.calls}};
  write_text(out / "summary.json", s.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Reports

const char* const kReportHeader =
    "task,policy,success_mean,success_std,delta_success_points,latency_p50_ms,delta_time_ms,s_smooth,"
    "smoothness_reduction_pct,s_jerk,s_freq";

std::vector<ReportRow> build_report(const std::vector<fs::path>& runs, const std::string& reference) {
  if (runs.size() < 2) throw std::invalid_argument("report: need at least two evaluation outputs");
  std::vector<ReportRow> rows;
  std::map<std::string, std::set<std::string>> tasks_by_policy;
  for (const auto& run : runs) {
    const json s = json::parse(read_text(run / "eval" / "summary.json"));
    if (s.at("schema") != "laflow-eval" || s.at("version") != 1) throw std::runtime_error("report: unsupported summary in " + run.string());
    ReportRow r;
    r.task = s.at("task").get<std::string>();
    r.policy = s.at("policy").get<std::string>();
    r.success_mean = s.at("success_mean").get<double>();
    r.success_std = s.at("success_std").get<double>();
    r.latency_p50_ms = s.at("latency").at("p50_ms").get<double>();
    r.s_smooth = s.at("s_smooth_mean").get<double>();
    r.s_jerk = s.at("s_jerk_mean").get<double>();
    r.s_freq = s.at("s_freq_mean").get<double>();
    if (!tasks_by_policy[r.policy].insert(r.task).second)
      throw std::runtime_error("report: duplicate " + r.policy + " result for task " + r.task);
    rows.push_back(r);
  }
  if (!tasks_by_policy.count(reference)) throw std::runtime_error("report: reference policy " + reference + " missing");
  const auto& ref_tasks = tasks_by_policy.at(reference);
  for (const auto& [policy, tasks] : tasks_by_policy)
    if (tasks != ref_tasks) throw std::runtime_error("report: task set of " + policy + " differs from " + reference);
  for (auto& r : rows) {
    const auto ref = std::find_if(rows.begin(), rows.end(), [&](const ReportRow& x) { return x.task == r.task && x.policy == reference; });
    r.delta_success_points = r.success_mean - ref->success_mean;
    r.delta_time_ms = r.latency_p50_ms - ref->latency_p50_ms;
    r.smoothness_reduction_pct = ref->s_smooth > 0.0 ? 100.0 * (1.0 - r.s_smooth / ref->s_smooth) : 0.0;
  }
  std::sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
    return std::tie(a.task, a.policy) < std::tie(b.task, b.policy);
  });
  return rows;
}

void write_report(const std::vector<ReportRow>& rows, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::ostringstream csv, md, smooth, success, latency;
  csv << kReportHeader << '\n';
  md << "| Task | Policy | Success (%) | Δ Success | Time (ms) | Δ Time | S_smooth | Reduction (%) |\n"
     << "|---|---|---|---|---|---|---|---|\n";
  smooth << "task,policy,s_smooth,s_jerk,s_freq\n";
  success << "task,policy,success_mean,success_std\n";
  latency << "task,policy,latency_p50_ms\n";
  for (const auto& r : rows) {
    csv << r.task << ',' << r.policy << ',' << fmt(r.success_mean) << ',' << fmt(r.success_std) << ','
        << fmt(r.delta_success_points) << ',' << fmt(r.latency_p50_ms) << ',' << fmt(r.delta_time_ms) << ','
        << fmt(r.s_smooth) << ',' << fmt(r.smoothness_reduction_pct) << ',' << fmt_g(r.s_jerk) << ',' << fmt(r.s_freq) << '\n';
    md << "| " << r.task << " | " << r.policy << " | " << fmt(r.success_mean) << " ± " << fmt(r.success_std) << " | "
       << fmt(r.delta_success_points) << " | " << fmt(r.latency_p50_ms) << " | " << fmt(r.delta_time_ms) << " | "
       << fmt(r.s_smooth) << " | " << fmt(r.smoothness_reduction_pct) << " |\n";
    smooth << r.task << ',' << r.policy << ',' << fmt(r.s_smooth) << ',' << fmt_g(r.s_jerk) << ',' << fmt(r.s_freq) << '\n';
    success << r.task << ',' << r.policy << ',' << fmt(r.success_mean) << ',' << fmt(r.success_std) << '\n';
    latency << r.task << ',' << r.policy << ',' << fmt(r.latency_p50_ms) << '\n';
  }
  write_text(out_dir / "report.csv", csv.str());
  write_text(out_dir / "report.md", md.str());
  write_text(out_dir / "plot_smoothness.csv", smooth.str());
  write_text(out_dir / "plot_success.csv", success.str());
  write_text(out_dir / "plot_latency.csv", latency.str());
  ojson meta;
  meta["schema"] = "laflow-report";
  meta["version"] = kReportVersion;
  meta["columns"] = kReportHeader;
  meta["files"] = {"report.csv", "report.md", "plot_smoothness.csv", "plot_success.csv", "plot_latency.csv"};
  write_text(out_dir / "report.json", meta.dump(2) + "\n");
}

// ---------------------------------------------------------------------------

fs::path run_pipeline(const RunConfig& cfg, const fs::path& root, std::ostream* log) {
  const fs::path dir = run_directory(root, cfg);
  fs::create_directories(dir);
  write_text(dir / "config.json", cfg.to_json().dump(2) + "\n");
  const DemoSet demos = generate_demos(cfg, log);
  for (std::size_t i = 0; i < demos.demos.size(); ++i) write_demo(dir / "demos", static_cast<int>(i), demos.demos[i], cfg);
  const DemoSet loaded = load_demos(dir / "demos");
  if (cfg.policy == PolicyKind::LatentFlow) train_latent(cfg, loaded, dir, log);
  train_flow(cfg, loaded, dir, log);
  Policy policy(dir);
  write_eval(evaluate(policy, log), dir);
  return dir;
}

}  // namespace laflow
