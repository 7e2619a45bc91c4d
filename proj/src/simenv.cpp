#include "laflow/simenv.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "json.hpp"

namespace laflow {

namespace {

Eigen::Vector2d direction(double angle) { return {std::cos(angle), std::sin(angle)}; }
Eigen::Vector2d perp(const Eigen::Vector2d& v) { return {-v.y(), v.x()}; }

std::array<double, 3> link_angles(const Eigen::Vector3d& q) { return {q(0), q(0) + q(1), q(0) + q(1) + q(2)}; }

// Jacobian of the point at fraction s along link `link`.
Eigen::Matrix<double, 2, 3> point_jacobian(const Eigen::Vector3d& q, int link, double s, const ArmConfig& cfg) {
  const auto th = link_angles(q);
  Eigen::Matrix<double, 2, 3> jac = Eigen::Matrix<double, 2, 3>::Zero();
  for (int j = 0; j <= link; ++j) {
    for (int m = j; m <= link; ++m) {
      const double len = m == link ? s * cfg.links[static_cast<std::size_t>(m)] : cfg.links[static_cast<std::size_t>(m)];
      jac.col(j) += len * perp(direction(th[static_cast<std::size_t>(m)]));
    }
  }
  return jac;
}

double uniform_in(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

}  // namespace

std::array<Eigen::Vector2d, 4> joint_positions(const Eigen::Vector3d& q, const ArmConfig& cfg) {
  const auto th = link_angles(q);
  std::array<Eigen::Vector2d, 4> p;
  p[0] = Eigen::Vector2d::Zero();
  for (std::size_t i = 0; i < 3; ++i) p[i + 1] = p[i] + cfg.links[i] * direction(th[i]);
  return p;
}

Eigen::Vector2d forward_kinematics(const Eigen::Vector3d& q, const ArmConfig& cfg) {
  return joint_positions(q, cfg)[3];
}

Eigen::Matrix<double, 2, 3> ee_jacobian(const Eigen::Vector3d& q, const ArmConfig& cfg) {
  return point_jacobian(q, 2, 1.0, cfg);
}

ArmState make_arm_state(const Eigen::Vector3d& q, bool closed, const ArmConfig& cfg) {
  ArmState s;
  s.q = q;
  s.ee = forward_kinematics(q, cfg);
  s.gripper_closed = closed;
  return s;
}

double segment_distance(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& p) {
  const Eigen::Vector2d ab = b - a;
  const double len2 = ab.squaredNorm();
  const double s = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (a + s * ab - p).norm();
}

bool segment_hits_disc(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Disc& disc) {
  return segment_distance(a, b, disc.center) <= disc.radius;
}

bool arm_collides(const Eigen::Vector3d& q, const std::vector<Disc>& obstacles, const ArmConfig& cfg) {
  const auto p = joint_positions(q, cfg);
  for (const auto& d : obstacles)
    for (std::size_t i = 0; i < 3; ++i)
      if (segment_hits_disc(p[i], p[i + 1], d)) return true;
  return false;
}

std::string task_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::Reach: return "reach";
    case TaskKind::PickPlace: return "pick-place";
    case TaskKind::ObstacleReach: return "obstacle-reach";
  }
  return "reach";
}

TaskKind parse_task(const std::string& name) {
  if (name == "reach") return TaskKind::Reach;
  if (name == "pick-place") return TaskKind::PickPlace;
  if (name == "obstacle-reach") return TaskKind::ObstacleReach;
  throw std::invalid_argument("unknown task: " + name);
}

TaskScene sample_scene(TaskKind kind, Rng& rng, const ArmConfig& cfg) {
  const double pi = std::numbers::pi;
  auto polar_point = [&] {
    const double r = uniform_in(rng, 0.35, 0.8);
    const double a = uniform_in(rng, 0.15 * pi, 0.85 * pi);
    return Eigen::Vector2d(r * std::cos(a), r * std::sin(a));
  };
  for (int attempt = 0; attempt < 10000; ++attempt) {
    TaskScene s;
    s.kind = kind;
    s.initial_q = Eigen::Vector3d(pi / 2 + 0.5, -1.0, -0.8);
    for (int j = 0; j < 3; ++j) s.initial_q(j) += uniform_in(rng, -0.15, 0.15);
    const Eigen::Vector2d ee0 = forward_kinematics(s.initial_q, cfg);
    s.goal = polar_point();
    if (kind == TaskKind::PickPlace) {
      s.object = polar_point();
      if ((s.object - ee0).norm() < 0.15 || (s.goal - s.object).norm() < 0.2) continue;
    } else if ((s.goal - ee0).norm() < (kind == TaskKind::ObstacleReach ? 0.3 : 0.2)) {
      continue;
    }
    if (kind == TaskKind::ObstacleReach) {
      Disc d;
      d.radius = uniform_in(rng, 0.05, 0.08);
      const Eigen::Vector2d along = s.goal - ee0;
      const double u = uniform_in(rng, 0.4, 0.6);
      const double side = uniform_in(rng, -0.03, 0.03);
      d.center = ee0 + u * along + side * perp(along.normalized());
      if ((s.goal - d.center).norm() < d.radius + 0.06) continue;
      if ((ee0 - d.center).norm() < d.radius + 0.06) continue;
      const auto p = joint_positions(s.initial_q, cfg);
      bool clear = true;
      for (std::size_t i = 0; i < 3; ++i)
        if (segment_distance(p[i], p[i + 1], d.center) < d.radius + 0.03) clear = false;
      if (d.center.norm() < 0.5) clear = false;
      if (!clear) continue;
      s.obstacles.push_back(d);
    }
    return s;
  }
  throw std::runtime_error("sample_scene: no feasible scene found");
}

StepResult step(const ArmState& state, const Eigen::VectorXd& action, const std::vector<Disc>& obstacles,
                const ArmConfig& cfg) {
  if (action.size() != kActionDim) throw std::invalid_argument("step: action must have 4 entries");
  const Eigen::VectorXd a = action.cwiseMax(-1.0).cwiseMin(1.0);
  StepResult r;
  Eigen::Vector3d q = state.q;
  for (int j = 0; j < 3; ++j) q(j) += cfg.dt * cfg.max_rate * a(j);
  r.state = make_arm_state(q, a(3) > 0.0, cfg);
  r.collision = arm_collides(q, obstacles, cfg);
  return r;
}

Environment::Environment(TaskScene scene, ArmConfig cfg) : scene_(std::move(scene)), cfg_(cfg) {
  Frame f;
  f.arm = make_arm_state(scene_.initial_q, false, cfg_);
  f.object = scene_.object;
  f.collision = arm_collides(f.arm.q, scene_.obstacles, cfg_);
  collided_ = f.collision;
  frames_.push_back(f);
  hold_count_ = (f.arm.ee - scene_.goal).norm() < kGoalTolerance && scene_.kind != TaskKind::PickPlace ? 1 : 0;
}

const Frame& Environment::step(const Eigen::VectorXd& action) {
  const Frame& prev = frames_.back();
  const StepResult r = laflow::step(prev.arm, action, scene_.obstacles, cfg_);
  Frame f;
  f.arm = r.state;
  f.collision = r.collision;
  f.held = prev.held;
  f.object = prev.object;
  if (scene_.kind == TaskKind::PickPlace) {
    if (!prev.held && !prev.arm.gripper_closed && f.arm.gripper_closed &&
        (f.arm.ee - prev.object).norm() < kGoalTolerance)
      f.held = true;
    if (prev.held && !f.arm.gripper_closed) f.held = false;
    if (f.held) f.object = f.arm.ee;
  }
  collided_ = collided_ || f.collision;
  const bool at_goal = (f.arm.ee - scene_.goal).norm() < kGoalTolerance;
  const bool ok = at_goal && (scene_.kind != TaskKind::PickPlace || f.held);
  hold_count_ = ok ? hold_count_ + 1 : 0;
  frames_.push_back(f);
  return frames_.back();
}

bool Environment::solved() const {
  if (scene_.kind == TaskKind::ObstacleReach && collided_) return false;
  return hold_count_ >= kHoldSteps;
}

Eigen::VectorXd Environment::observation() const {
  const Frame& f = frames_.back();
  Eigen::VectorXd o(kObservationDim);
  o << f.arm.q, f.arm.ee, f.arm.gripper_closed ? 1.0 : -1.0;
  return o;
}

Eigen::Vector2d Environment::subgoal() const {
  const Frame& f = frames_.back();
  if (scene_.kind == TaskKind::PickPlace && !f.held) return f.object;
  return scene_.goal;
}

Eigen::VectorXd Environment::context() const {
  const Frame& f = frames_.back();
  Eigen::VectorXd v = Eigen::VectorXd::Zero(kContextDim);
  v.head<2>() = subgoal() - f.arm.ee;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& d : scene_.obstacles) {
    const double gap = (d.center - f.arm.ee).norm() - d.radius;
    if (gap < best) {
      best = gap;
      v.segment<2>(2) = d.center - f.arm.ee;
      v(4) = 1.0;
    }
  }
  return v;
}

bool success_check(const TaskScene& scene, const std::vector<Frame>& frames) {
  int run = 0;
  bool best = false;
  for (const auto& f : frames) {
    if (scene.kind == TaskKind::ObstacleReach && f.collision) return false;
    const bool ok = (f.arm.ee - scene.goal).norm() < kGoalTolerance && (scene.kind != TaskKind::PickPlace || f.held);
    run = ok ? run + 1 : 0;
    if (run >= kHoldSteps) best = true;
  }
  return best;
}

Eigen::VectorXd expert_action(const Environment& env, const ArmConfig& cfg) {
  constexpr double kGain = 4.0;
  constexpr double kMaxSpeed = 0.6;
  constexpr double kDamping = 0.05;
  constexpr double kClearance = 0.05;
  constexpr double kDetour = 0.07;
  constexpr double kInfluence = 0.1;
  constexpr double kRepulsion = 3.0;
  constexpr double kContact = 0.03;

  const Frame& f = env.frame();
  const TaskScene& scene = env.scene();
  const Eigen::Vector2d ee = f.arm.ee;
  Eigen::Vector2d target = env.subgoal();

  // Detour around the first obstacle that blocks the straight line.
  for (const auto& d : scene.obstacles) {
    if (segment_distance(ee, target, d.center) >= d.radius + kClearance) continue;
    const Eigen::Vector2d line = target - ee;
    // Pass on the side facing the base so the links trail inside the detour.
    Eigen::Vector2d away = perp(line);
    if (away.dot(d.center) > 0.0) away = -away;
    target = d.center + (d.radius + kDetour) * away.normalized();
    break;
  }

  Eigen::Vector2d v = kGain * (target - ee);
  if (v.norm() > kMaxSpeed) v *= kMaxSpeed / v.norm();
  const Eigen::Matrix<double, 2, 3> jac = ee_jacobian(f.arm.q, cfg);
  const Eigen::Matrix2d jjt = jac * jac.transpose() + kDamping * kDamping * Eigen::Matrix2d::Identity();
  const Eigen::Matrix<double, 3, 2> pinv = jac.transpose() * jjt.inverse();
  Eigen::Vector3d qd = pinv * v;

  // Link repulsion acts in the null space of the end-effector task so it
  // reshapes the elbow without stalling the approach; only very close contacts
  // push the end effector too.
  Eigen::Vector3d avoid = Eigen::Vector3d::Zero();
  Eigen::Vector3d urgent = Eigen::Vector3d::Zero();
  const auto p = joint_positions(f.arm.q, cfg);
  for (const auto& d : scene.obstacles) {
    for (int link = 0; link < 3; ++link) {
      for (double s : {0.25, 0.5, 0.75, 1.0}) {
        const auto i = static_cast<std::size_t>(link);
        const Eigen::Vector2d pt = p[i] + s * (p[i + 1] - p[i]);
        const Eigen::Vector2d rel = pt - d.center;
        const double gap = rel.norm() - d.radius;
        if (gap >= kInfluence) continue;
        const Eigen::Vector3d push =
            kRepulsion * (kInfluence - gap) / kInfluence * point_jacobian(f.arm.q, link, s, cfg).transpose() * rel.normalized();
        avoid += push;
        if (gap < kContact) urgent += push;
      }
    }
  }
  qd += (Eigen::Matrix3d::Identity() - pinv * jac) * avoid + urgent;

  Eigen::VectorXd a(kActionDim);
  a.head<3>() = (qd / cfg.max_rate).cwiseMax(-1.0).cwiseMin(1.0);
  a(3) = -1.0;
  if (scene.kind == TaskKind::PickPlace) a(3) = f.held || (ee - f.object).norm() < 0.012 ? 1.0 : -1.0;
  return a;
}

Demonstration scripted_expert(const TaskScene& scene, double noise_level, Rng& noise, const ArmConfig& cfg) {
  Environment env(scene, cfg);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<Eigen::VectorXd> actions, obs, ctx;
  obs.push_back(env.observation());
  ctx.push_back(env.context());
  while (!env.solved() && !env.out_of_time()) {
    Eigen::VectorXd a = expert_action(env, cfg);
    if (noise_level > 0.0)
      for (int j = 0; j < 3; ++j) a(j) += noise_level * nd(noise);
    a = a.cwiseMax(-1.0).cwiseMin(1.0);
    env.step(a);
    actions.push_back(a);
    obs.push_back(env.observation());
    ctx.push_back(env.context());
  }
  Demonstration d;
  d.scene = scene;
  d.frames = env.frames();
  d.noise_level = noise_level;
  d.actions.resize(static_cast<Index>(actions.size()), kActionDim);
  for (std::size_t i = 0; i < actions.size(); ++i) d.actions.row(static_cast<Index>(i)) = actions[i].transpose();
  d.observations.resize(static_cast<Index>(obs.size()), kObservationDim);
  d.contexts.resize(static_cast<Index>(ctx.size()), kContextDim);
  for (std::size_t i = 0; i < obs.size(); ++i) {
    d.observations.row(static_cast<Index>(i)) = obs[i].transpose();
    d.contexts.row(static_cast<Index>(i)) = ctx[i].transpose();
  }
  d.success = success_check(scene, d.frames);
  return d;
}

Box workspace_box() { return Box{Eigen::Vector3d(-1.0, -0.3, -0.05), Eigen::Vector3d(1.0, 1.0, 0.15)}; }

PointCloud render_point_cloud(const TaskScene& scene, const Eigen::Vector2d* object, Index n_points, Rng& rng) {
  if (n_points < 1) throw std::invalid_argument("render_point_cloud: need at least one point");
  struct Ring {
    Eigen::Vector2d center;
    double radius;
    double height;
  };
  std::vector<Ring> rings{{scene.goal, kGoalRingRadius, kGoalHeight}};
  for (const auto& d : scene.obstacles) rings.push_back({d.center, d.radius, kObstacleHeight});
  if (object != nullptr) rings.push_back({*object, kObjectRingRadius, kObjectHeight});

  const Index wall = n_points / 8;
  const Index on_rings = n_points - wall;
  double perimeter = 0.0;
  for (const auto& r : rings) perimeter += r.radius;
  std::vector<Index> counts;
  Index assigned = 0;
  for (const auto& r : rings) {
    counts.push_back(static_cast<Index>(std::floor(static_cast<double>(on_rings) * r.radius / perimeter)));
    assigned += counts.back();
  }
  for (std::size_t i = 0; assigned < on_rings; i = (i + 1) % counts.size(), ++assigned) ++counts[i];

  PointCloud cloud(n_points, 3);
  Index row = 0;
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t i = 0; i < rings.size(); ++i) {
    for (Index k = 0; k < counts[i]; ++k, ++row) {
      const double a = uniform_in(rng, 0.0, two_pi);
      const double rad = rings[i].radius + uniform_in(rng, -kRenderNoise, kRenderNoise);
      const double z = rings[i].height + uniform_in(rng, -kRenderNoise, kRenderNoise);
      cloud.row(row) << rings[i].center.x() + rad * std::cos(a), rings[i].center.y() + rad * std::sin(a), z;
    }
  }
  for (; row < n_points; ++row) cloud.row(row) << uniform_in(rng, -1.0, 1.0), 1.5, uniform_in(rng, 0.0, 0.3);
  return cloud;
}

PointCloud render_point_cloud(const Environment& env, Index n_points, Rng& rng) {
  const Frame& f = env.frame();
  const bool visible = env.scene().kind == TaskKind::PickPlace && !f.held;
  return render_point_cloud(env.scene(), visible ? &f.object : nullptr, n_points, rng);
}

std::string scene_to_json(const TaskScene& scene) {
  nlohmann::ordered_json j;
  j["format"] = "laflow-scene";
  j["version"] = 1;
  j["task"] = task_name(scene.kind);
  j["seed"] = scene.seed;
  j["horizon"] = scene.horizon;
  j["initial_q"] = {scene.initial_q(0), scene.initial_q(1), scene.initial_q(2)};
  j["goal"] = {scene.goal.x(), scene.goal.y()};
  j["object"] = {scene.object.x(), scene.object.y()};
  j["obstacles"] = nlohmann::ordered_json::array();
  for (const auto& d : scene.obstacles)
    j["obstacles"].push_back({{"center", {d.center.x(), d.center.y()}}, {"radius", d.radius}});
  return j.dump(2);
}

TaskScene scene_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  if (j.at("format") != "laflow-scene" || j.at("version") != 1) throw std::runtime_error("unsupported scene file");
  TaskScene s;
  s.kind = parse_task(j.at("task").get<std::string>());
  s.seed = j.at("seed").get<std::uint64_t>();
  s.horizon = j.at("horizon").get<int>();
  for (int i = 0; i < 3; ++i) s.initial_q(i) = j.at("initial_q").at(static_cast<std::size_t>(i)).get<double>();
  s.goal = {j.at("goal").at(0).get<double>(), j.at("goal").at(1).get<double>()};
  s.object = {j.at("object").at(0).get<double>(), j.at("object").at(1).get<double>()};
  for (const auto& o : j.at("obstacles")) {
    Disc d;
    d.center = {o.at("center").at(0).get<double>(), o.at("center").at(1).get<double>()};
    d.radius = o.at("radius").get<double>();
    s.obstacles.push_back(d);
  }
  return s;
}

}  // namespace laflow
