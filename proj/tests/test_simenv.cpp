#include <cmath>
#include <numbers>

#include "doctest.h"
#include "laflow/metrics.hpp"
#include "laflow/simenv.hpp"
#include "support.hpp"

using namespace laflow;

namespace {

Eigen::VectorXd action(double a0, double a1, double a2, double grip) {
  Eigen::VectorXd a(kActionDim);
  a << a0, a1, a2, grip;
  return a;
}

TaskScene scene_for(TaskKind kind, std::uint64_t i) {
  Rng rng = make_stream(2024, "test-scene", i);
  return sample_scene(kind, rng);
}

// Dense sampling of the segment: minimum distance to the disc center.
double sampled_distance(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& p) {
  double best = std::numeric_limits<double>::infinity();
  const int n = 20000;
  for (int i = 0; i <= n; ++i) best = std::min(best, (a + (b - a) * (static_cast<double>(i) / n) - p).norm());
  return best;
}

Frame frame_at(const Eigen::Vector2d& ee, bool held = false, bool collision = false) {
  Frame f;
  f.arm.ee = ee;
  f.held = held;
  f.collision = collision;
  return f;
}

}  // namespace

TEST_CASE("step: zero action keeps the state") {
  const ArmConfig cfg;
  const ArmState s = make_arm_state(Eigen::Vector3d(0.3, -0.7, 1.1), false, cfg);
  const StepResult r = step(s, action(0, 0, 0, 0), {}, cfg);
  CHECK(r.state.q == s.q);
  CHECK(r.state.ee == s.ee);
  CHECK(r.state.gripper_closed == false);
  CHECK(!r.collision);
}

TEST_CASE("step: constant action integrates exactly") {
  const ArmConfig cfg;
  const Eigen::Vector3d q0(0.3, -0.7, 1.1);
  ArmState s = make_arm_state(q0, false, cfg);
  const Eigen::VectorXd a = action(0.5, -1.0, 0.25, 1.0);
  const int n = 37;
  for (int i = 0; i < n; ++i) s = step(s, a, {}, cfg).state;
  for (int j = 0; j < 3; ++j) CHECK(std::abs(s.q(j) - (q0(j) + n * cfg.dt * cfg.max_rate * a(j))) < 1e-12);
  CHECK(s.gripper_closed);
  CHECK((s.ee - forward_kinematics(s.q, cfg)).norm() == 0.0);
}

TEST_CASE("step: actions are clamped to the unit box") {
  const ArmConfig cfg;
  const ArmState s = make_arm_state(Eigen::Vector3d::Zero(), false, cfg);
  const StepResult big = step(s, action(5, -5, 0, 0), {}, cfg);
  const StepResult unit = step(s, action(1, -1, 0, 0), {}, cfg);
  CHECK(big.state.q == unit.state.q);
}

TEST_CASE("kinematics: stretched arm and Jacobian by finite differences") {
  const ArmConfig cfg;
  CHECK((forward_kinematics(Eigen::Vector3d::Zero(), cfg) - Eigen::Vector2d(0.9, 0.0)).norm() < 1e-15);
  const Eigen::Vector3d q(0.4, -0.9, 0.6);
  const auto jac = ee_jacobian(q, cfg);
  for (int j = 0; j < 3; ++j) {
    Eigen::Vector3d up = q, down = q;
    up(j) += 1e-6;
    down(j) -= 1e-6;
    const Eigen::Vector2d num = (forward_kinematics(up, cfg) - forward_kinematics(down, cfg)) / 2e-6;
    CHECK((jac.col(j) - num).norm() < 1e-8);
  }
}

TEST_CASE("collision: segment-disc test agrees with dense sampling") {
  Rng rng(1);
  int hits = 0, checked = 0;
  for (int i = 0; i < 2000; ++i) {
    const Eigen::Vector2d a = uniform<double>(2, 1, -1.0, 1.0, rng);
    const Eigen::Vector2d b = uniform<double>(2, 1, -1.0, 1.0, rng);
    const Disc d{uniform<double>(2, 1, -1.0, 1.0, rng), std::uniform_real_distribution<double>(0.02, 0.3)(rng)};
    const double sampled = sampled_distance(a, b, d.center);
    if (std::abs(sampled - d.radius) < 1e-3) continue;  // too close to tangent for the sampler
    ++checked;
    const bool expect = sampled <= d.radius;
    hits += expect ? 1 : 0;
    CHECK(segment_hits_disc(a, b, d) == expect);
  }
  CHECK(checked > 1900);
  CHECK(hits > 100);
}

TEST_CASE("collision: a link sweeping through a disc raises the flag") {
  const ArmConfig cfg;
  // Stretched along +x, the first link covers (0,0)-(0.4,0).
  const std::vector<Disc> obstacles{{Eigen::Vector2d(0.2, 0.0), 0.05}};
  CHECK(arm_collides(Eigen::Vector3d::Zero(), obstacles, cfg));
  CHECK(!arm_collides(Eigen::Vector3d(std::numbers::pi / 2, 0, 0), obstacles, cfg));
  const ArmState s = make_arm_state(Eigen::Vector3d(std::numbers::pi / 2, 0, 0), false, cfg);
  // Rotate the base clockwise until the arm crosses the disc.
  ArmState cur = s;
  bool flagged = false;
  for (int i = 0; i < 40 && !flagged; ++i) {
    const StepResult r = step(cur, action(-1, 0, 0, 0), obstacles, cfg);
    flagged = r.collision;
    cur = r.state;
  }
  CHECK(flagged);
}

TEST_CASE("kinematic determinism: same actions give identical states") {
  const TaskScene scene = scene_for(TaskKind::ObstacleReach, 3);
  Rng a(9), b(9);
  Environment e1(scene), e2(scene);
  for (int i = 0; i < 60; ++i) {
    e1.step(uniform<double>(kActionDim, 1, -1.0, 1.0, a));
    e2.step(uniform<double>(kActionDim, 1, -1.0, 1.0, b));
  }
  REQUIRE(e1.frames().size() == e2.frames().size());
  for (std::size_t i = 0; i < e1.frames().size(); ++i) {
    CHECK(e1.frames()[i].arm.q == e2.frames()[i].arm.q);
    CHECK(e1.frames()[i].collision == e2.frames()[i].collision);
  }
}

TEST_CASE("expert: noiseless reach succeeds on at least 99 of 100 scenes") {
  int ok = 0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    Rng noise(i);
    ok += scripted_expert(scene_for(TaskKind::Reach, i), 0.0, noise).success ? 1 : 0;
  }
  CHECK(ok >= 99);
}

TEST_CASE("expert: pick-place and obstacle-reach success rates") {
  int pick = 0, obstacle = 0;
  for (std::uint64_t i = 0; i < 50; ++i) {
    Rng n1(i), n2(i);
    pick += scripted_expert(scene_for(TaskKind::PickPlace, i), 0.0, n1).success ? 1 : 0;
    obstacle += scripted_expert(scene_for(TaskKind::ObstacleReach, i), 0.0, n2).success ? 1 : 0;
  }
  CHECK(pick >= 48);
  CHECK(obstacle >= 46);
}

TEST_CASE("expert: deterministic without noise, rougher with noise") {
  for (std::uint64_t i = 0; i < 20; ++i) {
    const TaskScene scene = scene_for(TaskKind::Reach, i);
    Rng a(1), b(2), c(3);
    const Demonstration d1 = scripted_expert(scene, 0.0, a);
    const Demonstration d2 = scripted_expert(scene, 0.0, b);
    CHECK(d1.actions == d2.actions);
    const Demonstration noisy = scripted_expert(scene, 0.1, c);
    const double clean = s_smooth(d1.actions.leftCols(3), 0.05, default_cutoff(0.05), 1.0).s_smooth;
    const double rough = s_smooth(noisy.actions.leftCols(3), 0.05, default_cutoff(0.05), 1.0).s_smooth;
    CHECK(rough > clean);
  }
}

TEST_CASE("demonstration records are consistent") {
  Rng noise(4);
  const Demonstration d = scripted_expert(scene_for(TaskKind::PickPlace, 7), 0.0, noise);
  const Index T = d.actions.rows();
  CHECK(static_cast<Index>(d.frames.size()) == T + 1);
  CHECK(d.observations.rows() == T + 1);
  CHECK(d.contexts.rows() == T + 1);
  CHECK(d.observations.cols() == kObservationDim);
  CHECK(d.contexts.cols() == kContextDim);
  CHECK(d.success == success_check(d.scene, d.frames));
  CHECK((d.actions.array().abs() <= 1.0).all());
}

TEST_CASE("success_check: hold duration, exact goal and collision conjunction") {
  TaskScene scene;
  scene.kind = TaskKind::Reach;
  scene.goal = Eigen::Vector2d(0.5, 0.3);
  const Eigen::Vector2d away(0.1, 0.1);

  std::vector<Frame> held(5, frame_at(away));
  for (int i = 0; i < kHoldSteps; ++i) held.push_back(frame_at(scene.goal));
  CHECK(success_check(scene, held));

  std::vector<Frame> touch(5, frame_at(away));
  touch.push_back(frame_at(scene.goal));
  for (int i = 0; i < 20; ++i) touch.push_back(frame_at(away));
  CHECK(!success_check(scene, touch));

  std::vector<Frame> short_hold(5, frame_at(away));
  for (int i = 0; i < kHoldSteps - 1; ++i) short_hold.push_back(frame_at(scene.goal));
  CHECK(!success_check(scene, short_hold));

  TaskScene obstacle = scene;
  obstacle.kind = TaskKind::ObstacleReach;
  std::vector<Frame> bumped = held;
  bumped[2].collision = true;
  CHECK(success_check(obstacle, held));
  CHECK(!success_check(obstacle, bumped));

  TaskScene pick = scene;
  pick.kind = TaskKind::PickPlace;
  CHECK(!success_check(pick, held));
  std::vector<Frame> carried(5, frame_at(away));
  for (int i = 0; i < kHoldSteps; ++i) carried.push_back(frame_at(scene.goal, true));
  CHECK(success_check(pick, carried));
}

TEST_CASE("environment: grasp then carry the object") {
  const ArmConfig cfg;
  TaskScene scene;
  scene.kind = TaskKind::PickPlace;
  scene.initial_q = Eigen::Vector3d(0.5, 0.4, 0.3);
  scene.object = forward_kinematics(scene.initial_q, cfg);
  scene.goal = Eigen::Vector2d(0.0, 0.6);
  Environment env(scene, cfg);
  CHECK(!env.frame().held);
  env.step(action(0, 0, 0, 1));
  CHECK(env.frame().held);
  env.step(action(0.5, 0, 0, 1));
  CHECK((env.frame().object - env.frame().arm.ee).norm() < 1e-12);
  CHECK((env.subgoal() - scene.goal).norm() == 0.0);
}

TEST_CASE("render: support, noise bound and layout") {
  TaskScene scene = scene_for(TaskKind::ObstacleReach, 5);
  REQUIRE(scene.obstacles.size() == 1);
  Rng rng(6);
  const Index n = 2048;
  const PointCloud cloud = render_point_cloud(scene, nullptr, n, rng);
  CHECK(cloud.rows() == n);
  const Disc& d = scene.obstacles[0];
  int obstacle_points = 0, wall = 0;
  for (Index i = 0; i < n; ++i) {
    if (cloud(i, 1) != 1.5 && std::abs(cloud(i, 2) - kObstacleHeight) <= kRenderNoise) {
      ++obstacle_points;
      const double r = (cloud.row(i).head<2>().transpose() - d.center).norm();
      CHECK(std::abs(r - d.radius) <= kRenderNoise + 1e-12);
    }
    if (cloud(i, 1) == 1.5) ++wall;
  }
  CHECK(obstacle_points > 0);
  CHECK(wall == n / 8);
  const Box box = workspace_box();
  CHECK(crop_workspace(cloud, box).rows() == n - n / 8);
}

TEST_CASE("render: moving the obstacle translates its points") {
  TaskScene a = scene_for(TaskKind::ObstacleReach, 8);
  TaskScene b = a;
  const Eigen::Vector2d shift(0.07, -0.04);
  b.obstacles[0].center += shift;
  Rng ra(3), rb(3);
  const PointCloud ca = render_point_cloud(a, nullptr, 512, ra);
  const PointCloud cb = render_point_cloud(b, nullptr, 512, rb);
  int moved = 0;
  for (Index i = 0; i < ca.rows(); ++i) {
    const Eigen::Vector3d delta = (cb.row(i) - ca.row(i)).transpose();
    if (delta.norm() == 0.0) continue;
    ++moved;
    CHECK((delta.head<2>() - shift).norm() < 1e-12);
    CHECK(delta.z() == 0.0);
  }
  CHECK(moved > 0);
}

TEST_CASE("render: rim density is uniform in angle") {
  TaskScene scene = scene_for(TaskKind::ObstacleReach, 9);
  Rng rng(10);
  const PointCloud cloud = render_point_cloud(scene, nullptr, 16384, rng);
  const Disc& d = scene.obstacles[0];
  const int bins = 16;
  std::vector<double> hist(bins, 0.0);
  double total = 0.0;
  for (Index i = 0; i < cloud.rows(); ++i) {
    if (cloud(i, 1) == 1.5 || std::abs(cloud(i, 2) - kObstacleHeight) > kRenderNoise) continue;
    const Eigen::Vector2d off = cloud.row(i).head<2>().transpose() - d.center;
    const double a = std::atan2(off.y(), off.x()) + std::numbers::pi;
    hist[static_cast<std::size_t>(std::min(bins - 1, static_cast<int>(a / (2 * std::numbers::pi) * bins)))] += 1.0;
    total += 1.0;
  }
  double chi2 = 0.0;
  const double expected = total / bins;
  for (double h : hist) chi2 += (h - expected) * (h - expected) / expected;
  // 15 degrees of freedom, 0.1% upper tail.
  CHECK(chi2 < 37.7);
}

TEST_CASE("render: deterministic given the stream") {
  const TaskScene scene = scene_for(TaskKind::PickPlace, 2);
  Rng a(5), b(5);
  CHECK(render_point_cloud(scene, &scene.object, 300, a) == render_point_cloud(scene, &scene.object, 300, b));
}

TEST_CASE("scene sampling: feasible and reproducible") {
  for (std::uint64_t i = 0; i < 50; ++i) {
    const TaskScene s = scene_for(TaskKind::ObstacleReach, i);
    const TaskScene again = scene_for(TaskKind::ObstacleReach, i);
    CHECK(s.goal == again.goal);
    CHECK(!arm_collides(s.initial_q, s.obstacles, ArmConfig{}));
    for (const auto& d : s.obstacles) CHECK((s.goal - d.center).norm() > d.radius);
  }
}

TEST_CASE("scene JSON round trip") {
  for (TaskKind kind : {TaskKind::Reach, TaskKind::PickPlace, TaskKind::ObstacleReach}) {
    const TaskScene s = scene_for(kind, 11);
    const TaskScene r = scene_from_json(scene_to_json(s));
    CHECK(r.kind == s.kind);
    CHECK(r.goal == s.goal);
    CHECK(r.object == s.object);
    CHECK(r.initial_q == s.initial_q);
    CHECK(r.horizon == s.horizon);
    CHECK(r.seed == s.seed);
    REQUIRE(r.obstacles.size() == s.obstacles.size());
    for (std::size_t i = 0; i < s.obstacles.size(); ++i) {
      CHECK(r.obstacles[i].center == s.obstacles[i].center);
      CHECK(r.obstacles[i].radius == s.obstacles[i].radius);
    }
  }
  CHECK_THROWS(scene_from_json(R"({"format":"other","version":1})"));
  CHECK(parse_task(task_name(TaskKind::PickPlace)) == TaskKind::PickPlace);
  CHECK_THROWS(parse_task("juggle"));
}
