#pragma once
// Planar three-link arm on a table: kinematics, disc obstacles, a pick-place
// object, scripted expert, synthetic point clouds and success checks.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "laflow/geometry.hpp"
#include "laflow/rng.hpp"
#include "laflow/tape.hpp"

namespace laflow {

struct ArmConfig {
  std::array<double, 3> links{0.4, 0.3, 0.2};
  double max_rate = 1.5;  // rad/s at |action| = 1
  double dt = 0.05;
};

constexpr Index kActionDim = 4;       // three joint rates + gripper
constexpr Index kObservationDim = 6;  // q1..q3, ee_x, ee_y, gripper
constexpr Index kContextDim = 5;      // goal offset, obstacle offset, obstacle flag

struct ArmState {
  Eigen::Vector3d q = Eigen::Vector3d::Zero();
  Eigen::Vector2d ee = Eigen::Vector2d::Zero();
  bool gripper_closed = false;
};

// Base, elbow, wrist and end-effector positions.
std::array<Eigen::Vector2d, 4> joint_positions(const Eigen::Vector3d& q, const ArmConfig& cfg);
Eigen::Vector2d forward_kinematics(const Eigen::Vector3d& q, const ArmConfig& cfg);
Eigen::Matrix<double, 2, 3> ee_jacobian(const Eigen::Vector3d& q, const ArmConfig& cfg);
ArmState make_arm_state(const Eigen::Vector3d& q, bool closed, const ArmConfig& cfg);

struct Disc {
  Eigen::Vector2d center;
  double radius = 0.0;
};

double segment_distance(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& p);
bool segment_hits_disc(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Disc& disc);
bool arm_collides(const Eigen::Vector3d& q, const std::vector<Disc>& obstacles, const ArmConfig& cfg);

enum class TaskKind { Reach, PickPlace, ObstacleReach };
std::string task_name(TaskKind kind);
TaskKind parse_task(const std::string& name);

struct TaskScene {
  TaskKind kind = TaskKind::Reach;
  Eigen::Vector2d goal = Eigen::Vector2d::Zero();
  Eigen::Vector2d object = Eigen::Vector2d::Zero();  // pick-place only
  std::vector<Disc> obstacles;
  int horizon = 100;
  std::uint64_t seed = 0;
  Eigen::Vector3d initial_q = Eigen::Vector3d::Zero();
};

// Random feasible scene; deterministic in the stream.
TaskScene sample_scene(TaskKind kind, Rng& rng, const ArmConfig& cfg = {});

// One recorded time step. Frame 0 is the initial state.
struct Frame {
  ArmState arm;
  Eigen::Vector2d object = Eigen::Vector2d::Zero();
  bool held = false;
  bool collision = false;
};

struct StepResult {
  ArmState state;
  bool collision = false;
};

// Actions are clamped to [-1, 1]; joint entries scale to max_rate, gripper
// closes for a positive last entry.
StepResult step(const ArmState& state, const Eigen::VectorXd& action, const std::vector<Disc>& obstacles,
                const ArmConfig& cfg);

class Environment {
 public:
  Environment(TaskScene scene, ArmConfig cfg = {});

  const Frame& frame() const { return frames_.back(); }
  const std::vector<Frame>& frames() const { return frames_; }
  const TaskScene& scene() const { return scene_; }
  const ArmConfig& arm_config() const { return cfg_; }
  int steps() const { return static_cast<int>(frames_.size()) - 1; }

  const Frame& step(const Eigen::VectorXd& action);

  // True once the success condition has been met on the recorded frames.
  bool solved() const;
  bool out_of_time() const { return steps() >= scene_.horizon; }

  Eigen::VectorXd observation() const;
  Eigen::VectorXd context() const;
  // Where the end effector should currently go: object before grasp, goal after.
  Eigen::Vector2d subgoal() const;

 private:
  TaskScene scene_;
  ArmConfig cfg_;
  std::vector<Frame> frames_;
  int hold_count_ = 0;
  bool collided_ = false;
};

bool success_check(const TaskScene& scene, const std::vector<Frame>& frames);

constexpr double kGoalTolerance = 0.02;
constexpr int kHoldSteps = 10;

struct Demonstration {
  TaskScene scene;
  std::vector<Frame> frames;     // T + 1
  Matrix actions;                // T x d_a, as executed (after clamping)
  Matrix observations;           // (T + 1) x 6
  Matrix contexts;               // (T + 1) x 5
  bool success = false;
  double noise_level = 0.0;
  // Sensor clouds by phase: [0] before any grasp, [1] while the object is held.
  std::vector<PointCloud> clouds;
};

// Proportional Cartesian controller through waypoints with obstacle
// repulsion on the links. Rolls out until success or the horizon.
Eigen::VectorXd expert_action(const Environment& env, const ArmConfig& cfg);
Demonstration scripted_expert(const TaskScene& scene, double noise_level, Rng& noise, const ArmConfig& cfg = {});

// Rendering: obstacle rims, goal ring and (unless held) object ring at fixed
// heights, plus wall points outside the workspace box.
Box workspace_box();
PointCloud render_point_cloud(const TaskScene& scene, const Eigen::Vector2d* object, Index n_points, Rng& rng);
PointCloud render_point_cloud(const Environment& env, Index n_points, Rng& rng);

constexpr double kGoalRingRadius = 0.03;
constexpr double kObjectRingRadius = 0.02;
constexpr double kGoalHeight = 0.02;
constexpr double kObstacleHeight = 0.05;
constexpr double kObjectHeight = 0.08;
constexpr double kRenderNoise = 0.002;

// Scene file: JSON object with format/version tags.
std::string scene_to_json(const TaskScene& scene);
TaskScene scene_from_json(const std::string& text);

}  // namespace laflow
