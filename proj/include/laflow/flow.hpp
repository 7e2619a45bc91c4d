#pragma once
// Time-dependent velocity field over flattened latent (or raw action)
// trajectories, its flow map f(t, z) = z + (1 - t) v(t, c_in(t) z), the
// consistency flow-matching objective, and one-step generation.

#include <cstdint>
#include <vector>

#include "laflow/geometry.hpp"
#include "laflow/layers.hpp"
#include "laflow/rng.hpp"
#include "laflow/tape.hpp"

namespace laflow {

// 1 / sqrt(t^2 + (1 - t)^2); throws outside [0, 1].
double c_in(double t);

// Sinusoidal embedding, rows are samples: [sin(w_i t) | cos(w_i t)].
Matrix time_embedding(const Eigen::VectorXd& t, Index dim);

struct FlowConfig {
  Index state_dim = 64;  // K * d_z (or H * d_a for the raw baseline)
  Index cond_dim = 12;   // observation history
  Index time_dim = 32;
  std::vector<Index> widths{256, 256};
  // The consistency gap shrinks with delta^2, so the weight scales as 1/delta^2.
  double lambda_consistency = 1000.0;
  double consistency_delta = 0.01;
  double generation_time = 0.0;
};

class VelocityNet {
 public:
  VelocityNet() = default;
  VelocityNet(const FlowConfig& cfg, Rng& rng);

  // t: B x 1, z_in: B x state_dim (already scaled by c_in), cond: B x
  // cond_dim (may be empty when cond_dim is 0). Every hidden pre-activation is
  // passed through the hierarchical FiLM when `scene` is given.
  Var operator()(Tape& tape, const Var& t, const Var& z_in, const Var& cond, const SceneFilm* scene);

  void collect(ParamList& out);
  const FlowConfig& config() const { return cfg_; }
  const std::vector<Index>& hidden_widths() const { return cfg_.widths; }

  // Number of trajectories pushed through the network since the last reset.
  std::uint64_t evaluations() const { return evaluations_; }
  void reset_evaluations() { evaluations_ = 0; }

  std::vector<Linear>& layers() { return layers_; }

 private:
  FlowConfig cfg_;
  std::vector<Linear> layers_;  // hidden layers followed by the output layer
  std::uint64_t evaluations_ = 0;
};

// f(t, z) for a batch; t is B x 1 with entries in [0, 1].
Var flow_apply(Tape& tape, VelocityNet& net, const Eigen::VectorXd& t, const Var& z, const Var& cond,
               const SceneFilm* scene);

// One draw of the straight-line conditional path used by the objective.
struct CfmSample {
  Matrix base;    // z~ ~ N(0, I)
  Eigen::VectorXd t;   // t1 ~ U[0, 1]
  Eigen::VectorXd t2;  // min(t1 + delta, 1)
  Matrix z_t;     // t1 z + (1 - t1) z~
  Matrix z_t2;
  Matrix target_velocity;  // z - z~
};

CfmSample draw_cfm_sample(const Matrix& target, double delta, Rng& rng);

// Mean over rows of || v - (z - z~) ||^2.
Var flow_matching_term(const Var& velocity, const Matrix& target_velocity);

struct CfmLoss {
  Var total;
  double flow_matching = 0.0;
  double consistency = 0.0;
};

// L_fm + lambda_c * L_cons, consistency target f(t2, z_t2) held fixed.
// Throws std::domain_error on a non-finite loss.
CfmLoss cfm_loss(Tape& tape, VelocityNet& net, const Matrix& target, const Var& cond, const SceneFilm* scene,
                 Rng& rng);
CfmLoss cfm_loss(Tape& tape, VelocityNet& net, const CfmSample& sample, const Var& cond, const SceneFilm* scene);

// f(generation_time, z~) with exactly one network evaluation per row. Scene
// FiLM parameters, when given, must live on `tape`.
Var generate_one_step(Tape& tape, VelocityNet& net, const Matrix& base, const Var& cond, const SceneFilm* scene);
Matrix generate_one_step(VelocityNet& net, const Matrix& base, const Matrix& cond);

// Euler integration of dz/dt = v(t, c_in(t) z) from t = 0 to 1 in n steps.
// The result is a constant on the tape; no gradient flows through it.
Var integrate_ode(Tape& tape, VelocityNet& net, const Matrix& base, const Var& cond, const SceneFilm* scene,
                  int steps);
Matrix integrate_ode(VelocityNet& net, const Matrix& base, const Matrix& cond, int steps);

// Energy distance between two samples (rows are points), exact O(n m).
double energy_distance(const Matrix& a, const Matrix& b);

}  // namespace laflow
