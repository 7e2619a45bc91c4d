#include "laflow/flow.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace laflow {

double c_in(double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::domain_error("c_in: t must lie in [0, 1]");
  return 1.0 / std::sqrt(t * t + (1.0 - t) * (1.0 - t));
}

Matrix time_embedding(const Eigen::VectorXd& t, Index dim) {
  if (dim % 2 != 0) throw std::invalid_argument("time_embedding: dimension must be even");
  const Index half = dim / 2;
  Matrix out(t.size(), dim);
  for (Index j = 0; j < half; ++j) {
    // Angular frequencies spread geometrically over [1, 1000].
    const double w = half > 1 ? std::pow(1000.0, static_cast<double>(j) / static_cast<double>(half - 1)) : 1.0;
    for (Index i = 0; i < t.size(); ++i) {
      out(i, j) = std::sin(w * t(i));
      out(i, half + j) = std::cos(w * t(i));
    }
  }
  return out;
}

VelocityNet::VelocityNet(const FlowConfig& cfg, Rng& rng) : cfg_(cfg) {
  Index in = cfg.state_dim + cfg.time_dim + cfg.cond_dim;
  for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
    layers_.emplace_back("velocity.hidden" + std::to_string(i), in, cfg.widths[i], rng);
    in = cfg.widths[i];
  }
  layers_.emplace_back("velocity.out", in, cfg.state_dim, rng);
}

Var VelocityNet::operator()(Tape& tape, const Var& t, const Var& z_in, const Var& cond, const SceneFilm* scene) {
  if (z_in.cols() != cfg_.state_dim) throw std::invalid_argument("VelocityNet: state width mismatch");
  if (t.rows() != z_in.rows() || t.cols() != 1) throw std::invalid_argument("VelocityNet: t must be B x 1");
  std::vector<Var> inputs{z_in, tape.constant(time_embedding(t.value().col(0), cfg_.time_dim))};
  if (cfg_.cond_dim > 0) {
    if (cond.cols() != cfg_.cond_dim || cond.rows() != z_in.rows())
      throw std::invalid_argument("VelocityNet: conditioning shape mismatch");
    inputs.push_back(cond);
  }
  Var h = concat_cols(inputs);
  const std::size_t hidden = layers_.size() - 1;
  if (scene != nullptr && (scene->local.size() != hidden || scene->center.size() != hidden))
    throw std::invalid_argument("VelocityNet: FiLM layer count mismatch");
  for (std::size_t i = 0; i < hidden; ++i) {
    Var a = layers_[i](tape, h);
    if (scene != nullptr) a = film_hierarchical(a, scene->local[i], scene->center[i]);
    h = silu(a);
  }
  evaluations_ += static_cast<std::uint64_t>(z_in.rows());
  return layers_.back()(tape, h);
}

void VelocityNet::collect(ParamList& out) {
  for (auto& l : layers_) l.collect(out);
}

Var flow_apply(Tape& tape, VelocityNet& net, const Eigen::VectorXd& t, const Var& z, const Var& cond,
               const SceneFilm* scene) {
  if (t.size() != z.rows()) throw std::invalid_argument("flow_apply: one time per row required");
  Matrix scale(t.size(), 1), remaining(t.size(), 1);
  for (Index i = 0; i < t.size(); ++i) {
    scale(i, 0) = c_in(t(i));
    remaining(i, 0) = 1.0 - t(i);
  }
  Var v = net(tape, tape.constant(t), scale_rows(z, tape.constant(scale)), cond, scene);
  return z + scale_rows(v, tape.constant(remaining));
}

CfmSample draw_cfm_sample(const Matrix& target, double delta, Rng& rng) {
  CfmSample s;
  s.base = standard_normal(target.rows(), target.cols(), rng);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  s.t.resize(target.rows());
  s.t2.resize(target.rows());
  for (Index i = 0; i < target.rows(); ++i) {
    s.t(i) = ud(rng);
    s.t2(i) = std::min(s.t(i) + delta, 1.0);
  }
  s.z_t = s.t.asDiagonal() * target + (1.0 - s.t.array()).matrix().asDiagonal() * s.base;
  s.z_t2 = s.t2.asDiagonal() * target + (1.0 - s.t2.array()).matrix().asDiagonal() * s.base;
  s.target_velocity = target - s.base;
  return s;
}

Var flow_matching_term(const Var& velocity, const Matrix& target_velocity) {
  Tape& tape = *velocity.tape();
  Var diff = velocity - tape.constant(target_velocity);
  return (1.0 / static_cast<double>(diff.rows())) * sum(square(diff));
}

CfmLoss cfm_loss(Tape& tape, VelocityNet& net, const CfmSample& s, const Var& cond, const SceneFilm* scene) {
  const Index b = s.z_t.rows();
  Matrix scale1(b, 1), scale2(b, 1), rem1(b, 1), rem2(b, 1);
  for (Index i = 0; i < b; ++i) {
    scale1(i, 0) = c_in(s.t(i));
    scale2(i, 0) = c_in(s.t2(i));
    rem1(i, 0) = 1.0 - s.t(i);
    rem2(i, 0) = 1.0 - s.t2(i);
  }
  Var z1 = tape.constant(s.z_t);
  Var v1 = net(tape, tape.constant(s.t), tape.constant(scale1.col(0).asDiagonal() * s.z_t), cond, scene);
  Var fm = flow_matching_term(v1, s.target_velocity);
  Var f1 = z1 + scale_rows(v1, tape.constant(rem1));

  Var v2 = net(tape, tape.constant(s.t2), tape.constant(scale2.col(0).asDiagonal() * s.z_t2), cond, scene);
  Matrix f2 = s.z_t2 + rem2.col(0).asDiagonal() * v2.value();
  Var cons_diff = f1 - tape.constant(std::move(f2));
  Var cons = (1.0 / static_cast<double>(b)) * sum(square(cons_diff));

  CfmLoss out;
  out.total = fm + net.config().lambda_consistency * cons;
  out.flow_matching = fm.scalar();
  out.consistency = cons.scalar();
  if (!std::isfinite(out.total.scalar())) throw std::domain_error("cfm loss is not finite");
  return out;
}

CfmLoss cfm_loss(Tape& tape, VelocityNet& net, const Matrix& target, const Var& cond, const SceneFilm* scene,
                 Rng& rng) {
  return cfm_loss(tape, net, draw_cfm_sample(target, net.config().consistency_delta, rng), cond, scene);
}

Var generate_one_step(Tape& tape, VelocityNet& net, const Matrix& base, const Var& cond, const SceneFilm* scene) {
  const Eigen::VectorXd t = Eigen::VectorXd::Constant(base.rows(), net.config().generation_time);
  return flow_apply(tape, net, t, tape.constant(base), cond, scene);
}

Matrix generate_one_step(VelocityNet& net, const Matrix& base, const Matrix& cond) {
  Tape tape;
  return generate_one_step(tape, net, base, tape.constant(cond), nullptr).value();
}

Var integrate_ode(Tape& tape, VelocityNet& net, const Matrix& base, const Var& cond, const SceneFilm* scene,
                  int steps) {
  if (steps < 1) throw std::invalid_argument("integrate_ode: need at least one step");
  const double h = 1.0 / static_cast<double>(steps);
  Matrix z = base;
  for (int i = 0; i < steps; ++i) {
    const double t = h * static_cast<double>(i);
    Var v = net(tape, tape.constant(Matrix::Constant(z.rows(), 1, t)), tape.constant(c_in(t) * z), cond, scene);
    z += h * v.value();
  }
  return tape.constant(z);
}

Matrix integrate_ode(VelocityNet& net, const Matrix& base, const Matrix& cond, int steps) {
  Tape tape;
  return integrate_ode(tape, net, base, tape.constant(cond), nullptr, steps).value();
}

double energy_distance(const Matrix& a, const Matrix& b) {
  auto mean_dist = [](const Matrix& x, const Matrix& y) {
    double total = 0.0;
    for (Index i = 0; i < x.rows(); ++i) total += (y.rowwise() - x.row(i)).rowwise().norm().sum();
    return total / (static_cast<double>(x.rows()) * static_cast<double>(y.rows()));
  };
  return 2.0 * mean_dist(a, b) - mean_dist(a, a) - mean_dist(b, b);
}

}  // namespace laflow
