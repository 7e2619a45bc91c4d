#pragma once
// AdamW with decoupled weight decay, parameter EMA, global-norm clipping.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "laflow/tape.hpp"

namespace laflow {

struct AdamWConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-4;
};

template <typename Scalar>
class BasicAdamW {
 public:
  using Parameter = BasicParameter<Scalar>;
  using Matrix = MatrixX<Scalar>;

  BasicAdamW(std::vector<Parameter*> params, AdamWConfig config) : params_(std::move(params)), config_(config) {
    for (const Parameter* p : params_) {
      first_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      second_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }

  // One update from the gradients currently stored in each parameter.
  void step() {
    for (const Parameter* p : params_) {
      if (p->grad.rows() != p->value.rows() || p->grad.cols() != p->value.cols())
        throw std::invalid_argument("adamw: gradient shape mismatch for " + p->name);
      if (!p->grad.allFinite()) throw std::domain_error("adamw: non-finite gradient for " + p->name);
    }
    ++step_;
    const Scalar lr = static_cast<Scalar>(config_.learning_rate);
    const Scalar b1 = static_cast<Scalar>(config_.beta1);
    const Scalar b2 = static_cast<Scalar>(config_.beta2);
    const Scalar eps = static_cast<Scalar>(config_.epsilon);
    const Scalar wd = static_cast<Scalar>(config_.weight_decay);
    const Scalar c1 = Scalar(1) - std::pow(b1, static_cast<Scalar>(step_));
    const Scalar c2 = Scalar(1) - std::pow(b2, static_cast<Scalar>(step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Parameter& p = *params_[i];
      first_[i] = b1 * first_[i] + (Scalar(1) - b1) * p.grad;
      second_[i] = b2 * second_[i] + (Scalar(1) - b2) * p.grad.cwiseAbs2();
      if (wd != Scalar(0)) p.value *= (Scalar(1) - lr * wd);
      p.value.array() -= lr * (first_[i].array() / c1) / ((second_[i].array() / c2).sqrt() + eps);
    }
  }

  std::int64_t step_count() const { return step_; }
  const AdamWConfig& config() const { return config_; }
  const std::vector<Matrix>& first_moments() const { return first_; }
  const std::vector<Matrix>& second_moments() const { return second_; }
  const std::vector<Parameter*>& params() const { return params_; }

  void restore(std::int64_t step, std::vector<Matrix> first, std::vector<Matrix> second) {
    if (first.size() != params_.size() || second.size() != params_.size())
      throw std::invalid_argument("adamw: restored moment count mismatch");
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (first[i].rows() != params_[i]->value.rows() || first[i].cols() != params_[i]->value.cols() ||
          second[i].rows() != params_[i]->value.rows() || second[i].cols() != params_[i]->value.cols())
        throw std::invalid_argument("adamw: restored moment shape mismatch for " + params_[i]->name);
    }
    step_ = step;
    first_ = std::move(first);
    second_ = std::move(second);
  }

 private:
  std::vector<Parameter*> params_;
  AdamWConfig config_;
  std::vector<Matrix> first_;
  std::vector<Matrix> second_;
  std::int64_t step_ = 0;
};

// shadow <- decay * shadow + (1 - decay) * value
template <typename Derived, typename Other>
void ema_update(Eigen::MatrixBase<Derived>& shadow, const Eigen::MatrixBase<Other>& value, double decay) {
  if (!(decay >= 0.0 && decay < 1.0)) throw std::domain_error("ema_update: decay must lie in [0, 1)");
  if (shadow.rows() != value.rows() || shadow.cols() != value.cols())
    throw std::invalid_argument("ema_update: shape mismatch");
  using Scalar = typename Derived::Scalar;
  shadow = static_cast<Scalar>(decay) * shadow + static_cast<Scalar>(1.0 - decay) * value;
}

template <typename Scalar>
class BasicEma {
 public:
  using Parameter = BasicParameter<Scalar>;
  using Matrix = MatrixX<Scalar>;

  BasicEma(const std::vector<Parameter*>& params, double decay) : decay_(decay) {
    if (!(decay >= 0.0 && decay < 1.0)) throw std::domain_error("ema: decay must lie in [0, 1)");
    for (const Parameter* p : params) shadow_.push_back(p->value);
  }

  void update(const std::vector<Parameter*>& params) {
    if (params.size() != shadow_.size()) throw std::invalid_argument("ema: parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) ema_update(shadow_[i], params[i]->value, decay_);
  }

  void copy_to(const std::vector<Parameter*>& params) const {
    if (params.size() != shadow_.size()) throw std::invalid_argument("ema: parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = shadow_[i];
  }

  double decay() const { return decay_; }
  const std::vector<Matrix>& shadow() const { return shadow_; }
  std::vector<Matrix>& shadow() { return shadow_; }

 private:
  double decay_;
  std::vector<Matrix> shadow_;
};

// Rescales all gradients so their joint L2 norm is at most max_norm; returns
// the norm before clipping.
template <typename Scalar>
Scalar clip_grad_norm(const std::vector<BasicParameter<Scalar>*>& params, Scalar max_norm) {
  Scalar total = 0;
  for (const auto* p : params) total += p->grad.squaredNorm();
  total = std::sqrt(total);
  if (total > max_norm && total > Scalar(0)) {
    const Scalar s = max_norm / total;
    for (auto* p : params) p->grad *= s;
  }
  return total;
}

template <typename Scalar>
void zero_grad(const std::vector<BasicParameter<Scalar>*>& params) {
  for (auto* p : params) p->zero_grad();
}

using AdamW = BasicAdamW<double>;
using Ema = BasicEma<double>;

}  // namespace laflow
