#pragma once
// Small building blocks shared by every network in the project.

#include <cmath>
#include <string>
#include <vector>

#include "laflow/rng.hpp"
#include "laflow/tape.hpp"

namespace laflow {

// y = x W + b, rows are samples.
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, Index in, Index out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight = Parameter(name + ".weight", uniform<double>(in, out, -bound, bound, rng));
    bias = Parameter(name + ".bias", uniform<double>(1, out, -bound, bound, rng));
  }

  Var operator()(Tape& tape, const Var& x) {
    return add_rowwise(matmul(x, tape.param(weight)), tape.param(bias));
  }

  Index in_features() const { return weight.value.rows(); }
  Index out_features() const { return weight.value.cols(); }

  void collect(ParamList& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }

  Parameter weight;
  Parameter bias;
};

// Feature-wise affine modulation gamma * h + beta, one (gamma, beta) row per sample.
inline Var film(const Var& h, const Var& gamma, const Var& beta) {
  if (gamma.cols() != h.cols() || beta.cols() != h.cols() || gamma.rows() != h.rows() || beta.rows() != h.rows())
    throw std::invalid_argument("film: modulation width mismatch");
  return cwise_product(gamma, h) + beta;
}

struct FilmLayer {
  Var gamma;
  Var beta;
};

// Produces per-layer (gamma, beta) from a conditioning vector. The heads start
// at zero weight with gamma bias 1 and beta bias 0, so a freshly built
// generator is the exact identity modulation whatever its input.
class FilmGenerator {
 public:
  FilmGenerator() = default;
  FilmGenerator(const std::string& name, Index cond_dim, Index hidden, std::vector<Index> widths, Rng& rng)
      : widths_(std::move(widths)), trunk_(name + ".trunk", cond_dim, hidden, rng) {
    Index total = 0;
    for (Index w : widths_) total += w;
    gamma_head_ = Linear(name + ".gamma", hidden, total, rng);
    beta_head_ = Linear(name + ".beta", hidden, total, rng);
    gamma_head_.weight.value.setZero();
    gamma_head_.bias.value.setOnes();
    beta_head_.weight.value.setZero();
    beta_head_.bias.value.setZero();
  }

  std::vector<FilmLayer> operator()(Tape& tape, const Var& cond) {
    Var h = silu(trunk_(tape, cond));
    Var g = gamma_head_(tape, h);
    Var b = beta_head_(tape, h);
    std::vector<FilmLayer> layers;
    Index offset = 0;
    for (Index w : widths_) {
      layers.push_back({slice_cols(g, offset, w), slice_cols(b, offset, w)});
      offset += w;
    }
    return layers;
  }

  void collect(ParamList& out) {
    trunk_.collect(out);
    gamma_head_.collect(out);
    beta_head_.collect(out);
  }

  Index cond_dim() const { return trunk_.in_features(); }
  const std::vector<Index>& widths() const { return widths_; }
  Linear& gamma_head() { return gamma_head_; }
  Linear& beta_head() { return beta_head_; }

 private:
  std::vector<Index> widths_;
  Linear trunk_;
  Linear gamma_head_;
  Linear beta_head_;
};

}  // namespace laflow
