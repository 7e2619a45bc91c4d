#include "laflow/normalize.hpp"

#include <stdexcept>

namespace laflow {

RangeStats RangeStats::fit(const Matrix& samples) {
  if (samples.rows() == 0) throw std::invalid_argument("RangeStats::fit: no samples");
  if (!samples.allFinite()) throw std::domain_error("RangeStats::fit: non-finite sample");
  RangeStats s;
  s.min = samples.colwise().minCoeff();
  s.max = samples.colwise().maxCoeff();
  for (Index d = 0; d < s.dims(); ++d) {
    if (s.degenerate(d)) s.warnings.push_back("dimension " + std::to_string(d) + " is constant; normalized to 0");
  }
  return s;
}

Matrix normalize(const Matrix& x, const RangeStats& stats) {
  if (x.cols() != stats.dims()) throw std::invalid_argument("normalize: dimension mismatch");
  Matrix y(x.rows(), x.cols());
  for (Index d = 0; d < x.cols(); ++d) {
    if (stats.degenerate(d)) {
      y.col(d).setZero();
    } else {
      const double span = stats.max(d) - stats.min(d);
      y.col(d) = (2.0 * (x.col(d).array() - stats.min(d)) / span - 1.0).matrix();
    }
  }
  return y;
}

Matrix denormalize(const Matrix& y, const RangeStats& stats) {
  if (y.cols() != stats.dims()) throw std::invalid_argument("denormalize: dimension mismatch");
  Matrix x(y.rows(), y.cols());
  for (Index d = 0; d < y.cols(); ++d) {
    if (stats.degenerate(d)) {
      x.col(d).setConstant(stats.min(d));
    } else {
      const double span = stats.max(d) - stats.min(d);
      x.col(d) = ((y.col(d).array() + 1.0) * 0.5 * span + stats.min(d)).matrix();
    }
  }
  return x;
}

Matrix clamp_unit(const Matrix& y) { return y.cwiseMax(-1.0).cwiseMin(1.0); }

}  // namespace laflow
