#pragma once
// Per-dimension affine normalization to [-1, 1] from training min/max.

#include <string>
#include <vector>

#include "laflow/tape.hpp"

namespace laflow {

struct RangeStats {
  Eigen::RowVectorXd min;
  Eigen::RowVectorXd max;
  // One entry per dimension whose max equals its min; such dimensions map to 0.
  std::vector<std::string> warnings;

  // Rows are samples, columns dimensions. No clamping happens here.
  static RangeStats fit(const Matrix& samples);

  Index dims() const { return min.size(); }
  bool degenerate(Index d) const { return !(max(d) > min(d)); }
};

Matrix normalize(const Matrix& x, const RangeStats& stats);
Matrix denormalize(const Matrix& y, const RangeStats& stats);

// Execution-time clamp into [-1, 1].
Matrix clamp_unit(const Matrix& y);

}  // namespace laflow
