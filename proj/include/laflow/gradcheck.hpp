#pragma once
// Central finite-difference check of tape gradients.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "laflow/rng.hpp"
#include "laflow/tape.hpp"

namespace laflow {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_entry;
  std::size_t entries_checked = 0;
};

// Relative error |a - n| / max(|a|, |n|, floor). The floor keeps entries whose
// true gradient is numerically zero from dominating through round-off.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// `loss_fn(Tape&)` must record a scalar loss using tape.param() for every
// parameter in `params`. Up to `max_entries` entries per parameter are probed
// (all when 0), chosen with `rng`.
template <typename LossFn>
GradCheckResult check_gradients(const ParamList& params, LossFn&& loss_fn, Rng& rng, double step = 1e-5,
                                std::size_t max_entries = 0) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    Var loss = loss_fn(tape);
    tape.backward(loss);
  }
  auto eval = [&]() {
    Tape tape;
    return loss_fn(tape).scalar();
  };

  GradCheckResult result;
  for (Parameter* p : params) {
    const Index n = p->value.size();
    std::vector<Index> entries(static_cast<std::size_t>(n));
    std::iota(entries.begin(), entries.end(), Index{0});
    if (max_entries != 0 && static_cast<std::size_t>(n) > max_entries) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(max_entries);
    }
    for (Index e : entries) {
      double& x = p->value.data()[e];
      const double saved = x;
      x = saved + step;
      const double up = eval();
      x = saved - step;
      const double down = eval();
      x = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = p->grad.data()[e];
      const double err = relative_error(analytic, numeric);
      ++result.entries_checked;
      if (err > result.max_relative_error || !std::isfinite(err)) {
        result.max_relative_error = std::isfinite(err) ? err : std::numeric_limits<double>::infinity();
        result.worst_entry = p->name + "[" + std::to_string(e) + "] analytic=" + std::to_string(analytic) +
                             " numeric=" + std::to_string(numeric);
      }
    }
  }
  return result;
}

}  // namespace laflow
