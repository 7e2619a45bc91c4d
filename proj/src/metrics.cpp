#include "laflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unsupported/Eigen/FFT>

namespace laflow {

Matrix jerk(const Matrix& traj, double dt) {
  const Index T = traj.rows();
  if (T < 4) throw std::invalid_argument("jerk: need at least 4 steps");
  const double inv = 1.0 / (dt * dt * dt);
  Matrix out(T - 3, traj.cols());
  // Grouped as outer minus inner difference so constant runs cancel exactly.
  for (Index t = 2; t + 1 < T; ++t)
    out.row(t - 2) = inv * ((traj.row(t + 1) - traj.row(t - 2)) - 3.0 * (traj.row(t) - traj.row(t - 1)));
  return out;
}

double s_jerk(const Matrix& traj, double dt) {
  const Matrix j = jerk(traj, dt);
  return j.rowwise().squaredNorm().sum() / static_cast<double>(traj.rows() - 2);
}

double default_cutoff(double dt) { return 0.25 * (0.5 / dt); }

double s_freq(const Matrix& traj, double dt, double f_c) {
  const Index T = traj.rows();
  if (T < 8) throw std::invalid_argument("s_freq: need at least 8 steps");
  const double nyquist = 0.5 / dt;
  if (!(f_c > 0.0 && f_c < nyquist)) throw std::invalid_argument("s_freq: cutoff must lie in (0, Nyquist)");
  Eigen::FFT<double> fft;
  double high = 0.0, total = 0.0;
  std::vector<double> signal(static_cast<std::size_t>(T));
  std::vector<std::complex<double>> spectrum;
  for (Index d = 0; d < traj.cols(); ++d) {
    const double mu = traj.col(d).mean();
    for (Index t = 0; t < T; ++t) signal[static_cast<std::size_t>(t)] = traj(t, d) - mu;
    fft.fwd(spectrum, signal);
    for (Index k = 1; k < T; ++k) {
      const double e = std::norm(spectrum[static_cast<std::size_t>(k)]);
      const double f = static_cast<double>(std::min(k, T - k)) / (static_cast<double>(T) * dt);
      total += e;
      if (f > f_c) high += e;
    }
  }
  // Relative threshold: round-off of a constant trajectory is not energy.
  const double scale = traj.squaredNorm() * static_cast<double>(T);
  if (total <= 1e-24 * std::max(scale, 1.0)) return 0.0;
  return std::clamp(high / total, 0.0, 1.0);
}

double combine_smoothness(double jerk_value, double freq_value, double jerk_reference, double alpha, double beta) {
  if (!(jerk_reference > 0.0)) throw std::invalid_argument("combine_smoothness: reference jerk must be positive");
  return alpha * (1.0 - std::exp(-jerk_value / jerk_reference)) + beta * freq_value;
}

SmoothnessReport s_smooth(const Matrix& traj, double dt, double f_c, double jerk_reference) {
  SmoothnessReport r;
  r.dt = dt;
  r.cutoff = f_c;
  r.jerk_reference = jerk_reference;
  r.s_jerk = s_jerk(traj, dt);
  r.s_freq = s_freq(traj, dt, f_c);
  r.s_smooth = combine_smoothness(r.s_jerk, r.s_freq, jerk_reference, r.alpha, r.beta);
  return r;
}

double median(std::vector<double> values) { return percentile(std::move(values), 0.5); }

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile: empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

LatencyStats summarize_latency(const std::vector<double>& samples_ms) {
  LatencyStats s;
  s.calls = samples_ms.size();
  s.p50_ms = percentile(samples_ms, 0.5);
  s.p95_ms = percentile(samples_ms, 0.95);
  s.mean_ms = std::accumulate(samples_ms.begin(), samples_ms.end(), 0.0) / static_cast<double>(s.calls);
  return s;
}

EvalSummary aggregate_eval(const std::vector<std::vector<bool>>& outcomes) {
  if (outcomes.empty()) throw std::invalid_argument("aggregate_eval: no seeds");
  EvalSummary s;
  for (const auto& seed : outcomes) {
    if (seed.empty()) throw std::invalid_argument("aggregate_eval: seed without trials");
    const int ok = static_cast<int>(std::count(seed.begin(), seed.end(), true));
    s.successes.push_back(ok);
    s.trials.push_back(static_cast<int>(seed.size()));
    s.rates.push_back(100.0 * ok / static_cast<double>(seed.size()));
  }
  const double n = static_cast<double>(s.rates.size());
  s.mean_rate = std::accumulate(s.rates.begin(), s.rates.end(), 0.0) / n;
  s.single_seed = s.rates.size() == 1;
  if (!s.single_seed) {
    double ss = 0.0;
    for (double r : s.rates) ss += (r - s.mean_rate) * (r - s.mean_rate);
    s.std_rate = std::sqrt(ss / (n - 1.0));
  }
  return s;
}

Matrix moving_average5(const Matrix& traj) {
  const Index T = traj.rows();
  Matrix out(T, traj.cols());
  for (Index t = 0; t < T; ++t) {
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(traj.cols());
    for (Index o = -2; o <= 2; ++o) acc += traj.row(std::clamp<Index>(t + o, 0, T - 1));
    out.row(t) = acc / 5.0;
  }
  return out;
}

Matrix read_trajectory_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        numeric = false;
        break;
      }
    }
    if (!numeric) {
      if (first) {
        first = false;
        continue;
      }
      throw std::runtime_error("non-numeric row in " + path);
    }
    first = false;
    if (!rows.empty() && row.size() != rows.front().size()) throw std::runtime_error("ragged rows in " + path);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("no data rows in " + path);
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  return m;
}

}  // namespace laflow
