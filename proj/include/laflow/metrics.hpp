#pragma once
// Trajectory smoothness (third-difference jerk and high-frequency spectral
// energy), success aggregation across seeds, and inference latency.

#include <chrono>
#include <cstddef>
#include <string>
#include <vector>

#include "laflow/tape.hpp"

namespace laflow {

// Rows are time steps. Row i of the result is the stencil centred so that it
// uses a_{t+1}, a_t, a_{t-1}, a_{t-2} with t = i + 2 (0-based), i.e. T - 3 rows.
Matrix jerk(const Matrix& traj, double dt);

// Sum of squared jerk norms divided by (T - 2).
double s_jerk(const Matrix& traj, double dt);

// Default cutoff: a quarter of the Nyquist frequency.
double default_cutoff(double dt);

// Share of non-DC spectral energy strictly above f_c, after per-dimension mean
// removal. Zero when the trajectory carries no energy.
double s_freq(const Matrix& traj, double dt, double f_c);

struct SmoothnessReport {
  double s_jerk = 0.0;
  double s_freq = 0.0;
  double s_smooth = 0.0;
  double alpha = 0.25;
  double beta = 0.75;
  double cutoff = 0.0;
  double dt = 0.0;
  double jerk_reference = 1.0;
};

// alpha * (1 - exp(-s_jerk / j_ref)) + beta * s_freq.
double combine_smoothness(double jerk_value, double freq_value, double jerk_reference, double alpha = 0.25,
                          double beta = 0.75);

SmoothnessReport s_smooth(const Matrix& traj, double dt, double f_c, double jerk_reference);

double median(std::vector<double> values);
double percentile(std::vector<double> values, double q);  // linear interpolation, q in [0, 1]

struct LatencyStats {
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  double mean_ms = 0.0;
  std::size_t calls = 0;
};

LatencyStats summarize_latency(const std::vector<double>& samples_ms);

// Times `infer()` after discarding `warmup` calls.
template <class Fn>
LatencyStats measure_response_time(Fn&& infer, std::size_t warmup = 10, std::size_t calls = 100) {
  for (std::size_t i = 0; i < warmup; ++i) infer();
  std::vector<double> samples;
  samples.reserve(calls);
  for (std::size_t i = 0; i < calls; ++i) {
    const auto start = std::chrono::steady_clock::now();
    infer();
    const auto stop = std::chrono::steady_clock::now();
    samples.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
  }
  return summarize_latency(samples);
}

struct EvalSummary {
  std::vector<int> successes;  // per seed
  std::vector<int> trials;     // per seed
  std::vector<double> rates;   // per seed, percent
  double mean_rate = 0.0;
  double std_rate = 0.0;  // sample std over seeds
  bool single_seed = false;
};

// outcomes[seed][trial]
EvalSummary aggregate_eval(const std::vector<std::vector<bool>>& outcomes);

// 5-tap centred moving average with edge replication.
Matrix moving_average5(const Matrix& traj);

// Reads rows of comma-separated numbers; a non-numeric first line is a header.
Matrix read_trajectory_csv(const std::string& path);

}  // namespace laflow
