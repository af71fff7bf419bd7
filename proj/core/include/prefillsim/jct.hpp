#pragma once

// Job completion time estimation: a linear model in (n_input, n_cached)
// fitted by least squares over a profiling grid, the cache-miss proxy, and a
// correlation helper.

#include <filesystem>
#include <span>
#include <vector>

#include "prefillsim/exec_model.hpp"

namespace prefillsim {

struct JctSample {
  Tokens n_input = 0;
  Tokens n_cached = 0;
  double latency = 0.0;
};

struct JctProfile {
  double coef_input = 0.0;   // seconds per input token
  double coef_cached = 0.0;  // seconds per cached token
  double intercept = 0.0;    // seconds
  double fit_r2 = 0.0;

  void save(const std::filesystem::path& path) const;
  static JctProfile load(const std::filesystem::path& path);
};

// OLS of latency on (n_input, n_cached, 1). Needs >= 3 samples over >= 2
// distinct n_input values; throws FitError if the design is rank deficient.
JctProfile fit_jct(std::span<const JctSample> samples);

// max(0, linear estimate). Throws ConfigError if n_cached > n_input.
double get_jct(const JctProfile& profile, Tokens n_input, Tokens n_cached);

// n_input - n_cached. Throws ConfigError if n_cached > n_input.
Tokens proxy_miss(Tokens n_input, Tokens n_cached);

// Sample Pearson correlation. Throws ConfigError on length mismatch, fewer
// than 2 points, or zero variance.
double pearson(std::span<const double> xs, std::span<const double> ys);

struct ProfileGrid {
  Tokens step = 1000;
  // Largest n_input sampled; 0 means the model's MIL. Clipped to the MIL.
  // The default covers the longest bundled workload request.
  Tokens max_input = 60000;
  // Relative Gaussian noise on each latency; 0 disables it.
  double noise_stddev = 0.0;
  std::uint64_t noise_seed = 0;
};

// Samples n_input in {step, 2 step, ...} and n_cached in {0, step, ..., n_input}
// from the execution model.
std::vector<JctSample> profile_samples(const ExecModel& model, const ProfileGrid& grid = {});

JctProfile profile_from_model(const ExecModel& model, const ProfileGrid& grid = {});

}  // namespace prefillsim
