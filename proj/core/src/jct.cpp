#include "prefillsim/jct.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <fmt/format.h>

#include "prefillsim/errors.hpp"
#include "prefillsim/presets.hpp"
#include "prefillsim/rng.hpp"

namespace prefillsim {

void JctProfile::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  out << fmt::format("coef_input = {:.17g}\ncoef_cached = {:.17g}\nintercept = {:.17g}\nfit_r2 = {:.17g}\n",
                     coef_input, coef_cached, intercept, fit_r2);
  if (!out) throw IoError(fmt::format("write failed for {}", path.string()));
}

JctProfile JctProfile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open JCT profile {}", path.string()));
  const auto kv = KeyValueFile::load(path);
  JctProfile p;
  p.coef_input = kv.get_double("coef_input");
  p.coef_cached = kv.get_double("coef_cached");
  p.intercept = kv.get_double("intercept");
  p.fit_r2 = kv.get_double("fit_r2");
  return p;
}

JctProfile fit_jct(std::span<const JctSample> samples) {
  if (samples.size() < 3) throw FitError(fmt::format("need at least 3 samples, got {}", samples.size()));
  std::set<Tokens> inputs;
  for (const auto& s : samples) {
    if (s.n_cached > s.n_input) throw ConfigError("sample has n_cached > n_input");
    if (!(s.latency > 0.0) || !std::isfinite(s.latency)) throw ConfigError("sample latency must be positive");
    inputs.insert(s.n_input);
  }
  if (inputs.size() < 2) throw FitError("samples span fewer than 2 distinct n_input values");

  const double m = static_cast<double>(samples.size());
  double mx1 = 0.0, mx2 = 0.0, my = 0.0;
  for (const auto& s : samples) {
    mx1 += static_cast<double>(s.n_input);
    mx2 += static_cast<double>(s.n_cached);
    my += s.latency;
  }
  mx1 /= m;
  mx2 /= m;
  my /= m;

  // Centered normal equations for the two slopes; the intercept follows from the means.
  double s11 = 0.0, s12 = 0.0, s22 = 0.0, s1y = 0.0, s2y = 0.0, syy = 0.0;
  for (const auto& s : samples) {
    const double a = static_cast<double>(s.n_input) - mx1;
    const double b = static_cast<double>(s.n_cached) - mx2;
    const double y = s.latency - my;
    s11 += a * a;
    s12 += a * b;
    s22 += b * b;
    s1y += a * y;
    s2y += b * y;
    syy += y * y;
  }
  const double det = s11 * s22 - s12 * s12;
  if (!(s11 > 0.0) || !(s22 > 0.0) || !(det > 1e-12 * s11 * s22)) {
    throw FitError("design matrix is rank deficient (n_input and n_cached are collinear or constant)");
  }
  JctProfile p;
  p.coef_input = (s1y * s22 - s2y * s12) / det;
  p.coef_cached = (s2y * s11 - s1y * s12) / det;
  p.intercept = my - p.coef_input * mx1 - p.coef_cached * mx2;

  double ss_res = 0.0;
  for (const auto& s : samples) {
    const double pred = p.coef_input * static_cast<double>(s.n_input) +
                        p.coef_cached * static_cast<double>(s.n_cached) + p.intercept;
    ss_res += (s.latency - pred) * (s.latency - pred);
  }
  p.fit_r2 = syy > 0.0 ? std::clamp(1.0 - ss_res / syy, 0.0, 1.0) : 1.0;
  return p;
}

double get_jct(const JctProfile& profile, Tokens n_input, Tokens n_cached) {
  if (n_cached > n_input) throw ConfigError("n_cached exceeds n_input");
  const double v = profile.coef_input * static_cast<double>(n_input) +
                   profile.coef_cached * static_cast<double>(n_cached) + profile.intercept;
  return std::max(0.0, v);
}

Tokens proxy_miss(Tokens n_input, Tokens n_cached) {
  if (n_cached > n_input) throw ConfigError("n_cached exceeds n_input");
  return n_input - n_cached;
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ConfigError("pearson: sequences differ in length");
  if (xs.size() < 2) throw ConfigError("pearson: need at least 2 points");
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double a = xs[i] - mx;
    const double b = ys[i] - my;
    sxx += a * a;
    syy += b * b;
    sxy += a * b;
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) throw ConfigError("pearson: zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<JctSample> profile_samples(const ExecModel& model, const ProfileGrid& grid) {
  if (grid.step == 0) throw ConfigError("profile grid step must be >= 1");
  if (grid.noise_stddev < 0.0) throw ConfigError("noise_stddev must be >= 0");
  const Tokens mil = model.max_input_length();
  const Tokens top = grid.max_input == 0 ? mil : std::min(grid.max_input, mil);
  std::vector<JctSample> samples;
  rng::Stream noise(grid.noise_seed);
  for (Tokens n = grid.step; n <= top; n += grid.step) {
    for (Tokens c = 0; c <= n; c += grid.step) {
      double latency = model.execute_time(n, c);
      if (grid.noise_stddev > 0.0) {
        latency *= std::max(1e-3, 1.0 + noise.normal(0.0, grid.noise_stddev));
      }
      samples.push_back({n, c, latency});
    }
  }
  return samples;
}

JctProfile profile_from_model(const ExecModel& model, const ProfileGrid& grid) {
  const auto samples = profile_samples(model, grid);
  return fit_jct(samples);
}

}  // namespace prefillsim
