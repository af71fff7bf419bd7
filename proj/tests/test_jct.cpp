#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>

#include "prefillsim/errors.hpp"
#include "prefillsim/jct.hpp"
#include "prefillsim/rng.hpp"
#include "prefillsim/workload.hpp"
#include "support.hpp"

using namespace prefillsim;
using prefillsim::testing::a100_qwen;

namespace {

std::vector<JctSample> linear_samples(double a, double b, double c) {
  std::vector<JctSample> out;
  for (Tokens n = 1000; n <= 20000; n += 1000) {
    for (Tokens k = 0; k <= n; k += 1000) {
      out.push_back({n, k, a * n + b * k + c});
    }
  }
  return out;
}

ExecModel qwen_prefillonly() {
  const auto s = a100_qwen();
  return ExecModel(variant::PrefillOnlyHybrid{}, s.geom, s.gpu, s.params);
}

}  // namespace

TEST(FitJct, RecoversExactLinearData) {
  const auto p = fit_jct(linear_samples(2e-5, -1.5e-5, 0.01));
  EXPECT_NEAR(p.coef_input, 2e-5, 1e-9);
  EXPECT_NEAR(p.coef_cached, -1.5e-5, 1e-9);
  EXPECT_NEAR(p.intercept, 0.01, 1e-9);
  EXPECT_NEAR(p.fit_r2, 1.0, 1e-12);
  EXPECT_NEAR(get_jct(p, 10000, 4000), 0.15, 1e-9);
}

TEST(FitJct, RandomLinearGeneratorsRoundTrip) {
  rng::Stream s(31);
  for (int i = 0; i < 20; ++i) {
    const double a = s.uniform(1e-6, 1e-3), b = -s.uniform(0.0, a), c = s.uniform(-0.1, 0.1);
    const auto p = fit_jct(linear_samples(a, b, c));
    EXPECT_NEAR(p.coef_input, a, 1e-9);
    EXPECT_NEAR(p.coef_cached, b, 1e-9);
    EXPECT_NEAR(p.intercept, c, 1e-9);
  }
}

TEST(FitJct, RejectsDegenerateDesigns) {
  const std::vector<JctSample> one{{1000, 0, 0.1}};
  EXPECT_THROW(fit_jct(one), FitError);
  // Three samples, one distinct n_input.
  const std::vector<JctSample> same_n{{1000, 0, 0.1}, {1000, 500, 0.05}, {1000, 1000, 0.02}};
  EXPECT_THROW(fit_jct(same_n), FitError);
  // n_cached a fixed multiple of n_input: collinear columns.
  const std::vector<JctSample> collinear{{1000, 500, 0.1}, {2000, 1000, 0.2}, {3000, 1500, 0.3}};
  EXPECT_THROW(fit_jct(collinear), FitError);
}

TEST(FitJct, ProfileOfDefaultModelIsFrozen) {
  // Oracle: numpy lstsq over the same 1890-sample grid of the closed-form cost.
  const auto model = qwen_prefillonly();
  const auto samples = profile_samples(model);
  EXPECT_EQ(samples.size(), 1890u);
  const auto p = fit_jct(samples);
  EXPECT_NEAR(p.coef_input, 0.0006607411250945281, 1e-9 * 0.00066);
  EXPECT_NEAR(p.coef_cached, -0.000557318144, 1e-12);
  EXPECT_NEAR(p.intercept, -3.0874628011940133, 1e-9 * 3.09);
  EXPECT_NEAR(p.fit_r2, 0.9850501758509072, 1e-9);
  EXPECT_GT(p.coef_input, 0.0);
  EXPECT_LT(p.coef_cached, 0.0);
}

TEST(FitJct, NoiseKnobIsSeededAndBounded) {
  const auto model = qwen_prefillonly();
  ProfileGrid grid;
  grid.max_input = 20000;
  grid.noise_stddev = 0.05;
  grid.noise_seed = 9;
  const auto a = profile_samples(model, grid);
  const auto b = profile_samples(model, grid);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].latency, b[i].latency);
    EXPECT_GT(a[i].latency, 0.0);
  }
  const auto p = fit_jct(a);
  EXPECT_GE(p.fit_r2, 0.0);
  EXPECT_LE(p.fit_r2, 1.0);
}

TEST(FitJct, GridClipsToMil) {
  const auto s = a100_qwen();
  const ExecModel paged(variant::PagedAttention{}, s.geom, s.gpu, s.params);
  for (const auto& smp : profile_samples(paged)) {
    EXPECT_LE(smp.n_input, paged.max_input_length());
    EXPECT_LE(smp.n_cached, smp.n_input);
  }
}

TEST(GetJct, ClampsAndValidates) {
  const JctProfile p{1e-4, -5e-5, -0.5, 0.9};
  EXPECT_EQ(get_jct(p, 0, 0), 0.0);
  EXPECT_EQ(get_jct(JctProfile{1e-4, -5e-5, 0.25, 1.0}, 0, 0), 0.25);
  EXPECT_THROW(get_jct(p, 10, 11), ConfigError);
}

TEST(GetJct, MonotoneForCalibratedProfile) {
  const auto p = profile_from_model(qwen_prefillonly());
  for (Tokens n = 1000; n <= 60000; n += 7000) {
    EXPECT_LE(get_jct(p, n, 0), get_jct(p, n + 1000, 0));
    EXPECT_GE(get_jct(p, n, 0), get_jct(p, n, n / 2));
    EXPECT_GE(get_jct(p, n, n / 2), get_jct(p, n, n));
  }
}

TEST(ProxyMiss, Arithmetic) {
  EXPECT_EQ(proxy_miss(100, 100), 0u);
  EXPECT_EQ(proxy_miss(14000, 11000), 3000u);
  EXPECT_THROW(proxy_miss(5, 6), ConfigError);
}

TEST(ProxyMiss, RankingMatchesSymmetricProfile) {
  rng::Stream s(3);
  for (int trial = 0; trial < 100; ++trial) {
    const double a = s.uniform(1e-6, 1e-3);
    const JctProfile p{a, -a, s.uniform(0.0, 1.0), 1.0};
    std::vector<std::pair<Tokens, Tokens>> reqs;
    for (int i = 0; i < 10; ++i) {
      const auto n = static_cast<Tokens>(s.uniform_int(1, 50000));
      reqs.emplace_back(n, static_cast<Tokens>(s.uniform_int(0, n)));
    }
    const auto by_proxy = std::min_element(reqs.begin(), reqs.end(), [](auto x, auto y) {
      return proxy_miss(x.first, x.second) < proxy_miss(y.first, y.second);
    });
    const auto by_jct = std::min_element(reqs.begin(), reqs.end(), [&](auto x, auto y) {
      return get_jct(p, x.first, x.second) < get_jct(p, y.first, y.second);
    });
    EXPECT_EQ(proxy_miss(by_proxy->first, by_proxy->second), proxy_miss(by_jct->first, by_jct->second));
  }
}

TEST(Pearson, KnownCases) {
  const std::vector<double> xs{1, 2, 3, 4, 5};
  std::vector<double> ys, neg;
  for (const double x : xs) {
    ys.push_back(3 * x + 1);
    neg.push_back(-x);
  }
  EXPECT_NEAR(pearson(xs, ys), 1.0, 1e-15);
  EXPECT_NEAR(pearson(xs, neg), -1.0, 1e-15);
  const std::vector<double> flat{2, 2, 2, 2, 2};
  EXPECT_THROW(pearson(xs, flat), ConfigError);
  EXPECT_THROW(pearson(std::vector<double>{1.0}, std::vector<double>{2.0}), ConfigError);
  EXPECT_THROW(pearson(xs, std::vector<double>{1, 2}), ConfigError);
}

TEST(JctProfile, SaveLoadRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "prefillsim_profile_roundtrip.txt";
  const JctProfile p{6.607411250945281e-4, -5.57318144e-4, -3.0874628011940133, 0.9850501758509072};
  p.save(path);
  const auto q = JctProfile::load(path);
  EXPECT_EQ(q.coef_input, p.coef_input);
  EXPECT_EQ(q.coef_cached, p.coef_cached);
  EXPECT_EQ(q.intercept, p.intercept);
  EXPECT_EQ(q.fit_r2, p.fit_r2);
  std::filesystem::remove(path);
  EXPECT_ANY_THROW(JctProfile::load(path));
}
