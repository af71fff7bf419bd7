#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "prefillsim/errors.hpp"
#include "prefillsim/sim.hpp"
#include "support.hpp"

using namespace prefillsim;
using prefillsim::testing::a100_qwen;
using prefillsim::testing::default_config;
using prefillsim::testing::h100_llama70;
using prefillsim::testing::load_setup;
using prefillsim::testing::worked_example_config;
using prefillsim::testing::worked_example_trace;

namespace {

std::string start_order(const SimReport& r) {
  std::vector<RequestRecord> recs = r.requests;
  std::stable_sort(recs.begin(), recs.end(), [](const auto& a, const auto& b) { return a.start < b.start; });
  std::string s;
  for (const auto& rec : recs) s += static_cast<char>('A' + rec.id);
  return s;
}

Trace small_post_rec(std::uint64_t seed, std::size_t users) {
  auto t = gen_post_recommendation(seed);
  std::erase_if(t.requests, [&](const Request& r) { return r.user_id >= users; });
  return t;
}

}  // namespace

TEST(Router, RoundRobinByFirstSighting) {
  Router r(2);
  EXPECT_EQ(r.route_user(11), 0u);
  EXPECT_EQ(r.route_user(12), 1u);
  EXPECT_EQ(r.route_user(13), 0u);
  EXPECT_EQ(r.route_user(11), 0u);
  Router one(1);
  for (std::uint64_t u = 0; u < 5; ++u) EXPECT_EQ(one.route_user(u), 0u);
  EXPECT_THROW(Router(0), ConfigError);
}

TEST(Sim, EmptyTrace) {
  const auto report = run(Trace{}, default_config(a100_qwen(), variant::PrefillOnlyHybrid{}, policy::Fifo{}));
  EXPECT_TRUE(report.requests.empty());
  EXPECT_EQ(report.throughput, 0.0);
}

TEST(Sim, WorkedExampleHits) {
  const auto trace = worked_example_trace();
  const auto cal = run(trace, worked_example_config(policy::SrjfCalibrated{}));
  const auto fifo = run(trace, worked_example_config(policy::Fifo{}));
  const auto srjf = run(trace, worked_example_config(policy::SrjfStatic{}));
  EXPECT_EQ(cal.cache_hit_requests, 2u);
  EXPECT_EQ(fifo.cache_hit_requests, 1u);
  EXPECT_EQ(srjf.cache_hit_requests, 1u);
  EXPECT_EQ(start_order(cal), "ADCB");
  EXPECT_EQ(start_order(fifo), "ABCD");
  EXPECT_EQ(start_order(srjf), "ACBD");
}

TEST(Sim, ConservationCausalityAndHitAccounting) {
  const auto s = a100_qwen();
  const auto trace = poisson_arrivals(small_post_rec(5, 4), 2.0, 5);
  for (const auto& p : {Policy{policy::Fifo{}}, Policy{policy::SrjfCalibrated{}}}) {
    const auto cfg = default_config(s, variant::PrefillOnlyHybrid{}, p, 2);
    const auto report = run(trace, cfg);
    ASSERT_EQ(report.requests.size(), trace.requests.size());
    const ExecModel exec(cfg.variant, cfg.geometry, cfg.gpu, cfg.cost_params);
    Tokens hit_tokens = 0;
    std::size_t hit_requests = 0;
    for (std::size_t i = 0; i < report.requests.size(); ++i) {
      const auto& rec = report.requests[i];
      EXPECT_EQ(rec.id, i);
      EXPECT_GE(rec.start, rec.arrival);
      const double service = exec.execute_time(rec.n_input, rec.n_cached);
      EXPECT_NEAR(rec.completion - rec.start, service, 1e-9 * rec.completion);
      EXPECT_LE(rec.n_cached, rec.n_input);
      hit_tokens += rec.n_cached;
      hit_requests += rec.n_cached > 0;
    }
    EXPECT_EQ(report.cache_hit_tokens, hit_tokens);
    EXPECT_EQ(report.cache_hit_requests, hit_requests);
    EXPECT_GT(hit_requests, 0u);
    for (const double u : report.utilization) {
      EXPECT_GT(u, 0.0);
      EXPECT_LE(u, 1.0 + 1e-12);
    }
  }
}

TEST(Sim, WorkConserving) {
  const auto s = a100_qwen();
  const auto trace = poisson_arrivals(small_post_rec(6, 3), 0.5, 6);
  const auto report = run(trace, default_config(s, variant::PrefillOnlyHybrid{}, policy::SrjfCalibrated{}));
  auto recs = report.requests;
  std::sort(recs.begin(), recs.end(), [](const auto& a, const auto& b) { return a.start < b.start; });
  for (std::size_t k = 0; k + 1 < recs.size(); ++k) {
    double earliest = recs[k + 1].arrival;
    for (std::size_t j = k + 1; j < recs.size(); ++j) earliest = std::min(earliest, recs[j].arrival);
    EXPECT_EQ(recs[k + 1].start, std::max(recs[k].completion, earliest));
  }
}

TEST(Sim, OneRequestInFlightPerInstance) {
  const auto s = prefillsim::testing::l4_llama();
  const auto trace = poisson_arrivals(small_post_rec(7, 4), 3.0, 7);
  const auto report = run(trace, default_config(s, variant::PagedAttention{}, policy::Fifo{}, 2));
  for (std::size_t inst = 0; inst < 2; ++inst) {
    std::vector<RequestRecord> mine;
    for (const auto& r : report.requests)
      if (r.instance == inst) mine.push_back(r);
    std::sort(mine.begin(), mine.end(), [](const auto& a, const auto& b) { return a.start < b.start; });
    for (std::size_t k = 0; k + 1 < mine.size(); ++k) EXPECT_LE(mine[k].completion, mine[k + 1].start);
  }
}

TEST(Sim, Deterministic) {
  const auto s = a100_qwen();
  const auto trace = poisson_arrivals(small_post_rec(8, 4), 2.0, 8);
  const auto cfg = default_config(s, variant::PrefillOnlyHybrid{}, policy::SrjfCalibrated{}, 2);
  const auto a = run(trace, cfg);
  const auto b = run(trace, cfg);
  EXPECT_EQ(report_csv_row(cfg, 2.0, a), report_csv_row(cfg, 2.0, b));
  for (std::size_t i = 0; i < a.requests.size(); ++i) {
    EXPECT_EQ(a.requests[i].completion, b.requests[i].completion);
    EXPECT_EQ(a.requests[i].instance, b.requests[i].instance);
  }
}

TEST(Sim, CapacityErrorListsOffenders) {
  const auto s = a100_qwen();
  const auto trace = gen_credit_verification(1);
  try {
    run(trace, default_config(s, variant::PagedAttention{}, policy::Fifo{}));
    FAIL() << "expected CapacityError";
  } catch (const CapacityError& e) {
    EXPECT_EQ(e.offending_ids().size(), trace.requests.size());
  }
}

TEST(Saturation, SingleRequestIsReciprocalDuration) {
  const auto s = a100_qwen();
  Trace t;
  t.requests.push_back(make_request(0, 0, 0, 12345, 1));
  const double d = execute_time(variant::PrefillOnlyHybrid{}, s.geom, s.gpu, s.params, 12345, 0);
  EXPECT_NEAR(saturation_throughput(variant::PrefillOnlyHybrid{}, s.geom, s.gpu, s.params, t), 1.0 / d, 1e-12 / d);
}

TEST(Saturation, DoublingLinearCostHalvesThroughput) {
  auto s = prefillsim::testing::l4_llama();
  s.params.c_attn = 0.0;
  s.params.c_fixed = 0.0;
  const double base = saturation_throughput(variant::PagedAttention{}, s.geom, s.gpu, s.params, small_post_rec(2, 2));
  auto doubled = s.params;
  doubled.c_linear *= 2;
  const double slow = saturation_throughput(variant::PagedAttention{}, s.geom, s.gpu, doubled, small_post_rec(2, 2));
  EXPECT_NEAR(slow / base, 0.5, 0.025);
}

TEST(Saturation, CreditOrderingAcrossParallelism) {
  const auto pcie = h100_llama70();
  const auto nvl = load_setup("llama-3.3-70b-fp8", "h100-nvlink");
  const auto trace = gen_credit_verification(42);
  const double po = saturation_throughput(variant::PrefillOnlyHybrid{}, pcie.geom, pcie.gpu, pcie.params, trace, 2);
  const double tp_nvl = saturation_throughput(variant::TensorParallel{2}, nvl.geom, nvl.gpu, nvl.params, trace, 1);
  const double tp_pcie = saturation_throughput(variant::TensorParallel{2}, pcie.geom, pcie.gpu, pcie.params, trace, 1);
  EXPECT_GT(po, tp_nvl);
  EXPECT_GT(tp_nvl, tp_pcie);
}

TEST(Sweep, UnitMultiplierAllAtOnceMatchesSaturation) {
  const auto s = a100_qwen();
  const auto trace = small_post_rec(3, 3);
  const auto cfg = default_config(s, variant::PrefillOnlyHybrid{}, native_policy(variant::PrefillOnlyHybrid{}));
  const double x = reference_qps(trace, cfg);
  EXPECT_NEAR(run(all_at_once(trace), cfg).throughput / x, 1.0, 0.02);
}

TEST(Sweep, DefaultMultipliersGiveSixRowsAndFifoLatencyRises) {
  const auto s = a100_qwen();
  const auto trace = gen_credit_verification(4);
  const auto cfg = default_config(s, variant::PrefillOnlyHybrid{}, policy::Fifo{});
  const auto points = sweep_qps(trace, cfg, kDefaultMultipliers);
  ASSERT_EQ(points.size(), 6u);
  for (std::size_t i = 1; i < points.size(); ++i) {
    EXPECT_GT(points[i].qps, points[i - 1].qps);
    EXPECT_GE(points[i].report.mean_latency, points[i - 1].report.mean_latency);
  }
  EXPECT_THROW(sweep_qps(trace, cfg, {1.0, 0.0}), ConfigError);
}

TEST(Percentile, NearestRank) {
  std::vector<double> v(100);
  std::iota(v.begin(), v.end(), 1.0);
  EXPECT_EQ(percentile_nearest_rank(v, 0.99), 99.0);
  EXPECT_EQ(percentile_nearest_rank(v, 1.0), 100.0);
  EXPECT_EQ(percentile_nearest_rank({5.0}, 0.99), 5.0);
  EXPECT_THROW(percentile_nearest_rank(v, 0.0), ConfigError);
}

TEST(Report, CsvHeaderIsStable) {
  EXPECT_EQ(report_csv_header(),
            "variant,policy,lambda,qps,mean_latency_s,p99_latency_s,throughput_rps,cache_hit_requests,"
            "cache_hit_tokens,utilization");
}
