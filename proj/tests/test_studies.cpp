#include <cmath>
#include <random>

#include "doctest.h"
#include "mash/error.hpp"
#include "mash/studies.hpp"

using namespace mash;

TEST_CASE("KS statistic and p-value") {
  // evenly spaced midpoints give the smallest possible statistic
  std::vector<double> v;
  for (int k = 0; k < 100; ++k) v.push_back((k + 0.5) / 100.0);
  KsTest t = ks_uniform(v);
  CHECK(t.statistic == doctest::Approx(0.005));
  CHECK(t.p_value == doctest::Approx(1.0));
  // known asymptotic value: P(sqrt(n) D > 1.36) is about 0.05
  const double n = 400.0;
  const double d = 1.36 / (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n));
  std::vector<double> w;
  for (int k = 0; k < 400; ++k) w.push_back(std::min(1.0, (k + 1) / n + d - 1e-12 < 1.0 ? (k + 1) / n - d : 0.0));
  std::vector<double> shifted;
  for (int k = 0; k < 400; ++k) shifted.push_back(std::max(0.0, (k + 1) / n - d));
  t = ks_uniform(shifted);
  CHECK(t.statistic == doctest::Approx(d).epsilon(1e-9));
  CHECK(t.p_value == doctest::Approx(0.0494).epsilon(0.01));
  CHECK_THROWS_AS(ks_uniform(std::vector<double>{}), Error);
}

TEST_CASE("KS test holds its size on uniform samples") {
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  int rejected = 0;
  const int reps = 2000;
  for (int r = 0; r < reps; ++r) {
    std::vector<double> v(50);
    for (auto& x : v) x = unif(gen);
    rejected += ks_uniform(v).p_value < 0.05 ? 1 : 0;
  }
  const double rate = static_cast<double>(rejected) / reps;
  CHECK(std::abs(rate - 0.05) <= 4.0 * std::sqrt(0.05 * 0.95 / reps));
  std::vector<double> skewed(200);
  for (auto& x : skewed) x = unif(gen) * unif(gen);
  CHECK(ks_uniform(skewed).p_value < 1e-4);
}

TEST_CASE("replication quality gate") {
  CHECK_NOTHROW(check_replication_quality(5, 100));
  try {
    check_replication_quality(6, 100);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ReplicationQuality);
  }
}

TEST_CASE("coverage study is invariant to the worker count") {
  const SimConfig c = SimConfig::study1(30, 4, 0.7, 0.35);
  const CoverageSummary a = run_coverage_study(c, 6, 1), b = run_coverage_study(c, 6, 3);
  REQUIRE(a.arms.size() == 4);
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(a.arms[k].mean_estimate == b.arms[k].mean_estimate);
    CHECK(a.arms[k].mcse == b.arms[k].mcse);
    CHECK(a.arms[k].aese == b.arms[k].aese);
    CHECK(a.arms[k].coverage == b.arms[k].coverage);
    CHECK(a.arms[k].used + a.failed == 6);
  }
  CHECK(std::string(to_string(a.arms[0].arm)) == "CRC");
  CHECK(std::string(to_string(a.arms[3].arm)) == "UCCC");
  // clustered and unclustered arms share the estimate
  CHECK(a.arms[0].mean_estimate == a.arms[2].mean_estimate);
  CHECK(a.arms[1].mean_estimate == a.arms[3].mean_estimate);
  const CoverageSummary one = run_coverage_study(c, 1, 1);
  CHECK(std::isnan(one.arms[0].mcse));
  CHECK(!one.warnings.empty());
}

TEST_CASE("rejection study is invariant to the worker count") {
  const SimConfig c = SimConfig::study2(SimModel::m1_additive, 25, 0.7, 0.35);
  GofOptions g;
  g.draws = 200;
  const RejectionSummary a = run_rejection_study(c, 4, g, 0.05, 1), b = run_rejection_study(c, 4, g, 0.05, 2);
  REQUIRE(a.p_values.size() == 4);
  for (std::size_t k = 0; k < 4; ++k) {
    if (std::isnan(a.p_values[k])) CHECK(std::isnan(b.p_values[k]));
    else CHECK(a.p_values[k] == b.p_values[k]);
  }
  CHECK(a.rejections == b.rejections);
}

TEST_CASE("replicate loop propagates unexpected exceptions") {
  CHECK_THROWS_AS(for_each_replicate(10, 2, [](int r) {
    if (r == 3) throw std::runtime_error("boom");
  }), std::runtime_error);
}
