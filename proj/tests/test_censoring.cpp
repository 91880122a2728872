#include <sstream>

#include "doctest.h"
#include "mash/censoring.hpp"
#include "mash/error.hpp"
#include "oracle.hpp"
#include "test_util.hpp"

using namespace mash;

TEST_CASE("product-limit with a single censoring") {
  auto ds = testutil::parse("cluster,time,status,x\nA,1,1,0\nA,2,0,1\nB,3,2,2\n");
  auto cm = fit_censoring_km(ds);
  CHECK(cm.survival(0.0) == 1.0);
  CHECK(cm.survival(1.99) == 1.0);
  CHECK(cm.survival(2.0) == 0.5);
  CHECK(cm.survival(3.0) == 0.5);
  CHECK(cm.at_risk.at(0) == 2.0);
  CHECK(cm.cumulative_hazard(2.5) == 0.5);
  CHECK(cm.risk_fraction(2.0) == 1.0);

  const auto& failed2 = ds.subject(2);  // cause 2 at Z=3
  SubjectRecord r = failed2;
  r.time = 1.0;
  CHECK(ipcw_weight(cm, r, 2.0) == 0.5);
  CHECK(ipcw_weight(cm, r, 0.5) == 1.0);
  SubjectRecord c = ds.subject(1);
  c.time = 1.0;
  CHECK(ipcw_weight(cm, c, 2.0) == 0.0);
}

TEST_CASE("no censoring gives G = 1") {
  auto ds = testutil::parse("cluster,time,status,x\nA,1,1,0\nA,2,2,1\nB,3,1,2\n");
  auto cm = fit_censoring_km(ds);
  for (double t : {0.0, 1.0, 2.5, 3.0}) CHECK(cm.survival(t) == 1.0);
}

TEST_CASE("G reaching zero at tau is rejected") {
  auto ds = testutil::parse("cluster,time,status,x\nA,1,0,0\nA,2,0,1\nB,3,0,2\nB,2.5,1,1\n");
  // the default horizon stops at the last failure, where G is still positive
  CHECK(ds.tau() == 2.5);
  CHECK(fit_censoring_km(ds).survival(2.5) > 0.0);
  try {
    fit_censoring_km(ds.with_tau(3.0));
    FAIL("expected GhatZeroBeforeTau");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::GhatZeroBeforeTau);
  }
}

TEST_CASE("censoring-complete indicator weights") {
  SubjectRecord r;
  r.ctime = 5.0;
  CHECK(cc_weight(r, 3.0) == 1);
  r.ctime = 2.0;
  CHECK(cc_weight(r, 3.0) == 0);
  r.ctime = 3.0;
  CHECK(cc_weight(r, 3.0) == 0);
  r.ctime.reset();
  CHECK_THROWS_AS(cc_weight(r, 1.0), Error);
}

TEST_CASE("product-limit matches the brute-force oracle on random small data") {
  std::mt19937_64 rng(2024);
  for (int rep = 0; rep < 200; ++rep) {
    testutil::MicroSpec spec;
    spec.n = 2 + rep % 5;
    spec.m_max = 4;
    spec.integer_times = rep % 2 == 0;
    spec.censor_prob = 0.4;
    auto ds = testutil::micro_instance(rng, spec);
    if (ds.size() > 20) continue;
    auto cm = fit_censoring_km(ds);
    for (double t = 0.0; t <= ds.tau() + 0.5; t += 0.05) {
      CHECK(cm.survival(t) == oracle::km(ds, t));
      CHECK(cm.cumulative_hazard(t) == doctest::Approx(oracle::km_hazard(ds, t)).epsilon(1e-14));
    }
  }
}

TEST_CASE("KM and Nelson-Aalen agree to first order with large risk sets") {
  std::mt19937_64 rng(99);
  std::exponential_distribution<double> ex(1.0), ec(0.5);
  std::vector<SubjectRecord> recs;
  for (int i = 0; i < 400; ++i) {
    SubjectRecord r;
    r.cluster_id = std::to_string(i / 4);
    const double t = ex(rng), c = ec(rng);
    r.time = std::min(t, c);
    r.cause = CauseCode{t <= c ? 1 : 0};
    r.x = {static_cast<double>(i % 3)};
    recs.push_back(r);
  }
  auto ds0 = ClusteredDataset::build(recs, {"x"}, {Basis::constant});
  auto cm0 = fit_censoring_km(ds0, 0.0);
  double tau = 0;
  for (std::size_t i = 0; i < cm0.km_times.size(); ++i)
    if (cm0.at_risk[i] >= 10) tau = cm0.km_times[i];
  auto ds = ds0.with_tau(tau);
  auto cm = fit_censoring_km(ds);
  for (double t : cm.km_times) {
    if (t > tau) break;
    const double h = cm.cumulative_hazard(t);
    CHECK(std::abs(cm.survival(t) - std::exp(-h)) <= h * h);
  }
}

TEST_CASE("exported curve starts at (0, 1)") {
  auto ds = testutil::parse("cluster,time,status,x\nA,1,1,0\nA,2,0,1\nB,3,2,2\n");
  std::ostringstream out;
  export_km(out, fit_censoring_km(ds));
  CHECK(out.str() == "time,G\n0,1\n2,0.5\n");
}
