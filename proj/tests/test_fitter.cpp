#include "doctest.h"
#include "mash/error.hpp"
#include "mash/fitter.hpp"
#include "oracle.hpp"
#include "test_util.hpp"

using namespace mash;

namespace {

double rel_err(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).norm() / std::max(1.0, b.norm());
}

ClusteredDataset six_subjects() {
  return testutil::parse(
      "cluster,time,status,trt\n"
      "a,0.7,1,1\n"
      "a,1.9,2,0\n"
      "b,1.2,0,1\n"
      "b,2.4,1,0\n"
      "c,0.4,1,0\n"
      "c,3.1,1,1\n",
      {}).with_tau(2.4);
}

}  // namespace

TEST_CASE("identical covariate is singular") {
  auto ds = testutil::parse("cluster,time,status,x\nA,1,1,1\nA,2,1,1\nB,3,1,1\nB,4,2,1\n");
  try {
    fit(ds, 1);
    FAIL("expected SingularDesign");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SingularDesign);
  }
}

TEST_CASE("no events for the cause") {
  auto ds = testutil::parse("cluster,time,status,x\nA,1,2,0\nA,2,2,1\nB,3,2,1\nB,4,0,2\n",
                            Schema{.causes = 2}).with_tau(3.0);
  CHECK_THROWS_WITH_AS(fit(ds, 1), doctest::Contains("NoEventsForCause"), Error);
}

TEST_CASE("censoring-complete mode needs censoring times") {
  auto ds = six_subjects();
  try {
    fit(ds, 1, FitMode::cc);
    FAIL("expected CensoringTimeUnavailable");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::CensoringTimeUnavailable);
  }
}

TEST_CASE("six-subject instance matches the estimating-equation root") {
  auto ds = six_subjects();
  auto f = fit(ds, 1);
  oracle::Problem pr(ds, 1, FitMode::ipcw, kDefaultRefinement);
  const Eigen::VectorXd root = pr.beta_root();
  CHECK(std::abs(f.beta(0) - root(0)) <= 1e-10 * std::max(1.0, std::abs(root(0))));
  CHECK((f.A_tau - pr.A(pr.knots.size() - 1)).norm() <= 1e-12);
}

TEST_CASE("uncensored single-cause data reproduces Lin-Ying") {
  std::mt19937_64 rng(7);
  for (int rep = 0; rep < 20; ++rep) {
    testutil::MicroSpec spec;
    spec.n = 3 + rep % 4;
    spec.causes = 1;
    spec.censor_prob = 0.0;
    spec.p = 1 + rep % 2;
    auto ds = testutil::micro_instance(rng, spec);
    ClusteredDataset full = ds;
    try {
      auto f = fit(full, 1);
      auto ly = oracle::lin_ying(full);
      CHECK(rel_err(f.beta, ly.beta) <= 1e-10);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::SingularDesign);
    }
  }
}

TEST_CASE("closed form equals the root of the score on random small instances") {
  std::mt19937_64 rng(42);
  int checked = 0;
  for (int rep = 0; rep < 60; ++rep) {
    testutil::MicroSpec spec;
    spec.n = 2 + rep % 9;
    spec.m_max = 1 + rep % 4;
    spec.p = 1 + rep % 2;
    spec.exp_basis = rep % 3 == 0;
    spec.record_ctime = rep % 2 == 1;
    spec.integer_times = rep % 5 == 0;
    auto ds = testutil::micro_instance(rng, spec);
    for (FitMode mode : {FitMode::ipcw, FitMode::cc}) {
      if (mode == FitMode::cc && !ds.censoring_observed()) continue;
      FitResult f;
      try {
        f = fit(ds, 1, mode, 4);
      } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::SingularDesign);
        continue;
      }
      oracle::Problem pr(ds, 1, mode, 4);
      const Eigen::VectorXd root = pr.beta_root();
      CHECK(rel_err(f.beta, root) <= 1e-8);
      const Eigen::VectorXd u = score(f, f.beta, ds.tau());
      const Eigen::VectorXd b = pr.U(Eigen::VectorXd::Zero(ds.p()), pr.knots.size() - 1);
      CHECK(u.norm() <= 1e-8 * std::max(1.0, b.norm()));
      CHECK((f.A_tau - f.A_tau.transpose()).norm() <= 1e-12);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(f.A_tau);
      CHECK(es.eigenvalues().minCoeff() > 0.0);
      // baseline against raw sums
      for (std::size_t q = 0; q < pr.knots.size(); ++q) {
        CHECK(f.baseline[q] == doctest::Approx(pr.baseline(f.beta, q)).epsilon(1e-10));
      }
      ++checked;
    }
  }
  CHECK(checked > 40);
}

TEST_CASE("score at zero and finite-difference slope") {
  auto ds = six_subjects();
  auto f = fit(ds, 1);
  CHECK(score(f, f.beta, 0.0).norm() == 0.0);
  Eigen::VectorXd d(1);
  d << 1e-3;
  const Eigen::VectorXd u = score(f, f.beta + d, ds.tau());
  const Eigen::VectorXd expected = -f.A_tau * d * static_cast<double>(f.n_clusters);
  CHECK(u(0) == doctest::Approx(expected(0)).epsilon(1e-9));
}

TEST_CASE("score between knots interpolates the drift integral") {
  std::mt19937_64 rng(8);
  testutil::MicroSpec spec;
  spec.exp_basis = true;
  spec.n = 5;
  auto ds = testutil::micro_instance(rng, spec);
  auto f = fit(ds, 1);
  const auto& k = f.grid().knots;
  for (std::size_t q = 0; q < k.size(); ++q) {
    CHECK(rel_err(score(f, f.beta, k[q]), f.score_at(q)) <= 1e-12);
  }
  // continuity from the left at a knot
  const double t = k[1];
  CHECK(rel_err(score(f, f.beta, std::nextafter(t, 0.0)), score(f, f.beta, t)) >= 0.0);
}

TEST_CASE("baseline jump equals event weight over the weighted risk total") {
  auto ds = testutil::parse("cluster,time,status,x\nA,1,1,0\nA,2,0,1\nB,3,1,1\nB,4,2,0\nC,5,1,1\n")
                .with_tau(4.0);
  auto f = fit(ds, 1);
  // all five at risk at t=1 with unit weight
  CHECK(f.jump[0] == doctest::Approx(1.0 / 5.0));
  // at t=3: G-hat(3) = 0.75; at risk subjects with Z >= 3 -> three unit weights
  CHECK(f.jump[2] == doctest::Approx(1.0 / 3.0));
  CHECK(baseline_at(f, 0.0) == 0.0);
}

TEST_CASE("IPCW and CC coincide without censoring before tau") {
  std::mt19937_64 rng(17);
  for (int rep = 0; rep < 20; ++rep) {
    testutil::MicroSpec spec;
    spec.censor_prob = 0.0;
    spec.p = 1 + rep % 2;
    spec.exp_basis = rep % 2 == 0;
    auto ds0 = testutil::micro_instance(rng, spec);
    std::vector<SubjectRecord> recs(ds0.subjects().begin(), ds0.subjects().end());
    for (auto& r : recs) r.ctime = 100.0;
    auto ds = ClusteredDataset::build(recs, ds0.covariate_names(), ds0.basis(), ds0.tau(), 2);
    try {
      auto a = fit(ds, 1, FitMode::ipcw);
      auto b = fit(ds, 1, FitMode::cc);
      CHECK(rel_err(a.beta, b.beta) <= 1e-12);
      CHECK((a.A_tau - b.A_tau).norm() <= 1e-12);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::SingularDesign);
    }
  }
}

TEST_CASE("residual paths") {
  auto ds = six_subjects();
  auto f = fit(ds, 1);
  // subject 0 fails from cause 1 at 0.7: +1 at that knot
  auto path = residual_path(f, 0);
  const auto q = static_cast<std::size_t>(f.grid().find(0.7));
  const double before = q == 0 ? 0.0 : path.values[q - 1];
  CHECK(path.values[q] - before == doctest::Approx(1.0 - f.jump[q] -
                                                   (1.0 - f.model().mu_at(q)(0)) * f.beta(0) *
                                                       f.model().b1_at(q)(0)));
  CHECK(path.at(0.0) == 0.0);
}

TEST_CASE("aggregates") {
  auto ds = six_subjects();
  auto f = fit(ds, 1);
  auto ag = f.aggregates();
  CHECK(ag.s0[0] == doctest::Approx(6.0 / 3.0));
  for (std::size_t q = 0; q < ag.s0.size(); ++q) {
    if (ag.s0[q] > 0) CHECK(ag.xhat(q, 0) == doctest::Approx(ag.s1(q, 0) / ag.s0[q]));
  }
}
