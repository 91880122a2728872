#include "doctest.h"
#include "mash/error.hpp"
#include "mash/variance.hpp"
#include "oracle.hpp"
#include "test_util.hpp"

using namespace mash;

TEST_CASE("influence terms match the dense oracle") {
  std::mt19937_64 rng(314);
  int checked = 0;
  for (int rep = 0; rep < 40; ++rep) {
    testutil::MicroSpec spec;
    spec.n = 3 + rep % 5;
    spec.m_max = 1 + rep % 3;
    spec.p = 1 + rep % 2;
    spec.exp_basis = rep % 3 == 1;
    spec.record_ctime = rep % 2 == 0;
    spec.integer_times = rep % 4 == 0;
    auto ds = testutil::micro_instance(rng, spec);
    for (FitMode mode : {FitMode::ipcw, FitMode::cc}) {
      if (mode == FitMode::cc && !ds.censoring_observed()) continue;
      FitResult f;
      try {
        f = fit(ds, 1, mode, 3);
      } catch (const Error&) {
        continue;
      }
      auto inf = subject_influence(f);
      oracle::Problem pr(ds, 1, mode, 3);
      double scale = 1.0;
      for (std::size_t s = 0; s < ds.size(); ++s) scale = std::max(scale, pr.eta(s, f.beta).norm());
      Eigen::VectorXd sum = Eigen::VectorXd::Zero(ds.p());
      for (std::size_t s = 0; s < ds.size(); ++s) {
        const Eigen::VectorXd e = inf.eta.row(s).transpose();
        CHECK((e - pr.eta(s, f.beta)).norm() <= 1e-10 * scale);
        const Eigen::VectorXd ps = inf.psi.row(s).transpose();
        CHECK((ps - pr.psi(s, f.beta)).norm() <= 1e-10 * scale);
        sum += e;
      }
      CHECK(sum.norm() <= 1e-10 * scale);
      for (std::size_t q = 0; q < pr.knots.size() && mode == FitMode::ipcw; ++q) {
        const Eigen::VectorXd qh = inf.q_path.row(q).transpose();
        CHECK((qh - pr.qhat(pr.knots[q], f.beta)).norm() <= 1e-10 * scale);
      }
      ++checked;
    }
  }
  CHECK(checked > 30);
}

TEST_CASE("sandwich properties") {
  std::mt19937_64 rng(77);
  for (int rep = 0; rep < 30; ++rep) {
    testutil::MicroSpec spec;
    spec.n = 6 + rep % 5;
    spec.m_max = 3;
    spec.p = 1 + rep % 2;
    spec.exp_basis = rep % 2 == 0;
    auto ds = testutil::micro_instance(rng, spec);
    FitResult f;
    try {
      f = fit(ds, 1);
    } catch (const Error&) {
      continue;
    }
    auto sw = sandwich(f);
    CHECK((sw.Sigma - sw.Sigma.transpose()).norm() <= 1e-14 * sw.Sigma.norm());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sw.Sigma), eo(sw.Omega);
    CHECK(es.eigenvalues().minCoeff() >= -1e-10);
    CHECK(eo.eigenvalues().minCoeff() >= -1e-10);
    CHECK(sw.eta.colwise().sum().norm() <= 1e-10 * std::max(1.0, sw.eta.norm()));
    CHECK(sw.se.allFinite());

    // duplicating every cluster leaves A, Omega, Sigma unchanged and scales SE by 1/sqrt(2)
    std::vector<std::size_t> twice;
    for (std::size_t i = 0; i < ds.n_clusters(); ++i) twice.push_back(i);
    for (std::size_t i = 0; i < ds.n_clusters(); ++i) twice.push_back(i);
    auto dup = ds.select_clusters(twice);
    auto f2 = fit(dup, 1);
    auto sw2 = sandwich(f2);
    CHECK((f2.beta - f.beta).norm() <= 1e-12 * std::max(1.0, f.beta.norm()));
    CHECK((sw2.A - sw.A).norm() <= 1e-12 * sw.A.norm());
    CHECK((sw2.Omega - sw.Omega).norm() <= 1e-10 * std::max(1e-12, sw.Omega.norm()));
    CHECK((sw2.Sigma - sw.Sigma).norm() <= 1e-10 * std::max(1e-12, sw.Sigma.norm()));
    for (Eigen::Index l = 0; l < sw.se.size(); ++l) {
      CHECK(sw2.se(l) == doctest::Approx(sw.se(l) / std::sqrt(2.0)).epsilon(1e-10));
    }
  }
}

TEST_CASE("singleton clusters give identical clustered and individual variance") {
  std::mt19937_64 rng(5);
  testutil::MicroSpec spec;
  spec.n = 12;
  spec.m_max = 1;
  auto ds = testutil::micro_instance(rng, spec);
  auto f = fit(ds, 1);
  auto a = sandwich(f, Clustering::by_cluster);
  auto b = sandwich(f, Clustering::by_individual);
  CHECK((a.Sigma - b.Sigma).norm() <= 1e-14 * a.Sigma.norm());
  CHECK((a.se - b.se).norm() <= 1e-14 * a.se.norm());
}

TEST_CASE("censoring-complete sandwich reproduces the Lin-Ying clustered sandwich") {
  std::mt19937_64 rng(21);
  int checked = 0;
  for (int rep = 0; rep < 30; ++rep) {
    testutil::MicroSpec spec;
    spec.n = 4 + rep % 6;
    spec.causes = 1;
    spec.censor_prob = 0.0;
    spec.p = 1 + rep % 2;
    auto ds0 = testutil::micro_instance(rng, spec);
    std::vector<SubjectRecord> recs(ds0.subjects().begin(), ds0.subjects().end());
    for (auto& r : recs) r.ctime = 50.0;
    auto ds = ClusteredDataset::build(recs, ds0.covariate_names(), ds0.basis(), ds0.tau(), 1);
    FitResult f;
    try {
      f = fit(ds, 1, FitMode::cc);
    } catch (const Error&) {
      continue;
    }
    auto sw = sandwich(f);
    auto ly = oracle::lin_ying(ds);
    CHECK((f.beta - ly.beta).norm() <= 1e-8 * std::max(1.0, ly.beta.norm()));
    CHECK((sw.Sigma - ly.sigma).norm() <= 1e-8 * std::max(1.0, ly.sigma.norm()));
    ++checked;
  }
  CHECK(checked > 20);
}

TEST_CASE("CIF prediction") {
  std::mt19937_64 rng(9);
  testutil::MicroSpec spec;
  spec.n = 8;
  spec.exp_basis = true;
  auto ds = testutil::micro_instance(rng, spec);
  auto f = fit(ds, 1);
  CovariatePath x{{0.7}, {Basis::exp_decay}};
  auto pred = predict_cif(f, x);
  CHECK(pred.times.front() == 0.0);
  CHECK(pred.point.front() == 0.0);
  for (std::size_t k = 1; k < pred.times.size(); ++k) {
    const double t = pred.times[k];
    const double expect = 1.0 - std::exp(-f.baseline[k - 1] - 0.7 * f.beta(0) * (1.0 - std::exp(-t)));
    CHECK(pred.point[k] == doctest::Approx(expect).epsilon(1e-12));
  }
  CovariatePath zero{{0.0}, {Basis::exp_decay}};
  auto base = predict_cif(f, zero);
  for (std::size_t k = 1; k < base.times.size(); ++k) {
    CHECK(base.point[k] == doctest::Approx(1.0 - std::exp(-f.baseline[k - 1])).epsilon(1e-12));
  }
}

TEST_CASE("bootstrap band is deterministic and contains the estimate") {
  std::mt19937_64 rng(12);
  testutil::MicroSpec spec;
  spec.n = 25;
  spec.m_max = 4;
  spec.censor_prob = 0.2;
  auto ds = testutil::micro_instance(rng, spec);
  CovariatePath x{{0.5}, {Basis::constant}};
  BootstrapOptions opt;
  opt.resamples = 200;
  opt.seed = 123;
  auto a = bootstrap_cif_band(ds, 1, FitMode::ipcw, x, opt);
  opt.threads = 4;
  auto b = bootstrap_cif_band(ds, 1, FitMode::ipcw, x, opt);
  CHECK(a.lower == b.lower);
  CHECK(a.upper == b.upper);
  CHECK(a.lower.front() == 0.0);
  CHECK(a.upper.front() == 0.0);
  for (std::size_t k = 0; k < a.times.size(); ++k) {
    CHECK(a.lower[k] <= a.point[k]);
    CHECK(a.upper[k] >= a.point[k]);
  }
  opt.resamples = 50;
  CHECK_THROWS_AS(bootstrap_cif_band(ds, 1, FitMode::ipcw, x, opt), Error);
}

TEST_CASE("coefficient table and overall Wald test") {
  std::mt19937_64 rng(4);
  testutil::MicroSpec spec;
  spec.n = 20;
  spec.p = 2;
  auto ds = testutil::micro_instance(rng, spec);
  auto f = fit(ds, 1);
  auto sw = sandwich(f);
  auto rows = coefficient_table(f, sw);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].name == "x1");
  CHECK(rows[0].z == doctest::Approx(rows[0].estimate / rows[0].se));
  CHECK(rows[0].lower < rows[0].estimate);
  auto w = overall_wald(f, sw);
  CHECK(w.df == 2);
  CHECK(w.p_value >= 0.0);
  CHECK(w.p_value <= 1.0);
}
