#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mash/fitter.hpp"

namespace mash {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// f(X) in the cumulative residual class: the covariate vector itself, or the constant 1.
enum class InfluenceF { covariate, one };

// Indicator sets I{X <= x} act on the base covariate values; +infinity leaves a coordinate
// unrestricted. t may be any time in [0, tau].
//
// Per-cluster influence terms Q-hat_i(t, x), n x d with d = p (covariate) or 1 (one).
// Dense evaluation over every interval and subject; the fast paths below are checked against it.
Eigen::MatrixXd cluster_influence(const FitResult& fit, double t, const std::vector<double>& x,
                                  InfluenceF f);
// Observed W(t, x).
Eigen::VectorXd residual_process(const FitResult& fit, double t, const std::vector<double>& x,
                                 InfluenceF f);

// Score-process influence on the knots: n x (T*p), column q*p + l holds Q-hat_il(u_q, inf)
// with f(X) = X, i.e. Phi_i(u_q) - A(u_q) A(tau)^{-1} Phi_i(tau).
struct AdditivityParts {
  RowMatrix q;              // n x (T*p)
  Eigen::MatrixXd phi_tau;  // n x p, Phi_i(tau)
  Eigen::MatrixXd sigma;    // n^{-1} sum Phi_i(tau) Phi_i(tau)'
};
AdditivityParts additivity_influence(const FitResult& fit);

// Functional-form influence for covariate l at the given sorted thresholds (t = tau, f = 1).
struct FunctionalParts {
  RowMatrix q;                  // n x K
  std::vector<double> observed; // W_l(tau, x_k)
};
FunctionalParts functional_influence(const FitResult& fit, std::size_t l,
                                     std::span<const double> thresholds);

// Sorted distinct values of covariate l, thinned to `cap` evenly spaced order statistics.
std::vector<double> functional_thresholds(const FitResult& fit, std::size_t l, std::size_t cap);

// B x n standard normal multipliers; draw b uses its own stream so any subset is reproducible.
RowMatrix multiplier_draws(std::size_t n, int B, std::uint64_t seed, std::uint64_t tag);
// W-hat draws: xi (B x n) times Q (n x cols).
RowMatrix perturb(const RowMatrix& q, const RowMatrix& xi);

// Share of draws strictly above the observed value; (1 + count) / (B + 1) when add_one.
double monte_carlo_pvalue(double observed, std::span<const double> draws, bool add_one);

enum class TestKind { score_additivity, overall_additivity, functional_form };
const char* to_string(TestKind kind) noexcept;

struct TestProcess {
  TestKind kind = TestKind::score_additivity;
  std::size_t covariate = 0;  // p for the overall process
  std::string name;
  std::vector<double> axis;      // 0 then the knots, or a point below the smallest threshold then the thresholds
  std::vector<double> observed;  // n^{-1/2} U_l(t) or n^{-1/2} W_l(tau, x)
  RowMatrix perturbed;           // kept draws x axis, same scale
  double sigma_ll = 0.0;         // {Sigma-hat^{-1}}_ll, score kind only
  double statistic = 0.0;
  double p_value = 1.0;
};

struct GofOptions {
  int draws = 1000;
  std::uint64_t seed = 1;
  bool pvalue_add_one = false;
  int keep_draws = 0;  // perturbed draws stored per process for export
  unsigned threads = 1;
  std::size_t max_thresholds = 512;
};

struct GofRow {
  std::string name;
  double statistic = 0.0;
  double p_value = 1.0;
};

struct AdditivityResult {
  std::vector<GofRow> rows;  // one per covariate
  GofRow overall;
  std::vector<TestProcess> processes;
  std::vector<std::string> warnings;
};

AdditivityResult additivity_test(const FitResult& fit, const GofOptions& opt);
TestProcess functional_form_test(const FitResult& fit, std::size_t l, const GofOptions& opt);

struct GofReport {
  bool additivity = false;
  std::vector<GofRow> rows;
  GofRow overall;
  std::vector<GofRow> functional_form;
  int draws = 0;
  std::uint64_t seed = 0;
  bool pvalue_add_one = false;
  std::vector<TestProcess> processes;
  std::vector<std::string> warnings;
};

GofReport goodness_of_fit(const FitResult& fit, bool additivity,
                          const std::vector<std::size_t>& functional_covariates,
                          const GofOptions& opt);

// CSV trace: axis, observed, draw1..drawm.
void export_test_process(const TestProcess& tp, int n_draws, std::ostream& out);

}  // namespace mash
