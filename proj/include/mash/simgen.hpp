#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mash/dataset.hpp"
#include "mash/rng.hpp"

namespace mash {

enum class SimModel { m1_additive, m2_proportional };
enum class CovariateSpec { uniform01, normal_bernoulli };

const char* to_string(SimModel m) noexcept;
const char* to_string(CovariateSpec c) noexcept;
SimModel parse_sim_model(const std::string& s);
CovariateSpec parse_covariate_spec(const std::string& s);

struct SimConfig {
  std::size_t n_clusters = 100;
  std::size_t cluster_size = 10;
  double rho = 0.5;
  double theta = 0.7;
  std::vector<double> beta1{1.0};
  std::vector<double> beta2{0.2};
  double gamma = 0.35;  // exponential censoring rate; 0 disables random censoring
  double horizon = std::numeric_limits<double>::infinity();  // administrative censoring
  SimModel model = SimModel::m1_additive;
  CovariateSpec covariates = CovariateSpec::uniform01;
  std::uint64_t seed = 1;
  std::uint64_t replicate = 0;
  bool record_ctime = true;  // keep C for censoring-complete fits
  bool shared_covariates = false;  // one covariate draw per cluster, used by every member

  std::size_t p() const noexcept { return covariates == CovariateSpec::uniform01 ? 1 : 2; }
  void validate() const;

  // Simulation study 1: X ~ U(0,1) shared within the cluster, rho = 0.5, beta1 = 1, beta2 = 0.2.
  static SimConfig study1(std::size_t n, std::size_t m, double theta, double gamma);
  // Simulation study 2: X1 ~ N(0,1), X2 ~ Bernoulli(0.5), rho = 0.66, m = 10.
  static SimConfig study2(SimModel model, std::size_t n, double theta, double gamma);
};

struct SimDataset {
  ClusteredDataset data;
  std::vector<int> true_cause;
  std::vector<double> true_time;
  std::vector<double> ctime;
  std::vector<double> frailty;    // per subject (its cluster's draw)
  std::size_t redraws = 0;        // covariate vectors redrawn outside the admissible region
  std::size_t fallbacks = 0;      // cause-2 times drawn from the fallback distribution

  double censoring_fraction() const;
  // Same data without the potential censoring times.
  ClusteredDataset right_censored() const;
};

// nu = E - 1/theta, E ~ Exp(theta), redrawn until 0 < rho + nu < 1.
double draw_frailty(double theta, double rho, Rng& rng);

// F_k(t; X, nu) for the linear predictor xb = X'beta_k; t may be +infinity.
double cif(SimModel model, int cause, double t, double xb, double nu, double rho);
// P(cause 1 | X, nu) = F_1(inf); throws InvalidProbability outside [0, 1].
double cause1_probability(SimModel model, double xb1, double nu, double rho);

// Inverse of F_k(t) / F_k(inf) at u by bisection on [0, 50], absolute tolerance 1e-10 in t.
// Throws RootNotBracketed when F-tilde(50) < u.
double conditional_inverse(SimModel model, int cause, double u, double xb, double nu, double rho);

SimDataset generate(const SimConfig& config);

// Acceptance probability of the frailty rejection step and E[rho + nu | accepted], in closed form.
double frailty_acceptance(double theta, double rho);
double effective_rho(double theta, double rho);

// Smallest X'beta_1 for which the additive cause-1 CIF is a proper distribution function
// for every admissible frailty (-infinity for M2). Covariates are redrawn below it, so the
// covariate law does not depend on the frailty.
double admissible_floor(const SimConfig& config);

// Tenth-largest observed time (largest when fewer than ten).
double simulation_tau(std::span<const SubjectRecord> records);

// Writes the dataset with true_time, true_cause and frailty columns.
void save_sim_dataset(std::ostream& out, const SimDataset& sim,
                      std::span<const std::string> comment_lines = {});

}  // namespace mash
