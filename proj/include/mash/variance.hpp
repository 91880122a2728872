#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "mash/dataset.hpp"
#include "mash/fitter.hpp"

namespace mash {

enum class Clustering { by_cluster, by_individual };

const char* to_string(Clustering c) noexcept;
Clustering parse_clustering(const std::string& s);

// Per-subject influence pieces: eta_s = int {X - Xhat} omega dMhat and
// psi_s = int qhat / pihat dMhat^c (zero in CC mode).
struct SubjectInfluence {
  Eigen::MatrixXd eta;     // N x p
  Eigen::MatrixXd psi;     // N x p
  Eigen::MatrixXd q_path;  // T x p, qhat(u_q)
  std::vector<double> pi_path;
};

SubjectInfluence subject_influence(const FitResult& fit);

struct SandwichParts {
  Clustering clustering = Clustering::by_cluster;
  std::size_t units = 0;    // clusters, or subjects when by_individual
  Eigen::MatrixXd eta;      // units x p
  Eigen::MatrixXd psi;      // units x p
  Eigen::MatrixXd q_path;   // T x p
  std::vector<double> pi_path;
  Eigen::MatrixXd A;        // A-hat(tau) normalized by the unit count
  Eigen::MatrixXd Omega;
  Eigen::MatrixXd Sigma;    // variance of sqrt(units) (beta-hat - beta)
  Eigen::VectorXd se;       // sqrt(Sigma_ll / units)
};

SandwichParts sandwich(const FitResult& fit, Clustering clustering = Clustering::by_cluster);

struct CoefficientRow {
  std::string name;
  double estimate = 0.0;
  double se = 0.0;
  double z = 0.0;
  double p_value = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

std::vector<CoefficientRow> coefficient_table(const FitResult& fit, const SandwichParts& parts);

struct WaldTest {
  double statistic = 0.0;
  int df = 0;
  double p_value = 1.0;
};

// Joint test of beta = 0 with the sandwich covariance.
WaldTest overall_wald(const FitResult& fit, const SandwichParts& parts);

struct CifPrediction {
  std::vector<double> times;  // 0 followed by the knots
  std::vector<double> point;
  std::vector<double> lower;
  std::vector<double> upper;
  CovariatePath x;
  int boot = 0;
  int failures = 0;
  double level = 0.0;
};

CifPrediction predict_cif(const FitResult& fit, const CovariatePath& x);

struct BootstrapOptions {
  int resamples = 200;
  double level = 0.95;
  std::uint64_t seed = 1;
  int refinement = kDefaultRefinement;
  unsigned threads = 1;
};

// Percentile band from refits on clusters resampled with replacement.
CifPrediction bootstrap_cif_band(const ClusteredDataset& ds, int cause, FitMode mode,
                                 const CovariatePath& x, const BootstrapOptions& opt);

}  // namespace mash
