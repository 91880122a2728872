#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>
#include <vector>

#include "mash/censoring.hpp"
#include "mash/dataset.hpp"
#include "mash/detail/risk_model.hpp"

namespace mash {

const char* to_string(FitMode mode) noexcept;
FitMode parse_fit_mode(const std::string& s);

// Weighted risk-set summaries at each knot, on the covariate scale X(t).
struct RiskAggregates {
  std::vector<double> s0;  // n^{-1} sum of weights
  Eigen::MatrixXd s1;      // T x p
  Eigen::MatrixXd xhat;    // T x p, S1 / S0 (zero where S0 = 0)
};

struct StepPath {
  std::vector<double> times;
  std::vector<double> values;

  double at(double t) const;
};

class FitResult {
 public:
  Eigen::VectorXd beta;
  Eigen::MatrixXd A_tau;  // n^{-1} scaled
  int cause = 1;
  FitMode mode = FitMode::ipcw;
  std::size_t n_clusters = 0;
  std::size_t n_subjects = 0;
  std::size_t n_events = 0;
  std::vector<std::string> covariate_names;
  std::vector<std::string> warnings;

  // Baseline on the knots: jump part, drift part, cumulative value.
  std::vector<double> jump;
  std::vector<double> drift;
  std::vector<double> baseline;

  const TimeGrid& grid() const { return model_->grid; }
  const detail::RiskModel& model() const { return *model_; }
  const CensoringModel* censoring() const { return censoring_.get(); }

  // A-hat(t) at knot q, n^{-1} scaled.
  Eigen::MatrixXd A_at(std::size_t q) const;
  // U(beta-hat, u_q).
  Eigen::VectorXd score_at(std::size_t q) const;
  RiskAggregates aggregates() const;

 private:
  friend FitResult fit_with(const ClusteredDataset&, std::shared_ptr<const CensoringModel>, int,
                            FitMode, const TimeGrid&);
  friend Eigen::VectorXd score(const FitResult&, const Eigen::VectorXd&, double);
  std::shared_ptr<const detail::RiskModel> model_;
  std::shared_ptr<const CensoringModel> censoring_;
  std::vector<double> na_path_;  // T*p*p, un-normalized A at each knot
  std::vector<double> b_path_;   // T*p, weighted dN integral up to each knot
};

// Fits the censoring model itself in IPCW mode.
FitResult fit(const ClusteredDataset& ds, int cause, FitMode mode, const TimeGrid& grid);
FitResult fit(const ClusteredDataset& ds, int cause, FitMode mode = FitMode::ipcw,
              int refinement = kDefaultRefinement);
FitResult fit_with(const ClusteredDataset& ds, std::shared_ptr<const CensoringModel> cm, int cause,
                   FitMode mode, const TimeGrid& grid);

// U(beta, t) for an arbitrary coefficient vector, reusing the risk sets of `fit`.
Eigen::VectorXd score(const FitResult& fit, const Eigen::VectorXd& beta, double t);
Eigen::VectorXd score(const ClusteredDataset& ds, int cause, const Eigen::VectorXd& beta, double t,
                      FitMode mode, const TimeGrid& grid);

double baseline_at(const FitResult& fit, double t);

// integral_0^t X(u)' beta du for a covariate path.
double linear_predictor_integral(const CovariatePath& x, const Eigen::VectorXd& beta, double t);

// M-hat(t) = N(t) - int_0^t Y {dLambda0 + X'beta du}, evaluated at each knot.
StepPath residual_path(const FitResult& fit, std::size_t subject);

}  // namespace mash
