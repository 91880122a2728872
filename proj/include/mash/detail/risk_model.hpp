#pragma once

// Internal risk-set bookkeeping shared by the fitter, variance and gof modules.
//
// Knots u_0 < ... < u_{T-1} = tau. Interval q is the open interval (u_{q-1}, u_q)
// with u_{-1} = 0; point q is the knot u_q itself. On an open interval every at-risk
// weight is constant and only the covariate basis moves, so with X_l(t) = x_l b_l(t)
// each time integral factors into a constant moment times an integral of the basis.

#include <Eigen/Dense>
#include <cstddef>
#include <span>
#include <vector>

#include "mash/censoring.hpp"
#include "mash/dataset.hpp"

namespace mash {

enum class FitMode { ipcw, cc };

namespace detail {

struct SubjectIndex {
  std::size_t qi = 0;        // intervals [0, qi) carry unit weight
  std::size_t qp = 0;        // points [0, qp) carry unit weight
  bool tail = false;         // other-cause subject kept after Z with weight G(t)/G(Z)
  double inv_g = 0.0;        // 1 / G(Z) when tail
  std::ptrdiff_t event = -1; // knot of the cause-k jump
  double event_w = 0.0;      // weight at that jump
  std::ptrdiff_t zknot = -1; // knot of Z when Z <= tau
  bool censored = false;
  bool cause_k = false;      // failed from the fitted cause
};

using MatMap = Eigen::Map<Eigen::MatrixXd>;
using ConstMatMap = Eigen::Map<const Eigen::MatrixXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

struct RiskModel {
  TimeGrid grid;
  std::size_t T = 0;
  std::size_t p = 0;
  std::size_t n_clusters = 0;
  int cause = 1;
  FitMode mode = FitMode::ipcw;
  std::vector<Basis> basis;

  std::vector<SubjectIndex> subj;
  Eigen::MatrixXd x;                    // N x p base covariates
  std::vector<std::size_t> cluster;     // subject -> cluster
  std::vector<std::size_t> offsets;     // cluster -> first subject

  // interval quantities
  std::vector<double> g_int;  // G-hat on the open interval
  std::vector<double> m0;     // weighted risk total
  std::vector<double> mu;     // T*p, base-scale weighted mean (S1/S0 without the basis)
  std::vector<double> c2;     // T*p*p, M2 - M1 M1'/M0
  std::vector<double> b1;     // T*p, integral of b_l over the interval
  std::vector<double> b2;     // T*p*p, integral of b_l b_m over the interval

  // point quantities
  std::vector<double> g_pt;      // G-hat(u_q)
  std::vector<double> m0_pt;
  std::vector<double> mu_pt;     // T*p
  std::vector<double> basis_pt;  // T*p, b_l(u_q)
  std::vector<double> event_w;   // total jump weight at u_q
  std::vector<double> event_x;   // T*p, sum of weight * x over jumps at u_q

  // censoring martingale pieces (IPCW only)
  std::vector<double> cens_d;  // number censored at u_q
  std::vector<double> risk_y;  // #{Z >= u_q}

  std::size_t N() const noexcept { return subj.size(); }

  ConstVecMap mu_at(std::size_t q) const { return ConstVecMap(mu.data() + q * p, p); }
  ConstVecMap mu_pt_at(std::size_t q) const { return ConstVecMap(mu_pt.data() + q * p, p); }
  ConstVecMap b1_at(std::size_t q) const { return ConstVecMap(b1.data() + q * p, p); }
  ConstVecMap basis_at(std::size_t q) const { return ConstVecMap(basis_pt.data() + q * p, p); }
  ConstVecMap event_x_at(std::size_t q) const { return ConstVecMap(event_x.data() + q * p, p); }
  ConstMatMap c2_at(std::size_t q) const { return ConstMatMap(c2.data() + q * p * p, p, p); }
  ConstMatMap b2_at(std::size_t q) const { return ConstMatMap(b2.data() + q * p * p, p, p); }

  // Weight of subject s on interval q / at point q.
  double interval_weight(std::size_t s, std::size_t q) const {
    const auto& si = subj[s];
    if (q < si.qi) return 1.0;
    return si.tail ? g_int[q] * si.inv_g : 0.0;
  }
  double point_weight(std::size_t s, std::size_t q) const {
    const auto& si = subj[s];
    if (q < si.qp) return 1.0;
    return si.tail ? g_pt[q] * si.inv_g : 0.0;
  }
};

// cm may be null in CC mode.
RiskModel build_risk_model(const ClusteredDataset& ds, const CensoringModel* cm, int cause,
                           FitMode mode, const TimeGrid& grid);

// Trapezoid integrals of b_l and b_l b_m over [a, b] with `panels` panels.
void basis_integrals(std::span<const Basis> basis, double a, double b, int panels, double* b1,
                     double* b2);

}  // namespace detail
}  // namespace mash
