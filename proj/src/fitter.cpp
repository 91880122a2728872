#include "mash/fitter.hpp"

#include <algorithm>
#include <cmath>

#include "mash/error.hpp"

namespace mash {

using detail::ConstMatMap;
using detail::ConstVecMap;
using detail::RiskModel;

const char* to_string(FitMode mode) noexcept { return mode == FitMode::ipcw ? "ipcw" : "cc"; }

FitMode parse_fit_mode(const std::string& s) {
  if (s == "ipcw") return FitMode::ipcw;
  if (s == "cc") return FitMode::cc;
  throw Error(ErrorCode::InvalidArgument, "unknown mode '" + s + "' (expected ipcw or cc)");
}

double StepPath::at(double t) const {
  auto it = std::upper_bound(times.begin(), times.end(), t);
  if (it == times.begin()) return 0.0;
  return values[static_cast<std::size_t>(it - times.begin()) - 1];
}

namespace {

constexpr double kMinReciprocalCondition = 1e-12;

// Contribution of the open interval q truncated to (u_{q-1}, t]: c2(q) .* B2(u_{q-1}, t).
Eigen::MatrixXd partial_na(const RiskModel& rm, std::size_t q, double t) {
  const std::size_t p = rm.p;
  const double a = q == 0 ? 0.0 : rm.grid.knots[q - 1];
  Eigen::VectorXd b1(p);
  Eigen::MatrixXd b2(p, p);
  detail::basis_integrals(rm.basis, a, t, rm.grid.refinement, b1.data(), b2.data());
  return rm.c2_at(q).cwiseProduct(b2);
}

double partial_drift(const RiskModel& rm, const Eigen::VectorXd& beta, std::size_t q, double t) {
  const std::size_t p = rm.p;
  const double a = q == 0 ? 0.0 : rm.grid.knots[q - 1];
  Eigen::VectorXd b1(p);
  Eigen::MatrixXd b2(p, p);
  detail::basis_integrals(rm.basis, a, t, rm.grid.refinement, b1.data(), b2.data());
  return -rm.mu_at(q).cwiseProduct(beta).dot(b1);
}

}  // namespace

Eigen::MatrixXd FitResult::A_at(std::size_t q) const {
  const std::size_t p = model_->p;
  return ConstMatMap(na_path_.data() + q * p * p, p, p) / static_cast<double>(n_clusters);
}

Eigen::VectorXd FitResult::score_at(std::size_t q) const {
  const std::size_t p = model_->p;
  return ConstVecMap(b_path_.data() + q * p, p) -
         ConstMatMap(na_path_.data() + q * p * p, p, p) * beta;
}

RiskAggregates FitResult::aggregates() const {
  const auto& rm = *model_;
  const double n = static_cast<double>(n_clusters);
  RiskAggregates ag;
  ag.s0.resize(rm.T);
  ag.s1.resize(rm.T, rm.p);
  ag.xhat.resize(rm.T, rm.p);
  for (std::size_t q = 0; q < rm.T; ++q) {
    ag.s0[q] = rm.m0_pt[q] / n;
    const Eigen::VectorXd xh = rm.basis_at(q).cwiseProduct(rm.mu_pt_at(q));
    ag.xhat.row(q) = xh.transpose();
    ag.s1.row(q) = (xh * ag.s0[q]).transpose();
  }
  return ag;
}

FitResult fit_with(const ClusteredDataset& ds, std::shared_ptr<const CensoringModel> cm, int cause,
                   FitMode mode, const TimeGrid& grid) {
  auto rm = std::make_shared<RiskModel>(
      detail::build_risk_model(ds, mode == FitMode::ipcw ? cm.get() : nullptr, cause, mode, grid));
  const std::size_t T = rm->T, p = rm->p, pp = p * p;

  FitResult f;
  f.cause = cause;
  f.mode = mode;
  f.n_clusters = ds.n_clusters();
  f.n_subjects = ds.size();
  f.covariate_names = ds.covariate_names();
  f.warnings = ds.warnings();

  double total_w = 0.0;
  for (std::size_t q = 0; q < T; ++q) total_w += rm->event_w[q];
  for (const auto& si : rm->subj) f.n_events += (si.event >= 0 && si.event_w > 0.0) ? 1 : 0;
  if (total_w <= 0.0) {
    throw Error(ErrorCode::NoEventsForCause,
                "no cause-" + std::to_string(cause) + " events in (0, tau]");
  }
  if (f.n_events < 5) {
    f.warnings.push_back("only " + std::to_string(f.n_events) + " cause-" + std::to_string(cause) +
                         " events before tau; estimates may be unstable");
  }

  f.na_path_.assign(T * pp, 0.0);
  f.b_path_.assign(T * p, 0.0);
  Eigen::MatrixXd na = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
  for (std::size_t q = 0; q < T; ++q) {
    na += rm->c2_at(q).cwiseProduct(rm->b2_at(q));
    b += rm->basis_at(q).cwiseProduct(rm->event_x_at(q) - rm->event_w[q] * rm->mu_pt_at(q));
    detail::MatMap(f.na_path_.data() + q * pp, p, p) = na;
    detail::VecMap(f.b_path_.data() + q * p, p) = b;
  }
  na = 0.5 * (na + na.transpose());

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(na, Eigen::EigenvaluesOnly);
  const double lmax = es.eigenvalues().maxCoeff();
  const double lmin = es.eigenvalues().minCoeff();
  if (!(lmax > 0.0) || lmin / lmax < kMinReciprocalCondition) {
    throw Error(ErrorCode::SingularDesign, "A(tau) is singular or ill-conditioned (rcond=" +
                                               std::to_string(lmax > 0.0 ? lmin / lmax : 0.0) +
                                               ")");
  }
  f.beta = na.ldlt().solve(b);
  f.A_tau = na / static_cast<double>(f.n_clusters);

  f.jump.assign(T, 0.0);
  f.drift.assign(T, 0.0);
  f.baseline.assign(T, 0.0);
  double cum = 0.0;
  for (std::size_t q = 0; q < T; ++q) {
    f.drift[q] = -rm->mu_at(q).cwiseProduct(f.beta).dot(rm->b1_at(q));
    if (rm->m0_pt[q] > 0.0) f.jump[q] = rm->event_w[q] / rm->m0_pt[q];
    cum += f.drift[q] + f.jump[q];
    f.baseline[q] = cum;
  }

  f.model_ = std::move(rm);
  f.censoring_ = std::move(cm);
  return f;
}

FitResult fit(const ClusteredDataset& ds, int cause, FitMode mode, const TimeGrid& grid) {
  std::shared_ptr<const CensoringModel> cm;
  if (mode == FitMode::ipcw) cm = std::make_shared<CensoringModel>(fit_censoring_km(ds));
  return fit_with(ds, std::move(cm), cause, mode, grid);
}

FitResult fit(const ClusteredDataset& ds, int cause, FitMode mode, int refinement) {
  return fit(ds, cause, mode, build_grid(ds, refinement));
}

Eigen::VectorXd score(const FitResult& fit, const Eigen::VectorXd& beta, double t) {
  const auto& rm = *fit.model_;
  const std::size_t p = rm.p, pp = p * p;
  if (beta.size() != static_cast<Eigen::Index>(p)) {
    throw Error(ErrorCode::InvalidArgument, "beta has wrong dimension");
  }
  t = std::min(t, rm.grid.tau());
  Eigen::VectorXd u = Eigen::VectorXd::Zero(p);
  if (t <= 0.0) return u;
  const std::ptrdiff_t q = rm.grid.floor_index(t);
  Eigen::MatrixXd na = Eigen::MatrixXd::Zero(p, p);
  if (q >= 0) {
    const auto qq = static_cast<std::size_t>(q);
    na = ConstMatMap(fit.na_path_.data() + qq * pp, p, p);
    u = ConstVecMap(fit.b_path_.data() + qq * p, p);
  }
  const auto next = static_cast<std::size_t>(q + 1);
  if (next < rm.T && (q < 0 || t > rm.grid.knots[static_cast<std::size_t>(q)])) {
    na += partial_na(rm, next, t);
  }
  return u - na * beta;
}

Eigen::VectorXd score(const ClusteredDataset& ds, int cause, const Eigen::VectorXd& beta, double t,
                      FitMode mode, const TimeGrid& grid) {
  return score(fit(ds, cause, mode, grid), beta, t);
}

double baseline_at(const FitResult& fit, double t) {
  const auto& rm = fit.model();
  t = std::min(t, rm.grid.tau());
  if (t <= 0.0) return 0.0;
  const std::ptrdiff_t q = rm.grid.floor_index(t);
  double v = q >= 0 ? fit.baseline[static_cast<std::size_t>(q)] : 0.0;
  const auto next = static_cast<std::size_t>(q + 1);
  if (next < rm.T && (q < 0 || t > rm.grid.knots[static_cast<std::size_t>(q)])) {
    v += partial_drift(rm, fit.beta, next, t);
  }
  return v;
}

double linear_predictor_integral(const CovariatePath& x, const Eigen::VectorXd& beta, double t) {
  double v = 0.0;
  for (std::size_t l = 0; l < x.size(); ++l) {
    const double integral = x.basis[l] == Basis::constant ? t : 1.0 - std::exp(-t);
    v += x.base[l] * beta(static_cast<Eigen::Index>(l)) * integral;
  }
  return v;
}

StepPath residual_path(const FitResult& fit, std::size_t subject) {
  const auto& rm = fit.model();
  if (subject >= rm.N()) throw Error(ErrorCode::InvalidArgument, "subject index out of range");
  const auto& si = rm.subj[subject];
  const bool is_k = si.cause_k;
  // Y^k is 1 up to and including Z for cause-k subjects, 1 everywhere otherwise.
  std::size_t last = rm.T;
  if (is_k && si.zknot >= 0) last = static_cast<std::size_t>(si.zknot) + 1;
  const Eigen::VectorXd x = rm.x.row(static_cast<Eigen::Index>(subject)).transpose();
  StepPath path;
  path.times = rm.grid.knots;
  path.values.assign(rm.T, 0.0);
  double m = 0.0;
  for (std::size_t q = 0; q < rm.T; ++q) {
    if (q < last) {
      m -= (x - rm.mu_at(q)).cwiseProduct(fit.beta).dot(rm.b1_at(q));
      m -= fit.jump[q];
    }
    if (is_k && si.zknot == static_cast<std::ptrdiff_t>(q)) m += 1.0;
    path.values[q] = m;
  }
  return path;
}

}  // namespace mash
