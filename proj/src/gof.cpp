#include "mash/gof.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <thread>

#include "mash/error.hpp"
#include "mash/kernels.hpp"
#include "mash/rng.hpp"
#include "mash/variance.hpp"

namespace mash {

using detail::ConstMatMap;
using detail::ConstVecMap;
using detail::RiskModel;

const char* to_string(TestKind kind) noexcept {
  switch (kind) {
    case TestKind::score_additivity: return "score_additivity";
    case TestKind::overall_additivity: return "overall_additivity";
    case TestKind::functional_form: return "functional_form";
  }
  return "score_additivity";
}

namespace {

constexpr std::uint64_t kAdditivityTag = 0xADD1;
constexpr std::uint64_t kFunctionalTag = 0xF0F0;

std::vector<bool> selection(const RiskModel& rm, const std::vector<double>& x) {
  if (x.size() != rm.p) {
    throw Error(ErrorCode::InvalidArgument, "threshold vector needs one entry per covariate");
  }
  std::vector<bool> sel(rm.N(), true);
  for (std::size_t s = 0; s < rm.N(); ++s)
    for (std::size_t l = 0; l < rm.p; ++l)
      if (!(rm.x(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(l)) <= x[l])) sel[s] = false;
  return sel;
}

// Interval integrals for interval q truncated at t; false when the interval is empty.
bool interval_integrals(const RiskModel& rm, std::size_t q, double t, std::vector<double>& b1,
                        std::vector<double>& b2) {
  const double a = q == 0 ? 0.0 : rm.grid.knots[q - 1];
  const double b = std::min(rm.grid.knots[q], t);
  if (!(b > a)) return false;
  const std::size_t p = rm.p;
  b1.assign(p, 0.0);
  b2.assign(p * p, 0.0);
  if (b == rm.grid.knots[q]) {
    std::copy(rm.b1.begin() + q * p, rm.b1.begin() + (q + 1) * p, b1.begin());
    std::copy(rm.b2.begin() + q * p * p, rm.b2.begin() + (q + 1) * p * p, b2.begin());
  } else {
    detail::basis_integrals(rm.basis, a, b, rm.grid.refinement, b1.data(), b2.data());
  }
  return true;
}

double event_weight(const RiskModel& rm, std::size_t s, std::size_t q) {
  const auto& si = rm.subj[s];
  return si.event == static_cast<std::ptrdiff_t>(q) ? si.event_w : 0.0;
}

Eigen::VectorXd cluster_eta(const FitResult& fit, Eigen::MatrixXd& eta_out) {
  const auto inf = subject_influence(fit);
  const auto& rm = fit.model();
  eta_out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rm.n_clusters), static_cast<Eigen::Index>(rm.p));
  for (std::size_t s = 0; s < rm.N(); ++s) eta_out.row(static_cast<Eigen::Index>(rm.cluster[s])) += inf.eta.row(static_cast<Eigen::Index>(s));
  return eta_out.colwise().sum().transpose();
}

// Per-draw suprema, split over threads in blocks of draws.
void run_kernel(const RowMatrix& xi, const RowMatrix& q, std::size_t T, std::size_t p,
                unsigned threads, RowMatrix& out_l, std::vector<double>& out_all) {
  const std::size_t B = static_cast<std::size_t>(xi.rows()), n = static_cast<std::size_t>(xi.cols());
  out_l.resize(static_cast<Eigen::Index>(B), static_cast<Eigen::Index>(p));
  out_all.assign(B, 0.0);
  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>((B + 63) / 64)));
  const std::size_t chunk = ((B + workers - 1) / workers + 3) / 4 * 4;
  auto job = [&](std::size_t b0) {
    const std::size_t nb = std::min(chunk, B - b0);
    kernels::multiplier_sup(xi.data() + b0 * n, nb, n, q.data(), T, p, out_l.data() + b0 * p,
                            out_all.data() + b0);
  };
  std::vector<std::thread> pool;
  for (std::size_t b0 = chunk; b0 < B; b0 += chunk) pool.emplace_back(job, b0);
  if (B > 0) job(0);
  for (auto& th : pool) th.join();
}

}  // namespace

Eigen::MatrixXd cluster_influence(const FitResult& fit, double t, const std::vector<double>& x,
                                  InfluenceF f) {
  const auto& rm = fit.model();
  const std::size_t p = rm.p, N = rm.N(), T = rm.T;
  const auto d = static_cast<Eigen::Index>(f == InfluenceF::covariate ? p : 1);
  const auto n = static_cast<Eigen::Index>(rm.n_clusters);
  const auto sel = selection(rm, x);
  const auto& beta = fit.beta;
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, d);
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(d, static_cast<Eigen::Index>(p));
  std::vector<double> b1, b2;

  for (std::size_t q = 0; q < T; ++q) {
    if (interval_integrals(rm, q, t, b1, b2) && rm.m0[q] > 0.0) {
      const ConstVecMap mu = rm.mu_at(q);
      const ConstMatMap B2(b2.data(), static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
      const ConstVecMap B1(b1.data(), static_cast<Eigen::Index>(p));
      Eigen::VectorXd g = Eigen::VectorXd::Zero(d);
      for (std::size_t s = 0; s < N; ++s) {
        const double w = rm.interval_weight(s, q);
        if (w == 0.0 || !sel[s]) continue;
        if (f == InfluenceF::covariate) g += w * rm.x.row(static_cast<Eigen::Index>(s)).transpose();
        else g(0) += w;
      }
      g /= rm.m0[q];
      for (std::size_t s = 0; s < N; ++s) {
        const double w = rm.interval_weight(s, q);
        if (w == 0.0) continue;
        const Eigen::VectorXd xs = rm.x.row(static_cast<Eigen::Index>(s)).transpose();
        const Eigen::VectorXd dev = xs - mu;
        const auto i = static_cast<Eigen::Index>(rm.cluster[s]);
        const double ind = sel[s] ? 1.0 : 0.0;
        if (f == InfluenceF::covariate) {
          // int (I x_l - g_l) b_l(u) * (-(x - mu)' diag(b(u)) beta) du
          const Eigen::VectorXd db = dev.cwiseProduct(beta);
          out.row(i) -= w * (B2 * db).cwiseProduct(ind * xs - g).transpose();
          if (sel[s]) h += w * xs.asDiagonal() * B2 * dev.asDiagonal();
        } else {
          out(i, 0) -= w * (ind - g(0)) * dev.cwiseProduct(beta).dot(B1);
          if (sel[s]) h.row(0) += w * dev.cwiseProduct(B1).transpose();
        }
      }
    }
    if (!(rm.grid.knots[q] <= t)) break;
    if (rm.m0_pt[q] <= 0.0) continue;
    const ConstVecMap bq = rm.basis_at(q);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(d);
    for (std::size_t s = 0; s < N; ++s) {
      const double w = rm.point_weight(s, q);
      if (w == 0.0 || !sel[s]) continue;
      if (f == InfluenceF::covariate) g += w * rm.x.row(static_cast<Eigen::Index>(s)).transpose().cwiseProduct(bq);
      else g(0) += w;
    }
    g /= rm.m0_pt[q];
    for (std::size_t s = 0; s < N; ++s) {
      const double w = rm.point_weight(s, q);
      const double dn = event_weight(rm, s, q);
      if (w == 0.0 && dn == 0.0) continue;
      const double dm = dn - w * fit.jump[q];
      const auto i = static_cast<Eigen::Index>(rm.cluster[s]);
      const double ind = sel[s] ? 1.0 : 0.0;
      if (f == InfluenceF::covariate) {
        const Eigen::VectorXd fx = rm.x.row(static_cast<Eigen::Index>(s)).transpose().cwiseProduct(bq);
        out.row(i) += dm * (ind * fx - g).transpose();
      } else {
        out(i, 0) += dm * (ind - g(0));
      }
    }
  }

  Eigen::MatrixXd eta;
  cluster_eta(fit, eta);
  const Eigen::MatrixXd nA = fit.A_tau * static_cast<double>(rm.n_clusters);
  const Eigen::MatrixXd corr = h * nA.ldlt().solve(Eigen::MatrixXd::Identity(nA.rows(), nA.cols()));
  out -= eta * corr.transpose();
  return out;
}

Eigen::VectorXd residual_process(const FitResult& fit, double t, const std::vector<double>& x,
                                 InfluenceF f) {
  const auto& rm = fit.model();
  const std::size_t p = rm.p, N = rm.N(), T = rm.T;
  const auto d = static_cast<Eigen::Index>(f == InfluenceF::covariate ? p : 1);
  const auto sel = selection(rm, x);
  Eigen::VectorXd w_out = Eigen::VectorXd::Zero(d);
  std::vector<double> b1, b2;
  for (std::size_t q = 0; q < T; ++q) {
    if (interval_integrals(rm, q, t, b1, b2) && rm.m0[q] > 0.0) {
      const ConstVecMap mu = rm.mu_at(q);
      const ConstMatMap B2(b2.data(), static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
      const ConstVecMap B1(b1.data(), static_cast<Eigen::Index>(p));
      for (std::size_t s = 0; s < N; ++s) {
        const double w = rm.interval_weight(s, q);
        if (w == 0.0 || !sel[s]) continue;
        const Eigen::VectorXd xs = rm.x.row(static_cast<Eigen::Index>(s)).transpose();
        const Eigen::VectorXd db = (xs - mu).cwiseProduct(fit.beta);
        if (f == InfluenceF::covariate) w_out -= w * (B2 * db).cwiseProduct(xs);
        else w_out(0) -= w * db.dot(B1);
      }
    }
    if (!(rm.grid.knots[q] <= t)) break;
    const ConstVecMap bq = rm.basis_at(q);
    for (std::size_t s = 0; s < N; ++s) {
      if (!sel[s]) continue;
      const double dm = event_weight(rm, s, q) - rm.point_weight(s, q) * fit.jump[q];
      if (dm == 0.0) continue;
      if (f == InfluenceF::covariate) w_out += dm * rm.x.row(static_cast<Eigen::Index>(s)).transpose().cwiseProduct(bq);
      else w_out(0) += dm;
    }
  }
  return w_out;
}

AdditivityParts additivity_influence(const FitResult& fit) {
  const auto& rm = fit.model();
  const std::size_t p = rm.p, N = rm.N(), T = rm.T, n = rm.n_clusters, cols = T * p;
  const auto& beta = fit.beta;
  AdditivityParts out;
  // increments of Phi_i at each knot, then a running sum over knots
  out.q = RowMatrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cols));
  std::vector<Eigen::VectorXd> db(T);
  std::vector<Eigen::MatrixXd> b2db(T);
  for (std::size_t q = 0; q < T; ++q) db[q] = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
  for (std::size_t s = 0; s < N; ++s) {
    const auto& si = rm.subj[s];
    const Eigen::VectorXd xs = rm.x.row(static_cast<Eigen::Index>(s)).transpose();
    double* row = out.q.data() + rm.cluster[s] * cols;
    const std::size_t qend = si.tail ? T : std::max(si.qi, si.qp);
    for (std::size_t q = 0; q < qend; ++q) {
      const double w = rm.interval_weight(s, q);
      if (w != 0.0 && rm.m0[q] > 0.0) {
        const Eigen::VectorXd dev = xs - rm.mu_at(q);
        const Eigen::VectorXd v = rm.b2_at(q) * dev.cwiseProduct(beta);
        for (std::size_t l = 0; l < p; ++l) row[q * p + l] -= w * dev(static_cast<Eigen::Index>(l)) * v(static_cast<Eigen::Index>(l));
      }
      const double dm = event_weight(rm, s, q) - rm.point_weight(s, q) * fit.jump[q];
      if (dm != 0.0 && rm.m0_pt[q] > 0.0) {
        for (std::size_t l = 0; l < p; ++l) {
          const auto li = static_cast<Eigen::Index>(l);
          row[q * p + l] += dm * (xs(li) - rm.mu_pt_at(q)(li)) * rm.basis_at(q)(li);
        }
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    double* row = out.q.data() + i * cols;
    for (std::size_t c = p; c < cols; ++c) row[c] += row[c - p];
  }
  out.phi_tau = out.q.rightCols(static_cast<Eigen::Index>(p));
  out.sigma = out.phi_tau.transpose() * out.phi_tau / static_cast<double>(n);

  // correction A(u_q) A(tau)^{-1} Phi_i(tau)
  const Eigen::MatrixXd ainv = fit.A_tau.ldlt().solve(Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p)));
  const Eigen::MatrixXd right = ainv * out.phi_tau.transpose();  // p x n
  for (std::size_t q = 0; q < T; ++q) {
    const Eigen::MatrixXd c = fit.A_at(q) * right;  // p x n
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t l = 0; l < p; ++l)
        out.q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(q * p + l)) -= c(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(i));
  }
  return out;
}

std::vector<double> functional_thresholds(const FitResult& fit, std::size_t l, std::size_t cap) {
  const auto& rm = fit.model();
  if (l >= rm.p) throw Error(ErrorCode::InvalidArgument, "covariate index out of range");
  std::vector<double> v(rm.x.col(static_cast<Eigen::Index>(l)).data(),
                        rm.x.col(static_cast<Eigen::Index>(l)).data() + rm.x.rows());
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  if (v.size() < 2) {
    throw Error(ErrorCode::DegenerateCovariate,
                "covariate " + fit.covariate_names[l] + " has fewer than two distinct values");
  }
  if (cap >= 2 && v.size() > cap) {
    std::vector<double> thin(cap);
    for (std::size_t k = 0; k < cap; ++k) {
      const auto pos = static_cast<std::size_t>(
          std::llround(static_cast<double>(k) * static_cast<double>(v.size() - 1) / static_cast<double>(cap - 1)));
      thin[k] = v[pos];
    }
    v = std::move(thin);
  }
  return v;
}

FunctionalParts functional_influence(const FitResult& fit, std::size_t l,
                                     std::span<const double> thresholds) {
  const auto& rm = fit.model();
  const std::size_t p = rm.p, N = rm.N(), T = rm.T, n = rm.n_clusters, K = thresholds.size();
  if (l >= p) throw Error(ErrorCode::InvalidArgument, "covariate index out of range");
  const auto& beta = fit.beta;

  // Per-cluster residual mass on each interval and point: D_i(q) = sum_j omega_j dM_j.
  std::vector<double> d_int(n * T, 0.0), d_pt(n * T, 0.0);
  // beta' diag(B1_q) (x - mu_q) pieces
  std::vector<double> bb(T, 0.0), mbb(T, 0.0);
  for (std::size_t q = 0; q < T; ++q) {
    for (std::size_t m = 0; m < p; ++m) {
      bb[q] += beta(static_cast<Eigen::Index>(m)) * rm.b1[q * p + m];
      mbb[q] += beta(static_cast<Eigen::Index>(m)) * rm.b1[q * p + m] * rm.mu[q * p + m];
    }
  }
  std::vector<double> r(N, 0.0);
  Eigen::MatrixXd hs = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(p));
  for (std::size_t s = 0; s < N; ++s) {
    const auto& si = rm.subj[s];
    const std::size_t i = rm.cluster[s];
    const std::size_t qend = si.tail ? T : std::max(si.qi, si.qp);
    for (std::size_t q = 0; q < qend; ++q) {
      const double w = rm.interval_weight(s, q);
      if (w != 0.0 && rm.m0[q] > 0.0) {
        double lin = 0.0;
        for (std::size_t m = 0; m < p; ++m) {
          const double dev = (rm.x(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(m)) - rm.mu[q * p + m]) * rm.b1[q * p + m];
          hs(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(m)) += w * dev;
          lin += dev * beta(static_cast<Eigen::Index>(m));
        }
        d_int[i * T + q] -= w * lin;
        r[s] -= w * lin;
      }
      const double dm = event_weight(rm, s, q) - rm.point_weight(s, q) * fit.jump[q];
      if (dm != 0.0 && rm.m0_pt[q] > 0.0) {
        d_pt[i * T + q] += dm;
        r[s] += dm;
      }
    }
  }

  // K_{s,i} = sum_q omega_s(q) / S0(q) D_i(q), split at the subject's last unit-weight index:
  // a prefix over the unit part and a g-weighted suffix over the tail part.
  std::vector<double> pi((T + 1) * n, 0.0), ti((T + 1) * n, 0.0);
  std::vector<double> pp((T + 1) * n, 0.0), tp((T + 1) * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t q = 0; q < T; ++q) {
      const double vi = rm.m0[q] > 0.0 ? d_int[i * T + q] / rm.m0[q] : 0.0;
      const double vp = rm.m0_pt[q] > 0.0 ? d_pt[i * T + q] / rm.m0_pt[q] : 0.0;
      pi[(q + 1) * n + i] = pi[q * n + i] + vi;
      pp[(q + 1) * n + i] = pp[q * n + i] + vp;
    }
    for (std::size_t q = T; q-- > 0;) {
      const double vi = rm.m0[q] > 0.0 ? rm.g_int[q] * d_int[i * T + q] / rm.m0[q] : 0.0;
      const double vp = rm.m0_pt[q] > 0.0 ? rm.g_pt[q] * d_pt[i * T + q] / rm.m0_pt[q] : 0.0;
      ti[q * n + i] = ti[(q + 1) * n + i] + vi;
      tp[q * n + i] = tp[(q + 1) * n + i] + vp;
    }
  }

  Eigen::MatrixXd eta;
  cluster_eta(fit, eta);
  const Eigen::MatrixXd nA = fit.A_tau * static_cast<double>(n);
  const Eigen::MatrixXd proj = nA.ldlt().solve(eta.transpose());  // p x n

  std::vector<std::size_t> order(N);
  for (std::size_t s = 0; s < N; ++s) order[s] = s;
  const auto col = rm.x.col(static_cast<Eigen::Index>(l));
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return col(static_cast<Eigen::Index>(a)) < col(static_cast<Eigen::Index>(b)); });

  FunctionalParts out;
  out.q = RowMatrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(K));
  out.observed.assign(K, 0.0);
  std::vector<double> run(n, 0.0);
  Eigen::RowVectorXd h = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(p));
  double obs = 0.0;
  std::size_t next = 0;
  for (std::size_t k = 0; k < K; ++k) {
    while (next < N && col(static_cast<Eigen::Index>(order[next])) <= thresholds[k]) {
      const std::size_t s = order[next++];
      const auto& si = rm.subj[s];
      run[rm.cluster[s]] += r[s];
      obs += r[s];
      h += hs.row(static_cast<Eigen::Index>(s));
      const double* pis = pi.data() + si.qi * n;
      const double* pps = pp.data() + si.qp * n;
      for (std::size_t i = 0; i < n; ++i) run[i] -= pis[i] + pps[i];
      if (si.tail) {
        const double* tis = ti.data() + si.qi * n;
        const double* tps = tp.data() + si.qp * n;
        for (std::size_t i = 0; i < n; ++i) run[i] -= si.inv_g * (tis[i] + tps[i]);
      }
    }
    const Eigen::RowVectorXd corr = h * proj;  // 1 x n
    for (std::size_t i = 0; i < n; ++i) out.q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = run[i] - corr(static_cast<Eigen::Index>(i));
    out.observed[k] = obs;
  }
  return out;
}

RowMatrix multiplier_draws(std::size_t n, int B, std::uint64_t seed, std::uint64_t tag) {
  RowMatrix xi(B, static_cast<Eigen::Index>(n));
  for (int b = 0; b < B; ++b) {
    Rng rng = make_rng(seed, tag, static_cast<std::uint64_t>(b));
    std::normal_distribution<double> z(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) xi(b, static_cast<Eigen::Index>(i)) = z(rng);
  }
  return xi;
}

RowMatrix perturb(const RowMatrix& q, const RowMatrix& xi) {
  if (xi.cols() != q.rows()) throw Error(ErrorCode::InvalidArgument, "multiplier count must match the cluster count");
  return xi * q;
}

double monte_carlo_pvalue(double observed, std::span<const double> draws, bool add_one) {
  std::size_t count = 0;
  for (double v : draws) count += v > observed ? 1 : 0;
  const double B = static_cast<double>(draws.size());
  if (add_one) return (1.0 + static_cast<double>(count)) / (B + 1.0);
  return draws.empty() ? 1.0 : static_cast<double>(count) / B;
}

AdditivityResult additivity_test(const FitResult& fit, const GofOptions& opt) {
  if (opt.draws < 100) throw Error(ErrorCode::InvalidArgument, "p-values need at least 100 perturbation draws");
  const auto& rm = fit.model();
  const std::size_t p = rm.p, T = rm.T, n = rm.n_clusters;
  const double rn = 1.0 / std::sqrt(static_cast<double>(n));
  AdditivityResult res;
  auto parts = additivity_influence(fit);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(parts.sigma);
  const double lmax = es.eigenvalues().maxCoeff(), lmin = es.eigenvalues().minCoeff();
  if (!(lmax > 0.0) || !(lmin > 0.0)) {
    throw Error(ErrorCode::SingularDesign, "score covariance for the additivity test is singular");
  }
  if (lmin / lmax < 1e-10) res.warnings.push_back("score covariance for the additivity test is ill-conditioned");
  const Eigen::MatrixXd sinv = es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
  Eigen::VectorXd c(static_cast<Eigen::Index>(p));
  for (std::size_t l = 0; l < p; ++l) c(static_cast<Eigen::Index>(l)) = std::sqrt(sinv(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(l)));

  // observed processes
  Eigen::MatrixXd u(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(p));
  for (std::size_t q = 0; q < T; ++q) u.row(static_cast<Eigen::Index>(q)) = fit.score_at(q).transpose() * rn;
  std::vector<double> s_l(p, 0.0);
  double s_all = 0.0;
  for (std::size_t q = 0; q < T; ++q) {
    double sum = 0.0;
    for (std::size_t l = 0; l < p; ++l) {
      const double v = c(static_cast<Eigen::Index>(l)) * std::abs(u(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(l)));
      s_l[l] = std::max(s_l[l], v);
      sum += v;
    }
    s_all = std::max(s_all, sum);
  }

  const RowMatrix xi = multiplier_draws(n, opt.draws, opt.seed, kAdditivityTag);
  const int keep = std::clamp(opt.keep_draws, 0, opt.draws);
  RowMatrix kept;
  if (keep > 0) kept = perturb(parts.q, xi.topRows(keep)) * rn;

  RowMatrix scaled = parts.q;
  for (std::size_t q = 0; q < T; ++q)
    for (std::size_t l = 0; l < p; ++l) scaled.col(static_cast<Eigen::Index>(q * p + l)) *= c(static_cast<Eigen::Index>(l)) * rn;
  RowMatrix sup_l;
  std::vector<double> sup_all;
  run_kernel(xi, scaled, T, p, opt.threads, sup_l, sup_all);

  for (std::size_t l = 0; l < p; ++l) {
    std::vector<double> col(static_cast<std::size_t>(opt.draws));
    for (int b = 0; b < opt.draws; ++b) col[static_cast<std::size_t>(b)] = sup_l(b, static_cast<Eigen::Index>(l));
    GofRow row{fit.covariate_names[l], s_l[l], monte_carlo_pvalue(s_l[l], col, opt.pvalue_add_one)};
    res.rows.push_back(row);

    TestProcess tp;
    tp.kind = TestKind::score_additivity;
    tp.covariate = l;
    tp.name = fit.covariate_names[l];
    tp.axis.push_back(0.0);
    tp.axis.insert(tp.axis.end(), rm.grid.knots.begin(), rm.grid.knots.end());
    tp.observed.push_back(0.0);
    for (std::size_t q = 0; q < T; ++q) tp.observed.push_back(u(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(l)));
    tp.perturbed = RowMatrix::Zero(keep, static_cast<Eigen::Index>(T + 1));
    for (int b = 0; b < keep; ++b)
      for (std::size_t q = 0; q < T; ++q) tp.perturbed(b, static_cast<Eigen::Index>(q + 1)) = kept(b, static_cast<Eigen::Index>(q * p + l));
    tp.sigma_ll = sinv(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(l));
    tp.statistic = row.statistic;
    tp.p_value = row.p_value;
    res.processes.push_back(std::move(tp));
  }
  res.overall = GofRow{"Overall", s_all, monte_carlo_pvalue(s_all, sup_all, opt.pvalue_add_one)};

  // overall process: sum over covariates of the standardized absolute score processes
  TestProcess all;
  all.kind = TestKind::overall_additivity;
  all.covariate = p;
  all.name = "Overall";
  all.axis = res.processes.front().axis;
  all.observed.assign(T + 1, 0.0);
  all.perturbed = RowMatrix::Zero(keep, static_cast<Eigen::Index>(T + 1));
  for (std::size_t l = 0; l < p; ++l) {
    const auto& tp = res.processes[l];
    const double cl = c(static_cast<Eigen::Index>(l));
    for (std::size_t q = 0; q <= T; ++q) all.observed[q] += cl * std::abs(tp.observed[q]);
    all.perturbed += cl * tp.perturbed.cwiseAbs();
  }
  all.statistic = res.overall.statistic;
  all.p_value = res.overall.p_value;
  res.processes.push_back(std::move(all));
  return res;
}

TestProcess functional_form_test(const FitResult& fit, std::size_t l, const GofOptions& opt) {
  if (opt.draws < 100) throw Error(ErrorCode::InvalidArgument, "p-values need at least 100 perturbation draws");
  const auto& rm = fit.model();
  const std::size_t n = rm.n_clusters;
  const double rn = 1.0 / std::sqrt(static_cast<double>(n));
  const auto thresholds = functional_thresholds(fit, l, opt.max_thresholds);
  const std::size_t K = thresholds.size();
  auto parts = functional_influence(fit, l, thresholds);
  parts.q *= rn;

  TestProcess tp;
  tp.kind = TestKind::functional_form;
  tp.covariate = l;
  tp.name = fit.covariate_names[l];
  tp.axis.push_back(std::nextafter(thresholds.front(), -std::numeric_limits<double>::infinity()));
  tp.axis.insert(tp.axis.end(), thresholds.begin(), thresholds.end());
  tp.observed.push_back(0.0);
  for (double v : parts.observed) {
    tp.observed.push_back(v * rn);
    tp.statistic = std::max(tp.statistic, std::abs(v * rn));
  }

  const RowMatrix xi = multiplier_draws(n, opt.draws, opt.seed, kFunctionalTag + l);
  const int keep = std::clamp(opt.keep_draws, 0, opt.draws);
  tp.perturbed = RowMatrix::Zero(keep, static_cast<Eigen::Index>(K + 1));
  if (keep > 0) tp.perturbed.rightCols(static_cast<Eigen::Index>(K)) = perturb(parts.q, xi.topRows(keep));

  RowMatrix sup_l;
  std::vector<double> sup_all;
  run_kernel(xi, parts.q, K, 1, opt.threads, sup_l, sup_all);
  tp.p_value = monte_carlo_pvalue(tp.statistic, sup_all, opt.pvalue_add_one);
  return tp;
}

GofReport goodness_of_fit(const FitResult& fit, bool additivity,
                          const std::vector<std::size_t>& functional_covariates,
                          const GofOptions& opt) {
  GofReport rep;
  rep.additivity = additivity;
  rep.draws = opt.draws;
  rep.seed = opt.seed;
  rep.pvalue_add_one = opt.pvalue_add_one;
  if (additivity) {
    auto a = additivity_test(fit, opt);
    rep.rows = std::move(a.rows);
    rep.overall = a.overall;
    rep.warnings = std::move(a.warnings);
    for (auto& tp : a.processes) rep.processes.push_back(std::move(tp));
  }
  for (std::size_t l : functional_covariates) {
    auto tp = functional_form_test(fit, l, opt);
    rep.functional_form.push_back(GofRow{tp.name, tp.statistic, tp.p_value});
    rep.processes.push_back(std::move(tp));
  }
  return rep;
}

void export_test_process(const TestProcess& tp, int n_draws, std::ostream& out) {
  const int m = std::clamp(n_draws, 0, static_cast<int>(tp.perturbed.rows()));
  out << (tp.kind == TestKind::functional_form ? "threshold" : "time") << ",observed";
  for (int b = 0; b < m; ++b) out << ",draw" << (b + 1);
  out << '\n';
  const auto old = out.precision(17);
  for (std::size_t k = 0; k < tp.axis.size(); ++k) {
    out << tp.axis[k] << ',' << tp.observed[k];
    for (int b = 0; b < m; ++b) out << ',' << tp.perturbed(b, static_cast<Eigen::Index>(k));
    out << '\n';
  }
  out.precision(old);
}

}  // namespace mash
