#include "mash/variance.hpp"

#include <algorithm>
#include <atomic>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <thread>

#include "mash/error.hpp"
#include "mash/rng.hpp"

namespace mash {

using detail::ConstMatMap;
using detail::ConstVecMap;
using detail::MatMap;
using detail::VecMap;

const char* to_string(Clustering c) noexcept {
  return c == Clustering::by_cluster ? "cluster" : "individual";
}

Clustering parse_clustering(const std::string& s) {
  if (s == "cluster") return Clustering::by_cluster;
  if (s == "individual") return Clustering::by_individual;
  throw Error(ErrorCode::InvalidArgument, "unknown variance '" + s + "' (cluster or individual)");
}

namespace {

// Per-interval and per-point building blocks of the residual integrals.
//   interval q: -w d.*(G1 d) with d = x - mu_q, G1 = B2 diag(beta)
//             = -w [x.*(G1 x) - x.*V1 - G2 x + V2]
//   point q:   -w J b.*(x - mu_pt) = -w [x.*H1 - H2]
struct Pieces {
  std::size_t T, p;
  std::vector<double> g1, g2;          // T*p*p
  std::vector<double> v1, v2, h1, h2;  // T*p
};

Pieces make_pieces(const FitResult& fit) {
  const auto& rm = fit.model();
  const std::size_t T = rm.T, p = rm.p, pp = p * p;
  Pieces pc{T, p, std::vector<double>(T * pp), std::vector<double>(T * pp),
            std::vector<double>(T * p), std::vector<double>(T * p), std::vector<double>(T * p),
            std::vector<double>(T * p)};
  for (std::size_t q = 0; q < T; ++q) {
    const Eigen::MatrixXd G1 = rm.b2_at(q) * fit.beta.asDiagonal();
    const auto mu = rm.mu_at(q);
    MatMap(pc.g1.data() + q * pp, p, p) = G1;
    MatMap(pc.g2.data() + q * pp, p, p) = mu.asDiagonal() * G1;
    const Eigen::VectorXd v1 = G1 * mu;
    VecMap(pc.v1.data() + q * p, p) = v1;
    VecMap(pc.v2.data() + q * p, p) = mu.cwiseProduct(v1);
    const Eigen::VectorXd h1 = fit.jump[q] * rm.basis_at(q);
    VecMap(pc.h1.data() + q * p, p) = h1;
    VecMap(pc.h2.data() + q * p, p) = h1.cwiseProduct(rm.mu_pt_at(q));
  }
  return pc;
}

// Running sums over a range of knots with optional per-knot scale.
struct Sums {
  Eigen::MatrixXd G1, G2;
  Eigen::VectorXd V1, V2, H1, H2;

  explicit Sums(std::size_t p)
      : G1(Eigen::MatrixXd::Zero(p, p)),
        G2(Eigen::MatrixXd::Zero(p, p)),
        V1(Eigen::VectorXd::Zero(p)),
        V2(Eigen::VectorXd::Zero(p)),
        H1(Eigen::VectorXd::Zero(p)),
        H2(Eigen::VectorXd::Zero(p)) {}

  void add_interval(const Pieces& pc, std::size_t q, double w) {
    const std::size_t p = pc.p, pp = p * p;
    G1 += w * ConstMatMap(pc.g1.data() + q * pp, p, p);
    G2 += w * ConstMatMap(pc.g2.data() + q * pp, p, p);
    V1 += w * ConstVecMap(pc.v1.data() + q * p, p);
    V2 += w * ConstVecMap(pc.v2.data() + q * p, p);
  }
  void add_point(const Pieces& pc, std::size_t q, double w) {
    const std::size_t p = pc.p;
    H1 += w * ConstVecMap(pc.h1.data() + q * p, p);
    H2 += w * ConstVecMap(pc.h2.data() + q * p, p);
  }
  // Residual integral of a unit-weight subject with base covariates x (sign: as in dMhat).
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const {
    return -(x.cwiseProduct(G1 * x) - x.cwiseProduct(V1) - G2 * x + V2) -
           (x.cwiseProduct(H1) - H2);
  }
};

}  // namespace

SubjectInfluence subject_influence(const FitResult& fit) {
  const auto& rm = fit.model();
  const std::size_t T = rm.T, p = rm.p, N = rm.N();
  const double n = static_cast<double>(rm.n_clusters);
  const Pieces pc = make_pieces(fit);

  // prefix[q]: unit-weight sums over knots [0, q); suffix[q]: g-weighted sums over [q, T)
  std::vector<Sums> prefix(T + 1, Sums(p)), suffix(T + 1, Sums(p));
  for (std::size_t q = 0; q < T; ++q) {
    prefix[q + 1] = prefix[q];
    prefix[q + 1].add_interval(pc, q, 1.0);
    prefix[q + 1].add_point(pc, q, 1.0);
  }
  for (std::size_t q = T; q-- > 0;) {
    suffix[q] = suffix[q + 1];
    suffix[q].add_interval(pc, q, rm.g_int[q]);
    suffix[q].add_point(pc, q, rm.g_pt[q]);
  }

  SubjectInfluence out;
  out.eta = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(p));
  out.psi = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(p));
  out.q_path = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(p));
  out.pi_path.assign(T, 0.0);
  for (std::size_t q = 0; q < T; ++q) out.pi_path[q] = rm.risk_y[q] / n;

  for (std::size_t s = 0; s < N; ++s) {
    const auto& si = rm.subj[s];
    const Eigen::VectorXd x = rm.x.row(static_cast<Eigen::Index>(s)).transpose();
    // intervals run to qi and points to qp; the two differ in CC mode
    Sums own(p);
    own.G1 = prefix[si.qi].G1;
    own.G2 = prefix[si.qi].G2;
    own.V1 = prefix[si.qi].V1;
    own.V2 = prefix[si.qi].V2;
    own.H1 = prefix[si.qp].H1;
    own.H2 = prefix[si.qp].H2;
    Eigen::VectorXd e = own.apply(x);
    if (si.tail) e += si.inv_g * suffix[si.qi].apply(x);
    if (si.event >= 0 && si.event_w > 0.0) {
      const auto q = static_cast<std::size_t>(si.event);
      e += si.event_w * rm.basis_at(q).cwiseProduct(x - rm.mu_pt_at(q));
    }
    out.eta.row(static_cast<Eigen::Index>(s)) = e.transpose();
  }

  if (rm.mode == FitMode::cc) return out;

  // n qhat(u_c) from tail subjects with Z < u_c, accumulated in knot order.
  std::vector<std::vector<std::size_t>> tails_at(T);
  for (std::size_t s = 0; s < N; ++s) {
    const auto& si = rm.subj[s];
    if (si.tail) tails_at[static_cast<std::size_t>(si.zknot)].push_back(s);
  }
  double c0 = 0.0;
  Eigen::VectorXd c1 = Eigen::VectorXd::Zero(p);
  Eigen::MatrixXd c2 = Eigen::MatrixXd::Zero(p, p);
  for (std::size_t c = 0; c < T; ++c) {
    if (c > 0) {
      for (std::size_t s : tails_at[c - 1]) {
        const double w = rm.subj[s].inv_g;
        const Eigen::VectorXd x = rm.x.row(static_cast<Eigen::Index>(s)).transpose();
        c0 += w;
        c1 += w * x;
        c2 += w * x * x.transpose();
      }
    }
    if (c0 == 0.0) continue;
    const Sums& iv = suffix[c + 1];  // intervals after u_c
    const Sums& pt = suffix[c];      // points from u_c on
    const Eigen::VectorXd dt = iv.G1.cwiseProduct(c2).rowwise().sum() - c1.cwiseProduct(iv.V1) -
                               iv.G2 * c1 + c0 * iv.V2;
    const Eigen::VectorXd ptp = c1.cwiseProduct(pt.H1) - c0 * pt.H2;
    out.q_path.row(static_cast<Eigen::Index>(c)) = ((dt + ptp) / n).transpose();
  }

  // psi_s = I(censored at u_c) qhat/pihat (u_c) - sum_{u_c <= Z_s} qhat/pihat dLambda^c
  Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(T + 1),
                                               static_cast<Eigen::Index>(p));
  for (std::size_t c = 0; c < T; ++c) {
    Eigen::VectorXd inc = Eigen::VectorXd::Zero(p);
    if (rm.cens_d[c] > 0.0) {
      inc = out.q_path.row(static_cast<Eigen::Index>(c)).transpose() / out.pi_path[c] *
            (rm.cens_d[c] / rm.risk_y[c]);
    }
    comp.row(static_cast<Eigen::Index>(c + 1)) = comp.row(static_cast<Eigen::Index>(c)) + inc.transpose();
  }
  for (std::size_t s = 0; s < N; ++s) {
    const auto& si = rm.subj[s];
    const std::size_t upto = si.zknot >= 0 ? static_cast<std::size_t>(si.zknot) + 1 : T;
    Eigen::VectorXd v = -comp.row(static_cast<Eigen::Index>(upto)).transpose();
    if (si.censored && si.zknot >= 0) {
      const auto c = static_cast<std::size_t>(si.zknot);
      v += out.q_path.row(static_cast<Eigen::Index>(c)).transpose() / out.pi_path[c];
    }
    out.psi.row(static_cast<Eigen::Index>(s)) = v.transpose();
  }
  return out;
}

SandwichParts sandwich(const FitResult& fit, Clustering clustering) {
  const auto& rm = fit.model();
  const std::size_t p = rm.p, N = rm.N();
  SubjectInfluence si = subject_influence(fit);

  SandwichParts parts;
  parts.clustering = clustering;
  parts.q_path = std::move(si.q_path);
  parts.pi_path = std::move(si.pi_path);
  if (clustering == Clustering::by_individual) {
    parts.units = N;
    parts.eta = std::move(si.eta);
    parts.psi = std::move(si.psi);
  } else {
    parts.units = rm.n_clusters;
    parts.eta = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(parts.units), static_cast<Eigen::Index>(p));
    parts.psi = parts.eta;
    for (std::size_t s = 0; s < N; ++s) {
      const auto i = static_cast<Eigen::Index>(rm.cluster[s]);
      parts.eta.row(i) += si.eta.row(static_cast<Eigen::Index>(s));
      parts.psi.row(i) += si.psi.row(static_cast<Eigen::Index>(s));
    }
  }
  const double u = static_cast<double>(parts.units);
  const Eigen::MatrixXd nA = fit.A_tau * static_cast<double>(fit.n_clusters);
  const Eigen::MatrixXd total = parts.eta + parts.psi;
  Eigen::MatrixXd S = total.transpose() * total;
  S = 0.5 * (S + S.transpose());
  const Eigen::MatrixXd nAinv = nA.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
  Eigen::MatrixXd V = nAinv * S * nAinv;
  V = 0.5 * (V + V.transpose());
  parts.A = nA / u;
  parts.Omega = S / u;
  parts.Sigma = V * u;
  parts.se = V.diagonal().cwiseMax(0.0).cwiseSqrt();
  return parts;
}

std::vector<CoefficientRow> coefficient_table(const FitResult& fit, const SandwichParts& parts) {
  std::vector<CoefficientRow> rows;
  for (Eigen::Index l = 0; l < fit.beta.size(); ++l) {
    CoefficientRow r;
    r.name = fit.covariate_names[static_cast<std::size_t>(l)];
    r.estimate = fit.beta(l);
    r.se = parts.se(l);
    r.z = r.se > 0 ? r.estimate / r.se : 0.0;
    r.p_value = std::erfc(std::abs(r.z) / std::sqrt(2.0));
    r.lower = r.estimate - 1.959963984540054 * r.se;
    r.upper = r.estimate + 1.959963984540054 * r.se;
    rows.push_back(r);
  }
  return rows;
}

WaldTest overall_wald(const FitResult& fit, const SandwichParts& parts) {
  WaldTest w;
  const Eigen::MatrixXd V = parts.Sigma / static_cast<double>(parts.units);
  w.df = static_cast<int>(fit.beta.size());
  w.statistic = fit.beta.dot(V.ldlt().solve(fit.beta));
  w.p_value = boost::math::gamma_q(0.5 * w.df, 0.5 * std::max(0.0, w.statistic));
  return w;
}

CifPrediction predict_cif(const FitResult& fit, const CovariatePath& x) {
  if (x.size() != static_cast<std::size_t>(fit.beta.size())) {
    throw Error(ErrorCode::InvalidArgument, "covariate path has wrong dimension");
  }
  CifPrediction out;
  out.x = x;
  out.times.push_back(0.0);
  for (double t : fit.grid().knots) out.times.push_back(t);
  for (double t : out.times) {
    const double h = baseline_at(fit, t) + linear_predictor_integral(x, fit.beta, t);
    out.point.push_back(t == 0.0 ? 0.0 : 1.0 - std::exp(-h));
  }
  out.lower = out.point;
  out.upper = out.point;
  return out;
}

namespace {

double quantile(std::vector<double>& v, double prob) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

// A resample whose last times are all censored has G-hat(tau) = 0; step tau back to the
// previous observed time until the censoring estimate stays positive.
ClusteredDataset feasible_tau(ClusteredDataset rs) {
  std::vector<double> times;
  for (const auto& r : rs.subjects()) times.push_back(r.time);
  std::sort(times.begin(), times.end());
  for (int step = 0; step < 64; ++step) {
    try {
      (void)fit_censoring_km(rs);
      return rs;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::GhatZeroBeforeTau) throw;
    }
    auto it = std::lower_bound(times.begin(), times.end(), rs.tau());
    if (it == times.begin()) break;
    rs = rs.with_tau(*std::prev(it));
  }
  return rs;
}

}  // namespace

CifPrediction bootstrap_cif_band(const ClusteredDataset& ds, int cause, FitMode mode,
                                 const CovariatePath& x, const BootstrapOptions& opt) {
  if (opt.resamples < 100) throw Error(ErrorCode::InvalidArgument, "bootstrap needs B >= 100");
  if (!(opt.level > 0.0 && opt.level < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "band level must be in (0, 1)");
  }
  const FitResult base = fit(ds, cause, mode, build_grid(ds, opt.refinement));
  CifPrediction out = predict_cif(base, x);
  out.boot = opt.resamples;
  out.level = opt.level;
  const std::size_t n = ds.n_clusters(), npts = out.times.size();

  std::vector<std::vector<double>> curves(static_cast<std::size_t>(opt.resamples));
  std::vector<char> ok(static_cast<std::size_t>(opt.resamples), 0);
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int b = next++; b < opt.resamples; b = next++) {
      Rng rng = make_rng(opt.seed, 0xB007, static_cast<std::uint64_t>(b));
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      std::vector<std::size_t> idx(n);
      for (auto& i : idx) i = pick(rng);
      try {
        const ClusteredDataset rs = feasible_tau(ds.select_clusters(idx));
        const FitResult f = fit(rs, cause, mode, build_grid(rs, opt.refinement));
        std::vector<double> c(npts);
        for (std::size_t k = 0; k < npts; ++k) {
          const double t = out.times[k];
          const double h = baseline_at(f, t) + linear_predictor_integral(x, f.beta, t);
          c[k] = t == 0.0 ? 0.0 : 1.0 - std::exp(-h);
        }
        curves[static_cast<std::size_t>(b)] = std::move(c);
        ok[static_cast<std::size_t>(b)] = 1;
      } catch (const Error&) {
      }
    }
  };
  const unsigned threads = std::max(1u, opt.threads);
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  int good = 0;
  for (char c : ok) good += c;
  out.failures = opt.resamples - good;
  if (out.failures * 10 > opt.resamples) {
    throw Error(ErrorCode::BootstrapFitFailure,
                std::to_string(out.failures) + " of " + std::to_string(opt.resamples) +
                    " bootstrap refits failed");
  }
  const double alpha = 0.5 * (1.0 - opt.level);
  std::vector<double> col;
  for (std::size_t k = 0; k < npts; ++k) {
    col.clear();
    for (std::size_t b = 0; b < curves.size(); ++b)
      if (ok[b]) col.push_back(curves[b][k]);
    out.lower[k] = std::min(quantile(col, alpha), out.point[k]);
    out.upper[k] = std::max(quantile(col, 1.0 - alpha), out.point[k]);
  }
  return out;
}

}  // namespace mash
