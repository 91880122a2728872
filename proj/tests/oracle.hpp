#pragma once

// Dense brute-force reference computations, written directly from the estimator
// definitions. Deliberately slow: every weight, mean and integral is evaluated
// subject by subject at each time point, with no prefix sums or factorizations.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "mash/dataset.hpp"
#include "mash/fitter.hpp"

namespace oracle {

using mash::ClusteredDataset;
using mash::FitMode;

// Product-limit estimate of P(C >= t) evaluated right-continuously at t.
inline double km(const ClusteredDataset& ds, double t) {
  std::vector<double> cens;
  for (const auto& r : ds.subjects())
    if (r.cause.censored()) cens.push_back(r.time);
  std::sort(cens.begin(), cens.end());
  cens.erase(std::unique(cens.begin(), cens.end()), cens.end());
  double g = 1.0;
  for (double u : cens) {
    if (u > t) break;
    double d = 0, y = 0;
    for (const auto& r : ds.subjects()) {
      if (r.time >= u) y += 1;
      if (r.time == u && r.cause.censored()) d += 1;
    }
    g *= 1.0 - d / y;
  }
  return g;
}

inline double km_hazard(const ClusteredDataset& ds, double t) {
  std::vector<double> cens;
  for (const auto& r : ds.subjects())
    if (r.cause.censored()) cens.push_back(r.time);
  std::sort(cens.begin(), cens.end());
  cens.erase(std::unique(cens.begin(), cens.end()), cens.end());
  double h = 0.0;
  for (double u : cens) {
    if (u > t) break;
    double d = 0, y = 0;
    for (const auto& r : ds.subjects()) {
      if (r.time >= u) y += 1;
      if (r.time == u && r.cause.censored()) d += 1;
    }
    h += d / y;
  }
  return h;
}

struct Problem {
  const ClusteredDataset& ds;
  int cause;
  FitMode mode;
  int panels;
  std::vector<double> knots;

  Problem(const ClusteredDataset& d, int k, FitMode m, int q) : ds(d), cause(k), mode(m), panels(q) {
    for (const auto& r : ds.subjects()) {
      if (r.time <= ds.tau()) knots.push_back(r.time);
      if (r.ctime && *r.ctime <= ds.tau()) knots.push_back(*r.ctime);
    }
    knots.push_back(ds.tau());
    std::sort(knots.begin(), knots.end());
    knots.erase(std::unique(knots.begin(), knots.end()), knots.end());
    if (ds.all_constant()) panels = 1;
  }

  std::size_t N() const { return ds.size(); }
  std::size_t p() const { return ds.p(); }
  double n() const { return static_cast<double>(ds.n_clusters()); }

  Eigen::VectorXd X(std::size_t s, double t) const {
    Eigen::VectorXd v(p());
    for (std::size_t l = 0; l < p(); ++l) v(l) = ds.path(s).at(l, t);
    return v;
  }

  // omega(t) * Y^k(t)
  double w(std::size_t s, double t) const {
    const auto& r = ds.subject(s);
    const bool is_k = r.cause.value == cause;
    const double y = (is_k && r.time < t) ? 0.0 : 1.0;
    if (mode == FitMode::cc) return (*r.ctime > t ? 1.0 : 0.0) * y;
    const bool alive = !r.cause.censored() || t <= r.time;
    if (!alive) return 0.0;
    return y * km(ds, t) / km(ds, std::min(r.time, t));
  }

  double dN(std::size_t s, double t) const {
    const auto& r = ds.subject(s);
    return (r.cause.value == cause && r.time == t) ? 1.0 : 0.0;
  }

  // Weighted mean of X(t) using the weights in force at time `at`.
  Eigen::VectorXd xhat(double t, double at) const {
    Eigen::VectorXd num = Eigen::VectorXd::Zero(p());
    double den = 0.0;
    for (std::size_t s = 0; s < N(); ++s) {
      const double ws = w(s, at);
      num += ws * X(s, t);
      den += ws;
    }
    return den > 0 ? Eigen::VectorXd(num / den) : Eigen::VectorXd::Zero(p());
  }

  double wsum(double at) const {
    double den = 0.0;
    for (std::size_t s = 0; s < N(); ++s) den += w(s, at);
    return den;
  }

  // Trapezoid nodes of the open interval ending at knot q.
  std::vector<std::pair<double, double>> nodes(std::size_t q) const {
    const double a = q == 0 ? 0.0 : knots[q - 1];
    const double b = knots[q];
    std::vector<std::pair<double, double>> out;
    const double h = (b - a) / panels;
    for (int k = 0; k <= panels; ++k) {
      const double t = k == panels ? b : a + k * h;
      out.emplace_back(t, (k == 0 || k == panels) ? 0.5 * h : h);
    }
    return out;
  }
  double mid(std::size_t q) const { return 0.5 * ((q == 0 ? 0.0 : knots[q - 1]) + knots[q]); }

  // U(beta, u_qend) = sum_s int {X - Xhat} omega {dN - Y X'beta dt}
  Eigen::VectorXd U(const Eigen::VectorXd& beta, std::size_t qend) const {
    Eigen::VectorXd u = Eigen::VectorXd::Zero(p());
    for (std::size_t q = 0; q <= qend; ++q) {
      const double m = mid(q);
      for (auto [t, h] : nodes(q)) {
        const Eigen::VectorXd xh = xhat(t, m);
        for (std::size_t s = 0; s < N(); ++s) {
          const double ws = w(s, m);
          if (ws == 0.0) continue;
          const Eigen::VectorXd xs = X(s, t);
          u -= h * ws * (xs - xh) * xs.dot(beta);
        }
      }
      const double t = knots[q];
      const Eigen::VectorXd xh = xhat(t, t);
      for (std::size_t s = 0; s < N(); ++s) {
        if (dN(s, t) == 0.0) continue;
        u += w(s, t) * (X(s, t) - xh);
      }
    }
    return u;
  }

  // Root of U(., tau) by Newton iterations with a central-difference Jacobian.
  Eigen::VectorXd beta_root() const {
    const std::size_t T = knots.size() - 1;
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p());
    for (int it = 0; it < 20; ++it) {
      const Eigen::VectorXd u0 = U(beta, T);
      Eigen::MatrixXd J(p(), p());
      for (std::size_t l = 0; l < p(); ++l) {
        Eigen::VectorXd e = Eigen::VectorXd::Zero(p());
        e(l) = 1e-3;
        J.col(l) = (U(beta + e, T) - U(beta - e, T)) / 2e-3;
      }
      const Eigen::VectorXd step = J.fullPivLu().solve(-u0);
      beta += step;
      if (step.norm() < 1e-14 * (1.0 + beta.norm())) break;
    }
    return beta;
  }

  // n^{-1} sum int omega Y (X - Xhat)^{x2} dt
  Eigen::MatrixXd A(std::size_t qend) const {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p(), p());
    for (std::size_t q = 0; q <= qend; ++q) {
      const double m = mid(q);
      for (auto [t, h] : nodes(q)) {
        const Eigen::VectorXd xh = xhat(t, m);
        for (std::size_t s = 0; s < N(); ++s) {
          const Eigen::VectorXd d = X(s, t) - xh;
          a += h * w(s, m) * d * d.transpose();
        }
      }
    }
    return a / n();
  }

  double jump(std::size_t q) const {
    const double t = knots[q];
    double num = 0;
    for (std::size_t s = 0; s < N(); ++s) num += w(s, t) * dN(s, t);
    const double den = wsum(t);
    return den > 0 ? num / den : 0.0;
  }

  // Lambda0 at knot q.
  double baseline(const Eigen::VectorXd& beta, std::size_t qend) const {
    double v = 0.0;
    for (std::size_t q = 0; q <= qend; ++q) {
      const double m = mid(q);
      for (auto [t, h] : nodes(q)) v -= h * xhat(t, m).dot(beta);
      v += jump(q);
    }
    return v;
  }

  // int_0^tau {X_s - Xhat} omega dMhat_s
  Eigen::VectorXd eta(std::size_t s, const Eigen::VectorXd& beta) const {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(p());
    for (std::size_t q = 0; q < knots.size(); ++q) {
      const double m = mid(q);
      const double ws = w(s, m);
      if (ws != 0.0) {
        for (auto [t, h] : nodes(q)) {
          const Eigen::VectorXd xh = xhat(t, m);
          const Eigen::VectorXd xs = X(s, t);
          // dMhat = -Y {dLambda0 + X'beta dt}, dLambda0 = -Xhat'beta dt on the interval
          e -= h * ws * (xs - xh) * (xs - xh).dot(beta);
        }
      }
      const double t = knots[q];
      const double wp = w(s, t);
      if (wp != 0.0) e += wp * (X(s, t) - xhat(t, t)) * (dN(s, t) - jump(q));
    }
    return e;
  }

  // qhat(u) = -n^{-1} sum_s int {X - Xhat} omega I(Z_s < u <= t) dMhat_s(t)
  Eigen::VectorXd qhat(double u, const Eigen::VectorXd& beta) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(p());
    for (std::size_t s = 0; s < N(); ++s) {
      if (!(ds.subject(s).time < u)) continue;
      for (std::size_t q = 0; q < knots.size(); ++q) {
        const double a = q == 0 ? 0.0 : knots[q - 1];
        const double m = mid(q);
        const double ws = w(s, m);
        if (ws != 0.0 && a >= u) {
          for (auto [t, h] : nodes(q)) {
            const Eigen::VectorXd xh = xhat(t, m);
            const Eigen::VectorXd xs = X(s, t);
            out += h * ws * (xs - xh) * (xs - xh).dot(beta);
          }
        }
        const double t = knots[q];
        const double wp = w(s, t);
        if (wp != 0.0 && t >= u) out -= wp * (X(s, t) - xhat(t, t)) * (dN(s, t) - jump(q));
      }
    }
    return out / n();
  }

  // int_0^tau qhat / pihat dMhat^c_s
  Eigen::VectorXd psi(std::size_t s, const Eigen::VectorXd& beta) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(p());
    if (mode == FitMode::cc) return out;
    const auto& r = ds.subject(s);
    for (double u : knots) {
      double d = 0, y = 0;
      for (const auto& o : ds.subjects()) {
        if (o.time >= u) y += 1;
        if (o.time == u && o.cause.censored()) d += 1;
      }
      if (d == 0) continue;
      const double pi = y / n();
      const double dnc = (r.time == u && r.cause.censored()) ? 1.0 : 0.0;
      const double yc = r.time >= u ? 1.0 : 0.0;
      out += qhat(u, beta) / pi * (dnc - yc * d / y);
    }
    return out;
  }
};

// Cumulative residual class with f(X) = X (cov) or 1, indicator on base values x, up to time t.
struct Residuals {
  Eigen::MatrixXd q;  // n x d, Q-hat_i(t, x)
  Eigen::VectorXd w;  // W(t, x)
};

inline Residuals residuals(const Problem& pr, const Eigen::VectorXd& beta, double t,
                           const std::vector<double>& x, bool cov) {
  const auto& ds = pr.ds;
  const std::size_t N = pr.N(), p = pr.p();
  const Eigen::Index d = cov ? static_cast<Eigen::Index>(p) : 1;
  std::vector<bool> sel(N, true);
  for (std::size_t s = 0; s < N; ++s)
    for (std::size_t l = 0; l < p; ++l)
      if (!(ds.subject(s).x[l] <= x[l])) sel[s] = false;
  auto phi = [&](std::size_t s, double u) {
    if (cov) return pr.X(s, u);
    return Eigen::VectorXd(Eigen::VectorXd::Ones(1));
  };
  Residuals out;
  out.q = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ds.n_clusters()), d);
  out.w = Eigen::VectorXd::Zero(d);
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(d, static_cast<Eigen::Index>(p));
  for (std::size_t q = 0; q < pr.knots.size(); ++q) {
    const double a = q == 0 ? 0.0 : pr.knots[q - 1];
    const double b = std::min(pr.knots[q], t);
    if (b > a) {
      const double m = pr.mid(q);
      const double den = pr.wsum(m);
      const double step = (b - a) / pr.panels;
      for (int k = 0; k <= pr.panels && den > 0; ++k) {
        const double u = k == pr.panels ? b : a + k * step;
        const double hw = (k == 0 || k == pr.panels) ? 0.5 * step : step;
        const Eigen::VectorXd xh = pr.xhat(u, m);
        Eigen::VectorXd g = Eigen::VectorXd::Zero(d);
        for (std::size_t s = 0; s < N; ++s)
          if (sel[s]) g += pr.w(s, m) * phi(s, u);
        g /= den;
        for (std::size_t s = 0; s < N; ++s) {
          const double ws = pr.w(s, m);
          if (ws == 0.0) continue;
          const Eigen::VectorXd dev = pr.X(s, u) - xh;
          const double dm = -hw * ws * dev.dot(beta);
          const double ind = sel[s] ? 1.0 : 0.0;
          out.q.row(static_cast<Eigen::Index>(ds.cluster_of(s))) += ((ind * phi(s, u) - g) * dm).transpose();
          if (sel[s]) {
            out.w += phi(s, u) * dm;
            h += hw * ws * phi(s, u) * dev.transpose();
          }
        }
      }
    }
    if (!(pr.knots[q] <= t)) break;
    const double u = pr.knots[q];
    const double den = pr.wsum(u);
    if (den <= 0) continue;
    Eigen::VectorXd g = Eigen::VectorXd::Zero(d);
    for (std::size_t s = 0; s < N; ++s)
      if (sel[s]) g += pr.w(s, u) * phi(s, u);
    g /= den;
    const double jq = pr.jump(q);
    for (std::size_t s = 0; s < N; ++s) {
      const double ws = pr.w(s, u);
      if (ws == 0.0) continue;
      const double dm = ws * (pr.dN(s, u) - jq);
      const double ind = sel[s] ? 1.0 : 0.0;
      out.q.row(static_cast<Eigen::Index>(ds.cluster_of(s))) += ((ind * phi(s, u) - g) * dm).transpose();
      if (sel[s]) out.w += phi(s, u) * dm;
    }
  }
  Eigen::MatrixXd eta = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ds.n_clusters()), static_cast<Eigen::Index>(p));
  for (std::size_t s = 0; s < N; ++s) eta.row(static_cast<Eigen::Index>(ds.cluster_of(s))) += pr.eta(s, beta).transpose();
  const Eigen::MatrixXd nA = pr.A(pr.knots.size() - 1) * pr.n();
  out.q -= eta * (h * nA.inverse()).transpose();
  return out;
}

// Classical Lin-Ying additive hazards fit for uncensored single-cause data with
// constant covariates, and its cluster-robust sandwich (variance of sqrt(n)(b - beta)).
struct LinYing {
  Eigen::VectorXd beta;
  Eigen::MatrixXd sigma;
};

inline LinYing lin_ying(const ClusteredDataset& ds) {
  const std::size_t N = ds.size(), p = ds.p();
  const double n = static_cast<double>(ds.n_clusters());
  std::vector<double> times;
  for (const auto& r : ds.subjects())
    if (r.time <= ds.tau()) times.push_back(r.time);
  times.push_back(ds.tau());
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  auto x = [&](std::size_t s) {
    Eigen::VectorXd v(p);
    for (std::size_t l = 0; l < p; ++l) v(l) = ds.subject(s).x[l];
    return v;
  };
  auto xbar = [&](double t) {
    Eigen::VectorXd num = Eigen::VectorXd::Zero(p);
    double den = 0;
    for (std::size_t s = 0; s < N; ++s)
      if (ds.subject(s).time >= t) {
        num += x(s);
        den += 1;
      }
    return Eigen::VectorXd(num / den);
  };
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
  double prev = 0.0;
  for (double t : times) {
    const Eigen::VectorXd xb = xbar(t);
    for (std::size_t s = 0; s < N; ++s) {
      const auto& r = ds.subject(s);
      if (r.time >= t) {
        const Eigen::VectorXd d = x(s) - xb;
        a += (t - prev) * d * d.transpose();
      }
      if (r.time == t && r.cause.value == 1) b += x(s) - xb;
    }
    prev = t;
  }
  LinYing out;
  out.beta = a.ldlt().solve(b);
  // cluster scores with the Breslow-type baseline
  std::vector<Eigen::VectorXd> score(ds.n_clusters(), Eigen::VectorXd::Zero(p));
  prev = 0.0;
  for (double t : times) {
    const Eigen::VectorXd xb = xbar(t);
    double events = 0, risk = 0;
    for (std::size_t s = 0; s < N; ++s) {
      if (ds.subject(s).time >= t) risk += 1;
      if (ds.subject(s).time == t && ds.subject(s).cause.value == 1) events += 1;
    }
    const double dl = events / risk;
    for (std::size_t s = 0; s < N; ++s) {
      const auto& r = ds.subject(s);
      if (r.time < t) continue;
      const Eigen::VectorXd d = x(s) - xb;
      // dM = dN - {dLambda + x'beta dt} with dLambda = dl - xbar'beta dt
      const double dm = ((r.time == t && r.cause.value == 1) ? 1.0 : 0.0) - dl -
                        (x(s) - xb).dot(out.beta) * (t - prev);
      score[ds.cluster_of(s)] += d * dm;
    }
    prev = t;
  }
  Eigen::MatrixXd omega = Eigen::MatrixXd::Zero(p, p);
  for (const auto& sc : score) omega += sc * sc.transpose();
  omega /= n;
  const Eigen::MatrixXd ainv = (a / n).inverse();
  out.sigma = ainv * omega * ainv;
  return out;
}

}  // namespace oracle
