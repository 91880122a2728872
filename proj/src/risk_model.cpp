#include "mash/detail/risk_model.hpp"

#include <algorithm>

#include "mash/error.hpp"

namespace mash::detail {

void basis_integrals(std::span<const Basis> basis, double a, double b, int panels, double* b1,
                     double* b2) {
  const std::size_t p = basis.size();
  std::fill(b1, b1 + p, 0.0);
  std::fill(b2, b2 + p * p, 0.0);
  if (!(b > a)) return;
  const double h = (b - a) / panels;
  std::vector<double> v(p);
  for (int k = 0; k <= panels; ++k) {
    const double t = k == panels ? b : a + k * h;
    const double w = (k == 0 || k == panels) ? 0.5 * h : h;
    for (std::size_t l = 0; l < p; ++l) v[l] = basis_value(basis[l], t);
    for (std::size_t l = 0; l < p; ++l) {
      b1[l] += w * v[l];
      for (std::size_t m = 0; m < p; ++m) b2[l + m * p] += w * v[l] * v[m];
    }
  }
}

namespace {

std::size_t count_le(const std::vector<double>& knots, double t) {
  return static_cast<std::size_t>(std::upper_bound(knots.begin(), knots.end(), t) - knots.begin());
}

std::size_t count_lt(const std::vector<double>& knots, double t) {
  return static_cast<std::size_t>(std::lower_bound(knots.begin(), knots.end(), t) - knots.begin());
}

// Moments of unit-weight members (suffix over their last index) plus tail members
// (prefix from their first tail index) scaled by g. Fills m0, m1 (T*p), m2 (T*p*p, optional).
void accumulate(const RiskModel& rm, bool points, const std::vector<double>& g,
                std::vector<double>& m0, std::vector<double>& m1, std::vector<double>* m2) {
  const std::size_t T = rm.T, p = rm.p, pp = p * p;
  std::vector<double> i0(T + 1, 0.0), t0(T + 1, 0.0);
  std::vector<double> i1((T + 1) * p, 0.0), t1((T + 1) * p, 0.0);
  std::vector<double> i2, t2;
  if (m2) {
    i2.assign((T + 1) * pp, 0.0);
    t2.assign((T + 1) * pp, 0.0);
  }
  for (std::size_t s = 0; s < rm.N(); ++s) {
    const auto& si = rm.subj[s];
    const std::size_t last = points ? si.qp : si.qi;
    const auto x = rm.x.row(s);
    auto add = [&](std::vector<double>& a0, std::vector<double>& a1, std::vector<double>& a2,
                   std::size_t q, double w) {
      a0[q] += w;
      for (std::size_t l = 0; l < p; ++l) a1[q * p + l] += w * x(l);
      if (m2) {
        for (std::size_t m = 0; m < p; ++m)
          for (std::size_t l = 0; l < p; ++l) a2[q * pp + l + m * p] += w * x(l) * x(m);
      }
    };
    if (last > 0) add(i0, i1, i2, last - 1, 1.0);
    if (si.tail && last < T) add(t0, t1, t2, last, si.inv_g);
  }
  // indicator part: suffix sums; tail part: prefix sums
  for (std::size_t q = T; q-- > 0;) {
    if (q + 1 < T) {
      i0[q] += i0[q + 1];
      for (std::size_t l = 0; l < p; ++l) i1[q * p + l] += i1[(q + 1) * p + l];
      if (m2)
        for (std::size_t e = 0; e < pp; ++e) i2[q * pp + e] += i2[(q + 1) * pp + e];
    }
  }
  for (std::size_t q = 1; q < T; ++q) {
    t0[q] += t0[q - 1];
    for (std::size_t l = 0; l < p; ++l) t1[q * p + l] += t1[(q - 1) * p + l];
    if (m2)
      for (std::size_t e = 0; e < pp; ++e) t2[q * pp + e] += t2[(q - 1) * pp + e];
  }
  m0.assign(T, 0.0);
  m1.assign(T * p, 0.0);
  if (m2) m2->assign(T * pp, 0.0);
  for (std::size_t q = 0; q < T; ++q) {
    m0[q] = i0[q] + g[q] * t0[q];
    for (std::size_t l = 0; l < p; ++l) m1[q * p + l] = i1[q * p + l] + g[q] * t1[q * p + l];
    if (m2)
      for (std::size_t e = 0; e < pp; ++e) (*m2)[q * pp + e] = i2[q * pp + e] + g[q] * t2[q * pp + e];
  }
}

}  // namespace

RiskModel build_risk_model(const ClusteredDataset& ds, const CensoringModel* cm, int cause,
                           FitMode mode, const TimeGrid& grid) {
  if (cause < 1 || cause > ds.causes()) {
    throw Error(ErrorCode::InvalidArgument, "cause " + std::to_string(cause) + " not in 1.." +
                                                std::to_string(ds.causes()));
  }
  if (mode == FitMode::cc && !ds.censoring_observed()) {
    throw Error(ErrorCode::CensoringTimeUnavailable,
                "censoring-complete mode needs a recorded censoring time for every subject");
  }
  if (mode == FitMode::ipcw && cm == nullptr) {
    throw Error(ErrorCode::InvalidArgument, "IPCW mode requires a censoring model");
  }

  RiskModel rm;
  rm.grid = grid;
  rm.T = grid.size();
  rm.p = ds.p();
  rm.n_clusters = ds.n_clusters();
  rm.cause = cause;
  rm.mode = mode;
  rm.basis = ds.basis();
  const std::size_t T = rm.T, p = rm.p, pp = p * p, N = ds.size();
  const auto& knots = grid.knots;
  const double tau = grid.tau();

  rm.x.resize(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(p));
  rm.cluster.resize(N);
  rm.offsets.assign(ds.cluster_offsets().begin(), ds.cluster_offsets().end());
  rm.subj.resize(N);

  rm.g_int.assign(T, 1.0);
  rm.g_pt.assign(T, 1.0);
  if (mode == FitMode::ipcw) {
    for (std::size_t q = 0; q < T; ++q) {
      rm.g_int[q] = q == 0 ? 1.0 : cm->survival(knots[q - 1]);
      rm.g_pt[q] = cm->survival(knots[q]);
    }
  }

  for (std::size_t s = 0; s < N; ++s) {
    const auto& r = ds.subject(s);
    for (std::size_t l = 0; l < p; ++l) rm.x(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(l)) = r.x[l];
    rm.cluster[s] = ds.cluster_of(s);
    auto& si = rm.subj[s];
    const bool is_k = r.cause.value == cause;
    const bool within = r.time <= tau;
    si.censored = r.cause.censored();
    si.cause_k = is_k;
    if (within) si.zknot = grid.find(r.time);

    if (mode == FitMode::ipcw) {
      const std::size_t upto = within ? static_cast<std::size_t>(si.zknot) + 1 : T;
      si.qi = si.qp = upto;
      if (within && !is_k && !si.censored && upto < T) {
        const double gz = cm->survival(r.time);
        if (gz <= cm->floor()) throw Error(ErrorCode::DivisionByZeroGhat, "G-hat(Z) is zero");
        si.tail = true;
        si.inv_g = 1.0 / gz;
      }
      if (is_k && within) {
        si.event = si.zknot;
        si.event_w = 1.0;
      }
    } else {
      const double c = *r.ctime;
      if (is_k) {
        si.qi = count_le(knots, r.time);
        si.qp = c > r.time ? count_le(knots, r.time) : count_lt(knots, c);
        if (within && c > r.time) {
          si.event = si.zknot;
          si.event_w = 1.0;
        }
      } else {
        si.qi = count_le(knots, c);
        si.qp = count_lt(knots, c);
      }
    }
  }

  // interval moments
  std::vector<double> m1, m2;
  accumulate(rm, false, rm.g_int, rm.m0, m1, &m2);
  rm.mu.assign(T * p, 0.0);
  rm.c2.assign(T * pp, 0.0);
  for (std::size_t q = 0; q < T; ++q) {
    const double w = rm.m0[q];
    if (w <= 0.0) continue;
    for (std::size_t l = 0; l < p; ++l) rm.mu[q * p + l] = m1[q * p + l] / w;
    for (std::size_t m = 0; m < p; ++m)
      for (std::size_t l = 0; l < p; ++l)
        rm.c2[q * pp + l + m * p] = m2[q * pp + l + m * p] - m1[q * p + l] * m1[q * p + m] / w;
  }

  // point moments
  std::vector<double> m1p;
  accumulate(rm, true, rm.g_pt, rm.m0_pt, m1p, nullptr);
  rm.mu_pt.assign(T * p, 0.0);
  for (std::size_t q = 0; q < T; ++q) {
    if (rm.m0_pt[q] <= 0.0) continue;
    for (std::size_t l = 0; l < p; ++l) rm.mu_pt[q * p + l] = m1p[q * p + l] / rm.m0_pt[q];
  }

  // basis values and integrals
  rm.basis_pt.assign(T * p, 0.0);
  rm.b1.assign(T * p, 0.0);
  rm.b2.assign(T * pp, 0.0);
  for (std::size_t q = 0; q < T; ++q) {
    for (std::size_t l = 0; l < p; ++l) rm.basis_pt[q * p + l] = basis_value(rm.basis[l], knots[q]);
    const double a = q == 0 ? 0.0 : knots[q - 1];
    basis_integrals(rm.basis, a, knots[q], grid.refinement, rm.b1.data() + q * p,
                    rm.b2.data() + q * pp);
  }

  // cause-k jumps
  rm.event_w.assign(T, 0.0);
  rm.event_x.assign(T * p, 0.0);
  for (std::size_t s = 0; s < N; ++s) {
    const auto& si = rm.subj[s];
    if (si.event < 0 || si.event_w == 0.0) continue;
    const auto q = static_cast<std::size_t>(si.event);
    rm.event_w[q] += si.event_w;
    for (std::size_t l = 0; l < p; ++l) rm.event_x[q * p + l] += si.event_w * rm.x(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(l));
  }

  // censoring counting process on the grid
  rm.cens_d.assign(T, 0.0);
  rm.risk_y.assign(T, 0.0);
  std::vector<double> times(N);
  for (std::size_t s = 0; s < N; ++s) {
    times[s] = ds.subject(s).time;
    const auto& si = rm.subj[s];
    if (si.censored && si.zknot >= 0) rm.cens_d[static_cast<std::size_t>(si.zknot)] += 1.0;
  }
  std::sort(times.begin(), times.end());
  for (std::size_t q = 0; q < T; ++q) {
    auto it = std::lower_bound(times.begin(), times.end(), knots[q]);
    rm.risk_y[q] = static_cast<double>(times.end() - it);
  }
  return rm;
}

}  // namespace mash::detail
