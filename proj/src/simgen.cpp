#include "mash/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "mash/error.hpp"

namespace mash {

namespace {

constexpr std::uint64_t kClusterStream = 0x51A7;
constexpr double kTimeCap = 50.0;
constexpr long kFrailtyBudget = 1000000;
constexpr int kCovariateBudget = 10000;

double draw_uniform_open(Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double u = 0.0;
  while (u <= 0.0) u = unif(rng);
  return u;
}

double dot(std::span<const double> x, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t l = 0; l < x.size(); ++l) s += x[l] * b[l];
  return s;
}

}  // namespace

const char* to_string(SimModel m) noexcept { return m == SimModel::m1_additive ? "M1" : "M2"; }

const char* to_string(CovariateSpec c) noexcept {
  return c == CovariateSpec::uniform01 ? "uniform" : "normal-bernoulli";
}

SimModel parse_sim_model(const std::string& s) {
  if (s == "M1" || s == "m1" || s == "additive") return SimModel::m1_additive;
  if (s == "M2" || s == "m2" || s == "proportional") return SimModel::m2_proportional;
  throw Error(ErrorCode::InvalidArgument, "unknown model '" + s + "' (expected M1 or M2)");
}

CovariateSpec parse_covariate_spec(const std::string& s) {
  if (s == "uniform") return CovariateSpec::uniform01;
  if (s == "normal-bernoulli") return CovariateSpec::normal_bernoulli;
  throw Error(ErrorCode::InvalidArgument,
              "unknown covariate spec '" + s + "' (expected uniform or normal-bernoulli)");
}

void SimConfig::validate() const {
  if (n_clusters < 1 || cluster_size < 1) {
    throw Error(ErrorCode::InvalidArgument, "need at least one cluster of at least one subject");
  }
  if (!(rho > 0.0 && rho < 1.0)) throw Error(ErrorCode::InvalidArgument, "rho must lie in (0, 1)");
  if (!(theta > 0.0)) throw Error(ErrorCode::InvalidArgument, "theta must be positive");
  if (!(gamma >= 0.0)) throw Error(ErrorCode::InvalidArgument, "gamma must be non-negative");
  if (!(horizon > 0.0)) throw Error(ErrorCode::InvalidArgument, "horizon must be positive");
  if (beta1.size() != p() || beta2.size() != p()) {
    throw Error(ErrorCode::InvalidArgument, "coefficient vectors must match the covariate spec");
  }
}

SimConfig SimConfig::study1(std::size_t n, std::size_t m, double theta, double gamma) {
  SimConfig c;
  c.n_clusters = n;
  c.cluster_size = m;
  c.theta = theta;
  c.gamma = gamma;
  c.shared_covariates = true;
  return c;
}

SimConfig SimConfig::study2(SimModel model, std::size_t n, double theta, double gamma) {
  SimConfig c;
  c.n_clusters = n;
  c.cluster_size = 10;
  c.rho = 0.66;
  c.theta = theta;
  c.gamma = gamma;
  c.model = model;
  c.covariates = CovariateSpec::normal_bernoulli;
  c.beta1 = model == SimModel::m1_additive ? std::vector<double>{0.6, 1.0} : std::vector<double>{0.5, 1.0};
  c.beta2 = {0.5, 1.0};
  return c;
}

double SimDataset::censoring_fraction() const {
  if (data.size() == 0) return 0.0;
  std::size_t c = 0;
  for (const auto& r : data.subjects()) c += r.cause.censored() ? 1 : 0;
  return static_cast<double>(c) / static_cast<double>(data.size());
}

ClusteredDataset SimDataset::right_censored() const {
  std::vector<SubjectRecord> recs(data.subjects().begin(), data.subjects().end());
  for (auto& r : recs) r.ctime.reset();
  return ClusteredDataset::build(std::move(recs), data.covariate_names(), data.basis(), data.tau(),
                                 data.causes());
}

double draw_frailty(double theta, double rho, Rng& rng) {
  std::exponential_distribution<double> e(theta);
  for (long k = 0; k < kFrailtyBudget; ++k) {
    const double nu = e(rng) - 1.0 / theta;
    if (rho + nu > 0.0 && rho + nu < 1.0) return nu;
  }
  throw Error(ErrorCode::RejectionBudgetExceeded,
              "no admissible frailty in " + std::to_string(kFrailtyBudget) + " draws");
}

double frailty_acceptance(double theta, double rho) {
  const double a = std::max(0.0, 1.0 / theta - rho), b = 1.0 / theta + 1.0 - rho;
  return std::exp(-theta * a) - std::exp(-theta * b);
}

double effective_rho(double theta, double rho) {
  const double a = std::max(0.0, 1.0 / theta - rho), b = 1.0 / theta + 1.0 - rho;
  const double mass = frailty_acceptance(theta, rho);
  const double mean_e =
      ((a + 1.0 / theta) * std::exp(-theta * a) - (b + 1.0 / theta) * std::exp(-theta * b)) / mass;
  return rho + mean_e - 1.0 / theta;
}

double cif(SimModel model, int cause, double t, double xb, double nu, double rho) {
  const double r = rho + nu;
  const double s = std::isinf(t) ? 1.0 : -std::expm1(-t);  // 1 - e^{-t}
  if (model == SimModel::m1_additive) {
    if (cause == 1) return 1.0 - (1.0 - r * s) * std::exp(-xb * s);
    const double inner = std::isinf(t) ? 0.0 : std::exp(-t - xb * s);
    return (1.0 - r) * std::exp(-xb) * (1.0 - inner);
  }
  if (cause == 1) return 1.0 - std::pow(1.0 - r * s, std::exp(-xb * s));
  // verbatim: {1 - r}^{exp(-xb)} [1 - exp{-t xb (1 - e^{-t})}]
  double inner;
  if (std::isinf(t)) inner = xb > 0.0 ? 0.0 : (xb == 0.0 ? 1.0 : std::numeric_limits<double>::infinity());
  else inner = std::exp(-t * xb * s);
  return std::pow(1.0 - r, std::exp(-xb)) * (1.0 - inner);
}

double cause1_probability(SimModel model, double xb1, double nu, double rho) {
  const double p = cif(model, 1, std::numeric_limits<double>::infinity(), xb1, nu, rho);
  if (!(p >= 0.0 && p <= 1.0)) {
    throw Error(ErrorCode::InvalidProbability,
                "cause-1 probability " + std::to_string(p) + " outside [0, 1]");
  }
  return p;
}

double conditional_inverse(SimModel model, int cause, double u, double xb, double nu, double rho) {
  const double total = cif(model, cause, std::numeric_limits<double>::infinity(), xb, nu, rho);
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw Error(ErrorCode::InvalidProbability, "cause-" + std::to_string(cause) + " CIF is improper");
  }
  if (u <= 0.0) return 0.0;
  auto f = [&](double t) { return cif(model, cause, t, xb, nu, rho) / total; };
  double hi = 1.0;
  while (f(hi) < u) {
    if (hi >= kTimeCap) {
      throw Error(ErrorCode::RootNotBracketed, "F-tilde(50) is below u = " + std::to_string(u));
    }
    hi = std::min(kTimeCap, 2.0 * hi);
  }
  double lo = 0.0;
  while (hi - lo > 1e-10) {
    const double mid = 0.5 * (lo + hi);
    if (f(mid) < u) lo = mid;
    else hi = mid;
  }
  return 0.5 * (lo + hi);
}

double admissible_floor(const SimConfig& config) {
  if (config.model != SimModel::m1_additive) return -std::numeric_limits<double>::infinity();
  return -std::max(0.0, config.rho - 1.0 / config.theta);
}

double simulation_tau(std::span<const SubjectRecord> records) {
  std::vector<double> t;
  t.reserve(records.size());
  for (const auto& r : records) t.push_back(r.time);
  if (t.empty()) throw Error(ErrorCode::InvalidArgument, "no records");
  const std::size_t k = std::min<std::size_t>(10, t.size());
  std::nth_element(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(k - 1), t.end(), std::greater<>());
  return t[k - 1];
}

SimDataset generate(const SimConfig& config) {
  config.validate();
  const std::size_t p = config.p();
  SimDataset out;
  std::vector<SubjectRecord> recs;
  recs.reserve(config.n_clusters * config.cluster_size);
  std::vector<double> x(p);
  for (std::size_t i = 0; i < config.n_clusters; ++i) {
    Rng rng = make_rng(config.seed, kClusterStream, config.replicate, i);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::exponential_distribution<double> cens(config.gamma > 0.0 ? config.gamma : 1.0);
    const double nu = draw_frailty(config.theta, config.rho, rng);
    const double floor = admissible_floor(config);
    double p1 = 0.0;
    for (std::size_t j = 0; j < config.cluster_size; ++j) {
      for (int attempt = 0; j == 0 || !config.shared_covariates; ++attempt) {
        if (attempt == kCovariateBudget) {
          throw Error(ErrorCode::InvalidProbability,
                      "no admissible covariate draw in " + std::to_string(kCovariateBudget) + " attempts");
        }
        if (config.covariates == CovariateSpec::uniform01) {
          x[0] = unif(rng);
        } else {
          x[0] = normal(rng);
          x[1] = unif(rng) < 0.5 ? 1.0 : 0.0;
        }
        const double xb1 = dot(x, config.beta1);
        if (xb1 >= floor) {
          p1 = cif(config.model, 1, std::numeric_limits<double>::infinity(), xb1, nu, config.rho);
          if (p1 >= 0.0 && p1 <= 1.0) break;
        }
        ++out.redraws;
      }
      const int eps = unif(rng) <= p1 ? 1 : 2;
      const double xb = dot(x, eps == 1 ? config.beta1 : config.beta2);
      const double u = draw_uniform_open(rng);
      double t;
      try {
        t = conditional_inverse(config.model, eps, u, xb, nu, config.rho);
      } catch (const Error& e) {
        if (eps == 1) throw;
        // improper or unbracketed cause-2 law: unit exponential, or the time cap
        t = e.code() == ErrorCode::InvalidProbability ? -std::log1p(-u) : kTimeCap;
        ++out.fallbacks;
      }
      if (!(t > 0.0)) t = std::numeric_limits<double>::min();
      double c = config.gamma > 0.0 ? cens(rng) : std::numeric_limits<double>::infinity();
      c = std::min(c, config.horizon);
      SubjectRecord r;
      r.cluster_id = "c" + std::to_string(i + 1);
      r.time = std::min(t, c);
      r.cause = CauseCode{t <= c ? eps : 0};
      r.x = x;
      if (config.record_ctime && std::isfinite(c)) r.ctime = c;
      recs.push_back(std::move(r));
      out.true_cause.push_back(eps);
      out.true_time.push_back(t);
      out.ctime.push_back(c);
      out.frailty.push_back(nu);
    }
  }
  std::vector<std::string> names;
  if (p == 1) names = {"x"};
  else names = {"x1", "x2"};
  const double tau = simulation_tau(recs);
  out.data = ClusteredDataset::build(std::move(recs), names, std::vector<Basis>(p, Basis::exp_decay),
                                     tau, 2);
  return out;
}

void save_sim_dataset(std::ostream& out, const SimDataset& sim,
                      std::span<const std::string> comment_lines) {
  std::vector<double> cause(sim.true_cause.begin(), sim.true_cause.end());
  const std::vector<ExtraColumn> extra{{"true_time", sim.true_time},
                                       {"true_cause", cause},
                                       {"frailty", sim.frailty}};
  save_dataset(out, sim.data, comment_lines, extra);
}

}  // namespace mash
