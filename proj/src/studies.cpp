#include "mash/studies.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

#include "mash/error.hpp"
#include "mash/fitter.hpp"
#include "mash/rng.hpp"
#include "mash/variance.hpp"

namespace mash {

namespace {

constexpr std::uint64_t kGofStream = 0x60F5;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double normal_quantile(double level) {
  return boost::math::quantile(boost::math::normal(), 0.5 + 0.5 * level);
}

}  // namespace

unsigned default_workers() {
  if (const char* env = std::getenv("MASH_WORKERS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void for_each_replicate(int replicates, unsigned workers, const std::function<void(int)>& body) {
  std::atomic<int> next{0};
  std::exception_ptr first;
  std::mutex mu;
  auto run = [&] {
    for (int r = next++; r < replicates; r = next++) {
      try {
        body(r);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!first) first = std::current_exception();
        next = replicates;
      }
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max(1, replicates))));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n; ++t) pool.emplace_back(run);
  run();
  for (auto& th : pool) th.join();
  if (first) std::rethrow_exception(first);
}

const char* to_string(Arm arm) noexcept {
  switch (arm) {
    case Arm::crc: return "CRC";
    case Arm::ccc: return "CCC";
    case Arm::ucrc: return "UCRC";
    case Arm::uccc: return "UCCC";
  }
  return "CRC";
}

CoverageSummary run_coverage_study(const SimConfig& config, int replicates, unsigned workers,
                                   std::size_t coefficient, double level) {
  config.validate();
  if (replicates < 1) throw Error(ErrorCode::InvalidArgument, "need at least one replicate");
  if (coefficient >= config.p()) throw Error(ErrorCode::InvalidArgument, "coefficient index out of range");
  if (!config.record_ctime) {
    throw Error(ErrorCode::InvalidArgument, "coverage study needs censoring times for the CC arms");
  }
  const std::size_t R = static_cast<std::size_t>(replicates);
  const std::array<Arm, 4> arms{Arm::crc, Arm::ccc, Arm::ucrc, Arm::uccc};
  // per replicate: estimate and SE per arm, censoring share, success flag
  std::vector<std::array<double, 4>> est(R), se(R);
  std::vector<double> cens(R, kNaN);
  std::vector<char> ok(R, 0);

  for_each_replicate(replicates, workers, [&](int r) {
    SimConfig c = config;
    c.replicate = static_cast<std::uint64_t>(r);
    try {
      const SimDataset sim = generate(c);
      const ClusteredDataset rc = sim.right_censored();
      const FitResult f_rc = fit(rc, 1, FitMode::ipcw);
      const FitResult f_cc = fit(sim.data, 1, FitMode::cc);
      const auto l = static_cast<Eigen::Index>(coefficient);
      const FitResult* fits[4] = {&f_rc, &f_cc, &f_rc, &f_cc};
      for (std::size_t a = 0; a < 4; ++a) {
        const Clustering cl = a < 2 ? Clustering::by_cluster : Clustering::by_individual;
        const SandwichParts sw = sandwich(*fits[a], cl);
        est[static_cast<std::size_t>(r)][a] = fits[a]->beta(l);
        se[static_cast<std::size_t>(r)][a] = sw.se(l);
      }
      cens[static_cast<std::size_t>(r)] = sim.censoring_fraction();
      ok[static_cast<std::size_t>(r)] = 1;
    } catch (const Error&) {
    }
  });

  CoverageSummary out;
  out.config = config;
  out.replicates = replicates;
  out.coefficient = coefficient;
  out.truth = config.beta1[coefficient];
  out.level = level;
  const double z = normal_quantile(level);
  std::size_t good = 0;
  double cens_sum = 0.0;
  for (std::size_t r = 0; r < R; ++r) {
    if (!ok[r]) continue;
    ++good;
    cens_sum += cens[r];
  }
  out.failed = R - good;
  out.censoring = good ? cens_sum / static_cast<double>(good) : kNaN;
  for (std::size_t a = 0; a < 4; ++a) {
    ArmSummary s;
    s.arm = arms[a];
    double sum = 0.0, sum_se = 0.0, covered = 0.0;
    for (std::size_t r = 0; r < R; ++r) {
      if (!ok[r]) continue;
      sum += est[r][a];
      sum_se += se[r][a];
      covered += std::abs(est[r][a] - out.truth) <= z * se[r][a] ? 1.0 : 0.0;
    }
    s.used = good;
    const double g = static_cast<double>(good);
    s.mean_estimate = good ? sum / g : kNaN;
    s.aese = good ? sum_se / g : kNaN;
    s.coverage = good ? covered / g : kNaN;
    double ss = 0.0;
    for (std::size_t r = 0; r < R; ++r)
      if (ok[r]) ss += (est[r][a] - s.mean_estimate) * (est[r][a] - s.mean_estimate);
    s.mcse = good > 1 ? std::sqrt(ss / (g - 1.0)) : kNaN;
    out.arms.push_back(s);
  }
  if (good < 2) out.warnings.push_back("MCSE undefined with fewer than two successful replicates");
  if (out.failed > 0) out.warnings.push_back(std::to_string(out.failed) + " replicate(s) failed");
  return out;
}

RejectionSummary run_rejection_study(const SimConfig& config, int replicates,
                                     const GofOptions& gof, double alpha, unsigned workers) {
  config.validate();
  if (replicates < 1) throw Error(ErrorCode::InvalidArgument, "need at least one replicate");
  const std::size_t R = static_cast<std::size_t>(replicates);
  RejectionSummary out;
  out.config = config;
  out.replicates = replicates;
  out.alpha = alpha;
  out.p_values.assign(R, kNaN);
  std::vector<double> cens(R, kNaN);

  for_each_replicate(replicates, workers, [&](int r) {
    SimConfig c = config;
    c.replicate = static_cast<std::uint64_t>(r);
    c.record_ctime = false;
    GofOptions g = gof;
    g.threads = 1;
    g.keep_draws = 0;
    g.seed = derive_seed(config.seed, kGofStream, static_cast<std::uint64_t>(r));
    try {
      const SimDataset sim = generate(c);
      const FitResult f = fit(sim.data, 1, FitMode::ipcw);
      const AdditivityResult a = additivity_test(f, g);
      out.p_values[static_cast<std::size_t>(r)] = a.overall.p_value;
      cens[static_cast<std::size_t>(r)] = sim.censoring_fraction();
    } catch (const Error&) {
    }
  });

  std::size_t good = 0;
  double cens_sum = 0.0;
  for (std::size_t r = 0; r < R; ++r) {
    if (std::isnan(out.p_values[r])) continue;
    ++good;
    cens_sum += cens[r];
    out.rejections += out.p_values[r] < alpha ? 1 : 0;
  }
  out.failed = R - good;
  out.rate = good ? static_cast<double>(out.rejections) / static_cast<double>(good) : kNaN;
  out.censoring = good ? cens_sum / static_cast<double>(good) : kNaN;
  if (out.failed > 0) out.warnings.push_back(std::to_string(out.failed) + " replicate(s) failed");
  return out;
}

void check_replication_quality(std::size_t failed, int replicates, double max_share) {
  if (static_cast<double>(failed) > max_share * static_cast<double>(replicates)) {
    throw Error(ErrorCode::ReplicationQuality,
                std::to_string(failed) + " of " + std::to_string(replicates) + " replicates failed");
  }
}

KsTest ks_uniform(std::span<const double> values) {
  std::vector<double> v(values.begin(), values.end());
  v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return std::isnan(x); }), v.end());
  if (v.empty()) throw Error(ErrorCode::InvalidArgument, "KS test needs at least one value");
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  double d = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double x = std::clamp(v[i], 0.0, 1.0);
    d = std::max({d, static_cast<double>(i + 1) / n - x, x - static_cast<double>(i) / n});
  }
  const double sn = std::sqrt(n);
  const double lambda = (sn + 0.12 + 0.11 / sn) * d;
  double p = 0.0;
  if (lambda < 0.2) {
    p = 1.0;
  } else {
    for (int k = 1; k <= 100; ++k) {
      const double term = std::exp(-2.0 * k * k * lambda * lambda);
      p += (k % 2 == 1 ? 2.0 : -2.0) * term;
      if (term < 1e-16) break;
    }
  }
  return KsTest{d, std::clamp(p, 0.0, 1.0)};
}

}  // namespace mash
