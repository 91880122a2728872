#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mash/gof.hpp"
#include "mash/simgen.hpp"

namespace mash {

// Worker count from MASH_WORKERS, else the hardware concurrency.
unsigned default_workers();

// Runs body(r) for r in [0, replicates) on `workers` threads. Exceptions other than
// mash::Error propagate after all workers stop.
void for_each_replicate(int replicates, unsigned workers, const std::function<void(int)>& body);

// Estimation arms of the coverage tables: clustered / unclustered variance crossed with
// right-censored (IPCW) / censoring-complete data.
enum class Arm { crc, ccc, ucrc, uccc };
const char* to_string(Arm arm) noexcept;

struct ArmSummary {
  Arm arm = Arm::crc;
  std::size_t used = 0;
  double mean_estimate = 0.0;
  double mcse = 0.0;      // s(beta-hat) across replicates
  double aese = 0.0;      // mean estimated SE
  double coverage = 0.0;  // share of Wald intervals covering the truth
};

struct CoverageSummary {
  SimConfig config;
  int replicates = 0;
  std::size_t failed = 0;
  std::size_t coefficient = 0;
  double truth = 0.0;
  double level = 0.95;
  double censoring = 0.0;  // mean censored share
  std::vector<ArmSummary> arms;
  std::vector<std::string> warnings;
};

CoverageSummary run_coverage_study(const SimConfig& config, int replicates, unsigned workers,
                                   std::size_t coefficient = 0, double level = 0.95);

struct RejectionSummary {
  SimConfig config;
  int replicates = 0;
  std::size_t failed = 0;
  std::size_t rejections = 0;
  double alpha = 0.05;
  double rate = 0.0;
  double censoring = 0.0;
  std::vector<double> p_values;  // replicate order; NaN for failed replicates
  std::vector<std::string> warnings;
};

// Overall additivity test on cause 1 (IPCW) for each replicate.
RejectionSummary run_rejection_study(const SimConfig& config, int replicates,
                                     const GofOptions& gof, double alpha, unsigned workers);

// Throws ReplicationQuality when more than `max_share` of the replicates failed.
void check_replication_quality(std::size_t failed, int replicates, double max_share = 0.05);

struct KsTest {
  double statistic = 0.0;
  double p_value = 1.0;
};

// One-sample Kolmogorov-Smirnov test against U(0, 1), asymptotic p-value with the
// Stephens small-sample correction.
KsTest ks_uniform(std::span<const double> values);

}  // namespace mash
