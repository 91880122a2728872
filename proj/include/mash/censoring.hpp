#pragma once

#include <iosfwd>
#include <vector>

#include "mash/dataset.hpp"

namespace mash {

inline constexpr double kGhatFloor = 1e-10;

// Pooled Kaplan-Meier estimate of the censoring survival G(t) = P(C >= t), with
// censoring treated as the event. Failures tied with censorings count first, so a
// subject censored at u is still in the censoring risk set at u.
class CensoringModel {
 public:
  std::vector<double> km_times;    // distinct censoring times, ascending
  std::vector<double> km_values;   // G-hat just after each km_time (right-continuous)
  std::vector<double> cum_hazard;  // Nelson-Aalen censoring cumulative hazard
  std::vector<double> at_risk;     // censoring risk-set size at each km_time
  std::vector<double> events;      // number censored at each km_time

  double survival(double t) const;
  double cumulative_hazard(double t) const;
  // pi-hat(u) = n^{-1} #{Z >= u} with n the number of clusters.
  double risk_fraction(double u) const;
  double risk_count(double u) const;

  std::size_t n_clusters() const noexcept { return n_clusters_; }
  double floor() const noexcept { return floor_; }

 private:
  friend CensoringModel fit_censoring_km(const ClusteredDataset&, double);
  std::vector<double> sorted_times_;
  std::size_t n_clusters_ = 0;
  double floor_ = kGhatFloor;
};

// Throws GhatZeroBeforeTau when G-hat(tau) is at or below the floor.
CensoringModel fit_censoring_km(const ClusteredDataset& ds, double floor = kGhatFloor);

// r(t) G(t) / G(min(Z, t)).
double ipcw_weight(const CensoringModel& model, const SubjectRecord& record, double t);

// I(C > t); requires the potential censoring time.
int cc_weight(const SubjectRecord& record, double t);

// Two-column table (time, G-hat) with a header row.
void export_km(std::ostream& out, const CensoringModel& model);

}  // namespace mash
