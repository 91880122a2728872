#include "mash/censoring.hpp"

#include <algorithm>
#include <ostream>

#include "mash/error.hpp"

namespace mash {

namespace {

// Index of the last element <= t in an ascending vector, or -1.
std::ptrdiff_t last_at_or_before(const std::vector<double>& v, double t) {
  return (std::upper_bound(v.begin(), v.end(), t) - v.begin()) - 1;
}

}  // namespace

double CensoringModel::survival(double t) const {
  const auto i = last_at_or_before(km_times, t);
  return i < 0 ? 1.0 : km_values[static_cast<std::size_t>(i)];
}

double CensoringModel::cumulative_hazard(double t) const {
  const auto i = last_at_or_before(km_times, t);
  return i < 0 ? 0.0 : cum_hazard[static_cast<std::size_t>(i)];
}

double CensoringModel::risk_count(double u) const {
  auto it = std::lower_bound(sorted_times_.begin(), sorted_times_.end(), u);
  return static_cast<double>(sorted_times_.end() - it);
}

double CensoringModel::risk_fraction(double u) const {
  return risk_count(u) / static_cast<double>(n_clusters_);
}

CensoringModel fit_censoring_km(const ClusteredDataset& ds, double floor) {
  CensoringModel cm;
  cm.floor_ = floor;
  cm.n_clusters_ = ds.n_clusters();
  cm.sorted_times_.reserve(ds.size());
  std::vector<double> censored;
  for (const auto& r : ds.subjects()) {
    cm.sorted_times_.push_back(r.time);
    if (r.cause.censored()) censored.push_back(r.time);
  }
  std::sort(cm.sorted_times_.begin(), cm.sorted_times_.end());
  std::sort(censored.begin(), censored.end());

  double g = 1.0;
  double h = 0.0;
  for (std::size_t a = 0; a < censored.size();) {
    std::size_t b = a;
    while (b < censored.size() && censored[b] == censored[a]) ++b;
    const double u = censored[a];
    const double d = static_cast<double>(b - a);
    const double y = cm.risk_count(u);
    g *= 1.0 - d / y;
    h += d / y;
    cm.km_times.push_back(u);
    cm.km_values.push_back(g);
    cm.cum_hazard.push_back(h);
    cm.at_risk.push_back(y);
    cm.events.push_back(d);
    a = b;
  }

  if (cm.survival(ds.tau()) <= floor) {
    throw Error(ErrorCode::GhatZeroBeforeTau,
                "censoring survival estimate reaches zero at or before tau=" +
                    std::to_string(ds.tau()));
  }
  return cm;
}

double ipcw_weight(const CensoringModel& model, const SubjectRecord& record, double t) {
  const bool alive = !record.cause.censored() || t <= record.time;
  if (!alive) return 0.0;
  const double denom = model.survival(std::min(record.time, t));
  if (denom <= model.floor()) {
    throw Error(ErrorCode::DivisionByZeroGhat, "G-hat(min(Z, t)) is zero");
  }
  return model.survival(t) / denom;
}

int cc_weight(const SubjectRecord& record, double t) {
  if (!record.ctime) {
    throw Error(ErrorCode::CensoringTimeUnavailable, "potential censoring time not recorded");
  }
  return *record.ctime > t ? 1 : 0;
}

void export_km(std::ostream& out, const CensoringModel& model) {
  out << "time,G\n0,1\n";
  for (std::size_t i = 0; i < model.km_times.size(); ++i) {
    out << model.km_times[i] << ',' << model.km_values[i] << '\n';
  }
}

}  // namespace mash
