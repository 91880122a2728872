#pragma once

#include <cmath>
#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mash {

// Time dependence of one covariate coordinate: X_l(t) = base_l * basis_l(t).
enum class Basis : unsigned char { constant, exp_decay };

inline double basis_value(Basis b, double t) noexcept {
  return b == Basis::constant ? 1.0 : std::exp(-t);
}

// 0 = censored, 1..K = failure cause.
struct CauseCode {
  int value = 0;

  constexpr bool censored() const noexcept { return value == 0; }
  friend constexpr bool operator==(CauseCode, CauseCode) = default;
};

struct CovariatePath {
  std::vector<double> base;
  std::vector<Basis> basis;

  std::size_t size() const noexcept { return base.size(); }
  double at(std::size_t l, double t) const;
  std::vector<double> at(double t) const;
};

struct SubjectRecord {
  std::string cluster_id;
  double time = 0.0;  // observed Z = min(T, C)
  CauseCode cause;
  std::vector<double> x;        // base covariate values
  std::optional<double> ctime;  // potential censoring time, censoring-complete data only
};

struct CountingState {
  int N = 0;
  int Y = 1;
};

// N^k(t) and Y^k(t) = 1 - N^k(t-) for the subdistribution risk set.
CountingState counting_process(const SubjectRecord& record, int cause, double t);

// Column mapping for delimited input.
struct Schema {
  std::string cluster = "cluster";
  std::string time = "time";
  std::string status = "status";
  std::string ctime = "ctime";
  std::vector<std::string> covariates;  // empty: every non-reserved column
  std::vector<std::string> exp_decay;   // covariates with basis e^{-t}
  char delimiter = ',';
  std::optional<int> causes;  // declared K; default is the largest status seen
};

class ClusteredDataset {
 public:
  // Validates and groups records by cluster (clusters keep first-appearance order).
  static ClusteredDataset build(std::vector<SubjectRecord> records,
                                std::vector<std::string> covariate_names,
                                std::vector<Basis> basis, std::optional<double> tau = std::nullopt,
                                std::optional<int> causes = std::nullopt);

  std::span<const SubjectRecord> subjects() const noexcept { return subjects_; }
  const SubjectRecord& subject(std::size_t s) const { return subjects_[s]; }
  std::size_t size() const noexcept { return subjects_.size(); }
  std::size_t n_clusters() const noexcept { return offsets_.size() - 1; }
  std::size_t p() const noexcept { return names_.size(); }

  // Subjects of cluster i are [offsets[i], offsets[i+1]).
  std::span<const std::size_t> cluster_offsets() const noexcept { return offsets_; }
  std::size_t cluster_of(std::size_t s) const { return cluster_index_[s]; }
  std::vector<std::size_t> cluster_sizes() const;
  const std::string& cluster_id(std::size_t i) const { return subjects_[offsets_[i]].cluster_id; }

  double tau() const noexcept { return tau_; }
  int causes() const noexcept { return causes_; }
  bool censoring_observed() const noexcept { return censoring_observed_; }
  double max_time() const noexcept { return max_time_; }
  const std::vector<std::string>& covariate_names() const noexcept { return names_; }
  const std::vector<Basis>& basis() const noexcept { return basis_; }
  bool all_constant() const noexcept;

  CovariatePath path(std::size_t s) const { return {subjects_[s].x, basis_}; }

  int events_before_tau(int cause) const;
  const std::vector<std::string>& warnings() const noexcept { return warnings_; }

  ClusteredDataset with_tau(double tau) const;
  // New dataset made of the listed clusters (repeats allowed); copies get distinct ids.
  // tau is kept unless the selection ends earlier, in which case it is its largest time.
  ClusteredDataset select_clusters(std::span<const std::size_t> clusters) const;

 private:
  std::vector<SubjectRecord> subjects_;
  std::vector<std::size_t> offsets_;
  std::vector<std::size_t> cluster_index_;
  std::vector<std::string> names_;
  std::vector<Basis> basis_;
  std::vector<std::string> warnings_;
  double tau_ = 0.0;
  double max_time_ = 0.0;
  int causes_ = 1;
  bool censoring_observed_ = false;
};

ClusteredDataset load_dataset(std::istream& in, const Schema& schema = {},
                              std::optional<double> tau = std::nullopt);
ClusteredDataset load_dataset_file(const std::string& path, const Schema& schema = {},
                                   std::optional<double> tau = std::nullopt);

// Extra per-subject columns appended after the covariates (used for ground truth).
struct ExtraColumn {
  std::string name;
  std::vector<double> values;
};

// Writes the delimited format read by load_dataset. Exp-decay covariates carry a
// ":exp" header suffix. Lines starting with '#' are written first (manifest) and
// skipped on load.
void save_dataset(std::ostream& out, const ClusteredDataset& ds,
                  std::span<const std::string> comment_lines = {},
                  std::span<const ExtraColumn> extra = {}, char delimiter = ',');

struct TimeGrid {
  std::vector<double> knots;  // strictly increasing, last element is tau
  int refinement = 1;         // trapezoid panels per knot interval

  std::size_t size() const noexcept { return knots.size(); }
  double tau() const noexcept { return knots.back(); }
  // Index of the last knot <= t, or -1 when t < knots.front().
  std::ptrdiff_t floor_index(double t) const;
  // Index of the knot equal to t, or -1.
  std::ptrdiff_t find(double t) const;
};

inline constexpr int kDefaultRefinement = 16;

// Knots are the distinct observed times <= tau (and potential censoring times when
// recorded) plus tau. Refinement is forced to 1 when every basis is constant.
TimeGrid build_grid(const ClusteredDataset& ds, int refinement = kDefaultRefinement);

}  // namespace mash
