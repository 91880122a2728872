#include "mash/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "mash/error.hpp"

namespace mash {

namespace {

constexpr const char* kExpSuffix = ":exp";

bool is_reserved(const std::string& name, const Schema& schema) {
  return name == schema.cluster || name == schema.time || name == schema.status ||
         name == schema.ctime || name == "true_time" || name == "true_cause" || name == "frailty";
}

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(delim, start);
    if (pos == std::string::npos) {
      out.push_back(trim(std::string_view(line).substr(start)));
      break;
    }
    out.push_back(trim(std::string_view(line).substr(start, pos - start)));
    start = pos + 1;
  }
  return out;
}

double parse_real(const std::string& field, const std::string& column, std::size_t line_no) {
  if (field.empty()) {
    throw Error(ErrorCode::MalformedInput,
                "missing value in column '" + column + "' at line " + std::to_string(line_no));
  }
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    throw Error(ErrorCode::MalformedInput, "cannot parse '" + field + "' in column '" + column +
                                               "' at line " + std::to_string(line_no));
  }
  if (!std::isfinite(v)) {
    throw Error(ErrorCode::MalformedInput,
                "non-finite value in column '" + column + "' at line " + std::to_string(line_no));
  }
  return v;
}

void write_real(std::ostream& out, double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.write(buf, ptr - buf);
}

}  // namespace

double CovariatePath::at(std::size_t l, double t) const { return base[l] * basis_value(basis[l], t); }

std::vector<double> CovariatePath::at(double t) const {
  std::vector<double> out(base.size());
  for (std::size_t l = 0; l < base.size(); ++l) out[l] = at(l, t);
  return out;
}

CountingState counting_process(const SubjectRecord& record, int cause, double t) {
  const bool is_k = record.cause.value == cause;
  CountingState st;
  st.N = (is_k && record.time <= t) ? 1 : 0;
  st.Y = (is_k && record.time < t) ? 0 : 1;
  return st;
}

ClusteredDataset ClusteredDataset::build(std::vector<SubjectRecord> records,
                                         std::vector<std::string> covariate_names,
                                         std::vector<Basis> basis, std::optional<double> tau,
                                         std::optional<int> causes) {
  if (records.empty()) throw Error(ErrorCode::InvalidArgument, "dataset has no subjects");
  const std::size_t p = covariate_names.size();
  if (p == 0) throw Error(ErrorCode::InvalidArgument, "at least one covariate is required");
  if (basis.size() != p) throw Error(ErrorCode::InvalidArgument, "basis/covariate count mismatch");

  int max_status = 0;
  std::size_t with_ctime = 0;
  for (const auto& r : records) {
    if (r.cluster_id.empty()) throw Error(ErrorCode::EmptyCluster, "subject with empty cluster id");
    if (!std::isfinite(r.time)) throw Error(ErrorCode::MalformedInput, "non-finite observed time");
    if (r.time <= 0.0) {
      throw Error(ErrorCode::NonPositiveTime, "observed time " + std::to_string(r.time) +
                                                  " in cluster " + r.cluster_id);
    }
    if (r.cause.value < 0) throw Error(ErrorCode::UnknownCauseCode, "negative status code");
    if (r.x.size() != p) throw Error(ErrorCode::MalformedInput, "covariate vector has wrong length");
    for (double v : r.x) {
      if (!std::isfinite(v)) throw Error(ErrorCode::MalformedInput, "non-finite covariate value");
    }
    max_status = std::max(max_status, r.cause.value);
    if (r.ctime) ++with_ctime;
  }
  const int K = causes.value_or(std::max(1, max_status));
  if (K < 1) throw Error(ErrorCode::InvalidArgument, "number of causes must be >= 1");
  if (max_status > K) {
    throw Error(ErrorCode::UnknownCauseCode,
                "status " + std::to_string(max_status) + " exceeds declared K=" + std::to_string(K));
  }
  if (with_ctime != 0 && with_ctime != records.size()) {
    throw Error(ErrorCode::MalformedInput, "censoring time recorded for only some subjects");
  }
  const bool cc = with_ctime == records.size();
  if (cc) {
    for (const auto& r : records) {
      const double c = *r.ctime;
      if (!std::isfinite(c) || c <= 0.0) {
        throw Error(ErrorCode::NonPositiveTime, "censoring time must be positive and finite");
      }
      if (r.cause.censored() ? c != r.time : c < r.time) {
        throw Error(ErrorCode::MalformedInput,
                    "censoring time inconsistent with observed time in cluster " + r.cluster_id);
      }
    }
  }

  // Group by cluster id, clusters in order of first appearance, subjects stable within.
  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::vector<std::size_t>> members;
  for (std::size_t s = 0; s < records.size(); ++s) {
    auto [it, inserted] = index.try_emplace(records[s].cluster_id, members.size());
    if (inserted) members.emplace_back();
    members[it->second].push_back(s);
  }
  if (members.size() < 2) throw Error(ErrorCode::InvalidArgument, "at least two clusters required");

  ClusteredDataset ds;
  ds.subjects_.reserve(records.size());
  ds.offsets_.reserve(members.size() + 1);
  ds.offsets_.push_back(0);
  for (std::size_t i = 0; i < members.size(); ++i) {
    for (std::size_t s : members[i]) {
      ds.subjects_.push_back(std::move(records[s]));
      ds.cluster_index_.push_back(i);
    }
    ds.offsets_.push_back(ds.subjects_.size());
  }
  ds.names_ = std::move(covariate_names);
  ds.basis_ = std::move(basis);
  ds.causes_ = K;
  ds.censoring_observed_ = cc;
  ds.max_time_ = 0.0;
  double last_failure = 0.0;
  for (const auto& r : ds.subjects_) {
    ds.max_time_ = std::max(ds.max_time_, r.time);
    if (!r.cause.censored()) last_failure = std::max(last_failure, r.time);
  }

  // default horizon: the last failure, so the censoring survival stays positive on [0, tau]
  const double t = tau.value_or(last_failure > 0.0 ? last_failure : ds.max_time_);
  if (!(t > 0.0) || !std::isfinite(t)) throw Error(ErrorCode::InvalidArgument, "tau must be positive");
  if (t > ds.max_time_) {
    throw Error(ErrorCode::TauBeyondFollowUp, "tau=" + std::to_string(t) +
                                                  " exceeds maximum observed time " +
                                                  std::to_string(ds.max_time_));
  }
  ds.tau_ = t;

  for (std::size_t l = 0; l < ds.names_.size(); ++l) {
    const double first = ds.subjects_.front().x[l];
    bool varies = false;
    for (const auto& r : ds.subjects_) varies = varies || r.x[l] != first;
    if (!varies) ds.warnings_.push_back("covariate '" + ds.names_[l] + "' is constant");
  }
  return ds;
}

std::vector<std::size_t> ClusteredDataset::cluster_sizes() const {
  std::vector<std::size_t> m(n_clusters());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = offsets_[i + 1] - offsets_[i];
  return m;
}

bool ClusteredDataset::all_constant() const noexcept {
  return std::all_of(basis_.begin(), basis_.end(), [](Basis b) { return b == Basis::constant; });
}

int ClusteredDataset::events_before_tau(int cause) const {
  int count = 0;
  for (const auto& r : subjects_) count += (r.cause.value == cause && r.time <= tau_) ? 1 : 0;
  return count;
}

ClusteredDataset ClusteredDataset::with_tau(double tau) const {
  std::vector<SubjectRecord> copy(subjects_.begin(), subjects_.end());
  return build(std::move(copy), names_, basis_, tau, causes_);
}

ClusteredDataset ClusteredDataset::select_clusters(std::span<const std::size_t> clusters) const {
  std::vector<SubjectRecord> out;
  std::vector<int> seen(n_clusters(), 0);
  for (std::size_t i : clusters) {
    if (i >= n_clusters()) throw Error(ErrorCode::InvalidArgument, "cluster index out of range");
    const int copy = seen[i]++;
    for (std::size_t s = offsets_[i]; s < offsets_[i + 1]; ++s) {
      SubjectRecord r = subjects_[s];
      if (copy > 0) r.cluster_id += "#" + std::to_string(copy);
      out.push_back(std::move(r));
    }
  }
  double tmax = 0.0;
  for (const auto& r : out) tmax = std::max(tmax, r.time);
  return build(std::move(out), names_, basis_, std::min(tau_, tmax), causes_);
}

ClusteredDataset load_dataset(std::istream& in, const Schema& schema, std::optional<double> tau) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty() || line.front() == '#') continue;
    header = split(line, schema.delimiter);
    break;
  }
  if (header.empty()) throw Error(ErrorCode::MalformedInput, "missing header row");

  std::vector<bool> header_exp(header.size(), false);
  const std::string suffix = kExpSuffix;
  for (std::size_t c = 0; c < header.size(); ++c) {
    auto& h = header[c];
    if (h.size() > suffix.size() && h.compare(h.size() - suffix.size(), suffix.size(), suffix) == 0) {
      h.resize(h.size() - suffix.size());
      header_exp[c] = true;
    }
  }
  auto column = [&](const std::string& name) -> std::ptrdiff_t {
    auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : it - header.begin();
  };
  auto require = [&](const std::string& name) -> std::size_t {
    auto c = column(name);
    if (c < 0) throw Error(ErrorCode::MissingColumn, "column '" + name + "' not found");
    return static_cast<std::size_t>(c);
  };

  const std::size_t c_cluster = require(schema.cluster);
  const std::size_t c_time = require(schema.time);
  const std::size_t c_status = require(schema.status);
  const std::ptrdiff_t c_ctime = column(schema.ctime);

  std::vector<std::string> names = schema.covariates;
  if (names.empty()) {
    for (const auto& h : header) {
      if (!is_reserved(h, schema)) names.push_back(h);
    }
  }
  if (names.empty()) throw Error(ErrorCode::MissingColumn, "no covariate columns");
  std::vector<std::size_t> cov_cols;
  std::vector<Basis> basis;
  for (const auto& name : names) {
    const std::size_t c = require(name);
    cov_cols.push_back(c);
    const bool exp = header_exp[c] ||
                     std::find(schema.exp_decay.begin(), schema.exp_decay.end(), name) !=
                         schema.exp_decay.end();
    basis.push_back(exp ? Basis::exp_decay : Basis::constant);
  }
  for (const auto& name : schema.exp_decay) {
    if (std::find(names.begin(), names.end(), name) == names.end()) {
      throw Error(ErrorCode::MissingColumn, "exp-decay covariate '" + name + "' is not a covariate");
    }
  }

  std::vector<SubjectRecord> records;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty() || line.front() == '#') continue;
    auto fields = split(line, schema.delimiter);
    if (fields.size() != header.size()) {
      throw Error(ErrorCode::MalformedInput, "line " + std::to_string(line_no) + " has " +
                                                 std::to_string(fields.size()) + " fields, expected " +
                                                 std::to_string(header.size()));
    }
    SubjectRecord r;
    r.cluster_id = fields[c_cluster];
    if (r.cluster_id.empty()) {
      throw Error(ErrorCode::EmptyCluster, "empty cluster id at line " + std::to_string(line_no));
    }
    r.time = parse_real(fields[c_time], schema.time, line_no);
    if (r.time <= 0.0) {
      throw Error(ErrorCode::NonPositiveTime,
                  "time " + fields[c_time] + " at line " + std::to_string(line_no));
    }
    const double status = parse_real(fields[c_status], schema.status, line_no);
    if (status != std::floor(status) || status < 0.0) {
      throw Error(ErrorCode::UnknownCauseCode,
                  "status '" + fields[c_status] + "' at line " + std::to_string(line_no));
    }
    r.cause = CauseCode{static_cast<int>(status)};
    if (schema.causes && r.cause.value > *schema.causes) {
      throw Error(ErrorCode::UnknownCauseCode, "status " + fields[c_status] + " at line " +
                                                   std::to_string(line_no) + " exceeds K=" +
                                                   std::to_string(*schema.causes));
    }
    r.x.reserve(cov_cols.size());
    for (std::size_t l = 0; l < cov_cols.size(); ++l) {
      r.x.push_back(parse_real(fields[cov_cols[l]], names[l], line_no));
    }
    if (c_ctime >= 0) r.ctime = parse_real(fields[c_ctime], schema.ctime, line_no);
    records.push_back(std::move(r));
  }
  return ClusteredDataset::build(std::move(records), std::move(names), std::move(basis), tau,
                                 schema.causes);
}

ClusteredDataset load_dataset_file(const std::string& path, const Schema& schema,
                                   std::optional<double> tau) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MalformedInput, "cannot open '" + path + "'");
  return load_dataset(in, schema, tau);
}

void save_dataset(std::ostream& out, const ClusteredDataset& ds,
                  std::span<const std::string> comment_lines, std::span<const ExtraColumn> extra,
                  char delimiter) {
  for (const auto& c : comment_lines) out << "# " << c << '\n';
  out << "cluster" << delimiter << "time" << delimiter << "status";
  if (ds.censoring_observed()) out << delimiter << "ctime";
  for (std::size_t l = 0; l < ds.p(); ++l) {
    out << delimiter << ds.covariate_names()[l];
    if (ds.basis()[l] == Basis::exp_decay) out << kExpSuffix;
  }
  for (const auto& e : extra) out << delimiter << e.name;
  out << '\n';
  for (std::size_t s = 0; s < ds.size(); ++s) {
    const auto& r = ds.subject(s);
    out << r.cluster_id << delimiter;
    write_real(out, r.time);
    out << delimiter << r.cause.value;
    if (ds.censoring_observed()) {
      out << delimiter;
      write_real(out, *r.ctime);
    }
    for (double v : r.x) {
      out << delimiter;
      write_real(out, v);
    }
    for (const auto& e : extra) {
      out << delimiter;
      write_real(out, e.values.at(s));
    }
    out << '\n';
  }
}

std::ptrdiff_t TimeGrid::floor_index(double t) const {
  auto it = std::upper_bound(knots.begin(), knots.end(), t);
  return (it - knots.begin()) - 1;
}

std::ptrdiff_t TimeGrid::find(double t) const {
  auto it = std::lower_bound(knots.begin(), knots.end(), t);
  return (it != knots.end() && *it == t) ? it - knots.begin() : -1;
}

TimeGrid build_grid(const ClusteredDataset& ds, int refinement) {
  if (refinement < 1) throw Error(ErrorCode::InvalidArgument, "refinement must be >= 1");
  TimeGrid grid;
  const double tau = ds.tau();
  grid.knots.reserve(ds.size() + 1);
  for (const auto& r : ds.subjects()) {
    if (r.time <= tau) grid.knots.push_back(r.time);
    if (ds.censoring_observed() && *r.ctime <= tau) grid.knots.push_back(*r.ctime);
  }
  grid.knots.push_back(tau);
  std::sort(grid.knots.begin(), grid.knots.end());
  grid.knots.erase(std::unique(grid.knots.begin(), grid.knots.end()), grid.knots.end());
  grid.refinement = ds.all_constant() ? 1 : refinement;
  return grid;
}

}  // namespace mash
