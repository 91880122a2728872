#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "mash/error.hpp"
#include "mash/fitter.hpp"
#include "mash/gof.hpp"
#include "mash/kernels.hpp"
#include "mash/simgen.hpp"
#include "mash/studies.hpp"
#include "mash/variance.hpp"

#ifndef MASH_VERSION
#define MASH_VERSION "0.0.0"
#endif

using json = nlohmann::ordered_json;
using namespace mash;

namespace {

constexpr const char* kJsonBegin = "-----BEGIN MASH JSON-----";
constexpr const char* kJsonEnd = "-----END MASH JSON-----";

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MalformedInput, "cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string fmt(double v, int prec = 4) {
  if (std::isnan(v)) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

std::string pad(const std::string& s, std::size_t w, bool left = false) {
  if (s.size() >= w) return s;
  return left ? s + std::string(w - s.size(), ' ') : std::string(w - s.size(), ' ') + s;
}

// Run manifest: command, resolved flags, seed, input digests and tool version.
json manifest(const std::string& command, const CLI::App& sub, std::uint64_t seed,
              const std::vector<std::pair<std::string, std::string>>& inputs) {
  json m;
  m["tool"] = "mash";
  m["version"] = MASH_VERSION;
  m["command"] = command;
  json flags = json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    const std::string name = opt->get_name();
    if (name == "--help" || name == "--out" || name.empty()) continue;
    const auto& res = opt->results();
    if (opt->get_items_expected_max() == 0) flags[name] = opt->count() > 0;
    else if (res.size() == 1) flags[name] = res.front();
    else if (!res.empty()) flags[name] = res;
    else if (!opt->get_default_str().empty()) flags[name] = opt->get_default_str();
    else flags[name] = nullptr;
  }
  m["flags"] = flags;
  m["seed"] = seed;
  json in = json::array();
  for (const auto& [path, bytes] : inputs) in.push_back({{"path", path}, {"fnv1a64", hex64(fnv1a(bytes))}});
  m["inputs"] = in;
  return m;
}

void emit(const std::string& out_path, const std::string& text, const json& doc) {
  std::ostringstream os;
  os << text << '\n' << kJsonBegin << '\n' << doc.dump(2) << '\n' << kJsonEnd << '\n';
  if (out_path.empty() || out_path == "-") {
    std::cout << os.str();
  } else {
    std::ofstream f(out_path, std::ios::binary);
    if (!f) throw Error(ErrorCode::InvalidArgument, "cannot write '" + out_path + "'");
    f << os.str();
  }
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (c != ' ') {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

// Options shared by commands that read a dataset.
struct DataOptions {
  std::string input;
  std::string cluster_var = "cluster";
  std::string time_var = "time";
  std::string status_var = "status";
  std::string ctime_var = "ctime";
  std::string covariates;
  std::string exp_decay;
  std::string delimiter = ",";
  double tau = std::numeric_limits<double>::quiet_NaN();
  int cause = 1;
  std::string mode = "ipcw";
  int quadrature = kDefaultRefinement;

  void add(CLI::App* app) {
    app->add_option("input", input, "Delimited data file")->required();
    app->add_option("--cluster-var", cluster_var, "Cluster id column")->capture_default_str();
    app->add_option("--time-var", time_var, "Observed time column")->capture_default_str();
    app->add_option("--status-var", status_var, "Status column (0 censored, k cause)")->capture_default_str();
    app->add_option("--ctime-var", ctime_var, "Potential censoring time column")->capture_default_str();
    app->add_option("--covariates", covariates, "Comma-separated covariate columns (default: all others)");
    app->add_option("--exp-decay", exp_decay, "Covariates entering as X*exp(-t)");
    app->add_option("--delimiter", delimiter, "Field delimiter")->capture_default_str();
    app->add_option("--tau", tau, "Analysis horizon (default: last failure time)");
    app->add_option("--cause", cause, "Cause of interest")->capture_default_str()->check(CLI::PositiveNumber);
    app->add_option("--mode", mode, "Weighting: ipcw or cc")->capture_default_str()->check(CLI::IsMember({"ipcw", "cc"}));
    app->add_option("--quadrature", quadrature, "Trapezoid panels per knot interval")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
  }

  Schema schema() const {
    Schema s;
    s.cluster = cluster_var;
    s.time = time_var;
    s.status = status_var;
    s.ctime = ctime_var;
    s.covariates = split_list(covariates);
    s.exp_decay = split_list(exp_decay);
    if (delimiter.size() != 1) throw Error(ErrorCode::InvalidArgument, "delimiter must be one character");
    s.delimiter = delimiter == "\\t" ? '\t' : delimiter[0];
    return s;
  }

  ClusteredDataset load(std::string& bytes) const {
    bytes = read_file(input);
    std::istringstream in(bytes);
    std::optional<double> t;
    if (!std::isnan(tau)) t = tau;
    return load_dataset(in, schema(), t);
  }
};

json to_json(const Eigen::MatrixXd& m) {
  json a = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    a.push_back(row);
  }
  return a;
}

json data_summary(const ClusteredDataset& ds, const FitResult& f) {
  return {{"clusters", ds.n_clusters()}, {"subjects", ds.size()}, {"events", f.n_events},
          {"cause", f.cause},           {"mode", to_string(f.mode)}, {"tau", ds.tau()}};
}

std::string data_lines(const ClusteredDataset& ds, const FitResult& f) {
  std::ostringstream os;
  os << "clusters " << ds.n_clusters() << ", subjects " << ds.size() << ", cause-" << f.cause
     << " events " << f.n_events << ", tau " << fmt(ds.tau(), 6) << ", weighting " << to_string(f.mode) << '\n';
  return os.str();
}

// ---------------------------------------------------------------- fit
struct FitCmd {
  DataOptions data;
  std::string variance = "cluster";
  std::string out;
  std::string baseline_out;
};

int run_fit(const FitCmd& o, const CLI::App& sub) {
  std::string bytes;
  const ClusteredDataset ds = o.data.load(bytes);
  const FitResult f = fit(ds, o.data.cause, parse_fit_mode(o.data.mode), o.data.quadrature);
  const SandwichParts sw = sandwich(f, parse_clustering(o.variance));
  auto rows = coefficient_table(f, sw);
  const WaldTest w = overall_wald(f, sw);

  std::ostringstream txt;
  txt << "Marginal additive subdistribution hazards fit\n" << data_lines(ds, f);
  txt << "variance " << to_string(sw.clustering) << " (" << sw.units << " units)\n\n";
  std::size_t wname = 9;
  for (const auto& r : rows) wname = std::max(wname, r.name.size());
  txt << pad("covariate", wname, true) << pad("Estimate", 12) << pad("Robust SE", 12) << pad("z", 9)
      << pad("p-value", 9) << pad("lower", 12) << pad("upper", 12) << '\n';
  for (const auto& r : rows) {
    txt << pad(r.name, wname, true) << pad(fmt(r.estimate), 12) << pad(fmt(r.se), 12) << pad(fmt(r.z, 3), 9)
        << pad(fmt(r.p_value, 3), 9) << pad(fmt(r.lower), 12) << pad(fmt(r.upper), 12) << '\n';
  }
  txt << pad("Overall", wname, true) << "  Wald chi2 " << fmt(w.statistic) << " on " << w.df << " df, p "
      << fmt(w.p_value, 4) << '\n';
  txt << "\nSigma (variance of sqrt(units) (beta-hat - beta))\n";
  for (Eigen::Index r = 0; r < sw.Sigma.rows(); ++r) {
    for (Eigen::Index c = 0; c < sw.Sigma.cols(); ++c) txt << pad(fmt(sw.Sigma(r, c), 6), 14);
    txt << '\n';
  }
  for (const auto& wmsg : f.warnings) txt << "warning: " << wmsg << '\n';

  json doc;
  doc["manifest"] = manifest("fit", sub, 0, {{o.data.input, bytes}});
  doc["data"] = data_summary(ds, f);
  doc["variance"] = {{"clustering", to_string(sw.clustering)}, {"units", sw.units}};
  json coef = json::array();
  for (const auto& r : rows) {
    coef.push_back({{"name", r.name}, {"estimate", r.estimate}, {"robust_se", r.se}, {"z", r.z},
                    {"p_value", r.p_value}, {"lower", r.lower}, {"upper", r.upper}});
  }
  doc["coefficients"] = coef;
  doc["overall"] = {{"wald", w.statistic}, {"df", w.df}, {"p_value", w.p_value}};
  doc["sigma"] = to_json(sw.Sigma);
  doc["covariance"] = to_json(sw.Sigma / static_cast<double>(sw.units));
  json base = json::array();
  for (std::size_t q = 0; q < f.grid().size(); ++q) base.push_back({f.grid().knots[q], f.baseline[q]});
  doc["baseline"] = {{"columns", {"time", "cumulative"}}, {"values", base}};
  doc["warnings"] = f.warnings;
  emit(o.out, txt.str(), doc);

  if (!o.baseline_out.empty()) {
    std::ofstream b(o.baseline_out);
    if (!b) throw Error(ErrorCode::InvalidArgument, "cannot write '" + o.baseline_out + "'");
    b.precision(17);
    b << "time,baseline\n";
    for (std::size_t q = 0; q < f.grid().size(); ++q) b << f.grid().knots[q] << ',' << f.baseline[q] << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------- gof
struct GofCmd {
  DataOptions data;
  std::string test = "additivity";
  std::string covariate = "all";
  std::string variance = "cluster";
  int draws = 1000;
  std::uint64_t seed = 1;
  bool add_one = false;
  std::string export_prefix;
  int plot_draws = 50;
  unsigned threads = 1;
  std::size_t max_thresholds = 512;
  std::string out;
};

std::vector<std::size_t> resolve_covariates(const std::string& spec, const FitResult& f) {
  std::vector<std::size_t> out;
  if (spec == "all") {
    for (std::size_t l = 0; l < f.covariate_names.size(); ++l) out.push_back(l);
    return out;
  }
  for (const auto& tok : split_list(spec)) {
    auto it = std::find(f.covariate_names.begin(), f.covariate_names.end(), tok);
    if (it != f.covariate_names.end()) {
      out.push_back(static_cast<std::size_t>(it - f.covariate_names.begin()));
      continue;
    }
    std::size_t pos = 0;
    long idx = -1;
    try {
      idx = std::stol(tok, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != tok.size() || idx < 1 || static_cast<std::size_t>(idx) > f.covariate_names.size()) {
      throw Error(ErrorCode::InvalidArgument, "unknown covariate '" + tok + "'");
    }
    out.push_back(static_cast<std::size_t>(idx - 1));
  }
  return out;
}

std::string file_safe(const std::string& s) {
  std::string out;
  for (char c : s) out += std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' ? c : '_';
  return out;
}

int run_gof(const GofCmd& o, const CLI::App& sub) {
  std::string bytes;
  const ClusteredDataset ds = o.data.load(bytes);
  const FitResult f = fit(ds, o.data.cause, parse_fit_mode(o.data.mode), o.data.quadrature);
  const SandwichParts sw = sandwich(f, parse_clustering(o.variance));
  const auto coef = coefficient_table(f, sw);
  const auto selected = resolve_covariates(o.covariate, f);
  const bool additivity = o.test == "additivity" || o.test == "all";
  const bool functional = o.test == "functional-form" || o.test == "all";

  GofOptions g;
  g.draws = o.draws;
  g.seed = o.seed;
  g.pvalue_add_one = o.add_one;
  g.keep_draws = o.export_prefix.empty() ? 0 : o.plot_draws;
  g.threads = o.threads;
  g.max_thresholds = o.max_thresholds;
  const GofReport rep = goodness_of_fit(f, additivity, functional ? selected : std::vector<std::size_t>{}, g);

  std::ostringstream txt;
  txt << "Marginal additive subdistribution hazards: estimation and model checking\n" << data_lines(ds, f);
  txt << "perturbation draws " << rep.draws << ", seed " << rep.seed << ", p-value "
      << (rep.pvalue_add_one ? "(1 + count) / (B + 1)" : "count / B") << "\n\n";
  std::size_t wname = 9;
  for (const auto& r : coef) wname = std::max(wname, r.name.size());
  auto find_row = [](const std::vector<GofRow>& v, const std::string& name) -> const GofRow* {
    for (const auto& r : v)
      if (r.name == name) return &r;
    return nullptr;
  };
  auto table = [&](const char* title, const std::vector<GofRow>& tests, const GofRow* overall) {
    txt << title << '\n';
    txt << pad("", wname, true) << pad("Model Fitting", 26) << pad("Model Checking", 26) << '\n';
    txt << pad("covariate", wname, true) << pad("Estimate", 13) << pad("Robust SE", 13) << pad("Test Statistic", 16)
        << pad("p-Value", 10) << '\n';
    for (std::size_t l : selected) {
      const auto& c = coef[l];
      const GofRow* r = find_row(tests, c.name);
      txt << pad(c.name, wname, true) << pad(fmt(c.estimate), 13) << pad(fmt(c.se), 13)
          << pad(r ? fmt(r->statistic) : "--", 16) << pad(r ? fmt(r->p_value, 3) : "--", 10) << '\n';
    }
    if (overall) {
      txt << pad(overall->name, wname, true) << pad("--", 13) << pad("--", 13) << pad(fmt(overall->statistic), 16)
          << pad(fmt(overall->p_value, 3), 10) << '\n';
    }
  };
  if (additivity) table("Additivity (score process) tests", rep.rows, &rep.overall);
  if (functional) {
    if (additivity) txt << '\n';
    table("Functional form tests", rep.functional_form, nullptr);
  }
  for (const auto& w : f.warnings) txt << "warning: " << w << '\n';
  for (const auto& w : rep.warnings) txt << "warning: " << w << '\n';

  json doc;
  doc["manifest"] = manifest("gof", sub, o.seed, {{o.data.input, bytes}});
  doc["data"] = data_summary(ds, f);
  doc["draws"] = rep.draws;
  doc["pvalue_add_one"] = rep.pvalue_add_one;
  json rows = json::array();
  for (std::size_t l : selected) {
    const auto& c = coef[l];
    json row{{"name", c.name}, {"estimate", c.estimate}, {"robust_se", c.se}};
    if (const GofRow* r = find_row(rep.rows, c.name)) {
      row["additivity"] = {{"statistic", r->statistic}, {"p_value", r->p_value}};
    }
    if (const GofRow* r = find_row(rep.functional_form, c.name)) {
      row["functional_form"] = {{"statistic", r->statistic}, {"p_value", r->p_value}};
    }
    rows.push_back(row);
  }
  doc["rows"] = rows;
  if (additivity) doc["overall"] = {{"statistic", rep.overall.statistic}, {"p_value", rep.overall.p_value}};
  json exported = json::array();
  if (!o.export_prefix.empty()) {
    for (const auto& tp : rep.processes) {
      if (tp.kind != TestKind::overall_additivity &&
          std::find(selected.begin(), selected.end(), tp.covariate) == selected.end()) {
        continue;
      }
      const std::string tag = tp.kind == TestKind::functional_form ? "functional" : "additivity";
      const std::string path = o.export_prefix + "." + tag + "." + file_safe(tp.name) + ".csv";
      std::ofstream f_out(path);
      if (!f_out) throw Error(ErrorCode::InvalidArgument, "cannot write '" + path + "'");
      export_test_process(tp, o.plot_draws, f_out);
      exported.push_back({{"process", tag + ":" + tp.name}, {"path", path}});
    }
  }
  doc["exported"] = exported;
  std::vector<std::string> warnings = f.warnings;
  warnings.insert(warnings.end(), rep.warnings.begin(), rep.warnings.end());
  doc["warnings"] = warnings;
  emit(o.out, txt.str(), doc);
  return 0;
}

// ---------------------------------------------------------------- simulate
struct SimCmd {
  std::string model = "m1";
  std::size_t n = 100;
  std::size_t m = 10;
  double rho = 0.5;
  double theta = 0.7;
  std::vector<double> beta1{1.0};
  std::vector<double> beta2{0.2};
  double gamma = 0.35;
  double horizon = std::numeric_limits<double>::infinity();
  std::string covariates;
  std::uint64_t seed = 1;
  std::uint64_t replicate = 0;
  bool truth = false;
  bool no_ctime = false;
  bool shared = false;
  std::string out;
};

int run_simulate(const SimCmd& o, const CLI::App& sub) {
  SimConfig c;
  c.model = parse_sim_model(o.model);
  c.n_clusters = o.n;
  c.cluster_size = o.m;
  c.rho = o.rho;
  c.theta = o.theta;
  c.beta1 = o.beta1;
  c.beta2 = o.beta2;
  c.gamma = o.gamma;
  c.horizon = o.horizon;
  c.covariates = o.covariates.empty()
                     ? (o.beta1.size() == 1 ? CovariateSpec::uniform01 : CovariateSpec::normal_bernoulli)
                     : parse_covariate_spec(o.covariates);
  c.seed = o.seed;
  c.replicate = o.replicate;
  c.record_ctime = !o.no_ctime;
  c.shared_covariates = o.shared;
  const SimDataset sim = generate(c);

  std::vector<std::string> lines;
  std::istringstream ms(manifest("simulate", sub, o.seed, {}).dump());
  lines.push_back("manifest " + ms.str());
  char buf[160];
  std::snprintf(buf, sizeof buf, "censored share %.6f, covariate redraws %zu, cause-2 fallbacks %zu",
                sim.censoring_fraction(), sim.redraws, sim.fallbacks);
  lines.emplace_back(buf);

  std::ostringstream os;
  if (o.truth) save_sim_dataset(os, sim, lines);
  else save_dataset(os, sim.data, lines);
  if (o.out.empty() || o.out == "-") {
    std::cout << os.str();
  } else {
    std::ofstream f(o.out, std::ios::binary);
    if (!f) throw Error(ErrorCode::InvalidArgument, "cannot write '" + o.out + "'");
    f << os.str();
  }
  return 0;
}

// ---------------------------------------------------------------- replicate
struct RepCmd {
  std::string study = "table1";
  int reps = 1000;
  unsigned parallel = 0;
  std::uint64_t seed = 1;
  std::vector<std::size_t> n;
  std::vector<std::size_t> m;
  std::vector<double> theta;
  std::vector<double> gamma;
  std::vector<std::string> model;
  int draws = 1000;
  double alpha = 0.05;
  std::string out;
};

template <class T>
bool keep(const std::vector<T>& filter, const T& v) {
  return filter.empty() || std::find(filter.begin(), filter.end(), v) != filter.end();
}

int run_replicate(const RepCmd& o, const CLI::App& sub) {
  const unsigned workers = o.parallel > 0 ? o.parallel : default_workers();
  std::ostringstream txt;
  json doc;
  doc["manifest"] = manifest("replicate", sub, o.seed, {});
  doc["study"] = o.study;
  doc["replicates"] = o.reps;
  json cells = json::array();
  std::size_t worst_failed = 0;
  std::vector<std::string> warnings;

  if (o.study == "table1" || o.study == "table2") {
    const double gamma = o.study == "table1" ? 0.35 : 0.95;
    txt << "Coverage study, exponential censoring rate " << gamma << ", " << o.reps << " replicates, true beta1 1\n";
    txt << pad("n", 5) << pad("m", 5) << pad("theta", 7) << pad("cens", 7) << "  " << pad("arm", 5, true)
        << pad("E(beta)", 10) << pad("MCSE", 9) << pad("AESE", 9) << pad("Coverage", 10) << pad("used", 6) << '\n';
    for (double theta : {0.7, 1.0}) {
      for (std::size_t n : {std::size_t{100}, std::size_t{250}}) {
        for (std::size_t m : {std::size_t{10}, std::size_t{20}}) {
          if (!keep(o.n, n) || !keep(o.m, m) || !keep(o.theta, theta)) continue;
          SimConfig c = SimConfig::study1(n, m, theta, gamma);
          c.seed = o.seed;
          const CoverageSummary s = run_coverage_study(c, o.reps, workers);
          worst_failed = std::max(worst_failed, s.failed);
          json arms = json::array();
          for (const auto& a : s.arms) {
            txt << pad(std::to_string(n), 5) << pad(std::to_string(m), 5) << pad(fmt(theta, 1), 7)
                << pad(fmt(100.0 * s.censoring, 1), 7) << "  " << pad(to_string(a.arm), 5, true)
                << pad(fmt(a.mean_estimate, 3), 10) << pad(fmt(a.mcse, 3), 9) << pad(fmt(a.aese, 3), 9)
                << pad(fmt(100.0 * a.coverage, 2), 10) << pad(std::to_string(a.used), 6) << '\n';
            arms.push_back({{"arm", to_string(a.arm)}, {"mean_estimate", a.mean_estimate}, {"mcse", a.mcse},
                            {"aese", a.aese}, {"coverage", a.coverage}, {"used", a.used}});
          }
          for (const auto& w : s.warnings) warnings.push_back("n=" + std::to_string(n) + " m=" + std::to_string(m) + ": " + w);
          cells.push_back({{"n", n}, {"m", m}, {"theta", theta}, {"gamma", gamma}, {"censoring", s.censoring},
                           {"failed", s.failed}, {"arms", arms}});
        }
      }
    }
  } else if (o.study == "table3") {
    txt << "Overall additivity test, cluster size 10, " << o.reps << " replicates, " << o.draws
        << " perturbation draws, alpha " << o.alpha << '\n';
    txt << pad("model", 6, true) << pad("theta", 7) << pad("gamma", 7) << pad("n", 5) << pad("cens", 7)
        << pad("rate", 8) << pad("used", 6) << '\n';
    GofOptions g;
    g.draws = o.draws;
    for (const char* model : {"M1", "M2"}) {
      for (double theta : {0.7, 1.0}) {
        for (double gamma : {0.35, 0.95, 1.65}) {
          for (std::size_t n : {std::size_t{100}, std::size_t{150}}) {
            std::string lower = model;
            lower[0] = 'm';
            if (!(keep(o.model, std::string(model)) || keep(o.model, lower)) || !keep(o.n, n) ||
                !keep(o.theta, theta) || !keep(o.gamma, gamma)) {
              continue;
            }
            SimConfig c = SimConfig::study2(parse_sim_model(model), n, theta, gamma);
            c.seed = o.seed;
            const RejectionSummary s = run_rejection_study(c, o.reps, g, o.alpha, workers);
            worst_failed = std::max(worst_failed, s.failed);
            const std::size_t used = static_cast<std::size_t>(o.reps) - s.failed;
            txt << pad(model, 6, true) << pad(fmt(theta, 1), 7) << pad(fmt(gamma, 2), 7) << pad(std::to_string(n), 5)
                << pad(fmt(100.0 * s.censoring, 1), 7) << pad(fmt(s.rate, 3), 8) << pad(std::to_string(used), 6) << '\n';
            cells.push_back({{"model", model}, {"theta", theta}, {"gamma", gamma}, {"n", n}, {"m", 10},
                             {"censoring", s.censoring}, {"rate", s.rate}, {"rejections", s.rejections},
                             {"failed", s.failed}});
            for (const auto& w : s.warnings) warnings.push_back(std::string(model) + " n=" + std::to_string(n) + ": " + w);
          }
        }
      }
    }
  } else {
    throw Error(ErrorCode::InvalidArgument, "unknown study '" + o.study + "' (expected table1, table2 or table3)");
  }
  if (cells.empty()) throw Error(ErrorCode::InvalidArgument, "no study cell matches the filters");
  for (const auto& w : warnings) txt << "warning: " << w << '\n';
  doc["cells"] = cells;
  doc["warnings"] = warnings;
  emit(o.out, txt.str(), doc);
  check_replication_quality(worst_failed, o.reps);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Marginal additive subdistribution hazards for clustered competing risks"};
  app.set_version_flag("--version", MASH_VERSION);
  app.require_subcommand(1);
  std::string isa;
  app.add_option("--isa", isa, "Force the perturbation kernel: scalar, avx2 or neon");

  FitCmd fit_o;
  CLI::App* fit_c = app.add_subcommand("fit", "Fit the model and report robust standard errors");
  fit_o.data.add(fit_c);
  fit_c->add_option("--variance", fit_o.variance, "Sandwich clustering: cluster or individual")
      ->capture_default_str()
      ->check(CLI::IsMember({"cluster", "individual"}));
  fit_c->add_option("--out", fit_o.out, "Report path (default stdout)");
  fit_c->add_option("--baseline-out", fit_o.baseline_out, "CSV of the cumulative baseline");

  GofCmd gof_o;
  CLI::App* gof_c = app.add_subcommand("gof", "Fit the model and run goodness-of-fit tests");
  gof_o.data.add(gof_c);
  gof_c->add_option("--test", gof_o.test, "additivity, functional-form or all")
      ->capture_default_str()
      ->check(CLI::IsMember({"additivity", "functional-form", "all"}));
  gof_c->add_option("--covariate", gof_o.covariate, "Covariate names or 1-based indices, or all")->capture_default_str();
  gof_c->add_option("--variance", gof_o.variance, "Sandwich clustering for the estimate columns")
      ->capture_default_str()
      ->check(CLI::IsMember({"cluster", "individual"}));
  gof_c->add_option("--draws", gof_o.draws, "Perturbation draws (at least 100)")->capture_default_str();
  gof_c->add_option("--seed", gof_o.seed, "Multiplier seed")->capture_default_str();
  gof_c->add_flag("--pvalue-add-one", gof_o.add_one, "Report (1 + count) / (B + 1)");
  gof_c->add_option("--export-processes", gof_o.export_prefix, "Path prefix for CSV process traces");
  gof_c->add_option("--plot-draws", gof_o.plot_draws, "Perturbed draws per exported trace")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  gof_c->add_option("--threads", gof_o.threads, "Threads for the perturbation kernel")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  gof_c->add_option("--max-thresholds", gof_o.max_thresholds, "Cap on functional-form thresholds")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  gof_c->add_option("--out", gof_o.out, "Report path (default stdout)");

  SimCmd sim_o;
  CLI::App* sim_c = app.add_subcommand("simulate", "Generate clustered competing risks data");
  sim_c->add_option("--model", sim_o.model, "m1 (additive) or m2 (proportional)")->capture_default_str();
  sim_c->add_option("--n", sim_o.n, "Number of clusters")->capture_default_str();
  sim_c->add_option("--m", sim_o.m, "Cluster size")->capture_default_str();
  sim_c->add_option("--rho", sim_o.rho, "Reference-group cause-1 rate")->capture_default_str();
  sim_c->add_option("--theta", sim_o.theta, "Frailty rate parameter")->capture_default_str();
  sim_c->add_option("--beta1", sim_o.beta1, "Cause-1 coefficients")->delimiter(',')->capture_default_str();
  sim_c->add_option("--beta2", sim_o.beta2, "Cause-2 coefficients")->delimiter(',')->capture_default_str();
  sim_c->add_option("--gamma", sim_o.gamma, "Exponential censoring rate (0: none)")->capture_default_str();
  sim_c->add_option("--horizon", sim_o.horizon, "Administrative censoring time");
  sim_c->add_option("--covariates", sim_o.covariates, "uniform or normal-bernoulli (default from beta1 length)");
  sim_c->add_option("--seed", sim_o.seed, "Seed")->capture_default_str();
  sim_c->add_option("--replicate", sim_o.replicate, "Replicate index")->capture_default_str();
  sim_c->add_flag("--truth", sim_o.truth, "Add true_time, true_cause and frailty columns");
  sim_c->add_flag("--no-ctime", sim_o.no_ctime, "Omit potential censoring times");
  sim_c->add_flag("--shared-covariates", sim_o.shared, "Draw covariates once per cluster");
  sim_c->add_option("--out", sim_o.out, "Output path (default stdout)");

  RepCmd rep_o;
  CLI::App* rep_c = app.add_subcommand("replicate", "Run a simulation study");
  rep_c->add_option("--study", rep_o.study, "table1, table2 or table3")
      ->capture_default_str()
      ->check(CLI::IsMember({"table1", "table2", "table3"}));
  rep_c->add_option("--reps", rep_o.reps, "Replicates per cell")->capture_default_str()->check(CLI::PositiveNumber);
  rep_c->add_option("--parallel", rep_o.parallel, "Workers (default MASH_WORKERS or all cores)");
  rep_c->add_option("--seed", rep_o.seed, "Seed")->capture_default_str();
  rep_c->add_option("--n", rep_o.n, "Restrict to these cluster counts")->delimiter(',');
  rep_c->add_option("--m", rep_o.m, "Restrict to these cluster sizes")->delimiter(',');
  rep_c->add_option("--theta", rep_o.theta, "Restrict to these frailty rates")->delimiter(',');
  rep_c->add_option("--gamma", rep_o.gamma, "Restrict to these censoring rates (table3)")->delimiter(',');
  rep_c->add_option("--model", rep_o.model, "Restrict to these models (table3)")->delimiter(',');
  rep_c->add_option("--draws", rep_o.draws, "Perturbation draws (table3)")->capture_default_str();
  rep_c->add_option("--alpha", rep_o.alpha, "Test level (table3)")->capture_default_str();
  rep_c->add_option("--out", rep_o.out, "Report path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  try {
    if (!isa.empty()) {
      using kernels::Isa;
      if (isa == "scalar") kernels::set_isa(Isa::scalar);
      else if (isa == "avx2") kernels::set_isa(Isa::avx2);
      else if (isa == "neon") kernels::set_isa(Isa::neon);
      else throw Error(ErrorCode::InvalidArgument, "unknown instruction set '" + isa + "'");
    }
    if (*fit_c) return run_fit(fit_o, *fit_c);
    if (*gof_c) return run_gof(gof_o, *gof_c);
    if (*sim_c) return run_simulate(sim_o, *sim_c);
    if (*rep_c) return run_replicate(rep_o, *rep_c);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
