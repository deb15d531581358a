#pragma once

// Run configuration, single-point pipeline, steady-state detection,
// (L, zeta) sweeps with resumable output directories, and the TWA-vs-exact
// comparison.

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "twachain/engine.hpp"
#include "twachain/error.hpp"
#include "twachain/model.hpp"
#include "twachain/observables.hpp"
#include "twachain/oracle.hpp"
#include "twachain/otoc.hpp"
#include "twachain/parallel.hpp"
#include "twachain/thermofit.hpp"

namespace twachain {

using json = nlohmann::json;

inline constexpr const char* kCodeVersion = "1.0.0";

// ---------------------------------------------------------------------------
// Configuration

struct ObservableSpec {
  int m_max = 3;
  std::vector<int> wigner_sites;  // 0-based
  int wigner_bins = 201;
  std::vector<int> fit_sites;     // thermodynamic fits and equipartition check
  bool impurity_fit = false;
};

struct OtocSpec {
  bool enabled = false;
  int perturb_site = 0;
  double epsilon = kDefaultOtocEpsilon;
  double tau_max = 20.0;
  double tau_step = 0.05;
  int n_starts = 1;
  double start_spacing = 10.0;
  double threshold = 0.1;
  double band_low = 1e-3, band_high = 1e-1;
  std::vector<int> velocity_sites;  // empty: all but the perturbed site
  std::vector<int> lyapunov_sites;
};

struct SteadySpec {
  bool check = true;
  double t_block = 10.0;
};

struct OracleSpec {
  int cutoff = 64;
  int max_cutoff = 128;
  int n_traj = 300;
  double dt = 5e-3;
  double t_max = 40.0;
  int checkpoints = 20;
  double convergence = 5e-3;
  int convergence_traj = 8;
  int twa_traj = 10000;
  double leakage_tolerance = 1e-6;
};

struct RunConfig {
  ChainParams params;
  InitialCondition initial;
  IntegrationControls controls;
  Dynamics dynamics = Dynamics::kTruncatedWigner;
  double gp_amplitude = 1e-2;  // |alpha_0| of the classical vacuum start
  ObservableSpec observables;
  OtocSpec otoc;
  SteadySpec steady;
  OracleSpec oracle;
  int threads = 1;
};

namespace detail {

inline Error config_error(const std::string& message, const std::string& context = {}) {
  return Error("config", "ConfigParse", message, context);
}

inline void allow_keys(const json& j, const std::string& section, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw config_error("section must be an object", section);
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* a : keys) ok |= k == a;
    if (!ok) throw config_error("unknown key", section.empty() ? k : section + "." + k);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw config_error(std::string("wrong type: ") + e.what(), section + "." + key);
  }
}

inline std::vector<int> read_sites(const json& j, const char* key, const std::string& section) {
  std::vector<int> one_based;
  read(j, key, one_based, section);
  std::vector<int> out;
  for (int s : one_based) out.push_back(s - 1);
  return out;
}

inline std::vector<int> one_based(const std::vector<int>& v) {
  std::vector<int> o;
  for (int s : v) o.push_back(s + 1);
  return o;
}

}  // namespace detail

inline const char* to_string(InitialKind k) {
  switch (k) {
    case InitialKind::kVacuum: return "vacuum";
    case InitialKind::kRingState: return "ring";
    case InitialKind::kExplicit: return "explicit";
  }
  return "?";
}

/// Parses a configuration object. Missing keys keep their defaults; for
/// n >= 3 the initial state defaults to the ring state.
inline RunConfig config_from_json(const json& j) {
  using detail::read;
  RunConfig c;
  detail::allow_keys(j, "", {"model", "initial", "integration", "dynamics", "observables", "steady",
                             "otoc", "oracle", "sweep", "threads"});
  if (j.contains("model")) {
    const json& m = j["model"];
    detail::allow_keys(m, "model", {"L", "n", "delta", "U", "J", "zeta", "gamma"});
    read(m, "L", c.params.sites, "model");
    read(m, "n", c.params.photon_order, "model");
    read(m, "delta", c.params.detuning, "model");
    read(m, "U", c.params.kerr, "model");
    read(m, "J", c.params.hopping, "model");
    read(m, "zeta", c.params.drive, "model");
    read(m, "gamma", c.params.loss, "model");
  }
  c.initial.kind = c.params.photon_order >= 3 ? InitialKind::kRingState : InitialKind::kVacuum;
  if (j.contains("initial")) {
    const json& m = j["initial"];
    detail::allow_keys(m, "initial", {"kind", "ring_radius", "explicit_fields", "gp_amplitude"});
    if (m.contains("kind")) {
      std::string k;
      read(m, "kind", k, "initial");
      if (k == "vacuum") c.initial.kind = InitialKind::kVacuum;
      else if (k == "ring") c.initial.kind = InitialKind::kRingState;
      else if (k == "explicit") c.initial.kind = InitialKind::kExplicit;
      else throw detail::config_error("unknown initial kind '" + k + "'", "initial.kind");
    }
    read(m, "ring_radius", c.initial.ring_radius, "initial");
    read(m, "gp_amplitude", c.gp_amplitude, "initial");
    if (m.contains("explicit_fields")) {
      std::vector<std::array<double, 2>> f;
      read(m, "explicit_fields", f, "initial");
      for (const auto& x : f) c.initial.explicit_fields.emplace_back(x[0], x[1]);
    }
  }
  if (j.contains("integration")) {
    const json& m = j["integration"];
    detail::allow_keys(m, "integration",
                       {"dt", "t_transient", "t_window", "sample_spacing", "n_traj", "master_seed"});
    read(m, "dt", c.controls.dt, "integration");
    read(m, "t_transient", c.controls.t_transient, "integration");
    read(m, "t_window", c.controls.t_window, "integration");
    read(m, "sample_spacing", c.controls.sample_spacing, "integration");
    read(m, "n_traj", c.controls.n_traj, "integration");
    read(m, "master_seed", c.controls.master_seed, "integration");
  }
  if (j.contains("dynamics")) {
    std::string d;
    read(j, "dynamics", d, "");
    if (d == "twa") c.dynamics = Dynamics::kTruncatedWigner;
    else if (d == "gp") c.dynamics = Dynamics::kGrossPitaevskii;
    else throw detail::config_error("unknown dynamics '" + d + "'", "dynamics");
  }
  if (j.contains("observables")) {
    const json& m = j["observables"];
    detail::allow_keys(m, "observables", {"m_max", "wigner_sites", "wigner_bins", "fit_sites", "impurity_fit"});
    read(m, "m_max", c.observables.m_max, "observables");
    c.observables.wigner_sites = detail::read_sites(m, "wigner_sites", "observables");
    read(m, "wigner_bins", c.observables.wigner_bins, "observables");
    c.observables.fit_sites = detail::read_sites(m, "fit_sites", "observables");
    read(m, "impurity_fit", c.observables.impurity_fit, "observables");
  }
  if (j.contains("steady")) {
    const json& m = j["steady"];
    detail::allow_keys(m, "steady", {"check", "t_block"});
    read(m, "check", c.steady.check, "steady");
    read(m, "t_block", c.steady.t_block, "steady");
  }
  if (j.contains("otoc")) {
    const json& m = j["otoc"];
    detail::allow_keys(m, "otoc", {"enabled", "perturb_site", "epsilon", "tau_max", "tau_step", "n_starts",
                                   "start_spacing", "threshold", "band", "velocity_sites",
                                   "lyapunov_sites"});
    auto& o = c.otoc;
    read(m, "enabled", o.enabled, "otoc");
    int k = o.perturb_site + 1;
    read(m, "perturb_site", k, "otoc");
    o.perturb_site = k - 1;
    read(m, "epsilon", o.epsilon, "otoc");
    read(m, "tau_max", o.tau_max, "otoc");
    read(m, "tau_step", o.tau_step, "otoc");
    read(m, "n_starts", o.n_starts, "otoc");
    read(m, "start_spacing", o.start_spacing, "otoc");
    read(m, "threshold", o.threshold, "otoc");
    if (m.contains("band")) {
      std::array<double, 2> b{};
      read(m, "band", b, "otoc");
      o.band_low = b[0];
      o.band_high = b[1];
    }
    o.velocity_sites = detail::read_sites(m, "velocity_sites", "otoc");
    o.lyapunov_sites = detail::read_sites(m, "lyapunov_sites", "otoc");
  }
  if (j.contains("oracle")) {
    const json& m = j["oracle"];
    detail::allow_keys(m, "oracle", {"cutoff", "max_cutoff", "n_traj", "dt", "t_max", "checkpoints",
                                     "convergence", "convergence_traj", "twa_traj", "leakage_tolerance"});
    auto& o = c.oracle;
    read(m, "cutoff", o.cutoff, "oracle");
    read(m, "max_cutoff", o.max_cutoff, "oracle");
    read(m, "n_traj", o.n_traj, "oracle");
    read(m, "dt", o.dt, "oracle");
    read(m, "t_max", o.t_max, "oracle");
    read(m, "checkpoints", o.checkpoints, "oracle");
    read(m, "convergence", o.convergence, "oracle");
    read(m, "convergence_traj", o.convergence_traj, "oracle");
    read(m, "twa_traj", o.twa_traj, "oracle");
    read(m, "leakage_tolerance", o.leakage_tolerance, "oracle");
  }
  read(j, "threads", c.threads, "");
  return c;
}

/// Fully resolved configuration (all defaults expanded, sites 1-based).
inline json config_to_json(const RunConfig& c) {
  json j;
  j["model"] = {{"L", c.params.sites}, {"n", c.params.photon_order}, {"delta", c.params.detuning},
                {"U", c.params.kerr},  {"J", c.params.hopping},      {"zeta", c.params.drive},
                {"gamma", c.params.loss}};
  json fields = json::array();
  for (const auto& a : c.initial.explicit_fields) fields.push_back({a.real(), a.imag()});
  j["initial"] = {{"kind", to_string(c.initial.kind)},
                  {"ring_radius", c.initial.ring_radius},
                  {"explicit_fields", fields},
                  {"gp_amplitude", c.gp_amplitude}};
  j["integration"] = {{"dt", c.controls.dt},
                      {"t_transient", c.controls.t_transient},
                      {"t_window", c.controls.t_window},
                      {"sample_spacing", c.controls.sample_spacing},
                      {"n_traj", c.controls.n_traj},
                      {"master_seed", c.controls.master_seed}};
  j["dynamics"] = c.dynamics == Dynamics::kTruncatedWigner ? "twa" : "gp";
  j["observables"] = {{"m_max", c.observables.m_max},
                      {"wigner_sites", detail::one_based(c.observables.wigner_sites)},
                      {"wigner_bins", c.observables.wigner_bins},
                      {"fit_sites", detail::one_based(c.observables.fit_sites)},
                      {"impurity_fit", c.observables.impurity_fit}};
  j["steady"] = {{"check", c.steady.check}, {"t_block", c.steady.t_block}};
  const auto& o = c.otoc;
  j["otoc"] = {{"enabled", o.enabled},
               {"perturb_site", o.perturb_site + 1},
               {"epsilon", o.epsilon},
               {"tau_max", o.tau_max},
               {"tau_step", o.tau_step},
               {"n_starts", o.n_starts},
               {"start_spacing", o.start_spacing},
               {"threshold", o.threshold},
               {"band", {o.band_low, o.band_high}},
               {"velocity_sites", detail::one_based(o.velocity_sites)},
               {"lyapunov_sites", detail::one_based(o.lyapunov_sites)}};
  const auto& q = c.oracle;
  j["oracle"] = {{"cutoff", q.cutoff},
                 {"max_cutoff", q.max_cutoff},
                 {"n_traj", q.n_traj},
                 {"dt", q.dt},
                 {"t_max", q.t_max},
                 {"checkpoints", q.checkpoints},
                 {"convergence", q.convergence},
                 {"convergence_traj", q.convergence_traj},
                 {"twa_traj", q.twa_traj},
                 {"leakage_tolerance", q.leakage_tolerance}};
  j["threads"] = c.threads;
  return j;
}

/// Checks model invariants plus site indices and module options.
inline ValidatedConfig validate_run(const RunConfig& c) {
  auto v = check(c.params, c.initial, c.controls);
  const int L = c.params.sites;
  auto site_ok = [&](int s) { return s >= 0 && s < L; };
  for (int s : c.observables.wigner_sites)
    if (!site_ok(s)) v.push_back({"SiteOutOfRange", "observables.wigner_sites"});
  for (int s : c.observables.fit_sites)
    if (!site_ok(s)) v.push_back({"SiteOutOfRange", "observables.fit_sites"});
  if (c.observables.m_max < 1) v.push_back({"NonPositive", "observables.m_max"});
  if (c.observables.wigner_bins < 1) v.push_back({"NonPositive", "observables.wigner_bins"});
  if (c.steady.t_block <= 0.0) v.push_back({"NonPositive", "steady.t_block"});
  if (c.threads < 1) v.push_back({"NonPositive", "threads"});
  if (c.otoc.enabled) {
    if (!site_ok(c.otoc.perturb_site)) v.push_back({"PerturbSiteOutOfRange", "otoc.perturb_site"});
    for (int s : c.otoc.velocity_sites)
      if (!site_ok(s)) v.push_back({"SiteOutOfRange", "otoc.velocity_sites"});
    for (int s : c.otoc.lyapunov_sites)
      if (!site_ok(s)) v.push_back({"SiteOutOfRange", "otoc.lyapunov_sites"});
    if (!(c.otoc.tau_step > 0.0) || !(c.otoc.tau_max > 0.0)) v.push_back({"NonPositive", "otoc.tau"});
    if (c.dynamics == Dynamics::kGrossPitaevskii) v.push_back({"Unsupported", "otoc.enabled"});
  }
  if (!v.empty()) throw ValidationError(std::move(v));
  return validate(c.params, c.initial, c.controls);
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw detail::config_error("cannot open config file", path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw detail::config_error(e.what(), path);
  }
  return config_from_json(j);
}

/// FNV-1a 64 of the canonical resolved config, excluding the thread count.
inline std::string config_hash(const RunConfig& c) {
  json j = config_to_json(c);
  j.erase("threads");
  const std::string s = j.dump();
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Text output helpers

inline std::string num(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream os(p);
  if (!os) throw Error("harness", "OutputIO", "cannot write " + p.string());
  os << s;
  if (!os) throw Error("harness", "OutputIO", "write failed for " + p.string());
}

/// JSON with NaN mapped to null.
inline json jnum(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

inline double from_jnum(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

// ---------------------------------------------------------------------------
// Steady-state detection

/// Channels sampled on a common time grid.
struct TimeSeries {
  std::vector<double> t;
  std::vector<std::vector<double>> values;  // [channel][time]
};

/// First block boundary after which consecutive blocks of length t_block
/// agree within 3 combined standard errors in every channel. Block errors
/// are standard errors of the block mean from the within-block scatter.
inline double detect_steady(const TimeSeries& s, double t_block) {
  if (s.t.size() < 2 || !(t_block > 0.0))
    throw Error("harness", "InsufficientSeries", "series shorter than two comparison blocks");
  const double t0 = s.t.front();
  const double h = s.t[1] - s.t[0];
  const auto nb = static_cast<int>(std::floor((s.t.back() - t0 + h) / t_block + 1e-9));
  if (nb < 2) throw Error("harness", "InsufficientSeries", "series shorter than two comparison blocks");
  struct Block {
    double mean, se;
  };
  auto block = [&](const std::vector<double>& v, int b) {
    double sum = 0.0, sum2 = 0.0;
    int k = 0;
    for (std::size_t j = 0; j < s.t.size(); ++j) {
      const double rel = (s.t[j] - t0) / t_block;
      if (rel >= b - 1e-9 && rel < b + 1 - 1e-9) {
        sum += v[j];
        sum2 += v[j] * v[j];
        ++k;
      }
    }
    const double mean = sum / k;
    const double var = k > 1 ? std::max(0.0, (sum2 - k * mean * mean) / (k - 1)) : 0.0;
    return Block{mean, std::sqrt(var / k)};
  };
  for (int b = 0; b + 1 < nb; ++b) {
    bool ok = true;
    for (const auto& v : s.values) {
      const Block x = block(v, b), y = block(v, b + 1);
      ok &= std::abs(x.mean - y.mean) <= 3.0 * std::sqrt(x.se * x.se + y.se * y.se);
    }
    if (ok) return t0 + (b + 1) * t_block;
  }
  throw Error("harness", "NotSteadyWithinBudget", "block means still drift at the end of the series",
              "t_block=" + num(t_block));
}

// ---------------------------------------------------------------------------
// Single point

struct SiteRow {
  int site = 0;
  Estimate n, dn, g2;
  std::vector<Estimate> circular_variance;  // m = 1..m_max
  cplx g1{std::numeric_limits<double>::quiet_NaN(), 0.0};  // g1(1, l)
  double p2_raw = 0.0, p2_centered = 0.0, temperature = 0.0;
};

struct SiteFits {
  int site = 0;
  std::vector<FitReport> reports;
  std::vector<std::string> errors;  // "model:code" for fits that threw
  std::optional<MaxwellBoltzmannCheck> equipartition;
};

struct PointResult {
  RunConfig config;
  std::string hash;
  std::vector<SiteRow> sites;
  TimeSeries transient;            // n at sites {1, L/2, L} during burn-in
  std::vector<int> transient_sites;
  double steady_start = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> flags;  // not_steady_within_budget, steady_unchecked, ...
  std::vector<std::pair<int, WignerHistogram>> wigner;
  std::vector<SiteFits> fits;
  std::optional<OtocSeries> otoc;
  std::optional<ButterflyFit> butterfly;
  std::optional<LyapunovFit> lyapunov;
  std::vector<std::string> warnings;
  double wall_time = 0.0;

  bool has_flag(const std::string& f) const {
    return std::find(flags.begin(), flags.end(), f) != flags.end();
  }
  double D_inf(int l) const {
    return otoc ? otoc_saturation(*otoc, l) : std::numeric_limits<double>::quiet_NaN();
  }
};

namespace detail {

inline void initial_fields(const RunConfig& c, int traj, std::span<cplx> out) {
  CounterStream s(c.controls.master_seed, static_cast<std::uint32_t>(traj), StreamTag::kInitial);
  if (c.dynamics == Dynamics::kTruncatedWigner) {
    sample_initial(c.initial, s, out);
    return;
  }
  switch (c.initial.kind) {
    case InitialKind::kVacuum:
      for (auto& a : out) a = c.gp_amplitude;
      break;
    case InitialKind::kRingState: {
      const cplx ring = std::polar(c.initial.ring_radius, s.uniform_angle());
      for (auto& a : out) a = ring;
      break;
    }
    case InitialKind::kExplicit:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = c.initial.explicit_fields.at(i);
      break;
  }
}

inline std::vector<int> monitor_sites(int L) {
  std::set<int> s{0, std::max(0, L / 2 - 1), L - 1};
  return {s.begin(), s.end()};
}

/// Jackknife over contiguous groups of trajectories.
class GroupedEstimator {
 public:
  GroupedEstimator(const std::vector<MomentAccumulator>& per_traj, int max_groups) {
    const int n = static_cast<int>(per_traj.size());
    const int G = std::min(n, max_groups);
    std::vector<MomentAccumulator> groups;
    for (int g = 0; g < G; ++g) {
      const int lo = static_cast<int>(static_cast<long long>(g) * n / G);
      const int hi = static_cast<int>(static_cast<long long>(g + 1) * n / G);
      MomentAccumulator a = per_traj[lo];
      for (int t = lo + 1; t < hi; ++t) a.merge(per_traj[t]);
      groups.push_back(std::move(a));
    }
    total_ = groups[0];
    for (std::size_t g = 1; g < groups.size(); ++g) total_.merge(groups[g]);
    if (groups.size() > 1)
      for (const auto& g : groups) loo_.push_back(total_.without(g));
  }

  const MomentAccumulator& total() const { return total_; }

  /// Value and jackknife error of f; NaN when f is undefined on the data.
  Estimate operator()(const std::function<double(const MomentAccumulator&)>& g) const {
    auto f = [&g](const MomentAccumulator& a) {
      try {
        return g(a);
      } catch (const Error&) {
        return std::numeric_limits<double>::quiet_NaN();
      }
    };
    Estimate e;
    e.value = f(total_);
    const auto G = static_cast<double>(loo_.size());
    if (loo_.empty()) {
      e.std_error = std::numeric_limits<double>::quiet_NaN();
      return e;
    }
    std::vector<double> v;
    for (const auto& a : loo_) v.push_back(f(a));
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= G;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    e.std_error = std::sqrt(ss * (G - 1.0) / G);
    return e;
  }

 private:
  MomentAccumulator total_;
  std::vector<MomentAccumulator> loo_;
};

}  // namespace detail

using ProgressFn = std::function<void(const std::string&)>;

/// Burn-in, steady-window accumulation, optional Wigner/fit/OTOC analysis.
inline PointResult run_point(const RunConfig& cfg, const ProgressFn& log = {}) {
  const auto wall0 = std::chrono::steady_clock::now();
  const ValidatedConfig vc = validate_run(cfg);
  const ChainParams& p = vc.params();
  const IntegrationControls& c = vc.controls();
  const int L = p.sites, N = c.n_traj;
  const bool twa = cfg.dynamics == Dynamics::kTruncatedWigner;

  const long long sps = std::max<long long>(1, steps_for(c.sample_spacing, c.dt));
  const long long n_transient = steps_for(c.t_transient, c.dt);
  const long long n_mon = n_transient / sps + 1;  // monitor samples incl. t = 0
  const int K = 1 + static_cast<int>(std::floor(c.t_window / (static_cast<double>(sps) * c.dt) + 1e-9));

  std::vector<int> sample_sites = cfg.observables.wigner_sites;
  for (int s : cfg.observables.fit_sites)
    if (std::find(sample_sites.begin(), sample_sites.end(), s) == sample_sites.end()) sample_sites.push_back(s);
  const auto mon = detail::monitor_sites(L);

  std::vector<MomentAccumulator> acc(N, MomentAccumulator(L, cfg.observables.m_max));
  std::vector<double> monitor(static_cast<std::size_t>(N) * n_mon * mon.size());
  std::vector<std::vector<cplx>> samples(static_cast<std::size_t>(N) * sample_sites.size());
  FieldEnsemble final_state(N, L);

  if (log) log("running " + std::to_string(N) + " trajectories");
  parallel_for(N, cfg.threads, [&](int t) {
    Trajectory tr(p, cfg.dynamics, c.dt, c.master_seed, t);
    detail::initial_fields(cfg, t, tr.fields());
    double* m = monitor.data() + static_cast<std::size_t>(t) * n_mon * mon.size();
    auto record = [&](long long k) {
      for (std::size_t i = 0; i < mon.size(); ++i) m[k * mon.size() + i] = std::norm(tr.fields()[mon[i]]);
    };
    record(0);
    for (long long k = 1; k < n_mon; ++k) {
      tr.advance(sps);
      record(k);
    }
    tr.advance(n_transient - (n_mon - 1) * sps);
    for (int k = 0; k < K; ++k) {
      if (k > 0) tr.advance(sps);
      acc[t].add(tr.fields());
      for (std::size_t i = 0; i < sample_sites.size(); ++i)
        samples[static_cast<std::size_t>(t) * sample_sites.size() + i].push_back(tr.fields()[sample_sites[i]]);
    }
    std::copy(tr.fields().begin(), tr.fields().end(), final_state.trajectory(t).begin());
    final_state.counter(t) = tr.noise_counter();
  });
  final_state.time = static_cast<double>(n_transient + static_cast<long long>(K - 1) * sps) * c.dt;

  PointResult r;
  r.config = cfg;
  r.hash = config_hash(cfg);

  // burn-in monitor and steady detection
  const double shift = twa ? 0.5 : 0.0;
  r.transient_sites = mon;
  r.transient.values.assign(mon.size(), std::vector<double>(n_mon, 0.0));
  for (long long k = 0; k < n_mon; ++k) {
    r.transient.t.push_back(static_cast<double>(k * sps) * c.dt);
    for (std::size_t i = 0; i < mon.size(); ++i) {
      double s = 0.0;
      for (int t = 0; t < N; ++t) s += monitor[(static_cast<std::size_t>(t) * n_mon + k) * mon.size() + i];
      r.transient.values[i][k] = s / N - shift;
    }
  }
  if (!cfg.steady.check) {
    r.flags.push_back("steady_unchecked");
  } else {
    try {
      r.steady_start = detect_steady(r.transient, cfg.steady.t_block);
    } catch (const Error& e) {
      r.flags.push_back(e.code() == "NotSteadyWithinBudget" ? "not_steady_within_budget" : "steady_unchecked");
      r.warnings.push_back(e.code() + ": " + e.what());
    }
  }

  // per-site observables
  const detail::GroupedEstimator est(acc, 64);
  auto per_traj = [&](const std::function<double(const MomentAccumulator&)>& f) {
    double sum = 0.0, sum2 = 0.0;
    for (const auto& a : acc) {
      const double x = f(a);
      sum += x;
      sum2 += x * x;
    }
    Estimate e;
    e.value = sum / N;
    e.std_error = N > 1 ? std::sqrt(std::max(0.0, sum2 / N - e.value * e.value) / (N - 1))
                        : std::numeric_limits<double>::quiet_NaN();
    return e;
  };
  for (int l = 0; l < L; ++l) {
    SiteRow row;
    row.site = l;
    if (twa) {
      row.n = est([l](const MomentAccumulator& a) { return photon_number(a, l); });
      row.dn = est([l](const MomentAccumulator& a) { return photon_fluctuations(a, l); });
      row.g2 = est([l](const MomentAccumulator& a) { return second_order_coherence(a, l); });
      for (int m = 1; m <= cfg.observables.m_max; ++m)
        row.circular_variance.push_back(est([l, m](const MomentAccumulator& a) { return circular_variance(a, l, m); }));
    } else {
      // classical moments without Weyl shift, time-averaged per trajectory
      row.n = per_traj([l](const MomentAccumulator& a) { return a.mean_n2(l); });
      row.dn = per_traj([l](const MomentAccumulator& a) {
        const double n = a.mean_n2(l);
        return a.mean_n4(l) - n * n - n;
      });
      row.g2 = per_traj([l](const MomentAccumulator& a) {
        const double n = a.mean_n2(l);
        return n > 0.0 ? a.mean_n4(l) / (n * n) : std::numeric_limits<double>::quiet_NaN();
      });
      for (int m = 1; m <= cfg.observables.m_max; ++m)
        row.circular_variance.push_back(per_traj([l, m](const MomentAccumulator& a) { return circular_variance(a, l, m); }));
    }
    try {
      row.g1 = first_order_coherence(est.total(), 0, l);
    } catch (const Error&) {
    }
    try {
      const auto ms = momentum_statistics(est.total(), l, p.detuning);
      row.p2_raw = ms.p2_raw;
      row.p2_centered = ms.p2_centered;
      row.temperature = ms.temperature;
    } catch (const Error&) {
      row.p2_raw = row.p2_centered = row.temperature = std::numeric_limits<double>::quiet_NaN();
    }
    r.sites.push_back(std::move(row));
  }

  // Wigner histograms and fits
  auto site_samples = [&](int s) {
    const auto i = static_cast<std::size_t>(std::find(sample_sites.begin(), sample_sites.end(), s) - sample_sites.begin());
    std::vector<cplx> all;
    for (int t = 0; t < N; ++t) {
      const auto& v = samples[static_cast<std::size_t>(t) * sample_sites.size() + i];
      all.insert(all.end(), v.begin(), v.end());
    }
    return all;
  };
  auto histogram_for = [&](const std::vector<cplx>& x) {
    Grid2D g = auto_grid(x, cfg.observables.wigner_bins);
    return wigner_histogram(x, g);
  };
  for (int s : cfg.observables.wigner_sites) r.wigner.emplace_back(s, histogram_for(site_samples(s)));
  for (int s : cfg.observables.fit_sites) {
    if (log) log("fitting site " + std::to_string(s + 1));
    SiteFits f;
    f.site = s;
    const auto x = site_samples(s);
    const WignerHistogram h = histogram_for(x);
    auto attempt = [&](const char* name, const std::function<FitReport()>& fit) {
      try {
        f.reports.push_back(fit());
      } catch (const Error& e) {
        f.errors.push_back(std::string(name) + ":" + e.code());
      }
    };
    attempt("gibbs", [&] { return fit_gibbs(h, p.kerr); });
    attempt("one_param", [&] { return fit_one_param(h, r.sites[s].temperature); });
    if (cfg.observables.impurity_fit) attempt("impurity", [&] { return fit_impurity(h); });
    try {
      f.equipartition = maxwell_boltzmann_check(std::span<const cplx>(x), p.detuning);
    } catch (const Error& e) {
      f.errors.push_back(std::string("maxwell_boltzmann:") + e.code());
    }
    r.fits.push_back(std::move(f));
  }

  // OTOC on the final steady ensemble
  if (cfg.otoc.enabled) {
    if (log) log("computing OTOC");
    OtocOptions oo;
    oo.n_starts = cfg.otoc.n_starts;
    oo.start_spacing = cfg.otoc.start_spacing;
    oo.threads = cfg.threads;
    r.otoc = compute_otoc(final_state, cfg.otoc.perturb_site, cfg.otoc.epsilon,
                          tau_grid(cfg.otoc.tau_max, cfg.otoc.tau_step), p, c, oo);
    try {
      r.butterfly = extract_butterfly_velocity(*r.otoc, cfg.otoc.threshold, cfg.otoc.velocity_sites);
    } catch (const Error& e) {
      r.warnings.push_back(e.code() + ": " + e.what() + " [" + e.context() + "]");
    }
    try {
      r.lyapunov = extract_lyapunov(*r.otoc, cfg.otoc.lyapunov_sites, cfg.otoc.band_low, cfg.otoc.band_high);
    } catch (const Error& e) {
      r.warnings.push_back(e.code() + ": " + e.what() + " [" + e.context() + "]");
    }
  }
  r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
  return r;
}

// ---------------------------------------------------------------------------
// Point output

inline std::string sites_csv(const PointResult& r) {
  std::ostringstream os;
  const int M = r.config.observables.m_max;
  os << "site,n,n_err,dn,dn_err,g2,g2_err";
  for (int m = 1; m <= M; ++m) os << ",dphi" << m << ",dphi" << m << "_err";
  os << ",g1_abs,g1_arg,p2_raw,p2_centered,T_eq[gamma]\n";
  for (const auto& s : r.sites) {
    os << s.site + 1 << ',' << num(s.n.value) << ',' << num(s.n.std_error) << ',' << num(s.dn.value) << ','
       << num(s.dn.std_error) << ',' << num(s.g2.value) << ',' << num(s.g2.std_error);
    for (const auto& e : s.circular_variance) os << ',' << num(e.value) << ',' << num(e.std_error);
    os << ',' << num(std::abs(s.g1)) << ',' << num(std::isnan(s.g1.real()) ? s.g1.real() : std::arg(s.g1)) << ','
       << num(s.p2_raw) << ',' << num(s.p2_centered) << ',' << num(s.temperature) << '\n';
  }
  return os.str();
}

inline std::string transient_csv(const PointResult& r) {
  std::ostringstream os;
  os << "t[1/gamma]";
  for (int s : r.transient_sites) os << ",n_" << s + 1;
  os << '\n';
  for (std::size_t j = 0; j < r.transient.t.size(); ++j) {
    os << num(r.transient.t[j]);
    for (const auto& v : r.transient.values) os << ',' << num(v[j]);
    os << '\n';
  }
  return os.str();
}

inline std::string wigner_csv(const WignerHistogram& h) {
  std::ostringstream os;
  const Grid2D& g = h.grid();
  os << "# grid " << num(g.x_min) << ' ' << num(g.x_max) << ' ' << num(g.y_min) << ' ' << num(g.y_max) << ' '
     << g.bins_x << ' ' << g.bins_y << " samples " << h.in_grid() << '\n';
  os << "x,y,W\n";
  const auto d = h.density();
  for (int i = 0; i < g.bins_x; ++i)
    for (int j = 0; j < g.bins_y; ++j)
      os << num(g.x_center(i)) << ',' << num(g.y_center(j)) << ',' << num(d[static_cast<std::size_t>(i) * g.bins_y + j])
         << '\n';
  return os.str();
}

/// Reads a histogram written by wigner_csv.
inline WignerHistogram read_wigner_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("harness", "InputIO", "cannot open " + path);
  std::string line, tag, stag;
  std::getline(is, line);
  std::istringstream hs(line);
  Grid2D g;
  long long samples = 0;
  char hash = 0;
  hs >> hash >> tag >> g.x_min >> g.x_max >> g.y_min >> g.y_max >> g.bins_x >> g.bins_y >> stag >> samples;
  if (!hs || hash != '#' || tag != "grid") throw Error("harness", "InputIO", path + " lacks a grid header");
  std::getline(is, line);
  std::vector<double> d(static_cast<std::size_t>(g.bins_x) * g.bins_y, 0.0);
  for (std::size_t k = 0; k < d.size(); ++k) {
    if (!std::getline(is, line)) throw Error("harness", "InputIO", path + " is truncated");
    d[k] = std::stod(line.substr(line.rfind(',') + 1));
  }
  return WignerHistogram::from_density(g, std::move(d), samples);
}

inline std::string fits_csv(const PointResult& r) {
  std::ostringstream os;
  os << "site,model,T[gamma],mu[gamma],xi,mu_over_T,entropy,mean_occupation,l2_residual,goodness,converged,flags\n";
  for (const auto& f : r.fits) {
    for (const auto& rep : f.reports) {
      std::string flags;
      for (const auto& x : rep.flags) flags += (flags.empty() ? "" : ";") + x;
      os << f.site + 1 << ',' << to_string(rep.kind) << ',' << num(rep.T) << ',' << num(rep.mu) << ',' << num(rep.xi)
         << ',' << num(rep.mu_over_T) << ',' << num(rep.entropy) << ',' << num(rep.mean_occupation) << ','
         << num(rep.l2_residual) << ",nan," << (rep.converged ? 1 : 0) << ',' << flags << '\n';
    }
    if (f.equipartition) {
      std::string flags;
      for (const auto& x : f.equipartition->flags) flags += (flags.empty() ? "" : ";") + x;
      os << f.site + 1 << ",maxwell_boltzmann," << num(f.equipartition->T) << ",nan,nan,nan,nan,nan,nan,"
         << num(f.equipartition->goodness) << ",1," << flags << '\n';
    }
    for (const auto& e : f.errors) os << f.site + 1 << ',' << e.substr(0, e.find(':')) << ",nan,nan,nan,nan,nan,nan,nan,nan,0," << e.substr(e.find(':') + 1) << '\n';
  }
  return os.str();
}

inline std::string otoc_csv(const OtocSeries& s) {
  std::ostringstream os;
  os << "tau[1/gamma],site,D,D_err\n";
  for (int l = 0; l < s.sites; ++l)
    for (std::size_t j = 0; j < s.tau.size(); ++j)
      os << num(s.tau[j]) << ',' << l + 1 << ',' << num(s.at(l, j)) << ',' << num(s.error_at(l, j)) << '\n';
  return os.str();
}

inline json point_summary(const PointResult& r, const std::string& status = "completed") {
  const int L = r.config.params.sites;
  const auto& last = r.sites.back();
  json j;
  j["status"] = status;
  j["config_hash"] = r.hash;
  j["code_version"] = kCodeVersion;
  j["master_seed"] = r.config.controls.master_seed;
  j["L"] = L;
  j["zeta"] = r.config.params.drive;
  j["n"] = r.config.params.photon_order;
  j["n_L"] = jnum(last.n.value);
  j["n_L_err"] = jnum(last.n.std_error);
  j["dn_L"] = jnum(last.dn.value);
  j["dn_L_err"] = jnum(last.dn.std_error);
  j["D_1L_inf"] = jnum(r.otoc && r.otoc->perturb_site == 0 ? r.D_inf(L - 1) : std::numeric_limits<double>::quiet_NaN());
  j["steady_start"] = jnum(r.steady_start);
  j["steady_detection"] = "block-mean comparison of n at sites 1, L/2, L (operational criterion)";
  j["flags"] = r.flags;
  j["warnings"] = r.warnings;
  if (r.butterfly) j["butterfly_velocity"] = r.butterfly->velocity;
  if (r.lyapunov) {
    j["lyapunov_rate"] = r.lyapunov->rate;
    j["lyapunov_spread"] = r.lyapunov->spread;
  }
  j["wall_time_s"] = r.wall_time;
  return j;
}

/// Writes every artifact of a point into `dir`; summary.json is written last.
inline void write_point(const PointResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text(dir / "config.json", config_to_json(r.config).dump(2) + "\n");
  write_text(dir / "sites.csv", sites_csv(r));
  write_text(dir / "transient.csv", transient_csv(r));
  for (const auto& [s, h] : r.wigner) write_text(dir / ("wigner_site" + std::to_string(s + 1) + ".csv"), wigner_csv(h));
  if (!r.fits.empty()) write_text(dir / "fits.csv", fits_csv(r));
  if (r.otoc) write_text(dir / "otoc.csv", otoc_csv(*r.otoc));
  const auto tmp = dir / "summary.json.tmp";
  write_text(tmp, point_summary(r).dump(2) + "\n");
  std::filesystem::rename(tmp, dir / "summary.json");
}

// ---------------------------------------------------------------------------
// Sweeps

struct PointOverride {
  int L = 0;
  double zeta = 0.0;
  json patch;  // merge patch applied to the point's config
};

struct SweepSpec {
  std::vector<int> L;
  std::vector<double> zeta;
  std::vector<PointOverride> overrides;
  json base;  // configuration shared by all points (without the sweep section)
};

inline SweepSpec sweep_from_json(const json& j) {
  if (!j.contains("sweep")) throw Error("config", "Validation", "configuration has no sweep section", "sweep");
  const json& s = j["sweep"];
  detail::allow_keys(s, "sweep", {"L", "zeta", "overrides"});
  SweepSpec spec;
  detail::read(s, "L", spec.L, "sweep");
  detail::read(s, "zeta", spec.zeta, "sweep");
  if (s.contains("overrides"))
    for (const auto& o : s["overrides"]) {
      detail::allow_keys(o, "sweep.overrides", {"L", "zeta", "set"});
      PointOverride po;
      detail::read(o, "L", po.L, "sweep.overrides");
      detail::read(o, "zeta", po.zeta, "sweep.overrides");
      po.patch = o.value("set", json::object());
      spec.overrides.push_back(std::move(po));
    }
  spec.base = j;
  spec.base.erase("sweep");
  return spec;
}

inline RunConfig point_config(const SweepSpec& spec, int L, double zeta) {
  json j = spec.base;
  j["model"]["L"] = L;
  j["model"]["zeta"] = zeta;
  for (const auto& o : spec.overrides)
    if (o.L == L && o.zeta == zeta) j.merge_patch(o.patch);
  return config_from_json(j);
}

inline std::string point_dir_name(const RunConfig& c, const std::string& hash) {
  std::ostringstream os;
  os << "L" << c.params.sites << "_zeta" << num(c.params.drive) << "_n" << c.params.photon_order << "_"
     << hash.substr(0, 8);
  return os.str();
}

struct SweepPoint {
  int L = 0;
  double zeta = 0.0;
  std::string hash, dir, status, error;
  double wall_time = 0.0;
  json summary;
};

struct SweepOptions {
  bool resume = false;
  int threads = 0;           // 0: use each point's configured thread count
  int max_new_points = -1;   // stop after this many freshly computed points (-1: no limit)
};

struct SweepResult {
  std::vector<SweepPoint> points;
  int completed = 0, failed = 0, skipped = 0, pending = 0;
};

inline std::string sweep_table(const SweepResult& r) {
  std::ostringstream os;
  os << "L,zeta,n,n_L,n_L_err,dn_L,dn_L_err,D_1L_inf,config_hash\n";
  for (const auto& p : r.points) {
    if (p.status != "completed" && p.status != "skipped") continue;
    const json& s = p.summary;
    os << p.L << ',' << num(p.zeta) << ',' << s.at("n").get<int>() << ',' << num(from_jnum(s.at("n_L"))) << ','
       << num(from_jnum(s.at("n_L_err"))) << ',' << num(from_jnum(s.at("dn_L"))) << ','
       << num(from_jnum(s.at("dn_L_err"))) << ',' << num(from_jnum(s.at("D_1L_inf"))) << ',' << p.hash << '\n';
  }
  return os.str();
}

/// Runs every (L, zeta) point into out/<point dir>, writing sweep.csv and
/// manifest.json. With resume, points whose summary carries the same config
/// hash are skipped and their stored summary reused.
inline SweepResult run_sweep(const SweepSpec& spec, const std::filesystem::path& out, const SweepOptions& opt = {},
                             const ProgressFn& log = {}) {
  if (spec.L.empty() || spec.zeta.empty())
    throw Error("harness", "Validation", "sweep needs nonempty L and zeta axes", spec.L.empty() ? "sweep.L" : "sweep.zeta");
  const auto wall0 = std::chrono::steady_clock::now();
  std::filesystem::create_directories(out);
  // validate every point before any compute
  std::vector<RunConfig> configs;
  for (int L : spec.L)
    for (double z : spec.zeta) {
      RunConfig c = point_config(spec, L, z);
      if (opt.threads > 0) c.threads = opt.threads;
      validate_run(c);
      configs.push_back(std::move(c));
    }
  SweepResult res;
  int fresh = 0;
  for (const auto& c : configs) {
    SweepPoint pt;
    pt.L = c.params.sites;
    pt.zeta = c.params.drive;
    pt.hash = config_hash(c);
    pt.dir = point_dir_name(c, pt.hash);
    const auto dir = out / pt.dir;
    if (opt.resume && std::filesystem::exists(dir / "summary.json")) {
      std::ifstream is(dir / "summary.json");
      json s = json::parse(is, nullptr, false);
      if (!s.is_discarded() && s.value("status", "") == "completed" && s.value("config_hash", "") == pt.hash) {
        pt.status = "skipped";
        pt.summary = std::move(s);
        ++res.skipped;
        res.points.push_back(std::move(pt));
        continue;
      }
    }
    if (opt.max_new_points >= 0 && fresh >= opt.max_new_points) {
      pt.status = "pending";
      ++res.pending;
      res.points.push_back(std::move(pt));
      continue;
    }
    ++fresh;
    if (log) log("point L=" + std::to_string(pt.L) + " zeta=" + num(pt.zeta));
    try {
      const PointResult r = run_point(c, log);
      write_point(r, dir);
      pt.summary = point_summary(r);
      pt.status = "completed";
      pt.wall_time = r.wall_time;
      ++res.completed;
    } catch (const Error& e) {
      pt.status = "failed";
      pt.error = json{{"stage", e.stage()}, {"code", e.code()}, {"message", e.what()}, {"context", e.context()}}.dump();
      ++res.failed;
    }
    res.points.push_back(std::move(pt));
  }
  write_text(out / "sweep.csv", sweep_table(res));
  json m;
  m["code_version"] = kCodeVersion;
  json base = spec.base;
  m["config_hash"] = config_hash(config_from_json(base));
  m["master_seed"] = config_from_json(base).controls.master_seed;
  m["points"] = json::array();
  for (const auto& p : res.points) {
    json e = {{"L", p.L}, {"zeta", p.zeta}, {"config_hash", p.hash}, {"status", p.status}, {"dir", p.dir},
              {"wall_time_s", p.wall_time}};
    if (!p.error.empty()) e["error"] = json::parse(p.error);
    m["points"].push_back(e);
  }
  m["completed"] = res.completed;
  m["failed"] = res.failed;
  m["skipped"] = res.skipped;
  m["pending"] = res.pending;
  m["wall_time_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
  write_text(out / "manifest.json", m.dump(2) + "\n");
  return res;
}

// ---------------------------------------------------------------------------
// TWA time series and comparison with exact dynamics

/// n_l(t) and delta n_l(t) with jackknife errors from an ensemble started at t = 0.
inline OracleSeries twa_time_series(const RunConfig& cfg, std::vector<double> t_grid, int n_traj) {
  RunConfig c = cfg;
  c.controls.n_traj = n_traj;
  const ValidatedConfig vc = validate_run(c);
  detail::check_times(t_grid);
  const int L = c.params.sites;
  const std::size_t nt = t_grid.size();
  std::vector<cplx> rec(static_cast<std::size_t>(n_traj) * nt * L);
  parallel_for(n_traj, c.threads, [&](int t) {
    Trajectory tr(vc.params(), c.dynamics, c.controls.dt, c.controls.master_seed, t);
    detail::initial_fields(c, t, tr.fields());
    long long done = 0;
    for (std::size_t j = 0; j < nt; ++j) {
      const long long target = steps_for(t_grid[j], c.controls.dt);
      tr.advance(target - done);
      done = target;
      std::copy(tr.fields().begin(), tr.fields().end(), rec.begin() + (static_cast<std::size_t>(t) * nt + j) * L);
    }
  });
  OracleSeries s;
  s.sites = L;
  s.n_traj = n_traj;
  s.n.assign(L, std::vector<double>(nt));
  s.dn = s.n_err = s.dn_err = s.n;
  for (std::size_t j = 0; j < nt; ++j) {
    std::vector<MomentAccumulator> per(n_traj, MomentAccumulator(L, 1));
    for (int t = 0; t < n_traj; ++t)
      per[t].add(std::span<const cplx>(rec.data() + (static_cast<std::size_t>(t) * nt + j) * L, L));
    const detail::GroupedEstimator est(per, 100);
    for (int l = 0; l < L; ++l) {
      const Estimate n = est([l](const MomentAccumulator& a) { return photon_number(a, l); });
      const Estimate d = est([l](const MomentAccumulator& a) { return photon_fluctuations(a, l); });
      s.n[l][j] = n.value;
      s.n_err[l][j] = n.std_error;
      s.dn[l][j] = d.value;
      s.dn_err[l][j] = d.std_error;
    }
  }
  s.t = std::move(t_grid);
  return s;
}

struct OracleComparison {
  OracleSeries twa, exact;
  CutoffChoice cutoff;
  SeriesComparison n, dn;  // at the last site
};

/// Checkpoints t_max / k, 2 t_max / k, ..., t_max.
inline std::vector<double> checkpoint_grid(double t_max, int k) {
  std::vector<double> t;
  for (int i = 1; i <= k; ++i) t.push_back(t_max * i / k);
  return t;
}

inline OracleComparison compare_oracle(const RunConfig& cfg, const ProgressFn& log = {}) {
  validate_run(cfg);
  const auto& q = cfg.oracle;
  const auto t = checkpoint_grid(q.t_max, q.checkpoints);
  OracleComparison r;
  if (log) log("TWA ensemble of " + std::to_string(q.twa_traj) + " trajectories");
  r.twa = twa_time_series(cfg, t, q.twa_traj);
  FockConfig fc;
  fc.cutoff = q.cutoff;
  fc.leakage_tolerance = q.leakage_tolerance;
  McwfOptions mo;
  mo.dt = q.dt;
  mo.threads = cfg.threads;
  if (log) log("cutoff convergence from d=" + std::to_string(q.cutoff));
  r.cutoff = converge_cutoff(cfg.params, fc, q.max_cutoff, q.convergence_traj, t, cfg.controls.master_seed, mo,
                             q.convergence);
  fc.cutoff = r.cutoff.cutoff;
  if (log) log("quantum trajectories at d=" + std::to_string(fc.cutoff));
  r.exact = evolve_mcwf(cfg.params, fc, q.n_traj, t, cfg.controls.master_seed, mo);
  const int l = cfg.params.sites - 1;
  r.n = compare_series(t, r.twa.n[l], r.twa.n_err[l], r.exact.n[l], r.exact.n_err[l]);
  r.dn = compare_series(t, r.twa.dn[l], r.twa.dn_err[l], r.exact.dn[l], r.exact.dn_err[l]);
  return r;
}

inline std::string comparison_csv(const OracleComparison& c) {
  std::ostringstream os;
  os << "t[1/gamma],n_twa,n_twa_err,n_exact,n_exact_err,n_within,dn_twa,dn_twa_err,dn_exact,dn_exact_err,dn_within\n";
  const int l = c.twa.sites - 1;
  for (std::size_t j = 0; j < c.n.t.size(); ++j)
    os << num(c.n.t[j]) << ',' << num(c.twa.n[l][j]) << ',' << num(c.twa.n_err[l][j]) << ',' << num(c.exact.n[l][j])
       << ',' << num(c.exact.n_err[l][j]) << ',' << (c.n.within[j] ? 1 : 0) << ',' << num(c.twa.dn[l][j]) << ','
       << num(c.twa.dn_err[l][j]) << ',' << num(c.exact.dn[l][j]) << ',' << num(c.exact.dn_err[l][j]) << ','
       << (c.dn.within[j] ? 1 : 0) << '\n';
  return os.str();
}

inline std::string series_csv(const OracleSeries& s) {
  std::ostringstream os;
  os << "t[1/gamma]";
  for (int l = 0; l < s.sites; ++l) os << ",n_" << l + 1 << ",n_" << l + 1 << "_err,dn_" << l + 1 << ",dn_" << l + 1 << "_err";
  os << '\n';
  for (std::size_t j = 0; j < s.t.size(); ++j) {
    os << num(s.t[j]);
    for (int l = 0; l < s.sites; ++l)
      os << ',' << num(s.n[l][j]) << ',' << num(s.n_err[l][j]) << ',' << num(s.dn[l][j]) << ',' << num(s.dn_err[l][j]);
    os << '\n';
  }
  return os.str();
}

}  // namespace twachain
