#pragma once

// Semiclassical out-of-time-order correlator
//   D_{k,l}(tau) = 1 - < cos(phi^a_l(t + tau) - phi^b_l(t + tau)) >
// between two replicas that differ by a phase kick epsilon at site k at time t
// and share the same noise afterwards.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "twachain/engine.hpp"
#include "twachain/error.hpp"
#include "twachain/model.hpp"
#include "twachain/parallel.hpp"

namespace twachain {

struct OtocSeries {
  int perturb_site = 0;
  double epsilon = kDefaultOtocEpsilon;
  std::vector<double> tau;        // increasing lag times
  std::vector<double> D;          // sites x tau, row-major in site
  std::vector<double> std_error;  // same shape; trajectories as independent units
  int sites = 0;
  int n_pairs = 0;   // trajectory pairs
  int n_starts = 1;  // start times averaged per pair

  double at(int l, std::size_t j) const { return D[static_cast<std::size_t>(l) * tau.size() + j]; }
  double& at(int l, std::size_t j) { return D[static_cast<std::size_t>(l) * tau.size() + j]; }
  double error_at(int l, std::size_t j) const {
    return std_error[static_cast<std::size_t>(l) * tau.size() + j];
  }
};

struct OtocOptions {
  int n_starts = 1;             // start times t per trajectory
  double start_spacing = 10.0;  // separation of consecutive start times
  bool steady = true;           // caller asserts the ensemble is in the steady state
  int threads = 1;
};

/// cos of the phase difference of two fields; a vanishing field has phase 0.
inline double phase_cosine(cplx a, cplx b) {
  if (a == b) return 1.0;
  const double ra = std::abs(a), rb = std::abs(b);
  const cplx ua = ra > 0.0 ? a / ra : cplx(1.0, 0.0);
  const cplx ub = rb > 0.0 ? b / rb : cplx(1.0, 0.0);
  return std::clamp(ua.real() * ub.real() + ua.imag() * ub.imag(), -1.0, 1.0);
}

namespace detail {

inline std::vector<long long> tau_steps(std::span<const double> tau, double dt) {
  std::vector<long long> s(tau.size());
  for (std::size_t j = 0; j < tau.size(); ++j) {
    if (tau[j] < 0.0 || (j > 0 && !(tau[j] > tau[j - 1])))
      throw Error("otoc", "InvalidTauGrid", "tau grid must be nonnegative and increasing");
    s[j] = steps_for(tau[j], dt);
  }
  return s;
}

}  // namespace detail

/// Averages D over every trajectory of `steady` (and over `n_starts` start
/// times per trajectory when requested).
inline OtocSeries compute_otoc(const FieldEnsemble& steady, int k, double epsilon,
                               std::vector<double> tau, const ChainParams& p,
                               const IntegrationControls& c, const OtocOptions& opt = {}) {
  if (!opt.steady) throw Error("otoc", "NotSteady", "ensemble flagged as not in the steady state");
  const int L = steady.sites();
  if (k < 0 || k >= L)
    throw Error("engine", "PerturbSiteOutOfRange",
                "perturbed site " + std::to_string(k + 1) + " outside chain of " + std::to_string(L) +
                    " sites");
  const auto steps = detail::tau_steps(tau, c.dt);
  const std::size_t nt = tau.size();
  const int n_traj = steady.n_traj();
  const int n_starts = std::max(1, opt.n_starts);
  const long long spacing = steps_for(opt.start_spacing, c.dt);

  // Per-trajectory mean of cos(dphi) over its start times.
  std::vector<double> per_traj(static_cast<std::size_t>(n_traj) * L * nt, 0.0);
  const cplx kick = std::polar(1.0, epsilon);

  parallel_for(n_traj, opt.threads, [&](int t) {
    Trajectory base(p, Dynamics::kTruncatedWigner, c.dt, c.master_seed, t);
    std::copy(steady.trajectory(t).begin(), steady.trajectory(t).end(), base.fields().begin());
    base.reset_clock(steady.time, steady.counter(t));
    double* out = per_traj.data() + static_cast<std::size_t>(t) * L * nt;
    for (int s = 0; s < n_starts; ++s) {
      if (s > 0) base.advance(spacing);
      Trajectory ra = base, rb = base;
      rb.fields()[k] *= kick;
      long long done = 0;
      for (std::size_t j = 0; j < nt; ++j) {
        ra.advance(steps[j] - done);
        rb.advance(steps[j] - done);
        done = steps[j];
        for (int l = 0; l < L; ++l)
          out[static_cast<std::size_t>(l) * nt + j] += phase_cosine(ra.fields()[l], rb.fields()[l]);
      }
    }
    for (std::size_t i = 0; i < static_cast<std::size_t>(L) * nt; ++i) out[i] /= n_starts;
  });

  OtocSeries r;
  r.perturb_site = k;
  r.epsilon = epsilon;
  r.tau = std::move(tau);
  r.sites = L;
  r.n_pairs = n_traj;
  r.n_starts = n_starts;
  r.D.assign(static_cast<std::size_t>(L) * nt, 0.0);
  r.std_error.assign(r.D.size(), 0.0);
  for (std::size_t i = 0; i < r.D.size(); ++i) {
    double s = 0.0, s2 = 0.0;
    for (int t = 0; t < n_traj; ++t) {
      const double x = per_traj[static_cast<std::size_t>(t) * L * nt + i];
      s += x;
      s2 += x * x;
    }
    const double mean = s / n_traj;
    r.D[i] = std::clamp(1.0 - mean, 0.0, 2.0);
    r.std_error[i] = n_traj > 1 ? std::sqrt(std::max(0.0, s2 / n_traj - mean * mean) / (n_traj - 1))
                                : std::numeric_limits<double>::quiet_NaN();
  }
  return r;
}

/// D_{k,l}(tau -> infinity): mean over the last 20% of the tau grid.
inline double otoc_saturation(const OtocSeries& s, int l) {
  const std::size_t nt = s.tau.size();
  if (nt == 0) throw Error("otoc", "EmptySeries", "no tau points");
  const std::size_t first = nt - std::max<std::size_t>(1, (nt + 4) / 5);
  double sum = 0.0;
  for (std::size_t j = first; j < nt; ++j) sum += s.at(l, j);
  return sum / static_cast<double>(nt - first);
}

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double rms_residual = 0.0;
  int points = 0;
};

inline LineFit fit_line(std::span<const double> x, std::span<const double> y) {
  const auto n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  LineFit f;
  f.points = static_cast<int>(x.size());
  f.slope = sxx > 0.0 ? sxy / sxx : 0.0;
  f.intercept = my - f.slope * mx;
  double ss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - (f.intercept + f.slope * x[i]);
    ss += r * r;
  }
  f.rms_residual = std::sqrt(ss / n);
  return f;
}

struct ButterflyFit {
  double velocity = 0.0;
  double threshold = 0.1;
  std::vector<int> sites;            // 0-based sites used
  std::vector<double> front_times;   // first tau with D >= threshold, per site
  LineFit fit;                       // site = intercept + velocity * tau
};

inline std::string site_list(const std::vector<int>& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i] + 1);
  return out;
}

/// Default site set: every site other than the perturbed one.
inline std::vector<int> default_front_sites(const OtocSeries& s) {
  std::vector<int> v;
  for (int l = 0; l < s.sites; ++l)
    if (l != s.perturb_site) v.push_back(l);
  return v;
}

/// Front time per site and the velocity of the least-squares line through
/// (front time, site index).
inline ButterflyFit extract_butterfly_velocity(const OtocSeries& s, double threshold = 0.1,
                                               std::vector<int> sites = {}) {
  if (sites.empty()) sites = default_front_sites(s);
  ButterflyFit b;
  b.threshold = threshold;
  std::vector<int> missing;
  std::vector<double> x, y;
  for (int l : sites) {
    std::size_t j = 0;
    while (j < s.tau.size() && s.at(l, j) < threshold) ++j;
    if (j == s.tau.size()) {
      missing.push_back(l);
      continue;
    }
    b.sites.push_back(l);
    b.front_times.push_back(s.tau[j]);
    x.push_back(s.tau[j]);
    y.push_back(static_cast<double>(l));
  }
  if (!missing.empty() || x.size() < 2)
    throw Error("otoc", "FrontNotReached", "OTOC front never reaches D >= threshold",
                site_list(missing.empty() ? sites : missing));
  b.fit = fit_line(x, y);
  b.velocity = std::abs(b.fit.slope);
  return b;
}

struct LyapunovFit {
  double rate = 0.0;    // mean over sites
  double spread = 0.0;  // standard deviation over sites
  double band_low = 1e-3, band_high = 1e-1;
  std::vector<int> sites;
  std::vector<double> rates;
  std::vector<double> residuals;  // rms residual of log D per site
};

/// Exponential growth rate of D on the band [low, high], per site.
///
/// For each site the fit uses the contiguous run of tau points that lie in
/// the band, ending at the first point above `high`.
inline LyapunovFit extract_lyapunov(const OtocSeries& s, std::vector<int> sites = {},
                                    double low = 1e-3, double high = 1e-1) {
  if (sites.empty()) sites = default_front_sites(s);
  LyapunovFit f;
  f.band_low = low;
  f.band_high = high;
  std::vector<int> short_sites;
  for (int l : sites) {
    std::vector<double> x, y;
    for (std::size_t j = 0; j < s.tau.size(); ++j) {
      const double d = s.at(l, j);
      if (d > high) break;
      if (d >= low) {
        x.push_back(s.tau[j]);
        y.push_back(std::log(d));
      } else if (!x.empty()) {
        x.clear();
        y.clear();
      }
    }
    if (x.size() < 3) {
      short_sites.push_back(l);
      continue;
    }
    const LineFit lf = fit_line(x, y);
    f.sites.push_back(l);
    f.rates.push_back(lf.slope);
    f.residuals.push_back(lf.rms_residual);
  }
  if (f.rates.empty())
    throw Error("otoc", "InsufficientBandPoints",
                "no site has three or more points inside the fit band", site_list(short_sites));
  const double n = static_cast<double>(f.rates.size());
  f.rate = std::accumulate(f.rates.begin(), f.rates.end(), 0.0) / n;
  double ss = 0.0;
  for (double r : f.rates) ss += (r - f.rate) * (r - f.rate);
  f.spread = std::sqrt(ss / n);
  return f;
}

/// Evenly spaced grid 0, h, 2h, ..., tau_max.
inline std::vector<double> tau_grid(double tau_max, double h) {
  std::vector<double> g;
  const auto n = static_cast<long long>(std::llround(tau_max / h));
  for (long long i = 0; i <= n; ++i) g.push_back(static_cast<double>(i) * h);
  return g;
}

}  // namespace twachain
