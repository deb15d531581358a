#pragma once

// Local thermodynamics from Wigner histograms: Gibbs, one-parameter thermal
// and driven-dissipative impurity ansaetze, fitted by minimizing the L2
// distance between the histogram and the model Wigner function.
//
// All three models are diagonal in the Fock basis, so their Wigner functions
// are radial:  W(r) = sum_k p_k (2/pi) (-1)^k e^{-2 r^2} L_k(4 r^2).

#include <gsl/gsl_errno.h>
#include <gsl/gsl_min.h>
#include <gsl/gsl_multimin.h>

#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "twachain/error.hpp"
#include "twachain/observables.hpp"

namespace twachain {

inline constexpr int kMaxFockCutoff = 256;
inline constexpr double kGibbsTail = 1e-8;
inline constexpr double kImpurityLeakage = 1e-6;

// ---------------------------------------------------------------------------
// Fock-diagonal Wigner functions

/// g_k(x) = e^{-x/2} L_k(x) for k = 0..K-1 by the scaled three-term recurrence.
inline void scaled_laguerre(double x, int K, double* g) {
  if (K <= 0) return;
  g[0] = std::exp(-0.5 * x);
  if (K == 1) return;
  g[1] = (1.0 - x) * g[0];
  for (int k = 1; k + 1 < K; ++k)
    g[k + 1] = ((2.0 * k + 1.0 - x) * g[k] - k * g[k - 1]) / (k + 1.0);
}

/// Wigner function of sum_k p_k |k><k| at radius r.
inline double fock_mixture_wigner(std::span<const double> p, double r) {
  std::vector<double> g(p.size());
  scaled_laguerre(4.0 * r * r, static_cast<int>(p.size()), g.data());
  double w = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) w += (k % 2 ? -p[k] : p[k]) * g[k];
  return 2.0 / std::numbers::pi * w;
}

/// Fock-mixture Wigner function on every cell centre of `grid` (row-major in x).
inline std::vector<double> fock_mixture_wigner(std::span<const double> p, const Grid2D& grid) {
  check_grid(grid);
  std::vector<double> w(static_cast<std::size_t>(grid.bins_x) * grid.bins_y);
  std::vector<double> g(p.size());
  for (int i = 0; i < grid.bins_x; ++i)
    for (int j = 0; j < grid.bins_y; ++j) {
      const double x = grid.x_center(i), y = grid.y_center(j);
      scaled_laguerre(4.0 * (x * x + y * y), static_cast<int>(p.size()), g.data());
      double s = 0.0;
      for (std::size_t k = 0; k < p.size(); ++k) s += (k % 2 ? -p[k] : p[k]) * g[k];
      w[static_cast<std::size_t>(i) * grid.bins_y + j] = 2.0 / std::numbers::pi * s;
    }
  return w;
}

inline double mean_occupation(std::span<const double> p) {
  double m = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) m += static_cast<double>(k) * p[k];
  return m;
}

inline double entropy(std::span<const double> p) {
  double s = 0.0;
  for (double x : p)
    if (x > 0.0) s -= x * std::log(x);
  return s;
}

// ---------------------------------------------------------------------------
// Models

/// Local equilibrium exp[-(h - mu n)/T]/Z with h = U n^2 / 2.
struct GibbsModel {
  double T = 1.0;
  double mu = 0.0;
  double U = 0.1;
  int fock_cutoff = 0;  // 0 selects the smallest cutoff with tail < 1e-8, capped at 256
};

/// Normalized Fock weights of the Gibbs state, truncated at the selected cutoff.
inline std::vector<double> gibbs_weights(const GibbsModel& m) {
  if (!(m.T > 0.0)) throw Error("thermofit", "InvalidModel", "Gibbs temperature must be positive");
  const int cap = m.fock_cutoff > 0 ? m.fock_cutoff : kMaxFockCutoff;
  std::vector<double> e(cap);
  double emax = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < cap; ++k) {
    e[k] = -(0.5 * m.U * k * k - m.mu * k) / m.T;
    emax = std::max(emax, e[k]);
  }
  std::vector<double> w(cap);
  double z = 0.0;
  for (int k = 0; k < cap; ++k) z += (w[k] = std::exp(e[k] - emax));
  for (auto& x : w) x /= z;
  if (w[cap - 1] >= kGibbsTail)
    throw Error("thermofit", "CutoffTooSmall",
                "Gibbs weights not converged within " + std::to_string(cap) + " Fock states");
  // Smallest K with sum_{k >= K} w_k < tail.
  double tail = 0.0;
  int K = cap;
  while (K > 1 && tail + w[K - 1] < kGibbsTail) tail += w[--K];
  w.resize(K);
  const double s = std::accumulate(w.begin(), w.end(), 0.0);
  for (auto& x : w) x /= s;
  return w;
}

inline std::vector<double> gibbs_wigner(const GibbsModel& m, const Grid2D& grid) {
  return fock_mixture_wigner(gibbs_weights(m), grid);
}

/// Thermal state with w_k proportional to e^{xi k}, xi < 0.
struct OneParamModel {
  double xi = -1.0;
  double mean() const { return 1.0 / std::expm1(-xi); }
};

inline double thermal_xi(double nbar) { return std::log(nbar / (nbar + 1.0)); }

/// Closed form: a Gaussian with <|alpha|^2> = nbar + 1/2.
inline double thermal_wigner(double nbar, double r) {
  const double s = nbar + 0.5;
  return std::exp(-r * r / s) / (std::numbers::pi * s);
}

inline std::vector<double> thermal_wigner(double nbar, const Grid2D& grid) {
  check_grid(grid);
  std::vector<double> w(static_cast<std::size_t>(grid.bins_x) * grid.bins_y);
  for (int i = 0; i < grid.bins_x; ++i)
    for (int j = 0; j < grid.bins_y; ++j) {
      const double x = grid.x_center(i), y = grid.y_center(j);
      w[static_cast<std::size_t>(i) * grid.bins_y + j] = thermal_wigner(nbar, std::hypot(x, y));
    }
  return w;
}

/// Single mode with jump operators sqrt(up) a^+, sqrt(down) a, sqrt(dephase) a^+ a,
/// sqrt(twophoton) a^2.
struct ImpurityModel {
  double rate_up = 0.0;
  double rate_down = 1.0;
  double rate_dephase = 0.0;
  double rate_twophoton = 0.0;
  int fock_cutoff = kMaxFockCutoff;
};

/// Steady-state populations of the impurity model.
///
/// The jump operators shift the photon number by fixed amounts, so coherences
/// decay and the steady state is diagonal; populations follow the rate
/// equation
///   dp_k/dt = up [k p_{k-1} - (k+1) p_k] + down [(k+1) p_{k+1} - k p_k]
///           + twophoton [(k+2)(k+1) p_{k+2} - k(k-1) p_k],
/// solved as a sparse linear system with the normalization replacing one row.
/// Dephasing does not enter the populations.
inline std::vector<double> impurity_steady_state(const ImpurityModel& m) {
  if (m.rate_up < 0.0 || m.rate_down < 0.0 || m.rate_dephase < 0.0 || m.rate_twophoton < 0.0)
    throw Error("thermofit", "InvalidModel", "impurity rates must be nonnegative");
  if (!(m.rate_down > m.rate_up) && !(m.rate_twophoton > 0.0))
    throw Error("thermofit", "NoSteadyState",
                "gain exceeds loss and no two-photon loss: no normalizable steady state");
  const int d = m.fock_cutoff;
  if (d < 2) throw Error("thermofit", "CutoffTooSmall", "impurity cutoff below 2");
  if (m.rate_up == 0.0) {
    std::vector<double> p(d, 0.0);
    p[0] = 1.0;
    return p;
  }
  using Trip = Eigen::Triplet<double>;
  std::vector<Trip> t;
  t.reserve(static_cast<std::size_t>(d) * 5);
  // Row k of the generator; row 0 is replaced by sum p = 1.
  for (int k = 1; k < d; ++k) {
    double diag = 0.0;
    t.emplace_back(k, k - 1, m.rate_up * k);
    if (k + 1 < d) diag -= m.rate_up * (k + 1);
    if (k + 1 < d) t.emplace_back(k, k + 1, m.rate_down * (k + 1));
    diag -= m.rate_down * k;
    if (k + 2 < d) t.emplace_back(k, k + 2, m.rate_twophoton * (k + 2.0) * (k + 1.0));
    diag -= m.rate_twophoton * k * (k - 1.0);
    t.emplace_back(k, k, diag);
  }
  for (int k = 0; k < d; ++k) t.emplace_back(0, k, 1.0);
  Eigen::SparseMatrix<double> A(d, d);
  A.setFromTriplets(t.begin(), t.end());
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  lu.compute(A);
  if (lu.info() != Eigen::Success)
    throw Error("thermofit", "NoSteadyState", "singular impurity rate equation");
  Eigen::VectorXd b = Eigen::VectorXd::Zero(d);
  b(0) = 1.0;
  const Eigen::VectorXd x = lu.solve(b);
  std::vector<double> p(d);
  for (int k = 0; k < d; ++k) {
    if (!std::isfinite(x(k)) || x(k) < -1e-9)
      throw Error("thermofit", "NoSteadyState", "impurity steady state is not a distribution");
    p[k] = std::max(0.0, x(k));
  }
  if (p[d - 1] > kImpurityLeakage)
    throw Error("thermofit", "CutoffTooSmall",
                "impurity occupation leaks to the Fock cutoff " + std::to_string(d));
  return p;
}

inline std::vector<double> impurity_wigner(const ImpurityModel& m, const Grid2D& grid) {
  return fock_mixture_wigner(impurity_steady_state(m), grid);
}

// ---------------------------------------------------------------------------
// Distances

/// L2 distance between a histogram and a model evaluated on the same grid.
inline double l2_norm(const WignerHistogram& h, const Grid2D& grid, std::span<const double> model) {
  if (!(h.grid() == grid) ||
      model.size() != static_cast<std::size_t>(grid.bins_x) * static_cast<std::size_t>(grid.bins_y))
    throw Error("thermofit", "GridMismatch", "histogram and model live on different grids");
  const auto w = h.density();
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += (w[i] - model[i]) * (w[i] - model[i]);
  return std::sqrt(s * grid.cell_area());
}

inline double l2_norm(const WignerHistogram& a, const WignerHistogram& b) {
  return l2_norm(a, b.grid(), b.density());
}

/// Azimuthal average of a histogram in radial shells of width h, with the
/// within-shell variance kept so that the radial L2 equals the 2D one up to
/// the spread of radii inside a shell.
struct RadialProfile {
  std::vector<double> radius;  // mean cell radius per shell
  std::vector<double> value;   // mean density per shell
  std::vector<double> weight;  // cells * cell area
  double within = 0.0;         // sum over cells of (W - shell mean)^2 * cell area
};

inline RadialProfile radial_profile(const WignerHistogram& hist) {
  const Grid2D& g = hist.grid();
  const auto w = hist.density();
  const double h = 0.25 * std::min(g.dx(), g.dy());
  double rmax = 0.0;
  for (double x : {g.x_min, g.x_max})
    for (double y : {g.y_min, g.y_max}) rmax = std::max(rmax, std::hypot(x, y));
  const auto nb = static_cast<std::size_t>(rmax / h) + 2;
  std::vector<double> n(nb, 0.0), sr(nb, 0.0), sw(nb, 0.0), sw2(nb, 0.0);
  for (int i = 0; i < g.bins_x; ++i)
    for (int j = 0; j < g.bins_y; ++j) {
      const double r = std::hypot(g.x_center(i), g.y_center(j));
      const auto b = std::min(nb - 1, static_cast<std::size_t>(r / h));
      const double v = w[static_cast<std::size_t>(i) * g.bins_y + j];
      n[b] += 1.0;
      sr[b] += r;
      sw[b] += v;
      sw2[b] += v * v;
    }
  RadialProfile p;
  const double area = g.cell_area();
  for (std::size_t b = 0; b < nb; ++b) {
    if (n[b] == 0.0) continue;
    const double mean = sw[b] / n[b];
    p.radius.push_back(sr[b] / n[b]);
    p.value.push_back(mean);
    p.weight.push_back(n[b] * area);
    p.within += std::max(0.0, sw2[b] - n[b] * mean * mean) * area;
  }
  return p;
}

/// Precomputed (-1)^k (2/pi) e^{-2r^2} L_k(4r^2) on the shells of a profile.
class RadialBasis {
 public:
  RadialBasis(const RadialProfile& prof, int K) : K_(K), shells_(prof.radius.size()) {
    table_.resize(shells_ * static_cast<std::size_t>(K));
    for (std::size_t b = 0; b < shells_; ++b) {
      double* row = table_.data() + b * K;
      scaled_laguerre(4.0 * prof.radius[b] * prof.radius[b], K, row);
      for (int k = 0; k < K; ++k) row[k] *= (k % 2 ? -2.0 : 2.0) / std::numbers::pi;
    }
  }

  int cutoff() const { return K_; }

  /// Radial L2 distance between the profile and the mixture p.
  double distance(const RadialProfile& prof, std::span<const double> p) const {
    const std::size_t K = std::min<std::size_t>(p.size(), K_);
    double s = prof.within;
    for (std::size_t b = 0; b < shells_; ++b) {
      const double* row = table_.data() + b * K_;
      double w = 0.0;
      for (std::size_t k = 0; k < K; ++k) w += p[k] * row[k];
      const double d = prof.value[b] - w;
      s += prof.weight[b] * d * d;
    }
    return std::sqrt(s);
  }

 private:
  int K_;
  std::size_t shells_;
  std::vector<double> table_;
};

// ---------------------------------------------------------------------------
// Fits

enum class FitKind { kGibbs, kOneParam, kImpurity };

inline const char* to_string(FitKind k) {
  switch (k) {
    case FitKind::kGibbs: return "gibbs";
    case FitKind::kOneParam: return "one_param";
    case FitKind::kImpurity: return "impurity";
  }
  return "?";
}

struct FitReport {
  FitKind kind = FitKind::kGibbs;
  std::vector<std::pair<std::string, double>> parameters;
  double l2_residual = std::numeric_limits<double>::quiet_NaN();
  double T = std::numeric_limits<double>::quiet_NaN();
  double mu = std::numeric_limits<double>::quiet_NaN();
  double xi = std::numeric_limits<double>::quiet_NaN();
  double mu_over_T = std::numeric_limits<double>::quiet_NaN();
  double entropy = std::numeric_limits<double>::quiet_NaN();
  double mean_occupation = std::numeric_limits<double>::quiet_NaN();
  bool converged = false;
  int iterations = 0;
  std::vector<std::string> flags;

  double parameter(const std::string& name) const {
    for (const auto& [n, v] : parameters)
      if (n == name) return v;
    throw Error("thermofit", "UnknownParameter", "fit has no parameter " + name);
  }
  bool has_flag(const std::string& f) const {
    return std::find(flags.begin(), flags.end(), f) != flags.end();
  }
};

struct FitOptions {
  double max_circular_moment = 0.2;  // refuse histograms with any C^(m) above this, m = 1..3
  bool enforce_symmetry = true;
  double tolerance = 1e-6;           // simplex size in log-parameter space
  int max_iterations = 600;
};

/// Minimizes f over R^dim from several starts with the Nelder-Mead simplex.
struct SimplexResult {
  std::vector<double> x;
  double value = std::numeric_limits<double>::infinity();
  bool converged = false;
  int iterations = 0;
};

inline SimplexResult minimize_simplex(const std::function<double(std::span<const double>)>& f,
                                      const std::vector<std::vector<double>>& starts,
                                      std::span<const double> step, double tol, int max_iter) {
  const std::size_t dim = step.size();
  struct Ctx {
    const std::function<double(std::span<const double>)>* f;
    std::size_t dim;
  } ctx{&f, dim};
  gsl_multimin_function fn;
  fn.n = dim;
  fn.params = &ctx;
  fn.f = [](const gsl_vector* v, void* params) {
    auto* c = static_cast<Ctx*>(params);
    std::vector<double> x(c->dim);
    for (std::size_t i = 0; i < c->dim; ++i) x[i] = gsl_vector_get(v, i);
    const double y = (*c->f)(x);
    return std::isfinite(y) ? y : 1e300;
  };
  gsl_set_error_handler_off();
  SimplexResult best;
  gsl_vector* x0 = gsl_vector_alloc(dim);
  gsl_vector* ss = gsl_vector_alloc(dim);
  gsl_multimin_fminimizer* s = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, dim);
  for (const auto& start : starts) {
    for (std::size_t i = 0; i < dim; ++i) {
      gsl_vector_set(x0, i, start[i]);
      gsl_vector_set(ss, i, step[i]);
    }
    gsl_multimin_fminimizer_set(s, &fn, x0, ss);
    int it = 0, status = GSL_CONTINUE;
    while (status == GSL_CONTINUE && it < max_iter) {
      ++it;
      if (gsl_multimin_fminimizer_iterate(s)) break;
      status = gsl_multimin_test_size(gsl_multimin_fminimizer_size(s), tol);
    }
    best.iterations += it;
    if (s->fval < best.value) {
      best.value = s->fval;
      best.converged = status == GSL_SUCCESS;
      best.x.assign(dim, 0.0);
      for (std::size_t i = 0; i < dim; ++i) best.x[i] = gsl_vector_get(s->x, i);
    }
  }
  gsl_multimin_fminimizer_free(s);
  gsl_vector_free(ss);
  gsl_vector_free(x0);
  return best;
}

namespace detail {

inline bool refuse_symmetry_broken(const WignerHistogram& h, const FitOptions& opt, FitReport& r) {
  if (!opt.enforce_symmetry) return false;
  for (int m = 1; m <= 3; ++m)
    if (histogram_circular_moment(h, m) > opt.max_circular_moment) {
      r.flags.push_back("symmetry_broken");
      return true;
    }
  return false;
}

inline void require_histogram(const WignerHistogram& h) {
  if (h.in_grid() <= 0)
    throw Error("thermofit", "DegenerateHistogram", "histogram holds no samples inside its grid");
}

/// Mean occupation implied by the histogram: <|alpha|^2> - 1/2.
inline double histogram_occupation(const WignerHistogram& h) {
  return std::max(0.0, histogram_second_moment(h) - 0.5);
}

/// mu such that the Gibbs state at temperature T has mean occupation `target`.
inline double gibbs_mu_for(double T, double U, double target) {
  auto mean_at = [&](double mu) {
    try {
      return mean_occupation(gibbs_weights({T, mu, U, 0}));
    } catch (const Error&) {
      return std::numeric_limits<double>::infinity();
    }
  };
  double lo = -50.0 * T - 1.0, hi = U * (kMaxFockCutoff - 1) + 1.0;
  for (int i = 0; i < 200 && hi - lo > 1e-10 * (1.0 + std::abs(hi)); ++i) {
    const double mid = 0.5 * (lo + hi);
    (mean_at(mid) < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

/// Fits T and mu of the Gibbs ansatz (U fixed) by multi-start simplex over (ln T, mu).
inline FitReport fit_gibbs(const WignerHistogram& hist, double U, const FitOptions& opt = {}) {
  detail::require_histogram(hist);
  FitReport r;
  r.kind = FitKind::kGibbs;
  if (detail::refuse_symmetry_broken(hist, opt, r)) return r;
  const RadialProfile prof = radial_profile(hist);
  const RadialBasis basis(prof, kMaxFockCutoff);
  auto objective = [&](std::span<const double> x) {
    try {
      return basis.distance(prof, gibbs_weights({std::exp(x[0]), x[1], U, 0}));
    } catch (const Error&) {
      return 1e3 + std::abs(x[0]) + std::abs(x[1]);
    }
  };
  // 20 starts: 5 temperatures x 4 occupations around the histogram's.
  const double n_data = std::max(1e-3, detail::histogram_occupation(hist));
  std::vector<std::vector<double>> starts;
  for (double T : {0.1, 0.5, 2.0, 10.0, 50.0})
    for (double f : {0.5, 0.8, 1.0, 1.25})
      starts.push_back({std::log(T), detail::gibbs_mu_for(T, U, f * n_data)});
  const std::vector<double> step{0.5, 0.5};
  const auto best = minimize_simplex(objective, starts, step, opt.tolerance, opt.max_iterations);
  r.T = std::exp(best.x[0]);
  r.mu = best.x[1];
  r.mu_over_T = r.xi = r.mu / r.T;
  r.parameters = {{"T", r.T}, {"mu", r.mu}, {"U", U}};
  r.converged = best.converged && best.value < 1e3;
  r.iterations = best.iterations;
  if (!r.converged) r.flags.push_back("not_converged");
  try {
    const auto w = gibbs_weights({r.T, r.mu, U, 0});
    r.entropy = entropy(w);
    r.mean_occupation = mean_occupation(w);
    r.l2_residual = l2_norm(hist, hist.grid(), fock_mixture_wigner(w, hist.grid()));
  } catch (const Error&) {
    r.flags.push_back("cutoff_too_small");
  }
  return r;
}

/// Fits xi of the one-parameter thermal ansatz (Brent on ln nbar). When the
/// equipartition temperature is supplied, mu = xi * T_eq.
inline FitReport fit_one_param(const WignerHistogram& hist,
                               double equipartition_T = std::numeric_limits<double>::quiet_NaN(),
                               const FitOptions& opt = {}) {
  detail::require_histogram(hist);
  FitReport r;
  r.kind = FitKind::kOneParam;
  if (detail::refuse_symmetry_broken(hist, opt, r)) return r;
  const RadialProfile prof = radial_profile(hist);
  auto objective = [&](double log_n) {
    const double nbar = std::exp(log_n);
    double s = prof.within;
    for (std::size_t b = 0; b < prof.radius.size(); ++b) {
      const double d = prof.value[b] - thermal_wigner(nbar, prof.radius[b]);
      s += prof.weight[b] * d * d;
    }
    return std::sqrt(s);
  };
  // Coarse scan, then Brent inside the bracketing cell.
  const double lo = std::log(1e-6), hi = std::log(1e4);
  const int n_scan = 60;
  int best_i = 0;
  double best_v = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= n_scan; ++i) {
    const double v = objective(lo + (hi - lo) * i / n_scan);
    if (v < best_v) best_v = v, best_i = i;
  }
  double x = lo + (hi - lo) * best_i / n_scan;
  int iterations = n_scan + 1;
  bool converged = false;
  if (best_i > 0 && best_i < n_scan) {
    gsl_set_error_handler_off();
    gsl_function fn;
    fn.function = [](double v, void* p) { return (*static_cast<decltype(objective)*>(p))(v); };
    fn.params = &objective;
    gsl_min_fminimizer* s = gsl_min_fminimizer_alloc(gsl_min_fminimizer_brent);
    const double a = lo + (hi - lo) * (best_i - 1) / n_scan, b = lo + (hi - lo) * (best_i + 1) / n_scan;
    if (gsl_min_fminimizer_set(s, &fn, x, a, b) == GSL_SUCCESS) {
      int status = GSL_CONTINUE;
      for (int it = 0; it < opt.max_iterations && status == GSL_CONTINUE; ++it) {
        ++iterations;
        if (gsl_min_fminimizer_iterate(s)) break;
        status = gsl_min_test_interval(gsl_min_fminimizer_x_lower(s), gsl_min_fminimizer_x_upper(s),
                                       opt.tolerance, 0.0);
      }
      x = gsl_min_fminimizer_x_minimum(s);
      converged = status == GSL_SUCCESS;
    }
    gsl_min_fminimizer_free(s);
  } else {
    // Optimum at the edge of the search range.
    converged = true;
    r.flags.push_back("range_edge");
  }
  const double nbar = std::exp(x);
  r.xi = thermal_xi(nbar);
  r.mean_occupation = nbar;
  r.entropy = (nbar + 1.0) * std::log1p(nbar) - (nbar > 0.0 ? nbar * std::log(nbar) : 0.0);
  r.T = equipartition_T;
  r.mu = r.xi * equipartition_T;
  r.mu_over_T = r.xi;
  r.parameters = {{"xi", r.xi}, {"nbar", nbar}};
  r.converged = converged;
  r.iterations = iterations;
  if (nbar < 1e-3) r.flags.push_back("vacuum_like");
  if (!converged) r.flags.push_back("not_converged");
  r.l2_residual = l2_norm(hist, hist.grid(), thermal_wigner(nbar, hist.grid()));
  return r;
}

struct ImpurityFitOptions : FitOptions {
  double rate_down = 1.0;     // the steady state depends only on rate ratios; loss is pinned here
  double rate_dephase = 0.0;  // not fitted
  int fock_cutoff = kMaxFockCutoff;
};

/// Fits up/down and twophoton/down of the impurity ansatz by multi-start
/// simplex over their logarithms; the loss rate is pinned to opt.rate_down.
inline FitReport fit_impurity(const WignerHistogram& hist, const ImpurityFitOptions& opt = {}) {
  detail::require_histogram(hist);
  FitReport r;
  r.kind = FitKind::kImpurity;
  if (detail::refuse_symmetry_broken(hist, opt, r)) return r;
  const RadialProfile prof = radial_profile(hist);
  const RadialBasis basis(prof, opt.fock_cutoff);
  const double gd = opt.rate_down;
  auto model = [&](std::span<const double> x) {
    return ImpurityModel{gd * std::exp(x[0]), gd, opt.rate_dephase, gd * std::exp(x[1]), opt.fock_cutoff};
  };
  auto objective = [&](std::span<const double> x) {
    try {
      return basis.distance(prof, impurity_steady_state(model(x)));
    } catch (const Error&) {
      return 1e3 + std::abs(x[0]) + std::abs(x[1]);
    }
  };
  // Starts: gain ratios bracketing the thermal value for the observed
  // occupation, times several two-photon ratios.
  const double n_data = std::max(1e-3, detail::histogram_occupation(hist));
  const double thermal_ratio = n_data / (n_data + 1.0);
  std::vector<std::vector<double>> starts;
  for (double f : {0.5, 0.9, 1.0, 1.5})
    for (double s : {1e-6, 1e-3, 1e-2, 1e-1, 1.0})
      starts.push_back({std::log(std::max(1e-6, f * thermal_ratio)), std::log(s)});
  const std::vector<double> step{0.3, 1.0};
  const auto best = minimize_simplex(objective, starts, step, opt.tolerance, opt.max_iterations);
  const ImpurityModel m = model(best.x);
  r.parameters = {{"gamma_up", m.rate_up},
                  {"gamma_down", m.rate_down},
                  {"gamma_s", m.rate_twophoton},
                  {"gamma_phi", m.rate_dephase}};
  r.mu_over_T = r.xi = std::log(m.rate_up / m.rate_down);
  r.converged = best.converged && best.value < 1e3;
  r.iterations = best.iterations;
  if (!r.converged) r.flags.push_back("not_converged");
  try {
    const auto p = impurity_steady_state(m);
    r.entropy = entropy(p);
    r.mean_occupation = mean_occupation(p);
    r.l2_residual = l2_norm(hist, hist.grid(), fock_mixture_wigner(p, hist.grid()));
    // Validity: up ~ O(down) and twophoton <a a^+> << up.
    const double ratio = m.rate_up / m.rate_down;
    if (ratio < 0.1 || ratio > 10.0) r.flags.push_back("rates_not_comparable");
    if (m.rate_twophoton * (r.mean_occupation + 1.0) > 0.1 * m.rate_up)
      r.flags.push_back("twophoton_not_small");
  } catch (const Error&) {
    r.flags.push_back("no_steady_state");
  }
  return r;
}

// ---------------------------------------------------------------------------
// Equipartition

struct MaxwellBoltzmannCheck {
  double T = 0.0;
  double goodness = std::numeric_limits<double>::quiet_NaN();  // L1 distance of densities
  std::vector<std::string> flags;
};

/// Compares the momentum density with the Gaussian of variance <p^2> = T/|Delta|:
///   P(p) = sqrt(|Delta| / (2 pi T)) exp(-|Delta| p^2 / (2 T)).
inline MaxwellBoltzmannCheck maxwell_boltzmann_check(std::span<const double> p, double detuning) {
  if (p.empty()) throw Error("thermofit", "EmptyInput", "no momentum samples");
  MaxwellBoltzmannCheck c;
  if (p.size() < 1000) c.flags.push_back("few_samples");
  double p2 = 0.0;
  for (double x : p) p2 += x * x;
  p2 /= static_cast<double>(p.size());
  c.T = std::abs(detuning) * p2;
  if (!(p2 > 0.0)) {
    c.flags.push_back("degenerate");
    return c;
  }
  const Histogram1D h = histogram_1d(p);
  const double w = h.width();
  // Integrate the model exactly over each bin, and add the model mass outside the range.
  double l1 = 0.0, inside = 0.0;
  const double s = std::sqrt(2.0 * p2);
  for (std::size_t i = 0; i < h.density.size(); ++i) {
    const double a = h.min + static_cast<double>(i) * w, b = a + w;
    const double mass = 0.5 * (std::erf(b / s) - std::erf(a / s));
    inside += mass;
    l1 += std::abs(h.density[i] * w - mass);
  }
  c.goodness = l1 + std::max(0.0, 1.0 - inside);
  if (c.goodness > 0.3) c.flags.push_back("equipartition_breakdown");
  return c;
}

inline MaxwellBoltzmannCheck maxwell_boltzmann_check(std::span<const cplx> samples, double detuning) {
  std::vector<double> p(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) p[i] = std::sqrt(2.0) * samples[i].imag();
  return maxwell_boltzmann_check(p, detuning);
}

}  // namespace twachain
