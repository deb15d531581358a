#pragma once

// Exact open-system dynamics of short chains (L <= 2) in a truncated Fock
// space: quantum-jump trajectories and, for one mode, the dense Lindblad
// equation
//   H = sum_l [-Delta n_l + (U/2) a_l^+ a_l^+ a_l a_l] - J (a_1^+ a_2 + h.c.)
//       + (zeta/n) (a_1^+n + a_1^n),
//   jump operators sqrt(gamma) a_1 and sqrt(gamma) a_L.
// Basis index of |k_1, k_2> is k_1 * d + k_2.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "twachain/error.hpp"
#include "twachain/model.hpp"
#include "twachain/parallel.hpp"
#include "twachain/rng.hpp"

namespace twachain {

using SparseC = Eigen::SparseMatrix<cplx, Eigen::RowMajor>;

struct FockConfig {
  int cutoff = 20;               // d, Fock states per site
  long long dimension_cap = 1 << 16;
  double leakage_tolerance = 1e-6;  // top-level occupation relative to norm
};

struct Generators {
  int sites = 1;
  int cutoff = 2;
  SparseC H;
  std::vector<SparseC> jumps;
  std::vector<SparseC> number;  // n_l per site
  std::vector<Eigen::VectorXd> level;  // Fock level of site l for each basis index
  long long dimension() const { return H.rows(); }
};

namespace detail {

/// Single-site operators lifted to the product space.
inline SparseC lift(const Eigen::MatrixXcd& op, int site, int sites, int d) {
  const Eigen::Index D = sites == 1 ? d : static_cast<Eigen::Index>(d) * d;
  std::vector<Eigen::Triplet<cplx>> t;
  for (Eigen::Index i = 0; i < D; ++i) {
    const int k[2] = {static_cast<int>(sites == 1 ? i : i / d), static_cast<int>(i % d)};
    const int other = sites == 1 ? 0 : k[1 - site];
    for (int m = 0; m < d; ++m) {
      const cplx v = op(m, k[site]);
      if (v == cplx(0.0)) continue;
      const Eigen::Index j =
          sites == 1 ? m : (site == 0 ? static_cast<Eigen::Index>(m) * d + other
                                      : static_cast<Eigen::Index>(other) * d + m);
      t.emplace_back(j, i, v);
    }
  }
  SparseC s(D, D);
  s.setFromTriplets(t.begin(), t.end());
  return s;
}

}  // namespace detail

inline Generators build_generators(const ChainParams& p, const FockConfig& cfg) {
  if (p.sites < 1 || p.sites > 2)
    throw Error("oracle", "UnsupportedChain", "exact dynamics only for L = 1 or L = 2");
  const int d = cfg.cutoff;
  if (d < 2) throw Error("oracle", "DimensionCap", "Fock cutoff below 2");
  const long long D = p.sites == 1 ? d : static_cast<long long>(d) * d;
  if (D > cfg.dimension_cap)
    throw Error("oracle", "DimensionCap",
                "Hilbert space dimension " + std::to_string(D) + " exceeds cap " +
                    std::to_string(cfg.dimension_cap));
  Eigen::MatrixXcd a = Eigen::MatrixXcd::Zero(d, d);
  for (int k = 1; k < d; ++k) a(k - 1, k) = std::sqrt(static_cast<double>(k));
  const Eigen::MatrixXcd ad = a.adjoint();
  const Eigen::MatrixXcd n = ad * a;
  const Eigen::MatrixXcd h_site = -p.detuning * n + 0.5 * p.kerr * (ad * ad * a * a);
  Eigen::MatrixXcd drive = Eigen::MatrixXcd::Zero(d, d);
  if (p.drive != 0.0) {
    Eigen::MatrixXcd an = Eigen::MatrixXcd::Identity(d, d);
    for (int k = 0; k < p.photon_order; ++k) an = an * a;
    drive = (p.drive / p.photon_order) * (an + an.adjoint());
  }
  Generators g;
  g.sites = p.sites;
  g.cutoff = d;
  g.H = detail::lift(h_site + drive, 0, p.sites, d);
  for (int l = 0; l < p.sites; ++l) {
    if (l > 0) g.H += detail::lift(h_site, l, p.sites, d);
    g.number.push_back(detail::lift(n, l, p.sites, d));
    g.jumps.push_back(std::sqrt(p.loss) * detail::lift(a, l, p.sites, d));
    Eigen::VectorXd lv(D);
    for (long long i = 0; i < D; ++i)
      lv(i) = static_cast<double>(p.sites == 1 ? i : (l == 0 ? i / d : i % d));
    g.level.push_back(std::move(lv));
  }
  if (p.sites == 2 && p.hopping != 0.0) {
    const SparseC a1 = detail::lift(a, 0, 2, d), a2 = detail::lift(a, 1, 2, d);
    const SparseC a1d = a1.adjoint();
    const SparseC hop = a1d * a2;
    const SparseC hop_d = hop.adjoint();
    const SparseC both = hop + hop_d;
    g.H -= p.hopping * both;
  }
  g.H.makeCompressed();
  return g;
}

/// Expectation time series per site, with standard errors (NaN when not sampled).
struct OracleSeries {
  std::vector<double> t;
  int sites = 0;
  std::vector<std::vector<double>> n, dn, n_err, dn_err;  // [site][time]
  double max_leakage = 0.0;
  int n_traj = 0;
};

struct FockInitial {
  std::vector<int> levels;  // Fock level per site; empty means vacuum
};

namespace detail {

inline Eigen::VectorXcd fock_state(const Generators& g, const FockInitial& init) {
  const long long D = g.dimension();
  Eigen::VectorXcd psi = Eigen::VectorXcd::Zero(D);
  long long idx = 0;
  for (int l = 0; l < g.sites; ++l) {
    const int k = init.levels.empty() ? 0 : init.levels.at(l);
    if (k < 0 || k >= g.cutoff) throw Error("oracle", "InvalidInitial", "initial Fock level outside cutoff");
    idx = idx * g.cutoff + k;
  }
  psi(idx) = 1.0;
  return psi;
}

/// Probability that any site sits on its top Fock level.
inline double leakage(const Generators& g, const Eigen::VectorXcd& psi) {
  double top = 0.0;
  const double norm = psi.squaredNorm();
  for (long long i = 0; i < g.dimension(); ++i) {
    bool on_top = false;
    for (int l = 0; l < g.sites; ++l) on_top |= g.level[l](i) == g.cutoff - 1;
    if (on_top) top += std::norm(psi(i));
  }
  return top / norm;
}

}  // namespace detail

/// sum_c L_c^+ L_c
inline SparseC decay_operator(const Generators& g) {
  SparseC decay(g.dimension(), g.dimension());
  for (const auto& L : g.jumps) {
    const SparseC Ld = L.adjoint();
    const SparseC LdL = Ld * L;
    decay += LdL;
  }
  return decay;
}

/// Quantum-jump trajectory integrator under H_eff = H - (i/2) sum L^+ L.
class JumpTrajectory {
 public:
  JumpTrajectory(const Generators& g, double dt, std::uint64_t seed, int index)
      : g_(&g), dt_(dt), rng_(seed, static_cast<std::uint32_t>(index), StreamTag::kOracle) {
    const SparseC decay = decay_operator(g);
    // d psi / dt = -i H_eff psi = (-i H - decay / 2) psi = (diag + off) psi
    SparseC gen = cplx(0.0, -1.0) * g.H - 0.5 * decay;
    diag_ = gen.diagonal();
    gen.prune([](Eigen::Index r, Eigen::Index c, const cplx&) { return r != c; });
    off_ = std::move(gen);
    off_.makeCompressed();
    // Drive and hopping are real in the Fock basis, so off_ = i * (real matrix).
    bool imaginary = true;
    for (Eigen::Index k = 0; k < off_.outerSize(); ++k)
      for (SparseC::InnerIterator it(off_, k); it; ++it) imaginary &= it.value().real() == 0.0;
    if (imaginary) off_imag_ = off_.imag();
    split_site_diagonal(g);
    dt_ = std::min(dt_, kStability / gershgorin(off_));
    half_ = propagator(0.5 * dt_);
    threshold_ = rng_.uniform_pair().first;
  }

  void reset(Eigen::VectorXcd psi) {
    psi_ = std::move(psi);
    psi_ /= psi_.norm();
  }
  const Eigen::VectorXcd& state() const { return psi_; }
  int jumps() const { return jumps_; }
  /// Inner step actually used (the requested step, capped for RK4 stability).
  double step() const { return dt_; }

  /// Normalized state.
  Eigen::VectorXcd normalized() const { return psi_ / psi_.norm(); }

  /// Advances by `duration`, applying jumps when the squared norm falls below
  /// the current random threshold; jump times are located by a bracketed Newton iteration.
  void advance(double duration) {
    double left = duration;
    while (left > 1e-15) {
      const double h = std::min(dt_, left);
      Eigen::VectorXcd next = psi_;
      rk4(next, h);
      if (next.squaredNorm() > threshold_) {
        psi_ = std::move(next);
        left -= h;
        continue;
      }
      // Bracketed Newton iteration on the sub-step length, to 1e-6 relative in
      // the norm; d|psi|^2/dt = 2 sum Re(diag) |psi_k|^2 since H is Hermitian.
      const double n0 = psi_.squaredNorm(), n1 = next.squaredNorm();
      double lo = 0.0, hi = h;
      double tau = h * (n0 - threshold_) / (n0 - n1);
      Eigen::VectorXcd at = psi_;
      for (int it = 0; it < 60; ++it) {
        at = psi_;
        rk4(at, tau);
        const double nn = at.squaredNorm();
        if (std::abs(nn - threshold_) <= 1e-6 * threshold_) break;
        (nn > threshold_ ? lo : hi) = tau;
        const double slope = (2.0 * diag_.real().array() * at.cwiseAbs2().array()).sum();
        double t_new = slope < 0.0 ? tau - (nn - threshold_) / slope : 0.5 * (lo + hi);
        if (!(t_new > lo && t_new < hi)) t_new = 0.5 * (lo + hi);
        tau = t_new;
      }
      jump(at);
      left -= tau;
    }
  }

 private:
  // Interaction-picture RK4: the diagonal part of H_eff is propagated exactly,
  // the off-diagonal part (drive, hopping) by classical RK4.
  void apply_off(const Eigen::VectorXcd& in) {
    if (off_imag_.nonZeros() == 0 && off_.nonZeros() > 0) {
      v_.noalias() = off_ * in;
      return;
    }
    v_.noalias() = off_imag_ * in;
    v_ *= cplx(0.0, 1.0);
  }

  void rk4(Eigen::VectorXcd& x, double h) {
    if (h != dt_) e_ = propagator(0.5 * h);
    const Eigen::VectorXcd& e = h == dt_ ? half_ : e_;
    xi_ = e.cwiseProduct(x);
    apply_off(x);
    k1_ = h * e.cwiseProduct(v_);
    acc_ = xi_ + k1_ / 6.0;
    w_ = xi_ + 0.5 * k1_;
    apply_off(w_);
    k_ = h * v_;  // k2
    acc_ += k_ / 3.0;
    w_ = xi_ + 0.5 * k_;
    apply_off(w_);
    k_ = h * v_;  // k3
    acc_ += k_ / 3.0;
    w_ = e.cwiseProduct(xi_ + k_);
    apply_off(w_);
    x = e.cwiseProduct(acc_) + (h / 6.0) * v_;
  }

  // diag_ = s_1(k_1) + s_2(k_2) lets exp(h diag_) be built from 2d exponentials.
  void split_site_diagonal(const Generators& g) {
    if (g.sites != 2) return;
    const int d = g.cutoff;
    Eigen::VectorXcd s1(d), s2(d);
    for (int k = 0; k < d; ++k) {
      s2(k) = diag_(k);
      s1(k) = diag_(static_cast<Eigen::Index>(k) * d) - diag_(0);
    }
    const double scale = diag_.cwiseAbs().maxCoeff();
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b)
        if (std::abs(s1(a) + s2(b) - diag_(static_cast<Eigen::Index>(a) * d + b)) > 1e-12 * (1.0 + scale))
          return;
    site_diag_ = {std::move(s1), std::move(s2)};
  }

  Eigen::VectorXcd propagator(double h) const {
    if (site_diag_.empty()) return (h * diag_).array().exp();
    const Eigen::VectorXcd e1 = (h * site_diag_[0]).array().exp();
    const Eigen::VectorXcd e2 = (h * site_diag_[1]).array().exp();
    const Eigen::Index d = e2.size();
    Eigen::VectorXcd e(d * d);
    for (Eigen::Index a = 0; a < d; ++a) e.segment(a * d, d) = e1(a) * e2;
    return e;
  }

  void jump(const Eigen::VectorXcd& at) {
    std::vector<Eigen::VectorXcd> out;
    std::vector<double> w;
    double total = 0.0;
    for (const auto& L : g_->jumps) {
      out.push_back(L * at);
      w.push_back(out.back().squaredNorm());
      total += w.back();
    }
    const double u = rng_.uniform01() * total;
    std::size_t c = 0;
    for (double acc = w[0]; c + 1 < w.size() && u >= acc; acc += w[++c]) {
    }
    psi_ = out[c] / std::sqrt(w[c]);
    ++jumps_;
    threshold_ = rng_.uniform_pair().first;
  }

  // Row-sum bound on the spectral radius of the off-diagonal generator.
  static double gershgorin(const SparseC& m) {
    double r = 0.0;
    for (Eigen::Index k = 0; k < m.outerSize(); ++k) {
      double row = 0.0;
      for (SparseC::InnerIterator it(m, k); it; ++it) row += std::abs(it.value());
      r = std::max(r, row);
    }
    return r;
  }

  // RK4 is stable on the imaginary axis up to |lambda h| = 2 sqrt(2).
  static constexpr double kStability = 2.5;

  const Generators* g_;
  double dt_;
  CounterStream rng_;
  Eigen::VectorXcd diag_, half_;
  Eigen::VectorXcd e_, xi_, v_, k1_, k_, w_, acc_;
  std::vector<Eigen::VectorXcd> site_diag_;
  SparseC off_;
  Eigen::SparseMatrix<double, Eigen::RowMajor> off_imag_;
  Eigen::VectorXcd psi_;
  double threshold_ = 0.0;
  int jumps_ = 0;
};

namespace detail {

struct Moments {
  double n = 0.0;   // <n>
  double f = 0.0;   // <n(n-1)> = <a^+2 a^2>
};

inline Moments site_moments(const Generators& g, int l, const Eigen::VectorXcd& psi) {
  Moments m;
  const double norm = psi.squaredNorm();
  for (long long i = 0; i < g.dimension(); ++i) {
    const double p = std::norm(psi(i)) / norm, k = g.level[l](i);
    m.n += p * k;
    m.f += p * k * (k - 1.0);
  }
  return m;
}

/// Mean and jackknife standard errors of n and delta n = <f> - <n>^2 across trajectories.
inline void reduce_moments(const std::vector<Moments>& m, double& n, double& dn, double& n_err,
                           double& dn_err) {
  const auto N = static_cast<double>(m.size());
  double sn = 0.0, sf = 0.0;
  for (const auto& x : m) sn += x.n, sf += x.f;
  n = sn / N;
  dn = sf / N - n * n;
  if (m.size() < 2) {
    n_err = dn_err = std::numeric_limits<double>::quiet_NaN();
    return;
  }
  double vn = 0.0, vd = 0.0;
  for (const auto& x : m) {
    const double ln = (sn - x.n) / (N - 1.0);
    const double ld = (sf - x.f) / (N - 1.0) - ln * ln;
    vn += (ln - n) * (ln - n);
    vd += (ld - dn) * (ld - dn);
  }
  n_err = std::sqrt(vn * (N - 1.0) / N);
  dn_err = std::sqrt(vd * (N - 1.0) / N);
}

inline void check_times(std::span<const double> t) {
  for (std::size_t j = 0; j < t.size(); ++j)
    if (t[j] < 0.0 || (j > 0 && t[j] < t[j - 1]))
      throw Error("oracle", "InvalidTimeGrid", "time grid must be nonnegative and nondecreasing");
}

}  // namespace detail

struct McwfOptions {
  double dt = 5e-3;
  int threads = 1;
  FockInitial initial;
};

/// Inner step a trajectory at this cutoff uses when `dt` is requested.
inline double mcwf_step(const ChainParams& p, const FockConfig& cfg, double dt) {
  const Generators g = build_generators(p, cfg);
  return JumpTrajectory(g, dt, 0, 0).step();
}

/// Averages n_l(t) and delta n_l(t) over `n_traj` quantum-jump trajectories.
inline OracleSeries evolve_mcwf(const ChainParams& p, const FockConfig& cfg, int n_traj,
                                std::vector<double> t_grid, std::uint64_t seed,
                                const McwfOptions& opt = {}) {
  detail::check_times(t_grid);
  if (n_traj < 1) throw Error("oracle", "NonPositive", "n_traj must be positive");
  const Generators g = build_generators(p, cfg);
  const std::size_t nt = t_grid.size();
  const int L = g.sites;
  // per-trajectory moments [traj][site][time]
  std::vector<detail::Moments> mom(static_cast<std::size_t>(n_traj) * L * nt);
  std::vector<double> leak(n_traj, 0.0);
  const Eigen::VectorXcd psi0 = detail::fock_state(g, opt.initial);
  parallel_for(n_traj, opt.threads, [&](int tr) {
    JumpTrajectory jt(g, opt.dt, seed, tr);
    jt.reset(psi0);
    double now = 0.0;
    for (std::size_t j = 0; j < nt; ++j) {
      jt.advance(t_grid[j] - now);
      now = t_grid[j];
      leak[tr] = std::max(leak[tr], detail::leakage(g, jt.state()));
      for (int l = 0; l < L; ++l)
        mom[(static_cast<std::size_t>(tr) * L + l) * nt + j] = detail::site_moments(g, l, jt.state());
    }
  });
  OracleSeries s;
  s.t = std::move(t_grid);
  s.sites = L;
  s.n_traj = n_traj;
  s.max_leakage = *std::max_element(leak.begin(), leak.end());
  if (s.max_leakage > cfg.leakage_tolerance)
    throw Error("oracle", "CutoffLeakage",
                "top Fock level occupation " + std::to_string(s.max_leakage) + " exceeds tolerance",
                "cutoff=" + std::to_string(cfg.cutoff));
  s.n.assign(L, std::vector<double>(nt));
  s.dn = s.n_err = s.dn_err = s.n;
  std::vector<detail::Moments> col(n_traj);
  for (int l = 0; l < L; ++l)
    for (std::size_t j = 0; j < nt; ++j) {
      for (int tr = 0; tr < n_traj; ++tr) col[tr] = mom[(static_cast<std::size_t>(tr) * L + l) * nt + j];
      detail::reduce_moments(col, s.n[l][j], s.dn[l][j], s.n_err[l][j], s.dn_err[l][j]);
    }
  return s;
}

struct CutoffChoice {
  int cutoff = 0;
  double relative_change = 0.0;  // max |n_2d - n_d| / max n_2d over sites and times
  double leakage = 0.0;          // top-level occupation at the chosen cutoff
  std::vector<std::pair<int, double>> history;  // (d, change to 2d)
};

/// Smallest cutoff in the sequence d, 2d, 4d, ... whose doubling changes n_l(t)
/// by less than `tolerance` (relative) and whose leakage stays within the
/// configured bound. Both runs of a pair share the seed and the inner step of
/// the larger cutoff.
inline CutoffChoice converge_cutoff(const ChainParams& p, const FockConfig& cfg, int max_cutoff,
                                    int n_traj, const std::vector<double>& t_grid, std::uint64_t seed,
                                    const McwfOptions& opt = {}, double tolerance = 5e-3) {
  FockConfig loose = cfg;
  loose.leakage_tolerance = 1.0;
  CutoffChoice c;
  for (int d = cfg.cutoff; 2 * d <= max_cutoff; d *= 2) {
    loose.cutoff = 2 * d;
    McwfOptions same = opt;
    same.dt = mcwf_step(p, loose, opt.dt);
    OracleSeries b = evolve_mcwf(p, loose, n_traj, t_grid, seed, same);
    loose.cutoff = d;
    OracleSeries a = evolve_mcwf(p, loose, n_traj, t_grid, seed, same);
    double scale = 0.0, diff = 0.0;
    for (int l = 0; l < b.sites; ++l)
      for (std::size_t j = 0; j < b.t.size(); ++j) {
        scale = std::max(scale, std::abs(b.n[l][j]));
        diff = std::max(diff, std::abs(b.n[l][j] - a.n[l][j]));
      }
    const double change = scale > 0.0 ? diff / scale : 0.0;
    c.history.emplace_back(d, change);
    if (change < tolerance && a.max_leakage <= cfg.leakage_tolerance) {
      c.cutoff = d;
      c.relative_change = change;
      c.leakage = a.max_leakage;
      return c;
    }
  }
  throw Error("oracle", "CutoffNotConverged",
              "no cutoff up to " + std::to_string(max_cutoff) + " passes the doubling test",
              "max_cutoff=" + std::to_string(max_cutoff));
}

struct DenseResult {
  OracleSeries series;
  std::vector<double> trace_error;      // |Tr rho - 1| per output time
  std::vector<double> hermiticity;      // max |rho - rho^+| per output time
  std::vector<Eigen::MatrixXcd> snapshots;  // rho at output times when requested
};

struct DenseOptions {
  double dt = 1e-3;
  bool keep_snapshots = false;
  FockInitial initial;
};

/// Direct RK4 integration of the Lindblad equation (one mode, or L = 2 with tiny d).
inline DenseResult evolve_dense(const ChainParams& p, const FockConfig& cfg,
                                std::vector<double> t_grid, const DenseOptions& opt = {}) {
  detail::check_times(t_grid);
  const Generators g = build_generators(p, cfg);
  if (g.dimension() > 400)
    throw Error("oracle", "DimensionCap", "dense Lindblad integration limited to dimension 400");
  const Eigen::Index D = g.dimension();
  const SparseC decay = decay_operator(g);
  const SparseC Heff = g.H - cplx(0.0, 0.5) * decay;  // H - (i/2) sum L^+ L
  const SparseC Heff_adj = Heff.adjoint();
  std::vector<SparseC> Ladj;
  for (const auto& L : g.jumps) Ladj.emplace_back(L.adjoint());
  auto rhs = [&](const Eigen::MatrixXcd& r) {
    // -i (Heff r - r Heff^+) + sum L r L^+
    Eigen::MatrixXcd out = cplx(0.0, -1.0) * (Heff * r);
    out += cplx(0.0, 1.0) * (Heff_adj.transpose() * r.transpose()).transpose();
    for (std::size_t c = 0; c < g.jumps.size(); ++c)
      out += g.jumps[c] * (Ladj[c].transpose() * r.transpose()).transpose();
    return out;
  };
  const Eigen::VectorXcd psi0 = detail::fock_state(g, opt.initial);
  Eigen::MatrixXcd rho = psi0 * psi0.adjoint();
  DenseResult res;
  const std::size_t nt = t_grid.size();
  const int L = g.sites;
  res.series.sites = L;
  res.series.n.assign(L, std::vector<double>(nt));
  res.series.dn = res.series.n;
  res.series.n_err = res.series.dn_err =
      std::vector<std::vector<double>>(L, std::vector<double>(nt, 0.0));
  double now = 0.0;
  for (std::size_t j = 0; j < nt; ++j) {
    double left = t_grid[j] - now;
    while (left > 1e-15) {
      const double h = std::min(opt.dt, left);
      const Eigen::MatrixXcd k1 = rhs(rho);
      const Eigen::MatrixXcd k2 = rhs(rho + 0.5 * h * k1);
      const Eigen::MatrixXcd k3 = rhs(rho + 0.5 * h * k2);
      const Eigen::MatrixXcd k4 = rhs(rho + h * k3);
      rho += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      left -= h;
    }
    now = t_grid[j];
    const cplx tr = rho.trace();
    res.trace_error.push_back(std::abs(tr - 1.0));
    res.hermiticity.push_back((rho - rho.adjoint()).cwiseAbs().maxCoeff());
    double top = 0.0;
    for (int l = 0; l < L; ++l) {
      double n = 0.0, f = 0.0;
      for (Eigen::Index i = 0; i < D; ++i) {
        const double pk = rho(i, i).real() / tr.real(), k = g.level[l](i);
        n += pk * k;
        f += pk * k * (k - 1.0);
        if (k == g.cutoff - 1) top += pk;
      }
      res.series.n[l][j] = n;
      res.series.dn[l][j] = f - n * n;
    }
    res.series.max_leakage = std::max(res.series.max_leakage, top);
    if (opt.keep_snapshots) res.snapshots.push_back(rho);
  }
  res.series.t = std::move(t_grid);
  if (res.series.max_leakage > cfg.leakage_tolerance)
    throw Error("oracle", "CutoffLeakage",
                "top Fock level occupation " + std::to_string(res.series.max_leakage) +
                    " exceeds tolerance",
                "cutoff=" + std::to_string(cfg.cutoff));
  return res;
}

/// Wigner function of a single-mode density matrix at alpha:
///   W = sum_{m,n} rho_mn W_mn,  W_mn (m >= n) =
///   (2/pi) (-1)^n sqrt(n!/m!) (2 alpha^*)^(m-n) e^{-2|alpha|^2} L_n^(m-n)(4|alpha|^2),
///   W_nm = conj(W_mn).
inline double density_wigner(const Eigen::MatrixXcd& rho, cplx alpha) {
  const int d = static_cast<int>(rho.rows());
  const double r = std::abs(alpha), x = 4.0 * r * r;
  const cplx u = r > 0.0 ? std::conj(alpha) / r : cplx(1.0, 0.0);
  double w = 0.0;
  std::vector<double> lag(d);
  for (int k = 0; k < d; ++k) {
    // L_n^(k)(x) for n = 0..d-1-k
    const int nmax = d - k;
    lag[0] = 1.0;
    if (nmax > 1) lag[1] = 1.0 + k - x;
    for (int n = 1; n + 1 < nmax; ++n)
      lag[n + 1] = ((2.0 * n + 1.0 + k - x) * lag[n] - (n + k) * lag[n - 1]) / (n + 1.0);
    const cplx phase = std::pow(u, k);
    for (int n = 0; n < nmax; ++n) {
      const int m = n + k;
      // |prefactor| in logs: sqrt(n!/m!) (2r)^k e^{-x/2}
      double logc = -0.5 * x + 0.5 * (std::lgamma(n + 1.0) - std::lgamma(m + 1.0));
      if (k > 0) logc += (r > 0.0 ? k * std::log(2.0 * r) : -std::numeric_limits<double>::infinity());
      const double c = (n % 2 ? -1.0 : 1.0) * std::exp(logc) * lag[n];
      const cplx wmn = c * phase;
      if (k == 0)
        w += rho(m, n).real() * wmn.real();
      else
        w += 2.0 * std::real(rho(m, n) * wmn);
    }
  }
  return 2.0 / std::numbers::pi * w;
}

// Density-matrix snapshot layout:
//   char[8] "TWARHO\0\0" | u32 version | i32 dim | f64 time | dim*dim*(f64 re, f64 im), column-major
inline constexpr std::uint32_t kSnapshotVersion = 1;

inline void write_snapshot(const std::string& path, const Eigen::MatrixXcd& rho, double t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("oracle", "SnapshotIO", "cannot open " + path);
  const char magic[8] = {'T', 'W', 'A', 'R', 'H', 'O', '\0', '\0'};
  os.write(magic, 8);
  const std::uint32_t v = kSnapshotVersion;
  const std::int32_t dim = static_cast<std::int32_t>(rho.rows());
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
  os.write(reinterpret_cast<const char*>(&dim), sizeof dim);
  os.write(reinterpret_cast<const char*>(&t), sizeof t);
  os.write(reinterpret_cast<const char*>(rho.data()),
           static_cast<std::streamsize>(sizeof(cplx) * rho.size()));
  if (!os) throw Error("oracle", "SnapshotIO", "write failed for " + path);
}

inline Eigen::MatrixXcd read_snapshot(const std::string& path, double* t = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("oracle", "SnapshotIO", "cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, "TWARHO", 6) != 0)
    throw Error("oracle", "SnapshotIO", path + " is not a density-matrix snapshot");
  std::uint32_t v = 0;
  std::int32_t dim = 0;
  double time = 0.0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (v != kSnapshotVersion) throw Error("oracle", "SnapshotIO", "unsupported snapshot version");
  is.read(reinterpret_cast<char*>(&dim), sizeof dim);
  is.read(reinterpret_cast<char*>(&time), sizeof time);
  if (!is || dim <= 0) throw Error("oracle", "SnapshotIO", "corrupt snapshot header");
  Eigen::MatrixXcd rho(dim, dim);
  is.read(reinterpret_cast<char*>(rho.data()), static_cast<std::streamsize>(sizeof(cplx) * rho.size()));
  if (!is) throw Error("oracle", "SnapshotIO", "truncated snapshot " + path);
  if (t) *t = time;
  return rho;
}

/// Agreement of two time series at common checkpoints within k combined standard errors.
struct SeriesComparison {
  std::vector<double> t;
  std::vector<double> a, b, combined_error;
  std::vector<bool> within;
  int agree = 0;
};

inline SeriesComparison compare_series(std::span<const double> t, std::span<const double> a,
                                       std::span<const double> a_err, std::span<const double> b,
                                       std::span<const double> b_err, double k = 3.0) {
  SeriesComparison c;
  for (std::size_t j = 0; j < t.size(); ++j) {
    const double ea = std::isfinite(a_err[j]) ? a_err[j] : 0.0;
    const double eb = std::isfinite(b_err[j]) ? b_err[j] : 0.0;
    const double e = std::sqrt(ea * ea + eb * eb);
    const bool ok = std::abs(a[j] - b[j]) <= k * e;
    c.t.push_back(t[j]);
    c.a.push_back(a[j]);
    c.b.push_back(b[j]);
    c.combined_error.push_back(e);
    c.within.push_back(ok);
    c.agree += ok;
  }
  return c;
}

}  // namespace twachain
