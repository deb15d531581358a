#pragma once

// Integration of the truncated-Wigner Langevin equations of the chain and of
// their noiseless classical (Gross-Pitaevskii) limit.
//
// In the rotating frame, with f(a) = Delta a - U (|a|^2 - c) a:
//   da_1/dt = i f(a_1) + i J a_2 - i zeta (a_1^*)^(n-1) - (gamma/2) a_1 - i sqrt(gamma/2) xi_1
//   da_l/dt = i f(a_l) + i J (a_{l-1} + a_{l+1})
//   da_L/dt = i f(a_L) + i J a_{L-1} - (gamma/2) a_L - i sqrt(gamma/2) xi_L
// c = 1 for the Wigner (symmetric-order) dynamics, c = 0 for the classical one.
// A single-site chain (L = 1) has one driven site with one loss channel.
//
// Site indices are 0-based throughout the C++ API.

#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "twachain/error.hpp"
#include "twachain/model.hpp"
#include "twachain/parallel.hpp"
#include "twachain/rng.hpp"

namespace twachain {

enum class Dynamics { kTruncatedWigner, kGrossPitaevskii };

inline constexpr double kDefaultOtocEpsilon = 1e-2;

/// Deterministic part of the equations of motion for one trajectory.
inline void drift(const ChainParams& p, std::span<const cplx> a, std::span<cplx> out,
                  Dynamics dyn = Dynamics::kTruncatedWigner) {
  const int L = static_cast<int>(a.size());
  if (L == 0) return;
  const double shift = dyn == Dynamics::kTruncatedWigner ? 1.0 : 0.0;
  const double J = p.hopping;
  // Written out in real arithmetic: std::complex multiplication carries NaN
  // recovery branches that dominate this loop.
  for (int l = 0; l < L; ++l) {
    const double re = a[l].real(), im = a[l].imag();
    const double w = p.detuning - p.kerr * (re * re + im * im - shift);
    double nre = 0.0, nim = 0.0;
    if (l > 0) nre += a[l - 1].real(), nim += a[l - 1].imag();
    if (l + 1 < L) nre += a[l + 1].real(), nim += a[l + 1].imag();
    // i*w*a + i*J*neighbours
    out[l] = cplx(-w * im - J * nim, w * re + J * nre);
  }
  cplx conj_pow = 1.0;
  const cplx c = std::conj(a[0]);
  for (int k = 1; k < p.photon_order; ++k)
    conj_pow = cplx(conj_pow.real() * c.real() - conj_pow.imag() * c.imag(),
                    conj_pow.real() * c.imag() + conj_pow.imag() * c.real());
  // -i*zeta*conj_pow - (gamma/2) a
  out[0] += cplx(p.drive * conj_pow.imag() - 0.5 * p.loss * a[0].real(),
                 -p.drive * conj_pow.real() - 0.5 * p.loss * a[0].imag());
  if (L > 1) out[L - 1] -= 0.5 * p.loss * a[L - 1];
}

/// Classical energy of the closed chain (gamma = zeta = 0), rotating frame.
inline double classical_energy(const ChainParams& p, std::span<const cplx> a) {
  double e = 0.0;
  for (std::size_t l = 0; l < a.size(); ++l) {
    const double n = std::norm(a[l]);
    e += -p.detuning * n + 0.5 * p.kerr * n * n;
    if (l + 1 < a.size()) e -= 2.0 * p.hopping * std::real(std::conj(a[l + 1]) * a[l]);
  }
  return e;
}

inline double total_norm(std::span<const cplx> a) {
  double s = 0.0;
  for (const auto& x : a) s += std::norm(x);
  return s;
}

/// Boundary noise increments for one trajectory. Each complex increment has
/// independent quadratures of variance dt/2, so E|dW|^2 = dt.
class NoiseProcess {
 public:
  NoiseProcess() = default;
  NoiseProcess(std::uint64_t master_seed, std::uint32_t trajectory, std::uint64_t counter = 0)
      : stream_(master_seed, trajectory, StreamTag::kDynamics, counter) {}

  std::pair<cplx, cplx> increments(double dt) {
    const cplx first = stream_.complex_gaussian(dt);
    const cplx last = stream_.complex_gaussian(dt);
    return {first, last};
  }

  std::uint64_t counter() const { return stream_.counter(); }
  void set_counter(std::uint64_t c) { stream_.set_counter(c); }

 private:
  CounterStream stream_;
};

/// One time step of the Langevin equations by Strang splitting:
/// deterministic RK4 half step, exact additive noise kick
/// -i sqrt(gamma/2) dW at the boundary sites, deterministic RK4 half step.
///
/// Deterministic accuracy is fourth order; with noise the scheme is weak
/// order two and, since the noise is additive, strong order one.
class SplitStepper {
 public:
  SplitStepper(const ChainParams& p, Dynamics dyn, double dt)
      : params_(p), dyn_(dyn), dt_(dt), noise_amp_(std::sqrt(0.5 * p.loss)), k1_(p.sites),
        k2_(p.sites), k3_(p.sites), k4_(p.sites), tmp_(p.sites) {}

  double dt() const { return dt_; }
  Dynamics dynamics() const { return dyn_; }
  const ChainParams& params() const { return params_; }

  void step(std::span<cplx> a, cplx dw_first, cplx dw_last) {
    rk4(a, 0.5 * dt_);
    const int L = static_cast<int>(a.size());
    if (dyn_ == Dynamics::kTruncatedWigner && L > 0) {
      a[0] += cplx(0.0, -noise_amp_) * dw_first;
      if (L > 1) a[L - 1] += cplx(0.0, -noise_amp_) * dw_last;
    }
    rk4(a, 0.5 * dt_);
  }

 private:
  void rk4(std::span<cplx> a, double h) {
    const std::size_t L = a.size();
    drift(params_, a, k1_, dyn_);
    for (std::size_t l = 0; l < L; ++l) tmp_[l] = a[l] + (0.5 * h) * k1_[l];
    drift(params_, tmp_, k2_, dyn_);
    for (std::size_t l = 0; l < L; ++l) tmp_[l] = a[l] + (0.5 * h) * k2_[l];
    drift(params_, tmp_, k3_, dyn_);
    for (std::size_t l = 0; l < L; ++l) tmp_[l] = a[l] + h * k3_[l];
    drift(params_, tmp_, k4_, dyn_);
    const double s = h / 6.0;
    for (std::size_t l = 0; l < L; ++l)
      a[l] += s * (k1_[l] + 2.0 * (k2_[l] + k3_[l]) + k4_[l]);
  }

  ChainParams params_;
  Dynamics dyn_;
  double dt_;
  double noise_amp_;
  std::vector<cplx> k1_, k2_, k3_, k4_, tmp_;
};

/// Thrown when a field leaves the finite range.
class NonFiniteField : public Error {
 public:
  NonFiniteField(int traj, int site, double t)
      : Error("engine", "NonFiniteField",
              "non-finite field in trajectory " + std::to_string(traj) + " at site " +
                  std::to_string(site + 1) + ", t=" + std::to_string(t)),
        trajectory_(traj), site_(site), time_(t) {}
  int trajectory() const { return trajectory_; }
  int site() const { return site_; }
  double time() const { return time_; }

 private:
  int trajectory_, site_;
  double time_;
};

inline void check_finite(std::span<const cplx> a, int traj, double t) {
  for (std::size_t l = 0; l < a.size(); ++l)
    if (!std::isfinite(a[l].real()) || !std::isfinite(a[l].imag()))
      throw NonFiniteField(traj, static_cast<int>(l), t);
}

/// One trajectory: fields, its noise stream and its own clock.
class Trajectory {
 public:
  Trajectory(const ChainParams& p, Dynamics dyn, double dt, std::uint64_t seed, int index)
      : stepper_(p, dyn, dt), noise_(seed, static_cast<std::uint32_t>(index)), index_(index),
        fields_(p.sites) {}

  std::span<cplx> fields() { return fields_; }
  std::span<const cplx> fields() const { return fields_; }
  double time() const { return t0_ + static_cast<double>(steps_) * stepper_.dt(); }
  int index() const { return index_; }
  std::uint64_t noise_counter() const { return noise_.counter(); }

  void reset_clock(double t, std::uint64_t counter) {
    t0_ = t;
    steps_ = 0;
    noise_.set_counter(counter);
  }

  void step() {
    const auto [w1, wL] = stepper_.dynamics() == Dynamics::kTruncatedWigner
                              ? noise_.increments(stepper_.dt())
                              : std::pair<cplx, cplx>{};
    stepper_.step(fields_, w1, wL);
    ++steps_;
    check_finite(fields_, index_, time());
  }

  void advance(long long n_steps) {
    for (long long s = 0; s < n_steps; ++s) step();
  }

 private:
  SplitStepper stepper_;
  NoiseProcess noise_;
  int index_;
  std::vector<cplx> fields_;
  double t0_ = 0.0;
  long long steps_ = 0;
};

inline long long steps_for(double duration, double dt) {
  return duration <= 0.0 ? 0 : static_cast<long long>(std::llround(duration / dt));
}

/// n_traj x L block of phase-space fields with per-trajectory noise counters.
class FieldEnsemble {
 public:
  FieldEnsemble() = default;
  FieldEnsemble(int n_traj, int sites)
      : n_traj_(n_traj), sites_(sites),
        fields_(static_cast<std::size_t>(n_traj) * static_cast<std::size_t>(sites)),
        counters_(n_traj, 0) {}

  int n_traj() const { return n_traj_; }
  int sites() const { return sites_; }
  double time = 0.0;

  std::span<cplx> trajectory(int t) {
    return {fields_.data() + static_cast<std::size_t>(t) * sites_, static_cast<std::size_t>(sites_)};
  }
  std::span<const cplx> trajectory(int t) const {
    return {fields_.data() + static_cast<std::size_t>(t) * sites_, static_cast<std::size_t>(sites_)};
  }
  std::uint64_t& counter(int t) { return counters_[t]; }
  std::uint64_t counter(int t) const { return counters_[t]; }
  const std::vector<cplx>& raw() const { return fields_; }
  std::vector<cplx>& raw() { return fields_; }

  bool operator==(const FieldEnsemble&) const = default;

 private:
  int n_traj_ = 0;
  int sites_ = 0;
  std::vector<cplx> fields_;
  std::vector<std::uint64_t> counters_;
};

/// Samples the initial ensemble; trajectory t uses its own initial-condition stream.
inline FieldEnsemble make_ensemble(const ValidatedConfig& cfg) {
  const auto& c = cfg.controls();
  FieldEnsemble e(c.n_traj, cfg.params().sites);
  for (int t = 0; t < c.n_traj; ++t) {
    CounterStream s(c.master_seed, static_cast<std::uint32_t>(t), StreamTag::kInitial);
    sample_initial(cfg.initial(), s, e.trajectory(t));
  }
  return e;
}

/// Advances every trajectory by `n_steps` steps of size dt.
inline void advance(FieldEnsemble& e, const ChainParams& p, const IntegrationControls& c,
                    long long n_steps, Dynamics dyn, int threads = 1) {
  const double t0 = e.time;
  parallel_for(e.n_traj(), threads, [&](int t) {
    Trajectory tr(p, dyn, c.dt, c.master_seed, t);
    std::copy(e.trajectory(t).begin(), e.trajectory(t).end(), tr.fields().begin());
    tr.reset_clock(t0, e.counter(t));
    tr.advance(n_steps);
    std::copy(tr.fields().begin(), tr.fields().end(), e.trajectory(t).begin());
    e.counter(t) = tr.noise_counter();
  });
  e.time = t0 + static_cast<double>(n_steps) * c.dt;
}

/// One stochastic step of the Wigner dynamics for the whole ensemble.
inline void step_twa(FieldEnsemble& e, const ChainParams& p, const IntegrationControls& c,
                     int threads = 1) {
  advance(e, p, c, 1, Dynamics::kTruncatedWigner, threads);
}

/// One deterministic step of the classical dynamics.
inline void step_gp(FieldEnsemble& e, const ChainParams& p, const IntegrationControls& c,
                    int threads = 1) {
  advance(e, p, c, 1, Dynamics::kGrossPitaevskii, threads);
}

/// Copy of `a` with the phase of site k rotated by epsilon in every trajectory.
inline FieldEnsemble perturb_phase(const FieldEnsemble& a, int k, double epsilon) {
  if (k < 0 || k >= a.sites())
    throw Error("engine", "PerturbSiteOutOfRange",
                "perturbed site " + std::to_string(k + 1) + " outside chain of " +
                    std::to_string(a.sites()) + " sites");
  FieldEnsemble b = a;
  const cplx rot = std::polar(1.0, epsilon);
  for (int t = 0; t < b.n_traj(); ++t) b.trajectory(t)[k] *= rot;
  return b;
}

/// Builds replica b by a phase kick at site k and advances both replicas with
/// identical noise for `n_steps`.
inline std::pair<FieldEnsemble, FieldEnsemble> evolve_replicas(
    const FieldEnsemble& a, int k, double epsilon, const ChainParams& p,
    const IntegrationControls& c, long long n_steps, int threads = 1) {
  FieldEnsemble b = perturb_phase(a, k, epsilon);
  FieldEnsemble ra = a;
  advance(ra, p, c, n_steps, Dynamics::kTruncatedWigner, threads);
  advance(b, p, c, n_steps, Dynamics::kTruncatedWigner, threads);
  return {std::move(ra), std::move(b)};
}

// Checkpoint file layout (little-endian, native doubles):
//   char[8] "TWACKPT\0" | u32 version | i32 n_traj | i32 sites | f64 time
//   | n_traj*sites*(f64 re, f64 im) | n_traj*u64 noise counters
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_checkpoint(const std::string& path, const FieldEnsemble& e) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("engine", "CheckpointIO", "cannot open " + path + " for writing");
  const char magic[8] = {'T', 'W', 'A', 'C', 'K', 'P', 'T', '\0'};
  os.write(magic, 8);
  const std::uint32_t version = kCheckpointVersion;
  const std::int32_t nt = e.n_traj(), ns = e.sites();
  os.write(reinterpret_cast<const char*>(&version), sizeof version);
  os.write(reinterpret_cast<const char*>(&nt), sizeof nt);
  os.write(reinterpret_cast<const char*>(&ns), sizeof ns);
  os.write(reinterpret_cast<const char*>(&e.time), sizeof e.time);
  os.write(reinterpret_cast<const char*>(e.raw().data()),
           static_cast<std::streamsize>(e.raw().size() * sizeof(cplx)));
  for (int t = 0; t < nt; ++t) {
    const std::uint64_t c = e.counter(t);
    os.write(reinterpret_cast<const char*>(&c), sizeof c);
  }
  if (!os) throw Error("engine", "CheckpointIO", "write failed for " + path);
}

inline FieldEnsemble read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("engine", "CheckpointIO", "cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, "TWACKPT", 8) != 0)
    throw Error("engine", "CheckpointIO", path + " is not a checkpoint file");
  std::uint32_t version = 0;
  std::int32_t nt = 0, ns = 0;
  is.read(reinterpret_cast<char*>(&version), sizeof version);
  if (version != kCheckpointVersion)
    throw Error("engine", "CheckpointIO", "unsupported checkpoint version " + std::to_string(version));
  is.read(reinterpret_cast<char*>(&nt), sizeof nt);
  is.read(reinterpret_cast<char*>(&ns), sizeof ns);
  if (!is || nt < 0 || ns < 0) throw Error("engine", "CheckpointIO", "corrupt header in " + path);
  FieldEnsemble e(nt, ns);
  is.read(reinterpret_cast<char*>(&e.time), sizeof e.time);
  is.read(reinterpret_cast<char*>(e.raw().data()),
          static_cast<std::streamsize>(e.raw().size() * sizeof(cplx)));
  for (int t = 0; t < nt; ++t) is.read(reinterpret_cast<char*>(&e.counter(t)), sizeof(std::uint64_t));
  if (!is) throw Error("engine", "CheckpointIO", "truncated checkpoint " + path);
  return e;
}

}  // namespace twachain
