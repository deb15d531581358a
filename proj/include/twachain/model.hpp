#pragma once

// Physical and numerical parameters of the boundary-driven, boundary-dissipative
// Bose-Hubbard chain, plus initial-condition sampling.
//
// All energies are in units of the loss rate gamma, times in units of 1/gamma.

#include <complex>
#include <cstdint>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "twachain/error.hpp"
#include "twachain/rng.hpp"

namespace twachain {

using cplx = std::complex<double>;

struct ChainParams {
  int sites = 1;          // L
  int photon_order = 2;   // n
  double detuning = 0.0;  // Delta
  double kerr = 0.1;      // U
  double hopping = 0.0;   // J
  double drive = 0.0;     // zeta
  double loss = 1.0;      // gamma
};

enum class InitialKind { kVacuum, kRingState, kExplicit };

struct InitialCondition {
  InitialKind kind = InitialKind::kVacuum;
  double ring_radius = 10.0;
  std::vector<cplx> explicit_fields;
};

struct IntegrationControls {
  double dt = 5e-3;
  double t_transient = 0.0;
  double t_window = 0.0;
  double sample_spacing = 1.0;  // output-time spacing inside the averaging window
  int n_traj = 1;
  std::uint64_t master_seed = 0;
};

struct Violation {
  std::string code;   // NonPositive, NegativeAmplitude, ...
  std::string field;  // offending field name
};

class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<Violation> v)
      : Error("model", v.empty() ? "Validation" : v.front().code, describe(v)),
        violations_(std::move(v)) {}

  const std::vector<Violation>& violations() const { return violations_; }

 private:
  static std::string describe(const std::vector<Violation>& v) {
    std::ostringstream os;
    os << "invalid configuration:";
    for (const auto& x : v) os << ' ' << x.code << '(' << x.field << ')';
    return os.str();
  }
  std::vector<Violation> violations_;
};

/// A configuration that passed validation. Only `validate` constructs one.
class ValidatedConfig {
 public:
  const ChainParams& params() const { return params_; }
  const InitialCondition& initial() const { return initial_; }
  const IntegrationControls& controls() const { return controls_; }

 private:
  ValidatedConfig(ChainParams p, InitialCondition ic, IntegrationControls c)
      : params_(std::move(p)), initial_(std::move(ic)), controls_(c) {}
  friend ValidatedConfig validate(const ChainParams&, const InitialCondition&,
                                  const IntegrationControls&);

  ChainParams params_;
  InitialCondition initial_;
  IntegrationControls controls_;
};

inline std::vector<Violation> check(const ChainParams& p, const InitialCondition& ic,
                                    const IntegrationControls& c) {
  std::vector<Violation> out;
  if (p.sites < 1) out.push_back({"NonPositive", "L"});
  if (p.photon_order < 1) out.push_back({"NonPositive", "n"});
  if (!(p.loss > 0.0)) out.push_back({"NonPositive", "gamma"});
  if (p.kerr < 0.0) out.push_back({"NegativeAmplitude", "U"});
  if (p.drive < 0.0) out.push_back({"NegativeAmplitude", "zeta"});
  if (!(c.dt > 0.0)) out.push_back({"NonPositive", "dt"});
  if (c.t_window < 0.0) out.push_back({"Negative", "t_window"});
  if (c.t_transient < 0.0) out.push_back({"Negative", "t_transient"});
  if (!(c.sample_spacing > 0.0)) out.push_back({"NonPositive", "sample_spacing"});
  if (c.n_traj < 1) out.push_back({"NonPositive", "n_traj"});
  if (ic.kind == InitialKind::kExplicit && p.sites >= 1 &&
      ic.explicit_fields.size() != static_cast<std::size_t>(p.sites))
    out.push_back({"ExplicitFieldsLengthMismatch", "explicit_fields"});
  if (ic.kind == InitialKind::kRingState && ic.ring_radius < 0.0)
    out.push_back({"NegativeAmplitude", "ring_radius"});
  return out;
}

inline ValidatedConfig validate(const ChainParams& p, const InitialCondition& ic,
                                const IntegrationControls& c) {
  auto v = check(p, ic, c);
  if (!v.empty()) throw ValidationError(std::move(v));
  return ValidatedConfig(p, ic, c);
}

/// Draws alpha_l(0) for every site of one trajectory.
///
/// Vacuum: complex Gaussian, zero mean, E|alpha|^2 = 1/2.
/// RingState: r e^{i theta} plus vacuum noise per site, one uniform theta per
/// trajectory shared by all sites.
inline void sample_initial(const InitialCondition& ic, CounterStream& stream, std::span<cplx> out) {
  switch (ic.kind) {
    case InitialKind::kVacuum:
      for (auto& a : out) a = stream.complex_gaussian(0.5);
      break;
    case InitialKind::kRingState: {
      const cplx ring = std::polar(ic.ring_radius, stream.uniform_angle());
      for (auto& a : out) a = ring + stream.complex_gaussian(0.5);
      break;
    }
    case InitialKind::kExplicit:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = ic.explicit_fields.at(i);
      break;
  }
}

}  // namespace twachain
