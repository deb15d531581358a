// Acceptance runner: one PASS/FAIL line per criterion.
//
//   acceptance [--out DIR] [--threads N] [criterion ...]
//
// With no criterion numbers every criterion runs. Artifacts of each run are
// written below DIR (default acceptance_out).

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <map>

#include "twachain/harness.hpp"

using namespace twachain;
namespace fs = std::filesystem;

namespace {

// ---- pinned tolerances ----------------------------------------------------
constexpr double kBandSigmas = 3.0;         // combined standard errors
constexpr int kCheckpoints = 20;
constexpr int kMinAgreeing = 18;
constexpr double kVelocityTarget = 4.4;     // 2J
constexpr double kVelocityTolerance = 0.10;
constexpr double kLyapunovTarget = 4.5;
constexpr double kLyapunovTolerance = 0.20;
constexpr double kRnwSaturationMax = 0.1;   // D_{1,L}(inf)
constexpr double kDecoherenceMin = 0.95;    // Delta phi^(1) after saturation
constexpr int kDecoherenceWithin = 10;      // sites
constexpr double kQuasilinearMaxN = 0.5;
constexpr double kThermalMaxN = 1.0;
constexpr double kThermalMaxGoodness = 0.1;
constexpr double kRingPhaseMax = 0.3;       // Delta phi^(3), l <= 5
constexpr int kRingSites = 5;
constexpr double kRingDecoheredMin = 0.9;   // Delta phi^(1,2), all sites
constexpr double kClassicalPhaseMax = 0.05; // GP Delta phi^(1), all sites

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Context {
  fs::path out = "acceptance_out";
  int threads = 1;
};

std::string fmt(double x, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", prec, x);
  return buf;
}

json chain_n2(int L, double zeta) {
  return {{"L", L}, {"n", 2}, {"delta", 5.6}, {"U", 0.1}, {"J", 2.2}, {"zeta", zeta}, {"gamma", 1.0}};
}

PointResult run_and_store(const json& j, const Context& ctx, const std::string& name) {
  RunConfig c = config_from_json(j);
  c.threads = ctx.threads;
  PointResult r = run_point(c);
  write_point(r, ctx.out / name);
  return r;
}

// ---- 1: oracle agreement --------------------------------------------------
Outcome oracle_agreement(const Context& ctx) {
  json j = {{"model", {{"L", 2}, {"n", 2}, {"delta", 5.6}, {"U", 0.5}, {"J", 2.2}, {"zeta", 4.5}, {"gamma", 1.0}}},
            {"integration", {{"dt", 5e-3}, {"master_seed", 2024}}},
            {"oracle",
             {{"cutoff", 64}, {"max_cutoff", 128}, {"n_traj", 300}, {"twa_traj", 10000}, {"t_max", 40.0},
              {"checkpoints", kCheckpoints}, {"convergence", 5e-3}, {"convergence_traj", 8}}}};
  RunConfig c = config_from_json(j);
  c.threads = ctx.threads;
  const OracleComparison r = compare_oracle(c);
  fs::create_directories(ctx.out / "oracle");
  write_text(ctx.out / "oracle" / "comparison.csv", comparison_csv(r));
  write_text(ctx.out / "oracle" / "config.json", config_to_json(c).dump(2) + "\n");
  Outcome o;
  o.pass = r.n.agree >= kMinAgreeing && r.dn.agree >= kMinAgreeing;
  o.detail = "n_L " + std::to_string(r.n.agree) + "/" + std::to_string(r.n.t.size()) + ", dn_L " +
             std::to_string(r.dn.agree) + "/" + std::to_string(r.dn.t.size()) + " within " + fmt(kBandSigmas) +
             " SE (need " + std::to_string(kMinAgreeing) + "); cutoff " + std::to_string(r.cutoff.cutoff) +
             " (doubling change " + fmt(r.cutoff.relative_change, 3) + ", leakage " +
             fmt(r.exact.max_leakage, 3) + "); " + std::to_string(r.exact.n_traj) + " quantum / " +
             std::to_string(r.twa.n_traj) + " TWA trajectories";
  return o;
}

// ---- 2, 3: OTOC -------------------------------------------------------------
const PointResult& otoc_run(const Context& ctx) {
  static std::optional<PointResult> cached;
  if (cached) return *cached;
  std::vector<int> lyap;
  for (int l = 10; l <= 45; l += 5) lyap.push_back(l);
  json j = {{"model", chain_n2(60, 10.0)},
            {"integration",
             {{"dt", 5e-3}, {"t_transient", 1500}, {"t_window", 0}, {"sample_spacing", 5}, {"n_traj", 500},
              {"master_seed", 7}}},
            {"steady", {{"t_block", 100}}},
            {"otoc",
             {{"enabled", true}, {"perturb_site", 1}, {"tau_max", 20}, {"tau_step", 0.05}, {"n_starts", 5},
              {"start_spacing", 10}, {"threshold", 0.1}, {"band", {1e-3, 1e-1}}, {"lyapunov_sites", lyap}}}};
  cached = run_and_store(j, ctx, "otoc_L60_zeta10");
  return *cached;
}

Outcome butterfly(const Context& ctx) {
  const PointResult& r = otoc_run(ctx);
  Outcome o;
  if (!r.butterfly) {
    o.detail = "front not extracted";
    return o;
  }
  const double v = r.butterfly->velocity;
  o.pass = std::abs(v - kVelocityTarget) <= kVelocityTolerance * kVelocityTarget;
  o.detail = "v = " + fmt(v) + " (target " + fmt(kVelocityTarget) + " +- " + fmt(100 * kVelocityTolerance) +
             "%), " + std::to_string(r.otoc->n_pairs) + " pairs x " + std::to_string(r.otoc->n_starts) + " starts";
  return o;
}

Outcome lyapunov(const Context& ctx) {
  const PointResult& r = otoc_run(ctx);
  Outcome o;
  if (!r.lyapunov) {
    o.detail = "no sites with enough points in the fit band";
    return o;
  }
  const double lam = r.lyapunov->rate;
  o.pass = std::abs(lam - kLyapunovTarget) <= kLyapunovTolerance * kLyapunovTarget;
  o.detail = "lambda = " + fmt(lam) + " +- " + fmt(r.lyapunov->spread, 2) + " over sites " +
             site_list(r.lyapunov->sites) + " (target " + fmt(kLyapunovTarget) + " +- " +
             fmt(100 * kLyapunovTolerance) + "%)";
  return o;
}

// ---- 4: regime fingerprints -----------------------------------------------
Outcome regimes(const Context& ctx) {
  std::vector<std::string> parts;
  bool all = true;
  auto report = [&](const std::string& tag, bool ok, const std::string& d) {
    all &= ok;
    parts.push_back(tag + (ok ? " ok" : " FAIL") + " [" + d + "]");
  };

  {  // (a) resonant nonlinear wave
    json j = {{"model", chain_n2(30, 3.5)},
              {"integration",
               {{"t_transient", 2000}, {"t_window", 500}, {"sample_spacing", 5}, {"n_traj", 100}, {"master_seed", 11}}},
              {"steady", {{"t_block", 100}}},
              {"otoc", {{"enabled", true}, {"perturb_site", 1}, {"tau_max", 30}, {"n_starts", 2}}}};
    const PointResult r = run_and_store(j, ctx, "regime_a_L30_zeta3.5");
    const auto& last = r.sites.back();
    const double D = r.D_inf(29);
    report("(a)", last.dn.value < 0.0 && D < kRnwSaturationMax,
           "dn_L = " + fmt(last.dn.value) + " +- " + fmt(last.dn.std_error, 2) + ", D_1L(inf) = " + fmt(D, 3));
  }
  {  // (b) hydrodynamic
    std::vector<int> fit_sites;
    for (int l = 5; l <= 100; l += 5) fit_sites.push_back(l);
    json j = {{"model", chain_n2(100, 6.0)},
              {"integration",
               {{"t_transient", 1000}, {"t_window", 500}, {"sample_spacing", 5}, {"n_traj", 100}, {"master_seed", 12}}},
              {"steady", {{"t_block", 100}}},
              {"observables", {{"fit_sites", fit_sites}, {"wigner_bins", 81}}}};
    const PointResult r = run_and_store(j, ctx, "regime_b_L100_zeta6");
    const int L = 100;
    // decoherence: Delta phi^(1) > threshold from some site <= 10 onwards
    int first = -1;
    for (int l = L - 1; l >= 0; --l) {
      if (r.sites[l].circular_variance[0].value > kDecoherenceMin) first = l;
      else break;
    }
    const bool saturates = first >= 0 && first < kDecoherenceWithin;
    // interior maximum of delta n
    int arg = 0;
    for (int l = 1; l < L; ++l)
      if (r.sites[l].dn.value > r.sites[arg].dn.value) arg = l;
    const bool interior = arg > 0 && arg < L - 1;
    // sign changes of the fitted mu/T along the chain
    std::vector<double> ratio;
    for (const auto& f : r.fits)
      for (const auto& rep : f.reports)
        if (rep.kind == FitKind::kGibbs && std::isfinite(rep.mu_over_T)) ratio.push_back(rep.mu_over_T);
    int changes = 0;
    for (std::size_t i = 1; i < ratio.size(); ++i) changes += (ratio[i] > 0.0) != (ratio[i - 1] > 0.0);
    const bool ok = saturates && interior && changes == 1 && ratio.size() == fit_sites.size();
    std::string signs;
    for (double x : ratio) signs += x > 0.0 ? '+' : '-';
    report("(b)", ok,
           "dphi1 > " + fmt(kDecoherenceMin) + " from site " + std::to_string(first + 1) + ", max dn at site " +
               std::to_string(arg + 1) + ", mu/T signs at sites 5..100 step 5: " + signs + " (" +
               std::to_string(changes) + " change" + (changes == 1 ? "" : "s") + ")");
  }
  {  // (c) quasilinear
    json j = {{"model", chain_n2(100, 1.5)},
              {"integration",
               {{"t_transient", 300}, {"t_window", 200}, {"sample_spacing", 2}, {"n_traj", 50}, {"master_seed", 13}}},
              {"steady", {{"t_block", 50}}}};
    const PointResult r = run_and_store(j, ctx, "regime_c_L100_zeta1.5");
    double mx = -1e300;
    for (const auto& s : r.sites) mx = std::max(mx, s.n.value);
    report("(c)", mx < kQuasilinearMaxN, "max n = " + fmt(mx, 3));
  }
  {  // (d) thermal vacuum
    json j = {{"model", chain_n2(60, 20.0)},
              {"integration",
               {{"t_transient", 500}, {"t_window", 500}, {"sample_spacing", 5}, {"n_traj", 100}, {"master_seed", 14}}},
              {"steady", {{"t_block", 100}}},
              {"observables", {{"fit_sites", {30}}, {"wigner_bins", 81}}}};
    const PointResult r = run_and_store(j, ctx, "regime_d_L60_zeta20");
    const double n_mid = r.sites[29].n.value;
    const double good = r.fits.at(0).equipartition ? r.fits[0].equipartition->goodness
                                                   : std::numeric_limits<double>::quiet_NaN();
    report("(d)", n_mid < kThermalMaxN && good < kThermalMaxGoodness,
           "n_L/2 = " + fmt(n_mid, 3) + ", Maxwell-Boltzmann goodness " + fmt(good, 3));
  }
  Outcome o;
  o.pass = all;
  for (const auto& p : parts) o.detail += (o.detail.empty() ? "" : "; ") + p;
  return o;
}

// ---- 5: three-photon resonant nonlinear wave ------------------------------
Outcome three_photon(const Context& ctx) {
  json model = {{"L", 20}, {"n", 3}, {"delta", 7.0}, {"U", 0.1}, {"J", 4.0}, {"zeta", 1.4}, {"gamma", 1.0}};
  json j = {{"model", model},
            {"initial", {{"kind", "ring"}}},
            {"integration",
             {{"t_transient", 500}, {"t_window", 500}, {"sample_spacing", 5}, {"n_traj", 1000}, {"master_seed", 15}}},
            {"steady", {{"t_block", 100}}}};
  const PointResult q = run_and_store(j, ctx, "n3_twa");
  j["dynamics"] = "gp";
  j["integration"]["n_traj"] = 20;
  j["integration"]["sample_spacing"] = 1;
  const PointResult g = run_and_store(j, ctx, "n3_gp");
  double max3 = 0.0, min12 = 2.0, gp1 = 0.0;
  for (int l = 0; l < 20; ++l) {
    if (l < kRingSites) max3 = std::max(max3, q.sites[l].circular_variance[2].value);
    min12 = std::min({min12, q.sites[l].circular_variance[0].value, q.sites[l].circular_variance[1].value});
    gp1 = std::max(gp1, g.sites[l].circular_variance[0].value);
  }
  Outcome o;
  o.pass = max3 < kRingPhaseMax && min12 > kRingDecoheredMin && gp1 < kClassicalPhaseMax;
  o.detail = "TWA max dphi3 (l<=5) = " + fmt(max3, 3) + ", min dphi1,2 = " + fmt(min12, 3) +
             ", GP max dphi1 = " + fmt(gp1, 3);
  return o;
}

// ---- 6: property suites -----------------------------------------------------
Outcome properties(const Context&) {
  const std::vector<std::pair<const char*, const char*>> suites{
      {"test_observables", "PhotonNumber.CoherentCloud:PhotonNumber.ThermalCloud:Circular.VarianceBounds"},
      {"test_engine",
       "Stepper.ClosedGpConservation:Stepper.LinearChainMatchesMatrixExponential:Ensemble.DeterministicAcrossThreads:"
       "Ensemble.SplitAdvanceIsBitIdentical"},
      {"test_otoc", "ComputeOtoc.ZeroEpsilonVanishes:ComputeOtoc.InitialRowAndBounds"},
      {"test_thermofit",
       "FitGibbs.NoiselessRoundTrip:FitGibbs.SampledRoundTrip:FitImpurity.RoundTrip:Impurity.ThermalDetailedBalance"},
      {"test_harness", "Sweep.ResumeIsBitIdenticalToUninterruptedRun"}};
  Outcome o;
  o.pass = true;
  for (const auto& [bin, filter] : suites) {
    const std::string cmd = std::string(TWACHAIN_TEST_DIR) + "/" + bin + " --gtest_brief=1 --gtest_filter=" + filter +
                            " > /dev/null 2>&1";
    const bool ok = std::system(cmd.c_str()) == 0;
    o.pass &= ok;
    o.detail += std::string(o.detail.empty() ? "" : ", ") + bin + (ok ? " ok" : " FAIL");
  }
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  Context ctx;
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--out" && i + 1 < argc) ctx.out = argv[++i];
    else if (a == "--threads" && i + 1 < argc) ctx.threads = std::atoi(argv[++i]);
    else selected.push_back(std::atoi(a.c_str()));
  }
  const std::map<int, std::pair<std::string, std::function<Outcome(const Context&)>>> criteria{
      {1, {"oracle agreement (L=2, U=0.5)", oracle_agreement}},
      {2, {"butterfly velocity (L=60, zeta=10)", butterfly}},
      {3, {"Lyapunov rate (L=60, zeta=10)", lyapunov}},
      {4, {"regime fingerprints", regimes}},
      {5, {"three-photon resonant wave (L=20)", three_photon}},
      {6, {"property suites", properties}}};
  if (selected.empty())
    for (const auto& [k, v] : criteria) selected.push_back(k);
  int failed = 0;
  for (int k : selected) {
    const auto it = criteria.find(k);
    if (it == criteria.end()) {
      std::cerr << "unknown criterion " << k << '\n';
      return 2;
    }
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = it->second.second(ctx);
    } catch (const Error& e) {
      o.detail = "error " + e.code() + ": " + e.what() + (e.context().empty() ? "" : " [" + e.context() + "]");
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << k << ": " << it->second.first << " -- " << o.detail
              << " (" << fmt(secs, 3) << " s)" << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
