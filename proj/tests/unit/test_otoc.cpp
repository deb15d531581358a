#include <gtest/gtest.h>

#include <cmath>

#include "twachain/otoc.hpp"

using namespace twachain;

namespace {
OtocSeries synthetic(int L, std::vector<double> tau, double (*d)(int, double)) {
  OtocSeries s;
  s.sites = L;
  s.tau = std::move(tau);
  s.D.resize(static_cast<std::size_t>(L) * s.tau.size());
  s.std_error.assign(s.D.size(), 0.0);
  for (int l = 0; l < L; ++l)
    for (std::size_t j = 0; j < s.tau.size(); ++j) s.at(l, j) = d(l, s.tau[j]);
  return s;
}

ChainParams chaotic_chain(int L) {
  ChainParams p;
  p.sites = L, p.photon_order = 2, p.detuning = 5.6, p.hopping = 2.2, p.drive = 10.0;
  return p;
}

FieldEnsemble warmed(const ChainParams& p, const IntegrationControls& c, double t) {
  auto e = make_ensemble(validate(p, {}, c));
  advance(e, p, c, steps_for(t, c.dt), Dynamics::kTruncatedWigner);
  return e;
}
}  // namespace

TEST(Butterfly, StepCone) {
  const double v0 = 4.4;
  const int L = 20;
  // Grid containing every arrival time l / v0 exactly.
  std::vector<double> tau;
  for (int l = 0; l < L; ++l) tau.push_back(l / v0);
  tau.push_back(L / v0);
  auto s = synthetic(L, tau, [](int l, double t) { return t >= l / 4.4 ? 1.0 : 0.0; });
  const auto b = extract_butterfly_velocity(s);
  EXPECT_NEAR(b.velocity, v0, 1e-12);
  EXPECT_NEAR(b.fit.rms_residual, 0.0, 1e-12);
  EXPECT_EQ(b.sites.size(), 19u);
}

TEST(Butterfly, AllZeroNotReached) {
  auto s = synthetic(5, tau_grid(10, 0.5), [](int, double) { return 0.0; });
  try {
    extract_butterfly_velocity(s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "FrontNotReached");
    EXPECT_EQ(e.context(), "2,3,4,5");
  }
}

TEST(Lyapunov, SyntheticExponential) {
  auto s = synthetic(30, tau_grid(12, 0.02),
                     [](int l, double t) { return std::min(1.0, std::exp(3.0 * (t - l / 4.0))); });
  const auto f = extract_lyapunov(s, {5, 10, 15, 20});
  EXPECT_NEAR(f.rate, 3.0, 1e-9);
  EXPECT_NEAR(f.spread, 0.0, 1e-9);
}

TEST(Lyapunov, FlatSeriesInsufficient) {
  auto s = synthetic(4, tau_grid(10, 0.1), [](int, double) { return 1e-5; });
  try {
    extract_lyapunov(s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "InsufficientBandPoints");
  }
}

TEST(Saturation, TrailingFifth) {
  auto s = synthetic(1, tau_grid(9, 1), [](int, double t) { return t >= 8 ? 1.0 : 0.0; });
  EXPECT_DOUBLE_EQ(otoc_saturation(s, 0), 1.0);  // last 2 of 10 points
}

TEST(ComputeOtoc, ZeroEpsilonVanishes) {
  const auto p = chaotic_chain(8);
  IntegrationControls c;
  c.n_traj = 6;
  c.master_seed = 3;
  const auto e = warmed(p, c, 20);
  const auto s = compute_otoc(e, 0, 0.0, tau_grid(5, 0.5), p, c);
  for (double d : s.D) EXPECT_EQ(d, 0.0);
}

TEST(ComputeOtoc, InitialRowAndBounds) {
  const auto p = chaotic_chain(8);
  IntegrationControls c;
  c.n_traj = 6;
  c.master_seed = 4;
  const auto e = warmed(p, c, 20);
  OtocOptions opt;
  opt.n_starts = 2;
  opt.start_spacing = 3.0;
  const int k = 2;
  const auto s = compute_otoc(e, k, 1e-2, tau_grid(8, 0.5), p, c, opt);
  for (int l = 0; l < 8; ++l) {
    if (l == k)
      EXPECT_NEAR(s.at(l, 0), 1.0 - std::cos(1e-2), 1e-12);
    else
      EXPECT_EQ(s.at(l, 0), 0.0);
  }
  for (double d : s.D) {
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 2.0);
  }
  EXPECT_EQ(s.n_pairs, 6);
  EXPECT_EQ(s.n_starts, 2);
}

TEST(ComputeOtoc, ThreadIndependent) {
  const auto p = chaotic_chain(6);
  IntegrationControls c;
  c.n_traj = 5;
  const auto e = warmed(p, c, 10);
  OtocOptions one, four;
  four.threads = 4;
  const auto a = compute_otoc(e, 0, 1e-2, tau_grid(3, 0.5), p, c, one);
  const auto b = compute_otoc(e, 0, 1e-2, tau_grid(3, 0.5), p, c, four);
  EXPECT_EQ(a.D, b.D);
}

TEST(ComputeOtoc, Errors) {
  const auto p = chaotic_chain(4);
  IntegrationControls c;
  const auto e = warmed(p, c, 1);
  EXPECT_THROW(compute_otoc(e, 4, 1e-2, {0.0}, p, c), Error);
  OtocOptions opt;
  opt.steady = false;
  EXPECT_THROW(compute_otoc(e, 0, 1e-2, {0.0}, p, c, opt), Error);
  EXPECT_THROW(compute_otoc(e, 0, 1e-2, {1.0, 0.5}, p, c), Error);
}

TEST(ComputeOtoc, EpsilonScalingEarlyTau) {
  // Regular regime: D_kk at the first output time scales as epsilon^2.
  ChainParams p;
  p.sites = 4, p.photon_order = 2, p.detuning = 5.6, p.hopping = 2.2, p.drive = 1.5;
  IntegrationControls c;
  c.n_traj = 50;
  const auto e = warmed(p, c, 30);
  const auto big = compute_otoc(e, 0, 2e-2, {0.0, 0.05}, p, c);
  const auto small = compute_otoc(e, 0, 1e-2, {0.0, 0.05}, p, c);
  const double ratio = big.at(0, 1) / small.at(0, 1);
  EXPECT_NEAR(ratio, 4.0, 3 * 4.0 * (big.error_at(0, 1) / big.at(0, 1) + small.error_at(0, 1) / small.at(0, 1)) + 0.05);
}
