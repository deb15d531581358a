#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <numbers>

#include "twachain/model.hpp"

using namespace twachain;

namespace {
ChainParams chain(int L, int n, double delta, double U, double J, double zeta) {
  ChainParams p;
  p.sites = L, p.photon_order = n, p.detuning = delta, p.kerr = U, p.hopping = J, p.drive = zeta;
  return p;
}

bool has(const std::vector<Violation>& v, const std::string& code, const std::string& field) {
  for (const auto& x : v)
    if (x.code == code && x.field == field) return true;
  return false;
}
}  // namespace

TEST(Validate, LongTwoPhotonChain) {
  EXPECT_NO_THROW(validate(chain(400, 2, 5.6, 0.1, 2.2, 6), {}, {}));
}

TEST(Validate, ThreePhotonChain) {
  const auto cfg = validate(chain(20, 3, 7, 0.1, 4, 1.4), {}, {});
  EXPECT_EQ(cfg.params().photon_order, 3);
  EXPECT_EQ(cfg.params().loss, 1.0);
}

TEST(Validate, Defaults) {
  const ChainParams p;
  EXPECT_EQ(p.loss, 1.0);
  EXPECT_EQ(p.kerr, 0.1);
}

TEST(Validate, EmptyChain) {
  try {
    validate(chain(0, 2, 5.6, 0.1, 2.2, 6), {}, {});
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_TRUE(has(e.violations(), "NonPositive", "L"));
    EXPECT_EQ(e.code(), "NonPositive");
  }
}

TEST(Validate, CollectsAllViolations) {
  ChainParams p = chain(3, 2, 0, 0.1, 1, -1);
  p.loss = 0;
  IntegrationControls c;
  c.dt = 0;
  InitialCondition ic;
  ic.kind = InitialKind::kExplicit;
  ic.explicit_fields = {1.0, 2.0};
  const auto v = check(p, ic, c);
  EXPECT_TRUE(has(v, "NonPositive", "gamma"));
  EXPECT_TRUE(has(v, "NonPositive", "dt"));
  EXPECT_TRUE(has(v, "NegativeAmplitude", "zeta"));
  EXPECT_TRUE(has(v, "ExplicitFieldsLengthMismatch", "explicit_fields"));
}

TEST(Sampling, VacuumMoments) {
  const int N = 100000;
  InitialCondition ic;
  CounterStream s(42, 0, StreamTag::kInitial);
  std::vector<cplx> a(1);
  double n = 0, n2 = 0, re = 0, im = 0;
  for (int i = 0; i < N; ++i) {
    sample_initial(ic, s, a);
    const double x = std::norm(a[0]);
    n += x, n2 += x * x, re += a[0].real(), im += a[0].imag();
  }
  const double mean = n / N;
  const double se = std::sqrt((n2 / N - mean * mean) / N);
  EXPECT_NEAR(mean, 0.5, 3 * se);
  const double se_q = std::sqrt(0.25 / N);
  EXPECT_NEAR(re / N, 0.0, 3 * se_q);
  EXPECT_NEAR(im / N, 0.0, 3 * se_q);
}

TEST(Sampling, RingOctantsUniform) {
  const int N = 100000;
  InitialCondition ic;
  ic.kind = InitialKind::kRingState;
  ic.ring_radius = 10.0;
  // The ring phase is the first draw of each trajectory; replay it independently.
  CounterStream s(9, 0, StreamTag::kInitial);
  CounterStream replay(9, 0, StreamTag::kInitial);
  std::array<int, 8> oct{};
  std::vector<cplx> a(1);
  for (int i = 0; i < N; ++i) {
    sample_initial(ic, s, a);
    const double theta = replay.uniform_angle();
    replay.complex_gaussian(0.5);
    const double ring_re = 10.0 * std::cos(theta), ring_im = 10.0 * std::sin(theta);
    const double phi = std::atan2(ring_im, ring_re);
    const int k = std::min(7, static_cast<int>((phi + std::numbers::pi) / (std::numbers::pi / 4)));
    ++oct[k];
    ASSERT_LT(std::abs(a[0] - cplx(ring_re, ring_im)), 6.0);
  }
  for (int k : oct) EXPECT_NEAR(static_cast<double>(k) / N, 0.125, 0.01);
}

TEST(Sampling, RingRadiusAndNoise) {
  const int N = 50000;
  InitialCondition ic;
  ic.kind = InitialKind::kRingState;
  CounterStream s(10, 2, StreamTag::kInitial);
  std::vector<cplx> a(3);
  double m = 0;
  for (int i = 0; i < N; ++i) {
    sample_initial(ic, s, a);
    m += std::norm(a[1]);
  }
  // E|r e^{i theta} + xi|^2 = r^2 + 1/2, standard deviation r per draw
  EXPECT_NEAR(m / N, 100.5, 4.5 * 10.0 / std::sqrt(N));
}

TEST(Sampling, RingPhaseSharedAcrossSites) {
  InitialCondition ic;
  ic.kind = InitialKind::kRingState;
  ic.ring_radius = 50.0;
  CounterStream s(11, 0, StreamTag::kInitial);
  std::vector<cplx> a(6);
  for (int i = 0; i < 100; ++i) {
    sample_initial(ic, s, a);
    for (const cplx& x : a) EXPECT_LT(std::abs(x - a[0]), 8.0);
  }
}

TEST(Sampling, ExplicitCopied) {
  InitialCondition ic;
  ic.kind = InitialKind::kExplicit;
  ic.explicit_fields = {cplx(1, 2), cplx(3, 4)};
  CounterStream s(0, 0, StreamTag::kInitial);
  std::vector<cplx> a(2);
  sample_initial(ic, s, a);
  EXPECT_EQ(a, ic.explicit_fields);
}
