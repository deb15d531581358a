#include <gtest/gtest.h>

#include <random>

#include "twachain/harness.hpp"

using namespace twachain;
namespace fs = std::filesystem;

namespace {

TimeSeries sampled(double t_max, double h, const std::function<double(double)>& f) {
  TimeSeries s;
  s.values.resize(1);
  for (int i = 0; i * h < t_max - 1e-9; ++i) {
    s.t.push_back(i * h);
    s.values[0].push_back(f(i * h));
  }
  return s;
}

json small_point() {
  return json::parse(R"({
    "model": {"L": 4, "n": 2, "delta": 5.6, "U": 0.1, "J": 2.2, "zeta": 1.5, "gamma": 1.0},
    "integration": {"dt": 0.01, "t_transient": 20, "t_window": 10, "sample_spacing": 1,
                    "n_traj": 12, "master_seed": 7},
    "observables": {"wigner_sites": [1], "wigner_bins": 21},
    "steady": {"t_block": 5}
  })");
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  return d;
}

}  // namespace

TEST(DetectSteady, ConstantSeriesIsSteadyAtFirstBoundary) {
  const auto s = sampled(50.0, 0.5, [](double) { return 3.0; });
  EXPECT_DOUBLE_EQ(detect_steady(s, 10.0), 10.0);
}

TEST(DetectSteady, LinearRampNeverSettles) {
  const auto s = sampled(100.0, 0.1, [](double t) { return 0.2 * t; });
  try {
    detect_steady(s, 10.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "NotSteadyWithinBudget");
  }
}

TEST(DetectSteady, TooShortSeries) {
  const auto s = sampled(15.0, 0.1, [](double) { return 1.0; });
  EXPECT_THROW(detect_steady(s, 10.0), Error);
}

// Noisy exponential relaxation with time constant 5 and blocks of 10. The
// expected boundary follows from block integrals of the trend plus white
// noise: block b has mean A e^{-2b}, trend variance B e^{-4b} and sample
// variance of the mean (B e^{-4b} + sigma^2) / k.
TEST(DetectSteady, NoisyExponentialSettlesAfterAboutFiveTimeConstants) {
  const double tau = 5.0, tb = 10.0, h = 0.1, sigma = 0.1;
  const double k = tb / h;
  const double r = tb / tau;
  const double A = (tau / tb) * (1.0 - std::exp(-r));
  const double B = (tau / (2.0 * tb)) * (1.0 - std::exp(-2.0 * r)) - A * A;
  double expected = NAN;
  for (int b = 0; b < 9; ++b) {
    const double diff = A * (std::exp(-r * b) - std::exp(-r * (b + 1)));
    const double v0 = (B * std::exp(-2.0 * r * b) + sigma * sigma) / k;
    const double v1 = (B * std::exp(-2.0 * r * (b + 1)) + sigma * sigma) / k;
    if (diff <= 3.0 * std::sqrt(v0 + v1)) {
      expected = (b + 1) * tb;
      break;
    }
  }
  ASSERT_NEAR(expected, 5.0 * tau, tb);
  for (unsigned seed = 1; seed <= 20; ++seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> noise(0.0, sigma);
    const auto s = sampled(100.0, h, [&](double t) { return std::exp(-t / tau) + noise(gen); });
    EXPECT_LE(std::abs(detect_steady(s, tb) - expected), tb) << seed;
  }
}

TEST(DetectSteady, EveryChannelMustSettle) {
  auto s = sampled(60.0, 0.1, [](double) { return 1.0; });
  const auto ramp = sampled(60.0, 0.1, [](double t) { return t; });
  s.values.push_back(ramp.values[0]);
  EXPECT_THROW(detect_steady(s, 10.0), Error);
}

TEST(RunPoint, QuasilinearPointIsNearlyEmptyAndThreadIndependent) {
  RunConfig c = config_from_json(small_point());
  const PointResult a = run_point(c);
  c.threads = 3;
  const PointResult b = run_point(c);
  ASSERT_EQ(a.sites.size(), 4u);
  for (std::size_t l = 0; l < a.sites.size(); ++l) {
    EXPECT_LT(a.sites[l].n.value, 0.5) << l;
    EXPECT_EQ(a.sites[l].n.value, b.sites[l].n.value);
    EXPECT_EQ(a.sites[l].dn.value, b.sites[l].dn.value);
    EXPECT_EQ(a.sites[l].n.std_error, b.sites[l].n.std_error);
  }
  EXPECT_EQ(a.hash, b.hash);
  EXPECT_EQ(a.transient_sites, (std::vector<int>{0, 1, 3}));
  EXPECT_EQ(a.transient.t.size(), 21u);
  ASSERT_EQ(a.wigner.size(), 1u);
  EXPECT_EQ(a.wigner[0].second.total_samples(), 12 * 11);
}

TEST(RunPoint, WritesArtifactsAndResolvedConfigReproduces) {
  const RunConfig c = config_from_json(small_point());
  const PointResult r = run_point(c);
  const auto dir = fresh_dir("twachain_point_test");
  write_point(r, dir);
  for (const char* f : {"config.json", "sites.csv", "transient.csv", "wigner_site1.csv", "summary.json"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  EXPECT_FALSE(fs::exists(dir / "otoc.csv"));
  EXPECT_NE(slurp(dir / "sites.csv").find("T_eq[gamma]"), std::string::npos);
  EXPECT_NE(slurp(dir / "transient.csv").find("t[1/gamma]"), std::string::npos);

  const PointResult again = run_point(load_config((dir / "config.json").string()));
  EXPECT_EQ(sites_csv(again), sites_csv(r));

  const WignerHistogram w = read_wigner_csv((dir / "wigner_site1.csv").string());
  const auto d0 = r.wigner[0].second.density(), d1 = w.density();
  ASSERT_EQ(d0.size(), d1.size());
  for (std::size_t i = 0; i < d0.size(); ++i) EXPECT_NEAR(d0[i], d1[i], 1e-12 * (1.0 + d0[i]));
  fs::remove_all(dir);
}

TEST(RunPoint, GrossPitaevskiiRejectsOtoc) {
  json j = small_point();
  j["dynamics"] = "gp";
  j["otoc"] = {{"enabled", true}};
  EXPECT_THROW(run_point(config_from_json(j)), ValidationError);
}

TEST(RunPoint, NonFiniteTrajectoryFailsThePoint) {
  json j = small_point();
  j["initial"] = {{"kind", "explicit"}, {"explicit_fields", {{1e200, 0}, {0, 0}, {0, 0}, {0, 0}}}};
  try {
    run_point(config_from_json(j));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "NonFiniteField");
  }
}

namespace {

json small_sweep() {
  json j = small_point();
  j["integration"]["n_traj"] = 6;
  j["integration"]["t_transient"] = 10;
  j["observables"] = json::object();
  j["sweep"] = {{"L", {2, 3}}, {"zeta", {1.0, 2.0}}};
  return j;
}

}  // namespace

TEST(Sweep, EmptyAxesAreRejected) {
  json j = small_sweep();
  j["sweep"]["zeta"] = json::array();
  EXPECT_THROW(run_sweep(sweep_from_json(j), fresh_dir("twachain_sweep_empty")), Error);
  EXPECT_THROW(sweep_from_json(small_point()), Error);
}

TEST(Sweep, ResumeIsBitIdenticalToUninterruptedRun) {
  const SweepSpec spec = sweep_from_json(small_sweep());
  const auto full = fresh_dir("twachain_sweep_full");
  const auto part = fresh_dir("twachain_sweep_part");
  const SweepResult a = run_sweep(spec, full);
  EXPECT_EQ(a.completed, 4);

  SweepOptions interrupted;
  interrupted.max_new_points = 1;
  const SweepResult b1 = run_sweep(spec, part, interrupted);
  EXPECT_EQ(b1.completed, 1);
  EXPECT_EQ(b1.pending, 3);
  SweepOptions resume;
  resume.resume = true;
  resume.threads = 2;
  const SweepResult b2 = run_sweep(spec, part, resume);
  EXPECT_EQ(b2.skipped, 1);
  EXPECT_EQ(b2.completed, 3);
  EXPECT_EQ(b2.failed, 0);

  EXPECT_EQ(slurp(full / "sweep.csv"), slurp(part / "sweep.csv"));
  for (const auto& p : a.points) {
    EXPECT_EQ(slurp(full / p.dir / "sites.csv"), slurp(part / p.dir / "sites.csv")) << p.dir;
    json ca = json::parse(slurp(full / p.dir / "config.json")), cb = json::parse(slurp(part / p.dir / "config.json"));
    ca.erase("threads");
    cb.erase("threads");
    EXPECT_EQ(ca, cb) << p.dir;
  }
  const json m = json::parse(slurp(part / "manifest.json"));
  EXPECT_EQ(m["points"].size(), 4u);
  for (const auto& p : m["points"]) EXPECT_TRUE(p["status"] == "completed" || p["status"] == "skipped");
  fs::remove_all(full);
  fs::remove_all(part);
}

TEST(Sweep, FailedPointIsListedAndOthersComplete) {
  json j = small_sweep();
  j["sweep"]["L"] = {2};
  j["sweep"]["overrides"] = {
      {{"L", 2}, {"zeta", 2.0}, {"set", {{"initial", {{"kind", "explicit"}, {"explicit_fields", {{1e200, 0}, {0, 0}}}}}}}}};
  const auto out = fresh_dir("twachain_sweep_fail");
  const SweepResult r = run_sweep(sweep_from_json(j), out);
  EXPECT_EQ(r.completed, 1);
  EXPECT_EQ(r.failed, 1);
  const json m = json::parse(slurp(out / "manifest.json"));
  EXPECT_EQ(m["points"][1]["status"], "failed");
  EXPECT_EQ(m["points"][1]["error"]["code"], "NonFiniteField");
  const std::string table = slurp(out / "sweep.csv");
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 2);
  fs::remove_all(out);
}
