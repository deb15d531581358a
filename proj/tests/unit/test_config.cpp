#include <gtest/gtest.h>

#include "twachain/harness.hpp"

using namespace twachain;

namespace {

json sample() {
  return json::parse(R"({
    "model": {"L": 4, "n": 2, "delta": 5.6, "U": 0.5, "J": 2.2, "zeta": 3.5, "gamma": 1.0},
    "integration": {"dt": 0.005, "t_transient": 20, "t_window": 10, "sample_spacing": 1,
                    "n_traj": 8, "master_seed": 42},
    "observables": {"m_max": 3, "wigner_sites": [1, 4], "fit_sites": [2]},
    "otoc": {"enabled": true, "perturb_site": 1, "band": [0.001, 0.1]},
    "threads": 2
  })");
}

}  // namespace

TEST(Config, ParsesAndConvertsSitesToZeroBased) {
  const RunConfig c = config_from_json(sample());
  EXPECT_EQ(c.params.sites, 4);
  EXPECT_DOUBLE_EQ(c.params.detuning, 5.6);
  EXPECT_DOUBLE_EQ(c.params.hopping, 2.2);
  EXPECT_EQ(c.controls.master_seed, 42u);
  EXPECT_EQ(c.observables.wigner_sites, (std::vector<int>{0, 3}));
  EXPECT_EQ(c.observables.fit_sites, (std::vector<int>{1}));
  EXPECT_EQ(c.otoc.perturb_site, 0);
  EXPECT_EQ(c.initial.kind, InitialKind::kVacuum);
  EXPECT_EQ(c.threads, 2);
}

TEST(Config, ResolvedRoundTripIsExact) {
  const RunConfig a = config_from_json(sample());
  const json ja = config_to_json(a);
  const RunConfig b = config_from_json(ja);
  EXPECT_EQ(config_to_json(b), ja);
  EXPECT_EQ(config_hash(a), config_hash(b));
  // defaults are expanded
  EXPECT_TRUE(ja["steady"].contains("t_block"));
  EXPECT_TRUE(ja["oracle"].contains("max_cutoff"));
}

TEST(Config, HashIgnoresThreadsButNotPhysics) {
  RunConfig a = config_from_json(sample());
  RunConfig b = a;
  b.threads = 7;
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.params.drive = 3.5000000001;
  EXPECT_NE(config_hash(a), config_hash(b));
  b = a;
  b.controls.master_seed = 43;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(Config, RingStateIsDefaultForHigherOrderDrive) {
  json j = sample();
  j["model"]["n"] = 3;
  EXPECT_EQ(config_from_json(j).initial.kind, InitialKind::kRingState);
  j["initial"] = {{"kind", "vacuum"}};
  EXPECT_EQ(config_from_json(j).initial.kind, InitialKind::kVacuum);
}

TEST(Config, UnknownKeysAndBadTypesAreParseErrors) {
  json j = sample();
  j["model"]["zetta"] = 1.0;
  try {
    config_from_json(j);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "ConfigParse");
    EXPECT_EQ(e.context(), "model.zetta");
  }
  j = sample();
  j["integration"]["n_traj"] = "many";
  EXPECT_THROW(config_from_json(j), Error);
  j = sample();
  j["dynamics"] = "quantum";
  EXPECT_THROW(config_from_json(j), Error);
}

TEST(Config, ValidationReportsEveryViolation) {
  json j = sample();
  j["model"]["gamma"] = 0.0;
  j["observables"]["wigner_sites"] = {9};
  j["otoc"]["perturb_site"] = 0;
  try {
    validate_run(config_from_json(j));
    FAIL();
  } catch (const ValidationError& e) {
    std::set<std::string> fields;
    for (const auto& v : e.violations()) fields.insert(v.field);
    EXPECT_TRUE(fields.count("gamma"));
    EXPECT_TRUE(fields.count("observables.wigner_sites"));
    EXPECT_TRUE(fields.count("otoc.perturb_site"));
  }
}

TEST(Config, LoadFromFile) {
  const auto path = std::filesystem::temp_directory_path() / "twachain_config_test.json";
  write_text(path, sample().dump());
  EXPECT_EQ(config_hash(load_config(path.string())), config_hash(config_from_json(sample())));
  write_text(path, "{ not json");
  EXPECT_THROW(load_config(path.string()), Error);
  std::filesystem::remove(path);
  EXPECT_THROW(load_config(path.string()), Error);
}
