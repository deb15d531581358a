#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

#include "twachain/harness.hpp"

using namespace twachain;
namespace fs = std::filesystem;

namespace {

struct Options {
  std::string command;
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  bool resume = false;
  bool verbose = false;
  std::string input;
};

json error_json(const std::string& stage, const std::string& code, const std::string& message,
                const std::string& context) {
  return {{"stage", stage}, {"code", code}, {"message", message}, {"context", context}};
}

json load_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("config", "ConfigParse", "cannot open config file", path);
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw Error("config", "ConfigParse", e.what(), path);
  }
}

RunConfig prepare(const json& j, const Options& o) {
  json body = j;
  body.erase("sweep");
  RunConfig c = config_from_json(body);
  if (o.seed) c.controls.master_seed = *o.seed;
  if (o.threads) c.threads = *o.threads;
  validate_run(c);
  return c;
}

std::vector<int> edge_and_middle(int L) { return detail::monitor_sites(L); }

void print_summary(const json& s) { std::cout << s.dump() << std::endl; }

int run_single(RunConfig c, const Options& o, const ProgressFn& log) {
  c.dynamics = o.command == "gp" ? Dynamics::kGrossPitaevskii : Dynamics::kTruncatedWigner;
  if (o.command == "otoc") c.otoc.enabled = true;
  if (o.command == "wigner" && c.observables.wigner_sites.empty())
    c.observables.wigner_sites = edge_and_middle(c.params.sites);
  if (o.command == "fit-thermo" && c.observables.fit_sites.empty())
    c.observables.fit_sites = {std::max(0, c.params.sites / 2 - 1)};
  validate_run(c);
  const PointResult r = run_point(c, log);
  write_point(r, o.out);
  json s = point_summary(r);
  s["command"] = o.command;
  s["out"] = o.out;
  s.erase("warnings");
  print_summary(s);
  return 0;
}

int run_fit_file(const RunConfig& c, const Options& o) {
  const WignerHistogram h = read_wigner_csv(o.input);
  PointResult r;
  r.config = c;
  SiteFits f;
  auto attempt = [&](const char* name, const std::function<FitReport()>& fit) {
    try {
      f.reports.push_back(fit());
    } catch (const Error& e) {
      f.errors.push_back(std::string(name) + ":" + e.code());
    }
  };
  attempt("gibbs", [&] { return fit_gibbs(h, c.params.kerr); });
  attempt("one_param", [&] { return fit_one_param(h); });
  if (c.observables.impurity_fit) attempt("impurity", [&] { return fit_impurity(h); });
  r.fits.push_back(std::move(f));
  fs::create_directories(o.out);
  write_text(fs::path(o.out) / "fits.csv", fits_csv(r));
  json s = {{"command", o.command}, {"input", o.input}, {"out", o.out}};
  for (const auto& rep : r.fits[0].reports)
    s[to_string(rep.kind)] = {{"T", jnum(rep.T)}, {"mu_over_T", jnum(rep.mu_over_T)}, {"l2_residual", jnum(rep.l2_residual)}};
  print_summary(s);
  return 0;
}

int run_oracle(const RunConfig& c, const Options& o, const ProgressFn& log) {
  const auto& q = c.oracle;
  const auto t = checkpoint_grid(q.t_max, q.checkpoints);
  FockConfig fc;
  fc.cutoff = q.cutoff;
  fc.leakage_tolerance = q.leakage_tolerance;
  McwfOptions mo;
  mo.dt = q.dt;
  mo.threads = c.threads;
  if (log) log("cutoff convergence from d=" + std::to_string(q.cutoff));
  const CutoffChoice cut = converge_cutoff(c.params, fc, q.max_cutoff, q.convergence_traj, t,
                                           c.controls.master_seed, mo, q.convergence);
  fc.cutoff = cut.cutoff;
  if (log) log("quantum trajectories at d=" + std::to_string(fc.cutoff));
  const OracleSeries s = evolve_mcwf(c.params, fc, q.n_traj, t, c.controls.master_seed, mo);
  fs::create_directories(o.out);
  write_text(fs::path(o.out) / "config.json", config_to_json(c).dump(2) + "\n");
  write_text(fs::path(o.out) / "oracle.csv", series_csv(s));
  const int l = c.params.sites - 1;
  json sum = {{"command", o.command}, {"out", o.out}, {"cutoff", cut.cutoff}, {"relative_change", cut.relative_change},
              {"max_leakage", s.max_leakage}, {"n_traj", s.n_traj}, {"n_L_final", s.n[l].back()},
              {"dn_L_final", s.dn[l].back()}};
  write_text(fs::path(o.out) / "summary.json", sum.dump(2) + "\n");
  print_summary(sum);
  return 0;
}

int run_compare(const RunConfig& c, const Options& o, const ProgressFn& log) {
  const OracleComparison r = compare_oracle(c, log);
  fs::create_directories(o.out);
  write_text(fs::path(o.out) / "config.json", config_to_json(c).dump(2) + "\n");
  write_text(fs::path(o.out) / "comparison.csv", comparison_csv(r));
  write_text(fs::path(o.out) / "twa.csv", series_csv(r.twa));
  write_text(fs::path(o.out) / "oracle.csv", series_csv(r.exact));
  json sum = {{"command", o.command},
              {"out", o.out},
              {"cutoff", r.cutoff.cutoff},
              {"max_leakage", r.exact.max_leakage},
              {"checkpoints", r.n.t.size()},
              {"n_L_agree", r.n.agree},
              {"dn_L_agree", r.dn.agree}};
  write_text(fs::path(o.out) / "summary.json", sum.dump(2) + "\n");
  print_summary(sum);
  return 0;
}

int run_sweep_command(const json& j, const Options& o, const ProgressFn& log) {
  json body = j;
  if (o.seed) body["integration"]["master_seed"] = *o.seed;
  const SweepSpec spec = sweep_from_json(body);
  SweepOptions opt;
  opt.resume = o.resume;
  opt.threads = o.threads.value_or(0);
  const SweepResult r = run_sweep(spec, o.out, opt, log);
  print_summary({{"command", o.command},
                 {"out", o.out},
                 {"completed", r.completed},
                 {"failed", r.failed},
                 {"skipped", r.skipped}});
  return r.failed > 0 ? 1 : 0;
}

int dispatch(const Options& o) {
  const ProgressFn log = o.verbose ? ProgressFn([](const std::string& m) { std::cerr << "[twachain] " << m << '\n'; })
                                   : ProgressFn{};
  const json j = load_json(o.config);
  if (o.command == "sweep") return run_sweep_command(j, o, log);
  const RunConfig c = prepare(j, o);
  if (o.command == "oracle") return run_oracle(c, o, log);
  if (o.command == "compare-oracle") return run_compare(c, o, log);
  if (o.command == "fit-thermo" && !o.input.empty()) return run_fit_file(c, o);
  return run_single(c, o, log);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Truncated Wigner simulations of boundary-driven dissipative bosonic chains"};
  app.require_subcommand(1);
  Options o;
  const std::vector<std::pair<const char*, const char*>> commands{
      {"simulate", "TWA steady-state run of one point"},
      {"gp", "classical Gross-Pitaevskii run of one point"},
      {"sweep", "(L, zeta) sweep from the config's sweep section"},
      {"otoc", "steady-state run followed by the two-replica OTOC"},
      {"wigner", "steady-state run writing Wigner histograms"},
      {"fit-thermo", "thermodynamic fits of local Wigner histograms"},
      {"oracle", "quantum-trajectory reference dynamics for L <= 2"},
      {"compare-oracle", "TWA vs quantum-trajectory time series"}};
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", o.config, "configuration JSON")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--seed", o.seed, "master seed override");
    sub->add_option("--threads", o.threads, "thread cap")->check(CLI::PositiveNumber);
    sub->add_flag("-v,--verbose", o.verbose, "progress on stderr");
    if (std::string(name) == "sweep") sub->add_flag("--resume", o.resume, "skip points already completed");
    if (std::string(name) == "fit-thermo")
      sub->add_option("--input", o.input, "Wigner histogram CSV to fit instead of simulating")
          ->check(CLI::ExistingFile);
    sub->callback([&o, name = std::string(name)] { o.command = name; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cout << error_json("cli", "Usage", e.what(), "").dump() << std::endl;
    return 2;
  }
  try {
    return dispatch(o);
  } catch (const ValidationError& e) {
    std::string ctx;
    for (const auto& v : e.violations()) ctx += (ctx.empty() ? "" : ",") + v.field + ":" + v.code;
    std::cout << error_json(e.stage(), "Validation", e.what(), ctx).dump() << std::endl;
    return 2;
  } catch (const Error& e) {
    std::cout << error_json(e.stage(), e.code(), e.what(), e.context()).dump() << std::endl;
    return e.code() == "ConfigParse" || e.code() == "Validation" ? 2 : 1;
  } catch (const std::exception& e) {
    std::cout << error_json("runtime", "Runtime", e.what(), "").dump() << std::endl;
    return 1;
  }
}
