#pragma once

#include "dp2erm/bench.hpp"
#include "dp2erm/erm.hpp"
#include "dp2erm/io.hpp"
#include "dp2erm/privacy.hpp"
#include "dp2erm/stability.hpp"
#include "dp2erm/weights.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

namespace dp2erm::cli {

enum ExitCode { kOk = 0, kUsage = 1, kRuntime = 2 };

/// Configuration errors detected by the CLI itself (exit code 1).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = io::detail::trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline double parse_number(const std::string& s, const std::string& flag) {
  if (s == "inf" || s == "Inf" || s == "INF") return privacy::kInfinity;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
    throw UsageError(flag + ": '" + s + "' is not a number");
  return v;
}

inline std::vector<double> parse_numbers(const std::string& s, const std::string& flag) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) out.push_back(parse_number(item, flag));
  if (out.empty()) throw UsageError(flag + " needs at least one value");
  return out;
}

inline std::uint64_t parse_seed(const std::string& s, const std::string& source) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
    throw UsageError(source + ": '" + s + "' is not a non-negative integer seed");
  return v;
}

inline std::uint64_t entropy_seed() {
  std::random_device rd;
  return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

inline int default_workers() {
  const unsigned hw = std::thread::hardware_concurrency();
  return hw ? static_cast<int>(hw) : 1;
}

inline void write_file(const std::filesystem::path& path,
                       const std::function<void(std::ostream&)>& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  body(out);
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

/// Flags shared by simulate and run.
struct HarnessFlags {
  std::string plan_path;
  std::string out;
  std::string seed;
  int workers = 0;
  std::string eps;
  std::string delta;
  int reps = 0;
  std::string scheme;
  std::string mechanism;
  bool baseline = false;
  bool timing = false;
  bool no_tune = false;
  int bootstrap = 0;
  double lambda1 = 0.0;
  double lambda_ipw = 0.0;
  double lambda_mmd = 0.0;
  double lambda_ebw = 0.0;

  std::map<std::string, CLI::Option*> opts;

  void add_to(CLI::App& app) {
    opts["plan"] = app.add_option("--plan", plan_path, "key = value plan file");
    opts["out"] = app.add_option("--out", out, "output directory (default: out)");
    opts["seed"] = app.add_option("--seed", seed, "master seed (default: system entropy)");
    opts["workers"] = app.add_option("--workers", workers, "worker threads (default: cores)");
    opts["eps"] = app.add_option("--eps", eps, "comma-separated epsilons; inf = non-private");
    opts["delta"] = app.add_option("--delta", delta, "Gaussian delta (default 1/n)");
    opts["reps"] = app.add_option("--reps", reps, "replicates");
    opts["scheme"] = app.add_option("--scheme", scheme, "comma-separated subset of ipw,mmd,ebw");
    opts["mechanism"] =
        app.add_option("--mechanism", mechanism, "comma-separated subset of gamma,gaussian");
    opts["baseline"] = app.add_flag("--baseline", baseline, "add composition-baseline rows");
    opts["timing"] = app.add_flag("--timing", timing, "record per-cell wall time");
    opts["no_tune"] = app.add_flag("--no-tune", no_tune, "skip bootstrap tuning; use defaults");
    opts["bootstrap"] = app.add_option("--bootstrap", bootstrap, "bootstrap resamples B");
    opts["lambda1"] = app.add_option("--lambda1", lambda1, "L1 radius when not tuning");
    opts["lambda_ipw"] = app.add_option("--lambda-ipw", lambda_ipw, "IPW ridge when not tuning");
    opts["lambda_mmd"] = app.add_option("--lambda-mmd", lambda_mmd, "MMD ridge when not tuning");
    opts["lambda_ebw"] = app.add_option("--lambda-ebw", lambda_ebw, "EBW ridge when not tuning");
  }

  bool given(const std::string& name) const { return opts.at(name)->count() > 0; }

  /// Applies plan file, then environment, then flags. Returns the output
  /// directory.
  std::string apply(bench::ExperimentPlan& plan, std::ostream& err) const {
    std::optional<std::string> out_dir;
    if (given("plan")) {
      std::ifstream in(plan_path);
      if (!in) throw UsageError("cannot open plan file '" + plan_path + "'");
      out_dir = bench::apply_plan_text(plan, in);
    }
    std::optional<std::uint64_t> seed_value;
    if (const char* env = std::getenv("DP2ERM_SEED")) seed_value = parse_seed(env, "DP2ERM_SEED");
    if (const char* env = std::getenv("DP2ERM_OUT")) out_dir = std::string(env);
    if (given("seed")) seed_value = parse_seed(seed, "--seed");
    if (given("out")) out_dir = out;
    if (given("workers")) plan.workers = workers;
    if (given("eps")) plan.epsilons = parse_numbers(eps, "--eps");
    if (given("delta")) {
      if (delta == "1/n") plan.delta.reset();
      else plan.delta = parse_number(delta, "--delta");
    }
    if (given("reps")) plan.replicates = reps;
    if (given("scheme")) {
      plan.schemes.clear();
      for (const auto& s : split_list(scheme)) plan.schemes.push_back(bench::parse_scheme(s));
    }
    if (given("mechanism")) {
      plan.mechanisms.clear();
      for (const auto& m : split_list(mechanism))
        plan.mechanisms.push_back(privacy::parse_mechanism(m));
    }
    if (given("baseline")) plan.baseline = baseline;
    if (given("timing")) plan.timing = timing;
    if (given("no_tune")) plan.tuning.enabled = !no_tune;
    if (given("bootstrap")) plan.tuning.bootstrap = bootstrap;
    if (given("lambda1")) plan.defaults.lambda1 = lambda1;
    if (given("lambda_ipw")) plan.defaults.lambda_ipw = lambda_ipw;
    if (given("lambda_mmd")) plan.defaults.lambda_mmd = lambda_mmd;
    if (given("lambda_ebw")) plan.defaults.lambda_ebw = lambda_ebw;

    // A seed in the plan file counts only if nothing above set one.
    if (seed_value) {
      plan.seed = *seed_value;
    } else if (!plan_seeded) {
      plan.seed = entropy_seed();
      err << "seed: " << plan.seed << '\n';
    }
    return out_dir.value_or("out");
  }

  bool plan_seeded = false;
};

inline bool plan_file_sets_seed(const std::string& path) {
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    const std::string t = io::detail::trim(line);
    if (t.rfind("seed", 0) == 0 && t.find('=') != std::string::npos) return true;
  }
  return false;
}

/// Runs the harness and writes results.csv, summary.csv, one plot file per
/// (scheme, mechanism) and metadata.txt into `dir`.
inline int run_and_write(const bench::ExperimentPlan& plan, const std::string& dir,
                         std::ostream& out, std::ostream& err) {
  plan.check();
  const bench::PreparedSource src = bench::prepare_source(plan);
  const auto rows = bench::run_plan(plan, src);
  const auto md = bench::plan_metadata(plan, src);
  const auto summary = bench::summarize(rows);

  std::filesystem::create_directories(dir);
  const std::filesystem::path root(dir);
  write_file(root / "results.csv", [&](std::ostream& o) {
    bench::write_metadata(o, md);
    bench::write_results_csv(o, rows);
  });
  write_file(root / "summary.csv", [&](std::ostream& o) {
    bench::write_metadata(o, md);
    bench::write_summary_csv(o, summary);
  });
  std::vector<std::pair<std::string, std::string>> series;
  for (const auto& s : summary) {
    const std::pair<std::string, std::string> key{s.scheme, s.mechanism};
    if (std::find(series.begin(), series.end(), key) == series.end()) series.push_back(key);
  }
  for (const auto& [scheme, mech] : series)
    write_file(root / ("plot_" + scheme + "_" + mech + ".dat"), [&](std::ostream& o) {
      bench::write_metadata(o, md);
      bench::write_plot_data(o, summary, scheme, mech);
    });
  write_file(root / "metadata.txt", [&](std::ostream& o) { bench::write_metadata(o, md); });

  std::size_t failed = 0;
  for (const auto& r : rows) failed += r.status != "ok";
  out << "wrote " << rows.size() << " rows to " << (root / "results.csv").string() << '\n';
  if (failed) err << "warning: " << failed << " cell(s) failed; see the status column\n";
  return failed == rows.size() ? kRuntime : kOk;
}

}  // namespace detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out,
                   std::ostream& err) {
  CLI::App app{"Differentially private two-stage ERM for treatment rules", "dp2erm"};
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", bench::kVersion);

  // simulate
  auto* simulate = app.add_subcommand("simulate", "run the simulation study");
  detail::HarnessFlags sim_flags;
  sim_flags.add_to(*simulate);
  std::string scenario_name;
  Index sim_n = 0, sim_n_test = 0, sim_p = 0;
  bool tree_variant = false;
  auto* scenario_opt = simulate->add_option("--scenario", scenario_name,
                                            "linear, tree or nonlinear");
  auto* n_opt = simulate->add_option("--n", sim_n, "training size (default 400)");
  auto* ntest_opt = simulate->add_option("--n-test", sim_n_test, "test size (default 10000)");
  auto* p_opt = simulate->add_option("--p", sim_p, "covariate dimension (default 10)");
  auto* tree_opt = simulate->add_flag("--tree-variant", tree_variant,
                                      "tree scenario: use X1 < -0.5 in place of 2 X1 < -0.5");

  // run
  auto* run = app.add_subcommand("run", "run the harness on a CSV dataset");
  detail::HarnessFlags run_flags;
  run_flags.add_to(*run);
  std::string run_data;
  double train_fraction = 0.10;
  double run_m_out = 0.0;
  run->add_option("--data", run_data, "dataset CSV (x1..xp,a,y[,f_opt][,pi])")->required();
  auto* tf_opt = run->add_option("--train-fraction", train_fraction, "training share (default 0.1)");
  auto* mout_opt = run->add_option("--m-out", run_m_out, "outcome bound (default max |y|)");

  // weights
  auto* wcmd = app.add_subcommand("weights", "solve Stage-1 weights for a CSV dataset");
  std::string w_data, w_scheme = "ebw", w_out, w_moments = "first", w_norm = "l2";
  double w_lambda_ipw = 0.0, w_lambda_mmd = 1.0, w_lambda_ebw = 0.0, w_R = 1.0,
         w_alpha = 0.5;
  std::optional<double> w_cap, w_bandwidth;
  wcmd->add_option("--data", w_data, "dataset CSV")->required();
  wcmd->add_option("--scheme", w_scheme, "ipw, ipw-randomized, mmd or ebw (default ebw)");
  wcmd->add_option("--out", w_out, "weights CSV path (default: stdout)");
  wcmd->add_option("--lambda-ipw", w_lambda_ipw, "IPW ridge (default 0)");
  wcmd->add_option("--lambda-mmd", w_lambda_mmd, "MMD ridge, > 0 (default 1)");
  wcmd->add_option("--lambda-ebw", w_lambda_ebw, "EBW ridge (default 0)");
  wcmd->add_option("--R", w_R, "IPW / EBW parameter radius (default 1)");
  wcmd->add_option("--alpha", w_alpha, "MMD alpha (default 0.5)");
  wcmd->add_option("--cap", w_cap, "MMD weight cap (default 10 n / n_min)");
  wcmd->add_option("--bandwidth", w_bandwidth, "MMD RBF bandwidth (default median distance)");
  wcmd->add_option("--moments", w_moments, "EBW moments: first or first_and_squares");
  wcmd->add_option("--norm", w_norm, "EBW dual ball: l2 or linf");

  // calibrate
  auto* cal = app.add_subcommand("calibrate", "print the noise calibration");
  std::string c_mech = "gamma", c_eps = "1", c_delta;
  double c_zeta = 0.0, c_lam_tr = 0.0, c_M = 0.0, c_M_out = 0.0, c_lambda1 = 1.0;
  double c_w1 = 0.0, c_w2 = 0.0, c_w_max = 0.0;
  Index c_n = 1, c_p = 1;
  bool c_universal = false;
  cal->add_option("--mechanism", c_mech, "gamma or gaussian (default gamma)");
  cal->add_option("--eps", c_eps, "epsilon (default 1)");
  auto* c_delta_opt = cal->add_option("--delta", c_delta, "delta (gaussian; default 1/n)");
  auto* c_zeta_opt = cal->add_option("--zeta", c_zeta, "per-sample gradient bound");
  auto* c_lam_opt = cal->add_option("--lam-tr", c_lam_tr, "per-sample Hessian trace bound");
  auto* c_M_opt = cal->add_option("--M", c_M, "covariate bound (derives zeta, lam_tr)");
  cal->add_option("--M-out", c_M_out, "outcome bound (with --M)");
  cal->add_option("--lambda1", c_lambda1, "L1 radius (with --M; default 1)");
  auto* c_w1_opt = cal->add_option("--w1", c_w1, "W1 budget");
  auto* c_w2_opt = cal->add_option("--w2", c_w2, "W2 budget");
  auto* c_wmax_opt = cal->add_option("--w-max", c_w_max, "data-independent budget from w_max");
  cal->add_flag("--universal", c_universal, "worst-case budget 3n, sqrt(6)(n+1)^1.5");
  cal->add_option("--n", c_n, "sample size (default 1)");
  cal->add_option("--p", c_p, "dimension (default 1)");

  // summarize
  auto* sum = app.add_subcommand("summarize", "mean and SD per (scheme, mechanism, epsilon)");
  std::string s_results, s_out;
  sum->add_option("--results", s_results, "results CSV")->required();
  sum->add_option("--out", s_out, "summary CSV path (default: stdout)");

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e, out, err);
      return code == 0 ? kOk : kUsage;
    }

    if (simulate->parsed()) {
      bench::ExperimentPlan plan;
      sim_flags.plan_seeded =
          sim_flags.given("plan") && detail::plan_file_sets_seed(sim_flags.plan_path);
      plan.workers = detail::default_workers();
      const std::string dir = sim_flags.apply(plan, err);
      if (!plan.scenario) plan.scenario = simgen::ScenarioSpec{};
      plan.csv_path.reset();
      if (scenario_opt->count()) plan.scenario->id = simgen::parse_scenario(scenario_name);
      if (n_opt->count()) plan.scenario->n = sim_n;
      if (ntest_opt->count()) plan.scenario->n_test = sim_n_test;
      if (p_opt->count()) plan.scenario->p = sim_p;
      if (tree_opt->count()) plan.scenario->tree_literal = !tree_variant;
      return detail::run_and_write(plan, dir, out, err);
    }

    if (run->parsed()) {
      bench::ExperimentPlan plan;
      run_flags.plan_seeded =
          run_flags.given("plan") && detail::plan_file_sets_seed(run_flags.plan_path);
      plan.workers = detail::default_workers();
      const std::string dir = run_flags.apply(plan, err);
      plan.scenario.reset();
      plan.csv_path = run_data;
      if (tf_opt->count()) plan.train_fraction = train_fraction;
      if (mout_opt->count()) plan.m_out = run_m_out;
      return detail::run_and_write(plan, dir, out, err);
    }

    if (wcmd->parsed()) {
      const io::LoadedData loaded = io::read_dataset_csv(w_data);
      const Dataset& data = loaded.data;
      weights::WeightSolution sol;
      std::vector<std::string> diag;
      if (w_scheme == "ipw") {
        weights::IpwEstimatedConfig c;
        c.R = w_R;
        c.lambda_ipw = w_lambda_ipw;
        sol = weights::ipw_estimated(data, c);
        std::string lam;
        for (Index j = 0; j < sol.lambda.size(); ++j)
          lam += (j ? " " : "") + io::format_double(sol.lambda[j]);
        diag.push_back("lambda_hat: " + lam);
      } else if (w_scheme == "ipw-randomized") {
        const double p1 = static_cast<double>(data.group_size(1)) / data.size();
        sol = weights::ipw_randomized(data, 1.0 - p1, p1);
        diag.push_back("p_treated: " + io::format_double(p1));
      } else if (w_scheme == "mmd") {
        if (!(w_lambda_mmd > 0.0))
          throw UsageError("--lambda-mmd must be > 0 (the MMD stability bound needs it)");
        weights::MmdConfig c;
        c.alpha = w_alpha;
        c.lambda_mmd = w_lambda_mmd;
        c.cap = w_cap;
        if (w_bandwidth) c.kernel = weights::KernelSpec{*w_bandwidth, 1.0};
        sol = weights::mmd_weights(data, c);
        diag.push_back("kkt_residual: " + io::format_double(sol.kkt_residual));
        diag.push_back("cap: " + io::format_double(sol.cap));
        diag.push_back("bandwidth: " + io::format_double(sol.bandwidth));
      } else if (w_scheme == "ebw") {
        weights::EbwConfig c;
        c.R = w_R;
        c.lambda_ebw = w_lambda_ebw;
        if (w_moments == "first") c.moments = weights::MomentSet::first;
        else if (w_moments == "first_and_squares")
          c.moments = weights::MomentSet::first_and_squares;
        else throw UsageError("--moments must be first or first_and_squares");
        if (w_norm == "l2") c.norm = weights::DualNorm::l2;
        else if (w_norm == "linf") c.norm = weights::DualNorm::linf;
        else throw UsageError("--norm must be l2 or linf");
        sol = weights::ebw_weights(data, c);
        diag.push_back("moments_matched: " + std::string(sol.moments_matched ? "true" : "false"));
        diag.push_back("max_moment_residual: " +
                       io::format_double(sol.moment_residuals.cwiseAbs().maxCoeff()));
        diag.push_back("moment_scale: " + io::format_double(sol.moment_scale));
      } else {
        throw UsageError("unknown scheme '" + w_scheme +
                         "' (valid: ipw, ipw-randomized, mmd, ebw)");
      }
      diag.push_back("iterations: " + std::to_string(sol.diagnostics.iterations));
      diag.push_back("exponent_clamps: " + std::to_string(sol.exponent_clamps));

      auto body = [&](std::ostream& o) {
        o << "# dp2erm_version: " << bench::kVersion << '\n';
        o << "# verb: weights\n# data: " << w_data << "\n# scheme: " << w_scheme << '\n';
        for (const auto& d : diag) o << "# " << d << '\n';
        o << "index,weight\n";
        for (Index i = 0; i < sol.weights.size(); ++i)
          o << i << ',' << io::format_double(sol.weights[i]) << '\n';
      };
      if (w_out.empty()) body(out);
      else {
        detail::write_file(w_out, body);
        for (const auto& d : diag) out << d << '\n';
      }
      return kOk;
    }

    if (cal->parsed()) {
      privacy::PrivacyParams pp;
      pp.mechanism = privacy::parse_mechanism(c_mech);
      pp.epsilon = detail::parse_number(c_eps, "--eps");
      if (c_delta_opt->count()) pp.delta = detail::parse_number(c_delta, "--delta");
      else if (pp.mechanism == privacy::Mechanism::gaussian)
        pp.delta = 1.0 / static_cast<double>(c_n);
      ProblemConstants constants;
      if (c_M_opt->count()) {
        constants = ProblemConstants::itr(c_M, c_M_out, c_lambda1);
      }
      if (c_zeta_opt->count()) constants.zeta = c_zeta;
      if (c_lam_opt->count()) constants.lam_tr = c_lam_tr;
      if (!c_M_opt->count() && !c_zeta_opt->count())
        throw UsageError("give --zeta or --M/--M-out/--lambda1");

      stability::StabilityBudget budget;
      if (c_universal) {
        budget = stability::budget_universal(c_n);
      } else if (c_wmax_opt->count()) {
        budget = stability::budget_data_independent(c_w_max);
      } else if (c_w1_opt->count()) {
        budget.w1_bar = c_w1;
        if (!c_w2_opt->count() && constants.lam_tr > 0.0)
          throw UsageError("--w2 is required when lam_tr > 0");
        budget.w2_bar = c_w2_opt->count() ? c_w2 : 0.0;
        budget.provenance = c_w2_opt->count() ? "user supplied" : "user supplied W1; W2 unset";
      } else {
        throw UsageError("give --universal, --w-max or --w1 [--w2]");
      }
      const auto c = privacy::calibrate(pp, constants, budget, c_n, c_p);
      out << "mechanism: " << privacy::to_string(c.mechanism) << '\n'
          << "epsilon: " << io::format_double(c.epsilon) << '\n'
          << "delta: " << io::format_double(c.delta) << '\n'
          << "zeta: " << io::format_double(c.zeta) << '\n'
          << "lam_tr: " << io::format_double(c.lam_tr) << '\n'
          << "n: " << c.n << "\np: " << c.p << '\n'
          << "noise_scale: " << io::format_double(c.noise_scale) << '\n'
          << "gamma_ridge: " << io::format_double(c.gamma_ridge) << '\n'
          << "w1_bar: " << io::format_double(c.w1_bar) << '\n'
          << "w2_bar: " << io::format_double(c.w2_bar) << '\n'
          << "provenance: " << c.budget_provenance << '\n';
      return kOk;
    }

    if (sum->parsed()) {
      std::ifstream in(s_results);
      if (!in) throw UsageError("cannot open '" + s_results + "'");
      const auto rows = bench::read_results_csv(in);
      const auto summary = bench::summarize(rows);
      auto body = [&](std::ostream& o) {
        o << "# dp2erm_version: " << bench::kVersion << "\n# verb: summarize\n# results: "
          << s_results << '\n';
        bench::write_summary_csv(o, summary);
      };
      if (s_out.empty()) body(out);
      else detail::write_file(s_out, body);
      return kOk;
    }
  } catch (const io::CsvError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "runtime error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}

}  // namespace dp2erm::cli
