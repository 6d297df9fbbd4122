// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.

#include "dp2erm/bench.hpp"
#include "dp2erm/cli.hpp"
#include "dp2erm/erm.hpp"
#include "dp2erm/optim.hpp"
#include "dp2erm/privacy.hpp"
#include "dp2erm/rng.hpp"
#include "dp2erm/simgen.hpp"
#include "dp2erm/stability.hpp"
#include "dp2erm/weights.hpp"

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

using namespace dp2erm;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Verdict {
  bool pass = true;
  std::string detail;
};

std::vector<std::pair<int, Verdict>> g_results;

void report(int criterion, const Verdict& v) {
  std::cout << "criterion " << criterion << ": " << (v.pass ? "PASS" : "FAIL") << " - "
            << v.detail << std::endl;
  g_results.emplace_back(criterion, v);
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

bool rel_equal(double a, double b, double tol = 1e-12) {
  return std::abs(a - b) <= tol * std::max(std::abs(a), std::abs(b));
}

// Covariates in [-1, 1]^p with assignment from the simulation propensity.
Dataset random_dataset(Index n, Index p, Rng& rng, double p_treated = -1.0) {
  Matrix x = simgen::sample_covariates(n, p, rng);
  Eigen::VectorXi a(n);
  for (;;) {
    if (p_treated < 0.0) a = simgen::assign_treatment(x, rng).a;
    else
      for (Index i = 0; i < n; ++i) a[i] = rng.uniform() < p_treated ? 1 : -1;
    const Index treated = (a.array() == 1).count();
    if (treated >= 2 && treated <= n - 2) break;
  }
  Vector y = Vector::Zero(n);
  return Dataset(std::move(x), std::move(a), std::move(y));
}

Record random_record(Index p, Rng& rng) {
  Record r;
  r.x = simgen::sample_covariates(1, p, rng).row(0).transpose();
  r.a = rng.uniform() < 0.5 ? 1 : -1;
  r.y = 0.0;
  return r;
}

// ---------------------------------------------------------------------------
// 1. Stability bounds

struct SchemeCase {
  std::string name;
  erm::SchemeConfig config;
  double p_treated = -1.0;  // < 0: logistic simulation propensity
};

Verdict criterion1() {
  const auto start = Clock::now();
  const Index p = 5;
  const double M = simgen::covariate_bound(p);
  Rng rng = make_rng(101, StreamId{0, 0, 0, 0, 9});
  Vector lambda_star(p);
  for (Index j = 0; j < p; ++j) lambda_star[j] = rng.normal();
  lambda_star *= 0.5 / lambda_star.norm();

  const ProblemConstants constants = ProblemConstants::itr(M, 1.0, 1.0);
  bool pass = true;
  std::ostringstream detail;
  for (Index n : {Index{50}, Index{200}}) {
    std::vector<SchemeCase> cases;
    cases.push_back({"ipw-randomized", weights::IpwRandomizedConfig{0.6, 0.4}, 0.4});
    cases.push_back({"ipw-known", weights::IpwKnownConfig{lambda_star}});
    weights::IpwEstimatedConfig ipw;
    ipw.R = 1.0;
    ipw.lambda_ipw = 0.1;
    cases.push_back({"ipw-estimated", ipw});
    weights::MmdConfig mmd;
    mmd.lambda_mmd = 1.0;
    mmd.kernel = weights::KernelSpec{bench::public_mmd_bandwidth(M), 1.0};
    cases.push_back({"mmd", mmd});
    weights::EbwConfig ebw;
    ebw.R = 1.0;
    ebw.lambda_ebw = 0.01;
    ebw.moment_scale = bench::public_ebw_scale(M, weights::MomentSet::first);
    cases.push_back({"ebw", ebw});

    for (auto& c : cases) {
      int pairs = 0, violations = 0, valid_violations = 0;
      double worst_ratio = 0.0, worst_realized = 0.0, worst_bound = 0.0;
      for (int base = 0; base < 10; ++base) {
        const Dataset data = random_dataset(n, p, rng, c.p_treated);
        erm::SchemeConfig config = c.config;
        // The MMD cap is a fixed parameter of the programme, shared by D and D'.
        if (auto* m = std::get_if<weights::MmdConfig>(&config))
          m->cap = 10.0 * static_cast<double>(n) /
                   static_cast<double>(std::min(data.group_size(0), data.group_size(1)));
        const erm::StageOne s1 = erm::solve_stage_one(data, config, constants);
        // Stated closed forms. For randomized IPW the library budget uses a
        // corrected bound; the stated one is what is checked here.
        double bound = stability::scheme_l2_bound(s1.bound_params, n);
        double valid_bound = bound;
        if (const auto* r = std::get_if<stability::IpwRandomizedParams>(&s1.bound_params))
          bound = stability::bound_ipw_randomized(n, r->p0, r->p1);
        for (int k = 0; k < 20; ++k) {
          std::optional<Vector> w_prime;
          for (int attempt = 0; attempt < 100 && !w_prime; ++attempt) {
            const Index idx = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
            const NeighborPair pair = make_neighbor(data, idx, random_record(p, rng), constants);
            if (pair.perturbed.group_size(0) < 2 || pair.perturbed.group_size(1) < 2)
              continue;
            try {
              w_prime = erm::solve_stage_one(pair.perturbed, config, constants)
                            .solution.weights.values();
            } catch (const std::invalid_argument&) {
              // e.g. the shared MMD cap is infeasible for D'; draw another
            }
          }
          if (!w_prime) throw std::runtime_error("no admissible neighbour for " + c.name);
          ++pairs;
          const double realized = (s1.solution.weights.values() - *w_prime).norm();
          if (realized > bound + 1e-6) ++violations;
          if (realized > valid_bound + 1e-6) ++valid_violations;
          const double ratio = realized / bound;
          if (ratio > worst_ratio) {
            worst_ratio = ratio;
            worst_realized = realized;
            worst_bound = bound;
          }
        }
      }
      std::cout << "  [1] n=" << n << " " << c.name << ": pairs=" << pairs
                << " violations=" << violations << " max realized/bound=" << fmt(worst_ratio)
                << " (realized " << fmt(worst_realized) << ", bound " << fmt(worst_bound)
                << ")";
      if (c.name == "ipw-randomized")
        std::cout << "; corrected bound violations=" << valid_violations;
      std::cout << std::endl;
      if (valid_violations > 0) {
        pass = false;
        detail << c.name << "@n=" << n << " corrected bound violated; ";
      }
      if (violations > 0) {
        pass = false;
        detail << c.name << "@n=" << n << " " << violations << "/" << pairs << " violations; ";
      }
    }
  }
  const double elapsed = seconds_since(start);
  if (elapsed > 300.0) {
    pass = false;
    detail << "runtime " << fmt(elapsed) << " s > 300 s; ";
  }
  if (pass) detail << "all 5 schemes x n in {50,200}, 200 pairs each, realized <= bound + 1e-6";
  detail << " (" << fmt(elapsed, 3) << " s)";
  return {pass, detail.str()};
}

// ---------------------------------------------------------------------------
// 2. Calibration arithmetic

Verdict criterion2() {
  bool pass = true;
  std::ostringstream detail;
  // Spot values.
  ProblemConstants unit;
  unit.zeta = 1.0;
  unit.lam_tr = 0.0;
  stability::StabilityBudget b300{300.0, 300.0, "", "spot"};
  const auto spot =
      privacy::calibrate({0.1, 0.0, privacy::Mechanism::gamma}, unit, b300, 10, 3);
  if (!rel_equal(spot.noise_scale, 6000.0)) {
    pass = false;
    detail << "1/beta=" << spot.noise_scale << " != 6000; ";
  }
  const auto universal = stability::budget_universal(4);
  if (!rel_equal(universal.w1_bar, 12.0) ||
      !rel_equal(universal.w2_bar, std::sqrt(6.0) * std::pow(5.0, 1.5))) {
    pass = false;
    detail << "universal n=4 gives (" << universal.w1_bar << ", " << universal.w2_bar << "); ";
  }
  if (std::abs(universal.w2_bar - 27.39) > 0.005) {
    pass = false;
    detail << "W2(n=4)=" << universal.w2_bar << " is not 27.39; ";
  }

  // Formula equality over random inputs.
  Rng rng = make_rng(202, StreamId{0, 0, 0, 0, 9});
  int checked = 0;
  for (int k = 0; k < 1000; ++k) {
    ProblemConstants c;
    c.zeta = 0.1 + 100.0 * rng.uniform();
    c.lam_tr = 0.1 + 100.0 * rng.uniform();
    const Index n = 1 + static_cast<Index>(rng.below(5000));
    const Index p = 1 + static_cast<Index>(rng.below(50));
    const double eps = std::pow(10.0, -2.0 + 4.0 * rng.uniform());
    const double delta = std::pow(10.0, -8.0 + 7.0 * rng.uniform());
    stability::StabilityBudget b{1.0 + 1000.0 * rng.uniform(), 1.0 + 1000.0 * rng.uniform(),
                                "", ""};
    const auto g = privacy::calibrate({eps, 0.0, privacy::Mechanism::gamma}, c, b, n, p);
    const auto s = privacy::calibrate({eps, delta, privacy::Mechanism::gaussian}, c, b, n, p);
    const double nd = static_cast<double>(n);
    const double inv_beta = 2.0 * c.zeta * b.w1_bar / eps;
    const double gamma = 2.0 * c.lam_tr * b.w2_bar / (eps * nd);
    const double L2 = std::pow(std::sqrt(static_cast<double>(p)) + std::sqrt(std::log(1.0 / delta)), 2) +
                      std::log(1.0 / delta);
    const double sigma = (c.zeta / eps) * (std::sqrt(L2) + std::sqrt(L2 + eps / (3.0 * nd))) * b.w1_bar;
    const bool ok = rel_equal(g.noise_scale, inv_beta) && rel_equal(g.gamma_ridge, gamma) &&
                    rel_equal(s.noise_scale, sigma) && rel_equal(s.gamma_ridge, gamma);
    if (!ok) {
      pass = false;
      detail << "mismatch at n=" << n << " p=" << p << " eps=" << eps << "; ";
      break;
    }
    ++checked;
  }
  if (pass)
    detail << "1/beta=6000, W1(4)=12, W2(4)=" << fmt(universal.w2_bar, 6) << "; " << checked
           << " random Gamma/Gaussian calibrations equal to the closed forms at 1e-12";
  return {pass, detail.str()};
}

// ---------------------------------------------------------------------------
// 3. Noise samplers

Verdict criterion3() {
  const auto start = Clock::now();
  bool pass = true;
  std::ostringstream detail;
  Rng rng = make_rng(303, StreamId{0, 0, 0, 0, 9});

  const Index p = 10;
  const double inv_beta = 50.0;
  const int N = 10000;
  std::vector<double> radii(N);
  for (auto& r : radii) r = privacy::sample_gamma_noise(p, inv_beta, rng).norm();
  std::sort(radii.begin(), radii.end());
  double ks = 0.0;
  for (int i = 0; i < N; ++i) {
    const double F = boost::math::gamma_p(static_cast<double>(p), radii[i] / inv_beta);
    ks = std::max({ks, std::abs(F - static_cast<double>(i) / N),
                   std::abs(F - static_cast<double>(i + 1) / N)});
  }
  if (ks > 0.02) pass = false;
  detail << "Gamma radial KS=" << fmt(ks) << " (<= 0.02); ";

  const Index pg = 5;
  const double sigma = 3.0;
  const int NG = 100000;
  Vector sum = Vector::Zero(pg), sum_sq = Vector::Zero(pg);
  for (int k = 0; k < NG; ++k) {
    const Vector b = privacy::sample_gaussian_noise(pg, sigma, rng);
    sum += b;
    sum_sq += b.cwiseProduct(b);
  }
  const double se = sigma * sigma * std::sqrt(2.0 / (NG - 1));
  double worst_z = 0.0;
  for (Index j = 0; j < pg; ++j) {
    const double mean = sum[j] / NG;
    const double var = (sum_sq[j] - NG * mean * mean) / (NG - 1);
    worst_z = std::max(worst_z, std::abs(var - sigma * sigma) / se);
  }
  if (worst_z > 3.0) pass = false;
  detail << "Gaussian max |var - sigma^2|/SE=" << fmt(worst_z) << " (<= 3)";
  const double elapsed = seconds_since(start);
  if (elapsed > 60.0) pass = false;
  detail << " (" << fmt(elapsed, 3) << " s)";
  return {pass, detail.str()};
}

// ---------------------------------------------------------------------------
// 4. Utility tail

Verdict criterion4() {
  const auto start = Clock::now();
  bool pass = true;
  std::ostringstream detail;
  const Index p = 10;
  const double M = simgen::covariate_bound(p);
  const double M_out = simgen::outcome_bound(simgen::Scenario::linear);
  erm::ErmSpec spec;
  spec.constants = ProblemConstants::itr(M, M_out, 5.0);
  // Fixed perturbation strength across n; the bound is stated for any
  // (gamma, beta) pair.
  const double gamma = 0.01;
  const double inv_beta = 50.0;

  std::vector<double> medians;
  int applicable = 0, violations = 0;
  for (Index n : {Index{100}, Index{400}, Index{1600}}) {
    Rng data_rng = make_rng(404, StreamId{static_cast<std::uint32_t>(n), 0, 0, 0, 0});
    simgen::ScenarioSpec s;
    s.n = n;
    s.n_test = 1;
    const auto sim = simgen::generate(s, data_rng);
    const WeightVector w = WeightVector::uniform(n);

    privacy::Calibration cal;
    cal.mechanism = privacy::Mechanism::gamma;
    cal.noise_scale = inv_beta;
    cal.gamma_ridge = gamma;
    cal.epsilon = 1.0;
    cal.zeta = spec.constants.zeta;
    cal.lam_tr = spec.constants.lam_tr;
    cal.n = n;
    cal.p = p;

    // t grid from the applicability floor out past the observed maximum.
    Rng pilot = make_rng(404, StreamId{static_cast<std::uint32_t>(n), 0, 0, 0, 1});
    std::vector<double> t_grid;
    const auto probe = erm::utility_gap_trial(sim.train, w, spec, cal, 100, {}, pilot);
    const double floor_t = 0.5 * gamma * probe.theta_opt_norm_sq;
    const double top = *std::max_element(probe.gaps.begin(), probe.gaps.end());
    for (int k = 0; k <= 40; ++k) t_grid.push_back(floor_t + (1.5 * top - floor_t) * k / 40.0);

    Rng rng = make_rng(404, StreamId{static_cast<std::uint32_t>(n), 0, 0, 0, 2});
    const auto rep = erm::utility_gap_trial(sim.train, w, spec, cal, 500, t_grid, rng);
    std::vector<double> gaps = rep.gaps;
    std::nth_element(gaps.begin(), gaps.begin() + 250, gaps.end());
    medians.push_back(gaps[250]);
    int worst_k = -1;
    double worst_excess = -1e300;
    for (std::size_t k = 0; k < rep.points.size(); ++k) {
      const auto& pt = rep.points[k];
      if (!pt.gamma_applicable) continue;
      ++applicable;
      // Binomial SE at the bound value, so a zero empirical count is not
      // treated as exact.
      const double se = std::sqrt(std::max(pt.gamma_bound * (1.0 - pt.gamma_bound), 1e-12) / 500.0);
      const double excess = pt.empirical - pt.gamma_bound - 3.0 * se;
      if (excess > 0.0) ++violations;
      if (excess > worst_excess) {
        worst_excess = excess;
        worst_k = static_cast<int>(k);
      }
    }
    const auto& wp = rep.points[static_cast<std::size_t>(std::max(worst_k, 0))];
    std::cout << "  [4] n=" << n << " median gap=" << fmt(medians.back())
              << " floor t=" << fmt(floor_t) << " worst point t=" << fmt(wp.t)
              << " empirical=" << fmt(wp.empirical) << " bound=" << fmt(wp.gamma_bound)
              << std::endl;
  }
  if (violations > 0) {
    pass = false;
    detail << violations << "/" << applicable << " applicable t exceed bound + 3 SE; ";
  } else {
    detail << "empirical tail <= bound + 3 SE at all " << applicable << " applicable t; ";
  }
  const bool monotone = medians[0] > medians[1] && medians[1] > medians[2];
  if (!monotone) pass = false;
  detail << "median gaps " << fmt(medians[0]) << " > " << fmt(medians[1]) << " > "
         << fmt(medians[2]) << (monotone ? "" : " NOT monotone");
  const double elapsed = seconds_since(start);
  if (elapsed > 600.0) pass = false;
  detail << " (" << fmt(elapsed, 3) << " s)";
  return {pass, detail.str()};
}

// ---------------------------------------------------------------------------
// 5. Privacy-utility trends

double binomial_two_sided(int k, int n) {
  const boost::math::binomial_distribution<double> dist(n, 0.5);
  const double lower = boost::math::cdf(dist, k);
  const double upper = k > 0 ? boost::math::cdf(boost::math::complement(dist, k - 1)) : 1.0;
  return std::min(1.0, 2.0 * std::min(lower, upper));
}

Verdict criterion5() {
  const auto start = Clock::now();
  bench::ExperimentPlan plan;
  plan.scenario = simgen::ScenarioSpec{};
  plan.replicates = 50;
  plan.seed = 20240505;
  plan.baseline = true;
  plan.tuning.enabled = false;
  plan.workers = 1;
  const auto rows = bench::run_plan(plan);
  const auto summary = bench::summarize(rows);

  std::map<std::tuple<std::string, std::string, double>, bench::SummaryRow> by;
  for (const auto& s : summary) by[{s.scheme, s.mechanism, s.epsilon}] = s;
  std::size_t failures = 0;
  for (const auto& r : rows) failures += r.status != "ok";

  bool pass = failures == 0;
  std::ostringstream detail;
  if (failures) detail << failures << " failed cells; ";

  for (const auto& s : summary)
    std::cout << "  [5] " << s.scheme << "/" << s.mechanism << " eps=" << io::format_double(s.epsilon)
              << " acc=" << fmt(s.mean_accuracy.value_or(NAN))
              << " (sd " << fmt(s.sd_accuracy.value_or(NAN)) << ")" << std::endl;

  // (a)
  bool a_ok = true;
  std::ostringstream a_detail;
  for (const char* scheme : {"ipw", "mmd", "ebw"})
    for (const char* mech : {"gamma", "gaussian"}) {
      const double at10 = *by[{scheme, mech, 10.0}].mean_accuracy;
      const double atinf = *by[{scheme, mech, privacy::kInfinity}].mean_accuracy;
      if (std::abs(at10 - atinf) > 0.05) {
        a_ok = false;
        a_detail << scheme << "/" << mech << " " << fmt(at10, 3) << " vs " << fmt(atinf, 3) << "; ";
      }
    }
  // (b)
  const double ebw = *by[{"ebw", "gamma", 0.01}].mean_accuracy;
  const double ipw = *by[{"ipw", "gamma", 0.01}].mean_accuracy;
  const bool b_ok = ebw >= ipw;
  // (c)
  bool c_ok = true;
  std::ostringstream c_detail;
  for (const char* scheme : {"ipw", "mmd", "ebw"})
    for (const char* mech : {"gamma", "gaussian"})
      for (double eps : plan.epsilons) {
        if (!std::isfinite(eps)) continue;
        const std::string name = std::string("composition-") + scheme;
        const double mean = *by[{name, mech, eps}].mean_accuracy;
        int above = 0, total = 0;
        for (const auto& r : rows)
          if (r.scheme == name && r.mechanism == mech && r.epsilon == eps && r.accuracy) {
            ++total;
            above += *r.accuracy > 0.5;
          }
        const double pval = binomial_two_sided(above, total);
        if (mean < 0.45 || mean > 0.55 || pval < 0.01) {
          c_ok = false;
          c_detail << name << "/" << mech << "@" << eps << " mean " << fmt(mean, 3)
                   << " p=" << fmt(pval, 3) << "; ";
        }
      }
  pass = pass && a_ok && b_ok && c_ok;
  detail << "(a) " << (a_ok ? "ok" : "FAIL: " + a_detail.str()) << " (b) EBW " << fmt(ebw, 3)
         << (b_ok ? " >= " : " < ") << "IPW " << fmt(ipw, 3) << (b_ok ? "" : " FAIL")
         << "; (c) " << (c_ok ? "baseline within [0.45,0.55], binomial p >= 0.01" : "FAIL: " + c_detail.str());
  const double elapsed = seconds_since(start);
  if (elapsed > 1800.0) pass = false;
  detail << " (" << fmt(elapsed, 3) << " s)";
  return {pass, detail.str()};
}

// ---------------------------------------------------------------------------
// 6. EBW correctness

double kl_to_uniform(const Vector& w) {
  const double n = static_cast<double>(w.size());
  double kl = 0.0;
  for (Index i = 0; i < w.size(); ++i)
    if (w[i] > 0.0) kl += (w[i] / n) * std::log(w[i]);  // q = 1/n, so w_i/(n q_i) = w_i
  return kl;
}

// Minimum of sum_i (w_i/n) log w_i over one arm subject to
// sum w = n_a and sum w x = n_a xbar, by grid search on the free direction
// (arm size 3) or the unique solution (arm size 2).
double arm_kl_oracle(const std::vector<double>& xs, double xbar, double n) {
  const double na = static_cast<double>(xs.size());
  auto term = [n](double w) { return w > 0.0 ? (w / n) * std::log(w) : 0.0; };
  if (xs.size() == 2) {
    const double w1 = na * (xbar - xs[1]) / (xs[0] - xs[1]);
    const double w2 = na - w1;
    return (w1 < 0.0 || w2 < 0.0) ? std::numeric_limits<double>::infinity() : term(w1) + term(w2);
  }
  // Solve for (w2, w3) given w1 = t.
  auto weights_for = [&](double t, double& w2, double& w3) {
    const double rest = na - t;
    const double rest_moment = na * xbar - t * xs[0];
    w2 = (rest_moment - rest * xs[2]) / (xs[1] - xs[2]);
    w3 = rest - w2;
  };
  auto value = [&](double t) {
    double w2, w3;
    weights_for(t, w2, w3);
    if (t < 0.0 || w2 < 0.0 || w3 < 0.0) return std::numeric_limits<double>::infinity();
    return term(t) + term(w2) + term(w3);
  };
  double best_t = 0.0, best = INFINITY;
  const double step = 1e-4;
  for (double t = 0.0; t <= na; t += step) {
    const double v = value(t);
    if (v < best) {
      best = v;
      best_t = t;
    }
  }
  // Refine on a finer grid around the coarse minimiser.
  const double fine = 1e-7;
  for (double t = std::max(0.0, best_t - step); t <= best_t + step; t += fine) {
    const double v = value(t);
    if (v < best) best = v;
  }
  return best;
}

Verdict criterion6() {
  const auto start = Clock::now();
  bool pass = true;
  std::ostringstream detail;
  Rng rng = make_rng(606, StreamId{0, 0, 0, 0, 9});

  // (i) moment matching on unbalanced instances.
  double worst_residual = 0.0;
  int instances = 0;
  for (int k = 0; k < 20; ++k) {
    const Index n = 60, p = 5;
    Matrix x = simgen::sample_covariates(n, p, rng);
    Eigen::VectorXi a(n);
    for (Index i = 0; i < n; ++i) {
      // Strongly covariate-dependent assignment.
      const double pr = simgen::expit(1.5 * x(i, 0) - x(i, 1));
      a[i] = rng.uniform() < pr ? 1 : -1;
    }
    if ((a.array() == 1).count() < 10 || (a.array() == -1).count() < 10) {
      --k;
      continue;
    }
    const Dataset data(std::move(x), std::move(a), Vector::Zero(n));
    weights::EbwConfig c;
    c.R = 50.0;
    c.lambda_ebw = 0.0;
    c.solver.tol = 1e-12;
    const auto sol = weights::ebw_weights(data, c);
    worst_residual = std::max(worst_residual, sol.moment_residuals.cwiseAbs().maxCoeff());
    ++instances;
  }
  if (worst_residual > 1e-6) pass = false;
  detail << instances << " unbalanced n=60 instances, max moment residual "
         << fmt(worst_residual) << " (<= 1e-6); ";

  // (ii) KL oracle on tiny instances (p = 1, K = 1).
  double worst_gap = 0.0;
  int tiny = 0;
  while (tiny < 20) {
    const Index n = tiny % 2 ? 5 : 6;
    const Index n1 = n == 5 ? 2 : 3;
    Matrix x(n, 1);
    for (Index i = 0; i < n; ++i) x(i, 0) = 2.0 * rng.uniform() - 1.0;
    Eigen::VectorXi a(n);
    for (Index i = 0; i < n; ++i) a[i] = i < n1 ? 1 : -1;
    const double xbar = x.col(0).mean();
    std::vector<double> treated, control;
    for (Index i = 0; i < n; ++i) (a[i] == 1 ? treated : control).push_back(x(i, 0));
    // Need xbar strictly inside both arms' hulls for a positive solution.
    auto inside = [xbar](const std::vector<double>& v) {
      return *std::min_element(v.begin(), v.end()) < xbar - 0.05 &&
             *std::max_element(v.begin(), v.end()) > xbar + 0.05;
    };
    if (!inside(treated) || !inside(control)) continue;
    const double nd = static_cast<double>(n);
    const double oracle = arm_kl_oracle(treated, xbar, nd) + arm_kl_oracle(control, xbar, nd);
    const Dataset data(x, a, Vector::Zero(n));
    weights::EbwConfig c;
    c.R = 50.0;
    c.lambda_ebw = 0.0;
    c.solver.tol = 1e-12;
    const auto sol = weights::ebw_weights(data, c);
    const double kl = kl_to_uniform(sol.weights.values());
    worst_gap = std::max(worst_gap, std::abs(kl - oracle));
    ++tiny;
  }
  if (worst_gap > 1e-6) pass = false;
  detail << tiny << " tiny instances, max |KL - oracle| " << fmt(worst_gap) << " (<= 1e-6)";
  const double elapsed = seconds_since(start);
  if (elapsed > 120.0) pass = false;
  detail << " (" << fmt(elapsed, 3) << " s)";
  return {pass, detail.str()};
}

// ---------------------------------------------------------------------------
// 7. Solver oracles

double grad_error(const optim::Objective& f, const Vector& x) {
  Vector g;
  f(x, g);
  const Vector fd = optim::finite_diff_gradient(f, x, 1e-6);
  double worst = 0.0;
  for (Index j = 0; j < x.size(); ++j)
    worst = std::max(worst, std::abs(g[j] - fd[j]) / std::max(1.0, std::abs(g[j])));
  return worst;
}

Vector random_vector(Index p, double scale, Rng& rng) {
  Vector v(p);
  for (Index j = 0; j < p; ++j) v[j] = scale * rng.normal();
  return v;
}

Verdict criterion7() {
  bool pass = true;
  std::ostringstream detail;
  Rng rng = make_rng(707, StreamId{0, 0, 0, 0, 9});
  const Index p = 5;
  simgen::ScenarioSpec s;
  s.n = 40;
  s.n_test = 1;
  s.p = p;
  const Dataset data = simgen::generate(s, rng).train;

  std::map<std::string, double> worst;
  const optim::Objective nll = weights::ipw_nll_objective(data, 0.3);
  weights::EbwConfig ebw_config;
  ebw_config.lambda_ebw = 0.2;
  ebw_config.moments = weights::MomentSet::first_and_squares;
  const weights::EbwProblem ebw(data, ebw_config);
  const optim::Objective ebw_obj = [&ebw](const Vector& l, Vector& g) {
    return ebw.objective(l, g);
  };
  const auto sys = weights::mmd_kernel_matrices(
      data, weights::KernelSpec{weights::median_bandwidth(data.covariates()), 1.0}, 0.5, 1.0);
  const double nn = static_cast<double>(data.size() * data.size());
  const optim::Objective mmd = weights::mmd_quadratic_objective(sys.A * nn, sys.b * nn);
  for (int k = 0; k < 20; ++k) {
    const Index i = static_cast<Index>(rng.below(static_cast<std::uint64_t>(data.size())));
    const Record r = data.record(i);
    const optim::Objective loss = [&r](const Vector& t, Vector& g) {
      auto [v, grad] = itr::itr_loss(t, r);
      g = grad;
      return v;
    };
    worst["itr loss"] = std::max(worst["itr loss"], grad_error(loss, random_vector(p, 1.0, rng)));
    worst["logistic NLL"] = std::max(worst["logistic NLL"], grad_error(nll, random_vector(p, 1.0, rng)));
    worst["EBW dual"] = std::max(worst["EBW dual"],
                                 grad_error(ebw_obj, random_vector(ebw.dual_dim(), 1.0, rng)));
    Vector w = (random_vector(data.size(), 1.0, rng).array().abs() + 0.5).matrix();
    worst["MMD quadratic"] = std::max(worst["MMD quadratic"], grad_error(mmd, w));
  }
  for (const auto& [name, err] : worst) {
    if (err > 1e-5) pass = false;
    detail << name << " " << fmt(err, 2) << ", ";
  }

  // Projections against brute-force grid search in two dimensions.
  const double h = 1e-3;
  double worst_proj = 0.0;
  bool feasible = true;
  // The projection must be feasible, no farther from x than any grid point,
  // and within the grid resolution of the best grid distance.
  auto check = [&](const Vector& x, const Vector& proj, const std::vector<Vector>& grid,
                   const std::function<bool(const Vector&)>& inside) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& g : grid) best = std::min(best, (x - g).norm());
    const double d = (x - proj).norm();
    feasible = feasible && inside(proj);
    if (d > best + 1e-12) worst_proj = std::max(worst_proj, 1.0);  // grid beat us
    worst_proj = std::max(worst_proj, std::abs(best - d));
  };
  auto in_l1 = [](const Vector& v) { return v.lpNorm<1>() <= 1.0 + 1e-12; };
  auto in_l2 = [](const Vector& v) { return v.norm() <= 1.0 + 1e-12; };
  std::vector<Vector> l1_grid, l2_grid;
  for (double u = -1.0; u <= 1.0 + 1e-12; u += h)
    for (double v = -1.0; v <= 1.0 + 1e-12; v += h) {
      Vector g(2);
      g << u, v;
      if (std::abs(u) + std::abs(v) <= 1.0 + 1e-12) l1_grid.push_back(g);
      if (u * u + v * v <= 1.0 + 1e-12) l2_grid.push_back(g);
    }
  const double total = 2.0, cap = 1.5;
  std::vector<Vector> simplex_grid;
  for (double u = total - cap; u <= cap + 1e-12; u += h) {
    Vector g(2);
    g << u, total - u;
    simplex_grid.push_back(g);
  }
  auto in_simplex = [&](const Vector& v) {
    return std::abs(v.sum() - total) <= 1e-9 && v.minCoeff() >= -1e-12 &&
           v.maxCoeff() <= cap + 1e-12;
  };
  for (int k = 0; k < 20; ++k) {
    const Vector x = random_vector(2, 2.0, rng);
    check(x, optim::project_l1_ball(x, 1.0), l1_grid, in_l1);
    check(x, optim::project_l2_ball(x, 1.0), l2_grid, in_l2);
    check(x, optim::project_capped_simplex(x, total, cap), simplex_grid, in_simplex);
  }
  Vector spot(2);
  spot << 5.0, 0.0;
  const Vector spot_proj = optim::project_capped_simplex(spot, total, cap);
  check(spot, spot_proj, simplex_grid, in_simplex);
  const bool spot_ok = (spot_proj - Vector{{1.5, 0.5}}).norm() <= 1e-9;
  const double resolution = std::sqrt(2.0) * h;
  if (worst_proj > resolution || !feasible || !spot_ok) pass = false;
  detail << "projections (L1, L2, capped simplex; 61 points) feasible=" << (feasible ? "yes" : "no")
         << ", max |distance - grid oracle distance| " << fmt(worst_proj, 2) << " (<= "
         << fmt(resolution, 2) << "), (5,0)->(1.5,0.5) " << (spot_ok ? "ok" : "WRONG");
  return {pass, detail.str()};
}

// ---------------------------------------------------------------------------
// 8. Determinism

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Verdict criterion8() {
  const auto root = std::filesystem::temp_directory_path() / "dp2erm_acceptance_c8";
  std::filesystem::remove_all(root);
  std::vector<std::string> outputs;
  for (int run = 0; run < 2; ++run) {
    const std::string dir = (root / ("run" + std::to_string(run))).string();
    const int workers = run == 0 ? 1 : 3;  // worker count must not matter
    const std::string w = std::to_string(workers);
    const char* argv[] = {"dp2erm", "simulate", "--scenario", "linear", "--reps", "3",
                          "--eps", "0.1,1,inf", "--seed", "8", "--baseline",
                          "--bootstrap", "2", "--workers", w.c_str(), "--out", dir.c_str()};
    std::ostringstream out, err;
    const int code = cli::run_cli(static_cast<int>(std::size(argv)), argv, out, err);
    if (code != 0) return {false, "simulate exited " + std::to_string(code) + ": " + err.str()};
    outputs.push_back(read_all(std::filesystem::path(dir) / "results.csv"));
  }
  std::filesystem::remove_all(root);
  const bool same = outputs[0] == outputs[1] && !outputs[0].empty();
  return {same, std::string(same ? "byte-identical" : "different") +
                    " results.csv across two seeded simulate runs (tuning on, 1 vs 3 workers, " +
                    std::to_string(outputs[0].size()) + " bytes)"};
}

}  // namespace

int main(int argc, char** argv) {
  // Optional: run a subset, e.g. `acceptance 1 4`.
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
  auto wanted = [&](int c) {
    return selected.empty() || std::find(selected.begin(), selected.end(), c) != selected.end();
  };
  const std::vector<std::pair<int, std::function<Verdict()>>> criteria{
      {1, criterion1}, {2, criterion2}, {3, criterion3}, {4, criterion4},
      {5, criterion5}, {6, criterion6}, {7, criterion7}, {8, criterion8}};
  for (const auto& [id, fn] : criteria) {
    if (!wanted(id)) continue;
    try {
      report(id, fn());
    } catch (const std::exception& e) {
      report(id, {false, std::string("exception: ") + e.what()});
    }
  }
  int failed = 0;
  for (const auto& [id, v] : g_results) failed += !v.pass;
  std::cout << "summary: " << (g_results.size() - failed) << "/" << g_results.size()
            << " criteria passed" << std::endl;
  return failed ? 1 : 0;
}
