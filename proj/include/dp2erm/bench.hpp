#pragma once

#include "dp2erm/core.hpp"
#include "dp2erm/erm.hpp"
#include "dp2erm/io.hpp"
#include "dp2erm/itr.hpp"
#include "dp2erm/privacy.hpp"
#include "dp2erm/rng.hpp"
#include "dp2erm/simgen.hpp"
#include "dp2erm/stability.hpp"
#include "dp2erm/weights.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

namespace dp2erm::bench {

inline constexpr const char* kVersion = "0.1.0";

enum class SchemeKind { ipw, mmd, ebw };

inline std::string to_string(SchemeKind s) {
  switch (s) {
    case SchemeKind::ipw: return "ipw";
    case SchemeKind::mmd: return "mmd";
    case SchemeKind::ebw: return "ebw";
  }
  return "?";
}

inline SchemeKind parse_scheme(const std::string& name) {
  if (name == "ipw") return SchemeKind::ipw;
  if (name == "mmd") return SchemeKind::mmd;
  if (name == "ebw") return SchemeKind::ebw;
  throw std::invalid_argument("unknown scheme '" + name + "' (valid: ipw, mmd, ebw)");
}

inline std::uint8_t scheme_index(SchemeKind s) { return static_cast<std::uint8_t>(s); }

/// Parameters used when tuning is off, and the fixed parts of each scheme.
struct SchemeDefaults {
  double ipw_R = 1.0;
  double lambda_ipw = 1.0;
  double mmd_alpha = 0.5;
  double lambda_mmd = 10.0;
  double ebw_R = 1.0;
  double lambda_ebw = 1.0;
  weights::MomentSet ebw_moments = weights::MomentSet::first;
  double lambda1 = 5.0;
};

// Hyperparameters that would otherwise be read off the data (median-distance
// bandwidth, max-row moment scale) are fixed from the public covariate bound
// M, so the weights depend on the data only through the solved programme.
inline double public_mmd_bandwidth(double M) { return M; }
inline double public_ebw_scale(double M, weights::MomentSet moments) {
  const double row = moments == weights::MomentSet::first_and_squares
                         ? std::sqrt(1.0 + M * M + M * M * M * M)
                         : std::sqrt(1.0 + M * M);
  return 1.0 / (2.0 * row);
}

struct TuningGrid {
  bool enabled = true;
  std::vector<double> lambda_ipw{0.0, 1e-3, 1e-2, 1e-1, 1.0};
  std::vector<double> lambda_mmd{1e-2, 1e-1, 1.0, 10.0};
  std::vector<double> lambda_ebw{0.0, 1e-3, 1e-2, 1e-1, 1.0};
  std::vector<double> lambda1{1.0, 5.0, 10.0, 20.0};
  int bootstrap = 20;

  const std::vector<double>& scheme_grid(SchemeKind s) const {
    switch (s) {
      case SchemeKind::ipw: return lambda_ipw;
      case SchemeKind::mmd: return lambda_mmd;
      case SchemeKind::ebw: return lambda_ebw;
    }
    return lambda_ipw;
  }
};

struct ExperimentPlan {
  // Exactly one data source.
  std::optional<simgen::ScenarioSpec> scenario = simgen::ScenarioSpec{};
  std::optional<std::string> csv_path;
  double train_fraction = 0.10;
  std::optional<double> m_out;  // CSV mode outcome bound; default max |y|

  std::vector<SchemeKind> schemes{SchemeKind::ipw, SchemeKind::mmd, SchemeKind::ebw};
  std::vector<privacy::Mechanism> mechanisms{privacy::Mechanism::gamma,
                                             privacy::Mechanism::gaussian};
  std::vector<double> epsilons{0.01, 0.1, 1.0, 10.0, privacy::kInfinity};
  std::optional<double> delta;  // default 1/n
  int replicates = 100;
  std::uint64_t seed = 0;
  TuningGrid tuning;
  SchemeDefaults defaults;
  bool baseline = false;
  int workers = 1;
  bool timing = false;

  void check() const {
    if (scenario.has_value() == csv_path.has_value())
      throw std::invalid_argument("plan needs exactly one of scenario or csv");
    if (scenario) scenario->check();
    if (epsilons.empty()) throw std::invalid_argument("epsilon grid is empty");
    for (double e : epsilons)
      if (!(e > 0.0)) throw std::invalid_argument("epsilons must be > 0 or inf");
    if (epsilons.size() >= 4096) throw std::invalid_argument("too many epsilons");
    if (schemes.empty()) throw std::invalid_argument("no schemes selected");
    if (mechanisms.empty()) throw std::invalid_argument("no mechanisms selected");
    if (replicates < 1) throw std::invalid_argument("replicates must be >= 1");
    if (workers < 1) throw std::invalid_argument("workers must be >= 1");
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
      throw std::invalid_argument("train fraction must lie in (0, 1)");
    if (delta && !(*delta > 0.0 && *delta < 1.0))
      throw std::invalid_argument("delta must lie in (0, 1)");
    if (tuning.enabled) {
      if (tuning.bootstrap < 1) throw std::invalid_argument("bootstrap B must be >= 1");
      if (tuning.lambda1.empty()) throw std::invalid_argument("lambda1 grid is empty");
      for (SchemeKind s : schemes)
        if (tuning.scheme_grid(s).empty())
          throw std::invalid_argument("tuning grid for " + to_string(s) + " is empty");
    }
    for (double v : tuning.lambda_mmd)
      if (!(v > 0.0)) throw std::invalid_argument("lambda_MMD grid values must be > 0");
    if (!(defaults.lambda_mmd > 0.0))
      throw std::invalid_argument("lambda_MMD must be > 0");
  }
};

struct ResultRow {
  int replicate = 0;
  std::string scheme;
  std::string mechanism;
  double epsilon = 0.0;
  std::optional<double> accuracy;
  std::optional<double> value;
  double noise_scale = 0.0;
  double gamma_ridge = 0.0;
  double w1_bar = 0.0;
  double w2_bar = 0.0;
  double wall_time_ms = 0.0;
  std::uint64_t seed = 0;
  std::string status = "ok";
  // Not serialised; kept for auditing in-process.
  double scheme_reg = 0.0;
  double lambda1 = 0.0;
};

// ---------------------------------------------------------------------------
// Scheme construction

inline erm::SchemeConfig make_scheme(SchemeKind kind, double reg,
                                     const SchemeDefaults& d, double M) {
  switch (kind) {
    case SchemeKind::ipw: {
      weights::IpwEstimatedConfig c;
      c.R = d.ipw_R;
      c.lambda_ipw = reg;
      return c;
    }
    case SchemeKind::mmd: {
      weights::MmdConfig c;
      c.alpha = d.mmd_alpha;
      c.lambda_mmd = reg;
      c.kernel = weights::KernelSpec{public_mmd_bandwidth(M), 1.0};
      return c;
    }
    case SchemeKind::ebw: {
      weights::EbwConfig c;
      c.R = d.ebw_R;
      c.lambda_ebw = reg;
      c.moments = d.ebw_moments;
      c.moment_scale = public_ebw_scale(M, d.ebw_moments);
      return c;
    }
  }
  throw std::invalid_argument("unknown scheme");
}

inline double default_reg(SchemeKind kind, const SchemeDefaults& d) {
  switch (kind) {
    case SchemeKind::ipw: return d.lambda_ipw;
    case SchemeKind::mmd: return d.lambda_mmd;
    case SchemeKind::ebw: return d.lambda_ebw;
  }
  return 0.0;
}

inline erm::ErmSpec make_spec(double M, double M_out, double lambda1) {
  erm::ErmSpec spec;
  spec.constants = ProblemConstants::itr(M, M_out, lambda1);
  return spec;
}

// ---------------------------------------------------------------------------
// Bootstrap tuning

/// Fits a decision rule on a resample for candidate `k`.
using RuleFitter = std::function<itr::DecisionRule(std::size_t k, const Dataset&)>;

struct BootstrapSelection {
  std::size_t chosen = 0;
  std::vector<double> mean_oob_value;
};

/// Scores `candidates` candidates by average out-of-bag value over B
/// resamples (shared by all candidates). Ties go to the earlier candidate, so
/// callers list candidates from most to least preferred.
inline BootstrapSelection bootstrap_select(const Dataset& train,
                                           const Vector& p_treated,
                                           std::size_t candidates,
                                           const RuleFitter& fit, int B, Rng& rng) {
  if (B < 1) throw std::invalid_argument("bootstrap B must be >= 1");
  if (candidates == 0) throw std::invalid_argument("tuning grid is empty");
  if (p_treated.size() != train.size())
    throw std::invalid_argument("propensities and training set differ in length");
  const Index n = train.size();
  const Vector received = itr::received_propensity(train.treatments(), p_treated);

  std::vector<std::vector<Index>> in_bag(static_cast<std::size_t>(B));
  std::vector<std::vector<Index>> out_bag(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b) {
    bool ok = false;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
      std::vector<Index> rows(static_cast<std::size_t>(n));
      std::vector<char> seen(static_cast<std::size_t>(n), 0);
      for (auto& r : rows) {
        r = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
        seen[static_cast<std::size_t>(r)] = 1;
      }
      Index treated = 0;
      for (Index r : rows) treated += (train.a(r) == 1);
      std::vector<Index> oob;
      for (Index i = 0; i < n; ++i)
        if (!seen[static_cast<std::size_t>(i)]) oob.push_back(i);
      ok = treated > 0 && treated < n && !oob.empty();
      if (ok) {
        in_bag[static_cast<std::size_t>(b)] = std::move(rows);
        out_bag[static_cast<std::size_t>(b)] = std::move(oob);
      }
    }
    if (!ok)
      throw std::runtime_error(
          "bootstrap: 100 consecutive resamples had an empty arm or no out-of-bag rows");
  }

  BootstrapSelection out;
  out.mean_oob_value.assign(candidates, 0.0);
  for (int b = 0; b < B; ++b) {
    const Dataset resample = train.subset(in_bag[static_cast<std::size_t>(b)]);
    const auto& oob = out_bag[static_cast<std::size_t>(b)];
    const Dataset oob_data = train.subset(oob);
    Vector oob_pi(static_cast<Index>(oob.size()));
    for (std::size_t k = 0; k < oob.size(); ++k)
      oob_pi[static_cast<Index>(k)] = received[oob[k]];
    for (std::size_t k = 0; k < candidates; ++k)
      out.mean_oob_value[k] += itr::empirical_value(fit(k, resample), oob_data, oob_pi);
  }
  for (auto& v : out.mean_oob_value) v /= B;
  for (std::size_t k = 1; k < candidates; ++k)
    if (out.mean_oob_value[k] > out.mean_oob_value[out.chosen]) out.chosen = k;
  return out;
}

struct TunedParams {
  double scheme_reg = 0.0;
  double lambda1 = 1.0;
  std::vector<double> mean_oob_value;
};

/// Selects (scheme regularisation, lambda1) by out-of-bag empirical value of
/// the non-private rule. Ties favour stronger scheme regularisation, then the
/// smaller L1 radius.
inline TunedParams bootstrap_tune(const Dataset& train, const Vector& p_treated,
                                  SchemeKind kind, const SchemeDefaults& defaults,
                                  const std::vector<double>& scheme_grid,
                                  const std::vector<double>& lambda1_grid, int B,
                                  double M, double M_out, Rng& rng) {
  std::vector<std::pair<double, double>> grid;
  for (double r : scheme_grid)
    for (double l1 : lambda1_grid) grid.emplace_back(r, l1);
  std::stable_sort(grid.begin(), grid.end(), [](const auto& l, const auto& r) {
    if (l.first != r.first) return l.first > r.first;
    return l.second < r.second;
  });
  const RuleFitter fit = [&](std::size_t k, const Dataset& resample) {
    const auto [reg, l1] = grid[k];
    const auto stage1 =
        erm::solve_stage_one(resample, make_scheme(kind, reg, defaults, M),
                             ProblemConstants::itr(M, M_out, l1));
    const auto sol = erm::solve_nonprivate(resample, stage1.solution.weights,
                                           make_spec(M, M_out, l1));
    return itr::DecisionRule{sol.theta};
  };
  const auto sel = bootstrap_select(train, p_treated, grid.size(), fit, B, rng);
  return {grid[sel.chosen].first, grid[sel.chosen].second, sel.mean_oob_value};
}

// ---------------------------------------------------------------------------
// Harness

/// Logistic fit with intercept for P(A = +1 | x), used when propensities are
/// not supplied.
inline Vector estimate_propensity(const Dataset& data) {
  Matrix aug(data.size(), data.dim() + 1);
  aug.col(0).setOnes();
  aug.rightCols(data.dim()) = data.covariates();
  const Dataset d(aug, data.treatments(), data.outcomes());
  weights::IpwEstimatedConfig c;
  c.R = 100.0;
  c.lambda_ipw = 1e-6;
  const auto sol = weights::ipw_estimated(d, c);
  Vector out(data.size());
  for (Index i = 0; i < data.size(); ++i)
    out[i] = std::clamp(simgen::expit(aug.row(i).dot(sol.lambda)), 1e-6, 1.0 - 1e-6);
  return out;
}

/// One replicate's train/test bundle with the truth needed for evaluation.
struct ReplicateData {
  Dataset train;
  Vector train_p_treated;
  Dataset test;
  Vector test_p_treated;
  std::optional<Vector> test_f_opt;
  double M = 1.0;
  double M_out = 1.0;
};

struct PreparedSource {
  std::optional<io::LoadedData> csv;
  double M = 1.0;
  double M_out = 1.0;
};

inline PreparedSource prepare_source(const ExperimentPlan& plan) {
  PreparedSource src;
  if (plan.scenario) {
    src.M = simgen::covariate_bound(plan.scenario->p);
    src.M_out = simgen::outcome_bound(plan.scenario->id);
  } else {
    src.csv = io::read_dataset_csv(*plan.csv_path);
    const Dataset& d = src.csv->data;
    if (d.size() < 4) throw std::invalid_argument("CSV needs at least 4 rows");
    src.M = std::max(weights::max_row_norm(d.covariates()), 1e-12);
    src.M_out = plan.m_out.value_or(std::max(d.outcomes().cwiseAbs().maxCoeff(), 1e-12));
  }
  return src;
}

inline ReplicateData replicate_data(const ExperimentPlan& plan,
                                    const PreparedSource& src, int replicate) {
  Rng rng = make_rng(plan.seed, StreamId{static_cast<std::uint32_t>(replicate), 0, 0, 0, 0});
  ReplicateData out;
  out.M = src.M;
  out.M_out = src.M_out;
  if (plan.scenario) {
    auto sim = simgen::generate(*plan.scenario, rng);
    out.train = std::move(sim.train);
    out.train_p_treated = std::move(sim.train_p_treated);
    out.test = std::move(sim.test);
    out.test_p_treated = std::move(sim.test_p_treated);
    out.test_f_opt = std::move(sim.test_f_opt);
    return out;
  }
  const io::LoadedData& csv = *src.csv;
  const Index n = csv.data.size();
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  for (Index i = n - 1; i > 0; --i)
    std::swap(perm[static_cast<std::size_t>(i)],
              perm[static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(i + 1)))]);
  const Index n_train = std::clamp<Index>(
      static_cast<Index>(std::llround(plan.train_fraction * static_cast<double>(n))), 2,
      n - 2);
  std::vector<Index> train_rows(perm.begin(), perm.begin() + n_train);
  std::vector<Index> test_rows(perm.begin() + n_train, perm.end());
  std::sort(train_rows.begin(), train_rows.end());
  std::sort(test_rows.begin(), test_rows.end());
  out.train = csv.data.subset(train_rows);
  out.test = csv.data.subset(test_rows);
  auto pick = [](const Vector& v, const std::vector<Index>& rows) {
    Vector o(static_cast<Index>(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k) o[static_cast<Index>(k)] = v[rows[k]];
    return o;
  };
  if (csv.p_treated) {
    out.train_p_treated = pick(*csv.p_treated, train_rows);
    out.test_p_treated = pick(*csv.p_treated, test_rows);
  } else {
    out.train_p_treated = estimate_propensity(out.train);
    out.test_p_treated = estimate_propensity(out.test);
  }
  if (csv.f_opt) out.test_f_opt = pick(*csv.f_opt, test_rows);
  return out;
}

inline privacy::PrivacyParams privacy_for(privacy::Mechanism m, double epsilon,
                                          const ExperimentPlan& plan, Index n) {
  privacy::PrivacyParams pp;
  pp.mechanism = m;
  pp.epsilon = epsilon;
  if (m == privacy::Mechanism::gaussian)
    pp.delta = plan.delta.value_or(1.0 / static_cast<double>(n));
  return pp;
}

inline void evaluate_into(ResultRow& row, const itr::DecisionRule& rule,
                          const ReplicateData& data) {
  if (data.test_f_opt)
    row.accuracy = itr::accuracy(rule, data.test.covariates(), *data.test_f_opt);
  row.value = itr::empirical_value(
      rule, data.test,
      itr::received_propensity(data.test.treatments(), data.test_p_treated));
}

/// All rows of one replicate, in (scheme, baseline, mechanism, epsilon) order.
inline std::vector<ResultRow> run_replicate(const ExperimentPlan& plan,
                                            const PreparedSource& src, int replicate) {
  using Clock = std::chrono::steady_clock;
  std::vector<ResultRow> rows;
  std::optional<ReplicateData> data;
  std::string data_error;
  try {
    data = replicate_data(plan, src, replicate);
  } catch (const std::exception& e) {
    data_error = std::string("error: data: ") + e.what();
  }

  for (SchemeKind kind : plan.schemes) {
    const std::uint8_t sidx = scheme_index(kind);
    double reg = default_reg(kind, plan.defaults);
    double lambda1 = plan.defaults.lambda1;
    std::optional<erm::StageOne> stage1;
    std::string stage_error = data_error;
    if (data) {
      try {
        if (plan.tuning.enabled) {
          Rng tune_rng = make_rng(
              plan.seed, StreamId{static_cast<std::uint32_t>(replicate), sidx, 0, 0, 1});
          const auto tuned = bootstrap_tune(
              data->train, data->train_p_treated, kind, plan.defaults,
              plan.tuning.scheme_grid(kind), plan.tuning.lambda1, plan.tuning.bootstrap,
              data->M, data->M_out, tune_rng);
          reg = tuned.scheme_reg;
          lambda1 = tuned.lambda1;
        }
        stage1 = erm::solve_stage_one(data->train, make_scheme(kind, reg, plan.defaults, data->M),
                                      ProblemConstants::itr(data->M, data->M_out, lambda1));
      } catch (const std::exception& e) {
        stage_error = std::string("error: stage one: ") + e.what();
      }
    }

    for (int variant = 0; variant < (plan.baseline ? 2 : 1); ++variant) {
      const bool is_baseline = variant == 1;
      for (std::size_t m = 0; m < plan.mechanisms.size(); ++m) {
        for (std::size_t e = 0; e < plan.epsilons.size(); ++e) {
          const auto start = Clock::now();
          ResultRow row;
          row.replicate = replicate;
          row.scheme = (is_baseline ? "composition-" : "") + to_string(kind);
          row.mechanism = privacy::to_string(plan.mechanisms[m]);
          row.epsilon = plan.epsilons[e];
          row.seed = plan.seed;
          row.scheme_reg = reg;
          row.lambda1 = lambda1;
          if (!stage1) {
            row.status = stage_error;
            rows.push_back(row);
            continue;
          }
          try {
            const erm::ErmSpec spec = make_spec(data->M, data->M_out, lambda1);
            const Index n = data->train.size();
            const auto& w = stage1->solution.weights;
            const stability::StabilityBudget budget =
                is_baseline ? stability::budget_universal(n)
                            : stability::budget_from_scheme(
                                  stage1->bound_params, n, stability::default_w_max(w));
            const auto pp = privacy_for(plan.mechanisms[m], plan.epsilons[e], plan, n);
            const auto cal =
                privacy::calibrate(pp, spec.constants, budget, n, data->train.dim());
            Rng noise_rng = make_rng(
                plan.seed,
                StreamId{static_cast<std::uint32_t>(replicate), sidx,
                         static_cast<std::uint8_t>(m), static_cast<std::uint16_t>(e),
                         static_cast<std::uint8_t>(is_baseline ? 3 : 2)});
            const auto sol = erm::solve_private(data->train, w, spec, cal, noise_rng);
            row.noise_scale = cal.noise_scale;
            row.gamma_ridge = cal.gamma_ridge;
            row.w1_bar = budget.w1_bar;
            row.w2_bar = budget.w2_bar;
            evaluate_into(row, itr::DecisionRule{sol.theta}, *data);
          } catch (const std::exception& ex) {
            row.status = std::string("error: ") + ex.what();
          }
          if (plan.timing)
            row.wall_time_ms =
                std::chrono::duration<double, std::milli>(Clock::now() - start).count();
          rows.push_back(row);
        }
      }
    }
  }
  return rows;
}

/// Runs every cell of the plan. Replicates are distributed over
/// `plan.workers` threads; the output order is fixed by replicate index.
inline std::vector<ResultRow> run_plan(const ExperimentPlan& plan,
                                       const PreparedSource& src) {
  plan.check();
  std::vector<std::vector<ResultRow>> per_rep(static_cast<std::size_t>(plan.replicates));
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int r = next++; r < plan.replicates; r = next++)
      per_rep[static_cast<std::size_t>(r)] = run_replicate(plan, src, r);
  };
  const int threads = std::min(plan.workers, plan.replicates);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  std::vector<ResultRow> rows;
  for (auto& block : per_rep)
    rows.insert(rows.end(), block.begin(), block.end());
  return rows;
}

inline std::vector<ResultRow> run_plan(const ExperimentPlan& plan) {
  plan.check();
  return run_plan(plan, prepare_source(plan));
}

// ---------------------------------------------------------------------------
// Summaries and output

struct SummaryRow {
  std::string scheme;
  std::string mechanism;
  double epsilon = 0.0;
  Index count = 0;
  std::optional<double> mean_accuracy;
  std::optional<double> sd_accuracy;
  std::optional<double> mean_value;
  std::optional<double> sd_value;
};

inline std::pair<double, double> mean_sd(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1.0))};
}

/// Mean and sample SD per (scheme, mechanism, epsilon) over successful rows,
/// in order of first appearance.
inline std::vector<SummaryRow> summarize(const std::vector<ResultRow>& rows) {
  if (rows.empty()) throw std::invalid_argument("cannot summarise an empty table");
  using Key = std::tuple<std::string, std::string, double>;
  std::vector<Key> order;
  std::map<Key, std::pair<std::vector<double>, std::vector<double>>> groups;
  std::map<Key, Index> counts;
  for (const auto& r : rows) {
    const Key key{r.scheme, r.mechanism, r.epsilon};
    if (!groups.count(key)) order.push_back(key);
    auto& g = groups[key];
    if (r.status != "ok") continue;
    ++counts[key];
    if (r.accuracy) g.first.push_back(*r.accuracy);
    if (r.value) g.second.push_back(*r.value);
  }
  std::vector<SummaryRow> out;
  for (const auto& key : order) {
    SummaryRow s;
    std::tie(s.scheme, s.mechanism, s.epsilon) = key;
    s.count = counts[key];
    const auto& g = groups[key];
    if (!g.first.empty()) std::tie(s.mean_accuracy, s.sd_accuracy) = mean_sd(g.first);
    if (!g.second.empty()) std::tie(s.mean_value, s.sd_value) = mean_sd(g.second);
    out.push_back(s);
  }
  return out;
}

inline std::string format_optional(const std::optional<double>& v) {
  return v ? io::format_double(*v) : "NA";
}

inline std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
  return out;
}

inline std::string join_doubles(const std::vector<double>& v) {
  std::vector<std::string> s;
  for (double x : v) s.push_back(io::format_double(x));
  return join(s, ",");
}

/// `# key: value` lines describing everything needed to reproduce a run.
inline std::vector<std::pair<std::string, std::string>> plan_metadata(
    const ExperimentPlan& plan, const PreparedSource& src) {
  std::vector<std::pair<std::string, std::string>> md;
  md.emplace_back("dp2erm_version", kVersion);
  md.emplace_back("seed", std::to_string(plan.seed));
  if (plan.scenario) {
    md.emplace_back("source", "scenario");
    md.emplace_back("scenario", simgen::to_string(plan.scenario->id));
    md.emplace_back("n", std::to_string(plan.scenario->n));
    md.emplace_back("n_test", std::to_string(plan.scenario->n_test));
    md.emplace_back("p", std::to_string(plan.scenario->p));
    md.emplace_back("tree_literal", plan.scenario->tree_literal ? "true" : "false");
    md.emplace_back("propensity", "true generator propensities");
  } else {
    md.emplace_back("source", "csv");
    md.emplace_back("csv", *plan.csv_path);
    md.emplace_back("train_fraction", io::format_double(plan.train_fraction));
    md.emplace_back("propensity", src.csv && src.csv->p_treated
                                      ? "supplied pi column"
                                      : "logistic fit with intercept per split");
    md.emplace_back("m_out_rule", plan.m_out ? "user supplied" : "max |y| of the CSV (data-dependent)");
  }
  md.emplace_back("M", io::format_double(src.M));
  md.emplace_back("M_out", io::format_double(src.M_out));
  std::vector<std::string> schemes, mechs;
  for (auto s : plan.schemes) schemes.push_back(to_string(s));
  for (auto m : plan.mechanisms) mechs.push_back(privacy::to_string(m));
  md.emplace_back("schemes", join(schemes, ","));
  md.emplace_back("mechanisms", join(mechs, ","));
  md.emplace_back("epsilons", join_doubles(plan.epsilons));
  md.emplace_back("delta", plan.delta ? io::format_double(*plan.delta) : "1/n");
  md.emplace_back("replicates", std::to_string(plan.replicates));
  md.emplace_back("baseline", plan.baseline ? "true" : "false");
  md.emplace_back("tuning", plan.tuning.enabled ? "bootstrap" : "off");
  if (plan.tuning.enabled) {
    md.emplace_back("bootstrap_B", std::to_string(plan.tuning.bootstrap));
    md.emplace_back("grid_lambda_ipw", join_doubles(plan.tuning.lambda_ipw));
    md.emplace_back("grid_lambda_mmd", join_doubles(plan.tuning.lambda_mmd));
    md.emplace_back("grid_lambda_ebw", join_doubles(plan.tuning.lambda_ebw));
    md.emplace_back("grid_lambda1", join_doubles(plan.tuning.lambda1));
  }
  const auto& d = plan.defaults;
  md.emplace_back("ipw", "R=" + io::format_double(d.ipw_R) +
                             " lambda_ipw=" + io::format_double(d.lambda_ipw));
  md.emplace_back("mmd", "alpha=" + io::format_double(d.mmd_alpha) +
                             " lambda_mmd=" + io::format_double(d.lambda_mmd) +
                             " cap=10n/n_min kernel=rbf bandwidth=M");
  md.emplace_back("ebw", "R=" + io::format_double(d.ebw_R) +
                             " lambda_ebw=" + io::format_double(d.lambda_ebw) +
                             " norm=l2 moment_scale=1/(2 max|G|) from M moments=" +
                             (d.ebw_moments == weights::MomentSet::first
                                  ? "first"
                                  : "first_and_squares"));
  md.emplace_back("lambda1", io::format_double(d.lambda1));
  md.emplace_back("budget_rule",
                  "W1=sqrt(n)B+w_max, W2=sqrt((B^2+2w_max^2)(1+n)), capped at 3n and "
                  "sqrt(6)(n+1)^1.5; w_max=max(1, 2 max w)");
  md.emplace_back("rng", "philox4x64-10 keyed by (seed, replicate|scheme|mechanism|eps|stage)");
  md.emplace_back("wall_time", plan.timing ? "measured" : "disabled (written as 0)");
  return md;
}

inline void write_metadata(std::ostream& out,
                           const std::vector<std::pair<std::string, std::string>>& md) {
  for (const auto& [k, v] : md) out << "# " << k << ": " << v << '\n';
}

inline void write_results_csv(std::ostream& out, const std::vector<ResultRow>& rows) {
  out << "replicate,scheme,mechanism,epsilon,accuracy,value,noise_scale,gamma_ridge,"
         "w1_bar,w2_bar,wall_time_ms,seed,status\n";
  for (const auto& r : rows) {
    std::string status = r.status;
    std::replace(status.begin(), status.end(), ',', ';');
    std::replace(status.begin(), status.end(), '\n', ' ');
    out << r.replicate << ',' << r.scheme << ',' << r.mechanism << ','
        << io::format_double(r.epsilon) << ',' << format_optional(r.accuracy) << ','
        << format_optional(r.value) << ',' << io::format_double(r.noise_scale) << ','
        << io::format_double(r.gamma_ridge) << ',' << io::format_double(r.w1_bar) << ','
        << io::format_double(r.w2_bar) << ',' << io::format_double(r.wall_time_ms) << ','
        << r.seed << ',' << status << '\n';
  }
}

inline void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows) {
  out << "scheme,mechanism,epsilon,count,mean_accuracy,sd_accuracy,mean_value,sd_value\n";
  for (const auto& s : rows)
    out << s.scheme << ',' << s.mechanism << ',' << io::format_double(s.epsilon) << ','
        << s.count << ',' << format_optional(s.mean_accuracy) << ','
        << format_optional(s.sd_accuracy) << ',' << format_optional(s.mean_value) << ','
        << format_optional(s.sd_value) << '\n';
}

/// Whitespace-delimited `epsilon mean_acc sd_acc` for one (scheme, mechanism).
inline void write_plot_data(std::ostream& out, const std::vector<SummaryRow>& rows,
                            const std::string& scheme, const std::string& mechanism) {
  out << "# epsilon mean_acc sd_acc\n";
  for (const auto& s : rows)
    if (s.scheme == scheme && s.mechanism == mechanism)
      out << io::format_double(s.epsilon) << ' ' << format_optional(s.mean_accuracy)
          << ' ' << format_optional(s.sd_accuracy) << '\n';
}

/// Reads a results CSV back (comment lines skipped).
inline std::vector<ResultRow> read_results_csv(std::istream& in) {
  std::string line;
  std::vector<ResultRow> rows;
  bool header_seen = false;
  std::size_t line_no = 0;
  auto opt = [](const std::string& s, std::size_t ln, const char* col) -> std::optional<double> {
    if (s == "NA") return std::nullopt;
    return io::detail::parse_double(s, ln, col);
  };
  auto num = [](const std::string& s, std::size_t ln, const char* col) {
    if (s == "inf") return privacy::kInfinity;
    return io::detail::parse_double(s, ln, col);
  };
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = io::detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;
      if (t.rfind("replicate,", 0) != 0)
        throw io::CsvError("results CSV has an unexpected header");
      continue;
    }
    const auto c = io::detail::split(t);
    if (c.size() != 13)
      throw io::CsvError("row " + std::to_string(line_no) + ": expected 13 columns");
    ResultRow r;
    r.replicate = std::stoi(c[0]);
    r.scheme = c[1];
    r.mechanism = c[2];
    r.epsilon = num(c[3], line_no, "epsilon");
    r.accuracy = opt(c[4], line_no, "accuracy");
    r.value = opt(c[5], line_no, "value");
    r.noise_scale = num(c[6], line_no, "noise_scale");
    r.gamma_ridge = num(c[7], line_no, "gamma_ridge");
    r.w1_bar = num(c[8], line_no, "w1_bar");
    r.w2_bar = num(c[9], line_no, "w2_bar");
    r.wall_time_ms = num(c[10], line_no, "wall_time_ms");
    r.seed = std::stoull(c[11]);
    r.status = c[12];
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Plan files

/// Applies `key = value` lines (blank lines and '#' comments ignored).
/// Returns the `out` key if present.
inline std::optional<std::string> apply_plan_text(ExperimentPlan& plan, std::istream& in) {
  auto parse_list = [](const std::string& v) {
    std::vector<std::string> parts;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = io::detail::trim(item);
      if (!item.empty()) parts.push_back(item);
    }
    return parts;
  };
  auto parse_num = [](const std::string& v, const std::string& key) {
    if (v == "inf" || v == "Inf" || v == "INF") return privacy::kInfinity;
    try {
      return io::detail::parse_double(v, 0, key);
    } catch (const std::exception&) {
      throw std::invalid_argument("plan key '" + key + "': '" + v + "' is not a number");
    }
  };
  auto parse_nums = [&](const std::string& v, const std::string& key) {
    std::vector<double> out;
    for (const auto& s : parse_list(v)) out.push_back(parse_num(s, key));
    return out;
  };
  auto parse_bool = [](const std::string& v, const std::string& key) {
    if (v == "true" || v == "on" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "off" || v == "0" || v == "no") return false;
    throw std::invalid_argument("plan key '" + key + "' expects true/false");
  };
  auto scenario = [&]() -> simgen::ScenarioSpec& {
    if (!plan.scenario) plan.scenario = simgen::ScenarioSpec{};
    return *plan.scenario;
  };

  std::optional<std::string> out_dir;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = io::detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("plan line " + std::to_string(line_no) +
                                  ": expected key = value");
    const std::string key = io::detail::trim(t.substr(0, eq));
    const std::string value = io::detail::trim(t.substr(eq + 1));
    if (key == "scenario") {
      scenario().id = simgen::parse_scenario(value);
      plan.csv_path.reset();
    } else if (key == "csv") {
      plan.csv_path = value;
      plan.scenario.reset();
    } else if (key == "n") scenario().n = static_cast<Index>(parse_num(value, key));
    else if (key == "n_test") scenario().n_test = static_cast<Index>(parse_num(value, key));
    else if (key == "p") scenario().p = static_cast<Index>(parse_num(value, key));
    else if (key == "tree_literal") scenario().tree_literal = parse_bool(value, key);
    else if (key == "train_fraction") plan.train_fraction = parse_num(value, key);
    else if (key == "m_out") plan.m_out = parse_num(value, key);
    else if (key == "schemes") {
      plan.schemes.clear();
      for (const auto& s : parse_list(value)) plan.schemes.push_back(parse_scheme(s));
    } else if (key == "mechanisms") {
      plan.mechanisms.clear();
      for (const auto& s : parse_list(value))
        plan.mechanisms.push_back(privacy::parse_mechanism(s));
    } else if (key == "epsilons") plan.epsilons = parse_nums(value, key);
    else if (key == "delta") {
      if (value == "1/n") plan.delta.reset();
      else plan.delta = parse_num(value, key);
    } else if (key == "replicates") plan.replicates = static_cast<int>(parse_num(value, key));
    else if (key == "seed") plan.seed = std::stoull(value);
    else if (key == "workers") plan.workers = static_cast<int>(parse_num(value, key));
    else if (key == "baseline") plan.baseline = parse_bool(value, key);
    else if (key == "timing") plan.timing = parse_bool(value, key);
    else if (key == "tuning") plan.tuning.enabled = parse_bool(value, key);
    else if (key == "bootstrap") plan.tuning.bootstrap = static_cast<int>(parse_num(value, key));
    else if (key == "grid_lambda_ipw") plan.tuning.lambda_ipw = parse_nums(value, key);
    else if (key == "grid_lambda_mmd") plan.tuning.lambda_mmd = parse_nums(value, key);
    else if (key == "grid_lambda_ebw") plan.tuning.lambda_ebw = parse_nums(value, key);
    else if (key == "grid_lambda1") plan.tuning.lambda1 = parse_nums(value, key);
    else if (key == "ipw_R") plan.defaults.ipw_R = parse_num(value, key);
    else if (key == "lambda_ipw") plan.defaults.lambda_ipw = parse_num(value, key);
    else if (key == "mmd_alpha") plan.defaults.mmd_alpha = parse_num(value, key);
    else if (key == "lambda_mmd") plan.defaults.lambda_mmd = parse_num(value, key);
    else if (key == "ebw_R") plan.defaults.ebw_R = parse_num(value, key);
    else if (key == "lambda_ebw") plan.defaults.lambda_ebw = parse_num(value, key);
    else if (key == "ebw_moments") {
      if (value == "first") plan.defaults.ebw_moments = weights::MomentSet::first;
      else if (value == "first_and_squares")
        plan.defaults.ebw_moments = weights::MomentSet::first_and_squares;
      else throw std::invalid_argument("ebw_moments must be first or first_and_squares");
    } else if (key == "lambda1") plan.defaults.lambda1 = parse_num(value, key);
    else if (key == "out") out_dir = value;
    else
      throw std::invalid_argument("plan line " + std::to_string(line_no) +
                                  ": unknown key '" + key + "'");
  }
  return out_dir;
}

}  // namespace dp2erm::bench
