#ifndef R2R_EVALBENCH_HPP
#define R2R_EVALBENCH_HPP

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "r2r/mdp_env.hpp"
#include "r2r/sac.hpp"
#include "r2r/trace.hpp"

namespace r2r {

/// Band conventions for step-response metrics.
struct StepBands {
  double rise_lo = 0.1;
  double rise_hi = 0.9;
  double settle_fraction = 0.02;  ///< of the step magnitude, around the final value
  double coupling_band = 0.1;     ///< N, around the undisturbed sections' references
};

struct StepResponse {
  std::optional<double> rise_time;      ///< s; empty when the 90% level is never reached
  std::optional<double> settling_time;  ///< s from the step; empty if still outside at the end
  double overshoot_pct = 0.0;
  double coupling_max_deviation = 0.0;        ///< N
  std::optional<double> coupling_settling;    ///< s from the step
  int section = 0;                            ///< stepped section, zero-based
  double section_mae = 0.0;                   ///< N, stepped section over the whole episode
};

struct MetricsReport {
  std::string controller;
  int episodes = 0;
  double tension_mae = 0.0;
  double tension_rmse = 0.0;
  double velocity_mae = 0.0;
  double velocity_rmse = 0.0;
  double mean_return = 0.0;
  double return_std = 0.0;
  double smoothness = 0.0;  ///< Var of consecutive commanded-action differences
  std::vector<double> section_tension_mae;
  std::optional<StepResponse> step;
};

/**
 * Pools absolute/squared errors over every section, step and episode;
 * smoothness is the variance of consecutive differences of the normalized
 * commanded action, pooled over sections and episodes.
 */
inline MetricsReport tracking_metrics(std::span<const EpisodeTrace> traces) {
  if (traces.empty()) throw std::invalid_argument("tracking_metrics: no traces");
  const int n = traces.front().n_sections;
  MetricsReport rep;
  rep.episodes = static_cast<int>(traces.size());
  rep.section_tension_mae.assign(static_cast<std::size_t>(n), 0.0);
  double st_abs = 0, st_sq = 0, sv_abs = 0, sv_sq = 0;
  std::size_t count = 0, steps_per_section = 0;
  double du_sum = 0, du_sq = 0;
  std::size_t du_count = 0;
  std::vector<double> returns;
  for (const auto& tr : traces) {
    for (std::size_t k = 0; k < tr.size(); ++k) {
      for (int i = 0; i < n; ++i) {
        const double et = tr.tension[k][i] - tr.tension_ref[k][i];
        const double ev = tr.velocity[k][i] - tr.velocity_ref[k][i];
        st_abs += std::abs(et);
        st_sq += et * et;
        sv_abs += std::abs(ev);
        sv_sq += ev * ev;
        rep.section_tension_mae[static_cast<std::size_t>(i)] += std::abs(et);
        ++count;
        if (k > 0) {
          const double du = tr.u_command[k][i] - tr.u_command[k - 1][i];
          du_sum += du;
          du_sq += du * du;
          ++du_count;
        }
      }
      ++steps_per_section;
    }
    returns.push_back(tr.episode_return());
  }
  const double c = static_cast<double>(count);
  rep.tension_mae = st_abs / c;
  rep.tension_rmse = std::sqrt(st_sq / c);
  rep.velocity_mae = sv_abs / c;
  rep.velocity_rmse = std::sqrt(sv_sq / c);
  for (auto& m : rep.section_tension_mae) m /= static_cast<double>(steps_per_section);
  if (du_count > 0) {
    const double mean = du_sum / static_cast<double>(du_count);
    rep.smoothness = std::max(0.0, du_sq / static_cast<double>(du_count) - mean * mean);
  }
  double rs = 0;
  for (double r : returns) rs += r;
  rep.mean_return = rs / static_cast<double>(returns.size());
  double var = 0;
  for (double r : returns) var += (r - rep.mean_return) * (r - rep.mean_return);
  rep.return_std = std::sqrt(var / static_cast<double>(returns.size()));
  return rep;
}

namespace detail {

/// Time at which `y` first reaches `level` after index `from`, linearly interpolated.
inline std::optional<double> first_crossing(const std::vector<double>& t,
                                            const std::vector<double>& y, std::size_t from,
                                            double level) {
  for (std::size_t k = from; k < y.size(); ++k) {
    if (y[k] >= level) {
      if (k == from) return t[k];
      const double y0 = y[k - 1], y1 = y[k];
      const double frac = y1 == y0 ? 1.0 : (level - y0) / (y1 - y0);
      return t[k - 1] + frac * (t[k] - t[k - 1]);
    }
  }
  return std::nullopt;
}

/// Time of the first sample after the last one outside the band, relative to t0.
template <typename Outside>
std::optional<double> settle_after(const std::vector<double>& t, std::size_t from, double t0,
                                   Outside outside) {
  std::optional<std::size_t> last_out;
  for (std::size_t k = from; k < t.size(); ++k) {
    if (outside(k)) last_out = k;
  }
  if (!last_out) return 0.0;
  if (*last_out + 1 >= t.size()) return std::nullopt;
  return t[*last_out + 1] - t0;
}

}  // namespace detail

/**
 * Step-response figures for `section` stepping T_before -> T_after at
 * `step_time`. Samples at or after step_time are considered.
 */
inline StepResponse step_metrics(const EpisodeTrace& tr, int section, double step_time,
                                 double t_before, double t_after, const StepBands& bands = {}) {
  if (tr.size() == 0) throw std::invalid_argument("step_metrics: empty trace");
  const double mag = t_after - t_before;
  if (mag == 0.0) throw std::invalid_argument("step_metrics: zero step magnitude");
  const double sign = mag > 0 ? 1.0 : -1.0;
  const double eps = 1e-9 * std::max(1.0, std::abs(step_time));

  std::size_t from = tr.size();
  for (std::size_t k = 0; k < tr.size(); ++k) {
    if (tr.time[k] >= step_time - eps) {
      from = k;
      break;
    }
  }
  if (from >= tr.size()) throw std::invalid_argument("step_metrics: trace ends before the step");

  std::vector<double> progress(tr.size());
  for (std::size_t k = 0; k < tr.size(); ++k) {
    progress[k] = (tr.tension[k][section] - t_before) / mag;
  }

  StepResponse out;
  const auto t_lo = detail::first_crossing(tr.time, progress, from, bands.rise_lo);
  const auto t_hi = detail::first_crossing(tr.time, progress, from, bands.rise_hi);
  if (t_lo && t_hi) out.rise_time = *t_hi - *t_lo;

  const double band = bands.settle_fraction * std::abs(mag);
  out.settling_time = detail::settle_after(tr.time, from, step_time, [&](std::size_t k) {
    return std::abs(tr.tension[k][section] - t_after) > band;
  });

  double peak = 0.0;
  for (std::size_t k = from; k < tr.size(); ++k) {
    peak = std::max(peak, sign * (tr.tension[k][section] - t_after) / std::abs(mag));
  }
  out.overshoot_pct = 100.0 * peak;

  double dev = 0.0;
  for (std::size_t k = from; k < tr.size(); ++k) {
    for (int i = 0; i < tr.n_sections; ++i) {
      if (i == section) continue;
      dev = std::max(dev, std::abs(tr.tension[k][i] - tr.tension_ref[k][i]));
    }
  }
  out.coupling_max_deviation = dev;
  out.coupling_settling = detail::settle_after(tr.time, from, step_time, [&](std::size_t k) {
    for (int i = 0; i < tr.n_sections; ++i) {
      if (i != section && std::abs(tr.tension[k][i] - tr.tension_ref[k][i]) > bands.coupling_band) {
        return true;
      }
    }
    return false;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Benchmark scenarios

enum class TestCase { kNominal = 1, kStep = 2 };

struct ScenarioSpec {
  double nominal_tension = 30.0;
  double unwind_velocity = 0.01;
  int step_section = 1;  ///< zero-based: the middle span of three
  double step_from = 20.0;
  double step_to = 40.0;
  double step_time = 0.5;
};

/// Case 1: constant nominal tension everywhere. Case 2: one span steps from_ -> to at step_time.
inline ReferenceProfile test_case_profile(TestCase tc, const PlantParams& plant,
                                          const EnvConfig& cfg, const ScenarioSpec& spec = {}) {
  Vec base = Vec::Constant(plant.n_sections, spec.nominal_tension);
  if (tc == TestCase::kNominal) return make_profile(plant, cfg, base, spec.unwind_velocity);
  if (spec.step_section < 0 || spec.step_section >= plant.n_sections) {
    throw std::invalid_argument("test case 2: step section out of range");
  }
  base[spec.step_section] = spec.step_from;
  StepEvent ev;
  ev.section = spec.step_section;
  ev.step = static_cast<int>(std::lround(spec.step_time / plant.dt));
  ev.old_tension = spec.step_from;
  ev.new_tension = spec.step_to;
  return make_profile(plant, cfg, base, spec.unwind_velocity, {ev});
}

struct TestCaseResult {
  std::vector<EpisodeTrace> traces;
  MetricsReport report;
};

/// Builds a fresh policy per episode (controllers may keep internal state).
using PolicyFactory = std::function<PolicyFn()>;

/**
 * Runs `n_episodes` of a benchmark case. Episode k's environment stream
 * depends only on (seed, case, k), so different controllers see identical
 * noise sequences.
 */
inline TestCaseResult run_test_case(TestCase tc, const PolicyFactory& make_policy_fn,
                                    const std::string& name, const PlantParams& plant,
                                    const EnvConfig& cfg, int n_episodes, std::uint64_t seed,
                                    const ScenarioSpec& spec = {},
                                    const StepBands& bands = {}) {
  TestCaseResult res;
  const ReferenceProfile profile = test_case_profile(tc, plant, cfg, spec);
  for (int k = 0; k < n_episodes; ++k) {
    TensionEnv env(plant, cfg,
                   derive_seed({seed, static_cast<std::uint64_t>(tc),
                                static_cast<std::uint64_t>(k)}));
    const Observation obs = env.reset(profile);
    res.traces.push_back(run_episode(env, obs, make_policy_fn()));
  }
  res.report = tracking_metrics(res.traces);
  res.report.controller = name;
  if (tc == TestCase::kStep) {
    StepResponse agg;
    double rise = 0, settle = 0, cset = 0;
    bool rise_ok = true, settle_ok = true, cset_ok = true;
    for (const auto& tr : res.traces) {
      const StepResponse s =
          step_metrics(tr, spec.step_section, spec.step_time, spec.step_from, spec.step_to, bands);
      if (s.rise_time) rise += *s.rise_time; else rise_ok = false;
      if (s.settling_time) settle += *s.settling_time; else settle_ok = false;
      if (s.coupling_settling) cset += *s.coupling_settling; else cset_ok = false;
      agg.overshoot_pct += s.overshoot_pct;
      agg.coupling_max_deviation += s.coupling_max_deviation;
    }
    const double ne = static_cast<double>(res.traces.size());
    if (rise_ok) agg.rise_time = rise / ne;
    if (settle_ok) agg.settling_time = settle / ne;
    if (cset_ok) agg.coupling_settling = cset / ne;
    agg.overshoot_pct /= ne;
    agg.coupling_max_deviation /= ne;
    agg.section = spec.step_section;
    agg.section_mae = res.report.section_tension_mae[static_cast<std::size_t>(spec.step_section)];
    res.report.step = agg;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Reporting

/// Percentage improvement of `value` over `baseline` for lower-is-better metrics.
inline double improvement_pct(double value, double baseline) {
  if (baseline == 0.0) return value == 0.0 ? 0.0 : -std::numeric_limits<double>::infinity();
  return (1.0 - value / baseline) * 100.0;
}

struct ComparisonRow {
  std::string metric;
  std::vector<double> values;        ///< one per report
  std::vector<double> improvements;  ///< vs the baseline report, lower-is-better metrics
  bool lower_is_better = true;
};

struct ComparisonTable {
  std::vector<std::string> controllers;
  std::string baseline;
  std::vector<ComparisonRow> rows;
};

/// Absolute metrics and improvements relative to `reports[baseline_index]` (default: last).
inline ComparisonTable compare_controllers(std::span<const MetricsReport> reports,
                                           int baseline_index = -1) {
  if (reports.size() < 2) throw std::invalid_argument("compare_controllers: need >= 2 reports");
  const std::size_t base = baseline_index < 0 ? reports.size() - 1
                                              : static_cast<std::size_t>(baseline_index);
  ComparisonTable tab;
  for (const auto& r : reports) tab.controllers.push_back(r.controller);
  tab.baseline = reports[base].controller;

  auto add = [&](const std::string& name, auto getter, bool lower_better) {
    ComparisonRow row{name, {}, {}, lower_better};
    for (const auto& r : reports) row.values.push_back(getter(r));
    for (const auto& r : reports) {
      const double v = getter(r), b = getter(reports[base]);
      row.improvements.push_back(lower_better ? improvement_pct(v, b)
                                              : (b == 0.0 ? 0.0 : (v / b - 1.0) * 100.0));
    }
    tab.rows.push_back(std::move(row));
  };
  add("tension_mae_N", [](const MetricsReport& r) { return r.tension_mae; }, true);
  add("tension_rmse_N", [](const MetricsReport& r) { return r.tension_rmse; }, true);
  add("velocity_mae_mps", [](const MetricsReport& r) { return r.velocity_mae; }, true);
  add("velocity_rmse_mps", [](const MetricsReport& r) { return r.velocity_rmse; }, true);
  add("mean_return", [](const MetricsReport& r) { return r.mean_return; }, false);
  add("smoothness_var_du", [](const MetricsReport& r) { return r.smoothness; }, true);
  bool all_step = true;
  for (const auto& r : reports) all_step = all_step && r.step.has_value();
  if (all_step) {
    const auto nan = std::numeric_limits<double>::quiet_NaN();
    add("step_section_mae_N", [](const MetricsReport& r) { return r.step->section_mae; }, true);
    add("rise_time_s", [nan](const MetricsReport& r) { return r.step->rise_time.value_or(nan); },
        true);
    add("settling_time_s",
        [nan](const MetricsReport& r) { return r.step->settling_time.value_or(nan); }, true);
    add("overshoot_pct", [](const MetricsReport& r) { return r.step->overshoot_pct; }, true);
    add("coupling_max_dev_N",
        [](const MetricsReport& r) { return r.step->coupling_max_deviation; }, true);
    add("coupling_settling_s",
        [nan](const MetricsReport& r) { return r.step->coupling_settling.value_or(nan); }, true);
  }
  return tab;
}

namespace detail {
inline std::string fmt_opt(double x) { return std::isfinite(x) ? fmt_num(x) : std::string("---"); }
}  // namespace detail

/// CSV: metric, one column per controller, then "improvement_vs_<baseline>" per controller.
inline void write_comparison_csv(std::ostream& os, const ComparisonTable& tab) {
  os << "metric";
  for (const auto& c : tab.controllers) os << ',' << c;
  for (const auto& c : tab.controllers) os << ',' << c << "_vs_" << tab.baseline << "_pct";
  os << '\n';
  for (const auto& row : tab.rows) {
    os << row.metric;
    for (double v : row.values) os << ',' << detail::fmt_opt(v);
    for (double v : row.improvements) os << ',' << detail::fmt_opt(v);
    os << '\n';
  }
}

inline nlohmann::json to_json(const MetricsReport& r) {
  auto opt = [](const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  nlohmann::json j = {{"controller", r.controller},
                      {"episodes", r.episodes},
                      {"tension_mae", r.tension_mae},
                      {"tension_rmse", r.tension_rmse},
                      {"velocity_mae", r.velocity_mae},
                      {"velocity_rmse", r.velocity_rmse},
                      {"mean_return", r.mean_return},
                      {"return_std", r.return_std},
                      {"smoothness", r.smoothness},
                      {"section_tension_mae", r.section_tension_mae}};
  if (r.step) {
    j["step"] = {{"rise_time", opt(r.step->rise_time)},
                 {"settling_time", opt(r.step->settling_time)},
                 {"overshoot_pct", r.step->overshoot_pct},
                 {"coupling_max_deviation", r.step->coupling_max_deviation},
                 {"coupling_settling", opt(r.step->coupling_settling)},
                 {"section", r.step->section},
                 {"section_mae", r.step->section_mae}};
  }
  return j;
}

/// Long-format rows: variable, section, time, value, controller.
inline void write_long_csv(std::ostream& os, const EpisodeTrace& tr, const std::string& controller,
                           bool header = true) {
  if (header) os << "variable,section,time,value,controller\n";
  for (std::size_t k = 0; k < tr.size(); ++k) {
    for (int i = 0; i < tr.n_sections; ++i) {
      const std::pair<const char*, double> vals[] = {
          {"T", tr.tension[k][i]},        {"T_ref", tr.tension_ref[k][i]},
          {"v", tr.velocity[k][i]},       {"v_ref", tr.velocity_ref[k][i]},
          {"u_applied", tr.u_applied[k][i]}};
      for (const auto& [name, v] : vals) {
        os << name << ',' << i + 1 << ',' << detail::fmt_num(tr.time[k]) << ','
           << detail::fmt_num(v) << ',' << controller << '\n';
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Ablation

struct AblationEntry {
  CurriculumMode mode = CurriculumMode::kCurriculum;
  MetricsReport nominal;
  MetricsReport step;
  std::vector<std::int64_t> best_steps;
};

inline PolicyFactory actor_policy_factory(const Mlp& actor, int act_dim) {
  return [actor, act_dim] { return make_policy(actor, act_dim); };
}

/// Averages the numeric fields of per-seed reports (rise/settle undefined if any seed's is).
inline MetricsReport average_reports(const std::vector<MetricsReport>& rs) {
  if (rs.empty()) throw std::invalid_argument("average_reports: empty");
  MetricsReport out = rs.front();
  const double n = static_cast<double>(rs.size());
  auto avg = [&](auto getter) {
    double s = 0;
    for (const auto& r : rs) s += getter(r);
    return s / n;
  };
  out.tension_mae = avg([](const auto& r) { return r.tension_mae; });
  out.tension_rmse = avg([](const auto& r) { return r.tension_rmse; });
  out.velocity_mae = avg([](const auto& r) { return r.velocity_mae; });
  out.velocity_rmse = avg([](const auto& r) { return r.velocity_rmse; });
  out.mean_return = avg([](const auto& r) { return r.mean_return; });
  out.return_std = avg([](const auto& r) { return r.return_std; });
  out.smoothness = avg([](const auto& r) { return r.smoothness; });
  for (std::size_t i = 0; i < out.section_tension_mae.size(); ++i) {
    out.section_tension_mae[i] = avg([i](const auto& r) { return r.section_tension_mae[i]; });
  }
  if (out.step) {
    auto avg_opt = [&](auto getter) -> std::optional<double> {
      double s = 0;
      for (const auto& r : rs) {
        const std::optional<double> v = getter(r);
        if (!v) return std::nullopt;
        s += *v;
      }
      return s / n;
    };
    out.step->rise_time = avg_opt([](const auto& r) { return r.step->rise_time; });
    out.step->settling_time = avg_opt([](const auto& r) { return r.step->settling_time; });
    out.step->coupling_settling = avg_opt([](const auto& r) { return r.step->coupling_settling; });
    out.step->overshoot_pct = avg([](const auto& r) { return r.step->overshoot_pct; });
    out.step->coupling_max_deviation =
        avg([](const auto& r) { return r.step->coupling_max_deviation; });
    out.step->section_mae = avg([](const auto& r) { return r.step->section_mae; });
  }
  return out;
}

/// Evaluates trained actors for one mode on both benchmark cases and averages over seeds.
inline AblationEntry evaluate_ablation_mode(CurriculumMode mode, const std::vector<Mlp>& actors,
                                            const PlantParams& plant, const EnvConfig& env_cfg,
                                            int n_episodes, std::uint64_t eval_seed) {
  AblationEntry e;
  e.mode = mode;
  std::vector<MetricsReport> nominal, step;
  for (const auto& actor : actors) {
    const auto factory = actor_policy_factory(actor, plant.n_sections);
    nominal.push_back(run_test_case(TestCase::kNominal, factory, to_string(mode), plant, env_cfg,
                                    n_episodes, eval_seed)
                          .report);
    step.push_back(run_test_case(TestCase::kStep, factory, to_string(mode), plant, env_cfg,
                                 n_episodes, eval_seed)
                       .report);
  }
  e.nominal = average_reports(nominal);
  e.step = average_reports(step);
  return e;
}

/**
 * Trains every mode with identical hyperparameters for each seed, then
 * evaluates the best actor of each run on both benchmark cases.
 */
inline std::vector<AblationEntry> run_ablation(const PlantParams& plant, const EnvConfig& env_cfg,
                                               const SacConfig& sac_cfg,
                                               const std::vector<std::uint64_t>& seeds,
                                               int n_episodes, std::uint64_t eval_seed,
                                               const std::filesystem::path& output_dir = {},
                                               std::ostream* progress = nullptr) {
  std::vector<AblationEntry> out;
  for (CurriculumMode mode : {CurriculumMode::kCurriculum, CurriculumMode::kDomainRandomization,
                              CurriculumMode::kVanilla}) {
    SacConfig cfg = sac_cfg;
    cfg.schedule.mode = mode;
    std::vector<Mlp> actors;
    std::vector<std::int64_t> best_steps;
    for (auto seed : seeds) {
      TrainingOptions opts;
      if (!output_dir.empty()) {
        opts.output_dir = output_dir / to_string(mode) / ("seed_" + std::to_string(seed));
      }
      opts.progress = progress;
      TrainingResult tr = run_training(plant, env_cfg, cfg, seed, opts);
      actors.push_back(std::move(tr.best_actor));
      best_steps.push_back(tr.best_step);
    }
    AblationEntry e = evaluate_ablation_mode(mode, actors, plant, env_cfg, n_episodes, eval_seed);
    e.best_steps = std::move(best_steps);
    out.push_back(std::move(e));
  }
  return out;
}

/// Rows: metric; columns: one per training mode.
inline void write_ablation_csv(std::ostream& os, const std::vector<AblationEntry>& entries) {
  os << "metric";
  for (const auto& e : entries) os << ',' << to_string(e.mode);
  os << '\n';
  auto row = [&](const char* name, auto getter) {
    os << name;
    for (const auto& e : entries) os << ',' << detail::fmt_opt(getter(e));
    os << '\n';
  };
  const double nan = std::numeric_limits<double>::quiet_NaN();
  row("nominal_tension_mae_N", [](const AblationEntry& e) { return e.nominal.tension_mae; });
  row("nominal_tension_rmse_N", [](const AblationEntry& e) { return e.nominal.tension_rmse; });
  row("step_section_mae_N", [](const AblationEntry& e) { return e.step.step->section_mae; });
  row("rise_time_s", [nan](const AblationEntry& e) { return e.step.step->rise_time.value_or(nan); });
  row("settling_time_s",
      [nan](const AblationEntry& e) { return e.step.step->settling_time.value_or(nan); });
}

}  // namespace r2r

#endif  // R2R_EVALBENCH_HPP
