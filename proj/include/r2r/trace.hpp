#ifndef R2R_TRACE_HPP
#define R2R_TRACE_HPP

#include <cstdio>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "r2r/mdp_env.hpp"

namespace r2r {

/// Per-step log of one episode. Row k is the plant after step k+1, at time (k+1)*dt.
struct EpisodeTrace {
  int n_sections = 0;
  double dt = 0.01;
  std::vector<double> time;
  std::vector<Vec> tension;
  std::vector<Vec> tension_ref;
  std::vector<Vec> velocity;
  std::vector<Vec> velocity_ref;
  std::vector<Vec> u_applied;  ///< torques [N m], after noise
  std::vector<Vec> u_command;  ///< smoothed normalized action, pre-noise
  std::vector<double> reward;
  std::vector<int> success;
  std::vector<StepEvent> step_events;

  [[nodiscard]] std::size_t size() const { return time.size(); }
  [[nodiscard]] double episode_return() const {
    double s = 0.0;
    for (double r : reward) s += r;
    return s;
  }

  void record(const StepOutcome& out, int step_index) {
    time.push_back(step_index * dt);
    tension.push_back(out.info.tensions);
    tension_ref.push_back(out.info.tension_ref);
    velocity.push_back(out.info.velocities);
    velocity_ref.push_back(out.info.velocity_ref);
    u_applied.push_back(out.info.applied_torques);
    u_command.push_back(out.info.commanded);
    reward.push_back(out.reward);
    success.push_back(out.info.success ? 1 : 0);
  }
};

/// Decides the raw normalized action from the environment and its observation.
using PolicyFn = std::function<Vec(const TensionEnv&, const Observation&)>;

/// Runs the already reset episode to truncation, returning its trace.
inline EpisodeTrace run_episode(TensionEnv& env, const Observation& first_obs,
                                const PolicyFn& policy) {
  EpisodeTrace trace;
  trace.n_sections = env.n_sections();
  trace.dt = env.params().dt;
  trace.step_events = env.profile().step_events;
  Observation obs = first_obs;
  while (env.active()) {
    StepOutcome out = env.step(policy(env, obs));
    trace.record(out, env.step_index());
    obs = std::move(out.observation);
  }
  return trace;
}

namespace detail {
inline std::string fmt_num(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}
}  // namespace detail

/// CSV: step, time_s, T_i, T_ref_i, v_i, v_ref_i, u_applied_i per section, reward, success.
inline void write_trace_csv(std::ostream& os, const EpisodeTrace& tr) {
  const int n = tr.n_sections;
  os << "step,time_s";
  for (const char* col : {"T", "T_ref", "v", "v_ref", "u_applied"}) {
    for (int i = 1; i <= n; ++i) os << ',' << col << '_' << i;
  }
  os << ",reward,success\n";
  for (std::size_t k = 0; k < tr.size(); ++k) {
    os << k + 1 << ',' << detail::fmt_num(tr.time[k]);
    for (const auto* series :
         {&tr.tension, &tr.tension_ref, &tr.velocity, &tr.velocity_ref, &tr.u_applied}) {
      for (int i = 0; i < n; ++i) os << ',' << detail::fmt_num((*series)[k][i]);
    }
    os << ',' << detail::fmt_num(tr.reward[k]) << ',' << tr.success[k] << '\n';
  }
}

}  // namespace r2r

#endif  // R2R_TRACE_HPP
