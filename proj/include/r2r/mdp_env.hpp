#ifndef R2R_MDP_ENV_HPP
#define R2R_MDP_ENV_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <vector>

#include "r2r/plant.hpp"

namespace r2r {

using Rng = std::mt19937_64;

/// Independent stream seed from a tuple of integers (e.g. master seed, case, episode).
inline std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) {
  std::vector<std::uint32_t> words;
  for (auto p : parts) {
    words.push_back(static_cast<std::uint32_t>(p));
    words.push_back(static_cast<std::uint32_t>(p >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
}

struct RewardWeights {
  double w_T = 100.0;
  double w_v = 1000.0;
  double w_c = 0.1;
  double w_s = 0.5;
  double w_viol = 100.0;
  double w_succ = 1.0;
  double lambda = 0.01;
};

/// Episode, normalization, action-pipeline and reward settings.
struct EnvConfig {
  double T_nominal = 30.0;
  double T_range = 40.0;
  double v_nominal = 0.01;
  double v_range = 0.02;
  double beta_smooth = 0.7;
  double noise_sigma = 0.05;
  int episode_len = 500;
  RewardWeights weights;
  double tension_lo = 10.0;
  double tension_hi = 50.0;
  double success_tol_T = 0.5;
  double success_tol_v = 0.001;

  void validate() const {
    if (!(T_range > 0.0) || !(v_range > 0.0)) {
      throw std::invalid_argument("env.T_range and env.v_range must be positive");
    }
    if (!(beta_smooth > 0.0 && beta_smooth <= 1.0)) {
      throw std::invalid_argument("env.beta_smooth must lie in (0, 1]");
    }
    if (!(noise_sigma >= 0.0)) throw std::invalid_argument("env.noise_sigma must be >= 0");
    if (episode_len < 1) throw std::invalid_argument("env.episode_len must be >= 1");
    if (!(tension_lo < tension_hi)) {
      throw std::invalid_argument("env.tension_bounds must satisfy lo < hi");
    }
    if (!(success_tol_T > 0.0) || !(success_tol_v > 0.0)) {
      throw std::invalid_argument("env success tolerances must be positive");
    }
  }
};

/// Sampling ranges for one curriculum stage.
struct CurriculumPhase {
  int id = 1;
  double tension_lo = 27.0;
  double tension_hi = 33.0;
  double velocity_lo = 0.0095;
  double velocity_hi = 0.0105;
  double step_change_prob = 0.1;

  void validate() const {
    if (!(tension_lo < tension_hi) || !(velocity_lo < velocity_hi)) {
      throw std::invalid_argument("curriculum phase requires lo < hi");
    }
    if (!(step_change_prob >= 0.0 && step_change_prob <= 1.0)) {
      throw std::invalid_argument("curriculum phase step_change_prob must lie in [0, 1]");
    }
  }
};

struct StepEvent {
  int section = 0;
  int step = 0;  ///< first reference column carrying the new tension
  double old_tension = 0.0;
  double new_tension = 0.0;
};

/**
 * Piecewise-constant reference trajectory. Column k holds the reference at
 * time k * dt, for k = 0..episode_len.
 */
struct ReferenceProfile {
  double unwind_velocity = 0.01;
  Mat tension_ref;   ///< N x (episode_len + 1)
  Mat velocity_ref;  ///< N x (episode_len + 1), continuity velocities per column
  std::vector<StepEvent> step_events;

  [[nodiscard]] int n_sections() const { return static_cast<int>(tension_ref.rows()); }
  [[nodiscard]] int columns() const { return static_cast<int>(tension_ref.cols()); }
  [[nodiscard]] Vec tension_at(int k) const {
    return tension_ref.col(std::clamp(k, 0, columns() - 1));
  }
  [[nodiscard]] Vec velocity_at(int k) const {
    return velocity_ref.col(std::clamp(k, 0, columns() - 1));
  }
};

/// Copy of `p` with the unwind velocity replaced.
inline PlantParams with_unwind_velocity(PlantParams p, double v0) {
  p.unwind_velocity_v0 = v0;
  return p;
}

/// Builds a profile from base tensions plus step events, filling continuity velocities.
inline ReferenceProfile make_profile(const PlantParams& params, const EnvConfig& cfg,
                                     const Vec& base_tensions, double unwind_velocity,
                                     std::vector<StepEvent> events = {}) {
  const int n = params.n_sections;
  if (base_tensions.size() != n) throw std::invalid_argument("make_profile: wrong length");
  const int cols = cfg.episode_len + 1;
  ReferenceProfile prof;
  prof.unwind_velocity = unwind_velocity;
  prof.tension_ref = base_tensions.replicate(1, cols);
  for (const auto& ev : events) {
    if (ev.section < 0 || ev.section >= n || ev.step < 0 || ev.step >= cols) {
      throw std::invalid_argument("make_profile: step event out of range");
    }
    prof.tension_ref.row(ev.section).tail(cols - ev.step).setConstant(ev.new_tension);
  }
  prof.step_events = std::move(events);

  const PlantParams local = with_unwind_velocity(params, unwind_velocity);
  prof.velocity_ref.resize(n, cols);
  Vec last_t = Vec::Constant(n, std::nan(""));
  Vec last_v;
  for (int k = 0; k < cols; ++k) {
    const Vec t = prof.tension_ref.col(k);
    if (t != last_t) {
      last_v = continuity_velocities(local, t);
      last_t = t;
    }
    prof.velocity_ref.col(k) = last_v;
  }
  return prof;
}

/// Centered affine scaling (x - nominal) / range.
inline double normalize(double x, double nominal, double range) { return (x - nominal) / range; }

/**
 * Draws a reference trajectory: per-section base tensions and the unwind
 * velocity are uniform over the phase ranges; with probability
 * step_change_prob one uniformly chosen section steps to a fresh draw at a
 * uniform time inside [0.2, 0.8] of the episode.
 */
inline ReferenceProfile sample_reference(const PlantParams& params, const EnvConfig& cfg,
                                         const CurriculumPhase& phase, Rng& rng) {
  const int n = params.n_sections;
  std::uniform_real_distribution<double> tension(phase.tension_lo, phase.tension_hi);
  std::uniform_real_distribution<double> velocity(phase.velocity_lo, phase.velocity_hi);
  std::uniform_real_distribution<double> coin(0.0, 1.0);

  Vec base(n);
  for (int i = 0; i < n; ++i) base[i] = tension(rng);
  const double v0 = velocity(rng);

  std::vector<StepEvent> events;
  if (coin(rng) < phase.step_change_prob) {
    const int lo = static_cast<int>(std::ceil(0.2 * cfg.episode_len));
    const int hi = std::max(lo, static_cast<int>(std::floor(0.8 * cfg.episode_len)));
    StepEvent ev;
    ev.section = std::uniform_int_distribution<int>(0, n - 1)(rng);
    ev.step = std::uniform_int_distribution<int>(lo, hi)(rng);
    ev.old_tension = base[ev.section];
    ev.new_tension = tension(rng);
    events.push_back(ev);
  }
  return make_profile(params, cfg, base, v0, std::move(events));
}

struct ActionResult {
  Vec torques;   ///< applied torques [N m]
  Vec smoothed;  ///< EMA state, normalized, pre-noise
  Vec noisy;     ///< normalized action actually applied
};

/**
 * EMA smoothing, additive Gaussian noise and torque scaling:
 * s = beta*u + (1-beta)*s_prev; noisy = clamp(s + eta, -1, 1); torque = noisy * u_scale.
 */
inline ActionResult apply_action(const EnvConfig& cfg, double u_scale, const Vec& raw_action,
                                 const Vec& smoothed_prev, Rng& rng) {
  if (raw_action.size() != smoothed_prev.size()) {
    throw std::invalid_argument("apply_action: action length mismatch");
  }
  ActionResult out;
  out.smoothed = cfg.beta_smooth * raw_action.cwiseMax(-1.0).cwiseMin(1.0) +
                 (1.0 - cfg.beta_smooth) * smoothed_prev;
  out.noisy = out.smoothed;
  if (cfg.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
    for (Eigen::Index i = 0; i < out.noisy.size(); ++i) out.noisy[i] += noise(rng);
  }
  out.noisy = out.noisy.cwiseMax(-1.0).cwiseMin(1.0);
  out.torques = out.noisy * u_scale;
  return out;
}

struct RewardBreakdown {
  double reward = 0.0;
  bool success = false;
  double violation = 0.0;
};

/// Total excursion [N] of the tensions outside [lo, hi].
inline double tension_violation(const Vec& t, double lo, double hi) {
  double v = 0.0;
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    v += std::max(0.0, lo - t[i]) + std::max(0.0, t[i] - hi);
  }
  return v;
}

/// Multi-term tracking reward; `u` and `u_prev` are normalized actions.
inline RewardBreakdown compute_reward(const EnvConfig& cfg, const Vec& t, const Vec& t_ref,
                                      const Vec& v, const Vec& v_ref, const Vec& u,
                                      const Vec& u_prev) {
  const auto& w = cfg.weights;
  const double mse_t = (t - t_ref).squaredNorm() / static_cast<double>(t.size());
  const double mse_v = (v - v_ref).squaredNorm() / static_cast<double>(v.size());
  RewardBreakdown out;
  out.violation = tension_violation(t, cfg.tension_lo, cfg.tension_hi);
  out.success = (t - t_ref).cwiseAbs().maxCoeff() < cfg.success_tol_T &&
                (v - v_ref).cwiseAbs().maxCoeff() < cfg.success_tol_v;
  out.reward = w.lambda * (-w.w_T * mse_t - w.w_v * mse_v - w.w_c * u.squaredNorm() -
                           w.w_s * (u - u_prev).squaredNorm() - w.w_viol * out.violation +
                           w.w_succ * (out.success ? 1.0 : 0.0));
  return out;
}

using Observation = Vec;

inline constexpr int observation_size(int n_sections) { return 7 * n_sections + 1; }

/**
 * Layout: [T_norm, v_norm, T_ref_norm, v_ref_norm, e_T, e_v, u_prev, progress].
 * Errors share the state features' range scaling.
 */
inline Observation build_observation(const EnvConfig& cfg, const PlantState& s, const Vec& t_ref,
                                     const Vec& v_ref, const Vec& u_prev, double progress) {
  const auto n = s.tensions.size();
  Observation obs(7 * n + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    obs[i] = normalize(s.tensions[i], cfg.T_nominal, cfg.T_range);
    obs[n + i] = normalize(s.velocities[i], cfg.v_nominal, cfg.v_range);
    obs[2 * n + i] = normalize(t_ref[i], cfg.T_nominal, cfg.T_range);
    obs[3 * n + i] = normalize(v_ref[i], cfg.v_nominal, cfg.v_range);
    obs[4 * n + i] = (s.tensions[i] - t_ref[i]) / cfg.T_range;
    obs[5 * n + i] = (s.velocities[i] - v_ref[i]) / cfg.v_range;
    obs[6 * n + i] = u_prev[i];
  }
  obs[7 * n] = progress;
  return obs;
}

struct StepInfo {
  Vec tensions;
  Vec velocities;
  Vec tension_ref;
  Vec velocity_ref;
  Vec applied_torques;
  Vec commanded;  ///< smoothed normalized action, pre-noise
  bool success = false;
  double violation = 0.0;
};

struct StepOutcome {
  Observation observation;
  double reward = 0.0;
  bool terminated = false;
  bool truncated = false;
  StepInfo info;
};

/// Fixed-horizon tension-tracking episode around the coupled plant.
class TensionEnv {
 public:
  TensionEnv(PlantParams params, EnvConfig cfg, std::uint64_t seed)
      : base_params_(std::move(params)), cfg_(std::move(cfg)), rng_(seed) {
    base_params_.validate();
    cfg_.validate();
    params_ = base_params_;
  }

  Observation reset(const CurriculumPhase& phase) {
    phase.validate();
    return reset(sample_reference(base_params_, cfg_, phase, rng_));
  }

  /// Starts an episode on a fixed profile; the plant starts exactly on the first reference.
  Observation reset(ReferenceProfile profile) {
    if (profile.n_sections() != base_params_.n_sections ||
        profile.columns() != cfg_.episode_len + 1) {
      throw std::invalid_argument("TensionEnv::reset: profile shape mismatch");
    }
    profile_ = std::move(profile);
    params_ = with_unwind_velocity(base_params_, profile_.unwind_velocity);
    state_ = PlantState{profile_.tension_at(0), profile_.velocity_at(0)};
    const Vec u_eq = equilibrium_torques(params_, state_.tensions, state_.velocities);
    smoothed_ = (u_eq / params_.torque_limit_u_scale).cwiseMax(-1.0).cwiseMin(1.0);
    step_ = 0;
    active_ = true;
    return observe();
  }

  StepOutcome step(const Vec& raw_action) {
    if (!active_) throw std::logic_error("TensionEnv::step called on a finished episode");
    if (raw_action.size() != base_params_.n_sections) {
      throw std::invalid_argument("TensionEnv::step: action length mismatch");
    }
    const Vec prev = smoothed_;
    ActionResult act = apply_action(cfg_, params_.torque_limit_u_scale, raw_action, prev, rng_);
    state_ = euler_step(params_, state_, act.torques);
    smoothed_ = act.smoothed;
    ++step_;

    StepOutcome out;
    out.info.tension_ref = profile_.tension_at(step_);
    out.info.velocity_ref = profile_.velocity_at(step_);
    const RewardBreakdown r = compute_reward(cfg_, state_.tensions, out.info.tension_ref,
                                             state_.velocities, out.info.velocity_ref,
                                             smoothed_, prev);
    out.reward = r.reward;
    out.truncated = step_ >= cfg_.episode_len;
    out.observation = observe();
    out.info.tensions = state_.tensions;
    out.info.velocities = state_.velocities;
    out.info.applied_torques = std::move(act.torques);
    out.info.commanded = smoothed_;
    out.info.success = r.success;
    out.info.violation = r.violation;
    if (out.truncated) active_ = false;
    return out;
  }

  [[nodiscard]] Observation observe() const {
    return build_observation(cfg_, state_, profile_.tension_at(step_), profile_.velocity_at(step_),
                             smoothed_, static_cast<double>(step_) / cfg_.episode_len);
  }

  [[nodiscard]] bool active() const { return active_; }
  [[nodiscard]] int step_index() const { return step_; }
  [[nodiscard]] const PlantState& state() const { return state_; }
  [[nodiscard]] const Vec& smoothed_action() const { return smoothed_; }
  [[nodiscard]] const ReferenceProfile& profile() const { return profile_; }
  /// Plant parameters of the running episode (unwind velocity from the profile).
  [[nodiscard]] const PlantParams& params() const { return params_; }
  [[nodiscard]] const EnvConfig& config() const { return cfg_; }
  [[nodiscard]] int n_sections() const { return base_params_.n_sections; }
  [[nodiscard]] int observation_dim() const { return observation_size(base_params_.n_sections); }
  Rng& rng() { return rng_; }

 private:
  PlantParams base_params_;
  PlantParams params_;
  EnvConfig cfg_;
  Rng rng_;
  ReferenceProfile profile_;
  PlantState state_;
  Vec smoothed_;
  int step_ = 0;
  bool active_ = false;
};

}  // namespace r2r

#endif  // R2R_MDP_ENV_HPP
