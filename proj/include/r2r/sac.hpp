#ifndef R2R_SAC_HPP
#define R2R_SAC_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "r2r/mdp_env.hpp"
#include "r2r/nnet.hpp"
#include "r2r/trace.hpp"

namespace r2r {

// ---------------------------------------------------------------------------
// Curriculum

enum class CurriculumMode { kCurriculum, kDomainRandomization, kVanilla };

inline const char* to_string(CurriculumMode m) {
  switch (m) {
    case CurriculumMode::kCurriculum: return "curriculum";
    case CurriculumMode::kDomainRandomization: return "domain_randomization";
    case CurriculumMode::kVanilla: return "vanilla";
  }
  return "?";
}

inline CurriculumMode curriculum_mode_from_string(const std::string& s) {
  if (s == "curriculum") return CurriculumMode::kCurriculum;
  if (s == "domain_randomization") return CurriculumMode::kDomainRandomization;
  if (s == "vanilla") return CurriculumMode::kVanilla;
  throw std::invalid_argument("unknown curriculum mode '" + s + "'");
}

struct CurriculumSchedule {
  std::array<CurriculumPhase, 3> phases{{
      {1, 27.0, 33.0, 0.0095, 0.0105, 0.1},
      {2, 25.0, 35.0, 0.009, 0.011, 0.2},
      {3, 20.0, 40.0, 0.008, 0.012, 0.3},
  }};
  double phase2_start = 0.4;
  double phase3_start = 0.8;
  CurriculumMode mode = CurriculumMode::kCurriculum;
};

/// Phase for training progress p in [0, 1]. Non-curriculum modes pin one phase.
inline CurriculumPhase select_phase(double progress, const CurriculumSchedule& sched) {
  switch (sched.mode) {
    case CurriculumMode::kDomainRandomization: return sched.phases[2];
    case CurriculumMode::kVanilla: return sched.phases[0];
    case CurriculumMode::kCurriculum: break;
  }
  if (progress < sched.phase2_start) return sched.phases[0];
  if (progress < sched.phase3_start) return sched.phases[1];
  return sched.phases[2];
}

// ---------------------------------------------------------------------------
// Configuration and agent state

struct SacConfig {
  std::int64_t total_steps = 500'000;
  std::int64_t warmup_steps = 10'000;
  int batch_size = 256;
  std::size_t buffer_capacity = 1'000'000;
  std::int64_t eval_interval = 5'000;
  int eval_episodes = 5;
  double gamma = 0.99;
  double tau = 0.005;
  double learning_rate = 3e-4;
  double init_log_alpha = 0.0;
  double log_std_min = -20.0;
  double log_std_max = 2.0;
  std::vector<int> hidden_layers{kHiddenUnits, kHiddenUnits, kHiddenUnits};
  CurriculumSchedule schedule;

  void validate() const {
    if (total_steps < 1) throw std::invalid_argument("sac.total_steps must be >= 1");
    if (warmup_steps < 0) throw std::invalid_argument("sac.warmup_steps must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("sac.batch_size must be >= 1");
    if (buffer_capacity < static_cast<std::size_t>(batch_size)) {
      throw std::invalid_argument("sac.buffer_capacity must be >= batch_size");
    }
    if (eval_interval < 1 || eval_episodes < 1) {
      throw std::invalid_argument("sac.eval_interval and sac.eval_episodes must be >= 1");
    }
    if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("sac.gamma must lie in [0,1)");
    if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("sac.tau must lie in (0,1]");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("sac.learning_rate must be positive");
    if (!(log_std_min < log_std_max)) throw std::invalid_argument("sac log_std bounds");
    if (hidden_layers.empty()) throw std::invalid_argument("sac.hidden_layers must be non-empty");
    for (int h : hidden_layers) {
      if (h < 1) throw std::invalid_argument("sac.hidden_layers entries must be >= 1");
    }
    if (!(schedule.phase2_start <= schedule.phase3_start)) {
      throw std::invalid_argument("sac curriculum boundaries must be ordered");
    }
    for (const auto& ph : schedule.phases) ph.validate();
  }
};

/// Squashed-Gaussian actor, twin critics with Polyak targets, learned temperature.
struct SacAgent {
  int obs_dim = 0;
  int act_dim = 0;
  Mlp actor;  ///< outputs [mu; log_std], 2 * act_dim
  Mlp critic1, critic2;
  Mlp target1, target2;
  double log_alpha = 0.0;
  double target_entropy = 0.0;
  double gamma = 0.99;
  double tau = 0.005;
  double log_std_min = -20.0;
  double log_std_max = 2.0;
  Adam actor_opt, critic1_opt, critic2_opt;
  ScalarAdam alpha_opt;
  std::int64_t env_steps = 0;
  std::int64_t updates = 0;

  SacAgent() = default;

  SacAgent(int n_sections, const SacConfig& cfg, Rng& init_rng)
      : obs_dim(observation_size(n_sections)),
        act_dim(n_sections),
        log_alpha(cfg.init_log_alpha),
        target_entropy(-static_cast<double>(n_sections)),
        gamma(cfg.gamma),
        tau(cfg.tau),
        log_std_min(cfg.log_std_min),
        log_std_max(cfg.log_std_max) {
    std::vector<int> a{obs_dim};
    a.insert(a.end(), cfg.hidden_layers.begin(), cfg.hidden_layers.end());
    a.push_back(2 * act_dim);
    std::vector<int> c{obs_dim + act_dim};
    c.insert(c.end(), cfg.hidden_layers.begin(), cfg.hidden_layers.end());
    c.push_back(1);
    actor = make_mlp(std::span<const int>(a), init_rng);
    critic1 = make_mlp(std::span<const int>(c), init_rng);
    critic2 = make_mlp(std::span<const int>(c), init_rng);
    target1 = critic1;
    target2 = critic2;
    reset_optimizers(cfg.learning_rate);
  }

  void reset_optimizers(double lr) {
    const AdamConfig ac{lr, 0.9, 0.999, 1e-8};
    actor_opt = Adam(actor, ac);
    critic1_opt = Adam(critic1, ac);
    critic2_opt = Adam(critic2, ac);
    alpha_opt = ScalarAdam(ac);
  }

  [[nodiscard]] double alpha() const { return std::exp(log_alpha); }
  [[nodiscard]] std::size_t parameter_count() const {
    return actor.parameter_count() + critic1.parameter_count() + critic2.parameter_count();
  }
};

// ---------------------------------------------------------------------------
// Replay buffer

struct Transition {
  Observation s;
  Vec a;  ///< raw policy action, pre-smoothing
  double r = 0.0;
  Observation s2;
  bool done = false;  ///< terminal flag; horizon truncation is stored as false
};

struct TransitionBatch {
  Mat s;   ///< obs_dim x B
  Mat a;   ///< act_dim x B
  Vec r;
  Mat s2;
  Vec done;  ///< 0/1
  [[nodiscard]] int size() const { return static_cast<int>(r.size()); }
};

/// Fixed-capacity ring buffer with uniform sampling.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, int obs_dim, int act_dim)
      : capacity_(capacity), obs_dim_(obs_dim), act_dim_(act_dim) {
    if (capacity == 0) throw std::invalid_argument("ReplayBuffer: zero capacity");
  }

  void push(const Transition& t) {
    if (t.s.size() != obs_dim_ || t.s2.size() != obs_dim_ || t.a.size() != act_dim_) {
      throw std::invalid_argument("ReplayBuffer: transition shape mismatch");
    }
    const std::size_t slot = cursor_;
    if (size_ < capacity_) {
      s_.resize(s_.size() + obs_dim_);
      s2_.resize(s2_.size() + obs_dim_);
      a_.resize(a_.size() + act_dim_);
      r_.push_back(0.0);
      done_.push_back(0.0);
      ++size_;
    }
    std::copy(t.s.data(), t.s.data() + obs_dim_, s_.begin() + slot * obs_dim_);
    std::copy(t.s2.data(), t.s2.data() + obs_dim_, s2_.begin() + slot * obs_dim_);
    std::copy(t.a.data(), t.a.data() + act_dim_, a_.begin() + slot * act_dim_);
    r_[slot] = t.r;
    done_[slot] = t.done ? 1.0 : 0.0;
    cursor_ = (cursor_ + 1) % capacity_;
  }

  [[nodiscard]] std::vector<std::size_t> sample_indices(int batch, Rng& rng) const {
    if (size_ == 0) throw std::logic_error("ReplayBuffer: sampling an empty buffer");
    std::uniform_int_distribution<std::size_t> pick(0, size_ - 1);
    std::vector<std::size_t> idx(static_cast<std::size_t>(batch));
    for (auto& i : idx) i = pick(rng);
    return idx;
  }

  [[nodiscard]] TransitionBatch gather(const std::vector<std::size_t>& idx) const {
    const auto b = static_cast<Eigen::Index>(idx.size());
    TransitionBatch out{Mat(obs_dim_, b), Mat(act_dim_, b), Vec(b), Mat(obs_dim_, b), Vec(b)};
    for (Eigen::Index k = 0; k < b; ++k) {
      const std::size_t i = idx[static_cast<std::size_t>(k)];
      out.s.col(k) = Eigen::Map<const Vec>(s_.data() + i * obs_dim_, obs_dim_);
      out.s2.col(k) = Eigen::Map<const Vec>(s2_.data() + i * obs_dim_, obs_dim_);
      out.a.col(k) = Eigen::Map<const Vec>(a_.data() + i * act_dim_, act_dim_);
      out.r[k] = r_[i];
      out.done[k] = done_[i];
    }
    return out;
  }

  [[nodiscard]] TransitionBatch sample(int batch, Rng& rng) const {
    return gather(sample_indices(batch, rng));
  }

  [[nodiscard]] std::size_t size() const { return size_; }
  [[nodiscard]] std::size_t capacity() const { return capacity_; }
  [[nodiscard]] std::size_t cursor() const { return cursor_; }

 private:
  std::size_t capacity_;
  int obs_dim_;
  int act_dim_;
  std::size_t size_ = 0;
  std::size_t cursor_ = 0;
  std::vector<double> s_, s2_, a_, r_, done_;
};

// ---------------------------------------------------------------------------
// Policy

inline constexpr double kTanhEps = 1e-6;

/// log pi(a|s) for a = tanh(z), z ~ N(mu, exp(log_std)^2), one dimension.
inline double squashed_gaussian_log_prob(double mu, double log_std, double z) {
  const double eps = (z - mu) / std::exp(log_std);
  const double a = std::tanh(z);
  return -0.5 * eps * eps - log_std - 0.5 * std::log(2.0 * std::numbers::pi) -
         std::log(1.0 - a * a + kTanhEps);
}

/// Reparameterized batch sample, keeping what the actor gradient needs.
struct PolicyBatch {
  Mat mu, log_std, std_dev, noise, z, action;  ///< act_dim x B
  Mat clamp_mask;                              ///< 1 where log_std is inside its bounds
  Vec log_prob;                                ///< B
  ForwardCache cache;
};

inline PolicyBatch policy_batch(const SacAgent& agent, const Mat& obs, Rng& rng,
                                bool deterministic = false, bool keep_cache = false) {
  PolicyBatch pb;
  const Mat out = forward(agent.actor, obs, keep_cache ? &pb.cache : nullptr);
  const int n = agent.act_dim;
  const auto b = obs.cols();
  pb.mu = out.topRows(n);
  const Mat raw_log_std = out.bottomRows(n);
  pb.log_std = raw_log_std.cwiseMax(agent.log_std_min).cwiseMin(agent.log_std_max);
  pb.clamp_mask = raw_log_std.unaryExpr([&](double v) {
    return (v >= agent.log_std_min && v <= agent.log_std_max) ? 1.0 : 0.0;
  });
  pb.std_dev = pb.log_std.array().exp().matrix();
  pb.noise = Mat::Zero(n, b);
  if (!deterministic) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index j = 0; j < b; ++j) {
      for (int i = 0; i < n; ++i) pb.noise(i, j) = normal(rng);
    }
  }
  pb.z = pb.mu + pb.std_dev.cwiseProduct(pb.noise);
  pb.action = pb.z.array().tanh().matrix();
  pb.log_prob = Vec::Zero(b);
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  for (Eigen::Index j = 0; j < b; ++j) {
    double lp = 0.0;
    for (int i = 0; i < n; ++i) {
      const double e = pb.noise(i, j);
      const double a = pb.action(i, j);
      lp += -0.5 * e * e - pb.log_std(i, j) - half_log_2pi - std::log(1.0 - a * a + kTanhEps);
    }
    pb.log_prob[j] = lp;
  }
  return pb;
}

struct ActionSample {
  Vec action;
  double log_prob = std::numeric_limits<double>::quiet_NaN();  ///< NaN when deterministic
};

/// a = tanh(z), z ~ N(mu, sigma^2); deterministic mode returns tanh(mu).
inline ActionSample sample_action(const SacAgent& agent, const Observation& obs,
                                  bool deterministic, Rng& rng) {
  if (obs.size() != agent.obs_dim) throw std::invalid_argument("sample_action: obs length");
  PolicyBatch pb = policy_batch(agent, Mat(obs), rng, deterministic);
  ActionSample out;
  out.action = pb.action.col(0);
  if (!deterministic) out.log_prob = pb.log_prob[0];
  return out;
}

/// Deterministic actor action only (tanh of the mean head).
inline Vec deterministic_action(const Mlp& actor, int act_dim, const Observation& obs) {
  const Vec out = forward(actor, obs);
  return out.head(act_dim).array().tanh().matrix();
}

inline Mat critic_input(const Mat& s, const Mat& a) {
  Mat x(s.rows() + a.rows(), s.cols());
  x.topRows(s.rows()) = s;
  x.bottomRows(a.rows()) = a;
  return x;
}

// ---------------------------------------------------------------------------
// Updates

/// y = r + gamma (1 - done) [min(Q1', Q2')(s', a') - alpha log pi(a'|s')], a' ~ pi(.|s').
inline Vec td_target(const SacAgent& agent, const TransitionBatch& batch, Rng& rng) {
  const PolicyBatch next = policy_batch(agent, batch.s2, rng);
  const Mat x = critic_input(batch.s2, next.action);
  const Mat q1 = forward(agent.target1, x);
  const Mat q2 = forward(agent.target2, x);
  const Vec soft = q1.row(0).cwiseMin(q2.row(0)).transpose() - agent.alpha() * next.log_prob;
  return batch.r + agent.gamma * (Vec::Ones(batch.size()) - batch.done).cwiseProduct(soft);
}

/// theta_target <- tau * theta + (1 - tau) * theta_target.
inline void polyak_update(SacAgent& agent) {
  const double tau = agent.tau;
  auto blend = [tau](auto& target, const auto& src) { target = tau * src + (1.0 - tau) * target; };
  zip_blocks(agent.target1, agent.critic1, blend);
  zip_blocks(agent.target2, agent.critic2, blend);
}

struct UpdateDiagnostics {
  bool performed = false;
  double critic1_loss = 0.0;
  double critic2_loss = 0.0;
  double actor_loss = 0.0;
  double alpha_loss = 0.0;
  double alpha = 0.0;
  double entropy = 0.0;  ///< -mean log pi on the batch

  [[nodiscard]] bool finite() const {
    return std::isfinite(critic1_loss) && std::isfinite(critic2_loss) &&
           std::isfinite(actor_loss) && std::isfinite(alpha_loss);
  }
};

/// Critic regression step toward fixed targets; returns the mean squared error.
inline double critic_step(Mlp& critic, Adam& opt, const Mat& x, const Vec& y) {
  ForwardCache cache;
  const Mat q = forward(critic, x, &cache);
  const Eigen::RowVectorXd err = q.row(0) - y.transpose();
  const double b = static_cast<double>(y.size());
  Mlp grads = critic.zeros_like();
  backward(critic, cache, (2.0 / b) * err, &grads);
  opt.step(critic, grads);
  return err.squaredNorm() / b;
}

/**
 * Actor loss mean(alpha log pi - min Q) through reparameterized samples and
 * its gradient with respect to the actor parameters. `pb` must carry a cache.
 */
inline double actor_loss_and_grad(const SacAgent& agent, const Mat& obs, const PolicyBatch& pb,
                                  Mlp& grads) {
  const int n = agent.act_dim;
  const auto b = obs.cols();
  const double inv_b = 1.0 / static_cast<double>(b);
  const double alpha = agent.alpha();

  const Mat x = critic_input(obs, pb.action);
  ForwardCache c1, c2;
  const Mat q1 = forward(agent.critic1, x, &c1);
  const Mat q2 = forward(agent.critic2, x, &c2);

  Eigen::RowVectorXd pick1(b), pick2(b);
  double loss = 0.0;
  for (Eigen::Index j = 0; j < b; ++j) {
    const bool first = q1(0, j) <= q2(0, j);
    pick1[j] = first ? 1.0 : 0.0;
    pick2[j] = first ? 0.0 : 1.0;
    loss += alpha * pb.log_prob[j] - std::min(q1(0, j), q2(0, j));
  }
  loss *= inv_b;

  const Mat dx1 = backward(agent.critic1, c1, pick1, nullptr);
  const Mat dx2 = backward(agent.critic2, c2, pick2, nullptr);
  const Mat dq_da = dx1.bottomRows(n) + dx2.bottomRows(n);

  Mat d_out(2 * n, b);
  for (Eigen::Index j = 0; j < b; ++j) {
    for (int i = 0; i < n; ++i) {
      const double a = pb.action(i, j);
      const double sech2 = 1.0 - a * a;
      const double dlogp_dz = 2.0 * a * sech2 / (sech2 + kTanhEps);
      const double dz = inv_b * (alpha * dlogp_dz - dq_da(i, j) * sech2);
      d_out(i, j) = dz;
      d_out(n + i, j) =
          pb.clamp_mask(i, j) * (dz * pb.std_dev(i, j) * pb.noise(i, j) - alpha * inv_b);
    }
  }
  backward(agent.actor, pb.cache, d_out, &grads);
  return loss;
}

/**
 * One optimization round on a minibatch: both critics toward the soft TD
 * target, the actor through reparameterized samples, the log-temperature,
 * then Polyak averaging of the targets.
 */
inline UpdateDiagnostics sac_update(SacAgent& agent, const TransitionBatch& batch, Rng& rng) {
  UpdateDiagnostics d;
  const Vec y = td_target(agent, batch, rng);
  const Mat x = critic_input(batch.s, batch.a);
  d.critic1_loss = critic_step(agent.critic1, agent.critic1_opt, x, y);
  d.critic2_loss = critic_step(agent.critic2, agent.critic2_opt, x, y);

  const PolicyBatch pb = policy_batch(agent, batch.s, rng, false, true);
  Mlp actor_grads = agent.actor.zeros_like();
  d.actor_loss = actor_loss_and_grad(agent, batch.s, pb, actor_grads);
  agent.actor_opt.step(agent.actor, actor_grads);

  const double mean_logp = pb.log_prob.mean();
  d.entropy = -mean_logp;
  d.alpha_loss = -agent.log_alpha * (mean_logp + agent.target_entropy);
  agent.alpha_opt.step(agent.log_alpha, -(mean_logp + agent.target_entropy));
  d.alpha = agent.alpha();

  polyak_update(agent);
  ++agent.updates;
  d.performed = true;
  return d;
}

/// Samples a batch and updates; a no-op when the buffer holds fewer than `batch_size` items.
inline UpdateDiagnostics sac_update(SacAgent& agent, const ReplayBuffer& buffer, int batch_size,
                                    Rng& rng) {
  if (buffer.size() < static_cast<std::size_t>(batch_size)) return {};
  return sac_update(agent, buffer.sample(batch_size, rng), rng);
}

// ---------------------------------------------------------------------------
// Evaluation

/// Deterministic policy for an environment (process noise stays on inside the env).
inline PolicyFn make_policy(const Mlp& actor, int act_dim) {
  return [actor, act_dim](const TensionEnv&, const Observation& obs) {
    return deterministic_action(actor, act_dim, obs);
  };
}

struct EvaluationResult {
  std::vector<double> returns;
  std::vector<EpisodeTrace> traces;
  [[nodiscard]] double mean_return() const {
    double s = 0.0;
    for (double r : returns) s += r;
    return returns.empty() ? 0.0 : s / static_cast<double>(returns.size());
  }
};

/// Deterministic rollouts on references drawn from `phase`; episode k uses seed (seed, k).
inline EvaluationResult evaluate_policy(const Mlp& actor, const PlantParams& plant,
                                        const EnvConfig& env_cfg, const CurriculumPhase& phase,
                                        int n_episodes, std::uint64_t seed) {
  EvaluationResult res;
  const PolicyFn policy = make_policy(actor, plant.n_sections);
  for (int k = 0; k < n_episodes; ++k) {
    TensionEnv env(plant, env_cfg, derive_seed({seed, static_cast<std::uint64_t>(k)}));
    const Observation obs = env.reset(phase);
    res.traces.push_back(run_episode(env, obs, policy));
    res.returns.push_back(res.traces.back().episode_return());
  }
  return res;
}

inline EvaluationResult evaluate_policy(const SacAgent& agent, const PlantParams& plant,
                                        const EnvConfig& env_cfg, const CurriculumPhase& phase,
                                        int n_episodes, std::uint64_t seed) {
  return evaluate_policy(agent.actor, plant, env_cfg, phase, n_episodes, seed);
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr char kCheckpointMagic[8] = {'R', '2', 'R', 'S', 'A', 'C', '0', '1'};

struct CheckpointMeta {
  std::int64_t step = 0;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  double eval_return = std::numeric_limits<double>::quiet_NaN();
};

struct Checkpoint {
  Mlp actor, critic1, critic2, target1, target2;
  double log_alpha = 0.0;
  CheckpointMeta meta;

  [[nodiscard]] int act_dim() const { return actor.output_dim() / 2; }
};

inline nlohmann::json checkpoint_sidecar(const Checkpoint& ck) {
  auto shapes = [](const Mlp& net) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& l : net.layers) arr.push_back({l.weight.rows(), l.weight.cols()});
    return arr;
  };
  nlohmann::json j;
  j["format"] = "R2RSAC01";
  j["step"] = ck.meta.step;
  j["seed"] = ck.meta.seed;
  j["config_hash"] = ck.meta.config_hash;
  j["eval_return"] = std::isfinite(ck.meta.eval_return) ? nlohmann::json(ck.meta.eval_return)
                                                        : nlohmann::json(nullptr);
  j["log_alpha"] = ck.log_alpha;
  j["shapes"] = {{"actor", shapes(ck.actor)},
                 {"critic1", shapes(ck.critic1)},
                 {"critic2", shapes(ck.critic2)},
                 {"target1", shapes(ck.target1)},
                 {"target2", shapes(ck.target2)}};
  j["parameters"] = {{"actor", ck.actor.parameter_count()},
                     {"critics", ck.critic1.parameter_count() + ck.critic2.parameter_count()}};
  return j;
}

/// Writes `path` (binary) and `path` + ".json" (metadata sidecar).
inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
    os.write(kCheckpointMagic, sizeof kCheckpointMagic);
    for (const Mlp* net : {&ck.actor, &ck.critic1, &ck.critic2, &ck.target1, &ck.target2}) {
      write_mlp(os, *net);
    }
    io::put<double>(os, ck.log_alpha);
    io::put<std::uint64_t>(os, static_cast<std::uint64_t>(ck.meta.step));
    io::put<std::uint64_t>(os, ck.meta.seed);
    io::put<std::uint64_t>(os, ck.meta.config_hash);
  }
  std::ofstream js(path.string() + ".json", std::ios::trunc);
  js << checkpoint_sidecar(ck).dump(2) << '\n';
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || !std::equal(magic, magic + 8, kCheckpointMagic)) {
    throw std::runtime_error("not an R2RSAC01 checkpoint: " + path.string());
  }
  Checkpoint ck;
  for (Mlp* net : {&ck.actor, &ck.critic1, &ck.critic2, &ck.target1, &ck.target2}) {
    *net = read_mlp(is);
  }
  ck.log_alpha = io::get<double>(is);
  ck.meta.step = static_cast<std::int64_t>(io::get<std::uint64_t>(is));
  ck.meta.seed = io::get<std::uint64_t>(is);
  ck.meta.config_hash = io::get<std::uint64_t>(is);
  if (!ck.critic1.congruent(ck.target1) || !ck.critic2.congruent(ck.target2)) {
    throw std::runtime_error("checkpoint: targets not congruent to critics");
  }
  return ck;
}

inline Checkpoint make_checkpoint(const SacAgent& agent, const CheckpointMeta& meta) {
  return {agent.actor, agent.critic1, agent.critic2, agent.target1, agent.target2,
          agent.log_alpha, meta};
}

// ---------------------------------------------------------------------------
// Training loop

class TrainingDivergedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainingLogRow {
  std::int64_t step = 0;
  int phase = 1;
  double episode_return = 0.0;
  double eval_return = std::numeric_limits<double>::quiet_NaN();
  double alpha = 0.0;
  double critic_loss = std::numeric_limits<double>::quiet_NaN();
  double actor_loss = std::numeric_limits<double>::quiet_NaN();
  double alpha_loss = std::numeric_limits<double>::quiet_NaN();
  double entropy = std::numeric_limits<double>::quiet_NaN();
};

struct CheckpointRecord {
  std::int64_t step = 0;
  double eval_return = 0.0;
  std::string file;
};

struct TrainingOptions {
  std::filesystem::path output_dir;  ///< empty: keep everything in memory
  std::uint64_t config_hash = 0;
  std::ostream* progress = nullptr;
};

struct TrainingResult {
  SacAgent agent;
  Mlp best_actor;
  double best_eval_return = -std::numeric_limits<double>::infinity();
  std::int64_t best_step = -1;
  std::vector<TrainingLogRow> log;
  std::vector<CheckpointRecord> checkpoints;
};

inline void write_training_log_csv(std::ostream& os, const std::vector<TrainingLogRow>& rows) {
  os << "step,phase,episode_return,eval_return,alpha,critic_loss,actor_loss,alpha_loss,entropy\n";
  for (const auto& r : rows) {
    os << r.step << ',' << r.phase << ',' << detail::fmt_num(r.episode_return) << ','
       << detail::fmt_num(r.eval_return) << ',' << detail::fmt_num(r.alpha) << ','
       << detail::fmt_num(r.critic_loss) << ',' << detail::fmt_num(r.actor_loss) << ','
       << detail::fmt_num(r.alpha_loss) << ',' << detail::fmt_num(r.entropy) << '\n';
  }
}

/**
 * Off-policy training with uniform-random warm-up, one update per
 * environment step afterwards, fixed-length episodes whose references come
 * from the curriculum phase for the current progress, and periodic
 * deterministic evaluation that keeps the best actor.
 */
inline TrainingResult run_training(const PlantParams& plant, const EnvConfig& env_cfg,
                                   const SacConfig& cfg, std::uint64_t seed,
                                   const TrainingOptions& opts = {}) {
  plant.validate();
  env_cfg.validate();
  cfg.validate();
  namespace fs = std::filesystem;

  Rng init_rng(derive_seed({seed, 1}));
  Rng agent_rng(derive_seed({seed, 2}));
  TrainingResult res;
  res.agent = SacAgent(plant.n_sections, cfg, init_rng);
  SacAgent& agent = res.agent;
  ReplayBuffer buffer(cfg.buffer_capacity, agent.obs_dim, agent.act_dim);
  TensionEnv env(plant, env_cfg, derive_seed({seed, 3}));

  const bool persist = !opts.output_dir.empty();
  if (persist) fs::create_directories(opts.output_dir / "checkpoints");

  auto progress_of = [&](std::int64_t t) {
    return static_cast<double>(t) / static_cast<double>(cfg.total_steps);
  };
  CurriculumPhase phase = select_phase(0.0, cfg.schedule);
  Observation obs = env.reset(phase);
  double ep_return = 0.0;
  UpdateDiagnostics last;
  double last_eval = std::numeric_limits<double>::quiet_NaN();
  std::uniform_real_distribution<double> uniform(-1.0, 1.0);
  res.best_actor = agent.actor;
  std::string last_good;
  std::int64_t eval_index = 0;

  for (std::int64_t t = 0; t < cfg.total_steps; ++t) {
    Vec action(agent.act_dim);
    if (t < cfg.warmup_steps) {
      for (int i = 0; i < agent.act_dim; ++i) action[i] = uniform(agent_rng);
    } else {
      action = sample_action(agent, obs, false, agent_rng).action;
    }
    StepOutcome out = env.step(action);
    ep_return += out.reward;
    buffer.push({obs, action, out.reward, out.observation, out.terminated});
    obs = out.observation;
    ++agent.env_steps;

    if (t >= cfg.warmup_steps) {
      last = sac_update(agent, buffer, cfg.batch_size, agent_rng);
      if (last.performed && !last.finite()) {
        throw TrainingDivergedError("non-finite loss at step " + std::to_string(t + 1) +
                                    "; last good checkpoint: " +
                                    (last_good.empty() ? "<none>" : last_good));
      }
    }

    const std::int64_t done_steps = t + 1;
    if (done_steps % cfg.eval_interval == 0) {
      const EvaluationResult ev = evaluate_policy(agent, plant, env_cfg, phase,
                                                  cfg.eval_episodes,
                                                  derive_seed({seed, 4, static_cast<std::uint64_t>(eval_index++)}));
      last_eval = ev.mean_return();
      if (last_eval >= res.best_eval_return) {
        res.best_eval_return = last_eval;
        res.best_step = done_steps;
        res.best_actor = agent.actor;
        if (persist) {
          const std::string name = "step_" + std::to_string(done_steps) + ".bin";
          const Checkpoint ck =
              make_checkpoint(agent, {done_steps, seed, opts.config_hash, last_eval});
          save_checkpoint(opts.output_dir / "checkpoints" / name, ck);
          save_checkpoint(opts.output_dir / "best.bin", ck);
          last_good = (opts.output_dir / "checkpoints" / name).string();
          res.checkpoints.push_back({done_steps, last_eval, "checkpoints/" + name});
        } else {
          res.checkpoints.push_back({done_steps, last_eval, {}});
        }
      }
      if (opts.progress) {
        *opts.progress << "step " << done_steps << " phase " << phase.id << " eval "
                       << last_eval << " alpha " << agent.alpha() << std::endl;
      }
    }

    if (out.truncated || out.terminated) {
      TrainingLogRow row;
      row.step = done_steps;
      row.phase = phase.id;
      row.episode_return = ep_return;
      row.eval_return = last_eval;
      row.alpha = agent.alpha();
      if (last.performed) {
        row.critic_loss = 0.5 * (last.critic1_loss + last.critic2_loss);
        row.actor_loss = last.actor_loss;
        row.alpha_loss = last.alpha_loss;
        row.entropy = last.entropy;
      }
      res.log.push_back(row);
      ep_return = 0.0;
      phase = select_phase(progress_of(done_steps), cfg.schedule);
      obs = env.reset(phase);
    }
  }

  if (persist) {
    std::ofstream log(opts.output_dir / "training_log.csv", std::ios::trunc);
    write_training_log_csv(log, res.log);
  }
  return res;
}

}  // namespace r2r

#endif  // R2R_SAC_HPP
