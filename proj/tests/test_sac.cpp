#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "r2r/sac.hpp"

using namespace r2r;

namespace {

SacConfig small_config() {
  SacConfig cfg;
  cfg.hidden_layers = {16, 16};
  cfg.batch_size = 8;
  return cfg;
}

TransitionBatch random_batch(int obs_dim, int act_dim, int b, Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  TransitionBatch batch{Mat(obs_dim, b), Mat(act_dim, b), Vec(b), Mat(obs_dim, b), Vec::Zero(b)};
  for (auto* m : {&batch.s, &batch.a, &batch.s2}) {
    for (Eigen::Index j = 0; j < m->cols(); ++j) {
      for (Eigen::Index i = 0; i < m->rows(); ++i) (*m)(i, j) = u(rng);
    }
  }
  for (int j = 0; j < b; ++j) batch.r[j] = u(rng);
  return batch;
}

void set_policy_head(SacAgent& agent, double mu, double log_std) {
  auto& out = agent.actor.layers.back();
  out.weight.setZero();
  out.bias.head(agent.act_dim).setConstant(mu);
  out.bias.tail(agent.act_dim).setConstant(log_std);
}

// Actor loss recomputed from scratch for a fixed noise draw.
double actor_loss_fixed_noise(const SacAgent& agent, const Mat& obs, const Mat& noise) {
  const Mat out = forward(agent.actor, obs);
  const int n = agent.act_dim;
  double total = 0.0;
  for (Eigen::Index j = 0; j < obs.cols(); ++j) {
    Vec a(n);
    double logp = 0.0;
    for (int i = 0; i < n; ++i) {
      const double mu = out(i, j);
      const double ls = std::clamp(out(n + i, j), agent.log_std_min, agent.log_std_max);
      const double z = mu + std::exp(ls) * noise(i, j);
      a[i] = std::tanh(z);
      logp += squashed_gaussian_log_prob(mu, ls, z);
    }
    Vec x(obs.rows() + n);
    x << obs.col(j), a;
    const double q = std::min(forward(agent.critic1, x)[0], forward(agent.critic2, x)[0]);
    total += agent.alpha() * logp - q;
  }
  return total / static_cast<double>(obs.cols());
}

}  // namespace

TEST(Sac, PhaseSelection) {
  CurriculumSchedule s;
  EXPECT_EQ(select_phase(0.0, s).id, 1);
  EXPECT_EQ(select_phase(0.39, s).id, 1);
  EXPECT_EQ(select_phase(0.40, s).id, 2);
  EXPECT_EQ(select_phase(0.79, s).id, 2);
  EXPECT_EQ(select_phase(0.80, s).id, 3);
  EXPECT_EQ(select_phase(1.0, s).id, 3);
  s.mode = CurriculumMode::kDomainRandomization;
  for (double p : {0.0, 0.5, 0.9}) EXPECT_EQ(select_phase(p, s).id, 3);
  s.mode = CurriculumMode::kVanilla;
  for (double p : {0.0, 0.5, 0.9}) EXPECT_EQ(select_phase(p, s).id, 1);
}

TEST(Sac, PhaseIndexNeverDecreases) {
  CurriculumSchedule s;
  int last = 0;
  for (int k = 0; k <= 1000; ++k) {
    const int id = select_phase(k / 1000.0, s).id;
    EXPECT_GE(id, last);
    last = id;
  }
}

TEST(Sac, ModeNamesRoundTrip) {
  for (auto m : {CurriculumMode::kCurriculum, CurriculumMode::kDomainRandomization,
                 CurriculumMode::kVanilla}) {
    EXPECT_EQ(curriculum_mode_from_string(to_string(m)), m);
  }
  EXPECT_THROW(curriculum_mode_from_string("bogus"), std::invalid_argument);
}

TEST(Sac, LogProbAtOrigin) {
  SacConfig cfg = small_config();
  Rng rng(1);
  SacAgent agent(3, cfg, rng);
  set_policy_head(agent, 0.0, 0.0);
  const PolicyBatch pb = policy_batch(agent, Mat::Zero(agent.obs_dim, 1), rng, true);
  const double want = 3 * (-0.5 * std::log(2 * std::numbers::pi) - std::log(1.0 + kTanhEps));
  EXPECT_NEAR(pb.log_prob[0], want, 1e-12);
  EXPECT_NEAR(pb.log_prob[0], -0.9189 * 3, 1e-3);
}

TEST(Sac, SquashedDensityIntegratesToOne) {
  Rng rng(31);
  std::uniform_real_distribution<double> mu_d(-1.5, 1.5), sigma_d(0.1, 1.0);
  boost::math::quadrature::tanh_sinh<double> integrator;
  for (int k = 0; k < 20; ++k) {
    const double mu = mu_d(rng);
    const double log_std = std::log(sigma_d(rng));
    auto density = [&](double a) {
      return std::exp(squashed_gaussian_log_prob(mu, log_std, std::atanh(a)));
    };
    EXPECT_NEAR(integrator.integrate(density, -1.0, 1.0), 1.0, 1e-3) << mu << ' ' << log_std;
  }
}

TEST(Sac, DeterministicActionIsTanhMean) {
  SacConfig cfg = small_config();
  Rng rng(2);
  SacAgent agent(3, cfg, rng);
  set_policy_head(agent, 0.7, -1.0);
  const ActionSample s = sample_action(agent, Vec::Zero(agent.obs_dim), true, rng);
  EXPECT_NEAR(s.action[0], std::tanh(0.7), 1e-15);
  EXPECT_TRUE(std::isnan(s.log_prob));
  for (int k = 0; k < 200; ++k) {
    const ActionSample r = sample_action(agent, Vec::Random(agent.obs_dim), false, rng);
    EXPECT_LT(r.action.cwiseAbs().maxCoeff(), 1.0);
    EXPECT_TRUE(std::isfinite(r.log_prob));
  }
}

TEST(Sac, LogStdIsClamped) {
  SacConfig cfg = small_config();
  Rng rng(2);
  SacAgent agent(3, cfg, rng);
  set_policy_head(agent, 0.0, 50.0);
  PolicyBatch pb = policy_batch(agent, Mat::Zero(agent.obs_dim, 2), rng);
  EXPECT_DOUBLE_EQ(pb.log_std.maxCoeff(), 2.0);
  EXPECT_TRUE(pb.clamp_mask.isZero());
  set_policy_head(agent, 0.0, -50.0);
  pb = policy_batch(agent, Mat::Zero(agent.obs_dim, 2), rng);
  EXPECT_DOUBLE_EQ(pb.log_std.minCoeff(), -20.0);
}

TEST(Sac, TargetEntropyIsMinusActionDim) {
  SacConfig cfg = small_config();
  Rng rng(2);
  EXPECT_DOUBLE_EQ(SacAgent(3, cfg, rng).target_entropy, -3.0);
  EXPECT_DOUBLE_EQ(SacAgent(3, cfg, rng).alpha(), 1.0);
}

TEST(Sac, TdTargetTerminalAndMyopic) {
  SacConfig cfg = small_config();
  Rng rng(4);
  SacAgent agent(3, cfg, rng);
  TransitionBatch batch = random_batch(agent.obs_dim, 3, 6, rng);
  batch.done.setOnes();
  EXPECT_LT((td_target(agent, batch, rng) - batch.r).cwiseAbs().maxCoeff(), 1e-15);
  batch.done.setZero();
  agent.gamma = 0.0;
  EXPECT_LT((td_target(agent, batch, rng) - batch.r).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Sac, TdTargetByHand) {
  SacConfig cfg = small_config();
  Rng rng(5);
  SacAgent agent(3, cfg, rng);
  agent.log_alpha = std::log(0.2);
  const TransitionBatch batch = random_batch(agent.obs_dim, 3, 4, rng);
  Rng draw(77), replay(77);
  const Vec y = td_target(agent, batch, draw);

  std::normal_distribution<double> normal(0.0, 1.0);
  const Mat out = forward(agent.actor, batch.s2);
  for (int j = 0; j < 4; ++j) {
    Vec a(3);
    double logp = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double mu = out(i, j);
      const double ls = std::clamp(out(3 + i, j), -20.0, 2.0);
      const double z = mu + std::exp(ls) * normal(replay);
      a[i] = std::tanh(z);
      logp += squashed_gaussian_log_prob(mu, ls, z);
    }
    Vec x(agent.obs_dim + 3);
    x << batch.s2.col(j), a;
    const double q = std::min(forward(agent.target1, x)[0], forward(agent.target2, x)[0]);
    EXPECT_NEAR(y[j], batch.r[j] + 0.99 * (q - 0.2 * logp), 1e-12);
  }
}

TEST(Sac, PolyakExamplesAndContraction) {
  SacConfig cfg = small_config();
  Rng rng(6);
  SacAgent agent(3, cfg, rng);
  for (auto& l : agent.critic1.layers) {
    l.weight.setConstant(1.0);
    l.bias.setConstant(1.0);
  }
  for (auto& l : agent.target1.layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
  polyak_update(agent);
  EXPECT_NEAR(agent.target1.layers[0].weight(0, 0), 0.005, 1e-15);
  for (int k = 1; k < 200; ++k) polyak_update(agent);
  EXPECT_NEAR(agent.target1.layers[1].bias[0], 1.0 - std::pow(0.995, 200), 1e-12);
  agent.tau = 1.0;
  polyak_update(agent);
  EXPECT_EQ(agent.target1.layers[0].weight, agent.critic1.layers[0].weight);
}

TEST(Sac, CriticLossDecreasesOnFixedBatch) {
  SacConfig cfg = small_config();
  cfg.hidden_layers = {32, 32};
  cfg.gamma = 0.0;
  Rng rng(8);
  SacAgent agent(3, cfg, rng);
  const TransitionBatch batch = random_batch(agent.obs_dim, 3, 32, rng);
  double prev = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 100; ++k) {
    const UpdateDiagnostics d = sac_update(agent, batch, rng);
    ASSERT_TRUE(d.finite());
    EXPECT_LT(d.critic1_loss, prev) << "update " << k;
    prev = d.critic1_loss;
  }
}

TEST(Sac, TemperatureMovesTowardTargetEntropy) {
  SacConfig cfg = small_config();
  Rng rng(9);
  SacAgent wide(3, cfg, rng);
  set_policy_head(wide, 0.0, 0.0);
  const TransitionBatch batch = random_batch(wide.obs_dim, 3, 64, rng);
  const UpdateDiagnostics d = sac_update(wide, batch, rng);
  EXPECT_GT(d.entropy, 3.0 * -1.0);
  EXPECT_LT(wide.log_alpha, 0.0);

  SacAgent narrow(3, cfg, rng);
  set_policy_head(narrow, 0.0, -5.0);
  const UpdateDiagnostics e = sac_update(narrow, batch, rng);
  EXPECT_LT(e.entropy, -3.0);
  EXPECT_GT(narrow.log_alpha, 0.0);
}

TEST(Sac, UpdateIsDeterministic) {
  SacConfig cfg = small_config();
  Rng init_a(10), init_b(10), data(11);
  SacAgent a(3, cfg, init_a), b(3, cfg, init_b);
  const TransitionBatch batch = random_batch(a.obs_dim, 3, 16, data);
  Rng ra(12), rb(12);
  for (int k = 0; k < 5; ++k) {
    const UpdateDiagnostics da = sac_update(a, batch, ra);
    const UpdateDiagnostics db = sac_update(b, batch, rb);
    EXPECT_EQ(da.critic1_loss, db.critic1_loss);
    EXPECT_EQ(da.actor_loss, db.actor_loss);
    EXPECT_EQ(da.alpha, db.alpha);
  }
  EXPECT_EQ(a.actor.layers[0].weight, b.actor.layers[0].weight);
  EXPECT_EQ(a.target2.layers[1].weight, b.target2.layers[1].weight);
  EXPECT_EQ(a.updates, 5);
}

TEST(Sac, ActorGradientMatchesFiniteDifferences) {
  SacConfig cfg = small_config();
  Rng rng(13);
  SacAgent agent(3, cfg, rng);
  agent.critic1 = make_mlp({agent.obs_dim + 3, 16, 16, 1}, rng, 1.0);
  agent.critic2 = make_mlp({agent.obs_dim + 3, 16, 16, 1}, rng, 1.0);
  agent.actor = make_mlp({agent.obs_dim, 16, 16, 6}, rng, 0.5);
  agent.log_alpha = std::log(0.3);
  const Mat obs = Mat::Random(agent.obs_dim, 4);

  const PolicyBatch pb = policy_batch(agent, obs, rng, false, true);
  Mlp grads = agent.actor.zeros_like();
  const double loss = actor_loss_and_grad(agent, obs, pb, grads);
  EXPECT_NEAR(loss, actor_loss_fixed_noise(agent, obs, pb.noise), 1e-12);

  const double h = 1e-6;
  Rng pick(14);
  for (int probe = 0; probe < 64; ++probe) {
    const auto li = std::uniform_int_distribution<std::size_t>(0, agent.actor.layers.size() - 1)(pick);
    auto& w = agent.actor.layers[li].weight;
    const auto i = std::uniform_int_distribution<Eigen::Index>(0, w.rows() - 1)(pick);
    const auto j = std::uniform_int_distribution<Eigen::Index>(0, w.cols() - 1)(pick);
    const double keep = w(i, j);
    w(i, j) = keep + h;
    const double up = actor_loss_fixed_noise(agent, obs, pb.noise);
    w(i, j) = keep - h;
    const double down = actor_loss_fixed_noise(agent, obs, pb.noise);
    w(i, j) = keep;
    const double numeric = (up - down) / (2 * h);
    const double analytic = grads.layers[li].weight(i, j);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    EXPECT_LT(std::abs(analytic - numeric) / denom, 1e-4) << analytic << " vs " << numeric;
  }
}

TEST(Sac, ReplayBufferRingOverwrite) {
  ReplayBuffer buf(5, 2, 1);
  for (int k = 0; k < 7; ++k) {
    buf.push({Vec::Constant(2, k), Vec::Constant(1, k), static_cast<double>(k),
              Vec::Constant(2, k + 1), false});
    EXPECT_LE(buf.size(), 5u);
  }
  EXPECT_EQ(buf.size(), 5u);
  EXPECT_EQ(buf.cursor(), 2u);
  const TransitionBatch b = buf.gather({0, 1, 2});
  EXPECT_DOUBLE_EQ(b.r[0], 5.0);
  EXPECT_DOUBLE_EQ(b.r[1], 6.0);
  EXPECT_DOUBLE_EQ(b.r[2], 2.0);
  EXPECT_DOUBLE_EQ(b.s2(0, 2), 3.0);
  EXPECT_THROW(buf.push({Vec::Zero(3), Vec::Zero(1), 0, Vec::Zero(2), false}),
               std::invalid_argument);
}

TEST(Sac, ReplaySamplingIsUniform) {
  const int n = 50;
  ReplayBuffer buf(n, 1, 1);
  for (int k = 0; k < n; ++k) buf.push({Vec::Zero(1), Vec::Zero(1), 0.0, Vec::Zero(1), false});
  Rng rng(15);
  std::vector<double> counts(n, 0.0);
  const int draws = 100000;
  for (int k = 0; k < draws / 250; ++k) {
    for (auto i : buf.sample_indices(250, rng)) counts[i] += 1.0;
  }
  const double expected = static_cast<double>(draws) / n;
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  const boost::math::chi_squared dist(n - 1);
  EXPECT_GT(boost::math::cdf(boost::math::complement(dist, chi2)), 0.01);
}

TEST(Sac, UpdateNeedsFullBatch) {
  SacConfig cfg = small_config();
  Rng rng(16);
  SacAgent agent(3, cfg, rng);
  ReplayBuffer buf(100, agent.obs_dim, 3);
  for (int k = 0; k < 7; ++k) {
    buf.push({Vec::Zero(agent.obs_dim), Vec::Zero(3), 0.0, Vec::Zero(agent.obs_dim), false});
  }
  EXPECT_FALSE(sac_update(agent, buf, 8, rng).performed);
  EXPECT_EQ(agent.updates, 0);
}

TEST(Sac, CheckpointRoundTrip) {
  SacConfig cfg = small_config();
  Rng rng(17);
  SacAgent agent(3, cfg, rng);
  agent.log_alpha = -1.25;
  const auto dir = std::filesystem::temp_directory_path() / "r2r_ckpt_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "a.bin";
  save_checkpoint(path, make_checkpoint(agent, {1234, 42, 0xABCDEFull, 4.5}));
  const Checkpoint ck = load_checkpoint(path);
  EXPECT_EQ(ck.meta.step, 1234);
  EXPECT_EQ(ck.meta.seed, 42u);
  EXPECT_EQ(ck.meta.config_hash, 0xABCDEFull);
  EXPECT_DOUBLE_EQ(ck.log_alpha, -1.25);
  EXPECT_EQ(ck.act_dim(), 3);
  EXPECT_EQ(ck.actor.layers[1].weight, agent.actor.layers[1].weight);
  EXPECT_EQ(ck.target2.layers[2].bias, agent.target2.layers[2].bias);
  EXPECT_TRUE(std::filesystem::exists(path.string() + ".json"));

  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.write("XXXX", 4);
  f.close();
  EXPECT_THROW(load_checkpoint(path), std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST(Sac, FreshPolicyIsNotPerfect) {
  SacConfig cfg = small_config();
  Rng rng(18);
  SacAgent agent(3, cfg, rng);
  PlantParams plant;
  EnvConfig env;
  const auto phase = cfg.schedule.phases[0];
  const EvaluationResult a = evaluate_policy(agent, plant, env, phase, 2, 5);
  const EvaluationResult b = evaluate_policy(agent, plant, env, phase, 2, 5);
  EXPECT_EQ(a.returns, b.returns);
  EXPECT_LT(a.mean_return(), 5.0);
}

TEST(Sac, WarmupThenOneUpdatePerStep) {
  SacConfig cfg = small_config();
  cfg.total_steps = 300;
  cfg.warmup_steps = 200;
  cfg.eval_interval = 100;
  cfg.eval_episodes = 1;
  EnvConfig env;
  env.episode_len = 50;
  PlantParams plant;
  const TrainingResult r = run_training(plant, env, cfg, 42);
  EXPECT_EQ(r.agent.updates, 100);
  EXPECT_EQ(r.agent.env_steps, 300);
  EXPECT_EQ(r.log.size(), 6u);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_TRUE(std::isnan(r.log[k].critic_loss));
  EXPECT_TRUE(std::isfinite(r.log[4].critic_loss));
  EXPECT_GE(r.best_step, 100);

  cfg.warmup_steps = 300;
  const TrainingResult idle = run_training(plant, env, cfg, 42);
  EXPECT_EQ(idle.agent.updates, 0);
  Rng init(derive_seed({42, 1}));
  const SacAgent fresh(3, cfg, init);
  EXPECT_EQ(idle.agent.actor.layers[0].weight, fresh.actor.layers[0].weight);
}

TEST(Sac, TrainingIsSeedDeterministic) {
  SacConfig cfg = small_config();
  cfg.total_steps = 250;
  cfg.warmup_steps = 100;
  cfg.eval_interval = 125;
  cfg.eval_episodes = 1;
  EnvConfig env;
  env.episode_len = 50;
  PlantParams plant;
  const TrainingResult a = run_training(plant, env, cfg, 7);
  const TrainingResult b = run_training(plant, env, cfg, 7);
  const TrainingResult c = run_training(plant, env, cfg, 8);
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t k = 0; k < a.log.size(); ++k) {
    EXPECT_EQ(a.log[k].episode_return, b.log[k].episode_return);
  }
  EXPECT_EQ(a.agent.actor.layers[0].weight, b.agent.actor.layers[0].weight);
  EXPECT_NE(a.log[0].episode_return, c.log[0].episode_return);
}

TEST(Sac, CurriculumAdvancesDuringTraining) {
  SacConfig cfg = small_config();
  cfg.total_steps = 1000;
  cfg.warmup_steps = 1000;
  cfg.eval_interval = 1000;
  cfg.eval_episodes = 1;
  EnvConfig env;
  env.episode_len = 50;
  const TrainingResult r = run_training(PlantParams{}, env, cfg, 3);
  ASSERT_EQ(r.log.size(), 20u);
  EXPECT_EQ(r.log.front().phase, 1);
  EXPECT_EQ(r.log[8].phase, 2);   // episode starting at step 400
  EXPECT_EQ(r.log[16].phase, 3);  // episode starting at step 800
  for (std::size_t k = 1; k < r.log.size(); ++k) EXPECT_GE(r.log[k].phase, r.log[k - 1].phase);
}
