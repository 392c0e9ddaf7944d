// Command-line front end: training, evaluation, baseline comparison, tuning,
// ablation and checkpoint inspection. Every output except manifest.json is a
// pure function of the resolved configuration and seeds.
#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "r2r/alloc.hpp"
#include "r2r/baselines.hpp"
#include "r2r/config.hpp"
#include "r2r/evalbench.hpp"
#include "r2r/sac.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace r2r;

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

struct Session {
  RunConfig cfg;
  fs::path out;
  std::uint64_t hash = 0;
  json manifest;
  std::vector<std::string> outputs;

  void record(const fs::path& p) { outputs.push_back(fs::relative(p, out).generic_string()); }

  void begin(const std::string& command, int argc, char** argv) {
    fs::create_directories(out);
    hash = config_hash(cfg);
    write_json(out / "config.resolved.json", to_json(cfg));
    manifest["command"] = command;
    manifest["argv"] = std::vector<std::string>(argv, argv + argc);
    std::ostringstream h;
    h << std::hex << hash;
    manifest["config_hash"] = h.str();
    manifest["started_utc"] = utc_now();
  }

  void finish(int status) {
    manifest["finished_utc"] = utc_now();
    manifest["status"] = status;
    manifest["outputs"] = outputs;
    write_json(out / "manifest.json", manifest);
  }
};

Mlp load_actor(const std::string& path, int n_sections) {
  const Checkpoint ck = load_checkpoint(path);
  if (ck.act_dim() != n_sections || ck.actor.input_dim() != observation_size(n_sections)) {
    throw std::runtime_error("checkpoint " + path + " does not match plant.n_sections");
  }
  return ck.actor;
}

TestCase case_of(int c) {
  if (c == 1) return TestCase::kNominal;
  if (c == 2) return TestCase::kStep;
  throw ConfigError("--case", "expected 1 or 2");
}

TestCaseResult run_case(const Session& s, TestCase tc, const PolicyFactory& f,
                        const std::string& name, int episodes) {
  return run_test_case(tc, f, name, s.cfg.plant, s.cfg.env, episodes, s.cfg.eval.seed,
                       s.cfg.eval.scenario, s.cfg.eval.bands);
}

int cmd_train(Session& s, std::optional<std::uint64_t> seed) {
  const std::vector<std::uint64_t> seeds = seed ? std::vector<std::uint64_t>{*seed} : s.cfg.seeds;
  for (auto sd : seeds) {
    const fs::path dir = s.out / to_string(s.cfg.sac.schedule.mode) / ("seed_" + std::to_string(sd));
    TrainingOptions opts{dir, s.hash, &std::cerr};
    const TrainingResult r = run_training(s.cfg.plant, s.cfg.env, s.cfg.sac, sd, opts);
    json summary = {{"seed", sd},
                    {"mode", to_string(s.cfg.sac.schedule.mode)},
                    {"total_steps", s.cfg.sac.total_steps},
                    {"best_step", r.best_step},
                    {"best_eval_return", r.best_eval_return},
                    {"final_alpha", r.agent.alpha()},
                    {"updates", r.agent.updates},
                    {"parameters", r.agent.parameter_count()}};
    write_json(dir / "summary.json", summary);
    s.record(dir / "summary.json");
    s.record(dir / "training_log.csv");
    if (r.best_step >= 0) s.record(dir / "best.bin");
    std::cout << summary.dump() << '\n';
  }
  return 0;
}

int cmd_evaluate(Session& s, const std::string& ckpt, int c, int episodes) {
  const TestCase tc = case_of(c);
  const Mlp actor = load_actor(ckpt, s.cfg.plant.n_sections);
  const TestCaseResult r =
      run_case(s, tc, actor_policy_factory(actor, s.cfg.plant.n_sections), "SAC", episodes);
  const std::string stem = "eval_case" + std::to_string(c);
  write_json(s.out / (stem + ".json"), to_json(r.report));
  std::ofstream traces(s.out / (stem + "_traces.csv"));
  for (std::size_t k = 0; k < r.traces.size(); ++k) {
    write_long_csv(traces, r.traces[k], "SAC_ep" + std::to_string(k), k == 0);
  }
  s.record(s.out / (stem + ".json"));
  s.record(s.out / (stem + "_traces.csv"));
  std::cout << to_json(r.report).dump(2) << '\n';
  return 0;
}

int cmd_compare(Session& s, const std::vector<std::string>& ckpts, int c, int episodes) {
  const TestCase tc = case_of(c);
  const int n = s.cfg.plant.n_sections;
  std::vector<MetricsReport> sac_reports;
  std::vector<EpisodeTrace> first;
  for (const auto& path : ckpts) {
    const auto r = run_case(s, tc, actor_policy_factory(load_actor(path, n), n), "SAC", episodes);
    sac_reports.push_back(r.report);
    if (first.empty()) first.push_back(r.traces.front());
  }
  const auto& b = s.cfg.baselines;
  const auto mpc = run_case(s, tc, baseline_factory(BaselineKind::kMpc, s.cfg.plant, b.mpc, b.mpc_horizon),
                            "MPC", episodes);
  const auto lqr = run_case(s, tc, baseline_factory(BaselineKind::kLqr, s.cfg.plant, b.lqr), "LQR",
                            episodes);
  first.push_back(mpc.traces.front());
  first.push_back(lqr.traces.front());
  const std::vector<MetricsReport> reports{average_reports(sac_reports), mpc.report, lqr.report};
  const ComparisonTable tab = compare_controllers(reports);

  const std::string stem = "comparison_case" + std::to_string(c);
  std::ofstream csv(s.out / (stem + ".csv"));
  write_comparison_csv(csv, tab);
  json j = json::array();
  for (const auto& r : reports) j.push_back(to_json(r));
  write_json(s.out / (stem + ".json"), j);
  std::ofstream traces(s.out / (stem + "_traces.csv"));
  const char* names[] = {"SAC", "MPC", "LQR"};
  for (std::size_t k = 0; k < first.size(); ++k) write_long_csv(traces, first[k], names[k], k == 0);
  for (const char* ext : {".csv", ".json", "_traces.csv"}) s.record(s.out / (stem + ext));
  write_comparison_csv(std::cout, tab);
  return 0;
}

int cmd_tune(Session& s, const std::string& which, int episodes) {
  BaselineKind kind;
  if (which == "lqr") {
    kind = BaselineKind::kLqr;
  } else if (which == "mpc") {
    kind = BaselineKind::kMpc;
  } else {
    throw ConfigError("--controller", "expected lqr or mpc");
  }
  const TuningResult r = tune_weights(kind, s.cfg.baselines.grid, s.cfg.plant, s.cfg.env, episodes,
                                      s.cfg.eval.seed, s.cfg.baselines.mpc_horizon);
  const fs::path path = s.out / ("tuning_" + which + ".csv");
  std::ofstream csv(path);
  write_tuning_csv(csv, r);
  s.record(path);
  std::cout << json{{which, {{"q_tension", r.best.q_tension},
                             {"q_velocity", r.best.q_velocity},
                             {"r", r.best.r}}}}
                   .dump(2)
            << '\n';
  return 0;
}

int cmd_ablate(Session& s) {
  const auto entries = run_ablation(s.cfg.plant, s.cfg.env, s.cfg.sac, s.cfg.seeds,
                                    s.cfg.eval.episodes, s.cfg.eval.seed, s.out, &std::cerr);
  std::ofstream csv(s.out / "ablation.csv");
  write_ablation_csv(csv, entries);
  json j = json::array();
  for (const auto& e : entries) {
    j.push_back({{"mode", to_string(e.mode)},
                 {"nominal", to_json(e.nominal)},
                 {"step", to_json(e.step)},
                 {"best_steps", e.best_steps}});
  }
  write_json(s.out / "ablation.json", j);
  s.record(s.out / "ablation.csv");
  s.record(s.out / "ablation.json");
  write_ablation_csv(std::cout, entries);
  return 0;
}

int cmd_inspect(const std::string& ckpt) {
  const Checkpoint ck = load_checkpoint(ckpt);
  json j = checkpoint_sidecar(ck);
  j["parameters"]["total"] = ck.actor.parameter_count() + ck.critic1.parameter_count() +
                             ck.critic2.parameter_count();
  std::cout << j.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  r2r::keep_heap_resident();
  CLI::App app{"Roll-to-roll web tension control with soft actor-critic and LQR/MPC baselines"};
  app.require_subcommand(1);
  std::string config_path;
  std::string output_dir;
  app.add_option("-c,--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("-o,--output", output_dir, "Output directory (overrides config and R2R_OUTPUT_DIR)");

  std::optional<std::uint64_t> seed;
  std::string mode;
  std::int64_t steps = 0;
  auto* train = app.add_subcommand("train", "Train SAC agents (all configured seeds unless --seed)");
  train->add_option("--seed", seed, "Single seed");
  train->add_option("--mode", mode, "curriculum | domain_randomization | vanilla");
  train->add_option("--steps", steps, "Override sac.total_steps");

  std::vector<std::string> ckpts;
  int test_case = 1;
  int episodes = 0;
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint on a benchmark case");
  evaluate->add_option("--checkpoint", ckpts, "Checkpoint file")->required()->expected(1);
  evaluate->add_option("--case", test_case, "1 = nominal, 2 = step change")->check(CLI::Range(1, 2));
  evaluate->add_option("--episodes", episodes, "Episodes (default eval.episodes)");

  auto* compare = app.add_subcommand("compare", "SAC vs MPC vs LQR on a benchmark case");
  compare->add_option("--checkpoint", ckpts, "Checkpoint file(s); metrics are averaged")
      ->required();
  compare->add_option("--case", test_case, "1 = nominal, 2 = step change")->check(CLI::Range(1, 2));
  compare->add_option("--episodes", episodes, "Episodes (default eval.episodes)");

  std::string controller;
  auto* tune = app.add_subcommand("tune", "Grid-search baseline weights on the nominal case");
  tune->add_option("--controller", controller, "lqr | mpc")->required();
  tune->add_option("--episodes", episodes, "Episodes (default eval.episodes)");

  auto* ablate = app.add_subcommand("ablate", "Train and compare curriculum, domain randomization and vanilla");

  auto* inspect = app.add_subcommand("inspect", "Print checkpoint metadata and parameter counts");
  inspect->add_option("--checkpoint", ckpts, "Checkpoint file")->required()->expected(1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  if (inspect->parsed()) {
    try {
      return cmd_inspect(ckpts.front());
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return 1;
    }
  }

  Session s;
  try {
    s.cfg = config_path.empty() ? RunConfig{} : parse_config_file(config_path);
    if (steps > 0) s.cfg.sac.total_steps = steps;
    if (steps > 0) detail::validated("sac", [&] { s.cfg.sac.validate(); });
    if (!mode.empty()) {
      try {
        s.cfg.sac.schedule.mode = curriculum_mode_from_string(mode);
      } catch (const std::invalid_argument& e) {
        throw ConfigError("--mode", e.what());
      }
    }
    if (episodes < 0) throw ConfigError("--episodes", "must be positive");
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  }
  if (const char* env = std::getenv("R2R_OUTPUT_DIR"); env && *env) s.cfg.output_dir = env;
  if (!output_dir.empty()) s.cfg.output_dir = output_dir;
  s.out = s.cfg.output_dir;
  const int n_episodes = episodes > 0 ? episodes : s.cfg.eval.episodes;

  int status = 1;
  try {
    s.begin(app.get_subcommands().front()->get_name(), argc, argv);
    if (train->parsed()) status = cmd_train(s, seed);
    if (evaluate->parsed()) status = cmd_evaluate(s, ckpts.front(), test_case, n_episodes);
    if (compare->parsed()) status = cmd_compare(s, ckpts, test_case, n_episodes);
    if (tune->parsed()) status = cmd_tune(s, controller, n_episodes);
    if (ablate->parsed()) status = cmd_ablate(s);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    status = 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    status = 1;
  }
  try {
    s.finish(status);
  } catch (const std::exception& e) {
    std::cerr << "error: cannot write manifest: " << e.what() << '\n';
  }
  return status;
}
