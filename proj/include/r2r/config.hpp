#ifndef R2R_CONFIG_HPP
#define R2R_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "r2r/baselines.hpp"
#include "r2r/evalbench.hpp"
#include "r2r/mdp_env.hpp"
#include "r2r/plant.hpp"
#include "r2r/sac.hpp"

namespace r2r {

/// Schema violation; `path` is a JSON-pointer-like field path such as "env.beta_smooth".
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string path, const std::string& msg)
      : std::runtime_error(path + ": " + msg), path_(std::move(path)) {}
  [[nodiscard]] const std::string& path() const { return path_; }

 private:
  std::string path_;
};

/// Defaults are the best nominal-case grid points found by `tune` for the default plant.
struct BaselineSettings {
  ControlWeights lqr{1000.0, 1e4, 0.01};
  ControlWeights mpc{1000.0, 1e4, 0.01};
  int mpc_horizon = 10;
  WeightGrid grid;
};

struct EvalSettings {
  int episodes = 10;
  std::uint64_t seed = 1000;
  StepBands bands;
  ScenarioSpec scenario;
};

struct RunConfig {
  PlantParams plant;
  EnvConfig env;
  SacConfig sac;
  BaselineSettings baselines;
  EvalSettings eval;
  std::vector<std::uint64_t> seeds{42, 43, 44};
  std::string output_dir = "runs";
};

namespace detail {

/// Walks one JSON object, remembering which keys were read so the rest can be rejected.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  [[nodiscard]] std::string child(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const auto& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw ConfigError(child(key), "expected a number");
        out = v.get<double>();
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError(child(key), "expected an integer");
        if constexpr (std::is_unsigned_v<T>) {
          if (v.get<std::int64_t>() < 0) throw ConfigError(child(key), "must be non-negative");
        }
        out = v.get<T>();
      } else {
        out = v.get<T>();
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(child(key), e.what());
    }
  }

  /// Returns the sub-object reader if present.
  std::optional<ObjectReader> object(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) return std::nullopt;
    return ObjectReader(j_.at(key), child(key));
  }

  const nlohmann::json* raw(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void reject_unknown() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError(child(k), "unknown key");
    }
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline std::pair<double, double> read_range(const nlohmann::json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
    throw ConfigError(path, "expected [lo, hi]");
  }
  const double lo = j[0].get<double>(), hi = j[1].get<double>();
  if (!(lo < hi)) throw ConfigError(path, "requires lo < hi");
  return {lo, hi};
}

inline std::vector<double> read_numbers(const nlohmann::json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) throw ConfigError(path, "expected a non-empty number list");
  std::vector<double> out;
  for (const auto& x : j) {
    if (!x.is_number()) throw ConfigError(path, "expected numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

inline void read_weights(ObjectReader& r, ControlWeights& w) {
  r.read("q_tension", w.q_tension);
  r.read("q_velocity", w.q_velocity);
  r.read("r", w.r);
  if (!(w.q_tension >= 0) || !(w.q_velocity >= 0)) throw ConfigError(r.child("q_*"), "must be >= 0");
  if (!(w.r > 0)) throw ConfigError(r.child("r"), "must be positive");
  r.reject_unknown();
}

/// Re-raises std::invalid_argument from a validate() as a ConfigError on `section`.
template <typename F>
void validated(const std::string& section, F&& f) {
  try {
    f();
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    std::string path = section;
    const auto dot = msg.find('.');
    const auto space = msg.find(' ');
    if (msg.rfind(section + ".", 0) == 0 && space != std::string::npos && dot < space) {
      path = msg.substr(0, space);
      msg = msg.substr(space + 1);
    }
    throw ConfigError(path, msg);
  }
}

}  // namespace detail

/// Parses a run configuration; absent fields keep their defaults, unknown keys are rejected.
inline RunConfig parse_config(const nlohmann::json& root) {
  RunConfig cfg;
  detail::ObjectReader top(root, "");

  if (auto r = top.object("plant")) {
    auto& p = cfg.plant;
    r->read("modulus_E", p.modulus_E);
    r->read("area_A", p.area_A);
    r->read("radius_R", p.radius_R);
    r->read("inertia_J", p.inertia_J);
    r->read("friction_fb", p.friction_fb);
    r->read("span_length_L", p.span_length_L);
    r->read("n_sections", p.n_sections);
    r->read("unwind_velocity_v0", p.unwind_velocity_v0);
    r->read("boundary_T0", p.boundary_T0);
    r->read("boundary_T_end", p.boundary_T_end);
    r->read("dt", p.dt);
    r->read("torque_limit_u_scale", p.torque_limit_u_scale);
    std::string fm = p.friction_model == FrictionModel::kLinearVelocity ? "linear_velocity"
                                                                        : "angular_velocity";
    r->read("friction_model", fm);
    if (fm == "linear_velocity") {
      p.friction_model = FrictionModel::kLinearVelocity;
    } else if (fm == "angular_velocity") {
      p.friction_model = FrictionModel::kAngularVelocity;
    } else {
      throw ConfigError("plant.friction_model", "expected linear_velocity or angular_velocity");
    }
    r->reject_unknown();
  }
  detail::validated("plant", [&] { cfg.plant.validate(); });
  if (!(cfg.plant.stiffness() > 50.0)) {
    throw ConfigError("plant.modulus_E", "stiffness EA must exceed the operating tensions");
  }

  if (auto r = top.object("env")) {
    auto& e = cfg.env;
    r->read("T_nominal", e.T_nominal);
    r->read("T_range", e.T_range);
    r->read("v_nominal", e.v_nominal);
    r->read("v_range", e.v_range);
    r->read("beta_smooth", e.beta_smooth);
    r->read("noise_sigma", e.noise_sigma);
    r->read("episode_len", e.episode_len);
    if (auto w = r->object("weights")) {
      w->read("w_T", e.weights.w_T);
      w->read("w_v", e.weights.w_v);
      w->read("w_c", e.weights.w_c);
      w->read("w_s", e.weights.w_s);
      w->read("w_viol", e.weights.w_viol);
      w->read("w_succ", e.weights.w_succ);
      w->read("lambda", e.weights.lambda);
      w->reject_unknown();
    }
    if (const auto* b = r->raw("tension_bounds")) {
      std::tie(e.tension_lo, e.tension_hi) = detail::read_range(*b, "env.tension_bounds");
    }
    r->read("success_tol_T", e.success_tol_T);
    r->read("success_tol_v", e.success_tol_v);
    r->reject_unknown();
  }
  detail::validated("env", [&] { cfg.env.validate(); });

  if (auto r = top.object("sac")) {
    auto& s = cfg.sac;
    r->read("total_steps", s.total_steps);
    r->read("warmup_steps", s.warmup_steps);
    r->read("batch_size", s.batch_size);
    r->read("buffer_capacity", s.buffer_capacity);
    r->read("eval_interval", s.eval_interval);
    r->read("eval_episodes", s.eval_episodes);
    r->read("gamma", s.gamma);
    r->read("tau", s.tau);
    r->read("learning_rate", s.learning_rate);
    r->read("init_log_alpha", s.init_log_alpha);
    r->read("log_std_min", s.log_std_min);
    r->read("log_std_max", s.log_std_max);
    if (const auto* h = r->raw("hidden_layers")) {
      if (!h->is_array() || h->empty()) throw ConfigError("sac.hidden_layers", "expected a list");
      s.hidden_layers.clear();
      for (const auto& x : *h) {
        if (!x.is_number_integer()) throw ConfigError("sac.hidden_layers", "expected integers");
        s.hidden_layers.push_back(x.get<int>());
      }
    }
    std::string mode = to_string(s.schedule.mode);
    r->read("curriculum_mode", mode);
    try {
      s.schedule.mode = curriculum_mode_from_string(mode);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("sac.curriculum_mode", e.what());
    }
    if (const auto* b = r->raw("phase_boundaries")) {
      std::tie(s.schedule.phase2_start, s.schedule.phase3_start) =
          detail::read_range(*b, "sac.phase_boundaries");
    }
    if (const auto* ph = r->raw("phases")) {
      if (!ph->is_array() || ph->size() != 3) throw ConfigError("sac.phases", "expected 3 phases");
      for (std::size_t i = 0; i < 3; ++i) {
        detail::ObjectReader pr((*ph)[i], "sac.phases[" + std::to_string(i) + "]");
        auto& phase = s.schedule.phases[i];
        if (const auto* t = pr.raw("tension")) {
          std::tie(phase.tension_lo, phase.tension_hi) = detail::read_range(*t, pr.child("tension"));
        }
        if (const auto* v = pr.raw("velocity")) {
          std::tie(phase.velocity_lo, phase.velocity_hi) =
              detail::read_range(*v, pr.child("velocity"));
        }
        pr.read("step_change_prob", phase.step_change_prob);
        pr.reject_unknown();
      }
    }
    r->reject_unknown();
  }
  detail::validated("sac", [&] { cfg.sac.validate(); });

  if (auto r = top.object("baselines")) {
    auto& b = cfg.baselines;
    if (auto l = r->object("lqr")) detail::read_weights(*l, b.lqr);
    if (auto m = r->object("mpc")) {
      m->read("horizon", b.mpc_horizon);
      detail::read_weights(*m, b.mpc);
    }
    if (auto g = r->object("grid")) {
      if (const auto* x = g->raw("q_tension")) b.grid.q_tension = detail::read_numbers(*x, "baselines.grid.q_tension");
      if (const auto* x = g->raw("q_velocity")) b.grid.q_velocity = detail::read_numbers(*x, "baselines.grid.q_velocity");
      if (const auto* x = g->raw("r")) b.grid.r = detail::read_numbers(*x, "baselines.grid.r");
      g->reject_unknown();
    }
    if (b.mpc_horizon < 1) throw ConfigError("baselines.mpc.horizon", "must be >= 1");
    r->reject_unknown();
  }

  if (auto r = top.object("eval")) {
    auto& e = cfg.eval;
    r->read("episodes", e.episodes);
    r->read("seed", e.seed);
    if (auto b = r->object("step_bands")) {
      b->read("rise_lo", e.bands.rise_lo);
      b->read("rise_hi", e.bands.rise_hi);
      b->read("settle_fraction", e.bands.settle_fraction);
      b->read("coupling_band", e.bands.coupling_band);
      b->reject_unknown();
    }
    if (auto s = r->object("scenario")) {
      s->read("nominal_tension", e.scenario.nominal_tension);
      s->read("unwind_velocity", e.scenario.unwind_velocity);
      s->read("step_section", e.scenario.step_section);
      s->read("step_from", e.scenario.step_from);
      s->read("step_to", e.scenario.step_to);
      s->read("step_time", e.scenario.step_time);
      s->reject_unknown();
    }
    if (e.episodes < 1) throw ConfigError("eval.episodes", "must be >= 1");
    if (e.scenario.step_section < 0 || e.scenario.step_section >= cfg.plant.n_sections) {
      throw ConfigError("eval.scenario.step_section", "out of range");
    }
    r->reject_unknown();
  }

  if (const auto* s = top.raw("seeds")) {
    if (!s->is_array() || s->empty()) throw ConfigError("seeds", "expected a non-empty list");
    cfg.seeds.clear();
    for (const auto& x : *s) {
      if (!x.is_number_unsigned()) throw ConfigError("seeds", "expected non-negative integers");
      cfg.seeds.push_back(x.get<std::uint64_t>());
    }
  }
  top.read("output_dir", cfg.output_dir);
  top.reject_unknown();
  return cfg;
}

inline RunConfig parse_config_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("<file>", "cannot open " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("<file>", std::string("invalid JSON: ") + e.what());
  }
  return parse_config(j);
}

/// Fully resolved configuration, every field explicit.
inline nlohmann::json to_json(const RunConfig& c) {
  using nlohmann::json;
  const auto& p = c.plant;
  const auto& e = c.env;
  const auto& s = c.sac;
  json phases = json::array();
  for (const auto& ph : s.schedule.phases) {
    phases.push_back({{"tension", {ph.tension_lo, ph.tension_hi}},
                      {"velocity", {ph.velocity_lo, ph.velocity_hi}},
                      {"step_change_prob", ph.step_change_prob}});
  }
  auto weights = [](const ControlWeights& w) {
    return json{{"q_tension", w.q_tension}, {"q_velocity", w.q_velocity}, {"r", w.r}};
  };
  json mpc = weights(c.baselines.mpc);
  mpc["horizon"] = c.baselines.mpc_horizon;
  return {
      {"plant",
       {{"modulus_E", p.modulus_E},
        {"area_A", p.area_A},
        {"radius_R", p.radius_R},
        {"inertia_J", p.inertia_J},
        {"friction_fb", p.friction_fb},
        {"span_length_L", p.span_length_L},
        {"n_sections", p.n_sections},
        {"unwind_velocity_v0", p.unwind_velocity_v0},
        {"boundary_T0", p.boundary_T0},
        {"boundary_T_end", p.boundary_T_end},
        {"dt", p.dt},
        {"torque_limit_u_scale", p.torque_limit_u_scale},
        {"friction_model", p.friction_model == FrictionModel::kLinearVelocity
                               ? "linear_velocity"
                               : "angular_velocity"}}},
      {"env",
       {{"T_nominal", e.T_nominal},
        {"T_range", e.T_range},
        {"v_nominal", e.v_nominal},
        {"v_range", e.v_range},
        {"beta_smooth", e.beta_smooth},
        {"noise_sigma", e.noise_sigma},
        {"episode_len", e.episode_len},
        {"weights",
         {{"w_T", e.weights.w_T},
          {"w_v", e.weights.w_v},
          {"w_c", e.weights.w_c},
          {"w_s", e.weights.w_s},
          {"w_viol", e.weights.w_viol},
          {"w_succ", e.weights.w_succ},
          {"lambda", e.weights.lambda}}},
        {"tension_bounds", {e.tension_lo, e.tension_hi}},
        {"success_tol_T", e.success_tol_T},
        {"success_tol_v", e.success_tol_v}}},
      {"sac",
       {{"total_steps", s.total_steps},
        {"warmup_steps", s.warmup_steps},
        {"batch_size", s.batch_size},
        {"buffer_capacity", s.buffer_capacity},
        {"eval_interval", s.eval_interval},
        {"eval_episodes", s.eval_episodes},
        {"gamma", s.gamma},
        {"tau", s.tau},
        {"learning_rate", s.learning_rate},
        {"init_log_alpha", s.init_log_alpha},
        {"log_std_min", s.log_std_min},
        {"log_std_max", s.log_std_max},
        {"hidden_layers", s.hidden_layers},
        {"curriculum_mode", to_string(s.schedule.mode)},
        {"phase_boundaries", {s.schedule.phase2_start, s.schedule.phase3_start}},
        {"phases", phases}}},
      {"baselines",
       {{"lqr", weights(c.baselines.lqr)},
        {"mpc", mpc},
        {"grid",
         {{"q_tension", c.baselines.grid.q_tension},
          {"q_velocity", c.baselines.grid.q_velocity},
          {"r", c.baselines.grid.r}}}}},
      {"eval",
       {{"episodes", c.eval.episodes},
        {"seed", c.eval.seed},
        {"step_bands",
         {{"rise_lo", c.eval.bands.rise_lo},
          {"rise_hi", c.eval.bands.rise_hi},
          {"settle_fraction", c.eval.bands.settle_fraction},
          {"coupling_band", c.eval.bands.coupling_band}}},
        {"scenario",
         {{"nominal_tension", c.eval.scenario.nominal_tension},
          {"unwind_velocity", c.eval.scenario.unwind_velocity},
          {"step_section", c.eval.scenario.step_section},
          {"step_from", c.eval.scenario.step_from},
          {"step_to", c.eval.scenario.step_to},
          {"step_time", c.eval.scenario.step_time}}}}},
      {"seeds", c.seeds},
      {"output_dir", c.output_dir},
  };
}

/// 64-bit FNV-1a of the canonical (key-sorted, compact) resolved JSON, output_dir excluded.
inline std::uint64_t config_hash(const RunConfig& c) {
  nlohmann::json j = to_json(c);
  j.erase("output_dir");
  const std::string s = j.dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace r2r

#endif  // R2R_CONFIG_HPP
