#ifndef R2R_BASELINES_HPP
#define R2R_BASELINES_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "r2r/evalbench.hpp"
#include "r2r/mdp_env.hpp"
#include "r2r/plant.hpp"

namespace r2r {

/// Jacobians of the plant around an operating point and their Euler discretization.
struct LinearModel {
  Mat A;    ///< 2N x 2N, state ordered [T; v]
  Mat B;    ///< 2N x N
  Mat A_d;  ///< I + dt A
  Mat B_d;  ///< dt B
  PlantState x_op;
  Vec u_op;
  double dt = 0.01;
};

/// Analytic partial derivatives of the tension/velocity rates at (x_op, u_op).
inline LinearModel linearize(const PlantParams& p, const PlantState& x_op, const Vec& u_op) {
  const int n = p.n_sections;
  if (x_op.size() != n || u_op.size() != n) throw std::invalid_argument("linearize: shape");
  const double ea = p.stiffness();
  const double l = p.span_length_L;
  const double r = p.radius_R;
  const double j = p.inertia_J;
  const double fric = p.friction_model == FrictionModel::kLinearVelocity ? p.friction_fb
                                                                         : p.friction_fb / r;
  LinearModel m;
  m.A = Mat::Zero(2 * n, 2 * n);
  m.B = Mat::Zero(2 * n, n);
  const auto& t = x_op.tensions;
  const auto& v = x_op.velocities;
  for (int i = 0; i < n; ++i) {
    // dT_i
    m.A(i, i) = -v[i] / l;
    m.A(i, n + i) = (ea - t[i]) / l;
    if (i > 0) {
      m.A(i, i - 1) = v[i - 1] / l;
      m.A(i, n + i - 1) = -(ea - t[i - 1]) / l;
    }
    // dv_i
    m.A(n + i, i) = -r * r / j;
    if (i + 1 < n) m.A(n + i, i + 1) = r * r / j;
    m.A(n + i, n + i) = -fric / j;
    m.B(n + i, i) = r / j;
  }
  m.A_d = Mat::Identity(2 * n, 2 * n) + p.dt * m.A;
  m.B_d = p.dt * m.B;
  m.x_op = x_op;
  m.u_op = u_op;
  m.dt = p.dt;
  return m;
}

/// Linearization at uniform `tension` with continuity velocities and equilibrium torques.
inline LinearModel linearize_nominal(const PlantParams& p, double tension) {
  const PlantState x = reference_state(p, Vec::Constant(p.n_sections, tension));
  return linearize(p, x, equilibrium_torques(p, x.tensions, x.velocities));
}

class DareError : public std::runtime_error {
 public:
  DareError(const std::string& what, double residual)
      : std::runtime_error(what), residual_(residual) {}
  [[nodiscard]] double residual() const { return residual_; }

 private:
  double residual_;
};

struct DareSolution {
  Mat P;
  Mat K;
  int iterations = 0;
  double residual = 0.0;  ///< max |P - Riccati(P)| at return
};

namespace detail {
inline Mat riccati_map(const Mat& a, const Mat& b, const Mat& q, const Mat& r, const Mat& p,
                       Mat* gain) {
  const Mat bt_p = b.transpose() * p;
  const Mat s = r + bt_p * b;
  const Eigen::LDLT<Mat> ldlt(s);
  if (ldlt.info() != Eigen::Success) throw DareError("solve_dare: R + B'PB not invertible", 0.0);
  Mat k = ldlt.solve(bt_p * a);
  if (gain) *gain = k;
  Mat next = q + a.transpose() * p * a - a.transpose() * p * b * k;
  return 0.5 * (next + next.transpose());
}
}  // namespace detail

/**
 * Discrete algebraic Riccati equation by fixed-point iteration from P = Q,
 * stopping when max |dP| < tol * max(1, max |P|). K = (R + B'PB)^-1 B'PA.
 */
inline DareSolution solve_dare(const Mat& a, const Mat& b, const Mat& q, const Mat& r,
                               double tol = 1e-12, int max_iter = 100'000) {
  if (a.rows() != a.cols() || b.rows() != a.rows() || q.rows() != a.rows() ||
      r.rows() != b.cols()) {
    throw std::invalid_argument("solve_dare: inconsistent shapes");
  }
  DareSolution sol;
  Mat p = q;
  double delta = std::numeric_limits<double>::infinity();
  for (int it = 1; it <= max_iter; ++it) {
    Mat next = detail::riccati_map(a, b, q, r, p, nullptr);
    delta = (next - p).cwiseAbs().maxCoeff();
    p = std::move(next);
    if (!std::isfinite(delta)) throw DareError("solve_dare: iteration diverged", delta);
    if (delta < tol * std::max(1.0, p.cwiseAbs().maxCoeff())) {
      sol.iterations = it;
      break;
    }
    if (it == max_iter) {
      throw DareError("solve_dare: no convergence after " + std::to_string(max_iter) +
                          " iterations (max |dP| = " + std::to_string(delta) + ")",
                      delta);
    }
  }
  sol.P = p;
  const Mat again = detail::riccati_map(a, b, q, r, p, &sol.K);
  sol.residual = (again - p).cwiseAbs().maxCoeff();
  return sol;
}

inline double spectral_radius(const Mat& m) {
  Eigen::EigenSolver<Mat> es(m, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

/// Diagonal weights: tension and velocity state penalties, input penalty.
struct ControlWeights {
  double q_tension = 100.0;
  double q_velocity = 1000.0;
  double r = 0.1;

  [[nodiscard]] Mat Q(int n) const {
    Vec d(2 * n);
    d << Vec::Constant(n, q_tension), Vec::Constant(n, q_velocity);
    return d.asDiagonal();
  }
  [[nodiscard]] Mat R(int n) const { return Mat::Identity(n, n) * r; }
};

/// Equilibrium feedforward at the reference plus state feedback on the deviation.
class LqrController {
 public:
  LqrController(const PlantParams& plant, ControlWeights w, double nominal_tension = 30.0)
      : weights_(w), model_(linearize_nominal(plant, nominal_tension)) {
    const int n = plant.n_sections;
    dare_ = solve_dare(model_.A_d, model_.B_d, w.Q(n), w.R(n));
  }

  /// Torques for `plant` (the episode's parameters) at `state` tracking `t_ref`.
  [[nodiscard]] Vec control(const PlantParams& plant, const PlantState& state,
                            const Vec& t_ref) const {
    const PlantState ref = reference_state(plant, t_ref);
    const Vec u_eq = equilibrium_torques(plant, ref.tensions, ref.velocities);
    const Vec u = u_eq - dare_.K * (state.stacked() - ref.stacked());
    const double lim = plant.torque_limit_u_scale;
    return u.cwiseMax(-lim).cwiseMin(lim);
  }

  [[nodiscard]] const Mat& gain() const { return dare_.K; }
  [[nodiscard]] const DareSolution& dare() const { return dare_; }
  [[nodiscard]] const LinearModel& model() const { return model_; }
  [[nodiscard]] const ControlWeights& weights() const { return weights_; }
  [[nodiscard]] Mat closed_loop() const { return model_.A_d - model_.B_d * dare_.K; }

 private:
  ControlWeights weights_;
  LinearModel model_;
  DareSolution dare_;
};

/**
 * Receding-horizon controller. Predictions use the nominal Jacobians around
 * each reference point, so deviations evolve as
 *   dx_{k+1} = A_d dx_k + B_d du_k + (xref_k - xref_{k+1}),
 * with du the offset from the equilibrium torques. The condensed
 * unconstrained QP is solved once offline; each call applies the first move
 * and clamps it to the torque limit.
 */
class MpcController {
 public:
  MpcController(const PlantParams& plant, ControlWeights w, int horizon = 10,
                double nominal_tension = 30.0)
      : weights_(w), horizon_(horizon), model_(linearize_nominal(plant, nominal_tension)) {
    if (horizon < 1) throw std::invalid_argument("MpcController: horizon must be >= 1");
    const int n = plant.n_sections;
    const int nx = 2 * n;
    const int h = horizon;
    const Mat& a = model_.A_d;
    const Mat& b = model_.B_d;

    std::vector<Mat> a_pow(static_cast<std::size_t>(h + 1));
    a_pow[0] = Mat::Identity(nx, nx);
    for (int k = 1; k <= h; ++k) a_pow[static_cast<std::size_t>(k)] = a * a_pow[k - 1];

    Mat phi(nx * h, nx);
    Mat gamma = Mat::Zero(nx * h, n * h);
    Mat lambda = Mat::Zero(nx * h, nx * h);
    for (int k = 1; k <= h; ++k) {
      phi.block((k - 1) * nx, 0, nx, nx) = a_pow[static_cast<std::size_t>(k)];
      for (int j = 0; j < k; ++j) {
        const Mat& ap = a_pow[static_cast<std::size_t>(k - 1 - j)];
        gamma.block((k - 1) * nx, j * n, nx, n) = ap * b;
        lambda.block((k - 1) * nx, j * nx, nx, nx) = ap;
      }
    }
    const Vec qdiag = w.Q(n).diagonal().replicate(h, 1);
    const Mat qg = qdiag.asDiagonal() * gamma;
    Mat hess = gamma.transpose() * qg;
    hess.diagonal().array() += w.r;
    const Eigen::LLT<Mat> llt(hess);
    if (llt.info() != Eigen::Success) {
      throw std::runtime_error("MpcController: singular normal matrix");
    }
    const Mat g = llt.solve(qg.transpose());  // (n h) x (nx h)
    const Mat g0 = g.topRows(n);
    state_gain_ = g0 * phi;
    drift_gain_ = g0 * lambda;
  }

  /**
   * `t_ref_preview` holds tension references for steps k..k+H (H+1 columns);
   * column 0 is the current reference.
   */
  [[nodiscard]] Vec control(const PlantParams& plant, const PlantState& state,
                            const Mat& t_ref_preview) const {
    const int n = plant.n_sections;
    const int nx = 2 * n;
    if (t_ref_preview.rows() != n || t_ref_preview.cols() != horizon_ + 1) {
      throw std::invalid_argument("MpcController: preview must be N x (horizon + 1)");
    }
    std::vector<Vec> xref(static_cast<std::size_t>(horizon_ + 1));
    for (int k = 0; k <= horizon_; ++k) {
      const Vec t = t_ref_preview.col(k);
      if (k > 0 && t == t_ref_preview.col(k - 1)) {
        xref[static_cast<std::size_t>(k)] = xref[static_cast<std::size_t>(k - 1)];
      } else {
        xref[static_cast<std::size_t>(k)] = reference_state(plant, t).stacked();
      }
    }
    Vec drift(nx * horizon_);
    for (int k = 0; k < horizon_; ++k) {
      drift.segment(k * nx, nx) = xref[static_cast<std::size_t>(k)] - xref[static_cast<std::size_t>(k + 1)];
    }
    const Vec dx0 = state.stacked() - xref[0];
    const Vec du0 = -(state_gain_ * dx0 + drift_gain_ * drift);
    const PlantState ref0 = PlantState::unstack(xref[0]);
    const Vec u = equilibrium_torques(plant, ref0.tensions, ref0.velocities) + du0;
    const double lim = plant.torque_limit_u_scale;
    return u.cwiseMax(-lim).cwiseMin(lim);
  }

  [[nodiscard]] int horizon() const { return horizon_; }
  [[nodiscard]] const ControlWeights& weights() const { return weights_; }
  [[nodiscard]] const LinearModel& model() const { return model_; }
  /// First-move gain on the initial deviation (N x 2N).
  [[nodiscard]] const Mat& state_gain() const { return state_gain_; }

 private:
  ControlWeights weights_;
  int horizon_;
  LinearModel model_;
  Mat state_gain_;
  Mat drift_gain_;
};

/// Raw normalized action for a torque command.
inline Vec torque_to_action(const Vec& torques, double u_scale) {
  return (torques / u_scale).cwiseMax(-1.0).cwiseMin(1.0);
}

inline PolicyFn make_lqr_policy(const LqrController& ctrl) {
  return [ctrl](const TensionEnv& env, const Observation&) {
    const Vec u = ctrl.control(env.params(), env.state(), env.profile().tension_at(env.step_index()));
    return torque_to_action(u, env.params().torque_limit_u_scale);
  };
}

inline PolicyFn make_mpc_policy(const MpcController& ctrl) {
  return [ctrl](const TensionEnv& env, const Observation&) {
    const int h = ctrl.horizon();
    Mat preview(env.n_sections(), h + 1);
    for (int k = 0; k <= h; ++k) preview.col(k) = env.profile().tension_at(env.step_index() + k);
    const Vec u = ctrl.control(env.params(), env.state(), preview);
    return torque_to_action(u, env.params().torque_limit_u_scale);
  };
}

inline nlohmann::json to_json(const LqrController& c) {
  nlohmann::json k = nlohmann::json::array();
  for (Eigen::Index i = 0; i < c.gain().rows(); ++i) {
    nlohmann::json r = nlohmann::json::array();
    for (Eigen::Index j = 0; j < c.gain().cols(); ++j) r.push_back(c.gain()(i, j));
    k.push_back(r);
  }
  return {{"type", "lqr"},
          {"q_tension", c.weights().q_tension},
          {"q_velocity", c.weights().q_velocity},
          {"r", c.weights().r},
          {"gain", k},
          {"spectral_radius", spectral_radius(c.closed_loop())}};
}

inline nlohmann::json to_json(const MpcController& c) {
  return {{"type", "mpc"},
          {"q_tension", c.weights().q_tension},
          {"q_velocity", c.weights().q_velocity},
          {"r", c.weights().r},
          {"horizon", c.horizon()}};
}

// ---------------------------------------------------------------------------
// Weight tuning

enum class BaselineKind { kLqr, kMpc };

struct WeightGrid {
  std::vector<double> q_tension{10.0, 100.0, 1000.0};
  std::vector<double> q_velocity{1e2, 1e3, 1e4};
  std::vector<double> r{0.01, 0.1, 1.0};
};

struct TuningRow {
  ControlWeights weights;
  double tension_mae = 0.0;
  double smoothness = 0.0;
  double mean_return = 0.0;
};

struct TuningResult {
  ControlWeights best;
  std::vector<TuningRow> rows;  ///< sorted by MAE, then smoothness
};

inline PolicyFactory baseline_factory(BaselineKind kind, const PlantParams& plant,
                                      const ControlWeights& w, int horizon = 10) {
  if (kind == BaselineKind::kLqr) {
    LqrController c(plant, w);
    return [c] { return make_lqr_policy(c); };
  }
  MpcController c(plant, w, horizon);
  return [c] { return make_mpc_policy(c); };
}

/// Grid search on the nominal case: minimum tension MAE, ties to lower Var(du).
inline TuningResult tune_weights(BaselineKind kind, const WeightGrid& grid,
                                 const PlantParams& plant, const EnvConfig& cfg, int n_episodes,
                                 std::uint64_t seed, int horizon = 10) {
  TuningResult res;
  for (double qt : grid.q_tension) {
    for (double qv : grid.q_velocity) {
      for (double r : grid.r) {
        const ControlWeights w{qt, qv, r};
        const auto tc = run_test_case(TestCase::kNominal, baseline_factory(kind, plant, w, horizon),
                                      kind == BaselineKind::kLqr ? "LQR" : "MPC", plant, cfg,
                                      n_episodes, seed);
        res.rows.push_back({w, tc.report.tension_mae, tc.report.smoothness,
                            tc.report.mean_return});
      }
    }
  }
  if (res.rows.empty()) throw std::invalid_argument("tune_weights: empty grid");
  std::stable_sort(res.rows.begin(), res.rows.end(), [](const TuningRow& a, const TuningRow& b) {
    if (a.tension_mae != b.tension_mae) return a.tension_mae < b.tension_mae;
    return a.smoothness < b.smoothness;
  });
  res.best = res.rows.front().weights;
  return res;
}

inline void write_tuning_csv(std::ostream& os, const TuningResult& res) {
  os << "q_tension,q_velocity,r,tension_mae,smoothness,mean_return\n";
  for (const auto& row : res.rows) {
    os << detail::fmt_num(row.weights.q_tension) << ',' << detail::fmt_num(row.weights.q_velocity)
       << ',' << detail::fmt_num(row.weights.r) << ',' << detail::fmt_num(row.tension_mae) << ','
       << detail::fmt_num(row.smoothness) << ',' << detail::fmt_num(row.mean_return) << '\n';
  }
}

}  // namespace r2r

#endif  // R2R_BASELINES_HPP
