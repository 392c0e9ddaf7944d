#ifndef R2R_PLANT_HPP
#define R2R_PLANT_HPP

#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace r2r {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Raised when a state, rate or input carries NaN/Inf.
class InvalidStateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a tension reference reaches the web stiffness EA.
class SingularReferenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// How the roller friction coefficient enters the velocity equation.
enum class FrictionModel {
  kLinearVelocity,   ///< -(f_b/J) * v_i, literal velocity equation
  kAngularVelocity,  ///< -(f_b/J) * v_i / R, friction on omega = v/R
};

/**
 * Physical constants of an N-section roll-to-roll line.
 *
 * Defaults are the laboratory three-section line: E = 200 MPa,
 * A = 1.2e-5 m^2 (EA = 2400 N), R = 0.04 m, J = 0.95 kg m^2,
 * f_b = 10 N m s/rad, L = 1 m, dt = 0.01 s.
 */
struct PlantParams {
  double modulus_E = 200e6;
  double area_A = 1.2e-5;
  double radius_R = 0.04;
  double inertia_J = 0.95;
  double friction_fb = 10.0;
  double span_length_L = 1.0;
  int n_sections = 3;
  double unwind_velocity_v0 = 0.01;
  double boundary_T0 = 0.0;
  double boundary_T_end = 0.0;
  double dt = 0.01;
  double torque_limit_u_scale = 6.0;
  FrictionModel friction_model = FrictionModel::kLinearVelocity;

  [[nodiscard]] double stiffness() const { return modulus_E * area_A; }

  /// Throws std::invalid_argument naming the first offending field.
  void validate() const {
    auto positive = [](double x, const char* name) {
      if (!(x > 0.0) || !std::isfinite(x)) {
        throw std::invalid_argument(std::string("plant.") + name + " must be positive");
      }
    };
    positive(modulus_E, "modulus_E");
    positive(area_A, "area_A");
    positive(radius_R, "radius_R");
    positive(inertia_J, "inertia_J");
    positive(friction_fb, "friction_fb");
    positive(span_length_L, "span_length_L");
    positive(dt, "dt");
    positive(torque_limit_u_scale, "torque_limit_u_scale");
    if (n_sections < 1) throw std::invalid_argument("plant.n_sections must be >= 1");
    if (!std::isfinite(unwind_velocity_v0) || !std::isfinite(boundary_T0) ||
        !std::isfinite(boundary_T_end)) {
      throw std::invalid_argument("plant boundary values must be finite");
    }
  }
};

/// Span tensions T_1..T_N [N] and roller surface velocities v_1..v_N [m/s].
struct PlantState {
  Vec tensions;
  Vec velocities;

  PlantState() = default;
  PlantState(Vec t, Vec v) : tensions(std::move(t)), velocities(std::move(v)) {}

  static PlantState zeros(int n) { return {Vec::Zero(n), Vec::Zero(n)}; }

  [[nodiscard]] int size() const { return static_cast<int>(tensions.size()); }
  [[nodiscard]] bool all_finite() const {
    return tensions.allFinite() && velocities.allFinite();
  }

  /// Stacked [T; v], the layout used by the linear models.
  [[nodiscard]] Vec stacked() const {
    Vec x(2 * size());
    x << tensions, velocities;
    return x;
  }
  static PlantState unstack(const Vec& x) {
    const auto n = x.size() / 2;
    return {x.head(n), x.tail(n)};
  }
};

namespace detail {

inline void check_shapes(const PlantParams& p, const PlantState& s, const Vec* u) {
  const auto n = p.n_sections;
  if (s.tensions.size() != n || s.velocities.size() != n || (u && u->size() != n)) {
    throw std::invalid_argument("plant: vector length does not match n_sections");
  }
}

/// Friction torque; enters dv/dt as -friction_torque / J.
inline double friction_torque(const PlantParams& p, double v) {
  return p.friction_model == FrictionModel::kLinearVelocity ? p.friction_fb * v
                                                            : p.friction_fb * v / p.radius_R;
}

}  // namespace detail

/// Continuous-time rates (dT/dt, dv/dt) of the coupled tension/velocity model.
inline PlantState derivatives(const PlantParams& p, const PlantState& s, const Vec& torques) {
  detail::check_shapes(p, s, &torques);
  if (!s.all_finite() || !torques.allFinite()) {
    throw InvalidStateError("plant: non-finite state or torque");
  }
  const int n = p.n_sections;
  const double ea = p.stiffness();
  const double inv_l = 1.0 / p.span_length_L;
  const double r = p.radius_R;
  const double j = p.inertia_J;

  PlantState rate = PlantState::zeros(n);
  for (int i = 0; i < n; ++i) {
    const double v_prev = i == 0 ? p.unwind_velocity_v0 : s.velocities[i - 1];
    const double t_prev = i == 0 ? p.boundary_T0 : s.tensions[i - 1];
    const double t_next = i == n - 1 ? p.boundary_T_end : s.tensions[i + 1];
    const double vi = s.velocities[i];
    const double ti = s.tensions[i];
    rate.tensions[i] = ea * inv_l * (vi - v_prev) + inv_l * (v_prev * t_prev - vi * ti);
    rate.velocities[i] =
        (r * r / j) * (t_next - ti) - detail::friction_torque(p, vi) / j + (r / j) * torques[i];
  }
  return rate;
}

/// One forward-Euler step of length p.dt (single derivative evaluation).
inline PlantState euler_step(const PlantParams& p, const PlantState& s, const Vec& torques) {
  const PlantState rate = derivatives(p, s, torques);
  PlantState next{s.tensions + p.dt * rate.tensions, s.velocities + p.dt * rate.velocities};
  if (!next.all_finite()) throw InvalidStateError("plant: Euler step produced non-finite state");
  return next;
}

/**
 * Steady velocity profile that zeroes every tension rate for the given
 * tensions: v_i = v_{i-1} (EA - T_{i-1}) / (EA - T_i), seeded with the
 * unwind velocity and boundary tension.
 */
inline Vec continuity_velocities(const PlantParams& p, const Vec& tensions_ref) {
  if (tensions_ref.size() != p.n_sections) {
    throw std::invalid_argument("continuity_velocities: wrong reference length");
  }
  const double ea = p.stiffness();
  Vec v(p.n_sections);
  double v_prev = p.unwind_velocity_v0;
  double t_prev = p.boundary_T0;
  for (int i = 0; i < p.n_sections; ++i) {
    const double slack = ea - tensions_ref[i];
    if (!(slack > 0.0) || !(ea - t_prev > 0.0)) {
      throw SingularReferenceError("continuity_velocities: tension reaches web stiffness EA");
    }
    v[i] = v_prev * (ea - t_prev) / slack;
    v_prev = v[i];
    t_prev = tensions_ref[i];
  }
  return v;
}

/// Torques that hold (tensions_ref, velocities_ref) stationary.
inline Vec equilibrium_torques(const PlantParams& p, const Vec& tensions_ref,
                               const Vec& velocities_ref) {
  const int n = p.n_sections;
  if (tensions_ref.size() != n || velocities_ref.size() != n) {
    throw std::invalid_argument("equilibrium_torques: wrong reference length");
  }
  const double r = p.radius_R;
  Vec u(n);
  for (int i = 0; i < n; ++i) {
    const double t_next = i == n - 1 ? p.boundary_T_end : tensions_ref[i + 1];
    u[i] = (detail::friction_torque(p, velocities_ref[i]) - r * r * (t_next - tensions_ref[i])) / r;
  }
  return u;
}

/// Reference state (T*, continuity velocities of T*).
inline PlantState reference_state(const PlantParams& p, const Vec& tensions_ref) {
  return {tensions_ref, continuity_velocities(p, tensions_ref)};
}

}  // namespace r2r

#endif  // R2R_PLANT_HPP
