#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "r2r/plant.hpp"

using namespace r2r;

namespace {

std::vector<double> to_std(const Vec& v) { return {v.data(), v.data() + v.size()}; }

oracle::Web web_of(const PlantParams& p) {
  oracle::Web w;
  w.EA = p.stiffness();
  w.R = p.radius_R;
  w.J = p.inertia_J;
  w.fb = p.friction_fb;
  w.L = p.span_length_L;
  w.T0 = p.boundary_T0;
  w.T_end = p.boundary_T_end;
  w.v0 = p.unwind_velocity_v0;
  return w;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

}  // namespace

TEST(Plant, DefaultsMatchStiffness) {
  PlantParams p;
  EXPECT_NEAR(p.stiffness(), 2400.0, 1e-9);
  EXPECT_NO_THROW(p.validate());
}

TEST(Plant, HandEvaluatedTensionRate) {
  PlantParams p;
  p.n_sections = 1;
  PlantState s{Vec::Constant(1, 30.0), Vec::Constant(1, 0.02)};
  const PlantState d = derivatives(p, s, Vec::Zero(1));
  EXPECT_NEAR(d.tensions[0], 23.4, 1e-12);
}

TEST(Plant, EulerStepMatchesOracleOnRandomStates) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> t(0.0, 60.0), v(0.0, 0.05), u(-6.0, 6.0);
  for (int n : {1, 3, 5}) {
    PlantParams p;
    p.n_sections = n;
    for (int trial = 0; trial < 100; ++trial) {
      PlantState s = PlantState::zeros(n);
      Vec tq(n);
      for (int i = 0; i < n; ++i) {
        s.tensions[i] = t(rng);
        s.velocities[i] = v(rng);
        tq[i] = u(rng);
      }
      const PlantState next = euler_step(p, s, tq);
      auto T = to_std(s.tensions), V = to_std(s.velocities);
      oracle::euler(web_of(p), p.dt, T, V, to_std(tq));
      for (int i = 0; i < n; ++i) {
        EXPECT_LT(rel_err(next.tensions[i], T[i]), 1e-12);
        EXPECT_LT(rel_err(next.velocities[i], V[i]), 1e-12);
      }
    }
  }
}

TEST(Plant, DerivativesRejectBadInput) {
  PlantParams p;
  PlantState s = PlantState::zeros(3);
  EXPECT_THROW(derivatives(p, s, Vec::Zero(2)), std::invalid_argument);
  s.tensions[1] = std::nan("");
  EXPECT_THROW(derivatives(p, s, Vec::Zero(3)), InvalidStateError);
  p.radius_R = -1.0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
}

TEST(Plant, ContinuityVelocitiesUniform) {
  PlantParams p;
  const Vec v = continuity_velocities(p, Vec::Constant(3, 30.0));
  EXPECT_NEAR(v[0], 0.010127, 1e-6);
  EXPECT_NEAR(v[0], 0.01 * 2400.0 / 2370.0, 1e-15);
  EXPECT_NEAR(v[1], v[0], 1e-15);
  EXPECT_NEAR(v[2], v[0], 1e-15);
}

TEST(Plant, ContinuityVelocitiesNonUniform) {
  PlantParams p;
  Vec t(3);
  t << 30, 40, 30;
  const Vec v = continuity_velocities(p, t);
  EXPECT_NEAR(v[0], 0.010127, 1e-6);
  EXPECT_NEAR(v[1], 0.010170, 1e-6);
  EXPECT_NEAR(v[2], 0.010127, 1e-6);
}

TEST(Plant, ContinuityZeroesTensionRates) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> t(20.0, 40.0);
  PlantParams p;
  for (int trial = 0; trial < 50; ++trial) {
    Vec tr(3);
    for (int i = 0; i < 3; ++i) tr[i] = t(rng);
    const PlantState ref = reference_state(p, tr);
    const PlantState d = derivatives(p, ref, Vec::Zero(3));
    EXPECT_LT(d.tensions.cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Plant, ContinuitySingularAtStiffness) {
  PlantParams p;
  EXPECT_THROW(continuity_velocities(p, Vec::Constant(3, 2400.0)), SingularReferenceError);
}

TEST(Plant, EquilibriumTorqueLastRoller) {
  PlantParams p;
  const PlantState ref = reference_state(p, Vec::Constant(3, 30.0));
  const Vec u = equilibrium_torques(p, ref.tensions, ref.velocities);
  EXPECT_NEAR(u[2], (10.0 * ref.velocities[2] + 0.0016 * 30.0) / 0.04, 1e-12);
  EXPECT_NEAR(u[2], 3.73, 0.01);
  EXPECT_GT(u[2], 2.0);  // above the nominal 2 N m actuator figure
}

TEST(Plant, EquilibriumClosureOnRandomReferences) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> t(20.0, 40.0);
  PlantParams p;
  for (int trial = 0; trial < 50; ++trial) {
    Vec tr(3);
    for (int i = 0; i < 3; ++i) tr[i] = t(rng);
    const PlantState ref = reference_state(p, tr);
    const Vec u = equilibrium_torques(p, ref.tensions, ref.velocities);
    const PlantState d = derivatives(p, ref, u);
    EXPECT_LT(d.stacked().cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Plant, FixedPointHoldsForThousandSteps) {
  PlantParams p;
  Vec tr(3);
  tr << 28, 35, 31;
  const PlantState ref = reference_state(p, tr);
  const Vec u = equilibrium_torques(p, ref.tensions, ref.velocities);
  PlantState s = ref;
  for (int k = 0; k < 1000; ++k) s = euler_step(p, s, u);
  EXPECT_LT((s.tensions - ref.tensions).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Plant, PositiveTorqueRaisesDownstreamRates) {
  // Speeding roller i stretches span i and relaxes span i+1 one step later.
  PlantParams p;
  const PlantState ref = reference_state(p, Vec::Constant(3, 30.0));
  const Vec u = equilibrium_torques(p, ref.tensions, ref.velocities);
  Vec bumped = u;
  bumped[1] += 0.5;
  const PlantState a = euler_step(p, ref, u);
  const PlantState b = euler_step(p, ref, bumped);
  EXPECT_GT(b.velocities[1], a.velocities[1]);
  const PlantState da = derivatives(p, a, u);
  const PlantState db = derivatives(p, b, bumped);
  EXPECT_GT(db.tensions[1], da.tensions[1]);
  EXPECT_LT(db.tensions[2], da.tensions[2]);
}

TEST(Plant, AngularFrictionVariantScalesByRadius) {
  PlantParams p;
  p.friction_model = FrictionModel::kAngularVelocity;
  PlantState s{Vec::Constant(3, 30.0), Vec::Constant(3, 0.01)};
  PlantParams q = p;
  q.friction_model = FrictionModel::kLinearVelocity;
  const double d_ang = derivatives(p, s, Vec::Zero(3)).velocities[0];
  const double d_lin = derivatives(q, s, Vec::Zero(3)).velocities[0];
  const double coupling = (0.04 * 0.04 / 0.95) * 0.0;
  EXPECT_NEAR(d_lin, coupling - 10.0 * 0.01 / 0.95, 1e-12);
  EXPECT_NEAR(d_ang, coupling - 10.0 * 0.01 / 0.04 / 0.95, 1e-12);
}

TEST(Plant, StackRoundTrip) {
  PlantState s{Vec::LinSpaced(3, 1, 3), Vec::LinSpaced(3, 4, 6)};
  const PlantState u = PlantState::unstack(s.stacked());
  EXPECT_EQ(u.tensions, s.tensions);
  EXPECT_EQ(u.velocities, s.velocities);
}
