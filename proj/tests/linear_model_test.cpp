#include "slosh_stop/linear_model.hpp"

#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

namespace slosh_stop {
namespace {

TEST(LinearModel, PendulumBlockCoefficients) {
  const PendulumParams p{0.0217};
  const double dt = 0.05;
  const StepModel m = build_step_model({}, p, dt);
  EXPECT_NEAR(m.A(idx::kThetaP, idx::kThetaP), 1.0 - 9.81 * dt * dt / (2.0 * 0.0217), 1e-12);
  EXPECT_NEAR(m.A(idx::kThetaP, idx::kThetaP), 0.435, 1e-3);
  EXPECT_NEAR(m.A(idx::kThetaPDot, idx::kThetaP), -22.6, 0.05);
  EXPECT_NEAR(m.A(idx::kPhiPDot, idx::kPhiP), -9.81 * dt / 0.0217, 1e-12);
  EXPECT_EQ(m.A(idx::kThetaP, idx::kThetaPDot), dt);
  EXPECT_EQ(m.A(idx::kThetaPDot, idx::kThetaPDot), 1.0);
}

TEST(LinearModel, VerticalAccelerationShiftsStiffness) {
  const PendulumParams p{0.05};
  const StepModel up = build_step_model({2.0, 0.0, 0.0}, p, 0.02);
  const StepModel rest = build_step_model({}, p, 0.02);
  EXPECT_LT(up.A(idx::kThetaPDot, idx::kThetaP), rest.A(idx::kThetaPDot, idx::kThetaP));
  // zdd column vanishes at the level nominal.
  EXPECT_EQ(rest.B.col(2).segment<4>(idx::kThetaP).norm(), 0.0);
  const StepModel tilted = build_step_model({0.0, 0.1, -0.05}, p, 0.02);
  EXPECT_LT(tilted.B(idx::kThetaPDot, 2), 0.0);
  EXPECT_GT(tilted.B(idx::kPhiPDot, 2), 0.0);
}

TEST(LinearModel, StructuralZeros) {
  const StepModel m = build_step_model({1.0, 0.1, 0.2}, PendulumParams{0.03}, 0.05);
  // Velocities do not feed anything.
  for (int j = 0; j < 3; ++j) {
    for (int i = 0; i < kStateDim; ++i) {
      EXPECT_EQ(m.A(i, j), i == j ? 1.0 : 0.0);
    }
  }
  // Pendulum does not drive the container.
  for (int i = idx::kThetaC; i < kStateDim; ++i) {
    for (int j = idx::kThetaP; j <= idx::kPhiPDot; ++j) EXPECT_EQ(m.A(i, j), 0.0);
  }
  // Angular accelerations do not drive the pendulum.
  for (int i = idx::kThetaP; i <= idx::kPhiPDot; ++i) {
    for (int j = 3; j < 6; ++j) EXPECT_EQ(m.B(i, j), 0.0);
  }
}

TEST(LinearModel, OneStepAgreesWithNonlinearPendulum) {
  std::mt19937 rng(17);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const PendulumParams p{0.1};
  const double dt = 0.05;
  for (int trial = 0; trial < 200; ++trial) {
    MpcState x = MpcState::Zero();
    x(idx::kThetaP) = 0.05 * u(rng);
    x(idx::kPhiP) = 0.05 * u(rng);
    x(idx::kThetaPDot) = 0.3 * u(rng);
    x(idx::kPhiPDot) = 0.3 * u(rng);
    ControlInput c = ControlInput::Zero();
    c(0) = 2.0 * u(rng);
    c(1) = 2.0 * u(rng);
    c(2) = 1.0 * u(rng);
    const StepModel m = build_step_model({c(2), x(idx::kThetaP), x(idx::kPhiP)}, p, dt);
    const MpcState lin = m.A * x + m.B * c;
    const PendulumState nl = integrate_pendulum(
        {x(idx::kThetaP), x(idx::kPhiP), x(idx::kThetaPDot), x(idx::kPhiPDot)},
        {c(0), c(1), c(2)}, p, dt);
    EXPECT_NEAR(lin(idx::kThetaP), nl.theta_p, 2e-3);
    EXPECT_NEAR(lin(idx::kPhiP), nl.phi_p, 2e-3);
  }
}

TEST(LinearModel, RolloutKinematics) {
  const PendulumParams p{0.05};
  const double dt = 0.05;
  std::vector<NominalPoint> nominal(10);
  const LinearModel model = build_linear_model(nominal, p, dt);
  EXPECT_EQ(model.horizon(), 10);

  MpcState x0 = MpcState::Zero();
  x0(idx::kVx) = 0.5;
  x0(idx::kThetaCDot) = 0.2;
  std::vector<ControlInput> u(10, ControlInput::Zero());
  for (auto& c : u) {
    c(0) = -1.0;
    c(3) = -0.4;
  }
  const auto xs = rollout(model, x0, u);
  ASSERT_EQ(xs.size(), 11u);
  EXPECT_NEAR(xs.back()(idx::kVx), 0.0, 1e-12);
  EXPECT_NEAR(xs.back()(idx::kThetaCDot), 0.0, 1e-12);
  // theta_c = 0.2 t - 0.2 t^2 at t = 0.5.
  EXPECT_NEAR(xs.back()(idx::kThetaC), 0.2 * 0.5 - 0.2 * 0.25, 1e-12);
  EXPECT_NEAR(xs[1](idx::kThetaP), -dt * dt / (2.0 * p.rod_length_l), 1e-12);
  EXPECT_NEAR(xs[1](idx::kThetaPDot), -dt / p.rod_length_l, 1e-12);
}

TEST(LinearModel, DeceleratingInXTiltsSurfaceBackward) {
  const PendulumParams p{0.05};
  const StepModel m = build_step_model({}, p, 0.05);
  ControlInput c = ControlInput::Zero();
  c(0) = -2.0;
  const MpcState x1 = m.A * MpcState::Zero() + m.B * c;
  EXPECT_LT(x1(idx::kThetaP), 0.0);
  c.setZero();
  c(1) = -2.0;
  const MpcState y1 = m.A * MpcState::Zero() + m.B * c;
  EXPECT_GT(y1(idx::kPhiP), 0.0);
}

TEST(LinearModel, RejectsBadInput) {
  EXPECT_THROW(build_step_model({}, PendulumParams{0.05}, 0.0), InvalidArgument);
  EXPECT_THROW(build_step_model({}, PendulumParams{-1.0}, 0.05), InvalidArgument);
  std::vector<NominalPoint> nominal(2);
  const LinearModel model = build_linear_model(nominal, PendulumParams{0.05}, 0.05);
  std::vector<ControlInput> u(3, ControlInput::Zero());
  EXPECT_THROW(rollout(model, MpcState::Zero(), u), HorizonMismatch);
}

}  // namespace
}  // namespace slosh_stop
