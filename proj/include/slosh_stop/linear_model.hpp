// Time-varying linear prediction model for the container + slosh system.
//
// State (13): [vx, vy, vz, th_p, ph_p, th_p', ph_p', th_c, ph_c, ps_c,
//              th_c', ph_c', ps_c']
// Input (6):  [ax, ay, az, th_c'', ph_c'', ps_c'']
//
// The pendulum block keeps the bilinear coupling between vertical
// acceleration and tilt, linearized around a nominal point per step.
#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "slosh_stop/errors.hpp"
#include "slosh_stop/slosh_model.hpp"

namespace slosh_stop {

inline constexpr int kStateDim = 13;
inline constexpr int kInputDim = 6;

using MpcState = Eigen::Matrix<double, kStateDim, 1>;
using ControlInput = Eigen::Matrix<double, kInputDim, 1>;
using StateMatrix = Eigen::Matrix<double, kStateDim, kStateDim>;
using InputMatrix = Eigen::Matrix<double, kStateDim, kInputDim>;
using Vector6 = Eigen::Matrix<double, 6, 1>;

// Indices into MpcState.
namespace idx {
inline constexpr int kVx = 0;
inline constexpr int kVy = 1;
inline constexpr int kVz = 2;
inline constexpr int kThetaP = 3;
inline constexpr int kPhiP = 4;
inline constexpr int kThetaPDot = 5;
inline constexpr int kPhiPDot = 6;
inline constexpr int kThetaC = 7;
inline constexpr int kPhiC = 8;
inline constexpr int kPsiC = 9;
inline constexpr int kThetaCDot = 10;
inline constexpr int kPhiCDot = 11;
inline constexpr int kPsiCDot = 12;
// Cartesian velocity components (linear then angular) in state order.
inline constexpr int kVelocity[6] = {kVx, kVy, kVz, kThetaCDot, kPhiCDot, kPsiCDot};
}  // namespace idx

struct NominalPoint {
  double zdd_bar = 0.0;
  double theta_p_bar = 0.0;
  double phi_p_bar = 0.0;
};

struct StepModel {
  StateMatrix A = StateMatrix::Identity();
  InputMatrix B = InputMatrix::Zero();
};

struct LinearModel {
  std::vector<StepModel> steps;
  double dt = 0.0;

  [[nodiscard]] int horizon() const { return static_cast<int>(steps.size()); }
};

/// Extracts the six Cartesian velocity components from a state.
inline Vector6 velocity_of(const MpcState& x) {
  Vector6 v;
  for (int i = 0; i < 6; ++i) v(i) = x(idx::kVelocity[i]);
  return v;
}

inline StepModel build_step_model(const NominalPoint& nominal,
                                  const PendulumParams& p, double dt) {
  if (!(dt > 0.0)) throw InvalidArgument("model step must be positive");
  validate(p);

  const double l = p.rod_length_l;
  const double vertical = p.gravity_g + nominal.zdd_bar;
  const double alpha = 1.0 - vertical * dt * dt / (2.0 * l);
  const double beta = -vertical * dt / l;
  const double gamma = dt * dt / (2.0 * l);
  const double rate_gain = dt / l;

  StepModel m;
  auto& A = m.A;
  auto& B = m.B;

  // Pendulum block [[alpha I, dt I], [beta I, I]].
  for (int k = 0; k < 2; ++k) {
    const int angle = idx::kThetaP + k;
    const int rate = idx::kThetaPDot + k;
    A(angle, angle) = alpha;
    A(angle, rate) = dt;
    A(rate, angle) = beta;
    A(rate, rate) = 1.0;
  }
  // Container orientation: double integrator.
  for (int k = 0; k < 3; ++k) {
    A(idx::kThetaC + k, idx::kThetaCDot + k) = dt;
    B(idx::kThetaC + k, 3 + k) = 0.5 * dt * dt;
    B(idx::kThetaCDot + k, 3 + k) = dt;
  }
  for (int k = 0; k < 3; ++k) B(idx::kVx + k, k) = dt;

  B(idx::kThetaP, 0) = gamma;
  B(idx::kPhiP, 1) = -gamma;
  B(idx::kThetaPDot, 0) = rate_gain;
  B(idx::kPhiPDot, 1) = -rate_gain;
  B(idx::kThetaP, 2) = -gamma * nominal.theta_p_bar;
  B(idx::kPhiP, 2) = -gamma * nominal.phi_p_bar;
  B(idx::kThetaPDot, 2) = -rate_gain * nominal.theta_p_bar;
  B(idx::kPhiPDot, 2) = -rate_gain * nominal.phi_p_bar;
  return m;
}

inline LinearModel build_linear_model(std::span<const NominalPoint> nominal,
                                      const PendulumParams& p, double dt) {
  LinearModel model;
  model.dt = dt;
  model.steps.reserve(nominal.size());
  for (const auto& n : nominal) model.steps.push_back(build_step_model(n, p, dt));
  return model;
}

/// Applies x_{k+1} = A_k x_k + B_k u_k; returns x_0..x_K.
inline std::vector<MpcState> rollout(const LinearModel& model, const MpcState& x0,
                                     std::span<const ControlInput> controls) {
  if (static_cast<int>(controls.size()) > model.horizon()) {
    throw HorizonMismatch("more controls than model steps");
  }
  std::vector<MpcState> states;
  states.reserve(controls.size() + 1);
  states.push_back(x0);
  for (std::size_t k = 0; k < controls.size(); ++k) {
    const auto& s = model.steps[k];
    states.push_back(s.A * states.back() + s.B * controls[k]);
  }
  return states;
}

}  // namespace slosh_stop
