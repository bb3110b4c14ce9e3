// Task-space emergency-stop optimal control problem.
//
// Decision variables are laid out stage by stage; stage k holds
//   [u_k (6), x_{k+1} (13), d_theta_k, d_phi_k]
// and the constraint rows of stage k are its 13 dynamics equalities followed
// by 18 inequality rows (4 no-spill, 6 velocity, 6 acceleration, 2 slack).
#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "slosh_stop/errors.hpp"
#include "slosh_stop/linear_model.hpp"
#include "slosh_stop/ipm.hpp"
#include "slosh_stop/qp.hpp"
#include "slosh_stop/slosh_model.hpp"

namespace slosh_stop {

inline constexpr double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }
inline constexpr double rad_to_deg(double rad) { return rad * 180.0 / std::numbers::pi; }

struct OcpConfig {
  int horizon_N = 40;
  double dt = 0.05;

  double c1 = 1.0;     // velocity
  double c2 = 1e-4;    // jerk
  double c3 = 1e4;     // theta slack
  double c4 = 1e4;     // phi slack
  Vector6 velocity_weight = Vector6::Ones();

  double theta_min = -deg_to_rad(5.0);
  double theta_max = deg_to_rad(5.0);
  double phi_min = -deg_to_rad(5.0);
  double phi_max = deg_to_rad(5.0);

  Vector6 v_min = Vector6::Constant(-kInfinity);
  Vector6 v_max = Vector6::Constant(kInfinity);
  Vector6 a_min = Vector6::Constant(-kInfinity);
  Vector6 a_max = Vector6::Constant(kInfinity);

  // false gives the baseline: no pendulum dynamics and no no-spill rows,
  // same velocity and jerk cost.
  bool slosh_aware = true;

  void set_symmetric_slosh_limit(double rad) {
    theta_min = phi_min = -rad;
    theta_max = phi_max = rad;
  }

  void validate() const {
    if (horizon_N < 1) throw InvalidArgument("horizon must have at least one step");
    if (!(dt > 0.0)) throw InvalidArgument("planner step must be positive");
    if (!(c1 > 0.0) || !(c2 > 0.0)) throw InvalidArgument("c1 and c2 must be positive");
    if (c3 != c4 || c3 < 1000.0 * c1) {
      throw InvalidArgument("slack weights must be equal and at least 1000 c1");
    }
    if (!(theta_min < 0.0 && 0.0 < theta_max && phi_min < 0.0 && 0.0 < phi_max)) {
      throw InvalidArgument("slosh limits must bracket zero");
    }
    if ((velocity_weight.array() < 0.0).any()) {
      throw InvalidArgument("velocity weights must be non-negative");
    }
    for (int i = 0; i < 6; ++i) {
      if (!(v_min(i) < v_max(i)) || !(a_min(i) < a_max(i))) {
        throw InvalidArgument("kinematic bounds need lo < hi");
      }
    }
  }
};

struct StopPlan {
  std::vector<ControlInput> controls;       // N
  std::vector<MpcState> predicted_states;   // N + 1, [0] is the initial state
  std::vector<Eigen::Vector2d> slacks;      // N, (d_theta, d_phi)
  double created_at = 0.0;
  double objective = 0.0;
  QpStatus status = QpStatus::kOptimal;
  int iterations = 0;

  // Raw QP solution, kept for diagnostics.
  Eigen::VectorXd primal;
  Eigen::VectorXd dual_eq;
  Eigen::VectorXd dual_in;

  [[nodiscard]] int horizon() const { return static_cast<int>(controls.size()); }

  /// Control to apply at plant time t (zero-order hold per step, last control
  /// held past the horizon).
  [[nodiscard]] ControlInput control_at(double t, double dt) const {
    const double elapsed = std::max(0.0, t - created_at);
    const int k = std::min(static_cast<int>(std::floor(elapsed / dt + 1e-9)), horizon() - 1);
    return controls[static_cast<std::size_t>(k)];
  }
};

namespace ocp_layout {
inline constexpr int kStageVars = kInputDim + kStateDim + 2;
inline constexpr int kStageEqRows = kStateDim;
inline constexpr int kStageInRows = 18;
inline constexpr int u_offset(int k) { return k * kStageVars; }
inline constexpr int x_offset(int k) { return k * kStageVars + kInputDim; }  // x_{k+1}
inline constexpr int slack_offset(int k) { return k * kStageVars + kInputDim + kStateDim; }
}  // namespace ocp_layout

/// Assembles the sparse QP. `last_control` is the control executed just
/// before the plan starts (used by the first jerk term).
inline QpProblem build_ocp(const MpcState& x0, std::span<const NominalPoint> nominal,
                           const OcpConfig& cfg, const PendulumParams& p,
                           const ControlInput& last_control = ControlInput::Zero()) {
  using namespace ocp_layout;
  cfg.validate();
  validate(p);
  const int N = cfg.horizon_N;
  if (static_cast<int>(nominal.size()) != N) {
    throw DimensionMismatch("nominal trajectory length must equal the horizon");
  }
  if (!x0.allFinite()) throw InvalidArgument("initial state is not finite");

  const int n = N * kStageVars;
  QpProblem qp;
  qp.f = Eigen::VectorXd::Zero(n);

  // Cost.
  std::vector<Triplet> h;
  const double jerk_w = cfg.c2 / (cfg.dt * cfg.dt);
  for (int k = 0; k < N; ++k) {
    for (int j = 0; j < 6; ++j) {
      const int v = x_offset(k) + idx::kVelocity[j];
      h.emplace_back(v, v, 2.0 * cfg.c1 * cfg.velocity_weight(j));
    }
    for (int j = 0; j < kInputDim; ++j) {
      const int u = u_offset(k) + j;
      h.emplace_back(u, u, 2.0 * jerk_w);
      if (k > 0) {
        const int u_prev = u_offset(k - 1) + j;
        h.emplace_back(u_prev, u_prev, 2.0 * jerk_w);
        h.emplace_back(u, u_prev, -2.0 * jerk_w);
        h.emplace_back(u_prev, u, -2.0 * jerk_w);
      } else {
        qp.f(u) -= 2.0 * jerk_w * last_control(j);
      }
    }
    qp.f(slack_offset(k)) = cfg.c3;
    qp.f(slack_offset(k) + 1) = cfg.c4;
  }
  qp.H.resize(n, n);
  qp.H.setFromTriplets(h.begin(), h.end());

  // Dynamics.
  std::vector<Triplet> eq;
  qp.beq = Eigen::VectorXd::Zero(N * kStageEqRows);
  for (int k = 0; k < N; ++k) {
    StepModel m = build_step_model(nominal[static_cast<std::size_t>(k)], p, cfg.dt);
    if (!cfg.slosh_aware) {
      for (int r = idx::kThetaP; r <= idx::kPhiPDot; ++r) {
        m.A.row(r).setZero();
        m.B.row(r).setZero();
      }
    }
    const int row0 = k * kStageEqRows;
    for (int i = 0; i < kStateDim; ++i) {
      eq.emplace_back(row0 + i, x_offset(k) + i, 1.0);
      for (int j = 0; j < kInputDim; ++j) {
        if (m.B(i, j) != 0.0) eq.emplace_back(row0 + i, u_offset(k) + j, -m.B(i, j));
      }
      if (k > 0) {
        for (int j = 0; j < kStateDim; ++j) {
          if (m.A(i, j) != 0.0) eq.emplace_back(row0 + i, x_offset(k - 1) + j, -m.A(i, j));
        }
      }
    }
    if (k == 0) qp.beq.segment(row0, kStateDim) = m.A * x0;
  }
  qp.Aeq.resize(N * kStageEqRows, n);
  qp.Aeq.setFromTriplets(eq.begin(), eq.end());

  // Inequalities.
  std::vector<Triplet> in;
  qp.lo.resize(N * kStageInRows);
  qp.hi.resize(N * kStageInRows);
  const double inf = kInfinity;
  for (int k = 0; k < N; ++k) {
    int r = k * kStageInRows;
    const int xo = x_offset(k);
    const int so = slack_offset(k);
    const double tilt_lo[2] = {cfg.theta_min, cfg.phi_min};
    const double tilt_hi[2] = {cfg.theta_max, cfg.phi_max};
    for (int a = 0; a < 2; ++a) {
      const int pend = idx::kThetaP + a;
      const int cont = idx::kThetaC + a;
      // relative tilt - slack <= upper
      in.emplace_back(r, xo + pend, 1.0);
      in.emplace_back(r, xo + cont, -1.0);
      in.emplace_back(r, so + a, -1.0);
      qp.lo(r) = -inf;
      qp.hi(r) = cfg.slosh_aware ? tilt_hi[a] : inf;
      ++r;
      // relative tilt + slack >= lower
      in.emplace_back(r, xo + pend, 1.0);
      in.emplace_back(r, xo + cont, -1.0);
      in.emplace_back(r, so + a, 1.0);
      qp.lo(r) = cfg.slosh_aware ? tilt_lo[a] : -inf;
      qp.hi(r) = inf;
      ++r;
    }
    for (int j = 0; j < 6; ++j, ++r) {
      in.emplace_back(r, xo + idx::kVelocity[j], 1.0);
      qp.lo(r) = cfg.v_min(j);
      qp.hi(r) = cfg.v_max(j);
    }
    for (int j = 0; j < 6; ++j, ++r) {
      in.emplace_back(r, u_offset(k) + j, 1.0);
      qp.lo(r) = cfg.a_min(j);
      qp.hi(r) = cfg.a_max(j);
    }
    for (int a = 0; a < 2; ++a, ++r) {
      in.emplace_back(r, so + a, 1.0);
      qp.lo(r) = 0.0;
      qp.hi(r) = cfg.slosh_aware ? inf : 0.0;
    }
  }
  qp.Ain.resize(N * kStageInRows, n);
  qp.Ain.setFromTriplets(in.begin(), in.end());
  return qp;
}

/// Constant part of the jerk cost dropped from the QP objective.
inline double ocp_objective_constant(const OcpConfig& cfg, const ControlInput& last_control) {
  return cfg.c2 / (cfg.dt * cfg.dt) * last_control.squaredNorm();
}

/// Unpacks a QP primal vector into a plan.
inline StopPlan unpack_plan(const MpcState& x0, const Eigen::VectorXd& z, int N) {
  using namespace ocp_layout;
  StopPlan plan;
  plan.controls.reserve(static_cast<std::size_t>(N));
  plan.predicted_states.reserve(static_cast<std::size_t>(N + 1));
  plan.slacks.reserve(static_cast<std::size_t>(N));
  plan.predicted_states.push_back(x0);
  for (int k = 0; k < N; ++k) {
    plan.controls.emplace_back(z.segment<kInputDim>(u_offset(k)));
    plan.predicted_states.emplace_back(z.segment<kStateDim>(x_offset(k)));
    plan.slacks.emplace_back(z.segment<2>(slack_offset(k)).cwiseMax(0.0));
  }
  return plan;
}

/// Receding-horizon planner. Owns its QP workspace; not thread-safe.
class StopPlanner {
 public:
  StopPlanner(OcpConfig cfg, PendulumParams model_params, IpmSettings solver_settings = {})
      : cfg_(std::move(cfg)), params_(model_params), solver_(solver_settings) {
    cfg_.validate();
    validate(params_);
  }

  [[nodiscard]] const OcpConfig& config() const { return cfg_; }
  [[nodiscard]] const PendulumParams& model_params() const { return params_; }

  /// Nominal trajectory for the next solve: the previous plan shifted by the
  /// elapsed number of steps, padded with its last point. Without a previous
  /// plan the liquid is taken as level and at rest.
  [[nodiscard]] std::vector<NominalPoint> nominal_from(const StopPlan* previous, double now) const {
    const int N = cfg_.horizon_N;
    std::vector<NominalPoint> nominal(static_cast<std::size_t>(N));
    if (previous == nullptr || previous->horizon() == 0) return nominal;
    const int shift = elapsed_steps(*previous, now);
    const int last = previous->horizon() - 1;
    for (int k = 0; k < N; ++k) {
      const int i = std::min(k + shift, last);
      const auto& x = previous->predicted_states[static_cast<std::size_t>(i)];
      nominal[static_cast<std::size_t>(k)] = NominalPoint{
          previous->controls[static_cast<std::size_t>(i)](2), x(idx::kThetaP), x(idx::kPhiP)};
    }
    return nominal;
  }

  StopPlan plan(const MpcState& x0, const StopPlan* previous, double now,
                const ControlInput& last_control = ControlInput::Zero()) {
    const std::vector<NominalPoint> nominal = nominal_from(previous, now);
    const QpProblem qp = build_ocp(x0, nominal, cfg_, params_, last_control);

    QpSolution sol = solver_.solve(qp);
    if (sol.status != QpStatus::kOptimal) {
      throw SolverFailure(std::string("stop QP not solved: ") + to_string(sol.status));
    }

    StopPlan out = unpack_plan(x0, sol.x, cfg_.horizon_N);
    out.created_at = now;
    out.objective = sol.objective + ocp_objective_constant(cfg_, last_control);
    out.status = sol.status;
    out.iterations = sol.iterations;
    out.primal = std::move(sol.x);
    out.dual_eq = std::move(sol.y_eq);
    out.dual_in = std::move(sol.y_in);
    return out;
  }

 private:
  [[nodiscard]] int elapsed_steps(const StopPlan& previous, double now) const {
    return std::max(0, static_cast<int>(std::lround((now - previous.created_at) / cfg_.dt)));
  }

  OcpConfig cfg_;
  PendulumParams params_;
  IpmSolver solver_;
};

/// Single planning call; see StopPlanner for the receding-horizon use.
inline StopPlan plan_stop(const MpcState& x0, const StopPlan* previous, const OcpConfig& cfg,
                          const PendulumParams& p, double now = 0.0,
                          const ControlInput& last_control = ControlInput::Zero(),
                          const IpmSettings& solver_settings = {}) {
  StopPlanner planner(cfg, p, solver_settings);
  return planner.plan(x0, previous, now, last_control);
}

}  // namespace slosh_stop
