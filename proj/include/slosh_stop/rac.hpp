// Resolved acceleration control: maps a task-space acceleration command to
// joint accelerations through a small QP over one control period,
//
//   min  sum w z^2,   z = [q, qd, qdd, delta]
//   s.t. q  = q0 + qd dt
//        qd = qd0 + qdd dt
//        J(q0) qdd + J'(q0, qd0) qd0 = u + delta
//        joint position, velocity and acceleration boxes.
#pragma once

#include <algorithm>
#include <array>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "slosh_stop/errors.hpp"
#include "slosh_stop/kinematics.hpp"
#include "slosh_stop/linear_model.hpp"
#include "slosh_stop/qp.hpp"

namespace slosh_stop {

inline constexpr int kRacVars = 3 * kNumJoints + 6;

struct RacWeights {
  JointVector q = JointVector::Constant(1e-4);
  JointVector qd = JointVector::Constant(1e-4);
  JointVector qdd = JointVector::Constant(1e-2);
  Vector6 slack = Vector6::Constant(1e6);

  void validate() const {
    const double others = std::max({q.maxCoeff(), qd.maxCoeff(), qdd.maxCoeff()});
    if ((q.array() <= 0.0).any() || (qd.array() <= 0.0).any() || (qdd.array() <= 0.0).any() ||
        (slack.array() <= 0.0).any()) {
      throw InvalidArgument("RAC weights must be positive");
    }
    if (slack.minCoeff() < 1e4 * others) {
      throw InvalidArgument("RAC slack weights must dominate the other weights by 1e4");
    }
  }
};

struct RacResult {
  JointVector qdd = JointVector::Zero();
  Vector6 slack = Vector6::Zero();  // planner task ordering
  QpStatus status = QpStatus::kOptimal;
};

struct RacOptions {
  bool allow_slack = true;  // false pins delta to zero (hard task constraint)
  QpSettings qp{};
};

/// Builds the RAC QP. `u` is in planner ordering (see to_task_order).
inline QpProblem build_rac_qp(const RobotModel& m, const JointState& js, const ControlInput& u,
                              const RacWeights& w, double dt, bool allow_slack = true) {
  if (!(dt > 0.0)) throw InvalidArgument("RAC step must be positive");
  w.validate();
  constexpr int n = kNumJoints;
  const int iq = 0, iqd = n, iqdd = 2 * n, id = 3 * n;

  QpProblem qp;
  Eigen::VectorXd h(kRacVars);
  h << w.q, w.qd, w.qdd, w.slack;
  qp.H = SparseMatrix(kRacVars, kRacVars);
  std::vector<Triplet> ht;
  for (int i = 0; i < kRacVars; ++i) ht.emplace_back(i, i, 2.0 * h(i));
  qp.H.setFromTriplets(ht.begin(), ht.end());
  qp.f = Eigen::VectorXd::Zero(kRacVars);

  const Jacobian J = jacobian(m, js.q);
  const Twist jdqd = jacobian_dot_times_qd(m, js.q, js.qd);
  const Twist target = from_task_order(u);

  std::vector<Triplet> eq;
  qp.beq.resize(2 * n + 6);
  for (int i = 0; i < n; ++i) {
    eq.emplace_back(i, iq + i, 1.0);
    eq.emplace_back(i, iqd + i, -dt);
    qp.beq(i) = js.q(i);
    eq.emplace_back(n + i, iqd + i, 1.0);
    eq.emplace_back(n + i, iqdd + i, -dt);
    qp.beq(n + i) = js.qd(i);
  }
  for (int r = 0; r < 6; ++r) {
    for (int j = 0; j < n; ++j) eq.emplace_back(2 * n + r, iqdd + j, J(r, j));
    eq.emplace_back(2 * n + r, id + r, -1.0);
    qp.beq(2 * n + r) = target(r) - jdqd(r);
  }
  qp.Aeq.resize(2 * n + 6, kRacVars);
  qp.Aeq.setFromTriplets(eq.begin(), eq.end());

  std::vector<Triplet> in;
  qp.lo.resize(kRacVars);
  qp.hi.resize(kRacVars);
  for (int i = 0; i < kRacVars; ++i) in.emplace_back(i, i, 1.0);
  qp.lo << m.q_min, m.qd_min, m.qdd_min, Vector6::Constant(allow_slack ? -kInfinity : 0.0);
  qp.hi << m.q_max, m.qd_max, m.qdd_max, Vector6::Constant(allow_slack ? kInfinity : 0.0);
  qp.Ain.resize(kRacVars, kRacVars);
  qp.Ain.setFromTriplets(in.begin(), in.end());
  return qp;
}

/// The same problem with q, qd and delta substituted out: a strictly convex
/// QP in qdd with per-joint bounds only.
struct RacCondensed {
  Eigen::MatrixXd H;
  Eigen::VectorXd f;
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;
  Jacobian J;
  Twist rhs;  // J qdd - rhs = delta (geometric ordering)
};

inline RacCondensed condense_rac(const RobotModel& m, const JointState& js, const ControlInput& u,
                                 const RacWeights& w, double dt) {
  if (!(dt > 0.0)) throw InvalidArgument("RAC step must be positive");
  w.validate();
  RacCondensed c;
  c.J = jacobian(m, js.q);
  c.rhs = from_task_order(u) - jacobian_dot_times_qd(m, js.q, js.qd);
  const double dt2 = dt * dt;
  const JointVector q_drift = js.q + js.qd * dt;
  const Eigen::MatrixXd JtW = c.J.transpose() * w.slack.asDiagonal();
  c.H = 2.0 * (JtW * c.J);
  c.H.diagonal() += 2.0 * (w.qdd + dt2 * w.qd + dt2 * dt2 * w.q);
  c.f = 2.0 * (dt2 * w.q.cwiseProduct(q_drift) + dt * w.qd.cwiseProduct(js.qd) - JtW * c.rhs);
  c.lo = m.qdd_min.cwiseMax((m.qd_min - js.qd) / dt).cwiseMax((m.q_min - q_drift) / dt2);
  c.hi = m.qdd_max.cwiseMin((m.qd_max - js.qd) / dt).cwiseMin((m.q_max - q_drift) / dt2);
  return c;
}

/// RAC stage; keeps the last solution as a warm start.
class RacController {
 public:
  explicit RacController(RobotModel model, RacWeights weights = {}, RacOptions options = {})
      : model_(std::move(model)), weights_(weights), options_(options), solver_(options.qp) {
    model_.validate();
    weights_.validate();
  }

  [[nodiscard]] const RobotModel& model() const { return model_; }

  RacResult step(const JointState& js, const ControlInput& u, double dt) {
    if (!options_.allow_slack) return step_hard(js, u, dt);
    const RacCondensed c = condense_rac(model_, js, u, weights_, dt);
    const Eigen::VectorXd* ws = last_qdd_.size() == kNumJoints ? &last_qdd_ : nullptr;
    const BoxQpResult sol = solve_box_qp(c.H, c.f, c.lo, c.hi, ws);
    if (sol.status != QpStatus::kOptimal) {
      throw SolverFailure(std::string("RAC QP not solved: ") + to_string(sol.status));
    }
    last_qdd_ = sol.x;
    RacResult out;
    out.qdd = sol.x;
    out.slack = to_task_order(c.J * out.qdd - c.rhs);
    out.status = sol.status;
    return out;
  }

 private:
  RacResult step_hard(const JointState& js, const ControlInput& u, double dt) {
    const QpProblem qp = build_rac_qp(model_, js, u, weights_, dt, false);
    const QpSolution sol = solver_.solve(qp);
    if (sol.status != QpStatus::kOptimal) {
      throw SolverFailure(std::string("RAC QP not solved: ") + to_string(sol.status));
    }
    RacResult out;
    out.qdd = sol.x.segment<kNumJoints>(2 * kNumJoints);
    out.slack = to_task_order(sol.x.tail<6>());
    out.status = sol.status;
    return out;
  }

  RobotModel model_;
  RacWeights weights_;
  RacOptions options_;
  QpSolver solver_;
  Eigen::VectorXd last_qdd_;
};

inline RacResult rac_step(const RobotModel& m, const JointState& js, const ControlInput& u,
                          const RacWeights& w, double dt, const RacOptions& options = {}) {
  RacController rac(m, w, options);
  return rac.step(js, u, dt);
}

}  // namespace slosh_stop
