#include "slosh_stop/sim_runtime.hpp"

#include <numbers>
#include <sstream>

#include <gtest/gtest.h>

#include "slosh_stop/experiments.hpp"

namespace slosh_stop {
namespace {

constexpr double kRod = 0.0217;
constexpr double kDt = 1.0 / 60.0;

RobotModel panda() { return load_robot_model(std::string(SLOSH_STOP_DATA_DIR) + "/panda.robot"); }

StopConfig trigger_config(double rod = kRod) {
  StopConfig cfg;
  apply_robot_limits(cfg.ocp, panda());
  cfg.plant = PendulumParams{rod};
  cfg.planner = PendulumParams{rod};
  return cfg;
}

PlantState trigger_state() {
  PlantState s;
  s.velocity << -0.12, 0.32, 0.35, 0.35, 0.06, -0.01;
  return s;
}

// Stop time from the trace alone: first stopping row from which the
// velocity stays inside the tolerance for the sustain window.
double stop_time_from_trace(const std::vector<TraceRow>& trace, const StopConfig& cfg) {
  double trigger = -1.0, since = -1.0;
  for (const auto& r : trace) {
    if (!r.stopping) continue;
    if (trigger < 0.0) trigger = r.t;
    if (r.velocity.cwiseAbs().maxCoeff() <= cfg.stop_tolerance) {
      if (since < 0.0) since = r.t;
      if (r.t - since >= cfg.stop_sustain - 1e-9) return since - trigger;
    } else {
      since = -1.0;
    }
  }
  return -1.0;
}

TEST(PlantStep, ZeroInputAtRestOnlyAdvancesTime) {
  PlantState s;
  s.position = Eigen::Vector3d(0.1, -0.2, 0.3);
  s.orientation = Eigen::Vector3d(0.01, -0.02, 0.03);
  const PlantState n = plant_step(s, ControlInput::Zero(), PendulumParams{kRod}, kDt);
  EXPECT_DOUBLE_EQ(n.time, kDt);
  EXPECT_EQ(n.position, s.position);
  EXPECT_EQ(n.orientation, s.orientation);
  EXPECT_EQ(n.velocity, s.velocity);
  EXPECT_EQ(n.pendulum.theta_p, 0.0);
  EXPECT_EQ(n.pendulum.phi_p, 0.0);
  EXPECT_EQ(n.pendulum.theta_p_dot, 0.0);
  EXPECT_EQ(n.pendulum.phi_p_dot, 0.0);
}

TEST(PlantStep, ConstantAccelerationOscillatesAboutEquilibrium) {
  const PendulumParams p{kRod};
  PlantState s;
  ControlInput u = ControlInput::Zero();
  u(0) = 1.0;
  double lo = 1e9, hi = -1e9;
  for (int k = 0; k < 60; ++k) {
    s = plant_step(s, u, p, kDt);
    lo = std::min(lo, s.pendulum.theta_p);
    hi = std::max(hi, s.pendulum.theta_p);
  }
  EXPECT_NEAR(s.velocity(0), 1.0, 1e-9);
  EXPECT_NEAR(s.position(0), 0.5, 1e-9);
  const double eq = equilibrium_tilt({1.0, 0.0, 0.0}, p).first;
  // Released level, the swing spans roughly [0, 2 eq].
  EXPECT_LT(lo, eq);
  EXPECT_GT(hi, eq);
  EXPECT_NEAR(0.5 * (lo + hi), eq, 0.1 * eq);
  EXPECT_NEAR(s.pendulum.phi_p, 0.0, 1e-12);
}

TEST(PlantStep, TaskAndJointModesAgree) {
  const RobotModel m = panda();
  RacController rac(m);
  const JointVector home = ExperimentConfig{}.home_q;
  PlantState task;
  PlantState joint;
  joint.joints = JointState{home, JointVector::Zero()};
  const ArmContext arm{&rac, forward_kinematics(m, home).rotation};
  sync_container_from_joints(joint, m, arm.reference_rotation);
  const Eigen::Vector3d p0 = joint.position;

  // Small enough that no joint reaches a limit within the second.
  ControlInput u;
  u << 0.2, -0.15, 0.1, 0.05, -0.05, 0.025;
  const PendulumParams p{kRod};
  for (int k = 0; k < 60; ++k) {
    task = plant_step(task, u, p, kDt);
    joint = plant_step(joint, u, p, kDt, &arm);
  }
  EXPECT_LE((joint.position - p0 - task.position).cwiseAbs().maxCoeff(), 1e-3);
  EXPECT_LE((joint.velocity - task.velocity).cwiseAbs().maxCoeff(), 1e-2);
  EXPECT_NEAR(joint.pendulum.theta_p, task.pendulum.theta_p, 1e-2);
  // Container pose is the arm's FK.
  const Pose fk = forward_kinematics(m, joint.joints->q);
  EXPECT_LE((fk.position - joint.position).norm(), 1e-12);
}

TEST(PlantStep, RejectsBadStep) {
  EXPECT_THROW(plant_step(PlantState{}, ControlInput::Zero(), PendulumParams{kRod}, 0.0),
               InvalidArgument);
}

TEST(SmoothstepRamp, ReachesTargetExactly) {
  Vector6 target = Vector6::Zero();
  target.head<3>().setOnes();
  const PreTrigger pre = smoothstep_ramp(target, 1.0, kDt);
  ASSERT_EQ(pre.controls.size(), 60u);
  Vector6 v = Vector6::Zero();
  for (const auto& u : pre.controls) v += u * kDt;
  EXPECT_LE((v - target).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE(pre.controls.front().norm(), pre.controls[30].norm());
}

TEST(EmergencyStop, AtRestStopsImmediately) {
  const RunMetrics m = run_emergency_stop(PlantState{}, trigger_config());
  EXPECT_TRUE(m.stopped);
  EXPECT_DOUBLE_EQ(m.stopping_time, 0.0);
  EXPECT_DOUBLE_EQ(m.max_violation_deg, 0.0);
}

TEST(EmergencyStop, TriggerRunStopsWithinLimit) {
  const StopConfig cfg = trigger_config();
  const RunMetrics m = run_emergency_stop(trigger_state(), cfg);
  EXPECT_TRUE(m.stopped);
  EXPECT_FALSE(m.spilled);
  EXPECT_EQ(m.solver_failures, 0);
  EXPECT_LE(m.max_violation_deg, 1.0);
  EXPECT_LE(m.max_slack_deg, 0.3);
  // Deterministic mode: every control comes from the plan made at most
  // replan_every - 1 plant steps before.
  EXPECT_LE(m.max_plan_age, (cfg.replan_every - 1) * cfg.plant_dt + 1e-12);
}

TEST(EmergencyStop, StopTimeReproducibleFromTrace) {
  const StopConfig cfg = trigger_config();
  const RunMetrics m = run_emergency_stop(trigger_state(), cfg);
  ASSERT_TRUE(m.stopped);
  EXPECT_DOUBLE_EQ(stop_time_from_trace(m.trace, cfg), m.stopping_time);
}

TEST(EmergencyStop, TraceIsConsistentWithMetrics) {
  const StopConfig cfg = trigger_config();
  const RunMetrics m = run_emergency_stop(trigger_state(), cfg);
  ASSERT_GE(m.trace.size(), 2u);
  double max_violation = 0.0, max_tilt = 0.0, in_violation = 0.0;
  for (std::size_t i = 0; i < m.trace.size(); ++i) {
    const auto& r = m.trace[i];
    if (i > 0) EXPECT_GE(r.t, m.trace[i - 1].t);
    if (!r.stopping) continue;
    max_violation = std::max(max_violation, r.violation_deg);
    max_tilt = std::max(max_tilt, r.tilt_deg);
    if (i + 1 < m.trace.size() && r.violation_deg > 0.0) in_violation += cfg.plant_dt;
  }
  EXPECT_DOUBLE_EQ(max_violation, m.max_violation_deg);
  EXPECT_DOUBLE_EQ(max_tilt, m.max_tilt_deg);
  EXPECT_NEAR(in_violation, m.time_in_violation, 1e-12);
}

TEST(EmergencyStop, VelocityIsIntegralOfAppliedControls) {
  const StopConfig cfg = trigger_config();
  const PlantState s0 = trigger_state();
  const RunMetrics m = run_emergency_stop(s0, cfg);
  Vector6 v = s0.velocity;
  for (std::size_t i = 0; i + 1 < m.trace.size(); ++i) v += m.trace[i].u * cfg.plant_dt;
  EXPECT_LE((v - m.trace.back().velocity).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(EmergencyStop, DeterministicRunsAreByteIdentical) {
  const StopConfig cfg = trigger_config();
  std::ostringstream a, b;
  write_trace_csv(a, run_emergency_stop(trigger_state(), cfg).trace);
  write_trace_csv(b, run_emergency_stop(trigger_state(), cfg).trace);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_GT(a.str().size(), 1000u);
}

TEST(EmergencyStop, TraceCsvHasStableColumns) {
  std::ostringstream out;
  write_trace_csv(out, run_emergency_stop(trigger_state(), trigger_config()).trace);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, kTraceHeader);
  const auto columns = std::count(line.begin(), line.end(), ',');
  int rows = 0;
  while (std::getline(in, line)) {
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), columns);
    ++rows;
  }
  EXPECT_GT(rows, 10);
}

TEST(EmergencyStop, PreTriggerKeepsLiquidLevel) {
  const StopConfig cfg = trigger_config();
  Vector6 target = Vector6::Zero();
  target.head<3>().setOnes();
  const RunMetrics m = run_emergency_stop(PlantState{}, cfg, smoothstep_ramp(target, 1.0, kDt));
  EXPECT_NEAR(m.trigger_time, 1.0, 1e-9);
  for (const auto& r : m.trace) {
    if (!r.stopping) EXPECT_EQ(r.tilt_deg, 0.0);
  }
  EXPECT_TRUE(m.stopped);
  EXPECT_LE(m.max_violation_deg, 1.0);
}

TEST(EmergencyStop, SolverFailuresKeepTheRunAlive) {
  StopConfig cfg = trigger_config();
  cfg.solver.max_iter = 1;
  cfg.solver.acceptable_tol = 0.0;
  cfg.timeout = 0.5;
  const RunMetrics m = run_emergency_stop(trigger_state(), cfg);
  EXPECT_GT(m.solver_failures, 0);
  EXPECT_EQ(m.solver_failures, m.plans);
  EXPECT_FALSE(m.stopped);
  EXPECT_NEAR(m.stopping_time, 0.5, cfg.plant_dt);
}

TEST(EmergencyStop, JointSpaceModeStops) {
  const RobotModel robot = panda();
  RacController rac(robot);
  StopConfig cfg = trigger_config();
  cfg.mode = ControlMode::kJointSpace;
  PlantState s = trigger_state();
  s.joints = joint_state_for_velocity(robot, ExperimentConfig{}.home_q, s.velocity);
  const RunMetrics m = run_emergency_stop(s, cfg, {}, &rac);
  EXPECT_TRUE(m.stopped);
  EXPECT_LE(m.max_tilt_deg, 6.0);
  EXPECT_NEAR(m.trace.front().velocity(0), -0.12, 1e-9);
}

TEST(EmergencyStop, JointSpaceModeNeedsArm) {
  StopConfig cfg = trigger_config();
  cfg.mode = ControlMode::kJointSpace;
  EXPECT_THROW(run_emergency_stop(trigger_state(), cfg), InvalidArgument);
}

TEST(EmergencyStop, ThreadedModeStops) {
  StopConfig cfg = trigger_config();
  cfg.deterministic = false;
  const RunMetrics m = run_emergency_stop(trigger_state(), cfg);
  EXPECT_TRUE(m.stopped);
  EXPECT_LE(m.max_tilt_deg, 6.0);
  EXPECT_GE(m.plans, 1);
}

TEST(EmergencyStop, RejectsBadConfig) {
  StopConfig cfg = trigger_config();
  cfg.replan_every = 0;
  EXPECT_THROW(run_emergency_stop(trigger_state(), cfg), InvalidArgument);
}

}  // namespace
}  // namespace slosh_stop
