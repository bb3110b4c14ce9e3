// Plant simulation and the planner/executor loop for an emergency stop.
//
// The plant integrates container motion under zero-order-hold accelerations
// and the full nonlinear pendulum with the true rod length. The planner sees
// the plant's container state but integrates its own pendulum estimate with
// its own rod length from the realized accelerations.
#pragma once

#include <chrono>
#include <cmath>
#include <condition_variable>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "slosh_stop/errors.hpp"
#include "slosh_stop/kinematics.hpp"
#include "slosh_stop/linear_model.hpp"
#include "slosh_stop/rac.hpp"
#include "slosh_stop/slosh_model.hpp"
#include "slosh_stop/stop_ocp.hpp"

namespace slosh_stop {

enum class ControlMode { kTaskSpace, kJointSpace };

inline const char* to_string(ControlMode m) {
  return m == ControlMode::kTaskSpace ? "task_space" : "joint_space";
}

struct PlantState {
  double time = 0.0;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Vector3d orientation = Eigen::Vector3d::Zero();  // (theta_c, phi_c, psi_c)
  Vector6 velocity = Vector6::Zero();                     // planner ordering
  PendulumState pendulum{};
  std::optional<JointState> joints;
};

/// Arm state and the container orientation it is measured against.
struct ArmContext {
  RacController* rac = nullptr;
  Eigen::Matrix3d reference_rotation = Eigen::Matrix3d::Identity();
  double substep = 1e-3;
};

/// Container part of the MPC state.
inline MpcState mpc_state(const PlantState& s, const PendulumState& pendulum) {
  MpcState x = MpcState::Zero();
  x(idx::kVx) = s.velocity(0);
  x(idx::kVy) = s.velocity(1);
  x(idx::kVz) = s.velocity(2);
  x(idx::kThetaP) = pendulum.theta_p;
  x(idx::kPhiP) = pendulum.phi_p;
  x(idx::kThetaPDot) = pendulum.theta_p_dot;
  x(idx::kPhiPDot) = pendulum.phi_p_dot;
  x(idx::kThetaC) = s.orientation(0);
  x(idx::kPhiC) = s.orientation(1);
  x(idx::kPsiC) = s.orientation(2);
  x(idx::kThetaCDot) = s.velocity(3);
  x(idx::kPhiCDot) = s.velocity(4);
  x(idx::kPsiCDot) = s.velocity(5);
  return x;
}

/// Sets container pose and velocity from the arm's joint state.
inline void sync_container_from_joints(PlantState& s, const RobotModel& m,
                                       const Eigen::Matrix3d& reference_rotation) {
  const JointState& js = *s.joints;
  const Pose pose = forward_kinematics(m, js.q);
  s.position = pose.position;
  const Eigen::Vector3d rot = rotation_difference(pose.rotation, reference_rotation);
  s.orientation = Eigen::Vector3d(rot.y(), rot.x(), rot.z());
  s.velocity = to_task_order(jacobian(m, js.q) * js.qd);
}

/// One plant period. Task-space mode applies u directly; joint-space mode
/// routes u through RAC at the arm's substep and lets the pendulum see the
/// realized accelerations. Returns the mean realized linear acceleration.
inline Eigen::Vector3d plant_step_realized(PlantState& s, const ControlInput& u,
                                           const PendulumParams& p, double dt,
                                           const ArmContext* arm = nullptr) {
  if (!(dt > 0.0)) throw InvalidArgument("plant step must be positive");
  if (arm == nullptr) {
    s.pendulum = integrate_pendulum(s.pendulum, {u(0), u(1), u(2)}, p, dt);
    s.position += s.velocity.head<3>() * dt + 0.5 * u.head<3>() * dt * dt;
    s.orientation += s.velocity.tail<3>() * dt + 0.5 * u.tail<3>() * dt * dt;
    s.velocity += u * dt;
    s.time += dt;
    return u.head<3>();
  }
  if (!s.joints) throw InvalidArgument("joint-space step needs a joint state");
  const RobotModel& m = arm->rac->model();
  const int substeps = std::max(1, static_cast<int>(std::lround(dt / arm->substep)));
  const double h = dt / substeps;
  Eigen::Vector3d mean_acc = Eigen::Vector3d::Zero();
  for (int i = 0; i < substeps; ++i) {
    JointState& js = *s.joints;
    const RacResult r = arm->rac->step(js, u, h);
    const Twist acc = jacobian(m, js.q) * r.qdd + jacobian_dot_times_qd(m, js.q, js.qd);
    s.pendulum = integrate_pendulum(s.pendulum, {acc(0), acc(1), acc(2)}, p, h);
    js.qd += r.qdd * h;
    js.q += js.qd * h;
    mean_acc += acc.head<3>() / substeps;
  }
  sync_container_from_joints(s, m, arm->reference_rotation);
  s.time += dt;
  return mean_acc;
}

inline PlantState plant_step(PlantState s, const ControlInput& u, const PendulumParams& p,
                             double dt, const ArmContext* arm = nullptr) {
  plant_step_realized(s, u, p, dt, arm);
  return s;
}

struct TraceRow {
  double t = 0.0;
  Vector6 velocity = Vector6::Zero();
  double theta_p = 0.0, phi_p = 0.0;
  Eigen::Vector3d container = Eigen::Vector3d::Zero();
  ControlInput u = ControlInput::Zero();
  double tilt_deg = 0.0;       // max |relative tilt| over both axes
  double violation_deg = 0.0;  // excess over the limits, 0 when inside
  bool stopping = false;       // false before the trigger
};

struct RunMetrics {
  double trigger_time = 0.0;
  double stopping_time = 0.0;  // after the trigger
  bool stopped = false;        // false on timeout or spill
  bool spilled = false;        // pendulum reached the gimbal singularity
  double max_tilt_deg = 0.0;
  double max_violation_deg = 0.0;
  double time_in_violation = 0.0;
  double time_in_violation_gt_0p2deg = 0.0;
  double max_slack_deg = 0.0;
  int plans = 0;
  int solver_failures = 0;
  double max_plan_age = 0.0;  // plant time between plan creation and use
  double planner_wall_time = 0.0;
  std::vector<TraceRow> trace;
};

struct StopConfig {
  OcpConfig ocp{};
  PendulumParams plant{};    // true parameters
  PendulumParams planner{};  // parameters the planner believes
  double plant_dt = 1.0 / 60.0;
  int replan_every = 3;
  double stop_tolerance = 0.01;
  double stop_sustain = 0.1;
  double timeout = 10.0;
  double report_threshold_deg = 0.2;
  ControlMode mode = ControlMode::kTaskSpace;
  bool deterministic = true;
  IpmSettings solver{};

  void validate() const {
    ocp.validate();
    slosh_stop::validate(plant);
    slosh_stop::validate(planner);
    if (!(plant_dt > 0.0) || replan_every < 1 || !(timeout > 0.0) || !(stop_sustain >= 0.0) ||
        !(stop_tolerance > 0.0)) {
      throw InvalidArgument("invalid stop run configuration");
    }
  }
};

/// Pre-trigger motion: a list of controls applied at the plant rate with the
/// liquid pinned level to the container.
struct PreTrigger {
  std::vector<ControlInput> controls;
};

/// Smoothstep ramp of the container velocity from rest to `target` over
/// `duration`, sampled at the plant rate (acceleration evaluated mid-step).
inline PreTrigger smoothstep_ramp(const Vector6& target, double duration, double dt) {
  PreTrigger pre;
  const int steps = static_cast<int>(std::lround(duration / dt));
  for (int k = 0; k < steps; ++k) {
    const double t0 = static_cast<double>(k) / steps;
    const double t1 = static_cast<double>(k + 1) / steps;
    auto s = [](double tau) { return tau * tau * (3.0 - 2.0 * tau); };
    // Average acceleration over the step so the ramp ends exactly at target.
    pre.controls.emplace_back(target * (s(t1) - s(t0)) / dt);
  }
  return pre;
}

namespace detail {

inline double relative_tilt_deg(const PendulumState& pend, const Eigen::Vector3d& container,
                                const OcpConfig& cfg, double* violation_deg) {
  const double rel_theta = pend.theta_p - container(0);
  const double rel_phi = pend.phi_p - container(1);
  const double excess = std::max({0.0, rel_theta - cfg.theta_max, cfg.theta_min - rel_theta,
                                  rel_phi - cfg.phi_max, cfg.phi_min - rel_phi});
  if (violation_deg != nullptr) *violation_deg = rad_to_deg(excess);
  return rad_to_deg(std::max(std::abs(rel_theta), std::abs(rel_phi)));
}

// Latest-value mailbox between the planner thread and the executor.
class PlanMailbox {
 public:
  void publish(std::shared_ptr<const StopPlan> plan) {
    std::lock_guard<std::mutex> lock(mutex_);
    plan_ = std::move(plan);
  }
  [[nodiscard]] std::shared_ptr<const StopPlan> latest() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return plan_;
  }

 private:
  mutable std::mutex mutex_;
  std::shared_ptr<const StopPlan> plan_;
};

struct PlannerInput {
  MpcState x0 = MpcState::Zero();
  ControlInput last_control = ControlInput::Zero();
  double time = 0.0;
  std::uint64_t sequence = 0;
};

}  // namespace detail

/// Runs one emergency stop. `initial` holds the state at the start of the
/// pre-trigger motion (or at the trigger when `pre` is empty). In joint-space
/// mode `arm` must be given and `initial.joints` set.
inline RunMetrics run_emergency_stop(PlantState initial, const StopConfig& cfg,
                                     const PreTrigger& pre = {},
                                     RacController* arm = nullptr,
                                     bool record_trace = true) {
  cfg.validate();
  const bool joint_mode = cfg.mode == ControlMode::kJointSpace;
  std::optional<ArmContext> arm_ctx;
  if (joint_mode) {
    if (arm == nullptr || !initial.joints) {
      throw InvalidArgument("joint-space mode needs an arm and an initial joint state");
    }
    arm_ctx = ArmContext{arm, forward_kinematics(arm->model(), initial.joints->q).rotation};
    sync_container_from_joints(initial, arm->model(), arm_ctx->reference_rotation);
  }
  const ArmContext* arm_ptr = arm_ctx ? &*arm_ctx : nullptr;

  RunMetrics metrics;
  PlantState s = initial;
  const double dt = cfg.plant_dt;
  auto record = [&](const ControlInput& u, bool stopping) {
    double violation = 0.0;
    const double tilt = detail::relative_tilt_deg(s.pendulum, s.orientation, cfg.ocp, &violation);
    if (stopping) {
      metrics.max_tilt_deg = std::max(metrics.max_tilt_deg, tilt);
      metrics.max_violation_deg = std::max(metrics.max_violation_deg, violation);
    }
    if (record_trace) {
      metrics.trace.push_back(TraceRow{s.time, s.velocity, s.pendulum.theta_p, s.pendulum.phi_p,
                                       s.orientation, u, tilt, violation, stopping});
    }
    return violation;
  };

  // Pre-trigger: liquid pinned level to the container.
  auto pin_level = [&] {
    s.pendulum = PendulumState{s.orientation(0), s.orientation(1), s.velocity(3), s.velocity(4)};
  };
  pin_level();
  ControlInput last_u = ControlInput::Zero();
  for (const ControlInput& u : pre.controls) {
    record(u, false);
    plant_step_realized(s, u, cfg.plant, dt, arm_ptr);
    pin_level();
    last_u = u;
  }

  // Trigger.
  metrics.trigger_time = s.time;
  PendulumState estimate = s.pendulum;
  double below_since = std::numeric_limits<double>::quiet_NaN();
  const int max_steps = static_cast<int>(std::ceil(cfg.timeout / dt));

  StopPlanner planner(cfg.ocp, cfg.planner, cfg.solver);
  std::shared_ptr<const StopPlan> current;

  auto stop_check = [&]() {
    const bool below = s.velocity.cwiseAbs().maxCoeff() <= cfg.stop_tolerance;
    if (!below) {
      below_since = std::numeric_limits<double>::quiet_NaN();
      return false;
    }
    if (std::isnan(below_since)) below_since = s.time;
    return s.time - below_since >= cfg.stop_sustain - 1e-9;
  };

  auto plan_now = [&](const MpcState& x0, const ControlInput& prev_u, double now,
                      const StopPlan* previous) -> std::shared_ptr<const StopPlan> {
    const auto wall0 = std::chrono::steady_clock::now();
    std::shared_ptr<const StopPlan> out;
    try {
      out = std::make_shared<const StopPlan>(planner.plan(x0, previous, now, prev_u));
    } catch (const SolverFailure&) {
      ++metrics.solver_failures;
    }
    metrics.planner_wall_time +=
        std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
    ++metrics.plans;
    return out;
  };

  // Threaded mode: the planner runs on its own thread against the latest
  // state snapshot; the executor paces itself to the plant period in wall
  // time and never waits for a plan after the first one.
  detail::PlanMailbox mailbox;
  std::mutex input_mutex;
  std::condition_variable input_cv;
  detail::PlannerInput planner_input;
  bool input_ready = false;
  bool shutdown = false;
  std::thread planner_thread;
  if (!cfg.deterministic) {
    planner_thread = std::thread([&] {
      std::shared_ptr<const StopPlan> prev;
      std::uint64_t seen = 0;
      for (;;) {
        detail::PlannerInput in;
        {
          std::unique_lock<std::mutex> lock(input_mutex);
          input_cv.wait(lock, [&] { return shutdown || (input_ready && planner_input.sequence != seen); });
          if (shutdown) return;
          in = planner_input;
          seen = in.sequence;
        }
        auto plan = plan_now(in.x0, in.last_control, in.time, prev.get());
        if (plan) {
          prev = plan;
          mailbox.publish(std::move(plan));
        }
      }
    });
  }
  auto stop_thread = [&] {
    if (planner_thread.joinable()) {
      {
        std::lock_guard<std::mutex> lock(input_mutex);
        shutdown = true;
      }
      input_cv.notify_all();
      planner_thread.join();
    }
  };

  auto wall_next = std::chrono::steady_clock::now();
  try {
    for (int step = 0; step <= max_steps; ++step) {
      if (stop_check()) {
        metrics.stopped = true;
        metrics.stopping_time = below_since - metrics.trigger_time;
        record(ControlInput::Zero(), true);
        break;
      }
      if (step == max_steps) {
        record(ControlInput::Zero(), true);
        break;
      }

      const MpcState x0 = mpc_state(s, estimate);
      if (cfg.deterministic) {
        if (step % cfg.replan_every == 0) {
          if (auto plan = plan_now(x0, last_u, s.time, current.get())) current = std::move(plan);
        }
      } else {
        {
          std::lock_guard<std::mutex> lock(input_mutex);
          planner_input = detail::PlannerInput{x0, last_u, s.time, planner_input.sequence + 1};
          input_ready = true;
        }
        input_cv.notify_one();
        if (step == 0) {
          // Only the very first plan is awaited.
          while (!mailbox.latest()) std::this_thread::sleep_for(std::chrono::microseconds(200));
        }
        current = mailbox.latest();
      }

      ControlInput u = ControlInput::Zero();
      if (current) {
        u = current->control_at(s.time, cfg.ocp.dt);
        metrics.max_plan_age = std::max(metrics.max_plan_age, s.time - current->created_at);
        for (const auto& sl : current->slacks) {
          metrics.max_slack_deg = std::max(metrics.max_slack_deg, rad_to_deg(sl.maxCoeff()));
        }
      }

      const double violation = record(u, true);
      if (violation > 0.0) metrics.time_in_violation += dt;
      if (violation > cfg.report_threshold_deg) metrics.time_in_violation_gt_0p2deg += dt;

      const Eigen::Vector3d realized = plant_step_realized(s, u, cfg.plant, dt, arm_ptr);
      estimate = integrate_pendulum(estimate, {realized(0), realized(1), realized(2)}, cfg.planner, dt);
      last_u = u;

      if (!cfg.deterministic) {
        wall_next += std::chrono::duration_cast<std::chrono::steady_clock::duration>(
            std::chrono::duration<double>(dt));
        std::this_thread::sleep_until(wall_next);
      }
    }
  } catch (const GimbalSingularity&) {
    metrics.spilled = true;
    metrics.stopped = false;
    record(ControlInput::Zero(), true);
  } catch (...) {
    stop_thread();
    throw;
  }
  stop_thread();
  if (!metrics.stopped) metrics.stopping_time = s.time - metrics.trigger_time;
  return metrics;
}

/// Column order of the trace CSV.
inline constexpr const char* kTraceHeader =
    "t,vx,vy,vz,w_theta,w_phi,w_psi,theta_p,phi_p,theta_c,phi_c,psi_c,"
    "u_x,u_y,u_z,u_theta,u_phi,u_psi,tilt_deg,violation_deg,violated,stopping";

inline void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& trace) {
  out << kTraceHeader << '\n';
  out.precision(17);
  for (const auto& r : trace) {
    out << r.t;
    for (int i = 0; i < 6; ++i) out << ',' << r.velocity(i);
    out << ',' << r.theta_p << ',' << r.phi_p;
    for (int i = 0; i < 3; ++i) out << ',' << r.container(i);
    for (int i = 0; i < 6; ++i) out << ',' << r.u(i);
    out << ',' << r.tilt_deg << ',' << r.violation_deg << ',' << (r.violation_deg > 0.0 ? 1 : 0)
        << ',' << (r.stopping ? 1 : 0) << '\n';
  }
}

}  // namespace slosh_stop
