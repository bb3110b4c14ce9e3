// Experiment drivers: rod-length estimate, single stops, the rod-length x
// slosh-limit sweep and the model-error sweep, plus their file formats.
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "slosh_stop/errors.hpp"
#include "slosh_stop/kinematics.hpp"
#include "slosh_stop/rac.hpp"
#include "slosh_stop/sim_runtime.hpp"
#include "slosh_stop/slosh_model.hpp"
#include "slosh_stop/stop_ocp.hpp"

namespace slosh_stop {

enum class Scenario { kRodLength, kTriggerStop, kBaseline, kHeatmap, kRobustness };

inline const char* to_string(Scenario s) {
  switch (s) {
    case Scenario::kRodLength: return "rod_length";
    case Scenario::kTriggerStop: return "trigger_stop";
    case Scenario::kBaseline: return "baseline_compare";
    case Scenario::kHeatmap: return "sweep_heatmap";
    case Scenario::kRobustness: return "robustness";
  }
  return "?";
}

inline Scenario scenario_from_string(const std::string& s) {
  for (Scenario v : {Scenario::kRodLength, Scenario::kTriggerStop, Scenario::kBaseline,
                     Scenario::kHeatmap, Scenario::kRobustness}) {
    if (s == to_string(v)) return v;
  }
  throw ParseError("unknown scenario: " + s);
}

inline ControlMode mode_from_string(const std::string& s) {
  if (s == "task_space") return ControlMode::kTaskSpace;
  if (s == "joint_space") return ControlMode::kJointSpace;
  throw ParseError("unknown mode: " + s);
}

struct ExperimentConfig {
  Scenario scenario = Scenario::kTriggerStop;

  ContainerGeometry container{0.04, 0.1};
  double gravity = 9.81;

  // Single stop: velocity at the trigger, planner ordering.
  Vector6 trigger_velocity = (Vector6() << -0.12, 0.32, 0.35, 0.35, 0.06, -0.01).finished();
  double slosh_limit_deg = 5.0;
  double rod_length = 0.0;  // <= 0: estimate from the container

  // Heatmap grid.
  std::vector<double> rod_lengths{0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.10};
  std::vector<double> slosh_limits_deg{1, 3, 5, 7, 9, 11};

  // Robustness.
  double true_rod_length = 0.05;
  double robustness_limit_deg = 5.0;
  std::vector<double> error_fractions{-0.5, -0.4, -0.3, -0.2, -0.1, 0.0,
                                      0.1,  0.2,  0.3,  0.4,  0.5};

  // Pre-trigger ramp for the sweeps.
  Vector6 ramp_target = (Vector6() << 1.0, 1.0, 1.0, 0.0, 0.0, 0.0).finished();
  double ramp_duration = 1.0;

  OcpConfig ocp{};
  double plant_rate = 60.0;
  double planner_rate = 20.0;
  ControlMode mode = ControlMode::kTaskSpace;
  bool deterministic = true;
  std::uint64_t seed = 0;  // recorded only; the runs draw no random numbers
  int threads = 1;         // sweep cells in parallel

  std::string robot_file = std::string(SLOSH_STOP_DATA_DIR) + "/panda.robot";
  JointVector home_q =
      (JointVector() << 0.0, -std::numbers::pi / 4, 0.0, -3 * std::numbers::pi / 4, 0.0,
       std::numbers::pi / 2, std::numbers::pi / 4)
          .finished();
  std::string output_dir = "out";

  void validate() const {
    if (rod_lengths.empty() || slosh_limits_deg.empty() || error_fractions.empty()) {
      throw InvalidArgument("experiment grids must be non-empty");
    }
    if (!(plant_rate > 0.0) || !(planner_rate > 0.0) || planner_rate > plant_rate) {
      throw InvalidArgument("rates must be positive and the planner no faster than the plant");
    }
    if (threads < 1) throw InvalidArgument("threads must be at least 1");
    for (double l : rod_lengths) {
      if (!(l > 0.0)) throw InvalidArgument("rod lengths must be positive");
    }
    for (double d : slosh_limits_deg) {
      if (!(d > 0.0)) throw InvalidArgument("slosh limits must be positive");
    }
    for (double e : error_fractions) {
      if (!(e > -1.0)) throw InvalidArgument("error fractions must exceed -1");
    }
  }
};

/// Box velocity/acceleration bounds from the arm's Cartesian magnitude limits.
inline void apply_robot_limits(OcpConfig& ocp, const RobotModel& m) {
  for (int i = 0; i < 3; ++i) {
    ocp.v_max(i) = m.cartesian_velocity_max(0);
    ocp.a_max(i) = m.cartesian_acceleration_max(0);
    ocp.v_max(i + 3) = m.cartesian_velocity_max(1);
    ocp.a_max(i + 3) = m.cartesian_acceleration_max(1);
  }
  ocp.v_min = -ocp.v_max;
  ocp.a_min = -ocp.a_max;
}

inline double trigger_rod_length(const ExperimentConfig& cfg) {
  return cfg.rod_length > 0.0 ? cfg.rod_length : estimate_rod_length(cfg.container, cfg.gravity);
}

/// StopConfig for one run: plant uses `plant_l`, planner `planner_l`.
inline StopConfig make_stop_config(const ExperimentConfig& cfg, const RobotModel& robot,
                                   double plant_l, double planner_l, double limit_deg) {
  StopConfig sc;
  sc.ocp = cfg.ocp;
  apply_robot_limits(sc.ocp, robot);
  sc.ocp.set_symmetric_slosh_limit(deg_to_rad(limit_deg));
  sc.plant = PendulumParams{plant_l, cfg.gravity};
  sc.planner = PendulumParams{planner_l, cfg.gravity};
  sc.plant_dt = 1.0 / cfg.plant_rate;
  sc.replan_every = std::max(1, static_cast<int>(std::lround(cfg.plant_rate / cfg.planner_rate)));
  sc.mode = cfg.mode;
  sc.deterministic = cfg.deterministic;
  return sc;
}

/// Joint state at `q` moving with task velocity `v` (planner ordering), by
/// the least-squares inverse of the Jacobian.
inline JointState joint_state_for_velocity(const RobotModel& m, const JointVector& q,
                                           const Vector6& v) {
  JointState js;
  js.q = q;
  const Jacobian J = jacobian(m, q);
  js.qd = J.completeOrthogonalDecomposition().solve(from_task_order(v));
  return js;
}

/// One stop from `velocity`, optionally after a pre-trigger ramp from rest.
inline RunMetrics run_single(const ExperimentConfig& cfg, const RobotModel& robot,
                             const StopConfig& sc, const Vector6& velocity,
                             const PreTrigger& pre, bool record_trace) {
  PlantState s;
  s.velocity = velocity;
  if (cfg.mode == ControlMode::kJointSpace) {
    s.joints = joint_state_for_velocity(robot, cfg.home_q, velocity);
    RacController rac(robot);
    return run_emergency_stop(s, sc, pre, &rac, record_trace);
  }
  return run_emergency_stop(s, sc, pre, nullptr, record_trace);
}

inline RunMetrics run_trigger_stop(const ExperimentConfig& cfg, bool baseline = false,
                                   bool record_trace = true) {
  cfg.validate();
  const RobotModel robot = load_robot_model(cfg.robot_file);
  const double l = trigger_rod_length(cfg);
  StopConfig sc = make_stop_config(cfg, robot, l, l, cfg.slosh_limit_deg);
  sc.ocp.slosh_aware = !baseline;
  return run_single(cfg, robot, sc, cfg.trigger_velocity, {}, record_trace);
}

struct SweepCell {
  int index = 0;
  double rod_length = 0.0;          // true
  double planner_rod_length = 0.0;  // used by the planner
  double error_fraction = 0.0;
  double slosh_limit_deg = 0.0;
  bool ok = false;  // false: the run threw; metrics are empty
  std::string message;
  RunMetrics metrics;
};

struct SweepResult {
  std::vector<SweepCell> cells;  // sorted by index

  [[nodiscard]] int failed() const {
    return static_cast<int>(std::count_if(cells.begin(), cells.end(),
                                          [](const SweepCell& c) { return !c.ok; }));
  }
};

namespace detail {

inline void run_cells(const ExperimentConfig& cfg, const RobotModel& robot,
                      std::vector<SweepCell>& cells) {
  const StopConfig proto = make_stop_config(cfg, robot, 0.05, 0.05, 5.0);
  const PreTrigger pre = smoothstep_ramp(cfg.ramp_target, cfg.ramp_duration, proto.plant_dt);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      SweepCell& c = cells[i];
      try {
        const StopConfig sc =
            make_stop_config(cfg, robot, c.rod_length, c.planner_rod_length, c.slosh_limit_deg);
        c.metrics = run_single(cfg, robot, sc, Vector6::Zero(), pre, false);
        c.ok = true;
      } catch (const std::exception& e) {
        c.ok = false;
        c.message = e.what();
      }
    }
  };
  const int n = std::min<int>(cfg.threads, static_cast<int>(cells.size()));
  std::vector<std::thread> pool;
  for (int t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
}

}  // namespace detail

/// Rod length x slosh limit grid; rod length is the slow index.
inline SweepResult run_heatmap_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  const RobotModel robot = load_robot_model(cfg.robot_file);
  SweepResult out;
  int index = 0;
  for (double l : cfg.rod_lengths) {
    for (double lim : cfg.slosh_limits_deg) {
      SweepCell c;
      c.index = index++;
      c.rod_length = c.planner_rod_length = l;
      c.slosh_limit_deg = lim;
      out.cells.push_back(c);
    }
  }
  detail::run_cells(cfg, robot, out.cells);
  return out;
}

/// Planner rod length true * (1 + e) for each error fraction e.
inline SweepResult run_robustness_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  const RobotModel robot = load_robot_model(cfg.robot_file);
  SweepResult out;
  int index = 0;
  for (double e : cfg.error_fractions) {
    SweepCell c;
    c.index = index++;
    c.rod_length = cfg.true_rod_length;
    c.planner_rod_length = cfg.true_rod_length * (1.0 + e);
    c.error_fraction = e;
    c.slosh_limit_deg = cfg.robustness_limit_deg;
    out.cells.push_back(c);
  }
  detail::run_cells(cfg, robot, out.cells);
  return out;
}

// ---- output ----------------------------------------------------------------

inline constexpr const char* kSweepHeader =
    "cell,rod_length_m,planner_rod_length_m,error_fraction,slosh_limit_deg,status,"
    "stopping_time_s,stopped,spilled,max_tilt_deg,max_violation_deg,time_in_violation_s,"
    "time_in_violation_gt_0p2deg_s,max_slack_deg,plans,solver_failures,message";

namespace detail {

inline std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace detail

inline void write_sweep_csv(std::ostream& out, const SweepResult& r) {
  out << kSweepHeader << '\n';
  out.precision(17);
  for (const auto& c : r.cells) {
    const RunMetrics& m = c.metrics;
    out << c.index << ',' << c.rod_length << ',' << c.planner_rod_length << ','
        << c.error_fraction << ',' << c.slosh_limit_deg << ',' << (c.ok ? "ok" : "failed");
    if (c.ok) {
      out << ',' << m.stopping_time << ',' << (m.stopped ? 1 : 0) << ',' << (m.spilled ? 1 : 0)
          << ',' << m.max_tilt_deg << ',' << m.max_violation_deg << ',' << m.time_in_violation
          << ',' << m.time_in_violation_gt_0p2deg << ',' << m.max_slack_deg << ',' << m.plans
          << ',' << m.solver_failures;
    } else {
      out << ",,,,,,,,,,";
    }
    out << ',' << detail::csv_quote(c.message) << '\n';
  }
}

inline nlohmann::json metrics_json(const RunMetrics& m) {
  return {{"trigger_time_s", m.trigger_time},
          {"stopping_time_s", m.stopping_time},
          {"stopped", m.stopped},
          {"spilled", m.spilled},
          {"max_tilt_deg", m.max_tilt_deg},
          {"max_violation_deg", m.max_violation_deg},
          {"time_in_violation_s", m.time_in_violation},
          {"time_in_violation_gt_0p2deg_s", m.time_in_violation_gt_0p2deg},
          {"max_slack_deg", m.max_slack_deg},
          {"plans", m.plans},
          {"solver_failures", m.solver_failures},
          {"max_plan_age_s", m.max_plan_age},
          {"trace_rows", m.trace.size()}};
}

inline nlohmann::json sweep_json(const SweepResult& r) {
  double sum = 0.0, peak = 0.0, stop_sum = 0.0;
  int ok = 0;
  for (const auto& c : r.cells) {
    if (!c.ok) continue;
    sum += c.metrics.max_violation_deg;
    peak = std::max(peak, c.metrics.max_violation_deg);
    stop_sum += c.metrics.stopping_time;
    ++ok;
  }
  return {{"cells", r.cells.size()},
          {"failed_cells", r.cells.size() - static_cast<std::size_t>(ok)},
          {"mean_max_violation_deg", ok > 0 ? sum / ok : 0.0},
          {"peak_max_violation_deg", peak},
          {"mean_stopping_time_s", ok > 0 ? stop_sum / ok : 0.0}};
}

inline nlohmann::json config_json(const ExperimentConfig& cfg) {
  auto vec = [](const auto& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  return {{"scenario", to_string(cfg.scenario)},
          {"mode", to_string(cfg.mode)},
          {"deterministic", cfg.deterministic},
          {"seed", cfg.seed},
          {"plant_rate_hz", cfg.plant_rate},
          {"planner_rate_hz", cfg.planner_rate},
          {"container_radius_m", cfg.container.radius_R},
          {"fill_height_m", cfg.container.fill_height_h},
          {"rod_length_m", trigger_rod_length(cfg)},
          {"slosh_limit_deg", cfg.slosh_limit_deg},
          {"trigger_velocity", vec(cfg.trigger_velocity)},
          {"horizon", cfg.ocp.horizon_N},
          {"planner_dt_s", cfg.ocp.dt},
          {"c1", cfg.ocp.c1},
          {"c2", cfg.ocp.c2},
          {"c3", cfg.ocp.c3},
          {"c4", cfg.ocp.c4}};
}

// ---- config file -------------------------------------------------------------

namespace detail {

template <typename T>
void read_if(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline void read_vec6(const nlohmann::json& j, const char* key, Vector6& out) {
  if (!j.contains(key)) return;
  const auto v = j.at(key).get<std::vector<double>>();
  if (v.size() != 6) throw ParseError(std::string(key) + " needs 6 values");
  for (int i = 0; i < 6; ++i) out(i) = v[static_cast<std::size_t>(i)];
}

}  // namespace detail

/// Applies a JSON object on top of `cfg`. Unknown keys are errors.
inline void apply_config_json(ExperimentConfig& cfg, const nlohmann::json& j) {
  static const std::vector<std::string> known = {
      "scenario", "container_radius_m", "fill_height_m", "gravity", "trigger_velocity",
      "slosh_limit_deg", "rod_length_m", "rod_lengths_m", "slosh_limits_deg",
      "true_rod_length_m", "robustness_limit_deg", "error_fractions", "ramp_target",
      "ramp_duration_s", "plant_rate_hz", "planner_rate_hz", "mode", "deterministic", "seed",
      "threads", "robot_file", "home_q", "output_dir", "ocp"};
  if (!j.is_object()) throw ParseError("config must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (std::find(known.begin(), known.end(), k) == known.end()) {
      throw ParseError("unknown config key: " + k);
    }
  }
  try {
    if (j.contains("scenario")) cfg.scenario = scenario_from_string(j.at("scenario"));
    if (j.contains("mode")) cfg.mode = mode_from_string(j.at("mode"));
    detail::read_if(j, "container_radius_m", cfg.container.radius_R);
    detail::read_if(j, "fill_height_m", cfg.container.fill_height_h);
    detail::read_if(j, "gravity", cfg.gravity);
    detail::read_vec6(j, "trigger_velocity", cfg.trigger_velocity);
    detail::read_if(j, "slosh_limit_deg", cfg.slosh_limit_deg);
    detail::read_if(j, "rod_length_m", cfg.rod_length);
    detail::read_if(j, "rod_lengths_m", cfg.rod_lengths);
    detail::read_if(j, "slosh_limits_deg", cfg.slosh_limits_deg);
    detail::read_if(j, "true_rod_length_m", cfg.true_rod_length);
    detail::read_if(j, "robustness_limit_deg", cfg.robustness_limit_deg);
    detail::read_if(j, "error_fractions", cfg.error_fractions);
    detail::read_vec6(j, "ramp_target", cfg.ramp_target);
    detail::read_if(j, "ramp_duration_s", cfg.ramp_duration);
    detail::read_if(j, "plant_rate_hz", cfg.plant_rate);
    detail::read_if(j, "planner_rate_hz", cfg.planner_rate);
    detail::read_if(j, "deterministic", cfg.deterministic);
    detail::read_if(j, "seed", cfg.seed);
    detail::read_if(j, "threads", cfg.threads);
    detail::read_if(j, "robot_file", cfg.robot_file);
    detail::read_if(j, "output_dir", cfg.output_dir);
    if (j.contains("home_q")) {
      const auto q = j.at("home_q").get<std::vector<double>>();
      if (q.size() != kNumJoints) throw ParseError("home_q needs 7 values");
      for (int i = 0; i < kNumJoints; ++i) cfg.home_q(i) = q[static_cast<std::size_t>(i)];
    }
    if (j.contains("ocp")) {
      const auto& o = j.at("ocp");
      detail::read_if(o, "horizon", cfg.ocp.horizon_N);
      detail::read_if(o, "dt_s", cfg.ocp.dt);
      detail::read_if(o, "c1", cfg.ocp.c1);
      detail::read_if(o, "c2", cfg.ocp.c2);
      detail::read_if(o, "c3", cfg.ocp.c3);
      detail::read_if(o, "c4", cfg.ocp.c4);
      detail::read_vec6(o, "velocity_weight", cfg.ocp.velocity_weight);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad config value: ") + e.what());
  }
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
  ExperimentConfig cfg;
  apply_config_json(cfg, j);
  return cfg;
}

}  // namespace slosh_stop
