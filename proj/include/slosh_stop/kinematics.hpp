// Serial-arm kinematics from a modified Denavit-Hartenberg table.
//
// Task-space vectors from this module use the geometric ordering
// [vx, vy, vz, wx, wy, wz] in the world frame. to_task_order() converts to the
// planner's ordering, where the second angle channel is the rotation about x
// and the first the rotation about y.
#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "slosh_stop/errors.hpp"

namespace slosh_stop {

inline constexpr int kNumJoints = 7;

using JointVector = Eigen::Matrix<double, kNumJoints, 1>;
using Jacobian = Eigen::Matrix<double, 6, kNumJoints>;
using Twist = Eigen::Matrix<double, 6, 1>;

struct DhRow {
  double a = 0.0;
  double d = 0.0;
  double alpha = 0.0;
  double theta_offset = 0.0;

  [[nodiscard]] Eigen::Isometry3d transform(double q) const {
    Eigen::Isometry3d t = Eigen::Isometry3d::Identity();
    t.rotate(Eigen::AngleAxisd(alpha, Eigen::Vector3d::UnitX()));
    t.translate(Eigen::Vector3d(a, 0.0, 0.0));
    t.rotate(Eigen::AngleAxisd(q + theta_offset, Eigen::Vector3d::UnitZ()));
    t.translate(Eigen::Vector3d(0.0, 0.0, d));
    return t;
  }
};

struct RobotModel {
  std::string name;
  std::array<DhRow, kNumJoints> joints{};
  DhRow flange{};
  Eigen::Isometry3d base = Eigen::Isometry3d::Identity();

  JointVector q_min = JointVector::Constant(-std::numbers::pi);
  JointVector q_max = JointVector::Constant(std::numbers::pi);
  JointVector qd_min = JointVector::Constant(-1.0);
  JointVector qd_max = JointVector::Constant(1.0);
  JointVector qdd_min = JointVector::Constant(-1.0);
  JointVector qdd_max = JointVector::Constant(1.0);

  // (translational, rotational) magnitude limits in the world frame.
  Eigen::Vector2d cartesian_velocity_max{1.0, 1.0};
  Eigen::Vector2d cartesian_acceleration_max{1.0, 1.0};

  void validate() const {
    for (int i = 0; i < kNumJoints; ++i) {
      if (!(q_min(i) < q_max(i)) || !(qd_min(i) < qd_max(i)) || !(qdd_min(i) < qdd_max(i))) {
        throw InvalidArgument("joint limits need lo < hi");
      }
    }
    if ((cartesian_velocity_max.array() <= 0.0).any() ||
        (cartesian_acceleration_max.array() <= 0.0).any()) {
      throw InvalidArgument("cartesian limits must be positive");
    }
  }
};

struct JointState {
  JointVector q = JointVector::Zero();
  JointVector qd = JointVector::Zero();
};

struct Pose {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
};

namespace detail {

inline std::vector<double> parse_numbers(const std::string& text, const std::string& key) {
  std::istringstream in(text);
  std::vector<double> out;
  std::string tok;
  while (in >> tok) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ParseError("bad number '" + tok + "' for key " + key);
    }
  }
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Parses the key-value robot description (see data/panda.robot).
inline RobotModel parse_robot_model(std::istream& in) {
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError("line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    if (kv.count(key) != 0) throw ParseError("duplicate key " + key);
    kv[key] = detail::trim(line.substr(eq + 1));
  }

  auto take = [&](const std::string& key, std::size_t count, bool required) {
    const auto it = kv.find(key);
    if (it == kv.end()) {
      if (required) throw ParseError("missing key " + key);
      return std::vector<double>{};
    }
    auto v = detail::parse_numbers(it->second, key);
    if (v.size() != count) {
      throw ParseError("key " + key + " expects " + std::to_string(count) + " values");
    }
    kv.erase(it);
    return v;
  };
  auto joint_vec = [](const std::vector<double>& v) {
    JointVector out;
    for (int i = 0; i < kNumJoints; ++i) out(i) = v[static_cast<std::size_t>(i)];
    return out;
  };
  auto dh = [](const std::vector<double>& v) { return DhRow{v[0], v[1], v[2], v[3]}; };

  RobotModel m;
  if (const auto it = kv.find("name"); it != kv.end()) {
    m.name = it->second;
    kv.erase(it);
  }
  for (int i = 0; i < kNumJoints; ++i) {
    m.joints[static_cast<std::size_t>(i)] = dh(take("joint." + std::to_string(i + 1), 4, true));
  }
  m.flange = dh(take("flange", 4, true));
  m.q_min = joint_vec(take("q_min", kNumJoints, true));
  m.q_max = joint_vec(take("q_max", kNumJoints, true));
  m.qd_max = joint_vec(take("qd_max", kNumJoints, true));
  m.qdd_max = joint_vec(take("qdd_max", kNumJoints, true));
  const auto qd_min = take("qd_min", kNumJoints, false);
  m.qd_min = qd_min.empty() ? JointVector(-m.qd_max) : joint_vec(qd_min);
  const auto qdd_min = take("qdd_min", kNumJoints, false);
  m.qdd_min = qdd_min.empty() ? JointVector(-m.qdd_max) : joint_vec(qdd_min);
  const auto cv = take("cartesian_velocity_max", 2, true);
  m.cartesian_velocity_max = {cv[0], cv[1]};
  const auto ca = take("cartesian_acceleration_max", 2, true);
  m.cartesian_acceleration_max = {ca[0], ca[1]};
  if (!kv.empty()) throw ParseError("unknown key " + kv.begin()->first);
  m.validate();
  return m;
}

inline RobotModel load_robot_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open robot file " + path);
  return parse_robot_model(in);
}

/// Frames after each joint (index 0..6) and the flange (index 7).
inline std::array<Eigen::Isometry3d, kNumJoints + 1> joint_frames(const RobotModel& m,
                                                                  const JointVector& q) {
  std::array<Eigen::Isometry3d, kNumJoints + 1> frames;
  Eigen::Isometry3d t = m.base;
  for (int i = 0; i < kNumJoints; ++i) {
    t = t * m.joints[static_cast<std::size_t>(i)].transform(q(i));
    frames[static_cast<std::size_t>(i)] = t;
  }
  frames[kNumJoints] = t * m.flange.transform(0.0);
  return frames;
}

inline Pose forward_kinematics(const RobotModel& m, const JointVector& q) {
  const auto frames = joint_frames(m, q);
  return Pose{frames[kNumJoints].translation(), frames[kNumJoints].linear()};
}

/// Geometric Jacobian of the flange in the world frame.
inline Jacobian jacobian(const RobotModel& m, const JointVector& q) {
  const auto frames = joint_frames(m, q);
  const Eigen::Vector3d pe = frames[kNumJoints].translation();
  Jacobian j;
  for (int i = 0; i < kNumJoints; ++i) {
    const auto& f = frames[static_cast<std::size_t>(i)];
    const Eigen::Vector3d z = f.linear().col(2);
    j.block<3, 1>(0, i) = z.cross(pe - f.translation());
    j.block<3, 1>(3, i) = z;
  }
  return j;
}

inline constexpr double kJacobianDotEpsilon = 1e-6;

/// J'(q, qd) qd by a forward directional difference.
inline Twist jacobian_dot_times_qd(const RobotModel& m, const JointVector& q,
                                   const JointVector& qd) {
  if (qd.isZero(0.0)) return Twist::Zero();
  const double eps = kJacobianDotEpsilon;
  return (jacobian(m, q + eps * qd) - jacobian(m, q)) / eps * qd;
}

/// Rotation vector taking `from` to `to`, expressed in the world frame.
inline Eigen::Vector3d rotation_difference(const Eigen::Matrix3d& to, const Eigen::Matrix3d& from) {
  const Eigen::AngleAxisd aa(to * from.transpose());
  return aa.angle() * aa.axis();
}

/// [vx vy vz wx wy wz] -> [vx vy vz w_about_y w_about_x wz]; the swap is its
/// own inverse.
inline Twist to_task_order(const Twist& t) {
  Twist out = t;
  std::swap(out(3), out(4));
  return out;
}

inline Twist from_task_order(const Twist& t) { return to_task_order(t); }

}  // namespace slosh_stop
