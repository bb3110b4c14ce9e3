// Spherical-pendulum model of first-mode liquid slosh.
//
// The pendulum angles describe the liquid surface normal in the world frame:
// theta tilts the normal toward +x (rotation about +y), phi tilts it toward
// -y (rotation about +x). World z points up and gravity_g is the magnitude of
// gravity. The pendulum hangs below its pivot, so the gravity coupling enters
// with a restoring sign:
//
//   l th''        = -(g + z'') sin th cos ph + x'' cos th + y'' sin ph sin th
//                   - l cos th sin th ph'^2
//   l cos th ph'' = -(g + z'') sin ph - y'' cos ph + 2 l ph' th' sin th
#pragma once

#include <cmath>
#include <numbers>
#include <utility>

#include "slosh_stop/errors.hpp"

namespace slosh_stop {

enum class ContainerShape { kCylinder, kRectangular };

struct ContainerGeometry {
  double radius_R = 0.0;       // [m]
  double fill_height_h = 0.0;  // [m]
  ContainerShape shape = ContainerShape::kCylinder;
};

struct PendulumParams {
  double rod_length_l = 0.0;  // [m]
  double gravity_g = 9.81;    // [m/s^2]
};

struct PendulumState {
  double theta_p = 0.0;
  double phi_p = 0.0;
  double theta_p_dot = 0.0;
  double phi_p_dot = 0.0;
};

struct PivotAcceleration {
  double xdd = 0.0;
  double ydd = 0.0;
  double zdd = 0.0;
};

struct PendulumAccel {
  double theta_p_ddot = 0.0;
  double phi_p_ddot = 0.0;
};

inline constexpr double kGimbalEpsilon = 1e-6;

inline void validate(const PendulumParams& p) {
  if (!(p.rod_length_l > 0.0) || !(p.gravity_g > 0.0)) {
    throw InvalidArgument("pendulum rod length and gravity must be positive");
  }
}

inline PendulumAccel pendulum_derivatives(const PendulumState& s,
                                          const PivotAcceleration& a,
                                          const PendulumParams& p) {
  validate(p);
  const double cos_th = std::cos(s.theta_p);
  if (std::abs(cos_th) <= kGimbalEpsilon) {
    throw GimbalSingularity("pendulum theta reached +-pi/2");
  }
  const double sin_th = std::sin(s.theta_p);
  const double sin_ph = std::sin(s.phi_p);
  const double cos_ph = std::cos(s.phi_p);
  const double l = p.rod_length_l;
  const double vertical = p.gravity_g + a.zdd;

  PendulumAccel out;
  out.theta_p_ddot = (-vertical * sin_th * cos_ph + a.xdd * cos_th +
                      a.ydd * sin_ph * sin_th -
                      l * cos_th * sin_th * s.phi_p_dot * s.phi_p_dot) /
                     l;
  out.phi_p_ddot = (-vertical * sin_ph - a.ydd * cos_ph +
                    2.0 * l * s.phi_p_dot * s.theta_p_dot * sin_th) /
                   (l * cos_th);
  return out;
}

/// One classical RK4 step with the pivot acceleration held over dt.
inline PendulumState integrate_pendulum(const PendulumState& s,
                                        const PivotAcceleration& a,
                                        const PendulumParams& p, double dt) {
  if (!(dt > 0.0)) throw InvalidArgument("integration step must be positive");

  auto rate = [&](const PendulumState& x) {
    const PendulumAccel acc = pendulum_derivatives(x, a, p);
    return PendulumState{x.theta_p_dot, x.phi_p_dot, acc.theta_p_ddot,
                         acc.phi_p_ddot};
  };
  auto axpy = [](const PendulumState& x, double h, const PendulumState& k) {
    return PendulumState{x.theta_p + h * k.theta_p, x.phi_p + h * k.phi_p,
                         x.theta_p_dot + h * k.theta_p_dot,
                         x.phi_p_dot + h * k.phi_p_dot};
  };

  const PendulumState k1 = rate(s);
  const PendulumState k2 = rate(axpy(s, 0.5 * dt, k1));
  const PendulumState k3 = rate(axpy(s, 0.5 * dt, k2));
  const PendulumState k4 = rate(axpy(s, dt, k3));
  const double w = dt / 6.0;
  return PendulumState{
      s.theta_p + w * (k1.theta_p + 2.0 * k2.theta_p + 2.0 * k3.theta_p + k4.theta_p),
      s.phi_p + w * (k1.phi_p + 2.0 * k2.phi_p + 2.0 * k3.phi_p + k4.phi_p),
      s.theta_p_dot + w * (k1.theta_p_dot + 2.0 * k2.theta_p_dot +
                           2.0 * k3.theta_p_dot + k4.theta_p_dot),
      s.phi_p_dot + w * (k1.phi_p_dot + 2.0 * k2.phi_p_dot +
                         2.0 * k3.phi_p_dot + k4.phi_p_dot)};
}

/// Tilt (theta, phi) at which the pendulum rests under a constant pivot
/// acceleration.
inline std::pair<double, double> equilibrium_tilt(const PivotAcceleration& a,
                                                  const PendulumParams& p) {
  const double vertical = p.gravity_g + a.zdd;
  const double phi = std::atan2(-a.ydd, vertical);
  const double theta =
      std::atan2(a.xdd, vertical * std::cos(phi) - a.ydd * std::sin(phi));
  return {theta, phi};
}

namespace detail {

// d/dx J1(x) from the ascending series of J1.
inline double bessel_j1_prime(double x) {
  const double half = 0.5 * x;
  const double half_sq = half * half;
  double term = 0.5;  // m = 0: (2m+1)/2 * (x/2)^(2m) / (m! (m+1)!)
  double coeff = 1.0;  // (x/2)^(2m) / (m! (m+1)!)
  double sum = term;
  for (int m = 1; m < 60; ++m) {
    coeff *= -half_sq / (static_cast<double>(m) * static_cast<double>(m + 1));
    term = 0.5 * static_cast<double>(2 * m + 1) * coeff;
    sum += term;
    if (std::abs(term) < 1e-18 * std::abs(sum)) break;
  }
  return sum;
}

}  // namespace detail

/// First positive root of J1'. Bisection on [1.5, 2.5].
inline double first_bessel_j1_prime_root(double tol = 1e-10) {
  double lo = 1.5;
  double hi = 2.5;
  double f_lo = detail::bessel_j1_prime(lo);
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    const double f_mid = detail::bessel_j1_prime(mid);
    if ((f_mid > 0.0) == (f_lo > 0.0)) {
      lo = mid;
      f_lo = f_mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

/// Equivalent pendulum length from the first sloshing mode of a cylinder:
/// omega^2 = (g xi / R) tanh(h xi / R) and omega^2 = g / l.
inline double estimate_rod_length(const ContainerGeometry& geom, double g = 9.81) {
  if (geom.shape != ContainerShape::kCylinder) {
    throw UnsupportedShape("rod length estimation is implemented for cylinders only");
  }
  if (!(geom.radius_R > 0.0) || !(geom.fill_height_h > 0.0) || !(g > 0.0)) {
    throw InvalidArgument("container radius, fill height and gravity must be positive");
  }
  static const double xi = first_bessel_j1_prime_root();
  const double omega_sq =
      g * xi / geom.radius_R * std::tanh(geom.fill_height_h * xi / geom.radius_R);
  return g / omega_sq;
}

}  // namespace slosh_stop
