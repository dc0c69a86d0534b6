#pragma once

#include <Eigen/Dense>

#include "race/common.hpp"

namespace race {

// Bicycle-model parameter set shared by the simulator and the controller.
// Defaults are plausible electric formula-style magnitudes fitted by hand;
// they are placeholders, not measured values.
struct VehicleParams {
  double m = 190.0;    // mass [kg]
  double Iz = 110.0;   // yaw inertia [kg m^2]
  double lF = 0.8;     // CoG to front axle [m]
  double lR = 0.7;     // CoG to rear axle [m]

  // lateral tire curve F = -D sin(C atan(B alpha)), per axle
  double BF = 9.5;
  double CF = 1.6;
  double DF = 1600.0;  // [N]
  double BR = 10.0;
  double CR = 1.65;
  double DR = 1750.0;  // [N]

  double Cm = 2300.0;  // motor gain [N]
  double Cr0 = 45.0;   // rolling resistance [N]
  double Cr2 = 1.2;    // drag [N s^2/m^2]
  double Ptv = 250.0;  // torque vectoring gain [N m s/rad]

  double blend_vmin = 3.0;  // [m/s]
  double blend_vmax = 5.0;  // [m/s]

  double p_long = 0.9;      // ellipse longitudinal shape
  double p_ellipse = 0.95;  // ellipse utilization

  double wheel_radius = 0.23;  // R [m]
  double track_width = 1.2;    // b, left-right wheel distance [m]
  double car_half_width = 0.7; // body envelope half width [m]

  // bounds on u = [delta, D, v_theta] and on the input rates du
  Vec3 u_min{-0.45, -1.0, 0.0};
  Vec3 u_max{0.45, 1.0, 20.0};
  Vec3 du_min{-1.5, -8.0, -12.0};
  Vec3 du_max{1.5, 8.0, 12.0};

  double wheelbase() const { return lF + lR; }

  // throws std::invalid_argument when a physical invariant is violated
  void validate() const;
};

struct VehicleState {
  double X = 0.0;
  double Y = 0.0;
  double phi = 0.0;  // wrapped to (-pi, pi]
  double vx = 0.0;
  double vy = 0.0;
  double r = 0.0;

  Eigen::Matrix<double, 6, 1> vec() const {
    Eigen::Matrix<double, 6, 1> v;
    v << X, Y, phi, vx, vy, r;
    return v;
  }
  static VehicleState from_vec(const Eigen::Matrix<double, 6, 1>& v) {
    return {v[0], v[1], wrap_angle(v[2]), v[3], v[4], v[5]};
  }
  Pose2 pose() const { return {X, Y, phi}; }
};

struct DriverInput {
  double delta = 0.0;  // steering angle [rad]
  double D = 0.0;      // driving command, -1 (full brake) .. 1 (full throttle)
};

struct InputRate {
  double d_delta = 0.0;  // [rad/s]
  double d_D = 0.0;      // [1/s]
};

struct TireForces {
  double alpha_F = 0.0;  // front slip angle [rad]
  double alpha_R = 0.0;  // rear slip angle [rad]
  double F_Fy = 0.0;     // front lateral force [N]
  double F_Ry = 0.0;     // rear lateral force [N]
};

// Slip-angle denominators are evaluated with vx replaced by
// max(vx, kVxGuard); the kinematic blend dominates below 3 m/s so the guard
// only prevents the singularity at standstill.
constexpr double kVxGuard = 0.5;  // [m/s]

// Slip angles and lateral axle forces. With guarded=false the call refuses
// (std::domain_error) velocities below the guard instead of clamping them.
TireForces tire_forces(const VehicleState& s, double delta,
                       const VehicleParams& p, bool guarded = true);

// Longitudinal drivetrain force: motor minus rolling resistance minus drag.
double drivetrain_force(double vx, double D, const VehicleParams& p);

// Yaw moment of the torque-vectoring controller tracking the kinematic
// target yaw rate delta*vx/L.
double torque_vectoring(double delta, double vx, double r,
                        const VehicleParams& p);

using Vec6 = Eigen::Matrix<double, 6, 1>;

Vec6 dynamic_derivative(const VehicleState& s, const DriverInput& u,
                        const VehicleParams& p);
Vec6 kinematic_derivative(const VehicleState& s, const DriverInput& u,
                          const InputRate& du, const VehicleParams& p);

// lambda(vx): 0 below blend_vmin, 1 above blend_vmax, linear in between
double blend_lambda(double vx, const VehicleParams& p);

Vec6 blended_derivative(const VehicleState& s, const DriverInput& u,
                        const InputRate& du, const VehicleParams& p);

// ---------------------------------------------------------------------------
// Extended 10-state model used by the contouring controller:
//   x = [X, Y, phi, vx, vy, r, theta, delta, D, v_theta],  u = du/dt
// theta is the path progress, (delta, D, v_theta) are integrator states of
// the rate inputs.

using ModelState = Eigen::Matrix<double, 10, 1>;
using ModelInput = Eigen::Matrix<double, 3, 1>;
using ModelMatA = Eigen::Matrix<double, 10, 10>;
using ModelMatB = Eigen::Matrix<double, 10, 3>;

enum StateIndex : int {
  SX = 0, SY, SPHI, SVX, SVY, SR, STHETA, SDELTA, SD, SVTHETA
};

ModelState model_derivative(const ModelState& x, const ModelInput& u,
                            const VehicleParams& p);

// Analytic Jacobians of model_derivative wrt state and input.
void model_jacobians(const ModelState& x, const ModelInput& u,
                     const VehicleParams& p, ModelMatA& A, ModelMatB& B);

// Classic RK4 step of the extended model. A non-finite result signals
// integration blow-up; no exception is thrown.
ModelState rk4_step(const ModelState& x, const ModelInput& u, double dt,
                    const VehicleParams& p);

// Exact Jacobians of the RK4 map, chained through the four stages.
void rk4_jacobians(const ModelState& x, const ModelInput& u, double dt,
                   const VehicleParams& p, ModelMatA& Ad, ModelMatB& Bd);

}  // namespace race
