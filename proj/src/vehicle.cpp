#include "race/vehicle.hpp"

#include <stdexcept>

namespace race {

void VehicleParams::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("VehicleParams: ") + what);
  };
  require(m > 0.0, "m must be positive");
  require(Iz > 0.0, "Iz must be positive");
  require(lF > 0.0 && lR > 0.0, "axle distances must be positive");
  require(DF > 0.0 && DR > 0.0, "tire peak forces must be positive");
  require(blend_vmin < blend_vmax, "blend_vmin must be below blend_vmax");
  require(Cm > 0.0, "Cm must be positive");
  require(p_ellipse > 0.0 && p_ellipse <= 1.0, "p_ellipse must be in (0, 1]");
  require(wheel_radius > 0.0 && track_width > 0.0, "wheel geometry");
  for (int i = 0; i < 3; ++i) {
    require(u_min[i] < u_max[i], "input bounds must satisfy min < max");
    require(du_min[i] < du_max[i], "rate bounds must satisfy min < max");
  }
}

namespace {

inline double guarded_vx(double vx) { return std::max(vx, kVxGuard); }

// dF/dalpha for F = -D sin(C atan(B a))
inline double lateral_force(double alpha, double B, double C, double D) {
  return -D * std::sin(C * std::atan(B * alpha));
}
inline double lateral_force_slope(double alpha, double B, double C, double D) {
  return -D * C * B * std::cos(C * std::atan(B * alpha)) /
         (1.0 + B * B * alpha * alpha);
}

}  // namespace

TireForces tire_forces(const VehicleState& s, double delta,
                       const VehicleParams& p, bool guarded) {
  if (!guarded && std::abs(s.vx) < kVxGuard)
    throw std::domain_error("tire_forces: slip angles degenerate below vx guard");
  const double vx = guarded_vx(s.vx);
  TireForces t;
  t.alpha_R = std::atan((s.vy - p.lR * s.r) / vx);
  t.alpha_F = std::atan((s.vy + p.lF * s.r) / vx) - delta;
  t.F_Ry = lateral_force(t.alpha_R, p.BR, p.CR, p.DR);
  t.F_Fy = lateral_force(t.alpha_F, p.BF, p.CF, p.DF);
  return t;
}

double drivetrain_force(double vx, double D, const VehicleParams& p) {
  return p.Cm * D - p.Cr0 - p.Cr2 * vx * vx;
}

double torque_vectoring(double delta, double vx, double r,
                        const VehicleParams& p) {
  const double r_target = delta * vx / p.wheelbase();
  return (r_target - r) * p.Ptv;
}

Vec6 dynamic_derivative(const VehicleState& s, const DriverInput& u,
                        const VehicleParams& p) {
  const TireForces t = tire_forces(s, u.delta, p);
  const double Fx = drivetrain_force(s.vx, u.D, p);
  const double tau = torque_vectoring(u.delta, s.vx, s.r, p);
  const double cd = std::cos(u.delta), sd = std::sin(u.delta);
  Vec6 f;
  f[0] = s.vx * std::cos(s.phi) - s.vy * std::sin(s.phi);
  f[1] = s.vx * std::sin(s.phi) + s.vy * std::cos(s.phi);
  f[2] = s.r;
  f[3] = (Fx - t.F_Fy * sd + p.m * s.vy * s.r) / p.m;
  f[4] = (t.F_Ry + t.F_Fy * cd - p.m * s.vx * s.r) / p.m;
  f[5] = (t.F_Fy * p.lF * cd - t.F_Ry * p.lR + tau) / p.Iz;
  return f;
}

Vec6 kinematic_derivative(const VehicleState& s, const DriverInput& u,
                          const InputRate& du, const VehicleParams& p) {
  const double Fx = drivetrain_force(s.vx, u.D, p);
  const double ax = Fx / p.m;
  const double L = p.wheelbase();
  Vec6 f;
  f[0] = s.vx * std::cos(s.phi) - s.vy * std::sin(s.phi);
  f[1] = s.vx * std::sin(s.phi) + s.vy * std::cos(s.phi);
  f[2] = s.r;
  f[3] = ax;
  f[4] = (du.d_delta * s.vx + u.delta * ax) * p.lR / L;
  f[5] = (du.d_delta * s.vx + u.delta * ax) / L;
  return f;
}

double blend_lambda(double vx, const VehicleParams& p) {
  return clamp((vx - p.blend_vmin) / (p.blend_vmax - p.blend_vmin), 0.0, 1.0);
}

Vec6 blended_derivative(const VehicleState& s, const DriverInput& u,
                        const InputRate& du, const VehicleParams& p) {
  const double lam = blend_lambda(s.vx, p);
  if (lam <= 0.0) return kinematic_derivative(s, u, du, p);
  if (lam >= 1.0) return dynamic_derivative(s, u, p);
  return lam * dynamic_derivative(s, u, p) +
         (1.0 - lam) * kinematic_derivative(s, u, du, p);
}

ModelState model_derivative(const ModelState& x, const ModelInput& u,
                            const VehicleParams& p) {
  VehicleState s{x[SX], x[SY], x[SPHI], x[SVX], x[SVY], x[SR]};
  DriverInput in{x[SDELTA], x[SD]};
  InputRate rate{u[0], u[1]};
  const Vec6 f6 = blended_derivative(s, in, rate, p);
  ModelState f;
  f.head<6>() = f6;
  f[STHETA] = x[SVTHETA];
  f[SDELTA] = u[0];
  f[SD] = u[1];
  f[SVTHETA] = u[2];
  return f;
}

namespace {

// Jacobian blocks of the 6-dof dynamic model wrt [x0..x5, delta, D].
void dynamic_jacobian(const VehicleState& s, const DriverInput& u,
                      const VehicleParams& p,
                      Eigen::Matrix<double, 6, 8>& J) {
  J.setZero();
  const double vx = guarded_vx(s.vx);
  const double dvx = s.vx > kVxGuard ? 1.0 : 0.0;  // d(guarded vx)/d vx
  const double uR = (s.vy - p.lR * s.r) / vx;
  const double uF = (s.vy + p.lF * s.r) / vx;
  const double denR = 1.0 / (1.0 + uR * uR);
  const double denF = 1.0 / (1.0 + uF * uF);
  const double aR = std::atan(uR);
  const double aF = std::atan(uF) - u.delta;
  const double FR = lateral_force(aR, p.BR, p.CR, p.DR);
  const double FF = lateral_force(aF, p.BF, p.CF, p.DF);
  const double FRp = lateral_force_slope(aR, p.BR, p.CR, p.DR);
  const double FFp = lateral_force_slope(aF, p.BF, p.CF, p.DF);

  const double daR_dvx = -uR * dvx * denR / vx;
  const double daR_dvy = denR / vx;
  const double daR_dr = -p.lR * denR / vx;
  const double daF_dvx = -uF * dvx * denF / vx;
  const double daF_dvy = denF / vx;
  const double daF_dr = p.lF * denF / vx;

  const double cphi = std::cos(s.phi), sphi = std::sin(s.phi);
  const double cd = std::cos(u.delta), sd = std::sin(u.delta);
  const double L = p.wheelbase();

  // position rows
  J(0, SPHI) = -s.vx * sphi - s.vy * cphi;
  J(0, SVX) = cphi;
  J(0, SVY) = -sphi;
  J(1, SPHI) = s.vx * cphi - s.vy * sphi;
  J(1, SVX) = sphi;
  J(1, SVY) = cphi;
  J(2, SR) = 1.0;

  // vx_dot = (Fx - FF sin d + m vy r)/m
  J(3, SVX) = (-2.0 * p.Cr2 * s.vx - sd * FFp * daF_dvx) / p.m;
  J(3, SVY) = (-sd * FFp * daF_dvy) / p.m + s.r;
  J(3, SR) = (-sd * FFp * daF_dr) / p.m + s.vy;
  J(3, 6) = (-FF * cd - sd * FFp * (-1.0)) / p.m;
  J(3, 7) = p.Cm / p.m;

  // vy_dot = (FR + FF cos d - m vx r)/m
  J(4, SVX) = (FRp * daR_dvx + cd * FFp * daF_dvx) / p.m - s.r;
  J(4, SVY) = (FRp * daR_dvy + cd * FFp * daF_dvy) / p.m;
  J(4, SR) = (FRp * daR_dr + cd * FFp * daF_dr) / p.m - s.vx;
  J(4, 6) = (-FF * sd + cd * FFp * (-1.0)) / p.m;

  // r_dot = (FF lF cos d - FR lR + tau)/Iz, tau = (d vx/L - r) Ptv
  J(5, SVX) = (p.lF * cd * FFp * daF_dvx - p.lR * FRp * daR_dvx +
               p.Ptv * u.delta / L) / p.Iz;
  J(5, SVY) = (p.lF * cd * FFp * daF_dvy - p.lR * FRp * daR_dvy) / p.Iz;
  J(5, SR) = (p.lF * cd * FFp * daF_dr - p.lR * FRp * daR_dr - p.Ptv) / p.Iz;
  J(5, 6) = (p.lF * (-FF * sd - cd * FFp) + p.Ptv * s.vx / L) / p.Iz;
}

// Jacobian blocks of the kinematic model wrt [x0..x5, delta, D] and
// [d_delta, d_D].
void kinematic_jacobian(const VehicleState& s, const DriverInput& u,
                        const InputRate& du, const VehicleParams& p,
                        Eigen::Matrix<double, 6, 8>& J,
                        Eigen::Matrix<double, 6, 2>& Ju) {
  J.setZero();
  Ju.setZero();
  const double cphi = std::cos(s.phi), sphi = std::sin(s.phi);
  const double L = p.wheelbase();
  const double ax = drivetrain_force(s.vx, u.D, p) / p.m;
  const double dax_dvx = -2.0 * p.Cr2 * s.vx / p.m;
  const double dax_dD = p.Cm / p.m;

  J(0, SPHI) = -s.vx * sphi - s.vy * cphi;
  J(0, SVX) = cphi;
  J(0, SVY) = -sphi;
  J(1, SPHI) = s.vx * cphi - s.vy * sphi;
  J(1, SVX) = sphi;
  J(1, SVY) = cphi;
  J(2, SR) = 1.0;

  J(3, SVX) = dax_dvx;
  J(3, 7) = dax_dD;

  const double ky = p.lR / L;
  J(4, SVX) = (du.d_delta + u.delta * dax_dvx) * ky;
  J(4, 6) = ax * ky;
  J(4, 7) = u.delta * dax_dD * ky;
  Ju(4, 0) = s.vx * ky;

  J(5, SVX) = (du.d_delta + u.delta * dax_dvx) / L;
  J(5, 6) = ax / L;
  J(5, 7) = u.delta * dax_dD / L;
  Ju(5, 0) = s.vx / L;
}

}  // namespace

void model_jacobians(const ModelState& x, const ModelInput& u,
                     const VehicleParams& p, ModelMatA& A, ModelMatB& B) {
  A.setZero();
  B.setZero();
  VehicleState s{x[SX], x[SY], x[SPHI], x[SVX], x[SVY], x[SR]};
  DriverInput in{x[SDELTA], x[SD]};
  InputRate rate{u[0], u[1]};

  const double lam = blend_lambda(s.vx, p);
  Eigen::Matrix<double, 6, 8> Jd = Eigen::Matrix<double, 6, 8>::Zero();
  Eigen::Matrix<double, 6, 8> Jk;
  Eigen::Matrix<double, 6, 2> Jku;
  kinematic_jacobian(s, in, rate, p, Jk, Jku);
  if (lam > 0.0) dynamic_jacobian(s, in, p, Jd);

  Eigen::Matrix<double, 6, 8> J6 = lam * Jd + (1.0 - lam) * Jk;

  // blend weight itself depends on vx inside the band
  if (lam > 0.0 && lam < 1.0) {
    const Vec6 fd = dynamic_derivative(s, in, p);
    const Vec6 fk = kinematic_derivative(s, in, rate, p);
    const double dlam = 1.0 / (p.blend_vmax - p.blend_vmin);
    J6.col(SVX) += (fd - fk) * dlam;
  }

  A.block<6, 6>(0, 0) = J6.leftCols<6>();
  A.block<6, 1>(0, SDELTA) = J6.col(6);
  A.block<6, 1>(0, SD) = J6.col(7);
  A(STHETA, SVTHETA) = 1.0;

  B.block<6, 2>(0, 0) = (1.0 - lam) * Jku;
  B(SDELTA, 0) = 1.0;
  B(SD, 1) = 1.0;
  B(SVTHETA, 2) = 1.0;
}

ModelState rk4_step(const ModelState& x, const ModelInput& u, double dt,
                    const VehicleParams& p) {
  const ModelState k1 = model_derivative(x, u, p);
  const ModelState k2 = model_derivative(x + 0.5 * dt * k1, u, p);
  const ModelState k3 = model_derivative(x + 0.5 * dt * k2, u, p);
  const ModelState k4 = model_derivative(x + dt * k3, u, p);
  return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

void rk4_jacobians(const ModelState& x, const ModelInput& u, double dt,
                   const VehicleParams& p, ModelMatA& Ad, ModelMatB& Bd) {
  ModelMatA A1, A2, A3, A4;
  ModelMatB B1, B2, B3, B4;

  const ModelState k1 = model_derivative(x, u, p);
  model_jacobians(x, u, p, A1, B1);
  const ModelState x2 = x + 0.5 * dt * k1;

  const ModelState k2 = model_derivative(x2, u, p);
  model_jacobians(x2, u, p, A2, B2);
  const ModelMatA K2x = A2 * (ModelMatA::Identity() + 0.5 * dt * A1);
  const ModelMatB K2u = A2 * (0.5 * dt * B1) + B2;
  const ModelState x3 = x + 0.5 * dt * k2;

  const ModelState k3 = model_derivative(x3, u, p);
  model_jacobians(x3, u, p, A3, B3);
  const ModelMatA K3x = A3 * (ModelMatA::Identity() + 0.5 * dt * K2x);
  const ModelMatB K3u = A3 * (0.5 * dt * K2u) + B3;
  const ModelState x4 = x + dt * k3;

  model_jacobians(x4, u, p, A4, B4);
  const ModelMatA K4x = A4 * (ModelMatA::Identity() + dt * K3x);
  const ModelMatB K4u = A4 * (dt * K3u) + B4;

  Ad = ModelMatA::Identity() + (dt / 6.0) * (A1 + 2.0 * K2x + 2.0 * K3x + K4x);
  Bd = (dt / 6.0) * (B1 + 2.0 * K2u + 2.0 * K3u + K4u);
}

}  // namespace race
