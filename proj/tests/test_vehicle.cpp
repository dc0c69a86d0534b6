#include "race/vehicle.hpp"

#include <algorithm>
#include <random>
#include <vector>

#include "doctest.h"

using namespace race;

namespace {

// One-file scalar transcription of the bicycle model, kept independent of
// the library implementation on purpose.
struct ScalarDeriv {
  double Xd, Yd, phid, vxd, vyd, rd;
};

ScalarDeriv scalar_dynamic(double phi, double vx, double vy, double r,
                           double delta, double D, const VehicleParams& p) {
  const double vxg = std::max(vx, 0.5);
  const double aR = std::atan((vy - p.lR * r) / vxg);
  const double aF = std::atan((vy + p.lF * r) / vxg) - delta;
  const double FR = -p.DR * std::sin(p.CR * std::atan(p.BR * aR));
  const double FF = -p.DF * std::sin(p.CF * std::atan(p.BF * aF));
  const double Fx = p.Cm * D - p.Cr0 - p.Cr2 * vx * vx;
  const double tau = (delta * vx / (p.lF + p.lR) - r) * p.Ptv;
  ScalarDeriv d;
  d.Xd = vx * std::cos(phi) - vy * std::sin(phi);
  d.Yd = vx * std::sin(phi) + vy * std::cos(phi);
  d.phid = r;
  d.vxd = (Fx - FF * std::sin(delta) + p.m * vy * r) / p.m;
  d.vyd = (FR + FF * std::cos(delta) - p.m * vx * r) / p.m;
  d.rd = (FF * p.lF * std::cos(delta) - FR * p.lR + tau) / p.Iz;
  return d;
}

VehicleParams params() {
  VehicleParams p;
  p.validate();
  return p;
}

}  // namespace

TEST_CASE("tire forces: zero slip and odd symmetry") {
  VehicleParams p = params();
  VehicleState s;
  s.vx = 6.0;
  s.r = 0.4;
  s.vy = p.lR * s.r;  // alpha_R = 0
  const double delta_zero_front =
      std::atan((s.vy + p.lF * s.r) / s.vx);  // alpha_F = 0
  TireForces t = tire_forces(s, delta_zero_front, p);
  CHECK(t.alpha_R == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(t.F_Ry == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(t.alpha_F == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(t.F_Fy == doctest::Approx(0.0).epsilon(1e-12));

  // F(-a) = -F(a) on both axles
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> uni(-0.3, 0.3);
  for (int i = 0; i < 200; ++i) {
    VehicleState a, b;
    a.vx = b.vx = 8.0;
    a.vy = uni(rng);
    a.r = uni(rng);
    b.vy = -a.vy;
    b.r = -a.r;
    const double d = uni(rng);
    TireForces ta = tire_forces(a, d, p);
    TireForces tb = tire_forces(b, -d, p);
    CHECK(ta.F_Ry == doctest::Approx(-tb.F_Ry).epsilon(1e-12));
    CHECK(ta.F_Fy == doctest::Approx(-tb.F_Fy).epsilon(1e-12));
  }
}

TEST_CASE("tire forces: frozen reference values") {
  VehicleParams p = params();
  p.lR = 0.8;
  VehicleState s;
  s.vx = 8.0;
  s.vy = 0.4;
  s.r = 0.3;
  TireForces t = tire_forces(s, 0.05, p);
  // scalar oracle: atan((0.4 - 0.24)/8) and the force law on it
  CHECK(t.alpha_R == doctest::Approx(0.019997333973).epsilon(1e-9));
  CHECK(t.F_Ry == doctest::Approx(-559.885413460).epsilon(1e-9));
  CHECK(t.alpha_F == doctest::Approx(0.029829985712).epsilon(1e-9));
  CHECK(t.F_Fy == doctest::Approx(-684.153359808).epsilon(1e-9));

  // force magnitude never exceeds the peak parameter
  for (double a = -1.5; a <= 1.5; a += 0.01) {
    VehicleState q;
    q.vx = 5.0;
    q.vy = std::tan(a) * q.vx;
    TireForces tf = tire_forces(q, 0.0, p);
    CHECK(std::abs(tf.F_Ry) <= p.DR + 1e-9);
    CHECK(std::abs(tf.F_Fy) <= p.DF + 1e-9);
  }
}

TEST_CASE("tire forces: unguarded call refuses degenerate velocity") {
  VehicleParams p = params();
  VehicleState s;
  s.vx = 0.2;
  CHECK_THROWS_AS(tire_forces(s, 0.0, p, false), std::domain_error);
  CHECK_NOTHROW(tire_forces(s, 0.0, p, true));
}

TEST_CASE("drivetrain force") {
  VehicleParams p = params();
  CHECK(drivetrain_force(0.0, 0.0, p) == doctest::Approx(-p.Cr0));
  CHECK(drivetrain_force(0.0, 1.0, p) == doctest::Approx(p.Cm - p.Cr0));
  VehicleParams q = p;
  q.Cm = 5000.0;
  q.Cr0 = 50.0;
  q.Cr2 = 1.0;
  CHECK(drivetrain_force(10.0, 0.5, q) == doctest::Approx(2350.0));
}

TEST_CASE("torque vectoring") {
  VehicleParams p = params();
  // yaw rate on kinematic target -> no corrective moment
  const double delta = 0.12, vx = 7.0;
  const double r_target = delta * vx / p.wheelbase();
  CHECK(torque_vectoring(delta, vx, r_target, p) == doctest::Approx(0.0));
  CHECK(torque_vectoring(0.0, 5.0, 0.0, p) == doctest::Approx(0.0));

  VehicleParams q = p;
  q.lF = 0.8;
  q.lR = 0.8;
  q.Ptv = 300.0;
  CHECK(torque_vectoring(0.1, 5.0, 0.0, q) == doctest::Approx(93.75));
}

TEST_CASE("dynamic derivative: straight rolling and mirror symmetry") {
  VehicleParams p = params();
  VehicleState s;
  s.vx = 8.0;
  const double D_hold = (p.Cr0 + p.Cr2 * 64.0) / p.Cm;  // Fx = 0
  Vec6 f = dynamic_derivative(s, {0.0, D_hold}, p);
  CHECK(f[0] == doctest::Approx(8.0));
  CHECK(f[1] == doctest::Approx(0.0).epsilon(1e-12));
  for (int i = 2; i < 6; ++i) CHECK(std::abs(f[i]) < 1e-9);

  std::mt19937 rng(21);
  std::uniform_real_distribution<double> uni(-0.4, 0.4);
  for (int i = 0; i < 300; ++i) {
    VehicleState a;
    a.vx = 4.0 + 8.0 * std::abs(uni(rng));
    a.vy = uni(rng);
    a.r = uni(rng);
    const DriverInput ua{uni(rng), 0.5 * uni(rng)};
    VehicleState b = a;
    b.vy = -a.vy;
    b.r = -a.r;
    const DriverInput ub{-ua.delta, ua.D};
    Vec6 fa = dynamic_derivative(a, ua, p);
    Vec6 fb = dynamic_derivative(b, ub, p);
    CHECK(fa[3] == doctest::Approx(fb[3]).epsilon(1e-12));
    CHECK(fa[4] == doctest::Approx(-fb[4]).epsilon(1e-12));
    CHECK(fa[5] == doctest::Approx(-fb[5]).epsilon(1e-12));
  }
}

TEST_CASE("dynamic derivative matches the scalar transcription") {
  VehicleParams p = params();
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  for (int i = 0; i < 500; ++i) {
    VehicleState s;
    s.phi = uni(rng) * M_PI;
    s.vx = 1.0 + 14.0 * std::abs(uni(rng));
    s.vy = uni(rng);
    s.r = uni(rng);
    DriverInput u{0.4 * uni(rng), uni(rng)};
    Vec6 f = dynamic_derivative(s, u, p);
    ScalarDeriv d = scalar_dynamic(s.phi, s.vx, s.vy, s.r, u.delta, u.D, p);
    CHECK(f[0] == doctest::Approx(d.Xd).epsilon(1e-12));
    CHECK(f[1] == doctest::Approx(d.Yd).epsilon(1e-12));
    CHECK(f[2] == doctest::Approx(d.phid).epsilon(1e-12));
    CHECK(f[3] == doctest::Approx(d.vxd).epsilon(1e-12));
    CHECK(f[4] == doctest::Approx(d.vyd).epsilon(1e-12));
    CHECK(f[5] == doctest::Approx(d.rd).epsilon(1e-12));
  }
}

TEST_CASE("kinematic derivative") {
  VehicleParams p = params();
  VehicleState rest;
  Vec6 f = kinematic_derivative(rest, {0.0, 0.0}, {0.0, 0.0}, p);
  CHECK(f[3] == doctest::Approx(-p.Cr0 / p.m));
  CHECK(f[0] == 0.0);
  CHECK(f[4] == 0.0);
  CHECK(f[5] == 0.0);

  VehicleState s;
  s.vx = 9.0;
  f = kinematic_derivative(s, {0.0, 0.3}, {0.0, 0.0}, p);
  CHECK(f[4] == doctest::Approx(0.0));
  CHECK(f[5] == doctest::Approx(0.0));

  // frozen hand evaluation at vx=2, delta=0.2, d_delta=0.1, D=0
  VehicleState t;
  t.vx = 2.0;
  f = kinematic_derivative(t, {0.2, 0.0}, {0.1, 0.0}, p);
  CHECK(f[3] == doctest::Approx(-0.262105263158).epsilon(1e-10));
  CHECK(f[4] == doctest::Approx(0.068870175439).epsilon(1e-10));
  CHECK(f[5] == doctest::Approx(0.098385964912).epsilon(1e-10));
}

TEST_CASE("blend weight and blended derivative") {
  VehicleParams p = params();
  CHECK(blend_lambda(2.0, p) == 0.0);
  CHECK(blend_lambda(3.0, p) == 0.0);
  CHECK(blend_lambda(4.0, p) == doctest::Approx(0.5));
  CHECK(blend_lambda(5.0, p) == 1.0);
  CHECK(blend_lambda(7.0, p) == 1.0);

  VehicleState s;
  s.vy = 0.2;
  s.r = 0.1;
  DriverInput u{0.1, 0.4};
  InputRate du{0.05, 0.0};

  s.vx = 2.0;
  CHECK((blended_derivative(s, u, du, p) - kinematic_derivative(s, u, du, p))
            .norm() == doctest::Approx(0.0));
  s.vx = 5.0;
  CHECK((blended_derivative(s, u, du, p) - dynamic_derivative(s, u, p))
            .norm() == doctest::Approx(0.0));
  s.vx = 4.0;
  Vec6 mid = 0.5 * (dynamic_derivative(s, u, p) +
                    kinematic_derivative(s, u, du, p));
  CHECK((blended_derivative(s, u, du, p) - mid).norm() ==
        doctest::Approx(0.0).epsilon(1e-12));

  // continuity across both knots
  for (double knot : {p.blend_vmin, p.blend_vmax}) {
    s.vx = knot - 1e-7;
    Vec6 below = blended_derivative(s, u, du, p);
    s.vx = knot + 1e-7;
    Vec6 above = blended_derivative(s, u, du, p);
    CHECK((above - below).lpNorm<Eigen::Infinity>() < 1e-5);
  }
}

TEST_CASE("model jacobians match central finite differences") {
  VehicleParams p = params();
  std::mt19937 rng(99);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  const double h = 1e-6;
  int checked = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    ModelState x;
    x << 5.0 * uni(rng), 5.0 * uni(rng), M_PI * uni(rng),
        1.0 + 14.0 * std::abs(uni(rng)), 0.8 * uni(rng), 0.8 * uni(rng),
        10.0 * std::abs(uni(rng)), 0.35 * uni(rng), uni(rng),
        8.0 * std::abs(uni(rng));
    // keep clear of the blend knots and the velocity guard kinks
    const double vx = x[SVX];
    if (std::abs(vx - p.blend_vmin) < 5e-3 ||
        std::abs(vx - p.blend_vmax) < 5e-3 || std::abs(vx - kVxGuard) < 5e-3)
      continue;
    ModelInput u(1.0 * uni(rng), 2.0 * uni(rng), 2.0 * uni(rng));

    ModelMatA A;
    ModelMatB B;
    model_jacobians(x, u, p, A, B);
    for (int j = 0; j < 10; ++j) {
      ModelState xp = x, xm = x;
      xp[j] += h;
      xm[j] -= h;
      ModelState col = (model_derivative(xp, u, p) -
                        model_derivative(xm, u, p)) / (2.0 * h);
      for (int i = 0; i < 10; ++i) {
        const double scale = std::max(1.0, std::abs(col[i]));
        CHECK(std::abs(A(i, j) - col[i]) / scale < 1e-4);
      }
    }
    for (int j = 0; j < 3; ++j) {
      ModelInput up = u, um = u;
      up[j] += h;
      um[j] -= h;
      ModelState col = (model_derivative(x, up, p) -
                        model_derivative(x, um, p)) / (2.0 * h);
      for (int i = 0; i < 10; ++i) {
        const double scale = std::max(1.0, std::abs(col[i]));
        CHECK(std::abs(B(i, j) - col[i]) / scale < 1e-4);
      }
    }
    ++checked;
  }
  CHECK(checked > 900);
}

TEST_CASE("rk4: polynomial subsystem is exact") {
  VehicleParams p = params();
  ModelState x = ModelState::Zero();
  x[SVTHETA] = 2.0;
  ModelInput u(0.0, 0.0, 1.5);
  ModelState next = rk4_step(x, u, 0.1, p);
  // double integrator: theta = v t + a t^2/2, exactly reproduced
  CHECK(next[STHETA] == doctest::Approx(2.0 * 0.1 + 0.5 * 1.5 * 0.01)
                            .epsilon(1e-14));
  CHECK(next[SVTHETA] == doctest::Approx(2.0 + 1.5 * 0.1).epsilon(1e-14));
}

TEST_CASE("rk4 against a fine Euler oracle, with order-4 convergence") {
  VehicleParams p = params();
  std::mt19937 rng(17);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);

  auto euler_rollout = [&](ModelState x, const ModelInput& u, double T,
                           double dt) {
    const int n = static_cast<int>(std::round(T / dt));
    for (int i = 0; i < n; ++i) x += dt * model_derivative(x, u, p);
    return x;
  };
  auto rk4_rollout = [&](ModelState x, const ModelInput& u, double T,
                         double dt) {
    const int n = static_cast<int>(std::round(T / dt));
    for (int i = 0; i < n; ++i) x = rk4_step(x, u, dt, p);
    return x;
  };

  // quasi-steady cornering states; far off the slow manifold the tire
  // transient is stiff enough that no 50 ms integrator resolves it
  std::vector<double> ratios;
  for (int trial = 0; trial < 10; ++trial) {
    const double vx = 8.0 + 4.0 * std::abs(uni(rng));
    const double delta = 0.07 * uni(rng);
    const double rt = delta * vx / p.wheelbase();
    ModelState x;
    x << uni(rng), uni(rng), 0.3 * uni(rng), vx,
        p.lR * rt * (1.0 + 0.03 * uni(rng)), rt * (1.0 + 0.03 * uni(rng)),
        0.0, delta, (p.Cr0 + p.Cr2 * vx * vx) / p.Cm + 0.08 * std::abs(uni(rng)),
        vx;
    ModelInput u(0.015 * uni(rng), 0.08 * std::abs(uni(rng)), uni(rng));

    // accuracy at the controller step size, against the plain Euler oracle
    const ModelState e1 = euler_rollout(x, u, 2.0, 1e-5);
    const double scale = std::max(1.0, e1.norm());
    CHECK((rk4_rollout(x, u, 2.0, 0.05) - e1).norm() / scale < 1e-5);

    // order check against a Richardson-extrapolated Euler reference (the
    // plain oracle's own first-order error would mask the h^4 decay)
    const ModelState e2 = euler_rollout(x, u, 2.0, 5e-6);
    const ModelState ref = 2.0 * e2 - e1;
    const double c1 = (rk4_rollout(x, u, 2.0, 0.016) - ref).norm();
    const double c2 = (rk4_rollout(x, u, 2.0, 0.008) - ref).norm();
    if (c1 > 1e-8) ratios.push_back(c1 / std::max(c2, 1e-300));
  }
  REQUIRE(ratios.size() >= 3);
  std::sort(ratios.begin(), ratios.end());
  const double median = ratios[ratios.size() / 2];
  CHECK(median > 10.0);
  CHECK(median < 24.0);
}

TEST_CASE("params validation") {
  VehicleParams p = params();
  p.blend_vmin = 6.0;  // above blend_vmax
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
}
