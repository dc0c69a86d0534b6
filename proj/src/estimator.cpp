#include "race/estimator.hpp"

#include <cmath>
#include <stdexcept>

namespace race {

namespace {

constexpr double kHubGuard = 0.5;  // [m/s]

double lgamma_half(int twice) { return std::lgamma(0.5 * twice); }

// regularized lower incomplete gamma P(a, x), series + continued fraction
double gammp(double a, double x) {
  if (x < 0.0 || a <= 0.0) throw std::invalid_argument("gammp");
  if (x == 0.0) return 0.0;
  if (x < a + 1.0) {
    double ap = a, sum = 1.0 / a, del = sum;
    for (int n = 0; n < 200; ++n) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::abs(del) < std::abs(sum) * 1e-14) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
  }
  // Lentz continued fraction for Q(a, x)
  double b = x + 1.0 - a, c = 1e300, d = 1.0 / b, h = d;
  for (int i = 1; i < 200; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < 1e-30) d = 1e-30;
    c = b + an / c;
    if (std::abs(c) < 1e-30) c = 1e-30;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-14) break;
  }
  const double q = std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
  return 1.0 - q;
}

double chi2_cdf(double x, int k) { return gammp(0.5 * k, 0.5 * x); }

}  // namespace

double chi2_quantile(double p, int k) {
  if (p <= 0.0 || p >= 1.0) throw std::invalid_argument("chi2_quantile");
  double lo = 0.0, hi = 10.0 * k + 50.0;
  while (chi2_cdf(hi, k) < p) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (chi2_cdf(mid, k) < p)
      lo = mid;
    else
      hi = mid;
    if (hi - lo < 1e-10 * hi) break;
  }
  (void)lgamma_half(k);
  return 0.5 * (lo + hi);
}

bool chi_square_gate(const Eigen::VectorXd& innovation,
                     const Eigen::MatrixXd& S, double threshold) {
  const double d2 = innovation.dot(S.ldlt().solve(innovation));
  return d2 <= threshold;
}

EstimatorMode sensor_availability_policy(const SensorHealth& h) {
  if (!h.gss && !h.imu && !h.gnss && !h.wss) return EstimatorMode::Dead;
  if (h.imu && h.wss && (h.gss || h.gnss)) return EstimatorMode::FullDynamic;
  return EstimatorMode::ZsmuAugmented;
}

Eigen::Vector4d wheel_hub_velocities(double vx, double vy, double r,
                                     double delta, const VehicleParams& vp) {
  const double b2 = vp.track_width / 2.0;
  const double cd = std::cos(delta), sd = std::sin(delta);
  const double vF = vy + r * vp.lF;
  Eigen::Vector4d v;
  v[0] = (vx - r * b2) * cd + vF * sd;
  v[1] = (vx + r * b2) * cd + vF * sd;
  v[2] = vx - r * b2;
  v[3] = vx + r * b2;
  return v;
}

namespace {

// Discrete mean propagation. The wheel spin-up dynamics
//   sr_dot = R t_M / (I_w v) - (R^2 C_sigma / I_w + ax) sr / v - ax / v
// have a ~3 ms time constant, far stiffer than the predict rate, so the
// linear-in-sr part is integrated exactly per step; the rest is Euler.
EkfVec process_step(const EkfVec& x, const EstimatorInputs& in, double dt,
                    const ProcessParams& pp, const VehicleParams& vp) {
  const double vx = x[0], vy = x[1], r = x[2], ax = x[3], ay = x[4];
  EkfVec out = x;
  out[0] += dt * (ax + r * vy);
  out[1] += dt * (ay - r * vx);

  // yaw moment from linear tire forces and the wheel-torque differential;
  // linear in r and stiff at low speed, so this row is integrated exactly
  const double vx_g = std::max(vx, kHubGuard);
  const double cd = std::cos(in.delta);
  const Eigen::Vector4d sr = x.segment<4>(5);
  const double tau_tv =
      (vp.track_width / 2.0) * pp.C_sigma * (sr[1] - sr[0] + sr[3] - sr[2]);
  const double k_r = (vp.lF * vp.lF * pp.C_alpha_front * cd +
                      vp.lR * vp.lR * pp.C_alpha_rear) /
                     (vp.Iz * vx_g);
  const double c_r =
      (-vp.lF * pp.C_alpha_front * cd * vy / vx_g +
       vp.lF * pp.C_alpha_front * cd * in.delta +
       vp.lR * pp.C_alpha_rear * vy / vx_g + tau_tv) /
      vp.Iz;
  const double rest_r = c_r / k_r;
  out[2] = rest_r + (r - rest_r) * std::exp(-k_r * dt);

  // accelerations are a random walk: mean unchanged

  const Eigen::Vector4d hub = wheel_hub_velocities(vx, vy, r, in.delta, vp);
  const double R = vp.wheel_radius;
  for (int w = 0; w < 4; ++w) {
    double v = hub[w];
    if (std::abs(v) < kHubGuard) v = (v < 0.0) ? -kHubGuard : kHubGuard;
    const double drive = R * in.motor_torques[w] / (pp.I_w * v) - ax / v;
    // relaxation always damps; the rate scales with speed
    const double decay =
        std::min(-(R * R * pp.C_sigma / pp.I_w + ax) / std::abs(v), 0.0);
    if (decay < -1e-9) {
      const double rest = -drive / decay;
      out[5 + w] = rest + (sr[w] - rest) * std::exp(decay * dt);
    } else {
      out[5 + w] = sr[w] + dt * drive;
    }
  }
  return out;
}

}  // namespace

EstimatorState ekf_predict(const EstimatorState& s, const EstimatorInputs& in,
                           double dt, const ProcessParams& pp,
                           const VehicleParams& vp) {
  if (dt <= 0.0) throw std::invalid_argument("ekf_predict: dt must be > 0");
  EstimatorState out = s;
  out.x = process_step(s.x, in, dt, pp, vp);

  // transition Jacobian by central differences on the discrete map
  EkfMat F;
  const double h = 1e-6;
  for (int j = 0; j < 9; ++j) {
    EkfVec xp = s.x, xm = s.x;
    xp[j] += h;
    xm[j] -= h;
    F.col(j) = (process_step(xp, in, dt, pp, vp) -
                process_step(xm, in, dt, pp, vp)) / (2.0 * h);
  }

  EkfMat Q = EkfMat::Zero();
  Q(0, 0) = Q(1, 1) = pp.n_v;
  Q(2, 2) = pp.n_r;
  Q(3, 3) = Q(4, 4) = pp.n_a;
  for (int w = 0; w < 4; ++w) Q(5 + w, 5 + w) = pp.n_sr;

  out.P = F * s.P * F.transpose() + dt * Q;
  out.P = 0.5 * (out.P + out.P.transpose()).eval();
  out.t = s.t + dt;
  return out;
}

namespace {

template <int M>
UpdateResult linear_update(const EstimatorState& s,
                           const Eigen::Matrix<double, M, 1>& innovation,
                           const Eigen::Matrix<double, M, 9>& H,
                           const Eigen::Matrix<double, M, M>& R,
                           double gate) {
  UpdateResult res;
  res.state = s;
  const Eigen::Matrix<double, M, M> S = H * s.P * H.transpose() + R;
  res.mahalanobis2 = innovation.dot(S.ldlt().solve(innovation));
  if (gate > 0.0 && res.mahalanobis2 > gate) {
    res.accepted = false;
    return res;  // rejected updates must not perturb the state at all
  }
  const Eigen::Matrix<double, 9, M> K =
      s.P * H.transpose() * S.ldlt().solve(
                                Eigen::Matrix<double, M, M>::Identity());
  res.state.x = s.x + K * innovation;
  const EkfMat IKH = EkfMat::Identity() - K * H;
  res.state.P = IKH * s.P * IKH.transpose() + K * R * K.transpose();
  res.state.P = 0.5 * (res.state.P + res.state.P.transpose()).eval();
  return res;
}

}  // namespace

UpdateResult ekf_update_velocity(const EstimatorState& s, const Vec2& z,
                                 const SensorMount& mount, double gate) {
  const Mat2 Rs = rot2(mount.theta).transpose();
  Eigen::Matrix<double, 2, 9> H = Eigen::Matrix<double, 2, 9>::Zero();
  H.block<2, 2>(0, 0) = Rs;
  H.block<2, 1>(0, 2) =
      Rs * Vec2(-mount.position.y(), mount.position.x());
  const Vec2 pred =
      Rs * (Vec2(s.x[0], s.x[1]) +
            s.x[2] * Vec2(-mount.position.y(), mount.position.x()));
  const Mat2 R = mount.sigma * mount.sigma * Mat2::Identity();
  return linear_update<2>(s, z - pred, H, R, gate);
}

UpdateResult ekf_update_imu_acc(const EstimatorState& s, const Vec2& z,
                                double sigma, double gate) {
  Eigen::Matrix<double, 2, 9> H = Eigen::Matrix<double, 2, 9>::Zero();
  H(0, 3) = 1.0;
  H(1, 4) = 1.0;
  const Vec2 pred(s.x[3], s.x[4]);
  return linear_update<2>(s, z - pred, H,
                          Mat2(sigma * sigma * Mat2::Identity()), gate);
}

UpdateResult ekf_update_gyro(const EstimatorState& s, double z, double sigma,
                             double gate) {
  Eigen::Matrix<double, 1, 9> H = Eigen::Matrix<double, 1, 9>::Zero();
  H(0, 2) = 1.0;
  Eigen::Matrix<double, 1, 1> innov, R;
  innov[0] = z - s.x[2];
  R(0, 0) = sigma * sigma;
  return linear_update<1>(s, innov, H, R, gate);
}

UpdateResult ekf_update_wheelspeed(const EstimatorState& s,
                                   const Eigen::Vector4d& z, double delta,
                                   double sigma, const VehicleParams& vp,
                                   double gate) {
  // z_w = hub_w(vx, vy, r, delta) (sr_w + 1) / R: couples velocity and slip
  const double vx = s.x[0], vy = s.x[1], r = s.x[2];
  const double R = vp.wheel_radius;
  const double b2 = vp.track_width / 2.0;
  const double cd = std::cos(delta), sd = std::sin(delta);
  const Eigen::Vector4d hub = wheel_hub_velocities(vx, vy, r, delta, vp);

  Eigen::Vector4d pred;
  Eigen::Matrix<double, 4, 9> H = Eigen::Matrix<double, 4, 9>::Zero();
  for (int w = 0; w < 4; ++w) {
    const double k = (s.x[5 + w] + 1.0) / R;
    pred[w] = hub[w] * k;
    // d hub / d (vx, vy, r)
    double dvx = (w < 2) ? cd : 1.0;
    double dvy = (w < 2) ? sd : 0.0;
    double dr;
    if (w == 0)
      dr = -b2 * cd + vp.lF * sd;
    else if (w == 1)
      dr = b2 * cd + vp.lF * sd;
    else
      dr = (w == 2) ? -b2 : b2;
    H(w, 0) = dvx * k;
    H(w, 1) = dvy * k;
    H(w, 2) = dr * k;
    H(w, 5 + w) = hub[w] / R;
  }
  const Eigen::Matrix4d Rm = sigma * sigma * Eigen::Matrix4d::Identity();
  return linear_update<4>(s, Eigen::Vector4d(z - pred), H, Rm, gate);
}

EstimatorState ekf_zsmu(const EstimatorState& s, double sigma) {
  Eigen::Matrix<double, 4, 9> H = Eigen::Matrix<double, 4, 9>::Zero();
  H.block<4, 4>(0, 5).setIdentity();
  const Eigen::Vector4d innovation = -s.x.segment<4>(5);
  const Eigen::Matrix4d R = sigma * sigma * Eigen::Matrix4d::Identity();
  return linear_update<4>(s, innovation, H, R, 0.0).state;
}

// ---------------------------------------------------------------------------

void DriftDetector::add(SensorId id, double t, double value) {
  latest_[static_cast<int>(id)] = {t, value};
}

std::optional<SensorId> DriftDetector::check(double t) {
  double sum = 0.0, sum2 = 0.0;
  int n = 0;
  for (int i = 0; i < kNumSensorIds; ++i) {
    if (t - latest_[i].t > window_) continue;
    if (isolated(static_cast<SensorId>(i), t)) continue;
    sum += latest_[i].value;
    sum2 += latest_[i].value * latest_[i].value;
    ++n;
  }
  if (n < 2) {
    streak_ = 0;
    return std::nullopt;
  }
  const double mean = sum / n;
  const double stat = sum2 - n * mean * mean;
  if (stat < k_) {
    streak_ = 0;
    return std::nullopt;
  }
  if (++streak_ < consecutive_) return std::nullopt;
  streak_ = 0;

  // isolate the strongest contributor in this instant
  int worst = -1;
  double worst_dev = -1.0;
  for (int i = 0; i < kNumSensorIds; ++i) {
    if (t - latest_[i].t > window_) continue;
    if (isolated(static_cast<SensorId>(i), t)) continue;
    const double dev = std::abs(latest_[i].value - mean);
    if (dev > worst_dev) {
      worst_dev = dev;
      worst = i;
    }
  }
  if (worst < 0) return std::nullopt;
  isolated_until_[worst] = t + hold_;
  return static_cast<SensorId>(worst);
}

bool DriftDetector::isolated(SensorId id, double t) const {
  return t < isolated_until_[static_cast<int>(id)];
}

// ---------------------------------------------------------------------------

VelocityEstimator::VelocityEstimator(const VehicleParams& vp,
                                     const EstimatorConfig& cfg,
                                     const SensorSuiteConfig& suite)
    : vp_(vp),
      cfg_(cfg),
      suite_(suite),
      drift_(cfg.drift_k, cfg.drift_window, cfg.drift_consecutive,
             cfg.drift_hold) {
  state_.P = 0.1 * EkfMat::Identity();
  last_seen_.fill(0.0);
}

void VelocityEstimator::predict_to(double t) {
  if (faulted_) return;
  while (state_.t < t - 1e-12) {
    const double dt = std::min(t - state_.t, 0.005);
    state_ = ekf_predict(state_, inputs_, dt, cfg_.process, vp_);
  }
  refresh_mode(t);
  const bool zsmu_due = t >= next_zsmu_;
  if (zsmu_due) next_zsmu_ = t + 1.0 / cfg_.zsmu_rate;
  if (zsmu_due && (mode_ == EstimatorMode::ZsmuAugmented ||
                   state_.vx() < cfg_.zsmu_vx_threshold))
    state_ = ekf_zsmu(state_, cfg_.zsmu_sigma);

  if (!state_.x.allFinite()) faulted_ = true;
}

SensorHealth VelocityEstimator::health(double t) const {
  auto alive = [&](SensorId id) {
    const int i = static_cast<int>(id);
    if (drift_.isolated(id, t)) return false;
    return t - last_seen_[i] < cfg_.health_timeout;
  };
  SensorHealth h;
  h.gss = alive(SensorId::Gss);
  h.gnss = alive(SensorId::GnssVel);
  h.imu = alive(SensorId::ImuAcc) || alive(SensorId::ImuGyro);
  h.wss = alive(SensorId::WheelSpeed);
  return h;
}

void VelocityEstimator::refresh_mode(double t) {
  // hold full-dynamic until the first data arrives
  bool any_seen = false;
  for (double v : last_seen_)
    if (v > 0.0) any_seen = true;
  if (!any_seen) return;
  mode_ = sensor_availability_policy(health(t));
  if (mode_ == EstimatorMode::Dead) faulted_ = true;
}

void VelocityEstimator::process(const Measurement& m) {
  if (faulted_) return;
  if (m.t < state_.t - cfg_.stale_window) return;  // too old to replay
  if (m.t > state_.t) predict_to(m.t);

  const int idx = static_cast<int>(m.id);
  if (m.id == SensorId::Steering) {
    steering_ = m.z[0];
    inputs_.delta = m.z[0];
    last_seen_[idx] = m.t;
    return;
  }
  if (drift_.isolated(m.id, m.t)) return;
  last_seen_[idx] = m.t;

  const double gate1 = chi2_quantile(cfg_.chi2_quantile, 1);
  const double gate2 = chi2_quantile(cfg_.chi2_quantile, 2);
  const double gate4 = chi2_quantile(cfg_.chi2_quantile, 4);

  UpdateResult res;
  switch (m.id) {
    case SensorId::Gss:
      res = ekf_update_velocity(state_, Vec2(m.z[0], m.z[1]), suite_.gss,
                                gate2);
      drift_.add(SensorId::Gss, m.t, m.z[0]);
      break;
    case SensorId::GnssVel:
      res = ekf_update_velocity(state_, Vec2(m.z[0], m.z[1]), suite_.gnss,
                                gate2);
      drift_.add(SensorId::GnssVel, m.t, m.z[0]);
      break;
    case SensorId::ImuAcc:
      res = ekf_update_imu_acc(state_, Vec2(m.z[0], m.z[1]), suite_.imu.sigma,
                               gate2);
      break;
    case SensorId::ImuGyro:
      res = ekf_update_gyro(state_, m.z[0], suite_.gyro_sigma, gate1);
      break;
    case SensorId::WheelSpeed: {
      res = ekf_update_wheelspeed(state_,
                                  Eigen::Vector4d(m.z[0], m.z[1], m.z[2],
                                                  m.z[3]),
                                  steering_, suite_.wheelspeed.sigma, vp_,
                                  gate4);
      // rear-axle mean speed as a redundant vx reading
      const double sr_rl = state_.x[7], sr_rr = state_.x[8];
      const double vx_wss = 0.5 * (m.z[2] * vp_.wheel_radius / (1.0 + sr_rl) +
                                   m.z[3] * vp_.wheel_radius / (1.0 + sr_rr));
      drift_.add(SensorId::WheelSpeed, m.t, vx_wss);
      break;
    }
    default:
      return;
  }
  if (res.accepted) state_ = res.state;

  if (auto isolate = drift_.check(m.t)) {
    (void)isolate;  // health() sees the latch; nothing else to do here
  }
  if (!state_.x.allFinite()) faulted_ = true;
}

// ---------------------------------------------------------------------------

void OdometryIntegrator::add(double vx, double vy, double r, double dt) {
  const Pose2 step{vx * dt, vy * dt, r * dt};
  delta_ = delta_.compose(step);
  distance_ += std::hypot(vx, vy) * dt;
  cov_(0, 0) += noise_xy_ * noise_xy_ * dt;
  cov_(1, 1) += noise_xy_ * noise_xy_ * dt;
  cov_(2, 2) += noise_phi_ * noise_phi_ * dt;
}

void OdometryIntegrator::reset() {
  delta_ = {};
  cov_.setZero();
  cov_(0, 0) = cov_(1, 1) = 1e-6;
  cov_(2, 2) = 1e-7;
  distance_ = 0.0;
}

}  // namespace race
