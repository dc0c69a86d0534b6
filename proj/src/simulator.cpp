#include "race/simulator.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace race {

SensorModel SensorModel::default_noise() {
  SensorModel s;
  s.position_sigma = 0.1;
  s.sigma_range_growth = 0.01;
  s.color_confidence = 0.96;
  s.drop_rate = 0.05;
  s.false_positive_rate = 0.05;
  // close-range classifier quality: 96% correct, rest split between the
  // opposing color and unknown
  s.color_confusion << 0.96, 0.02, 0.00, 0.02,
                       0.02, 0.96, 0.00, 0.02,
                       0.00, 0.00, 0.97, 0.03,
                       0.25, 0.25, 0.05, 0.45;
  return s;
}

std::vector<ConeObservation> observe(const Pose2& truth_pose,
                                     const TrackModel& track,
                                     const SensorModel& sensor, Rng& rng,
                                     double timestamp) {
  std::vector<ConeObservation> out;
  if (sensor.range <= 0.0) return out;
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  auto emit = [&](const Vec2& local, ConeColor true_color) {
    const double dist = local.norm();
    if (dist > sensor.range) return;
    if (std::abs(std::atan2(local.y(), local.x())) > sensor.fov / 2.0) return;
    if (sensor.drop_rate > 0.0 && uni(rng) < sensor.drop_rate) return;

    const double sigma =
        sensor.position_sigma + sensor.sigma_range_growth * dist;
    ConeObservation obs;
    obs.position = local;
    if (sigma > 0.0)
      obs.position += Vec2(gauss(rng) * sigma, gauss(rng) * sigma);
    obs.covariance = sigma * sigma * Mat2::Identity();

    // sample the reported label through the confusion matrix
    const Eigen::Vector4d row =
        sensor.color_confusion.row(static_cast<int>(true_color));
    double u = uni(rng);
    int label = 3;
    for (int c = 0; c < 4; ++c) {
      if (u < row[c]) {
        label = c;
        break;
      }
      u -= row[c];
    }
    obs.color_probs.setZero();
    if (label == 3) {
      obs.color_probs[3] = 1.0;
    } else {
      obs.color_probs[label] = sensor.color_confidence;
      obs.color_probs[3] = 1.0 - sensor.color_confidence;
    }
    obs.timestamp = timestamp;
    out.push_back(obs);
  };

  for (const Vec2& c : track.cones_left)
    emit(truth_pose.to_local(c), ConeColor::Blue);
  for (const Vec2& c : track.cones_right)
    emit(truth_pose.to_local(c), ConeColor::Yellow);
  for (const Vec2& c : track.cones_orange)
    emit(truth_pose.to_local(c), ConeColor::Orange);

  if (sensor.false_positive_rate > 0.0) {
    std::poisson_distribution<int> pois(sensor.false_positive_rate);
    const int n_fp = pois(rng);
    for (int i = 0; i < n_fp; ++i) {
      const double bearing = (uni(rng) - 0.5) * sensor.fov;
      const double dist = 1.0 + uni(rng) * (sensor.range - 1.0);
      ConeObservation obs;
      obs.position = {dist * std::cos(bearing), dist * std::sin(bearing)};
      const double sigma =
          sensor.position_sigma + sensor.sigma_range_growth * dist;
      obs.covariance = std::max(sigma, 0.05) * std::max(sigma, 0.05) *
                       Mat2::Identity();
      obs.color_probs = ColorProbs(0.0, 0.0, 0.0, 1.0);
      obs.timestamp = timestamp;
      out.push_back(obs);
    }
  }
  return out;
}

void save_sim_log(const SimLog& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_sim_log: cannot open " + path);
  out << "# t, X, Y, phi, vx, vy, r, delta, D\n";
  char buf[256];
  for (const SimRecord& r : log.records) {
    std::snprintf(buf, sizeof(buf),
                  "%.6f, %.9f, %.9f, %.9f, %.9f, %.9f, %.9f, %.9f, %.9f\n",
                  r.t, r.state.X, r.state.Y, r.state.phi, r.state.vx,
                  r.state.vy, r.state.r, r.delta, r.D);
    out << buf;
  }
}

SimLog load_sim_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_sim_log: cannot open " + path);
  SimLog log;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    SimRecord r;
    ss >> r.t >> r.state.X >> r.state.Y >> r.state.phi >> r.state.vx >>
        r.state.vy >> r.state.r >> r.delta >> r.D;
    if (ss) log.records.push_back(r);
  }
  return log;
}

namespace {

// signed side of p relative to segment a->b
double line_side(const Vec2& a, const Vec2& b, const Vec2& p) {
  const Vec2 d = b - a;
  return d.x() * (p.y() - a.y()) - d.y() * (p.x() - a.x());
}

bool segments_intersect(const Vec2& a, const Vec2& b, const Vec2& c,
                        const Vec2& d) {
  const double s1 = line_side(a, b, c), s2 = line_side(a, b, d);
  const double s3 = line_side(c, d, a), s4 = line_side(c, d, b);
  return s1 * s2 < 0.0 && s3 * s4 < 0.0;
}

}  // namespace

LapReport lap_accounting(const SimLog& log, const TrackModel& track,
                         double departure_tolerance) {
  LapReport report;
  if (log.records.empty()) return report;

  const Vec2 la = track.start_line_a, lb = track.start_line_b;
  std::vector<double> crossing_times;
  double theta_hint = -1.0;
  double max_alat = 0.0;
  int departures = 0;
  std::vector<std::pair<double, double>> lap_maxes;  // sampled per crossing

  double last_cross_t = -1e9;
  for (size_t i = 1; i < log.records.size(); ++i) {
    const SimRecord& r0 = log.records[i - 1];
    const SimRecord& r1 = log.records[i];
    const Vec2 p0(r0.state.X, r0.state.Y);
    const Vec2 p1(r1.state.X, r1.state.Y);

    const double alat = std::abs(r1.ay);
    max_alat = std::max(max_alat, alat);

    theta_hint = track.centerline.project(p1, theta_hint, 8.0);
    const double off = (track.centerline.position(theta_hint) - p1).norm();
    if (off > track.half_width(theta_hint) + departure_tolerance)
      ++departures;

    if (segments_intersect(la, lb, p0, p1) && r1.state.vx > 0.1) {
      // forward crossing only, debounced
      const Vec2 line_dir = (lb - la).normalized();
      const Vec2 normal(-line_dir.y(), line_dir.x());
      const Vec2 motion = p1 - p0;
      if (motion.dot(normal) != 0.0 && r1.t - last_cross_t > 2.0) {
        crossing_times.push_back(r1.t);
        last_cross_t = r1.t;
        lap_maxes.push_back({max_alat, static_cast<double>(departures)});
        max_alat = 0.0;
        departures = 0;
      }
    }
  }

  for (size_t i = 1; i < crossing_times.size(); ++i) {
    LapStats lap;
    lap.lap = static_cast<int>(i);
    lap.t_start = crossing_times[i - 1];
    lap.t_end = crossing_times[i];
    lap.time = lap.t_end - lap.t_start;
    lap.max_alat = lap_maxes[i].first;
    lap.departures = static_cast<int>(lap_maxes[i].second);
    report.departures_total += lap.departures;
    report.laps.push_back(lap);
  }
  // departures outside complete laps still fail the run
  report.departures_total += departures;
  for (const auto& m : lap_maxes)
    if (report.laps.empty()) report.departures_total += (int)m.second;
  report.pass = report.departures_total == 0;
  return report;
}

// ---------------------------------------------------------------------------

Simulator::Simulator(const VehicleParams& params, const TrackModel& track,
                     const SimulatorConfig& cfg, uint64_t seed)
    : plant_(params),
      track_(track),
      cfg_(cfg),
      rng_obs_(derive_rng(seed, 11)),
      rng_sensors_(derive_rng(seed, 12)) {
  if (cfg_.dt <= 0.0 || cfg_.dt > 0.01)
    throw std::invalid_argument("Simulator: dt must be in (0, 0.01]");
  if (cfg_.param_perturbation != 0.0) {
    const double f = cfg_.param_perturbation;
    Rng rng = derive_rng(seed, 13);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    plant_.m *= 1.0 + f * uni(rng);
    plant_.DF *= 1.0 + f * uni(rng);
    plant_.DR *= 1.0 + f * uni(rng);
    plant_.Cm *= 1.0 + f * uni(rng);
  }
  state_.X = track.start_pose.x;
  state_.Y = track.start_pose.y;
  state_.phi = track.start_pose.phi;
  next_sample_.fill(0.0);
}

void Simulator::step(const DriverInput& cmd) {
  // steering / drive rate limits
  const double want_ddelta =
      clamp(cmd.delta, plant_.u_min[0], plant_.u_max[0]) - delta_;
  const double d_delta = clamp(want_ddelta / cfg_.dt, plant_.du_min[0],
                               plant_.du_max[0]);
  const double want_dD = clamp(cmd.D, -1.0, 1.0) - D_;
  const double d_D = clamp(want_dD / cfg_.dt, plant_.du_min[1],
                           plant_.du_max[1]);

  // RK4 on the blended model; inputs ramp linearly within the step
  auto deriv = [&](const VehicleState& s, double frac) {
    DriverInput u{delta_ + d_delta * cfg_.dt * frac,
                  D_ + d_D * cfg_.dt * frac};
    InputRate du{d_delta, d_D};
    return blended_derivative(s, u, du, plant_);
  };
  const Vec6 x0 = state_.vec();
  const Vec6 k1 = deriv(state_, 0.0);
  const Vec6 k2 = deriv(VehicleState::from_vec(x0 + 0.5 * cfg_.dt * k1), 0.5);
  const Vec6 k3 = deriv(VehicleState::from_vec(x0 + 0.5 * cfg_.dt * k2), 0.5);
  const Vec6 k4 = deriv(VehicleState::from_vec(x0 + cfg_.dt * k3), 1.0);
  Vec6 x1 = x0 + (cfg_.dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);

  if (cfg_.clamp_vx && x1[3] < 0.0) x1[3] = 0.0;  // resistance cannot reverse

  // body accelerations for the IMU channel
  const Vec6 f = deriv(VehicleState::from_vec(x1), 1.0);
  ax_ = f[3] - x1[5] * x1[4];
  ay_ = f[4] + x1[5] * x1[3];

  state_ = VehicleState::from_vec(x1);
  delta_ += d_delta * cfg_.dt;
  D_ += d_D * cfg_.dt;
  time_ += cfg_.dt;
  update_wheels();
}

void Simulator::update_wheels() {
  // linear traction slip: equal split of the motor force over four wheels
  const double drive = plant_.Cm * D_ * 0.25;
  double sr_base = drive / cfg_.suite.C_sigma;
  const double b2 = plant_.track_width / 2.0;
  const double cd = std::cos(delta_), sd = std::sin(delta_);
  const double vF = state_.vy + state_.r * plant_.lF;
  std::array<double, 4> hub = {
      (state_.vx - state_.r * b2) * cd + vF * sd,
      (state_.vx + state_.r * b2) * cd + vF * sd,
      state_.vx - state_.r * b2,
      state_.vx + state_.r * b2,
  };
  for (int w = 0; w < 4; ++w) {
    double sr = sr_base;
    const FailureEvent* ev = nullptr;
    if (failure_active(SensorId::WheelSpeed, FailureKind::WheelSlip, time_,
                       &ev)) {
      if (ev->wheel == w || (ev->wheel < 0 && w >= 2)) sr += ev->magnitude;
    }
    slip_ratios_[w] = sr;
    wheel_speeds_[w] = hub[w] * (1.0 + sr) / plant_.wheel_radius;
  }
}

std::array<double, 4> Simulator::motor_torques() const {
  const double per_wheel = plant_.Cm * D_ * 0.25 * plant_.wheel_radius;
  return {per_wheel, per_wheel, per_wheel, per_wheel};
}

bool Simulator::failure_active(SensorId id, FailureKind kind, double t,
                               const FailureEvent** ev) const {
  for (const FailureEvent& e : script_) {
    if (e.sensor != id || e.kind != kind) continue;
    if (kind == FailureKind::Spike) {
      if (std::abs(t - e.t_start) < cfg_.dt) {
        if (ev) *ev = &e;
        return true;
      }
    } else if (t >= e.t_start && t <= e.t_end) {
      if (ev) *ev = &e;
      return true;
    }
  }
  return false;
}

std::vector<ConeObservation> Simulator::observe_cones(
    const SensorModel& sensor) {
  return observe(state_.pose(), track_, sensor, rng_obs_,
                 time_ - sensor.latency);
}

std::vector<Measurement> Simulator::poll_sensors() {
  std::vector<Measurement> out;
  std::normal_distribution<double> gauss(0.0, 1.0);
  const SensorSuiteConfig& c = cfg_.suite;

  auto due = [&](SensorId id, double rate) {
    const int i = static_cast<int>(id);
    if (time_ + 1e-12 < next_sample_[i]) return false;
    next_sample_[i] = next_sample_[i] + 1.0 / rate;
    if (next_sample_[i] < time_) next_sample_[i] = time_ + 1.0 / rate;
    return true;
  };

  auto corrupt = [&](Measurement& m, double sigma) {
    const FailureEvent* ev = nullptr;
    if (failure_active(m.id, FailureKind::Null, time_)) return false;
    if (failure_active(m.id, FailureKind::Spike, time_, &ev))
      for (int k = 0; k < m.dim; ++k) m.z[k] += ev->magnitude * sigma;
    if (failure_active(m.id, FailureKind::Drift, time_, &ev))
      for (int k = 0; k < m.dim; ++k)
        m.z[k] += ev->magnitude * (time_ - ev->t_start);
    return true;
  };

  auto velocity_at = [&](const SensorMount& mt) {
    const Vec2 v_point(state_.vx - state_.r * mt.position.y(),
                       state_.vy + state_.r * mt.position.x());
    return Vec2(rot2(mt.theta).transpose() * v_point);
  };

  if (due(SensorId::Gss, c.gss.rate)) {
    Measurement m;
    m.t = time_;
    m.id = SensorId::Gss;
    m.dim = 2;
    const Vec2 v = velocity_at(c.gss);
    m.z[0] = v.x() + gauss(rng_sensors_) * c.gss.sigma;
    m.z[1] = v.y() + gauss(rng_sensors_) * c.gss.sigma;
    if (corrupt(m, c.gss.sigma)) out.push_back(m);
  }
  if (due(SensorId::GnssVel, c.gnss.rate)) {
    Measurement m;
    m.t = time_;
    m.id = SensorId::GnssVel;
    m.dim = 2;
    const Vec2 v = velocity_at(c.gnss);
    m.z[0] = v.x() + gauss(rng_sensors_) * c.gnss.sigma;
    m.z[1] = v.y() + gauss(rng_sensors_) * c.gnss.sigma;
    if (corrupt(m, c.gnss.sigma)) out.push_back(m);
  }
  if (due(SensorId::ImuAcc, c.imu.rate)) {
    Measurement m;
    m.t = time_;
    m.id = SensorId::ImuAcc;
    m.dim = 2;
    m.z[0] = ax_ + gauss(rng_sensors_) * c.imu.sigma;
    m.z[1] = ay_ + gauss(rng_sensors_) * c.imu.sigma;
    if (corrupt(m, c.imu.sigma)) out.push_back(m);
    Measurement g;
    g.t = time_;
    g.id = SensorId::ImuGyro;
    g.dim = 1;
    g.z[0] = state_.r + gauss(rng_sensors_) * c.gyro_sigma;
    if (corrupt(g, c.gyro_sigma)) out.push_back(g);
  }
  if (due(SensorId::WheelSpeed, c.wheelspeed.rate)) {
    Measurement m;
    m.t = time_;
    m.id = SensorId::WheelSpeed;
    m.dim = 4;
    for (int w = 0; w < 4; ++w)
      m.z[w] = wheel_speeds_[w] + gauss(rng_sensors_) * c.wheelspeed.sigma;
    if (corrupt(m, c.wheelspeed.sigma)) out.push_back(m);
  }
  if (due(SensorId::Steering, c.steering.rate)) {
    Measurement m;
    m.t = time_;
    m.id = SensorId::Steering;
    m.dim = 1;
    m.z[0] = delta_ + gauss(rng_sensors_) * c.steering.sigma;
    if (corrupt(m, c.steering.sigma)) out.push_back(m);
  }
  return out;
}

SimRecord Simulator::record() const {
  SimRecord r;
  r.t = time_;
  r.state = state_;
  r.delta = delta_;
  r.D = D_;
  r.ax = ax_;
  r.ay = ay_;
  return r;
}

}  // namespace race
