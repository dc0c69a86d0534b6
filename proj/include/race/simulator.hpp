#pragma once

#include <array>
#include <string>
#include <vector>

#include "race/track.hpp"
#include "race/vehicle.hpp"

namespace race {

enum class ConeColor : int { Blue = 0, Yellow = 1, Orange = 2, Unknown = 3 };

using ColorProbs = Eigen::Vector4d;  // blue, yellow, orange, unknown

struct ConeObservation {
  Vec2 position{0, 0};  // car frame [m]
  Mat2 covariance = Mat2::Identity();
  ColorProbs color_probs{0, 0, 0, 1};
  double timestamp = 0.0;
};

struct SensorModel {
  double range = 10.0;          // [m]
  double fov = 3.49;            // full aperture [rad], centered on +x
  double position_sigma = 0.1;  // [m] at zero distance
  double sigma_range_growth = 0.01;  // extra sigma per meter of distance
  // row = true color, column = reported color (blue, yellow, orange, unknown)
  Eigen::Matrix4d color_confusion = Eigen::Matrix4d::Identity();
  double color_confidence = 1.0;   // mass put on the reported label
  double false_positive_rate = 0.0;  // expected spurious cones per scan
  double drop_rate = 0.0;
  double latency = 0.0;  // [s]
  double rate = 10.0;    // [Hz]

  static SensorModel default_noise();
};

// Cones within range and field of view, minus drops, plus false positives.
// Deterministic given the rng state.
std::vector<ConeObservation> observe(const Pose2& truth_pose,
                                     const TrackModel& track,
                                     const SensorModel& sensor, Rng& rng,
                                     double timestamp = 0.0);

// ---------------------------------------------------------------------------
// velocity-sensor suite

enum class SensorId : int {
  Gss = 0,
  GnssVel = 1,
  ImuAcc = 2,
  ImuGyro = 3,
  WheelSpeed = 4,
  Steering = 5
};
constexpr int kNumSensorIds = 6;

struct SensorMount {
  Vec2 position{0, 0};  // car frame [m]
  double theta = 0.0;   // orientation in car frame [rad]
  double sigma = 0.01;  // per-component noise
  double rate = 100.0;  // [Hz]
};

struct SensorSuiteConfig {
  SensorMount gss{{-0.5, 0.0}, 0.0, 0.05, 100.0};
  SensorMount gnss{{0.3, 0.0}, 0.0, 0.12, 20.0};
  SensorMount imu{{0.0, 0.0}, 0.0, 0.05, 200.0};  // sigma for accel rows
  double gyro_sigma = 0.01;
  SensorMount wheelspeed{{0.0, 0.0}, 0.0, 0.4, 100.0};  // [rad/s]
  SensorMount steering{{0.0, 0.0}, 0.0, 0.002, 100.0};
  double C_sigma = 22000.0;  // linear traction stiffness used for truth slip [N]
};

enum class FailureKind : int { Spike = 0, Drift = 1, Null = 2, WheelSlip = 3 };

struct FailureEvent {
  SensorId sensor = SensorId::Gss;
  FailureKind kind = FailureKind::Null;
  double t_start = 0.0;
  double t_end = 0.0;      // spikes use t_start only
  double magnitude = 0.0;  // spike: sigma multiples; drift: units/s^1 ramp
                           // slope; wheel slip: added slip ratio
  int wheel = -1;          // WheelSlip: 0..3 = FL,FR,RL,RR; -1 = rear axle
};

struct Measurement {
  double t = 0.0;
  SensorId id = SensorId::Gss;
  Eigen::Matrix<double, 4, 1> z = Eigen::Matrix<double, 4, 1>::Zero();
  int dim = 0;
};

// ---------------------------------------------------------------------------

struct SimRecord {
  double t = 0.0;
  VehicleState state;
  double delta = 0.0;
  double D = 0.0;
  double ax = 0.0;  // body-frame acceleration at CoG
  double ay = 0.0;
};

struct SimLog {
  std::vector<SimRecord> records;
  void append(const SimRecord& r) { records.push_back(r); }
};

// header + `t, X, Y, phi, vx, vy, r, delta, D` per line
void save_sim_log(const SimLog& log, const std::string& path);
SimLog load_sim_log(const std::string& path);

struct LapStats {
  int lap = 0;
  double t_start = 0.0;
  double t_end = 0.0;
  double time = 0.0;
  double max_alat = 0.0;
  int departures = 0;
};

struct LapReport {
  std::vector<LapStats> laps;
  int departures_total = 0;
  bool pass = true;
};

LapReport lap_accounting(const SimLog& log, const TrackModel& track,
                         double departure_tolerance = 0.3);

// ---------------------------------------------------------------------------
// Ground-truth vehicle simulation: blended bicycle model on a flat plane
// with constant friction, plus simple traction slip for the wheel speeds.

struct SimulatorConfig {
  double dt = 0.001;  // [s], at least 10x the control rate
  bool clamp_vx = true;
  // optional plant mismatch: +-fraction applied to m, DF/DR, Cm
  double param_perturbation = 0.0;
  SensorSuiteConfig suite;
};

class Simulator {
 public:
  Simulator(const VehicleParams& params, const TrackModel& track,
            const SimulatorConfig& cfg, uint64_t seed);

  // advances ground truth by cfg.dt with first-order steering-rate limits
  void step(const DriverInput& cmd);

  const VehicleState& state() const { return state_; }
  double time() const { return time_; }
  double ax() const { return ax_; }
  double ay() const { return ay_; }
  DriverInput applied_input() const { return {delta_, D_}; }
  const std::array<double, 4>& wheel_speeds() const { return wheel_speeds_; }
  const std::array<double, 4>& slip_ratios() const { return slip_ratios_; }
  std::array<double, 4> motor_torques() const;
  const VehicleParams& plant_params() const { return plant_; }

  void set_failure_script(const std::vector<FailureEvent>& script) {
    script_ = script;
  }

  // cone observations from the current true pose
  std::vector<ConeObservation> observe_cones(const SensorModel& sensor);

  // measurements of every suite sensor due in (t_prev, t]; applies the
  // failure script
  std::vector<Measurement> poll_sensors();

  SimRecord record() const;

 private:
  bool failure_active(SensorId id, FailureKind kind, double t,
                      const FailureEvent** ev = nullptr) const;
  void update_wheels();

  VehicleParams plant_;
  TrackModel track_;
  SimulatorConfig cfg_;
  VehicleState state_;
  double time_ = 0.0;
  double delta_ = 0.0;
  double D_ = 0.0;
  double ax_ = 0.0, ay_ = 0.0;
  std::array<double, 4> wheel_speeds_{0, 0, 0, 0};
  std::array<double, 4> slip_ratios_{0, 0, 0, 0};
  std::array<double, kNumSensorIds> next_sample_{};
  std::vector<FailureEvent> script_;
  Rng rng_obs_;
  Rng rng_sensors_;
};

}  // namespace race
