#pragma once

#include <array>
#include <deque>
#include <optional>

#include "race/simulator.hpp"
#include "race/vehicle.hpp"

namespace race {

// 9-state velocity filter: x = [vx, vy, r, ax, ay, sr_FL, sr_FR, sr_RL, sr_RR]
using EkfVec = Eigen::Matrix<double, 9, 1>;
using EkfMat = Eigen::Matrix<double, 9, 9>;

struct EstimatorState {
  EkfVec x = EkfVec::Zero();
  EkfMat P = EkfMat::Identity();
  double t = 0.0;

  double vx() const { return x[0]; }
  double vy() const { return x[1]; }
  double r() const { return x[2]; }
  double ax() const { return x[3]; }
  double ay() const { return x[4]; }
  Eigen::Vector4d sr() const { return x.segment<4>(5); }
};

struct EstimatorInputs {
  std::array<double, 4> motor_torques{0, 0, 0, 0};  // [N m]
  double delta = 0.0;                               // steering [rad]
};

struct ProcessParams {
  double C_sigma = 22000.0;   // longitudinal tire stiffness [N]
  double I_w = 0.35;          // wheel inertia [kg m^2]
  double C_alpha_front = 24000.0;  // linear cornering stiffness [N/rad]
  double C_alpha_rear = 28000.0;
  // process noise spectral densities
  double n_v = 0.3;
  double n_r = 0.6;
  double n_a = 4.0;
  double n_sr = 0.8;
};

struct EstimatorConfig {
  ProcessParams process;
  double rate = 200.0;           // publish/predict rate [Hz]
  double chi2_quantile = 0.99;   // outlier gate, per measurement dimension
  double zsmu_sigma = 0.05;      // pseudo-measurement noise on sr
  double zsmu_vx_threshold = 6.0;  // [m/s]
  double zsmu_rate = 50.0;       // [Hz]
  double stale_window = 0.05;    // [s], older measurements are dropped
  double health_timeout = 0.25;  // [s] without data marks a sensor lost
  // variance-based drift isolation
  double drift_k = 0.05;
  double drift_window = 0.5;     // [s]
  int drift_consecutive = 3;
  double drift_hold = 5.0;       // [s] isolation latch
};

enum class EstimatorMode : int { FullDynamic = 0, ZsmuAugmented = 1, Dead = 2 };

struct SensorHealth {
  bool gss = true;
  bool imu = true;
  bool gnss = true;
  bool wss = true;
};

// Table-driven availability policy: dead only when every class is lost;
// the full dynamic model needs the IMU, the wheel speeds and at least one
// of the two velocity sensors; anything else runs with the zero-slip
// pseudo-measurement.
EstimatorMode sensor_availability_policy(const SensorHealth& health);

// chi-square gate on a measurement innovation; S must be SPD
bool chi_square_gate(const Eigen::VectorXd& innovation,
                     const Eigen::MatrixXd& S, double threshold);

// quantile of the chi-square distribution with k dof (bisected exact CDF)
double chi2_quantile(double p, int k);

// ---------------------------------------------------------------------------
// Core EKF steps, free functions so the oracles can drive them directly.

EstimatorState ekf_predict(const EstimatorState& s, const EstimatorInputs& in,
                           double dt, const ProcessParams& pp,
                           const VehicleParams& vp);

struct UpdateResult {
  EstimatorState state;
  bool accepted = true;
  double mahalanobis2 = 0.0;
};

UpdateResult ekf_update_velocity(const EstimatorState& s, const Vec2& z,
                                 const SensorMount& mount, double gate);
UpdateResult ekf_update_imu_acc(const EstimatorState& s, const Vec2& z,
                                double sigma, double gate);
UpdateResult ekf_update_gyro(const EstimatorState& s, double z, double sigma,
                             double gate);
UpdateResult ekf_update_wheelspeed(const EstimatorState& s,
                                   const Eigen::Vector4d& z, double delta,
                                   double sigma, const VehicleParams& vp,
                                   double gate);
EstimatorState ekf_zsmu(const EstimatorState& s, double sigma);

// wheel hub longitudinal velocities [FL, FR, RL, RR] for (vx, vy, r, delta)
Eigen::Vector4d wheel_hub_velocities(double vx, double vy, double r,
                                     double delta, const VehicleParams& vp);

// ---------------------------------------------------------------------------

// Windowed cross-sensor variance test. Sensors measuring the same state
// variable feed their current value; when the spread statistic
// sum((z_i - mean)^2) stays above k, the largest contributor is isolated
// for a hold time.
class DriftDetector {
 public:
  DriftDetector(double k, double window, int consecutive, double hold)
      : k_(k), window_(window), consecutive_(consecutive), hold_(hold) {}

  void add(SensorId id, double t, double value);
  // returns a sensor to isolate, at most once per call
  std::optional<SensorId> check(double t);
  bool isolated(SensorId id, double t) const;

 private:
  struct Entry {
    double t = -1e18;
    double value = 0.0;
  };
  double k_, window_;
  int consecutive_;
  double hold_;
  int streak_ = 0;
  std::array<Entry, kNumSensorIds> latest_{};
  std::array<double, kNumSensorIds> isolated_until_{};
};

// ---------------------------------------------------------------------------

class VelocityEstimator {
 public:
  VelocityEstimator(const VehicleParams& vp, const EstimatorConfig& cfg,
                    const SensorSuiteConfig& suite);

  void set_inputs(const EstimatorInputs& in) { inputs_ = in; }
  void predict_to(double t);
  void process(const Measurement& m);

  const EstimatorState& state() const { return state_; }
  EstimatorMode mode() const { return mode_; }
  SensorHealth health(double t) const;
  bool faulted() const { return faulted_; }
  double steering() const { return steering_; }

 private:
  void refresh_mode(double t);

  VehicleParams vp_;
  EstimatorConfig cfg_;
  SensorSuiteConfig suite_;
  EstimatorState state_;
  EstimatorInputs inputs_;
  DriftDetector drift_;
  EstimatorMode mode_ = EstimatorMode::FullDynamic;
  bool faulted_ = false;
  double steering_ = 0.0;
  double next_zsmu_ = 0.0;
  std::array<double, kNumSensorIds> last_seen_{};
};

// Integrates published velocities into a body-frame pose delta; feeds the
// mapping module as odometry.
class OdometryIntegrator {
 public:
  explicit OdometryIntegrator(double noise_xy = 0.02, double noise_phi = 0.01)
      : noise_xy_(noise_xy), noise_phi_(noise_phi) {
    reset();
  }

  void add(double vx, double vy, double r, double dt);
  Pose2 delta() const { return delta_; }
  Mat3 covariance() const { return cov_; }
  double distance() const { return distance_; }
  void reset();

 private:
  Pose2 delta_;
  Mat3 cov_ = Mat3::Zero();
  double distance_ = 0.0;
  double noise_xy_, noise_phi_;
};

}  // namespace race
