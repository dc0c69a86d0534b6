#pragma once

#include <optional>
#include <string>
#include <vector>

#include "race/simulator.hpp"

namespace race {

struct Landmark {
  Vec2 mu{0, 0};
  Mat2 Sigma = Mat2::Identity();
  Vec3 color_counts{0, 0, 0};  // blue, yellow, orange Dirichlet counts
  int n_s = 0;                 // seen
  int n_m = 0;                 // missed while in FoV

  double confidence() const {
    return n_s + n_m == 0 ? 0.0 : static_cast<double>(n_s) / (n_s + n_m);
  }
  // posterior color probabilities under a uniform Dirichlet prior
  Vec3 color_posterior() const {
    const Vec3 post = color_counts + Vec3::Ones();
    return post / post.sum();
  }
  // argmax color, -1 while no observation carried color
  int color_mode() const {
    if (color_counts.sum() <= 0.0) return -1;
    int idx = 0;
    color_counts.maxCoeff(&idx);
    return idx;
  }
};

struct Particle {
  Pose2 pose;
  double weight = 1.0;
  std::vector<Landmark> map;
};

struct Odometry {
  Pose2 delta;              // body-frame motion since the last step
  Mat3 cov = Mat3::Zero();  // covariance of the delta
};

struct SlamConfig {
  int particle_count = 40;
  double new_landmark_likelihood = 0.2;  // threshold l on the max likelihood
  double association_gate = 9.0;         // Mahalanobis^2 hard gate
  double w_b = 0.8;                      // missed-landmark penalty
  double w_c = 0.7;                      // color-mismatch penalty
  double resample_ratio = 0.6;
  double confidence_gate = 0.8;   // batch gating needs landmarks above this
  double consensus_min = 0.5;     // accepted fraction of matching obs
  double color_increment = 1.0;   // per-sensor count increment scale
  double sensor_range = 10.0;     // FoV replica used for missed counters
  double sensor_fov = 3.49;
  double closure_spread_max = 0.8;   // [m]
  double closure_heading_max = 0.5;  // [rad]
  double closure_dist_max = 4.0;     // [m]
  double closure_min_path = 50.0;    // [m] travelled before closure counts
  double prune_confidence = 0.2;
  int prune_min_obs = 10;
  double min_landmark_sightings = 2;  // export gate
};

// ---------------------------------------------------------------------------
// free functions exercised directly by the tests

struct AssociationResult {
  int index = -1;  // -1: new landmark
  double likelihood = 0.0;
  double mahalanobis2 = 0.0;
};

// Nearest-neighbour association of a car-frame observation against the
// particle map; below-threshold likelihood starts a new landmark.
AssociationResult associate(const Particle& particle,
                            const ConeObservation& obs,
                            const SlamConfig& cfg);

struct PoseBelief {
  Pose2 mean;
  Mat3 cov = Mat3::Zero();
};

struct MatchedObservation {
  int landmark = -1;
  ConeObservation obs;
};

// Iterative EKF refinement of the pose proposal with the matched
// observations.
PoseBelief refine_proposal(const PoseBelief& prior,
                           const std::vector<MatchedObservation>& matches,
                           const std::vector<Landmark>& map);

// Importance weight of one matched observation: Gaussian in the innovation
// with covariance R + G_s Sigma_pose G_s^T + G_lm Sigma_lm G_lm^T.
double match_weight(const Pose2& pose, const PoseBelief& prior,
                    const Landmark& lm, const ConeObservation& obs);

double effective_sample_size(const std::vector<Particle>& particles);

// Systematic resampling when N_eff < ratio * N; weights reset uniform.
bool resample_if_needed(std::vector<Particle>& particles, double ratio,
                        Rng& rng);

bool landmark_in_fov(const Pose2& pose, const Vec2& mu, double range,
                     double fov);

// ---------------------------------------------------------------------------

class ConeSlam {
 public:
  ConeSlam(const SlamConfig& cfg, uint64_t seed);

  // mapping-mode update; observations must already be delay-compensated
  void step(const std::vector<ConeObservation>& observations,
            const Odometry& odom);

  // localization-mode update against the frozen map
  void localize(const std::vector<ConeObservation>& observations,
                const Odometry& odom);

  // batch-level failure gate against the best map
  bool gate_sensor_batch(const std::vector<ConeObservation>& observations,
                         const Pose2& pose_hint) const;

  bool detect_lap_closure(const Pose2& start_pose) const;

  // picks the best map, prunes dubious landmarks, switches to localization
  void freeze_map();

  Pose2 pose_mean() const;
  const Particle& best_particle() const;
  const std::vector<Particle>& particles() const { return particles_; }
  const std::vector<Landmark>& frozen_map() const { return frozen_map_; }
  bool frozen() const { return frozen_; }
  double path_length() const { return path_length_; }
  const SlamConfig& config() const { return cfg_; }

 private:
  SlamConfig cfg_;
  std::vector<Particle> particles_;
  std::vector<Landmark> frozen_map_;
  bool frozen_ = false;
  double path_length_ = 0.0;
  Rng rng_;
};

// Map export in the track-file schema plus per-landmark covariance and
// color probabilities.
void save_map(const std::vector<Landmark>& map, const Pose2& start_pose,
              const std::string& path, int min_sightings = 2);

// Converts a decided SLAM map into boundary cone lists (by color mode).
TrackModel map_to_track(const std::vector<Landmark>& map,
                        const Pose2& start_pose, int min_sightings = 2);

}  // namespace race
