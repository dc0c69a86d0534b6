#pragma once

#include <optional>
#include <string>
#include <vector>

#include "race/common.hpp"
#include "race/spline.hpp"

namespace race {

// Generator knobs. Bounds follow the competition rules: closed circuit up to
// 500 m, at least 3 m wide, same-side cones at most 5 m apart.
struct TrackSpec {
  double length = 300.0;       // target centerline length [m]
  double width = 3.5;          // corridor width [m]
  double cone_spacing = 4.0;   // desired same-side spacing [m]
  double min_radius = 6.0;     // minimum centerline radius [m]
  int control_points = 14;
  double radial_jitter = 0.30; // relative radius perturbation
  int max_retries = 40;
};

struct TrackModel {
  std::vector<Vec2> cones_left;    // blue boundary
  std::vector<Vec2> cones_right;   // yellow boundary
  std::vector<Vec2> cones_orange;  // start zone
  Pose2 start_pose;
  Vec2 start_line_a{0, 0}, start_line_b{0, 0};
  PeriodicSpline2 centerline;  // theta in [0, length)

  // distance from centerline to the nearest boundary cone, sampled on a
  // uniform theta grid (1 m)
  std::vector<double> half_width_grid;

  double length() const { return centerline.length(); }
  double half_width(double theta) const;
};

// Random rule-compliant closed track. Deterministic in (seed, spec). Throws
// std::runtime_error when no feasible layout is found within the retry
// budget.
TrackModel generate_track(uint64_t seed, const TrackSpec& spec = {});

// Constant-curvature annulus, mostly a test fixture.
TrackModel circle_track(double radius, double width = 3.5,
                        double cone_spacing = 4.0);

// Empty string when the track satisfies the rule set, else the first
// violated rule.
std::string validate_track(const TrackModel& track);

// Orders boundary cones into a closed centerline spline (midpoints of
// left/right pairings). Used when loading track files and when fitting the
// racing reference to a SLAM map. Returns nullopt when no closed loop can be
// built.
std::optional<PeriodicSpline2> build_centerline(
    const std::vector<Vec2>& left, const std::vector<Vec2>& right,
    const Pose2& start_hint);

// .track.yaml schema: left/right/orange as [[x, y], ...], start_pose as
// [X, Y, phi]; meters and radians.
TrackModel load_track(const std::string& path);
void save_track(const TrackModel& track, const std::string& path);

// Recomputes centerline, start line and half-width grid from the cone lists
// and start pose.
void finalize_track(TrackModel& track);

}  // namespace race
