#pragma once

#include <optional>
#include <string>
#include <vector>

#include "race/delaunay.hpp"
#include "race/simulator.hpp"
#include "race/vehicle.hpp"

namespace race {

struct PlannerCone {
  Vec2 position{0, 0};  // map frame
  ColorProbs color_probs{0, 0, 0, 1};
};

// Delaunay triangulation over the cones plus the midpoint adjacency the
// path tree grows through.
struct MidpointGraph {
  std::vector<PlannerCone> cones;
  std::vector<Triangle> triangles;
  struct Midpoint {
    Vec2 position{0, 0};
    int cone_a = -1;
    int cone_b = -1;
  };
  std::vector<Midpoint> midpoints;
  std::vector<std::vector<int>> adjacency;  // midpoints sharing a triangle
};

MidpointGraph triangulate_cones(const std::vector<PlannerCone>& cones);

struct BoundaryCostWeights {
  // term weights
  double w_angle = 2.0;
  double w_width = 1.5;
  double w_spacing = 1.0;
  double w_color = 3.0;
  double w_length = 1.5;
  // per-term normalization scales
  double norm_angle = M_PI / 4.0;  // [rad]
  double norm_width = 1.0;         // [m]
  double norm_spacing = 1.0;       // [m]
  double norm_length = 5.0;        // [m]
  double sensor_range = 10.0;      // [m]
  int beam_width = 30;
  int max_depth = 12;
};

struct PathCost {
  double angle = 0.0;     // max heading change between segments
  double width = 0.0;     // std of crossed-edge widths
  double spacing = 0.0;   // pooled std of same-side cone spacing
  double color = 0.0;     // max wrong-color probability
  double length = 0.0;    // squared shortfall vs sensor range
  double total = 0.0;
};

struct CandidatePath {
  std::vector<int> midpoints;  // graph indices, in drive order
  std::vector<int> left_cones;
  std::vector<int> right_cones;
  PathCost cost;
};

// Table-style cost: each term normalized, squared, weighted, summed.
PathCost path_cost(const MidpointGraph& graph, const std::vector<int>& mids,
                   const Pose2& car_pose, const BoundaryCostWeights& w);

// Breadth-first beam growth through the midpoint adjacency, starting at the
// car.
std::vector<CandidatePath> grow_paths(const MidpointGraph& graph,
                                      const Pose2& car_pose,
                                      const BoundaryCostWeights& w);

// Lowest-cost candidate; ties broken toward longer paths, then by
// lexicographic midpoint order.
std::optional<CandidatePath> select_centerline(
    const MidpointGraph& graph, std::vector<CandidatePath> candidates);

// Pure-pursuit steering toward a lookahead point on the centerline plus a
// proportional speed loop.
DriverInput pure_pursuit(const std::vector<Vec2>& centerline,
                         const Pose2& pose, double current_vx,
                         double speed_setpoint, double wheelbase,
                         double lookahead);

struct PlannerConfig {
  BoundaryCostWeights weights;
  double lookahead = 4.0;       // [m]
  double slam_speed = 3.0;      // [m/s]
  double speed_gain = 0.5;
  double color_decided = 0.6;   // confidence needed to treat a cone colored
};

struct PlannerOutput {
  std::vector<Vec2> centerline;  // map frame, starts at the car
  std::vector<Vec2> left_bound;
  std::vector<Vec2> right_bound;
  DriverInput command;
  bool fresh = false;  // false when the planner held the previous path
};

// Receding-horizon centerline discovery with a pure-pursuit follower.
class BoundaryPlanner {
 public:
  explicit BoundaryPlanner(const PlannerConfig& cfg, double wheelbase)
      : cfg_(cfg), wheelbase_(wheelbase) {}

  PlannerOutput plan(const std::vector<PlannerCone>& cones, const Pose2& pose,
                     double current_vx);

  // per-cycle debug record (triangulation + candidates + choice)
  const std::string& last_debug() const { return debug_; }

 private:
  PlannerConfig cfg_;
  double wheelbase_;
  std::vector<Vec2> held_path_;
  std::string debug_;
};

}  // namespace race
