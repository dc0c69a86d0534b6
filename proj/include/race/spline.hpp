#pragma once

#include <vector>

#include "race/common.hpp"

namespace race {

// Closed planar cubic spline, arc-length parametrized.
//
// Fitting runs in two passes: a C1 cubic Hermite loop through the input
// points (chord-length parameter, central-difference tangents), then a
// resample at ~uniform arc spacing so that |dP/dtheta| stays within ~1% of 1.
class PeriodicSpline2 {
 public:
  PeriodicSpline2() = default;

  // points: ordered loop, not repeating the first point at the end.
  // Throws std::invalid_argument for fewer than 3 points.
  static PeriodicSpline2 fit(const std::vector<Vec2>& points,
                             double resample_spacing = 1.0);

  double length() const { return length_; }
  bool valid() const { return !knots_.empty(); }

  Vec2 position(double theta) const;
  Vec2 derivative(double theta) const;
  Vec2 second_derivative(double theta) const;
  double tangent_angle(double theta) const;
  double curvature(double theta) const;

  // Arc length of the point closest to p. A non-negative hint restricts the
  // search to a window around it (receding-horizon queries).
  double project(const Vec2& p, double hint = -1.0,
                 double window = -1.0) const;

  const std::vector<Vec2>& knots() const { return knots_; }

 private:
  struct Segment {
    // P(s) = a + b s + c s^2 + d s^3, s in [0, h]
    Vec2 a, b, c, d;
    double h = 0.0;
    double theta0 = 0.0;
  };

  static PeriodicSpline2 interpolate(const std::vector<Vec2>& pts);
  int segment_index(double& theta) const;

  std::vector<Vec2> knots_;
  std::vector<Segment> segs_;
  double length_ = 0.0;
};

}  // namespace race
