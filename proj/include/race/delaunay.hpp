#pragma once

#include <vector>

#include "race/common.hpp"

namespace race {

struct Triangle {
  int a = -1, b = -1, c = -1;  // vertex indices, counter-clockwise
};

// Bowyer-Watson Delaunay triangulation. Throws std::invalid_argument for
// fewer than 3 points or an all-collinear input.
std::vector<Triangle> delaunay_triangulate(const std::vector<Vec2>& points);

// true when q lies strictly inside the circumcircle of (a, b, c)
bool in_circumcircle(const Vec2& a, const Vec2& b, const Vec2& c,
                     const Vec2& q);

}  // namespace race
