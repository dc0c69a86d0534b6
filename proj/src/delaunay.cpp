#include "race/delaunay.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

namespace race {

namespace {

double cross(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) -
         (a.y() - o.y()) * (b.x() - o.x());
}

}  // namespace

bool in_circumcircle(const Vec2& a, const Vec2& b, const Vec2& c,
                     const Vec2& q) {
  // assumes (a, b, c) counter-clockwise
  const double ax = a.x() - q.x(), ay = a.y() - q.y();
  const double bx = b.x() - q.x(), by = b.y() - q.y();
  const double cx = c.x() - q.x(), cy = c.y() - q.y();
  const double det =
      (ax * ax + ay * ay) * (bx * cy - cx * by) -
      (bx * bx + by * by) * (ax * cy - cx * ay) +
      (cx * cx + cy * cy) * (ax * by - bx * ay);
  return det > 1e-12;
}

std::vector<Triangle> delaunay_triangulate(const std::vector<Vec2>& points) {
  const int n = static_cast<int>(points.size());
  if (n < 3) throw std::invalid_argument("delaunay: need at least 3 points");

  bool collinear = true;
  for (int i = 2; i < n && collinear; ++i)
    if (std::abs(cross(points[0], points[1], points[i])) > 1e-9)
      collinear = false;
  if (collinear) throw std::invalid_argument("delaunay: collinear input");

  // bounding super-triangle
  Vec2 lo = points[0], hi = points[0];
  for (const Vec2& p : points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const Vec2 mid = 0.5 * (lo + hi);
  const double span = std::max((hi - lo).maxCoeff(), 1.0) * 64.0;

  std::vector<Vec2> verts = points;
  verts.push_back(mid + Vec2(-span, -span * 0.5));
  verts.push_back(mid + Vec2(span, -span * 0.5));
  verts.push_back(mid + Vec2(0.0, span));

  auto make_ccw = [&](Triangle t) {
    if (cross(verts[t.a], verts[t.b], verts[t.c]) < 0.0) std::swap(t.b, t.c);
    return t;
  };

  std::vector<Triangle> tris{make_ccw({n, n + 1, n + 2})};

  for (int ip = 0; ip < n; ++ip) {
    const Vec2& p = verts[ip];
    std::vector<Triangle> keep;
    std::map<std::pair<int, int>, int> boundary;  // edge -> seen count
    auto add_edge = [&](int u, int v) {
      auto key = std::minmax(u, v);
      boundary[{key.first, key.second}]++;
    };
    for (const Triangle& t : tris) {
      if (in_circumcircle(verts[t.a], verts[t.b], verts[t.c], p)) {
        add_edge(t.a, t.b);
        add_edge(t.b, t.c);
        add_edge(t.c, t.a);
      } else {
        keep.push_back(t);
      }
    }
    // re-triangulate the cavity: edges seen exactly once form its hull
    for (const auto& [edge, count] : boundary) {
      if (count != 1) continue;
      if (std::abs(cross(verts[edge.first], verts[edge.second], p)) < 1e-12)
        continue;
      keep.push_back(make_ccw({edge.first, edge.second, ip}));
    }
    tris = std::move(keep);
  }

  std::vector<Triangle> out;
  for (const Triangle& t : tris)
    if (t.a < n && t.b < n && t.c < n) out.push_back(t);
  return out;
}

}  // namespace race
