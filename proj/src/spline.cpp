#include "race/spline.hpp"

#include <algorithm>
#include <stdexcept>

namespace race {

namespace {

// 5-point Gauss-Legendre nodes/weights on [0, 1]
constexpr double kGx[5] = {0.046910077030668, 0.230765344947158, 0.5,
                           0.769234655052841, 0.953089922969332};
constexpr double kGw[5] = {0.118463442528095, 0.239314335249683,
                           0.284444444444444, 0.239314335249683,
                           0.118463442528095};

}  // namespace

PeriodicSpline2 PeriodicSpline2::interpolate(const std::vector<Vec2>& pts) {
  const int n = static_cast<int>(pts.size());
  std::vector<double> chord(n);
  for (int i = 0; i < n; ++i)
    chord[i] = (pts[(i + 1) % n] - pts[i]).norm();

  // central-difference tangents scaled to the local chord parameter
  std::vector<Vec2> tangents(n);
  for (int i = 0; i < n; ++i) {
    const Vec2& prev = pts[(i + n - 1) % n];
    const Vec2& next = pts[(i + 1) % n];
    const double span = chord[(i + n - 1) % n] + chord[i];
    tangents[i] = (next - prev) / span;
  }

  PeriodicSpline2 sp;
  sp.knots_ = pts;
  sp.segs_.resize(n);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const double h = chord[i];
    const Vec2& p0 = pts[i];
    const Vec2& p1 = pts[(i + 1) % n];
    const Vec2 m0 = tangents[i];
    const Vec2 m1 = tangents[(i + 1) % n];
    Segment& s = sp.segs_[i];
    s.a = p0;
    s.b = m0;
    s.c = (3.0 * (p1 - p0) / (h * h)) - (2.0 * m0 + m1) / h;
    s.d = (2.0 * (p0 - p1) / (h * h * h)) + (m0 + m1) / (h * h);
    s.h = h;
    s.theta0 = acc;
    acc += h;
  }
  sp.length_ = acc;
  return sp;
}

PeriodicSpline2 PeriodicSpline2::fit(const std::vector<Vec2>& points,
                                     double resample_spacing) {
  if (points.size() < 3)
    throw std::invalid_argument("PeriodicSpline2: need at least 3 points");

  // drop consecutive duplicates, they break the chord parametrization
  std::vector<Vec2> pts;
  pts.reserve(points.size());
  for (const Vec2& p : points)
    if (pts.empty() || (p - pts.back()).norm() > 1e-9) pts.push_back(p);
  if (pts.size() > 1 && (pts.front() - pts.back()).norm() < 1e-9)
    pts.pop_back();
  if (pts.size() < 3)
    throw std::invalid_argument("PeriodicSpline2: degenerate point loop");

  PeriodicSpline2 sp = interpolate(pts);

  for (int pass = 0; pass < 2; ++pass) {
    // true arc length per segment by quadrature
    std::vector<double> seg_len(sp.segs_.size());
    double total = 0.0;
    for (size_t i = 0; i < sp.segs_.size(); ++i) {
      const Segment& s = sp.segs_[i];
      double len = 0.0;
      for (int g = 0; g < 5; ++g) {
        const double t = kGx[g] * s.h;
        len += kGw[g] * (s.b + 2.0 * t * s.c + 3.0 * t * t * s.d).norm();
      }
      seg_len[i] = len * s.h;
      total += seg_len[i];
    }

    const int m = std::max<int>(8, static_cast<int>(total / resample_spacing));
    const double step = total / m;
    std::vector<Vec2> resampled;
    resampled.reserve(m);
    double want = 0.0, done = 0.0;
    size_t i = 0;
    for (int k = 0; k < m; ++k, want = k * step) {
      while (i < sp.segs_.size() - 1 && done + seg_len[i] < want) {
        done += seg_len[i];
        ++i;
      }
      // walk within segment i by local quadrature steps
      const Segment& s = sp.segs_[i];
      double remain = want - done;
      double t = 0.0;
      const int substeps = 24;
      const double dt = s.h / substeps;
      while (remain > 0.0 && t < s.h) {
        const double speed =
            (s.b + 2.0 * t * s.c + 3.0 * t * t * s.d).norm();
        const double adv = speed * dt;
        if (adv >= remain) {
          t += dt * remain / std::max(adv, 1e-12);
          break;
        }
        remain -= adv;
        t += dt;
      }
      t = std::min(t, s.h);
      resampled.push_back(s.a + t * (s.b + t * (s.c + t * s.d)));
    }
    sp = interpolate(resampled);
  }
  return sp;
}

int PeriodicSpline2::segment_index(double& theta) const {
  theta = std::fmod(theta, length_);
  if (theta < 0.0) theta += length_;
  int lo = 0, hi = static_cast<int>(segs_.size()) - 1;
  while (lo < hi) {
    const int mid = (lo + hi + 1) / 2;
    if (segs_[mid].theta0 <= theta)
      lo = mid;
    else
      hi = mid - 1;
  }
  return lo;
}

Vec2 PeriodicSpline2::position(double theta) const {
  const int i = segment_index(theta);
  const Segment& s = segs_[i];
  const double t = std::min(theta - s.theta0, s.h);
  return s.a + t * (s.b + t * (s.c + t * s.d));
}

Vec2 PeriodicSpline2::derivative(double theta) const {
  const int i = segment_index(theta);
  const Segment& s = segs_[i];
  const double t = std::min(theta - s.theta0, s.h);
  return s.b + 2.0 * t * s.c + 3.0 * t * t * s.d;
}

Vec2 PeriodicSpline2::second_derivative(double theta) const {
  const int i = segment_index(theta);
  const Segment& s = segs_[i];
  const double t = std::min(theta - s.theta0, s.h);
  return 2.0 * s.c + 6.0 * t * s.d;
}

double PeriodicSpline2::tangent_angle(double theta) const {
  const Vec2 d = derivative(theta);
  return std::atan2(d.y(), d.x());
}

double PeriodicSpline2::curvature(double theta) const {
  const Vec2 d1 = derivative(theta);
  const Vec2 d2 = second_derivative(theta);
  const double speed = d1.norm();
  return (d1.x() * d2.y() - d1.y() * d2.x()) /
         std::max(speed * speed * speed, 1e-12);
}

double PeriodicSpline2::project(const Vec2& p, double hint,
                                double window) const {
  double best_theta = 0.0;
  double best_d2 = std::numeric_limits<double>::max();
  const double coarse = 0.5;
  if (hint >= 0.0 && window > 0.0) {
    for (double th = hint - window; th <= hint + window; th += coarse) {
      const double d2 = (position(th) - p).squaredNorm();
      if (d2 < best_d2) {
        best_d2 = d2;
        best_theta = th;
      }
    }
  } else {
    for (const Segment& s : segs_) {
      for (double t = 0.0; t < s.h; t += coarse) {
        const Vec2 q = s.a + t * (s.b + t * (s.c + t * s.d));
        const double d2 = (q - p).squaredNorm();
        if (d2 < best_d2) {
          best_d2 = d2;
          best_theta = s.theta0 + t;
        }
      }
    }
  }
  // Newton refinement on g(theta) = (P(theta) - p) . P'(theta)
  double th = best_theta;
  for (int it = 0; it < 12; ++it) {
    const Vec2 e = position(th) - p;
    const Vec2 d1 = derivative(th);
    const Vec2 d2 = second_derivative(th);
    const double g = e.dot(d1);
    const double gp = d1.squaredNorm() + e.dot(d2);
    if (std::abs(gp) < 1e-12) break;
    const double step = g / gp;
    th -= clamp(step, -coarse, coarse);
    if (std::abs(step) < 1e-10) break;
  }
  th = std::fmod(th, length_);
  if (th < 0.0) th += length_;
  return th;
}

}  // namespace race
