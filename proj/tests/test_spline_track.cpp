#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "race/track.hpp"

using namespace race;

TEST_CASE("periodic spline reproduces a circle") {
  std::vector<Vec2> pts;
  const double R = 20.0;
  for (int i = 0; i < 60; ++i) {
    const double a = 2.0 * M_PI * i / 60;
    pts.push_back({R * std::cos(a), R * std::sin(a)});
  }
  PeriodicSpline2 sp = PeriodicSpline2::fit(pts);

  CHECK(sp.length() == doctest::Approx(2.0 * M_PI * R).epsilon(1e-3));
  for (double th = 0.0; th < sp.length(); th += 0.173) {
    CHECK(sp.position(th).norm() == doctest::Approx(R).epsilon(5e-4));
    // arc-length parametrization: unit speed within 1%
    CHECK(sp.derivative(th).norm() == doctest::Approx(1.0).epsilon(0.01));
    CHECK(sp.curvature(th) == doctest::Approx(1.0 / R).epsilon(0.02));
  }

  // periodicity is exact
  const Vec2 a = sp.position(1.234);
  const Vec2 b = sp.position(1.234 + sp.length());
  CHECK((a - b).norm() < 1e-12);

  // projection
  const double th = sp.project(Vec2(2.0 * R, 0.0));
  CHECK((sp.position(th) - Vec2(R, 0.0)).norm() < 1e-4);
}

TEST_CASE("circle track is an annulus of constant width") {
  TrackModel t = circle_track(15.0, 3.5, 4.0);
  for (const Vec2& c : t.cones_left)
    CHECK(c.norm() == doctest::Approx(15.0 - 1.75).epsilon(2e-3));
  for (const Vec2& c : t.cones_right)
    CHECK(c.norm() == doctest::Approx(15.0 + 1.75).epsilon(2e-3));
  CHECK(validate_track(t).empty());
}

namespace {

// independent rule walker used as the generation oracle
std::string walk_rules(const TrackModel& t) {
  auto gap_ok = [](const std::vector<Vec2>& cones) {
    for (size_t i = 0; i < cones.size(); ++i) {
      const double d = (cones[(i + 1) % cones.size()] - cones[i]).norm();
      if (d > 5.0) return false;
    }
    return true;
  };
  if (!gap_ok(t.cones_left)) return std::string("left gap");
  if (!gap_ok(t.cones_right)) return std::string("right gap");
  if (t.length() > 500.0) return std::string("length");
  for (const Vec2& l : t.cones_left) {
    double best = 1e18;
    for (const Vec2& r : t.cones_right) best = std::min(best, (r - l).norm());
    if (best < 2.9) return std::string("width");
  }
  return std::string{};
}

}  // namespace

TEST_CASE("generated track passes the rule walker and is deterministic") {
  TrackSpec spec;
  spec.length = 260.0;
  TrackModel a = generate_track(42, spec);
  TrackModel b = generate_track(42, spec);

  REQUIRE(a.cones_left.size() == b.cones_left.size());
  for (size_t i = 0; i < a.cones_left.size(); ++i) {
    CHECK(a.cones_left[i].x() == b.cones_left[i].x());
    CHECK(a.cones_left[i].y() == b.cones_left[i].y());
  }
  CHECK(walk_rules(a).empty());
  CHECK(validate_track(a).empty());
  CHECK(a.length() < 500.0);
  CHECK(a.length() > 150.0);

  TrackModel c = generate_track(43, spec);
  CHECK(a.cones_left[0] != c.cones_left[0]);
}

TEST_CASE("infeasible spec fails after bounded retries") {
  TrackSpec spec;
  spec.length = 60.0;
  spec.min_radius = 30.0;  // a 60 m loop cannot keep a 30 m radius
  spec.max_retries = 8;
  CHECK_THROWS_AS(generate_track(1, spec), std::runtime_error);
}

TEST_CASE("track file round trip") {
  TrackModel t = generate_track(7, {});
  const std::string path = "/tmp/race_test_roundtrip.track.yaml";
  save_track(t, path);
  TrackModel u = load_track(path);
  REQUIRE(u.cones_left.size() == t.cones_left.size());
  REQUIRE(u.cones_right.size() == t.cones_right.size());
  CHECK(u.start_pose.x == doctest::Approx(t.start_pose.x));
  CHECK(u.start_pose.phi == doctest::Approx(t.start_pose.phi));
  // rebuilt centerline stays close to the original
  CHECK(u.length() == doctest::Approx(t.length()).epsilon(0.03));
  for (double th = 0.0; th < u.length(); th += 5.0) {
    const Vec2 p = u.centerline.position(th);
    const double th0 = t.centerline.project(p);
    CHECK((t.centerline.position(th0) - p).norm() < 0.5);
  }
  std::filesystem::remove(path);
}
