#include "race/track.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <fstream>
#include <stdexcept>

namespace race {

double TrackModel::half_width(double theta) const {
  if (half_width_grid.empty()) return 0.0;
  const int n = static_cast<int>(half_width_grid.size());
  double t = std::fmod(theta, length());
  if (t < 0.0) t += length();
  const double pos = t / length() * n;
  const int i = static_cast<int>(pos) % n;
  const double frac = pos - std::floor(pos);
  return (1.0 - frac) * half_width_grid[i] +
         frac * half_width_grid[(i + 1) % n];
}

namespace {

// walks an offset curve of the centerline and drops cones at ~spacing,
// denser through corners so the corridor stays rule-compliant
std::vector<Vec2> place_boundary_cones(const PeriodicSpline2& center,
                                       double offset, double spacing) {
  std::vector<Vec2> cones;
  const double step = 0.05;
  Vec2 prev;
  double acc = spacing;  // force a cone at theta = 0
  for (double th = 0.0; th < center.length(); th += step) {
    const Vec2 pos = center.position(th);
    const Vec2 tan = center.derivative(th).normalized();
    const Vec2 normal(-tan.y(), tan.x());  // left of travel direction
    const Vec2 q = pos + offset * normal;
    if (!cones.empty() || th > 0.0) acc += (q - prev).norm();
    prev = q;
    const double kappa = std::abs(center.curvature(th));
    const double local = clamp(spacing * (1.0 - 3.0 * kappa), 1.5, spacing);
    if (acc >= local) {
      cones.push_back(q);
      acc = 0.0;
    }
  }
  // keep the closing gap legal as well
  if (cones.size() > 1 && (cones.front() - cones.back()).norm() < 1.0)
    cones.pop_back();
  return cones;
}

void build_half_width_grid(TrackModel& t) {
  const int n = std::max(8, static_cast<int>(t.length()));
  t.half_width_grid.assign(n, 0.0);
  for (int i = 0; i < n; ++i) {
    const double th = t.length() * i / n;
    const Vec2 c = t.centerline.position(th);
    double best = std::numeric_limits<double>::max();
    for (const Vec2& q : t.cones_left) best = std::min(best, (q - c).norm());
    for (const Vec2& q : t.cones_right) best = std::min(best, (q - c).norm());
    t.half_width_grid[i] = best;
  }
}

double min_spline_radius(const PeriodicSpline2& sp) {
  double r = std::numeric_limits<double>::max();
  for (double th = 0.0; th < sp.length(); th += 0.25)
    r = std::min(r, 1.0 / std::max(std::abs(sp.curvature(th)), 1e-9));
  return r;
}

}  // namespace

void finalize_track(TrackModel& track) {
  auto center = build_centerline(track.cones_left, track.cones_right,
                                 track.start_pose);
  if (!center)
    throw std::runtime_error("track: cannot build a closed centerline");
  track.centerline = *center;

  // start line perpendicular to the start heading
  const double th0 = track.centerline.project(track.start_pose.position());
  const Vec2 c0 = track.centerline.position(th0);
  const Vec2 tan = track.centerline.derivative(th0).normalized();
  const Vec2 normal(-tan.y(), tan.x());
  build_half_width_grid(track);
  const double hw = track.half_width(th0);
  track.start_line_a = c0 + normal * hw;
  track.start_line_b = c0 - normal * hw;
}

TrackModel circle_track(double radius, double width, double cone_spacing) {
  std::vector<Vec2> center_pts;
  const int n = std::max(12, static_cast<int>(2.0 * M_PI * radius / 2.0));
  for (int i = 0; i < n; ++i) {
    const double a = 2.0 * M_PI * i / n;
    center_pts.push_back({radius * std::cos(a), radius * std::sin(a)});
  }
  TrackModel t;
  t.centerline = PeriodicSpline2::fit(center_pts);
  t.cones_left = place_boundary_cones(t.centerline, width / 2.0, cone_spacing);
  t.cones_right =
      place_boundary_cones(t.centerline, -width / 2.0, cone_spacing);
  t.start_pose = {radius, 0.0, M_PI / 2.0};
  const Vec2 n0(1.0, 0.0);
  t.cones_orange = {Vec2(radius, 0.0) + n0 * (width / 2.0 + 0.4),
                    Vec2(radius, 0.0) - n0 * (width / 2.0 - 0.4) +
                        Vec2(width, 0.0) * 0.0,
                    Vec2(radius, -1.0) + n0 * (width / 2.0 + 0.4),
                    Vec2(radius, -1.0) - n0 * (width / 2.0 + 0.4)};
  build_half_width_grid(t);
  t.start_line_a = Vec2(radius + width / 2.0, 0.0);
  t.start_line_b = Vec2(radius - width / 2.0, 0.0);
  return t;
}

TrackModel generate_track(uint64_t seed, const TrackSpec& spec) {
  for (int attempt = 0; attempt < spec.max_retries; ++attempt) {
    Rng rng = derive_rng(seed, 101 + attempt);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);

    const double base_radius = spec.length / (2.0 * M_PI);
    // smooth random layout: low-harmonic radius perturbation r(phi)
    const int harmonics = std::max(3, spec.control_points / 2);
    std::vector<double> amp(harmonics), phase(harmonics);
    double total = 0.0;
    for (int k = 0; k < harmonics; ++k) {
      amp[k] = uni(rng) / std::pow(k + 2.0, 1.5);
      phase[k] = uni(rng) * M_PI;
      total += std::abs(amp[k]);
    }
    // relax the perturbation if earlier attempts came out too tight
    const double jitter = spec.radial_jitter / (1.0 + 0.2 * attempt);
    for (double& a : amp) a *= jitter / std::max(total, 1e-9);

    const int n = 72;
    std::vector<Vec2> ctrl(n);
    for (int i = 0; i < n; ++i) {
      const double ang = 2.0 * M_PI * i / n;
      double rad = 1.0;
      for (int k = 0; k < harmonics; ++k)
        rad += amp[k] * std::cos((k + 2) * ang + phase[k]);
      rad *= base_radius;
      ctrl[i] = {rad * std::cos(ang), rad * std::sin(ang)};
    }

    PeriodicSpline2 center;
    try {
      center = PeriodicSpline2::fit(ctrl);
    } catch (const std::invalid_argument&) {
      continue;
    }

    // rescale to the requested length
    const double scale = spec.length / center.length();
    for (Vec2& p : ctrl) p *= scale;
    center = PeriodicSpline2::fit(ctrl);

    if (center.length() > 500.0) continue;
    if (min_spline_radius(center) <
        std::max(spec.min_radius, spec.width / 2.0 + 1.0))
      continue;

    TrackModel t;
    t.centerline = center;
    const double spacing = std::min(spec.cone_spacing, 4.5);
    t.cones_left = place_boundary_cones(center, spec.width / 2.0, spacing);
    t.cones_right = place_boundary_cones(center, -spec.width / 2.0, spacing);

    const Vec2 p0 = center.position(0.0);
    const double phi0 = center.tangent_angle(0.0);
    t.start_pose = {p0.x(), p0.y(), phi0};
    const Vec2 tan = center.derivative(0.0).normalized();
    const Vec2 normal(-tan.y(), tan.x());
    const double hw = spec.width / 2.0;
    t.cones_orange = {p0 + normal * hw + tan * 0.5, p0 - normal * hw + tan * 0.5,
                      p0 + normal * hw - tan * 0.5, p0 - normal * hw - tan * 0.5};
    build_half_width_grid(t);
    t.start_line_a = p0 + normal * hw;
    t.start_line_b = p0 - normal * hw;

    if (!validate_track(t).empty()) continue;
    return t;
  }
  throw std::runtime_error("generate_track: no feasible layout for spec");
}

std::string validate_track(const TrackModel& track) {
  if (!track.centerline.valid()) return "no centerline";
  if (track.length() > 500.0) return "track longer than 500 m";
  if (track.cones_left.size() < 3 || track.cones_right.size() < 3)
    return "too few boundary cones";

  auto max_gap = [](const std::vector<Vec2>& cones) {
    double g = 0.0;
    for (size_t i = 0; i < cones.size(); ++i)
      g = std::max(g, (cones[(i + 1) % cones.size()] - cones[i]).norm());
    return g;
  };
  if (max_gap(track.cones_left) > 5.0 + 1e-6)
    return "left cone gap above 5 m";
  if (max_gap(track.cones_right) > 5.0 + 1e-6)
    return "right cone gap above 5 m";

  // width: left-to-right clearance sampled along the centerline
  for (double th = 0.0; th < track.length(); th += 1.0) {
    const Vec2 c = track.centerline.position(th);
    double dl = std::numeric_limits<double>::max();
    double dr = dl;
    for (const Vec2& q : track.cones_left) dl = std::min(dl, (q - c).norm());
    for (const Vec2& q : track.cones_right) dr = std::min(dr, (q - c).norm());
    if (dl + dr < 3.0 - 1e-6) return "track narrower than 3 m";
  }
  return {};
}

std::optional<PeriodicSpline2> build_centerline(
    const std::vector<Vec2>& left, const std::vector<Vec2>& right,
    const Pose2& start_hint) {
  if (left.size() < 3 || right.size() < 3) return std::nullopt;

  // midpoint of every left cone and its nearest right cone
  std::vector<Vec2> mids;
  mids.reserve(left.size());
  for (const Vec2& l : left) {
    double best = std::numeric_limits<double>::max();
    Vec2 r_best;
    for (const Vec2& r : right) {
      const double d = (r - l).squaredNorm();
      if (d < best) {
        best = d;
        r_best = r;
      }
    }
    mids.push_back(0.5 * (l + r_best));
  }

  // order midpoints into a loop by nearest-neighbour walking from the start
  std::vector<Vec2> ordered;
  std::vector<bool> used(mids.size(), false);
  Vec2 cur = start_hint.position();
  Vec2 heading(std::cos(start_hint.phi), std::sin(start_hint.phi));
  for (size_t k = 0; k < mids.size(); ++k) {
    int best = -1;
    double best_d = std::numeric_limits<double>::max();
    for (size_t i = 0; i < mids.size(); ++i) {
      if (used[i]) continue;
      const Vec2 d = mids[i] - cur;
      double dist = d.norm();
      // bias the first picks forward so the loop starts in driving direction
      if (k < 2 && d.dot(heading) < -0.2) dist += 100.0;
      if (dist < best_d) {
        best_d = dist;
        best = static_cast<int>(i);
      }
    }
    if (best < 0) break;
    // a jump much larger than any legal cone gap means the chain broke
    if (!ordered.empty() && best_d > 12.0) break;
    used[best] = true;
    ordered.push_back(mids[best]);
    if (ordered.size() >= 2)
      heading = (ordered.back() - ordered[ordered.size() - 2]).normalized();
    cur = mids[best];
  }
  if (ordered.size() < std::max<size_t>(6, mids.size() / 2))
    return std::nullopt;
  if ((ordered.back() - ordered.front()).norm() > 12.0) return std::nullopt;

  try {
    return PeriodicSpline2::fit(ordered, 2.0);
  } catch (const std::invalid_argument&) {
    return std::nullopt;
  }
}

TrackModel load_track(const std::string& path) {
  YAML::Node doc = YAML::LoadFile(path);
  auto read_cones = [&](const char* key) {
    std::vector<Vec2> out;
    for (const auto& n : doc[key])
      out.push_back({n[0].as<double>(), n[1].as<double>()});
    return out;
  };
  TrackModel t;
  t.cones_left = read_cones("left");
  t.cones_right = read_cones("right");
  t.cones_orange = read_cones("orange");
  const auto sp = doc["start_pose"];
  t.start_pose = {sp[0].as<double>(), sp[1].as<double>(), sp[2].as<double>()};
  finalize_track(t);
  return t;
}

void save_track(const TrackModel& track, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_track: cannot open " + path);
  char buf[96];
  auto emit = [&](const char* key, const std::vector<Vec2>& cones) {
    out << key << ":\n";
    for (const Vec2& c : cones) {
      std::snprintf(buf, sizeof(buf), "  - [%.6f, %.6f]\n", c.x(), c.y());
      out << buf;
    }
  };
  emit("left", track.cones_left);
  emit("right", track.cones_right);
  emit("orange", track.cones_orange);
  std::snprintf(buf, sizeof(buf), "start_pose: [%.6f, %.6f, %.6f]\n",
                track.start_pose.x, track.start_pose.y, track.start_pose.phi);
  out << buf;
}

}  // namespace race
