#include "race/planner.hpp"

#include <algorithm>
#include <map>
#include <sstream>

namespace race {

namespace {

double cross2(const Vec2& a, const Vec2& b) {
  return a.x() * b.y() - a.y() * b.x();
}

double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= v.size();
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return std::sqrt(var / v.size());
}

bool decided(const ColorProbs& p, int color, double threshold) {
  return p[color] >= threshold;
}

}  // namespace

MidpointGraph triangulate_cones(const std::vector<PlannerCone>& cones) {
  MidpointGraph g;
  g.cones = cones;
  std::vector<Vec2> pts;
  pts.reserve(cones.size());
  for (const PlannerCone& c : cones) pts.push_back(c.position);
  g.triangles = delaunay_triangulate(pts);

  std::map<std::pair<int, int>, int> edge_to_mid;
  auto midpoint_of = [&](int u, int v) {
    const auto key = std::minmax(u, v);
    auto it = edge_to_mid.find({key.first, key.second});
    if (it != edge_to_mid.end()) return it->second;
    MidpointGraph::Midpoint m;
    m.position = 0.5 * (pts[u] + pts[v]);
    m.cone_a = key.first;
    m.cone_b = key.second;
    const int idx = static_cast<int>(g.midpoints.size());
    g.midpoints.push_back(m);
    edge_to_mid[{key.first, key.second}] = idx;
    return idx;
  };

  std::vector<std::array<int, 3>> tri_mids;
  for (const Triangle& t : g.triangles)
    tri_mids.push_back(
        {midpoint_of(t.a, t.b), midpoint_of(t.b, t.c), midpoint_of(t.c, t.a)});

  g.adjacency.assign(g.midpoints.size(), {});
  for (const auto& tm : tri_mids) {
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        if (i != j) g.adjacency[tm[i]].push_back(tm[j]);
  }
  for (auto& adj : g.adjacency) {
    std::sort(adj.begin(), adj.end());
    adj.erase(std::unique(adj.begin(), adj.end()), adj.end());
  }
  return g;
}

PathCost path_cost(const MidpointGraph& graph, const std::vector<int>& mids,
                   const Pose2& car_pose, const BoundaryCostWeights& w) {
  PathCost c;
  if (mids.empty()) {
    c.total = std::numeric_limits<double>::max();
    return c;
  }

  std::vector<Vec2> pts{car_pose.position()};
  for (int m : mids) pts.push_back(graph.midpoints[m].position);

  // (1) maximum heading change, the car's own heading opens the chain
  double prev_heading = car_pose.phi;
  double max_dh = 0.0;
  double length = 0.0;
  for (size_t i = 0; i + 1 < pts.size(); ++i) {
    const Vec2 d = pts[i + 1] - pts[i];
    const double h = std::atan2(d.y(), d.x());
    max_dh = std::max(max_dh, std::abs(angle_diff(h, prev_heading)));
    prev_heading = h;
    length += d.norm();
  }
  c.angle = max_dh;

  // (2) widths of the crossed gates; (4) worst wrong-color probability;
  // side bookkeeping feeds (3)
  std::vector<double> widths;
  std::vector<int> lefts, rights;
  double worst_color = 0.0;
  for (size_t i = 0; i < mids.size(); ++i) {
    const MidpointGraph::Midpoint& m = graph.midpoints[mids[i]];
    const Vec2& pa = graph.cones[m.cone_a].position;
    const Vec2& pb = graph.cones[m.cone_b].position;
    widths.push_back((pa - pb).norm());
    const Vec2 dir = pts[i + 1] - pts[i];
    const bool a_left = cross2(dir, pa - m.position) > 0.0;
    const int left = a_left ? m.cone_a : m.cone_b;
    const int right = a_left ? m.cone_b : m.cone_a;
    if (lefts.empty() || lefts.back() != left) lefts.push_back(left);
    if (rights.empty() || rights.back() != right) rights.push_back(right);
    // blue belongs left, yellow right
    worst_color = std::max(worst_color, graph.cones[left].color_probs[1]);
    worst_color = std::max(worst_color, graph.cones[right].color_probs[0]);
  }
  c.width = stddev(widths);
  c.color = worst_color;

  // (3) pooled same-side spacing deviation
  auto spacings = [&](const std::vector<int>& cones_on_side) {
    std::vector<double> d;
    for (size_t i = 0; i + 1 < cones_on_side.size(); ++i)
      d.push_back((graph.cones[cones_on_side[i + 1]].position -
                   graph.cones[cones_on_side[i]].position)
                      .norm());
    return d;
  };
  std::vector<double> dl = spacings(lefts), dr = spacings(rights);
  const double nl = static_cast<double>(dl.size());
  const double nr = static_cast<double>(dr.size());
  if (nl + nr > 0) {
    const double vl = square(stddev(dl)), vr = square(stddev(dr));
    c.spacing = std::sqrt((vl * nl + vr * nr) / (nl + nr));
  }

  // (5) squared difference between path length and sensor range
  c.length = square(length - w.sensor_range);

  c.total = w.w_angle * square(c.angle / w.norm_angle) +
            w.w_width * square(c.width / w.norm_width) +
            w.w_spacing * square(c.spacing / w.norm_spacing) +
            w.w_color * square(c.color) +
            w.w_length * square(c.length / w.norm_length);
  return c;
}

std::vector<CandidatePath> grow_paths(const MidpointGraph& graph,
                                      const Pose2& car_pose,
                                      const BoundaryCostWeights& w) {
  // gates between two confidently same-colored cones are never driven
  // through
  std::vector<bool> blocked(graph.midpoints.size(), false);
  for (size_t i = 0; i < graph.midpoints.size(); ++i) {
    const auto& m = graph.midpoints[i];
    const ColorProbs& a = graph.cones[m.cone_a].color_probs;
    const ColorProbs& b = graph.cones[m.cone_b].color_probs;
    if ((decided(a, 0, 0.7) && decided(b, 0, 0.7)) ||
        (decided(a, 1, 0.7) && decided(b, 1, 0.7)))
      blocked[i] = true;
  }

  // seed with midpoints close to and ahead of the car
  std::vector<std::vector<int>> frontier;
  for (size_t i = 0; i < graph.midpoints.size(); ++i) {
    if (blocked[i]) continue;
    const Vec2 local = car_pose.to_local(graph.midpoints[i].position);
    if (local.norm() > 6.0) continue;
    if (local.x() < -0.5) continue;
    if (std::abs(std::atan2(local.y(), local.x())) > 1.9) continue;
    frontier.push_back({static_cast<int>(i)});
  }

  std::vector<CandidatePath> done;
  auto finish = [&](const std::vector<int>& mids) {
    CandidatePath p;
    p.midpoints = mids;
    p.cost = path_cost(graph, mids, car_pose, w);
    done.push_back(std::move(p));
  };

  for (int depth = 1; depth < w.max_depth && !frontier.empty(); ++depth) {
    // beam prune by partial cost
    if (static_cast<int>(frontier.size()) > w.beam_width) {
      std::vector<std::pair<double, size_t>> ranked;
      ranked.reserve(frontier.size());
      for (size_t i = 0; i < frontier.size(); ++i)
        ranked.push_back(
            {path_cost(graph, frontier[i], car_pose, w).total, i});
      std::sort(ranked.begin(), ranked.end());
      std::vector<std::vector<int>> kept;
      kept.reserve(w.beam_width);
      for (int i = 0; i < w.beam_width; ++i)
        kept.push_back(std::move(frontier[ranked[i].second]));
      frontier = std::move(kept);
    }

    std::vector<std::vector<int>> next;
    for (const std::vector<int>& path : frontier) {
      bool extended = false;
      for (int adj : graph.adjacency[path.back()]) {
        if (blocked[adj]) continue;
        if (std::find(path.begin(), path.end(), adj) != path.end()) continue;
        std::vector<int> longer = path;
        longer.push_back(adj);
        next.push_back(std::move(longer));
        extended = true;
      }
      if (!extended) finish(path);
    }
    frontier = std::move(next);
  }
  for (const std::vector<int>& path : frontier) finish(path);
  return done;
}

std::optional<CandidatePath> select_centerline(
    const MidpointGraph& graph, std::vector<CandidatePath> candidates) {
  if (candidates.empty()) return std::nullopt;
  const CandidatePath* best = &candidates.front();
  for (const CandidatePath& c : candidates) {
    if (c.cost.total < best->cost.total - 1e-12) {
      best = &c;
    } else if (std::abs(c.cost.total - best->cost.total) <= 1e-12) {
      if (c.midpoints.size() > best->midpoints.size() ||
          (c.midpoints.size() == best->midpoints.size() &&
           c.midpoints < best->midpoints))
        best = &c;
    }
  }
  CandidatePath chosen = *best;
  // classify the flanks once more for the caller
  chosen.left_cones.clear();
  chosen.right_cones.clear();
  Vec2 prev = graph.midpoints[chosen.midpoints.front()].position;
  for (size_t i = 0; i < chosen.midpoints.size(); ++i) {
    const auto& m = graph.midpoints[chosen.midpoints[i]];
    const Vec2 dir =
        i == 0 ? m.position - prev + Vec2(1e-9, 0) : m.position - prev;
    const Vec2& pa = graph.cones[m.cone_a].position;
    const bool a_left = cross2(dir, pa - m.position) > 0.0;
    const int l = a_left ? m.cone_a : m.cone_b;
    const int r = a_left ? m.cone_b : m.cone_a;
    if (chosen.left_cones.empty() || chosen.left_cones.back() != l)
      chosen.left_cones.push_back(l);
    if (chosen.right_cones.empty() || chosen.right_cones.back() != r)
      chosen.right_cones.push_back(r);
    prev = m.position;
  }
  return chosen;
}

DriverInput pure_pursuit(const std::vector<Vec2>& centerline,
                         const Pose2& pose, double current_vx,
                         double speed_setpoint, double wheelbase,
                         double lookahead) {
  DriverInput cmd;
  cmd.D = clamp(0.5 * (speed_setpoint - current_vx), -0.6, 0.6);
  if (centerline.size() < 2) return cmd;

  Vec2 target = centerline.back();
  double walked = 0.0;
  for (size_t i = 0; i + 1 < centerline.size(); ++i) {
    const double seg = (centerline[i + 1] - centerline[i]).norm();
    if (walked + seg >= lookahead) {
      const double f = (lookahead - walked) / std::max(seg, 1e-9);
      target = centerline[i] + f * (centerline[i + 1] - centerline[i]);
      break;
    }
    walked += seg;
  }
  const Vec2 local = pose.to_local(target);
  const double alpha = std::atan2(local.y(), local.x());
  const double ld = std::max(local.norm(), 1e-3);
  cmd.delta = std::atan(2.0 * wheelbase * std::sin(alpha) / ld);
  return cmd;
}

PlannerOutput BoundaryPlanner::plan(const std::vector<PlannerCone>& cones,
                                    const Pose2& pose, double current_vx) {
  PlannerOutput out;
  std::optional<CandidatePath> chosen;
  MidpointGraph graph;
  if (cones.size() >= 3) {
    try {
      graph = triangulate_cones(cones);
      chosen = select_centerline(graph, grow_paths(graph, pose, cfg_.weights));
    } catch (const std::invalid_argument&) {
      chosen.reset();  // degenerate layout: hold the previous path
    }
  }

  if (chosen) {
    out.fresh = true;
    out.centerline = {pose.position()};
    for (int m : chosen->midpoints)
      out.centerline.push_back(graph.midpoints[m].position);
    for (int c : chosen->left_cones)
      out.left_bound.push_back(graph.cones[c].position);
    for (int c : chosen->right_cones)
      out.right_bound.push_back(graph.cones[c].position);
    held_path_ = out.centerline;

    std::ostringstream dbg;
    dbg << "cones=" << cones.size() << " tris=" << graph.triangles.size()
        << " mids=" << graph.midpoints.size()
        << " chosen_len=" << chosen->midpoints.size()
        << " cost=" << chosen->cost.total << " angle=" << chosen->cost.angle
        << " width=" << chosen->cost.width
        << " spacing=" << chosen->cost.spacing
        << " color=" << chosen->cost.color
        << " range=" << chosen->cost.length;
    debug_ = dbg.str();
  } else {
    out.centerline = held_path_;
    debug_ = "held";
  }

  out.command = pure_pursuit(out.centerline, pose, current_vx,
                             cfg_.slam_speed, wheelbase_, cfg_.lookahead);
  return out;
}

}  // namespace race
