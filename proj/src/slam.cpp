#include "race/slam.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace race {

namespace {

// d R(phi)^T / d phi
Mat2 rot_t_deriv(double phi) {
  Mat2 m;
  m << -std::sin(phi), std::cos(phi), -std::cos(phi), -std::sin(phi);
  return m;
}

// observation model: car-frame position of a map-frame landmark
Vec2 predict_obs(const Pose2& pose, const Vec2& mu) {
  return rot2(pose.phi).transpose() * (mu - pose.position());
}

// Jacobian wrt the pose (X, Y, phi)
Eigen::Matrix<double, 2, 3> obs_pose_jacobian(const Pose2& pose,
                                              const Vec2& mu) {
  Eigen::Matrix<double, 2, 3> G;
  G.block<2, 2>(0, 0) = -rot2(pose.phi).transpose();
  G.col(2) = rot_t_deriv(pose.phi) * (mu - pose.position());
  return G;
}

double gaussian2(const Vec2& innovation, const Mat2& S) {
  const double det = S.determinant();
  if (det <= 0.0) return 0.0;
  const double d2 = innovation.dot(S.inverse() * innovation);
  return std::exp(-0.5 * d2) / (2.0 * M_PI * std::sqrt(det));
}

Pose2 sample_pose(const PoseBelief& belief, Rng& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::LLT<Mat3> llt(belief.cov + 1e-12 * Mat3::Identity());
  const Vec3 n = llt.matrixL() * Vec3(gauss(rng), gauss(rng), gauss(rng));
  return {belief.mean.x + n[0], belief.mean.y + n[1],
          wrap_angle(belief.mean.phi + n[2])};
}

// composes the previous pose with a body-frame odometry delta
PoseBelief propagate(const Pose2& pose, const Odometry& odom) {
  PoseBelief out;
  out.mean = pose.compose(odom.delta);
  const Mat2 Rw = rot2(pose.phi);
  Mat3 J = Mat3::Identity();
  J.block<2, 2>(0, 0) = Rw;
  out.cov = J * odom.cov * J.transpose();
  return out;
}

int observed_color(const ConeObservation& obs) {
  int idx = 0;
  const double best = obs.color_probs.head<3>().maxCoeff(&idx);
  return best > 0.5 ? idx : -1;
}

}  // namespace

AssociationResult associate(const Particle& particle,
                            const ConeObservation& obs,
                            const SlamConfig& cfg) {
  AssociationResult best;
  for (size_t i = 0; i < particle.map.size(); ++i) {
    const Landmark& lm = particle.map[i];
    const Vec2 pred = predict_obs(particle.pose, lm.mu);
    const Mat2 H = rot2(particle.pose.phi).transpose();
    const Mat2 S = H * lm.Sigma * H.transpose() + obs.covariance;
    const Vec2 innov = obs.position - pred;
    const double d2 = innov.dot(S.inverse() * innov);
    const double like = gaussian2(innov, S);
    if (like > best.likelihood && d2 <= cfg.association_gate) {
      best.likelihood = like;
      best.mahalanobis2 = d2;
      best.index = static_cast<int>(i);
    }
  }
  if (best.likelihood < cfg.new_landmark_likelihood) best.index = -1;
  return best;
}

PoseBelief refine_proposal(const PoseBelief& prior,
                           const std::vector<MatchedObservation>& matches,
                           const std::vector<Landmark>& map) {
  PoseBelief belief = prior;
  for (const MatchedObservation& m : matches) {
    if (m.landmark < 0) continue;
    const Landmark& lm = map[m.landmark];
    const Pose2& at = belief.mean;
    const Mat2 Gt = rot2(at.phi).transpose();  // wrt landmark position
    const Eigen::Matrix<double, 2, 3> Gs = obs_pose_jacobian(at, lm.mu);
    const Mat2 Z = m.obs.covariance + Gt * lm.Sigma * Gt.transpose();
    const Mat2 Zi = Z.inverse();
    const Mat3 info = Gs.transpose() * Zi * Gs + belief.cov.inverse();
    const Mat3 cov = info.inverse();
    const Vec2 innov = m.obs.position - predict_obs(at, lm.mu);
    const Vec3 shift = cov * (Gs.transpose() * (Zi * innov));
    belief.mean = {at.x + shift[0], at.y + shift[1],
                   wrap_angle(at.phi + shift[2])};
    belief.cov = 0.5 * (cov + cov.transpose());
  }
  return belief;
}

double match_weight(const Pose2& pose, const PoseBelief& prior,
                    const Landmark& lm, const ConeObservation& obs) {
  const Eigen::Matrix<double, 2, 3> Gs = obs_pose_jacobian(prior.mean, lm.mu);
  const Mat2 Gt = rot2(prior.mean.phi).transpose();
  const Mat2 L = obs.covariance + Gs * prior.cov * Gs.transpose() +
                 Gt * lm.Sigma * Gt.transpose();
  return gaussian2(obs.position - predict_obs(pose, lm.mu), L);
}

double effective_sample_size(const std::vector<Particle>& particles) {
  double sum2 = 0.0;
  for (const Particle& p : particles) sum2 += p.weight * p.weight;
  return sum2 > 0.0 ? 1.0 / sum2 : 0.0;
}

bool resample_if_needed(std::vector<Particle>& particles, double ratio,
                        Rng& rng) {
  const double neff = effective_sample_size(particles);
  const int n = static_cast<int>(particles.size());
  if (neff >= ratio * n) return false;

  std::uniform_real_distribution<double> uni(0.0, 1.0 / n);
  const double start = uni(rng);
  std::vector<Particle> next;
  next.reserve(n);
  double cum = particles[0].weight;
  int i = 0;
  for (int k = 0; k < n; ++k) {
    const double u = start + static_cast<double>(k) / n;
    while (u > cum && i + 1 < n) cum += particles[++i].weight;
    next.push_back(particles[i]);
    next.back().weight = 1.0 / n;
  }
  particles = std::move(next);
  return true;
}

bool landmark_in_fov(const Pose2& pose, const Vec2& mu, double range,
                     double fov) {
  const Vec2 local = pose.to_local(mu);
  if (local.norm() > range) return false;
  return std::abs(std::atan2(local.y(), local.x())) <= fov / 2.0;
}

// ---------------------------------------------------------------------------

ConeSlam::ConeSlam(const SlamConfig& cfg, uint64_t seed)
    : cfg_(cfg), rng_(derive_rng(seed, 21)) {
  if (cfg_.particle_count < 1)
    throw std::invalid_argument("ConeSlam: need at least one particle");
  particles_.resize(cfg_.particle_count);
  for (Particle& p : particles_) p.weight = 1.0 / cfg_.particle_count;
}

void ConeSlam::step(const std::vector<ConeObservation>& observations,
                    const Odometry& odom) {
  if (particles_.empty())
    throw std::logic_error("ConeSlam::step on empty particle set");
  path_length_ += std::hypot(odom.delta.x, odom.delta.y);

  for (Particle& p : particles_) {
    const PoseBelief prior = propagate(p.pose, odom);

    // associate against the map from the prior mean
    Particle probe = p;
    probe.pose = prior.mean;
    std::vector<MatchedObservation> matches;
    std::vector<const ConeObservation*> fresh;
    int color_mismatches = 0;
    for (const ConeObservation& obs : observations) {
      const AssociationResult a = associate(probe, obs, cfg_);
      if (a.index >= 0) {
        matches.push_back({a.index, obs});
        const int oc = observed_color(obs);
        const int lc = p.map[a.index].color_mode();
        if (oc >= 0 && lc >= 0 && oc != lc) ++color_mismatches;
      } else {
        fresh.push_back(&obs);
      }
    }

    const PoseBelief refined = refine_proposal(prior, matches, p.map);
    p.pose = sample_pose(refined, rng_);

    // weight: per-match Gaussian terms plus the new-landmark,
    // missed-landmark and color penalties
    double w = p.weight;
    std::vector<bool> seen(p.map.size(), false);
    for (const MatchedObservation& m : matches) {
      w *= match_weight(p.pose, prior, p.map[m.landmark], m.obs);
      seen[m.landmark] = true;
    }
    w *= std::pow(cfg_.new_landmark_likelihood,
                  static_cast<double>(fresh.size()));
    int missed = 0;
    for (size_t i = 0; i < p.map.size(); ++i) {
      if (seen[i]) continue;
      if (landmark_in_fov(p.pose, p.map[i].mu, cfg_.sensor_range * 0.85,
                          cfg_.sensor_fov * 0.85)) {
        ++missed;
        ++p.map[i].n_m;
      }
    }
    w *= std::pow(cfg_.w_b, missed);
    w *= std::pow(cfg_.w_c, color_mismatches);
    p.weight = std::max(w, 1e-300);

    // map update with the sampled pose
    for (const MatchedObservation& m : matches) {
      Landmark& lm = p.map[m.landmark];
      const Mat2 H = rot2(p.pose.phi).transpose();
      const Mat2 S = H * lm.Sigma * H.transpose() + m.obs.covariance;
      const Mat2 K = lm.Sigma * H.transpose() * S.inverse();
      lm.mu += K * (m.obs.position - predict_obs(p.pose, lm.mu));
      const Mat2 IKH = Mat2::Identity() - K * H;
      lm.Sigma = IKH * lm.Sigma * IKH.transpose() +
                 K * m.obs.covariance * K.transpose();
      lm.Sigma = 0.5 * (lm.Sigma + lm.Sigma.transpose()).eval();
      lm.color_counts += cfg_.color_increment * m.obs.color_probs.head<3>();
      ++lm.n_s;
    }
    for (const ConeObservation* obs : fresh) {
      Landmark lm;
      lm.mu = p.pose.transform(obs->position);
      const Mat2 Rw = rot2(p.pose.phi);
      lm.Sigma = Rw * obs->covariance * Rw.transpose();
      lm.color_counts = cfg_.color_increment * obs->color_probs.head<3>();
      lm.n_s = 1;
      p.map.push_back(lm);
    }
  }

  // normalize and resample
  double total = 0.0;
  for (const Particle& p : particles_) total += p.weight;
  if (total <= 0.0 || !std::isfinite(total)) {
    for (Particle& p : particles_) p.weight = 1.0 / particles_.size();
  } else {
    for (Particle& p : particles_) p.weight /= total;
  }
  resample_if_needed(particles_, cfg_.resample_ratio, rng_);
}

void ConeSlam::localize(const std::vector<ConeObservation>& observations,
                        const Odometry& odom) {
  for (Particle& p : particles_) {
    const PoseBelief prior = propagate(p.pose, odom);
    Particle probe;
    probe.pose = prior.mean;
    probe.map = frozen_map_;
    std::vector<MatchedObservation> matches;
    for (const ConeObservation& obs : observations) {
      const AssociationResult a = associate(probe, obs, cfg_);
      if (a.index >= 0) matches.push_back({a.index, obs});
    }
    const PoseBelief refined = refine_proposal(prior, matches, frozen_map_);
    p.pose = sample_pose(refined, rng_);
    double w = p.weight;
    for (const MatchedObservation& m : matches)
      w *= match_weight(p.pose, prior, frozen_map_[m.landmark], m.obs);
    p.weight = std::max(w, 1e-300);
  }
  double total = 0.0;
  for (const Particle& p : particles_) total += p.weight;
  if (total <= 0.0 || !std::isfinite(total)) {
    for (Particle& p : particles_) p.weight = 1.0 / particles_.size();
  } else {
    for (Particle& p : particles_) p.weight /= total;
  }
  resample_if_needed(particles_, cfg_.resample_ratio, rng_);
}

bool ConeSlam::gate_sensor_batch(
    const std::vector<ConeObservation>& observations,
    const Pose2& pose_hint) const {
  if (observations.empty()) return true;
  const Particle& best = best_particle();
  const std::vector<Landmark>& source = frozen_ ? frozen_map_ : best.map;
  Particle probe;
  probe.pose = pose_hint;
  for (const Landmark& lm : source)
    if (lm.confidence() >= cfg_.confidence_gate &&
        landmark_in_fov(pose_hint, lm.mu, cfg_.sensor_range, cfg_.sensor_fov))
      probe.map.push_back(lm);
  if (probe.map.empty()) return true;  // nothing confident ahead to judge by

  int matched = 0;
  for (const ConeObservation& obs : observations)
    if (associate(probe, obs, cfg_).index >= 0) ++matched;
  return matched >=
         cfg_.consensus_min * static_cast<double>(observations.size());
}

bool ConeSlam::detect_lap_closure(const Pose2& start_pose) const {
  if (path_length_ < cfg_.closure_min_path) return false;

  Vec2 mean_pos = Vec2::Zero();
  for (const Particle& p : particles_) mean_pos += p.pose.position();
  mean_pos /= particles_.size();

  double spread2 = 0.0, max_dist = 0.0;
  double sin_sum = 0.0, cos_sum = 0.0;
  for (const Particle& p : particles_) {
    spread2 += (p.pose.position() - mean_pos).squaredNorm();
    max_dist =
        std::max(max_dist, (p.pose.position() - start_pose.position()).norm());
    sin_sum += std::sin(p.pose.phi);
    cos_sum += std::cos(p.pose.phi);
  }
  spread2 /= particles_.size();
  const double heading = std::atan2(sin_sum, cos_sum);

  return std::sqrt(spread2) < cfg_.closure_spread_max &&
         std::abs(angle_diff(heading, start_pose.phi)) <
             cfg_.closure_heading_max &&
         max_dist < cfg_.closure_dist_max;
}

void ConeSlam::freeze_map() {
  const Particle& best = best_particle();
  frozen_map_.clear();
  for (const Landmark& lm : best.map) {
    if (lm.n_s + lm.n_m > cfg_.prune_min_obs &&
        lm.confidence() < cfg_.prune_confidence)
      continue;
    frozen_map_.push_back(lm);
  }
  // collapse every particle onto the surviving estimate
  const Pose2 mean = best.pose;
  for (Particle& p : particles_) {
    p.pose = mean;
    p.weight = 1.0 / particles_.size();
    p.map.clear();
  }
  frozen_ = true;
}

Pose2 ConeSlam::pose_mean() const {
  double x = 0.0, y = 0.0, s = 0.0, c = 0.0, wsum = 0.0;
  for (const Particle& p : particles_) {
    x += p.weight * p.pose.x;
    y += p.weight * p.pose.y;
    s += p.weight * std::sin(p.pose.phi);
    c += p.weight * std::cos(p.pose.phi);
    wsum += p.weight;
  }
  if (wsum <= 0.0) return {};
  return {x / wsum, y / wsum, std::atan2(s, c)};
}

const Particle& ConeSlam::best_particle() const {
  const Particle* best = &particles_.front();
  for (const Particle& p : particles_)
    if (p.weight > best->weight) best = &p;
  return *best;
}

void save_map(const std::vector<Landmark>& map, const Pose2& start_pose,
              const std::string& path, int min_sightings) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_map: cannot open " + path);
  char buf[256];
  auto emit_color = [&](const char* key, int color) {
    out << key << ":\n";
    for (const Landmark& lm : map) {
      if (lm.n_s < min_sightings || lm.color_mode() != color) continue;
      std::snprintf(buf, sizeof(buf), "  - [%.6f, %.6f]\n", lm.mu.x(),
                    lm.mu.y());
      out << buf;
    }
  };
  emit_color("left", 0);
  emit_color("right", 1);
  emit_color("orange", 2);
  std::snprintf(buf, sizeof(buf), "start_pose: [%.6f, %.6f, %.6f]\n",
                start_pose.x, start_pose.y, start_pose.phi);
  out << buf;
  out << "landmarks:\n";
  for (const Landmark& lm : map) {
    const Vec3 cp = lm.color_posterior();
    std::snprintf(buf, sizeof(buf),
                  "  - {mu: [%.6f, %.6f], sigma: [%.8f, %.8f, %.8f], "
                  "colors: [%.4f, %.4f, %.4f], seen: %d, missed: %d}\n",
                  lm.mu.x(), lm.mu.y(), lm.Sigma(0, 0), lm.Sigma(0, 1),
                  lm.Sigma(1, 1), cp[0], cp[1], cp[2], lm.n_s, lm.n_m);
    out << buf;
  }
}

TrackModel map_to_track(const std::vector<Landmark>& map,
                        const Pose2& start_pose, int min_sightings) {
  TrackModel t;
  t.start_pose = start_pose;
  for (const Landmark& lm : map) {
    if (lm.n_s < min_sightings) continue;
    switch (lm.color_mode()) {
      case 0: t.cones_left.push_back(lm.mu); break;
      case 1: t.cones_right.push_back(lm.mu); break;
      case 2: t.cones_orange.push_back(lm.mu); break;
      default: break;
    }
  }
  finalize_track(t);
  return t;
}

}  // namespace race
