#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <random>

namespace race {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

// Deterministic RNG used across the stack; every consumer derives its own
// stream so module call order does not change the numbers of another module.
using Rng = std::mt19937_64;

inline Rng derive_rng(uint64_t seed, uint64_t stream) {
  const uint64_t mix = stream ^ 0x9e3779b97f4a7c15ull;
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32),
                    static_cast<uint32_t>(mix), static_cast<uint32_t>(mix >> 32)};
  return Rng(seq);
}

// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
  a = std::fmod(a + M_PI, 2.0 * M_PI);
  if (a <= 0.0) a += 2.0 * M_PI;
  return a - M_PI;
}

inline double angle_diff(double a, double b) { return wrap_angle(a - b); }

inline double clamp(double v, double lo, double hi) {
  return v < lo ? lo : (v > hi ? hi : v);
}

inline double square(double v) { return v * v; }

inline Mat2 rot2(double a) {
  Mat2 m;
  m << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
  return m;
}

// 2D pose (X, Y, heading).
struct Pose2 {
  double x = 0.0;
  double y = 0.0;
  double phi = 0.0;

  Vec2 position() const { return {x, y}; }

  // this * local: expresses a local-frame point/pose in the parent frame
  Vec2 transform(const Vec2& local) const {
    return position() + rot2(phi) * local;
  }
  Pose2 compose(const Pose2& local) const {
    Vec2 p = transform({local.x, local.y});
    return {p.x(), p.y(), wrap_angle(phi + local.phi)};
  }
  Vec2 to_local(const Vec2& global) const {
    return rot2(phi).transpose() * (global - position());
  }
};

}  // namespace race
