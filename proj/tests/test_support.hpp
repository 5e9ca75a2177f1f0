#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>

#include <Eigen/Geometry>

#include "posekit/core_geom.hpp"

namespace posekit::test {

/// Kind of the posekit::Error thrown by `fn`, or nullopt if none was thrown.
template <class F>
std::optional<ErrorKind> error_kind(F&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

inline bool near(const Vec3& a, const Vec3& b, double tol) {
  return (a - b).cwiseAbs().maxCoeff() <= tol;
}

/// Rotation angle between a and b via unit quaternions: 2 acos(|<qa, qb>|).
inline double quaternion_angle_deg(const Rotation& a, const Rotation& b) {
  const Eigen::Quaterniond qa(a.matrix());
  const Eigen::Quaterniond qb(b.matrix());
  const double d = std::min(1.0, std::abs(qa.normalized().dot(qb.normalized())));
  return 2.0 * std::acos(d) * 180.0 / std::numbers::pi;
}

}  // namespace posekit::test

namespace posekit::test {

/// |a - b| relative to the larger magnitude, floored so near-zero pairs
/// compare absolutely.
inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace posekit::test
