#include "posekit/decoupled_rotation.hpp"

#include <cmath>
#include <limits>

namespace posekit {

namespace {

constexpr double kMinNorm = 1e-6;
constexpr double kMinAngle = 1e-3;  // rad

// Minimal-geodesic rotation carrying unit vector a onto unit vector b.
Mat3 align_vectors(const Vec3& a, const Vec3& b) {
  const Vec3 axis = a.cross(b);
  const double s = axis.norm();
  const double c = a.dot(b);
  if (s < 1e-15) {
    if (c > 0.0) return Mat3::Identity();
    // Antipodal: half-turn about a deterministic axis perpendicular to a.
    Vec3 e = Vec3::UnitX();
    if (std::abs(a.x()) > std::abs(a.y()) || std::abs(a.x()) > std::abs(a.z())) {
      e = std::abs(a.y()) < std::abs(a.z()) ? Vec3::UnitY() : Vec3::UnitZ();
    }
    const Vec3 perp = a.cross(e).normalized();
    return 2.0 * perp * perp.transpose() - Mat3::Identity();
  }
  const Vec3 k = axis / s;
  Mat3 kx;
  kx << 0, -k.z(), k.y(), k.z(), 0, -k.x(), -k.y(), k.x(), 0;
  return Mat3::Identity() + s * kx + (1.0 - c) * kx * kx;
}

}  // namespace

void DecoupledRotation::validate() const {
  if (std::abs(v1.norm() - 1.0) > 1e-9 || std::abs(v2.norm() - 1.0) > 1e-9 ||
      std::abs(v1.dot(v2)) > 1e-9) {
    throw Error(ErrorKind::DegenerateVectors,
                "decoupled vectors must be unit and perpendicular");
  }
}

RotationLossConfig RotationLossConfig::for_symmetry(const SymmetrySpec& sym,
                                                    double lambda_r) {
  if (sym.kind == SymmetryKind::Circular) return {0.0};
  if (!(lambda_r >= 0.0)) {
    throw Error(ErrorKind::InvalidParameter, "lambda_r must be >= 0");
  }
  return {lambda_r};
}

DecoupledRotation vectors_from_rotation(const Rotation& R) {
  return {R.column(2), R.column(0)};
}

Rotation rotation_from_vectors(const Vec3& v1_raw, const Vec3& v2_raw) {
  const double n1 = v1_raw.norm();
  const double n2 = v2_raw.norm();
  if (!(n1 > kMinNorm) || !(n2 > kMinNorm) || !is_finite(v1_raw) ||
      !is_finite(v2_raw)) {
    throw Error(ErrorKind::DegenerateVectors, "zero-length rotation vector");
  }
  const double angle = std::atan2(v1_raw.cross(v2_raw).norm(), v1_raw.dot(v2_raw));
  if (angle < kMinAngle || angle > M_PI - kMinAngle) {
    throw Error(ErrorKind::DegenerateVectors, "rotation vectors are parallel");
  }
  const Vec3 a = v1_raw / n1;
  const Vec3 b = (v2_raw - v2_raw.dot(a) * a).normalized();
  const Vec3 c = a.cross(b);
  Mat3 m;
  m.col(0) = b;
  m.col(1) = c;
  m.col(2) = a;
  return Rotation::from_matrix(m);
}

Rotation rotation_from_axis(const Vec3& v1_raw) {
  const double n1 = v1_raw.norm();
  if (!(n1 > kMinNorm) || !is_finite(v1_raw)) {
    throw Error(ErrorKind::DegenerateVectors, "zero-length rotation vector");
  }
  return Rotation::from_matrix(align_vectors(Vec3::UnitZ(), v1_raw / n1));
}

Vec3 lift_spin(const Vec3& v1, const Vec3& v2, int n) {
  const Rotation Q = rotation_from_axis(v1);
  const Vec3 local = Q.matrix().transpose() * v2;
  const double a = n * std::atan2(local.y(), local.x());
  return Q * Vec3(std::cos(a), std::sin(a), 0.0);
}

Rotation rotation_from_lifted(const Vec3& v1_raw, const Vec3& w_raw, int n) {
  if (n < 1) throw Error(ErrorKind::InvalidParameter, "spin order must be >= 1");
  const Rotation Q = rotation_from_axis(v1_raw);
  const Vec3 local = Q.matrix().transpose() * w_raw;
  const double r = std::hypot(local.x(), local.y());
  if (!(r > kMinNorm * std::max(1.0, w_raw.norm())) || !is_finite(w_raw)) {
    throw Error(ErrorKind::DegenerateVectors, "lifted vector parallel to the axis");
  }
  const double a = std::atan2(local.y(), local.x()) / n;
  return Q * Rotation::rz(a * 180.0 / M_PI);
}

bool spin_liftable(const SymmetrySpec& sym) {
  return sym.kind == SymmetryKind::NFold && (sym.axis - Vec3::UnitZ()).norm() < 1e-12;
}

RotationLoss rotation_vector_loss(const Vec3& p1, const Vec3& p2,
                                  const DecoupledRotation& gt,
                                  const RotationLossConfig& cfg) {
  const double n1 = p1.norm();
  const double n2 = p2.norm();
  if (!(n1 > 0.0) || (cfg.lambda_r != 0.0 && !(n2 > 0.0))) {
    throw Error(ErrorKind::DegenerateVectors, "zero-norm predicted vector");
  }
  RotationLoss out;
  const Vec3 g1 = gt.v1.normalized();
  const double c1 = p1.dot(g1) / n1;
  // d cos(p, g) / dp = (g - cos * p/|p|) / |p|
  out.grad_p1 = -(g1 - c1 * p1 / n1) / n1;
  double c2 = 0.0;
  if (cfg.lambda_r != 0.0) {
    const Vec3 g2 = gt.v2.normalized();
    c2 = p2.dot(g2) / n2;
    out.grad_p2 = -cfg.lambda_r * (g2 - c2 * p2 / n2) / n2;
  }
  out.similarity = c1 + cfg.lambda_r * c2;
  out.objective = (1.0 + cfg.lambda_r) - out.similarity;
  return out;
}

std::vector<Rotation> symmetry_group(const Rotation& R, const SymmetrySpec& sym) {
  sym.validate();
  switch (sym.kind) {
    case SymmetryKind::None:
      return {R};
    case SymmetryKind::Circular:
      throw Error(ErrorKind::UnsupportedForFiniteGroup,
                  "circular symmetry has no finite group; use "
                  "canonicalize_rotation");
    case SymmetryKind::NFold:
      break;
  }
  std::vector<Rotation> group;
  group.reserve(static_cast<std::size_t>(sym.n));
  for (int k = 0; k < sym.n; ++k) {
    const double deg = 360.0 * static_cast<double>(k) / sym.n;
    group.push_back(R * Rotation::about_axis(sym.axis, deg));
  }
  return group;
}

std::size_t canonical_group_index(const Rotation& R, const SymmetrySpec& sym) {
  const auto group = symmetry_group(R, sym);
  const Rotation identity;
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < group.size(); ++k) {
    const double d = geodesic_rotation_distance(group[k], identity);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

Rotation canonicalize_rotation(const Rotation& R, const SymmetrySpec& sym) {
  sym.validate();
  switch (sym.kind) {
    case SymmetryKind::None:
      return R;
    case SymmetryKind::Circular: {
      const Vec3 a = sym.axis.normalized();
      const Mat3 align = align_vectors(a, (R * a).normalized());
      return Rotation::nearest(align);
    }
    case SymmetryKind::NFold:
      break;
  }
  return symmetry_group(R, sym)[canonical_group_index(R, sym)];
}

double symmetry_aware_rotation_error(const Rotation& pred, const Rotation& gt,
                                     const SymmetrySpec& sym) {
  sym.validate();
  switch (sym.kind) {
    case SymmetryKind::None:
      return geodesic_rotation_distance(pred, gt);
    case SymmetryKind::Circular:
      return angle_between_deg(pred * sym.axis, gt * sym.axis);
    case SymmetryKind::NFold:
      break;
  }
  double best = std::numeric_limits<double>::infinity();
  for (const auto& g : symmetry_group(gt, sym)) {
    best = std::min(best, geodesic_rotation_distance(pred, g));
  }
  return best;
}

}  // namespace posekit
