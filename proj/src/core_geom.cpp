#include "posekit/core_geom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include <Eigen/Geometry>
#include <Eigen/SVD>

namespace posekit {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::InvalidParameter: return "InvalidParameter";
    case ErrorKind::InvalidRotation: return "InvalidRotation";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::DuplicateId: return "DuplicateId";
    case ErrorKind::DegenerateVectors: return "DegenerateVectors";
    case ErrorKind::UnsupportedForFiniteGroup: return "UnsupportedForFiniteGroup";
    case ErrorKind::ShapeError: return "ShapeError";
    case ErrorKind::StateError: return "StateError";
    case ErrorKind::LabelRequired: return "LabelRequired";
    case ErrorKind::CategoryMismatch: return "CategoryMismatch";
    case ErrorKind::MissingGroundTruth: return "MissingGroundTruth";
    case ErrorKind::SegmentationEmpty: return "SegmentationEmpty";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

namespace {

constexpr double kDeg = 180.0 / std::numbers::pi;

}  // namespace

Vec3 make_vec3(double x, double y, double z) {
  Vec3 v(x, y, z);
  if (!is_finite(v)) {
    throw Error(ErrorKind::InvalidParameter, "non-finite vector component");
  }
  return v;
}

bool is_finite(const Vec3& v) {
  return std::isfinite(v.x()) && std::isfinite(v.y()) && std::isfinite(v.z());
}

double orthonormality_error(const Mat3& m) {
  return (m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff();
}

Rotation Rotation::from_matrix(const Mat3& m, double tol) {
  if (!m.allFinite()) {
    throw Error(ErrorKind::InvalidRotation, "non-finite matrix entry");
  }
  const double ortho = orthonormality_error(m);
  const double det = m.determinant();
  if (ortho > tol || std::abs(det - 1.0) > tol) {
    std::ostringstream os;
    os << "not a proper rotation (orthonormality error " << ortho
       << ", det " << det << ")";
    throw Error(ErrorKind::InvalidRotation, os.str());
  }
  return Rotation(m);
}

Rotation Rotation::from_row_major(std::span<const double, 9> values,
                                  double tol) {
  Mat3 m;
  m << values[0], values[1], values[2], values[3], values[4], values[5],
      values[6], values[7], values[8];
  return from_matrix(m, tol);
}

Rotation Rotation::from_quaternion(double w, double x, double y, double z) {
  Eigen::Quaterniond q(w, x, y, z);
  if (q.norm() < 1e-12) {
    throw Error(ErrorKind::InvalidParameter, "zero quaternion");
  }
  q.normalize();
  return Rotation(q.toRotationMatrix());
}

Rotation Rotation::about_axis(const Vec3& axis, double degrees) {
  const double n = axis.norm();
  if (!(n > 1e-12) || !std::isfinite(degrees)) {
    throw Error(ErrorKind::InvalidParameter, "degenerate rotation axis");
  }
  return Rotation(
      Eigen::AngleAxisd(degrees / kDeg, axis / n).toRotationMatrix());
}

Rotation Rotation::nearest(const Mat3& m) {
  if (!m.allFinite()) {
    throw Error(ErrorKind::InvalidRotation, "non-finite matrix entry");
  }
  if (m.determinant() <= 0.0) {
    throw Error(ErrorKind::InvalidRotation, "determinant is not positive");
  }
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0.0) {
    Mat3 u = svd.matrixU();
    u.col(2) *= -1.0;
    r = u * svd.matrixV().transpose();
  }
  return Rotation(r);
}

std::array<double, 9> Rotation::row_major() const {
  std::array<double, 9> out{};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out[r * 3 + c] = m_(r, c);
  return out;
}

SymmetrySpec SymmetrySpec::circular(const Vec3& axis) {
  SymmetrySpec s{SymmetryKind::Circular, 1, axis};
  s.validate();
  return s;
}

SymmetrySpec SymmetrySpec::n_fold(int n, const Vec3& axis) {
  SymmetrySpec s{SymmetryKind::NFold, n, axis};
  s.validate();
  return s;
}

void SymmetrySpec::validate() const {
  if (kind == SymmetryKind::NFold && n < 2) {
    throw Error(ErrorKind::InvalidParameter, "n_fold symmetry requires n >= 2");
  }
  if (!is_finite(axis) || std::abs(axis.norm() - 1.0) > 1e-9) {
    throw Error(ErrorKind::InvalidParameter, "symmetry axis must be unit");
  }
}

std::string_view to_string(SymmetryKind kind) {
  switch (kind) {
    case SymmetryKind::None: return "none";
    case SymmetryKind::Circular: return "circular";
    case SymmetryKind::NFold: return "n_fold";
  }
  return "none";
}

SymmetryKind symmetry_kind_from_string(std::string_view s) {
  if (s == "none") return SymmetryKind::None;
  if (s == "circular") return SymmetryKind::Circular;
  if (s == "n_fold") return SymmetryKind::NFold;
  throw Error(ErrorKind::InvalidParameter,
              "unknown symmetry kind '" + std::string(s) + "'");
}

PointCloud::PointCloud(std::vector<Vec3> points, std::vector<int> labels)
    : points_(std::move(points)), labels_(std::move(labels)) {
  if (!labels_.empty() && labels_.size() != points_.size()) {
    throw Error(ErrorKind::ShapeError, "label count does not match points");
  }
  for (const auto& p : points_) {
    if (!is_finite(p)) {
      throw Error(ErrorKind::InvalidParameter, "non-finite point coordinate");
    }
  }
}

Vec3 PointCloud::centroid() const {
  if (points_.empty()) throw Error(ErrorKind::EmptyInput, "empty cloud");
  Vec3 sum = Vec3::Zero();
  for (const auto& p : points_) sum += p;
  return sum / static_cast<double>(points_.size());
}

PointCloud PointCloud::select_label(int label) const {
  if (labels_.empty()) throw Error(ErrorKind::LabelRequired, "cloud has no labels");
  std::vector<Vec3> out;
  for (std::size_t i = 0; i < points_.size(); ++i)
    if (labels_[i] == label) out.push_back(points_[i]);
  return PointCloud(std::move(out));
}

void PoseRecord::validate() const {
  if (!is_finite(translation) || !is_finite(size)) {
    throw Error(ErrorKind::InvalidParameter, "non-finite pose field");
  }
  if ((size.array() <= 0.0).any()) {
    throw Error(ErrorKind::InvalidParameter, "size must be strictly positive");
  }
  symmetry.validate();
}

void OrientedBox::validate() const {
  if (!is_finite(center) || !is_finite(extents) ||
      (extents.array() <= 0.0).any()) {
    throw Error(ErrorKind::InvalidParameter,
                "box extents must be finite and strictly positive");
  }
}

PointCloud transform_points(const PointCloud& cloud, const Rotation& R,
                            const Vec3& T) {
  if (cloud.empty()) throw Error(ErrorKind::EmptyInput, "empty cloud");
  std::vector<Vec3> out;
  out.reserve(cloud.size());
  for (const auto& p : cloud.points()) out.push_back(R.matrix() * p + T);
  return PointCloud(std::move(out), cloud.labels());
}

PointCloud inverse_transform_points(const PointCloud& cloud, const Rotation& R,
                                    const Vec3& T) {
  if (cloud.empty()) throw Error(ErrorKind::EmptyInput, "empty cloud");
  const Mat3 rt = R.matrix().transpose();
  std::vector<Vec3> out;
  out.reserve(cloud.size());
  for (const auto& p : cloud.points()) out.push_back(rt * (p - T));
  return PointCloud(std::move(out), cloud.labels());
}

PointCloud crop_sphere(const PointCloud& cloud, const Vec3& center,
                       double radius) {
  if (!(radius > 0.0)) {
    throw Error(ErrorKind::InvalidParameter, "radius must be positive");
  }
  std::vector<Vec3> pts;
  std::vector<int> labels;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if ((cloud[i] - center).norm() <= radius) {
      pts.push_back(cloud[i]);
      if (cloud.has_labels()) labels.push_back(cloud.labels()[i]);
    }
  }
  return PointCloud(std::move(pts), std::move(labels));
}

std::vector<std::size_t> k_nearest_neighbors(std::span<const Vec3> points,
                                             std::size_t query_index,
                                             std::size_t k) {
  if (query_index >= points.size()) {
    throw Error(ErrorKind::InvalidParameter, "query index out of range");
  }
  if (k < 1 || k + 1 > points.size()) {
    throw Error(ErrorKind::InvalidParameter,
                "k must satisfy 1 <= k <= |cloud| - 1");
  }
  const Vec3& q = points[query_index];
  std::vector<std::pair<double, std::size_t>> cand;
  cand.reserve(points.size() - 1);
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (i != query_index) cand.emplace_back((points[i] - q).squaredNorm(), i);
  }
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k),
                    cand.end());
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = cand[i].second;
  return out;
}

std::vector<std::size_t> k_nearest_neighbors(const PointCloud& cloud,
                                             std::size_t query_index,
                                             std::size_t k) {
  return k_nearest_neighbors(std::span<const Vec3>(cloud.points()),
                             query_index, k);
}

std::array<Vec3, 8> oriented_box_corners(const OrientedBox& box) {
  box.validate();
  std::array<Vec3, 8> corners;
  const Vec3 half = box.extents / 2.0;
  for (int i = 0; i < 8; ++i) {
    const Vec3 local((i & 1) ? half.x() : -half.x(),
                     (i & 2) ? half.y() : -half.y(),
                     (i & 4) ? half.z() : -half.z());
    corners[i] = box.center + box.rotation * local;
  }
  return corners;
}

double geodesic_rotation_distance(const Rotation& a, const Rotation& b) {
  const Mat3 rel = a.matrix().transpose() * b.matrix();
  // atan2 form of arccos((tr - 1) / 2); keeps precision near 0 and 180 deg.
  const double cos_part = std::clamp((rel.trace() - 1.0) / 2.0, -1.0, 1.0);
  const Vec3 skew(rel(2, 1) - rel(1, 2), rel(0, 2) - rel(2, 0),
                  rel(1, 0) - rel(0, 1));
  const double sin_part = std::min(skew.norm() / 2.0, 1.0);
  return std::clamp(std::atan2(sin_part, cos_part) * kDeg, 0.0, 180.0);
}

double geodesic_rotation_distance(const Mat3& a, const Mat3& b) {
  return geodesic_rotation_distance(Rotation::from_matrix(a),
                                    Rotation::from_matrix(b));
}

double angle_between_deg(const Vec3& a, const Vec3& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) {
    throw Error(ErrorKind::DegenerateVectors, "zero-length vector");
  }
  return std::atan2(a.cross(b).norm(), a.dot(b)) * kDeg;
}

}  // namespace posekit
