#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "posekit/error.hpp"

namespace posekit {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Builds a Vec3, rejecting NaN/Inf components with InvalidParameter.
Vec3 make_vec3(double x, double y, double z);
bool is_finite(const Vec3& v);

/// Proper 3x3 rotation. Every instance satisfies ||R^T R - I||_inf <= 1e-6
/// and det(R) = 1 +- 1e-6; the only way to build one from arbitrary data is
/// through a checked factory.
class Rotation {
 public:
  static constexpr double kOrthoTolerance = 1e-6;

  Rotation() : m_(Mat3::Identity()) {}

  /// Throws InvalidRotation when `m` is not a proper rotation within `tol`.
  static Rotation from_matrix(const Mat3& m, double tol = kOrthoTolerance);
  static Rotation from_row_major(std::span<const double, 9> values,
                                 double tol = kOrthoTolerance);
  /// Unit quaternion (w, x, y, z); normalized internally.
  static Rotation from_quaternion(double w, double x, double y, double z);
  static Rotation about_axis(const Vec3& axis, double degrees);
  static Rotation rx(double degrees) { return about_axis(Vec3::UnitX(), degrees); }
  static Rotation ry(double degrees) { return about_axis(Vec3::UnitY(), degrees); }
  static Rotation rz(double degrees) { return about_axis(Vec3::UnitZ(), degrees); }

  /// Closest proper rotation in Frobenius norm (SVD projection). Throws
  /// InvalidRotation when det(m) <= 0.
  static Rotation nearest(const Mat3& m);

  const Mat3& matrix() const { return m_; }
  Vec3 column(int c) const { return m_.col(c); }
  Rotation transpose() const { return Rotation(m_.transpose()); }
  std::array<double, 9> row_major() const;

  Vec3 operator*(const Vec3& v) const { return m_ * v; }
  Rotation operator*(const Rotation& other) const {
    return Rotation(m_ * other.m_);
  }

 private:
  explicit Rotation(const Mat3& m) : m_(m) {}
  Mat3 m_;
};

/// Max-abs deviation of R^T R from identity.
double orthonormality_error(const Mat3& m);

enum class SymmetryKind { None, Circular, NFold };

struct SymmetrySpec {
  SymmetryKind kind = SymmetryKind::None;
  int n = 1;
  Vec3 axis = Vec3::UnitZ();

  static SymmetrySpec none() { return {}; }
  static SymmetrySpec circular(const Vec3& axis = Vec3::UnitZ());
  static SymmetrySpec n_fold(int n, const Vec3& axis = Vec3::UnitZ());

  /// Throws InvalidParameter if n < 2 for n_fold or the axis is not unit.
  void validate() const;
};

std::string_view to_string(SymmetryKind kind);
SymmetryKind symmetry_kind_from_string(std::string_view s);

/// Labeled or unlabeled point set. Label 0 = background, 1 = object.
class PointCloud {
 public:
  PointCloud() = default;
  explicit PointCloud(std::vector<Vec3> points, std::vector<int> labels = {});

  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  bool has_labels() const { return !labels_.empty(); }

  const std::vector<Vec3>& points() const { return points_; }
  const std::vector<int>& labels() const { return labels_; }
  const Vec3& operator[](std::size_t i) const { return points_[i]; }

  Vec3 centroid() const;
  /// Subset of points with label == `label`; result is unlabeled.
  PointCloud select_label(int label) const;

 private:
  std::vector<Vec3> points_;
  std::vector<int> labels_;
};

struct PoseRecord {
  Rotation rotation;
  Vec3 translation = Vec3::Zero();
  Vec3 size = Vec3::Ones();  // full extents along canonical x/y/z
  std::string category;
  SymmetrySpec symmetry;

  /// Throws InvalidParameter on non-positive size or non-finite values.
  void validate() const;
};

struct OrientedBox {
  Rotation rotation;
  Vec3 center = Vec3::Zero();
  Vec3 extents = Vec3::Ones();

  static OrientedBox from_pose(const PoseRecord& pose) {
    return {pose.rotation, pose.translation, pose.size};
  }
  void validate() const;
};

PointCloud transform_points(const PointCloud& cloud, const Rotation& R,
                            const Vec3& T);
/// R^T (p - T) for every point.
PointCloud inverse_transform_points(const PointCloud& cloud, const Rotation& R,
                                    const Vec3& T);

/// Points with ||p - center|| <= radius, labels carried along.
PointCloud crop_sphere(const PointCloud& cloud, const Vec3& center,
                       double radius);

/// Indices of the k nearest points to cloud[query_index], excluding the
/// query. Sorted by (distance, index), so ties go to the smaller index.
std::vector<std::size_t> k_nearest_neighbors(const PointCloud& cloud,
                                             std::size_t query_index,
                                             std::size_t k);
std::vector<std::size_t> k_nearest_neighbors(std::span<const Vec3> points,
                                             std::size_t query_index,
                                             std::size_t k);

/// Corner i has sign pattern (bit0 -> x, bit1 -> y, bit2 -> z), bit set
/// meaning +extent/2. Corner 0 is (-,-,-), corner 7 is (+,+,+).
std::array<Vec3, 8> oriented_box_corners(const OrientedBox& box);

/// Geodesic angle between two rotations in degrees, in [0, 180].
double geodesic_rotation_distance(const Rotation& a, const Rotation& b);
/// Same, validating raw matrices first (InvalidRotation on failure).
double geodesic_rotation_distance(const Mat3& a, const Mat3& b);

/// Angle in degrees between two nonzero vectors, in [0, 180].
double angle_between_deg(const Vec3& a, const Vec3& b);

}  // namespace posekit
