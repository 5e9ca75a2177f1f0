#pragma once

#include <cstddef>
#include <vector>

#include "posekit/core_geom.hpp"

namespace posekit {

/// Rotation encoded as the images of two canonical axes: v1 = R e_z (the
/// symmetry axis) and v2 = R e_x. Both unit, mutually perpendicular.
struct DecoupledRotation {
  Vec3 v1 = Vec3::UnitZ();
  Vec3 v2 = Vec3::UnitX();

  /// Throws DegenerateVectors unless both are unit and perpendicular to 1e-9.
  void validate() const;
};

struct RotationLossConfig {
  double lambda_r = 1.0;

  /// lambda_r forced to 0 for circular symmetry, `lambda_r` otherwise.
  static RotationLossConfig for_symmetry(const SymmetrySpec& sym,
                                         double lambda_r = 1.0);
};

DecoupledRotation vectors_from_rotation(const Rotation& R);

/// Gram-Schmidt with v1 trusted: a = v1/|v1|, b = v2 orthogonalized against a,
/// R = [b, a x b, a]. Throws DegenerateVectors for zero or (anti)parallel input.
Rotation rotation_from_vectors(const Vec3& v1_raw, const Vec3& v2_raw);

/// Rotation with R e_z = v1/|v1| and an arbitrary but deterministic spin.
/// Used when only the symmetry axis is known.
Rotation rotation_from_axis(const Vec3& v1_raw);

/// v2's spin about v1 multiplied by n, measured in the frame of
/// rotation_from_axis(v1): Q (cos a, sin a, 0) -> Q (cos na, sin na, 0).
/// Equal for every member of an n-fold class about e_z and continuous in R
/// wherever v1 != -e_z, unlike the canonical v2, which jumps at the class
/// boundary.
Vec3 lift_spin(const Vec3& v1, const Vec3& v2, int n);

/// Inverse of lift_spin up to the n-fold group: the spin of w about v1 is
/// divided by n. Throws DegenerateVectors when v1 is zero or w has no
/// component perpendicular to it.
Rotation rotation_from_lifted(const Vec3& v1_raw, const Vec3& w_raw, int n);

/// True when lift_spin applies to `sym`: n-fold about e_z.
bool spin_liftable(const SymmetrySpec& sym);

struct RotationLoss {
  double similarity = 0.0;  ///< cos(p1, v1) + lambda_r cos(p2, v2)
  double objective = 0.0;   ///< (1 + lambda_r) - similarity, the minimized form
  Vec3 grad_p1 = Vec3::Zero();  ///< d objective / d p1
  Vec3 grad_p2 = Vec3::Zero();  ///< d objective / d p2
};

RotationLoss rotation_vector_loss(const Vec3& p1, const Vec3& p2,
                                  const DecoupledRotation& gt,
                                  const RotationLossConfig& cfg);

/// {R Rot(axis, k 360/n) : k = 0..n-1}; {R} for no symmetry. Circular
/// symmetry has no finite group and raises UnsupportedForFiniteGroup.
std::vector<Rotation> symmetry_group(const Rotation& R, const SymmetrySpec& sym);

/// Index into symmetry_group(R, sym) of the member closest to identity,
/// smallest index on ties. Not defined for circular symmetry.
std::size_t canonical_group_index(const Rotation& R, const SymmetrySpec& sym);

/// Unique representative of R's symmetry class: group member nearest to
/// identity (n_fold), minimal rotation carrying the axis onto R axis
/// (circular), or R itself (none).
Rotation canonicalize_rotation(const Rotation& R, const SymmetrySpec& sym);

/// Rotation error in degrees modulo the ground-truth symmetry.
double symmetry_aware_rotation_error(const Rotation& pred, const Rotation& gt,
                                     const SymmetrySpec& sym);

}  // namespace posekit
