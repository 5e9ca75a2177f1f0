#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "posekit/core_geom.hpp"

namespace posekit {

enum class Axis { X, Y, Z };

Axis axis_from_string(std::string_view s);
std::string_view to_string(Axis axis);

/// Axis-aligned canonical cage centered at the origin.
struct BoxCage {
  Vec3 extents = Vec3::Ones();

  void validate() const;
};

/// Parameters of the cage deformation: per-axis scaling followed by an
/// optional taper whose height axis is always y (top face at +y).
struct DeformationSpec {
  Vec3 scale = Vec3::Ones();
  std::optional<Axis> taper_axis;  // X or Z
  double taper_factor = 1.0;       // bottom enlargement

  static DeformationSpec identity() { return {}; }
  bool is_identity() const {
    return scale == Vec3::Ones() && (!taper_axis || taper_factor == 1.0);
  }
  /// Throws InvalidParameter for non-positive factors or a y taper axis.
  void validate() const;
};

struct DeformationRanges {
  double scale_min = 0.5;
  double scale_max = 2.0;
  double taper_min = 0.5;
  double taper_max = 2.0;
  double taper_probability = 0.5;

  void validate() const;
};

/// Multiplies one canonical coordinate by n.
PointCloud axis_scale(const PointCloud& points, Axis axis, double n);

/// x_new = (1 + (n - 1) l / L) x, where l is the distance below the cage top
/// (y = L/2) clamped to [0, L] and L is the cage height along y. `axis` picks
/// which coordinate is widened (X or Z).
PointCloud taper(const PointCloud& points, const BoxCage& cage, Axis axis,
                 double n);

/// Face ids: 1 = +x, 2 = -x, 3 = +y, 4 = -y, 5 = +z, 6 = -z. Each point goes
/// to the face rectangle at minimal distance; ties go to the smaller id.
std::vector<int> assign_points_to_surfaces(const PointCloud& points,
                                           const BoxCage& cage);

/// Canonical-frame deformation: axis_scale on x, y, z, then taper on the
/// scaled cage.
PointCloud deform_canonical(const PointCloud& points, const BoxCage& cage,
                            const DeformationSpec& spec);

/// Size of the deformed cage: extents * scale, with the taper axis widened by
/// max(1, taper_factor) (the widest cross-section).
Vec3 deformed_size(const BoxCage& cage, const DeformationSpec& spec);

struct DeformedScene {
  PointCloud cloud;
  PoseRecord pose;  // translation and rotation unchanged, size updated
};

/// R F(R^T (P - T)) + T on object-labeled points; background points untouched.
/// Throws LabelRequired for unlabeled input.
DeformedScene deform_in_scene(const PointCloud& scene_points,
                              const PoseRecord& pose, const BoxCage& cage,
                              const DeformationSpec& spec);

DeformationSpec sample_random_deformation(std::uint64_t seed,
                                          const DeformationRanges& ranges = {});

}  // namespace posekit
