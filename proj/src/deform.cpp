#include "posekit/deform.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>

#include "posekit/random.hpp"

namespace posekit {

namespace {

int axis_index(Axis a) {
  switch (a) {
    case Axis::X: return 0;
    case Axis::Y: return 1;
    case Axis::Z: return 2;
  }
  return 0;
}

}  // namespace

Axis axis_from_string(std::string_view s) {
  if (s == "x") return Axis::X;
  if (s == "y") return Axis::Y;
  if (s == "z") return Axis::Z;
  throw Error(ErrorKind::InvalidParameter, "unknown axis '" + std::string(s) + "'");
}

std::string_view to_string(Axis axis) {
  switch (axis) {
    case Axis::X: return "x";
    case Axis::Y: return "y";
    case Axis::Z: return "z";
  }
  return "x";
}

void BoxCage::validate() const {
  if (!is_finite(extents) || (extents.array() <= 0.0).any()) {
    throw Error(ErrorKind::InvalidParameter, "cage extents must be positive");
  }
}

void DeformationSpec::validate() const {
  if (!is_finite(scale) || (scale.array() <= 0.0).any()) {
    throw Error(ErrorKind::InvalidParameter, "scale factors must be positive");
  }
  if (!(taper_factor > 0.0) || !std::isfinite(taper_factor)) {
    throw Error(ErrorKind::InvalidParameter, "taper factor must be positive");
  }
  if (taper_axis && *taper_axis == Axis::Y) {
    throw Error(ErrorKind::InvalidParameter, "taper axis must be x or z");
  }
}

void DeformationRanges::validate() const {
  if (!(scale_min > 0.0) || !(scale_max >= scale_min) || !(taper_min > 0.0) ||
      !(taper_max >= taper_min) || !(taper_probability >= 0.0) ||
      !(taper_probability <= 1.0)) {
    throw Error(ErrorKind::InvalidParameter, "invalid deformation ranges");
  }
}

PointCloud axis_scale(const PointCloud& points, Axis axis, double n) {
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw Error(ErrorKind::InvalidParameter, "scale factor must be positive");
  }
  const int a = axis_index(axis);
  std::vector<Vec3> out = points.points();
  for (auto& p : out) p[a] *= n;
  return PointCloud(std::move(out), points.labels());
}

PointCloud taper(const PointCloud& points, const BoxCage& cage, Axis axis,
                 double n) {
  cage.validate();
  if (axis == Axis::Y) {
    throw Error(ErrorKind::InvalidParameter, "taper axis must be x or z");
  }
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw Error(ErrorKind::InvalidParameter, "taper factor must be positive");
  }
  const int a = axis_index(axis);
  const double height = cage.extents.y();
  const double top = height / 2.0;
  std::vector<Vec3> out = points.points();
  for (auto& p : out) {
    const double l = std::clamp(top - p.y(), 0.0, height);
    p[a] *= 1.0 + (n - 1.0) * l / height;
  }
  return PointCloud(std::move(out), points.labels());
}

std::vector<int> assign_points_to_surfaces(const PointCloud& points,
                                           const BoxCage& cage) {
  cage.validate();
  const Vec3 h = cage.extents / 2.0;
  std::vector<int> ids;
  ids.reserve(points.size());
  for (const auto& p : points.points()) {
    int best_id = 1;
    double best = std::numeric_limits<double>::infinity();
    for (int face = 0; face < 6; ++face) {
      const int a = face / 2;
      const double side = (face % 2 == 0) ? h[a] : -h[a];
      // Closest point on the face rectangle.
      Vec3 q = p.cwiseMax(-h).cwiseMin(h);
      q[a] = side;
      const double d = (p - q).squaredNorm();
      if (d < best) {
        best = d;
        best_id = face + 1;
      }
    }
    ids.push_back(best_id);
  }
  return ids;
}

PointCloud deform_canonical(const PointCloud& points, const BoxCage& cage,
                            const DeformationSpec& spec) {
  cage.validate();
  spec.validate();
  PointCloud out = points;
  if (spec.scale.x() != 1.0) out = axis_scale(out, Axis::X, spec.scale.x());
  if (spec.scale.y() != 1.0) out = axis_scale(out, Axis::Y, spec.scale.y());
  if (spec.scale.z() != 1.0) out = axis_scale(out, Axis::Z, spec.scale.z());
  if (spec.taper_axis && spec.taper_factor != 1.0) {
    const BoxCage scaled{cage.extents.cwiseProduct(spec.scale)};
    out = taper(out, scaled, *spec.taper_axis, spec.taper_factor);
  }
  return out;
}

Vec3 deformed_size(const BoxCage& cage, const DeformationSpec& spec) {
  Vec3 size = cage.extents.cwiseProduct(spec.scale);
  if (spec.taper_axis) {
    size[axis_index(*spec.taper_axis)] *= std::max(1.0, spec.taper_factor);
  }
  return size;
}

DeformedScene deform_in_scene(const PointCloud& scene_points,
                              const PoseRecord& pose, const BoxCage& cage,
                              const DeformationSpec& spec) {
  if (!scene_points.has_labels()) {
    throw Error(ErrorKind::LabelRequired, "labels required");
  }
  cage.validate();
  spec.validate();
  const auto& labels = scene_points.labels();
  std::vector<Vec3> object;
  for (std::size_t i = 0; i < scene_points.size(); ++i)
    if (labels[i] != 0) object.push_back(scene_points[i]);

  std::vector<Vec3> out = scene_points.points();
  // the conjugation would cost a few ulps on an identity spec
  if (!object.empty() && !spec.is_identity()) {
    const PointCloud canonical =
        inverse_transform_points(PointCloud(std::move(object)), pose.rotation,
                                 pose.translation);
    const PointCloud moved = transform_points(
        deform_canonical(canonical, cage, spec), pose.rotation, pose.translation);
    std::size_t k = 0;
    for (std::size_t i = 0; i < out.size(); ++i)
      if (labels[i] != 0) out[i] = moved[k++];
  }
  PoseRecord new_pose = pose;
  new_pose.size = deformed_size(cage, spec);
  return {PointCloud(std::move(out), labels), new_pose};
}

DeformationSpec sample_random_deformation(std::uint64_t seed,
                                          const DeformationRanges& ranges) {
  ranges.validate();
  Rng rng(seed);
  DeformationSpec spec;
  for (int a = 0; a < 3; ++a) spec.scale[a] = rng.uniform(ranges.scale_min, ranges.scale_max);
  if (rng.uniform() < ranges.taper_probability) {
    spec.taper_axis = rng.uniform() < 0.5 ? Axis::X : Axis::Z;
    spec.taper_factor = rng.uniform(ranges.taper_min, ranges.taper_max);
  }
  return spec;
}

}  // namespace posekit
