#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "posekit/core_geom.hpp"
#include "posekit/deform.hpp"
#include "posekit/random.hpp"

namespace posekit {

// ---------------------------------------------------------------------------
// Point clouds
//
// ASCII PLY ("format ascii 1.0", vertex element with float x y z and an
// optional integer label property) or whitespace-separated XYZ text with an
// optional fourth label column. The format is picked from the extension.
// ---------------------------------------------------------------------------

PointCloud read_pointcloud(const std::filesystem::path& path);
void write_pointcloud(const PointCloud& cloud, const std::filesystem::path& path);

PointCloud parse_ply(std::string_view text, const std::string& source = "<ply>");
PointCloud parse_xyz(std::string_view text, const std::string& source = "<xyz>");
std::string format_ply(const PointCloud& cloud);
std::string format_xyz(const PointCloud& cloud);

// ---------------------------------------------------------------------------
// Pose files: a JSON array of
//   {"id", "category", "rotation": [9], "translation": [3], "size": [3],
//    "symmetry": {"kind": "none"|"circular"|"n_fold", "n", "axis": [3]},
//    optional "deformation": {"scale": [3], "taper_axis": "x"|"z"|null,
//                             "taper_factor"}}
// ---------------------------------------------------------------------------

struct PoseEntry {
  std::string id;
  PoseRecord pose;
  std::optional<DeformationSpec> deformation;
};

/// Rotations further than this from orthonormal are rejected on load.
inline constexpr double kRotationRepairTolerance = 1e-4;

std::vector<PoseEntry> read_poses(const std::filesystem::path& path);
void write_poses(const std::vector<PoseEntry>& entries,
                 const std::filesystem::path& path);
std::vector<PoseEntry> parse_poses(std::string_view text,
                                   const std::string& source = "<poses>");
std::string format_poses(const std::vector<PoseEntry>& entries);

DeformationSpec parse_deformation_json(std::string_view text,
                                       const std::string& source = "<spec>");

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

// ---------------------------------------------------------------------------
// Synthetic shapes
// ---------------------------------------------------------------------------

enum class ShapeBase { Box, Cylinder, TaperedBox };

std::string_view to_string(ShapeBase base);
ShapeBase shape_base_from_string(std::string_view s);
/// Symmetry of the visible (z >= 0) part of each base.
SymmetrySpec default_symmetry(ShapeBase base);
/// Reference extents used by the dataset generator.
Vec3 default_extents(ShapeBase base);

/// Top/bottom x-width ratio of the tapered box base (height axis z).
inline constexpr double kTaperedBoxFactor = 1.6;

struct SyntheticShapeSpec {
  ShapeBase base = ShapeBase::Box;
  Vec3 extents = Vec3(0.16, 0.10, 0.12);  // bounding extents, m
  std::size_t points_per_sample = 128;
  std::size_t background_points = 32;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticSample {
  PointCloud cloud;  // object points (label 1) first, then clutter (label 0)
  PoseRecord pose;   // ground truth; size = spec.extents
};

/// Surface points of the base shape restricted to the half facing a viewer
/// on canonical +Z (z >= 0), no noise, canonical frame.
std::vector<Vec3> sample_visible_surface(ShapeBase base, const Vec3& extents,
                                         std::size_t count, Rng& rng);
/// Same, over the complete surface.
std::vector<Vec3> sample_complete_surface(ShapeBase base, const Vec3& extents,
                                          std::size_t count, Rng& rng);

SyntheticSample generate_synthetic_sample(const SyntheticShapeSpec& spec,
                                          const PoseRecord& pose);

/// Rotation distribution of the generated datasets: the symmetry axis is
/// tilted away from camera "up" by at most `max_tilt_deg` and the spin about
/// it is uniform.
struct PoseDistribution {
  double max_tilt_deg = 60.0;
  Vec3 translation_min = Vec3(-0.3, -0.3, 0.6);
  Vec3 translation_max = Vec3(0.3, 0.3, 1.2);

  Rotation sample_rotation(Rng& rng) const;
  Vec3 sample_translation(Rng& rng) const;
};

struct SyntheticDatasetSpec {
  std::vector<ShapeBase> bases = {ShapeBase::Box, ShapeBase::Cylinder,
                                  ShapeBase::TaperedBox};
  std::size_t count = 0;
  std::uint64_t seed = 0;
  std::size_t points_per_sample = 128;
  std::size_t background_points = 32;
  double noise_sigma = 0.002;
  double extent_jitter = 0.15;  // relative, uniform +-
  PoseDistribution poses;
};

struct DatasetSample {
  std::string id;
  SyntheticSample sample;
};

/// Samples cycle through `bases`; ids are "<prefix><index>".
std::vector<DatasetSample> generate_synthetic_dataset(
    const SyntheticDatasetSpec& spec, const std::string& id_prefix = "s");

/// DIR/manifest.json, DIR/poses.json and one PLY per sample.
void write_dataset(const std::vector<DatasetSample>& samples,
                   const std::filesystem::path& dir);
std::vector<DatasetSample> read_dataset(const std::filesystem::path& dir);

}  // namespace posekit
