#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "posekit/core_geom.hpp"
#include "posekit/io_formats.hpp"

namespace posekit {

/// Volume IoU of two oriented boxes. Boxes sharing a rotation (within 1e-12)
/// use the closed form. Otherwise a resolution^2 grid of lines parallel to x
/// spans the union's axis-aligned bound and each line's overlap is exact, so
/// the error is O(1/resolution) from the y and z boundaries only.
double iou_3d(const OrientedBox& a, const OrientedBox& b, int resolution = 64);

/// IoU after resolving the ground truth's symmetry: n-fold takes the best
/// group member, circular re-spins the prediction to the ground truth.
double symmetric_iou_3d(const PoseRecord& pred, const PoseRecord& gt, int resolution = 64);

/// Strict thresholds on symmetry-aware rotation error and translation.
bool pose_accuracy(const PoseRecord& pred, const PoseRecord& gt, double n_deg, double m_cm);

/// ADD (symmetric = false) or ADD-S, in the units of the model points.
double add_metric(const PointCloud& model_points, const PoseRecord& pred, const PoseRecord& gt,
                  bool symmetric);
/// Largest pairwise distance of the model points.
double model_diameter(const PointCloud& model_points);
/// ADD(-S) acceptance: error below 10% of the model diameter.
bool add_accepted(double add, double diameter);

/// Per-category mean Chamfer distance, reported in units of 1e-3 m^2.
std::map<std::string, double> chamfer_report(std::span<const PointCloud> pred,
                                             std::span<const PointCloud> gt,
                                             std::span<const std::string> categories);

struct CategoryMetrics {
  std::string category;
  std::size_t count = 0;
  double iou25 = 0.0, iou50 = 0.0, iou75 = 0.0;
  double acc_5d5cm = 0.0, acc_10d5cm = 0.0, acc_10d10cm = 0.0;
  double mean_rot_deg = 0.0, mean_trans_m = 0.0;
  double chamfer_e3 = 0.0;  // NaN when no Chamfer data was supplied
};

struct EvalReport {
  std::vector<CategoryMetrics> categories;  // sorted by name
  CategoryMetrics average;                  // unweighted mean over categories

  std::string to_csv() const;
  std::string to_table() const;
};

inline constexpr const char* kEvalCsvHeader =
    "category,iou25,iou50,iou75,acc_5d5cm,acc_10d5cm,acc_10d10cm,mean_rot_deg,mean_trans_m,"
    "chamfer_e3";

struct EvalOptions {
  int iou_resolution = 64;
  /// Optional per-instance Chamfer distance (m^2) keyed by id.
  std::map<std::string, double> chamfer_by_id;
};

/// Every prediction must have a ground-truth entry with the same id
/// (MissingGroundTruth lists the ones that do not).
EvalReport evaluate(const std::vector<PoseEntry>& pred, const std::vector<PoseEntry>& gt,
                    const EvalOptions& options = {});
EvalReport evaluate_files(const std::filesystem::path& pred_file,
                          const std::filesystem::path& gt_file, const EvalOptions& options = {});

}  // namespace posekit
