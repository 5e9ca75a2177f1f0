#include "posekit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "posekit/decoupled_rotation.hpp"
#include "posekit/error.hpp"
#include "posekit/nets.hpp"

namespace posekit {

namespace {

bool same_rotation(const Rotation& a, const Rotation& b) {
  return (a.matrix() - b.matrix()).cwiseAbs().maxCoeff() <= 1e-12;
}

double volume(const OrientedBox& b) { return b.extents.prod(); }

// Overlap of two boxes expressed in a shared frame R.
double aligned_iou(const OrientedBox& a, const OrientedBox& b) {
  const Mat3 Rt = a.rotation.matrix().transpose();
  const Vec3 ca = Rt * a.center, cb = Rt * b.center;
  double inter = 1.0;
  for (int k = 0; k < 3; ++k) {
    const double lo = std::max(ca[k] - a.extents[k] / 2, cb[k] - b.extents[k] / 2);
    const double hi = std::min(ca[k] + a.extents[k] / 2, cb[k] + b.extents[k] / 2);
    inter *= std::max(0.0, hi - lo);
  }
  const double uni = volume(a) + volume(b) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

// Parameter interval where the line p0 + t e_x lies inside the box.
struct Slab {
  Mat3 Rt;
  Vec3 center, half;
  std::pair<double, double> clip(const Vec3& p0) const {
    const Vec3 q = Rt * (p0 - center), d = Rt.col(0);
    double lo = -std::numeric_limits<double>::infinity(), hi = -lo;
    for (int k = 0; k < 3; ++k) {
      if (d[k] == 0.0) {
        if (std::abs(q[k]) > half[k]) return {0.0, 0.0};
        continue;
      }
      double t0 = (-half[k] - q[k]) / d[k], t1 = (half[k] - q[k]) / d[k];
      if (t0 > t1) std::swap(t0, t1);
      lo = std::max(lo, t0);
      hi = std::min(hi, t1);
    }
    return hi > lo ? std::pair{lo, hi} : std::pair{0.0, 0.0};
  }
};

// Grid over the y-z cross-section of the union bound; each grid line is
// integrated exactly along x.
double sampled_iou(const OrientedBox& a, const OrientedBox& b, int res) {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  for (const auto* box : {&a, &b}) {
    for (const Vec3& c : oriented_box_corners(*box)) {
      lo = lo.cwiseMin(c);
      hi = hi.cwiseMax(c);
    }
  }
  const Slab sa{a.rotation.matrix().transpose(), a.center, a.extents / 2};
  const Slab sb{b.rotation.matrix().transpose(), b.center, b.extents / 2};
  const double dy = (hi.y() - lo.y()) / res, dz = (hi.z() - lo.z()) / res;
  double len_a = 0.0, len_b = 0.0, both = 0.0;
  for (int j = 0; j < res; ++j) {
    for (int k = 0; k < res; ++k) {
      const Vec3 p0(0.0, lo.y() + (j + 0.5) * dy, lo.z() + (k + 0.5) * dz);
      const auto [a0, a1] = sa.clip(p0);
      const auto [b0, b1] = sb.clip(p0);
      len_a += a1 - a0;
      len_b += b1 - b0;
      both += std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
    }
  }
  const double uni = len_a + len_b - both;
  return uni > 0.0 ? both / uni : 0.0;
}

double nan() { return std::numeric_limits<double>::quiet_NaN(); }

}  // namespace

double iou_3d(const OrientedBox& a, const OrientedBox& b, int resolution) {
  if (resolution < 32) throw Error(ErrorKind::InvalidParameter, "iou_3d: resolution must be >= 32");
  a.validate();
  b.validate();
  if (same_rotation(a.rotation, b.rotation)) return aligned_iou(a, b);
  return sampled_iou(a, b, resolution);
}

double symmetric_iou_3d(const PoseRecord& pred, const PoseRecord& gt, int resolution) {
  OrientedBox p = OrientedBox::from_pose(pred);
  const OrientedBox g = OrientedBox::from_pose(gt);
  switch (gt.symmetry.kind) {
    case SymmetryKind::None:
      return iou_3d(p, g, resolution);
    case SymmetryKind::Circular: {
      const Vec3 ga = gt.rotation.matrix() * gt.symmetry.axis;
      const Vec3 pa = pred.rotation.matrix() * gt.symmetry.axis;
      const Mat3 align = Eigen::Quaterniond::FromTwoVectors(ga, pa).toRotationMatrix();
      p.rotation = Rotation::nearest(align * gt.rotation.matrix());
      return iou_3d(p, g, resolution);
    }
    case SymmetryKind::NFold: {
      double best = 0.0;
      for (const Rotation& r : symmetry_group(gt.rotation, gt.symmetry)) {
        OrientedBox gr = g;
        gr.rotation = r;
        best = std::max(best, iou_3d(p, gr, resolution));
      }
      return best;
    }
  }
  return 0.0;
}

bool pose_accuracy(const PoseRecord& pred, const PoseRecord& gt, double n_deg, double m_cm) {
  if (pred.category != gt.category) {
    throw Error(ErrorKind::CategoryMismatch,
                "prediction category '" + pred.category + "' vs ground truth '" + gt.category + "'");
  }
  const double rot = symmetry_aware_rotation_error(pred.rotation, gt.rotation, gt.symmetry);
  const double trans = (pred.translation - gt.translation).norm();
  return rot < n_deg && trans < m_cm / 100.0;
}

double add_metric(const PointCloud& model_points, const PoseRecord& pred, const PoseRecord& gt,
                  bool symmetric) {
  if (model_points.empty()) throw Error(ErrorKind::EmptyInput, "add_metric: empty model");
  const std::vector<Vec3> p = transform_points(model_points, pred.rotation, pred.translation).points();
  const std::vector<Vec3> g = transform_points(model_points, gt.rotation, gt.translation).points();
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!symmetric) {
      sum += (p[i] - g[i]).norm();
      continue;
    }
    double best = std::numeric_limits<double>::infinity();
    for (const Vec3& q : g) best = std::min(best, (p[i] - q).squaredNorm());
    sum += std::sqrt(best);
  }
  return sum / static_cast<double>(p.size());
}

double model_diameter(const PointCloud& model_points) {
  double d = 0.0;
  const auto& pts = model_points.points();
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j) d = std::max(d, (pts[i] - pts[j]).squaredNorm());
  return std::sqrt(d);
}

bool add_accepted(double add, double diameter) { return add < 0.1 * diameter; }

std::map<std::string, double> chamfer_report(std::span<const PointCloud> pred,
                                             std::span<const PointCloud> gt,
                                             std::span<const std::string> categories) {
  if (pred.size() != gt.size() || pred.size() != categories.size()) {
    throw Error(ErrorKind::ShapeError, "chamfer_report: pred, gt and categories differ in length");
  }
  std::map<std::string, std::pair<double, std::size_t>> acc;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    auto& [sum, n] = acc[categories[i]];
    sum += chamfer_loss(pred[i].points(), gt[i].points()).loss;
    ++n;
  }
  std::map<std::string, double> out;
  for (const auto& [cat, v] : acc) out[cat] = 1e3 * v.first / static_cast<double>(v.second);
  return out;
}

EvalReport evaluate(const std::vector<PoseEntry>& pred, const std::vector<PoseEntry>& gt,
                    const EvalOptions& options) {
  std::map<std::string, const PoseEntry*> by_id;
  for (const auto& g : gt) by_id[g.id] = &g;
  std::vector<std::string> missing;
  for (const auto& p : pred) {
    if (!by_id.count(p.id)) missing.push_back(p.id);
  }
  if (!missing.empty() || pred.empty()) {
    std::string list;
    for (const auto& id : missing) list += (list.empty() ? "" : ", ") + id;
    throw Error(ErrorKind::MissingGroundTruth,
                pred.empty() ? "no predictions to evaluate" : "no ground truth for ids: " + list);
  }

  struct Acc {
    std::size_t n = 0, iou[3] = {0, 0, 0}, acc[3] = {0, 0, 0};
    double rot = 0.0, trans = 0.0, chamfer = 0.0;
    std::size_t chamfer_n = 0;
  };
  std::map<std::string, Acc> per;
  for (const auto& p : pred) {
    const PoseRecord& g = by_id.at(p.id)->pose;
    if (p.pose.category != g.category) {
      throw Error(ErrorKind::CategoryMismatch, "id '" + p.id + "': prediction category '" +
                                                   p.pose.category + "' vs ground truth '" +
                                                   g.category + "'");
    }
    Acc& a = per[g.category];
    ++a.n;
    const double iou = symmetric_iou_3d(p.pose, g, options.iou_resolution);
    a.iou[0] += iou > 0.25;
    a.iou[1] += iou > 0.50;
    a.iou[2] += iou > 0.75;
    a.acc[0] += pose_accuracy(p.pose, g, 5, 5);
    a.acc[1] += pose_accuracy(p.pose, g, 10, 5);
    a.acc[2] += pose_accuracy(p.pose, g, 10, 10);
    a.rot += symmetry_aware_rotation_error(p.pose.rotation, g.rotation, g.symmetry);
    a.trans += (p.pose.translation - g.translation).norm();
    if (auto it = options.chamfer_by_id.find(p.id); it != options.chamfer_by_id.end()) {
      a.chamfer += it->second;
      ++a.chamfer_n;
    }
  }

  EvalReport report;
  CategoryMetrics& avg = report.average;
  avg.category = "average";
  std::size_t chamfer_cats = 0;
  for (const auto& [cat, a] : per) {
    const double n = static_cast<double>(a.n);
    CategoryMetrics m;
    m.category = cat;
    m.count = a.n;
    m.iou25 = a.iou[0] / n;
    m.iou50 = a.iou[1] / n;
    m.iou75 = a.iou[2] / n;
    m.acc_5d5cm = a.acc[0] / n;
    m.acc_10d5cm = a.acc[1] / n;
    m.acc_10d10cm = a.acc[2] / n;
    m.mean_rot_deg = a.rot / n;
    m.mean_trans_m = a.trans / n;
    m.chamfer_e3 = a.chamfer_n ? 1e3 * a.chamfer / static_cast<double>(a.chamfer_n) : nan();
    report.categories.push_back(m);

    avg.count += m.count;
    avg.iou25 += m.iou25;
    avg.iou50 += m.iou50;
    avg.iou75 += m.iou75;
    avg.acc_5d5cm += m.acc_5d5cm;
    avg.acc_10d5cm += m.acc_10d5cm;
    avg.acc_10d10cm += m.acc_10d10cm;
    avg.mean_rot_deg += m.mean_rot_deg;
    avg.mean_trans_m += m.mean_trans_m;
    if (a.chamfer_n) {
      avg.chamfer_e3 += m.chamfer_e3;
      ++chamfer_cats;
    }
  }
  const double k = static_cast<double>(report.categories.size());
  for (double* v : {&avg.iou25, &avg.iou50, &avg.iou75, &avg.acc_5d5cm, &avg.acc_10d5cm,
                    &avg.acc_10d10cm, &avg.mean_rot_deg, &avg.mean_trans_m}) {
    *v /= k;
  }
  avg.chamfer_e3 = chamfer_cats ? avg.chamfer_e3 / static_cast<double>(chamfer_cats) : nan();
  return report;
}

EvalReport evaluate_files(const std::filesystem::path& pred_file,
                          const std::filesystem::path& gt_file, const EvalOptions& options) {
  return evaluate(read_poses(pred_file), read_poses(gt_file), options);
}

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::vector<std::string> row_cells(const CategoryMetrics& m) {
  return {m.category,       num(m.iou25),       num(m.iou50),        num(m.iou75),
          num(m.acc_5d5cm), num(m.acc_10d5cm),  num(m.acc_10d10cm),  num(m.mean_rot_deg),
          num(m.mean_trans_m), num(m.chamfer_e3)};
}

}  // namespace

std::string EvalReport::to_csv() const {
  std::string out = std::string(kEvalCsvHeader) + "\n";
  auto emit = [&](const CategoryMetrics& m) {
    const auto cells = row_cells(m);
    for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "," : "") + cells[i];
    out += "\n";
  };
  for (const auto& m : categories) emit(m);
  emit(average);
  return out;
}

std::string EvalReport::to_table() const {
  std::vector<std::vector<std::string>> rows;
  {
    std::vector<std::string> head;
    std::stringstream ss(kEvalCsvHeader);
    for (std::string cell; std::getline(ss, cell, ',');) head.push_back(cell);
    rows.push_back(head);
  }
  for (const auto& m : categories) rows.push_back(row_cells(m));
  rows.push_back(row_cells(average));
  std::vector<std::size_t> width(rows[0].size(), 0);
  for (const auto& r : rows)
    for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
  std::string out;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t i = 0; i < rows[r].size(); ++i) {
      const std::string& cell = rows[r][i];
      const std::string pad(width[i] - cell.size(), ' ');
      if (i > 0) out += "  ";
      out += i == 0 ? cell + pad : pad + cell;  // names left, numbers right
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    out += "\n";
    if (r == 0 || r + 2 == rows.size()) {
      std::size_t total = 0;
      for (auto w : width) total += w;
      out += std::string(total + 2 * (width.size() - 1), '-') + "\n";
    }
  }
  return out;
}

}  // namespace posekit
