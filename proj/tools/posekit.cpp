// posekit command-line front end.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "posekit/decoupled_rotation.hpp"
#include "posekit/deform.hpp"
#include "posekit/error.hpp"
#include "posekit/io_formats.hpp"
#include "posekit/metrics.hpp"
#include "posekit/nets.hpp"

namespace fs = std::filesystem;
using namespace posekit;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitNumerical = 3;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DegenerateVectors:
    case ErrorKind::SegmentationEmpty:
      return kExitNumerical;
    default:
      return kExitInput;
  }
}

struct Globals {
  std::optional<std::uint64_t> seed;
  int threads = 1;
  bool verbose = false;

  // --seed, then POSEKIT_SEED, then `fallback`
  std::uint64_t resolve_seed(std::uint64_t fallback) const {
    if (seed) return *seed;
    if (const char* env = std::getenv("POSEKIT_SEED")) {
      std::uint64_t v = 0;
      const std::string s(env);
      const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || end != s.data() + s.size() || s.empty()) {
        throw Error(ErrorKind::InvalidParameter, "POSEKIT_SEED is not an unsigned integer: '" + s + "'");
      }
      return v;
    }
    return fallback;
  }
  bool has_seed() const { return seed || std::getenv("POSEKIT_SEED"); }
};

void log(const Globals& g, const std::string& msg) {
  if (g.verbose) std::cerr << msg << '\n';
}

double clean(double v) { return std::abs(v) < 5e-13 ? 0.0 : v; }

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string pred, gt, out;
  int iou_res = 64;
};

void run_eval(const EvalArgs& a) {
  EvalOptions opts;
  opts.iou_resolution = a.iou_res;
  const EvalReport report = evaluate_files(a.pred, a.gt, opts);
  if (!a.out.empty()) write_text_file(a.out, report.to_csv());
  std::cout << report.to_table();
}

struct AugmentArgs {
  std::string in, pose, spec, out, pose_out, id;
  bool random = false;
};

void run_augment(const AugmentArgs& a, const Globals& g) {
  const PointCloud cloud = read_pointcloud(a.in);
  if (!cloud.has_labels()) throw Error(ErrorKind::LabelRequired, a.in + ": labels required");
  const auto entries = read_poses(a.pose);
  const PoseEntry* entry = nullptr;
  if (a.id.empty()) {
    if (entries.size() != 1) {
      throw Error(ErrorKind::InvalidParameter,
                  a.pose + ": holds " + std::to_string(entries.size()) + " poses, pick one with --id");
    }
    entry = &entries.front();
  } else {
    for (const auto& e : entries) {
      if (e.id == a.id) entry = &e;
    }
    if (!entry) throw Error(ErrorKind::MissingGroundTruth, a.pose + ": no pose with id '" + a.id + "'");
  }
  const DeformationSpec spec = a.random ? sample_random_deformation(g.resolve_seed(0))
                                        : parse_deformation_json(read_text_file(a.spec), a.spec);
  const DeformedScene scene = deform_in_scene(cloud, entry->pose, BoxCage{entry->pose.size}, spec);
  write_pointcloud(scene.cloud, a.out);
  fs::path pose_out = a.pose_out;
  if (pose_out.empty()) pose_out = fs::path(a.out).replace_extension(".pose.json");
  write_poses({{entry->id, scene.pose, spec}}, pose_out);
  log(g, "wrote " + a.out + " and " + pose_out.string());
}

struct CanonArgs {
  std::string rotation, symmetry;
};

Rotation parse_rotation_arg(const std::string& text) {
  std::string s = text;
  for (char& c : s) {
    if (c == ',') c = ' ';
  }
  std::istringstream in(s);
  std::vector<double> v;
  std::string tok;
  while (in >> tok) {
    double x = 0.0;
    const auto [end, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), x);
    if (ec != std::errc() || end != tok.data() + tok.size()) {
      throw Error(ErrorKind::ParseError, "--rotation: not a number: '" + tok + "'");
    }
    v.push_back(x);
  }
  if (v.size() != 9) {
    throw Error(ErrorKind::ParseError, "--rotation: expected 9 values, got " + std::to_string(v.size()));
  }
  Mat3 m;
  m << v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8];
  if (!m.allFinite()) throw Error(ErrorKind::ParseError, "--rotation: non-finite value");
  if (m.determinant() < 0.0) throw Error(ErrorKind::InvalidRotation, "--rotation: negative determinant");
  // same acceptance rule as pose files: keep exact input, repair roundoff
  if (orthonormality_error(m) > kRotationRepairTolerance ||
      std::abs(m.determinant() - 1.0) > kRotationRepairTolerance) {
    throw Error(ErrorKind::InvalidRotation, "--rotation: not orthonormal");
  }
  if (orthonormality_error(m) <= 1e-12) return Rotation::from_matrix(m);
  return Rotation::nearest(m);
}

Vec3 parse_axis(const std::string& s) {
  if (s == "x") return Vec3::UnitX();
  if (s == "y") return Vec3::UnitY();
  if (s == "z") return Vec3::UnitZ();
  std::vector<double> v;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const std::size_t next = std::min(s.find(',', pos), s.size());
    double x = 0.0;
    const auto [end, ec] = std::from_chars(s.data() + pos, s.data() + next, x);
    if (ec != std::errc() || end != s.data() + next) {
      throw Error(ErrorKind::ParseError, "--symmetry: bad axis '" + s + "'");
    }
    v.push_back(x);
    pos = next + 1;
  }
  if (v.size() != 3) throw Error(ErrorKind::ParseError, "--symmetry: axis needs 3 components");
  const Vec3 axis(v[0], v[1], v[2]);
  if (!(axis.norm() > 1e-12) || !axis.allFinite()) {
    throw Error(ErrorKind::InvalidParameter, "--symmetry: axis must be non-zero");
  }
  return axis.normalized();
}

// kind[:n[:axis]], axis as x|y|z or "ax,ay,az"
SymmetrySpec parse_symmetry_arg(const std::string& text) {
  std::vector<std::string> parts;
  std::size_t pos = 0;
  for (int i = 0; i < 2; ++i) {
    const std::size_t c = text.find(':', pos);
    if (c == std::string::npos) break;
    parts.push_back(text.substr(pos, c - pos));
    pos = c + 1;
  }
  parts.push_back(text.substr(pos));
  SymmetrySpec sym;
  sym.kind = symmetry_kind_from_string(parts[0]);
  if (parts.size() > 1 && !parts[1].empty()) {
    const std::string& n = parts[1];
    const auto [end, ec] = std::from_chars(n.data(), n.data() + n.size(), sym.n);
    if (ec != std::errc() || end != n.data() + n.size()) {
      throw Error(ErrorKind::ParseError, "--symmetry: bad order '" + n + "'");
    }
  }
  if (parts.size() > 2) sym.axis = parse_axis(parts[2]);
  if (sym.kind != SymmetryKind::NFold && parts.size() < 2) sym.n = 1;
  sym.validate();
  return sym;
}

void run_canonicalize(const CanonArgs& a) {
  const Rotation R = parse_rotation_arg(a.rotation);
  const SymmetrySpec sym = parse_symmetry_arg(a.symmetry);
  const Rotation C = canonicalize_rotation(R, sym);
  const DecoupledRotation v = vectors_from_rotation(C);
  const Mat3& m = C.matrix();
  std::printf("R*:\n");
  for (int r = 0; r < 3; ++r) {
    std::printf("  %.9f %.9f %.9f\n", clean(m(r, 0)), clean(m(r, 1)), clean(m(r, 2)));
  }
  std::printf("v1: %.9f %.9f %.9f\n", clean(v.v1.x()), clean(v.v1.y()), clean(v.v1.z()));
  std::printf("v2: %.9f %.9f %.9f\n", clean(v.v2.x()), clean(v.v2.y()), clean(v.v2.z()));
  std::printf("distance_deg: %.9f\n", clean(geodesic_rotation_distance(C, Rotation())));
}

struct GenArgs {
  std::size_t count = 0;
  std::string base, out;
};

void run_gen(const GenArgs& a, const Globals& g) {
  SyntheticDatasetSpec spec;
  spec.count = a.count;
  spec.seed = g.resolve_seed(0);
  if (!a.base.empty()) {
    spec.bases.clear();
    std::size_t pos = 0;
    while (pos <= a.base.size()) {
      const std::size_t c = std::min(a.base.find(',', pos), a.base.size());
      spec.bases.push_back(shape_base_from_string(a.base.substr(pos, c - pos)));
      pos = c + 1;
    }
  }
  const auto data = generate_synthetic_dataset(spec);
  write_dataset(data, a.out);
  log(g, "wrote " + std::to_string(data.size()) + " samples to " + a.out);
}

struct ToyArgs {
  std::string data, config, checkpoint, log, out;
  bool augment = false;
};

void run_train(const ToyArgs& a, const Globals& g) {
  ToyRunConfig cfg = parse_toy_config(read_text_file(a.config), a.config);
  if (g.has_seed()) cfg.train.seed = g.resolve_seed(0);
  const auto data = read_dataset(a.data);
  if (data.empty()) throw Error(ErrorKind::EmptyInput, a.data + ": no samples");
  const auto samples = training_samples(data, cfg.train.reconstruct_complete, cfg.train.seed);
  cfg.model.categories.clear();
  for (const auto& s : samples) {
    if (std::find(cfg.model.categories.begin(), cfg.model.categories.end(), s.pose.category) ==
        cfg.model.categories.end()) {
      cfg.model.categories.push_back(s.pose.category);
    }
  }
  std::sort(cfg.model.categories.begin(), cfg.model.categories.end());
  const TrainResult result =
      train_toy(samples, cfg.train, cfg.weights, a.augment, cfg.model, [&](const EpochLog& e) {
        if (!g.verbose) return;
        char buf[160];
        std::snprintf(buf, sizeof buf, "epoch %d lr %.6g loss %.6g", e.epoch, e.lr, e.total);
        log(g, buf);
      });
  save_checkpoint(result.model, result.stats, a.checkpoint);
  const fs::path log_path = a.log.empty() ? fs::path(a.checkpoint + ".log.csv") : fs::path(a.log);
  write_text_file(log_path, format_training_log(result.log));
}

void run_infer(const ToyArgs& a, const Globals& g) {
  if (!a.config.empty()) parse_toy_config(read_text_file(a.config), a.config);
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const auto data = read_dataset(a.data);
  std::vector<PoseEntry> preds;
  preds.reserve(data.size());
  std::size_t fallbacks = 0;
  for (const auto& d : data) {
    const PoseRecord& ref = d.sample.pose;
    PosePrediction p;
    try {
      p = predict_pose(ck.model, d.sample.cloud, ref.category, ck.stats, ref.symmetry);
    } catch (const Error& e) {
      throw Error(e.kind(), d.id + ": " + e.what());
    }
    fallbacks += p.used_fallback;
    preds.push_back({d.id, p.pose, std::nullopt});
  }
  write_poses(preds, a.out);
  log(g, "wrote " + std::to_string(preds.size()) + " predictions (" + std::to_string(fallbacks) +
             " v1-only) to " + a.out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"posekit: category-level pose estimation toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  app.footer(
      "Exit codes: 0 success, 2 input error (bad flags, unreadable or invalid files),\n"
      "3 numerical failure (degenerate rotation vectors, empty segmentation).\n"
      "POSEKIT_SEED is used when --seed is not given.");

  Globals g;
  app.add_option("--seed", g.seed, "random seed (fallback: POSEKIT_SEED, then 0)");
  app.add_option("--threads", g.threads, "worker threads; work currently runs on one")
      ->check(CLI::PositiveNumber);
  app.add_flag("--verbose", g.verbose, "progress on stderr");

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "score predicted poses against ground truth");
  c_eval->add_option("--pred", eval.pred, "predicted pose file")->required();
  c_eval->add_option("--gt", eval.gt, "ground-truth pose file")->required();
  c_eval->add_option("--out", eval.out, "CSV report path");
  c_eval->add_option("--iou-res", eval.iou_res, "IoU grid resolution")
      ->check(CLI::PositiveNumber);

  AugmentArgs aug;
  auto* c_aug = app.add_subcommand("augment", "box-cage deformation of a labelled cloud");
  c_aug->add_option("--in", aug.in, "input cloud (.ply or .xyz)")->required();
  c_aug->add_option("--pose", aug.pose, "pose file for the cloud")->required();
  c_aug->add_option("--id", aug.id, "pose id when the file holds several");
  auto* o_spec = c_aug->add_option("--spec", aug.spec, "deformation spec JSON");
  auto* o_random = c_aug->add_flag("--random", aug.random, "random deformation from --seed");
  o_spec->excludes(o_random);
  c_aug->add_option("--out", aug.out, "output cloud")->required();
  c_aug->add_option("--pose-out", aug.pose_out, "output pose file (default: <out>.pose.json)");

  CanonArgs canon;
  auto* c_canon = app.add_subcommand("canonicalize", "canonical member of a rotation's symmetry group");
  c_canon->add_option("--rotation", canon.rotation, "9 row-major values")->required();
  c_canon->add_option("--symmetry", canon.symmetry, "kind[:n[:axis]], axis x|y|z or ax,ay,az")
      ->required();

  GenArgs gen;
  auto* c_gen = app.add_subcommand("gen-synthetic", "write a synthetic dataset");
  c_gen->add_option("--count", gen.count, "number of samples")->required()->check(CLI::PositiveNumber);
  c_gen->add_option("--base", gen.base, "box|cylinder|tapered_box, comma-separated (default: all)");
  c_gen->add_option("--out", gen.out, "output directory")->required();

  ToyArgs train;
  auto* c_train = app.add_subcommand("train-toy", "train the toy model");
  c_train->add_option("--data", train.data, "dataset directory")->required();
  c_train->add_option("--config", train.config, "training config JSON")->required();
  c_train->add_option("--checkpoint", train.checkpoint, "checkpoint to write")->required();
  c_train->add_option("--log", train.log, "loss log CSV (default: <checkpoint>.log.csv)");
  c_train->add_flag("--augment", train.augment, "box-cage augmentation");

  ToyArgs infer;
  auto* c_infer = app.add_subcommand("infer-toy", "predict poses with a trained checkpoint");
  c_infer->add_option("--data", infer.data, "dataset directory")->required();
  c_infer->add_option("--checkpoint", infer.checkpoint, "trained checkpoint")->required();
  c_infer->add_option("--out", infer.out, "predicted pose file")->required();
  c_infer->add_option("--config", infer.config, "training config (validated only)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return kExitInput;
  }

  try {
    if (c_aug->parsed() && aug.random != aug.spec.empty()) {
      throw Error(ErrorKind::InvalidParameter, "augment needs exactly one of --spec or --random");
    }
    if (c_eval->parsed()) run_eval(eval);
    if (c_aug->parsed()) run_augment(aug, g);
    if (c_canon->parsed()) run_canonicalize(canon);
    if (c_gen->parsed()) run_gen(gen, g);
    if (c_train->parsed()) run_train(train, g);
    if (c_infer->parsed()) run_infer(infer, g);
  } catch (const Error& e) {
    std::cerr << "posekit: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "posekit: " << e.what() << '\n';
    return kExitInput;
  }
  return 0;
}
