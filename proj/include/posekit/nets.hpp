#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "posekit/core_geom.hpp"
#include "posekit/decoupled_rotation.hpp"
#include "posekit/deform.hpp"
#include "posekit/gcn3d.hpp"
#include "posekit/io_formats.hpp"
#include "posekit/random.hpp"
#include "posekit/tensor.hpp"

namespace posekit {

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

struct ChamferResult {
  double loss = 0.0;
  std::vector<Vec3> grad;  // d loss / d pred
};

/// Sum over gt of the squared distance to the nearest pred point plus the
/// same sum the other way round (sums, not means).
ChamferResult chamfer_loss(std::span<const Vec3> pred, std::span<const Vec3> gt);

struct SegmentationLoss {
  double loss = 0.0;
  FeatureMatrix grad;  // N x 2
};

/// Mean softmax cross-entropy over points. Labels are 0 (background) or
/// non-zero (object); logits are N x 2.
SegmentationLoss segmentation_loss(const FeatureMatrix& logits, std::span<const int> labels);

struct CategoryStats {
  Vec3 mean_size = Vec3::Zero();
  std::size_t count = 0;
};

using CategoryStatsMap = std::map<std::string, CategoryStats>;

CategoryStatsMap compute_category_stats(std::span<const PoseRecord> poses);

struct ResidualTargets {
  Vec3 translation = Vec3::Zero();  // T - mean(object points)
  Vec3 size = Vec3::Zero();         // size - category mean size
};

ResidualTargets residual_targets(const PointCloud& object_points, const PoseRecord& gt,
                                 const CategoryStats& stats);

struct ResidualLoss {
  double loss = 0.0;
  Vec3 grad_t = Vec3::Zero();
  Vec3 grad_s = Vec3::Zero();
};

/// MSE(pred_t, t) + MSE(pred_s, s), each averaged over its 3 components.
ResidualLoss residual_loss(const Vec3& pred_t, const Vec3& pred_s,
                           const ResidualTargets& targets);

struct LossWeights {
  double lambda_seg = 0.001;
  double lambda_rec = 1.0;
  double lambda_rot = 0.001;
  double lambda_res = 1.0;

  void validate() const;
};

struct LossParts {
  double seg = 0.0;
  double rec = 0.0;
  double rot = 0.0;
  double res = 0.0;
};

double total_loss(const LossParts& parts, const LossWeights& weights);

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  long step = 0;  // number of completed steps
};

/// One bias-corrected Adam step over every parameter. State is sized on first
/// use. ShapeError when a gradient does not match its value or the state.
void adam_step(std::span<const ParamRef> params, AdamState& state, double lr,
               const AdamConfig& cfg = {});

struct TrainConfig {
  double learning_rate = 0.001;
  int halving_period = 10;  // epochs
  int epochs = 20;
  std::size_t batch_size = 1;
  std::uint64_t seed = 0;
  bool reconstruct_complete = false;  // target the complete model, not the observed part
  double lambda_r = 1.0;              // v2 weight for non-circular categories
  /// Each epoch every sample is rotated about its translation into the
  /// orientation of another randomly drawn training sample. Exact for
  /// clouds whose observed part does not depend on the viewpoint, such as
  /// the synthetic generator's.
  bool resample_rotations = true;

  void validate() const;
};

/// lr * 0.5^floor(epoch / halving_period)
double scheduled_learning_rate(const TrainConfig& cfg, int epoch);

// ---------------------------------------------------------------------------
// Toy model
// ---------------------------------------------------------------------------

struct ToyModelConfig {
  std::vector<std::string> categories;  // one-hot order
  std::size_t n_neighbors = 10;
  std::size_t kernel_size = 3;
  std::size_t hidden_channels = 16;  // first 3DGC layer
  std::size_t latent_channels = 64;  // second 3DGC layer
  std::size_t reconstruction_points = 256;
  std::size_t decoder_hidden = 128;
  std::size_t rotation_hidden = 64;
  std::size_t residual_hidden = 64;
  Aggregation aggregation = Aggregation::MaxMatch;
  /// For n-fold categories about e_z, v2 regresses lift_spin(v1, v2, n)
  /// instead of the canonical v2.
  bool lifted_spin = true;

  void validate() const;
  std::size_t category_index(const std::string& name) const;
};

/// y = W x + b with W stored row-major [out][in].
struct Linear {
  Tensor weight, bias, grad_weight, grad_bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out);
  std::size_t in() const { return weight.shape[1]; }
  std::size_t out() const { return weight.shape[0]; }
  void init(Rng& rng);
  Eigen::VectorXd forward(const Eigen::VectorXd& x) const;
  /// Accumulates parameter gradients and returns d/dx.
  Eigen::VectorXd backward(const Eigen::VectorXd& x, const Eigen::VectorXd& upstream);
};

/// Linear -> ReLU -> Linear.
struct Mlp {
  Linear first, second;

  Mlp() = default;
  Mlp(std::size_t in, std::size_t hidden, std::size_t out) : first(in, hidden), second(hidden, out) {}
  void init(Rng& rng) {
    first.init(rng);
    second.init(rng);
  }
};

/// Per-channel standardization with running statistics, softly bounded to
/// (-kBound, kBound) by a scaled tanh. Statistics are buffers: forward and
/// backward treat them as constants.
struct RunningNorm {
  Tensor mean, var;
  double momentum = 0.01;
  static constexpr double kEpsilon = 1e-12;
  static constexpr double kBound = 3.0;

  explicit RunningNorm(std::size_t n = 0) : mean({n}), var({n}) {
    std::fill(var.data.begin(), var.data.end(), 1.0);
  }
  std::size_t size() const { return mean.size(); }
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const;
  Eigen::VectorXd backward(const Eigen::VectorXd& x, const Eigen::VectorXd& upstream) const;
  void update(const Eigen::VectorXd& x);
  /// Population mean and variance of `samples`.
  void reset(std::span<const Eigen::VectorXd> samples);
};

/// log(mean neighbor distance / its median over the cloud) per point. Shift
/// and scale invariant; isolated clutter points stand out.
Eigen::VectorXd relative_spacing(std::span<const Vec3> points, const NeighborGraph& graph);

/// RMS distance of the points from their mean. The residual head works in
/// these units, which makes it scale-equivariant.
double residual_scale(std::span<const Vec3> object_points);

/// Centered-cloud statistics fed to the residual head, coordinates divided by
/// residual_scale: per-axis min and max, the 6 second and 10 third moments,
/// then log(residual_scale).
Eigen::VectorXd residual_features(std::span<const Vec3> object_points);
inline constexpr std::size_t kResidualFeatureCount = 23;

struct ToyOutput {
  FeatureMatrix seg_logits;          // N x 2
  std::vector<int> object_mask;      // 1 for points used by the object branches
  std::vector<Vec3> reconstruction;  // M points, relative to the object mean
  Vec3 v1 = Vec3::Zero();
  Vec3 v2 = Vec3::Zero();
  Vec3 t_residual = Vec3::Zero();
  Vec3 s_residual = Vec3::Zero();
  Vec3 object_mean = Vec3::Zero();
};

struct ToyGradients {
  FeatureMatrix seg_logits;
  std::vector<Vec3> reconstruction;
  Vec3 v1 = Vec3::Zero();
  Vec3 v2 = Vec3::Zero();
  Vec3 t_residual = Vec3::Zero();
  Vec3 s_residual = Vec3::Zero();
};

class ToyModel {
 public:
  struct Cache {
    bool valid = false;
    NeighborGraph graph;
    GcnLayer::Cache layer1, layer2;
    FeatureMatrix a1, a2;  // pre-activations
    FeatureMatrix f1, f2;
    Eigen::VectorXd spacing;
    std::size_t object_count = 0;
    std::vector<int> mask;
    Eigen::VectorXd latent_raw, z, rec_hidden, rot1_hidden, rot2_hidden;
    Eigen::VectorXd res_raw, res_input, res_hidden, rot_input;
    double res_scale = 1.0;
  };

  ToyModel() : ToyModel(ToyModelConfig{{"object"}}) {}
  explicit ToyModel(ToyModelConfig cfg);

  const ToyModelConfig& config() const { return cfg_; }
  void init_random(std::uint64_t seed);

  /// With `object_labels` the object branches use those labels (teacher
  /// forcing); otherwise they use the predicted segmentation. Throws
  /// InvalidParameter for clouds with at most n_neighbors points and
  /// SegmentationEmpty when no point is selected as object.
  ToyOutput forward(const PointCloud& scene, std::size_t category,
                    const std::vector<int>* object_labels = nullptr,
                    Cache* cache = nullptr) const;
  /// Accumulates parameter gradients (see parameters()).
  void backward(const Cache& cache, const ToyGradients& upstream);

  /// Trainable tensors with their gradient accumulators.
  std::vector<ParamRef> parameters();
  void zero_grad();
  /// Projects 3DGC kernel directions back onto the unit sphere.
  void renormalize();

  /// Raw latent and residual features of one sample, for the statistics warm-up.
  std::pair<Eigen::VectorXd, Eigen::VectorXd> normalizer_inputs(
      const PointCloud& scene, const std::vector<int>& object_labels) const;

  RunningNorm& latent_norm() { return latent_norm_; }
  RunningNorm& feature_norm() { return feature_norm_; }
  const RunningNorm& latent_norm() const { return latent_norm_; }
  const RunningNorm& feature_norm() const { return feature_norm_; }

  /// Every stored tensor, buffers included, by name (checkpoint layout).
  std::vector<std::pair<std::string, Tensor*>> named_tensors();
  std::vector<std::pair<std::string, const Tensor*>> named_tensors() const;

 private:
  Eigen::VectorXd one_hot(std::size_t category) const;

  ToyModelConfig cfg_;
  GcnLayer enc1_, enc2_;
  Tensor enc1_gdir_, enc1_gw_, enc1_gc_, enc2_gdir_, enc2_gw_, enc2_gc_;
  Linear seg_;
  Mlp rec_, rot1_, rot2_, res_;
  RunningNorm latent_norm_, feature_norm_;
};

// ---------------------------------------------------------------------------
// Training and inference
// ---------------------------------------------------------------------------

struct TrainSample {
  std::string id;
  PointCloud cloud;  // labelled scene
  PoseRecord pose;
  std::vector<Vec3> complete;  // optional complete model in the scene frame
};

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  LossParts parts;  // means over the epoch
  double total = 0.0;
};

struct TrainResult {
  ToyModel model;
  CategoryStatsMap stats;
  std::vector<EpochLog> log;
};

/// Trains a fresh model. When `augment` is set every sample is deformed by a
/// fresh random box-cage deformation before the loss. `progress`, if given,
/// is called after each epoch.
TrainResult train_toy(const std::vector<TrainSample>& dataset, const TrainConfig& cfg,
                      const LossWeights& weights, bool augment,
                      const ToyModelConfig& model_cfg = {},
                      const std::function<void(const EpochLog&)>& progress = {});

/// Per-sample forward pass, losses and backward with the model's gradients
/// accumulated. Exposed for gradient checks.
LossParts toy_sample_loss(ToyModel& model, const TrainSample& sample,
                          const CategoryStatsMap& stats, const LossWeights& weights,
                          const TrainConfig& cfg, bool accumulate_gradients,
                          ToyModel::Cache* cache = nullptr);

std::string format_training_log(const std::vector<EpochLog>& log);

struct PosePrediction {
  PoseRecord pose;
  bool used_fallback = false;  // v1-only recovery after degenerate vectors
};

PosePrediction predict_pose(const ToyModel& model, const PointCloud& scene,
                            const std::string& category, const CategoryStatsMap& stats,
                            const SymmetrySpec& symmetry = SymmetrySpec::none());

/// Rotation from predicted vectors; for circular symmetry v2 is replaced by a
/// fixed unit vector orthogonal to v1. With `lifted_spin`, v2 of a liftable
/// n-fold category is read as a lifted vector. Degenerate pairs fall back to
/// the same v1-only recovery and set `used_fallback`.
Rotation rotation_from_prediction(const Vec3& v1, const Vec3& v2, const SymmetrySpec& symmetry,
                                  bool* used_fallback = nullptr, bool lifted_spin = false);

void save_checkpoint(const ToyModel& model, const CategoryStatsMap& stats,
                     const std::filesystem::path& path);
struct Checkpoint {
  ToyModel model;
  CategoryStatsMap stats;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::string format_checkpoint(const ToyModel& model, const CategoryStatsMap& stats);
Checkpoint parse_checkpoint(std::string_view text, const std::string& source = "<checkpoint>");

/// Training configuration file: a JSON object with optional keys
///   "train":   {"learning_rate", "halving_period", "epochs", "batch_size", "seed",
///               "reconstruct_complete", "lambda_r", "resample_rotations"}
///   "weights": {"lambda_seg", "lambda_rec", "lambda_rot", "lambda_res"}
///   "model":   {"n_neighbors", "kernel_size", "hidden_channels", "latent_channels",
///               "reconstruction_points", "decoder_hidden", "rotation_hidden",
///               "residual_hidden", "aggregation": "max_match"|"sum_pairs",
///               "lifted_spin"}
/// Missing keys keep their defaults; unknown keys are a ParseError. Model
/// categories come from the data, not the file.
struct ToyRunConfig {
  TrainConfig train;
  LossWeights weights;
  ToyModelConfig model;
};
ToyRunConfig parse_toy_config(std::string_view text, const std::string& source = "<config>");
std::string format_toy_config(const ToyRunConfig& cfg);

/// Training samples for a generated dataset. With `complete_targets` each
/// sample also gets the complete surface of its shape (as many points as it
/// has object points) posed like the observed part; categories must name a
/// synthetic base.
std::vector<TrainSample> training_samples(const std::vector<DatasetSample>& data,
                                          bool complete_targets, std::uint64_t seed = 0);

}  // namespace posekit
