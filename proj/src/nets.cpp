#include "posekit/nets.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>
#include <type_traits>

#include <json.hpp>

#include "posekit/error.hpp"
#include "posekit/io_formats.hpp"

namespace posekit {

using nlohmann::json;

namespace {

using VecMap = Eigen::Map<Eigen::VectorXd>;
using CVecMap = Eigen::Map<const Eigen::VectorXd>;
using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using CMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

Eigen::VectorXd relu(const Eigen::VectorXd& x) { return x.cwiseMax(0.0); }

Eigen::VectorXd relu_backward(const Eigen::VectorXd& pre, const Eigen::VectorXd& upstream) {
  return (pre.array() > 0.0).select(upstream, 0.0);
}

Eigen::VectorXd mlp_forward(const Mlp& mlp, const Eigen::VectorXd& x, Eigen::VectorXd* hidden) {
  Eigen::VectorXd h = mlp.first.forward(x);
  Eigen::VectorXd y = mlp.second.forward(relu(h));
  if (hidden) *hidden = std::move(h);
  return y;
}

Eigen::VectorXd mlp_backward(Mlp& mlp, const Eigen::VectorXd& x, const Eigen::VectorXd& hidden,
                             const Eigen::VectorXd& upstream) {
  const Eigen::VectorXd dh = mlp.second.backward(relu(hidden), upstream);
  return mlp.first.backward(x, relu_backward(hidden, dh));
}

void add_into(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Vec3 head3(const Eigen::VectorXd& v, Eigen::Index offset = 0) {
  return {v[offset], v[offset + 1], v[offset + 2]};
}

std::string_view aggregation_name(Aggregation a) {
  return a == Aggregation::MaxMatch ? "max_match" : "sum_pairs";
}

Aggregation aggregation_from_name(const std::string& s) {
  if (s == "max_match") return Aggregation::MaxMatch;
  if (s == "sum_pairs") return Aggregation::SumPairs;
  throw Error(ErrorKind::ParseError, "unknown aggregation '" + s + "'");
}

// splitmix64 finalizer; derives independent per-(epoch, sample) seeds
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

// ---------------------------------------------------------------------------
// Losses

ChamferResult chamfer_loss(std::span<const Vec3> pred, std::span<const Vec3> gt) {
  if (pred.empty() || gt.empty()) throw Error(ErrorKind::EmptyInput, "chamfer_loss: empty cloud");
  ChamferResult r;
  r.grad.assign(pred.size(), Vec3::Zero());
  // One-way sum over `from`, nearest in `to`; ties go to the lower index.
  auto one_way = [](std::span<const Vec3> from, std::span<const Vec3> to,
                    std::vector<std::size_t>& nearest) {
    double sum = 0.0;
    nearest.resize(from.size());
    for (std::size_t i = 0; i < from.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < to.size(); ++j) {
        const double d = (from[i] - to[j]).squaredNorm();
        if (d < best) best = d, nearest[i] = j;
      }
      sum += best;
    }
    return sum;
  };
  std::vector<std::size_t> gt_nn, pred_nn;
  const double a = one_way(gt, pred, gt_nn);
  const double b = one_way(pred, gt, pred_nn);
  // a + b == b + a exactly, so chamfer(A, B) == chamfer(B, A) bitwise
  r.loss = a + b;
  for (std::size_t i = 0; i < gt.size(); ++i) r.grad[gt_nn[i]] += 2.0 * (pred[gt_nn[i]] - gt[i]);
  for (std::size_t j = 0; j < pred.size(); ++j) r.grad[j] += 2.0 * (pred[j] - gt[pred_nn[j]]);
  return r;
}

SegmentationLoss segmentation_loss(const FeatureMatrix& logits, std::span<const int> labels) {
  if (logits.cols() != 2 || static_cast<std::size_t>(logits.rows()) != labels.size()) {
    throw Error(ErrorKind::ShapeError, "segmentation_loss: logits must be N x 2 with N labels");
  }
  if (labels.empty()) throw Error(ErrorKind::EmptyInput, "segmentation_loss: no points");
  SegmentationLoss r;
  r.grad.resize(logits.rows(), 2);
  const double inv_n = 1.0 / static_cast<double>(labels.size());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double a = logits(i, 0), b = logits(i, 1);
    const double m = std::max(a, b);
    const double lse = m + std::log(std::exp(a - m) + std::exp(b - m));
    const int c = labels[static_cast<std::size_t>(i)] != 0 ? 1 : 0;
    r.loss += (lse - logits(i, c)) * inv_n;
    for (int k = 0; k < 2; ++k) {
      r.grad(i, k) = (std::exp(logits(i, k) - lse) - (k == c ? 1.0 : 0.0)) * inv_n;
    }
  }
  return r;
}

CategoryStatsMap compute_category_stats(std::span<const PoseRecord> poses) {
  if (poses.empty()) throw Error(ErrorKind::EmptyInput, "compute_category_stats: no poses");
  CategoryStatsMap out;
  for (const auto& p : poses) {
    auto& s = out[p.category];
    s.mean_size += p.size;
    ++s.count;
  }
  for (auto& [name, s] : out) s.mean_size /= static_cast<double>(s.count);
  return out;
}

ResidualTargets residual_targets(const PointCloud& object_points, const PoseRecord& gt,
                                 const CategoryStats& stats) {
  if (object_points.empty()) throw Error(ErrorKind::EmptyInput, "residual_targets: no object points");
  return {gt.translation - object_points.centroid(), gt.size - stats.mean_size};
}

ResidualLoss residual_loss(const Vec3& pred_t, const Vec3& pred_s, const ResidualTargets& t) {
  const Vec3 dt = pred_t - t.translation;
  const Vec3 ds = pred_s - t.size;
  return {dt.squaredNorm() / 3.0 + ds.squaredNorm() / 3.0, 2.0 * dt / 3.0, 2.0 * ds / 3.0};
}

void LossWeights::validate() const {
  for (double w : {lambda_seg, lambda_rec, lambda_rot, lambda_res}) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw Error(ErrorKind::InvalidParameter, "loss weights must be finite and >= 0");
    }
  }
}

double total_loss(const LossParts& p, const LossWeights& w) {
  return w.lambda_seg * p.seg + w.lambda_rec * p.rec + w.lambda_rot * p.rot + w.lambda_res * p.res;
}

// ---------------------------------------------------------------------------
// Optimizer

void adam_step(std::span<const ParamRef> params, AdamState& state, double lr,
               const AdamConfig& cfg) {
  if (state.m.empty() && state.step == 0) {
    for (const auto& p : params) {
      state.m.emplace_back(p.value->shape);
      state.v.emplace_back(p.value->shape);
    }
  }
  if (state.m.size() != params.size()) {
    throw Error(ErrorKind::ShapeError, "adam_step: state does not match parameter list");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& p = params[k];
    if (p.grad->size() != p.value->size() || state.m[k].size() != p.value->size()) {
      throw Error(ErrorKind::ShapeError, "adam_step: shape mismatch for '" + p.name + "'");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& w = *params[k].value;
    const Tensor& g = *params[k].grad;
    Tensor& m = state.m[k];
    Tensor& v = state.v[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.epsilon);
    }
  }
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || halving_period <= 0 || epochs <= 0 || batch_size == 0 ||
      !(lambda_r >= 0.0)) {
    throw Error(ErrorKind::InvalidParameter, "train config: values must be positive");
  }
}

double scheduled_learning_rate(const TrainConfig& cfg, int epoch) {
  return cfg.learning_rate * std::pow(0.5, epoch / cfg.halving_period);
}

// ---------------------------------------------------------------------------
// Building blocks

Linear::Linear(std::size_t in, std::size_t out)
    : weight({out, in}), bias({out}), grad_weight({out, in}), grad_bias({out}) {}

void Linear::init(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in()));
  for (double& w : weight.data) w = rng.uniform(-bound, bound);
  for (double& b : bias.data) b = rng.uniform(-bound, bound);
}

Eigen::VectorXd Linear::forward(const Eigen::VectorXd& x) const {
  const CMatMap W(weight.data.data(), out(), in());
  return W * x + CVecMap(bias.data.data(), out());
}

Eigen::VectorXd Linear::backward(const Eigen::VectorXd& x, const Eigen::VectorXd& upstream) {
  MatMap(grad_weight.data.data(), out(), in()).noalias() += upstream * x.transpose();
  VecMap(grad_bias.data.data(), out()) += upstream;
  return CMatMap(weight.data.data(), out(), in()).transpose() * upstream;
}

Eigen::VectorXd RunningNorm::apply(const Eigen::VectorXd& x) const {
  const CVecMap m(mean.data.data(), size()), v(var.data.data(), size());
  const Eigen::ArrayXd z = (x - m).array() / (v.array() + kEpsilon).sqrt();
  return (kBound * (z / kBound).tanh()).matrix();
}

Eigen::VectorXd RunningNorm::backward(const Eigen::VectorXd& x,
                                      const Eigen::VectorXd& upstream) const {
  const CVecMap m(mean.data.data(), size()), v(var.data.data(), size());
  const Eigen::ArrayXd inv_sd = 1.0 / (v.array() + kEpsilon).sqrt();
  const Eigen::ArrayXd th = ((x - m).array() * inv_sd / kBound).tanh();
  return (upstream.array() * (1.0 - th.square()) * inv_sd).matrix();
}

void RunningNorm::update(const Eigen::VectorXd& x) {
  for (std::size_t i = 0; i < size(); ++i) {
    const double d = x[static_cast<Eigen::Index>(i)] - mean[i];
    mean[i] += momentum * d;
    var[i] = (1.0 - momentum) * (var[i] + momentum * d * d);
  }
}

void RunningNorm::reset(std::span<const Eigen::VectorXd> samples) {
  if (samples.empty()) throw Error(ErrorKind::EmptyInput, "RunningNorm::reset: no samples");
  Eigen::VectorXd m = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(size()));
  for (const auto& s : samples) m += s;
  m /= static_cast<double>(samples.size());
  Eigen::VectorXd v = Eigen::VectorXd::Zero(m.size());
  for (const auto& s : samples) v += (s - m).cwiseAbs2();
  v /= static_cast<double>(samples.size());
  VecMap(mean.data.data(), m.size()) = m;
  VecMap(var.data.data(), v.size()) = v;
}

Eigen::VectorXd relative_spacing(std::span<const Vec3> points, const NeighborGraph& graph) {
  const std::size_t N = graph.num_points();
  std::vector<double> mean_dist(N, 0.0);
  for (std::size_t p = 0; p < N; ++p) {
    for (std::size_t j = 0; j < graph.n; ++j) {
      mean_dist[p] += (points[graph.index[p * graph.n + j]] - points[p]).norm();
    }
    mean_dist[p] /= static_cast<double>(graph.n);
  }
  std::vector<double> sorted = mean_dist;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(N / 2), sorted.end());
  const double median = sorted[N / 2];
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(N));
  if (!(median > 0.0)) return out;
  for (std::size_t p = 0; p < N; ++p) {
    out[static_cast<Eigen::Index>(p)] = std::log(std::max(mean_dist[p], 1e-6 * median) / median);
  }
  return out;
}

double residual_scale(std::span<const Vec3> pts) {
  if (pts.empty()) throw Error(ErrorKind::EmptyInput, "residual_scale: no points");
  Vec3 mean = Vec3::Zero();
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  double ss = 0.0;
  for (const auto& p : pts) ss += (p - mean).squaredNorm();
  return std::sqrt(ss / static_cast<double>(pts.size()));
}

Eigen::VectorXd residual_features(std::span<const Vec3> pts) {
  const double scale = residual_scale(pts);
  Vec3 mean = Vec3::Zero();
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  Eigen::VectorXd f = Eigen::VectorXd::Zero(kResidualFeatureCount);
  if (!(scale > 0.0)) return f;
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  for (const auto& p : pts) {
    const Vec3 c = (p - mean) / scale;
    lo = lo.cwiseMin(c);
    hi = hi.cwiseMax(c);
    const double x = c.x(), y = c.y(), z = c.z();
    const double m[16] = {x * x,     y * y,     z * z,     x * y,     x * z,     y * z,
                          x * x * x, y * y * y, z * z * z, x * x * y, x * x * z, x * y * y,
                          y * y * z, x * z * z, y * z * z, x * y * z};
    for (int k = 0; k < 16; ++k) f[6 + k] += m[k];
  }
  f.segment<16>(6) /= static_cast<double>(pts.size());
  f.head<3>() = lo;
  f.segment<3>(3) = hi;
  f[22] = std::log(scale);
  return f;
}

// ---------------------------------------------------------------------------
// ToyModel

void ToyModelConfig::validate() const {
  if (categories.empty()) throw Error(ErrorKind::InvalidParameter, "model needs >= 1 category");
  std::set<std::string> seen(categories.begin(), categories.end());
  if (seen.size() != categories.size()) {
    throw Error(ErrorKind::InvalidParameter, "duplicate category in model config");
  }
  for (std::size_t v : {n_neighbors, kernel_size, hidden_channels, latent_channels,
                        reconstruction_points, decoder_hidden, rotation_hidden, residual_hidden}) {
    if (v == 0) throw Error(ErrorKind::InvalidParameter, "model sizes must be positive");
  }
}

std::size_t ToyModelConfig::category_index(const std::string& name) const {
  const auto it = std::find(categories.begin(), categories.end(), name);
  if (it == categories.end()) {
    throw Error(ErrorKind::CategoryMismatch, "category '" + name + "' not known to the model");
  }
  return static_cast<std::size_t>(it - categories.begin());
}

namespace {

GcnLayerConfig layer_config(const ToyModelConfig& c, std::size_t in, std::size_t out) {
  c.validate();
  return {c.n_neighbors, in, out, c.kernel_size, c.aggregation};
}

}  // namespace

ToyModel::ToyModel(ToyModelConfig cfg)
    : cfg_(std::move(cfg)),
      enc1_(layer_config(cfg_, 1, cfg_.hidden_channels)),
      enc2_(layer_config(cfg_, cfg_.hidden_channels, cfg_.latent_channels)),
      enc1_gdir_(enc1_.directions().shape),
      enc1_gw_(enc1_.weights().shape),
      enc1_gc_(enc1_.center_weights().shape),
      enc2_gdir_(enc2_.directions().shape),
      enc2_gw_(enc2_.weights().shape),
      enc2_gc_(enc2_.center_weights().shape),
      seg_(cfg_.hidden_channels + cfg_.latent_channels + 1, 2),
      rec_(cfg_.latent_channels + cfg_.categories.size(), cfg_.decoder_hidden,
           3 * cfg_.reconstruction_points),
      rot1_(cfg_.latent_channels + cfg_.categories.size() + kResidualFeatureCount,
            cfg_.rotation_hidden, 3),
      rot2_(cfg_.latent_channels + cfg_.categories.size() + kResidualFeatureCount,
            cfg_.rotation_hidden, 3),
      res_(kResidualFeatureCount + cfg_.categories.size(), cfg_.residual_hidden, 6),
      latent_norm_(cfg_.latent_channels),
      feature_norm_(kResidualFeatureCount) {}

void ToyModel::init_random(std::uint64_t seed) {
  Rng rng(seed);
  enc1_.init_random(rng);
  enc2_.init_random(rng);
  seg_.init(rng);
  rec_.init(rng);
  rot1_.init(rng);
  rot2_.init(rng);
  res_.init(rng);
}

Eigen::VectorXd ToyModel::one_hot(std::size_t category) const {
  if (category >= cfg_.categories.size()) {
    throw Error(ErrorKind::CategoryMismatch, "category index out of range");
  }
  Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cfg_.categories.size()));
  v[static_cast<Eigen::Index>(category)] = 1.0;
  return v;
}

ToyOutput ToyModel::forward(const PointCloud& scene, std::size_t category,
                            const std::vector<int>* object_labels, Cache* cache) const {
  const std::size_t N = scene.size();
  if (N < cfg_.n_neighbors + 1) {
    throw Error(ErrorKind::InvalidParameter, "toy forward needs at least n_neighbors + 1 points");
  }
  if (object_labels && object_labels->size() != N) {
    throw Error(ErrorKind::ShapeError, "object labels do not match the cloud");
  }
  const Eigen::VectorXd onehot = one_hot(category);
  Cache local;
  Cache& c = cache ? *cache : local;
  c = Cache{};
  c.graph = build_neighbor_graph(scene.points(), cfg_.n_neighbors);

  const FeatureMatrix ones = FeatureMatrix::Ones(static_cast<Eigen::Index>(N), 1);
  c.a1 = enc1_.forward(c.graph, ones, &c.layer1);
  c.f1 = c.a1.cwiseMax(0.0);
  c.a2 = enc2_.forward(c.graph, c.f1, &c.layer2);
  c.f2 = c.a2.cwiseMax(0.0);

  const auto H = static_cast<Eigen::Index>(cfg_.hidden_channels);
  const auto L = static_cast<Eigen::Index>(cfg_.latent_channels);
  c.spacing = relative_spacing(scene.points(), c.graph);
  const CMatMap Ws(seg_.weight.data.data(), 2, H + L + 1);
  const CVecMap bs(seg_.bias.data.data(), 2);
  ToyOutput out;
  out.seg_logits = c.f1 * Ws.leftCols(H).transpose() + c.f2 * Ws.middleCols(H, L).transpose() +
                   c.spacing * Ws.rightCols(1).transpose();
  out.seg_logits.rowwise() += bs.transpose();

  c.mask.assign(N, 0);
  for (std::size_t i = 0; i < N; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    c.mask[i] = object_labels ? ((*object_labels)[i] != 0)
                              : (out.seg_logits(r, 1) > out.seg_logits(r, 0));
  }
  std::vector<Vec3> obj;
  c.latent_raw = Eigen::VectorXd::Zero(L);
  for (std::size_t i = 0; i < N; ++i) {
    if (!c.mask[i]) continue;
    obj.push_back(scene[i]);
    c.latent_raw += c.f2.row(static_cast<Eigen::Index>(i)).transpose();
  }
  c.object_count = obj.size();
  if (obj.empty()) throw Error(ErrorKind::SegmentationEmpty, "no point segmented as object");
  c.latent_raw /= static_cast<double>(obj.size());

  c.z.resize(L + onehot.size());
  c.z << latent_norm_.apply(c.latent_raw), onehot;

  const Eigen::VectorXd rec = mlp_forward(rec_, c.z, &c.rec_hidden);
  out.reconstruction.resize(cfg_.reconstruction_points);
  for (std::size_t k = 0; k < cfg_.reconstruction_points; ++k) {
    out.reconstruction[k] = head3(rec, static_cast<Eigen::Index>(3 * k));
  }
  c.res_raw = residual_features(obj);
  const Eigen::VectorXd shape = feature_norm_.apply(c.res_raw);
  c.res_input.resize(shape.size() + onehot.size());
  c.res_input << shape, onehot;
  // moments carry the principal axes, which the pooled latent resolves poorly
  c.rot_input.resize(c.z.size() + shape.size());
  c.rot_input << c.z, shape;
  out.v1 = head3(mlp_forward(rot1_, c.rot_input, &c.rot1_hidden));
  out.v2 = head3(mlp_forward(rot2_, c.rot_input, &c.rot2_hidden));
  c.res_scale = residual_scale(obj);
  const Eigen::VectorXd r = mlp_forward(res_, c.res_input, &c.res_hidden);
  out.t_residual = c.res_scale * head3(r, 0);
  out.s_residual = c.res_scale * head3(r, 3);

  for (const auto& p : obj) out.object_mean += p;
  out.object_mean /= static_cast<double>(obj.size());
  out.object_mask = c.mask;
  c.valid = true;
  return out;
}

void ToyModel::backward(const Cache& c, const ToyGradients& g) {
  if (!c.valid) throw Error(ErrorKind::StateError, "backward before forward");
  const auto N = c.f1.rows();
  const auto H = static_cast<Eigen::Index>(cfg_.hidden_channels);
  const auto L = static_cast<Eigen::Index>(cfg_.latent_channels);

  Eigen::VectorXd rres(6);
  rres << c.res_scale * g.t_residual, c.res_scale * g.s_residual;
  mlp_backward(res_, c.res_input, c.res_hidden, rres);

  Eigen::VectorXd dz = mlp_backward(rot1_, c.rot_input, c.rot1_hidden, g.v1).head(c.z.size());
  dz += mlp_backward(rot2_, c.rot_input, c.rot2_hidden, g.v2).head(c.z.size());
  if (!g.reconstruction.empty()) {
    Eigen::VectorXd drec(3 * static_cast<Eigen::Index>(g.reconstruction.size()));
    for (std::size_t k = 0; k < g.reconstruction.size(); ++k) {
      drec.segment<3>(static_cast<Eigen::Index>(3 * k)) = g.reconstruction[k];
    }
    dz += mlp_backward(rec_, c.z, c.rec_hidden, drec);
  }
  const Eigen::VectorXd dlatent =
      latent_norm_.backward(c.latent_raw, dz.head(L)) / static_cast<double>(c.object_count);

  FeatureMatrix df1 = FeatureMatrix::Zero(N, H);
  FeatureMatrix df2 = FeatureMatrix::Zero(N, L);
  for (Eigen::Index i = 0; i < N; ++i) {
    if (c.mask[static_cast<std::size_t>(i)]) df2.row(i) = dlatent.transpose();
  }
  if (g.seg_logits.size() > 0) {
    const CMatMap Ws(seg_.weight.data.data(), 2, H + L + 1);
    MatMap gW(seg_.grad_weight.data.data(), 2, H + L + 1);
    gW.leftCols(H).noalias() += g.seg_logits.transpose() * c.f1;
    gW.middleCols(H, L).noalias() += g.seg_logits.transpose() * c.f2;
    gW.rightCols(1).noalias() += g.seg_logits.transpose() * c.spacing;
    VecMap(seg_.grad_bias.data.data(), 2) += g.seg_logits.colwise().sum().transpose();
    df1.noalias() += g.seg_logits * Ws.leftCols(H);
    df2.noalias() += g.seg_logits * Ws.middleCols(H, L);
  }

  const FeatureMatrix da2 = (c.a2.array() > 0.0).select(df2, 0.0);
  const GcnGradients g2 = enc2_.backward(c.graph, c.layer2, da2);
  add_into(enc2_gdir_, g2.directions);
  add_into(enc2_gw_, g2.weights);
  add_into(enc2_gc_, g2.center_weights);
  df1 += g2.input;
  const FeatureMatrix da1 = (c.a1.array() > 0.0).select(df1, 0.0);
  const GcnGradients g1 = enc1_.backward(c.graph, c.layer1, da1);
  add_into(enc1_gdir_, g1.directions);
  add_into(enc1_gw_, g1.weights);
  add_into(enc1_gc_, g1.center_weights);
}

std::vector<ParamRef> ToyModel::parameters() {
  std::vector<ParamRef> p = {
      {"enc1.directions", &enc1_.directions(), &enc1_gdir_},
      {"enc1.weights", &enc1_.weights(), &enc1_gw_},
      {"enc1.center_weights", &enc1_.center_weights(), &enc1_gc_},
      {"enc2.directions", &enc2_.directions(), &enc2_gdir_},
      {"enc2.weights", &enc2_.weights(), &enc2_gw_},
      {"enc2.center_weights", &enc2_.center_weights(), &enc2_gc_},
  };
  auto lin = [&p](const std::string& name, Linear& l) {
    p.push_back({name + ".weight", &l.weight, &l.grad_weight});
    p.push_back({name + ".bias", &l.bias, &l.grad_bias});
  };
  lin("seg", seg_);
  for (auto [name, mlp] : {std::pair<const char*, Mlp*>{"rec", &rec_}, {"rot1", &rot1_},
                           {"rot2", &rot2_}, {"res", &res_}}) {
    lin(std::string(name) + ".0", mlp->first);
    lin(std::string(name) + ".1", mlp->second);
  }
  return p;
}

void ToyModel::zero_grad() {
  for (auto& p : parameters()) p.grad->zero();
}

void ToyModel::renormalize() {
  enc1_.renormalize();
  enc2_.renormalize();
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> ToyModel::normalizer_inputs(
    const PointCloud& scene, const std::vector<int>& object_labels) const {
  Cache c;
  forward(scene, 0, &object_labels, &c);
  return {c.latent_raw, c.res_raw};
}

std::vector<std::pair<std::string, Tensor*>> ToyModel::named_tensors() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (auto& p : parameters()) out.emplace_back(p.name, p.value);
  out.emplace_back("latent_norm.mean", &latent_norm_.mean);
  out.emplace_back("latent_norm.var", &latent_norm_.var);
  out.emplace_back("feature_norm.mean", &feature_norm_.mean);
  out.emplace_back("feature_norm.var", &feature_norm_.var);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> ToyModel::named_tensors() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (const auto& [name, t] : const_cast<ToyModel*>(this)->named_tensors()) {
    out.emplace_back(name, t);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

LossParts toy_sample_loss(ToyModel& model, const TrainSample& sample,
                          const CategoryStatsMap& stats, const LossWeights& w,
                          const TrainConfig& cfg, bool accumulate, ToyModel::Cache* cache) {
  const auto& labels = sample.cloud.labels();
  if (!sample.cloud.has_labels()) throw Error(ErrorKind::LabelRequired, "training needs labels");
  const auto st = stats.find(sample.pose.category);
  if (st == stats.end()) {
    throw Error(ErrorKind::CategoryMismatch, "no statistics for '" + sample.pose.category + "'");
  }
  ToyModel::Cache local;
  ToyModel::Cache& c = cache ? *cache : local;
  const ToyOutput out =
      model.forward(sample.cloud, model.config().category_index(sample.pose.category), &labels, &c);

  LossParts parts;
  ToyGradients g;

  const SegmentationLoss seg = segmentation_loss(out.seg_logits, labels);
  parts.seg = seg.loss;
  g.seg_logits = w.lambda_seg * seg.grad;

  const PointCloud object = sample.cloud.select_label(1);
  std::vector<Vec3> target;
  if (cfg.reconstruct_complete && !sample.complete.empty()) {
    for (const auto& p : sample.complete) target.push_back(p - out.object_mean);
  } else {
    for (const auto& p : object.points()) target.push_back(p - out.object_mean);
  }
  ChamferResult ch = chamfer_loss(out.reconstruction, target);
  parts.rec = ch.loss;
  for (auto& v : ch.grad) v *= w.lambda_rec;
  g.reconstruction = std::move(ch.grad);

  const SymmetrySpec& sym = sample.pose.symmetry;
  DecoupledRotation gt = vectors_from_rotation(canonicalize_rotation(sample.pose.rotation, sym));
  if (model.config().lifted_spin && spin_liftable(sym)) gt.v2 = lift_spin(gt.v1, gt.v2, sym.n);
  const RotationLoss rl =
      rotation_vector_loss(out.v1, out.v2, gt, RotationLossConfig::for_symmetry(sym, cfg.lambda_r));
  parts.rot = rl.objective;
  g.v1 = w.lambda_rot * rl.grad_p1;
  g.v2 = w.lambda_rot * rl.grad_p2;

  const ResidualLoss res =
      residual_loss(out.t_residual, out.s_residual, residual_targets(object, sample.pose, st->second));
  parts.res = res.loss;
  g.t_residual = w.lambda_res * res.grad_t;
  g.s_residual = w.lambda_res * res.grad_s;

  if (accumulate) model.backward(c, g);
  return parts;
}

namespace {

// Rigidly rotates every point about the sample's translation so the object
// ends up with rotation R.
TrainSample repose_sample(const TrainSample& s, const Rotation& R) {
  const Mat3 M = R.matrix() * s.pose.rotation.matrix().transpose();
  const Vec3& t = s.pose.translation;
  TrainSample out;
  out.id = s.id;
  std::vector<Vec3> pts;
  pts.reserve(s.cloud.size());
  for (const auto& q : s.cloud.points()) pts.push_back(M * (q - t) + t);
  out.cloud = PointCloud(std::move(pts), s.cloud.labels());
  out.pose = s.pose;
  out.pose.rotation = R;
  out.complete.reserve(s.complete.size());
  for (const auto& q : s.complete) out.complete.push_back(M * (q - t) + t);
  return out;
}

}  // namespace

TrainResult train_toy(const std::vector<TrainSample>& dataset, const TrainConfig& cfg,
                      const LossWeights& weights, bool augment, const ToyModelConfig& model_cfg,
                      const std::function<void(const EpochLog&)>& progress) {
  if (dataset.empty()) throw Error(ErrorKind::EmptyInput, "train_toy: empty dataset");
  cfg.validate();
  weights.validate();

  ToyModelConfig mc = model_cfg;
  if (mc.categories.empty()) {
    std::set<std::string> cats;
    for (const auto& s : dataset) cats.insert(s.pose.category);
    mc.categories.assign(cats.begin(), cats.end());
  }
  std::vector<PoseRecord> poses;
  for (const auto& s : dataset) {
    if (!s.cloud.has_labels()) {
      throw Error(ErrorKind::LabelRequired, "training sample '" + s.id + "' has no labels");
    }
    mc.category_index(s.pose.category);
    poses.push_back(s.pose);
  }

  TrainResult result{ToyModel(mc), compute_category_stats(poses), {}};
  ToyModel& model = result.model;
  model.init_random(cfg.seed);

  // Warm-start the running statistics on the first samples.
  {
    std::vector<Eigen::VectorXd> lat, feat;
    const std::size_t warm = std::min<std::size_t>(dataset.size(), 128);
    for (std::size_t i = 0; i < warm; ++i) {
      const auto& s = dataset[i];
      auto [l, f] = model.normalizer_inputs(s.cloud, s.cloud.labels());
      lat.push_back(std::move(l));
      feat.push_back(std::move(f));
    }
    model.latent_norm().reset(lat);
    model.feature_norm().reset(feat);
  }

  AdamState adam;
  std::vector<std::size_t> order(dataset.size());
  Rng shuffle_rng(mix_seed(cfg.seed, 0x5eed));
  model.zero_grad();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = scheduled_learning_rate(cfg, epoch);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    }

    LossParts sum;
    std::size_t in_batch = 0;
    auto step = [&] {
      auto params = model.parameters();
      const double inv = 1.0 / static_cast<double>(in_batch);
      for (auto& p : params) {
        for (double& v : p.grad->data) v *= inv;
      }
      adam_step(params, adam, lr);
      model.renormalize();
      model.zero_grad();
      in_batch = 0;
    };

    for (std::size_t k = 0; k < order.size(); ++k) {
      const std::size_t idx = order[k];
      TrainSample aug;
      const TrainSample* sample = &dataset[idx];
      if (augment) {
        const auto& s = dataset[idx];
        const DeformationSpec spec =
            sample_random_deformation(mix_seed(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)), idx));
        const BoxCage cage{s.pose.size};
        DeformedScene d = deform_in_scene(s.cloud, s.pose, cage, spec);
        aug.id = s.id;
        aug.cloud = std::move(d.cloud);
        aug.pose = d.pose;
        if (!s.complete.empty()) {
          const PointCloud full(s.complete, std::vector<int>(s.complete.size(), 1));
          aug.complete = deform_in_scene(full, s.pose, cage, spec).cloud.points();
        }
        sample = &aug;
      }
      TrainSample reposed;
      if (cfg.resample_rotations) {
        Rng pick(mix_seed(mix_seed(cfg.seed ^ 0x7e905eULL, static_cast<std::uint64_t>(epoch)), idx));
        reposed = repose_sample(*sample, dataset[pick.below(dataset.size())].pose.rotation);
        sample = &reposed;
      }
      ToyModel::Cache cache;
      const LossParts p = toy_sample_loss(model, *sample, result.stats, weights, cfg, true, &cache);
      sum.seg += p.seg;
      sum.rec += p.rec;
      sum.rot += p.rot;
      sum.res += p.res;
      model.latent_norm().update(cache.latent_raw);
      model.feature_norm().update(cache.res_raw);
      if (++in_batch == cfg.batch_size) step();
    }
    if (in_batch > 0) step();

    const double n = static_cast<double>(dataset.size());
    EpochLog log{epoch, lr, {sum.seg / n, sum.rec / n, sum.rot / n, sum.res / n}, 0.0};
    log.total = total_loss(log.parts, weights);
    result.log.push_back(log);
    if (progress) progress(log);
  }
  return result;
}

std::string format_training_log(const std::vector<EpochLog>& log) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,lr,L_seg,L_rec,L_rot,L_res,total\n";
  for (const auto& e : log) {
    os << e.epoch << ',' << e.lr << ',' << e.parts.seg << ',' << e.parts.rec << ','
       << e.parts.rot << ',' << e.parts.res << ',' << e.total << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Inference

Rotation rotation_from_prediction(const Vec3& v1, const Vec3& v2, const SymmetrySpec& symmetry,
                                  bool* used_fallback, bool lifted_spin) {
  if (used_fallback) *used_fallback = false;
  if (symmetry.kind == SymmetryKind::Circular) return rotation_from_axis(v1);
  try {
    if (lifted_spin && spin_liftable(symmetry)) return rotation_from_lifted(v1, v2, symmetry.n);
    return rotation_from_vectors(v1, v2);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::DegenerateVectors) throw;
    if (used_fallback) *used_fallback = true;
    return rotation_from_axis(v1);
  }
}

PosePrediction predict_pose(const ToyModel& model, const PointCloud& scene,
                            const std::string& category, const CategoryStatsMap& stats,
                            const SymmetrySpec& symmetry) {
  const auto st = stats.find(category);
  if (st == stats.end()) {
    throw Error(ErrorKind::CategoryMismatch, "no statistics for '" + category + "'");
  }
  const ToyOutput out = model.forward(scene, model.config().category_index(category));
  PosePrediction p;
  p.pose.category = category;
  p.pose.symmetry = symmetry;
  p.pose.translation = out.object_mean + out.t_residual;
  // keep the box valid when a residual overshoots the mean size
  p.pose.size = (st->second.mean_size + out.s_residual).cwiseMax(1e-6);
  p.pose.rotation = rotation_from_prediction(out.v1, out.v2, symmetry, &p.used_fallback,
                                             model.config().lifted_spin);
  return p;
}

// ---------------------------------------------------------------------------
// Checkpoint

std::string format_checkpoint(const ToyModel& model_in, const CategoryStatsMap& stats) {
  const ToyModel& model = model_in;
  const ToyModelConfig& c = model.config();
  json j;
  j["format"] = "posekit-toy-checkpoint";
  j["version"] = 1;
  j["config"] = {{"categories", c.categories},
                 {"n_neighbors", c.n_neighbors},
                 {"kernel_size", c.kernel_size},
                 {"hidden_channels", c.hidden_channels},
                 {"latent_channels", c.latent_channels},
                 {"reconstruction_points", c.reconstruction_points},
                 {"decoder_hidden", c.decoder_hidden},
                 {"rotation_hidden", c.rotation_hidden},
                 {"residual_hidden", c.residual_hidden},
                 {"aggregation", aggregation_name(c.aggregation)},
                 {"lifted_spin", c.lifted_spin}};
  json js = json::object();
  for (const auto& [name, s] : stats) {
    js[name] = {{"mean_size", {s.mean_size.x(), s.mean_size.y(), s.mean_size.z()}},
                {"count", s.count}};
  }
  j["stats"] = js;
  json jt = json::array();
  for (const auto& [name, t] : model.named_tensors()) {
    jt.push_back({{"name", name}, {"shape", t->shape}, {"data", t->data}});
  }
  j["tensors"] = jt;
  return j.dump(1) + "\n";
}

Checkpoint parse_checkpoint(std::string_view text, const std::string& source) {
  auto fail = [&](const std::string& msg) -> Error {
    return Error(ErrorKind::ParseError, source + ": " + msg);
  };
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw fail(e.what());
  }
  try {
    if (j.at("format") != "posekit-toy-checkpoint" || j.at("version") != 1) {
      throw fail("not a version 1 toy checkpoint");
    }
    const json& jc = j.at("config");
    ToyModelConfig c;
    c.categories = jc.at("categories").get<std::vector<std::string>>();
    c.n_neighbors = jc.at("n_neighbors").get<std::size_t>();
    c.kernel_size = jc.at("kernel_size").get<std::size_t>();
    c.hidden_channels = jc.at("hidden_channels").get<std::size_t>();
    c.latent_channels = jc.at("latent_channels").get<std::size_t>();
    c.reconstruction_points = jc.at("reconstruction_points").get<std::size_t>();
    c.decoder_hidden = jc.at("decoder_hidden").get<std::size_t>();
    c.rotation_hidden = jc.at("rotation_hidden").get<std::size_t>();
    c.residual_hidden = jc.at("residual_hidden").get<std::size_t>();
    c.aggregation = aggregation_from_name(jc.at("aggregation").get<std::string>());
    c.lifted_spin = jc.at("lifted_spin").get<bool>();
    Checkpoint ck{ToyModel(c), {}};
    for (const auto& [name, js] : j.at("stats").items()) {
      const auto m = js.at("mean_size").get<std::vector<double>>();
      if (m.size() != 3) throw fail("stats '" + name + "': mean_size needs 3 values");
      ck.stats[name] = {Vec3(m[0], m[1], m[2]), js.at("count").get<std::size_t>()};
    }
    std::map<std::string, const json*> by_name;
    for (const json& t : j.at("tensors")) by_name[t.at("name").get<std::string>()] = &t;
    for (auto& [name, t] : ck.model.named_tensors()) {
      const auto it = by_name.find(name);
      if (it == by_name.end()) throw fail("missing tensor '" + name + "'");
      const auto shape = it->second->at("shape").get<std::vector<std::size_t>>();
      auto data = it->second->at("data").get<std::vector<double>>();
      if (shape != t->shape || data.size() != t->size()) {
        throw Error(ErrorKind::ShapeError, source + ": tensor '" + name + "' has the wrong shape");
      }
      t->data = std::move(data);
      by_name.erase(it);
    }
    if (!by_name.empty()) throw fail("unexpected tensor '" + by_name.begin()->first + "'");
    return ck;
  } catch (const json::exception& e) {
    throw fail(e.what());
  }
}

void save_checkpoint(const ToyModel& model, const CategoryStatsMap& stats,
                     const std::filesystem::path& path) {
  write_text_file(path, format_checkpoint(model, stats));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(read_text_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Run configuration

namespace {

template <class T>
void read_value(const json& v, T& out, const std::string& where) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw Error(ErrorKind::ParseError, where + ": expected true or false");
    out = v.get<bool>();
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) throw Error(ErrorKind::ParseError, where + ": expected a number");
    out = v.get<double>();
  } else {
    if (!v.is_number_integer() || (std::is_unsigned_v<T> && v.get<long long>() < 0)) {
      throw Error(ErrorKind::ParseError, where + ": expected a non-negative integer");
    }
    out = v.get<T>();
  }
}

using Binder = std::function<void(const json&, const std::string&)>;

template <class T>
Binder bind(T& field) {
  return [&field](const json& v, const std::string& where) { read_value(v, field, where); };
}

void read_section(const json& obj, const std::map<std::string, Binder>& fields,
                  const std::string& where) {
  if (!obj.is_object()) throw Error(ErrorKind::ParseError, where + ": expected an object");
  for (const auto& [key, value] : obj.items()) {
    const auto it = fields.find(key);
    if (it == fields.end()) throw Error(ErrorKind::ParseError, where + ": unknown key '" + key + "'");
    it->second(value, where + "." + key);
  }
}

}  // namespace

ToyRunConfig parse_toy_config(std::string_view text, const std::string& source) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::ParseError, source + ": " + e.what());
  }
  ToyRunConfig c;
  TrainConfig& t = c.train;
  LossWeights& w = c.weights;
  ToyModelConfig& m = c.model;
  std::string aggregation(aggregation_name(m.aggregation));
  const std::map<std::string, Binder> sections = {
      {"train",
       [&](const json& v, const std::string& where) {
         read_section(v,
                      {{"learning_rate", bind(t.learning_rate)},
                       {"halving_period", bind(t.halving_period)},
                       {"epochs", bind(t.epochs)},
                       {"batch_size", bind(t.batch_size)},
                       {"seed", bind(t.seed)},
                       {"reconstruct_complete", bind(t.reconstruct_complete)},
                       {"lambda_r", bind(t.lambda_r)},
                       {"resample_rotations", bind(t.resample_rotations)}},
                      where);
       }},
      {"weights",
       [&](const json& v, const std::string& where) {
         read_section(v,
                      {{"lambda_seg", bind(w.lambda_seg)},
                       {"lambda_rec", bind(w.lambda_rec)},
                       {"lambda_rot", bind(w.lambda_rot)},
                       {"lambda_res", bind(w.lambda_res)}},
                      where);
       }},
      {"model", [&](const json& v, const std::string& where) {
         read_section(v,
                      {{"n_neighbors", bind(m.n_neighbors)},
                       {"kernel_size", bind(m.kernel_size)},
                       {"hidden_channels", bind(m.hidden_channels)},
                       {"latent_channels", bind(m.latent_channels)},
                       {"reconstruction_points", bind(m.reconstruction_points)},
                       {"decoder_hidden", bind(m.decoder_hidden)},
                       {"rotation_hidden", bind(m.rotation_hidden)},
                       {"residual_hidden", bind(m.residual_hidden)},
                       {"lifted_spin", bind(m.lifted_spin)},
                       {"aggregation",
                        [&](const json& a, const std::string& where2) {
                          if (!a.is_string()) {
                            throw Error(ErrorKind::ParseError, where2 + ": expected a string");
                          }
                          aggregation = a.get<std::string>();
                        }}},
                      where);
       }}};
  read_section(j, sections, source);
  try {
    m.aggregation = aggregation_from_name(aggregation);
  } catch (const Error& e) {
    throw Error(ErrorKind::ParseError, source + ": " + e.what());
  }
  t.validate();
  w.validate();
  return c;
}

std::string format_toy_config(const ToyRunConfig& c) {
  const TrainConfig& t = c.train;
  const LossWeights& w = c.weights;
  const ToyModelConfig& m = c.model;
  json j;
  j["train"] = {{"learning_rate", t.learning_rate},
                {"halving_period", t.halving_period},
                {"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"seed", t.seed},
                {"reconstruct_complete", t.reconstruct_complete},
                {"lambda_r", t.lambda_r},
                {"resample_rotations", t.resample_rotations}};
  j["weights"] = {{"lambda_seg", w.lambda_seg},
                  {"lambda_rec", w.lambda_rec},
                  {"lambda_rot", w.lambda_rot},
                  {"lambda_res", w.lambda_res}};
  j["model"] = {{"n_neighbors", m.n_neighbors},
                {"kernel_size", m.kernel_size},
                {"hidden_channels", m.hidden_channels},
                {"latent_channels", m.latent_channels},
                {"reconstruction_points", m.reconstruction_points},
                {"decoder_hidden", m.decoder_hidden},
                {"rotation_hidden", m.rotation_hidden},
                {"residual_hidden", m.residual_hidden},
                {"aggregation", aggregation_name(m.aggregation)},
                {"lifted_spin", m.lifted_spin}};
  return j.dump(2) + "\n";
}

std::vector<TrainSample> training_samples(const std::vector<DatasetSample>& data,
                                          bool complete_targets, std::uint64_t seed) {
  std::vector<TrainSample> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& d = data[i];
    TrainSample s{d.id, d.sample.cloud, d.sample.pose, {}};
    if (complete_targets) {
      const ShapeBase base = shape_base_from_string(d.sample.pose.category);
      std::size_t count = 0;
      for (int l : s.cloud.labels()) count += l != 0;
      if (count == 0) throw Error(ErrorKind::EmptyInput, d.id + ": no object points");
      Rng rng(mix_seed(seed ^ 0xc0391e7eULL, i));
      const auto canonical = sample_complete_surface(base, d.sample.pose.size, count, rng);
      s.complete.reserve(count);
      for (const Vec3& q : canonical) {
        s.complete.push_back(d.sample.pose.rotation * q + d.sample.pose.translation);
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace posekit
