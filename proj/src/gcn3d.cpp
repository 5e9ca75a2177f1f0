#include "posekit/gcn3d.hpp"

#include <cmath>
#include <limits>

namespace posekit {

namespace {

using KernelMatrix = Eigen::Matrix<double, 3, Eigen::Dynamic>;

// Columns are the normalized kernel directions, indexed by (pair * m + k).
KernelMatrix unit_kernels(const Tensor& directions, Eigen::VectorXd* norms) {
  const std::size_t cols = directions.size() / 3;
  KernelMatrix k(3, static_cast<Eigen::Index>(cols));
  if (norms) norms->resize(static_cast<Eigen::Index>(cols));
  for (std::size_t c = 0; c < cols; ++c) {
    Vec3 v(directions[3 * c], directions[3 * c + 1], directions[3 * c + 2]);
    const double n = v.norm();
    if (!(n > 0.0)) {
      throw Error(ErrorKind::InvalidParameter, "zero kernel direction");
    }
    k.col(static_cast<Eigen::Index>(c)) = v / n;
    if (norms) (*norms)(static_cast<Eigen::Index>(c)) = n;
  }
  return k;
}

bool is_zero(const Vec3& v) { return v.x() == 0.0 && v.y() == 0.0 && v.z() == 0.0; }

}  // namespace

void KernelSet::normalize() {
  if (weights.size() != directions.size()) {
    throw Error(ErrorKind::InvalidParameter,
                "kernel weight count must match direction count");
  }
  for (auto& d : directions) {
    const double n = d.norm();
    if (!(n > 0.0) || !is_finite(d)) {
      throw Error(ErrorKind::InvalidParameter, "zero kernel direction");
    }
    d /= n;
  }
}

void GcnLayerConfig::validate() const {
  if (n_neighbors < 1 || in_channels < 1 || out_channels < 1 ||
      kernel_size < 1) {
    throw Error(ErrorKind::InvalidParameter,
                "layer sizes and n_neighbors must be >= 1");
  }
}

NeighborGraph build_neighbor_graph(std::span<const Vec3> points, std::size_t n) {
  if (n < 1 || points.size() < n + 1) {
    throw Error(ErrorKind::InvalidParameter,
                "cloud too small for the requested neighbor count");
  }
  NeighborGraph g;
  g.n = n;
  g.index.resize(points.size() * n);
  g.direction.resize(points.size() * n);
  for (std::size_t p = 0; p < points.size(); ++p) {
    const auto nbrs = k_nearest_neighbors(points, p, n);
    for (std::size_t j = 0; j < n; ++j) {
      const Vec3 d = points[nbrs[j]] - points[p];
      const double len = d.norm();
      g.index[p * n + j] = nbrs[j];
      g.direction[p * n + j] = len > 0.0 ? Vec3(d / len) : Vec3::Zero();
    }
  }
  return g;
}

std::vector<Vec3> neighbor_directions(const PointCloud& cloud, std::size_t index,
                                      std::size_t n) {
  if (n < 1 || cloud.size() < n + 1) {
    throw Error(ErrorKind::InvalidParameter,
                "cloud too small for the requested neighbor count");
  }
  const auto nbrs = k_nearest_neighbors(cloud, index, n);
  std::vector<Vec3> dirs;
  dirs.reserve(n);
  for (auto j : nbrs) {
    const Vec3 d = cloud[j] - cloud[index];
    const double len = d.norm();
    dirs.push_back(len > 0.0 ? Vec3(d / len) : Vec3::Zero());
  }
  return dirs;
}

double gconv_response(const KernelSet& kernel, std::span<const Vec3> dirs,
                      double center_feature,
                      std::span<const double> neighbor_features,
                      Aggregation aggregation) {
  if (dirs.size() != neighbor_features.size()) {
    throw Error(ErrorKind::ShapeError,
                "direction and neighbor feature counts differ");
  }
  if (kernel.weights.size() != kernel.directions.size()) {
    throw Error(ErrorKind::ShapeError, "kernel weights/directions mismatch");
  }
  double response = kernel.center_weight * center_feature;
  for (std::size_t i = 0; i < kernel.size(); ++i) {
    const Vec3 k = kernel.directions[i].normalized();
    double best = -std::numeric_limits<double>::infinity();
    double sum = 0.0;
    bool any = false;
    for (std::size_t j = 0; j < dirs.size(); ++j) {
      if (is_zero(dirs[j])) continue;
      const double v = k.dot(dirs[j]) * neighbor_features[j];
      sum += v;
      best = std::max(best, v);
      any = true;
    }
    if (!any) continue;
    response += kernel.weights[i] *
                (aggregation == Aggregation::MaxMatch ? best : sum);
  }
  return response;
}

GcnLayer::GcnLayer(GcnLayerConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t o = cfg_.out_channels;
  const std::size_t i = cfg_.in_channels;
  const std::size_t m = cfg_.kernel_size;
  directions_ = Tensor({o, i, m, 3});
  weights_ = Tensor({o, i, m});
  center_weights_ = Tensor({o, i});
  for (std::size_t c = 0; c < o * i * m; ++c) directions_[3 * c] = 1.0;
}

KernelSet GcnLayer::kernel(std::size_t out, std::size_t in) const {
  const std::size_t m = cfg_.kernel_size;
  const std::size_t base = pair_index(out, in) * m;
  KernelSet k;
  for (std::size_t t = 0; t < m; ++t) {
    const std::size_t c = base + t;
    k.directions.emplace_back(directions_[3 * c], directions_[3 * c + 1],
                              directions_[3 * c + 2]);
    k.weights.push_back(weights_[c]);
  }
  k.center_weight = center_weights_[pair_index(out, in)];
  return k;
}

void GcnLayer::set_kernel(std::size_t out, std::size_t in, KernelSet kernel) {
  if (out >= cfg_.out_channels || in >= cfg_.in_channels ||
      kernel.size() != cfg_.kernel_size) {
    throw Error(ErrorKind::ShapeError, "kernel does not fit this layer");
  }
  kernel.normalize();
  const std::size_t base = pair_index(out, in) * cfg_.kernel_size;
  for (std::size_t t = 0; t < kernel.size(); ++t) {
    const std::size_t c = base + t;
    for (int a = 0; a < 3; ++a) directions_[3 * c + a] = kernel.directions[t][a];
    weights_[c] = kernel.weights[t];
  }
  center_weights_[pair_index(out, in)] = kernel.center_weight;
}

void GcnLayer::init_random(Rng& rng) {
  const double bound =
      std::sqrt(3.0 / static_cast<double>(cfg_.in_channels * cfg_.kernel_size));
  for (auto& v : directions_.data) v = rng.normal();
  renormalize();
  for (auto& v : weights_.data) v = rng.uniform(-bound, bound);
  for (auto& v : center_weights_.data) v = rng.uniform(-bound, bound);
}

void GcnLayer::renormalize() {
  for (std::size_t c = 0; c < directions_.size() / 3; ++c) {
    Vec3 v(directions_[3 * c], directions_[3 * c + 1], directions_[3 * c + 2]);
    double n = v.norm();
    if (!(n > 0.0)) {
      v = Vec3::UnitX();
      n = 1.0;
    }
    for (int a = 0; a < 3; ++a) directions_[3 * c + a] = v[a] / n;
  }
}

FeatureMatrix GcnLayer::forward(const NeighborGraph& graph,
                                const FeatureMatrix& input, Cache* cache) const {
  const std::size_t np = graph.num_points();
  const std::size_t cin = cfg_.in_channels;
  const std::size_t cout = cfg_.out_channels;
  const std::size_t m = cfg_.kernel_size;
  const std::size_t n = graph.n;
  if (static_cast<std::size_t>(input.rows()) != np ||
      static_cast<std::size_t>(input.cols()) != cin) {
    throw Error(ErrorKind::ShapeError, "feature matrix does not match layer");
  }
  if (n != cfg_.n_neighbors) {
    throw Error(ErrorKind::ShapeError, "graph neighbor count does not match layer");
  }
  const KernelMatrix kn = unit_kernels(directions_, nullptr);
  const bool max_match = cfg_.aggregation == Aggregation::MaxMatch;

  // Kernel components regrouped as (in, out, t) so each input channel owns
  // one contiguous block per axis.
  const std::size_t block = cout * m;
  std::vector<double> kx(cin * block), ky(cin * block), kz(cin * block), win(cin * block);
  for (std::size_t o = 0; o < cout; ++o) {
    for (std::size_t i = 0; i < cin; ++i) {
      for (std::size_t t = 0; t < m; ++t) {
        const std::size_t src = pair_index(o, i) * m + t;
        const std::size_t dst = (i * cout + o) * m + t;
        const auto col = kn.col(static_cast<Eigen::Index>(src));
        kx[dst] = col.x();
        ky[dst] = col.y();
        kz[dst] = col.z();
        win[dst] = weights_[src];
      }
    }
  }

  FeatureMatrix out = FeatureMatrix::Zero(static_cast<Eigen::Index>(np),
                                          static_cast<Eigen::Index>(cout));
  if (cache) {
    cache->valid = false;
    cache->input = input;
    cache->argmax.resize(max_match ? np * cout * cin * m : 0);  // every slot written below
  }

  std::vector<double> best(block);
  std::vector<double> arg(block);  // winning neighbor slot, -1 for none
  for (std::size_t p = 0; p < np; ++p) {
    for (std::size_t i = 0; i < cin; ++i) {
      std::fill(best.begin(), best.end(),
                max_match ? -std::numeric_limits<double>::infinity() : 0.0);
      std::fill(arg.begin(), arg.end(), -1.0);
      const double* __restrict bx = kx.data() + i * block;
      const double* __restrict by = ky.data() + i * block;
      const double* __restrict bz = kz.data() + i * block;
      double* __restrict bb = best.data();
      double* __restrict ba = arg.data();
      for (std::size_t j = 0; j < n; ++j) {
        const Vec3& dj = graph.direction[p * n + j];
        if (is_zero(dj)) continue;
        // cos(k_c, d_j) * f_j
        const Vec3 u = dj * input(static_cast<Eigen::Index>(graph.index[p * n + j]),
                                  static_cast<Eigen::Index>(i));
        const double ux = u.x(), uy = u.y(), uz = u.z();
        if (max_match) {
          const double jd = static_cast<double>(j);
          // branch-free so it vectorizes; slot values are small integers, exact in double
          for (std::size_t c = 0; c < block; ++c) {
            const double v = ux * bx[c] + uy * by[c] + uz * bz[c];
            const double b = bb[c];
            const double gt = static_cast<double>(v > b);
            bb[c] = v > b ? v : b;
            ba[c] += gt * (jd - ba[c]);
          }
        } else {
          for (std::size_t c = 0; c < block; ++c) bb[c] += ux * bx[c] + uy * by[c] + uz * bz[c];
        }
      }

      const double fc = input(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(i));
      for (std::size_t o = 0; o < cout; ++o) {
        double acc = center_weights_[pair_index(o, i)] * fc;
        for (std::size_t t = 0; t < m; ++t) {
          const std::size_t c = o * m + t;
          if (!max_match || arg[c] >= 0.0) acc += win[i * block + c] * best[c];
          if (max_match && cache) {
            cache->argmax[((p * cin + i) * cout + o) * m + t] = static_cast<int>(arg[c]);
          }
        }
        out(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(o)) += acc;
      }
    }
  }
  if (cache) cache->valid = true;
  return out;
}

GcnGradients GcnLayer::backward(const NeighborGraph& graph, const Cache& cache,
                                const FeatureMatrix& upstream) const {
  if (!cache.valid) {
    throw Error(ErrorKind::StateError, "backward called without a forward cache");
  }
  const std::size_t np = graph.num_points();
  const std::size_t cin = cfg_.in_channels;
  const std::size_t cout = cfg_.out_channels;
  const std::size_t m = cfg_.kernel_size;
  const std::size_t n = graph.n;
  if (static_cast<std::size_t>(upstream.rows()) != np ||
      static_cast<std::size_t>(upstream.cols()) != cout ||
      static_cast<std::size_t>(cache.input.rows()) != np) {
    throw Error(ErrorKind::ShapeError, "upstream gradient does not match layer");
  }
  const bool max_match = cfg_.aggregation == Aggregation::MaxMatch;
  Eigen::VectorXd norms;
  const KernelMatrix kn = unit_kernels(directions_, &norms);
  const FeatureMatrix& input = cache.input;

  GcnGradients g;
  g.directions = Tensor(directions_.shape);
  g.weights = Tensor(weights_.shape);
  g.center_weights = Tensor(center_weights_.shape);
  g.input = FeatureMatrix::Zero(input.rows(), input.cols());
  KernelMatrix dkn = KernelMatrix::Zero(3, kn.cols());

  for (std::size_t p = 0; p < np; ++p) {
    const auto pi = static_cast<Eigen::Index>(p);
    for (std::size_t o = 0; o < cout; ++o) {
      const double up = upstream(pi, static_cast<Eigen::Index>(o));
      if (up == 0.0) continue;
      for (std::size_t i = 0; i < cin; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        const std::size_t pair = pair_index(o, i);
        g.center_weights[pair] += up * input(pi, ii);
        g.input(pi, ii) += up * center_weights_[pair];
        for (std::size_t t = 0; t < m; ++t) {
          const std::size_t col = pair * m + t;
          const auto ci = static_cast<Eigen::Index>(col);
          const double a = up * weights_[col];
          auto visit = [&](std::size_t j) {
            const Vec3& dj = graph.direction[p * n + j];
            const auto nb = static_cast<Eigen::Index>(graph.index[p * n + j]);
            const double c = kn.col(ci).dot(dj);
            const double f = input(nb, ii);
            g.weights[col] += up * c * f;
            dkn.col(ci) += a * f * dj;
            g.input(nb, ii) += a * c;
          };
          if (max_match) {
            const int arg = cache.argmax[((p * cin + i) * cout + o) * m + t];
            if (arg >= 0) visit(static_cast<std::size_t>(arg));
          } else {
            for (std::size_t j = 0; j < n; ++j) {
              if (!is_zero(graph.direction[p * n + j])) visit(j);
            }
          }
        }
      }
    }
  }
  // Chain through k_hat = k / |k|: the result lies in the tangent plane.
  for (Eigen::Index c = 0; c < kn.cols(); ++c) {
    const Vec3 khat = kn.col(c);
    const Vec3 gn = dkn.col(c);
    const Vec3 graw = (gn - gn.dot(khat) * khat) / norms(c);
    for (int a = 0; a < 3; ++a) g.directions[3 * static_cast<std::size_t>(c) + a] = graw[a];
  }
  return g;
}

FeatureMatrix gconv_layer_forward(const PointCloud& cloud,
                                  const FeatureMatrix& features,
                                  const GcnLayer& layer) {
  const auto graph = build_neighbor_graph(std::span<const Vec3>(cloud.points()),
                                          layer.config().n_neighbors);
  return layer.forward(graph, features);
}

Eigen::VectorXd pool_features(const FeatureMatrix& features, PoolMode mode,
                              std::vector<int>* argmax) {
  if (features.rows() == 0) throw Error(ErrorKind::EmptyInput, "no rows to pool");
  const auto cols = features.cols();
  Eigen::VectorXd out(cols);
  if (mode == PoolMode::Mean) {
    out = features.colwise().sum().transpose() / static_cast<double>(features.rows());
    return out;
  }
  if (argmax) argmax->assign(static_cast<std::size_t>(cols), 0);
  for (Eigen::Index c = 0; c < cols; ++c) {
    Eigen::Index r = 0;
    out(c) = features.col(c).maxCoeff(&r);
    if (argmax) (*argmax)[static_cast<std::size_t>(c)] = static_cast<int>(r);
  }
  return out;
}

}  // namespace posekit
