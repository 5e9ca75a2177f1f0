#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "posekit/core_geom.hpp"
#include "posekit/random.hpp"
#include "posekit/tensor.hpp"

namespace posekit {

/// How a kernel vector is matched against the neighbor directions.
///  MaxMatch: w_i * max_j cos(k_i, d_j) f_j   (default)
///  SumPairs: w_i * sum_j cos(k_i, d_j) f_j
enum class Aggregation { MaxMatch, SumPairs };

/// m weighted unit kernel vectors plus a weight on the center feature.
struct KernelSet {
  std::vector<Vec3> directions;
  std::vector<double> weights;
  double center_weight = 0.0;

  std::size_t size() const { return directions.size(); }
  /// Rescales every direction to unit norm. InvalidParameter on zero vectors
  /// or a weight count that does not match.
  void normalize();
};

struct GcnLayerConfig {
  std::size_t n_neighbors = 10;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_size = 3;  // m
  Aggregation aggregation = Aggregation::MaxMatch;

  void validate() const;
};

/// k-NN graph with unit directions from each point to its neighbors.
/// Duplicate points produce zero directions, which never take part in a match.
struct NeighborGraph {
  std::size_t n = 0;
  std::vector<std::size_t> index;  // row-major [point][neighbor]
  std::vector<Vec3> direction;     // same layout; unit or exactly zero

  std::size_t num_points() const { return n == 0 ? 0 : index.size() / n; }
};

NeighborGraph build_neighbor_graph(std::span<const Vec3> points, std::size_t n);

std::vector<Vec3> neighbor_directions(const PointCloud& cloud, std::size_t index,
                                      std::size_t n);

double gconv_response(const KernelSet& kernel, std::span<const Vec3> dirs,
                      double center_feature,
                      std::span<const double> neighbor_features,
                      Aggregation aggregation = Aggregation::MaxMatch);

struct GcnGradients {
  Tensor directions;      // [out][in][m][3], w.r.t. the stored (raw) vectors
  Tensor weights;         // [out][in][m]
  Tensor center_weights;  // [out][in]
  FeatureMatrix input;    // N x in
};

/// One 3DGC layer: a KernelSet per (out, in) channel pair.
class GcnLayer {
 public:
  struct Cache {
    bool valid = false;
    FeatureMatrix input;
    std::vector<int> argmax;  // [point][in][out][m], -1 when no candidate
  };

  explicit GcnLayer(GcnLayerConfig cfg);

  const GcnLayerConfig& config() const { return cfg_; }

  KernelSet kernel(std::size_t out, std::size_t in) const;
  void set_kernel(std::size_t out, std::size_t in, KernelSet kernel);

  void init_random(Rng& rng);
  /// Projects every kernel direction back onto the unit sphere.
  void renormalize();

  /// out(p, o) = sum_i response(kernel[o][i], dirs(p), f(p, i), f(nbrs, i))
  FeatureMatrix forward(const NeighborGraph& graph, const FeatureMatrix& input,
                        Cache* cache = nullptr) const;
  /// Throws StateError when `cache` was not filled by forward().
  GcnGradients backward(const NeighborGraph& graph, const Cache& cache,
                        const FeatureMatrix& upstream) const;

  Tensor& directions() { return directions_; }
  Tensor& weights() { return weights_; }
  Tensor& center_weights() { return center_weights_; }
  const Tensor& directions() const { return directions_; }
  const Tensor& weights() const { return weights_; }
  const Tensor& center_weights() const { return center_weights_; }

 private:
  std::size_t pair_index(std::size_t out, std::size_t in) const {
    return out * cfg_.in_channels + in;
  }

  GcnLayerConfig cfg_;
  Tensor directions_;
  Tensor weights_;
  Tensor center_weights_;
};

FeatureMatrix gconv_layer_forward(const PointCloud& cloud,
                                  const FeatureMatrix& features,
                                  const GcnLayer& layer);

enum class PoolMode { Max, Mean };

/// Channelwise pooling over rows. Max pooling reports the winning row per
/// channel through `argmax` when given.
Eigen::VectorXd pool_features(const FeatureMatrix& features, PoolMode mode,
                              std::vector<int>* argmax = nullptr);

}  // namespace posekit
