#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <vector>

#include "predaqp/bytes.hpp"
#include "predaqp/rng.hpp"

namespace predaqp::nn {

// Batches are column-major: one sample per column.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

enum class Activation : std::uint8_t { kIdentity = 0, kRelu = 1 };

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;
  Activation activation = Activation::kIdentity;
  /// Optional 0/1 connectivity mask, same shape as weight. Masked weights are
  /// kept at exactly zero and receive zero gradient.
  Matrix mask;

  Eigen::Index in() const { return weight.cols(); }
  Eigen::Index out() const { return weight.rows(); }
  bool masked() const { return mask.size() != 0; }
};

struct LayerCache {
  Matrix input;
  Matrix pre_activation;
};

struct LayerGrad {
  Matrix weight;
  Vector bias;
};

DenseLayer make_layer(Eigen::Index in, Eigen::Index out, Activation activation, Rng& rng);
void apply_mask(DenseLayer& layer, Matrix mask);

Matrix layer_forward(const DenseLayer& layer, const Matrix& x, LayerCache* cache);
/// Writes parameter gradients into `grad` and returns the input gradient.
Matrix layer_backward(const DenseLayer& layer, const LayerCache& cache, const Matrix& grad_out, LayerGrad& grad);

struct ForwardCache {
  std::vector<LayerCache> layers;
  bool empty() const { return layers.empty(); }
};

struct NetGradients {
  std::vector<LayerGrad> layers;
};

/// Plain feed-forward stack of dense layers.
class DenseNet {
 public:
  DenseNet() = default;
  explicit DenseNet(std::vector<DenseLayer> layers);

  /// widths = {in, hidden..., out}; hidden layers use `hidden`, the last `output`.
  static DenseNet make(std::span<const Eigen::Index> widths, Activation hidden, Activation output, Rng& rng);

  Eigen::Index input_width() const { return layers_.front().in(); }
  Eigen::Index output_width() const { return layers_.back().out(); }
  std::size_t depth() const { return layers_.size(); }

  Matrix forward(const Matrix& x, ForwardCache* cache = nullptr) const;
  /// Throws kNoForwardCache when `cache` is empty.
  Matrix backward(const ForwardCache& cache, const Matrix& upstream, NetGradients& grads) const;

  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  std::size_t parameter_count() const;
  void serialize(ByteWriter& out) const;
  static DenseNet deserialize(ByteReader& in);

  bool operator==(const DenseNet& other) const;

 private:
  std::vector<DenseLayer> layers_;
};

struct ParamBlock {
  double* value = nullptr;
  const double* grad = nullptr;
  std::size_t size = 0;
};

void collect_params(DenseNet& net, NetGradients& grads, std::vector<ParamBlock>& out);
void collect_params(DenseLayer& layer, LayerGrad& grad, std::vector<ParamBlock>& out);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moment buffers are sized on the first step and
/// every later step must present the same block shapes.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  void step(std::span<const ParamBlock> blocks, double lr_scale = 1.0);

  long steps() const noexcept { return t_; }
  const AdamConfig& config() const noexcept { return config_; }

 private:
  AdamConfig config_;
  long t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

inline constexpr double kLogVarClip = 10.0;

/// Diagonal Gaussians, one per column.
struct DiagonalGaussian {
  Matrix mean;    // L x n
  Matrix logvar;  // L x n, clipped to [-10, 10]
  Eigen::Index dim() const { return mean.rows(); }
};

/// Splits a 2L x n head output into (mean, clipped logvar). `clip_mask`, when
/// given, receives 1 where the logvar was inside the clip range (gradient passes).
DiagonalGaussian gaussian_from_head(const Matrix& head, Matrix* clip_mask = nullptr);

struct KlResult {
  RowVector value;  // per column
  Matrix d_q_mean, d_q_logvar, d_p_mean, d_p_logvar;
};

/// Closed-form KL(q || p) for diagonal Gaussians, per column, with gradients.
KlResult kl_diagonal_gaussians(const DiagonalGaussian& q, const DiagonalGaussian& p);
double kl_diagonal_gaussians(const Vector& q_mean, const Vector& q_logvar, const Vector& p_mean,
                             const Vector& p_logvar);

/// z = mean + exp(logvar / 2) * noise.
Matrix reparameterize(const DiagonalGaussian& g, const Matrix& noise);
Matrix standard_normal_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng);

/// Softmax cross-entropy of one logit block per column against integer targets.
/// Returns per-column losses and writes d(loss)/d(logits) into `grad` (same shape).
RowVector softmax_cross_entropy(const Eigen::Ref<const Matrix>& logits, std::span<const int> targets,
                                Eigen::Ref<Matrix> grad);

/// Unit-variance Gaussian negative log-density without the constant:
/// 0.5 * (prediction - target)^2, with gradient prediction - target.
RowVector unit_gaussian_nll(const Eigen::Ref<const RowVector>& prediction, const Eigen::Ref<const RowVector>& target,
                            Eigen::Ref<RowVector> grad);

Matrix relu(const Matrix& x);

}  // namespace predaqp::nn
