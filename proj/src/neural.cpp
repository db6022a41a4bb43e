#include "predaqp/neural.hpp"

#include <cmath>

#include "predaqp/error.hpp"

namespace predaqp::nn {

DenseLayer make_layer(Eigen::Index in, Eigen::Index out, Activation activation, Rng& rng) {
  DenseLayer layer;
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  layer.weight.resize(out, in);
  // Column-major fill order is part of the reproducibility contract.
  for (Eigen::Index j = 0; j < in; ++j)
    for (Eigen::Index i = 0; i < out; ++i) layer.weight(i, j) = (2.0 * uniform01(rng) - 1.0) * limit;
  layer.bias = Vector::Zero(out);
  layer.activation = activation;
  return layer;
}

void apply_mask(DenseLayer& layer, Matrix mask) {
  if (mask.rows() != layer.weight.rows() || mask.cols() != layer.weight.cols())
    throw Error(ErrorCode::kShapeMismatch, "mask shape must match weight shape");
  layer.weight = layer.weight.cwiseProduct(mask);
  layer.mask = std::move(mask);
}

Matrix relu(const Matrix& x) { return x.cwiseMax(0.0); }

Matrix layer_forward(const DenseLayer& layer, const Matrix& x, LayerCache* cache) {
  if (x.rows() != layer.in())
    throw Error(ErrorCode::kShapeMismatch, "layer expects width " + std::to_string(layer.in()) + ", got " +
                                               std::to_string(x.rows()));
  Matrix pre = layer.weight * x;
  pre.colwise() += layer.bias;
  Matrix out = layer.activation == Activation::kRelu ? relu(pre) : pre;
  if (cache) {
    cache->input = x;
    cache->pre_activation = std::move(pre);
  }
  return out;
}

Matrix layer_backward(const DenseLayer& layer, const LayerCache& cache, const Matrix& grad_out, LayerGrad& grad) {
  if (grad_out.rows() != layer.out() || grad_out.cols() != cache.input.cols())
    throw Error(ErrorCode::kShapeMismatch, "upstream gradient shape mismatch");
  Matrix dpre = grad_out;
  if (layer.activation == Activation::kRelu)
    dpre = (cache.pre_activation.array() > 0.0).select(grad_out, 0.0);
  grad.weight.noalias() = dpre * cache.input.transpose();
  if (layer.masked()) grad.weight = grad.weight.cwiseProduct(layer.mask);
  grad.bias = dpre.rowwise().sum();
  return layer.weight.transpose() * dpre;
}

DenseNet::DenseNet(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw Error(ErrorCode::kInvalidArgument, "network needs at least one layer");
  for (std::size_t i = 1; i < layers_.size(); ++i)
    if (layers_[i].in() != layers_[i - 1].out())
      throw Error(ErrorCode::kShapeMismatch, "layer " + std::to_string(i) + " does not chain");
}

DenseNet DenseNet::make(std::span<const Eigen::Index> widths, Activation hidden, Activation output, Rng& rng) {
  if (widths.size() < 2) throw Error(ErrorCode::kInvalidArgument, "need input and output widths");
  std::vector<DenseLayer> layers;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i)
    layers.push_back(make_layer(widths[i], widths[i + 1], i + 2 == widths.size() ? output : hidden, rng));
  return DenseNet(std::move(layers));
}

Matrix DenseNet::forward(const Matrix& x, ForwardCache* cache) const {
  if (cache) cache->layers.resize(layers_.size());
  Matrix h = layer_forward(layers_[0], x, cache ? &cache->layers[0] : nullptr);
  for (std::size_t i = 1; i < layers_.size(); ++i) h = layer_forward(layers_[i], h, cache ? &cache->layers[i] : nullptr);
  return h;
}

Matrix DenseNet::backward(const ForwardCache& cache, const Matrix& upstream, NetGradients& grads) const {
  if (cache.empty() || cache.layers.size() != layers_.size())
    throw Error(ErrorCode::kNoForwardCache, "backward called without a matching forward cache");
  grads.layers.resize(layers_.size());
  Matrix g = upstream;
  for (std::size_t i = layers_.size(); i-- > 0;) g = layer_backward(layers_[i], cache.layers[i], g, grads.layers[i]);
  return g;
}

std::size_t DenseNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

void DenseNet::serialize(ByteWriter& out) const {
  out.u32(static_cast<std::uint32_t>(layers_.size()));
  for (const auto& l : layers_) {
    out.u64(static_cast<std::uint64_t>(l.out()));
    out.u64(static_cast<std::uint64_t>(l.in()));
    out.u8(static_cast<std::uint8_t>(l.activation));
    out.u8(l.masked() ? 1 : 0);
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) out.f64(l.weight.data()[i]);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) out.f64(l.bias[i]);
    if (l.masked())
      for (Eigen::Index i = 0; i < l.mask.size(); ++i) out.u8(l.mask.data()[i] != 0.0 ? 1 : 0);
  }
}

DenseNet DenseNet::deserialize(ByteReader& in) {
  const auto n = in.u32();
  if (n == 0 || n > 4096) throw Error(ErrorCode::kCorruptFile, "bad layer count");
  std::vector<DenseLayer> layers(n);
  for (auto& l : layers) {
    const auto rows = in.u64();
    const auto cols = in.u64();
    if (rows == 0 || cols == 0 || rows > (1u << 20) || cols > (1u << 20) || rows * cols * 8 > in.remaining())
      throw Error(ErrorCode::kCorruptFile, "bad layer shape");
    const auto act = in.u8();
    if (act > 1) throw Error(ErrorCode::kCorruptFile, "bad activation");
    l.activation = static_cast<Activation>(act);
    const bool masked = in.u8() != 0;
    l.weight.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = in.f64();
    l.bias.resize(static_cast<Eigen::Index>(rows));
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias[i] = in.f64();
    if (masked) {
      l.mask.resize(l.weight.rows(), l.weight.cols());
      for (Eigen::Index i = 0; i < l.mask.size(); ++i) l.mask.data()[i] = in.u8() ? 1.0 : 0.0;
    }
  }
  return DenseNet(std::move(layers));
}

bool DenseNet::operator==(const DenseNet& other) const {
  if (layers_.size() != other.layers_.size()) return false;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& a = layers_[i];
    const auto& b = other.layers_[i];
    if (a.activation != b.activation || a.weight.rows() != b.weight.rows() || a.weight.cols() != b.weight.cols() ||
        a.mask.size() != b.mask.size())
      return false;
    if (a.weight != b.weight || a.bias != b.bias || a.mask != b.mask) return false;
  }
  return true;
}

void collect_params(DenseLayer& layer, LayerGrad& grad, std::vector<ParamBlock>& out) {
  if (grad.weight.size() != layer.weight.size()) grad.weight = Matrix::Zero(layer.weight.rows(), layer.weight.cols());
  if (grad.bias.size() != layer.bias.size()) grad.bias = Vector::Zero(layer.bias.size());
  out.push_back({layer.weight.data(), grad.weight.data(), static_cast<std::size_t>(layer.weight.size())});
  out.push_back({layer.bias.data(), grad.bias.data(), static_cast<std::size_t>(layer.bias.size())});
}

void collect_params(DenseNet& net, NetGradients& grads, std::vector<ParamBlock>& out) {
  grads.layers.resize(net.layers().size());
  for (std::size_t i = 0; i < net.layers().size(); ++i) collect_params(net.layers()[i], grads.layers[i], out);
}

void Adam::step(std::span<const ParamBlock> blocks, double lr_scale) {
  if (m_.empty()) {
    m_.resize(blocks.size());
    v_.resize(blocks.size());
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      m_[b].assign(blocks[b].size, 0.0);
      v_[b].assign(blocks[b].size, 0.0);
    }
  }
  if (blocks.size() != m_.size()) throw Error(ErrorCode::kShapeMismatch, "parameter block count changed");
  for (std::size_t b = 0; b < blocks.size(); ++b)
    if (blocks[b].size != m_[b].size()) throw Error(ErrorCode::kShapeMismatch, "parameter block shape changed");
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  const double lr = config_.lr * lr_scale;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    double* p = blocks[b].value;
    const double* g = blocks[b].grad;
    auto& m = m_[b];
    auto& v = v_[b];
    for (std::size_t i = 0; i < blocks[b].size; ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + config_.eps);
    }
  }
}

DiagonalGaussian gaussian_from_head(const Matrix& head, Matrix* clip_mask) {
  if (head.rows() % 2 != 0) throw Error(ErrorCode::kShapeMismatch, "Gaussian head needs an even width");
  const Eigen::Index l = head.rows() / 2;
  DiagonalGaussian g;
  g.mean = head.topRows(l);
  const Matrix raw = head.bottomRows(l);
  g.logvar = raw.cwiseMax(-kLogVarClip).cwiseMin(kLogVarClip);
  if (clip_mask) *clip_mask = (raw.array().abs() <= kLogVarClip).cast<double>();
  return g;
}

KlResult kl_diagonal_gaussians(const DiagonalGaussian& q, const DiagonalGaussian& p) {
  if (q.mean.rows() != p.mean.rows() || q.mean.cols() != p.mean.cols() || q.logvar.rows() != q.mean.rows() ||
      p.logvar.rows() != p.mean.rows())
    throw Error(ErrorCode::kShapeMismatch, "KL operands differ in shape");
  KlResult r;
  const Eigen::ArrayXXd var_ratio = (q.logvar.array() - p.logvar.array()).exp();
  const Eigen::ArrayXXd inv_var_p = (-p.logvar.array()).exp();
  const Eigen::ArrayXXd diff = q.mean.array() - p.mean.array();
  const Eigen::ArrayXXd ratio = var_ratio + diff.square() * inv_var_p;
  r.value = (0.5 * (p.logvar.array() - q.logvar.array() + ratio - 1.0)).matrix().colwise().sum();
  r.d_q_mean = (diff * inv_var_p).matrix();
  r.d_p_mean = -r.d_q_mean;
  r.d_q_logvar = (0.5 * (var_ratio - 1.0)).matrix();
  r.d_p_logvar = (0.5 * (1.0 - ratio)).matrix();
  return r;
}

double kl_diagonal_gaussians(const Vector& q_mean, const Vector& q_logvar, const Vector& p_mean,
                             const Vector& p_logvar) {
  DiagonalGaussian q{q_mean, q_logvar.cwiseMax(-kLogVarClip).cwiseMin(kLogVarClip)};
  DiagonalGaussian p{p_mean, p_logvar.cwiseMax(-kLogVarClip).cwiseMin(kLogVarClip)};
  return kl_diagonal_gaussians(q, p).value(0);
}

Matrix reparameterize(const DiagonalGaussian& g, const Matrix& noise) {
  if (noise.rows() != g.mean.rows() || noise.cols() != g.mean.cols())
    throw Error(ErrorCode::kShapeMismatch, "noise shape must match the Gaussian");
  return g.mean.array() + (0.5 * g.logvar.array()).exp() * noise.array();
}

Matrix standard_normal_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = standard_normal(rng);
  return m;
}

RowVector softmax_cross_entropy(const Eigen::Ref<const Matrix>& logits, std::span<const int> targets,
                                Eigen::Ref<Matrix> grad) {
  const Eigen::Index n = logits.cols();
  if (static_cast<Eigen::Index>(targets.size()) != n || grad.rows() != logits.rows() || grad.cols() != n)
    throw Error(ErrorCode::kShapeMismatch, "cross-entropy operand shapes differ");
  RowVector loss(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double mx = logits.col(j).maxCoeff();
    const Eigen::ArrayXd e = (logits.col(j).array() - mx).exp();
    const double s = e.sum();
    const auto t = targets[static_cast<std::size_t>(j)];
    loss(j) = std::log(s) + mx - logits(t, j);
    grad.col(j) = (e / s).matrix();
    grad(t, j) -= 1.0;
  }
  return loss;
}

RowVector unit_gaussian_nll(const Eigen::Ref<const RowVector>& prediction, const Eigen::Ref<const RowVector>& target,
                            Eigen::Ref<RowVector> grad) {
  if (prediction.size() != target.size() || grad.size() != prediction.size())
    throw Error(ErrorCode::kShapeMismatch, "Gaussian NLL operand shapes differ");
  grad = prediction - target;
  return 0.5 * grad.array().square().matrix();
}

}  // namespace predaqp::nn
