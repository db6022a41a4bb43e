#include "predaqp/cvae.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "predaqp/error.hpp"

namespace predaqp {

namespace {

using nn::Matrix;

nn::DenseNet make_gaussian_net(Eigen::Index in, int hidden, int depth, int latent, Rng& rng) {
  std::vector<Eigen::Index> widths{in};
  for (int i = 0; i < depth; ++i) widths.push_back(hidden);
  widths.push_back(2 * latent);
  return nn::DenseNet::make(widths, nn::Activation::kRelu, nn::Activation::kIdentity, rng);
}


}  // namespace

CvaeModel CvaeModel::create(const DataTransformer& transforms, const CvaeArchitecture& arch, Rng& rng) {
  if (arch.depth < 0 || arch.latent_dim <= 0 || arch.hidden <= 0)
    throw Error(ErrorCode::kInvalidArgument, "CVAE dimensions must be positive");
  CvaeModel m;
  m.arch = arch;
  m.encoded_width = transforms.encoded_width();
  const auto d = static_cast<Eigen::Index>(m.encoded_width);
  m.encoder = make_gaussian_net(2 * d, arch.hidden, arch.depth, arch.latent_dim, rng);
  m.prior = make_gaussian_net(2 * d, arch.hidden, arch.depth, arch.latent_dim, rng);
  std::vector<Eigen::Index> widths{arch.latent_dim};
  for (int i = 0; i < arch.depth; ++i) widths.push_back(arch.hidden);
  widths.push_back(d);
  m.decoder = nn::DenseNet::make(widths, nn::Activation::kRelu, nn::Activation::kIdentity, rng);
  return m;
}

void CvaeModel::serialize(ByteWriter& out) const {
  out.u32(static_cast<std::uint32_t>(arch.depth));
  out.u32(static_cast<std::uint32_t>(arch.latent_dim));
  out.u32(static_cast<std::uint32_t>(arch.hidden));
  out.u64(encoded_width);
  encoder.serialize(out);
  prior.serialize(out);
  decoder.serialize(out);
}

CvaeModel CvaeModel::deserialize(ByteReader& in) {
  CvaeModel m;
  m.arch.depth = static_cast<int>(in.u32());
  m.arch.latent_dim = static_cast<int>(in.u32());
  m.arch.hidden = static_cast<int>(in.u32());
  m.encoded_width = in.u64();
  m.encoder = nn::DenseNet::deserialize(in);
  m.prior = nn::DenseNet::deserialize(in);
  m.decoder = nn::DenseNet::deserialize(in);
  const auto d = static_cast<Eigen::Index>(m.encoded_width);
  if (m.encoder.input_width() != 2 * d || m.prior.input_width() != 2 * d || m.decoder.output_width() != d ||
      m.decoder.input_width() != m.arch.latent_dim || m.encoder.output_width() != 2 * m.arch.latent_dim)
    throw Error(ErrorCode::kCorruptFile, "CVAE network shapes are inconsistent");
  return m;
}

CvaeBatch make_batch(const DataTransformer& transforms, const nn::Matrix& encoded_table,
                     const std::vector<std::vector<int>>& label_table, std::span<const std::size_t> rows,
                     const Mask& attribute_mask) {
  const auto b = static_cast<Eigen::Index>(rows.size());
  const auto d = static_cast<Eigen::Index>(transforms.encoded_width());
  if (attribute_mask.rows() != rows.size()) throw Error(ErrorCode::kShapeMismatch, "mask rows != batch rows");
  CvaeBatch batch;
  batch.encoded.resize(d, b);
  batch.mask.resize(d, b);
  for (Eigen::Index j = 0; j < b; ++j) {
    batch.encoded.col(j) = encoded_table.col(static_cast<Eigen::Index>(rows[static_cast<std::size_t>(j)]));
    batch.mask.col(j) = transforms.expand_mask(attribute_mask.row(static_cast<std::size_t>(j)));
  }
  batch.targets.assign(label_table.size(), std::vector<int>(rows.size()));
  for (std::size_t c = 0; c < label_table.size(); ++c)
    for (std::size_t j = 0; j < rows.size(); ++j) batch.targets[c][j] = label_table[c][rows[j]];
  return batch;
}

ElboResult elbo_loss(const CvaeModel& model, const DataTransformer& transforms, const CvaeBatch& batch,
                     const nn::Matrix& noise, CvaeGradients* grads, const LossWeights& weights) {
  const Eigen::Index d = static_cast<Eigen::Index>(model.encoded_width);
  const Eigen::Index b = batch.encoded.cols();
  if (batch.encoded.rows() != d || batch.mask.rows() != d || batch.mask.cols() != b)
    throw Error(ErrorCode::kShapeMismatch, "batch does not match the model width");
  if (noise.rows() != model.arch.latent_dim || noise.cols() != b)
    throw Error(ErrorCode::kShapeMismatch, "noise must be L x b");

  Matrix enc_in(2 * d, b);
  enc_in.topRows(d) = batch.encoded;
  enc_in.bottomRows(d) = batch.mask;
  Matrix prior_in(2 * d, b);
  prior_in.topRows(d) = batch.encoded.cwiseProduct((1.0 - batch.mask.array()).matrix());
  prior_in.bottomRows(d) = batch.mask;

  nn::ForwardCache ec, pc, dc;
  const Matrix enc_out = model.encoder.forward(enc_in, grads ? &ec : nullptr);
  const Matrix prior_out = model.prior.forward(prior_in, grads ? &pc : nullptr);
  Matrix q_clip, p_clip;
  const auto q = nn::gaussian_from_head(enc_out, &q_clip);
  const auto p = nn::gaussian_from_head(prior_out, &p_clip);
  const Matrix z = nn::reparameterize(q, noise);
  const Matrix dec_out = model.decoder.forward(z, grads ? &dc : nullptr);

  Matrix d_dec = Matrix::Zero(d, b);
  nn::RowVector recon = nn::RowVector::Zero(b);
  for (const auto& block : transforms.layout()) {
    const auto off = static_cast<Eigen::Index>(block.offset);
    const auto w = static_cast<Eigen::Index>(block.one_hot_width);
    const double scale = block.kind == ColumnKind::kCategorical ? weights.categorical : weights.numerical;
    Matrix g(w, b);
    const auto& tgt = batch.targets[block.column];
    recon += scale * nn::softmax_cross_entropy(dec_out.middleRows(off, w), tgt, g);
    d_dec.middleRows(off, w) = scale * g;
    if (block.kind == ColumnKind::kNumerical) {
      const auto ri = static_cast<Eigen::Index>(block.residual_index());
      nn::RowVector gr(b);
      recon += scale * nn::unit_gaussian_nll(dec_out.row(ri), batch.encoded.row(ri), gr);
      d_dec.row(ri) = scale * gr;
    }
  }
  const auto kl = nn::kl_diagonal_gaussians(q, p);

  ElboResult r;
  const double inv_b = 1.0 / static_cast<double>(b);
  r.kl = kl.value.sum() * inv_b;
  r.reconstruction = recon.sum() * inv_b;
  r.loss = r.kl + r.reconstruction;
  if (!std::isfinite(r.loss)) throw Error(ErrorCode::kNonFiniteLoss, "negative ELBO is not finite");
  if (!grads) return r;

  d_dec *= inv_b;
  const Matrix dz = model.decoder.backward(dc, d_dec, grads->decoder);
  const Eigen::Index l = model.arch.latent_dim;
  Matrix d_enc(2 * l, b);
  d_enc.topRows(l) = kl.d_q_mean * inv_b + dz;
  d_enc.bottomRows(l) =
      ((kl.d_q_logvar * inv_b).array() + dz.array() * noise.array() * 0.5 * (0.5 * q.logvar.array()).exp()) *
      q_clip.array();
  model.encoder.backward(ec, d_enc, grads->encoder);
  Matrix d_prior(2 * l, b);
  d_prior.topRows(l) = kl.d_p_mean * inv_b;
  d_prior.bottomRows(l) = (kl.d_p_logvar * inv_b).cwiseProduct(p_clip);
  model.prior.backward(pc, d_prior, grads->prior);
  return r;
}

CvaeTrainReport train_cvae(CvaeModel& model, const DataTransformer& transforms, const Table& table,
                           const CvaeTrainConfig& config, const EpochCallback& on_epoch) {
  if (table.empty()) throw Error(ErrorCode::kEmptyTable, "cannot train on an empty table");
  if (config.batch <= 0 || config.epochs <= 0 || !(config.lr > 0.0))
    throw Error(ErrorCode::kInvalidArgument, "epochs, batch and lr must be positive");

  const Matrix encoded = transforms.encode_table(table);
  const auto labels = transforms.label_table(table);
  const auto& schema = table.schema();

  MaskPolicy policy;
  policy.kind = config.mask_kind;
  policy.factor = config.mask_factor;
  if (policy.kind == MaskKind::kStratified)
    policy.strata = label_strata(compute_strata(table), transforms.encoder(), schema);

  CvaeGradients grads;
  std::vector<nn::ParamBlock> blocks;
  nn::collect_params(model.encoder, grads.encoder, blocks);
  nn::collect_params(model.prior, grads.prior, blocks);
  nn::collect_params(model.decoder, grads.decoder, blocks);
  nn::Adam adam({config.lr, 0.9, 0.999, 1e-8});

  Rng shuffle_rng(derive_seed(config.seed, "train/shuffle"));
  Rng mask_rng(config.mask_seed ? *config.mask_seed : derive_seed(config.seed, "mask"));
  Rng noise_rng(derive_seed(config.seed, "train/noise"));

  const std::size_t n = table.row_count();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  LabelBatch lb;
  for (const auto& c : schema.columns()) lb.kinds.push_back(c.kind);
  lb.labels.resize(schema.size());
  lb.missing.resize(schema.size());

  const LossWeights weights{config.categorical_weight, config.numerical_weight};
  CvaeTrainReport report;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(shuffle_rng, i)]);
    double sum_loss = 0.0, sum_kl = 0.0, sum_rec = 0.0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(config.batch)) {
      const std::size_t stop = std::min(n, start + static_cast<std::size_t>(config.batch));
      const std::span<const std::size_t> rows(order.data() + start, stop - start);
      for (std::size_t c = 0; c < schema.size(); ++c) {
        lb.labels[c].resize(rows.size());
        for (std::size_t j = 0; j < rows.size(); ++j) lb.labels[c][j] = labels[c][rows[j]];
        lb.missing[c].clear();
        if (schema.is_categorical(c)) {
          lb.missing[c].resize(rows.size());
          for (std::size_t j = 0; j < rows.size(); ++j) lb.missing[c][j] = table.missing(rows[j], c) ? 1 : 0;
        }
      }
      const Mask mask = make_mask(policy, lb, mask_rng);
      const CvaeBatch batch = make_batch(transforms, encoded, labels, rows, mask);
      const Matrix noise = nn::standard_normal_matrix(model.arch.latent_dim, static_cast<Eigen::Index>(rows.size()), noise_rng);
      ElboResult r;
      try {
        r = elbo_loss(model, transforms, batch, noise, &grads, weights);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::kNonFiniteLoss)
          throw Error(ErrorCode::kNonFiniteLoss, "epoch " + std::to_string(epoch + 1) + " aborted: loss is not finite");
        throw;
      }
      adam.step(blocks);
      const double w = static_cast<double>(rows.size());
      sum_loss += r.loss * w;
      sum_kl += r.kl * w;
      sum_rec += r.reconstruction * w;
    }
    const double nd = static_cast<double>(n);
    report.epoch_loss.push_back(sum_loss / nd);
    report.epoch_kl.push_back(sum_kl / nd);
    report.epoch_reconstruction.push_back(sum_rec / nd);
    if (on_epoch) on_epoch(epoch + 1, sum_loss / nd);
  }
  return report;
}

namespace {

/// Prior input for a set of equality conditions: observed one-hots followed by
/// the expanded mask.
nn::Matrix prior_input(const DataTransformer& transforms, const std::vector<Condition>& conditions) {
  const auto& schema = transforms.schema();
  std::set<std::size_t> cols;
  const auto d = static_cast<Eigen::Index>(transforms.encoded_width());
  nn::Matrix in = nn::Matrix::Zero(2 * d, 1);
  for (const auto& [col, value] : conditions) {
    if (col >= schema.size()) throw Error(ErrorCode::kUnknownColumn, "condition column out of range");
    if (!schema.is_categorical(col))
      throw Error(ErrorCode::kTypeMismatch, "conditions must be on categorical columns");
    const int label = transforms.encoder().encode(col, value);
    const auto& block = transforms.layout()[col];
    in(static_cast<Eigen::Index>(block.offset) + label, 0) = 1.0;
    cols.insert(col);
  }
  const Mask m = query_mask(schema, cols);
  in.bottomRows(d) = transforms.expand_mask(m.row(0));
  return in;
}

}  // namespace

Table generate(const CvaeModel& model, const DataTransformer& transforms, const std::vector<Condition>& conditions,
               std::size_t n, Rng& rng, DecodeMode mode) {
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "sample count must be positive");
  const nn::Matrix in = prior_input(transforms, conditions);
  const auto p = nn::gaussian_from_head(model.prior.forward(in));
  const auto cols = static_cast<Eigen::Index>(n);
  nn::DiagonalGaussian batch{p.mean.replicate(1, cols), p.logvar.replicate(1, cols)};
  const nn::Matrix z = nn::reparameterize(batch, nn::standard_normal_matrix(model.arch.latent_dim, cols, rng));
  const nn::Matrix out = model.decoder.forward(z);
  Table table(transforms.schema());
  table.reserve(n);
  const auto d = transforms.encoded_width();
  for (Eigen::Index j = 0; j < cols; ++j)
    table.append(transforms.decode_row(std::span<const double>(out.col(j).data(), d), mode, &rng));
  return table;
}

double MarginalFidelity::max_tv() const {
  double m = 0.0;
  for (const auto& [c, tv] : categorical_tv) m = std::max(m, tv);
  return m;
}

MarginalFidelity marginal_fidelity_report(const CvaeModel& model, const DataTransformer& transforms,
                                          const Table& table, std::size_t n, Rng& rng) {
  const Table gen = generate(model, transforms, {}, n, rng);
  MarginalFidelity out;
  const auto& schema = table.schema();
  const double nr = static_cast<double>(table.row_count());
  const double ng = static_cast<double>(gen.row_count());
  for (auto c : schema.categorical_indices()) {
    std::map<std::string, std::pair<double, double>> counts;
    for (const auto& v : table.categorical_column(c)) counts[v].first += 1.0;
    for (const auto& v : gen.categorical_column(c)) counts[v].second += 1.0;
    double tv = 0.0;
    for (const auto& [v, k] : counts) tv += std::abs(k.first / nr - k.second / ng);
    out.categorical_tv.emplace_back(c, 0.5 * tv);
  }
  auto moments = [](const std::vector<double>& v) {
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::pair{mean, std::sqrt(ss / static_cast<double>(v.size()))};
  };
  for (auto c : schema.numerical_indices()) {
    const auto [rm, rs] = moments(table.numerical_column(c));
    const auto [gm, gs] = moments(gen.numerical_column(c));
    out.numerical.push_back({c, rm, rs, gm, gs});
  }
  return out;
}

double masked_reconstruction_nll(const CvaeModel& model, const DataTransformer& transforms, const Table& holdout,
                                 double observe_rate, Rng& rng) {
  if (holdout.empty()) throw Error(ErrorCode::kEmptyTable, "holdout table is empty");
  const auto& schema = transforms.schema();
  const auto d = static_cast<Eigen::Index>(transforms.encoded_width());
  const nn::Matrix encoded = transforms.encode_table(holdout);
  const auto labels = transforms.label_table(holdout);
  const auto n = static_cast<Eigen::Index>(holdout.row_count());

  nn::Matrix attr_mask(static_cast<Eigen::Index>(schema.size()), n);
  nn::Matrix prior_in(2 * d, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    Mask m(1, schema.size(), 1);
    for (auto c : schema.categorical_indices())
      if (uniform01(rng) < observe_rate) m.set(0, c, 0);
    for (std::size_t c = 0; c < schema.size(); ++c) attr_mask(static_cast<Eigen::Index>(c), j) = m(0, c);
    const nn::Vector em = transforms.expand_mask(m.row(0));
    prior_in.col(j).head(d) = encoded.col(j).cwiseProduct((1.0 - em.array()).matrix());
    prior_in.col(j).tail(d) = em;
  }
  const auto p = nn::gaussian_from_head(model.prior.forward(prior_in));
  const nn::Matrix z = nn::reparameterize(p, nn::standard_normal_matrix(model.arch.latent_dim, n, rng));
  const nn::Matrix out = model.decoder.forward(z);

  double total = 0.0;
  for (const auto& block : transforms.layout()) {
    const auto off = static_cast<Eigen::Index>(block.offset);
    const auto w = static_cast<Eigen::Index>(block.one_hot_width);
    nn::Matrix g(w, n);
    const nn::RowVector ce = nn::softmax_cross_entropy(out.middleRows(off, w), labels[block.column], g);
    nn::RowVector row_loss = ce;
    if (block.kind == ColumnKind::kNumerical) {
      const auto ri = static_cast<Eigen::Index>(block.residual_index());
      nn::RowVector gr(n);
      row_loss += nn::unit_gaussian_nll(out.row(ri), encoded.row(ri), gr);
    }
    total += row_loss.cwiseProduct(attr_mask.row(static_cast<Eigen::Index>(block.column))).sum();
  }
  return total / static_cast<double>(n);
}

}  // namespace predaqp
