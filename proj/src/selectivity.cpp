#include "predaqp/selectivity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include <spdlog/spdlog.h>

#include "predaqp/error.hpp"

namespace predaqp {

using nn::Matrix;

void ArDensityModel::build_index() {
  const std::size_t k = columns_.size();
  if (vocab_.size() != k || ordering_.size() != k)
    throw Error(ErrorCode::kInvalidArgument, "columns, vocabularies and ordering differ in length");
  rank_.assign(k, k);
  for (std::size_t r = 0; r < k; ++r) {
    if (ordering_[r] >= k || rank_[ordering_[r]] != k)
      throw Error(ErrorCode::kInvalidArgument, "ordering is not a permutation");
    rank_[ordering_[r]] = r;
  }
  offsets_.resize(k);
  input_width_ = 0;
  for (std::size_t j = 0; j < k; ++j) {
    if (vocab_[j] == 0) throw Error(ErrorCode::kInvalidArgument, "empty vocabulary");
    offsets_[j] = input_width_;
    input_width_ += vocab_[j];
  }
}

ArDensityModel ArDensityModel::create(std::vector<std::size_t> columns, std::vector<std::size_t> vocab,
                                      std::vector<std::size_t> ordering, int depth, int hidden, Rng& rng) {
  if (columns.empty()) throw Error(ErrorCode::kInvalidArgument, "density model needs a categorical column");
  if (depth < 0 || hidden <= 0) throw Error(ErrorCode::kInvalidArgument, "depth and width must be positive");
  ArDensityModel m;
  m.columns_ = std::move(columns);
  m.vocab_ = std::move(vocab);
  m.ordering_ = std::move(ordering);
  m.depth_ = depth;
  m.hidden_ = hidden;
  m.build_index();

  const std::size_t k = m.columns_.size();
  const auto in = static_cast<Eigen::Index>(m.input_width_);
  const Eigen::Index h = hidden;
  const std::size_t cycle = std::max<std::size_t>(1, k - 1);
  std::vector<std::size_t> in_deg(m.input_width_), hid_deg(static_cast<std::size_t>(hidden));
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t v = 0; v < m.vocab_[j]; ++v) in_deg[m.offsets_[j] + v] = m.rank_[j] + 1;
  for (std::size_t u = 0; u < hid_deg.size(); ++u) hid_deg[u] = 1 + u % cycle;

  Matrix m_in(h, in), m_hid(h, h), m_out(in, h);
  for (Eigen::Index u = 0; u < h; ++u)
    for (Eigen::Index i = 0; i < in; ++i)
      m_in(u, i) = hid_deg[static_cast<std::size_t>(u)] >= in_deg[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
  for (Eigen::Index u = 0; u < h; ++u)
    for (Eigen::Index v = 0; v < h; ++v)
      m_hid(u, v) = hid_deg[static_cast<std::size_t>(u)] >= hid_deg[static_cast<std::size_t>(v)] ? 1.0 : 0.0;
  for (Eigen::Index o = 0; o < in; ++o)
    for (Eigen::Index v = 0; v < h; ++v)
      m_out(o, v) = hid_deg[static_cast<std::size_t>(v)] < in_deg[static_cast<std::size_t>(o)] ? 1.0 : 0.0;

  std::vector<nn::DenseLayer> layers;
  layers.push_back(nn::make_layer(in, h, nn::Activation::kIdentity, rng));
  nn::apply_mask(layers.back(), m_in);
  for (int b = 0; b < depth; ++b) {
    layers.push_back(nn::make_layer(h, h, nn::Activation::kRelu, rng));
    nn::apply_mask(layers.back(), m_hid);
    layers.push_back(nn::make_layer(h, h, nn::Activation::kIdentity, rng));
    nn::apply_mask(layers.back(), m_hid);
  }
  layers.push_back(nn::make_layer(h, in, nn::Activation::kIdentity, rng));
  nn::apply_mask(layers.back(), m_out);
  m.net_ = nn::DenseNet(std::move(layers));
  return m;
}

Matrix ArDensityModel::one_hot(const std::vector<std::vector<int>>& labels) const {
  if (labels.size() != columns_.size()) throw Error(ErrorCode::kShapeMismatch, "label rows != modelled columns");
  const auto n = static_cast<Eigen::Index>(labels.empty() ? 0 : labels.front().size());
  Matrix x = Matrix::Zero(static_cast<Eigen::Index>(input_width_), n);
  for (std::size_t j = 0; j < labels.size(); ++j) {
    if (static_cast<Eigen::Index>(labels[j].size()) != n) throw Error(ErrorCode::kShapeMismatch, "ragged label rows");
    for (Eigen::Index s = 0; s < n; ++s) {
      const int l = labels[j][static_cast<std::size_t>(s)];
      if (l < 0 || static_cast<std::size_t>(l) >= vocab_[j]) throw Error(ErrorCode::kInvalidArgument, "label out of range");
      x(static_cast<Eigen::Index>(offsets_[j]) + l, s) = 1.0;
    }
  }
  return x;
}

Matrix ArDensityModel::forward(const Matrix& inputs, Cache* cache) const {
  const auto& L = net_.layers();
  if (cache) {
    cache->layers.assign(L.size(), {});
    cache->block_in.assign(static_cast<std::size_t>(depth_), {});
  }
  auto lc = [&](std::size_t i) { return cache ? &cache->layers[i] : nullptr; };
  Matrix h = nn::layer_forward(L[0], inputs, lc(0));
  for (int b = 0; b < depth_; ++b) {
    const auto i = 1 + 2 * static_cast<std::size_t>(b);
    const Matrix u = nn::layer_forward(L[i], nn::relu(h), lc(i));
    const Matrix v = nn::layer_forward(L[i + 1], u, lc(i + 1));
    if (cache) cache->block_in[static_cast<std::size_t>(b)] = h;
    h += v;
  }
  Matrix r = nn::relu(h);
  Matrix out = nn::layer_forward(L.back(), r, lc(L.size() - 1));
  if (cache) cache->final_relu = std::move(r);
  return out;
}

void ArDensityModel::backward(const Cache& cache, const Matrix& d_logits, nn::NetGradients& grads) const {
  const auto& L = net_.layers();
  if (cache.layers.size() != L.size()) throw Error(ErrorCode::kNoForwardCache, "backward without forward cache");
  grads.layers.resize(L.size());
  const Matrix dr = nn::layer_backward(L.back(), cache.layers.back(), d_logits, grads.layers.back());
  Matrix dh = (cache.final_relu.array() > 0.0).select(dr, 0.0);
  for (int b = depth_ - 1; b >= 0; --b) {
    const auto i = 1 + 2 * static_cast<std::size_t>(b);
    const Matrix du = nn::layer_backward(L[i + 1], cache.layers[i + 1], dh, grads.layers[i + 1]);
    const Matrix dt = nn::layer_backward(L[i], cache.layers[i], du, grads.layers[i]);
    dh += (cache.block_in[static_cast<std::size_t>(b)].array() > 0.0).select(dt, 0.0);
  }
  nn::layer_backward(L[0], cache.layers[0], dh, grads.layers[0]);
}

Matrix ArDensityModel::conditional(std::size_t j, const Matrix& logits) const {
  const auto block = logits.middleRows(static_cast<Eigen::Index>(offsets_.at(j)), static_cast<Eigen::Index>(vocab_[j]));
  const Eigen::RowVectorXd mx = block.colwise().maxCoeff();
  Matrix p = (block.rowwise() - mx).array().exp().matrix();
  const Eigen::RowVectorXd s = p.colwise().sum();
  return p.array().rowwise() / s.array();
}

double ArDensityModel::nll(const std::vector<std::vector<int>>& labels, nn::NetGradients* grads) const {
  const Matrix x = one_hot(labels);
  const Eigen::Index n = x.cols();
  if (n == 0) throw Error(ErrorCode::kEmptyTable, "no rows");
  Cache cache;
  const Matrix logits = forward(x, grads ? &cache : nullptr);
  Matrix d = Matrix::Zero(logits.rows(), n);
  double total = 0.0;
  for (std::size_t j = 0; j < columns_.size(); ++j) {
    const auto off = static_cast<Eigen::Index>(offsets_[j]);
    const auto w = static_cast<Eigen::Index>(vocab_[j]);
    total += nn::softmax_cross_entropy(logits.middleRows(off, w), labels[j], d.middleRows(off, w)).sum();
  }
  const double inv = 1.0 / static_cast<double>(n);
  if (grads) backward(cache, d * inv, *grads);
  return total * inv;
}

void ArDensityModel::serialize(ByteWriter& out) const {
  out.u64(columns_.size());
  for (std::size_t j = 0; j < columns_.size(); ++j) {
    out.u64(columns_[j]);
    out.u64(vocab_[j]);
    out.u64(ordering_[j]);
  }
  out.u32(static_cast<std::uint32_t>(depth_));
  out.u32(static_cast<std::uint32_t>(hidden_));
  net_.serialize(out);
}

ArDensityModel ArDensityModel::deserialize(ByteReader& in) {
  ArDensityModel m;
  const auto k = in.u64();
  if (k == 0 || k > 100000) throw Error(ErrorCode::kCorruptFile, "bad column count in density model");
  for (std::uint64_t j = 0; j < k; ++j) {
    m.columns_.push_back(in.u64());
    m.vocab_.push_back(in.u64());
    m.ordering_.push_back(in.u64());
  }
  m.depth_ = static_cast<int>(in.u32());
  m.hidden_ = static_cast<int>(in.u32());
  try {
    m.build_index();
  } catch (const Error& e) {
    throw Error(ErrorCode::kCorruptFile, e.what());
  }
  m.net_ = nn::DenseNet::deserialize(in);
  if (m.net_.depth() != static_cast<std::size_t>(2 * m.depth_ + 2) ||
      m.net_.input_width() != static_cast<Eigen::Index>(m.input_width_) ||
      m.net_.output_width() != static_cast<Eigen::Index>(m.input_width_))
    throw Error(ErrorCode::kCorruptFile, "density model layers do not match its header");
  return m;
}

std::vector<std::vector<int>> categorical_labels(const Table& table, const LabelEncoder& encoder) {
  const auto cols = table.schema().categorical_indices();
  std::vector<std::vector<int>> out(cols.size(), std::vector<int>(table.row_count()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    const auto& column = table.categorical_column(cols[j]);
    for (std::size_t r = 0; r < column.size(); ++r) out[j][r] = encoder.encode(cols[j], column[r]);
  }
  return out;
}

namespace {

std::vector<std::vector<int>> gather(const std::vector<std::vector<int>>& labels, std::span<const std::size_t> rows) {
  std::vector<std::vector<int>> out(labels.size(), std::vector<int>(rows.size()));
  for (std::size_t j = 0; j < labels.size(); ++j)
    for (std::size_t i = 0; i < rows.size(); ++i) out[j][i] = labels[j][rows[i]];
  return out;
}

}  // namespace

std::vector<double> fit_ar(ArDensityModel& model, const std::vector<std::vector<int>>& labels, const ArConfig& config,
                           std::uint64_t seed) {
  if (labels.empty() || labels.front().empty()) throw Error(ErrorCode::kEmptyTable, "no rows to fit");
  if (config.batch <= 0 || config.epochs <= 0 || !(config.lr > 0.0))
    throw Error(ErrorCode::kInvalidArgument, "epochs, batch and lr must be positive");
  const std::size_t n = labels.front().size();
  nn::NetGradients grads;
  std::vector<nn::ParamBlock> blocks;
  nn::collect_params(model.net(), grads, blocks);
  nn::Adam adam({config.lr, 0.9, 0.999, 1e-8});
  Rng rng(derive_seed(seed, "selest/shuffle"));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> trace;
  long step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    double sum = 0.0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(config.batch)) {
      const std::size_t stop = std::min(n, start + static_cast<std::size_t>(config.batch));
      const auto batch = gather(labels, std::span<const std::size_t>(order.data() + start, stop - start));
      const double loss = model.nll(batch, &grads);
      if (!std::isfinite(loss)) throw Error(ErrorCode::kNonFiniteLoss, "density model loss is not finite");
      const double scale =
          config.warmup_steps > 0 ? std::min(1.0, static_cast<double>(step + 1) / config.warmup_steps) : 1.0;
      adam.step(blocks, scale);
      ++step;
      sum += loss * static_cast<double>(stop - start);
    }
    trace.push_back(sum / static_cast<double>(n));
  }
  return trace;
}

ArDensityModel train_ar(const Table& table, const LabelEncoder& encoder, const ArConfig& config, ArTrainReport* report) {
  if (table.empty()) throw Error(ErrorCode::kEmptyTable, "cannot train on an empty table");
  const auto cols = table.schema().categorical_indices();
  if (cols.empty()) throw Error(ErrorCode::kInvalidArgument, "density model needs a categorical column");
  if (config.orderings <= 0) throw Error(ErrorCode::kInvalidArgument, "need at least one ordering");
  const auto labels = categorical_labels(table, encoder);
  std::vector<std::size_t> vocab;
  for (auto c : cols) vocab.push_back(encoder.cardinality(c));

  const std::size_t n = table.row_count();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng split_rng(derive_seed(config.seed, "selest/split"));
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[uniform_index(split_rng, i)]);
  std::size_t n_val = static_cast<std::size_t>(std::llround(config.validation_fraction * static_cast<double>(n)));
  if (n_val == 0 || n_val >= n) n_val = 0;
  const std::span<const std::size_t> val_rows(perm.data(), n_val);
  const std::span<const std::size_t> fit_rows(perm.data() + n_val, n - n_val);
  const auto fit_labels = gather(labels, fit_rows);
  const auto val_labels = n_val > 0 ? gather(labels, val_rows) : fit_labels;

  std::set<std::vector<std::size_t>> seen;
  ArTrainReport local;
  ArDensityModel best;
  double best_nll = std::numeric_limits<double>::infinity();
  for (int r = 0; r < config.orderings; ++r) {
    std::vector<std::size_t> ordering(cols.size());
    std::iota(ordering.begin(), ordering.end(), 0);
    if (r > 0) {
      Rng orng(derive_seed(config.seed, "selest/ordering/" + std::to_string(r)));
      for (std::size_t i = ordering.size(); i > 1; --i) std::swap(ordering[i - 1], ordering[uniform_index(orng, i)]);
    }
    if (!seen.insert(ordering).second) continue;
    Rng init(derive_seed(config.seed, "selest/init/" + std::to_string(r)));
    auto model = ArDensityModel::create(cols, vocab, ordering, config.depth, config.hidden, init);
    auto trace = fit_ar(model, fit_labels, config, derive_seed(config.seed, static_cast<std::uint64_t>(r)));
    const double v = model.nll(val_labels);
    spdlog::debug("density ordering {}: validation nll {:.5f}", r, v);
    local.orderings.push_back(ordering);
    local.validation_nll.push_back(v);
    if (v < best_nll) {
      best_nll = v;
      best = std::move(model);
      local.chosen = local.orderings.size() - 1;
      local.epoch_nll = std::move(trace);
    }
  }
  if (report) *report = std::move(local);
  return best;
}

SelectivityEstimate estimate_labels(const ArDensityModel& model, const std::vector<std::pair<std::size_t, int>>& predicates,
                                    std::size_t walks, Rng& rng) {
  SelectivityEstimate out;
  const std::size_t k = model.column_count();
  std::vector<int> fixed(k, -1);
  for (const auto& [j, label] : predicates) {
    if (j >= k) throw Error(ErrorCode::kUnknownColumn, "column outside the density model");
    if (label < 0 || static_cast<std::size_t>(label) >= model.vocab()[j]) {
      out.not_in_vocabulary = true;
      out.exact = true;
      return out;
    }
    if (fixed[j] >= 0 && fixed[j] != label) {
      out.exact = true;  // contradictory conjunction
      return out;
    }
    fixed[j] = label;
  }
  if (predicates.empty()) {
    out.estimate = 1.0;
    out.exact = true;
    return out;
  }
  std::size_t last_rank = 0;
  for (std::size_t j = 0; j < k; ++j)
    if (fixed[j] >= 0) last_rank = std::max(last_rank, model.rank_of(j));
  bool exact = true;
  for (std::size_t r = 0; r <= last_rank; ++r) exact = exact && fixed[model.ordering()[r]] >= 0;
  if (walks == 0) throw Error(ErrorCode::kInvalidArgument, "walk count must be positive");
  const std::size_t w = exact ? 1 : walks;
  const auto wi = static_cast<Eigen::Index>(w);

  Matrix x = Matrix::Zero(static_cast<Eigen::Index>(model.input_width()), wi);
  Eigen::ArrayXd weight = Eigen::ArrayXd::Ones(wi);
  for (std::size_t r = 0; r <= last_rank; ++r) {
    const std::size_t j = model.ordering()[r];
    const auto off = static_cast<Eigen::Index>(model.input_offset(j));
    const Matrix p = model.conditional(j, model.forward(x));
    if (fixed[j] >= 0) {
      weight *= p.row(fixed[j]).transpose().array();
      x.row(off + fixed[j]).setOnes();
      continue;
    }
    for (Eigen::Index s = 0; s < wi; ++s) {
      double u = uniform01(rng);
      Eigen::Index pick = p.rows() - 1;
      for (Eigen::Index v = 0; v < p.rows(); ++v) {
        u -= p(v, s);
        if (u < 0.0) {
          pick = v;
          break;
        }
      }
      x(off + pick, s) = 1.0;
    }
  }
  out.samples = w;
  out.exact = exact;
  out.estimate = std::clamp(weight.mean(), 0.0, 1.0);
  if (w > 1) {
    const double var = (weight - weight.mean()).square().sum() / static_cast<double>(w - 1);
    out.standard_error = std::sqrt(var / static_cast<double>(w));
  }
  return out;
}

SelectivityEstimate estimate_conjunction(const ArDensityModel& model, const LabelEncoder& encoder,
                                         const std::vector<Condition>& predicates, std::size_t walks, Rng& rng) {
  std::vector<std::pair<std::size_t, int>> labels;
  for (const auto& [col, value] : predicates) {
    const auto it = std::find(model.columns().begin(), model.columns().end(), col);
    if (it == model.columns().end())
      throw Error(ErrorCode::kTypeMismatch, "column " + std::to_string(col) + " is not a modelled categorical column");
    const auto label = encoder.find(col, value);
    if (!label) {
      SelectivityEstimate out;
      out.not_in_vocabulary = true;
      out.exact = true;
      return out;
    }
    labels.emplace_back(static_cast<std::size_t>(it - model.columns().begin()), *label);
  }
  return estimate_labels(model, labels, walks, rng);
}

double estimate_count(const ArDensityModel& model, const LabelEncoder& encoder, const std::vector<Condition>& predicates,
                      std::size_t table_rows, std::size_t walks, Rng& rng) {
  return estimate_conjunction(model, encoder, predicates, walks, rng).estimate * static_cast<double>(table_rows);
}

double joint_probability(const ArDensityModel& model, const std::vector<int>& labels) {
  std::vector<std::vector<int>> rows(labels.size());
  for (std::size_t j = 0; j < labels.size(); ++j) rows[j] = {labels[j]};
  const Matrix logits = model.forward(model.one_hot(rows));
  double p = 1.0;
  for (std::size_t j = 0; j < labels.size(); ++j) p *= model.conditional(j, logits)(labels[j], 0);
  return p;
}

}  // namespace predaqp
