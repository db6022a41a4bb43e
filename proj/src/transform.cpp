#include "predaqp/transform.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "predaqp/error.hpp"

namespace predaqp {

namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;

double log_normal_pdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * z * z - std::log(sd) - kLogSqrt2Pi;
}

double sample_sd(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

std::size_t argmax(std::span<const double> values) {
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

std::size_t sample_softmax(std::span<const double> logits, Rng& rng) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double l : logits) total += std::exp(l - mx);
  double u = uniform01(rng) * total;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    u -= std::exp(logits[i] - mx);
    if (u < 0.0) return i;
  }
  return logits.size() - 1;
}

// ---------------------------------------------------------------------------
// LabelEncoder

LabelEncoder LabelEncoder::fit(const Table& table) {
  if (table.empty()) throw Error(ErrorCode::kEmptyTable, "cannot fit label encoders on an empty table");
  LabelEncoder enc;
  const auto& schema = table.schema();
  enc.values_.resize(schema.size());
  for (const auto& c : schema.columns()) enc.column_names_.push_back(c.name);
  for (auto c : schema.categorical_indices()) {
    std::set<std::string> distinct(table.categorical_column(c).begin(), table.categorical_column(c).end());
    enc.values_[c].assign(distinct.begin(), distinct.end());  // std::string compares byte-wise
  }
  enc.rebuild_index();
  return enc;
}

void LabelEncoder::rebuild_index() {
  index_.assign(values_.size(), {});
  for (std::size_t c = 0; c < values_.size(); ++c)
    for (std::size_t i = 0; i < values_[c].size(); ++i) index_[c].emplace(values_[c][i], static_cast<int>(i));
}

std::optional<int> LabelEncoder::find(std::size_t col, const std::string& value) const {
  const auto& idx = index_.at(col);
  const auto it = idx.find(value);
  if (it == idx.end()) return std::nullopt;
  return it->second;
}

int LabelEncoder::encode(std::size_t col, const std::string& value) const {
  const auto label = find(col, value);
  if (!label) throw UnknownCategory(value, col < column_names_.size() ? column_names_[col] : std::to_string(col));
  return *label;
}

void LabelEncoder::serialize(ByteWriter& out) const {
  out.u64(values_.size());
  for (const auto& col : values_) {
    out.u64(col.size());
    for (const auto& v : col) out.str(v);
  }
}

LabelEncoder LabelEncoder::deserialize(ByteReader& in, const Schema& schema) {
  LabelEncoder enc;
  const auto k = in.u64();
  if (k != schema.size()) throw Error(ErrorCode::kCorruptFile, "encoder column count mismatch");
  enc.values_.resize(k);
  for (auto& col : enc.values_) {
    const auto n = in.u64();
    if (n > in.remaining()) throw Error(ErrorCode::kCorruptFile, "encoder dictionary overrun");
    col.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) col.push_back(in.str());
  }
  for (const auto& c : schema.columns()) enc.column_names_.push_back(c.name);
  enc.rebuild_index();
  return enc;
}

// ---------------------------------------------------------------------------
// Mode detection

ModeDetection detect_modes(std::span<const double> values, const KdeOptions& options) {
  ModeDetection out;
  if (values.empty()) throw Error(ErrorCode::kEmptyTable, "cannot detect modes of an empty column");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double lo = sorted.front();
  const double hi = sorted.back();
  const double sd = sample_sd(sorted);
  if (lo == hi || sd <= 0.0) {
    out.degenerate = true;
    out.centers = {lo};
    return out;
  }
  const double n = static_cast<double>(sorted.size());
  const double h = sd * std::pow(n, -0.2);
  out.bandwidth = h;

  const int g = std::max(options.grid_points, 3);
  const double start = lo - h;
  const double step = (hi - lo + 2.0 * h) / static_cast<double>(g - 1);
  const double cutoff = 8.0 * h;
  std::vector<double> density(static_cast<std::size_t>(g), 0.0);
  for (int i = 0; i < g; ++i) {
    const double x = start + step * i;
    auto first = std::lower_bound(sorted.begin(), sorted.end(), x - cutoff);
    auto last = std::upper_bound(first, sorted.end(), x + cutoff);
    double acc = 0.0;
    for (auto it = first; it != last; ++it) {
      const double u = (x - *it) / h;
      acc += std::exp(-0.5 * u * u);
    }
    density[static_cast<std::size_t>(i)] = acc;  // common normaliser omitted
  }

  const double peak = *std::max_element(density.begin(), density.end());
  std::vector<std::pair<double, double>> maxima;  // (density, location)
  for (std::size_t i = 1; i + 1 < density.size(); ++i) {
    if (density[i] > density[i - 1] && density[i] > density[i + 1] &&
        density[i] >= options.min_relative_height * peak)
      maxima.emplace_back(density[i], start + step * static_cast<double>(i));
  }
  if (maxima.empty()) maxima.emplace_back(peak, start + step * static_cast<double>(argmax(density)));
  std::sort(maxima.begin(), maxima.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  if (maxima.size() > static_cast<std::size_t>(options.max_modes)) maxima.resize(static_cast<std::size_t>(options.max_modes));
  for (const auto& m : maxima) out.centers.push_back(m.second);
  std::sort(out.centers.begin(), out.centers.end());
  out.mode_count = static_cast<int>(out.centers.size());
  return out;
}

// ---------------------------------------------------------------------------
// ModeNormalizer

ModeNormalizer::ModeNormalizer(std::vector<GaussianMode> modes) : modes_(std::move(modes)) {
  if (modes_.empty() || modes_.size() > 3)
    throw Error(ErrorCode::kInvalidArgument, "mode count must be in 1..3");
  double total = 0.0;
  for (const auto& m : modes_) {
    if (!(m.stddev > 0.0) || !(m.weight > 0.0) || !std::isfinite(m.mean))
      throw Error(ErrorCode::kInvalidArgument, "invalid mixture component");
    total += m.weight;
  }
  if (std::abs(total - 1.0) > 1e-6) throw Error(ErrorCode::kInvalidArgument, "mixture weights must sum to 1");
}

Normalized ModeNormalizer::normalize_unclipped(double value) const {
  int best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < modes_.size(); ++j) {
    const double s = std::log(modes_[j].weight) + log_normal_pdf(value, modes_[j].mean, modes_[j].stddev);
    if (s > best_score) {
      best_score = s;
      best = static_cast<int>(j);
    }
  }
  const auto& m = modes_[static_cast<std::size_t>(best)];
  return {best, (value - m.mean) / m.stddev};
}

Normalized ModeNormalizer::normalize(double value) const {
  auto n = normalize_unclipped(value);
  n.residual = std::clamp(n.residual, -kResidualClip, kResidualClip);
  return n;
}

double ModeNormalizer::denormalize(int mode, double residual) const {
  const auto& m = modes_.at(static_cast<std::size_t>(mode));
  return m.mean + m.stddev * residual;
}

// ---------------------------------------------------------------------------
// EM

EmResult fit_mode_normalizer(std::span<const double> values, std::span<const double> centers,
                             const EmOptions& options) {
  if (values.empty()) throw Error(ErrorCode::kEmptyTable, "cannot fit a mixture to an empty column");
  if (centers.empty() || centers.size() > 3)
    throw Error(ErrorCode::kInvalidArgument, "mode count must be in 1..3");
  const std::size_t n = values.size();
  const double nd = static_cast<double>(n);
  const double mean_all = std::accumulate(values.begin(), values.end(), 0.0) / nd;
  double var_all = 0.0;
  for (double x : values) var_all += (x - mean_all) * (x - mean_all);
  var_all /= nd;
  const double floor_var = std::max(options.variance_floor_ratio * var_all, 1e-12);

  EmResult result;
  if (centers.size() == 1) {
    // Single component: closed form.
    result.normalizer = ModeNormalizer({{1.0, mean_all, std::sqrt(std::max(var_all, floor_var))}});
    result.converged = true;
    double ll = 0.0;
    for (double x : values) ll += log_normal_pdf(x, mean_all, result.normalizer.modes()[0].stddev);
    result.log_likelihood.push_back(ll / nd);
    return result;
  }

  std::size_t k = centers.size();
  std::vector<double> w(k, 1.0 / static_cast<double>(k));
  std::vector<double> mu(centers.begin(), centers.end());
  std::vector<double> var(k, std::max(var_all / static_cast<double>(k * k), floor_var));
  std::vector<bool> reseeded(k, false);
  std::vector<double> resp(n * k);
  std::vector<double> logp(k);

  double prev_ll = -std::numeric_limits<double>::infinity();
  for (int it = 0; it < options.max_iterations; ++it) {
    // E step
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < k; ++j) {
        logp[j] = std::log(w[j]) + log_normal_pdf(values[i], mu[j], std::sqrt(var[j]));
        mx = std::max(mx, logp[j]);
      }
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) s += std::exp(logp[j] - mx);
      const double lse = mx + std::log(s);
      ll += lse;
      for (std::size_t j = 0; j < k; ++j) resp[i * k + j] = std::exp(logp[j] - lse);
    }
    ll /= nd;
    result.log_likelihood.push_back(ll);
    result.iterations = it + 1;
    if (std::abs(ll - prev_ll) < options.tolerance) {
      result.converged = true;
      break;
    }
    prev_ll = ll;

    // M step
    bool restructured = false;
    for (std::size_t j = 0; j < k; ++j) {
      double nk = 0.0, sx = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        nk += resp[i * k + j];
        sx += resp[i * k + j] * values[i];
      }
      if (nk < 1e-8 * nd) {
        // Singular component: re-seed once at the worst-explained point, then drop.
        if (!reseeded[j]) {
          reseeded[j] = true;
          ++result.reseeds;
          std::size_t worst = 0;
          double worst_ll = std::numeric_limits<double>::infinity();
          for (std::size_t i = 0; i < n; ++i) {
            double p = 0.0;
            for (std::size_t q = 0; q < k; ++q) p += w[q] * std::exp(log_normal_pdf(values[i], mu[q], std::sqrt(var[q])));
            if (p < worst_ll) {
              worst_ll = p;
              worst = i;
            }
          }
          mu[j] = values[worst];
          var[j] = std::max(var_all / static_cast<double>(k * k), floor_var);
          w[j] = 1.0 / static_cast<double>(k);
        } else {
          mu.erase(mu.begin() + static_cast<std::ptrdiff_t>(j));
          var.erase(var.begin() + static_cast<std::ptrdiff_t>(j));
          w.erase(w.begin() + static_cast<std::ptrdiff_t>(j));
          reseeded.erase(reseeded.begin() + static_cast<std::ptrdiff_t>(j));
          ++result.merged;
          --k;
        }
        restructured = true;
        break;
      }
      const double m = sx / nk;
      double sv = 0.0;
      for (std::size_t i = 0; i < n; ++i) sv += resp[i * k + j] * (values[i] - m) * (values[i] - m);
      w[j] = nk / nd;
      mu[j] = m;
      var[j] = std::max(sv / nk, floor_var);
    }
    if (restructured) {
      const double total = std::accumulate(w.begin(), w.end(), 0.0);
      for (auto& x : w) x /= total;
      resp.assign(n * k, 0.0);
      logp.assign(k, 0.0);
      prev_ll = -std::numeric_limits<double>::infinity();
      result.log_likelihood.clear();  // the sequence restarts after a structural change
      if (k == 1) {
        result.normalizer = ModeNormalizer({{1.0, mean_all, std::sqrt(std::max(var_all, floor_var))}});
        result.converged = true;
        return result;
      }
    }
  }

  // Components sorted by mean so that mode ids are stable.
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return mu[a] < mu[b]; });
  std::vector<GaussianMode> modes;
  double total = 0.0;
  for (auto j : order) total += w[j];
  for (auto j : order) modes.push_back({w[j] / total, mu[j], std::sqrt(var[j])});
  result.normalizer = ModeNormalizer(std::move(modes));
  return result;
}

// ---------------------------------------------------------------------------
// DataTransformer

DataTransformer DataTransformer::fit(const Table& table, const KdeOptions& kde, const EmOptions& em) {
  if (table.empty()) throw Error(ErrorCode::kEmptyTable, "cannot fit transforms on an empty table");
  DataTransformer t;
  t.schema_ = table.schema();
  t.encoder_ = LabelEncoder::fit(table);
  t.normalizers_.resize(t.schema_.size());
  for (auto c : t.schema_.numerical_indices()) {
    const auto& col = table.numerical_column(c);
    const auto det = detect_modes(col, kde);
    if (det.degenerate) {
      t.normalizers_[c] = ModeNormalizer({{1.0, det.centers[0], 1.0}});
      continue;
    }
    t.normalizers_[c] = fit_mode_normalizer(col, det.centers, em).normalizer;
  }
  t.build_layout();
  return t;
}

void DataTransformer::build_layout() {
  layout_.clear();
  std::size_t offset = 0;
  for (const auto& c : schema_.columns()) {
    BlockLayout b;
    b.column = c.position;
    b.kind = c.kind;
    b.offset = offset;
    b.one_hot_width = c.kind == ColumnKind::kCategorical
                          ? encoder_.cardinality(c.position)
                          : static_cast<std::size_t>(normalizers_[c.position]->mode_count());
    offset += b.width();
    layout_.push_back(b);
  }
  width_ = offset;
}

void DataTransformer::encode_row(const Row& row, std::span<double> out) const {
  if (row.size() != schema_.size() || out.size() != width_)
    throw Error(ErrorCode::kShapeMismatch, "row does not conform to the fitted schema");
  std::fill(out.begin(), out.end(), 0.0);
  for (const auto& b : layout_) {
    if (b.kind == ColumnKind::kCategorical) {
      const auto* v = std::get_if<std::string>(&row[b.column]);
      if (!v) throw Error(ErrorCode::kTypeMismatch, "expected a categorical value");
      out[b.offset + static_cast<std::size_t>(encoder_.encode(b.column, *v))] = 1.0;
    } else {
      const auto* v = std::get_if<double>(&row[b.column]);
      if (!v) throw Error(ErrorCode::kTypeMismatch, "expected a numerical value");
      const auto n = normalizers_[b.column]->normalize(*v);
      out[b.offset + static_cast<std::size_t>(n.mode)] = 1.0;
      out[b.residual_index()] = n.residual;
    }
  }
}

Eigen::VectorXd DataTransformer::encode_row(const Row& row) const {
  Eigen::VectorXd v(static_cast<Eigen::Index>(width_));
  encode_row(row, std::span<double>(v.data(), width_));
  return v;
}

Eigen::MatrixXd DataTransformer::encode_table(const Table& table) const {
  if (!(table.schema() == schema_)) throw Error(ErrorCode::kSchemaMismatch, "table schema differs from fitted schema");
  const auto n = static_cast<Eigen::Index>(table.row_count());
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(width_), n);
  for (const auto& b : layout_) {
    if (b.kind == ColumnKind::kCategorical) {
      const auto& col = table.categorical_column(b.column);
      for (Eigen::Index i = 0; i < n; ++i)
        out(static_cast<Eigen::Index>(b.offset) + encoder_.encode(b.column, col[static_cast<std::size_t>(i)]), i) = 1.0;
    } else {
      const auto& col = table.numerical_column(b.column);
      const auto& norm = *normalizers_[b.column];
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto z = norm.normalize(col[static_cast<std::size_t>(i)]);
        out(static_cast<Eigen::Index>(b.offset) + z.mode, i) = 1.0;
        out(static_cast<Eigen::Index>(b.residual_index()), i) = z.residual;
      }
    }
  }
  return out;
}

std::vector<std::vector<int>> DataTransformer::label_table(const Table& table) const {
  std::vector<std::vector<int>> out(schema_.size(), std::vector<int>(table.row_count()));
  for (const auto& b : layout_) {
    if (b.kind == ColumnKind::kCategorical) {
      const auto& col = table.categorical_column(b.column);
      for (std::size_t i = 0; i < col.size(); ++i) out[b.column][i] = encoder_.encode(b.column, col[i]);
    } else {
      const auto& col = table.numerical_column(b.column);
      for (std::size_t i = 0; i < col.size(); ++i) out[b.column][i] = normalizers_[b.column]->normalize(col[i]).mode;
    }
  }
  return out;
}

Row DataTransformer::decode_row(std::span<const double> encoded, DecodeMode mode, Rng* rng) const {
  if (encoded.size() != width_) throw Error(ErrorCode::kShapeMismatch, "encoded width mismatch");
  if (mode == DecodeMode::kSample && rng == nullptr)
    throw Error(ErrorCode::kInvalidArgument, "sampling decode needs an rng");
  Row row(schema_.size());
  for (const auto& b : layout_) {
    const auto block = encoded.subspan(b.offset, b.one_hot_width);
    const std::size_t pick = mode == DecodeMode::kArgmax ? argmax(block) : sample_softmax(block, *rng);
    if (b.kind == ColumnKind::kCategorical) {
      row[b.column] = encoder_.decode(b.column, static_cast<int>(pick));
    } else {
      row[b.column] = normalizers_[b.column]->denormalize(static_cast<int>(pick), encoded[b.residual_index()]);
    }
  }
  return row;
}

Eigen::VectorXd DataTransformer::expand_mask(std::span<const std::uint8_t> attribute_mask) const {
  if (attribute_mask.size() != schema_.size()) throw Error(ErrorCode::kShapeMismatch, "mask width must equal K");
  Eigen::VectorXd out(static_cast<Eigen::Index>(width_));
  for (const auto& b : layout_)
    out.segment(static_cast<Eigen::Index>(b.offset), static_cast<Eigen::Index>(b.width()))
        .setConstant(attribute_mask[b.column] ? 1.0 : 0.0);
  return out;
}

void DataTransformer::serialize(ByteWriter& out) const {
  out.u64(schema_.size());
  for (const auto& c : schema_.columns()) {
    out.str(c.name);
    out.u8(static_cast<std::uint8_t>(c.kind));
  }
  encoder_.serialize(out);
  for (const auto& c : schema_.columns()) {
    if (c.kind != ColumnKind::kNumerical) continue;
    const auto& modes = normalizers_[c.position]->modes();
    out.u32(static_cast<std::uint32_t>(modes.size()));
    for (const auto& m : modes) {
      out.f64(m.weight);
      out.f64(m.mean);
      out.f64(m.stddev);
    }
  }
}

DataTransformer DataTransformer::deserialize(ByteReader& in) {
  DataTransformer t;
  const auto k = in.u64();
  if (k > in.remaining()) throw Error(ErrorCode::kCorruptFile, "schema size overrun");
  std::vector<std::pair<std::string, ColumnKind>> pairs;
  for (std::uint64_t i = 0; i < k; ++i) {
    auto name = in.str();
    const auto kind = in.u8();
    if (kind > 1) throw Error(ErrorCode::kCorruptFile, "bad column kind");
    pairs.emplace_back(std::move(name), static_cast<ColumnKind>(kind));
  }
  t.schema_ = Schema::from_pairs(pairs);
  t.encoder_ = LabelEncoder::deserialize(in, t.schema_);
  t.normalizers_.resize(t.schema_.size());
  for (const auto& c : t.schema_.columns()) {
    if (c.kind != ColumnKind::kNumerical) continue;
    const auto count = in.u32();
    if (count == 0 || count > 3) throw Error(ErrorCode::kCorruptFile, "bad mode count");
    std::vector<GaussianMode> modes(count);
    for (auto& m : modes) {
      m.weight = in.f64();
      m.mean = in.f64();
      m.stddev = in.f64();
    }
    t.normalizers_[c.position] = ModeNormalizer(std::move(modes));
  }
  t.build_layout();
  return t;
}

}  // namespace predaqp
