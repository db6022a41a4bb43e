#include "predaqp/masking.hpp"

#include <cmath>
#include <numeric>

#include "predaqp/error.hpp"

namespace predaqp {

std::size_t Mask::column_count(std::size_t c) const {
  std::size_t n = 0;
  for (std::size_t r = 0; r < rows_; ++r) n += bits_[r * cols_ + c];
  return n;
}

std::size_t Mask::total() const { return static_cast<std::size_t>(std::accumulate(bits_.begin(), bits_.end(), 0)); }

const char* to_string(MaskKind kind) {
  switch (kind) {
    case MaskKind::kStratified: return "stratified";
    case MaskKind::kRandom: return "random";
    case MaskKind::kNone: return "none";
  }
  return "?";
}

MaskKind parse_mask_kind(const std::string& text) {
  if (text == "stratified") return MaskKind::kStratified;
  if (text == "random") return MaskKind::kRandom;
  if (text == "none") return MaskKind::kNone;
  throw Error(ErrorCode::kConfigError, "unknown mask kind '" + text + "'");
}

LabelStrata label_strata(const StrataStats& strata, const LabelEncoder& encoder, const Schema& schema) {
  LabelStrata out(schema.size());
  for (auto c : schema.categorical_indices()) {
    const auto& values = encoder.values(c);
    out[c].resize(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) out[c][i] = strata.frequency(c, values[i]);
  }
  return out;
}

std::size_t masked_row_count(double factor, std::size_t batch_rows) {
  return static_cast<std::size_t>(std::floor(factor * static_cast<double>(batch_rows) + 1e-9));
}

Mask stratified_mask(const LabelBatch& batch, double factor, const LabelStrata& strata, Rng& rng) {
  if (!(factor >= 0.0 && factor <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "masking factor must lie in [0,1]");
  const std::size_t b = batch.rows();
  const std::size_t k = batch.cols();
  Mask mask(b, k);
  const std::size_t draws = std::min(masked_row_count(factor, b), b);
  std::vector<double> weights(b);
  for (std::size_t c = 0; c < k; ++c) {
    if (batch.kinds[c] == ColumnKind::kNumerical) {
      for (std::size_t r = 0; r < b; ++r) mask.set(r, c);
      continue;
    }
    const auto& freq = c < strata.size() ? strata[c] : std::vector<double>{};
    for (std::size_t r = 0; r < b; ++r) {
      const int label = batch.labels[c][r];
      if (label < 0 || static_cast<std::size_t>(label) >= freq.size() || !(freq[static_cast<std::size_t>(label)] > 0.0))
        throw UnknownCategory(std::to_string(label), "column " + std::to_string(c) + " strata");
      weights[r] = freq[static_cast<std::size_t>(label)];
    }
    for (std::size_t d = 0; d < draws; ++d) {
      double total = 0.0;
      for (double w : weights) total += w;
      double u = uniform01(rng) * total;
      std::size_t pick = b;
      std::size_t last_live = b;
      for (std::size_t r = 0; r < b; ++r) {
        if (weights[r] <= 0.0) continue;
        last_live = r;
        u -= weights[r];
        if (u < 0.0) {
          pick = r;
          break;
        }
      }
      if (pick == b) pick = last_live;  // rounding at the upper end
      mask.set(pick, c);
      weights[pick] = 0.0;
    }
  }
  return mask;
}

Mask random_mask(const LabelBatch& batch, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "masking rate must lie in [0,1]");
  Mask mask(batch.rows(), batch.cols());
  for (std::size_t r = 0; r < batch.rows(); ++r)
    for (std::size_t c = 0; c < batch.cols(); ++c)
      if (uniform01(rng) < rate) mask.set(r, c);
  return mask;
}

Mask no_mask(const LabelBatch& batch) {
  Mask mask(batch.rows(), batch.cols());
  for (std::size_t c = 0; c < batch.cols() && c < batch.missing.size(); ++c) {
    const auto& miss = batch.missing[c];
    for (std::size_t r = 0; r < miss.size(); ++r)
      if (miss[r]) mask.set(r, c);
  }
  return mask;
}

Mask query_mask(const Schema& schema, const std::set<std::size_t>& predicate_columns) {
  Mask mask(1, schema.size(), 1);
  for (auto c : predicate_columns) {
    if (c >= schema.size()) throw Error(ErrorCode::kUnknownColumn, "column index " + std::to_string(c));
    if (!schema.is_categorical(c))
      throw Error(ErrorCode::kTypeMismatch, "equality conditions apply to categorical columns only");
    mask.set(0, c, 0);
  }
  return mask;
}

Mask make_mask(const MaskPolicy& policy, const LabelBatch& batch, Rng& rng) {
  switch (policy.kind) {
    case MaskKind::kStratified: return stratified_mask(batch, policy.factor, policy.strata, rng);
    case MaskKind::kRandom: return random_mask(batch, policy.factor, rng);
    case MaskKind::kNone: return no_mask(batch);
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown mask kind");
}

}  // namespace predaqp
