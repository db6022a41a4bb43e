#pragma once

#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "predaqp/dataset.hpp"
#include "predaqp/rng.hpp"
#include "predaqp/transform.hpp"

namespace predaqp {

/// b x K binary matrix; 1 = unobserved, 0 = observed.
class Mask {
 public:
  Mask() = default;
  Mask(std::size_t rows, std::size_t cols, std::uint8_t fill = 0) : rows_(rows), cols_(cols), bits_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::uint8_t operator()(std::size_t r, std::size_t c) const { return bits_[r * cols_ + c]; }
  void set(std::size_t r, std::size_t c, std::uint8_t v = 1) { bits_[r * cols_ + c] = v; }
  std::span<const std::uint8_t> row(std::size_t r) const { return {bits_.data() + r * cols_, cols_}; }

  std::size_t column_count(std::size_t c) const;
  std::size_t total() const;

  bool operator==(const Mask&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// Label-encoded batch: per attribute, the category label (numericals: unused)
/// of each batch row, plus ingestion-time missing flags.
struct LabelBatch {
  std::vector<ColumnKind> kinds;
  std::vector<std::vector<int>> labels;          // K x b
  std::vector<std::vector<std::uint8_t>> missing;  // K x b, may be empty per column

  std::size_t rows() const { return labels.empty() ? 0 : labels.front().size(); }
  std::size_t cols() const { return kinds.size(); }
};

/// Strata frequencies indexed by (column, label); empty for numericals.
using LabelStrata = std::vector<std::vector<double>>;

LabelStrata label_strata(const StrataStats& strata, const LabelEncoder& encoder, const Schema& schema);

enum class MaskKind : std::uint8_t { kStratified = 0, kRandom = 1, kNone = 2 };

const char* to_string(MaskKind kind);
MaskKind parse_mask_kind(const std::string& text);

struct MaskPolicy {
  MaskKind kind = MaskKind::kStratified;
  double factor = 0.5;
  LabelStrata strata;  // required for kStratified
};

/// Rows masked per categorical column: floor(r * b) with a tiny guard against
/// representation error (0.29 * 100 is 28.999...).
std::size_t masked_row_count(double factor, std::size_t batch_rows);

/// Numerical columns fully masked; for each categorical column floor(r*b)
/// distinct rows drawn by successive weighted draws without replacement, the
/// weight of a row being the strata frequency of its value.
Mask stratified_mask(const LabelBatch& batch, double factor, const LabelStrata& strata, Rng& rng);

/// Every cell independently masked with probability `rate`.
Mask random_mask(const LabelBatch& batch, double rate, Rng& rng);

/// Only cells flagged missing at ingestion are masked.
Mask no_mask(const LabelBatch& batch);

/// Single-row mask: 0 on predicate columns, 1 elsewhere.
Mask query_mask(const Schema& schema, const std::set<std::size_t>& predicate_columns);

Mask make_mask(const MaskPolicy& policy, const LabelBatch& batch, Rng& rng);

}  // namespace predaqp
