#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace predaqp {

enum class ColumnKind : std::uint8_t { kCategorical = 0, kNumerical = 1 };

const char* to_string(ColumnKind kind);
ColumnKind parse_column_kind(const std::string& text);

struct ColumnSpec {
  std::string name;
  ColumnKind kind = ColumnKind::kCategorical;
  std::size_t position = 0;

  bool operator==(const ColumnSpec&) const = default;
};

/// Ordered list of columns. Construction validates unique names and gap-free
/// positions 0..K-1.
class Schema {
 public:
  Schema() = default;
  explicit Schema(std::vector<ColumnSpec> columns);

  /// Builds a schema from (name, kind) pairs, assigning positions in order.
  static Schema from_pairs(const std::vector<std::pair<std::string, ColumnKind>>& pairs);

  std::size_t size() const noexcept { return columns_.size(); }
  const ColumnSpec& operator[](std::size_t i) const { return columns_.at(i); }
  const std::vector<ColumnSpec>& columns() const noexcept { return columns_; }

  std::optional<std::size_t> find(const std::string& name) const;
  bool is_categorical(std::size_t i) const { return columns_.at(i).kind == ColumnKind::kCategorical; }
  std::vector<std::size_t> categorical_indices() const;
  std::vector<std::size_t> numerical_indices() const;

  bool operator==(const Schema&) const = default;

 private:
  std::vector<ColumnSpec> columns_;
};

/// Reads a schema file: one `name,kind` line per column, `#` comments allowed.
Schema load_schema_file(const std::filesystem::path& path);
void save_schema_file(const Schema& schema, const std::filesystem::path& path);

using Value = std::variant<std::string, double>;
using Row = std::vector<Value>;

inline constexpr const char* kMissingToken = "<NA>";

/// Equality condition on a categorical column: (schema position, value).
using Condition = std::pair<std::size_t, std::string>;

/// Column-stored relation. Categorical cells are strings, numerical cells are
/// finite doubles. Categorical cells that were missing at ingestion hold
/// kMissingToken and carry a missing flag (consumed by the no-mask policy).
class Table {
 public:
  Table() = default;
  explicit Table(Schema schema);

  const Schema& schema() const noexcept { return schema_; }
  std::size_t row_count() const noexcept { return row_count_; }
  std::size_t column_count() const noexcept { return schema_.size(); }
  bool empty() const noexcept { return row_count_ == 0; }

  const std::string& categorical(std::size_t row, std::size_t col) const { return cat_[col][row]; }
  double numerical(std::size_t row, std::size_t col) const { return num_[col][row]; }
  bool missing(std::size_t row, std::size_t col) const { return !missing_[col].empty() && missing_[col][row] != 0; }

  const std::vector<std::string>& categorical_column(std::size_t col) const { return cat_.at(col); }
  const std::vector<double>& numerical_column(std::size_t col) const { return num_.at(col); }

  Row row(std::size_t i) const;

  /// Appends a row; throws kInvalidArgument on arity/type mismatch or non-finite numerics.
  void append(const Row& row, const std::vector<bool>& missing_flags = {});

  void reserve(std::size_t rows);

  /// Rows at `indices`, in the given order.
  Table select(const std::vector<std::size_t>& indices) const;

 private:
  Schema schema_;
  std::size_t row_count_ = 0;
  std::vector<std::vector<std::string>> cat_;
  std::vector<std::vector<double>> num_;
  std::vector<std::vector<std::uint8_t>> missing_;
};

struct LoadStats {
  std::size_t rows_read = 0;
  std::size_t rows_dropped_missing_numeric = 0;
};

/// Parses a comma-delimited, RFC-4180 quoted CSV whose header matches the
/// schema names in order. Empty, "NA", "NaN" and "NULL" cells are missing:
/// categorical ones become kMissingToken, numerical ones drop the row.
Table load_csv(const std::filesystem::path& path, const Schema& schema, LoadStats* stats = nullptr);

void write_csv(const Table& table, const std::filesystem::path& path);

/// Splits one CSV record (no trailing newline handling) following RFC-4180.
std::vector<std::string> split_csv_record(const std::string& line);

struct InferOptions {
  std::size_t sample_rows = 10000;
  std::size_t distinct_threshold = 20;
};

std::vector<ColumnSpec> infer_schema(const std::filesystem::path& path, const InferOptions& options = {});

/// Per categorical column (by schema position) the value -> fraction map;
/// numerical positions hold empty maps.
struct StrataStats {
  std::vector<std::map<std::string, double>> columns;

  double frequency(std::size_t col, const std::string& value) const;
};

StrataStats compute_strata(const Table& table);

std::pair<Table, Table> train_test_split(const Table& table, double fraction, std::uint64_t seed);

bool is_missing_token(const std::string& cell);

}  // namespace predaqp
