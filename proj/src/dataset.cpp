#include "predaqp/dataset.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "predaqp/error.hpp"
#include "predaqp/rng.hpp"

namespace predaqp {

const char* to_string(ColumnKind kind) {
  return kind == ColumnKind::kCategorical ? "categorical" : "numerical";
}

ColumnKind parse_column_kind(const std::string& text) {
  if (text == "categorical" || text == "cat") return ColumnKind::kCategorical;
  if (text == "numerical" || text == "num") return ColumnKind::kNumerical;
  throw Error(ErrorCode::kInvalidArgument, "unknown column kind '" + text + "'");
}

Schema::Schema(std::vector<ColumnSpec> columns) : columns_(std::move(columns)) {
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < columns_.size(); ++i) {
    if (columns_[i].position != i)
      throw Error(ErrorCode::kInvalidArgument, "column positions must be 0..K-1 without gaps");
    if (!seen.insert(columns_[i].name).second)
      throw Error(ErrorCode::kInvalidArgument, "duplicate column name '" + columns_[i].name + "'");
  }
}

Schema Schema::from_pairs(const std::vector<std::pair<std::string, ColumnKind>>& pairs) {
  std::vector<ColumnSpec> cols;
  cols.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) cols.push_back({pairs[i].first, pairs[i].second, i});
  return Schema(std::move(cols));
}

std::optional<std::size_t> Schema::find(const std::string& name) const {
  for (const auto& c : columns_)
    if (c.name == name) return c.position;
  return std::nullopt;
}

std::vector<std::size_t> Schema::categorical_indices() const {
  std::vector<std::size_t> out;
  for (const auto& c : columns_)
    if (c.kind == ColumnKind::kCategorical) out.push_back(c.position);
  return out;
}

std::vector<std::size_t> Schema::numerical_indices() const {
  std::vector<std::size_t> out;
  for (const auto& c : columns_)
    if (c.kind == ColumnKind::kNumerical) out.push_back(c.position);
  return out;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::optional<double> parse_real(const std::string& text) {
  const std::string t = trim(text);
  if (t.empty()) return std::nullopt;
  double v = 0.0;
  const char* first = t.data();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size()) return std::nullopt;
  return v;
}

/// Whole-buffer RFC-4180 reader; quoted fields may span lines.
class CsvReader {
 public:
  explicit CsvReader(std::string buffer) : buf_(std::move(buffer)) {
    if (buf_.size() >= 3 && static_cast<unsigned char>(buf_[0]) == 0xEF &&
        static_cast<unsigned char>(buf_[1]) == 0xBB && static_cast<unsigned char>(buf_[2]) == 0xBF)
      pos_ = 3;
  }

  bool next(std::vector<std::string>& fields) {
    fields.clear();
    if (pos_ >= buf_.size()) return false;
    std::string field;
    bool quoted = false;
    while (pos_ < buf_.size()) {
      const char c = buf_[pos_++];
      if (quoted) {
        if (c == '"') {
          if (pos_ < buf_.size() && buf_[pos_] == '"') {
            field.push_back('"');
            ++pos_;
          } else {
            quoted = false;
          }
        } else {
          field.push_back(c);
        }
      } else if (c == '"') {
        quoted = true;
      } else if (c == ',') {
        fields.push_back(std::move(field));
        field.clear();
      } else if (c == '\n' || c == '\r') {
        if (c == '\r' && pos_ < buf_.size() && buf_[pos_] == '\n') ++pos_;
        fields.push_back(std::move(field));
        return true;
      } else {
        field.push_back(c);
      }
    }
    fields.push_back(std::move(field));
    return true;
  }

 private:
  std::string buf_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool blank_record(const std::vector<std::string>& fields) {
  return fields.size() == 1 && trim(fields[0]).empty();
}

std::string quote_csv(const std::string& cell) {
  if (cell.find_first_of(",\"\r\n") == std::string::npos) return cell;
  std::string out = "\"";
  for (char c : cell) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string format_real(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

bool is_missing_token(const std::string& cell) {
  const std::string t = trim(cell);
  return t.empty() || t == "NA" || t == "NaN" || t == "NULL" || t == kMissingToken;
}

std::vector<std::string> split_csv_record(const std::string& line) {
  CsvReader reader(line);
  std::vector<std::string> fields;
  reader.next(fields);
  return fields;
}

Schema load_schema_file(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<std::pair<std::string, ColumnKind>> pairs;
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos)
      throw Error(ErrorCode::kInvalidArgument, "schema line must be 'name,kind': " + line);
    pairs.emplace_back(trim(line.substr(0, comma)), parse_column_kind(trim(line.substr(comma + 1))));
  }
  return Schema::from_pairs(pairs);
}

void save_schema_file(const Schema& schema, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write '" + path.string() + "'");
  for (const auto& c : schema.columns()) out << c.name << ',' << to_string(c.kind) << '\n';
}

Table::Table(Schema schema) : schema_(std::move(schema)) {
  cat_.resize(schema_.size());
  num_.resize(schema_.size());
  missing_.resize(schema_.size());
}

void Table::reserve(std::size_t rows) {
  for (std::size_t c = 0; c < schema_.size(); ++c) {
    if (schema_.is_categorical(c))
      cat_[c].reserve(rows);
    else
      num_[c].reserve(rows);
  }
}

Row Table::row(std::size_t i) const {
  Row r;
  r.reserve(schema_.size());
  for (std::size_t c = 0; c < schema_.size(); ++c) {
    if (schema_.is_categorical(c))
      r.emplace_back(cat_[c][i]);
    else
      r.emplace_back(num_[c][i]);
  }
  return r;
}

void Table::append(const Row& row, const std::vector<bool>& missing_flags) {
  if (row.size() != schema_.size())
    throw Error(ErrorCode::kInvalidArgument, "row has " + std::to_string(row.size()) + " cells, schema has " +
                                                 std::to_string(schema_.size()));
  for (std::size_t c = 0; c < schema_.size(); ++c) {
    if (schema_.is_categorical(c)) {
      if (!std::holds_alternative<std::string>(row[c]))
        throw Error(ErrorCode::kInvalidArgument, "column '" + schema_[c].name + "' expects a string");
    } else {
      if (!std::holds_alternative<double>(row[c]) || !std::isfinite(std::get<double>(row[c])))
        throw Error(ErrorCode::kInvalidArgument, "column '" + schema_[c].name + "' expects a finite real");
    }
  }
  for (std::size_t c = 0; c < schema_.size(); ++c) {
    if (schema_.is_categorical(c)) {
      cat_[c].push_back(std::get<std::string>(row[c]));
      const bool miss = c < missing_flags.size() && missing_flags[c];
      if (miss && missing_[c].empty()) missing_[c].resize(row_count_, 0);
      if (miss || !missing_[c].empty()) missing_[c].push_back(miss ? 1 : 0);
    } else {
      num_[c].push_back(std::get<double>(row[c]));
    }
  }
  ++row_count_;
}

Table Table::select(const std::vector<std::size_t>& indices) const {
  Table out(schema_);
  out.reserve(indices.size());
  for (std::size_t c = 0; c < schema_.size(); ++c) {
    if (schema_.is_categorical(c)) {
      for (auto i : indices) out.cat_[c].push_back(cat_[c].at(i));
      if (!missing_[c].empty())
        for (auto i : indices) out.missing_[c].push_back(missing_[c][i]);
    } else {
      for (auto i : indices) out.num_[c].push_back(num_[c].at(i));
    }
  }
  out.row_count_ = indices.size();
  return out;
}

Table load_csv(const std::filesystem::path& path, const Schema& schema, LoadStats* stats) {
  CsvReader reader(read_file(path));
  std::vector<std::string> fields;
  if (!reader.next(fields)) throw Error(ErrorCode::kEmptyTable, "'" + path.string() + "' has no header");
  for (auto& f : fields) f = trim(f);
  for (const auto& col : schema.columns()) {
    if (col.position >= fields.size() || fields[col.position] != col.name)
      throw Error(ErrorCode::kMissingColumn, "header lacks column '" + col.name + "' at position " +
                                                 std::to_string(col.position));
  }
  if (fields.size() != schema.size())
    throw Error(ErrorCode::kMissingColumn, "header has " + std::to_string(fields.size()) + " columns, schema has " +
                                               std::to_string(schema.size()));

  Table table(schema);
  LoadStats local;
  std::size_t data_row = 0;
  Row row(schema.size());
  std::vector<bool> miss(schema.size());
  while (reader.next(fields)) {
    if (blank_record(fields)) continue;
    ++data_row;
    ++local.rows_read;
    if (fields.size() != schema.size())
      throw Error(ErrorCode::kInvalidArgument, "row " + std::to_string(data_row) + " has " +
                                                   std::to_string(fields.size()) + " cells");
    bool drop = false;
    for (std::size_t c = 0; c < schema.size(); ++c) {
      const bool missing = is_missing_token(fields[c]);
      miss[c] = missing;
      if (schema.is_categorical(c)) {
        row[c] = missing ? std::string(kMissingToken) : fields[c];
      } else if (missing) {
        drop = true;
      } else {
        const auto v = parse_real(fields[c]);
        if (!v || !std::isfinite(*v)) throw TypeParseFailure(data_row, schema[c].name, fields[c]);
        row[c] = *v;
      }
    }
    if (drop) {
      ++local.rows_dropped_missing_numeric;
      continue;
    }
    table.append(row, miss);
  }
  if (local.rows_dropped_missing_numeric > 0)
    spdlog::warn("{}: dropped {} rows with missing numerical cells", path.string(),
                 local.rows_dropped_missing_numeric);
  if (stats) *stats = local;
  if (table.empty()) throw Error(ErrorCode::kEmptyTable, "'" + path.string() + "' has no usable rows");
  return table;
}

void write_csv(const Table& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write '" + path.string() + "'");
  const auto& schema = table.schema();
  for (std::size_t c = 0; c < schema.size(); ++c) out << (c ? "," : "") << quote_csv(schema[c].name);
  out << '\n';
  for (std::size_t r = 0; r < table.row_count(); ++r) {
    for (std::size_t c = 0; c < schema.size(); ++c) {
      if (c) out << ',';
      if (schema.is_categorical(c))
        out << quote_csv(table.missing(r, c) ? std::string() : table.categorical(r, c));
      else
        out << format_real(table.numerical(r, c));
    }
    out << '\n';
  }
}

std::vector<ColumnSpec> infer_schema(const std::filesystem::path& path, const InferOptions& options) {
  CsvReader reader(read_file(path));
  std::vector<std::string> header;
  if (!reader.next(header)) throw Error(ErrorCode::kEmptyTable, "'" + path.string() + "' has no header");
  const std::size_t k = header.size();
  std::vector<bool> numeric(k, true);
  std::vector<std::unordered_set<std::string>> distinct(k);
  std::vector<std::string> fields;
  std::size_t rows = 0;
  while (rows < options.sample_rows && reader.next(fields)) {
    if (blank_record(fields)) continue;
    ++rows;
    for (std::size_t c = 0; c < k && c < fields.size(); ++c) {
      if (is_missing_token(fields[c])) continue;
      distinct[c].insert(fields[c]);
      if (numeric[c]) {
        const auto v = parse_real(fields[c]);
        if (!v || !std::isfinite(*v)) numeric[c] = false;
      }
    }
  }
  if (rows == 0) throw Error(ErrorCode::kEmptyTable, "'" + path.string() + "' has no data rows");
  std::vector<ColumnSpec> out;
  for (std::size_t c = 0; c < k; ++c) {
    const bool num = numeric[c] && distinct[c].size() > options.distinct_threshold;
    out.push_back({trim(header[c]), num ? ColumnKind::kNumerical : ColumnKind::kCategorical, c});
  }
  return out;
}

double StrataStats::frequency(std::size_t col, const std::string& value) const {
  const auto& m = columns.at(col);
  const auto it = m.find(value);
  return it == m.end() ? 0.0 : it->second;
}

StrataStats compute_strata(const Table& table) {
  if (table.empty()) throw Error(ErrorCode::kEmptyTable, "cannot compute strata of an empty table");
  StrataStats out;
  out.columns.resize(table.column_count());
  const double n = static_cast<double>(table.row_count());
  for (auto c : table.schema().categorical_indices()) {
    std::map<std::string, std::size_t> counts;
    for (const auto& v : table.categorical_column(c)) ++counts[v];
    for (const auto& [v, cnt] : counts) out.columns[c][v] = static_cast<double>(cnt) / n;
  }
  return out;
}

std::pair<Table, Table> train_test_split(const Table& table, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw Error(ErrorCode::kInvalidArgument, "split fraction must lie in (0,1)");
  if (table.empty()) throw Error(ErrorCode::kEmptyTable, "cannot split an empty table");
  std::vector<std::size_t> idx(table.row_count());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(seed, "split"));
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[uniform_index(rng, i)]);
  const auto n_first = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size())));
  std::vector<std::size_t> first(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_first));
  std::vector<std::size_t> second(idx.begin() + static_cast<std::ptrdiff_t>(n_first), idx.end());
  std::sort(first.begin(), first.end());
  std::sort(second.begin(), second.end());
  return {table.select(first), table.select(second)};
}

}  // namespace predaqp
