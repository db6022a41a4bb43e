#pragma once

#include <array>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "predaqp/cvae.hpp"
#include "predaqp/planner.hpp"
#include "predaqp/selectivity.hpp"
#include "predaqp/sqlfront.hpp"
#include "predaqp/transform.hpp"

namespace predaqp {

using Fingerprint = std::array<std::uint8_t, 32>;

/// SHA-256 of the canonical schema text (names, kinds and, when given, the
/// category dictionaries).
Fingerprint schema_fingerprint(const Schema& schema, const LabelEncoder* encoder = nullptr);
std::string to_hex(const Fingerprint& fp);
Fingerprint sha256(std::span<const std::uint8_t> bytes);

/// Persisted models plus everything needed to decode samples (the Model-DB).
struct ModelBundle {
  DataTransformer transforms;
  CvaeModel cvae;
  ArDensityModel ar;
  std::optional<Discretizer> discretizer;
  std::uint64_t table_rows = 0;
  MaskKind mask_kind = MaskKind::kStratified;
  /// Free-form training summary (JSON text), kept for reporting.
  std::string summary;

  const Schema& schema() const { return transforms.schema(); }
  Fingerprint fingerprint() const { return schema_fingerprint(transforms.schema(), &transforms.encoder()); }
  /// Throws kSchemaMismatch unless names and kinds match the bundle's schema.
  void check_schema(const Schema& schema) const;

  bool operator==(const ModelBundle& other) const {
    return transforms == other.transforms && cvae == other.cvae && ar == other.ar &&
           discretizer == other.discretizer && table_rows == other.table_rows && mask_kind == other.mask_kind &&
           summary == other.summary;
  }
};

inline constexpr std::uint32_t kModelFormatVersion = 1;

void save_bundle(const ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle load_bundle(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_bundle(const ModelBundle& bundle);
ModelBundle decode_bundle(std::span<const std::uint8_t> bytes);
/// Hex SHA-256 of the encoded bundle.
std::string bundle_checksum(const ModelBundle& bundle);

/// Row generator conditioned on equality terms.
class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual Table generate(const std::vector<EqTerm>& conditions, std::size_t n, Rng& rng) const = 0;
};

struct CountEstimate {
  double count = 0.0;
  double standard_error = 0.0;  // in rows
  bool not_in_vocabulary = false;
};

/// COUNT estimator for equality conjunctions.
class CountSource {
 public:
  virtual ~CountSource() = default;
  virtual CountEstimate count(const std::vector<EqTerm>& conditions, Rng& rng) const = 0;
};

class CvaeSampleSource : public SampleSource {
 public:
  explicit CvaeSampleSource(const ModelBundle& bundle) : bundle_(bundle) {}
  Table generate(const std::vector<EqTerm>& conditions, std::size_t n, Rng& rng) const override;

 private:
  const ModelBundle& bundle_;
};

class ArCountSource : public CountSource {
 public:
  ArCountSource(const ModelBundle& bundle, std::size_t walks = kDefaultWalks) : bundle_(bundle), walks_(walks) {}
  CountEstimate count(const std::vector<EqTerm>& conditions, Rng& rng) const override;

 private:
  const ModelBundle& bundle_;
  std::size_t walks_;
};

/// Exact generator: every table row matching the conditions, in table order.
class OracleSampleSource : public SampleSource {
 public:
  explicit OracleSampleSource(const Table& table) : table_(table) {}
  Table generate(const std::vector<EqTerm>& conditions, std::size_t n, Rng& rng) const override;
  std::size_t calls() const { return calls_.load(); }

 private:
  const Table& table_;
  mutable std::atomic<std::size_t> calls_{0};
};

class OracleCountSource : public CountSource {
 public:
  explicit OracleCountSource(const Table& table) : table_(table) {}
  CountEstimate count(const std::vector<EqTerm>& conditions, Rng& rng) const override;

 private:
  const Table& table_;
};

struct Backend {
  const SampleSource* generator = nullptr;
  const CountSource* counter = nullptr;
  const Schema* schema = nullptr;
};

struct ExecuteOptions {
  std::size_t n_samples = 1000;
  std::size_t min_survivors = 30;
  std::size_t regenerate_factor = 4;
  std::size_t dnf_cap = kDefaultDnfCap;  // applied when a statement is planned from SQL
};

struct SubqueryDiagnostics {
  std::string conditions;
  int sign = 1;
  std::size_t generated = 0;
  std::size_t matched_equalities = 0;  // generated rows satisfying the equality terms
  std::size_t survivors = 0;           // rows satisfying every term
  bool regenerated = false;
  bool low_confidence = false;
  std::optional<double> count;
  double count_standard_error = 0.0;
  std::optional<double> avg;
  bool answered = false;
};

struct GroupResult {
  std::vector<std::string> key;
  double value = 0.0;
  bool answered = false;
};

struct QueryResult {
  bool grouped = false;
  double value = 0.0;  // scalar queries
  bool answered = false;
  std::vector<GroupResult> groups;      // answered groups, ordered and limited
  std::vector<GroupResult> unanswered;  // groups listed but without an estimate
  std::vector<SubqueryDiagnostics> diagnostics;

  /// Throws kUnansweredQuery for an unanswered scalar query.
  double value_or_throw() const;
};

QueryResult execute(const QueryPlan& plan, const Backend& backend, const ExecuteOptions& options, Rng& rng);

/// Parses, plans and executes one statement against a bundle.
QueryResult answer(const std::string& sql, const ModelBundle& bundle, const ExecuteOptions& options, Rng& rng,
                   std::size_t walks = kDefaultWalks);

/// Orders answered groups by the plan's ORDER BY (ties broken by key) and
/// applies LIMIT.
void order_and_limit(std::vector<GroupResult>& groups, const std::optional<OrderBy>& order_by,
                     const std::vector<std::size_t>& group_by, std::optional<std::size_t> limit);

std::string format_result(const QueryResult& result, bool with_diagnostics = false);

}  // namespace predaqp
