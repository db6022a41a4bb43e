#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "predaqp/engine.hpp"
#include "predaqp/sqlfront.hpp"

namespace predaqp {

/// Exact full-scan evaluation: filter by the predicate tree, group, aggregate,
/// order and limit. Scalar AVG over no rows is unanswered; SUM and COUNT are 0.
QueryResult oracle_execute(const QueryAst& ast, const Table& table);

struct WorkloadSpec {
  std::size_t count = 100;  // combinations per predicate count k
  std::vector<Aggregate> aggregates{Aggregate::kAvg};
  std::uint64_t seed = 0;
  bool log_selectivity = false;
  /// GROUP BY variant: one random categorical attribute is grouped and never predicated.
  bool group_by = false;
};

struct WorkloadQuery {
  QueryAst ast;
  std::string sql;
  std::size_t k = 0;  // number of equality predicates
};

/// For each k in 1..|A_C| (1..|A_C|-1 for the GROUP BY variant), `count`
/// attribute combinations drawn with repetition, values taken from a random
/// tuple, one query per numerical attribute and aggregate (COUNT once).
std::vector<WorkloadQuery> generate_synthetic_workload(const Table& table, const WorkloadSpec& spec, Rng& rng);

/// |g - a| / |g|; throws kUndefinedRelativeError when g == 0.
double relative_error(double g, double a);
/// 2|g - a| / (|g| + |a|), 0 when both are 0.
double smape(double g, double a);

using GroupKey = std::vector<std::string>;

/// |G ∩ A| / |G|; throws kEmptyTruthGroups for an empty truth set.
double bin_completeness(const std::set<GroupKey>& truth, const std::set<GroupKey>& approx);
/// Mean of the per-group errors; nullopt when empty.
std::optional<double> group_query_error(const std::vector<double>& errors);

struct QueryRecord {
  std::size_t index = 0;
  std::string sql;
  std::size_t k = 0;
  bool grouped = false;
  std::optional<double> truth;
  std::optional<double> approx;
  bool answered = false;
  std::optional<double> relative_error;  // absent when undefined or unanswered
  std::optional<double> smape;
  std::optional<double> bin_completeness;
  std::size_t truth_groups = 0;
  std::size_t answered_groups = 0;
  std::optional<double> selectivity;  // true fraction of rows matching the predicate
  std::string error;                  // non-empty when the query failed
};

struct Quartiles {
  double q1 = 0.0, median = 0.0, q3 = 0.0;
  std::size_t n = 0;
};

/// Linear-interpolation quartiles; n == 0 yields zeros.
Quartiles quartiles(std::vector<double> values);

struct KSummary {
  std::size_t k = 0;
  std::size_t total = 0;
  std::size_t answered = 0;
  std::size_t undefined_relative_error = 0;
  Quartiles smape;
  Quartiles relative_error;
  std::optional<double> mean_bin_completeness;

  double answered_fraction() const { return total ? static_cast<double>(answered) / static_cast<double>(total) : 0.0; }
};

struct EvalReport {
  std::vector<QueryRecord> records;
  std::vector<KSummary> per_k;
  KSummary overall;
  /// Decade histogram of true selectivities (10^-d buckets), when logged.
  std::vector<std::pair<int, std::size_t>> selectivity_histogram;

  void write_jsonl(const std::filesystem::path& path) const;
  std::string summary_table() const;
};

struct EvalOptions {
  ExecuteOptions execute;
  std::uint64_t seed = 0;
  std::size_t threads = 0;  // 0 = hardware concurrency
  std::size_t walks = kDefaultWalks;
  bool log_selectivity = false;
};

/// Approximate answerer under evaluation.
using Answerer = std::function<QueryResult(const QueryAst& ast, Rng& rng)>;

Answerer bundle_answerer(const ModelBundle& bundle, const EvalOptions& options);

/// Runs every query through the answerer and the oracle. Each query uses an
/// RNG derived from (seed, index), so thread count does not affect results.
EvalReport run_eval(const Answerer& answerer, const Table& table, const std::vector<WorkloadQuery>& workload,
                    const EvalOptions& options);

EvalReport run_eval(const ModelBundle& bundle, const Table& table, const std::vector<WorkloadQuery>& workload,
                    const EvalOptions& options);

/// Recomputes per-k and overall summaries from the records.
void summarize(EvalReport& report, bool log_selectivity);

}  // namespace predaqp
