#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "predaqp/bytes.hpp"
#include "predaqp/dataset.hpp"
#include "predaqp/sqlfront.hpp"
#include "predaqp/transform.hpp"

namespace predaqp {

struct ConjunctiveSubquery {
  Conjunction conditions;  // equalities drive generation; ranges are residual filters
  Aggregate aggregate = Aggregate::kCount;
  std::optional<std::size_t> target;
  int sign = 1;
  std::vector<EqTerm> group;  // empty when ungrouped

  bool operator==(const ConjunctiveSubquery&) const = default;
};

enum class Combination : std::uint8_t { kSingle, kCountWeightedAvg, kSignedSum, kPerGroup };

const char* to_string(Combination rule);

/// Subqueries answering one scalar (or one group's) value. No subqueries
/// means the predicate is unsatisfiable.
struct TermSet {
  Combination rule = Combination::kSingle;
  std::vector<ConjunctiveSubquery> terms;
  /// Inclusion-exclusion subsets before contradiction pruning (2^k - 1), or k.
  std::size_t raw_terms = 0;
};

struct GroupPlan {
  std::vector<EqTerm> key;  // one term per GROUP BY column
  TermSet terms;
};

struct QueryPlan {
  Aggregate aggregate = Aggregate::kCount;
  std::optional<std::size_t> target;
  Combination rule = Combination::kSingle;
  TermSet scalar;  // ungrouped queries
  std::vector<std::size_t> group_by;
  std::vector<GroupPlan> groups;
  std::optional<OrderBy> order_by;
  std::optional<std::size_t> limit;

  bool grouped() const { return !group_by.empty(); }
  std::size_t subquery_count() const;
};

/// Equal-frequency bins for numerical columns, materialised as auxiliary
/// categorical columns named `<column>__bin` with labels b0, b1, ...
class Discretizer {
 public:
  struct Column {
    std::size_t column = 0;      // numerical source column
    std::size_t bin_column = 0;  // auxiliary column in the extended schema
    /// edges[0] = min, edges.back() = max; bin i is [edges[i], edges[i+1]), the last bin closed.
    std::vector<double> edges;

    std::size_t bins() const { return edges.size() - 1; }
    std::size_t bin_of(double v) const;
    bool operator==(const Column&) const = default;
  };

  static Discretizer fit(const Table& table, std::size_t bins = 8);

  const std::vector<Column>& columns() const noexcept { return columns_; }
  const Column* find(std::size_t column) const;
  static std::string bin_label(std::size_t bin) { return "b" + std::to_string(bin); }
  static std::string bin_column_name(const std::string& column) { return column + "__bin"; }

  Schema extend(const Schema& schema) const;
  /// Copy of the table with the auxiliary columns appended.
  Table apply(const Table& table) const;

  void serialize(ByteWriter& out) const;
  static Discretizer deserialize(ByteReader& in);
  bool operator==(const Discretizer&) const = default;

 private:
  std::vector<Column> columns_;
};

/// Rewrites range terms on discretized columns into OR-ed bin equalities.
/// Partially covered bins keep the range as a residual filter. Returns the
/// disjuncts; an empty result is unsatisfiable (including lo > hi).
std::vector<Conjunction> handle_range(const Conjunction& conjunction, const Discretizer* discretizer);

struct PlanOptions {
  std::size_t cap = kDefaultDnfCap;
  const Discretizer* discretizer = nullptr;
  std::size_t max_groups = 1 << 16;
};

/// Decomposes a query into conjunctive subqueries. Throws kDnfBlowup when the
/// inclusion-exclusion expansion of one term set exceeds the cap.
QueryPlan plan(const QueryAst& ast, const DnfPredicate& dnf, const LabelEncoder& encoder, const PlanOptions& options = {});

/// Combination for a list of conjunctions (no grouping).
TermSet plan_terms(const std::vector<Conjunction>& conjunctions, Aggregate aggregate, std::optional<std::size_t> target,
                   std::size_t cap = kDefaultDnfCap);

/// Human-readable plan listing.
std::string describe(const QueryPlan& plan, const Schema& schema);

}  // namespace predaqp
