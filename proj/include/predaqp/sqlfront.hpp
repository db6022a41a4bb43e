#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "predaqp/dataset.hpp"

namespace predaqp {

enum class Aggregate : std::uint8_t { kAvg, kSum, kCount };

const char* to_string(Aggregate agg);

/// Predicate tree. Leaves reference schema positions; AND/OR nodes are n-ary
/// and never directly nest a node of the same kind.
struct Predicate {
  enum class Kind : std::uint8_t { kEquals, kIn, kBetween, kAnd, kOr };

  Kind kind = Kind::kEquals;
  std::size_t column = 0;
  /// kEquals/kIn on a categorical column: the literal text.
  std::vector<std::string> values;
  /// kEquals/kIn on a numerical column, and kBetween as {lo, hi}.
  std::vector<double> numbers;
  std::vector<Predicate> children;

  static Predicate equals(std::size_t column, std::string value);
  static Predicate equals_number(std::size_t column, double value);
  static Predicate in(std::size_t column, std::vector<std::string> values);
  static Predicate between(std::size_t column, double lo, double hi);
  static Predicate conjunction(std::vector<Predicate> children);
  static Predicate disjunction(std::vector<Predicate> children);

  bool is_leaf() const { return kind != Kind::kAnd && kind != Kind::kOr; }
  bool operator==(const Predicate&) const = default;
};

struct OrderBy {
  /// Unset means the aggregate alias; otherwise a group-by column.
  std::optional<std::size_t> column;
  bool descending = false;

  bool operator==(const OrderBy&) const = default;
};

struct QueryAst {
  Aggregate aggregate = Aggregate::kCount;
  std::optional<std::size_t> target;  // absent for COUNT
  std::string alias;                  // empty when not given
  std::string table;
  /// Plain columns listed in SELECT, in order; all of them are group-by columns.
  std::vector<std::size_t> select_columns;
  std::optional<Predicate> where;
  std::vector<std::size_t> group_by;
  std::optional<OrderBy> order_by;
  std::optional<std::size_t> limit;

  bool operator==(const QueryAst&) const = default;
};

/// Parses one statement of the supported subset (see docs/sql.md) and
/// validates it against the schema. Throws SyntaxError, kUnknownColumn,
/// kTypeMismatch or kUnsupportedQuery.
QueryAst parse(const std::string& sql, const Schema& schema);

/// Canonical SQL text; parse(render(ast)) == ast.
std::string render(const QueryAst& ast, const Schema& schema);
std::string render(const Predicate& predicate, const Schema& schema);

/// Truth value of a predicate tree on one row.
bool evaluate(const Predicate& predicate, const Table& table, std::size_t row);

struct EqTerm {
  std::size_t column = 0;
  std::string value;

  auto operator<=>(const EqTerm&) const = default;
};

/// Closed interval on a numerical column.
struct RangeTerm {
  std::size_t column = 0;
  double lo = 0.0;
  double hi = 0.0;

  bool operator==(const RangeTerm&) const = default;
  bool contains(double v) const { return v >= lo && v <= hi; }
};

/// Equality terms sorted by column with at most one term per column; range
/// terms sorted by column with at most one (intersected) range per column.
struct Conjunction {
  std::vector<EqTerm> equalities;
  std::vector<RangeTerm> ranges;

  bool empty() const { return equalities.empty() && ranges.empty(); }
  bool operator==(const Conjunction&) const = default;

  /// Conjunction of both, or nullopt when contradictory.
  std::optional<Conjunction> intersect(const Conjunction& other) const;
  bool matches(const Table& table, std::size_t row) const;
  bool matches_equalities(const Table& table, std::size_t row) const;
  /// True when both assert different values on a shared categorical column.
  bool contradicts(const Conjunction& other) const;
};

/// OR of conjunctions. An absent predicate is a single empty conjunction;
/// an unsatisfiable one has no conjunctions.
struct DnfPredicate {
  std::vector<Conjunction> conjunctions;

  bool operator==(const DnfPredicate&) const = default;
  bool matches(const Table& table, std::size_t row) const;
};

inline constexpr std::size_t kDefaultDnfCap = 1024;

DnfPredicate to_dnf(const std::optional<Predicate>& predicate, std::size_t cap = kDefaultDnfCap);
DnfPredicate to_dnf(const Predicate& predicate, std::size_t cap = kDefaultDnfCap);

std::string render(const Conjunction& conjunction, const Schema& schema);

}  // namespace predaqp
