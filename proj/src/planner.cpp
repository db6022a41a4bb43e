#include "predaqp/planner.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "predaqp/error.hpp"

namespace predaqp {

const char* to_string(Combination rule) {
  switch (rule) {
    case Combination::kSingle: return "single";
    case Combination::kCountWeightedAvg: return "count-weighted-avg";
    case Combination::kSignedSum: return "signed-sum";
    case Combination::kPerGroup: return "per-group";
  }
  return "?";
}

std::size_t QueryPlan::subquery_count() const {
  if (!grouped()) return scalar.terms.size();
  std::size_t n = 0;
  for (const auto& g : groups) n += g.terms.terms.size();
  return n;
}

// ---------------------------------------------------------------------------
// Discretizer

std::size_t Discretizer::Column::bin_of(double v) const {
  const auto inner_begin = edges.begin() + 1;
  const auto inner_end = edges.end() - 1;
  return static_cast<std::size_t>(std::upper_bound(inner_begin, inner_end, v) - inner_begin);
}

Discretizer Discretizer::fit(const Table& table, std::size_t bins) {
  if (table.empty()) throw Error(ErrorCode::kEmptyTable, "cannot fit a discretizer on an empty table");
  if (bins < 1) throw Error(ErrorCode::kInvalidArgument, "discretizer needs at least one bin");
  Discretizer d;
  std::size_t next = table.column_count();
  for (const auto col : table.schema().numerical_indices()) {
    std::vector<double> v = table.numerical_column(col);
    std::sort(v.begin(), v.end());
    Column c;
    c.column = col;
    c.bin_column = next++;
    c.edges.push_back(v.front());
    for (std::size_t i = 1; i < bins; ++i) {
      const double e = v[i * v.size() / bins];
      if (e > c.edges.back()) c.edges.push_back(e);
    }
    if (v.back() > c.edges.back() || c.edges.size() == 1) c.edges.push_back(v.back());
    d.columns_.push_back(std::move(c));
  }
  return d;
}

const Discretizer::Column* Discretizer::find(std::size_t column) const {
  for (const auto& c : columns_)
    if (c.column == column) return &c;
  return nullptr;
}

Schema Discretizer::extend(const Schema& schema) const {
  std::vector<std::pair<std::string, ColumnKind>> pairs;
  for (const auto& c : schema.columns()) pairs.emplace_back(c.name, c.kind);
  for (const auto& c : columns_) pairs.emplace_back(bin_column_name(schema[c.column].name), ColumnKind::kCategorical);
  return Schema::from_pairs(pairs);
}

Table Discretizer::apply(const Table& table) const {
  Table out(extend(table.schema()));
  out.reserve(table.row_count());
  std::vector<bool> flags(out.column_count(), false);
  for (std::size_t r = 0; r < table.row_count(); ++r) {
    Row row = table.row(r);
    for (std::size_t c = 0; c < table.column_count(); ++c) flags[c] = table.missing(r, c);
    for (const auto& c : columns_) row.emplace_back(bin_label(c.bin_of(table.numerical(r, c.column))));
    out.append(row, flags);
  }
  return out;
}

void Discretizer::serialize(ByteWriter& out) const {
  out.u64(columns_.size());
  for (const auto& c : columns_) {
    out.u64(c.column);
    out.u64(c.bin_column);
    out.f64s(c.edges);
  }
}

Discretizer Discretizer::deserialize(ByteReader& in) {
  Discretizer d;
  const auto n = in.u64();
  if (n > in.remaining()) throw Error(ErrorCode::kCorruptFile, "discretizer column count");
  for (std::uint64_t i = 0; i < n; ++i) {
    Column c;
    c.column = in.u64();
    c.bin_column = in.u64();
    c.edges = in.f64s();
    if (c.edges.size() < 2) throw Error(ErrorCode::kCorruptFile, "discretizer needs two edges");
    d.columns_.push_back(std::move(c));
  }
  return d;
}

std::vector<Conjunction> handle_range(const Conjunction& conjunction, const Discretizer* discretizer) {
  for (const auto& r : conjunction.ranges)
    if (r.lo > r.hi) return {};
  std::vector<Conjunction> out{Conjunction{conjunction.equalities, {}}};
  for (const auto& r : conjunction.ranges) {
    const Discretizer::Column* bins = discretizer ? discretizer->find(r.column) : nullptr;
    std::vector<Conjunction> pieces;
    if (!bins) {
      pieces.push_back(Conjunction{{}, {r}});
    } else {
      const auto& e = bins->edges;
      for (std::size_t b = 0; b < bins->bins(); ++b) {
        const bool last = b + 1 == bins->bins();
        const bool overlaps = r.hi >= e[b] && (last ? r.lo <= e[b + 1] : r.lo < e[b + 1]);
        if (!overlaps) continue;
        // A closed range covers [e_b, e_{b+1}) once it reaches the next edge.
        const bool covered = r.lo <= e[b] && r.hi >= e[b + 1];
        Conjunction piece{{EqTerm{bins->bin_column, Discretizer::bin_label(b)}}, {}};
        if (!covered) piece.ranges.push_back(r);
        pieces.push_back(std::move(piece));
      }
    }
    std::vector<Conjunction> next;
    for (const auto& a : out)
      for (const auto& p : pieces)
        if (auto m = a.intersect(p)) next.push_back(std::move(*m));
    out = std::move(next);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Planning

namespace {

bool pairwise_disjoint(const std::vector<Conjunction>& conj) {
  for (std::size_t i = 0; i < conj.size(); ++i)
    for (std::size_t j = i + 1; j < conj.size(); ++j)
      if (!conj[i].contradicts(conj[j])) return false;
  return true;
}

ConjunctiveSubquery make_term(Conjunction c, Aggregate agg, std::optional<std::size_t> target, int sign) {
  ConjunctiveSubquery q;
  q.conditions = std::move(c);
  q.aggregate = agg;
  q.target = target;
  q.sign = sign;
  return q;
}

void enumerate_intersections(const std::vector<Conjunction>& conj, std::size_t start, const Conjunction& acc,
                             std::size_t depth, Aggregate agg, std::optional<std::size_t> target, std::size_t cap,
                             std::vector<ConjunctiveSubquery>& out) {
  for (std::size_t i = start; i < conj.size(); ++i) {
    auto m = depth == 0 ? std::optional<Conjunction>(conj[i]) : acc.intersect(conj[i]);
    if (!m) continue;  // every superset is contradictory as well
    if (out.size() >= cap)
      throw Error(ErrorCode::kDnfBlowup, "inclusion-exclusion exceeds " + std::to_string(cap) + " terms");
    out.push_back(make_term(*m, agg, target, depth % 2 == 0 ? 1 : -1));
    enumerate_intersections(conj, i + 1, *m, depth + 1, agg, target, cap, out);
  }
}

}  // namespace

TermSet plan_terms(const std::vector<Conjunction>& conjunctions, Aggregate aggregate, std::optional<std::size_t> target,
                   std::size_t cap) {
  TermSet set;
  const std::size_t k = conjunctions.size();
  set.rule = k <= 1 ? Combination::kSingle
                    : (aggregate == Aggregate::kAvg ? Combination::kCountWeightedAvg : Combination::kSignedSum);
  if (k <= 1 || pairwise_disjoint(conjunctions)) {
    set.raw_terms = k;
    for (const auto& c : conjunctions) set.terms.push_back(make_term(c, aggregate, target, 1));
    return set;
  }
  set.raw_terms = k >= 64 ? SIZE_MAX : (std::size_t{1} << k) - 1;
  enumerate_intersections(conjunctions, 0, Conjunction{}, 0, aggregate, target, cap, set.terms);
  return set;
}

QueryPlan plan(const QueryAst& ast, const DnfPredicate& dnf, const LabelEncoder& encoder, const PlanOptions& options) {
  QueryPlan p;
  p.aggregate = ast.aggregate;
  p.target = ast.target;
  p.group_by = ast.group_by;
  p.order_by = ast.order_by;
  p.limit = ast.limit;

  std::vector<Conjunction> conj;
  for (const auto& c : dnf.conjunctions) {
    for (auto& piece : handle_range(c, options.discretizer))
      if (std::find(conj.begin(), conj.end(), piece) == conj.end()) conj.push_back(std::move(piece));
  }

  if (!p.grouped()) {
    p.scalar = plan_terms(conj, ast.aggregate, ast.target, options.cap);
    p.rule = p.scalar.rule;
    return p;
  }

  p.rule = Combination::kPerGroup;
  std::size_t combos = 1;
  for (const auto g : ast.group_by) {
    combos *= std::max<std::size_t>(encoder.cardinality(g), 1);
    if (combos > options.max_groups)
      throw Error(ErrorCode::kDnfBlowup, "GROUP BY expands to more than " + std::to_string(options.max_groups) + " groups");
  }
  std::vector<std::size_t> idx(ast.group_by.size(), 0);
  for (std::size_t n = 0; n < combos; ++n) {
    Conjunction key;
    for (std::size_t i = 0; i < ast.group_by.size(); ++i)
      key.equalities.push_back(EqTerm{ast.group_by[i], encoder.values(ast.group_by[i]).at(idx[i])});
    std::sort(key.equalities.begin(), key.equalities.end());
    std::vector<Conjunction> restricted;
    for (const auto& c : conj)
      if (auto m = c.intersect(key))
        if (std::find(restricted.begin(), restricted.end(), *m) == restricted.end()) restricted.push_back(std::move(*m));
    if (!restricted.empty()) {
      GroupPlan g;
      for (std::size_t i = 0; i < ast.group_by.size(); ++i)
        g.key.push_back(EqTerm{ast.group_by[i], encoder.values(ast.group_by[i]).at(idx[i])});
      g.terms = plan_terms(restricted, ast.aggregate, ast.target, options.cap);
      for (auto& t : g.terms.terms) t.group = g.key;
      p.groups.push_back(std::move(g));
    }
    for (std::size_t i = idx.size(); i-- > 0;) {
      if (++idx[i] < encoder.cardinality(ast.group_by[i])) break;
      idx[i] = 0;
    }
  }
  return p;
}

std::string describe(const QueryPlan& plan, const Schema& schema) {
  std::ostringstream out;
  out << "aggregate " << to_string(plan.aggregate);
  if (plan.target) out << "(" << schema[*plan.target].name << ")";
  out << ", rule " << to_string(plan.rule) << ", " << plan.subquery_count() << " subqueries\n";
  auto dump = [&](const TermSet& set, const std::string& indent) {
    out << indent << "combine " << to_string(set.rule) << " over " << set.terms.size() << " terms";
    if (set.raw_terms != set.terms.size()) out << " (" << set.raw_terms << " before pruning)";
    out << "\n";
    for (const auto& t : set.terms)
      out << indent << "  [" << (t.sign > 0 ? "+" : "-") << "] " << render(t.conditions, schema) << "\n";
  };
  if (!plan.grouped()) {
    dump(plan.scalar, "");
  } else {
    for (const auto& g : plan.groups) {
      out << "group";
      for (const auto& k : g.key) out << " " << schema[k.column].name << "=" << k.value;
      out << "\n";
      dump(g.terms, "  ");
    }
  }
  if (plan.order_by) {
    out << "order by "
        << (plan.order_by->column ? schema[*plan.order_by->column].name : std::string("aggregate"))
        << (plan.order_by->descending ? " desc" : " asc") << "\n";
  }
  if (plan.limit) out << "limit " << *plan.limit << "\n";
  return out.str();
}

}  // namespace predaqp
