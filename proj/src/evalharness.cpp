#include "predaqp/evalharness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <json.hpp>

#include "predaqp/error.hpp"
#include "predaqp/planner.hpp"

namespace predaqp {

QueryResult oracle_execute(const QueryAst& ast, const Table& table) {
  struct Acc {
    std::size_t n = 0;
    double sum = 0.0;
  };
  std::map<GroupKey, Acc> groups;
  Acc all;
  for (std::size_t r = 0; r < table.row_count(); ++r) {
    if (ast.where && !evaluate(*ast.where, table, r)) continue;
    Acc& acc = [&]() -> Acc& {
      if (ast.group_by.empty()) return all;
      GroupKey key;
      for (const auto g : ast.group_by) key.push_back(table.categorical(r, g));
      return groups[key];
    }();
    ++acc.n;
    if (ast.target) acc.sum += table.numerical(r, *ast.target);
  }
  auto value_of = [&](const Acc& a) {
    switch (ast.aggregate) {
      case Aggregate::kCount: return static_cast<double>(a.n);
      case Aggregate::kSum: return a.sum;
      case Aggregate::kAvg: return a.sum / static_cast<double>(a.n);
    }
    return 0.0;
  };
  QueryResult out;
  if (ast.group_by.empty()) {
    out.answered = ast.aggregate != Aggregate::kAvg || all.n > 0;
    out.value = out.answered ? value_of(all) : 0.0;
    return out;
  }
  out.grouped = true;
  for (const auto& [key, acc] : groups) out.groups.push_back(GroupResult{key, value_of(acc), true});
  // std::map already yields byte-wise key order; ORDER BY re-sorts stably.
  if (ast.order_by) {
    const auto& ob = *ast.order_by;
    std::size_t pos = 0;
    if (ob.column) pos = static_cast<std::size_t>(std::find(ast.group_by.begin(), ast.group_by.end(), *ob.column) - ast.group_by.begin());
    std::stable_sort(out.groups.begin(), out.groups.end(), [&](const GroupResult& a, const GroupResult& b) {
      if (ob.column) return ob.descending ? a.key[pos] > b.key[pos] : a.key[pos] < b.key[pos];
      return ob.descending ? a.value > b.value : a.value < b.value;
    });
  }
  if (ast.limit && out.groups.size() > *ast.limit) out.groups.resize(*ast.limit);
  out.answered = !out.groups.empty();
  return out;
}

// ---------------------------------------------------------------------------
// Workload

std::vector<WorkloadQuery> generate_synthetic_workload(const Table& table, const WorkloadSpec& spec, Rng& rng) {
  if (spec.count < 1) throw Error(ErrorCode::kInvalidArgument, "workload count must be at least 1");
  if (table.empty()) throw Error(ErrorCode::kEmptyTable, "workload needs rows");
  const Schema& schema = table.schema();
  const auto cats = schema.categorical_indices();
  const auto nums = schema.numerical_indices();
  if (cats.empty() || nums.empty())
    throw Error(ErrorCode::kInvalidArgument, "workload needs a categorical and a numerical column");
  if (spec.group_by && cats.size() < 2)
    throw Error(ErrorCode::kInvalidArgument, "GROUP BY workload needs two categorical columns");

  std::vector<WorkloadQuery> out;
  const std::size_t max_k = spec.group_by ? cats.size() - 1 : cats.size();
  for (std::size_t k = 1; k <= max_k; ++k) {
    for (std::size_t rep = 0; rep < spec.count; ++rep) {
      std::vector<std::size_t> pool = cats;
      std::optional<std::size_t> group;
      if (spec.group_by) {
        const auto gi = uniform_index(rng, pool.size());
        group = pool[gi];
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(gi));
      }
      // Partial Fisher-Yates for a uniform k-subset.
      for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + uniform_index(rng, pool.size() - i)]);
      std::vector<std::size_t> chosen(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
      std::sort(chosen.begin(), chosen.end());
      const std::size_t tuple = uniform_index(rng, table.row_count());
      std::vector<Predicate> preds;
      for (const auto c : chosen) preds.push_back(Predicate::equals(c, table.categorical(tuple, c)));
      const Predicate where = Predicate::conjunction(std::move(preds));

      auto emit = [&](Aggregate agg, std::optional<std::size_t> target) {
        WorkloadQuery q;
        q.k = k;
        q.ast.aggregate = agg;
        q.ast.target = target;
        q.ast.table = "T";
        q.ast.where = where;
        if (group) {
          q.ast.group_by = {*group};
          q.ast.select_columns = {*group};
        }
        q.sql = render(q.ast, schema);
        out.push_back(std::move(q));
      };
      for (const auto agg : spec.aggregates) {
        if (agg == Aggregate::kCount) {
          emit(agg, std::nullopt);
        } else {
          for (const auto n : nums) emit(agg, n);
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

double relative_error(double g, double a) {
  if (g == 0.0) throw Error(ErrorCode::kUndefinedRelativeError, "relative error is undefined for a zero ground truth");
  return std::abs(g - a) / std::abs(g);
}

double smape(double g, double a) {
  const double den = std::abs(g) + std::abs(a);
  if (den == 0.0) return 0.0;
  return 2.0 * std::abs(g - a) / den;
}

double bin_completeness(const std::set<GroupKey>& truth, const std::set<GroupKey>& approx) {
  if (truth.empty()) throw Error(ErrorCode::kEmptyTruthGroups, "bin-completeness needs at least one true group");
  std::size_t hit = 0;
  for (const auto& g : truth) hit += approx.count(g);
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

std::optional<double> group_query_error(const std::vector<double>& errors) {
  if (errors.empty()) return std::nullopt;
  double s = 0.0;
  for (const double e : errors) s += e;
  return s / static_cast<double>(errors.size());
}

Quartiles quartiles(std::vector<double> v) {
  Quartiles q;
  q.n = v.size();
  if (v.empty()) return q;
  std::sort(v.begin(), v.end());
  auto at = [&](double p) {
    const double pos = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  q.q1 = at(0.25);
  q.median = at(0.5);
  q.q3 = at(0.75);
  return q;
}

// ---------------------------------------------------------------------------
// Evaluation

Answerer bundle_answerer(const ModelBundle& bundle, const EvalOptions& options) {
  return [&bundle, options](const QueryAst& ast, Rng& rng) {
    PlanOptions popt;
    popt.cap = options.execute.dnf_cap;
    if (bundle.discretizer) popt.discretizer = &*bundle.discretizer;
    const QueryPlan qp = plan(ast, to_dnf(ast.where, popt.cap), bundle.transforms.encoder(), popt);
    const CvaeSampleSource gen(bundle);
    const ArCountSource cnt(bundle, options.walks);
    const Backend backend{&gen, &cnt, &bundle.schema()};
    return execute(qp, backend, options.execute, rng);
  };
}

namespace {

QueryRecord evaluate_query(const Answerer& answerer, const Table& table, const WorkloadQuery& q, std::size_t index,
                           const EvalOptions& options) {
  QueryRecord rec;
  rec.index = index;
  rec.sql = q.sql;
  rec.k = q.k;
  rec.grouped = !q.ast.group_by.empty();
  const QueryResult truth = oracle_execute(q.ast, table);
  if (options.log_selectivity) {
    std::size_t hits = 0;
    for (std::size_t r = 0; r < table.row_count(); ++r) hits += !q.ast.where || evaluate(*q.ast.where, table, r);
    rec.selectivity = static_cast<double>(hits) / static_cast<double>(table.row_count());
  }
  QueryResult approx;
  try {
    Rng rng(derive_seed(options.seed, static_cast<std::uint64_t>(index)));
    approx = answerer(q.ast, rng);
  } catch (const std::exception& e) {
    rec.error = e.what();
    return rec;
  }
  if (!rec.grouped) {
    if (truth.answered) rec.truth = truth.value;
    rec.answered = approx.answered;
    if (approx.answered) rec.approx = approx.value;
    if (approx.answered && truth.answered) {
      rec.smape = smape(truth.value, approx.value);
      if (truth.value != 0.0) rec.relative_error = relative_error(truth.value, approx.value);
    }
    return rec;
  }
  rec.truth_groups = truth.groups.size();
  rec.answered_groups = approx.groups.size();
  rec.answered = approx.answered;
  if (truth.groups.empty()) return rec;
  std::set<GroupKey> tg, ag;
  std::map<GroupKey, double> approx_value;
  for (const auto& g : truth.groups) tg.insert(g.key);
  for (const auto& g : approx.groups) {
    ag.insert(g.key);
    approx_value[g.key] = g.value;
  }
  rec.bin_completeness = bin_completeness(tg, ag);
  std::vector<double> re, sm;
  for (const auto& g : truth.groups) {
    const auto it = approx_value.find(g.key);
    if (it == approx_value.end()) continue;
    sm.push_back(smape(g.value, it->second));
    if (g.value != 0.0) re.push_back(relative_error(g.value, it->second));
  }
  rec.relative_error = group_query_error(re);
  rec.smape = group_query_error(sm);
  return rec;
}

}  // namespace

void summarize(EvalReport& report, bool log_selectivity) {
  std::map<std::size_t, std::vector<const QueryRecord*>> by_k;
  for (const auto& r : report.records) by_k[r.k].push_back(&r);
  auto build = [](std::size_t k, const std::vector<const QueryRecord*>& recs) {
    KSummary s;
    s.k = k;
    s.total = recs.size();
    std::vector<double> sm, re, bc;
    for (const auto* r : recs) {
      if (!r->answered) continue;
      ++s.answered;
      if (r->smape) sm.push_back(*r->smape);
      if (r->relative_error) {
        re.push_back(*r->relative_error);
      } else if (r->smape) {
        ++s.undefined_relative_error;
      }
      if (r->bin_completeness) bc.push_back(*r->bin_completeness);
    }
    s.smape = quartiles(sm);
    s.relative_error = quartiles(re);
    if (!bc.empty()) s.mean_bin_completeness = *group_query_error(bc);
    return s;
  };
  report.per_k.clear();
  std::vector<const QueryRecord*> all;
  for (const auto& [k, recs] : by_k) {
    report.per_k.push_back(build(k, recs));
    all.insert(all.end(), recs.begin(), recs.end());
  }
  report.overall = build(0, all);
  report.selectivity_histogram.clear();
  if (log_selectivity) {
    std::map<int, std::size_t> hist;
    for (const auto& r : report.records) {
      if (!r.selectivity) continue;
      const int decade = *r.selectivity > 0.0 ? static_cast<int>(std::floor(-std::log10(*r.selectivity))) : 99;
      ++hist[decade];
    }
    report.selectivity_histogram.assign(hist.begin(), hist.end());
  }
}

EvalReport run_eval(const Answerer& answerer, const Table& table, const std::vector<WorkloadQuery>& workload,
                    const EvalOptions& options) {
  EvalReport report;
  report.records.resize(workload.size());
  std::size_t threads = options.threads ? options.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, std::max<std::size_t>(workload.size(), 1));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < workload.size(); i = next++)
      report.records[i] = evaluate_query(answerer, table, workload[i], i, options);
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  summarize(report, options.log_selectivity);
  return report;
}

EvalReport run_eval(const ModelBundle& bundle, const Table& table, const std::vector<WorkloadQuery>& workload,
                    const EvalOptions& options) {
  bundle.check_schema(table.schema());
  return run_eval(bundle_answerer(bundle, options), table, workload, options);
}

void EvalReport::write_jsonl(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write '" + path.string() + "'");
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  for (const auto& r : records) {
    nlohmann::json j;
    j["index"] = r.index;
    j["sql"] = r.sql;
    j["k"] = r.k;
    j["grouped"] = r.grouped;
    j["truth"] = opt(r.truth);
    j["approx"] = opt(r.approx);
    j["answered"] = r.answered;
    j["relative_error"] = opt(r.relative_error);
    j["smape"] = opt(r.smape);
    j["bin_completeness"] = opt(r.bin_completeness);
    j["truth_groups"] = r.truth_groups;
    j["answered_groups"] = r.answered_groups;
    j["selectivity"] = opt(r.selectivity);
    j["error"] = r.error;
    out << j.dump() << "\n";
  }
}

std::string EvalReport::summary_table() const {
  std::ostringstream out;
  out << fmt::format("{:>3} {:>7} {:>9} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>8}\n", "k", "queries", "answered",
                     "sMAPE q1", "sMAPE med", "sMAPE q3", "RE q1", "RE med", "RE q3", "bins");
  auto line = [&](const KSummary& s, const std::string& label) {
    out << fmt::format("{:>3} {:>7} {:>8.1f}% {:>10.4f} {:>10.4f} {:>10.4f} {:>10.4f} {:>10.4f} {:>10.4f} {:>8}\n", label,
                       s.total, 100.0 * s.answered_fraction(), s.smape.q1, s.smape.median, s.smape.q3,
                       s.relative_error.q1, s.relative_error.median, s.relative_error.q3,
                       s.mean_bin_completeness ? fmt::format("{:.3f}", *s.mean_bin_completeness) : std::string("-"));
  };
  for (const auto& s : per_k) line(s, std::to_string(s.k));
  line(overall, "all");
  std::size_t undefined = 0;
  for (const auto& s : per_k) undefined += s.undefined_relative_error;
  if (undefined) out << undefined << " answered queries had a zero ground truth (relative error undefined)\n";
  std::size_t failed = 0;
  for (const auto& r : records) failed += !r.error.empty();
  if (failed) out << failed << " queries failed\n";
  if (!selectivity_histogram.empty()) {
    out << "true selectivity by decade:\n";
    for (const auto& [d, n] : selectivity_histogram) {
      if (d == 99) {
        out << "  zero: " << n << "\n";
      } else {
        out << fmt::format("  [1e-{}, 1e-{}): {}\n", d + 1, d, n);
      }
    }
  }
  return out.str();
}

}  // namespace predaqp
