#include "predaqp/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "predaqp/error.hpp"
#include "predaqp/rng.hpp"

namespace predaqp {

namespace {

using nlohmann::json;

[[noreturn]] void invalid(const std::string& msg) { throw Error(ErrorCode::kInvalidSpec, msg); }

void check_distribution(const std::vector<double>& w, std::size_t expected, const std::string& what) {
  if (w.size() != expected)
    invalid(what + ": expected " + std::to_string(expected) + " weights, got " + std::to_string(w.size()));
  double sum = 0.0;
  for (const double x : w) {
    if (!std::isfinite(x) || x < 0.0) invalid(what + ": weights must be finite and non-negative");
    sum += x;
  }
  if (std::abs(sum - 1.0) > 1e-6) invalid(what + ": weights sum to " + std::to_string(sum));
}

std::size_t tuple_count(const std::vector<std::size_t>& parents, const std::vector<SynthCategorical>& cats) {
  std::size_t n = 1;
  for (const auto p : parents) n *= cats[p].values.size();
  return n;
}

/// Mixed-radix index of the parent tuple, first parent most significant.
std::size_t tuple_index(const std::vector<std::size_t>& parents, const std::vector<SynthCategorical>& cats,
                        const std::vector<std::size_t>& assignment) {
  std::size_t t = 0;
  for (const auto p : parents) t = t * cats[p].values.size() + assignment[p];
  return t;
}

const std::vector<double>& distribution(const SynthCategorical& c, const std::vector<SynthCategorical>& cats,
                                        const std::vector<std::size_t>& assignment) {
  return c.parents.empty() ? c.weights : c.conditional[tuple_index(c.parents, cats, assignment)];
}

std::size_t draw(const std::vector<double>& w, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    acc += w[i];
    if (u < acc) return i;
  }
  // Rounding can leave u above the final partial sum; use the last positive weight.
  for (std::size_t i = w.size(); i-- > 0;)
    if (w[i] > 0.0) return i;
  return 0;
}

double mixture_mean(const std::vector<MixtureComponent>& m) {
  double s = 0.0;
  for (const auto& c : m) s += c.weight * c.mean;
  return s;
}

std::vector<double> rotate(std::vector<double> v, std::size_t by) {
  std::rotate(v.rbegin(), v.rbegin() + static_cast<std::ptrdiff_t>(by % v.size()), v.rend());
  return v;
}

std::vector<std::string> labels(const std::string& prefix, std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

}  // namespace

void SynthSpec::validate() const {
  if (rows == 0) invalid("rows must be positive");
  if (categorical.empty() && numerical.empty()) invalid("spec has no columns");
  std::set<std::string> names;
  auto check_name = [&](const std::string& n) {
    if (n.empty()) invalid("column names must be non-empty");
    if (!names.insert(n).second) invalid("duplicate column name '" + n + "'");
  };
  for (std::size_t i = 0; i < categorical.size(); ++i) {
    const auto& c = categorical[i];
    check_name(c.name);
    if (c.values.empty()) invalid(c.name + ": no values");
    std::set<std::string> seen;
    for (const auto& v : c.values)
      if (v.empty() || !seen.insert(v).second) invalid(c.name + ": values must be unique and non-empty");
    for (const auto p : c.parents)
      if (p >= i) invalid(c.name + ": parents must be earlier categorical columns");
    if (c.parents.empty()) {
      check_distribution(c.weights, c.values.size(), c.name);
    } else {
      const auto n = tuple_count(c.parents, categorical);
      if (c.conditional.size() != n)
        invalid(c.name + ": expected " + std::to_string(n) + " conditional rows, got " +
                std::to_string(c.conditional.size()));
      for (std::size_t t = 0; t < n; ++t)
        check_distribution(c.conditional[t], c.values.size(), c.name + " row " + std::to_string(t));
    }
  }
  for (const auto& n : numerical) {
    check_name(n.name);
    for (const auto p : n.parents)
      if (p >= categorical.size()) invalid(n.name + ": parent index out of range");
    const auto count = tuple_count(n.parents, categorical);
    if (n.mixtures.size() != count)
      invalid(n.name + ": expected " + std::to_string(count) + " mixtures, got " + std::to_string(n.mixtures.size()));
    for (const auto& m : n.mixtures) {
      if (m.empty()) invalid(n.name + ": empty mixture");
      std::vector<double> w;
      for (const auto& c : m) {
        if (!std::isfinite(c.mean) || !std::isfinite(c.sd) || c.sd < 0.0)
          invalid(n.name + ": components need a finite mean and non-negative sd");
        w.push_back(c.weight);
      }
      check_distribution(w, m.size(), n.name + " mixture");
    }
  }
}

Schema SynthSpec::schema() const {
  std::vector<std::pair<std::string, ColumnKind>> pairs;
  for (const auto& c : categorical) pairs.emplace_back(c.name, ColumnKind::kCategorical);
  for (const auto& n : numerical) pairs.emplace_back(n.name, ColumnKind::kNumerical);
  return Schema::from_pairs(pairs);
}

SynthSpec parse_synth_spec(const std::string& json_text) {
  SynthSpec spec;
  try {
    const json j = json::parse(json_text);
    spec.rows = j.at("rows").get<std::size_t>();
    spec.seed = j.value("seed", std::uint64_t{0});
    std::map<std::string, std::size_t> index;
    auto parents_of = [&](const json& col) {
      std::vector<std::size_t> out;
      for (const auto& p : col.value("parents", json::array())) {
        const auto name = p.get<std::string>();
        const auto it = index.find(name);
        if (it == index.end()) invalid("unknown or later parent '" + name + "'");
        out.push_back(it->second);
      }
      return out;
    };
    for (const auto& col : j.value("categorical", json::array())) {
      SynthCategorical c;
      c.name = col.at("name").get<std::string>();
      c.values = col.at("values").get<std::vector<std::string>>();
      c.parents = parents_of(col);
      if (c.parents.empty())
        c.weights = col.at("weights").get<std::vector<double>>();
      else
        c.conditional = col.at("conditional").get<std::vector<std::vector<double>>>();
      index.emplace(c.name, spec.categorical.size());
      spec.categorical.push_back(std::move(c));
    }
    for (const auto& col : j.value("numerical", json::array())) {
      SynthNumerical n;
      n.name = col.at("name").get<std::string>();
      n.parents = parents_of(col);
      for (const auto& m : col.at("mixtures")) {
        std::vector<MixtureComponent> comps;
        for (const auto& c : m)
          comps.push_back({c.value("weight", 1.0), c.at("mean").get<double>(), c.at("sd").get<double>()});
        n.mixtures.push_back(std::move(comps));
      }
      spec.numerical.push_back(std::move(n));
    }
  } catch (const json::exception& e) {
    invalid(std::string("malformed spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

SynthSpec load_synth_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_synth_spec(buf.str());
}

std::string to_json(const SynthSpec& spec) {
  json j;
  j["rows"] = spec.rows;
  j["seed"] = spec.seed;
  j["categorical"] = json::array();
  for (const auto& c : spec.categorical) {
    json col{{"name", c.name}, {"values", c.values}};
    if (c.parents.empty()) {
      col["weights"] = c.weights;
    } else {
      json parents = json::array();
      for (const auto p : c.parents) parents.push_back(spec.categorical[p].name);
      col["parents"] = parents;
      col["conditional"] = c.conditional;
    }
    j["categorical"].push_back(col);
  }
  j["numerical"] = json::array();
  for (const auto& n : spec.numerical) {
    json parents = json::array();
    for (const auto p : n.parents) parents.push_back(spec.categorical[p].name);
    json mixtures = json::array();
    for (const auto& m : n.mixtures) {
      json comps = json::array();
      for (const auto& c : m) comps.push_back({{"weight", c.weight}, {"mean", c.mean}, {"sd", c.sd}});
      mixtures.push_back(comps);
    }
    j["numerical"].push_back({{"name", n.name}, {"parents", parents}, {"mixtures", mixtures}});
  }
  return j.dump(2);
}

Table generate_table(const SynthSpec& spec) {
  spec.validate();
  Table t(spec.schema());
  t.reserve(spec.rows);
  Rng rng(derive_seed(spec.seed, "synth"));
  const auto& cats = spec.categorical;
  std::vector<std::size_t> a(cats.size());
  Row row(cats.size() + spec.numerical.size());
  for (std::size_t r = 0; r < spec.rows; ++r) {
    for (std::size_t i = 0; i < cats.size(); ++i) {
      a[i] = draw(distribution(cats[i], cats, a), rng);
      row[i] = cats[i].values[a[i]];
    }
    for (std::size_t j = 0; j < spec.numerical.size(); ++j) {
      const auto& n = spec.numerical[j];
      const auto& mix = n.mixtures[tuple_index(n.parents, cats, a)];
      std::vector<double> w;
      for (const auto& c : mix) w.push_back(c.weight);
      const auto& comp = mix[draw(w, rng)];
      row[cats.size() + j] = comp.mean + comp.sd * standard_normal(rng);
    }
    t.append(row);
  }
  return t;
}

SynthTruth::SynthTruth(SynthSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

template <class F>
double SynthTruth::accumulate(const std::vector<Condition>& conditions, F&& f) const {
  const auto& cats = spec_.categorical;
  std::vector<std::ptrdiff_t> fixed(cats.size(), -1);
  for (const auto& [col, value] : conditions) {
    if (col >= cats.size()) throw Error(ErrorCode::kInvalidArgument, "conditions must name categorical columns");
    const auto& vals = cats[col].values;
    const auto it = std::find(vals.begin(), vals.end(), value);
    if (it == vals.end()) return 0.0;
    const auto idx = it - vals.begin();
    if (fixed[col] >= 0 && fixed[col] != idx) return 0.0;
    fixed[col] = idx;
  }
  std::vector<std::size_t> a(cats.size());
  double total = 0.0;
  auto rec = [&](auto&& self, std::size_t i, double p) -> void {
    if (p == 0.0) return;
    if (i == cats.size()) {
      total += p * f(a);
      return;
    }
    const auto& w = distribution(cats[i], cats, a);
    if (fixed[i] >= 0) {
      a[i] = static_cast<std::size_t>(fixed[i]);
      self(self, i + 1, p * w[a[i]]);
      return;
    }
    for (std::size_t v = 0; v < w.size(); ++v) {
      a[i] = v;
      self(self, i + 1, p * w[v]);
    }
  };
  rec(rec, 0, 1.0);
  return total;
}

double SynthTruth::selectivity(const std::vector<Condition>& conditions) const {
  return accumulate(conditions, [](const std::vector<std::size_t>&) { return 1.0; });
}

double SynthTruth::conditional_mean(std::size_t numerical_position, const std::vector<Condition>& conditions) const {
  const auto ncat = spec_.categorical.size();
  if (numerical_position < ncat || numerical_position >= ncat + spec_.numerical.size())
    throw Error(ErrorCode::kInvalidArgument, "not a numerical column position");
  const auto& n = spec_.numerical[numerical_position - ncat];
  const double p = selectivity(conditions);
  if (p <= 0.0) throw Error(ErrorCode::kInvalidArgument, "conditions have probability zero");
  const double s = accumulate(conditions, [&](const std::vector<std::size_t>& a) {
    return mixture_mean(n.mixtures[tuple_index(n.parents, spec_.categorical, a)]);
  });
  return s / p;
}

SynthSpec rare_group_preset(std::size_t rows, std::uint64_t seed) {
  SynthSpec s;
  s.rows = rows;
  s.seed = seed;
  const std::vector<double> skew4{0.4, 0.3, 0.2, 0.1};

  SynthCategorical region{"region", labels("r", 5), {0.35, 0.25, 0.2, 0.15, 0.05}, {}, {}};
  SynthCategorical segment{"segment", labels("s", 4), {}, {0}, {}};
  for (std::size_t i = 0; i < 4; ++i) segment.conditional.push_back(rotate(skew4, i));
  segment.conditional.push_back({0.2, 0.2, 0.2, 0.4});
  SynthCategorical channel{"channel", labels("h", 6), {0.25, 0.2, 0.15, 0.1, 0.1, 0.2}, {}, {}};
  SynthCategorical tier{"tier", labels("t", 4), {}, {2}, {}};
  for (std::size_t i = 0; i < 5; ++i) tier.conditional.push_back(rotate(skew4, i));
  tier.conditional.push_back({0.2, 0.15, 0.15, 0.5});
  SynthCategorical device{"device", labels("d", 3), {0.5, 0.3, 0.2}, {}, {}};
  SynthCategorical plan{"plan", labels("p", 5), {}, {4}, {}};
  for (std::size_t i = 0; i < 3; ++i) {
    std::vector<double> w(5, 0.1);
    w[i] = 0.6;
    plan.conditional.push_back(w);
  }
  s.categorical = {region, segment, channel, tier, device, plan};

  SynthNumerical spend{"spend", {0, 1, 2, 3}, {}};
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t g = 0; g < 4; ++g)
      for (std::size_t h = 0; h < 6; ++h)
        for (std::size_t t = 0; t < 4; ++t) {
          double m = 60.0 + 12.0 * r + 6.0 * g - 4.0 * h + 5.0 * t;
          if (r == 4 && g == 3 && h == 5 && t == 3) m += 80.0;
          spend.mixtures.push_back({{0.7, m, 6.0}, {0.3, 1.3 * m, 8.0}});
        }
  SynthNumerical latency{"latency", {4, 5}, {}};
  for (std::size_t d = 0; d < 3; ++d)
    for (std::size_t p = 0; p < 5; ++p)
      latency.mixtures.push_back({{0.6, 20.0 + 5.0 * d + 3.0 * p, 3.0}, {0.4, 50.0 + 4.0 * p, 5.0}});
  s.numerical = {spend, latency};
  s.validate();
  return s;
}

std::vector<Condition> rare_group_conjunction() { return {{0, "r4"}, {1, "s3"}, {2, "h5"}, {3, "t3"}}; }

SynthSpec two_group_preset(std::size_t rows, std::uint64_t seed) {
  SynthSpec s;
  s.rows = rows;
  s.seed = seed;
  s.categorical.push_back({"G", {"g1", "g2"}, {0.5, 0.5}, {}, {}});
  s.numerical.push_back({"X", {0}, {{{1.0, 10.0, 1.0}}, {{1.0, 20.0, 1.0}}}});
  s.validate();
  return s;
}

}  // namespace predaqp
