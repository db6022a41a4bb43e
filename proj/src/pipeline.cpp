#include "predaqp/pipeline.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <fmt/format.h>
#include <fstream>
#include <functional>
#include <json.hpp>
#include <set>
#include <sstream>

#include "predaqp/error.hpp"
#include "predaqp/planner.hpp"

namespace predaqp {

namespace {

using nlohmann::json;

[[noreturn]] void config_error(const std::string& msg) { throw Error(ErrorCode::kConfigError, msg); }

template <class T>
T positive(const json& v, const std::string& key) {
  const auto x = v.get<T>();
  if (!(x > T{0})) config_error(key + " must be positive");
  return x;
}

double fraction(const json& v, const std::string& key, bool allow_zero) {
  const auto x = v.get<double>();
  if (!(allow_zero ? x >= 0.0 : x > 0.0) || !(x <= 1.0)) config_error(key + " must lie in " + (allow_zero ? "[0, 1]" : "(0, 1]"));
  return x;
}

Aggregate parse_aggregate(const std::string& s) {
  if (s == "AVG" || s == "avg") return Aggregate::kAvg;
  if (s == "SUM" || s == "sum") return Aggregate::kSum;
  if (s == "COUNT" || s == "count") return Aggregate::kCount;
  config_error("unknown aggregate '" + s + "'");
}

json optional_u64(const std::optional<std::uint64_t>& v) { return v ? json(*v) : json(nullptr); }

std::optional<std::uint64_t> read_optional_u64(const json& v) {
  if (v.is_null()) return std::nullopt;
  return v.get<std::uint64_t>();
}

struct Key {
  const char* name;
  const char* doc;
  std::function<void(AppConfig&, const json&)> set;
  std::function<json(const AppConfig&)> get;
};

#define PREDAQP_POSITIVE_KEY(NAME, DOC, FIELD)                                                             \
  Key {                                                                                               \
    NAME, DOC, [](AppConfig& c, const json& v) { c.FIELD = positive<decltype(c.FIELD)>(v, NAME); }, \
        [](const AppConfig& c) { return json(c.FIELD); }                                             \
  }

const std::vector<Key>& keys() {
  static const std::vector<Key> k = {
      {"data", "CSV dataset path", [](AppConfig& c, const json& v) { c.data = v.get<std::string>(); },
       [](const AppConfig& c) { return json(c.data); }},
      {"schema", "schema override file (name,kind lines); empty = infer",
       [](AppConfig& c, const json& v) { c.schema = v.get<std::string>(); },
       [](const AppConfig& c) { return json(c.schema); }},
      {"output", "directory for models, reports and the saved config",
       [](AppConfig& c, const json& v) { c.output = v.get<std::string>(); },
       [](const AppConfig& c) { return json(c.output); }},
      {"seed", "root seed; every random stream is derived from it",
       [](AppConfig& c, const json& v) { c.seed = v.get<std::uint64_t>(); },
       [](const AppConfig& c) { return json(c.seed); }},
      {"mask.kind", "stratified | random | none",
       [](AppConfig& c, const json& v) {
         try {
           c.cvae.mask_kind = parse_mask_kind(v.get<std::string>());
         } catch (const Error& e) {
           config_error(e.what());
         }
       },
       [](const AppConfig& c) { return json(to_string(c.cvae.mask_kind)); }},
      {"mask.factor", "masking factor r in (0, 1]",
       [](AppConfig& c, const json& v) { c.cvae.mask_factor = fraction(v, "mask.factor", false); },
       [](const AppConfig& c) { return json(c.cvae.mask_factor); }},
      {"mask.seed", "mask stream seed; null = derived from seed",
       [](AppConfig& c, const json& v) { c.cvae.mask_seed = read_optional_u64(v); },
       [](const AppConfig& c) { return optional_u64(c.cvae.mask_seed); }},
      PREDAQP_POSITIVE_KEY("cvae.depth", "hidden layers per network", cvae.arch.depth),
      PREDAQP_POSITIVE_KEY("cvae.latent_dim", "latent dimension L", cvae.arch.latent_dim),
      PREDAQP_POSITIVE_KEY("cvae.hidden", "hidden width", cvae.arch.hidden),
      PREDAQP_POSITIVE_KEY("cvae.epochs", "training epochs", cvae.epochs),
      PREDAQP_POSITIVE_KEY("cvae.batch", "batch size", cvae.batch),
      PREDAQP_POSITIVE_KEY("cvae.lr", "Adam learning rate", cvae.lr),
      PREDAQP_POSITIVE_KEY("cvae.categorical_weight", "reconstruction weight of categorical attributes",
                      cvae.categorical_weight),
      PREDAQP_POSITIVE_KEY("cvae.numerical_weight", "reconstruction weight of numerical attributes", cvae.numerical_weight),
      {"cvae.seed", "training seed; null = derived from seed",
       [](AppConfig& c, const json& v) { c.cvae_seed = read_optional_u64(v); },
       [](const AppConfig& c) { return optional_u64(c.cvae_seed); }},
      PREDAQP_POSITIVE_KEY("selest.depth", "residual blocks", selest.depth),
      PREDAQP_POSITIVE_KEY("selest.hidden", "hidden width", selest.hidden),
      PREDAQP_POSITIVE_KEY("selest.batch", "batch size", selest.batch),
      PREDAQP_POSITIVE_KEY("selest.epochs", "epochs per ordering", selest.epochs),
      PREDAQP_POSITIVE_KEY("selest.lr", "peak learning rate", selest.lr),
      {"selest.warmup_steps", "linear warm-up steps",
       [](AppConfig& c, const json& v) {
         c.selest.warmup_steps = v.get<int>();
         if (c.selest.warmup_steps < 0) config_error("selest.warmup_steps must be non-negative");
       },
       [](const AppConfig& c) { return json(c.selest.warmup_steps); }},
      PREDAQP_POSITIVE_KEY("selest.orderings", "random orderings tried", selest.orderings),
      {"selest.validation_fraction", "held-out fraction for choosing the ordering",
       [](AppConfig& c, const json& v) {
         c.selest.validation_fraction = fraction(v, "selest.validation_fraction", true);
       },
       [](const AppConfig& c) { return json(c.selest.validation_fraction); }},
      {"selest.seed", "training seed; null = derived from seed",
       [](AppConfig& c, const json& v) { c.selest_seed = read_optional_u64(v); },
       [](const AppConfig& c) { return optional_u64(c.selest_seed); }},
      PREDAQP_POSITIVE_KEY("selest.walks", "progressive-sampling walks per estimate", walks),
      PREDAQP_POSITIVE_KEY("engine.n_samples", "generated rows per subquery", engine.n_samples),
      PREDAQP_POSITIVE_KEY("engine.min_survivors", "survivors below which a subquery is regenerated",
                      engine.min_survivors),
      PREDAQP_POSITIVE_KEY("engine.regenerate_factor", "sample multiplier for the regeneration", engine.regenerate_factor),
      PREDAQP_POSITIVE_KEY("planner.dnf_cap", "maximum conjunctions or inclusion-exclusion terms", engine.dnf_cap),
      {"planner.discretize_bins", "equal-frequency bins per numerical column; 0 = off",
       [](AppConfig& c, const json& v) { c.discretize_bins = v.get<std::size_t>(); },
       [](const AppConfig& c) { return json(c.discretize_bins); }},
      PREDAQP_POSITIVE_KEY("train.fidelity_samples", "generated rows for the marginal-fidelity report", fidelity_samples),
      PREDAQP_POSITIVE_KEY("eval.count", "attribute combinations per predicate count", eval.count),
      {"eval.aggregates", "aggregates emitted by the workload generator",
       [](AppConfig& c, const json& v) {
         c.eval.aggregates.clear();
         for (const auto& a : v) c.eval.aggregates.push_back(parse_aggregate(a.get<std::string>()));
         if (c.eval.aggregates.empty()) config_error("eval.aggregates must not be empty");
       },
       [](const AppConfig& c) {
         json a = json::array();
         for (const auto x : c.eval.aggregates) a.push_back(to_string(x));
         return a;
       }},
      {"eval.group_by", "emit the GROUP BY workload variant",
       [](AppConfig& c, const json& v) { c.eval.group_by = v.get<bool>(); },
       [](const AppConfig& c) { return json(c.eval.group_by); }},
      {"eval.threads", "worker threads; 0 = hardware concurrency",
       [](AppConfig& c, const json& v) { c.eval.threads = v.get<std::size_t>(); },
       [](const AppConfig& c) { return json(c.eval.threads); }},
      {"eval.log_selectivity", "record true selectivities and a decade histogram",
       [](AppConfig& c, const json& v) { c.eval.log_selectivity = v.get<bool>(); },
       [](const AppConfig& c) { return json(c.eval.log_selectivity); }},
      {"eval.samples", "sample-size sweep; empty = engine.n_samples",
       [](AppConfig& c, const json& v) {
         c.eval.samples.clear();
         for (const auto& s : v) c.eval.samples.push_back(positive<std::size_t>(s, "eval.samples"));
       },
       [](const AppConfig& c) { return json(c.eval.samples); }},
  };
  return k;
}

#undef PREDAQP_POSITIVE_KEY

void set_json(AppConfig& c, const std::string& key, const json& value) {
  for (const auto& k : keys()) {
    if (key != k.name) continue;
    try {
      k.set(c, value);
    } catch (const json::exception& e) {
      config_error(key + ": " + e.what());
    }
    return;
  }
  config_error("unknown config key '" + key + "'");
}

void flatten(AppConfig& c, const json& j, const std::string& prefix) {
  for (const auto& [name, value] : j.items()) {
    const std::string key = prefix.empty() ? name : prefix + "." + name;
    if (value.is_object())
      flatten(c, value, key);
    else
      set_json(c, key, value);
  }
}

std::uint64_t stream_seed(const std::optional<std::uint64_t>& explicit_seed, std::uint64_t root, const char* name) {
  return explicit_seed ? *explicit_seed : derive_seed(root, name);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

void AppConfig::set(const std::string& key, const std::string& json_value) {
  json v;
  try {
    v = json::parse(json_value);
  } catch (const json::exception&) {
    v = json_value;  // bare strings need no quotes on the command line
  }
  set_json(*this, key, v);
}

AppConfig parse_config(const std::string& json_text) {
  AppConfig c;
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    config_error(std::string("malformed config: ") + e.what());
  }
  if (!j.is_object()) config_error("config must be a JSON object");
  flatten(c, j, "");
  return c;
}

AppConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) config_error("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string to_json(const AppConfig& config) {
  json j = json::object();
  for (const auto& k : keys()) {
    std::string ptr = "/" + std::string(k.name);
    std::replace(ptr.begin(), ptr.end(), '.', '/');
    j[json::json_pointer(ptr)] = k.get(config);
  }
  return j.dump(2);
}

std::string config_reference() {
  const AppConfig defaults;
  std::string out;
  for (const auto& k : keys()) out += fmt::format("{} = {}    # {}\n", k.name, k.get(defaults).dump(), k.doc);
  return out;
}

Table load_dataset(const AppConfig& config, LoadStats* stats) {
  if (config.data.empty()) config_error("no dataset configured (key 'data')");
  if (!std::filesystem::exists(config.data)) config_error("dataset not found: " + config.data);
  Schema schema;
  if (!config.schema.empty()) {
    if (!std::filesystem::exists(config.schema)) config_error("schema file not found: " + config.schema);
    schema = load_schema_file(config.schema);
  } else {
    schema = Schema(infer_schema(config.data));
  }
  return load_csv(config.data, schema, stats);
}

ModelBundle train_bundle(const Table& table, const AppConfig& config, TrainTiming* timing) {
  if (table.empty()) throw Error(ErrorCode::kEmptyTable, "cannot train on an empty table");
  ModelBundle b;
  std::optional<Table> extended;
  if (config.discretize_bins > 0) {
    b.discretizer = Discretizer::fit(table, config.discretize_bins);
    extended = b.discretizer->apply(table);
  }
  const Table& t = extended ? *extended : table;
  b.table_rows = t.row_count();
  b.mask_kind = config.cvae.mask_kind;
  b.transforms = DataTransformer::fit(t);

  Rng init(derive_seed(config.seed, "init"));
  b.cvae = CvaeModel::create(b.transforms, config.cvae.arch, init);
  CvaeTrainConfig ccfg = config.cvae;
  ccfg.seed = stream_seed(config.cvae_seed, config.seed, "train");
  spdlog::info("training CVAE: {} rows, encoded width {}, mask {} r={}", t.row_count(), b.transforms.encoded_width(),
               to_string(ccfg.mask_kind), ccfg.mask_factor);
  auto t0 = std::chrono::steady_clock::now();
  const auto crep = train_cvae(b.cvae, b.transforms, t, ccfg, [&](int epoch, double loss) {
    spdlog::info("cvae epoch {}/{} loss {:.4f}", epoch + 1, ccfg.epochs, loss);
  });
  if (timing) timing->cvae_seconds = seconds_since(t0);

  ArConfig acfg = config.selest;
  acfg.seed = stream_seed(config.selest_seed, config.seed, "selest");
  ArTrainReport arep;
  t0 = std::chrono::steady_clock::now();
  if (!t.schema().categorical_indices().empty()) {
    spdlog::info("training selectivity model: {} orderings", acfg.orderings);
    b.ar = train_ar(t, b.transforms.encoder(), acfg, &arep);
  }
  if (timing) timing->selest_seconds = seconds_since(t0);

  Rng frng(derive_seed(config.seed, "fidelity"));
  const auto fid = marginal_fidelity_report(b.cvae, b.transforms, t, config.fidelity_samples, frng);

  json s;
  s["mask_kind"] = to_string(ccfg.mask_kind);
  s["mask_factor"] = ccfg.mask_factor;
  s["seed"] = config.seed;
  s["rows"] = t.row_count();
  s["discretize_bins"] = config.discretize_bins;
  s["cvae"] = {{"depth", ccfg.arch.depth},
               {"latent_dim", ccfg.arch.latent_dim},
               {"hidden", ccfg.arch.hidden},
               {"epochs", ccfg.epochs},
               {"epoch_loss", crep.epoch_loss},
               {"epoch_kl", crep.epoch_kl},
               {"epoch_reconstruction", crep.epoch_reconstruction}};
  s["selest"] = {{"orderings", arep.orderings},
                 {"validation_nll", arep.validation_nll},
                 {"chosen", arep.chosen},
                 {"epoch_nll", arep.epoch_nll}};
  json cat = json::array(), num = json::array();
  for (const auto& [col, tv] : fid.categorical_tv) cat.push_back({{"column", t.schema()[col].name}, {"tv", tv}});
  for (const auto& n : fid.numerical)
    num.push_back({{"column", t.schema()[n.column].name},
                   {"real_mean", n.real_mean},
                   {"real_std", n.real_std},
                   {"generated_mean", n.generated_mean},
                   {"generated_std", n.generated_std}});
  s["fidelity"] = {{"max_tv", fid.max_tv()}, {"categorical", cat}, {"numerical", num}};
  b.summary = s.dump();
  return b;
}

std::vector<WorkloadQuery> make_workload(const Table& table, const AppConfig& config) {
  WorkloadSpec spec;
  spec.count = config.eval.count;
  spec.aggregates = config.eval.aggregates;
  spec.seed = derive_seed(config.seed, "workload");
  spec.log_selectivity = config.eval.log_selectivity;
  spec.group_by = config.eval.group_by;
  Rng rng(spec.seed);
  return generate_synthetic_workload(table, spec, rng);
}

EvalOptions eval_options(const AppConfig& config) {
  EvalOptions o;
  o.execute = config.engine;
  o.seed = derive_seed(config.seed, "eval");
  o.threads = config.eval.threads;
  o.walks = config.walks;
  o.log_selectivity = config.eval.log_selectivity;
  return o;
}

std::optional<double> median_relative_error(const EvalReport& report, std::size_t k) {
  for (const auto& s : report.per_k)
    if (s.k == k && s.relative_error.n > 0) return s.relative_error.median;
  return std::nullopt;
}

namespace {

std::vector<std::size_t> all_ks(const std::vector<const EvalReport*>& reports) {
  std::set<std::size_t> ks;
  for (const auto* r : reports)
    for (const auto& s : r->per_k) ks.insert(s.k);
  return {ks.begin(), ks.end()};
}

std::string cell(const std::optional<double>& v) { return v ? fmt::format("{:.2f}%", 100.0 * *v) : "-"; }

std::string grid(const std::vector<std::string>& headers, const std::vector<const EvalReport*>& reports) {
  std::string out = fmt::format("{:>4}", "k");
  for (const auto& h : headers) out += fmt::format(" {:>16}", h);
  out += "\n";
  for (const auto k : all_ks(reports)) {
    out += fmt::format("{:>4}", k);
    for (const auto* r : reports) out += fmt::format(" {:>16}", cell(median_relative_error(*r, k)));
    out += "\n";
  }
  out += fmt::format("{:>4}", "all");
  for (const auto* r : reports)
    out += fmt::format(" {:>16}",
                       r->overall.relative_error.n ? cell(r->overall.relative_error.median) : std::string("-"));
  out += "\n";
  return out;
}

}  // namespace

std::vector<SweepPoint> sample_sweep(const ModelBundle& bundle, const Table& table,
                                     const std::vector<WorkloadQuery>& workload, const EvalOptions& options,
                                     const std::vector<std::size_t>& sizes) {
  std::vector<SweepPoint> out;
  for (const auto n : sizes) {
    EvalOptions o = options;
    o.execute.n_samples = n;
    spdlog::info("evaluating {} queries at {} samples", workload.size(), n);
    out.push_back({n, run_eval(bundle, table, workload, o)});
  }
  return out;
}

std::string sweep_table(const std::vector<SweepPoint>& points) {
  std::vector<std::string> headers;
  std::vector<const EvalReport*> reports;
  for (const auto& p : points) {
    headers.push_back(fmt::format("{} samples", p.samples));
    reports.push_back(&p.report);
  }
  return "median relative error\n" + grid(headers, reports);
}

std::vector<AblationPoint> masking_ablation(const Table& table, const AppConfig& config,
                                            const std::vector<WorkloadQuery>& workload,
                                            const std::vector<MaskKind>& kinds,
                                            const std::vector<std::uint64_t>& seeds) {
  std::vector<AblationPoint> out;
  for (const auto seed : seeds) {
    for (const auto kind : kinds) {
      AppConfig c = config;
      c.seed = seed;
      c.cvae.mask_kind = kind;
      spdlog::info("ablation: mask {} seed {}", to_string(kind), seed);
      const ModelBundle b = train_bundle(table, c);
      out.push_back({kind, seed, run_eval(b, table, workload, eval_options(c))});
    }
  }
  return out;
}

std::string ablation_table(const std::vector<AblationPoint>& points) {
  std::vector<std::string> headers;
  std::vector<const EvalReport*> reports;
  for (const auto& p : points) {
    headers.push_back(fmt::format("{}/s{}", to_string(p.kind), p.seed));
    reports.push_back(&p.report);
  }
  return "median relative error\n" + grid(headers, reports);
}

}  // namespace predaqp
