#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <cstdio>
#include <fmt/format.h>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "predaqp/engine.hpp"
#include "predaqp/error.hpp"
#include "predaqp/evalharness.hpp"
#include "predaqp/pipeline.hpp"
#include "predaqp/synthgen.hpp"

namespace {

using namespace predaqp;
using nlohmann::json;
namespace fs = std::filesystem;

constexpr int kExitUser = 1;
constexpr int kExitInternal = 2;

/// Command-line flag that overrides one config key when given.
struct Binding {
  CLI::Option* option = nullptr;
  std::string key;
  std::shared_ptr<std::string> value = std::make_shared<std::string>();
};

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::vector<Binding> bindings;
  bool verbose = false;
  bool quiet = false;
};

void bind(CLI::App* app, Common& common, const std::string& flag, const std::string& key, const std::string& help) {
  Binding b;
  b.key = key;
  b.option = app->add_option(flag, *b.value, help + " (config key " + key + ")");
  common.bindings.push_back(std::move(b));
}

void add_common(CLI::App* app, Common& common) {
  app->add_option("-c,--config", common.config_path, "JSON config file")->check(CLI::ExistingFile);
  app->add_option("--set", common.sets, "override a config key: key=value (repeatable)");
  bind(app, common, "--seed", "seed", "root seed");
  bind(app, common, "-o,--output", "output", "output directory");
  app->add_flag("-v,--verbose", common.verbose, "debug logging");
  app->add_flag("-q,--quiet", common.quiet, "warnings and errors only");
}

/// Config file, then --set overrides, then dedicated flags.
AppConfig build_config(const Common& common) {
  AppConfig cfg = common.config_path.empty() ? AppConfig{} : load_config(common.config_path);
  for (const auto& kv : common.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::kConfigError, "--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  for (const auto& b : common.bindings)
    if (b.option->count() > 0) cfg.set(b.key, *b.value);
  return cfg;
}

void setup_logging(const Common& common) {
  auto logger = spdlog::stderr_color_mt("predaqp");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
  spdlog::set_level(common.verbose ? spdlog::level::debug : common.quiet ? spdlog::level::warn : spdlog::level::info);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out << text;
}

fs::path output_dir(const AppConfig& cfg) {
  fs::create_directories(cfg.output);
  return cfg.output;
}

ModelBundle load_model(const std::string& path) {
  if (path.empty()) throw Error(ErrorCode::kConfigError, "no model given (--model)");
  if (!fs::exists(path)) throw Error(ErrorCode::kConfigError, "model not found: " + path);
  return load_bundle(path);
}

/// Prints the statement with a caret under the failing byte.
void report_syntax_error(const std::string& sql, const SyntaxError& e) {
  std::cerr << "error: " << e.what() << "\n  " << sql << "\n  " << std::string(std::min(e.position(), sql.size()), ' ')
            << "^\n";
}

// ---------------------------------------------------------------------------
// ingest

int cmd_ingest(const AppConfig& cfg) {
  LoadStats stats;
  const Table t = load_dataset(cfg, &stats);
  const auto dir = output_dir(cfg);
  save_schema_file(t.schema(), dir / "schema.txt");
  const auto strata = compute_strata(t);
  json profile;
  profile["rows_read"] = stats.rows_read;
  profile["rows_dropped_missing_numeric"] = stats.rows_dropped_missing_numeric;
  profile["rows"] = t.row_count();
  profile["columns"] = json::array();
  fmt::print("{} rows kept of {} read ({} dropped for missing numericals)\n", t.row_count(), stats.rows_read,
             stats.rows_dropped_missing_numeric);
  for (const auto& c : t.schema().columns()) {
    json col{{"name", c.name}, {"kind", to_string(c.kind)}};
    if (c.kind == ColumnKind::kCategorical) {
      col["distinct"] = strata.columns[c.position].size();
      fmt::print("  {:<24} categorical  {} distinct values\n", c.name, strata.columns[c.position].size());
    } else {
      const auto& v = t.numerical_column(c.position);
      double lo = v.empty() ? 0 : v[0], hi = lo, sum = 0;
      for (const double x : v) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
        sum += x;
      }
      const double mean = v.empty() ? 0.0 : sum / static_cast<double>(v.size());
      col["min"] = lo;
      col["max"] = hi;
      col["mean"] = mean;
      fmt::print("  {:<24} numerical    min {:.6g}  mean {:.6g}  max {:.6g}\n", c.name, lo, mean, hi);
    }
    profile["columns"].push_back(col);
  }
  write_text(dir / "profile.json", profile.dump(2) + "\n");
  write_text(dir / "ingest_config.json", to_json(cfg) + "\n");
  fmt::print("schema written to {}\n", (dir / "schema.txt").string());
  return 0;
}

// ---------------------------------------------------------------------------
// train

int cmd_train(const AppConfig& cfg, std::string model_path) {
  const Table t = load_dataset(cfg);
  const auto dir = output_dir(cfg);
  if (model_path.empty()) model_path = (dir / "model.bin").string();
  TrainTiming timing;
  const ModelBundle bundle = train_bundle(t, cfg, &timing);
  save_bundle(bundle, model_path);
  const std::string checksum = bundle_checksum(bundle);
  json summary = json::parse(bundle.summary);
  summary["model"] = model_path;
  summary["checksum"] = checksum;
  summary["seconds"] = {{"cvae", timing.cvae_seconds}, {"selest", timing.selest_seconds}};
  write_text(dir / "train_summary.json", summary.dump(2) + "\n");
  write_text(dir / "train_config.json", to_json(cfg) + "\n");
  const auto& loss = summary["cvae"]["epoch_loss"];
  fmt::print("model written to {}\n", model_path);
  fmt::print("mask {} (r = {})\n", summary["mask_kind"].get<std::string>(), cfg.cvae.mask_factor);
  if (!loss.empty())
    fmt::print("cvae loss {:.4f} -> {:.4f} over {} epochs ({:.1f}s)\n", loss.front().get<double>(),
               loss.back().get<double>(), loss.size(), timing.cvae_seconds);
  const auto& vnll = summary["selest"]["validation_nll"];
  if (!vnll.empty())
    fmt::print("selectivity model validation NLL {:.4f} (ordering {} of {}, {:.1f}s)\n",
               vnll[summary["selest"]["chosen"].get<std::size_t>()].get<double>(),
               summary["selest"]["chosen"].get<std::size_t>() + 1, vnll.size(), timing.selest_seconds);
  fmt::print("max marginal total variation {:.4f}\n", summary["fidelity"]["max_tv"].get<double>());
  fmt::print("model checksum {}\n", checksum);
  return 0;
}

// ---------------------------------------------------------------------------
// query / repl

int run_statement(const std::string& sql, const ModelBundle& bundle, const AppConfig& cfg, Rng& rng, bool show_plan,
                  bool diagnostics) {
  try {
    if (show_plan) {
      const QueryAst ast = parse(sql, bundle.schema());
      PlanOptions popt;
      popt.cap = cfg.engine.dnf_cap;
      if (bundle.discretizer) popt.discretizer = &*bundle.discretizer;
      std::cout << describe(plan(ast, to_dnf(ast.where, popt.cap), bundle.transforms.encoder(), popt), bundle.schema());
    }
    const QueryResult r = answer(sql, bundle, cfg.engine, rng, cfg.walks);
    std::cout << format_result(r, diagnostics);
    if (!r.grouped && !r.answered) std::cout << "answered: false\n";
    std::cout.flush();
    return 0;
  } catch (const SyntaxError& e) {
    report_syntax_error(sql, e);
    return kExitUser;
  }
}

int cmd_query(const AppConfig& cfg, const std::string& model_path, const std::string& sql, bool show_plan,
              bool brief) {
  const ModelBundle bundle = load_model(model_path);
  Rng rng(derive_seed(cfg.seed, "generate"));
  return run_statement(sql, bundle, cfg, rng, show_plan, !brief);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

int cmd_repl(const AppConfig& cfg, const std::string& model_path) {
  const ModelBundle bundle = load_model(model_path);
  std::optional<Table> table;
  Rng rng(derive_seed(cfg.seed, "generate"));
  std::cout << "predaqp> " << std::flush;
  std::string line;
  while (std::getline(std::cin, line)) {
    line = trim(line);
    if (line == "\\q" || line == "\\quit") break;
    try {
      if (line.rfind("\\plan", 0) == 0) {
        const std::string sql = trim(line.substr(5));
        const QueryAst ast = parse(sql, bundle.schema());
        PlanOptions popt;
        popt.cap = cfg.engine.dnf_cap;
        if (bundle.discretizer) popt.discretizer = &*bundle.discretizer;
        std::cout << describe(plan(ast, to_dnf(ast.where, popt.cap), bundle.transforms.encoder(), popt),
                              bundle.schema());
      } else if (line.rfind("\\exact", 0) == 0) {
        const std::string sql = trim(line.substr(6));
        if (!table) {
          if (cfg.data.empty()) throw Error(ErrorCode::kConfigError, "\\exact needs the raw table (--data)");
          table = load_dataset(cfg);
          bundle.check_schema(table->schema());
        }
        const QueryAst ast = parse(sql, table->schema());
        std::cout << "exact:\n" << format_result(oracle_execute(ast, *table));
        std::cout << "approximate:\n" << format_result(answer(sql, bundle, cfg.engine, rng, cfg.walks));
      } else if (line.rfind('\\', 0) == 0) {
        std::cout << "commands: \\plan SQL, \\exact SQL, \\q\n";
      } else if (!line.empty()) {
        run_statement(line, bundle, cfg, rng, false, true);
      }
    } catch (const SyntaxError& e) {
      report_syntax_error(line, e);
    } catch (const Error& e) {
      std::cerr << "error: " << e.what() << "\n";
    }
    std::cout << "predaqp> " << std::flush;
  }
  std::cout << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval

int cmd_eval(const AppConfig& cfg, const std::string& model_path, bool ablation,
             const std::vector<std::uint64_t>& ablation_seeds) {
  const Table t = load_dataset(cfg);
  const auto dir = output_dir(cfg);
  const auto workload = make_workload(t, cfg);
  spdlog::info("workload: {} queries", workload.size());
  write_text(dir / "eval_config.json", to_json(cfg) + "\n");
  std::string text;
  if (ablation) {
    const std::vector<std::uint64_t> seeds = ablation_seeds.empty() ? std::vector<std::uint64_t>{cfg.seed} : ablation_seeds;
    const auto points =
        masking_ablation(t, cfg, workload, {MaskKind::kStratified, MaskKind::kRandom, MaskKind::kNone}, seeds);
    for (const auto& p : points)
      p.report.write_jsonl(dir / fmt::format("eval_{}_s{}.jsonl", to_string(p.kind), p.seed));
    text = ablation_table(points);
  } else {
    const ModelBundle bundle = load_model(model_path);
    bundle.check_schema(t.schema());
    const std::vector<std::size_t> sizes =
        cfg.eval.samples.empty() ? std::vector<std::size_t>{cfg.engine.n_samples} : cfg.eval.samples;
    const auto points = sample_sweep(bundle, t, workload, eval_options(cfg), sizes);
    for (const auto& p : points) {
      const std::string name = sizes.size() == 1 ? "eval_report.jsonl" : fmt::format("eval_report_{}.jsonl", p.samples);
      p.report.write_jsonl(dir / name);
      text += fmt::format("== {} samples per subquery ==\n{}\n", p.samples, p.report.summary_table());
    }
    if (points.size() > 1) text += sweep_table(points);
  }
  write_text(dir / "eval_summary.txt", text);
  std::cout << text;
  return 0;
}

// ---------------------------------------------------------------------------
// synth

int cmd_synth(const std::string& preset, const std::string& spec_path, std::optional<std::size_t> rows,
              std::optional<std::uint64_t> seed, const std::string& out, const std::string& spec_out,
              const std::string& schema_out) {
  SynthSpec spec;
  if (!spec_path.empty()) {
    spec = load_synth_spec(spec_path);
  } else if (preset == "rare-group") {
    spec = rare_group_preset();
  } else if (preset == "two-group") {
    spec = two_group_preset(10000, 0);
  } else {
    throw Error(ErrorCode::kConfigError, "unknown preset '" + preset + "' (rare-group, two-group)");
  }
  if (rows) spec.rows = *rows;
  if (seed) spec.seed = *seed;
  spec.validate();
  const Table t = generate_table(spec);
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  write_csv(t, out);
  if (!spec_out.empty()) write_text(spec_out, to_json(spec) + "\n");
  if (!schema_out.empty()) save_schema_file(t.schema(), schema_out);
  fmt::print("{} rows written to {}\n", t.row_count(), out);
  return 0;
}

bool internal(ErrorCode code) {
  return code == ErrorCode::kNonFiniteLoss || code == ErrorCode::kShapeMismatch || code == ErrorCode::kNoForwardCache;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Approximate query answering with a conditional generative model and a learned selectivity estimator"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "predaqp 1.0");

  Common common;
  std::string model_path, sql;
  bool show_plan = false, brief = false, ablation = false;
  std::vector<std::uint64_t> ablation_seeds;
  std::vector<std::size_t> samples;

  auto* ingest = app.add_subcommand("ingest", "infer the schema and profile a CSV dataset");
  add_common(ingest, common);
  bind(ingest, common, "-d,--data", "data", "CSV dataset");
  bind(ingest, common, "--schema", "schema", "schema override file");

  auto* train = app.add_subcommand("train", "train the generative and selectivity models");
  add_common(train, common);
  bind(train, common, "-d,--data", "data", "CSV dataset");
  bind(train, common, "--schema", "schema", "schema override file");
  bind(train, common, "--mask-kind", "mask.kind", "stratified | random | none");
  bind(train, common, "--mask-factor", "mask.factor", "masking factor r");
  bind(train, common, "--epochs", "cvae.epochs", "CVAE epochs");
  bind(train, common, "--ar-epochs", "selest.epochs", "selectivity-model epochs per ordering");
  bind(train, common, "--discretize-bins", "planner.discretize_bins", "bins for range predicates");
  train->add_option("-m,--model", model_path, "model file (default <output>/model.bin)");

  auto* query = app.add_subcommand("query", "answer one SQL statement");
  add_common(query, common);
  query->add_option("-m,--model", model_path, "model file")->required();
  query->add_option("sql", sql, "SQL statement")->required();
  bind(query, common, "-n,--samples", "engine.n_samples", "generated rows per subquery");
  query->add_flag("--plan", show_plan, "print the query plan first");
  query->add_flag("--brief", brief, "omit per-subquery diagnostics");

  auto* repl = app.add_subcommand("repl", "interactive SQL loop (\\plan, \\exact, \\q)");
  add_common(repl, common);
  repl->add_option("-m,--model", model_path, "model file")->required();
  bind(repl, common, "-d,--data", "data", "raw table for \\exact");
  bind(repl, common, "--schema", "schema", "schema override file");
  bind(repl, common, "-n,--samples", "engine.n_samples", "generated rows per subquery");

  auto* eval = app.add_subcommand("eval", "run the synthetic workload against the exact answers");
  add_common(eval, common);
  eval->add_option("-m,--model", model_path, "model file (not needed with --masking-ablation)");
  bind(eval, common, "-d,--data", "data", "CSV dataset");
  bind(eval, common, "--schema", "schema", "schema override file");
  bind(eval, common, "--count", "eval.count", "attribute combinations per predicate count");
  bind(eval, common, "--threads", "eval.threads", "worker threads");
  eval->add_option("--samples", samples, "sample sizes to sweep, e.g. --samples 500,1000,2000")->delimiter(',');
  eval->add_flag("--masking-ablation", ablation, "train and compare stratified, random and no masking");
  eval->add_option("--ablation-seeds", ablation_seeds, "root seeds for the ablation")->delimiter(',');

  auto* config = app.add_subcommand("config", "print every config key with its default, or the effective config");
  add_common(config, common);
  bool effective = false;
  config->add_flag("--effective", effective, "print the merged config as JSON");

  std::string preset = "rare-group", spec_path, out, spec_out, schema_out;
  std::optional<std::size_t> rows;
  std::optional<std::uint64_t> synth_seed;
  auto* synth = app.add_subcommand("synth", "generate a synthetic CSV with known ground truth");
  synth->add_option("--preset", preset, "rare-group | two-group")->capture_default_str();
  synth->add_option("--spec", spec_path, "JSON spec file (overrides --preset)")->check(CLI::ExistingFile);
  synth->add_option("--rows", rows, "row count");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--out", out, "CSV output path")->required();
  synth->add_option("--spec-out", spec_out, "write the spec as JSON");
  synth->add_option("--schema-out", schema_out, "write the schema file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUser;
  }

  try {
    setup_logging(common);
    if (synth->parsed()) return cmd_synth(preset, spec_path, rows, synth_seed, out, spec_out, schema_out);
    AppConfig cfg = build_config(common);
    if (eval->parsed() && !samples.empty()) {
      cfg.eval.samples = samples;
    }
    if (ingest->parsed()) return cmd_ingest(cfg);
    if (train->parsed()) return cmd_train(cfg, model_path);
    if (query->parsed()) return cmd_query(cfg, model_path, sql, show_plan, brief);
    if (repl->parsed()) return cmd_repl(cfg, model_path);
    if (eval->parsed()) return cmd_eval(cfg, model_path, ablation, ablation_seeds);
    if (config->parsed()) {
      std::cout << (effective ? to_json(cfg) + "\n" : config_reference());
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return internal(e.code()) ? kExitInternal : kExitUser;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitInternal;
}
