#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "predaqp/cvae.hpp"
#include "predaqp/engine.hpp"
#include "predaqp/evalharness.hpp"
#include "predaqp/selectivity.hpp"

namespace predaqp {

struct EvalConfig {
  std::size_t count = 100;
  std::vector<Aggregate> aggregates{Aggregate::kAvg};
  bool group_by = false;
  std::size_t threads = 0;
  bool log_selectivity = false;
  std::vector<std::size_t> samples;  // sample sweep; empty = engine.n_samples only
};

/// Every tunable of the pipeline. Serialized as nested JSON objects whose
/// dotted paths are the config keys (e.g. `cvae.epochs`).
struct AppConfig {
  std::string data;    // CSV dataset
  std::string schema;  // optional schema override file
  std::string output = "predaqp_out";
  std::uint64_t seed = 0;
  CvaeTrainConfig cvae;  // includes mask.kind, mask.factor, mask.seed
  ArConfig selest;
  std::optional<std::uint64_t> cvae_seed;    // overrides the derived training stream
  std::optional<std::uint64_t> selest_seed;  // overrides the derived selectivity stream
  std::size_t walks = kDefaultWalks;
  ExecuteOptions engine;
  std::size_t discretize_bins = 0;  // 0 disables the range discretizer
  std::size_t fidelity_samples = 2000;
  EvalConfig eval;

  /// Sets one dotted key from a JSON value; throws kConfigError on unknown
  /// keys or wrong types.
  void set(const std::string& key, const std::string& json_value);
};

AppConfig parse_config(const std::string& json_text);
AppConfig load_config(const std::filesystem::path& path);
/// Canonical JSON with every key.
std::string to_json(const AppConfig& config);
/// Every config key with its default, one `key = value` per line.
std::string config_reference();

/// Reads the dataset named by the config, inferring the schema unless an
/// override file is given.
Table load_dataset(const AppConfig& config, LoadStats* stats = nullptr);

struct TrainTiming {
  double cvae_seconds = 0.0;
  double selest_seconds = 0.0;
};

/// Fits transforms, the CVAE and the AR estimator. Randomness comes from
/// named streams of config.seed. The training summary (JSON) is stored in the
/// bundle.
ModelBundle train_bundle(const Table& table, const AppConfig& config, TrainTiming* timing = nullptr);

std::vector<WorkloadQuery> make_workload(const Table& table, const AppConfig& config);
EvalOptions eval_options(const AppConfig& config);

struct SweepPoint {
  std::size_t samples = 0;
  EvalReport report;
};

std::vector<SweepPoint> sample_sweep(const ModelBundle& bundle, const Table& table,
                                     const std::vector<WorkloadQuery>& workload, const EvalOptions& options,
                                     const std::vector<std::size_t>& sizes);
/// Median relative error per k (rows) and sample size (columns).
std::string sweep_table(const std::vector<SweepPoint>& points);

struct AblationPoint {
  MaskKind kind = MaskKind::kStratified;
  std::uint64_t seed = 0;
  EvalReport report;
};

/// Trains one bundle per (kind, seed) and evaluates each on the workload.
std::vector<AblationPoint> masking_ablation(const Table& table, const AppConfig& config,
                                            const std::vector<WorkloadQuery>& workload,
                                            const std::vector<MaskKind>& kinds, const std::vector<std::uint64_t>& seeds);
/// Median relative error per k (rows) and policy/seed (columns).
std::string ablation_table(const std::vector<AblationPoint>& points);

/// Median relative error over the records with predicate count k.
std::optional<double> median_relative_error(const EvalReport& report, std::size_t k);

}  // namespace predaqp
