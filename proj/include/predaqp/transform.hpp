#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "predaqp/bytes.hpp"
#include "predaqp/dataset.hpp"
#include "predaqp/rng.hpp"

namespace predaqp {

/// Per categorical column, the byte-wise sorted list of distinct values; the
/// label of a value is its index in that list.
class LabelEncoder {
 public:
  LabelEncoder() = default;

  static LabelEncoder fit(const Table& table);

  std::size_t cardinality(std::size_t col) const { return values_.at(col).size(); }
  const std::vector<std::string>& values(std::size_t col) const { return values_.at(col); }
  std::optional<int> find(std::size_t col, const std::string& value) const;
  /// Throws UnknownCategory for out-of-vocabulary values.
  int encode(std::size_t col, const std::string& value) const;
  const std::string& decode(std::size_t col, int label) const { return values_.at(col).at(static_cast<std::size_t>(label)); }

  void serialize(ByteWriter& out) const;
  static LabelEncoder deserialize(ByteReader& in, const Schema& schema);

  bool operator==(const LabelEncoder& other) const { return values_ == other.values_; }

 private:
  void rebuild_index();

  std::vector<std::string> column_names_;
  std::vector<std::vector<std::string>> values_;  // indexed by schema position; empty for numericals
  std::vector<std::unordered_map<std::string, int>> index_;
};

struct ModeDetection {
  int mode_count = 1;
  std::vector<double> centers;  // ascending
  double bandwidth = 0.0;
  bool degenerate = false;
};

struct KdeOptions {
  int grid_points = 512;
  /// Local maxima whose density is below this fraction of the global maximum
  /// are treated as tail noise.
  double min_relative_height = 0.05;
  int max_modes = 3;
};

/// Gaussian KDE with Scott bandwidth h = sd * n^(-1/5) evaluated on a uniform
/// grid over [min - h, max + h]; modes are grid points strictly above both
/// neighbours.
ModeDetection detect_modes(std::span<const double> values, const KdeOptions& options = {});

struct GaussianMode {
  double weight = 1.0;
  double mean = 0.0;
  double stddev = 1.0;

  bool operator==(const GaussianMode&) const = default;
};

struct Normalized {
  int mode = 0;
  double residual = 0.0;
};

inline constexpr double kResidualClip = 4.0;

class ModeNormalizer {
 public:
  ModeNormalizer() = default;
  explicit ModeNormalizer(std::vector<GaussianMode> modes);

  int mode_count() const noexcept { return static_cast<int>(modes_.size()); }
  const std::vector<GaussianMode>& modes() const noexcept { return modes_; }

  /// Hard assignment to the most responsible mode, residual clipped to +-4.
  Normalized normalize(double value) const;
  Normalized normalize_unclipped(double value) const;
  double denormalize(int mode, double residual) const;

  bool operator==(const ModeNormalizer&) const = default;

 private:
  std::vector<GaussianMode> modes_;
};

struct EmOptions {
  int max_iterations = 1000;
  double tolerance = 1e-6;  // on mean per-sample log-likelihood
  double variance_floor_ratio = 1e-6;  // floor = ratio * column variance
};

struct EmResult {
  ModeNormalizer normalizer;
  std::vector<double> log_likelihood;  // mean per-sample, one entry per iteration
  int iterations = 0;
  bool converged = false;
  int reseeds = 0;
  int merged = 0;
};

/// Expectation-maximization for a 1-D Gaussian mixture initialised at the
/// given centers. Components that lose all responsibility are re-seeded once,
/// then dropped.
EmResult fit_mode_normalizer(std::span<const double> values, std::span<const double> centers,
                             const EmOptions& options = {});

/// Position of one attribute inside the encoded vector.
struct BlockLayout {
  std::size_t column = 0;
  ColumnKind kind = ColumnKind::kCategorical;
  std::size_t offset = 0;
  std::size_t one_hot_width = 0;  // categories or modes
  std::size_t width() const { return one_hot_width + (kind == ColumnKind::kNumerical ? 1 : 0); }
  std::size_t residual_index() const { return offset + one_hot_width; }
};

enum class DecodeMode { kArgmax, kSample };

/// Fitted encoders and normalizers for every column plus the encoded layout.
class DataTransformer {
 public:
  DataTransformer() = default;

  static DataTransformer fit(const Table& table, const KdeOptions& kde = {}, const EmOptions& em = {});

  const Schema& schema() const noexcept { return schema_; }
  const LabelEncoder& encoder() const noexcept { return encoder_; }
  const ModeNormalizer& normalizer(std::size_t col) const { return normalizers_.at(col).value(); }
  const std::vector<BlockLayout>& layout() const noexcept { return layout_; }
  std::size_t encoded_width() const noexcept { return width_; }

  /// Encodes one row into `out` (length D).
  void encode_row(const Row& row, std::span<double> out) const;
  Eigen::VectorXd encode_row(const Row& row) const;
  /// Encodes a whole table into a D x n matrix.
  Eigen::MatrixXd encode_table(const Table& table) const;
  /// Category labels (numericals: mode id) per attribute, K x n, for masking.
  std::vector<std::vector<int>> label_table(const Table& table) const;

  /// Decodes a network output / encoded vector. Categorical and mode blocks are
  /// read as logits (argmax or softmax sample); the residual is used as-is.
  Row decode_row(std::span<const double> encoded, DecodeMode mode = DecodeMode::kArgmax, Rng* rng = nullptr) const;

  /// Expands a per-attribute mask (length K) to the encoded width.
  Eigen::VectorXd expand_mask(std::span<const std::uint8_t> attribute_mask) const;

  void serialize(ByteWriter& out) const;
  static DataTransformer deserialize(ByteReader& in);

  bool operator==(const DataTransformer& other) const {
    return schema_ == other.schema_ && encoder_ == other.encoder_ && normalizers_ == other.normalizers_;
  }

 private:
  void build_layout();

  Schema schema_;
  LabelEncoder encoder_;
  std::vector<std::optional<ModeNormalizer>> normalizers_;
  std::vector<BlockLayout> layout_;
  std::size_t width_ = 0;
};

/// Samples an index from softmax(logits).
std::size_t sample_softmax(std::span<const double> logits, Rng& rng);
std::size_t argmax(std::span<const double> values);

}  // namespace predaqp
