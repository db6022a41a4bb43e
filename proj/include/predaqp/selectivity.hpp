#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "predaqp/bytes.hpp"
#include "predaqp/dataset.hpp"
#include "predaqp/neural.hpp"
#include "predaqp/transform.hpp"

namespace predaqp {

struct ArConfig {
  int depth = 5;  // residual blocks
  int hidden = 256;
  int batch = 512;
  int epochs = 20;
  double lr = 2e-3;
  int warmup_steps = 10000;
  int orderings = 4;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
};

/// Autoregressive density over the categorical columns with masked residual
/// blocks. Inputs are one-hot blocks in schema order; output block of the
/// column at rank k sees only input blocks of ranks < k.
class ArDensityModel {
 public:
  ArDensityModel() = default;

  /// `ordering[r]` is the index (into `columns`) of the column at rank r.
  static ArDensityModel create(std::vector<std::size_t> columns, std::vector<std::size_t> vocab,
                               std::vector<std::size_t> ordering, int depth, int hidden, Rng& rng);

  std::size_t column_count() const noexcept { return columns_.size(); }
  /// Schema positions of the modelled columns.
  const std::vector<std::size_t>& columns() const noexcept { return columns_; }
  const std::vector<std::size_t>& vocab() const noexcept { return vocab_; }
  const std::vector<std::size_t>& ordering() const noexcept { return ordering_; }
  std::size_t rank_of(std::size_t local_column) const { return rank_.at(local_column); }
  std::size_t input_width() const noexcept { return input_width_; }
  std::size_t input_offset(std::size_t local_column) const { return offsets_.at(local_column); }
  int depth() const noexcept { return depth_; }
  int hidden() const noexcept { return hidden_; }

  /// One-hot inputs for label rows (labels[local_column][sample]).
  nn::Matrix one_hot(const std::vector<std::vector<int>>& labels) const;

  struct Cache {
    nn::Matrix h0;
    std::vector<nn::Matrix> block_in;
    std::vector<nn::LayerCache> layers;
    nn::Matrix final_relu;
  };

  /// Logits laid out like the inputs (one block per column).
  nn::Matrix forward(const nn::Matrix& inputs, Cache* cache = nullptr) const;
  void backward(const Cache& cache, const nn::Matrix& d_logits, nn::NetGradients& grads) const;

  /// Softmax of one column's output block, vocab x n.
  nn::Matrix conditional(std::size_t local_column, const nn::Matrix& logits) const;

  /// Mean per-row negative log-likelihood (nats) of label rows; fills grads when non-null.
  double nll(const std::vector<std::vector<int>>& labels, nn::NetGradients* grads = nullptr) const;

  nn::DenseNet& net() { return net_; }
  const nn::DenseNet& net() const { return net_; }

  void serialize(ByteWriter& out) const;
  static ArDensityModel deserialize(ByteReader& in);

  bool operator==(const ArDensityModel& other) const {
    return columns_ == other.columns_ && vocab_ == other.vocab_ && ordering_ == other.ordering_ &&
           depth_ == other.depth_ && hidden_ == other.hidden_ && net_ == other.net_;
  }

 private:
  void build_index();

  std::vector<std::size_t> columns_;
  std::vector<std::size_t> vocab_;
  std::vector<std::size_t> ordering_;
  std::vector<std::size_t> rank_;
  std::vector<std::size_t> offsets_;
  std::size_t input_width_ = 0;
  int depth_ = 0;
  int hidden_ = 0;
  // Layers: input projection, (inner, outer) per residual block, output.
  nn::DenseNet net_;
};

struct ArTrainReport {
  std::vector<std::vector<std::size_t>> orderings;
  std::vector<double> validation_nll;  // per ordering
  std::size_t chosen = 0;
  std::vector<double> epoch_nll;  // training trace of the chosen ordering
};

/// Label rows (K_cat x n) of the categorical columns of a table.
std::vector<std::vector<int>> categorical_labels(const Table& table, const LabelEncoder& encoder);

ArDensityModel train_ar(const Table& table, const LabelEncoder& encoder, const ArConfig& config,
                        ArTrainReport* report = nullptr);

/// Trains a single fixed ordering on label rows; returns the per-epoch mean NLL.
std::vector<double> fit_ar(ArDensityModel& model, const std::vector<std::vector<int>>& labels, const ArConfig& config,
                           std::uint64_t seed);

struct SelectivityEstimate {
  double estimate = 0.0;
  std::size_t samples = 0;
  double standard_error = 0.0;
  bool not_in_vocabulary = false;
  bool exact = false;
};

inline constexpr std::size_t kDefaultWalks = 512;

/// Progressive sampling in model order. Exact when no unpredicated column
/// precedes the last predicated one.
SelectivityEstimate estimate_conjunction(const ArDensityModel& model, const LabelEncoder& encoder,
                                         const std::vector<Condition>& predicates, std::size_t walks, Rng& rng);

/// Same, on (local column, label) pairs.
SelectivityEstimate estimate_labels(const ArDensityModel& model, const std::vector<std::pair<std::size_t, int>>& predicates,
                                    std::size_t walks, Rng& rng);

double estimate_count(const ArDensityModel& model, const LabelEncoder& encoder, const std::vector<Condition>& predicates,
                      std::size_t table_rows, std::size_t walks, Rng& rng);

/// Model probability of one complete assignment (labels indexed by local column).
double joint_probability(const ArDensityModel& model, const std::vector<int>& labels);

}  // namespace predaqp
