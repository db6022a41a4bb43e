#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "predaqp/dataset.hpp"
#include "predaqp/masking.hpp"
#include "predaqp/neural.hpp"
#include "predaqp/transform.hpp"

namespace predaqp {

struct CvaeArchitecture {
  int depth = 6;  // hidden layers per network
  int latent_dim = 64;
  int hidden = 256;
};

struct CvaeTrainConfig {
  CvaeArchitecture arch;
  int epochs = 20;
  int batch = 256;
  double lr = 1e-4;
  MaskKind mask_kind = MaskKind::kStratified;
  double mask_factor = 0.5;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> mask_seed;  // defaults to a stream derived from seed
  double categorical_weight = 1.0;
  double numerical_weight = 1.0;
};

/// Encoder q(z|a,m), prior p(z|a*(1-m),m) and decoder p(a|z).
/// Encoder and prior take 2D inputs (encoded row followed by the mask expanded
/// to the encoded width) and emit 2L outputs (mean, log-variance); the decoder
/// maps L to D logits/means laid out like the encoded row.
struct CvaeModel {
  CvaeArchitecture arch;
  std::size_t encoded_width = 0;
  nn::DenseNet encoder;
  nn::DenseNet prior;
  nn::DenseNet decoder;

  static CvaeModel create(const DataTransformer& transforms, const CvaeArchitecture& arch, Rng& rng);

  void serialize(ByteWriter& out) const;
  static CvaeModel deserialize(ByteReader& in);

  bool operator==(const CvaeModel& other) const {
    return encoded_width == other.encoded_width && arch.depth == other.arch.depth &&
           arch.latent_dim == other.arch.latent_dim && arch.hidden == other.arch.hidden &&
           encoder == other.encoder && prior == other.prior && decoder == other.decoder;
  }
};

/// One training batch in model space.
struct CvaeBatch {
  nn::Matrix encoded;  // D x b
  nn::Matrix mask;     // D x b, expanded attribute mask
  std::vector<std::vector<int>> targets;  // K x b: category label or mode id
};

CvaeBatch make_batch(const DataTransformer& transforms, const nn::Matrix& encoded_table,
                     const std::vector<std::vector<int>>& label_table, std::span<const std::size_t> rows,
                     const Mask& attribute_mask);

struct CvaeGradients {
  nn::NetGradients encoder, prior, decoder;
};

struct ElboResult {
  double loss = 0.0;            // mean negative ELBO over the batch
  double kl = 0.0;              // mean KL term
  double reconstruction = 0.0;  // mean reconstruction NLL
};

struct LossWeights {
  double categorical = 1.0;
  double numerical = 1.0;
};

/// Negative ELBO (KL + reconstruction NLL over all attributes) with a single
/// reparameterised draw using `noise` (L x b). Fills `grads` when non-null.
ElboResult elbo_loss(const CvaeModel& model, const DataTransformer& transforms, const CvaeBatch& batch,
                     const nn::Matrix& noise, CvaeGradients* grads, const LossWeights& weights = {});

struct CvaeTrainReport {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_kl;
  std::vector<double> epoch_reconstruction;
};

using EpochCallback = std::function<void(int epoch, double loss)>;

/// Adam training with a fresh mask per batch. Deterministic given the seed.
CvaeTrainReport train_cvae(CvaeModel& model, const DataTransformer& transforms, const Table& table,
                           const CvaeTrainConfig& config, const EpochCallback& on_epoch = {});

/// Draws n rows from prior + decoder conditioned on the given equality
/// conditions. Conditioned columns are generated too, not overwritten.
Table generate(const CvaeModel& model, const DataTransformer& transforms, const std::vector<Condition>& conditions,
               std::size_t n, Rng& rng, DecodeMode mode = DecodeMode::kSample);

struct MarginalFidelity {
  struct Numeric {
    std::size_t column = 0;
    double real_mean = 0, real_std = 0, generated_mean = 0, generated_std = 0;
  };
  std::vector<std::pair<std::size_t, double>> categorical_tv;  // (column, total variation)
  std::vector<Numeric> numerical;
  double max_tv() const;
};

MarginalFidelity marginal_fidelity_report(const CvaeModel& model, const DataTransformer& transforms,
                                          const Table& table, std::size_t n, Rng& rng);

/// Query-style held-out NLL: each categorical attribute observed with
/// probability `observe_rate`, numericals always unobserved; z drawn from the
/// prior; NLL summed over the unobserved attributes, averaged over rows.
double masked_reconstruction_nll(const CvaeModel& model, const DataTransformer& transforms, const Table& holdout,
                                 double observe_rate, Rng& rng);

}  // namespace predaqp
