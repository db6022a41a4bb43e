#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numeric>

#include "gradcheck.hpp"
#include "predaqp/cvae.hpp"
#include "predaqp/error.hpp"

namespace predaqp {
namespace {

using nn::Matrix;

/// A uniform over 4 values, B = f(A), C independent, X depends on A.
Table dependent_table(std::size_t n, std::uint64_t seed) {
  auto s = Schema::from_pairs({{"A", ColumnKind::kCategorical},
                               {"B", ColumnKind::kCategorical},
                               {"C", ColumnKind::kCategorical},
                               {"X", ColumnKind::kNumerical}});
  Table t(s);
  Rng rng(seed);
  const char* bvals[] = {"p", "q", "r", "p"};
  for (std::size_t i = 0; i < n; ++i) {
    const auto a = uniform_index(rng, 4);
    t.append({"a" + std::to_string(a), std::string(bvals[a]), std::string(uniform01(rng) < 0.7 ? "x" : "y"),
              10.0 * static_cast<double>(a) + standard_normal(rng)});
  }
  return t;
}

CvaeArchitecture small_arch() { return {2, 8, 16}; }

struct ElboFixture {
  Table table = dependent_table(64, 1);
  DataTransformer tr = DataTransformer::fit(table);
  Rng rng{2};
  CvaeModel model = CvaeModel::create(tr, small_arch(), rng);
  CvaeBatch batch;
  Matrix noise;

  ElboFixture() {
    const Matrix enc = tr.encode_table(table);
    const auto labels = tr.label_table(table);
    std::vector<std::size_t> rows(6);
    std::iota(rows.begin(), rows.end(), 0);
    Mask m(6, 4);
    for (std::size_t r = 0; r < 6; ++r)
      for (std::size_t c = 0; c < 4; ++c) m.set(r, c, (r + c) % 2);
    batch = make_batch(tr, enc, labels, rows, m);
    noise = nn::standard_normal_matrix(small_arch().latent_dim, 6, rng);
  }

  std::vector<std::uint8_t> signature() const {
    const Eigen::Index d = static_cast<Eigen::Index>(tr.encoded_width());
    Matrix enc_in(2 * d, 6), prior_in(2 * d, 6);
    enc_in << batch.encoded, batch.mask;
    prior_in << batch.encoded.cwiseProduct((1.0 - batch.mask.array()).matrix()), batch.mask;
    nn::ForwardCache ec, pc, dc;
    Matrix qc, pcl;
    const auto q = nn::gaussian_from_head(model.encoder.forward(enc_in, &ec), &qc);
    nn::gaussian_from_head(model.prior.forward(prior_in, &pc), &pcl);
    model.decoder.forward(nn::reparameterize(q, noise), &dc);
    std::vector<std::uint8_t> s;
    testing::append_relu_pattern(ec, s);
    testing::append_relu_pattern(pc, s);
    testing::append_relu_pattern(dc, s);
    for (Eigen::Index i = 0; i < qc.size(); ++i) s.push_back(qc.data()[i] > 0);
    for (Eigen::Index i = 0; i < pcl.size(); ++i) s.push_back(pcl.data()[i] > 0);
    return s;
  }
};

TEST(Elbo, GradientsMatchFiniteDifferences) {
  ElboFixture f;
  CvaeGradients g;
  const LossWeights w{1.0, 0.7};
  elbo_loss(f.model, f.tr, f.batch, f.noise, &g, w);
  auto loss = [&] { return elbo_loss(f.model, f.tr, f.batch, f.noise, nullptr, w).loss; };
  auto sig = [&] { return f.signature(); };
  Rng rng(3);
  struct Net {
    nn::DenseNet* net;
    nn::NetGradients* grad;
  };
  Net nets[] = {{&f.model.encoder, &g.encoder}, {&f.model.prior, &g.prior}, {&f.model.decoder, &g.decoder}};
  int probes = 0;
  double worst = 0;
  while (probes < 150) {
    auto& [net, grad] = nets[uniform_index(rng, 3)];
    const auto li = uniform_index(rng, net->depth());
    auto& layer = net->layers()[li];
    double* p;
    double analytic;
    if (uniform01(rng) < 0.3) {
      const auto i = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(layer.bias.size())));
      p = &layer.bias(i);
      analytic = grad->layers[li].bias(i);
    } else {
      const auto i = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(layer.weight.size())));
      p = layer.weight.data() + i;
      analytic = grad->layers[li].weight.data()[i];
    }
    if (auto e = testing::probe_relative_error(p, analytic, loss, sig)) {
      worst = std::max(worst, *e);
      ++probes;
    }
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(Elbo, KlIsZeroWhenPosteriorEqualsPrior) {
  ElboFixture f;
  f.model.prior = f.model.encoder;
  for (Eigen::Index i = 0; i < f.batch.mask.size(); ++i) f.batch.mask.data()[i] = 0.0;
  const auto r = elbo_loss(f.model, f.tr, f.batch, f.noise, nullptr);
  EXPECT_EQ(r.kl, 0.0);
  EXPECT_GT(r.reconstruction, 0.0);
}

TEST(Elbo, KlNonNegative) {
  ElboFixture f;
  const auto r = elbo_loss(f.model, f.tr, f.batch, f.noise, nullptr);
  EXPECT_GE(r.kl, 0.0);
  EXPECT_NEAR(r.loss, r.kl + r.reconstruction, 1e-12);
}

TEST(Elbo, ShapeErrors) {
  ElboFixture f;
  EXPECT_THROW(elbo_loss(f.model, f.tr, f.batch, Matrix::Zero(3, 6), nullptr), Error);
}

TEST(Cvae, ModelShapes) {
  ElboFixture f;
  const auto d = static_cast<Eigen::Index>(f.tr.encoded_width());
  EXPECT_EQ(f.model.encoder.input_width(), 2 * d);
  EXPECT_EQ(f.model.prior.input_width(), 2 * d);
  EXPECT_EQ(f.model.encoder.output_width(), 16);
  EXPECT_EQ(f.model.decoder.input_width(), 8);
  EXPECT_EQ(f.model.decoder.output_width(), d);
  EXPECT_EQ(f.model.decoder.depth(), 3u);
}

TEST(Cvae, SerializeRoundTrip) {
  ElboFixture f;
  ByteWriter w;
  f.model.serialize(w);
  const auto bytes = w.take();
  ByteReader r(bytes);
  EXPECT_EQ(CvaeModel::deserialize(r), f.model);
}

CvaeTrainConfig quick_config(int epochs, std::uint64_t seed) {
  CvaeTrainConfig c;
  c.arch = {2, 16, 64};
  c.epochs = epochs;
  c.batch = 64;
  c.lr = 1e-3;
  c.seed = seed;
  return c;
}

TEST(Train, LossDecreasesAndIsDeterministic) {
  const Table t = dependent_table(600, 4);
  const auto tr = DataTransformer::fit(t);
  const auto cfg = quick_config(50, 5);
  Rng r1(6), r2(6);
  auto m1 = CvaeModel::create(tr, cfg.arch, r1);
  auto m2 = CvaeModel::create(tr, cfg.arch, r2);
  const auto a = train_cvae(m1, tr, t, cfg);
  const auto b = train_cvae(m2, tr, t, cfg);
  ASSERT_EQ(a.epoch_loss.size(), 50u);
  EXPECT_LT(a.epoch_loss.back(), a.epoch_loss.front());
  EXPECT_EQ(a.epoch_loss, b.epoch_loss);
  EXPECT_EQ(m1, m2);
}

TEST(Train, EmptyTableRejected) {
  const Table t = dependent_table(10, 4);
  const auto tr = DataTransformer::fit(t);
  Rng rng(1);
  auto m = CvaeModel::create(tr, small_arch(), rng);
  try {
    train_cvae(m, tr, Table(t.schema()), quick_config(1, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyTable);
  }
}

TEST(Generate, SingleCategoryColumn) {
  auto s = Schema::from_pairs({{"K", ColumnKind::kCategorical}, {"X", ColumnKind::kNumerical}});
  Table t(s);
  Rng rng(7);
  for (int i = 0; i < 50; ++i) t.append({std::string("only"), standard_normal(rng)});
  const auto tr = DataTransformer::fit(t);
  const auto m = CvaeModel::create(tr, small_arch(), rng);
  const Table g = generate(m, tr, {}, 200, rng);
  ASSERT_EQ(g.row_count(), 200u);
  for (const auto& v : g.categorical_column(0)) EXPECT_EQ(v, "only");
  for (double x : g.numerical_column(1)) EXPECT_TRUE(std::isfinite(x));
}

TEST(Generate, UnknownConditionValue) {
  ElboFixture f;
  Rng rng(1);
  EXPECT_THROW(generate(f.model, f.tr, {{0, "zz"}}, 5, rng), UnknownCategory);
}

class TrainedDependent : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    table_ = new Table(dependent_table(4000, 8));
    tr_ = new DataTransformer(DataTransformer::fit(*table_));
    Rng rng(9);
    untrained_ = new CvaeModel(CvaeModel::create(*tr_, quick_config(1, 1).arch, rng));
    model_ = new CvaeModel(*untrained_);
    train_cvae(*model_, *tr_, *table_, quick_config(30, 10));
  }
  static void TearDownTestSuite() {
    delete table_;
    delete tr_;
    delete model_;
    delete untrained_;
  }
  static Table* table_;
  static DataTransformer* tr_;
  static CvaeModel* model_;
  static CvaeModel* untrained_;
};
Table* TrainedDependent::table_ = nullptr;
DataTransformer* TrainedDependent::tr_ = nullptr;
CvaeModel* TrainedDependent::model_ = nullptr;
CvaeModel* TrainedDependent::untrained_ = nullptr;

TEST_F(TrainedDependent, FunctionalDependencyIsRespected) {
  Rng rng(11);
  const Table g = generate(*model_, *tr_, {{0, "a2"}}, 1000, rng);
  int hits = 0;
  for (const auto& v : g.categorical_column(1)) hits += v == "r";
  EXPECT_GE(hits, 950);
}

TEST_F(TrainedDependent, ConditionalNumericMean) {
  Rng rng(12);
  const Table g = generate(*model_, *tr_, {{0, "a3"}}, 1000, rng);
  double s = 0, n = 0;
  for (std::size_t i = 0; i < g.row_count(); ++i)
    if (g.categorical(i, 0) == "a3") {
      s += g.numerical(i, 3);
      ++n;
    }
  ASSERT_GT(n, 500);
  EXPECT_NEAR(s / n, 30.0, 1.5);
}

TEST_F(TrainedDependent, SkewedColumnFidelityImprovesWithTraining) {
  Rng r1(13), r2(13);
  const auto before = marginal_fidelity_report(*untrained_, *tr_, *table_, 10000, r1);
  const auto after = marginal_fidelity_report(*model_, *tr_, *table_, 10000, r2);
  ASSERT_EQ(after.categorical_tv.size(), 3u);
  EXPECT_LT(after.categorical_tv[2].second, 0.5 * before.categorical_tv[2].second);
  ASSERT_EQ(after.numerical.size(), 1u);
  EXPECT_NEAR(after.numerical[0].generated_mean, after.numerical[0].real_mean, 2.0);
}

TEST(Fidelity, UniformTwoValueColumn) {
  auto s = Schema::from_pairs({{"U", ColumnKind::kCategorical}, {"X", ColumnKind::kNumerical}});
  Table t(s);
  Rng rng(21);
  for (int i = 0; i < 4000; ++i) {
    const bool hi = uniform01(rng) < 0.5;
    t.append({std::string(hi ? "h" : "l"), (hi ? 5.0 : -5.0) + standard_normal(rng)});
  }
  const auto tr = DataTransformer::fit(t);
  const auto cfg = quick_config(20, 22);
  auto m = CvaeModel::create(tr, cfg.arch, rng);
  train_cvae(m, tr, t, cfg);
  EXPECT_LT(marginal_fidelity_report(m, tr, t, 10000, rng).max_tv(), 0.1);
}

TEST(Ablation, StratifiedBeatsNoMaskOnMaskedReconstruction) {
  const Table t = dependent_table(3000, 30);
  const auto [train, holdout] = train_test_split(t, 0.8, 31);
  const auto tr = DataTransformer::fit(train);
  auto run = [&](MaskKind kind) {
    auto cfg = quick_config(20, 32);
    cfg.mask_kind = kind;
    Rng rng(33);
    auto m = CvaeModel::create(tr, cfg.arch, rng);
    train_cvae(m, tr, train, cfg);
    Rng eval(34);
    return masked_reconstruction_nll(m, tr, holdout, 0.5, eval);
  };
  const double stratified = run(MaskKind::kStratified);
  const double none = run(MaskKind::kNone);
  EXPECT_LE(stratified, none);
}

TEST(Fidelity, MemorizedSingleRowHasZeroTv) {
  auto s = Schema::from_pairs({{"K", ColumnKind::kCategorical}, {"L", ColumnKind::kCategorical}});
  Table t(s);
  t.append({std::string("u"), std::string("v")});
  const auto tr = DataTransformer::fit(t);
  Rng rng(1);
  const auto m = CvaeModel::create(tr, small_arch(), rng);
  EXPECT_EQ(marginal_fidelity_report(m, tr, t, 100, rng).max_tv(), 0.0);
}

}  // namespace
}  // namespace predaqp
