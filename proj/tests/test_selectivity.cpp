#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "gradcheck.hpp"
#include "predaqp/error.hpp"
#include "predaqp/selectivity.hpp"

namespace predaqp {
namespace {

using nn::Matrix;

ArDensityModel random_model(std::vector<std::size_t> vocab, std::vector<std::size_t> ordering, int depth, int hidden,
                            std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::size_t> cols(vocab.size());
  for (std::size_t i = 0; i < cols.size(); ++i) cols[i] = i;
  auto m = ArDensityModel::create(cols, vocab, ordering, depth, hidden, rng);
  // Non-zero biases so that every path carries signal.
  for (auto& l : m.net().layers()) l.bias = nn::Vector::NullaryExpr(l.out(), [&] { return 0.3 * standard_normal(rng); });
  return m;
}

/// Calls f on every complete label assignment.
void for_each_assignment(const std::vector<std::size_t>& vocab, const std::function<void(const std::vector<int>&)>& f) {
  std::vector<int> a(vocab.size(), 0);
  while (true) {
    f(a);
    std::size_t i = 0;
    while (i < a.size() && ++a[i] == static_cast<int>(vocab[i])) a[i++] = 0;
    if (i == a.size()) return;
  }
}

double enumerated_marginal(const ArDensityModel& m, const std::vector<std::pair<std::size_t, int>>& preds) {
  double total = 0.0;
  for_each_assignment(m.vocab(), [&](const std::vector<int>& a) {
    for (const auto& [j, l] : preds)
      if (a[j] != l) return;
    total += joint_probability(m, a);
  });
  return total;
}

TEST(ResMade, AutoregressivePerturbation) {
  const auto m = random_model({3, 2, 4, 3}, {2, 0, 3, 1}, 2, 24, 1);
  std::vector<std::size_t> vocab = m.vocab();
  for_each_assignment(vocab, [&](const std::vector<int>& base) {
    std::vector<std::vector<int>> rows(4);
    for (std::size_t j = 0; j < 4; ++j) rows[j] = {base[j]};
    const Matrix ref = m.forward(m.one_hot(rows));
    for (std::size_t pj = 0; pj < 4; ++pj) {
      for (int v = 0; v < static_cast<int>(vocab[pj]); ++v) {
        if (v == base[pj]) continue;
        auto pert = rows;
        pert[pj] = {v};
        const Matrix out = m.forward(m.one_hot(pert));
        for (std::size_t oj = 0; oj < 4; ++oj) {
          if (m.rank_of(oj) > m.rank_of(pj)) continue;
          const auto off = static_cast<Eigen::Index>(m.input_offset(oj));
          const auto w = static_cast<Eigen::Index>(vocab[oj]);
          ASSERT_TRUE(out.middleRows(off, w) == ref.middleRows(off, w)) << "input " << pj << " leaks into " << oj;
        }
      }
    }
  });
}

TEST(ResMade, LaterColumnsAreInfluenced) {
  const auto m = random_model({3, 3}, {0, 1}, 1, 16, 2);
  const Matrix a = m.forward(m.one_hot({{0}, {0}}));
  const Matrix b = m.forward(m.one_hot({{1}, {0}}));
  EXPECT_FALSE(a.bottomRows(3) == b.bottomRows(3));
}

TEST(ResMade, JointSumsToOne) {
  const auto m = random_model({3, 2, 4}, {1, 2, 0}, 2, 16, 3);
  double total = 0.0;
  for_each_assignment(m.vocab(), [&](const std::vector<int>& a) { total += joint_probability(m, a); });
  EXPECT_NEAR(total, 1.0, 1e-9);
  const Matrix p = m.conditional(1, m.forward(Matrix::Zero(9, 1)));
  EXPECT_NEAR(p.sum(), 1.0, 1e-12);
}

TEST(ResMade, NllGradientsMatchFiniteDifferences) {
  auto m = random_model({3, 2, 4}, {2, 0, 1}, 2, 12, 4);
  const std::vector<std::vector<int>> labels{{0, 2, 1, 1, 0}, {1, 0, 1, 0, 0}, {3, 0, 2, 1, 3}};
  nn::NetGradients g;
  m.nll(labels, &g);
  auto loss = [&] { return m.nll(labels); };
  auto sig = [&] {
    ArDensityModel::Cache c;
    m.forward(m.one_hot(labels), &c);
    std::vector<std::uint8_t> s;
    for (const auto& h : c.block_in)
      for (Eigen::Index i = 0; i < h.size(); ++i) s.push_back(h.data()[i] > 0);
    nn::ForwardCache fc;
    fc.layers = c.layers;
    testing::append_relu_pattern(fc, s);
    for (Eigen::Index i = 0; i < c.final_relu.size(); ++i) s.push_back(c.final_relu.data()[i] > 0);
    return s;
  };
  Rng rng(5);
  int probes = 0;
  double worst = 0;
  while (probes < 100) {
    const auto li = uniform_index(rng, m.net().depth());
    auto& layer = m.net().layers()[li];
    const auto i = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(layer.weight.size())));
    if (layer.masked() && layer.mask.data()[i] == 0.0) {
      EXPECT_EQ(g.layers[li].weight.data()[i], 0.0);
      continue;
    }
    if (auto e = testing::probe_relative_error(layer.weight.data() + i, g.layers[li].weight.data()[i], loss, sig)) {
      worst = std::max(worst, *e);
      ++probes;
    }
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(ResMade, SerializeRoundTrip) {
  const auto m = random_model({3, 2}, {1, 0}, 2, 8, 6);
  ByteWriter w;
  m.serialize(w);
  const auto bytes = w.take();
  ByteReader r(bytes);
  EXPECT_EQ(ArDensityModel::deserialize(r), m);
}

Table make_table(std::size_t n, const std::function<std::vector<std::string>(Rng&)>& row, std::size_t cols,
                 std::uint64_t seed) {
  std::vector<std::pair<std::string, ColumnKind>> spec;
  for (std::size_t c = 0; c < cols; ++c) spec.emplace_back("c" + std::to_string(c), ColumnKind::kCategorical);
  Table t(Schema::from_pairs(spec));
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    Row r;
    for (auto& v : row(rng)) r.emplace_back(v);
    t.append(r);
  }
  return t;
}

ArConfig quick_ar(int epochs) {
  ArConfig c;
  c.depth = 2;
  c.hidden = 32;
  c.batch = 256;
  c.epochs = epochs;
  c.lr = 5e-3;
  c.warmup_steps = 20;
  c.orderings = 2;
  c.seed = 7;
  return c;
}

TEST(TrainAr, SingleColumnMarginal) {
  const Table t = make_table(5000, [](Rng& r) { return std::vector<std::string>{uniform01(r) < 0.7 ? "a" : "b"}; }, 1, 8);
  const auto enc = LabelEncoder::fit(t);
  ArTrainReport rep;
  const auto m = train_ar(t, enc, quick_ar(10), &rep);
  EXPECT_EQ(rep.orderings.size(), 1u);  // duplicate orderings are skipped
  double emp = 0;
  for (const auto& v : t.categorical_column(0)) emp += v == "a";
  emp /= 5000.0;
  EXPECT_NEAR(joint_probability(m, {0}), emp, 0.02);
}

TEST(TrainAr, IndependentColumnsFactorize) {
  const Table t = make_table(
      10000, [](Rng& r) { return std::vector<std::string>{std::to_string(uniform_index(r, 3)), std::to_string(uniform_index(r, 4))}; },
      2, 9);
  const auto enc = LabelEncoder::fit(t);
  ArTrainReport rep;
  const auto m = train_ar(t, enc, quick_ar(8), &rep);
  EXPECT_EQ(rep.validation_nll.size(), 2u);
  for (const auto& s : rep.epoch_nll) EXPECT_TRUE(std::isfinite(s));
  double worst = 0;
  for_each_assignment(m.vocab(), [&](const std::vector<int>& a) {
    worst = std::max(worst, std::abs(joint_probability(m, a) - 1.0 / 12.0));
  });
  EXPECT_LT(worst, 0.03);
}

TEST(Estimate, TrivialCases) {
  const auto m = random_model({3, 2, 4}, {1, 2, 0}, 1, 16, 10);
  Rng rng(1);
  const auto none = estimate_labels(m, {}, 512, rng);
  EXPECT_EQ(none.estimate, 1.0);
  const auto all = estimate_labels(m, {{0, 2}, {1, 1}, {2, 3}}, 512, rng);
  EXPECT_TRUE(all.exact);
  EXPECT_EQ(all.standard_error, 0.0);
  EXPECT_NEAR(all.estimate, joint_probability(m, {2, 1, 3}), 1e-15);
  // Prefix in model order fully predicated: still exact.
  const auto prefix = estimate_labels(m, {{1, 0}}, 512, rng);
  EXPECT_TRUE(prefix.exact);
  EXPECT_NEAR(prefix.estimate, enumerated_marginal(m, {{1, 0}}), 1e-12);
  const auto contra = estimate_labels(m, {{0, 1}, {0, 2}}, 512, rng);
  EXPECT_EQ(contra.estimate, 0.0);
}

TEST(Estimate, ProgressiveSamplingWithinThreeStandardErrors) {
  const auto m = random_model({4, 5, 3}, {0, 1, 2}, 1, 16, 11);
  Rng rng(12);
  for (std::size_t j = 1; j < 3; ++j) {
    for (int v = 0; v < static_cast<int>(m.vocab()[j]); ++v) {
      const auto est = estimate_labels(m, {{j, v}}, 512, rng);
      EXPECT_FALSE(est.exact);
      EXPECT_GT(est.standard_error, 0.0);
      const double truth = enumerated_marginal(m, {{j, v}});
      EXPECT_NEAR(est.estimate, truth, 3.0 * est.standard_error) << "column " << j << " value " << v;
    }
  }
}

TEST(Estimate, ExactMarginalsMonotoneUnderStrengthening) {
  const auto m = random_model({3, 3, 3}, {2, 1, 0}, 1, 16, 13);
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) {
      const double one = enumerated_marginal(m, {{0, a}});
      const double two = enumerated_marginal(m, {{0, a}, {1, b}});
      const double three = enumerated_marginal(m, {{0, a}, {1, b}, {2, 0}});
      EXPECT_LE(two, one + 1e-15);
      EXPECT_LE(three, two + 1e-15);
    }
}

TEST(Estimate, StringPredicatesAndCounts) {
  const Table t = make_table(200, [](Rng& r) { return std::vector<std::string>{uniform01(r) < 0.5 ? "x" : "y", "k"}; }, 2, 14);
  const auto enc = LabelEncoder::fit(t);
  Rng rng(15);
  const auto m = ArDensityModel::create({0, 1}, {2, 1}, {0, 1}, 1, 8, rng);
  const auto oov = estimate_conjunction(m, enc, {{0, "zzz"}}, 64, rng);
  EXPECT_TRUE(oov.not_in_vocabulary);
  EXPECT_EQ(oov.estimate, 0.0);
  EXPECT_EQ(estimate_count(m, enc, {{0, "zzz"}}, 1000, 64, rng), 0.0);
  const auto all = estimate_conjunction(m, enc, {{0, "x"}, {1, "k"}}, 64, rng);
  EXPECT_NEAR(estimate_count(m, enc, {{0, "x"}, {1, "k"}}, 1000, 64, rng), all.estimate * 1000.0, 1e-9);
}

}  // namespace
}  // namespace predaqp
