#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "rte/augment.hpp"
#include "rte/eval.hpp"
#include "rte/loss.hpp"
#include "rte/noise.hpp"
#include "rte/synthetic.hpp"
#include "rte/trainer.hpp"
#include "support.hpp"

using namespace rte;
using rte::testing::random_distribution;

namespace {

MatrixR one_hot(std::span<const int> labels, int classes, double confidence = 1.0) {
  MatrixR p = MatrixR::Constant(static_cast<Eigen::Index>(labels.size()), classes, (1.0 - confidence) / (classes - 1));
  for (std::size_t i = 0; i < labels.size(); ++i) p(static_cast<Eigen::Index>(i), labels[i]) = confidence;
  return p;
}

LabeledDataset synthetic(std::size_t n, std::uint64_t seed, int classes = 4, int d = 8) {
  SyntheticSpec spec;
  spec.classes = classes;
  spec.samples = n;
  spec.shape = flat_shape(d);
  spec.margin = 3.0;
  spec.seed = seed;
  return generate_synthetic(spec);
}

/// Ignores its input: zero first layer and a bias on class 0.
ModelState constant_model(int d, int classes) {
  ArchSpec a;
  a.input = flat_shape(d);
  a.hidden = {};
  a.classes = classes;
  ModelState m = init_model(a, 0);
  m.student[0].setZero();
  m.student[1].setZero();
  m.student[1](0, 0) = 5.0;
  m.teacher = m.student;
  return m;
}

}  // namespace

TEST(Accuracy, AllCorrect) {
  const std::vector<int> y{0, 1, 2, 1};
  EXPECT_EQ(accuracy(one_hot(y, 3), y), 1.0);
}

TEST(Accuracy, RandomPredictorNearChance) {
  const int m = 5, n = 20000;
  std::vector<int> y(n);
  for (int i = 0; i < n; ++i) y[static_cast<std::size_t>(i)] = i % m;
  const double acc = accuracy(random_distribution(n, m, 3), y);
  const double sigma = std::sqrt(0.2 * 0.8 / n);
  EXPECT_NEAR(acc, 0.2, 3 * sigma);
}

TEST(Accuracy, DerangementScoresZero) {
  const std::vector<int> y{0, 1, 2, 3, 4};
  const std::vector<int> shifted{1, 2, 3, 4, 0};
  EXPECT_EQ(accuracy(one_hot(y, 5), shifted), 0.0);
}

TEST(Accuracy, TiesGoToLowestIndexAndEmptyThrows) {
  const MatrixR p = MatrixR::Constant(2, 3, 1.0 / 3);
  EXPECT_EQ(argmax_rows(p), (std::vector<int>{0, 0}));
  EXPECT_THROW(accuracy(MatrixR(0, 3), std::vector<int>{}), std::invalid_argument);
}

TEST(Accuracy, TeacherByDefault) {
  const auto data = synthetic(200, 1);
  ArchSpec a;
  a.input = data.shape;
  a.hidden = {8};
  a.classes = 4;
  auto m = init_model(a, 1);
  m.teacher = init_model(a, 2).student;
  const double t = accuracy(m, data);
  EXPECT_EQ(t, accuracy(m, data, WeightSource::teacher));
  EXPECT_EQ(accuracy(predict_probabilities(a, m.student, data.features), data.true_labels),
            accuracy(m, data, WeightSource::student));
  EXPECT_EQ(&weights(m, WeightSource::student), &m.student);
}

TEST(Calibration, ConstantNinetyAtHalfAccuracy) {
  std::vector<int> y(1000);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<int>(i % 2);
  const MatrixR p = one_hot(std::vector<int>(1000, 0), 2, 0.9);
  const auto r = calibration(p, y, 15);
  EXPECT_NEAR(r.ece, 0.4, 1e-12);
  EXPECT_EQ(std::accumulate(r.count.begin(), r.count.end(), std::size_t{0}), 1000u);
}

TEST(Calibration, MatchedHalfConfidenceIsZero) {
  std::vector<int> y(400);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<int>(i % 2);
  const MatrixR p = MatrixR::Constant(400, 2, 0.5);
  EXPECT_NEAR(calibration(p, y, 10).ece, 0.0, 1e-12);
}

TEST(Calibration, OracleIsZero) {
  const std::vector<int> y{0, 2, 1, 1, 0};
  const auto r = calibration(one_hot(y, 3), y, 15);
  EXPECT_EQ(r.ece, 0.0);
  EXPECT_EQ(r.count.back(), 5u);
}

TEST(Calibration, BinsPartitionUnitInterval) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto p = random_distribution(300, 4, s);
    std::vector<int> y(300);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<int>((i * 7 + s) % 4);
    const auto r = calibration(p, y, 12);
    ASSERT_EQ(r.edges.size(), 13u);
    EXPECT_EQ(r.edges.front(), 0.0);
    EXPECT_EQ(r.edges.back(), 1.0);
    EXPECT_EQ(std::accumulate(r.count.begin(), r.count.end(), std::size_t{0}), 300u);
    EXPECT_GE(r.ece, 0.0);
    EXPECT_LE(r.ece, 1.0);
  }
  EXPECT_ANY_THROW(calibration(MatrixR::Constant(1, 2, 0.5), std::vector<int>{0}, 1));
}

TEST(Corruption, SuiteDisjointFromAugmentation) {
  const auto names = default_corruption_suite().names();
  EXPECT_EQ(names.size(), 8u);
  const auto aug = augmentation_primitive_names();
  for (const auto& a : aug) EXPECT_EQ(std::count(names.begin(), names.end(), a), 0) << a;
}

TEST(Corruption, DeterministicAndInRange) {
  const auto data = synthetic(50, 4);
  const double lo = data.features.minCoeff(), hi = data.features.maxCoeff();
  for (const auto& c : default_corruption_suite().corruptions)
    for (int s = 1; s <= kSeverityLevels; ++s) {
      const auto a = apply_corruption(data.features, data.shape, c, s, 7, lo, hi);
      EXPECT_EQ(a, apply_corruption(data.features, data.shape, c, s, 7, lo, hi)) << c.name;
      EXPECT_GE(a.minCoeff(), lo) << c.name;
      EXPECT_LE(a.maxCoeff(), hi) << c.name;
    }
}

class SeverityMonotone : public ::testing::TestWithParam<FeatureShape> {};

TEST_P(SeverityMonotone, DistortionNondecreasing) {
  const auto shape = GetParam();
  const auto x = rte::testing::random_matrix(500, shape.size(), 9);
  const double lo = x.minCoeff(), hi = x.maxCoeff();
  for (const auto& c : default_corruption_suite().corruptions) {
    double last = 0.0;
    for (int s = 1; s <= kSeverityLevels; ++s) {
      const double d = (apply_corruption(x, shape, c, s, 3, lo, hi) - x).cwiseAbs().mean();
      // Some levels tie in expectation.
      EXPECT_GE(d, 0.99 * last) << c.name << " severity " << s;
      last = d;
    }
    EXPECT_GT(last, 0.0) << c.name;
  }
}

INSTANTIATE_TEST_SUITE_P(Shapes, SeverityMonotone,
                         ::testing::Values(flat_shape(32), FeatureShape{3, 8, 8}));

TEST(Mce, PerfectRobustClassifierScoresZero) {
  auto data = synthetic(100, 2, 3, 6);
  data = LabeledDataset::clean(data.shape, 3, data.features, std::vector<int>(100, 0));
  const auto m = constant_model(6, 3);
  const auto r = mean_corruption_error(m.arch, m.teacher, data);
  EXPECT_EQ(r.mce, 0.0);
  EXPECT_EQ(r.clean_error, 0.0);
  EXPECT_EQ(r.rows.size(), 8u);
}

TEST(Mce, OrderInvariant) {
  const auto data = synthetic(200, 3);
  ArchSpec a;
  a.input = data.shape;
  a.hidden = {8};
  a.classes = 4;
  const auto m = init_model(a, 4);
  CorruptionSuite reversed = default_corruption_suite();
  std::reverse(reversed.corruptions.begin(), reversed.corruptions.end());
  const auto fwd = mean_corruption_error(a, m.teacher, data);
  const auto rev = mean_corruption_error(a, m.teacher, data, reversed);
  EXPECT_NEAR(fwd.mce, rev.mce, 1e-12);
  for (const auto& row : fwd.rows) {
    const auto it = std::find_if(rev.rows.begin(), rev.rows.end(), [&](const auto& r) { return r.name == row.name; });
    ASSERT_NE(it, rev.rows.end());
    EXPECT_EQ(it->error, row.error);
  }
}

TEST(Mce, DominatesCleanErrorAfterTraining) {
  const auto train_set = synthetic(800, 5);
  auto test_set = synthetic(1200, 5);
  test_set = split_dataset(test_set, 0.5, 1).test;
  TrainConfig c;
  c.arch.input = train_set.shape;
  c.arch.hidden = {32};
  c.arch.classes = 4;
  c.batch_size = 32;
  c.epochs = 10;
  c.loss.lambda_jsd = c.loss.lambda_ecr = 0.0;
  const auto model = train(train_set, c).model;
  const auto r = mean_corruption_error(model.arch, model.teacher, test_set);
  EXPECT_LT(r.clean_error, 20.0);
  EXPECT_GE(r.mce, r.clean_error);
  for (const auto& row : r.rows) EXPECT_NEAR(row.mean, std::accumulate(row.error.begin(), row.error.end(), 0.0) / 5, 1e-12);
}

TEST(LossSplit, UniformModelSharesOneValue) {
  SyntheticSpec spec;
  spec.classes = 5;
  spec.samples = 200;
  spec.shape = flat_shape(6);
  NoiseSpec ns;
  ns.ratio = 0.5;
  const auto data = apply_noise(generate_synthetic(spec), ns);
  const MatrixR p = MatrixR::Constant(200, 5, 0.2);
  const double q = 0.7;
  const auto s = loss_split_histogram(p, data, q, 64);
  const double expected = (1.0 - std::pow(0.2, q)) / q;
  EXPECT_NEAR(s.clean.median, expected, 1e-12);
  EXPECT_NEAR(s.corrupt.median, expected, 1e-12);
  EXPECT_EQ(std::count_if(s.clean.counts.begin(), s.clean.counts.end(), [](auto c) { return c > 0; }), 1);
  EXPECT_EQ(std::count_if(s.corrupt.counts.begin(), s.corrupt.counts.end(), [](auto c) { return c > 0; }), 1);
  EXPECT_EQ(s.clean.size + s.corrupt.size, 200u);
  EXPECT_GT(s.corrupt.size, 0u);
}

TEST(LossSplit, CleanDatasetHasEmptyCorruptHistogram) {
  const auto data = synthetic(100, 6);
  const auto s = loss_split_histogram(random_distribution(100, 4, 1), data, 0.5, 16);
  EXPECT_EQ(s.corrupt.size, 0u);
  EXPECT_EQ(std::accumulate(s.corrupt.counts.begin(), s.corrupt.counts.end(), std::size_t{0}), 0u);
  EXPECT_EQ(std::accumulate(s.clean.counts.begin(), s.clean.counts.end(), std::size_t{0}), 100u);
  EXPECT_EQ(s.clean.counts.size(), 16u);
}

TEST(LossSplit, UsesNoisyLabels) {
  SyntheticSpec spec;
  spec.classes = 3;
  spec.samples = 90;
  spec.shape = flat_shape(4);
  NoiseSpec ns;
  ns.ratio = 1.0;
  const auto data = apply_noise(generate_synthetic(spec), ns);
  // Confident on the true label: corrupt samples carry high loss.
  const auto s = loss_split_histogram(one_hot(data.true_labels, 3, 0.98), data, 0.5, 8);
  EXPECT_GT(s.corrupt.median, s.clean.median);
  EXPECT_NEAR(s.corrupt.median, (1.0 - std::sqrt(0.01)) / 0.5, 1e-12);
}

TEST(Median, EvenAndOdd) {
  EXPECT_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_EQ(median({4.0, 1.0, 2.0, 3.0}), 2.5);
}

TEST(Reports, CsvHeaders) {
  std::vector<int> y{0, 1};
  const auto c = calibration(one_hot(y, 2), y, 4);
  std::ostringstream os;
  write_calibration_csv(os, c);
  const auto text = os.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 5);
  const auto j = to_json(c);
  EXPECT_EQ(j.at("ece"), 0.0);
}
