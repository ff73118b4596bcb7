#include <gtest/gtest.h>

#include "rte/eval.hpp"
#include "rte/model.hpp"
#include "support.hpp"

using namespace rte;
using rte::testing::random_matrix;

namespace {

ArchSpec mlp(int d, std::vector<int> hidden, int classes) {
  ArchSpec a;
  a.input = flat_shape(d);
  a.hidden = std::move(hidden);
  a.classes = classes;
  return a;
}

}  // namespace

TEST(Init, TeacherIsExactCopy) {
  const auto s = init_model(mlp(8, {16}, 3), 1);
  ASSERT_EQ(s.student.size(), s.teacher.size());
  for (std::size_t i = 0; i < s.student.size(); ++i)
    EXPECT_EQ((s.teacher[i] - s.student[i]).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Init, DeterministicPerSeed) {
  const auto a = init_model(mlp(8, {16}, 3), 42);
  const auto b = init_model(mlp(8, {16}, 3), 42);
  const auto c = init_model(mlp(8, {16}, 3), 43);
  for (std::size_t i = 0; i < a.student.size(); ++i) EXPECT_EQ(a.student[i], b.student[i]);
  EXPECT_NE(a.student[0], c.student[0]);
}

TEST(Init, ParameterCountOfSmallMlp) {
  const auto s = init_model(mlp(32, {64}, 10), 0);
  EXPECT_EQ(parameter_count(s.student), 32u * 64 + 64 + 64 * 10 + 10);
}

TEST(Init, ConvnetLayout) {
  ArchSpec a;
  a.kind = ArchKind::convnet;
  a.input = {3, 8, 8};
  a.conv_channels = {4, 4, 8, 8};
  a.classes = 5;
  const auto layout = param_layout(a);
  ASSERT_EQ(layout.size(), 10u);
  EXPECT_EQ(layout[0].rows, 27);
  EXPECT_EQ(layout[0].cols, 4);
  // 8x8 -> 4x4 -> 2x2 -> 1x1 -> 1x1 (no further pooling).
  EXPECT_EQ(layout[8].rows, 8);
  const auto s = init_model(a, 1);
  const MatrixR p = predict(a, s.student, random_matrix(3, a.input.size(), 2));
  EXPECT_EQ(p.rows(), 3);
  EXPECT_EQ(p.cols(), 5);
}

TEST(Init, HeScaleAndZeroBias) {
  const auto s = init_model(mlp(400, {300}, 10), 5);
  const double var = s.student[0].array().square().mean();
  EXPECT_NEAR(var, 2.0 / 400.0, 0.05 * 2.0 / 400.0);
  EXPECT_EQ(s.student[1].cwiseAbs().maxCoeff(), 0.0);
}

TEST(Init, InvalidSpecsRejected) {
  EXPECT_THROW(init_model(mlp(8, {0}, 3), 0), std::invalid_argument);
  EXPECT_THROW(init_model(mlp(8, {4}, 1), 0), std::invalid_argument);
  EXPECT_THROW(init_model(mlp(8, {4}, 3), 0, 1.5), std::invalid_argument);
  ArchSpec c;
  c.kind = ArchKind::convnet;
  c.conv_channels = {4, 4};
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Predict, RowsAreDistributions) {
  const auto a = mlp(6, {10, 10}, 4);
  const auto s = init_model(a, 3);
  const MatrixR p = predict(a, s.student, random_matrix(50, 6, 4, 5.0));
  for (Eigen::Index i = 0; i < p.rows(); ++i) EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-12);
}

TEST(Predict, ZeroWeightsGiveUniform) {
  const auto a = mlp(6, {10}, 4);
  auto s = init_model(a, 3);
  for (auto& p : s.student) p.setZero();
  const MatrixR p = predict(a, s.student, random_matrix(5, 6, 4));
  EXPECT_TRUE(p.isApprox(MatrixR::Constant(5, 4, 0.25)));
}

TEST(Predict, EvalModeIsRepeatable) {
  auto a = mlp(6, {10}, 4);
  a.dropout = 0.5;
  const auto s = init_model(a, 3);
  const MatrixR x = random_matrix(5, 6, 4);
  EXPECT_EQ(predict(a, s.student, x, Mode::eval, 1), predict(a, s.student, x, Mode::eval, 2));
  EXPECT_NE(predict(a, s.student, x, Mode::train, 1), predict(a, s.student, x, Mode::train, 2));
}

TEST(Predict, WrongInputWidthRejected) {
  const auto a = mlp(6, {10}, 4);
  const auto s = init_model(a, 3);
  EXPECT_THROW(predict(a, s.student, MatrixR::Ones(2, 7)), ShapeError);
}

TEST(Ema, DecayZeroCopies) {
  auto s = init_model(mlp(4, {4}, 2), 1, 0.0);
  for (auto& p : s.student) p.array() += 1.0;
  ema_update(s);
  for (std::size_t i = 0; i < s.student.size(); ++i) EXPECT_EQ(s.teacher[i], s.student[i]);
  EXPECT_EQ(s.step, 1u);
}

TEST(Ema, DecayOneFreezes) {
  auto s = init_model(mlp(4, {4}, 2), 1, 1.0);
  const auto before = s.teacher;
  for (auto& p : s.student) p.array() += 1.0;
  ema_update(s);
  for (std::size_t i = 0; i < s.teacher.size(); ++i) EXPECT_EQ(s.teacher[i], before[i]);
}

TEST(Ema, ScalarRecurrence) {
  ModelState s;
  s.ema_decay = 0.99;
  s.student = {MatrixR::Constant(1, 1, 1.0)};
  s.teacher = {MatrixR::Constant(1, 1, 0.0)};
  ema_update(s);
  EXPECT_NEAR(s.teacher[0](0, 0), 0.01, 1e-15);
}

TEST(Ema, Linear) {
  ModelState a, b;
  a.ema_decay = b.ema_decay = 0.9;
  const MatrixR t = random_matrix(3, 3, 1), theta = random_matrix(3, 3, 2);
  a.teacher = {t};
  a.student = {theta};
  b.teacher = {2.0 * t};
  b.student = {2.0 * theta};
  ema_update(a);
  ema_update(b);
  EXPECT_TRUE((b.teacher[0] - 2.0 * t).isApprox(2.0 * (a.teacher[0] - t), 1e-12));
}

TEST(Ema, GeometricConvergenceToFrozenStudent) {
  ModelState s;
  s.ema_decay = 0.95;
  s.student = {random_matrix(4, 4, 1)};
  s.teacher = {random_matrix(4, 4, 2)};
  const double gap0 = (s.teacher[0] - s.student[0]).cwiseAbs().maxCoeff();
  for (int k = 1; k <= 50; ++k) {
    ema_update(s);
    EXPECT_LE((s.teacher[0] - s.student[0]).cwiseAbs().maxCoeff(), gap0 * std::pow(0.95, k) * (1 + 1e-9));
  }
}

TEST(Sentinel, EvaluationReadsTeacherWeights) {
  // Student predicts class 0 everywhere, teacher class 1.
  const auto a = mlp(2, {}, 2);
  ModelState s = init_model(a, 0);
  s.student = {MatrixR::Zero(2, 2), (MatrixR(1, 2) << 5, -5).finished()};
  s.teacher = {MatrixR::Zero(2, 2), (MatrixR(1, 2) << -5, 5).finished()};
  const auto ds = LabeledDataset::clean(flat_shape(2), 2, MatrixR::Ones(4, 2), {1, 1, 1, 1});
  EXPECT_EQ(accuracy(s, ds), 1.0);
  EXPECT_EQ(accuracy(s, ds, WeightSource::student), 0.0);
}

TEST(Arch, JsonRoundTrip) {
  auto a = mlp(12, {7, 5}, 3);
  a.dropout = 0.2;
  const auto b = arch_from_json(to_json(a));
  EXPECT_EQ(b.input, a.input);
  EXPECT_EQ(b.hidden, a.hidden);
  EXPECT_EQ(b.classes, a.classes);
  EXPECT_EQ(b.dropout, a.dropout);
  EXPECT_THROW(parse_arch_kind("wrn"), std::invalid_argument);
}
