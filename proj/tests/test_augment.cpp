#include <algorithm>
#include <set>

#include <gtest/gtest.h>

#include "rte/augment.hpp"
#include "rte/eval.hpp"
#include "support.hpp"

using namespace rte;
using rte::testing::random_matrix;

namespace {

const FeatureShape kImage{3, 8, 8};

VectorR image_sample(std::uint64_t seed) {
  auto rng = Rng::stream(seed, 0x1A6E);
  VectorR x(kImage.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = rng.uniform();
  return x;
}

VectorR flat_sample(std::uint64_t seed, int d = 16) { return random_matrix(1, d, seed).row(0).transpose(); }

double mean_abs_deviation(const Augmenter& a, bool image, int severity_draws) {
  double total = 0.0;
  for (int i = 0; i < severity_draws; ++i) {
    const VectorR x = image ? image_sample(static_cast<std::uint64_t>(i)) : flat_sample(static_cast<std::uint64_t>(i));
    auto rng = Rng::stream(77, i);
    total += (a.strong(x, rng) - x).cwiseAbs().mean();
  }
  return total / severity_draws;
}

}  // namespace

TEST(Weak, NoOpSettingsAreIdentity) {
  AugmentSpec s;
  s.weak_flip_probability = 0.0;
  s.weak_shift = 0;
  s.weak_jitter = 0.0;
  Rng rng(1);
  const VectorR x = image_sample(1);
  EXPECT_EQ(Augmenter(s, kImage).weak(x, rng), x);
  const VectorR f = flat_sample(1);
  EXPECT_EQ(Augmenter(s, flat_shape(16)).weak(f, rng), f);
}

TEST(Weak, KeepsShapeAndVaries) {
  for (const auto& [shape, sample] : {std::pair{kImage, image_sample(2)}, std::pair{flat_shape(16), flat_sample(2)}}) {
    const Augmenter a({}, shape);
    std::set<std::vector<double>> seen;
    for (int i = 0; i < 100; ++i) {
      auto rng = Rng::stream(5, i);
      const VectorR y = a.weak(sample, rng);
      ASSERT_EQ(y.size(), sample.size());
      seen.insert(std::vector<double>(y.data(), y.data() + y.size()));
    }
    EXPECT_GT(seen.size(), 1u);
  }
}

TEST(Weak, ImageFlipAndShiftPreserveValues) {
  AugmentSpec s;
  s.weak_flip_probability = 1.0;
  s.weak_shift = 0;
  Rng rng(0);
  const VectorR x = image_sample(3);
  const VectorR y = Augmenter(s, kImage).weak(x, rng);
  // Horizontal flip: pixel (c, h, w) -> (c, h, W-1-w).
  for (int c = 0; c < 3; ++c)
    for (int h = 0; h < 8; ++h)
      for (int w = 0; w < 8; ++w) EXPECT_EQ(y[(c * 8 + h) * 8 + w], x[(c * 8 + h) * 8 + 7 - w]);
}

TEST(Strong, IdentityChainWithFullBlend) {
  const VectorR x = flat_sample(4);
  const std::vector<VectorR> chains{x, x + VectorR::Ones(x.size())};
  const std::vector<double> w{1.0, 0.0};
  EXPECT_EQ(mix_chains(x, chains, w, 1.0), x);
  EXPECT_EQ(mix_chains(x, chains, w, 0.0), x);
  EXPECT_THROW(mix_chains(x, chains, std::vector<double>{1.0}, 0.5), std::invalid_argument);
}

TEST(Strong, StaysWithinInputRange) {
  for (const auto& shape : {kImage, flat_shape(16)}) {
    const Augmenter a({}, shape);
    for (int i = 0; i < 300; ++i) {
      const VectorR x = shape.is_image() ? image_sample(static_cast<std::uint64_t>(i))
                                         : flat_sample(static_cast<std::uint64_t>(i));
      auto rng = Rng::stream(9, i);
      const VectorR y = a.strong(x, rng);
      EXPECT_GE(y.minCoeff(), x.minCoeff() - 1e-12);
      EXPECT_LE(y.maxCoeff(), x.maxCoeff() + 1e-12);
    }
  }
}

TEST(Strong, ConvexWeights) {
  const Augmenter a({}, kImage);
  for (int i = 0; i < 200; ++i) {
    auto rng = Rng::stream(11, i);
    StrongAugmentTrace t;
    a.strong(image_sample(static_cast<std::uint64_t>(i)), rng, &t);
    ASSERT_EQ(t.chain_weights.size(), 3u);
    double sum = 0.0;
    for (double w : t.chain_weights) {
      EXPECT_GE(w, 0.0);
      sum += w;
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
    EXPECT_GE(t.blend, 0.0);
    EXPECT_LE(t.blend, 1.0);
    for (const auto& c : t.chains) {
      EXPECT_GE(c.size(), 1u);
      EXPECT_LE(c.size(), 3u);
    }
  }
}

TEST(Strong, DeterministicPerStream) {
  const Augmenter a({}, kImage);
  const VectorR x = image_sample(5);
  auto r1 = Rng::stream(1, 2, 3);
  auto r2 = Rng::stream(1, 2, 3);
  EXPECT_EQ(a.strong(x, r1), a.strong(x, r2));
}

TEST(Strong, DeviationGrowsWithSeverity) {
  for (bool image : {true, false}) {
    double last = -1.0;
    for (int severity = 1; severity <= 5; ++severity) {
      AugmentSpec s;
      s.severity = severity;
      const double mad = mean_abs_deviation(Augmenter(s, image ? kImage : flat_shape(16)), image, 1000);
      EXPECT_GT(mad, last) << (image ? "image" : "flat") << " severity " << severity;
      last = mad;
    }
  }
}

TEST(Registry, DisjointFromCorruptionSuite) {
  const auto aug = augmentation_primitive_names();
  const auto corr = default_corruption_suite().names();
  std::vector<std::string> a(aug), c(corr), both;
  std::sort(a.begin(), a.end());
  std::sort(c.begin(), c.end());
  std::set_intersection(a.begin(), a.end(), c.begin(), c.end(), std::back_inserter(both));
  EXPECT_TRUE(both.empty());
  EXPECT_EQ(image_primitives().size(), 7u);
  EXPECT_EQ(flat_primitives().size(), 2u);
}

TEST(Spec, ValidationAndJson) {
  AugmentSpec s;
  s.severity = 6;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = {};
  s.chain_depth_min = 3;
  s.chain_depth_max = 2;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = {};
  s.mixture_width = 5;
  s.weak_jitter = 0.3;
  EXPECT_EQ(to_json(augment_spec_from_json(to_json(s))), to_json(s));
}
